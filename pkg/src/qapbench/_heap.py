"""Process-level allocator tuning for the training hot path.

The gradient engine churns through ~0.5 MB scratch arrays tens of thousands
of times per run. With glibc defaults, freeing those trims the heap top back
to the OS and the next allocation grows it again, which costs more than the
arithmetic itself. Raising the trim threshold keeps the pages resident.

No-op on non-glibc platforms; safe to call repeatedly.
"""

from __future__ import annotations

import ctypes

_M_TRIM_THRESHOLD = -1
_M_TOP_PAD = -2

_applied = False


def reduce_heap_trimming() -> bool:
    """Keep freed large blocks on the heap instead of returning them to the OS."""
    global _applied
    if _applied:
        return True
    try:
        libc = ctypes.CDLL("libc.so.6")
        ok = bool(libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30))
        ok = bool(libc.mallopt(_M_TOP_PAD, 1 << 26)) and ok
        _applied = ok
        return ok
    except OSError:
        return False
