import itertools

import numpy as np
import pytest

from conftest import uniform_instance
from qapbench.baselines import (
    BaselineResult,
    FractionalAllocation,
    brute_force,
    greedy_construct,
    lmo_transportation,
    local_search_swap,
    qp_relax_solve,
    random_feasible,
    round_fractional,
)
from qapbench.errors import (
    ConfigError,
    InfeasibleInstanceError,
    InstanceTooLargeError,
    StateError,
)
from qapbench.graph import CommGraph, SbmConfig, gen_sbm
from qapbench.problem import AllocationState, ProblemInstance, risk


def recursive_optimum(inst):
    """Independent exhaustive enumerator (plain recursion, no pruning)."""
    best = [np.inf, None]

    def go(pos, assign, counts):
        if pos == inst.m:
            r = risk(inst, AllocationState(assign))
            if r < best[0] - 1e-15:
                best[0], best[1] = r, list(assign)
            return
        for host in range(inst.n):
            if counts[host] < inst.capacities[host]:
                counts[host] += 1
                assign.append(host)
                go(pos + 1, assign, counts)
                assign.pop()
                counts[host] -= 1

    go(0, [], [0] * inst.n)
    return best[0]


class TestBruteForce:
    def test_two_phones_separate_hosts(self):
        inst = uniform_instance(2, 2, 3, caps=[1, 1])
        res = brute_force(inst)
        assert res.risk == 0.0
        assert res.feasible

    def test_forced_colocation_sums_pairs(self):
        # risks 0.2, 0.5, 0.9 between the three pairs, one host only
        w = np.eye(3)
        w[0, 1] = w[1, 0] = 0.8
        w[0, 2] = w[2, 0] = 0.5
        w[1, 2] = w[2, 1] = 0.1
        inst = ProblemInstance(graph=CommGraph(m=3, w=w), n=1,
                               capacities=[3], desired_dist=[1.0])
        res = brute_force(inst)
        assert res.risk == pytest.approx(1.6)
        assert res.allocation.assign.tolist() == [0, 0, 0]

    def test_matches_independent_enumerator(self, rng):
        for _ in range(15):
            m, n = int(rng.integers(4, 9)), int(rng.integers(2, 4))
            caps = np.full(n, int(np.ceil(m / n)) + int(rng.integers(0, 2)))
            inst = uniform_instance(m, n, int(rng.integers(2 ** 32)), caps=caps)
            assert brute_force(inst).risk == pytest.approx(recursive_optimum(inst), abs=1e-12)

    def test_tight_capacities(self, rng):
        inst = uniform_instance(6, 3, 7, caps=[2, 2, 2])
        res = brute_force(inst)
        assert res.feasible
        assert res.risk == pytest.approx(recursive_optimum(inst), abs=1e-12)

    def test_size_bound_enforced(self):
        inst = uniform_instance(30, 5, 1, caps=[30] * 5, desired=[0.2] * 5)
        with pytest.raises(InstanceTooLargeError):
            brute_force(inst)

    def test_result_risk_is_recomputed(self, rng):
        inst = uniform_instance(6, 2, 9, caps=[3, 3])
        res = brute_force(inst)
        assert res.risk == pytest.approx(risk(inst, res.allocation), abs=1e-12)


class TestRandomFeasible:
    def test_single_host_forced(self):
        inst = uniform_instance(5, 1, 2, caps=[5], desired=[1.0])
        res = random_feasible(inst, np.random.default_rng(0))
        assert res.allocation.assign.tolist() == [0] * 5

    def test_always_feasible(self, rng):
        inst = uniform_instance(12, 3, 5, caps=[4, 4, 4])
        for i in range(1000):
            res = random_feasible(inst, np.random.default_rng(i))
            assert res.feasible

    def test_mean_risk_matches_pair_probability(self):
        # all pairs are exchangeable under the sampling scheme, so the mean
        # risk is (pair co-location probability) x (total complementary
        # weight); estimate that probability from an independent stream
        inst = uniform_instance(20, 4, 31, caps=[5, 5, 5, 5])
        wb_total = inst.w_bar[np.triu_indices(20, k=1)].sum()

        est_rng = np.random.default_rng(777)
        colocated = 0
        draws = 3000
        for _ in range(draws):
            res = random_feasible(inst, est_rng)
            a = res.allocation.assign
            colocated += int((a[0] == a[1]))
        p_est = colocated / draws
        se_p = np.sqrt(p_est * (1 - p_est) / draws)

        risks = [random_feasible(inst, np.random.default_rng(10_000 + i)).risk
                 for i in range(1000)]
        mean_risk = float(np.mean(risks))
        se_risk = float(np.std(risks) / np.sqrt(len(risks)))
        tol = 3.0 * (se_risk + se_p * wb_total)
        assert abs(mean_risk - p_est * wb_total) <= tol


class TestGreedyConstruct:
    def test_perfect_separation_on_planted_clusters(self):
        g = gen_sbm(SbmConfig(m=8, num_clusters=2, cluster_sizes=(4, 4),
                              p_within=1.0, p_between=0.0, seed=1))
        inst = ProblemInstance(graph=g, n=2, capacities=[4, 4], desired_dist=[0.5, 0.5])
        res = greedy_construct(inst)
        assert res.risk == 0.0

    def test_single_host_matches_brute_force(self):
        inst = uniform_instance(5, 1, 6, caps=[5], desired=[1.0])
        assert greedy_construct(inst).risk == pytest.approx(brute_force(inst).risk)

    def test_never_beats_brute_force(self, rng):
        for _ in range(12):
            m = int(rng.integers(4, 9))
            inst = uniform_instance(m, 2, int(rng.integers(2 ** 32)),
                                    caps=[(m + 1) // 2 + 1] * 2)
            assert greedy_construct(inst).risk >= brute_force(inst).risk - 1e-9


class TestLocalSearch:
    def test_optimum_is_fixed_point(self, rng):
        inst = uniform_instance(7, 2, 8, caps=[4, 4])
        opt = brute_force(inst)
        res = local_search_swap(inst, opt.allocation, budget=20)
        assert np.array_equal(res.allocation.assign, opt.allocation.assign)
        assert res.risk == pytest.approx(opt.risk)

    def test_monotone_improvement(self, rng):
        inst = uniform_instance(14, 3, 15, caps=[5, 5, 5])
        start = random_feasible(inst, np.random.default_rng(3))
        prev = start.risk
        for budget in range(1, 6):
            res = local_search_swap(inst, start.allocation, budget=budget)
            assert res.risk <= prev + 1e-12
            prev = res.risk

    def test_stays_feasible_and_bounded_by_start(self, rng):
        inst = uniform_instance(12, 3, 4, caps=[4, 4, 4])
        start = random_feasible(inst, np.random.default_rng(11))
        res = local_search_swap(inst, start.allocation, budget=100)
        assert res.feasible
        assert res.risk <= start.risk + 1e-12

    def test_never_beats_brute_force(self, rng):
        for trial in range(8):
            inst = uniform_instance(7, 2, trial, caps=[4, 4])
            start = random_feasible(inst, np.random.default_rng(trial))
            res = local_search_swap(inst, start.allocation, budget=200)
            assert res.risk >= brute_force(inst).risk - 1e-9

    def test_infeasible_start_rejected(self):
        inst = uniform_instance(4, 2, 2, caps=[2, 2])
        with pytest.raises(StateError):
            local_search_swap(inst, AllocationState([0, 0, 0, 1]), budget=5)


def enumerate_transport_optimum(cost, caps):
    m, n = cost.shape
    best = np.inf
    for a in itertools.product(range(n), repeat=m):
        counts = np.bincount(a, minlength=n)
        if np.any(counts > caps):
            continue
        best = min(best, sum(cost[i, a[i]] for i in range(m)))
    return best


class TestLmoTransportation:
    def test_unique_minima_with_loose_capacities(self):
        cost = np.array([[0.0, 5.0], [4.0, 1.0], [7.0, 2.0]])
        frac = lmo_transportation(cost, [3, 3])
        assert np.array_equal(frac.x.argmax(axis=1), [0, 1, 1])

    def test_single_host(self):
        frac = lmo_transportation(np.array([[3.0], [9.0]]), [2])
        assert np.array_equal(frac.x, np.ones((2, 1)))

    def test_matches_enumeration(self, rng):
        caps = np.array([2, 3, 3])
        for _ in range(20):
            cost = rng.uniform(-1, 1, size=(6, 3))
            frac = lmo_transportation(cost, caps)
            assert np.all(np.minimum(np.abs(frac.x), np.abs(frac.x - 1)) < 1e-9)
            got = float((cost * frac.x).sum())
            assert got == pytest.approx(enumerate_transport_optimum(cost, caps), abs=1e-9)

    def test_capacity_shortfall_rejected(self):
        with pytest.raises(InfeasibleInstanceError):
            lmo_transportation(np.zeros((4, 2)), [1, 2])


class TestQpRelaxSolve:
    def test_zero_risk_matrix_returns_immediately(self):
        w = np.ones((5, 5))  # complementary weights all zero
        inst = ProblemInstance(graph=CommGraph(m=5, w=w), n=2,
                               capacities=[5, 5], desired_dist=[0.5, 0.5])
        frac = qp_relax_solve(inst, iters=50, seed=0, restarts=1)
        f = 0.5 * float((frac.x * (inst.w_bar @ frac.x)).sum())
        assert f == 0.0

    def test_iterates_stay_in_polytope(self):
        inst = uniform_instance(10, 3, 21, caps=[4, 4, 4])
        iterates = []
        qp_relax_solve(inst, iters=60, seed=1, restarts=2, on_iterate=iterates.append)
        assert iterates
        for x in iterates:
            assert np.abs(x.sum(axis=1) - 1.0).max() < 1e-9
            assert np.all(x.sum(axis=0) <= inst.capacities + 1e-9)
            assert x.min() >= -1e-12

    def test_best_objective_non_increasing(self):
        inst = uniform_instance(9, 2, 13, caps=[5, 5])
        iterates = []
        qp_relax_solve(inst, iters=80, seed=2, restarts=1, on_iterate=iterates.append)
        wb = inst.w_bar
        objectives = [0.5 * float((x * (wb @ x)).sum()) for x in iterates]
        best_so_far = np.minimum.accumulate(objectives)
        for a, b in zip(best_so_far, best_so_far[1:]):
            assert b <= a + 1e-12

    def test_toy_fractional_below_integral_optimum(self):
        for seed in (0, 1, 2, 3, 4, 5):
            inst = uniform_instance(6, 2, 100 + seed, caps=[4, 4])
            frac = qp_relax_solve(inst, iters=300, seed=seed)
            f = 0.5 * float((frac.x * (inst.w_bar @ frac.x)).sum())
            assert f <= brute_force(inst).risk + 1e-9


class TestRoundFractional:
    def test_integral_input_round_trips(self):
        inst = uniform_instance(6, 2, 44, caps=[3, 3])
        opt = brute_force(inst)
        x = np.zeros((6, 2))
        x[np.arange(6), opt.allocation.assign] = 1.0
        res = round_fractional(inst, FractionalAllocation(x))
        # the optimum survives rounding and cannot be improved by repair
        assert np.array_equal(res.allocation.assign, opt.allocation.assign)

    def test_uniform_mass_respects_capacities(self):
        inst = uniform_instance(6, 3, 5, caps=[2, 2, 2])
        res = round_fractional(inst, FractionalAllocation(np.full((6, 3), 1 / 3)))
        assert res.feasible

    def test_rounded_risk_vs_fractional_objective(self, rng):
        # meaningful only when the relaxation is solved well: a shallow
        # stationary point can sit above what rounding plus repair reaches,
        # so give the solver enough restarts to land near the global basin
        gaps = []
        for seed in range(6):
            inst = uniform_instance(10, 3, 200 + seed, caps=[4, 4, 4])
            frac = qp_relax_solve(inst, seed=seed, restarts=8)
            fval = 0.5 * float((frac.x * (inst.w_bar @ frac.x)).sum())
            res = round_fractional(inst, frac)
            assert res.feasible
            gaps.append(res.risk - fval)
        assert min(gaps) >= -1e-9


def test_fractional_allocation_validation():
    with pytest.raises(ConfigError):
        FractionalAllocation(np.array([[0.5, 0.4]]))  # row sums below 1
    with pytest.raises(ConfigError):
        FractionalAllocation(np.array([[1.2, -0.2]]))


def test_baseline_results_report_method_tags(rng):
    inst = uniform_instance(6, 2, 77, caps=[3, 3])
    assert brute_force(inst).method == "brute_force"
    assert random_feasible(inst, rng).method == "random"
    assert greedy_construct(inst).method == "greedy"
    start = random_feasible(inst, np.random.default_rng(1))
    assert local_search_swap(inst, start.allocation, 5).method == "local_search"
    assert isinstance(round_fractional(inst, qp_relax_solve(inst, 50, seed=1)), BaselineResult)
