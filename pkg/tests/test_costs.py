import math

import numpy as np
import pytest

from levydam import (
    CostSpec,
    PiecewisePoly,
    PolicyEvaluator,
    PolicyParams,
    ScaleFunctionSet,
    brownian,
    compound_poisson_exp,
    cycle_cost,
    exit_lt_reflected,
    fill_cost,
    long_run_average_cost,
    release_cost,
    release_exit_lt,
    shifted_scale_set,
    total_discounted_cost,
)

CP = compound_poisson_exp(2.0, 1.0, 1.0)
BM = brownian(1.0, 2.0)
POLICY = PolicyParams(lam=2.0, tau=0.5, M=2.0, V=4.0)
G = PiecewisePoly((0.0, 2.0), ((0.2, 0.1),))
G_STAR = PiecewisePoly((0.5, 4.0), ((0.1, 0.05),))
COSTS = CostSpec(K1=1.0, K2=0.5, R=0.3, g=G, g_star=G_STAR)
ZERO = CostSpec(0.0, 0.0, 0.0, PiecewisePoly.zero(), PiecewisePoly.zero())


class TestPiecewisePoly:
    def test_piece_evaluation(self):
        p = PiecewisePoly((0.0, 1.0, 2.0), ((1.0, 2.0), (3.0,)))
        assert p(0.5) == pytest.approx(2.0)      # 1 + 2*(0.5)
        assert p(1.5) == pytest.approx(3.0)
        assert p(-0.1) == 0.0
        assert p(2.0) == 0.0                     # right-open support

    def test_validation(self):
        with pytest.raises(ValueError):
            PiecewisePoly((1.0, 0.0), ((1.0,),))
        with pytest.raises(ValueError):
            PiecewisePoly((0.0, 1.0), ((1.0,), (2.0,)))
        with pytest.raises(ValueError):
            PiecewisePoly((0.0, 1.0), ((math.inf,),))

    def test_declared_bound_enforced(self):
        g = PiecewisePoly.constant(2.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            CostSpec(0.0, 0.0, 0.0, g, PiecewisePoly.zero(), g_bound=1.0)
        CostSpec(0.0, 0.0, 0.0, g, PiecewisePoly.zero(), g_bound=2.5)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            PolicyParams(lam=1.0, tau=1.0, M=1.0, V=2.0)
        with pytest.raises(ValueError):
            PolicyParams(lam=2.0, tau=0.5, M=0.0, V=4.0)
        with pytest.raises(ValueError):
            PolicyParams(lam=2.0, tau=0.5, M=1.0, V=1.5)


class TestPhaseCosts:
    def test_zero_rate_gives_zero(self):
        s = ScaleFunctionSet(CP, 0.5)
        assert fill_cost(CP, s, 0.5, 2.0, PiecewisePoly.zero()) == 0.0
        s_M = shifted_scale_set(CP, 2.0, 0.5)
        assert release_cost(CP, s_M, 3.0, 0.5, 4.0, PiecewisePoly.zero()) == 0.0

    @pytest.mark.parametrize("model", [CP, BM])
    def test_unit_rate_matches_transform_identity(self, model):
        alpha = 0.5
        s = ScaleFunctionSet(model, alpha)
        one = PiecewisePoly.constant(1.0, 0.0, 2.0)
        got = fill_cost(model, s, 0.5, 2.0, one, reflected=True)
        want = (1.0 - exit_lt_reflected(s, 0.5, 2.0)) / alpha
        assert got == pytest.approx(want, abs=1e-7)

    @pytest.mark.parametrize("model", [CP, BM])
    def test_unit_rate_release_matches_transform_identity(self, model):
        alpha = 0.5
        s_M = shifted_scale_set(model, 2.0, alpha)
        one = PiecewisePoly.constant(1.0, 0.5, 4.0)
        got = release_cost(model, s_M, 4.0, 0.5, 4.0, one)
        want = (1.0 - release_exit_lt(s_M, 4.0, 0.5, 4.0)) / alpha
        assert got == pytest.approx(want, abs=1e-7)

    def test_fill_cost_includes_atom_for_bounded_variation(self):
        # constant rate on [0, lam): dropping the atom at zero must change it
        alpha = 0.5
        s = ScaleFunctionSet(CP, alpha)
        one = PiecewisePoly.constant(1.0, 0.0, 2.0)
        with_atom = fill_cost(CP, s, 0.5, 2.0, one, reflected=True)
        shifted = PiecewisePoly.constant(1.0, 1e-9, 2.0)  # misses y = 0
        without = fill_cost(CP, s, 0.5, 2.0, shifted, reflected=True)
        assert with_atom > without + 1e-4


class TestCycleCost:
    def test_all_zero(self):
        assert cycle_cost(CP, POLICY, ZERO, 0.5, 0.5) == pytest.approx(0.0)

    def test_rejects_zero_alpha(self):
        with pytest.raises(ValueError):
            cycle_cost(CP, POLICY, COSTS, 0.0, 0.5)

    def test_charges_only_configuration(self):
        # g = g* = 0, R = 0: cost is M (K2 + K1 q_fill) below the threshold
        spec = CostSpec(1.0, 0.5, 0.0, PiecewisePoly.zero(), PiecewisePoly.zero())
        alpha, x = 0.5, 0.5
        s = ScaleFunctionSet(CP, alpha)
        got = cycle_cost(CP, POLICY, spec, alpha, x, reflected=True, s=s)
        q = exit_lt_reflected(s, x, 2.0)
        assert got == pytest.approx(2.0 * (0.5 + 1.0 * q), abs=1e-7)

    def test_release_phase_start(self):
        # lam < x <= V only sees the opening charge, reward and g*
        alpha, x = 0.5, 3.0
        s_M = shifted_scale_set(CP, 2.0, alpha)
        got = cycle_cost(CP, POLICY, COSTS, alpha, x, s_M=s_M)
        rel_lt = release_exit_lt(s_M, x, 0.5, 4.0)
        want = (2.0 * (1.0 - 0.3 * (1.0 - rel_lt) / alpha)
                + release_cost(CP, s_M, x, 0.5, 4.0, G_STAR))
        assert got == pytest.approx(want, rel=1e-10)

    def test_brownian_composition_reduces_to_release_at_threshold(self):
        # continuous input: the overshoot composition is exactly the release
        # cost started at the threshold
        alpha, x = 0.5, 0.8
        s = ScaleFunctionSet(BM, alpha)
        s_M = shifted_scale_set(BM, 2.0, alpha)
        got = cycle_cost(BM, POLICY, COSTS, alpha, x, s=s, s_M=s_M)
        q = exit_lt_reflected(s, x, 2.0)
        from levydam import cycle_end_lt
        q_cycle = cycle_end_lt(BM, POLICY, alpha, x, s=s, s_M=s_M)
        want = (2.0 * (0.5 + 1.0 * q - (0.3 / alpha) * (q - q_cycle))
                + fill_cost(BM, s, x, 2.0, G, reflected=True)
                + q * release_cost(BM, s_M, 2.0, 0.5, 4.0, G_STAR))
        assert got == pytest.approx(want, rel=1e-9)


class TestTotalDiscounted:
    def test_all_zero(self):
        assert total_discounted_cost(CP, POLICY, ZERO, 0.5, 0.5) == 0.0

    def test_geometric_identity_at_tau(self):
        ev = PolicyEvaluator(CP, POLICY, COSTS)
        alpha = 0.5
        c_tau = ev.cycle_cost(alpha)
        q_tau = ev.cycle_end_lt(alpha)
        assert ev.total_discounted(alpha) == pytest.approx(
            c_tau / (1.0 - q_tau), rel=1e-12)

    def test_monotone_in_opening_charge(self):
        bumped = CostSpec(K1=1.5, K2=0.5, R=0.3, g=G, g_star=G_STAR)
        base = total_discounted_cost(CP, POLICY, COSTS, 0.5, 0.5)
        more = total_discounted_cost(CP, POLICY, bumped, 0.5, 0.5)
        assert more > base + 1e-6


class TestLongRunAverage:
    def test_all_zero(self):
        assert long_run_average_cost(CP, POLICY, ZERO) == pytest.approx(0.0)

    def test_independent_of_start_state(self):
        a = long_run_average_cost(CP, POLICY, COSTS, x=0.5)
        b = long_run_average_cost(CP, POLICY, COSTS, x=1.5)
        assert a == pytest.approx(b, abs=1e-9)

    def test_plain_input_with_downward_drift_rejected(self):
        with pytest.raises(ValueError):
            long_run_average_cost(CP, POLICY, COSTS, reflected=False)

    def test_infinite_capacity_slow_release_rejected(self):
        heavy = compound_poisson_exp(2.0, 1.0, 4.0)  # mean inflow +2
        policy = PolicyParams(lam=2.0, tau=0.5, M=1.0, V=math.inf)
        with pytest.raises(ValueError):
            long_run_average_cost(heavy, policy, COSTS)

    @pytest.mark.parametrize("model", [CP, BM])
    def test_abelian_limit(self, model):
        ev = PolicyEvaluator(model, POLICY, COSTS)
        lra = ev.long_run_average()
        vals = [a * ev.total_discounted(a) for a in (1e-2, 1e-3, 1e-4)]
        first = (10 * vals[1] - vals[0]) / 9
        second = (10 * vals[2] - vals[1]) / 9
        extrap = (100 * second - first) / 99
        assert extrap == pytest.approx(lra, rel=1e-3)
