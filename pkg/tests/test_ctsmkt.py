"""
tests/test_ctsmkt.py — Diffusion markets: simulation, AMPR, canonical image,
replication and Monte Carlo pricing.

Monte Carlo assertions use fixed seeds and a 4 standard-error band.
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from src.isomarket.config import CheckConfig
from src.isomarket.ctsmkt import (
    AmprSchedule,
    CallClaim,
    ConstantClaim,
    LinearClaim,
    LogQPolynomialClaim,
    QCallClaim,
    SDEModel,
    ampr_agreement,
    ampr_coefficient,
    ampr_coefficient_windows,
    ampr_realized,
    bachelier_canonicalize,
    black_scholes_price,
    canonical_ensemble,
    drift_adjust,
    exchange_cost,
    gram_schmidt_frame,
    mutual_fund_weights,
    parse_claim,
    price_ensemble,
    price_mc,
    q_measurable,
    q_process,
    replicate_fund,
    replication_study,
    simulate,
    validate_model,
)
from src.isomarket.errors import InvalidInputError, NonDeterministicAmprError
from src.isomarket.statcheck import ks_against_cdf, qv_check
from src.isomarket.verify import replication_checks

BAND = 4.0


def gbm_1d(drift=0.07, r=0.02):
    return SDEModel.gbm(drift=[drift], vol=0.2, r=r, horizon=1.0, x0=[100.0])


class TestModels:
    def test_schedule_is_piecewise_constant(self):
        schedule = AmprSchedule([0.0, 0.5], [0.2, 0.4])
        assert schedule(0.25) == pytest.approx(0.2)
        assert schedule(0.5) == pytest.approx(0.4)
        assert schedule.minimum() == pytest.approx(0.2)

    def test_schedule_must_start_at_zero(self):
        with pytest.raises(InvalidInputError):
            AmprSchedule([0.1, 0.5], [0.2, 0.4])

    def test_unknown_family(self):
        with pytest.raises(InvalidInputError):
            validate_model(SDEModel("heston", 1.0, [1.0]))

    def test_ampr_floor(self):
        with pytest.raises(InvalidInputError):
            validate_model(SDEModel.canonical_bachelier(1e-9, r=0.0, horizon=1.0))

    def test_horizon_positive(self):
        with pytest.raises(InvalidInputError):
            validate_model(SDEModel.bachelier([0.0], 1.0, r=0.0, horizon=0.0, x0=[0.0]))


class TestAmpr:
    def test_gbm(self):
        model = gbm_1d()
        for x in (50.0, 100.0, 250.0):
            assert ampr_coefficient(model, [x]) == pytest.approx(0.25)

    def test_canonical_bachelier(self):
        model = SDEModel.canonical_bachelier(0.3, r=0.05, horizon=1.0, dimension=3)
        assert ampr_coefficient(model, [1.0, -2.0, 0.5], 0.7) == pytest.approx(0.3)

    def test_risk_neutral_drift(self):
        assert ampr_coefficient(gbm_1d(drift=0.02), [100.0]) == pytest.approx(0.0, abs=1e-15)

    def test_vectorized(self):
        x = np.linspace(10.0, 200.0, 7)[:, None]
        assert np.allclose(ampr_coefficient(gbm_1d(), x), 0.25)


class TestDriftAdjust:
    vol = np.array([[0.2, 0.0], [0.05, 0.3]])

    def test_zero_target_is_risk_neutral(self):
        model = drift_adjust(SDEModel.gbm([0.0, 0.0], self.vol, r=0.03, horizon=1.0, x0=[1.0, 2.0]), 0.0)
        x = np.array([1.5, 0.5])
        assert np.allclose(model.mu(x), 0.03 * x)
        assert ampr_coefficient(model, x) == pytest.approx(0.0, abs=1e-15)

    def test_target_holds_everywhere(self):
        rng = np.random.default_rng(0)
        for base in (SDEModel.gbm([0.0, 0.0], self.vol, r=0.03, horizon=1.0, x0=[1.0, 2.0]),
                     SDEModel.cev([0.0, 0.0], self.vol, beta=0.5, r=0.03, horizon=1.0, x0=[1.0, 2.0])):
            model = drift_adjust(base, 0.25)
            x = rng.uniform(0.1, 10.0, size=(100, 2))
            t = rng.uniform(0.0, 1.0, size=100)
            assert np.allclose(ampr_coefficient(model, x, t), 0.25)
            assert model.family_tag == "drift-adjusted"

    def test_identity_vol_without_rate(self):
        model = drift_adjust(SDEModel.bachelier([0.0, 0.0], 1.0, r=0.0, horizon=1.0, x0=[0.0, 0.0]), 0.4)
        assert np.allclose(model.mu(np.array([3.0, -1.0])), [-0.4, 0.0])


class TestMutualFundWeights:
    def test_canonical_bachelier(self):
        model = SDEModel.canonical_bachelier(0.3, r=0.01, horizon=1.0, dimension=2)
        assert np.allclose(mutual_fund_weights(model, [0.4, 1.0]), [-0.3, 0.0])

    def test_gbm_scalar(self):
        w = mutual_fund_weights(gbm_1d(), [80.0])
        assert w[0] == pytest.approx((0.02 - 0.07) / (0.2 ** 2 * 80.0))

    def test_vanish_with_ampr(self):
        assert np.allclose(mutual_fund_weights(gbm_1d(drift=0.02), [80.0]), 0.0)


class TestSimulate:
    def test_gbm_mean(self):
        ens = simulate(gbm_1d(), 0.25, 4, 8000, seed=11, scheme="exact")
        terminal = ens.x[:, -1, 0]
        se = terminal.std(ddof=1) / np.sqrt(len(terminal))
        assert abs(terminal.mean() - 100.0 * np.exp(0.07)) <= BAND * se

    def test_same_seed_same_paths(self):
        a = simulate(gbm_1d(), 0.01, 100, 20, seed=5)
        b = simulate(gbm_1d(), 0.01, 100, 20, seed=5)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.dw, b.dw)

    def test_blocks_concatenate_to_one_run(self):
        model = gbm_1d()
        whole = simulate(model, 0.1, 10, 50, seed=3)
        first = simulate(model, 0.1, 10, 30, seed=3)
        second = simulate(model, 0.1, 10, 20, seed=3, path_offset=30)
        assert np.array_equal(whole.x, np.concatenate([first.x, second.x]))

    def test_workers_do_not_change_output(self):
        model = SDEModel.bachelier([0.1, 0.0], [[1.0, 0.0], [0.5, 1.0]], r=0.0, horizon=1.0, x0=[0.0, 0.0])
        serial = simulate(model, 0.05, 20, 40, seed=9)
        threaded = simulate(model, 0.05, 20, 40, seed=9, workers=3)
        assert np.array_equal(serial.dw, threaded.dw)

    def test_antithetic_pairs(self):
        ens = simulate(gbm_1d(), 0.1, 10, 4, seed=1, antithetic=True)
        assert np.array_equal(ens.dw[1], -ens.dw[0])
        assert np.array_equal(ens.dw[3], -ens.dw[2])

    def test_horizon_mismatch(self):
        with pytest.raises(InvalidInputError):
            simulate(gbm_1d(), 0.1, 5, 10)

    def test_exact_scheme_only_for_gbm(self):
        model = SDEModel.bachelier([0.0], 1.0, r=0.0, horizon=1.0, x0=[0.0])
        with pytest.raises(InvalidInputError):
            simulate(model, 0.1, 10, 10, scheme="exact")


class TestQProcess:
    def test_zero_price_of_risk(self):
        qp = q_process(simulate(gbm_1d(drift=0.02), 0.01, 100, 50, seed=2))
        assert np.all(qp.q == 1.0)

    def test_martingale_at_every_step(self):
        ens = simulate(drift_adjust(gbm_1d(), 0.4), 0.1, 10, 4000, seed=21)
        q = q_process(ens).q
        se = q.std(axis=0, ddof=1) / np.sqrt(q.shape[0])
        assert np.all(np.abs(q[:, 1:].mean(axis=0) - 1.0) <= BAND * se[1:])
        assert np.all(q > 0)

    def test_log_q_law(self):
        theta, horizon = 0.4, 1.0
        ens = simulate(drift_adjust(gbm_1d(), theta), 0.1, 10, 4000, seed=22)
        log_q = q_process(ens).log_q[:, -1]
        law = stats.norm(loc=-0.5 * theta ** 2 * horizon, scale=theta * np.sqrt(horizon))
        assert ks_against_cdf(log_q, law.cdf, checks=CheckConfig(alpha=0.001)).passed


class TestRealizedAmpr:
    def test_constant_q(self):
        assert np.allclose(ampr_realized(np.ones((3, 64)), 0.01), 0.0)

    def test_matches_coefficient(self):
        model = SDEModel.canonical_bachelier(0.5, r=0.0, horizon=1.0)
        ens = simulate(model, 1 / 320, 320, 200, seed=4)
        qp = q_process(ens)
        realized = ampr_realized(qp, ens.dt)
        assert realized.shape == (200, 10)
        assert realized.mean() == pytest.approx(0.25, rel=0.1)
        assert ampr_agreement(realized, ampr_coefficient_windows(qp)) < 0.1

    def test_rejects_non_positive_q(self):
        with pytest.raises(InvalidInputError):
            ampr_realized(np.array([[1.0, 0.0, 1.0]]), 0.1)


class TestGramSchmidtFrame:
    def test_e1_gives_identity(self):
        assert np.allclose(gram_schmidt_frame([1.0, 0.0, 0.0]), np.eye(3))

    def test_e2(self):
        assert np.allclose(gram_schmidt_frame([0.0, 1.0]), [[0.0, 1.0], [1.0, 0.0]])

    def test_random_unit_vector(self):
        rng = np.random.default_rng(12)
        v = rng.normal(size=5)
        v /= np.linalg.norm(v)
        frame = gram_schmidt_frame(v)
        assert np.allclose(frame @ frame.T, np.eye(5), atol=1e-12)
        assert np.allclose(frame[0], v)

    def test_non_unit(self):
        with pytest.raises(InvalidInputError):
            gram_schmidt_frame([1.0, 1.0])


class TestCanonicalize:
    def test_canonical_input_is_fixed(self):
        model = SDEModel.canonical_bachelier(0.4, r=0.01, horizon=1.0, dimension=2)
        ens = simulate(model, 0.01, 100, 50, seed=6)
        image = bachelier_canonicalize(ens).canonical
        assert np.max(np.abs(image.w_increments - ens.dw)) <= 1e-12
        assert np.allclose(image.a, 0.4)

    def test_brownian_quadratic_variation(self):
        ens = simulate(drift_adjust(gbm_1d(), 0.25), 0.005, 200, 100, seed=7, scheme="exact")
        image = bachelier_canonicalize(ens).canonical
        assert qv_check(image.w_increments[:, :, 0], 1.0, ens.dt).passed
        assert np.allclose(image.w_tilde[:, -1, 0], image.w_increments[:, :, 0].sum(axis=1))

    def test_density_process_is_preserved(self):
        ens = simulate(drift_adjust(gbm_1d(), 0.25), 0.01, 100, 500, seed=8)
        claim = QCallClaim(strike=1.0)
        original = price_ensemble(ens, claim)
        image = price_ensemble(canonical_ensemble(ens), claim)
        assert image.price == pytest.approx(original.price, rel=1e-9)

    def test_refuses_path_dependent_ampr(self):
        model = SDEModel.bachelier([0.5], 1.0, r=0.5, horizon=1.0, x0=[3.0])
        with pytest.raises(NonDeterministicAmprError):
            bachelier_canonicalize(simulate(model, 0.01, 100, 200, seed=9))


class TestReplication:
    def test_exact_without_rate(self):
        model = SDEModel.canonical_bachelier(0.5, r=0.0, horizon=1.0)
        report = replicate_fund(simulate(model, 0.01, 100, 50, seed=10))
        assert report.rms_error <= 1e-10
        assert report.financing_residual <= 1e-10

    def test_error_scales_with_root_dt(self):
        model = drift_adjust(gbm_1d(), 0.25)
        reports, order = replication_study(model, [1e-2, 1e-3], n_paths=400, seed=13)
        assert reports[0].rms_error > reports[1].rms_error
        assert 0.35 <= order <= 0.65

    def test_three_decades_of_step_size(self):
        model = drift_adjust(gbm_1d(), 0.25)
        reports, order = replication_study(model, [1e-2, 1e-3, 1e-4], n_paths=200, seed=14)
        errors = [rep.rms_error for rep in reports]
        assert errors[0] > errors[1] > errors[2]
        assert 0.35 <= order <= 0.65

    def test_blocks_match_one_batch(self):
        model = drift_adjust(gbm_1d(), 0.25)
        whole, _ = replication_study(model, [0.05], n_paths=60, seed=15, block_paths=60)
        blocked, _ = replication_study(model, [0.05], n_paths=60, seed=15, block_paths=25)
        assert blocked[0].n_paths == 60
        assert blocked[0].rms_error == pytest.approx(whole[0].rms_error, rel=1e-12)
        assert blocked[0].max_error == pytest.approx(whole[0].max_error, rel=1e-12)

    def test_step_longer_than_horizon(self):
        with pytest.raises(InvalidInputError):
            replication_study(drift_adjust(gbm_1d(), 0.25), [5.0], n_paths=10, seed=1)

    def test_exact_replication_passes_on_exactness(self):
        model = SDEModel.canonical_bachelier(0.5, r=0.0, horizon=1.0)
        reports, checks = replication_checks(model, [1e-2, 1e-3], paths=50, seed=16)
        assert all(rep.rms_error <= 1e-10 for rep in reports)
        assert [c.name for c in checks] == ["replication_exact"]
        assert checks[0].passed

    def test_inexact_replication_gets_an_order_gate(self):
        model = drift_adjust(gbm_1d(), 0.25)
        _, checks = replication_checks(model, [1e-2, 1e-3], paths=400, seed=13)
        assert [c.name for c in checks] == ["replication_order"]
        assert checks[0].passed


class TestTwoAssetModels:
    vol = np.array([[0.2, 0.0], [0.05, 0.3]])

    def cev_2d(self):
        base = SDEModel.cev([0.0, 0.0], self.vol, beta=0.5, r=0.01, horizon=1.0, x0=[1.0, 2.0])
        return drift_adjust(base, 0.3)

    def test_realized_ampr_of_drift_adjusted_cev(self):
        model = self.cev_2d()
        ens = simulate(model, 1 / 320, 320, 200, seed=17)
        qp = q_process(ens)
        coefficient = ampr_coefficient_windows(qp)
        assert np.allclose(coefficient, 0.09)
        assert ampr_agreement(ampr_realized(qp, ens.dt), coefficient) < 0.1

    def test_drift_adjusted_gbm_canonicalizes(self):
        base = SDEModel.gbm([0.0, 0.0], self.vol, r=0.01, horizon=1.0, x0=[1.0, 2.0])
        ens = simulate(drift_adjust(base, 0.3), 0.005, 200, 100, seed=18)
        image = bachelier_canonicalize(ens).canonical
        assert np.allclose(image.a, 0.3)
        assert qv_check(image.w_increments[:, :, 0], 1.0, ens.dt).passed
        assert qv_check(image.w_increments[:, :, 1], 1.0, ens.dt).passed

    def test_cev_martingale(self):
        ens = simulate(self.cev_2d(), 0.01, 100, 4000, seed=19)
        q_t = q_process(ens).q[:, -1]
        se = q_t.std(ddof=1) / np.sqrt(len(q_t))
        assert abs(q_t.mean() - 1.0) <= BAND * se


class TestClaims:
    def test_parse_call(self):
        claim = parse_claim({"kind": "call", "asset": 0, "strike": 100})
        assert isinstance(claim, CallClaim)
        assert not q_measurable(claim)

    def test_strike_must_be_positive(self):
        with pytest.raises(ValidationError):
            parse_claim({"kind": "put", "strike": -1})

    def test_unknown_field(self):
        with pytest.raises(ValidationError):
            parse_claim({"kind": "constant", "value": 1.0, "notional": 2})

    def test_polynomial_degree_limit(self):
        with pytest.raises(ValidationError):
            parse_claim({"kind": "log_q_poly", "coefficients": [0, 0, 0, 0, 0, 1]})

    def test_indicator_bounds(self):
        with pytest.raises(ValidationError):
            parse_claim({"kind": "indicator", "lower": 2.0, "upper": 1.0})

    def test_q_measurable_family(self):
        assert q_measurable(ConstantClaim())
        assert q_measurable(LogQPolynomialClaim(coefficients=[0.0, 1.0]))
        assert q_measurable(QCallClaim(strike=1.0))


class TestPricing:
    def test_constant_claim(self):
        model = drift_adjust(gbm_1d(), 0.25)
        est = price_mc(model, ConstantClaim(), 0.1, 4000, seed=14)
        assert abs(est.price - np.exp(-0.02)) <= BAND * est.stderr

    def test_black_scholes_call(self):
        est = price_mc(gbm_1d(), CallClaim(strike=100.0), 1.0, 20000, seed=15, scheme="exact")
        closed = black_scholes_price(100.0, 100.0, 0.02, 0.2, 1.0)
        assert abs(est.price - closed) <= BAND * est.stderr

    def test_put_call_parity(self):
        call = black_scholes_price(100.0, 90.0, 0.02, 0.2, 1.0, "call")
        put = black_scholes_price(100.0, 90.0, 0.02, 0.2, 1.0, "put")
        assert call - put == pytest.approx(100.0 - 90.0 * np.exp(-0.02))

    def test_linear_claim_costs_its_replication(self):
        model = gbm_1d()
        est = price_mc(model, LinearClaim(a0=1.0, a=[2.0]), 0.25, 8000, seed=16, scheme="exact")
        assert abs(est.price - exchange_cost(model, 1.0, [2.0])) <= BAND * est.stderr

    def test_antithetic_estimate(self):
        model = drift_adjust(gbm_1d(), 0.25)
        est = price_mc(model, LogQPolynomialClaim(coefficients=[0.0, 1.0]), 0.1, 4000, seed=17, antithetic=True)
        # E_Q[log q_T] = ½θ²T
        assert abs(est.price - np.exp(-0.02) * 0.5 * 0.25 ** 2) <= BAND * est.stderr

    def test_non_finite_payoff(self):
        ens = simulate(gbm_1d(), 0.5, 2, 10, seed=18, scheme="exact")
        with pytest.raises(InvalidInputError):
            price_ensemble(ens, LinearClaim(a=[1e308]))

    def test_exchange_cost(self):
        assert exchange_cost(gbm_1d(), 1.0, [2.0]) == pytest.approx(np.exp(-0.02) + 200.0)
