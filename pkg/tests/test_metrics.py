import numpy as np
import pytest

import oracles
from diffcast import (
    ContingencyTable,
    EnsembleForecast,
    crps_ensemble,
    csi,
    csi_neighborhood,
    economic_value,
    fss,
    pooled_crps,
    psd_radial,
    rmse_mae,
)
from diffcast.errors import ParameterError, ShapeError


# -- CRPS ----------------------------------------------------------------------

def test_crps_perfect_deterministic_forecast():
    truth = np.random.default_rng(0).standard_normal((2, 1, 3, 3))
    members = np.stack([truth] * 4)
    field, mean = crps_ensemble(members, truth)
    assert np.array_equal(field, np.zeros_like(truth))
    assert mean == 0.0


def test_crps_single_member_reduces_to_absolute_error():
    rng = np.random.default_rng(1)
    truth = rng.standard_normal((1, 1, 4, 4))
    member = rng.standard_normal((1, 1, 1, 4, 4))
    field, _ = crps_ensemble(member, truth)
    assert np.allclose(field, np.abs(member[0] - truth), atol=1e-15)


def test_crps_two_member_hand_case():
    truth = np.zeros((1, 1, 1, 1))
    members = np.stack([np.zeros((1, 1, 1, 1)), np.ones((1, 1, 1, 1))])
    field, mean = crps_ensemble(members, truth)
    assert np.allclose(field, 0.25, atol=1e-15)  # 0.5 - 2/(2*4)
    assert abs(mean - 0.25) < 1e-15


def test_crps_fair_variant():
    truth = np.zeros((1,))
    members = np.stack([np.zeros(1), np.ones(1)])
    field, _ = crps_ensemble(members, truth, fair=True)
    assert np.allclose(field, 0.5 - 2.0 / 4.0, atol=1e-15)  # pair term / (2*M*(M-1))
    with pytest.raises(ParameterError):
        crps_ensemble(members[:1], truth, fair=True)


def test_crps_accepts_ensemble_forecast_dataclass():
    truth = np.zeros((1, 1, 2, 2))
    ens = EnsembleForecast(members=np.zeros((3, 1, 1, 2, 2)), case_id=7)
    _, mean = crps_ensemble(ens, truth)
    assert mean == 0.0


def test_crps_calibration_improves_with_members():
    # i.i.d. members from the truth's distribution: expected CRPS scales as
    # (M+1)/(2M) for the biased estimator, so it must decrease with M
    rng = np.random.default_rng(5)
    truth = rng.standard_normal((200, 200))
    means = []
    for m in (1, 2, 4, 8):
        members = rng.standard_normal((m,) + truth.shape)
        means.append(crps_ensemble(members, truth)[1])
    assert means[0] > means[1] > means[2] > means[3]


# -- pooled CRPS ----------------------------------------------------------------

def test_pooled_window_one_equals_plain():
    rng = np.random.default_rng(2)
    truth = rng.standard_normal((2, 1, 4, 4))
    members = rng.standard_normal((3,) + truth.shape)
    assert pooled_crps(members, truth, 1, "avg") == crps_ensemble(members, truth)[1]


def test_pooled_constant_fields_unchanged():
    truth = np.full((1, 1, 4, 4), 2.0)
    members = np.stack([np.full_like(truth, 1.0), np.full_like(truth, 3.0)])
    plain = crps_ensemble(members, truth)[1]
    for agg in ("avg", "max"):
        assert abs(pooled_crps(members, truth, 2, agg) - plain) < 1e-15


def test_pooled_hand_case():
    truth = np.array([[0.0, 0.0], [2.0, 2.0]]).reshape(1, 1, 2, 2)
    member = np.ones((1, 1, 1, 2, 2))
    assert pooled_crps(member, truth, 2, "avg") == 0.0


def test_pooled_window_validation():
    truth = np.zeros((1, 1, 4, 4))
    members = np.zeros((2, 1, 1, 4, 4))
    with pytest.raises(ParameterError):
        pooled_crps(members, truth, 5, "avg")
    with pytest.raises(ParameterError):
        pooled_crps(members, truth, 2, "median")


# -- CSI -------------------------------------------------------------------------

def test_csi_perfect_forecast():
    truth = (np.arange(16.0).reshape(1, 1, 4, 4) > 7).astype(float)
    value, table = csi([truth], [truth], 0.5)
    assert value == 1.0
    assert not table.no_events


def test_csi_disjoint_events():
    f = np.zeros((1, 1, 2, 2))
    t = np.zeros((1, 1, 2, 2))
    f[0, 0, 0, 0] = 1.0
    t[0, 0, 1, 1] = 1.0
    value, _ = csi([f], [t], 0.5)
    assert value == 0.0


def test_csi_hand_counts():
    # hits=2, misses=1, false_alarms=1 -> 0.5
    f = np.array([1.0, 1.0, 0.0, 1.0, 0.0])
    t = np.array([1.0, 1.0, 1.0, 0.0, 0.0])
    value, table = csi([f], [t], 0.5)
    assert (table.hits, table.misses, table.false_alarms) == (2, 1, 1)
    assert value == 0.5


def test_csi_empty_events_flagged():
    z = np.zeros((1, 1, 2, 2))
    value, table = csi([z], [z], 0.5)
    assert value == 0.0
    assert table.no_events


def test_contingency_addition():
    a = ContingencyTable(1, 2, 3, 4)
    b = ContingencyTable(5, 6, 7, 8)
    c = a + b
    assert (c.hits, c.misses, c.false_alarms, c.correct_rejections) == (6, 8, 10, 12)


# -- neighborhood CSI -------------------------------------------------------------

def test_csi_neighborhood_window_one_equals_csi():
    rng = np.random.default_rng(3)
    fs = [rng.random((1, 1, 5, 5)) for _ in range(3)]
    ts = [rng.random((1, 1, 5, 5)) for _ in range(3)]
    assert csi_neighborhood(fs, ts, 0.5, 1) == csi(fs, ts, 0.5)[0]


def test_csi_neighborhood_one_pixel_displacement_hits():
    f = np.zeros((1, 1, 5, 5))
    t = np.zeros((1, 1, 5, 5))
    f[0, 0, 2, 2] = 1.0
    t[0, 0, 2, 3] = 1.0
    assert csi_neighborhood([f], [t], 0.5, 3) == 1.0


def test_csi_neighborhood_two_pixel_displacement_misses():
    f = np.zeros((1, 1, 5, 5))
    t = np.zeros((1, 1, 5, 5))
    f[0, 0, 2, 0] = 1.0
    t[0, 0, 2, 2] = 1.0
    # one false alarm plus one miss, no hits
    assert csi_neighborhood([f], [t], 0.5, 3) == 0.0


def test_csi_neighborhood_window_validation():
    z = [np.zeros((1, 1, 3, 3))]
    with pytest.raises(ParameterError):
        csi_neighborhood(z, z, 0.5, 2)


# -- FSS ---------------------------------------------------------------------------

def test_fss_perfect_and_worst():
    t = np.zeros((1, 1, 4, 4))
    t[0, 0, :2] = 1.0
    assert fss([t], [t], 0.5, 3) == 1.0
    all_event = np.ones_like(t)
    no_event = np.zeros_like(t)
    assert fss([all_event], [no_event], 0.5, 3) == 0.0


def test_fss_one_dimensional_hand_case():
    t = np.array([[[[1.0, 0.0, 0.0]]]])
    f = np.array([[[[0.0, 0.0, 1.0]]]])
    got = fss([f], [t], 0.5, 3)
    want = oracles.fss_brute([f], [t], 0.5, 3)
    assert abs(got - want) < 1e-15
    assert abs(got - 4.0 / 13.0) < 1e-12  # truncated-window fractions by hand


def test_fss_no_events_vacuous_one():
    z = np.zeros((1, 1, 3, 3))
    assert fss([z], [z], 0.5, 3) == 1.0


# -- PSD -----------------------------------------------------------------------------

def test_psd_constant_field_zero_power():
    k, power = psd_radial(np.full((8, 8), 3.5))
    assert np.allclose(power, 0.0, atol=1e-20)


def test_psd_pure_cosine_lands_in_its_bin():
    W = 16
    x = np.arange(W)
    field = np.cos(2.0 * np.pi * 3.0 * x[None, :] / W) * np.ones((W, 1))
    k, power = psd_radial(field)
    dominant = k[np.argmax(power)]
    assert dominant == 3
    others = power[k != 3]
    assert others.max() < 1e-20 * max(power.max(), 1.0) + 1e-12


def test_psd_parseval_identity():
    rng = np.random.default_rng(4)
    field = rng.standard_normal((12, 16))
    k, power = psd_radial(field)
    bins = oracles.radial_bins_brute(12, 16)
    counts = np.bincount(bins.ravel())
    counts = counts[counts > 0]
    total = float((power * counts).sum())
    expected = field.size * field.var()
    assert abs(total - expected) <= 1e-6 * expected


def test_psd_matches_direct_dft():
    rng = np.random.default_rng(9)
    field = rng.standard_normal((6, 6))
    power_brute = oracles.dft_power_brute(field)
    bins = oracles.radial_bins_brute(6, 6)
    sums = np.bincount(bins.ravel(), weights=power_brute.ravel())
    counts = np.bincount(bins.ravel())
    expected = sums[counts > 0] / counts[counts > 0]
    k, power = psd_radial(field)
    assert np.allclose(power, expected, atol=1e-8)


def test_psd_rejects_tiny_fields():
    with pytest.raises(ParameterError):
        psd_radial(np.zeros((2, 8)))


# -- economic value -------------------------------------------------------------------

def _table_fields(hits, misses, fas, crs):
    """Forecast/truth pair realizing the given contingency counts."""
    f = np.concatenate([np.ones(hits), np.zeros(misses), np.ones(fas), np.zeros(crs)])
    t = np.concatenate([np.ones(hits), np.ones(misses), np.zeros(fas), np.zeros(crs)])
    return f, t


def test_economic_value_perfect_forecast():
    f, t = _table_fields(30, 0, 0, 70)
    result = economic_value([f], [t], 0.5, [0.1, 0.5, 0.9])
    assert np.allclose(result.values, 1.0, atol=1e-12)


def test_economic_value_no_skill_nonpositive():
    # F == H: value can never be positive in the cost-loss model
    f, t = _table_fields(15, 35, 21, 49)  # H = 0.3, F = 0.3
    result = economic_value([f], [t], 0.5, [0.1, 0.3, 0.5, 0.7, 0.9])
    assert np.all(result.values <= 1e-12)


def test_economic_value_hand_case():
    # H=0.8, F=0.1, s=0.3 at r=0.3: value 0.7 by direct evaluation
    f, t = _table_fields(240, 60, 70, 630)
    result = economic_value([f], [t], 0.5, [0.3])
    assert abs(result.values[0] - 0.7) < 1e-12
    brute = oracles.economic_value_brute(240, 60, 70, 630, [0.3])
    assert abs(result.values[0] - brute[0]) < 1e-15


def test_economic_value_any_member_rule():
    truth = np.array([1.0, 1.0, 0.0])
    members = np.array([[1.0, 0.0, 0.0],
                        [0.0, 0.0, 0.0]])  # any-member rule fires on pixel 0
    result = economic_value([members], [truth], 0.5, [0.5])
    assert (result.table.hits, result.table.misses) == (1, 1)
    assert result.decision_rule == "any-member-exceeds"


def test_economic_value_undefined_base_rates():
    f = np.zeros(10)
    t = np.zeros(10)
    result = economic_value([f], [t], 0.5, [0.5])
    assert np.isnan(result.values[0])
    f2 = np.ones(10)
    t2 = np.ones(10)
    result2 = economic_value([f2], [t2], 0.5, [0.5])
    assert np.isnan(result2.values[0])


def test_economic_value_ratio_validation():
    f, t = _table_fields(1, 1, 1, 1)
    with pytest.raises(ParameterError):
        economic_value([f], [t], 0.5, [0.0, 0.5])
    with pytest.raises(ParameterError):
        economic_value([f], [t], 0.5, [])


# -- RMSE / MAE ------------------------------------------------------------------------

def test_rmse_mae_trivial_cases():
    truth = np.random.default_rng(6).standard_normal((3, 1, 2, 2))
    same = rmse_mae(truth, truth)
    assert same.rmse == 0.0 and same.mae == 0.0
    offset = rmse_mae(truth + 1.0, truth)
    assert abs(offset.rmse - 1.0) < 1e-12
    assert abs(offset.mae - 1.0) < 1e-12


def test_rmse_mae_two_pixel_hand_case():
    forecast = np.array([[0.0, 2.0]])
    truth = np.zeros((1, 2))
    scores = rmse_mae(forecast, truth)
    assert abs(scores.rmse - np.sqrt(2.0)) < 1e-12
    assert abs(scores.mae - 1.0) < 1e-12


def test_rmse_mae_per_lead():
    forecast = np.zeros((2, 1, 2, 2))
    forecast[1] = 1.0
    truth = np.zeros_like(forecast)
    scores = rmse_mae(forecast, truth)
    assert np.allclose(scores.rmse_by_lead, [0.0, 1.0], atol=0)
    assert np.allclose(scores.mae_by_lead, [0.0, 1.0], atol=0)
    with pytest.raises(ShapeError):
        rmse_mae(forecast, truth[:1])


# -- oracle equivalence sweep -------------------------------------------------------------

def test_metrics_match_brute_force_on_random_cases():
    rng = np.random.default_rng(123)
    for case in range(200):
        H = int(rng.integers(2, 9))
        W = int(rng.integers(2, 9))
        M = int(rng.integers(1, 5))
        n_fields = int(rng.integers(1, 4))
        # half the cases use thresholded binary-ish fields for event scores
        fs = [np.round(rng.random((1, 1, H, W)), 2) for _ in range(n_fields)]
        ts = [np.round(rng.random((1, 1, H, W)), 2) for _ in range(n_fields)]
        threshold = float(rng.uniform(0.2, 0.8))
        window = int(rng.choice([1, 3, 5]))

        got_csi, got_table = csi(fs, ts, threshold)
        brute_counts = oracles.contingency_brute(fs, ts, threshold)
        assert (got_table.hits, got_table.misses, got_table.false_alarms,
                got_table.correct_rejections) == brute_counts
        assert got_csi == oracles.csi_brute(fs, ts, threshold)

        assert csi_neighborhood(fs, ts, threshold, window) == \
            oracles.csi_neighborhood_brute(fs, ts, threshold, window)

        got_fss = fss(fs, ts, threshold, window)
        assert abs(got_fss - oracles.fss_brute(fs, ts, threshold, window)) < 1e-12
        assert 0.0 <= got_fss <= 1.0

        members = rng.standard_normal((M, 1, 1, H, W))
        truth = rng.standard_normal((1, 1, H, W))
        got_field, got_mean = crps_ensemble(members, truth)
        brute_field, brute_mean = oracles.crps_brute(members, truth)
        assert np.allclose(got_field, brute_field, atol=1e-12)
        assert abs(got_mean - brute_mean) < 1e-12

        window_p = int(rng.integers(1, min(H, W) + 1))
        agg = str(rng.choice(["avg", "max"]))
        got_pool = pooled_crps(members, truth, window_p, agg)
        assert abs(got_pool - oracles.pooled_crps_brute(members, truth, window_p, agg)) < 1e-12

        got_scores = rmse_mae(members[0], truth)
        brute_rmse, brute_mae = oracles.rmse_mae_brute(members[0], truth)
        assert abs(got_scores.rmse - brute_rmse) < 1e-12
        assert abs(got_scores.mae - brute_mae) < 1e-12

        ratios = [0.2, 0.5, 0.8]
        got_econ = economic_value(fs, ts, threshold, ratios)
        h, m_, fa, cr = brute_counts
        brute_econ = oracles.economic_value_brute(h, m_, fa, cr, ratios)
        for g, b in zip(got_econ.values, brute_econ):
            if np.isnan(b):
                assert np.isnan(g)
            else:
                assert abs(g - b) < 1e-12
                assert g <= 1.0 + 1e-12
