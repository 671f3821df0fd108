import dataclasses

import numpy as np
import pytest

from diffcast import (
    ConvArchitecture,
    ConvDenoiser,
    GaussianOracleDenoiser,
    LatentState,
    PrecisionQueue,
    SamplerConfig,
    cosine_schedule,
    guidance_field,
    inverse_precision,
    linear_schedule,
    monte_carlo_precision,
    normalize_weights,
    sample_constant_guidance,
    sample_precision_weighted,
)
from diffcast.errors import DivergenceError, ParameterError, ShapeError, StateError
from diffcast.sampler import precision_weighted_step, sample_batch
from diffcast.schedule import NoiseSchedule


def _one_step_sched():
    # alpha = alpha_bar = 0.64: sqrt terms come out 0.8 and 0.6
    return NoiseSchedule(betas=np.array([0.36]), alphas=np.array([0.64]),
                         alpha_bars=np.array([0.64]))


# -- elementary ops -----------------------------------------------------------

def test_guidance_field_cases():
    p = np.full((1, 1, 2, 2), 1.5)
    g = np.ones((1, 1, 2, 2))
    assert np.array_equal(guidance_field(p, p), np.zeros_like(p))
    assert np.array_equal(guidance_field(p, np.zeros_like(p)), p)
    assert np.allclose(guidance_field(p, g), 0.5, atol=0)
    with pytest.raises(ShapeError):
        guidance_field(p, np.ones((1, 1, 3, 3)))


def test_queue_fifo_eviction_and_bound():
    q = PrecisionQueue(capacity=3)
    for v in range(5):
        q.push(np.full((1, 1, 1, 1), float(v)))
        assert len(q) <= 3
    stacked = q.stacked()
    assert np.array_equal(stacked.ravel(), [2.0, 3.0, 4.0])  # oldest evicted first


def test_queue_shape_guard_and_capacity():
    q = PrecisionQueue(capacity=2)
    q.push(np.zeros((1, 1, 2, 2)))
    with pytest.raises(ShapeError):
        q.push(np.zeros((1, 1, 3, 3)))
    with pytest.raises(ParameterError):
        PrecisionQueue(capacity=0)


def test_inverse_precision_cases():
    q = PrecisionQueue(capacity=4)
    with pytest.raises(StateError):
        inverse_precision(q)
    q.push(np.full((1, 1, 1, 2), 5.0))
    assert np.array_equal(inverse_precision(q), np.zeros((1, 1, 1, 2)))
    q.push(np.array([[[[5.0, 7.0]]]]))
    # values {5,5} -> 0 and {5,7} -> population variance 1
    assert np.array_equal(inverse_precision(q), np.array([[[[0.0, 1.0]]]]))


def test_inverse_precision_identical_entries():
    q = PrecisionQueue(capacity=3)
    for _ in range(3):
        q.push(np.full((1, 1, 2, 2), 1.23))
    assert np.array_equal(inverse_precision(q), np.zeros((1, 1, 2, 2)))


def test_normalize_weights_constant_field():
    cfg = SamplerConfig(steps=1, lam=2.0)
    assert np.array_equal(normalize_weights(np.full((1, 1, 2, 2), 3.3), cfg),
                          np.ones((1, 1, 2, 2)))


def test_normalize_weights_lambda_zero():
    cfg = SamplerConfig(steps=1, lam=0.0)
    U = np.arange(4.0).reshape(1, 1, 2, 2)
    assert np.array_equal(normalize_weights(U, cfg), np.ones_like(U))


def test_normalize_weights_two_point_hand_case():
    cfg = SamplerConfig(steps=1, lam=2.0)
    U = np.array([0.0, 1.0])
    # standardized to [-1, 1], clipped to [0, 1], scaled: [1, 3]
    assert np.array_equal(normalize_weights(U, cfg), np.array([1.0, 3.0]))


# -- single reverse step, hand-traced -----------------------------------------

def test_precision_step_hand_trace(scripted_denoiser_cls):
    sched = _one_step_sched()
    context = np.full((1, 1, 2, 2), 9.0)
    eps_cond = np.zeros((1, 1, 2, 2))
    eps_free = np.full((1, 1, 2, 2), 0.8)
    model = scripted_denoiser_cls(context, eps_cond, eps_free)

    # P = (1 - 0.6*0) / 0.8 = 1.25;  G = (1 - 0.6*0.8) / 0.8 = 0.65
    # pushed estimate equals G here; preloaded entry differs at one coordinate
    # by 1, so U = [0, 0, 0, 0.25] -> standardized [-0.577 x3, 1.732]
    # -> clipped [0, 0, 0, 1] -> weights [1, 1, 1, 3]
    queue = PrecisionQueue(capacity=2)
    queue.push(np.array([[[[0.65, 0.65], [0.65, 1.65]]]]))
    cfg = SamplerConfig(steps=1, lam=2.0, queue_capacity=2)
    state = LatentState(data=np.ones((1, 1, 2, 2)), step=1)

    new_state, weights, variance = precision_weighted_step(
        state, context, model, queue, sched, cfg, np.random.default_rng(0))

    assert np.allclose(variance, [[[[0.0, 0.0], [0.0, 0.25]]]], atol=1e-15)
    assert np.allclose(weights, [[[[1.0, 1.0], [1.0, 3.0]]]], atol=1e-12)
    assert np.allclose(new_state.data, [[[[1.25, 1.25], [1.25, 2.45]]]], atol=1e-12)
    assert new_state.step == 0


def test_precision_step_lambda_zero_is_pure_conditional(scripted_denoiser_cls):
    sched = _one_step_sched()
    context = np.full((1, 1, 2, 2), 9.0)
    model = scripted_denoiser_cls(context, np.zeros((1, 1, 2, 2)),
                                  np.full((1, 1, 2, 2), 0.8))
    queue = PrecisionQueue(capacity=2)
    queue.push(np.array([[[[0.65, 0.65], [0.65, 1.65]]]]))
    cfg = SamplerConfig(steps=1, lam=0.0, queue_capacity=2)
    state = LatentState(data=np.ones((1, 1, 2, 2)), step=1)
    new_state, weights, _ = precision_weighted_step(
        state, context, model, queue, sched, cfg, np.random.default_rng(0))
    assert np.array_equal(weights, np.ones((1, 1, 2, 2)))
    assert np.allclose(new_state.data, 1.25, atol=1e-12)  # P exactly


def test_precision_step_equal_branches_ignores_weights(scripted_denoiser_cls):
    sched = _one_step_sched()
    context = np.full((1, 1, 2, 2), 9.0)
    eps = np.full((1, 1, 2, 2), 0.3)
    model = scripted_denoiser_cls(context, eps, eps)
    queue = PrecisionQueue(capacity=2)
    queue.push(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))  # forces varied weights
    cfg = SamplerConfig(steps=1, lam=5.0, queue_capacity=2)
    state = LatentState(data=np.ones((1, 1, 2, 2)), step=1)
    new_state, _, _ = precision_weighted_step(
        state, context, model, queue, sched, cfg, np.random.default_rng(0))
    expected = (1.0 - (0.36 / 0.6) * 0.3) / 0.8
    assert np.allclose(new_state.data, expected, atol=1e-12)


def test_step_requires_remaining_steps(scripted_denoiser_cls):
    sched = _one_step_sched()
    model = scripted_denoiser_cls(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)),
                                  np.zeros((1, 1, 2, 2)))
    state = LatentState(data=np.ones((1, 1, 2, 2)), step=0)
    with pytest.raises(ParameterError):
        precision_weighted_step(state, np.zeros((1, 1, 2, 2)), model,
                                PrecisionQueue(2), sched,
                                SamplerConfig(steps=1), np.random.default_rng(0))


# -- full trajectories --------------------------------------------------------

def _small_conv_setup(T=30, grid=16):
    sched = cosine_schedule(T)
    arch = ConvArchitecture(target_frames=2, context_frames=2, channels=1,
                            height=grid, width=grid, hidden=4, total_steps=T)
    model = ConvDenoiser.initialize(arch, np.random.default_rng(12))
    ctx = np.random.default_rng(34).standard_normal(arch.context_shape)
    return sched, arch, model, ctx


def test_same_seed_bit_identical():
    sched, arch, model, ctx = _small_conv_setup()
    cfg = SamplerConfig(steps=sched.T, lam=2.0, queue_capacity=4, seed=77)
    a = sample_precision_weighted(ctx, model, sched, cfg, arch.target_shape)
    b = sample_precision_weighted(ctx, model, sched, cfg, arch.target_shape)
    assert np.array_equal(a.forecast, b.forecast)
    assert all(np.array_equal(x, y) for x, y in zip(a.weight_history, b.weight_history))


@pytest.mark.parametrize("stochastic", [False, True])
def test_reduction_law_three_way(stochastic):
    sched, arch, model, ctx = _small_conv_setup()
    shape = arch.target_shape
    base = SamplerConfig(steps=sched.T, lam=2.0, queue_capacity=4,
                         stochastic_step=stochastic, seed=5)

    lam0 = sample_precision_weighted(
        ctx, model, sched, dataclasses.replace(base, lam=0.0), shape)
    scale1 = sample_constant_guidance(ctx, model, sched, 1.0, base, shape)
    cap1 = sample_precision_weighted(
        ctx, model, sched, dataclasses.replace(base, queue_capacity=1, window_k=None), shape)

    assert np.array_equal(lam0.forecast, scale1.forecast)
    assert np.array_equal(lam0.forecast, cap1.forecast)


def test_constant_guidance_extremes(scripted_denoiser_cls):
    # scale 0 must follow the unconditional branch only
    sched = _one_step_sched()
    context = np.full((1, 1, 2, 2), 9.0)
    eps_cond = np.zeros((1, 1, 2, 2))
    eps_free = np.full((1, 1, 2, 2), 0.8)
    model = scripted_denoiser_cls(context, eps_cond, eps_free)
    cfg = SamplerConfig(steps=1, seed=3)
    res = sample_constant_guidance(context, model, sched, 0.0, cfg, (1, 1, 2, 2))
    rng = np.random.default_rng(3)
    x_T = rng.standard_normal((1, 1, 2, 2))
    expected = (x_T - (0.36 / 0.6) * 0.8) / 0.8
    assert np.allclose(res.forecast, expected, atol=1e-12)


def test_weight_fields_bounded_and_recorded():
    sched, arch, model, ctx = _small_conv_setup(T=40)
    lam = 2.0
    cfg = SamplerConfig(steps=sched.T, lam=lam, queue_capacity=4, seed=9)
    res = sample_precision_weighted(ctx, model, sched, cfg, arch.target_shape)
    assert len(res.weight_history) == sched.T
    for w in res.weight_history:
        assert w.min() >= 1.0
        assert w.max() <= 1.0 + lam
    assert res.final_inverse_precision is not None
    assert res.final_inverse_precision.shape == arch.target_shape


def test_oracle_reverse_process_statistics():
    # with unit prior variance every marginal is standard normal, so the
    # stochastic sampler's output moments must match (0, 1)
    sched = cosine_schedule(200)
    model = GaussianOracleDenoiser(sched, prior_var=1.0, uncond_mean=0.0)
    shape = (4, 1, 64, 64)
    ctx = np.zeros((2, 1, 64, 64))
    cfg = SamplerConfig(steps=200, lam=0.0, queue_capacity=4,
                        stochastic_step=True, seed=21)
    x = sample_precision_weighted(ctx, model, sched, cfg, shape).forecast
    n = x.size
    assert n >= 10_000
    assert abs(x.mean()) <= 3.0 / np.sqrt(n)
    assert abs(x.var() - 1.0) <= 3.0 * np.sqrt(2.0 / n)

    cfg_det = dataclasses.replace(cfg, stochastic_step=False)
    x_det = sample_precision_weighted(ctx, model, sched, cfg_det, shape).forecast
    assert x_det.var() < 1.0
    assert abs(x_det.mean()) <= 3.0 * max(x_det.std(), 1e-12) / np.sqrt(n)


def test_monotone_guidance_effect(scripted_denoiser_cls):
    # fixed positive guidance: raising lambda never lowers any output value
    sched = linear_schedule(2, 0.36, 0.36)
    context = np.full((1, 1, 2, 2), 9.0)
    eps_cond = np.zeros((1, 1, 2, 2))
    eps_free = np.full((1, 1, 2, 2), 0.8)  # P - G > 0 at every step
    model = scripted_denoiser_cls(context, eps_cond, eps_free)
    shape = (1, 1, 2, 2)
    previous = None
    for lam in (0.0, 1.0, 2.0, 4.0):
        cfg = SamplerConfig(steps=2, lam=lam, queue_capacity=2, seed=8)
        out = sample_precision_weighted(context, model, sched, cfg, shape).forecast
        if previous is not None:
            assert np.all(out >= previous - 1e-12)
        previous = out


def test_divergence_detection(scripted_denoiser_cls):
    sched = _one_step_sched()
    context = np.zeros((1, 1, 2, 2))
    bad = np.full((1, 1, 2, 2), np.nan)
    model = scripted_denoiser_cls(context, bad, bad)
    cfg = SamplerConfig(steps=1, seed=0)
    with pytest.raises(DivergenceError) as excinfo:
        sample_precision_weighted(context, model, sched, cfg, (1, 1, 2, 2))
    assert excinfo.value.step == 1


def test_shape_validation_before_sampling():
    sched, arch, model, ctx = _small_conv_setup()
    cfg = SamplerConfig(steps=sched.T, seed=0)
    with pytest.raises(ShapeError):
        sample_precision_weighted(ctx, model, sched, cfg, (2, 1, 8, 8))
    with pytest.raises(ParameterError):
        sample_precision_weighted(ctx, model, sched,
                                  dataclasses.replace(cfg, steps=5), arch.target_shape)


def test_freeze_uncond_noise_changes_trajectory():
    sched, arch, model, ctx = _small_conv_setup(T=10)
    base = SamplerConfig(steps=sched.T, lam=2.0, seed=4)
    frozen = dataclasses.replace(base, freeze_uncond_noise=True)
    a = sample_precision_weighted(ctx, model, sched, base, arch.target_shape)
    b = sample_precision_weighted(ctx, model, sched, frozen, arch.target_shape)
    b2 = sample_precision_weighted(ctx, model, sched, frozen, arch.target_shape)
    assert not np.array_equal(a.forecast, b.forecast)
    assert np.array_equal(b.forecast, b2.forecast)


# -- Monte-Carlo precision baseline --------------------------------------------

class _SelfCancelling:
    """Noise prediction x_t/sqrt(1-a_bar): the implied clean field is zero."""

    def __init__(self, sched):
        self.sched = sched

    def predict(self, x_t, cond=None, t=0, rng=None):
        return x_t / np.sqrt(1.0 - self.sched.alpha_bars[t])


def test_mc_precision_zero_for_prior_independent_forecasts():
    sched = _one_step_sched()
    model = _SelfCancelling(sched)
    cfg = SamplerConfig(steps=1, lam=0.0, seed=13)
    ctx = np.zeros((1, 1, 2, 2))
    field = monte_carlo_precision(ctx, model, sched, cfg, members=3, shape=(1, 1, 2, 2))
    assert np.allclose(field, 0.0, atol=1e-20)


def test_mc_precision_matches_explicit_member_variance():
    sched = cosine_schedule(15)
    model = GaussianOracleDenoiser(sched, prior_var=1.0, uncond_mean=0.0)
    cfg = SamplerConfig(steps=15, lam=0.0, seed=40)
    ctx = np.zeros((1, 1, 4, 4))
    shape = (2, 1, 4, 4)
    field = monte_carlo_precision(ctx, model, sched, cfg, members=3, shape=shape)
    members = [
        sample_precision_weighted(ctx, model, sched,
                                  dataclasses.replace(cfg, seed=cfg.seed + i),
                                  shape, record_weights=False).forecast
        for i in range(3)
    ]
    assert np.array_equal(field, np.stack(members).var(axis=0))
    again = monte_carlo_precision(ctx, model, sched, cfg, members=3, shape=shape)
    assert np.array_equal(field, again)


def test_mc_precision_needs_two_members():
    sched = _one_step_sched()
    model = _SelfCancelling(sched)
    with pytest.raises(ParameterError):
        monte_carlo_precision(np.zeros((1, 1, 2, 2)), model, sched,
                              SamplerConfig(steps=1), 1, (1, 1, 2, 2))


# -- batched engine ------------------------------------------------------------

def test_sample_batch_matches_sequential_oracle_bitwise():
    sched = cosine_schedule(25)
    model = GaussianOracleDenoiser(sched, prior_var=1.0, uncond_mean=0.0)
    ctx = np.zeros((3, 2, 1, 4, 4))
    shape = (2, 1, 4, 4)
    cfg = SamplerConfig(steps=25, lam=2.0, queue_capacity=4, stochastic_step=True, seed=0)
    seeds = [11, 12, 13]
    batch, final_u, _ = sample_batch(ctx, model, sched, cfg, shape, seeds)
    for i, seed in enumerate(seeds):
        ref = sample_precision_weighted(ctx[i], model, sched,
                                        dataclasses.replace(cfg, seed=seed), shape)
        assert np.array_equal(batch[i], ref.forecast)
        assert np.array_equal(final_u[i], ref.final_inverse_precision)


def test_sample_batch_close_to_sequential_conv():
    sched, arch, model, _ = _small_conv_setup(T=12, grid=8)
    rng = np.random.default_rng(1)
    ctx = rng.standard_normal((2,) + arch.context_shape)
    cfg = SamplerConfig(steps=sched.T, lam=2.0, queue_capacity=3, seed=0)
    batch, _, _ = sample_batch(ctx, model, sched, cfg, arch.target_shape, [5, 6])
    for i, seed in enumerate((5, 6)):
        ref = sample_precision_weighted(ctx[i], model, sched,
                                        dataclasses.replace(cfg, seed=seed),
                                        arch.target_shape)
        scale = max(np.abs(ref.forecast).max(), 1.0)
        assert np.abs(batch[i] - ref.forecast).max() / scale < 1e-12


def test_sample_batch_reduction_identity_float32():
    sched, arch, model, _ = _small_conv_setup(T=12, grid=8)
    model32 = ConvDenoiser(arch, model.weights, dtype=np.float32)
    rng = np.random.default_rng(2)
    ctx = rng.standard_normal((2,) + arch.context_shape)
    cfg = SamplerConfig(steps=sched.T, lam=0.0, queue_capacity=4, seed=0)
    a, _, _ = sample_batch(ctx, model32, sched, cfg, arch.target_shape, [1, 2],
                           mode="precision", dtype=np.float32)
    b, _, _ = sample_batch(ctx, model32, sched, cfg, arch.target_shape, [1, 2],
                           mode="constant", guidance_scale=1.0, dtype=np.float32)
    c, _, _ = sample_batch(ctx, model32, sched,
                           dataclasses.replace(cfg, lam=2.0, queue_capacity=1),
                           arch.target_shape, [1, 2], dtype=np.float32)
    assert np.array_equal(a, b)
    assert np.array_equal(a, c)


def test_sampler_config_validation():
    with pytest.raises(ParameterError):
        SamplerConfig(steps=0).validate()
    with pytest.raises(ParameterError):
        SamplerConfig(lam=-1.0).validate()
    with pytest.raises(ParameterError):
        SamplerConfig(queue_capacity=0).validate()
    with pytest.raises(ParameterError):
        SamplerConfig(queue_capacity=2, window_k=3).validate()
    with pytest.raises(ParameterError):
        SamplerConfig(clip_lo=1.0, clip_hi=0.5).validate()
