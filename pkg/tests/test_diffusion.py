import numpy as np
import pytest

from dragedit.autodiff import Tensor
from dragedit.diffusion import (
    DdimSchedule,
    NoiseSchedule,
    TrainConfig,
    ddim_invert,
    ddim_invert_step,
    ddim_sample,
    ddim_step,
    make_ddim_schedule,
    make_linear_schedule,
    q_sample,
    train,
)
from dragedit.unet import ArchConfig, FeatureTap, TapState, UNet


# ---------------------------------------------------------------------------
# schedules


def test_linear_schedule_endpoints_and_monotonicity():
    s = make_linear_schedule()
    assert s.beta[0] == pytest.approx(1e-4)
    assert s.beta[-1] == pytest.approx(0.02)
    assert np.all(np.diff(s.beta) > 0)
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert s.alpha_bar[0] > 0.999


def test_alpha_bar_tail_matches_direct_product():
    s = make_linear_schedule()
    direct = np.prod(1.0 - np.linspace(1e-4, 0.02, 1000))
    assert s.alpha_bar[999] == pytest.approx(direct, rel=1e-12)
    assert s.alpha_bar[999] < 5e-2


@pytest.mark.parametrize("bad", [(0.0, 0.02), (0.02, 0.0001), (0.1, 1.0)])
def test_linear_schedule_rejects_bad_range(bad):
    with pytest.raises(ValueError):
        make_linear_schedule(1000, *bad)


def test_ddim_schedule_structure():
    d = make_ddim_schedule(1000, 50)
    assert d.tau[0] == 0
    assert len(d.tau) == 51
    assert np.all(np.diff(d.tau) > 0)
    assert d.tau[50] == 999
    assert d.tau[35] == 700


# ---------------------------------------------------------------------------
# q_sample


def _synthetic_schedule(alpha_bars: list[float]) -> NoiseSchedule:
    ab = np.asarray(alpha_bars, dtype=np.float64)
    return NoiseSchedule(len(ab), np.zeros_like(ab), np.zeros_like(ab), ab)


def test_q_sample_pure_signal_limit():
    sched = _synthetic_schedule([1.0])
    x0 = Tensor(np.full((1, 1, 2, 2), 0.7, dtype=np.float32))
    noise = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32))
    np.testing.assert_allclose(q_sample(x0, 0, noise, sched).data, 0.7)


def test_q_sample_pure_noise_limit():
    sched = _synthetic_schedule([0.0])
    x0 = Tensor(np.full((1, 1, 2, 2), 0.7, dtype=np.float32))
    noise = Tensor(np.full((1, 1, 2, 2), -0.3, dtype=np.float32))
    np.testing.assert_allclose(q_sample(x0, 0, noise, sched).data, -0.3)


def test_q_sample_zero_signal_scales_noise():
    sched = make_linear_schedule()
    rng = np.random.default_rng(0)
    noise = Tensor(rng.standard_normal((1, 1, 4, 4)).astype(np.float32))
    t = 400
    out = q_sample(Tensor(np.zeros((1, 1, 4, 4), dtype=np.float32)), t, noise, sched)
    np.testing.assert_allclose(out.data, np.sqrt(1 - sched.alpha_bar[t]) * noise.data,
                               rtol=1e-6)


def test_q_sample_range_check():
    sched = make_linear_schedule()
    x = Tensor(np.zeros((1, 1, 2, 2)))
    with pytest.raises(ValueError):
        q_sample(x, 1000, x, sched)


# ---------------------------------------------------------------------------
# ddim step algebra


def test_ddim_step_zero_eps_rescales():
    # x0_pred = x/sqrt(0.25) = 2x; next = sqrt(0.64)*2x = 1.6x
    sched = _synthetic_schedule([0.64, 0.25])
    ddim = DdimSchedule(1, np.array([0, 1]))
    x = Tensor(np.full((1, 1, 2, 2), 1.0, dtype=np.float32))
    out = ddim_step(x, Tensor(np.zeros_like(x.data)), 1, sched, ddim)
    np.testing.assert_allclose(out.data, 1.6, rtol=1e-6)


def test_ddim_step_exact_noise_recovers_x0():
    sched = make_linear_schedule()
    ddim = make_ddim_schedule(1000, 50)
    rng = np.random.default_rng(1)
    x0 = Tensor(rng.uniform(-1, 1, (1, 1, 4, 4)).astype(np.float32))
    noise = Tensor(rng.standard_normal((1, 1, 4, 4)).astype(np.float32))
    k = 20
    x_k = q_sample(x0, int(ddim.tau[k]), noise, sched)
    ab_k = sched.alpha_bar[ddim.tau[k]]
    x0_pred = (x_k.data - np.sqrt(1 - ab_k) * noise.data) / np.sqrt(ab_k)
    np.testing.assert_allclose(x0_pred, x0.data, atol=1e-6)


def test_ddim_step_degenerate_alpha_keeps_x():
    sched = _synthetic_schedule([0.5, 0.5])
    ddim = DdimSchedule(1, np.array([0, 1]))
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((1, 1, 3, 3)).astype(np.float32))
    eps = Tensor(rng.standard_normal((1, 1, 3, 3)).astype(np.float32))
    np.testing.assert_allclose(ddim_step(x, eps, 1, sched, ddim).data, x.data,
                               atol=1e-6)


def test_ddim_step_index_bounds():
    sched = make_linear_schedule()
    ddim = make_ddim_schedule(1000, 10)
    x = Tensor(np.zeros((1, 1, 2, 2)))
    for k in (0, 11):
        with pytest.raises(ValueError):
            ddim_step(x, x, k, sched, ddim)


# ---------------------------------------------------------------------------
# sampling / inversion round trips


class _ConstantModel:
    """eps(x, t) == c regardless of input: inversion is exactly invertible."""

    def __init__(self, config, c):
        self.config = config
        self.c = c

    def forward(self, x, t, taps=None):
        return Tensor(np.full(x.shape, self.c, dtype=np.float32))


def test_constant_model_round_trip_exact(tiny_arch, sched, tiny_ddim):
    model = _ConstantModel(tiny_arch, 0.25)
    rng = np.random.default_rng(3)
    x0 = Tensor(rng.uniform(-1, 1, (1, 1, 16, 16)).astype(np.float32))
    z = ddim_invert(model, x0, 6, sched, tiny_ddim)
    back = ddim_sample(model, z, 6, 0, sched, tiny_ddim)
    # constant predictor: the per-step algebra cancels exactly (up to f32 rounding)
    np.testing.assert_allclose(back.data, x0.data, atol=1e-5)


def test_inversion_distinguishes_images(tiny_model, sched, tiny_ddim):
    black = Tensor(np.full((1, 1, 16, 16), -1.0, dtype=np.float32))
    white = Tensor(np.full((1, 1, 16, 16), 1.0, dtype=np.float32))
    zb = ddim_invert(tiny_model, black, 7, sched, tiny_ddim)
    zw = ddim_invert(tiny_model, white, 7, sched, tiny_ddim)
    assert not np.allclose(zb.data, zw.data)


def test_sampling_deterministic(tiny_model, sched, tiny_ddim):
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((1, 1, 16, 16)).astype(np.float32))
    a = ddim_sample(tiny_model, x, tiny_ddim.k_steps, 0, sched, tiny_ddim)
    b = ddim_sample(tiny_model, x, tiny_ddim.k_steps, 0, sched, tiny_ddim)
    np.testing.assert_array_equal(a.data, b.data)


def test_sampling_noop_when_range_empty(tiny_model, sched, tiny_ddim):
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((1, 1, 16, 16)).astype(np.float32))
    out = ddim_sample(tiny_model, x, 4, 4, sched, tiny_ddim)
    np.testing.assert_array_equal(out.data, x.data)


def test_sampling_self_override_is_noop(tiny_model, sched, tiny_ddim):
    """Two-pass: capture the bottleneck per step, replay as overrides."""
    rng = np.random.default_rng(6)
    x = Tensor(rng.standard_normal((1, 1, 16, 16)).astype(np.float32))
    capture = {k: TapState.capture(FeatureTap.BOTTLENECK)
               for k in range(1, tiny_ddim.k_steps + 1)}
    base = ddim_sample(tiny_model, x, tiny_ddim.k_steps, 0, sched, tiny_ddim, capture)
    replay_taps = {k: TapState.override(FeatureTap.BOTTLENECK,
                                        capture[k].captured[FeatureTap.BOTTLENECK])
                   for k in capture}
    replay = ddim_sample(tiny_model, x, tiny_ddim.k_steps, 0, sched, tiny_ddim,
                         replay_taps)
    np.testing.assert_array_equal(base.data, replay.data)


def test_invert_step_round_trip_drift_is_model_variation(tiny_model, sched, tiny_ddim):
    # the invert/step pair cancels algebraically except for the change in the
    # noise prediction between the two evaluation points:
    #   back - x == c * (eps_fwd - eps_inv)
    # with c = sqrt(1-ab_prev) - sqrt(ab_prev (1-ab_k) / ab_k)
    rng = np.random.default_rng(7)
    x = Tensor(rng.uniform(-1, 1, (1, 1, 16, 16)).astype(np.float32))
    k = 5
    eps_inv = tiny_model.forward(x, int(tiny_ddim.tau[k - 1]))
    z = ddim_invert_step(tiny_model, x, k, sched, tiny_ddim)
    eps_fwd = tiny_model.forward(z, int(tiny_ddim.tau[k]))
    back = ddim_step(z, eps_fwd, k, sched, tiny_ddim)
    ab_k = sched.alpha_bar[tiny_ddim.tau[k]]
    ab_prev = sched.alpha_bar[tiny_ddim.tau[k - 1]]
    c = np.sqrt(1 - ab_prev) - np.sqrt(ab_prev * (1 - ab_k) / ab_k)
    np.testing.assert_allclose(back.data - x.data, c * (eps_fwd.data - eps_inv.data),
                               atol=1e-5)


# ---------------------------------------------------------------------------
# training


def test_training_deterministic(tiny_arch, sched):
    rng = np.random.default_rng(8)
    data = rng.uniform(-1, 1, (16, 1, 16, 16)).astype(np.float32)
    cfg = TrainConfig(steps=4, batch_size=4, lr=1e-3, seed=77)
    l1 = train(UNet.init(tiny_arch, seed=5), data, cfg, sched)
    l2 = train(UNet.init(tiny_arch, seed=5), data, cfg, sched)
    assert l1 == l2


def test_training_restores_inference_mode(tiny_arch, sched):
    rng = np.random.default_rng(9)
    data = rng.uniform(-1, 1, (8, 1, 16, 16)).astype(np.float32)
    model = UNet.init(tiny_arch, seed=5)
    train(model, data, TrainConfig(steps=2, batch_size=2, lr=1e-3, seed=1), sched)
    assert all(not p.requires_grad for p in model.parameters())


def test_untrained_loss_near_unity(sched):
    """MSE between unit noise and an uncorrelated prediction sits near 1."""
    model = UNet.init(ArchConfig(), seed=31)
    rng = np.random.default_rng(10)
    from dragedit.shapes import gen_dataset
    images, _ = gen_dataset(64, seed=3, size=32)
    losses = []
    for _ in range(32):
        idx = rng.integers(0, 64, size=2)
        t = int(rng.integers(0, sched.t_train))
        noise = Tensor(rng.standard_normal((2, 1, 32, 32)).astype(np.float32))
        x_t = q_sample(Tensor(images[idx]), t, noise, sched)
        eps = model.forward(x_t, t)
        losses.append(float(((eps.data - noise.data) ** 2).mean()))
    assert abs(float(np.mean(losses)) - 1.0) <= 0.2
