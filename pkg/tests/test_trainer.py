"""Companding, sampling, optimizer and fit-loop behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specfield.brdf_io import SpectralBrdfTable, SyntheticSpec, synth_spectral
from specfield.coords import RusinCoords, WavelengthAxis
from specfield.decoder import decode
from specfield.field import project
from specfield.fusion import FusionMode, fuse_aff, fuse_hadamard
from specfield.trainer import (
    Adam,
    FitResult,
    MaterialData,
    SampleBatch,
    SstaModel,
    TrainConfig,
    concat_batches,
    fit,
    init_model,
    load_model,
    loss_spec,
    loss_tv,
    model_table_psnr,
    mulaw,
    mulaw_inv,
    sample_panchromatic,
    sample_spectral,
    save_model,
    schedule_lr,
    train_step,
)

AXIS = WavelengthAxis(400.0, 1000.0, 5)


def tiny_cfg(**kw):
    base = dict(channels=4, batch_size=64, epochs=1, samples_per_material=128,
                learning_rate=1e-3, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def tiny_table(seed=0, dims=(6, 5, 8)):
    rng = np.random.default_rng(seed)
    data = rng.uniform(0.0, 1.0, size=(AXIS.count,) + dims).astype(np.float32)
    return SpectralBrdfTable(data, AXIS, name="tiny")


# ---------------------------------------------------------------------------
# companding

def test_mulaw_endpoints_exact():
    assert mulaw(0.0) == 0.0
    assert mulaw(1.0, 255.0) == 1.0  # log1p(255)/log1p(255)


def test_mulaw_round_trip_wide_range():
    r = np.concatenate([np.linspace(0, 100, 2001),
                        np.logspace(-8, 2, 500)])
    back = mulaw_inv(mulaw(r))
    assert np.max(np.abs(back - r)) < 1e-12 * max(1.0, r.max())
    np.testing.assert_allclose(back, r, rtol=1e-12, atol=1e-12)


@given(r=st.floats(0.0, 1e3), mu=st.floats(1.0, 1e4))
@settings(max_examples=200, deadline=None)
def test_mulaw_round_trip_property(r, mu):
    assert mulaw_inv(mulaw(r, mu), mu) == pytest.approx(r, rel=1e-10, abs=1e-10)


def test_mulaw_monotone_and_compressive():
    r = np.linspace(0.0, 2.0, 100)
    y = mulaw(r)
    assert np.all(np.diff(y) > 0)
    # compresses highlights: slope at 0 far exceeds slope at 1
    assert (y[1] - y[0]) > 10 * (y[-1] - y[-2])


# ---------------------------------------------------------------------------
# config

def test_config_json_round_trip():
    cfg = TrainConfig(channels=16, fusion=FusionMode.HADAMARD, epochs=3)
    back = TrainConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.fusion is FusionMode.HADAMARD


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_json('{"channels": 8, "typo_key": 1}')


def test_config_validates_values():
    with pytest.raises(ValueError):
        TrainConfig(channels=0)
    with pytest.raises(ValueError):
        TrainConfig(mu=0.0)
    with pytest.raises(ValueError):
        TrainConfig(halve_every=0)


def test_schedule_lr_halves_every_four():
    assert schedule_lr(1e-4, 0, 4) == 1e-4
    assert schedule_lr(1e-4, 3, 4) == 1e-4
    assert schedule_lr(1e-4, 4, 4) == 5e-5
    assert schedule_lr(1e-4, 8, 4) == 2.5e-5
    assert schedule_lr(1e-4, 9, 2) == 1e-4 * 0.5**4


# ---------------------------------------------------------------------------
# sampling

def test_sample_spectral_targets_match_table():
    t = tiny_table(1)
    b = sample_spectral(t, 500, seed=3)
    assert len(b) == 500
    assert b.spectral.all()
    # recover bin indices from the returned angles and check targets
    d1, d2, d3 = t.dims
    i = np.rint(np.sqrt(b.theta_h / (np.pi / 2)) * d1 - 0.5).astype(int)
    j = np.rint(b.theta_d / (np.pi / 2) * d2 - 0.5).astype(int)
    l = np.rint(b.phi_d / np.pi * d3 - 0.5).astype(int)
    k = np.rint((b.lam - AXIS.lam_min) / AXIS.span * AXIS.count - 0.5).astype(int)
    expect = mulaw(t.table[k, i, j, l].astype(np.float64))
    np.testing.assert_allclose(b.target, expect, atol=1e-12)


def test_sample_spectral_deterministic():
    t = tiny_table(2)
    a = sample_spectral(t, 100, seed=7)
    b = sample_spectral(t, 100, seed=7)
    np.testing.assert_array_equal(a.theta_h, b.theta_h)
    np.testing.assert_array_equal(a.target, b.target)
    c = sample_spectral(t, 100, seed=8)
    assert not np.array_equal(a.theta_h, c.theta_h)


def test_sample_spectral_bin_subset():
    t = tiny_table(3)
    total = t.table.size
    rng = np.random.default_rng(0)
    subset = rng.choice(total, size=total // 100, replace=False)
    b = sample_spectral(t, 400, seed=1, bin_subset=subset)
    # every drawn bin must come from the subset
    d1, d2, d3 = t.dims
    i = np.rint(np.sqrt(b.theta_h / (np.pi / 2)) * d1 - 0.5).astype(int)
    j = np.rint(b.theta_d / (np.pi / 2) * d2 - 0.5).astype(int)
    l = np.rint(b.phi_d / np.pi * d3 - 0.5).astype(int)
    k = np.rint((b.lam - AXIS.lam_min) / AXIS.span * AXIS.count - 0.5).astype(int)
    flat = np.ravel_multi_index((k, i, j, l), t.table.shape)
    assert np.isin(flat, subset).all()


def test_sample_panchromatic_respects_mask():
    rng = np.random.default_rng(4)
    gray = rng.uniform(0, 1, size=(5, 4, 6))
    valid = rng.random((5, 4, 6)) > 0.5
    b = sample_panchromatic(gray, valid, 300, seed=2)
    assert not b.spectral.any()
    assert np.isnan(b.lam).all()
    i = np.rint(np.sqrt(b.theta_h / (np.pi / 2)) * 5 - 0.5).astype(int)
    j = np.rint(b.theta_d / (np.pi / 2) * 4 - 0.5).astype(int)
    l = np.rint(b.phi_d / np.pi * 6 - 0.5).astype(int)
    assert valid[i, j, l].all()
    np.testing.assert_allclose(b.target, mulaw(gray[i, j, l]), atol=1e-12)


def test_sample_batch_validation():
    with pytest.raises(ValueError, match="finite"):
        SampleBatch(
            theta_h=np.zeros(2), theta_d=np.zeros(2), phi_d=np.zeros(2),
            lam=np.full(2, 500.0), target=np.array([0.1, np.nan]),
            spectral=np.ones(2, bool),
        )
    with pytest.raises(ValueError, match="wavelength"):
        SampleBatch(
            theta_h=np.zeros(2), theta_d=np.zeros(2), phi_d=np.zeros(2),
            lam=np.full(2, np.nan), target=np.zeros(2),
            spectral=np.ones(2, bool),
        )


def test_concat_batches():
    t = tiny_table(5)
    a = sample_spectral(t, 10, seed=0)
    rng = np.random.default_rng(5)
    g = rng.uniform(0, 1, size=t.dims)
    b = sample_panchromatic(g, np.ones(t.dims, bool), 7, seed=1)
    c = concat_batches(a, b)
    assert len(c) == 17
    assert c.spectral.sum() == 10


# ---------------------------------------------------------------------------
# losses and optimizer

def test_loss_spec_is_mse():
    rng = np.random.default_rng(6)
    p, t = rng.normal(size=50), rng.normal(size=50)
    assert loss_spec(p, t) == pytest.approx(np.mean((p - t) ** 2), rel=1e-13)


def test_loss_tv_matches_definition():
    from specfield.field import init_triplanes

    tp = init_triplanes(3, (4, 5, 6), AXIS, seed=1)
    total = 0.0
    for p in (*tp.angle_planes, *tp.wave_planes):
        total += np.mean(np.diff(p, axis=1) ** 2) + np.mean(np.diff(p, axis=2) ** 2)
    assert loss_tv(tp) == pytest.approx(total, rel=1e-12)


def adam_reference(params, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    p = {k: v.copy() for k, v in params.items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(x) for k, x in params.items()}
    for t in range(1, steps + 1):
        g = grad_fn(p)
        for k in p:
            m[k] = b1 * m[k] + (1 - b1) * g[k]
            v[k] = b2 * v[k] + (1 - b2) * g[k] ** 2
            mh = m[k] / (1 - b1**t)
            vh = v[k] / (1 - b2**t)
            p[k] -= lr * mh / (np.sqrt(vh) + eps)
    return p


def test_adam_matches_reference():
    rng = np.random.default_rng(7)
    target = rng.normal(size=5)
    params = {"x": rng.normal(size=5)}

    def grad_fn(p):
        return {"x": 2.0 * (p["x"] - target)}

    ref = adam_reference(params, grad_fn, lr=0.05, steps=20)
    opt = Adam()
    live = {"x": params["x"].copy()}
    for _ in range(20):
        opt.step(live, grad_fn(live), lr=0.05)
    np.testing.assert_allclose(live["x"], ref["x"], rtol=1e-12, atol=1e-14)


def test_adam_first_step_is_signed_lr():
    # with bias correction the first update is lr * g / (|g| + eps)
    opt = Adam()
    p = {"x": np.array([1.0])}
    opt.step(p, {"x": np.array([4.0])}, lr=0.1)
    assert p["x"][0] == pytest.approx(1.0 - 0.1 * 4.0 / (4.0 + 1e-8), rel=1e-12)


# ---------------------------------------------------------------------------
# model evaluation consistency

def test_model_evaluate_matches_module_chain():
    cfg = tiny_cfg()
    t = tiny_table(8)
    model = init_model(cfg, t.dims, AXIS)
    rng = np.random.default_rng(9)
    for _ in range(10):
        c = RusinCoords(rng.uniform(0, np.pi / 2), rng.uniform(0, np.pi / 2),
                        rng.uniform(0, np.pi))
        lam = rng.uniform(400, 1000)
        bundle = project(model.planes, c, lam)
        fused, _ = fuse_aff(model.aff, bundle)
        expect = decode(model.mlp, fused)
        got = model.evaluate(c.theta_h, c.theta_d, c.phi_d, lam)
        assert got == pytest.approx(expect, abs=1e-12)


def test_model_evaluate_hadamard_mode():
    cfg = tiny_cfg(fusion=FusionMode.HADAMARD)
    t = tiny_table(10)
    model = init_model(cfg, t.dims, AXIS)
    assert model.aff is None
    c = RusinCoords(0.3, 0.4, 1.0)
    bundle = project(model.planes, c, 650.0)
    expect = decode(model.mlp, fuse_hadamard(bundle))
    got = model.evaluate(0.3, 0.4, 1.0, 650.0)
    assert got == pytest.approx(expect, abs=1e-12)


def test_reflectance_clamps_negative_output():
    cfg = tiny_cfg()
    model = init_model(cfg, (4, 4, 4), AXIS)
    model.mlp.b3[:] = -5.0  # force negative companded output
    r = model.reflectance(0.2, 0.2, 1.0, 600.0)
    assert r == 0.0


# ---------------------------------------------------------------------------
# train_step

def test_train_step_reports_consistent_losses():
    cfg = tiny_cfg()
    t = tiny_table(11)
    model = init_model(cfg, t.dims, AXIS)
    batch = sample_spectral(t, 64, seed=0)
    pred_before = model.evaluate(batch.theta_h, batch.theta_d, batch.phi_d,
                                 batch.lam)
    expect_spec = loss_spec(pred_before, batch.target)
    expect_tv = loss_tv(model.planes)
    report = train_step(model, batch, cfg, Adam(), lr=0.0)
    assert report.spec == pytest.approx(expect_spec, rel=1e-10)
    assert report.tv == pytest.approx(expect_tv, rel=1e-10)
    assert report.total == pytest.approx(
        expect_spec + cfg.tv_weight * expect_tv, rel=1e-10)
    assert report.n_spectral == 64 and report.n_rgb == 0


def test_train_step_zero_lr_keeps_params():
    cfg = tiny_cfg()
    t = tiny_table(12)
    model = init_model(cfg, t.dims, AXIS)
    before = {k: v.copy() for k, v in model.named_params().items()}
    train_step(model, sample_spectral(t, 32, seed=1), cfg, Adam(), lr=0.0)
    after = model.named_params()
    for k in before:
        np.testing.assert_array_equal(before[k], after[k])


def test_train_step_mixed_batch():
    cfg = tiny_cfg()
    t = tiny_table(13)
    gray = t.table.mean(axis=0).astype(np.float64)
    batch = concat_batches(
        sample_spectral(t, 40, seed=2),
        sample_panchromatic(gray, np.ones(t.dims, bool), 24, seed=3),
    )
    model = init_model(cfg, t.dims, AXIS)
    report = train_step(model, batch, cfg, Adam())
    assert report.n_spectral == 40 and report.n_rgb == 24
    assert np.isfinite(report.total)
    assert report.rgb > 0.0


def test_train_step_divergence_guard():
    cfg = tiny_cfg()
    t = tiny_table(14)
    model = init_model(cfg, t.dims, AXIS)
    model.planes.angle_planes[0][:] = np.nan
    with pytest.raises(RuntimeError, match="diverged"):
        train_step(model, sample_spectral(t, 16, seed=0), cfg, Adam())


def test_training_reduces_loss():
    cfg = tiny_cfg(channels=4, learning_rate=5e-3)
    spec = SyntheticSpec(diffuse_peak=0.4, spec_strength=0.1, spec_exponent=20.0)
    t = synth_spectral(spec, AXIS, dims=(8, 6, 10))
    model = init_model(cfg, t.dims, AXIS)
    opt = Adam()
    first = train_step(model, sample_spectral(t, 256, seed=0), cfg, opt).spec
    for s in range(60):
        last = train_step(model, sample_spectral(t, 256, seed=s + 1), cfg, opt).spec
    assert last < first * 0.5


# ---------------------------------------------------------------------------
# fit loop

def test_fit_runs_and_records_history():
    cfg = tiny_cfg(epochs=2, samples_per_material=128, batch_size=64)
    t = tiny_table(15)
    result = fit(t, cfg)
    assert len(result.models) == 1
    assert len(result.history) == 4  # 2 epochs x 2 steps
    assert result.history[0]["lr"] == cfg.learning_rate


def test_fit_bit_reproducible():
    cfg = tiny_cfg(epochs=1, samples_per_material=128, batch_size=64, seed=5)
    t = tiny_table(16)
    a = fit(t, cfg).models[0]
    b = fit(t, cfg).models[0]
    for k, v in a.named_params().items():
        np.testing.assert_array_equal(v, b.named_params()[k])
    c = fit(t, tiny_cfg(epochs=1, samples_per_material=128, batch_size=64,
                        seed=6)).models[0]
    assert any(not np.array_equal(v, c.named_params()[k])
               for k, v in a.named_params().items())


def test_fit_shares_heads_across_materials():
    cfg = tiny_cfg(epochs=1, samples_per_material=64, batch_size=32)
    t1, t2 = tiny_table(17), tiny_table(18)
    result = fit([MaterialData(spectral=t1), MaterialData(spectral=t2)], cfg)
    m1, m2 = result.models
    assert m1.aff is m2.aff and m1.mlp is m2.mlp
    assert m1.planes is not m2.planes
    assert not np.array_equal(m1.planes.angle_planes[0], m2.planes.angle_planes[0])


def test_fit_callback_stops_early():
    cfg = tiny_cfg(epochs=10, samples_per_material=64, batch_size=64)
    t = tiny_table(19)
    seen = []

    def cb(epoch, result):
        seen.append(epoch)
        return epoch >= 1

    fit(t, cfg, callback=cb)
    assert seen == [0, 1]


def test_fit_rejects_empty_and_mismatched():
    cfg = tiny_cfg()
    with pytest.raises(ValueError, match="no materials"):
        fit([], cfg)
    t1 = tiny_table(20)
    rng = np.random.default_rng(0)
    t2 = SpectralBrdfTable(
        rng.uniform(0, 1, size=(AXIS.count, 3, 3, 3)).astype(np.float32), AXIS)
    with pytest.raises(ValueError, match="share"):
        fit([MaterialData(spectral=t1), MaterialData(spectral=t2)], cfg)


def test_model_table_psnr_structure():
    cfg = tiny_cfg()
    t = tiny_table(21)
    model = init_model(cfg, t.dims, AXIS)
    rep = model_table_psnr(model, t, stride=(2, 2, 2))
    assert len(rep["psnr"]) == 9
    assert np.isfinite(rep["mean_psnr"])


# ---------------------------------------------------------------------------
# serialization

def test_save_load_round_trip(tmp_path):
    cfg = tiny_cfg(channels=6)
    t = tiny_table(22)
    model = init_model(cfg, t.dims, AXIS)
    p = tmp_path / "m.ssta"
    save_model(model, p)
    back, enc = load_model(p)
    assert enc is None
    assert back.fusion is FusionMode.AFF
    assert back.channels == 6
    # float32 storage: values agree to float32 precision
    for k, v in model.named_params().items():
        np.testing.assert_allclose(back.named_params()[k], v, atol=2e-7, rtol=1e-6)
    # saving the loaded model reproduces the file exactly
    p2 = tmp_path / "m2.ssta"
    save_model(back, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_save_load_predictions_close(tmp_path):
    cfg = tiny_cfg(channels=5)
    t = tiny_table(23)
    model = init_model(cfg, t.dims, AXIS)
    p = tmp_path / "m.ssta"
    save_model(model, p)
    back, _ = load_model(p)
    rng = np.random.default_rng(1)
    th = rng.uniform(0, np.pi / 2, 20)
    td = rng.uniform(0, np.pi / 2, 20)
    pd = rng.uniform(0, np.pi, 20)
    lam = rng.uniform(400, 1000, 20)
    np.testing.assert_allclose(back.evaluate(th, td, pd, lam),
                               model.evaluate(th, td, pd, lam), atol=1e-5)


def test_load_rejects_garbage(tmp_path):
    from specfield.brdf_io import FormatError

    p = tmp_path / "bad.ssta"
    p.write_bytes(b"JUNKJUNKJUNK")
    with pytest.raises(FormatError, match="model"):
        load_model(p)


def test_save_load_hadamard(tmp_path):
    cfg = tiny_cfg(fusion=FusionMode.HADAMARD)
    t = tiny_table(24)
    model = init_model(cfg, t.dims, AXIS)
    p = tmp_path / "m.ssta"
    save_model(model, p)
    back, _ = load_model(p)
    assert back.fusion is FusionMode.HADAMARD
    assert back.aff is None
