"""Trainer semantics: GAN losses, phase isolation, tying invariants,
determinism, resume, and the toy convergence run."""
import numpy as np
import pytest

from xgan import vae as V
from xgan.nn import SharingConfig
from xgan.rng import Rng
from xgan.tensor import Tensor
from xgan.training import (
    METRICS_HEADER,
    PairBatcher,
    TrainAbort,
    TrainConfig,
    TrainState,
    build_bundle,
    feature_matching_loss,
    gan_loss_pair,
    train,
    train_step,
)

from conftest import run_toy_training, toy_two_gaussians


def toy_cfg(**kw):
    base = dict(iterations=0, batch_size=32, k=1, l=1, latent_dim=4, seed=7)
    base.update(kw)
    return TrainConfig(**base)


def force_constant_discriminators(bundle, p: float):
    """Zero every disc weight and set the output bias to sigmoid^-1(p)."""
    logit = float(np.log(p / (1 - p)))
    for net in (bundle.f1, bundle.f2):
        for sid in net.slot_ids():
            slot = bundle.store.slots[sid]
            slot.value = np.zeros_like(slot.value)
    for name in ("f1.L2.b", "f2.L2.b"):
        bundle.store.set_value(name, np.array([logit], np.float32))


def test_d_loss_at_half_probability_is_4_log2():
    bundle = build_bundle(toy_cfg(), toy=True)
    force_constant_discriminators(bundle, 0.5)
    x = Tensor(np.random.RandomState(0).randn(16, 1).astype(np.float32))
    xb = Tensor(np.random.RandomState(1).randn(16, 1).astype(np.float32))
    z = Tensor(np.random.RandomState(2).randn(16, 4).astype(np.float32))
    d_loss, g_loss = gan_loss_pair(bundle.f1, bundle.f2, bundle.g1, bundle.g2, x, xb, z, z)
    assert abs(d_loss.item() - 4 * np.log(2.0)) < 1e-6
    assert abs(g_loss.item() - 2 * np.log(2.0)) < 1e-6


def test_d_loss_perfect_discriminator_near_zero():
    bundle = build_bundle(toy_cfg(), toy=True)
    x = Tensor(np.random.RandomState(0).randn(8, 1).astype(np.float32))
    z = Tensor(np.random.RandomState(2).randn(8, 4).astype(np.float32))
    force_constant_discriminators(bundle, 1 - 1e-9)  # confident "real" everywhere
    d_loss, _ = gan_loss_pair(bundle.f1, bundle.f2, bundle.g1, bundle.g2, x, x, z, z)
    # real term ~0, fake term hits the 1e-7 clamp: bounded, not inf
    assert np.isfinite(d_loss.item())
    assert d_loss.item() == pytest.approx(2 * -np.log(1e-7), rel=1e-3)


def test_saturating_generator_objective_sign():
    bundle = build_bundle(toy_cfg(), toy=True)
    force_constant_discriminators(bundle, 0.5)
    x = Tensor(np.zeros((4, 1), np.float32))
    z = Tensor(np.zeros((4, 4), np.float32))
    _, g_sat = gan_loss_pair(bundle.f1, bundle.f2, bundle.g1, bundle.g2, x, x, z, z,
                             saturating_generator=True)
    assert abs(g_sat.item() - 2 * np.log(0.5)) < 1e-6


def test_feature_matching_loss_contract():
    feats = Tensor(np.random.RandomState(3).randn(8, 5))
    assert feature_matching_loss(feats, feats).item() == 0.0
    scaled = feature_matching_loss(
        Tensor(feats.array * 3.0), Tensor(np.zeros((8, 5)))
    ).item()
    base = feature_matching_loss(feats, Tensor(np.zeros((8, 5)))).item()
    assert scaled == pytest.approx(9.0 * base, rel=1e-6)


def test_train_step_runs_all_phases_and_reports_finite():
    bundle, reports = run_toy_training(toy_cfg(), 3)
    for r in reports:
        assert r.is_finite()
        assert r.l_align >= 1.0  # floored at tau
        assert r.l_total == pytest.approx(r.l_vae + r.l_align + r.l_gan_d1 + r.l_gan_d2)


def test_two_runs_same_seed_bit_identical_reports():
    _, r1 = run_toy_training(toy_cfg(), 25)
    _, r2 = run_toy_training(toy_cfg(), 25)
    for a, b in zip(r1, r2):
        assert a.csv_row() == b.csv_row()
        assert (a.l_vae_a, a.l_gan_g1) == (b.l_vae_a, b.l_gan_g1)


def test_tied_slots_bit_identical_after_training():
    bundle, _ = run_toy_training(toy_cfg(k=1, l=1), 40)
    assert np.array_equal(bundle.store.value("g1.L1.w"), bundle.store.value("g2.L1.w"))
    assert np.array_equal(bundle.store.value("f1.L2.w"), bundle.store.value("f2.L2.w"))
    assert not np.array_equal(bundle.store.value("f1.L1.w"), bundle.store.value("f2.L1.w"))


def test_phase_parameter_isolation():
    """Snapshot every group after each phase: a phase only moves its own slots
    (the alignment phase legitimately also moves the encoders)."""
    cfg = toy_cfg()
    batcher = toy_two_gaussians()
    bundle = build_bundle(cfg, toy=True)
    state = TrainState(bundle=bundle, cfg=cfg, rng=Rng(cfg.seed))
    groups = {
        "vae": bundle.group("vae"),
        "align_map": [sid for sid in bundle.group("align") if sid.startswith("align")],
        "d": bundle.group("d"),
        "g": bundle.group("g"),
    }

    def snapshot():
        return {sid: bundle.store.slots[sid].value.copy()
                for ids in groups.values() for sid in ids}

    import xgan.training as tr

    orig = tr._adam_phase
    phases = []  # (phase index, snapshot after update)

    def recording(state_, tape, loss, leaves):
        orig(state_, tape, loss, leaves)
        phases.append(snapshot())

    before = snapshot()
    tr._adam_phase = recording
    try:
        train_step(state, batcher.batch(state.rng, 0, cfg.batch_size))
    finally:
        tr._adam_phase = orig
    assert len(phases) == 4  # vae, align, d, g

    def unchanged(ids, snap_a, snap_b):
        return all(np.array_equal(snap_a[sid], snap_b[sid]) for sid in ids)

    def changed(ids, snap_a, snap_b):
        return any(not np.array_equal(snap_a[sid], snap_b[sid]) for sid in ids)

    after_vae, after_align, after_d, after_g = phases
    # phase 1 (vae): moves vae slots only
    assert changed(groups["vae"], before, after_vae)
    for name in ("align_map", "d", "g"):
        assert unchanged(groups[name], before, after_vae), f"vae phase moved {name}"
    # phase 2 (align): moves the map and encoders, never d/g or decoders
    assert changed(groups["align_map"], after_vae, after_align)
    decoder_ids = [sid for sid in groups["vae"] if ".dec." in sid]
    assert unchanged(decoder_ids, after_vae, after_align)
    for name in ("d", "g"):
        assert unchanged(groups[name], after_vae, after_align), f"align phase moved {name}"
    # phase 3 (d): moves discriminators only
    assert changed(groups["d"], after_align, after_d)
    for name in ("vae", "align_map", "g"):
        assert unchanged(groups[name], after_align, after_d), f"d phase moved {name}"
    # phase 4 (g): moves generators only
    assert changed(groups["g"], after_d, after_g)
    for name in ("vae", "align_map", "d"):
        assert unchanged(groups[name], after_d, after_g), f"g phase moved {name}"


def test_single_stream_decoupling_bitwise():
    coupled = toy_cfg(k=0, l=0, align_enabled=False)
    single = toy_cfg(k=0, l=0, align_enabled=False, single_stream=1)
    bc, rc = run_toy_training(coupled, 60)
    bs, rs = run_toy_training(single, 60)
    for a, b in zip(rc, rs):
        assert a.l_vae_a == b.l_vae_a
        assert a.l_gan_d1 == b.l_gan_d1
        assert a.l_gan_g1 == b.l_gan_g1
    for sid in bc.store.slots:
        if sid.startswith(("g1.", "f1.", "vae_a.")):
            assert np.array_equal(bc.store.slots[sid].value, bs.store.slots[sid].value)


def test_no_align_reports_zero_align_loss():
    _, reports = run_toy_training(toy_cfg(align_enabled=False), 5)
    assert all(r.l_align == 0.0 for r in reports)


def test_toy_generators_reach_targets():
    """Two-view 1-d Gaussian task: generated means reach +/-2 within 0.3.

    Pilot run (seed 7, 2000 steps): g1 mean +2.055, g2 mean -1.946.
    """
    bundle, reports = run_toy_training(toy_cfg(), 2000)
    assert all(r.is_finite() for r in reports)
    batcher = toy_two_gaussians()
    post_a = V.encode(bundle.vae_a, Tensor(batcher.x[:256]))
    za = V.reparameterize(post_a, Rng(123).split("ea"))
    post_b = V.encode(bundle.vae_b, Tensor(batcher.x_bar[:256]))
    zb = V.reparameterize(post_b, Rng(123).split("eb"))
    mean1 = float(bundle.g1.forward(za.z, mode="eval").array.mean())
    mean2 = float(bundle.g2.forward(zb.z, mode="eval").array.mean())
    assert abs(mean1 - 2.0) <= 0.3, f"g1 mean {mean1}"
    assert abs(mean2 + 2.0) <= 0.3, f"g2 mean {mean2}"


def test_train_writes_outputs_and_t0_initial_checkpoint(tmp_path):
    cfg = toy_cfg(iterations=0)
    result = train(cfg, toy_two_gaussians(), tmp_path / "run0", toy=True)
    assert (tmp_path / "run0" / "checkpoint_000000.xgan").exists()
    rows = result.metrics_path.read_text().strip().splitlines()
    assert rows == [",".join(METRICS_HEADER)]


def test_train_csv_row_count_equals_iterations(tmp_path):
    cfg = toy_cfg(iterations=7, checkpoint_every=100)
    result = train(cfg, toy_two_gaussians(), tmp_path / "run", toy=True)
    rows = result.metrics_path.read_text().strip().splitlines()
    assert len(rows) - 1 == 7


def test_resume_matches_uninterrupted(tmp_path):
    cfg_full = toy_cfg(iterations=30, checkpoint_every=10)
    full = train(cfg_full, toy_two_gaussians(), tmp_path / "full", toy=True)

    cfg_part = toy_cfg(iterations=12, checkpoint_every=12)
    part = train(cfg_part, toy_two_gaussians(), tmp_path / "part", toy=True)
    resumed = train(
        cfg_full, toy_two_gaussians(), tmp_path / "resumed", toy=True,
        resume_from=tmp_path / "part" / "checkpoint_000012.xgan",
    )
    full_rows = full.metrics_path.read_text().strip().splitlines()[1:]
    res_rows = resumed.metrics_path.read_text().strip().splitlines()[1:]
    assert res_rows == full_rows[12:]


def test_rerun_byte_identical_metrics(tmp_path):
    cfg = toy_cfg(iterations=20, checkpoint_every=20)
    r1 = train(cfg, toy_two_gaussians(), tmp_path / "r1", toy=True)
    r2 = train(cfg, toy_two_gaussians(), tmp_path / "r2", toy=True)
    assert r1.metrics_path.read_bytes() == r2.metrics_path.read_bytes()
    assert r1.checkpoint_path.read_bytes() == r2.checkpoint_path.read_bytes()


def test_nan_abort_carries_last_checkpoint(tmp_path):
    cfg = toy_cfg(iterations=5, checkpoint_every=1)
    batcher = toy_two_gaussians()

    import xgan.training as tr

    orig = tr.train_step

    def sabotage(state, batch):
        report = orig(state, batch)
        if state.step >= 3:
            report.l_vae = float("nan")
        return report

    tr.train_step = sabotage
    try:
        with pytest.raises(TrainAbort) as err:
            train(cfg, batcher, tmp_path / "boom", toy=True)
    finally:
        tr.train_step = orig
    assert err.value.last_checkpoint is not None
    assert "checkpoint" in err.value.last_checkpoint


def test_batch_size_must_be_even():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=3)


def test_paper_and_desk_presets():
    desk = TrainConfig.desk()
    paper = TrainConfig.paper()
    assert (desk.iterations, desk.batch_size) == (3000, 32)
    assert (paper.iterations, paper.batch_size) == (30000, 128)
    assert desk.lr == paper.lr == 0.002
    assert desk.beta1 == 0.5 and desk.beta2 == 0.999
    assert desk.k == 4 and desk.l == 1 and desk.tau == 1.0


def test_d_and_g_losses_nonnegative_after_clamping():
    rs = np.random.RandomState(5)
    for seed in range(4):
        bundle = build_bundle(toy_cfg(seed=seed), toy=True)
        x = Tensor(rs.randn(8, 1).astype(np.float32) * 3)
        xb = Tensor(rs.randn(8, 1).astype(np.float32) * 3)
        z = Tensor(rs.randn(8, 4).astype(np.float32))
        d_loss, g_loss = gan_loss_pair(bundle.f1, bundle.f2, bundle.g1, bundle.g2,
                                       x, xb, z, z)
        assert d_loss.item() >= 0.0
        assert g_loss.item() >= 0.0
