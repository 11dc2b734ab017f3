from dataclasses import replace

import numpy as np
import pytest

from spikit import dcan
from spikit.dataset import synth_phantoms
from spikit.imaging import MeasurementVector, complementary_measure, forward_measure
from spikit.metrics import ssim
from spikit.patterns import load_basis, save_basis

TINY = dcan.DcanConfig(side=8, pattern_count=16, conv_layers=((3, 3, 4), (1, 1, 4), (3, 3, 4)),
                       epochs_phase1=2, epochs_phase2=2, batch_size=8, deterministic=True)


@pytest.fixture(scope="module")
def images():
    return synth_phantoms(40, 8, seed=0)


@pytest.fixture(scope="module")
def phase1(images):
    model = dcan.build(TINY)
    history = dcan.train_phase1(model, images, TINY)
    return model, history


def params_of(model):
    return {name: arr.copy() for name, _, _, arr in model.named_params()}


def test_encoder_parameter_count_at_full_size():
    model = dcan.build(dcan.DcanConfig(side=64, pattern_count=256, conv_layers=((3, 3, 2),)))
    assert model.layers[dcan.ENCODER].params["W"].size == 1_048_576
    assert "b" not in model.layers[dcan.ENCODER].params


def test_decoder_output_shape():
    cfg = replace(TINY, side=16, pattern_count=7)
    model = dcan.build(cfg)
    out = model.forward(np.zeros((3, 256), np.float32))[0]
    assert out.shape == (3, 16, 16, 1)


def test_build_is_seeded():
    a, b = params_of(dcan.build(TINY)), params_of(dcan.build(TINY))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = params_of(dcan.build(replace(TINY, decoder_seed=5)))
    assert not np.array_equal(a["1.W"], c["1.W"])


def test_config_validation():
    with pytest.raises(ValueError):
        dcan.DcanConfig(pattern_count=0)
    with pytest.raises(ValueError):
        dcan.DcanConfig(variant="XB")
    with pytest.raises(ValueError):
        dcan.DcanConfig(binary_weight=-1)


@pytest.mark.parametrize("variant,expected", [("B", (1.0, 0.0)), ("BO", (1.0, 10.0)), ("NB", (0.0, 0.0)), ("NBO", (0.0, 10.0))])
def test_variant_weights(variant, expected):
    assert dcan.with_variant(TINY, variant).active_weights() == expected


# --- phase 1 ---------------------------------------------------------------------------


def test_phase1_loss_trend():
    cfg = replace(TINY, side=16, pattern_count=64, epochs_phase1=5, batch_size=16)
    imgs = synth_phantoms(200, 16, seed=1)
    history = dcan.train_phase1(dcan.build(cfg), imgs, cfg)
    losses = [h.mse for h in history]
    assert len(losses) == 5 and losses[-1] < losses[0]
    assert sum(b > a for a, b in zip(losses, losses[1:])) <= 1


def test_phase1_beats_zero_output_on_identical_images():
    cfg = replace(TINY, epochs_phase1=30)
    imgs = np.repeat(synth_phantoms(1, 8, seed=2), 16, axis=0)
    history = dcan.train_phase1(dcan.build(cfg), imgs, cfg)
    assert history[-1].mse < float(np.mean(imgs**2))


def test_zero_epoch_phase1_is_noop(images):
    cfg = replace(TINY, epochs_phase1=0)
    model = dcan.build(cfg)
    before = params_of(model)
    assert dcan.train_phase1(model, images, cfg) == []
    after = params_of(model)
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        dcan.train_phase1(dcan.build(TINY), np.zeros((0, 8, 8)), TINY)


def test_divergence_carries_history(images):
    cfg = replace(TINY, learning_rate=1e30, epochs_phase1=5)
    with pytest.raises(dcan.TrainingDiverged) as info:
        dcan.train_phase1(dcan.build(cfg), images, cfg)
    assert isinstance(info.value.history, list)


# --- phase 2 ---------------------------------------------------------------------------


@pytest.mark.parametrize("variant", list(dcan.Variant))
def test_phase2_freezes_decoder_and_clamps(phase1, images, variant):
    model = dcan.copy_model(phase1[0])
    before = dcan.decoder_checksum(model)
    cfg = dcan.with_variant(TINY, variant)
    trained = dcan.train_phase2(model, images, cfg, list(phase1[1]))
    assert dcan.decoder_checksum(model) == before
    assert np.abs(trained.encoder_weights).max() <= 1.0
    assert len(trained.history) == cfg.epochs_phase1 + cfg.epochs_phase2
    assert [h.phase for h in trained.history] == [1, 1, 2, 2]


def test_decoder_write_during_phase2_is_detected(phase1, images, monkeypatch):
    model = dcan.copy_model(phase1[0])
    original = dcan._run_epochs

    def tamper(model, *args, **kwargs):
        model.layers[1].params["W"][0, 0] += 1.0
        return original(model, *args, **kwargs)

    monkeypatch.setattr(dcan, "_run_epochs", tamper)
    with pytest.raises(ValueError, match="read-only"):
        dcan.train_phase2(model, images, TINY)
    assert model.layers[1].params["W"].flags.writeable


def test_clamp_holds_after_every_step(phase1, images, monkeypatch):
    model = dcan.copy_model(phase1[0])
    seen = []
    bump = type(model).bump

    def watch(self):
        seen.append(float(np.abs(self.layers[dcan.ENCODER].params["W"]).max()))
        bump(self)

    monkeypatch.setattr(type(model), "bump", watch)
    dcan.train_phase2(model, images, replace(TINY, phase2_learning_rate=0.5))
    assert max(seen[1:]) <= 1.0
    assert len(seen) > TINY.epochs_phase2


def test_training_is_reproducible(images):
    a = dcan.train(images, TINY)
    b = dcan.train(images, TINY)
    assert [h.mse for h in a.history] == [h.mse for h in b.history]
    assert np.array_equal(a.encoder_weights, b.encoder_weights)


# --- basis extraction, decode, pipeline ------------------------------------------------


@pytest.fixture(scope="module")
def trained(phase1, images):
    return dcan.train_phase2(dcan.copy_model(phase1[0]), images, TINY, list(phase1[1]))


def test_extract_basis_matches_encoder(trained, images):
    basis = dcan.extract_basis(trained)
    assert basis.kind.value == "Learned" and basis.value_range == dcan.CLAMP
    enc = dcan.encode(trained, images[:5])
    for x, e in zip(images[:5], enc):
        np.testing.assert_allclose(forward_measure(basis, x).values, e, atol=1e-5)


def test_basis_container_round_trip(trained, tmp_path):
    basis = dcan.extract_basis(trained)
    save_basis(tmp_path / "b.spib", basis)
    assert load_basis(tmp_path / "b.spib").patterns.tobytes() == basis.patterns.tobytes()


def test_decode_deterministic_and_clamped(trained, images):
    y = MeasurementVector(dcan.encode(trained, images[:1])[0].astype(np.float64))
    a, b = dcan.decode(trained, y), dcan.decode(trained, y)
    assert a.tobytes() == b.tobytes()
    assert a.shape == (8, 8) and a.min() >= 0 and a.max() <= 1
    assert trained.last_decode_ms > 0


def test_decode_length_mismatch(trained):
    with pytest.raises(ValueError):
        dcan.decode(trained, MeasurementVector(np.zeros(15)))


@pytest.mark.parametrize("variant", list(dcan.Variant))
def test_pipeline_equivalence(phase1, images, variant):
    trained = dcan.train_phase2(dcan.copy_model(phase1[0]), images, dcan.with_variant(TINY, variant))
    basis = dcan.extract_basis(trained)
    net = np.clip(trained.model.predict(images[:6].reshape(6, -1).astype(np.float32)), 0, 1).reshape(6, 8, 8)
    for x, ref in zip(images[:6], net):
        got = dcan.decode(trained, complementary_measure(basis, x))
        assert np.abs(got - ref).max() < 1e-4


def test_checkpoint_round_trip(trained, images, tmp_path):
    trained.save(tmp_path / "m.ckpt")
    back = dcan.TrainedDcan.load(tmp_path / "m.ckpt")
    assert back.config == trained.config
    assert [h.mse for h in back.history] == [h.mse for h in trained.history]
    Y = dcan.encode(trained, images[:4])
    assert dcan.decode_batch(back, Y).tobytes() == dcan.decode_batch(trained, Y).tobytes()


def test_trained_decoder_beats_untrained_baseline():
    cfg = replace(TINY, side=16, pattern_count=64, epochs_phase1=8, epochs_phase2=0, batch_size=16)
    imgs = synth_phantoms(300, 16, seed=4)
    untrained = dcan.TrainedDcan(dcan.build(cfg), cfg)
    model = dcan.build(cfg)
    trained = dcan.TrainedDcan(model, cfg, dcan.train_phase1(model, imgs, cfg))
    probe = imgs[:20]

    def score(t):
        return np.mean([ssim(r, x) for r, x in zip(dcan.decode_batch(t, dcan.encode(t, probe)), probe)])

    assert score(trained) >= score(untrained) + 0.3


def test_history_csv(trained, tmp_path):
    dcan.write_history(tmp_path / "h.csv", trained.history)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "phase,epoch,mse,omega_binary,omega_ortho"
    assert len(lines) == 1 + len(trained.history)
