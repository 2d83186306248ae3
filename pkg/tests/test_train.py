import math

import numpy as np
import pytest

from swinseg3d.errors import (CheckpointVersionError, ConfigError, ConfigMismatchError,
                              CorruptManifestError, NonFiniteLossError)
from swinseg3d.model import SwinUNet3D, UNet3D, UNetConfig, miniature_config
from swinseg3d.tensor import Tensor
from swinseg3d.train import (Sample, TrainConfig, Trainer, TrainLog, evaluate, load_checkpoint,
                             save_checkpoint, split_cases, train, write_checkpoint)


def make_samples(n, seed=0, shape=(16, 16, 16), dtype=np.float32):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        mask = np.zeros((1,) + shape, np.uint8)
        z, y, x = rng.integers(2, np.array(shape) - 6)
        mask[0, z:z + 4, y:y + 4, x:x + 4] = 1
        image = np.stack([mask[0] * 0.8 + 0.1 * rng.random(shape), rng.random(shape)]).astype(dtype)
        out.append(Sample(image, mask, f"s{i}"))
    return out


class OracleModel:
    """Reads the answer out of channel 0 of synthetic samples."""

    def __call__(self, x):
        return Tensor((np.asarray(x)[0:1] > 0.5) * 20.0 - 10.0)


def tiny_model(**kw):
    return SwinUNet3D(miniature_config(**kw))


# ------------------------------------------------------------------ config
def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(patience=0)
    with pytest.raises(ConfigError):
        TrainConfig(val_fraction=1.0)
    cfg = TrainConfig()
    assert (cfg.lr, cfg.batch_size, cfg.max_epochs, cfg.patience) == (1e-4, 2, 100, 10)
    assert (cfg.focal.alpha, cfg.focal.gamma) == (0.25, 2.0)


def test_sample_accepts_3d_mask():
    s = Sample(np.zeros((2, 16, 16, 16)), np.zeros((16, 16, 16)))
    assert s.mask.shape == (1, 16, 16, 16)


# ----------------------------------------------------------- step counting
@pytest.mark.parametrize("n,batch,expected", [(1, 2, 1), (4, 2, 2), (5, 2, 3), (3, 1, 3)])
def test_one_epoch_step_count(n, batch, expected):
    _, log, trainer = train(tiny_model(), make_samples(n), TrainConfig(max_epochs=1, batch_size=batch))
    assert trainer.state.step == expected == log.steps


def test_max_steps_stops_mid_epoch():
    _, log, _ = train(tiny_model(), make_samples(6), TrainConfig(max_epochs=5, max_steps=4))
    assert log.steps == 4
    assert log.stop_reason == "max_steps"
    assert len(log.records) == 2


def test_lr_zero_keeps_weights():
    model = tiny_model()
    before = model.state_dict()
    train(model, make_samples(3), TrainConfig(lr=0.0, max_epochs=2))
    for name, arr in model.state_dict().items():
        np.testing.assert_array_equal(arr, before[name])


def test_early_stop_after_patience():
    _, log, _ = train(tiny_model(), make_samples(2), TrainConfig(lr=0.0, max_epochs=50, patience=3))
    assert log.stop_reason == "early_stop"
    assert len(log.records) == 4
    assert log.best_epoch == 0


def test_equal_dice_lower_loss_counts_as_improvement():
    from swinseg3d.train.engine import EpochRecord, TrainLog, _improves
    log = TrainLog([EpochRecord(0, 1.0, 0.0, 0.0, 0.5, 0.1)], best_epoch=0)
    assert _improves(EpochRecord(1, 1.0, 0.0, 0.0, 0.4, 0.1), log)
    assert not _improves(EpochRecord(1, 1.0, 0.0, 0.0, 0.5, 0.1), log)
    assert _improves(EpochRecord(1, 1.0, 0.1, 0.0, 0.9, 0.1), log)
    assert not _improves(EpochRecord(1, 1.0, -0.0, 0.0, 0.9, 0.1), log)


def test_returns_best_epoch_weights():
    data = make_samples(4, seed=1)
    val = make_samples(2, seed=2)
    model, log, _ = train(tiny_model(), data, TrainConfig(lr=3e-3, max_epochs=6, patience=6), val)
    assert log.best_dice == max(r.val_dice for r in log.records)
    assert evaluate(model, val).dice == pytest.approx(log.best_dice, abs=1e-12)


def test_nan_loss_names_batch_and_step():
    data = make_samples(4)
    data[3].image[0, 0, 0, 0] = np.nan
    with pytest.raises(NonFiniteLossError, match=r"step \d+ \(epoch 0, batch \d\).*s3"):
        train(tiny_model(), data, TrainConfig(max_epochs=1))


def test_training_deterministic():
    cfg = TrainConfig(lr=1e-3, max_epochs=3, seed=5)
    logs = [train(tiny_model(seed=2), make_samples(3), cfg)[1] for _ in range(2)]
    strip = lambda log: [(r.epoch, r.train_loss, r.val_dice, r.val_iou) for r in log.records]  # noqa: E731
    assert strip(logs[0]) == strip(logs[1])


def test_loss_finite_and_decreasing_on_fixed_batch():
    data = make_samples(2)
    trainer = Trainer(tiny_model(), TrainConfig(lr=1e-3))
    losses = [trainer.step(data) for _ in range(15)]
    assert all(math.isfinite(v) for v in losses)
    assert losses[-1] < losses[0]


def test_unet_trains():
    model = UNet3D(UNetConfig(base_channels=4))
    _, log, trainer = train(model, make_samples(2), TrainConfig(max_epochs=1))
    assert trainer.state.step == 1 and math.isfinite(log.records[0].train_loss)


# ----------------------------------------------------------------- evaluate
def test_evaluate_oracle_is_perfect():
    report = evaluate(OracleModel(), make_samples(3), name="oracle")
    assert report.dice == 1.0 and report.iou == 1.0
    assert report.focal < 1e-6


def test_evaluate_is_pure_and_means_are_means():
    model = tiny_model()
    data = make_samples(3)
    before = model.state_dict()
    a, b = evaluate(model, data), evaluate(model, data)
    assert [(r.dice, r.iou, r.focal) for r in a.rows] == [(r.dice, r.iou, r.focal) for r in b.rows]
    assert a.dice == pytest.approx(np.mean([r.dice for r in a.rows]))
    assert a.focal == pytest.approx(np.mean([r.focal for r in a.rows]))
    for name, arr in model.state_dict().items():
        np.testing.assert_array_equal(arr, before[name])


def test_evaluate_tiles_deep_volumes():
    data = make_samples(1, shape=(32, 16, 16))
    report = evaluate(OracleModel(), data, stride=8)
    assert report.dice == 1.0


def test_metrics_csv_has_mean_row():
    text = evaluate(OracleModel(), make_samples(2), name="oracle").to_csv().splitlines()
    assert text[0] == "model,case_id,dice,iou,focal_loss,seconds"
    assert len(text) == 4 and text[-1].startswith("oracle,mean,1.000000,1.000000")


def test_split_cases_stable_and_disjoint():
    ids = [f"case{i:03d}" for i in range(16)]
    tr, va = split_cases(ids, 0.2, seed=3)
    assert (tr, va) == split_cases(list(reversed(ids)), 0.2, seed=3)
    assert len(va) == 3 and not set(tr) & set(va) and sorted(tr + va) == ids


def test_train_log_csv_roundtrip():
    _, log, _ = train(tiny_model(), make_samples(2), TrainConfig(max_epochs=2))
    text = log.to_csv()
    assert text.splitlines()[0] == "epoch,train_loss,val_dice,val_iou,val_loss,seconds"
    assert TrainLog.from_csv(text).records == log.records


# --------------------------------------------------------------- checkpoint
def test_checkpoint_byte_identity(tmp_path):
    model, log, trainer = train(tiny_model(), make_samples(2), TrainConfig(max_epochs=2))
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, model, trainer.state, log, trainer.cfg)
    write_checkpoint(b, load_checkpoint(a))
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_restores_everything(tmp_path):
    model, log, trainer = train(tiny_model(), make_samples(2), TrainConfig(max_epochs=2, lr=2e-3))
    save_checkpoint(tmp_path / "c.ckpt", model, trainer.state, log, trainer.cfg)
    ck = load_checkpoint(tmp_path / "c.ckpt")
    restored = ck.build_model(miniature_config())
    for (n, p), (_, q) in zip(model.named_parameters(), restored.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data)
    assert ck.optimizer.step == trainer.state.step and ck.optimizer.lr == 2e-3
    for m1, m2 in zip(ck.optimizer.m, trainer.state.m):
        np.testing.assert_array_equal(m1, m2)
    assert ck.log.records == log.records and ck.log.best_epoch == log.best_epoch
    assert ck.train_config == trainer.cfg


def test_resume_matches_continuous_run(tmp_path):
    cfg = TrainConfig(lr=1e-3)
    batches = [make_samples(2, seed=s, dtype=np.float64) for s in range(5)]
    mcfg = miniature_config(dtype="float64", seed=1)

    cont = Trainer(SwinUNet3D(mcfg), cfg)
    cont_losses = [cont.step(b) for b in batches]

    first = Trainer(SwinUNet3D(mcfg), cfg)
    losses = [first.step(b) for b in batches[:2]]
    save_checkpoint(tmp_path / "r.ckpt", first.model, first.state)
    ck = load_checkpoint(tmp_path / "r.ckpt")
    resumed = Trainer(ck.build_model(mcfg), cfg, ck.optimizer)
    losses += [resumed.step(b) for b in batches[2:]]

    assert losses == cont_losses
    for (_, p), (_, q) in zip(cont.model.named_parameters(), resumed.model.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data)


def test_resume_full_training_run(tmp_path):
    data = make_samples(3)
    cfg = TrainConfig(lr=1e-3, max_epochs=4, patience=10, seed=2)
    _, full_log, _ = train(tiny_model(), data, cfg, restore_best=False)

    short = TrainConfig(lr=1e-3, max_epochs=2, patience=10, seed=2)
    model, log, trainer = train(tiny_model(), data, short, restore_best=False)
    save_checkpoint(tmp_path / "p.ckpt", model, trainer.state, log, short)
    ck = load_checkpoint(tmp_path / "p.ckpt")
    resumed = ck.build_model()
    _, log2, _ = train(resumed, data, cfg, trainer=Trainer(resumed, cfg, ck.optimizer), log=ck.log,
                       restore_best=False)
    assert [r.train_loss for r in log2.records] == [r.train_loss for r in full_log.records]
    assert log2.steps == full_log.steps


def test_config_mismatch(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", tiny_model())
    ck = load_checkpoint(tmp_path / "m.ckpt")
    with pytest.raises(ConfigMismatchError, match="base_dim"):
        ck.build_model(miniature_config(base_dim=16))
    with pytest.raises(ConfigMismatchError):
        ck.restore_into(UNet3D(UNetConfig()))


def test_version_mismatch(tmp_path):
    path = tmp_path / "v.ckpt"
    save_checkpoint(path, tiny_model())
    path.write_bytes(path.read_bytes().replace(b"version = 1", b"version = 2", 1))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


@pytest.mark.parametrize("mutate", [
    lambda raw: raw[:200],
    lambda raw: raw.replace(b"model.base_dim = 8", b"model.base_dim 8", 1),
    lambda raw: raw.replace(b"model.base_dim = 8", b"model.bogus = 8", 1),
    lambda raw: b"GARBAGE" + raw,
    lambda raw: raw[:-4],
    lambda raw: raw + b"\x00\x00\x00\x00",
])
def test_corrupt_manifest(tmp_path, mutate):
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, tiny_model())
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(CorruptManifestError):
        load_checkpoint(path)


def test_errors_are_distinct():
    assert not issubclass(CheckpointVersionError, CorruptManifestError)
    assert not issubclass(CorruptManifestError, CheckpointVersionError)
