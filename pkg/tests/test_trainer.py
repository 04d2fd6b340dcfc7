import csv

import numpy as np
import pytest

from dpsvoc import checkpoint
from dpsvoc.adversary import toy_discriminator_config
from dpsvoc.generator import toy_config
from dpsvoc.spectral import mel_features
from dpsvoc.trainer import Adam, DataError, TrainConfig, Trainer, adam_update, load_generator
from dpsvoc.numerics import ParamStore


@pytest.fixture(scope="module")
def pair(speech_clip):
    wave = speech_clip[0][:8000]
    return mel_features(wave), wave


def _trainer(**kw):
    cfg = dict(total_steps=20, warmup_steps=2, clip_samples=4000, seed=5)
    cfg.update(kw)
    return Trainer(toy_config(), toy_discriminator_config(), TrainConfig(**cfg))


# -- Adam ------------------------------------------------------------------------------


def test_zero_gradient_leaves_params():
    p = np.array([1.0, -2.0])
    adam_update(p, np.zeros(2), np.zeros(2), np.zeros(2), t=1, lr=0.1)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_first_step_magnitude_is_lr():
    for g in (1e-3, 0.5, 40.0):
        p = np.array([0.0])
        adam_update(p, np.array([g]), np.zeros(1), np.zeros(1), t=1, lr=1e-3)
        assert p[0] == pytest.approx(-1e-3, rel=1e-4)


def test_quadratic_descends_monotonically():
    store = ParamStore()
    w = store.add("w", np.array([1.0]))
    opt = Adam(store)
    values = [1.0]
    for _ in range(10):
        w.grad = 2 * w.data
        opt.step(0.05)
        values.append(float(w.data[0] ** 2))
    assert all(b < a for a, b in zip(values, values[1:]))


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_update(np.zeros(3), np.zeros(2), np.zeros(3), np.zeros(3), 1, 0.1)


# -- config -----------------------------------------------------------------------------


def test_lr_schedule_exact():
    cfg = TrainConfig(lr_init=1e-3, decay=0.5, total_steps=400)
    assert cfg.interval == 100
    for k in range(4):
        assert cfg.lr_at(100 * k) == 1e-3 * 0.5**k
        assert cfg.lr_at(100 * k + 99) == 1e-3 * 0.5**k


@pytest.mark.parametrize("bad", [dict(lr_init=0), dict(decay=0), dict(decay=1.5), dict(clip_samples=8001)])
def test_train_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_default_warmup_is_tenth():
    assert TrainConfig(total_steps=2000).warmup == 200


# -- train_step ------------------------------------------------------------------------


def test_warmup_leaves_discriminator_untouched(pair):
    tr = _trainer(warmup_steps=3)
    before = {k: p.data.copy() for k, p in tr.discriminator.params.items()}
    for _ in range(3):
        rep = tr.train_step([pair])
        assert rep.l_adv == 0.0 and rep.l_comb == rep.l_stft
    for k, p in tr.discriminator.params.items():
        np.testing.assert_array_equal(p.data, before[k])
    rep = tr.train_step([pair])
    assert rep.l_adv > 0.0
    assert rep.l_comb == pytest.approx(rep.l_stft + 4.0 * rep.l_adv)
    assert any(not np.array_equal(p.data, before[k]) for k, p in tr.discriminator.params.items())


def test_misaligned_pair_rejected(pair):
    mel, wave = pair
    with pytest.raises(DataError):
        _trainer().train_step([(mel, wave[:-1])])


def test_batch_of_two(pair):
    tr = _trainer(batch=2)
    rep = tr.train_step([pair, pair])
    assert np.isfinite(rep.l_stft)


def test_loss_trajectory_deterministic(pair):
    a = [r[1:] for r in _trainer().fit([pair], steps=4)]
    b = [r[1:] for r in _trainer().fit([pair], steps=4)]
    assert a == b


def test_training_log_columns(pair, tmp_path):
    tr = _trainer()
    tr.fit([pair], steps=3, log_path=tmp_path / "log.csv")
    rows = list(csv.reader(open(tmp_path / "log.csv")))
    assert rows[0] == ["step", "lr", "l_sc", "l_mag", "l_stft", "l_adv", "l_comb"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]


# -- checkpoints ----------------------------------------------------------------------------


def test_checkpoint_round_trip_and_resume(pair, tmp_path):
    tr = _trainer()
    tr.fit([pair], steps=3)
    path = tmp_path / "ck.bin"
    tr.save(path)
    back = Trainer.load(path)
    for store_a, store_b in ((tr.generator.params, back.generator.params),
                             (tr.discriminator.params, back.discriminator.params)):
        for k in store_a:
            np.testing.assert_array_equal(store_a[k].data, store_b[k].data)
    assert back.step == 3 and back.opt_g.t == 3
    # resumed training follows the uninterrupted trajectory
    assert tr.fit([pair], steps=2) == back.fit([pair], steps=2)


def test_checkpoint_size_matches_inventory(tmp_path):
    tr = _trainer()
    header, tensors = tr.state()
    from dpsvoc.trainer import _jsonable

    header = _jsonable(header)
    size = tr.save(tmp_path / "ck.bin")
    assert size == (tmp_path / "ck.bin").stat().st_size
    assert size == checkpoint.expected_size(header, {k: v.shape for k, v in tensors.items()})


def test_load_generator_synthesis_bit_identical(tmp_path, pair):
    tr = _trainer()
    tr.save(tmp_path / "ck.bin")
    mel = pair[0]
    np.testing.assert_array_equal(tr.generator.synthesize(mel, seed=3),
                                  load_generator(tmp_path / "ck.bin").synthesize(mel, seed=3))


def test_truncated_checkpoint(tmp_path):
    tr = _trainer()
    tr.save(tmp_path / "ck.bin")
    raw = (tmp_path / "ck.bin").read_bytes()
    for cut in (3, 10, len(raw) // 2, len(raw) - 2):
        (tmp_path / "bad.bin").write_bytes(raw[:cut])
        with pytest.raises(checkpoint.CheckpointError) as info:
            Trainer.load(tmp_path / "bad.bin")
        assert info.value.offset is not None


def test_corrupted_and_version_mismatch(tmp_path):
    data = checkpoint.encode({"a": 1}, {"x": np.arange(4.0)})
    flipped = bytearray(data)
    flipped[-12] ^= 0xFF
    with pytest.raises(checkpoint.CheckpointError, match="checksum"):
        checkpoint.decode(bytes(flipped))
    bumped = bytearray(data)
    bumped[4] = 9
    with pytest.raises(checkpoint.CheckpointError, match="version"):
        checkpoint.decode(bytes(bumped))
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.decode(b"XXXX" + data[4:])


def test_encode_decode_exact():
    rng = np.random.default_rng(0)
    tensors = {"a": rng.standard_normal((3, 4, 5)), "b": np.array([np.pi]), "c": np.zeros((0,))}
    header, back = checkpoint.decode(checkpoint.encode({"k": [1, 2]}, tensors))
    assert header == {"k": [1, 2]}
    for k, v in tensors.items():
        np.testing.assert_array_equal(back[k], v)
