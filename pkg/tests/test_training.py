"""Optimizer, data sources, training loop, and checkpoint format."""

import numpy as np
import pytest

from ecgdelin import autodiff as ad
from ecgdelin.augment import AugmentationConfig
from ecgdelin.errors import ConfigError, DataFormatError, TrainingDiverged
from ecgdelin.evaluation import normalize_input
from ecgdelin.network import NetworkConfig, build, forward
from ecgdelin.records import DelineationMask, EcgRecord
from ecgdelin.synth import GenerationConfig, SyntheticGenerator
from ecgdelin.training import (
    LOG_HEADER,
    Adam,
    MixedSource,
    RealSource,
    SyntheticSource,
    TrainerConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    write_loss_log,
)


class _ConstSource:
    """Deterministic batches with a recognizable constant signal value."""

    def __init__(self, value: float, length: int = 32):
        self.value = value
        self.length = length
        self.calls = 0

    def batch(self, batch_size, rng):
        self.calls += 1
        x = np.full((batch_size, 1, self.length), self.value)
        y = np.zeros((batch_size, 3, self.length))
        y[:, 1, 8:16] = 1.0
        return x, y


class _NaNAfter:
    """Yields clean batches, then NaN signals from call ``after`` onward."""

    def __init__(self, after: int):
        self.after = after
        self.calls = 0

    def batch(self, batch_size, rng):
        self.calls += 1
        x = rng.standard_normal((batch_size, 1, 32))
        if self.calls > self.after:
            x = x + np.nan
        y = np.zeros((batch_size, 3, 32))
        y[:, 0, 2:6] = 1.0
        return x, y


@pytest.fixture(scope="module")
def generator(pool, amplitude_model):
    cfg = GenerationConfig(target_length=256, rng_seed=77)
    return SyntheticGenerator(pool, amplitude_model, cfg)


class TestTrainerConfig:
    def test_defaults_valid(self):
        cfg = TrainerConfig()
        assert cfg.seed == 123456 and cfg.batch_size == 16

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainerConfig(learning_rate=0.0)
        with pytest.raises(ConfigError):
            TrainerConfig(beta2=1.0)
        with pytest.raises(ConfigError):
            TrainerConfig(batch_size=0)
        with pytest.raises(ConfigError):
            TrainerConfig(w_f1=-0.5)
        with pytest.raises(ConfigError):
            TrainerConfig(data_mix="mixed")


class TestAdam:
    def test_matches_reference_updates(self):
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        p = ad.parameter(np.array([1.0, -2.0]))
        opt = Adam([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
        grads = [np.array([0.5, -1.0]), np.array([-0.25, 2.0]), np.array([1.0, 1.0])]

        ref = np.array([1.0, -2.0])
        m = np.zeros(2)
        v = np.zeros(2)
        for t, g in enumerate(grads, start=1):
            p.grad = g.copy()
            opt.step()
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            ref = ref - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
            assert np.allclose(p.data, ref, atol=1e-15), t

    def test_skips_parameters_without_grad(self):
        p = ad.parameter(np.array([1.0]))
        opt = Adam([p])
        opt.step()
        assert p.data == pytest.approx([1.0])

    def test_zero_grad(self):
        p = ad.parameter(np.array([1.0]))
        p.grad = np.array([2.0])
        Adam([p]).zero_grad()
        assert p.grad is None


class TestSources:
    def test_synthetic_source_shapes_and_normalization(self, generator):
        src = SyntheticSource(generator, input_length=128)
        x, y = src.batch(3, np.random.default_rng(0))
        assert x.shape == (3, 1, 128) and y.shape == (3, 3, 128)
        assert y.dtype == np.float64 and set(np.unique(y)) <= {0.0, 1.0}
        rec = generator.record(0)
        expected = normalize_input(rec.signal.signal[0][:128])
        assert np.array_equal(x[0, 0], expected)

    def test_synthetic_source_advances_cursor(self, generator):
        src = SyntheticSource(generator, input_length=128)
        a, _ = src.batch(2, np.random.default_rng(0))
        b, _ = src.batch(2, np.random.default_rng(0))
        assert not np.array_equal(a, b)
        assert src.cursor == 4

    def test_synthetic_source_pads_short_records(self, pool, amplitude_model):
        gen = SyntheticGenerator(
            pool, amplitude_model, GenerationConfig(target_length=100, rng_seed=1))
        src = SyntheticSource(gen, input_length=160)
        x, y = src.batch(1, np.random.default_rng(0))
        assert x.shape[-1] == 160 and not y[:, :, 100:].any()

    def test_synthetic_source_augmentation_changes_signal_only(self, generator):
        aug = AugmentationConfig(white_noise=True, snr_db=10.0)
        plain = SyntheticSource(generator, input_length=128)
        noisy = SyntheticSource(generator, input_length=128, augmentation=aug)
        xa, ya = plain.batch(2, np.random.default_rng(5))
        xb, yb = noisy.batch(2, np.random.default_rng(5))
        assert not np.array_equal(xa, xb)
        assert np.array_equal(ya, yb)

    def test_real_source_window_and_mask_alignment(self, corpus):
        record, fids = corpus[0]
        from ecgdelin.records import mask_from_fiducials
        mask = mask_from_fiducials(fids, record.n_samples)
        n = record.n_samples  # exactly one full-length window
        src = RealSource([(record, mask)], input_length=n)
        x, y = src.batch(1, np.random.default_rng(0))
        assert np.array_equal(x[0, 0], normalize_input(record.signal[0]))
        assert np.array_equal(y[0].astype(bool), mask.data)

    def test_real_source_pads_short_records(self):
        rec = EcgRecord("r", 250.0, ("a",), np.ones((1, 50)))
        mask = DelineationMask.zeros(50)
        src = RealSource([(rec, mask)], input_length=64)
        x, y = src.batch(2, np.random.default_rng(0))
        assert x.shape == (2, 1, 64) and y.shape == (2, 3, 64)

    def test_real_source_requires_records(self):
        with pytest.raises(ConfigError):
            RealSource([], input_length=64)

    def test_mixed_source_fraction_extremes(self):
        first, second = _ConstSource(1.0), _ConstSource(2.0)
        all_first = MixedSource(first, second, first_fraction=1.0)
        x, _ = all_first.batch(4, np.random.default_rng(0))
        assert np.all(x == 1.0)
        all_second = MixedSource(first, second, first_fraction=0.0)
        x, _ = all_second.batch(4, np.random.default_rng(0))
        assert np.all(x == 2.0)

    def test_mixed_source_batch_size_preserved(self):
        src = MixedSource(_ConstSource(1.0), _ConstSource(2.0), first_fraction=0.5)
        x, y = src.batch(9, np.random.default_rng(3))
        assert x.shape[0] == 9 and y.shape[0] == 9
        assert set(np.unique(x)) <= {1.0, 2.0}

    def test_mixed_source_bad_fraction(self):
        with pytest.raises(ConfigError):
            MixedSource(_ConstSource(1.0), _ConstSource(2.0), first_fraction=1.5)


class TestTrainLoop:
    def _run(self, steps=3, epochs=1, source=None, **kw):
        trainer = TrainerConfig(batch_size=2, steps_per_epoch=steps, epochs=epochs,
                                input_length=32, seed=9, **kw)
        net = NetworkConfig(depth=2, start_channels=2)
        return train(trainer, net, source or _ConstSource(0.5))

    def test_log_row_per_step(self):
        res = self._run(steps=3, epochs=2)
        assert len(res.log) == 6
        assert [r[:2] for r in res.log] == [
            (0, 0), (0, 1), (0, 2), (1, 3), (1, 4), (1, 5)]

    def test_total_is_weighted_sum_of_components(self):
        res = self._run(steps=2, w_boundary=0.3, w_f1=0.2)
        for _, _, total, d, b, f in res.log:
            assert total == pytest.approx(1.0 * d + 0.3 * b + 0.2 * f, rel=1e-12)

    def test_all_components_logged_even_when_unweighted(self):
        res = self._run(steps=1)  # boundary and f1 weights default to zero
        _, _, total, d, b, f = res.log[0]
        assert total == pytest.approx(d)
        assert b > 0.0 and f >= 0.0

    def test_on_step_callback(self):
        seen = []
        trainer = TrainerConfig(batch_size=2, steps_per_epoch=2, epochs=1,
                                input_length=32, seed=9)
        net = NetworkConfig(depth=2, start_channels=2)
        res = train(trainer, net, _ConstSource(0.5), on_step=seen.append)
        assert seen == res.log

    def test_deterministic_given_seed(self):
        a = self._run(steps=3)
        b = self._run(steps=3)
        assert a.log == b.log
        for name in a.params.tensors:
            assert np.array_equal(a.params.tensors[name].data,
                                  b.params.tensors[name].data)

    def test_warm_start_uses_given_params(self):
        net = NetworkConfig(depth=2, start_channels=2)
        params = build(net, np.random.default_rng(1))
        trainer = TrainerConfig(batch_size=2, steps_per_epoch=1, epochs=1,
                                input_length=32, seed=9)
        res = train(trainer, net, _ConstSource(0.5), params=params)
        assert res.params is params

    def test_divergence_carries_last_good_state(self):
        src = _NaNAfter(after=2)
        with pytest.raises(TrainingDiverged) as exc_info:
            self._run(steps=5, source=src)
        err = exc_info.value
        assert len(err.log) == 2  # two clean steps completed
        assert err.params is not None
        for t in err.params.tensors.values():
            assert np.all(np.isfinite(t.data))

    def test_divergence_on_first_step(self):
        with pytest.raises(TrainingDiverged) as exc_info:
            self._run(steps=2, source=_NaNAfter(after=0))
        assert exc_info.value.log == []

    def test_loss_decreases_on_trivial_task(self):
        res = self._run(steps=60, learning_rate=0.01)
        first = np.mean([r[2] for r in res.log[:5]])
        last = np.mean([r[2] for r in res.log[-5:]])
        assert last < first


class TestLossLog:
    def test_write_format(self, tmp_path):
        rows = [(0, 0, 0.5, 0.4, 0.3, 0.2), (0, 1, 0.25, 0.2, 0.15, 0.1)]
        path = tmp_path / "log.csv"
        write_loss_log(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == LOG_HEADER
        assert lines[1] == "0,0,0.5,0.4,0.3,0.2"
        parsed = [float(v) for v in lines[2].split(",")]
        assert parsed == [0, 1, 0.25, 0.2, 0.15, 0.1]


class TestCheckpoints:
    def _params(self, **kw):
        return build(NetworkConfig(depth=2, start_channels=2, **kw),
                     np.random.default_rng(4))

    def test_round_trip_float32(self, tmp_path):
        params = self._params(use_eca=True)
        path = tmp_path / "c.ckpt"
        save_checkpoint(params, path, step=12, seed=99, extra={"note": "x"})
        loaded, manifest = load_checkpoint(path)
        assert manifest["step"] == 12 and manifest["seed"] == 99
        assert manifest["extra"] == {"note": "x"}
        assert loaded.config == params.config
        for name, t in params.tensors.items():
            lt = loaded.tensors[name]
            assert lt.requires_grad == t.requires_grad
            assert lt.data.dtype == np.float64
            assert np.array_equal(lt.data, t.data.astype("<f4").astype(np.float64))

    def test_predictions_survive_round_trip(self, tmp_path):
        params = self._params()
        path = tmp_path / "c.ckpt"
        save_checkpoint(params, path)
        loaded, _ = load_checkpoint(path)
        x = np.random.default_rng(0).standard_normal((1, 1, 32))
        a = forward(params, x).data
        b = forward(loaded, x).data
        assert np.allclose(a, b, atol=1e-5)

    def test_manifest_is_readable_json_line(self, tmp_path):
        import json
        params = self._params()
        path = tmp_path / "c.ckpt"
        save_checkpoint(params, path)
        first_line = path.read_bytes().split(b"\n", 1)[0]
        manifest = json.loads(first_line)
        assert manifest["version"] == 1
        assert {e["name"] for e in manifest["tensors"]} == set(params.tensors)

    def test_truncated_payload_rejected(self, tmp_path):
        params = self._params()
        path = tmp_path / "c.ckpt"
        save_checkpoint(params, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(DataFormatError):
            load_checkpoint(path)

    def test_wrong_version_rejected(self, tmp_path):
        path = tmp_path / "c.ckpt"
        path.write_bytes(b'{"version": 99}\n')
        with pytest.raises(DataFormatError):
            load_checkpoint(path)

    def test_missing_manifest_rejected(self, tmp_path):
        path = tmp_path / "c.ckpt"
        path.write_bytes(b"\x00\x01\x02")
        with pytest.raises(DataFormatError):
            load_checkpoint(path)
