"""Training determinism, checkpoint round trips, and resume equivalence."""
import numpy as np
import pytest

from layoutgen.core import AttrKind, tokenize
from layoutgen.errors import (
    CheckpointIntegrityError,
    CheckpointVersionError,
    DataError,
)
from layoutgen.train import (
    TrainConfig,
    Trainer,
    load_checkpoint,
    resume_trainer,
    save_checkpoint,
)

from conftest import random_layout, small_quantizer

TINY = dict(
    T=5,
    lam=0.1,
    batch=4,
    lr=1e-3,
    warmup_proportion=0.1,
    total_steps=40,
    seed=11,
    d_model=16,
    n_heads=2,
    n_layers=1,
    d_ffn=32,
    n_max=6,
    n_categories=4,
    coord_bins=8,
    val_every=0,
)


def tiny_corpus(n=16, seed=0):
    cfg = small_quantizer(n_categories=4, bins=8)
    rng = np.random.default_rng(seed)
    return [random_layout(rng, cfg, int(rng.integers(2, 4))) for _ in range(n)]


class TestTrainer:
    def test_bitwise_determinism(self):
        corpus = tiny_corpus()
        a = Trainer(TrainConfig(**TINY), corpus)
        b = Trainer(TrainConfig(**TINY), corpus)
        for _ in range(3):
            ra = a.train_step()
            rb = b.train_step()
            assert ra.breakdown.l_total == rb.breakdown.l_total
        for name in a.model.params:
            assert np.array_equal(a.model.params[name].data, b.model.params[name].data)

    def test_gradients_finite_after_first_step(self):
        trainer = Trainer(TrainConfig(**TINY), tiny_corpus())
        trainer.train_step()
        norms = [np.linalg.norm(p.grad) for p in trainer.model.params.values()]
        assert all(np.isfinite(n) for n in norms)

    def test_loss_moves_downward_on_tiny_run(self):
        trainer = Trainer(TrainConfig(**TINY), tiny_corpus())
        history = trainer.run(40)
        first = np.mean([r.breakdown.l_total for r in history[:5]])
        last = np.mean([r.breakdown.l_total for r in history[-5:]])
        assert last < first

    def test_empty_corpus_rejected(self):
        with pytest.raises(DataError):
            Trainer(TrainConfig(**TINY), [])

    def test_validation_tracks_best(self):
        cfg = TrainConfig(**{**TINY, "val_every": 10})
        corpus = tiny_corpus()
        trainer = Trainer(cfg, corpus, val_corpus=corpus[:4])
        trainer.run(20)
        assert trainer.best_val is not None
        assert trainer.best_params is not None


class TestTrainConfig:
    def test_json_roundtrip(self):
        cfg = TrainConfig(**TINY)
        assert TrainConfig.from_json(cfg.to_json()) == cfg

    def test_unknown_field_rejected(self):
        with pytest.raises(DataError):
            TrainConfig.from_json({"learning_rate": 1.0})


class TestCheckpoint:
    def test_forward_outputs_identical_after_roundtrip(self, tmp_path):
        corpus = tiny_corpus()
        trainer = Trainer(TrainConfig(**TINY), corpus)
        trainer.run(3)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, trainer.model, trainer.opt, step=trainer.step,
                        train_config=trainer.cfg)
        loaded = load_checkpoint(path)
        seq = tokenize(corpus[0])
        a = trainer.model.forward_x0(seq)
        b = loaded.model.forward_x0(seq)
        for kind in AttrKind:
            assert np.array_equal(a.probs[kind].data, b.probs[kind].data)

    def test_version_bump_refused(self, tmp_path):
        trainer = Trainer(TrainConfig(**TINY), tiny_corpus())
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, trainer.model)
        raw = bytearray(path.read_bytes())
        # bump "format_version": 1 inside the manifest json
        idx = raw.find(b'"format_version": 1')
        raw[idx + len(b'"format_version": ')] = ord("9")
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        trainer = Trainer(TrainConfig(**TINY), tiny_corpus())
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, trainer.model)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 200])
        with pytest.raises(CheckpointIntegrityError):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"definitely not a container")
        with pytest.raises(CheckpointIntegrityError):
            load_checkpoint(path)

    def test_manifest_hash_stable(self, tmp_path):
        trainer = Trainer(TrainConfig(**TINY), tiny_corpus())
        h1 = save_checkpoint(tmp_path / "a.ckpt", trainer.model)
        h2 = save_checkpoint(tmp_path / "b.ckpt", trainer.model)
        assert h1 == h2
        assert load_checkpoint(tmp_path / "a.ckpt").version_hash == h1


class TestResume:
    def test_resume_equals_uninterrupted_run(self, tmp_path):
        corpus = tiny_corpus()
        straight = Trainer(TrainConfig(**TINY), corpus)
        straight.run(5)

        partial = Trainer(TrainConfig(**TINY), corpus)
        partial.run(3)
        path = tmp_path / "step3.ckpt"
        save_checkpoint(path, partial.model, partial.opt, step=partial.step,
                        train_config=partial.cfg)

        resumed = resume_trainer(path, corpus)
        assert resumed.step == 3
        records = resumed.run(2)
        assert records[-1].step == 5
        for name in straight.model.params:
            assert np.array_equal(
                straight.model.params[name].data, resumed.model.params[name].data
            ), name

    def test_resume_without_train_config_rejected(self, tmp_path):
        trainer = Trainer(TrainConfig(**TINY), tiny_corpus())
        path = tmp_path / "bare.ckpt"
        save_checkpoint(path, trainer.model)
        with pytest.raises(CheckpointIntegrityError):
            resume_trainer(path, tiny_corpus())
