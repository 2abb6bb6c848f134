"""Training loop, configuration, and the binary checkpoint container.

Every source of randomness in a step is drawn from a stream keyed by
(seed, step index), so training is bit-reproducible at a fixed thread count
and a run resumed from a checkpoint at step k continues exactly like the
uninterrupted run.

Checkpoint container layout: magic ``LGCK``, little-endian uint32 manifest
length, UTF-8 JSON manifest, then raw little-endian float32 tensor payloads
in manifest order.  The manifest carries the format version, model config,
tensor table (name/shape/offset), and training extras (step, optimizer
counters, train config).
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import backward
from .core import AttrKind, Layout, QuantizerConfig, TokenSequence, tokenize
from .diffusion import (
    CorruptionStrategy,
    DecouplingLevel,
    Schedule,
    StackSet,
    build_stack_set,
    corrupt,
    noise_from_name,
    plan_corruption,
)
from .errors import CheckpointIntegrityError, CheckpointVersionError, DataError
from .losses import LossBreakdown, loss_terms, reduce_terms
from .model import Denoiser, ModelConfig
from .optim import AdamW, seeded_rng

CHECKPOINT_MAGIC = b"LGCK"
CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    """Training hyperparameters; JSON config files mirror these field names."""

    T: int = 100
    lam: float = 0.1
    batch: int = 128
    lr: float = 5e-5
    warmup_proportion: float = 0.1
    total_steps: int = 10_000
    seed: int = 0
    strategy: str = "ParallelDecoupled"
    level: str = "TypeGroup"
    select_prob: float = 0.9
    category_noise: str = "Uniform"
    geometry_noise: str = "DiscretizedGaussian"
    weight_decay: float = 0.01
    val_every: int = 500
    d_model: int = 256
    n_heads: int = 8
    n_layers: int = 8
    d_ffn: int = 2048
    n_max: int = 25
    n_categories: int = 5
    coord_bins: int = 128

    def __post_init__(self):
        if self.strategy not in {s.value for s in CorruptionStrategy}:
            raise DataError(f"unknown corruption strategy {self.strategy!r}")
        if self.level not in {l.value for l in DecouplingLevel}:
            raise DataError(f"unknown decoupling level {self.level!r}")
        for name in (self.category_noise, self.geometry_noise):
            try:
                noise_from_name(name)
            except ValueError as exc:
                raise DataError(str(exc)) from exc

    def quantizer(self) -> QuantizerConfig:
        b = self.coord_bins
        return QuantizerConfig(self.n_categories, b, b, b, b)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            bins=(self.n_categories,) + (self.coord_bins,) * 4,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            d_ffn=self.d_ffn,
            n_max=self.n_max,
        )

    def schedule(self) -> Schedule:
        return Schedule(T=self.T)

    def stacks(self) -> StackSet:
        bins = {k: self.model_config().k(k) for k in AttrKind}
        return build_stack_set(
            bins,
            self.schedule(),
            category_noise=noise_from_name(self.category_noise),
            geometry_noise=noise_from_name(self.geometry_noise),
        )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise DataError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class StepRecord:
    step: int
    breakdown: LossBreakdown
    lr: float

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "l_vlb": self.breakdown.l_vlb,
            "l_rec": self.breakdown.l_rec,
            "l_total": self.breakdown.l_total,
            "lr": self.lr,
        }


class Trainer:
    """Owns the model, optimizer, and corruption machinery for one run."""

    def __init__(
        self,
        cfg: TrainConfig,
        corpus: Sequence[Layout],
        val_corpus: Sequence[Layout] = (),
        model: Denoiser | None = None,
        dtype=np.float32,
    ):
        if not corpus:
            raise DataError("training corpus is empty")
        self.cfg = cfg
        self.corpus = list(corpus)
        self.val_corpus = list(val_corpus)
        self.stacks = cfg.stacks()
        self.model = model or Denoiser(cfg.model_config(), seed=cfg.seed, dtype=dtype)
        warmup = max(1, round(cfg.warmup_proportion * cfg.total_steps))
        self.opt = AdamW(
            self.model.params,
            lr=cfg.lr,
            weight_decay=cfg.weight_decay,
            warmup_steps=warmup,
        )
        self.step = 0
        self.strategy = CorruptionStrategy(cfg.strategy)
        self.level = DecouplingLevel(cfg.level)
        self._sequences = [tokenize(l) for l in self.corpus]
        self.best_val: float | None = None
        self.best_params: dict[str, np.ndarray] | None = None

    def _terms_for(self, seq: TokenSequence, rng: np.random.Generator):
        plan = plan_corruption(
            seq, self.strategy, self.level, self.cfg.T, rng, select_prob=self.cfg.select_prob
        )
        corrupted = corrupt(seq, plan, self.stacks, rng)
        output = self.model.forward_x0(corrupted)
        return loss_terms(seq, corrupted, plan, output, self.stacks)

    def train_step(self) -> StepRecord:
        self.step += 1
        rng = seeded_rng(self.cfg.seed, f"step-{self.step}")
        idx = rng.integers(0, len(self.corpus), size=self.cfg.batch)
        terms = [self._terms_for(self._sequences[i], rng) for i in idx]
        total, breakdown = reduce_terms(terms, self.cfg.lam)
        self.model.zero_grad()
        backward(total)
        lr = self.opt.step()
        return StepRecord(self.step, breakdown, lr)

    def validate(self) -> float:
        """Mean variational-bound loss over the validation split under a fixed
        corruption draw, for comparable numbers across calls."""
        if not self.val_corpus:
            return float("nan")
        rng = seeded_rng(self.cfg.seed, "validation")
        terms = [self._terms_for(tokenize(l), rng) for l in self.val_corpus]
        _, breakdown = reduce_terms(terms, self.cfg.lam)
        return breakdown.l_vlb

    def run(
        self,
        steps: int | None = None,
        on_step: Callable[[StepRecord], None] | None = None,
    ) -> list[StepRecord]:
        steps = steps if steps is not None else self.cfg.total_steps
        history = []
        for _ in range(steps):
            record = self.train_step()
            history.append(record)
            if on_step:
                on_step(record)
            if self.val_corpus and self.cfg.val_every and self.step % self.cfg.val_every == 0:
                score = self.validate()
                if self.best_val is None or score < self.best_val:
                    self.best_val = score
                    self.best_params = {
                        k: p.data.copy() for k, p in self.model.params.items()
                    }
        return history


# ---------------------------------------------------------------------------
# Checkpoints


def _tensor_payload(arrays: dict[str, np.ndarray]):
    table = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    return table, b"".join(chunks)


def save_checkpoint(
    path: str | Path,
    model: Denoiser,
    optimizer: AdamW | None = None,
    step: int = 0,
    train_config: TrainConfig | None = None,
) -> str:
    """Write the container and return the manifest hash (the model version)."""
    arrays: dict[str, np.ndarray] = {name: p.data for name, p in model.params.items()}
    extra: dict = {"step": step}
    if optimizer is not None:
        arrays.update(optimizer.state_tensors())
        extra["optimizer"] = {"step_count": optimizer.step_count}
    if train_config is not None:
        extra["train_config"] = train_config.to_json()
    table, payload = _tensor_payload(arrays)
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "vocab_sizes": {k.name.lower(): model.cfg.k(k) + 1 for k in AttrKind},
        "tensors": table,
        "extra": extra,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(manifest_bytes)))
        fh.write(manifest_bytes)
        fh.write(payload)
    return hashlib.sha256(manifest_bytes).hexdigest()


@dataclass
class LoadedCheckpoint:
    model: Denoiser
    manifest: dict
    version_hash: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return self.manifest["extra"].get("step", 0)

    def train_config(self) -> TrainConfig | None:
        doc = self.manifest["extra"].get("train_config")
        return TrainConfig.from_json(doc) if doc else None

    def restore_optimizer(self, opt: AdamW) -> None:
        state = self.manifest["extra"].get("optimizer")
        if state is None:
            raise CheckpointIntegrityError("checkpoint carries no optimizer state")
        opt.load_state_tensors(self.tensors, state["step_count"])


def load_checkpoint(path: str | Path, dtype=np.float32) -> LoadedCheckpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointIntegrityError(f"{path}: not a checkpoint container")
    (manifest_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + manifest_len:
        raise CheckpointIntegrityError(f"{path}: truncated manifest")
    manifest_bytes = raw[8 : 8 + manifest_len]
    try:
        manifest = json.loads(manifest_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"{path}: corrupt manifest") from exc
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {manifest.get('format_version')} unsupported "
            f"(this build reads version {CHECKPOINT_FORMAT_VERSION})"
        )
    payload = raw[8 + manifest_len :]
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        end = start + 4 * size
        if end > len(payload):
            raise CheckpointIntegrityError(f"{path}: truncated payload at {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(payload[start:end], dtype="<f4").reshape(
            entry["shape"]
        )

    cfg = ModelConfig.from_dict(manifest["model_config"])
    model = Denoiser(cfg, seed=0, dtype=dtype)
    for name, p in model.params.items():
        if name not in tensors:
            raise CheckpointIntegrityError(f"{path}: missing tensor {name}")
        p.data = tensors[name].astype(dtype)
    return LoadedCheckpoint(
        model=model,
        manifest=manifest,
        version_hash=hashlib.sha256(manifest_bytes).hexdigest(),
        tensors=tensors,
    )


def resume_trainer(
    path: str | Path,
    corpus: Sequence[Layout],
    val_corpus: Sequence[Layout] = (),
    dtype=np.float32,
) -> Trainer:
    """Rebuild a trainer mid-run; continues bit-exactly with the saved seed."""
    loaded = load_checkpoint(path, dtype=dtype)
    cfg = loaded.train_config()
    if cfg is None:
        raise CheckpointIntegrityError(f"{path}: checkpoint has no train config to resume from")
    trainer = Trainer(cfg, corpus, val_corpus, model=loaded.model, dtype=dtype)
    loaded.restore_optimizer(trainer.opt)
    trainer.step = loaded.step
    return trainer
