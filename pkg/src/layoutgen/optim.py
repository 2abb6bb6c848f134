"""AdamW with linear warmup, plus labeled deterministic random streams."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


def seeded_rng(seed: int, label: str = "") -> np.random.Generator:
    """A generator that is a pure function of (seed, label).

    Distinct labels yield statistically independent streams; the label is
    hashed with SHA-256 so the mapping is stable across processes and runs.
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam with linear warmup on the learning rate.

    The effective rate at update ``n`` (1-based) is ``lr * min(1, n / warmup_steps)``,
    so the first update is strictly below the base rate whenever warmup_steps > 1.
    Weight decay is applied to the values, never folded into the gradients.
    """

    params: dict[str, Tensor]
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_steps: int = 1
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p.data))
            self.v.setdefault(name, np.zeros_like(p.data))

    def effective_lr(self, step: int) -> float:
        if self.warmup_steps <= 0:
            return self.lr
        return self.lr * min(1.0, step / self.warmup_steps)

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the lr used."""
        self.step_count += 1
        lr_t = self.effective_lr(self.step_count)
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr_t * update.astype(p.data.dtype, copy=False)
        return lr_t

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Flat view of the moment buffers for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.params:
            self.m[name] = tensors[f"opt.m.{name}"].astype(self.m[name].dtype)
            self.v[name] = tensors[f"opt.v.{name}"].astype(self.v[name].dtype)
        self.step_count = step_count
