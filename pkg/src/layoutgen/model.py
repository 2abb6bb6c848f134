"""Transformer denoiser: token fusion, relation-biased attention, per-kind heads.

The network predicts, for every attribute token, a categorical distribution
over that token's clean values (the MASK index is never in the output
support).  There is no explicit timestep input: the absorbing MASK token
itself carries how corrupted the input is, which is what lets mixed
precise/coarse/missing conditions share one forward pass.

Pairwise element relations enter attention as additive query/key bias vectors
looked up from two 9-row tables (one per side), applied before the scaled dot
product.  Token pairs inherit the label of their parent elements; tokens of
the same element use the "unavailable" row, which is zero-initialized so an
empty relation map reproduces vanilla attention at init.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import (
    KIND_ORDER,
    TOKENS_PER_ELEMENT,
    AttrKind,
    RelationLabel,
    TokenSequence,
)
from .diffusion import TransitionStack
from .errors import DegenerateInputError, ShapeError
from .optim import seeded_rng

RELATION_INDEX = {label: i for i, label in enumerate(RelationLabel)}
N_RELATION_LABELS = len(RELATION_INDEX)
UNAVAILABLE_INDEX = RELATION_INDEX[RelationLabel.UNAVAILABLE]

INIT_SCALE = 0.02


@dataclass(frozen=True)
class ModelConfig:
    """Denoiser dimensions; ``bins`` holds the clean vocabulary size per kind
    in canonical order [category, x, y, w, h]."""

    bins: tuple[int, int, int, int, int]
    d_model: int = 256
    n_heads: int = 8
    n_layers: int = 8
    d_ffn: int = 2048
    n_max: int = 25

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ShapeError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def k(self, kind: AttrKind) -> int:
        return self.bins[int(kind)]

    def to_dict(self) -> dict:
        return {
            "bins": list(self.bins),
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "d_ffn": self.d_ffn,
            "n_max": self.n_max,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(
            bins=tuple(doc["bins"]),
            d_model=doc["d_model"],
            n_heads=doc["n_heads"],
            n_layers=doc["n_layers"],
            d_ffn=doc["d_ffn"],
            n_max=doc["n_max"],
        )


def token_relation_ids(
    relations: Mapping[tuple[int, int], RelationLabel], n_elements: int
) -> np.ndarray:
    """Expand element-pair labels to all token pairs of those elements."""
    el = np.full((n_elements, n_elements), UNAVAILABLE_INDEX, dtype=np.int64)
    for (i, j), label in relations.items():
        el[i, j] = RELATION_INDEX[label]
    reps = TOKENS_PER_ELEMENT
    return np.repeat(np.repeat(el, reps, axis=0), reps, axis=1)


class TransformerTrunk:
    """Pre-norm residual blocks with relation-biased multi-head attention.

    Creates its parameters inside the caller's param dict under ``prefix`` so
    several models (denoiser, feature extractor) can share the implementation.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        prefix: str,
        d_model: int,
        n_heads: int,
        n_layers: int,
        d_ffn: int,
        rng: np.random.Generator,
        dtype,
    ):
        self.params = params
        self.prefix = prefix
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.d_ffn = d_ffn
        d_head = d_model // n_heads

        def param(name, shape, init="normal"):
            if init == "normal":
                data = rng.normal(0.0, INIT_SCALE, size=shape)
            elif init == "zeros":
                data = np.zeros(shape)
            elif init == "ones":
                data = np.ones(shape)
            else:
                raise ValueError(init)
            t = Tensor(data.astype(dtype), requires_grad=True, name=f"{prefix}{name}")
            params[f"{prefix}{name}"] = t
            return t

        rel_q = rng.normal(0.0, INIT_SCALE, size=(N_RELATION_LABELS, d_head))
        rel_k = rng.normal(0.0, INIT_SCALE, size=(N_RELATION_LABELS, d_head))
        rel_q[UNAVAILABLE_INDEX] = 0.0
        rel_k[UNAVAILABLE_INDEX] = 0.0
        params[f"{prefix}rel.q"] = Tensor(
            rel_q.astype(dtype), requires_grad=True, name=f"{prefix}rel.q"
        )
        params[f"{prefix}rel.k"] = Tensor(
            rel_k.astype(dtype), requires_grad=True, name=f"{prefix}rel.k"
        )

        for layer in range(n_layers):
            p = f"layer{layer}."
            param(p + "ln1.gamma", (d_model,), "ones")
            param(p + "ln1.beta", (d_model,), "zeros")
            for side in ("q", "k", "v", "o"):
                param(p + f"attn.w{side}", (d_model, d_model))
                param(p + f"attn.b{side}", (d_model,), "zeros")
            param(p + "ln2.gamma", (d_model,), "ones")
            param(p + "ln2.beta", (d_model,), "zeros")
            param(p + "ffn.w1", (d_model, d_ffn))
            param(p + "ffn.b1", (d_ffn,), "zeros")
            param(p + "ffn.w2", (d_ffn, d_model))
            param(p + "ffn.b2", (d_model,), "zeros")
        param("final_ln.gamma", (d_model,), "ones")
        param("final_ln.beta", (d_model,), "zeros")

    def _p(self, name: str) -> Tensor:
        return self.params[f"{self.prefix}{name}"]

    def _heads(self, x: Tensor, n: int) -> Tensor:
        d_head = self.d_model // self.n_heads
        return ad.transpose(ad.reshape(x, (n, self.n_heads, d_head)), (1, 0, 2))

    def _attention(self, x: Tensor, rel_ids: np.ndarray, layer: int) -> Tensor:
        n = x.shape[0]
        p = f"layer{layer}."
        d_head = self.d_model // self.n_heads
        q = self._heads(ad.matmul(x, self._p(p + "attn.wq")) + self._p(p + "attn.bq"), n)
        k = self._heads(ad.matmul(x, self._p(p + "attn.wk")) + self._p(p + "attn.bk"), n)
        v = self._heads(ad.matmul(x, self._p(p + "attn.wv")) + self._p(p + "attn.bv"), n)

        scores = ad.matmul(q, ad.transpose(k, (0, 2, 1)))  # (h, n, n)
        rel_q = self._p("rel.q")
        rel_k = self._p("rel.k")
        idx = np.broadcast_to(rel_ids, (self.n_heads, n, n))
        # (x_i Wq) . Vk[rel]: project queries onto every label vector, then pick.
        g2 = ad.matmul(q, ad.transpose(rel_k, (1, 0)))  # (h, n, 9)
        scores = scores + ad.take_along(g2, idx, axis=2)
        # Vq[rel] . (x_j Wk): same per-label trick on the key side.
        g3 = ad.transpose(ad.matmul(k, ad.transpose(rel_q, (1, 0))), (0, 2, 1))  # (h, 9, n)
        scores = scores + ad.take_along(g3, idx, axis=1)
        # Vq[rel] . Vk[rel], a per-label scalar.
        g4 = ad.sum_(ad.mul(rel_q, rel_k), axis=1)  # (9,)
        scores = scores + ad.gather(g4, rel_ids)

        attn = ad.softmax(ad.mul(scores, 1.0 / math.sqrt(d_head)), axis=-1)
        out = ad.matmul(attn, v)  # (h, n, d_head)
        out = ad.reshape(ad.transpose(out, (1, 0, 2)), (n, self.d_model))
        return ad.matmul(out, self._p(p + "attn.wo")) + self._p(p + "attn.bo")

    def __call__(self, x: Tensor, rel_ids: np.ndarray) -> Tensor:
        n = x.shape[0]
        if rel_ids.shape != (n, n):
            raise ShapeError(f"rel_ids shape {rel_ids.shape} does not match {n} tokens")
        h = x
        for layer in range(self.n_layers):
            p = f"layer{layer}."
            normed = ad.layer_norm(h, self._p(p + "ln1.gamma"), self._p(p + "ln1.beta"))
            h = h + self._attention(normed, rel_ids, layer)
            normed = ad.layer_norm(h, self._p(p + "ln2.gamma"), self._p(p + "ln2.beta"))
            ff = ad.gelu(ad.matmul(normed, self._p(p + "ffn.w1")) + self._p(p + "ffn.b1"))
            h = h + ad.matmul(ff, self._p(p + "ffn.w2")) + self._p(p + "ffn.b2")
        return ad.layer_norm(h, self._p("final_ln.gamma"), self._p("final_ln.beta"))


@dataclass
class DenoiserOutput:
    """Per-kind clean-value distributions, rows aligned with element order."""

    probs: dict[AttrKind, Tensor]  # (N, K_kind)
    log_probs: dict[AttrKind, Tensor]

    def token_probs(self, position: int) -> np.ndarray:
        """Probability vector for the token at a canonical sequence position."""
        kind = KIND_ORDER[position % TOKENS_PER_ELEMENT]
        return self.probs[kind].data[position // TOKENS_PER_ELEMENT]


class Denoiser:
    """The generator network; parameters live in ``self.params`` by path name."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = seeded_rng(seed, "model-init")
        self.params: dict[str, Tensor] = {}

        def param(name, shape, init="normal"):
            if init == "normal":
                data = rng.normal(0.0, INIT_SCALE, size=shape)
            else:
                data = np.zeros(shape)
            t = Tensor(data.astype(dtype), requires_grad=True, name=name)
            self.params[name] = t
            return t

        for kind in KIND_ORDER:
            # One extra embedding row per kind for the absorbing MASK value.
            param(f"emb.value.{kind.name.lower()}", (cfg.k(kind) + 1, cfg.d_model))
        param("emb.kind", (TOKENS_PER_ELEMENT, cfg.d_model))
        param("emb.pos", (cfg.n_max, cfg.d_model))
        param("emb.flag", (2, cfg.d_model))

        self.trunk = TransformerTrunk(
            self.params,
            "",
            cfg.d_model,
            cfg.n_heads,
            cfg.n_layers,
            cfg.d_ffn,
            rng,
            dtype,
        )
        for kind in KIND_ORDER:
            param(f"head.{kind.name.lower()}.w", (cfg.d_model, cfg.k(kind)))
            param(f"head.{kind.name.lower()}.b", (cfg.k(kind),), "zeros")

    def embed_tokens(
        self, values: np.ndarray, flags: np.ndarray, element_indices: np.ndarray
    ) -> Tensor:
        """Sum-fuse value, kind, element-position, and condition-flag embeddings."""
        n_tokens = len(values)
        if n_tokens % TOKENS_PER_ELEMENT != 0:
            raise ShapeError(f"token count {n_tokens} not divisible by {TOKENS_PER_ELEMENT}")
        if np.any(element_indices >= self.cfg.n_max):
            raise ShapeError(f"element index beyond n_max={self.cfg.n_max}")
        per_kind = []
        for kind in KIND_ORDER:
            vals = values[int(kind) :: TOKENS_PER_ELEMENT]
            if np.any(vals > self.cfg.k(kind)) or np.any(vals < 0):
                raise ShapeError(f"{kind.name} token value outside [0, {self.cfg.k(kind)}]")
            per_kind.append(ad.gather(self.params[f"emb.value.{kind.name.lower()}"], vals))
        n_el = n_tokens // TOKENS_PER_ELEMENT
        fused = ad.reshape(ad.stack(per_kind, axis=1), (n_tokens, self.cfg.d_model))
        kind_ids = np.tile(np.arange(TOKENS_PER_ELEMENT), n_el)
        fused = fused + ad.gather(self.params["emb.kind"], kind_ids)
        fused = fused + ad.gather(self.params["emb.pos"], element_indices)
        fused = fused + ad.gather(self.params["emb.flag"], flags)
        return fused

    def forward_arrays(
        self,
        values: np.ndarray,
        flags: np.ndarray,
        element_indices: np.ndarray,
        rel_ids: np.ndarray,
    ) -> DenoiserOutput:
        n_tokens = len(values)
        if n_tokens > TOKENS_PER_ELEMENT * self.cfg.n_max:
            raise ShapeError(f"sequence of {n_tokens} tokens exceeds n_max={self.cfg.n_max}")
        h = self.trunk(self.embed_tokens(values, flags, element_indices), rel_ids)
        probs: dict[AttrKind, Tensor] = {}
        log_probs: dict[AttrKind, Tensor] = {}
        for kind in KIND_ORDER:
            rows = ad.gather(h, np.arange(int(kind), n_tokens, TOKENS_PER_ELEMENT))
            name = kind.name.lower()
            logits = ad.matmul(rows, self.params[f"head.{name}.w"]) + self.params[f"head.{name}.b"]
            probs[kind] = ad.softmax(logits, axis=-1)
            log_probs[kind] = ad.log_softmax(logits, axis=-1)
        return DenoiserOutput(probs=probs, log_probs=log_probs)

    def forward_x0(self, seq: TokenSequence) -> DenoiserOutput:
        values = np.array(seq.values(), dtype=np.int64)
        flags = np.array(seq.flags(), dtype=np.int64)
        element_indices = np.array([t.element_index for t in seq.tokens], dtype=np.int64)
        rel_ids = token_relation_ids(seq.relations, seq.n_elements)
        return self.forward_arrays(values, flags, element_indices, rel_ids)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def reverse_distribution(
    p_x0: np.ndarray, x_t: int, t: int, stack: TransitionStack
) -> np.ndarray:
    """p(x_{t-1} | x_t) by mixing the analytic posterior over predicted clean values.

    Reduces to the exact posterior when ``p_x0`` is a one-hot vector.  Raises
    when every mixture component has zero forward mass for this x_t.
    """
    m = stack.posterior_matrix(x_t, t)  # (K+1, K)
    out = m @ np.asarray(p_x0, dtype=np.float64)
    total = out.sum()
    if total <= 0.0:
        raise DegenerateInputError(
            f"no clean value can explain x_t={x_t} at t={t}; reverse distribution undefined"
        )
    return out / total
