"""Layout quality metrics: MaxIoU, alignment, overlap, retention, and FID.

All geometry is evaluated on [0, 1]-normalized coordinates (bin / (K - 1)),
which makes alignment and overlap canvas-independent and leaves IoU
unchanged.  MaxIoU matches boxes within each category by maximum-weight
assignment; conditional evaluations pair each generated layout with its own
source, unconditional ones pair against the best-scoring reference that
shares the category multiset.

FID follows the corrupted-vs-real classifier recipe: a small transformer
encoder is trained to spot perturbed layouts and the 256-wide penultimate
activations feed a Frechet distance between Gaussian moment estimates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .autodiff import Tensor, backward
from .core import (
    GEOMETRY_KINDS,
    KIND_ORDER,
    TOKENS_PER_ELEMENT,
    AttrKind,
    AttributeStatus,
    AttributeValue,
    Element,
    Layout,
    QuantizerConfig,
    tokenize,
)
from .errors import DataError, ShapeError
from .model import TransformerTrunk, UNAVAILABLE_INDEX
from .optim import AdamW, seeded_rng

FEATURE_DIM = 256
FEATURE_D_MODEL = 128
FEATURE_LAYERS = 2
FEATURE_HEADS = 4
FEATURE_FFN = 256


@dataclass
class MetricReport:
    max_iou: float
    fid: float
    alignment: float
    overlap: float
    retention: float | None
    n_layouts: int

    def to_json(self) -> dict:
        return {
            "max_iou": self.max_iou,
            "fid": self.fid,
            "alignment": self.alignment,
            "overlap": self.overlap,
            "retention": self.retention,
            "n_layouts": self.n_layouts,
        }


# ---------------------------------------------------------------------------
# Geometry helpers


def _norm_boxes(layout: Layout, cfg: QuantizerConfig) -> np.ndarray:
    """(N, 4) array of [x, y, w, h] on the unit square."""
    rows = []
    for i, el in enumerate(layout.elements):
        vals = []
        for kind in GEOMETRY_KINDS:
            a = el.get(kind)
            k = cfg.bins(kind)
            if a.bin >= k:
                raise DataError(f"element {i} has a MASK {kind.name.lower()} bin")
            vals.append(a.bin / (k - 1))
        rows.append(vals)
    return np.asarray(rows, dtype=np.float64)


def _iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax1, ay1 = a[:, 0], a[:, 1]
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    ix = np.maximum(
        0.0, np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(ax1[:, None], bx1[None, :])
    )
    iy = np.maximum(
        0.0, np.minimum(ay2[:, None], by2[None, :]) - np.maximum(ay1[:, None], by1[None, :])
    )
    inter = ix * iy
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


# ---------------------------------------------------------------------------
# MaxIoU


def max_iou_pair(generated: Layout, reference: Layout, cfg: QuantizerConfig) -> float:
    """Category-wise optimal matching score, averaged over reference elements."""
    gen_boxes = _norm_boxes(generated, cfg)
    ref_boxes = _norm_boxes(reference, cfg)
    gen_cats = np.array([el.category.bin for el in generated.elements])
    ref_cats = np.array([el.category.bin for el in reference.elements])
    total = 0.0
    for cat in np.unique(ref_cats):
        g_idx = np.flatnonzero(gen_cats == cat)
        r_idx = np.flatnonzero(ref_cats == cat)
        if len(g_idx) == 0:
            continue
        ious = _iou_matrix(gen_boxes[g_idx], ref_boxes[r_idx])
        rows, cols = linear_sum_assignment(-ious)
        total += float(ious[rows, cols].sum())
    return total / len(reference.elements)


def _category_multiset(layout: Layout) -> tuple:
    return tuple(sorted(el.category.bin for el in layout.elements))


def max_iou(
    generated: Sequence[Layout],
    reference: Sequence[Layout],
    cfg: QuantizerConfig,
    pairing: str = "source",
) -> float:
    """Collection MaxIoU.

    ``source`` pairs generated[i] with reference[i] (conditional tasks);
    ``multiset`` pairs each generated layout with its best-scoring reference
    among those sharing the category multiset (unconditional generation),
    scoring 0 when no reference matches.
    """
    if not generated or not reference:
        raise DataError("max_iou needs non-empty collections")
    if pairing == "source":
        if len(generated) != len(reference):
            raise ShapeError("source pairing needs aligned collections")
        scores = [max_iou_pair(g, r, cfg) for g, r in zip(generated, reference)]
    elif pairing == "multiset":
        by_multiset: dict[tuple, list[Layout]] = {}
        for r in reference:
            by_multiset.setdefault(_category_multiset(r), []).append(r)
        scores = []
        for g in generated:
            candidates = by_multiset.get(_category_multiset(g), [])
            scores.append(
                max((max_iou_pair(g, r, cfg) for r in candidates), default=0.0)
            )
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# Alignment and overlap


def alignment(layout: Layout, cfg: QuantizerConfig) -> float:
    """Mean nearest-neighbour edge/center misalignment, scaled by 100.

    For each element, the distance to its best-aligned peer over six items
    (left, x-center, right, top, y-center, bottom); 0 when N < 2.
    """
    n = layout.n_elements
    if n < 2:
        return 0.0
    b = _norm_boxes(layout, cfg)
    items = np.stack(
        [
            b[:, 0],
            b[:, 0] + b[:, 2] / 2,
            b[:, 0] + b[:, 2],
            b[:, 1],
            b[:, 1] + b[:, 3] / 2,
            b[:, 1] + b[:, 3],
        ],
        axis=1,
    )  # (N, 6)
    diffs = np.abs(items[:, None, :] - items[None, :, :])  # (N, N, 6)
    diffs[np.arange(n), np.arange(n), :] = np.inf  # exclude self-comparisons
    per_element = diffs.min(axis=(1, 2))
    return float(100.0 / n * per_element.sum())


def overlap(layout: Layout, cfg: QuantizerConfig) -> float:
    """Mean pairwise intersection mass relative to each element's own area, x100."""
    n = layout.n_elements
    b = _norm_boxes(layout, cfg)
    areas = b[:, 2] * b[:, 3]
    total = 0.0
    for i in range(n):
        if areas[i] <= 0:
            continue
        for j in range(n):
            if i == j:
                continue
            ix = max(0.0, min(b[i, 0] + b[i, 2], b[j, 0] + b[j, 2]) - max(b[i, 0], b[j, 0]))
            iy = max(0.0, min(b[i, 1] + b[i, 3], b[j, 1] + b[j, 3]) - max(b[i, 1], b[j, 1]))
            total += ix * iy / areas[i]
    return float(100.0 / n * total)


# ---------------------------------------------------------------------------
# Retention


def retention(input_layout: Layout, output_layout: Layout) -> float | None:
    """Percentage of precise input attributes reproduced bit-exactly, or None
    when the input carried no precise attribute."""
    if input_layout.n_elements != output_layout.n_elements:
        raise ShapeError("retention needs aligned element lists")
    kept = total = 0
    for a, b in zip(input_layout.elements, output_layout.elements):
        for kind in KIND_ORDER:
            if a.get(kind).status is AttributeStatus.PRECISE:
                total += 1
                if a.get(kind).bin == b.get(kind).bin:
                    kept += 1
    if total == 0:
        return None
    return 100.0 * kept / total


# ---------------------------------------------------------------------------
# FID feature extractor


class FeatureExtractor:
    """Binary real-vs-corrupted classifier; features are the 256-wide
    penultimate activations, mean-pooled over attribute tokens."""

    def __init__(self, cfg: QuantizerConfig, n_max: int = 25, seed: int = 0):
        self.cfg = cfg
        self.n_max = n_max
        rng = seeded_rng(seed, "feature-extractor-init")
        self.params: dict[str, Tensor] = {}
        d = FEATURE_D_MODEL

        def param(name, shape, zeros=False):
            data = np.zeros(shape) if zeros else rng.normal(0.0, 0.02, size=shape)
            t = Tensor(data.astype(np.float32), requires_grad=True, name=name)
            self.params[name] = t
            return t

        for kind in KIND_ORDER:
            param(f"emb.value.{kind.name.lower()}", (cfg.bins(kind) + 1, d))
        param("emb.kind", (TOKENS_PER_ELEMENT, d))
        param("emb.pos", (n_max, d))
        self.trunk = TransformerTrunk(
            self.params, "trunk.", d, FEATURE_HEADS, FEATURE_LAYERS, FEATURE_FFN,
            rng, np.float32,
        )
        param("feat.w", (d, FEATURE_DIM))
        param("feat.b", (FEATURE_DIM,), zeros=True)
        param("cls.w", (FEATURE_DIM, 2))
        param("cls.b", (2,), zeros=True)

    def _forward(self, layout: Layout):
        seq = tokenize(layout)
        values = np.array(seq.values(), dtype=np.int64)
        element_indices = np.array([t.element_index for t in seq.tokens], dtype=np.int64)
        n_tokens = len(values)
        per_kind = []
        for kind in KIND_ORDER:
            vals = values[int(kind)::TOKENS_PER_ELEMENT]
            per_kind.append(ad.gather(self.params[f"emb.value.{kind.name.lower()}"], vals))
        x = ad.reshape(ad.stack(per_kind, axis=1), (n_tokens, FEATURE_D_MODEL))
        kind_ids = np.tile(np.arange(TOKENS_PER_ELEMENT), n_tokens // TOKENS_PER_ELEMENT)
        x = x + ad.gather(self.params["emb.kind"], kind_ids)
        x = x + ad.gather(self.params["emb.pos"], element_indices)
        rel = np.full((n_tokens, n_tokens), UNAVAILABLE_INDEX, dtype=np.int64)
        h = self.trunk(x, rel)
        pooled = ad.mean(h, axis=0)
        feat = ad.gelu(
            ad.add(ad.matmul(ad.reshape(pooled, (1, -1)), self.params["feat.w"]),
                   self.params["feat.b"])
        )
        logits = ad.add(ad.matmul(feat, self.params["cls.w"]), self.params["cls.b"])
        return feat, logits

    def features(self, layouts: Sequence[Layout]) -> np.ndarray:
        out = np.empty((len(layouts), FEATURE_DIM), dtype=np.float64)
        for i, layout in enumerate(layouts):
            feat, _ = self._forward(layout)
            out[i] = feat.data[0]
        return out

    def classify(self, layouts: Sequence[Layout]) -> np.ndarray:
        """Predicted labels; 1 = real, 0 = corrupted."""
        labels = np.empty(len(layouts), dtype=np.int64)
        for i, layout in enumerate(layouts):
            _, logits = self._forward(layout)
            labels[i] = int(np.argmax(logits.data[0]))
        return labels


def default_corruptor(layout: Layout, cfg: QuantizerConfig, rng: np.random.Generator) -> Layout:
    """Status-preserving perturbation: jitter geometry bins, swap categories."""
    elements = []
    for el in layout.elements:
        attrs = []
        for kind in KIND_ORDER:
            a = el.get(kind)
            if kind is AttrKind.CATEGORY:
                if rng.random() < 0.3:
                    a = AttributeValue(kind, int(rng.integers(0, cfg.n_categories)), a.status)
            else:
                k = cfg.bins(kind)
                jitter = int(round(rng.normal(0.0, 0.15) * (k - 1)))
                if jitter:
                    a = AttributeValue(kind, min(max(a.bin + jitter, 0), k - 1), a.status)
            attrs.append(a)
        elements.append(Element(*attrs))
    return Layout(layout.canvas, tuple(elements), dict(layout.relations))


def train_feature_extractor(
    corpus: Sequence[Layout],
    cfg: QuantizerConfig,
    steps: int = 300,
    seed: int = 0,
    batch: int = 16,
    lr: float = 1e-3,
    n_max: int = 25,
    corruptor: Callable[[Layout, QuantizerConfig, np.random.Generator], Layout] | None = None,
) -> FeatureExtractor:
    """Train the corrupted-vs-real classifier on the given corpus."""
    if len(corpus) < 2 * batch:
        raise DataError(f"corpus of {len(corpus)} too small for batch {batch}")
    if all(layout == corpus[0] for layout in corpus[1:]):
        raise DataError("degenerate corpus: every layout is identical")
    corruptor = corruptor or default_corruptor
    extractor = FeatureExtractor(cfg, n_max=n_max, seed=seed)
    opt = AdamW(extractor.params, lr=lr, warmup_steps=max(1, steps // 10))
    for step in range(1, steps + 1):
        rng = seeded_rng(seed, f"fx-step-{step}")
        idx = rng.integers(0, len(corpus), size=batch)
        loss = None
        for i in idx:
            real = rng.random() < 0.5
            layout = corpus[int(i)] if real else corruptor(corpus[int(i)], cfg, rng)
            _, logits = extractor._forward(layout)
            logp = ad.log_softmax(logits, axis=-1)
            picked = ad.take_along(logp, np.array([[1 if real else 0]]), axis=1)
            term = ad.neg(ad.sum_(picked))
            loss = term if loss is None else ad.add(loss, term)
        loss = ad.mul(loss, 1.0 / batch)
        for p in extractor.params.values():
            p.zero_grad()
        backward(loss)
        opt.step()
    return extractor


# ---------------------------------------------------------------------------
# Frechet distance


def _moments(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, dim = features.shape
    mu = features.mean(axis=0)
    centered = features - mu
    cov = centered.T @ centered / max(n - 1, 1)
    if n < dim + 1:
        cov = cov + 1e-6 * np.eye(dim)
    return mu, cov


def frechet_distance(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet (2-Wasserstein) distance between Gaussian fits of two feature sets.

    The cross term uses the symmetric square root of A^(1/2) B A^(1/2) via
    eigendecomposition, which keeps everything real for PSD inputs.
    """
    features_a = np.asarray(features_a, dtype=np.float64)
    features_b = np.asarray(features_b, dtype=np.float64)
    if features_a.ndim == 1:
        features_a = features_a[:, None]
    if features_b.ndim == 1:
        features_b = features_b[:, None]
    if not (np.all(np.isfinite(features_a)) and np.all(np.isfinite(features_b))):
        raise DataError("non-finite feature values")
    mu_a, cov_a = _moments(features_a)
    mu_b, cov_b = _moments(features_b)

    vals_a, vecs_a = np.linalg.eigh(cov_a)
    root_a = (vecs_a * np.sqrt(np.maximum(vals_a, 0.0))) @ vecs_a.T
    inner = root_a @ cov_b @ root_a
    inner_vals = np.linalg.eigvalsh(inner)
    trace_cross = np.sqrt(np.maximum(inner_vals, 0.0)).sum()

    diff = mu_a - mu_b
    fid = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_cross)
    return max(fid, 0.0)


# ---------------------------------------------------------------------------
# Bundled report


def compute_metrics(
    generated: Sequence[Layout],
    reference: Sequence[Layout],
    cfg: QuantizerConfig,
    extractor: FeatureExtractor,
    inputs: Sequence[Layout] | None = None,
    pairing: str = "source",
) -> MetricReport:
    """One report over a generated collection against its references.

    ``inputs`` are the conditioned layouts (with statuses) used to measure
    retention; omit for unconditional generation.
    """
    align = float(np.mean([alignment(l, cfg) for l in generated]))
    over = float(np.mean([overlap(l, cfg) for l in generated]))
    miou = max_iou(generated, reference, cfg, pairing=pairing)
    fid = frechet_distance(extractor.features(generated), extractor.features(reference))
    kept = None
    if inputs is not None:
        values = []
        for inp, out in zip(inputs, generated):
            r = retention(inp, out)
            if r is not None:
                values.append(r)
        kept = float(np.mean(values)) if values else None
    return MetricReport(
        max_iou=miou,
        fid=fid,
        alignment=align,
        overlap=over,
        retention=kept,
        n_layouts=len(generated),
    )
