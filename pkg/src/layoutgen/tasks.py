"""Task construction: turn a source layout into a conditioned generation request.

The ten task settings differ only in which attribute statuses they impose:
everything else (decoding, the network, the service) is shared.  Coarse
geometry is synthesized by adding normal noise (std on normalized
coordinates) and re-quantizing; coarse categories are resampled uniformly
with a small swap probability, since category has no metric structure to
perturb.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    GEOMETRY_KINDS,
    KIND_ORDER,
    AttrKind,
    AttributeStatus,
    AttributeValue,
    CanvasSpec,
    Element,
    Layout,
    QuantizerConfig,
    derive_relations,
    missing_attr,
    quantize_value,
)
from .errors import DataError

TASK_NAMES = (
    "u-gen",
    "gen-t",
    "gen-ts",
    "gen-tr",
    "refinement",
    "completion",
    "gen-pm",
    "gen-cm",
    "gen-pc",
    "gen-pcm",
)

DECODE_STRATEGIES = ("confidence-topk", "autoregressive", "non-autoregressive")

#: Status pools for the combined settings.
_STATUS_POOLS = {
    "gen-pm": (AttributeStatus.PRECISE, AttributeStatus.MISSING),
    "gen-cm": (AttributeStatus.COARSE, AttributeStatus.MISSING),
    "gen-pc": (AttributeStatus.PRECISE, AttributeStatus.COARSE),
    "gen-pcm": (
        AttributeStatus.PRECISE,
        AttributeStatus.COARSE,
        AttributeStatus.MISSING,
    ),
}


@dataclass(frozen=True)
class TaskSpec:
    task: str
    relation_fraction: float = 0.10
    coarse_std: float = 0.01
    coarse_category_swap: float = 0.1
    relation_mode: str = "mixed"

    def __post_init__(self):
        if self.task not in TASK_NAMES:
            raise DataError(f"unknown task {self.task!r}; expected one of {TASK_NAMES}")
        if not 0.0 <= self.relation_fraction <= 1.0:
            raise DataError("relation_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class GenerationRequest:
    layout: Layout
    steps: int
    seed: int = 0
    strategy: str = "confidence-topk"
    temperature: float = 1.0
    clamp_conditions: bool = False
    freeze_committed: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise DataError("steps must be >= 1")
        if self.strategy not in DECODE_STRATEGIES:
            raise DataError(
                f"unknown strategy {self.strategy!r}; expected one of {DECODE_STRATEGIES}"
            )


def synthesize_coarse(
    layout: Layout,
    cfg: QuantizerConfig,
    std: float,
    rng: np.random.Generator,
) -> Layout:
    """Coarsen geometry: normal noise on normalized coordinates, re-quantized.

    Categories and relations are untouched; geometry statuses become coarse.
    """
    elements = []
    for i, el in enumerate(layout.elements):
        attrs = {AttrKind.CATEGORY: el.category}
        for kind in GEOMETRY_KINDS:
            a = el.get(kind)
            if a.status is AttributeStatus.MISSING:
                raise DataError(f"element {i} lacks precise geometry to coarsen")
            k = cfg.bins(kind)
            normalized = a.bin / (k - 1)
            noised = min(max(normalized + rng.normal(0.0, std), 0.0), 1.0)
            attrs[kind] = AttributeValue(
                kind, quantize_value(noised, 1.0, k), AttributeStatus.COARSE
            )
        elements.append(Element(*[attrs[k] for k in KIND_ORDER]))
    return Layout(layout.canvas, tuple(elements), dict(layout.relations))


def _coarse_category(
    a: AttributeValue, n_categories: int, swap_prob: float, rng: np.random.Generator
) -> AttributeValue:
    bin_ = a.bin
    if rng.random() < swap_prob:
        bin_ = int(rng.integers(0, n_categories))
    return AttributeValue(AttrKind.CATEGORY, bin_, AttributeStatus.COARSE)


def _coarse_geometry(
    a: AttributeValue, kind: AttrKind, cfg: QuantizerConfig, std: float, rng
) -> AttributeValue:
    k = cfg.bins(kind)
    noised = min(max(a.bin / (k - 1) + rng.normal(0.0, std), 0.0), 1.0)
    return AttributeValue(kind, quantize_value(noised, 1.0, k), AttributeStatus.COARSE)


def _apply_status(
    el: Element,
    kind: AttrKind,
    status: AttributeStatus,
    cfg: QuantizerConfig,
    spec: TaskSpec,
    rng: np.random.Generator,
) -> AttributeValue:
    a = el.get(kind)
    if status is AttributeStatus.PRECISE:
        return a
    if status is AttributeStatus.MISSING:
        return missing_attr(kind, cfg)
    if kind is AttrKind.CATEGORY:
        return _coarse_category(a, cfg.n_categories, spec.coarse_category_swap, rng)
    return _coarse_geometry(a, kind, cfg, spec.coarse_std, rng)


def _require_complete(source: Layout, task: str) -> None:
    if not source.is_complete():
        raise DataError(f"task {task!r} conditions on attributes the source layout lacks")


def build_task(
    source: Layout | int,
    spec: TaskSpec,
    cfg: QuantizerConfig,
    rng: np.random.Generator,
    steps: int,
    canvas: CanvasSpec | None = None,
    **request_kw,
) -> GenerationRequest:
    """Derive the conditioned input layout for a task from a complete source.

    Unconditional generation accepts a bare element count (plus a canvas);
    every other task needs a complete source layout to condition on.
    """
    if spec.task == "u-gen":
        if isinstance(source, int):
            n = source
            if canvas is None:
                raise DataError("u-gen from an element count needs a canvas")
        else:
            n = source.n_elements
            canvas = canvas or source.canvas
        elements = tuple(
            Element(*[missing_attr(k, cfg) for k in KIND_ORDER]) for _ in range(n)
        )
        layout = Layout(canvas, elements)
        return GenerationRequest(layout=layout, steps=steps, **request_kw)

    if isinstance(source, int):
        raise DataError(f"task {spec.task!r} needs a source layout, not a count")
    _require_complete(source, spec.task)
    n = source.n_elements

    if spec.task == "gen-t":
        statuses = {k: AttributeStatus.MISSING for k in GEOMETRY_KINDS}
        statuses[AttrKind.CATEGORY] = AttributeStatus.PRECISE
        per_element = [statuses] * n
        relations = {}
    elif spec.task == "gen-ts":
        statuses = {
            AttrKind.CATEGORY: AttributeStatus.PRECISE,
            AttrKind.X: AttributeStatus.MISSING,
            AttrKind.Y: AttributeStatus.MISSING,
            AttrKind.W: AttributeStatus.PRECISE,
            AttrKind.H: AttributeStatus.PRECISE,
        }
        per_element = [statuses] * n
        relations = {}
    elif spec.task == "gen-tr":
        statuses = {k: AttributeStatus.MISSING for k in GEOMETRY_KINDS}
        statuses[AttrKind.CATEGORY] = AttributeStatus.PRECISE
        per_element = [statuses] * n
        all_pairs = derive_relations(source, cfg, mode=spec.relation_mode)
        keys = sorted(all_pairs.keys())
        n_keep = int(round(spec.relation_fraction * len(keys)))
        chosen = rng.choice(len(keys), size=n_keep, replace=False) if n_keep else []
        relations = {keys[int(c)]: all_pairs[keys[int(c)]] for c in chosen}
    elif spec.task == "refinement":
        coarse = synthesize_coarse(source, cfg, spec.coarse_std, rng)
        return GenerationRequest(layout=coarse, steps=steps, **request_kw)
    elif spec.task == "completion":
        keep = rng.random(n) < 0.5
        if n >= 2:
            if keep.all():
                keep[int(rng.integers(0, n))] = False
            if not keep.any():
                keep[int(rng.integers(0, n))] = True
        per_element = [
            {k: (AttributeStatus.PRECISE if keep[i] else AttributeStatus.MISSING)
             for k in KIND_ORDER}
            for i in range(n)
        ]
        relations = {}
    elif spec.task in _STATUS_POOLS:
        pool = _STATUS_POOLS[spec.task]
        per_element = [
            {k: pool[int(rng.integers(0, len(pool)))] for k in KIND_ORDER} for _ in range(n)
        ]
        relations = {}
    else:  # pragma: no cover - guarded by TaskSpec validation
        raise DataError(f"unhandled task {spec.task!r}")

    elements = []
    for i, el in enumerate(source.elements):
        attrs = [
            _apply_status(el, kind, per_element[i].get(kind, AttributeStatus.PRECISE),
                          cfg, spec, rng)
            for kind in KIND_ORDER
        ]
        elements.append(Element(*attrs))
    layout = Layout(source.canvas, tuple(elements), relations)
    return GenerationRequest(layout=layout, steps=steps, **request_kw)
