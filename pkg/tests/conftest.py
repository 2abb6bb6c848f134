"""Shared fixtures and layout builders for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from layoutgen.core import (
    AttrKind,
    AttributeStatus,
    AttributeValue,
    CanvasSpec,
    ContinuousElement,
    ContinuousLayout,
    Element,
    KIND_ORDER,
    Layout,
    QuantizerConfig,
    RelationLabel,
)


@pytest.fixture(autouse=True)
def _finite_checks():
    from layoutgen.autodiff import set_debug_checks

    set_debug_checks(True)
    yield
    set_debug_checks(False)


def small_quantizer(n_categories: int = 5, bins: int = 16) -> QuantizerConfig:
    return QuantizerConfig(
        n_categories=n_categories, x_bins=bins, y_bins=bins, w_bins=bins, h_bins=bins
    )


def random_layout(
    rng: np.random.Generator,
    cfg: QuantizerConfig,
    n_elements: int,
    canvas: CanvasSpec = CanvasSpec(1000, 1000),
    statuses: str = "precise",
    with_relations: bool = False,
) -> Layout:
    """A structurally valid quantized layout with random bins.

    ``statuses`` is "precise", "mixed" (each attribute uniformly precise,
    coarse, or missing), or "missing".
    """
    elements = []
    for _ in range(n_elements):
        attrs = []
        for kind in KIND_ORDER:
            k = cfg.bins(kind)
            if statuses == "precise":
                status = AttributeStatus.PRECISE
            elif statuses == "missing":
                status = AttributeStatus.MISSING
            else:
                status = rng.choice(list(AttributeStatus))
            bin_ = cfg.mask_index(kind) if status is AttributeStatus.MISSING else int(
                rng.integers(0, k)
            )
            attrs.append(AttributeValue(kind, bin_, status))
        elements.append(Element(*attrs))
    relations = {}
    if with_relations and n_elements >= 2:
        labels = [l for l in RelationLabel if l is not RelationLabel.UNAVAILABLE]
        n_rel = int(rng.integers(1, n_elements * (n_elements - 1) + 1))
        for _ in range(n_rel):
            i, j = rng.choice(n_elements, size=2, replace=False)
            relations[(int(i), int(j))] = labels[int(rng.integers(0, len(labels)))]
    return Layout(canvas, tuple(elements), relations)


def box_layout(
    boxes: list[tuple[float, float, float, float]],
    categories: list[int] | None = None,
    canvas: CanvasSpec = CanvasSpec(100, 100),
) -> ContinuousLayout:
    """Continuous layout from (x, y, w, h) device-unit boxes, all precise."""
    categories = categories or [0] * len(boxes)
    elements = tuple(
        ContinuousElement(category=c, x=b[0], y=b[1], w=b[2], h=b[3])
        for c, b in zip(categories, boxes)
    )
    return ContinuousLayout(canvas, elements)
