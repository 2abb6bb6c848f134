"""Corpus ingestion with filtering, deterministic splits, synthetic layouts.

The synthetic generator is the desk-scale training and acceptance workhorse:
a title band, body cells on a column grid, and a footer, all snapped to
shared edges, plus optional normal jitter.  Its rules are frozen; with
jitter std <= 0.005 the emitted layouts keep alignment <= 1.0 and
overlap <= 5.0, which downstream checks rely on as a clean target
distribution.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    AttributeStatus,
    CanvasSpec,
    ContinuousElement,
    ContinuousLayout,
    parse_layout,
    serialize_layout,
)
from .errors import DataError, ParseError
from .optim import seeded_rng

CATEGORY_NAMES = ("title", "text", "image", "button", "footer")

#: Cell category draw inside the body grid: text, image, button.
_CELL_PROBS = {"text": 0.5, "image": 0.3, "button": 0.2}
_MAX_GRID_ROWS = 7


@dataclass
class DatasetManifest:
    name: str
    categories: list[str]
    canvas_convention: str
    counts: dict[str, int] = field(default_factory=dict)
    filters: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "categories": self.categories,
            "canvas_convention": self.canvas_convention,
            "counts": self.counts,
            "filters": self.filters,
        }


# ---------------------------------------------------------------------------
# Ingestion


def _adapt_boxes_doc(doc: dict, path: str) -> dict:
    """Adapter for the minimal {canvas, boxes: [[cat, x, y, w, h], ...]} format."""
    if "boxes" not in doc or "canvas" not in doc:
        raise ParseError("$", f"{path}: boxes format needs 'canvas' and 'boxes'")
    elements = []
    for b in doc["boxes"]:
        if not isinstance(b, (list, tuple)) or len(b) != 5:
            raise ParseError("$.boxes", f"{path}: each box must be [cat, x, y, w, h]")
        elements.append({"category": b[0], "x": b[1], "y": b[2], "w": b[3], "h": b[4]})
    return {"canvas": doc["canvas"], "elements": elements, "relations": []}


def ingest(
    path: str | Path,
    vocab: Sequence[str] | None = None,
    vocab_policy: str = "drop",
    n_max: int = 25,
    fmt: str = "native",
    name: str | None = None,
) -> tuple[list[ContinuousLayout], DatasetManifest]:
    """Load every layout JSON under ``path``, applying the filtering protocol.

    Layouts with more than ``n_max`` elements are dropped.  With a vocabulary,
    the ``drop`` policy removes out-of-vocabulary elements (keeping layouts
    that retain at least one element) while ``strict`` rejects the whole
    layout.  The manifest records a count per drop reason.
    """
    if vocab_policy not in ("drop", "strict"):
        raise DataError(f"unknown vocab policy {vocab_policy!r}")
    root = Path(path)
    if not root.exists():
        raise DataError(f"corpus path {root} does not exist")
    files = sorted(p for p in root.glob("*.json") if p.name != "manifest.json")
    if not files:
        raise DataError(f"no layout files under {root}")

    dropped = Counter()
    kept: list[ContinuousLayout] = []
    seen_categories: Counter = Counter()
    for file in files:
        try:
            doc = json.loads(file.read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"unreadable corpus file {file}: {exc}") from exc
        if fmt == "boxes":
            doc = _adapt_boxes_doc(doc, str(file))
        elif fmt != "native":
            raise DataError(f"unknown corpus format {fmt!r}")
        layout = parse_layout(doc)

        if vocab is not None:
            in_vocab = []
            for el in layout.elements:
                cat = el.category
                ok = cat in vocab if isinstance(cat, str) else (
                    isinstance(cat, int) and 0 <= cat < len(vocab)
                )
                in_vocab.append(ok)
            if vocab_policy == "strict" and not all(in_vocab):
                dropped["out-of-vocab"] += 1
                continue
            if vocab_policy == "drop" and not all(in_vocab):
                elements = tuple(
                    el for el, ok in zip(layout.elements, in_vocab) if ok
                )
                if not elements:
                    dropped["emptied"] += 1
                    continue
                keep_idx = {i for i, ok in enumerate(in_vocab) if ok}
                remap = {old: new for new, old in enumerate(sorted(keep_idx))}
                relations = {
                    (remap[i], remap[j]): l
                    for (i, j), l in layout.relations.items()
                    if i in keep_idx and j in keep_idx
                }
                layout = ContinuousLayout(layout.canvas, elements, relations)
        if layout.n_elements > n_max:
            dropped["max-n"] += 1
            continue
        for el in layout.elements:
            seen_categories[el.category] += 1
        kept.append(layout)

    if not kept:
        raise DataError(f"no layouts survived filtering under {root}")
    manifest = DatasetManifest(
        name=name or root.name,
        categories=list(vocab) if vocab is not None else sorted(
            str(c) for c in seen_categories
        ),
        canvas_convention="top-left origin, y grows downward, device units",
        counts={"total": len(kept)},
        filters={
            "n_max": n_max,
            "vocab_policy": vocab_policy if vocab is not None else None,
            "dropped": dict(dropped),
            "source_files": len(files),
        },
    )
    return kept, manifest


def write_corpus(
    layouts: Sequence[ContinuousLayout],
    path: str | Path,
    manifest: DatasetManifest | None = None,
) -> None:
    """One JSON file per layout plus manifest.json."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    width = len(str(max(len(layouts) - 1, 1)))
    for i, layout in enumerate(layouts):
        doc = serialize_layout(layout)
        (root / f"layout-{i:0{width}d}.json").write_text(
            json.dumps(doc, indent=None, sort_keys=True), "utf-8"
        )
    if manifest is not None:
        (root / "manifest.json").write_text(
            json.dumps(manifest.to_json(), indent=2, sort_keys=True), "utf-8"
        )


# ---------------------------------------------------------------------------
# Splits


def make_splits(
    corpus: Sequence,
    fractions: tuple[float, float, float] = (0.85, 0.05, 0.10),
    seed: int = 0,
):
    """Deterministic, disjoint, exhaustive train/val/test partition."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions {fractions} must sum to 1")
    n = len(corpus)
    if n < 3:
        raise DataError(f"corpus of {n} too small to split three ways")
    order = seeded_rng(seed, "splits").permutation(n)
    n_train = math.floor(fractions[0] * n)
    n_val = math.floor(fractions[1] * n)
    train = [corpus[i] for i in order[:n_train]]
    val = [corpus[i] for i in order[n_train : n_train + n_val]]
    test = [corpus[i] for i in order[n_train + n_val :]]
    return train, val, test


# ---------------------------------------------------------------------------
# Synthetic corpus


@dataclass(frozen=True)
class SynthConfig:
    n_layouts: int = 1000
    jitter_std: float = 0.003  # on normalized coordinates
    n_range: tuple[int, int] = (2, 10)
    grid_columns: tuple[int, ...] = (1, 2, 3)
    seed: int = 0
    canvas_width: int = 1000
    canvas_height: int = 1000

    def __post_init__(self):
        if self.jitter_std < 0:
            raise DataError("jitter std must be >= 0")
        if not (2 <= self.n_range[0] <= self.n_range[1]):
            raise DataError("element count range must satisfy 2 <= lo <= hi")

    @property
    def n_categories(self) -> int:
        return len(CATEGORY_NAMES)


def expected_category_distribution(cfg: SynthConfig) -> dict[str, float]:
    """Analytic per-element category probabilities implied by the rules."""
    lo, hi = cfg.n_range
    mean_n = (lo + hi) / 2
    mean_cells = mean_n - 2
    dist = {"title": 1 / mean_n, "footer": 1 / mean_n}
    for name, p in _CELL_PROBS.items():
        dist[name] = p * mean_cells / mean_n
    return dist


def synth_corpus(cfg: SynthConfig) -> list[ContinuousLayout]:
    """Rule-based layouts: title band, body cells on a column grid, footer.

    Grid geometry (device units on the default 1000x1000 canvas): margin 60,
    gutter 20, title at y=40 h=70, body rows from y=140 at a 104 pitch with
    90-tall cells, footer at height-90.  Left/right column edges, the title,
    and the footer share x-extent, so jitter 0 gives exact alignment 0.
    """
    rng = seeded_rng(cfg.seed, "synth-corpus")
    w, h = cfg.canvas_width, cfg.canvas_height
    margin, gutter = 0.06 * w, 0.02 * w
    title_y, title_h = 0.04 * h, 0.07 * h
    row_y0, row_pitch, row_h = 0.14 * h, 0.104 * h, 0.09 * h
    footer_h = 0.05 * h
    footer_y = h - 0.09 * h
    canvas = CanvasSpec(w, h)
    cell_names = list(_CELL_PROBS)
    cell_p = np.array([_CELL_PROBS[c] for c in cell_names])

    layouts = []
    for _ in range(cfg.n_layouts):
        n = int(rng.integers(cfg.n_range[0], cfg.n_range[1] + 1))
        m = n - 2
        cols = int(rng.choice(cfg.grid_columns))
        cols = max(cols, math.ceil(m / _MAX_GRID_ROWS) if m else 1)
        col_w = (w - 2 * margin - (cols - 1) * gutter) / cols

        boxes = [("title", margin, title_y, w - 2 * margin, title_h)]
        for cell in range(m):
            r, c = divmod(cell, cols)
            name = cell_names[int(rng.choice(len(cell_names), p=cell_p))]
            boxes.append(
                (name, margin + c * (col_w + gutter), row_y0 + r * row_pitch, col_w, row_h)
            )
        boxes.append(("footer", margin, footer_y, w - 2 * margin, footer_h))

        elements = []
        for name, x, y, bw, bh in boxes:
            jx = rng.normal(0.0, cfg.jitter_std) * w if cfg.jitter_std else 0.0
            jy = rng.normal(0.0, cfg.jitter_std) * h if cfg.jitter_std else 0.0
            x = min(max(x + jx, 0.0), w - bw)
            y = min(max(y + jy, 0.0), h - bh)
            elements.append(
                ContinuousElement(
                    category=CATEGORY_NAMES.index(name),
                    x=x,
                    y=y,
                    w=bw,
                    h=bh,
                    statuses=(AttributeStatus.PRECISE,) * 5,
                )
            )
        layouts.append(ContinuousLayout(canvas, tuple(elements)))
    return layouts
