"""Layout domain types, quantization, tokenization, relations, and JSON interchange.

A layout is a canvas plus up to ``DEFAULT_N_MAX`` elements; each element carries
five attributes (category, x, y, w, h) where (x, y) is the top-left corner in
device units with y growing downward.  Geometric attributes are quantized to
integer bins; every attribute additionally has a status: precise (a fixed
condition), coarse (a noisy value to refine), or missing (to generate).
Missing attributes hold the per-kind MASK sentinel (bin index == bin count).

Two layout forms exist: :class:`ContinuousLayout` mirrors the JSON interchange
schema (device-unit floats, ``null`` values for missing attributes) and
:class:`Layout` is the quantized in-memory form the rest of the pipeline uses.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Mapping, Sequence

from .errors import (
    IncompleteLayoutError,
    ParseError,
    ShapeError,
    ValidationError,
    VocabularyError,
)

DEFAULT_N_MAX = 25

__all__ = [
    "DEFAULT_N_MAX",
    "AttrKind",
    "AttributeStatus",
    "AttributeValue",
    "CanvasSpec",
    "ContinuousElement",
    "ContinuousLayout",
    "Element",
    "Layout",
    "QuantizerConfig",
    "RelationLabel",
    "AttributeToken",
    "TokenSequence",
    "quantize",
    "dequantize",
    "tokenize",
    "detokenize",
    "derive_relations",
    "validate",
    "serialize_layout",
    "parse_layout",
    "layout_to_doc",
    "layout_from_doc",
]


class AttrKind(IntEnum):
    """The five element attributes, in canonical token order."""

    CATEGORY = 0
    X = 1
    Y = 2
    W = 3
    H = 4


KIND_ORDER = (AttrKind.CATEGORY, AttrKind.X, AttrKind.Y, AttrKind.W, AttrKind.H)
GEOMETRY_KINDS = (AttrKind.X, AttrKind.Y, AttrKind.W, AttrKind.H)
KIND_NAMES = {k: k.name.lower() for k in KIND_ORDER}
TOKENS_PER_ELEMENT = len(KIND_ORDER)


class AttributeStatus(Enum):
    PRECISE = "precise"
    COARSE = "coarse"
    MISSING = "missing"


class RelationLabel(Enum):
    SMALLER = "smaller"
    LARGER = "larger"
    EQUAL = "equal"
    ABOVE = "above"
    BOTTOM = "bottom"
    LEFT = "left"
    RIGHT = "right"
    OVERLAPPED = "overlapped"
    UNAVAILABLE = "unavailable"


# Labels that may appear in the JSON interchange; "unavailable" is encoded by
# the absence of an edge.
CONCRETE_RELATION_LABELS = tuple(l for l in RelationLabel if l is not RelationLabel.UNAVAILABLE)


@dataclass(frozen=True)
class CanvasSpec:
    width: int
    height: int

    def extent(self, kind: AttrKind) -> int:
        """Device extent used to normalize the given geometric kind."""
        if kind in (AttrKind.X, AttrKind.W):
            return self.width
        if kind in (AttrKind.Y, AttrKind.H):
            return self.height
        raise ValueError(f"{kind} has no canvas extent")


@dataclass(frozen=True)
class QuantizerConfig:
    """Bin counts per attribute kind.  MASK index for a kind == its bin count."""

    n_categories: int
    x_bins: int = 128
    y_bins: int = 128
    w_bins: int = 128
    h_bins: int = 128

    def bins(self, kind: AttrKind) -> int:
        return {
            AttrKind.CATEGORY: self.n_categories,
            AttrKind.X: self.x_bins,
            AttrKind.Y: self.y_bins,
            AttrKind.W: self.w_bins,
            AttrKind.H: self.h_bins,
        }[kind]

    def mask_index(self, kind: AttrKind) -> int:
        return self.bins(kind)


@dataclass(frozen=True)
class AttributeValue:
    kind: AttrKind
    bin: int
    status: AttributeStatus


def _attr(kind: AttrKind, bin_: int, status: AttributeStatus) -> AttributeValue:
    return AttributeValue(kind=kind, bin=bin_, status=status)


def missing_attr(kind: AttrKind, cfg: QuantizerConfig) -> AttributeValue:
    return AttributeValue(kind, cfg.mask_index(kind), AttributeStatus.MISSING)


@dataclass(frozen=True)
class Element:
    category: AttributeValue
    x: AttributeValue
    y: AttributeValue
    w: AttributeValue
    h: AttributeValue

    def attributes(self) -> tuple[AttributeValue, ...]:
        return (self.category, self.x, self.y, self.w, self.h)

    def get(self, kind: AttrKind) -> AttributeValue:
        return self.attributes()[int(kind)]

    def with_attr(self, kind: AttrKind, value: AttributeValue) -> "Element":
        return replace(self, **{KIND_NAMES[kind]: value})


@dataclass(frozen=True)
class Layout:
    canvas: CanvasSpec
    elements: tuple[Element, ...]
    relations: Mapping[tuple[int, int], RelationLabel] = field(default_factory=dict)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def is_complete(self) -> bool:
        """True when no attribute is missing."""
        return all(
            a.status is not AttributeStatus.MISSING
            for e in self.elements
            for a in e.attributes()
        )


# ---------------------------------------------------------------------------
# Continuous (device-unit) form, mirroring the JSON schema


@dataclass(frozen=True)
class ContinuousElement:
    category: int | str | None
    x: float | None
    y: float | None
    w: float | None
    h: float | None
    statuses: tuple[AttributeStatus, ...] = (AttributeStatus.PRECISE,) * 5

    def value(self, kind: AttrKind):
        return (self.category, self.x, self.y, self.w, self.h)[int(kind)]

    def status(self, kind: AttrKind) -> AttributeStatus:
        return self.statuses[int(kind)]


@dataclass(frozen=True)
class ContinuousLayout:
    canvas: CanvasSpec
    elements: tuple[ContinuousElement, ...]
    relations: Mapping[tuple[int, int], RelationLabel] = field(default_factory=dict)

    @property
    def n_elements(self) -> int:
        return len(self.elements)


# ---------------------------------------------------------------------------
# Quantization


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def quantize_value(v: float, extent: float, bins: int) -> int:
    """Map a device-unit value to its bin with round-half-up; clamps into range."""
    b = _round_half_up(v / extent * (bins - 1))
    return min(max(b, 0), bins - 1)


def dequantize_value(bin_: int, extent: float, bins: int) -> float:
    return bin_ / (bins - 1) * extent


def quantize(
    layout: ContinuousLayout,
    cfg: QuantizerConfig,
    vocab: Sequence[str] | None = None,
) -> Layout:
    """Quantize a continuous layout into bins.

    Category names are resolved through ``vocab`` (index = id).  Missing
    attributes become the per-kind MASK bin.  Negative widths/heights are
    rejected; x/y out of canvas are clamped into range.
    """
    if layout.canvas.width < 1 or layout.canvas.height < 1:
        raise ValidationError(f"canvas must be positive, got {layout.canvas}")
    elements = []
    for i, el in enumerate(layout.elements):
        attrs = {}
        for kind in KIND_ORDER:
            status = el.status(kind)
            raw = el.value(kind)
            if status is AttributeStatus.MISSING or raw is None:
                attrs[kind] = missing_attr(kind, cfg)
                continue
            if kind is AttrKind.CATEGORY:
                if isinstance(raw, str):
                    if vocab is None or raw not in vocab:
                        raise VocabularyError(f"element {i}: unknown category {raw!r}")
                    idx = list(vocab).index(raw)
                else:
                    idx = int(raw)
                if not 0 <= idx < cfg.n_categories:
                    raise VocabularyError(
                        f"element {i}: category id {idx} outside [0, {cfg.n_categories})"
                    )
                attrs[kind] = _attr(kind, idx, status)
            else:
                v = float(raw)
                if not math.isfinite(v):
                    raise ValidationError(f"element {i}: non-finite {KIND_NAMES[kind]}")
                if kind in (AttrKind.W, AttrKind.H) and v < 0:
                    raise ValidationError(f"element {i}: negative {KIND_NAMES[kind]}")
                attrs[kind] = _attr(
                    kind, quantize_value(v, layout.canvas.extent(kind), cfg.bins(kind)), status
                )
        elements.append(Element(*[attrs[k] for k in KIND_ORDER]))
    return Layout(layout.canvas, tuple(elements), dict(layout.relations))


def dequantize(
    layout: Layout, cfg: QuantizerConfig, canvas: CanvasSpec | None = None, clamp: bool = True
) -> ContinuousLayout:
    """Map bins back to device units.

    With ``clamp`` the box is intersected with the canvas (w, h shrink so that
    x + w <= width and y + h <= height); per-axis values are always in range
    because bins are.  Raises when any attribute is MASK.
    """
    canvas = canvas or layout.canvas
    elements = []
    for i, el in enumerate(layout.elements):
        vals: dict[AttrKind, float | int] = {}
        for kind in KIND_ORDER:
            a = el.get(kind)
            if a.status is AttributeStatus.MISSING or a.bin >= cfg.bins(kind):
                raise IncompleteLayoutError(
                    f"element {i} attribute {KIND_NAMES[kind]} is missing; cannot dequantize"
                )
            if kind is AttrKind.CATEGORY:
                vals[kind] = a.bin
            else:
                vals[kind] = dequantize_value(a.bin, canvas.extent(kind), cfg.bins(kind))
        x, y, w, h = (vals[k] for k in GEOMETRY_KINDS)
        if clamp:
            x = min(max(x, 0.0), canvas.width)
            y = min(max(y, 0.0), canvas.height)
            w = min(w, canvas.width - x)
            h = min(h, canvas.height - y)
        elements.append(
            ContinuousElement(
                category=vals[AttrKind.CATEGORY],
                x=x,
                y=y,
                w=w,
                h=h,
                statuses=tuple(el.get(k).status for k in KIND_ORDER),
            )
        )
    return ContinuousLayout(canvas, tuple(elements), dict(layout.relations))


# ---------------------------------------------------------------------------
# Token sequences


@dataclass(frozen=True)
class AttributeToken:
    element_index: int
    kind: AttrKind
    value_index: int
    condition_flag: int  # 1 iff the source attribute status is precise


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[AttributeToken, ...]
    relations: Mapping[tuple[int, int], RelationLabel]
    canvas: CanvasSpec

    @property
    def n_elements(self) -> int:
        return len(self.tokens) // TOKENS_PER_ELEMENT

    def values(self) -> list[int]:
        return [t.value_index for t in self.tokens]

    def flags(self) -> list[int]:
        return [t.condition_flag for t in self.tokens]


def tokenize(layout: Layout) -> TokenSequence:
    """Flatten a layout into the canonical token order [c, x, y, w, h] per element."""
    tokens = []
    for i, el in enumerate(layout.elements):
        for kind in KIND_ORDER:
            a = el.get(kind)
            tokens.append(
                AttributeToken(
                    element_index=i,
                    kind=kind,
                    value_index=a.bin,
                    condition_flag=1 if a.status is AttributeStatus.PRECISE else 0,
                )
            )
    return TokenSequence(tuple(tokens), dict(layout.relations), layout.canvas)


def _status_from_token(token: AttributeToken, cfg: QuantizerConfig) -> AttributeStatus:
    if token.value_index >= cfg.mask_index(token.kind):
        return AttributeStatus.MISSING
    return AttributeStatus.PRECISE if token.condition_flag else AttributeStatus.COARSE


def detokenize(
    seq: TokenSequence,
    cfg: QuantizerConfig,
    statuses: Sequence[AttributeStatus] | None = None,
) -> Layout:
    """Inverse of :func:`tokenize`.

    Statuses default to what the token content implies: MASK value -> missing,
    condition flag set -> precise, otherwise coarse.
    """
    if len(seq.tokens) % TOKENS_PER_ELEMENT != 0:
        raise ShapeError(f"token count {len(seq.tokens)} not divisible by {TOKENS_PER_ELEMENT}")
    if statuses is not None and len(statuses) != len(seq.tokens):
        raise ShapeError("statuses length must match token count")
    elements = []
    for i in range(len(seq.tokens) // TOKENS_PER_ELEMENT):
        attrs = []
        for j, kind in enumerate(KIND_ORDER):
            pos = i * TOKENS_PER_ELEMENT + j
            tok = seq.tokens[pos]
            status = statuses[pos] if statuses is not None else _status_from_token(tok, cfg)
            attrs.append(AttributeValue(kind, tok.value_index, status))
        elements.append(Element(*attrs))
    return Layout(seq.canvas, tuple(elements), dict(seq.relations))


# ---------------------------------------------------------------------------
# Relation derivation

SIZE_EQUAL_REL_TOL = 0.05


def _boxes(layout: Layout, cfg: QuantizerConfig):
    cont = dequantize(layout, cfg, clamp=False)
    return [(e.x, e.y, e.w, e.h) for e in cont.elements]


def _intersection_area(a, b) -> float:
    ix = max(0.0, min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1]))
    return ix * iy


def _size_label(a, b) -> RelationLabel:
    area_a, area_b = a[2] * a[3], b[2] * b[3]
    if abs(area_a - area_b) <= SIZE_EQUAL_REL_TOL * max(area_a, area_b):
        return RelationLabel.EQUAL
    return RelationLabel.SMALLER if area_a < area_b else RelationLabel.LARGER


def _location_label(a, b) -> RelationLabel:
    if _intersection_area(a, b) > 0:
        return RelationLabel.OVERLAPPED
    dx = (a[0] + a[2] / 2) - (b[0] + b[2] / 2)
    dy = (a[1] + a[3] / 2) - (b[1] + b[3] / 2)
    if dx == 0 and dy == 0:
        # Degenerate zero-area boxes sharing a center; keep the label symmetric.
        return RelationLabel.OVERLAPPED
    if abs(dy) >= abs(dx):
        return RelationLabel.ABOVE if dy < 0 else RelationLabel.BOTTOM
    return RelationLabel.LEFT if dx < 0 else RelationLabel.RIGHT


def derive_relations(
    layout: Layout, cfg: QuantizerConfig, mode: str = "mixed"
) -> dict[tuple[int, int], RelationLabel]:
    """Deterministic pairwise labels over all ordered element pairs.

    ``size`` compares areas with relative tolerance ``SIZE_EQUAL_REL_TOL``;
    ``location`` reports overlap or the dominant displacement axis of the box
    centers (ties go to the vertical axis); ``mixed`` uses the size label for
    near-equal areas and the location label otherwise.
    """
    if mode not in ("size", "location", "mixed"):
        raise ValueError(f"unknown relation mode {mode!r}")
    for i, el in enumerate(layout.elements):
        for kind in GEOMETRY_KINDS:
            if el.get(kind).status is AttributeStatus.MISSING:
                raise IncompleteLayoutError(f"element {i} has missing geometry")
    boxes = _boxes(layout, cfg)
    out: dict[tuple[int, int], RelationLabel] = {}
    for i in range(len(boxes)):
        for j in range(len(boxes)):
            if i == j:
                continue
            if mode == "size":
                out[(i, j)] = _size_label(boxes[i], boxes[j])
            elif mode == "location":
                out[(i, j)] = _location_label(boxes[i], boxes[j])
            else:
                size = _size_label(boxes[i], boxes[j])
                out[(i, j)] = (
                    size if size is RelationLabel.EQUAL else _location_label(boxes[i], boxes[j])
                )
    return out


# ---------------------------------------------------------------------------
# Validation


@dataclass
class Violation:
    path: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, path: str, message: str) -> None:
        self.violations.append(Violation(path, message))


def validate(layout: Layout, cfg: QuantizerConfig, n_max: int = DEFAULT_N_MAX) -> ValidationReport:
    """Report every invariant violation; an empty report means the layout is valid."""
    report = ValidationReport()
    if layout.canvas.width < 1 or layout.canvas.height < 1:
        report.add("$.canvas", f"canvas dims must be >= 1, got {layout.canvas}")
    n = layout.n_elements
    if n < 1:
        report.add("$.elements", "layout must contain at least one element")
    if n > n_max:
        report.add("$.elements", f"{n} elements exceed the maximum of {n_max}")
    for i, el in enumerate(layout.elements):
        for kind in KIND_ORDER:
            a = el.get(kind)
            path = f"$.elements[{i}].{KIND_NAMES[kind]}"
            if a.kind is not kind:
                report.add(path, f"attribute kind mismatch: {a.kind} in {kind} slot")
            mask = cfg.mask_index(kind)
            if not 0 <= a.bin <= mask:
                report.add(path, f"bin {a.bin} outside [0, {mask}]")
            if (a.status is AttributeStatus.MISSING) != (a.bin == mask):
                report.add(path, f"status {a.status.value} inconsistent with bin {a.bin}")
    for (i, j), label in layout.relations.items():
        path = f"$.relations[{i},{j}]"
        if i == j:
            report.add(path, "self-relation not allowed")
        if not (0 <= i < n and 0 <= j < n):
            report.add(path, f"relation indices out of range for {n} elements")
        if not isinstance(label, RelationLabel):
            report.add(path, f"not a relation label: {label!r}")
    return report


# ---------------------------------------------------------------------------
# JSON interchange

_ELEMENT_FIELDS = {"category", "x", "y", "w", "h", "status"}


def serialize_layout(layout: ContinuousLayout, vocab: Sequence[str] | None = None) -> dict:
    """Render the canonical JSON document for a continuous layout."""
    elements = []
    for el in layout.elements:
        cat = el.category
        if vocab is not None and isinstance(cat, int):
            cat = vocab[cat]
        elements.append(
            {
                "category": cat,
                "x": el.x,
                "y": el.y,
                "w": el.w,
                "h": el.h,
                "status": {KIND_NAMES[k]: el.status(k).value for k in KIND_ORDER},
            }
        )
    relations = [
        {"i": i, "j": j, "label": label.value}
        for (i, j), label in sorted(layout.relations.items())
        if label is not RelationLabel.UNAVAILABLE
    ]
    return {
        "canvas": {"width": layout.canvas.width, "height": layout.canvas.height},
        "elements": elements,
        "relations": relations,
    }


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise ParseError(f"{path}.{key}", "required key missing")
    return doc[key]


def _check_unknown(doc: dict, allowed: set, path: str, strict: bool) -> None:
    if strict:
        for key in doc:
            if key not in allowed:
                raise ParseError(f"{path}.{key}", "unknown field in strict mode")


def parse_layout(doc: dict | str, strict: bool = False) -> ContinuousLayout:
    """Parse the canonical layout JSON document into a continuous layout.

    Raises :class:`ParseError` with a JSON path on any schema violation; in
    strict mode unknown fields are rejected rather than ignored.
    """
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ParseError("$", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("$", "document must be a JSON object")
    _check_unknown(doc, {"canvas", "elements", "relations"}, "$", strict)

    canvas_doc = _require(doc, "canvas", "$")
    if not isinstance(canvas_doc, dict):
        raise ParseError("$.canvas", "must be an object")
    _check_unknown(canvas_doc, {"width", "height"}, "$.canvas", strict)
    width = _require(canvas_doc, "width", "$.canvas")
    height = _require(canvas_doc, "height", "$.canvas")
    if not isinstance(width, int) or not isinstance(height, int) or width < 1 or height < 1:
        raise ParseError("$.canvas", "width/height must be positive integers")
    canvas = CanvasSpec(width, height)

    elements_doc = _require(doc, "elements", "$")
    if not isinstance(elements_doc, list):
        raise ParseError("$.elements", "must be an array")
    elements = []
    for i, el_doc in enumerate(elements_doc):
        path = f"$.elements[{i}]"
        if not isinstance(el_doc, dict):
            raise ParseError(path, "must be an object")
        _check_unknown(el_doc, _ELEMENT_FIELDS, path, strict)
        status_doc = el_doc.get("status", {})
        if not isinstance(status_doc, dict):
            raise ParseError(f"{path}.status", "must be an object")
        _check_unknown(status_doc, set(KIND_NAMES.values()), f"{path}.status", strict)
        statuses = []
        values = []
        for kind in KIND_ORDER:
            name = KIND_NAMES[kind]
            raw = el_doc.get(name)
            status_raw = status_doc.get(name)
            if status_raw is None:
                status = AttributeStatus.MISSING if raw is None else AttributeStatus.PRECISE
            else:
                try:
                    status = AttributeStatus(status_raw)
                except ValueError:
                    raise ParseError(
                        f"{path}.status.{name}", f"unknown status {status_raw!r}"
                    ) from None
            if (raw is None) != (status is AttributeStatus.MISSING):
                raise ParseError(
                    f"{path}.{name}",
                    f"null value and status {status.value!r} are inconsistent",
                )
            if raw is not None:
                if kind is AttrKind.CATEGORY:
                    if not isinstance(raw, (int, str)) or isinstance(raw, bool):
                        raise ParseError(f"{path}.category", "must be a string or integer")
                elif not isinstance(raw, (int, float)) or isinstance(raw, bool):
                    raise ParseError(f"{path}.{name}", "must be a number or null")
            statuses.append(status)
            values.append(raw)
        elements.append(ContinuousElement(*values, statuses=tuple(statuses)))

    relations: dict[tuple[int, int], RelationLabel] = {}
    relations_doc = doc.get("relations", [])
    if not isinstance(relations_doc, list):
        raise ParseError("$.relations", "must be an array")
    for r, rel_doc in enumerate(relations_doc):
        path = f"$.relations[{r}]"
        if not isinstance(rel_doc, dict):
            raise ParseError(path, "must be an object")
        _check_unknown(rel_doc, {"i", "j", "label"}, path, strict)
        i = _require(rel_doc, "i", path)
        j = _require(rel_doc, "j", path)
        label_raw = _require(rel_doc, "label", path)
        if not isinstance(i, int) or not isinstance(j, int):
            raise ParseError(path, "i and j must be integers")
        if i == j:
            raise ParseError(path, "self-relations are not allowed")
        if not (0 <= i < len(elements) and 0 <= j < len(elements)):
            raise ParseError(path, f"indices ({i}, {j}) out of range")
        try:
            label = RelationLabel(label_raw)
        except ValueError:
            raise ParseError(f"{path}.label", f"unknown label {label_raw!r}") from None
        if label is RelationLabel.UNAVAILABLE:
            raise ParseError(f"{path}.label", "'unavailable' edges must be omitted")
        relations[(i, j)] = label
    return ContinuousLayout(canvas, tuple(elements), relations)


def layout_to_doc(layout: Layout, cfg: QuantizerConfig, vocab: Sequence[str] | None = None) -> dict:
    """Serialize a quantized layout; missing attributes become nulls."""
    elements = []
    for el in layout.elements:
        entry: dict = {"status": {}}
        for kind in KIND_ORDER:
            a = el.get(kind)
            name = KIND_NAMES[kind]
            entry["status"][name] = a.status.value
            if a.status is AttributeStatus.MISSING:
                entry[name] = None
            elif kind is AttrKind.CATEGORY:
                entry[name] = vocab[a.bin] if vocab is not None else a.bin
            else:
                entry[name] = dequantize_value(a.bin, layout.canvas.extent(kind), cfg.bins(kind))
        elements.append(entry)
    relations = [
        {"i": i, "j": j, "label": label.value}
        for (i, j), label in sorted(layout.relations.items())
        if label is not RelationLabel.UNAVAILABLE
    ]
    return {
        "canvas": {"width": layout.canvas.width, "height": layout.canvas.height},
        "elements": elements,
        "relations": relations,
    }


def layout_from_doc(
    doc: dict | str,
    cfg: QuantizerConfig,
    vocab: Sequence[str] | None = None,
    strict: bool = False,
) -> Layout:
    """Parse then quantize; the round trip with :func:`layout_to_doc` is the identity on bins."""
    return quantize(parse_layout(doc, strict=strict), cfg, vocab=vocab)


def continuous_from_layout(layout: Layout, cfg: QuantizerConfig) -> ContinuousLayout:
    """Dequantize while preserving missing attributes as None values."""
    elements = []
    for el in layout.elements:
        vals: list = []
        for kind in KIND_ORDER:
            a = el.get(kind)
            if a.status is AttributeStatus.MISSING:
                vals.append(None)
            elif kind is AttrKind.CATEGORY:
                vals.append(a.bin)
            else:
                vals.append(dequantize_value(a.bin, layout.canvas.extent(kind), cfg.bins(kind)))
        elements.append(
            ContinuousElement(*vals, statuses=tuple(el.get(k).status for k in KIND_ORDER))
        )
    return ContinuousLayout(layout.canvas, tuple(elements), dict(layout.relations))
