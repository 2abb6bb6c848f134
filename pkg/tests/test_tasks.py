"""Task construction for the ten settings and coarse synthesis."""
import math

import numpy as np
import pytest

from layoutgen.core import (
    GEOMETRY_KINDS,
    AttrKind,
    AttributeStatus,
    CanvasSpec,
)
from layoutgen.errors import DataError
from layoutgen.optim import seeded_rng
from layoutgen.tasks import GenerationRequest, TaskSpec, build_task, synthesize_coarse

from conftest import random_layout, small_quantizer

CFG = small_quantizer(n_categories=5, bins=128)


def source(n=3, seed=0):
    return random_layout(np.random.default_rng(seed), CFG, n)


def statuses_of(layout):
    return [
        [el.get(k).status for k in AttrKind] for el in layout.elements
    ]


class TestBuildTask:
    def test_gen_t_statuses(self):
        req = build_task(source(3), TaskSpec("gen-t"), CFG, seeded_rng(0, "t"), steps=10)
        seq_statuses = statuses_of(req.layout)
        n_mask = sum(s is AttributeStatus.MISSING for row in seq_statuses for s in row)
        assert n_mask == 12
        for row in seq_statuses:
            assert row[0] is AttributeStatus.PRECISE
        # categories keep the source values
        for a, b in zip(req.layout.elements, source(3).elements):
            assert a.category.bin == b.category.bin

    def test_gen_ts_keeps_sizes(self):
        req = build_task(source(4), TaskSpec("gen-ts"), CFG, seeded_rng(1, "t"), steps=10)
        for el, src in zip(req.layout.elements, source(4).elements):
            assert el.w.status is AttributeStatus.PRECISE
            assert el.w.bin == src.w.bin
            assert el.x.status is AttributeStatus.MISSING

    def test_gen_tr_samples_ten_percent_of_ordered_pairs(self):
        n = 5
        req = build_task(source(n, seed=3), TaskSpec("gen-tr"), CFG, seeded_rng(2, "t"),
                         steps=10)
        expected = round(0.10 * n * (n - 1))
        assert len(req.layout.relations) == expected

    def test_u_gen_from_count(self):
        req = build_task(4, TaskSpec("u-gen"), CFG, seeded_rng(3, "t"), steps=10,
                         canvas=CanvasSpec(100, 100))
        assert req.layout.n_elements == 4
        assert all(
            s is AttributeStatus.MISSING for row in statuses_of(req.layout) for s in row
        )

    def test_u_gen_needs_canvas_with_count(self):
        with pytest.raises(DataError):
            build_task(4, TaskSpec("u-gen"), CFG, seeded_rng(4, "t"), steps=10)

    def test_refinement_coarsens_geometry(self):
        req = build_task(source(3), TaskSpec("refinement"), CFG, seeded_rng(5, "t"), steps=10)
        for el in req.layout.elements:
            assert el.category.status is AttributeStatus.PRECISE
            for kind in GEOMETRY_KINDS:
                assert el.get(kind).status is AttributeStatus.COARSE

    def test_completion_subsets_whole_elements(self):
        req = build_task(source(6, seed=6), TaskSpec("completion"), CFG,
                         seeded_rng(6, "t"), steps=10)
        kinds_per_el = statuses_of(req.layout)
        whole = [set(row) for row in kinds_per_el]
        assert all(len(s) == 1 for s in whole)
        flat = [next(iter(s)) for s in whole]
        assert AttributeStatus.PRECISE in flat and AttributeStatus.MISSING in flat

    @pytest.mark.parametrize(
        "task,allowed",
        [
            ("gen-pm", {AttributeStatus.PRECISE, AttributeStatus.MISSING}),
            ("gen-cm", {AttributeStatus.COARSE, AttributeStatus.MISSING}),
            ("gen-pc", {AttributeStatus.PRECISE, AttributeStatus.COARSE}),
            ("gen-pcm", set(AttributeStatus)),
        ],
    )
    def test_combined_tasks_draw_from_their_pools(self, task, allowed):
        req = build_task(source(5, seed=7), TaskSpec(task), CFG, seeded_rng(7, task),
                         steps=10)
        seen = {s for row in statuses_of(req.layout) for s in row}
        assert seen <= allowed

    def test_task_requiring_geometry_rejects_incomplete_source(self):
        incomplete = random_layout(np.random.default_rng(8), CFG, 3, statuses="mixed")
        with pytest.raises(DataError):
            build_task(incomplete, TaskSpec("gen-t"), CFG, seeded_rng(8, "t"), steps=10)

    def test_unknown_task_rejected(self):
        with pytest.raises(DataError):
            TaskSpec("gen-xyz")

    def test_zero_steps_rejected(self):
        with pytest.raises(DataError):
            GenerationRequest(layout=source(1), steps=0)


class TestSynthesizeCoarse:
    def test_zero_std_keeps_bins(self):
        layout = source(3, seed=9)
        out = synthesize_coarse(layout, CFG, 0.0, seeded_rng(9, "c"))
        for a, b in zip(out.elements, layout.elements):
            for kind in GEOMETRY_KINDS:
                assert a.get(kind).bin == b.get(kind).bin
                assert a.get(kind).status is AttributeStatus.COARSE

    def test_categories_and_relations_untouched(self):
        layout = random_layout(np.random.default_rng(10), CFG, 4, with_relations=True)
        out = synthesize_coarse(layout, CFG, 0.01, seeded_rng(10, "c"))
        assert out.relations == layout.relations
        for a, b in zip(out.elements, layout.elements):
            assert a.category == b.category

    def test_mean_displacement_matches_folded_normal(self):
        # |N(0, std)| has mean std * sqrt(2/pi); in bins that is ~1.3 at K=128,
        # std=0.01, minus what boundary clamping and rounding absorb.
        std = 0.01
        k = 128
        rng = seeded_rng(11, "c")
        displacements = []
        for _ in range(200):
            layout = random_layout(rng, CFG, 5)
            out = synthesize_coarse(layout, CFG, std, rng)
            for a, b in zip(out.elements, layout.elements):
                for kind in GEOMETRY_KINDS:
                    displacements.append(abs(a.get(kind).bin - b.get(kind).bin))
        observed = float(np.mean(displacements))
        expected = std * math.sqrt(2 / math.pi) * (k - 1)
        assert abs(observed - expected) / expected < 0.10
