"""Denoiser network: token fusion, relation bias, heads, reverse mixing."""
import math

import numpy as np
import pytest

from layoutgen.autodiff import Tensor, grad_check
from layoutgen.core import (
    AttrKind,
    CanvasSpec,
    RelationLabel,
    tokenize,
)
from layoutgen.diffusion import Schedule, Uniform, build_stack
from layoutgen.errors import DegenerateInputError, ShapeError
from layoutgen.model import (
    Denoiser,
    ModelConfig,
    RELATION_INDEX,
    UNAVAILABLE_INDEX,
    reverse_distribution,
    token_relation_ids,
)

from conftest import random_layout, small_quantizer

TOY = ModelConfig(bins=(5, 5, 5, 5, 5), d_model=8, n_heads=2, n_layers=1, d_ffn=16, n_max=4)


def toy_inputs(rng, n_elements=3, cfg=TOY, masked=()):
    values = rng.integers(0, 5, size=5 * n_elements)
    for pos in masked:
        values[pos] = cfg.k(AttrKind.CATEGORY)  # MASK index (all kinds share K here)
    flags = np.array([0 if i in masked else 1 for i in range(5 * n_elements)])
    element_indices = np.repeat(np.arange(n_elements), 5)
    rel_ids = np.full((5 * n_elements, 5 * n_elements), UNAVAILABLE_INDEX, dtype=np.int64)
    return values.astype(np.int64), flags.astype(np.int64), element_indices, rel_ids


class TestEmbedding:
    def test_output_shape(self):
        model = Denoiser(TOY, seed=0, dtype=np.float64)
        values, flags, el, _ = toy_inputs(np.random.default_rng(0))
        emb = model.embed_tokens(values, flags, el)
        assert emb.shape == (15, TOY.d_model)

    def test_flag_flip_changes_by_flag_delta(self):
        model = Denoiser(TOY, seed=0, dtype=np.float64)
        values, flags, el, _ = toy_inputs(np.random.default_rng(1))
        emb1 = model.embed_tokens(values, flags, el).data
        flipped = flags.copy()
        flipped[4] = 0
        emb2 = model.embed_tokens(values, flipped, el).data
        delta = model.params["emb.flag"].data[0] - model.params["emb.flag"].data[1]
        assert np.allclose(emb2[4] - emb1[4], delta)
        assert np.allclose(emb2[[i for i in range(15) if i != 4]],
                           emb1[[i for i in range(15) if i != 4]])

    def test_mask_value_uses_dedicated_row(self):
        model = Denoiser(TOY, seed=0, dtype=np.float64)
        values, flags, el, _ = toy_inputs(np.random.default_rng(2), masked=(1,))
        emb = model.embed_tokens(values, flags, el).data
        table = model.params["emb.value.x"].data
        expected = (
            table[5]
            + model.params["emb.kind"].data[1]
            + model.params["emb.pos"].data[0]
            + model.params["emb.flag"].data[0]
        )
        assert np.allclose(emb[1], expected)

    def test_element_index_beyond_n_max(self):
        model = Denoiser(TOY, seed=0)
        values, flags, el, _ = toy_inputs(np.random.default_rng(3))
        el = el + 10
        with pytest.raises(ShapeError):
            model.embed_tokens(values, flags, el)


class TestForward:
    def test_output_shapes_and_normalization(self):
        cfg = ModelConfig(bins=(3, 7, 7, 6, 6), d_model=16, n_heads=4, n_layers=2,
                          d_ffn=32, n_max=5)
        model = Denoiser(cfg, seed=1, dtype=np.float64)
        rng = np.random.default_rng(4)
        n = 4
        values = np.concatenate(
            [[rng.integers(0, cfg.k(k)) for k in AttrKind] for _ in range(n)]
        ).astype(np.int64)
        flags = np.ones(5 * n, dtype=np.int64)
        el = np.repeat(np.arange(n), 5)
        rel = np.full((5 * n, 5 * n), UNAVAILABLE_INDEX, dtype=np.int64)
        out = model.forward_arrays(values, flags, el, rel)
        for kind in AttrKind:
            p = out.probs[kind].data
            assert p.shape == (n, cfg.k(kind))
            assert np.all(p > 0) and np.all(p < 1)
            assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-6)

    def test_sequence_too_long_rejected(self):
        model = Denoiser(TOY, seed=0)
        values, flags, el, rel = toy_inputs(np.random.default_rng(5), n_elements=3)
        big = ModelConfig(bins=TOY.bins, d_model=8, n_heads=2, n_layers=1, d_ffn=16, n_max=2)
        small_model = Denoiser(big, seed=0)
        with pytest.raises(ShapeError):
            small_model.forward_arrays(values, flags, el, rel)

    def test_zero_relation_tables_make_relations_irrelevant(self):
        model = Denoiser(TOY, seed=2, dtype=np.float64)
        model.params["rel.q"].data[:] = 0.0
        model.params["rel.k"].data[:] = 0.0
        values, flags, el, rel_empty = toy_inputs(np.random.default_rng(6))
        rel_full = rel_empty.copy()
        rel_full[0:5, 5:10] = RELATION_INDEX[RelationLabel.ABOVE]
        a = model.forward_arrays(values, flags, el, rel_empty)
        b = model.forward_arrays(values, flags, el, rel_full)
        for kind in AttrKind:
            assert np.allclose(a.probs[kind].data, b.probs[kind].data)

    def test_unavailable_bias_rows_zero_at_init(self):
        model = Denoiser(TOY, seed=3)
        assert np.all(model.params["rel.q"].data[UNAVAILABLE_INDEX] == 0.0)
        assert np.all(model.params["rel.k"].data[UNAVAILABLE_INDEX] == 0.0)

    def test_empty_relations_match_vanilla_attention_oracle(self):
        # Recompute layer-0 attention by hand without any relation terms and
        # compare against the trunk's attention on an all-unavailable map.
        model = Denoiser(TOY, seed=4, dtype=np.float64)
        values, flags, el, rel = toy_inputs(np.random.default_rng(7))
        x = model.embed_tokens(values, flags, el)
        normed = None
        p = model.params
        mu = x.data.mean(axis=-1, keepdims=True)
        var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
        xhat = (x.data - mu) / np.sqrt(var + 1e-5)
        normed = xhat * p["layer0.ln1.gamma"].data + p["layer0.ln1.beta"].data

        n, d, h = 15, TOY.d_model, TOY.n_heads
        dh = d // h
        q = (normed @ p["layer0.attn.wq"].data + p["layer0.attn.bq"].data).reshape(n, h, dh)
        k = (normed @ p["layer0.attn.wk"].data + p["layer0.attn.bk"].data).reshape(n, h, dh)
        v = (normed @ p["layer0.attn.wv"].data + p["layer0.attn.bv"].data).reshape(n, h, dh)
        q, k, v = (t.transpose(1, 0, 2) for t in (q, k, v))
        scores = q @ k.transpose(0, 2, 1) / math.sqrt(dh)
        scores -= scores.max(axis=-1, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(axis=-1, keepdims=True)
        expected = (w @ v).transpose(1, 0, 2).reshape(n, d)
        expected = expected @ p["layer0.attn.wo"].data + p["layer0.attn.bo"].data

        got = model.trunk._attention(
            Tensor(normed), rel, 0
        ).data
        assert np.allclose(got, expected, atol=1e-12)

    def test_relation_perturbation_is_local_in_scores(self):
        # Changing rel(0, 1) may only touch score entries between the token
        # blocks of elements 0 and 1 (both directions stay untouched elsewhere).
        model = Denoiser(TOY, seed=5, dtype=np.float64)
        values, flags, el, rel_a = toy_inputs(np.random.default_rng(8))
        rel_b = rel_a.copy()
        rel_b[0:5, 5:10] = RELATION_INDEX[RelationLabel.LEFT]

        def scores(rel_ids):
            p = model.params
            x = model.embed_tokens(values, flags, el).data
            mu = x.mean(axis=-1, keepdims=True)
            var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
            normed = (x - mu) / np.sqrt(var + 1e-5)
            normed = normed * p["layer0.ln1.gamma"].data + p["layer0.ln1.beta"].data
            n, h = 15, TOY.n_heads
            dh = TOY.d_model // h
            q = (normed @ p["layer0.attn.wq"].data + p["layer0.attn.bq"].data).reshape(n, h, dh)
            k = (normed @ p["layer0.attn.wk"].data + p["layer0.attn.bk"].data).reshape(n, h, dh)
            q, k = (t.transpose(1, 0, 2) for t in (q, k))
            vq = p["rel.q"].data
            vk = p["rel.k"].data
            e = np.zeros((h, n, n))
            for i in range(n):
                for j in range(n):
                    r = rel_ids[i, j]
                    for head in range(h):
                        e[head, i, j] = (q[head, i] + vq[r]) @ (k[head, j] + vk[r])
            return e / math.sqrt(dh)

        ea, eb = scores(rel_a), scores(rel_b)
        changed = np.argwhere(np.abs(ea - eb) > 0)
        assert len(changed) > 0
        for _, i, j in changed:
            assert 0 <= i < 5 and 5 <= j < 10

    def test_permutation_equivariance(self):
        cfg = ModelConfig(bins=(4, 6, 6, 6, 6), d_model=16, n_heads=2, n_layers=2,
                          d_ffn=32, n_max=6)
        model = Denoiser(cfg, seed=6, dtype=np.float64)
        rng = np.random.default_rng(9)
        n = 4
        values = np.concatenate(
            [[rng.integers(0, cfg.k(k)) for k in AttrKind] for _ in range(n)]
        ).astype(np.int64)
        flags = rng.integers(0, 2, size=5 * n).astype(np.int64)
        el = np.repeat(np.arange(n), 5)
        relations = {(0, 2): RelationLabel.ABOVE, (3, 1): RelationLabel.SMALLER}
        rel_ids = token_relation_ids(relations, n)
        out = model.forward_arrays(values, flags, el, rel_ids)

        perm = np.array([2, 0, 3, 1])  # new order of old elements
        token_perm = np.concatenate([np.arange(p * 5, p * 5 + 5) for p in perm])
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n)
        permuted_relations = {
            (int(inv[i]), int(inv[j])): label for (i, j), label in relations.items()
        }
        out_p = model.forward_arrays(
            values[token_perm],
            flags[token_perm],
            el[token_perm],  # element index embeddings travel with their tokens
            token_relation_ids(permuted_relations, n),
        )
        for kind in AttrKind:
            assert np.allclose(out_p.probs[kind].data, out.probs[kind].data[perm], atol=1e-12)


class TestGradientCheck:
    def test_toy_denoiser_full_gradient(self):
        # 1 layer, d=8, 2 heads, N=3, K=5, float64: every parameter within 1e-3.
        model = Denoiser(TOY, seed=7, dtype=np.float64)
        rng = np.random.default_rng(10)
        values, flags, el, _ = toy_inputs(rng, masked=(2, 9))
        relations = {(0, 1): RelationLabel.OVERLAPPED, (2, 0): RelationLabel.LEFT}
        rel_ids = token_relation_ids(relations, 3)
        targets = {kind: rng.integers(0, 5, size=3) for kind in AttrKind}

        def forward():
            import layoutgen.autodiff as ad

            out = model.forward_arrays(values, flags, el, rel_ids)
            losses = []
            for kind in AttrKind:
                picked = ad.take_along(out.log_probs[kind], targets[kind][:, None], axis=1)
                losses.append(ad.neg(ad.mean(picked)))
            total = losses[0]
            for term in losses[1:]:
                total = total + term
            return total

        # eps = 1e-4: the extrapolated quotient is truncation-free here, and
        # the larger step keeps float64 round-off below the tiny bias grads.
        report = grad_check(forward, model.params, tolerance=1e-3, eps=1e-4)
        failing = [(e.name, e.max_rel_error) for e in report.entries if not e.passed]
        assert report.passed, failing


class TestReverseDistribution:
    def make_stack(self, k=3, T=3):
        return build_stack(Uniform(), AttrKind.CATEGORY,
                           Schedule(T=T, beta_category_end=0.3, gamma_end=0.4), k)

    def test_one_hot_recovers_posterior(self):
        stack = self.make_stack()
        p = np.array([0.0, 1.0, 0.0])
        out = reverse_distribution(p, x_t=3, t=2, stack=stack)
        assert np.allclose(out, stack.posterior(3, 1, 2), atol=1e-12)

    def test_mixture_matches_bruteforce_sum(self):
        stack = self.make_stack()
        rng = np.random.default_rng(11)
        p = rng.dirichlet(np.ones(3))
        out = reverse_distribution(p, x_t=3, t=3, stack=stack)
        expected = np.zeros(4)
        for x0 in range(3):
            expected += p[x0] * stack.posterior(3, x0, 3)
        expected /= expected.sum()
        assert np.max(np.abs(out - expected)) < 1e-10

    def test_sums_to_one(self):
        stack = self.make_stack(k=6, T=4)
        rng = np.random.default_rng(12)
        for x_t in (0, 3, 6):
            p = rng.dirichlet(np.ones(6))
            assert abs(reverse_distribution(p, x_t, 2, stack).sum() - 1.0) < 1e-8

    def test_degenerate_input_raises(self):
        from layoutgen.diffusion import BandDiagonal

        stack = build_stack(BandDiagonal(half_width=1), AttrKind.X, Schedule(T=2), 12)
        p = np.zeros(12)
        p[0] = 1.0
        with pytest.raises(DegenerateInputError):
            reverse_distribution(p, x_t=11, t=1, stack=stack)


class TestSequenceBridge:
    def test_forward_from_token_sequence(self):
        cfg_q = small_quantizer(n_categories=5, bins=5)
        layout = random_layout(np.random.default_rng(13), cfg_q, 3, statuses="mixed")
        model = Denoiser(TOY, seed=8, dtype=np.float64)
        out = model.forward_x0(tokenize(layout))
        assert out.probs[AttrKind.CATEGORY].data.shape == (3, 5)
        vec = out.token_probs(7)  # element 1's y token
        assert np.allclose(vec, out.probs[AttrKind.Y].data[1])
