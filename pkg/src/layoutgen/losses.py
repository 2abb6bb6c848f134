"""Variational-bound and reconstruction losses with the per-token case dispatch.

Each token falls into exactly one case by its planned timestep: untouched
tokens (t = 0) pay a reconstruction negative log-likelihood weighted by
``lam``; tokens corrupted at t = 1 pay the direct clean-value NLL; tokens
corrupted deeper pay the KL divergence between the analytic posterior
q(x_{t-1} | x_t, x0) and the model's posterior-mixed reverse distribution.
The terminal prior gap at t = T is constant in the parameters and reported
as a diagnostic only.  All reductions are means over tokens.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import AttrKind, TokenSequence
from .diffusion import CorruptionPlan, StackSet
from .errors import DataError, ShapeError
from .model import DenoiserOutput


@dataclass
class LossBreakdown:
    l_vlb: float
    l_rec: float
    l_total: float
    n_rec: int  # untouched tokens (t = 0)
    n_l0: int  # tokens at t = 1
    n_kl: int  # tokens at t > 1
    l_T: float  # prior-gap diagnostic, constant in the parameters

    @property
    def n_tokens(self) -> int:
        return self.n_rec + self.n_l0 + self.n_kl


@dataclass
class LossTerms:
    """Per-sequence summed loss nodes, kept separate for batch pooling."""

    rec_sum: Tensor | None
    l0_sum: Tensor | None
    kl_sum: Tensor | None
    n_rec: int
    n_l0: int
    n_kl: int
    n_tokens: int
    l_T_sum: float


def _nll_sum(output: DenoiserOutput, kind: AttrKind, rows: np.ndarray, targets: np.ndarray):
    logp = ad.gather(output.log_probs[kind], rows)  # (m, K)
    picked = ad.take_along(logp, targets[:, None], axis=1)
    return ad.neg(ad.sum_(picked))


def _kl_sum(
    output: DenoiserOutput,
    kind: AttrKind,
    rows: np.ndarray,
    x_t: np.ndarray,
    x0: np.ndarray,
    t: np.ndarray,
    stacks: StackSet,
):
    """Sum of KL(q(x_{t-1}|x_t, x0) || sum_x0' q(x_{t-1}|x_t, x0') p(x0')) over tokens."""
    stack = stacks[kind]
    m = len(rows)
    k = stack.k
    mix_mats = np.empty((m, k + 1, k), dtype=np.float64)
    q_true = np.empty((m, k + 1), dtype=np.float64)
    for i in range(m):
        mix_mats[i] = stack.posterior_matrix(int(x_t[i]), int(t[i]))
        q_true[i] = stack.posterior(int(x_t[i]), int(x0[i]), int(t[i]))

    p_head = ad.gather(output.probs[kind], rows)  # (m, K)
    mixed = ad.matmul(Tensor(mix_mats.astype(p_head.dtype)), ad.reshape(p_head, (m, k, 1)))
    mixed = ad.reshape(mixed, (m, k + 1))
    totals = ad.sum_(mixed, axis=1, keepdims=True)
    mixed = ad.div(mixed, totals)

    support = (q_true > 0.0).astype(mix_mats.dtype)
    # Off-support entries get +1 inside the log so they contribute exactly 0.
    safe = ad.add(mixed, Tensor((1.0 - support)))
    cross = ad.sum_(ad.mul(ad.log(safe), Tensor(q_true * support)))
    entropy = float(np.sum(q_true[q_true > 0] * np.log(q_true[q_true > 0])))
    return ad.add(ad.neg(cross), entropy)


def loss_terms(
    clean: TokenSequence,
    corrupted: TokenSequence,
    plan: CorruptionPlan,
    output: DenoiserOutput,
    stacks: StackSet,
) -> LossTerms:
    n = len(clean.tokens)
    if len(corrupted.tokens) != n or plan.n_tokens != n:
        raise ShapeError("clean sequence, corrupted sequence, and plan must align")

    by_case: dict[str, dict[AttrKind, list]] = {
        "rec": {k: [] for k in AttrKind},
        "l0": {k: [] for k in AttrKind},
        "kl": {k: [] for k in AttrKind},
    }
    l_T_sum = 0.0
    n_rec = n_l0 = n_kl = 0
    priors = {kind: stacks[kind].prior_at_T() for kind in AttrKind}
    for i in range(n):
        kind = clean.tokens[i].kind
        row = i // 5
        x0 = clean.tokens[i].value_index
        if x0 >= stacks[kind].k:
            raise DataError(f"token {i} has no clean ground-truth value")
        t = int(plan.timesteps[i])
        if t == 0:
            by_case["rec"][kind].append((row, x0))
            n_rec += 1
            continue
        marginal_T = stacks[kind].forward_marginal(x0, stacks.T)
        pos = marginal_T > 0
        l_T_sum += float(
            np.sum(marginal_T[pos] * np.log(marginal_T[pos] / priors[kind][pos]))
        )
        if t == 1:
            by_case["l0"][kind].append((row, x0))
            n_l0 += 1
        else:
            x_t = corrupted.tokens[i].value_index
            by_case["kl"][kind].append((row, x_t, x0, t))
            n_kl += 1

    def summed(case: str, builder):
        node = None
        for kind in AttrKind:
            entries = by_case[case][kind]
            if not entries:
                continue
            cols = [np.array(c, dtype=np.int64) for c in zip(*entries)]
            term = builder(kind, *cols)
            node = term if node is None else ad.add(node, term)
        return node

    rec_sum = summed("rec", lambda kind, rows, x0: _nll_sum(output, kind, rows, x0))
    l0_sum = summed("l0", lambda kind, rows, x0: _nll_sum(output, kind, rows, x0))
    kl_sum = summed(
        "kl", lambda kind, rows, x_t, x0, t: _kl_sum(output, kind, rows, x_t, x0, t, stacks)
    )
    return LossTerms(rec_sum, l0_sum, kl_sum, n_rec, n_l0, n_kl, n, l_T_sum)


def reduce_terms(terms: list[LossTerms], lam: float) -> tuple[Tensor, LossBreakdown]:
    """Pool per-sequence sums into token-mean losses and the total objective."""
    n_tokens = sum(t.n_tokens for t in terms)
    if n_tokens == 0:
        raise DataError("no tokens to compute a loss over")

    def pooled(select):
        node = None
        for t in terms:
            part = select(t)
            if part is None:
                continue
            node = part if node is None else ad.add(node, part)
        return node

    rec = pooled(lambda t: t.rec_sum)
    vlb_parts = [p for p in (pooled(lambda t: t.l0_sum), pooled(lambda t: t.kl_sum)) if p is not None]
    if vlb_parts:
        vlb = vlb_parts[0]
        for p in vlb_parts[1:]:
            vlb = ad.add(vlb, p)
        vlb = ad.mul(vlb, 1.0 / n_tokens)
    else:
        vlb = Tensor(np.asarray(0.0))
    if rec is not None:
        rec = ad.mul(rec, 1.0 / n_tokens)
    else:
        rec = Tensor(np.asarray(0.0))
    # lam = 0 must leave total identical to the bound, so skip the term.
    total = vlb if lam == 0.0 else ad.add(vlb, ad.mul(rec, lam))

    n_diffused = sum(t.n_l0 + t.n_kl for t in terms)
    breakdown = LossBreakdown(
        l_vlb=vlb.item(),
        l_rec=rec.item(),
        l_total=total.item(),
        n_rec=sum(t.n_rec for t in terms),
        n_l0=sum(t.n_l0 for t in terms),
        n_kl=sum(t.n_kl for t in terms),
        l_T=(sum(t.l_T_sum for t in terms) / n_diffused) if n_diffused else 0.0,
    )
    return total, breakdown


def compute_loss(
    clean: TokenSequence,
    corrupted: TokenSequence,
    plan: CorruptionPlan,
    output: DenoiserOutput,
    stacks: StackSet,
    lam: float,
) -> tuple[Tensor, LossBreakdown]:
    """Single-sequence objective: token-mean bound plus lam-weighted reconstruction."""
    return reduce_terms([loss_terms(clean, corrupted, plan, output, stacks)], lam)
