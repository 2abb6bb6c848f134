"""Denoising decoders: confidence-top-k plus the two baseline strategies.

The confidence decoder runs ``steps`` reverse iterations.  Every iteration
re-predicts all tokens; among the attributes that are still missing it keeps
the k most confident sampled values (k = ceil(N_missing / steps)) and
re-masks the rest, so the decoder always terminates with a complete layout.
Committed values stay re-predictable on later iterations unless the request
freezes them; precise conditions are overwritten back onto the sequence each
iteration only when the request clamps conditions.

Sampling is restricted to clean values (committing MASK would be a no-op),
and the recorded confidence is the chosen value's probability under the
untempered distribution, which keeps the top-k ranking meaningful at
temperature zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    TOKENS_PER_ELEMENT,
    AttributeStatus,
    Layout,
    QuantizerConfig,
    TokenSequence,
    detokenize,
    tokenize,
)
from .diffusion import StackSet
from .errors import DataError, DecodeError
from .model import Denoiser, reverse_distribution, token_relation_ids
from .optim import seeded_rng
from .tasks import GenerationRequest


@dataclass
class Trajectory:
    """Intermediate layouts, one per denoising step, with their commit sets."""

    steps: list[Layout]
    commits: list[list[int]]  # committed token positions per step


@dataclass
class DecodeResult:
    layout: Layout
    trajectory: Trajectory
    seed: int


def _choose(p_clean: np.ndarray, temperature: float, rng: np.random.Generator):
    """Pick a clean value; returns (choice, untempered confidence)."""
    if temperature < 1e-6:
        choice = int(np.argmax(p_clean))
    else:
        logits = np.log(np.maximum(p_clean, 1e-300)) / temperature
        logits -= logits.max()
        q = np.exp(logits)
        q /= q.sum()
        choice = int(rng.choice(len(q), p=q))
    return choice, float(p_clean[choice])


class _DecodeState:
    """Shared plumbing for the three strategies."""

    def __init__(self, req: GenerationRequest, model: Denoiser, stacks: StackSet,
                 cfg: QuantizerConfig):
        seq = tokenize(req.layout)
        n_elements = seq.n_elements
        if n_elements > model.cfg.n_max:
            raise DataError(
                f"{n_elements} elements exceed the model's capacity of {model.cfg.n_max}"
            )
        self.req = req
        self.model = model
        self.stacks = stacks
        self.cfg = cfg
        self.seq = seq
        self.values = np.array(seq.values(), dtype=np.int64)
        self.flags = np.array(seq.flags(), dtype=np.int64)
        self.element_indices = np.array(
            [t.element_index for t in seq.tokens], dtype=np.int64
        )
        self.rel_ids = token_relation_ids(seq.relations, n_elements)
        self.kinds = [t.kind for t in seq.tokens]
        self.mask_index = np.array([stacks[k].k for k in self.kinds], dtype=np.int64)
        statuses = [
            req.layout.elements[i // TOKENS_PER_ELEMENT]
            .get(self.kinds[i])
            .status
            for i in range(len(self.values))
        ]
        self.precise = np.array([s is AttributeStatus.PRECISE for s in statuses])
        self.initially_missing = np.array(
            [s is AttributeStatus.MISSING for s in statuses]
        )
        self.input_values = self.values.copy()
        self.rng = seeded_rng(req.seed, "decode")

    def forward(self):
        return self.model.forward_arrays(
            self.values, self.flags, self.element_indices, self.rel_ids
        )

    def sample_all(self, output, t: int):
        """Restricted reverse sample and confidence for every token at step t.

        The mixing timestep clamps to the schedule horizon so a request may
        ask for more denoising steps than the trained chain length.
        """
        n = len(self.values)
        t = min(t, self.stacks.T)
        cand = np.empty(n, dtype=np.int64)
        conf = np.empty(n, dtype=np.float64)
        for i in range(n):
            stack = self.stacks[self.kinds[i]]
            p_rev = reverse_distribution(output.token_probs(i), int(self.values[i]), t, stack)
            p_clean = p_rev[: stack.k]
            total = p_clean.sum()
            if total <= 0.0:
                raise DecodeError(f"token {i}: no clean value reachable at step {t}")
            cand[i], conf[i] = _choose(p_clean / total, self.req.temperature, self.rng)
        return cand, conf

    def snapshot(self) -> Layout:
        seq = TokenSequence(
            tuple(
                type(t)(t.element_index, t.kind, int(v), int(f))
                for t, v, f in zip(self.seq.tokens, self.values, self.flags)
            ),
            dict(self.seq.relations),
            self.seq.canvas,
        )
        return detokenize(seq, self.cfg)

    def final_layout(self) -> Layout:
        if np.any(self.values >= self.mask_index):
            raise DecodeError("decoder finished with MASK bins remaining")
        seq = TokenSequence(
            tuple(
                type(t)(t.element_index, t.kind, int(v), 1)
                for t, v in zip(self.seq.tokens, self.values)
            ),
            dict(self.seq.relations),
            self.seq.canvas,
        )
        return detokenize(seq, self.cfg, statuses=[AttributeStatus.PRECISE] * len(self.values))


def _decode_confidence_topk(state: _DecodeState) -> DecodeResult:
    req = state.req
    T = req.steps
    committed = np.zeros(len(state.values), dtype=bool)
    n_missing = int(state.initially_missing.sum())
    k_commit = math.ceil(n_missing / T) if n_missing else 0
    steps: list[Layout] = []
    commits: list[list[int]] = []

    for t in range(T, 0, -1):
        output = state.forward()
        cand, conf = state.sample_all(output, t)
        new_values = state.values.copy()

        free = ~state.initially_missing & ~state.precise  # coarse: refined every step
        new_values[free] = cand[free]
        if req.freeze_committed:
            new_values[state.initially_missing & committed] = state.values[
                state.initially_missing & committed
            ]
        else:
            drifting = state.initially_missing & committed
            new_values[drifting] = cand[drifting]

        pending = state.initially_missing & ~committed
        step_commits: list[int] = []
        if pending.any() and k_commit:
            order = np.lexsort((np.arange(len(conf)), -conf))
            chosen = [i for i in order if pending[i]][:k_commit]
            for i in chosen:
                new_values[i] = cand[i]
                committed[i] = True
                step_commits.append(int(i))
            remasked = state.initially_missing & ~committed
            new_values[remasked] = state.mask_index[remasked]

        new_values[state.precise] = (
            state.input_values[state.precise]
            if req.clamp_conditions
            else cand[state.precise]
        )
        state.values = new_values
        steps.append(state.snapshot())
        commits.append(step_commits)

    return DecodeResult(state.final_layout(), Trajectory(steps, commits), req.seed)


def _decode_autoregressive(state: _DecodeState) -> DecodeResult:
    req = state.req
    T = req.steps
    missing_positions = [int(i) for i in np.flatnonzero(state.initially_missing)]
    n_missing = len(missing_positions)
    steps: list[Layout] = []
    commits: list[list[int]] = []
    for j, pos in enumerate(missing_positions):
        # Mixing timestep walks T -> 1 across the commit sequence.
        if n_missing > 1:
            t = int(round(T - j * (T - 1) / (n_missing - 1)))
        else:
            t = T
        output = state.forward()
        cand, _ = state.sample_all(output, max(t, 1))
        state.values[pos] = cand[pos]
        steps.append(state.snapshot())
        commits.append([pos])
    return DecodeResult(state.final_layout(), Trajectory(steps, commits), req.seed)


def _decode_non_autoregressive(state: _DecodeState) -> DecodeResult:
    req = state.req
    T = req.steps
    steps: list[Layout] = []
    commits: list[list[int]] = []
    first_commits = [int(i) for i in np.flatnonzero(state.initially_missing)]
    for t in range(T, 0, -1):
        output = state.forward()
        cand, _ = state.sample_all(output, t)
        new_values = cand.copy()
        if req.clamp_conditions:
            new_values[state.precise] = state.input_values[state.precise]
        state.values = new_values
        steps.append(state.snapshot())
        commits.append(first_commits if t == T else [])
    return DecodeResult(state.final_layout(), Trajectory(steps, commits), req.seed)


def decode(
    req: GenerationRequest,
    model: Denoiser,
    stacks: StackSet,
    cfg: QuantizerConfig,
) -> DecodeResult:
    """Run the request's decoding strategy to a complete layout."""
    state = _DecodeState(req, model, stacks, cfg)
    if req.strategy == "confidence-topk":
        return _decode_confidence_topk(state)
    if req.strategy == "autoregressive":
        return _decode_autoregressive(state)
    if req.strategy == "non-autoregressive":
        return _decode_non_autoregressive(state)
    raise DataError(f"unknown strategy {req.strategy!r}")
