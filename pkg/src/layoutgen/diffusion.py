"""Forward corruption machinery: transition matrices, schedules, posteriors, plans.

All transition matrices are column-stochastic with the convention
``Q[i, j] = q(x_t = i | x_{t-1} = j)`` over an extended vocabulary of K clean
values plus one absorbing MASK state at index K.  The mask row of every matrix
carries the masking probability ``gamma_t`` and the mask column is the unit
vector, so mask mass is non-decreasing along the chain.  Cumulative products
``Qbar_t = Q_t @ Qbar_{t-1}`` give the closed-form marginal q(x_t | x_0) as
their columns.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .core import AttrKind, AttributeToken, TokenSequence
from .errors import DomainError, ImpossibleTransitionError, ScheduleError, ShapeError


# ---------------------------------------------------------------------------
# Noise types


@dataclass(frozen=True)
class Uniform:
    """Replacement noise that is uniform over the other clean values."""


@dataclass(frozen=True)
class DiscretizedGaussian:
    """Distance-aware replacement noise over an ordered value range."""


@dataclass(frozen=True)
class BandDiagonal:
    """Replacement noise confined to a band of half-width ``half_width``."""

    half_width: int = 0  # 0 -> derived as max(1, round(0.05 * K))

    def width_for(self, k: int) -> int:
        v = self.half_width if self.half_width >= 1 else max(1, round(0.05 * k))
        return v


NoiseType = Uniform | DiscretizedGaussian | BandDiagonal

_NOISE_NAMES = {
    "Uniform": Uniform,
    "DiscretizedGaussian": DiscretizedGaussian,
    "BandDiagonal": BandDiagonal,
}


def noise_from_name(name: str) -> NoiseType:
    if name not in _NOISE_NAMES:
        raise ValueError(f"unknown noise type {name!r}; expected one of {sorted(_NOISE_NAMES)}")
    return _NOISE_NAMES[name]()


def noise_name(noise: NoiseType) -> str:
    return type(noise).__name__


# ---------------------------------------------------------------------------
# Schedules

#: Linear schedule endpoints; each parameter is evaluated at end * t / T.
BETA_CATEGORY_END = 0.02  # divided by the category vocabulary size
SIGMA_END = 0.02
GAMMA_END = 0.032


@dataclass(frozen=True)
class Schedule:
    """Linear per-timestep noise parameters, defined for t in [1, T]."""

    T: int = 100
    beta_category_end: float = BETA_CATEGORY_END
    sigma_end: float = SIGMA_END
    gamma_end: float = GAMMA_END

    def __post_init__(self):
        if self.T < 1:
            raise ScheduleError("T must be >= 1")
        if not 0 <= self.gamma_end <= 1:
            raise ScheduleError("gamma endpoint must lie in [0, 1]")

    def gamma(self, t: int) -> float:
        return self.gamma_end * t / self.T

    def sigma(self, t: int) -> float:
        return self.sigma_end * t / self.T

    def beta_uniform(self, t: int, k: int) -> float:
        return self.beta_category_end / k * t / self.T


# ---------------------------------------------------------------------------
# Transition matrices


def build_transition_matrix(
    noise: NoiseType, kind: AttrKind, t: int, sched: Schedule, k: int
) -> np.ndarray:
    """One-step corruption kernel of shape (K+1, K+1), float64, column-stochastic.

    The diagonal is the residual that forces each clean column to sum to one;
    a negative residual means the schedule is too aggressive for this K.
    ``kind`` selects nothing today (all kinds share one schedule shape) but is
    part of the contract so per-kind schedules can be introduced without
    touching call sites.
    """
    if not 1 <= t <= sched.T:
        raise ScheduleError(f"t={t} outside [1, {sched.T}]")
    if k < 2:
        raise ScheduleError(f"vocabulary size {k} must be >= 2")
    gamma = sched.gamma(t)
    q = np.zeros((k + 1, k + 1), dtype=np.float64)

    if isinstance(noise, Uniform):
        beta = sched.beta_uniform(t, k)
        block = np.full((k, k), beta, dtype=np.float64)
    elif isinstance(noise, DiscretizedGaussian):
        sigma = sched.sigma(t)
        if sigma <= 0:
            raise ScheduleError("sigma must be positive for t >= 1")
        offsets = np.arange(-(k - 1), k, dtype=np.float64)
        z = np.exp(-4.0 * offsets**2 / ((k - 1) ** 2 * sigma)).sum()
        d = np.abs(np.arange(k)[:, None] - np.arange(k)[None, :]).astype(np.float64)
        block = (1.0 - gamma) * np.exp(-4.0 * d**2 / ((k - 1) ** 2 * sigma)) / z
    elif isinstance(noise, BandDiagonal):
        v = noise.width_for(k)
        sigma = sched.sigma(t)
        d = np.abs(np.arange(k)[:, None] - np.arange(k)[None, :])
        block = np.where((d > 0) & (d <= v), sigma / k, 0.0)
    else:
        raise TypeError(f"unsupported noise type {noise!r}")

    np.fill_diagonal(block, 0.0)
    diag = 1.0 - gamma - block.sum(axis=0)
    if np.any(diag < 0):
        raise ScheduleError(
            f"{noise_name(noise)} schedule at t={t} leaves a negative diagonal (K={k})"
        )
    block[np.arange(k), np.arange(k)] = diag
    q[:k, :k] = block
    q[k, :k] = gamma
    q[k, k] = 1.0
    return q


@dataclass
class TransitionStack:
    """Per-timestep kernels Q_1..Q_T and cumulative products Qbar_0..Qbar_T."""

    k: int
    single: np.ndarray  # (T+1, K+1, K+1); index 0 is the identity, unused by the chain
    cumulative: np.ndarray  # (T+1, K+1, K+1); cumulative[0] = I

    @property
    def T(self) -> int:
        return self.single.shape[0] - 1

    @property
    def mask(self) -> int:
        return self.k

    def forward_marginal(self, x0: int, t: int) -> np.ndarray:
        """q(x_t | x_0) as a length-(K+1) vector; t = 0 is the delta at x0."""
        if not 0 <= x0 < self.k:
            raise DomainError(f"x0={x0} must be a clean value in [0, {self.k})")
        if not 0 <= t <= self.T:
            raise DomainError(f"t={t} outside [0, {self.T}]")
        return self.cumulative[t][:, x0].copy()

    def sample_forward(self, x0: int, t: int, rng: np.random.Generator) -> int:
        probs = self.forward_marginal(x0, t)
        return int(rng.choice(self.k + 1, p=probs / probs.sum()))

    def sample_forward_batch(
        self, x0: np.ndarray, t: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        """Vectorized forward sampling for aligned arrays of values and timesteps."""
        x0 = np.asarray(x0, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        if np.any((x0 < 0) | (x0 >= self.k)):
            raise DomainError("x0 values must be clean (no MASK) for forward sampling")
        probs = self.cumulative[t, :, x0]  # (n, K+1)
        cdf = np.cumsum(probs, axis=1)
        u = rng.random(len(x0)) * cdf[:, -1]
        return (cdf < u[:, None]).sum(axis=1).astype(np.int64)

    def posterior(self, x_t: int, x0: int, t: int) -> np.ndarray:
        """q(x_{t-1} = k | x_t, x0) over the K+1 extended values, for t >= 1."""
        if t < 1:
            raise DomainError("posterior requires t >= 1")
        if not 0 <= x0 < self.k:
            raise DomainError(f"x0={x0} must be a clean value")
        denom = self.cumulative[t][x_t, x0]
        if denom <= 0.0:
            raise ImpossibleTransitionError(
                f"q(x_{t}={x_t} | x0={x0}) = 0; posterior undefined"
            )
        return self.single[t][x_t, :] * self.cumulative[t - 1][:, x0] / denom

    def posterior_matrix(self, x_t: int, t: int) -> np.ndarray:
        """Posterior columns for every clean conditioning value.

        Returns M of shape (K+1, K) with M[:, x0] = q(x_{t-1} | x_t, x0).
        Columns whose forward mass q(x_t | x0) is zero come back all-zero and
        must be handled by the caller (they correspond to impossible x0).
        """
        if t < 1:
            raise DomainError("posterior requires t >= 1")
        denom = self.cumulative[t][x_t, : self.k]  # (K,)
        num = self.single[t][x_t, :, None] * self.cumulative[t - 1][:, : self.k]  # (K+1, K)
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.where(denom[None, :] > 0.0, num / denom[None, :], 0.0)
        return m

    def prior_at_T(self) -> np.ndarray:
        """Reference terminal distribution: the t=T marginal averaged over a
        uniform clean value; used only for the constant prior-gap diagnostic."""
        return self.cumulative[self.T][:, : self.k].mean(axis=1)


def accumulate(matrices: Sequence[np.ndarray]) -> TransitionStack:
    """Stack one-step kernels and their cumulative products, Qbar_t = Q_t @ Qbar_{t-1}."""
    if not matrices:
        raise ShapeError("need at least one transition matrix")
    size = matrices[0].shape[0]
    for m in matrices:
        if m.shape != (size, size):
            raise ShapeError(f"inconsistent matrix shapes: {m.shape} vs {(size, size)}")
    T = len(matrices)
    single = np.zeros((T + 1, size, size), dtype=np.float64)
    cumulative = np.zeros((T + 1, size, size), dtype=np.float64)
    single[0] = np.eye(size)
    cumulative[0] = np.eye(size)
    for t, m in enumerate(matrices, start=1):
        single[t] = m
        cumulative[t] = m @ cumulative[t - 1]
    return TransitionStack(k=size - 1, single=single, cumulative=cumulative)


def build_stack(noise: NoiseType, kind: AttrKind, sched: Schedule, k: int) -> TransitionStack:
    return accumulate(
        [build_transition_matrix(noise, kind, t, sched, k) for t in range(1, sched.T + 1)]
    )


@dataclass
class StackSet:
    """One transition stack per attribute kind, sharing a schedule."""

    stacks: Mapping[AttrKind, TransitionStack]
    schedule: Schedule

    def __getitem__(self, kind: AttrKind) -> TransitionStack:
        return self.stacks[kind]

    @property
    def T(self) -> int:
        return self.schedule.T


def build_stack_set(
    bins: Mapping[AttrKind, int],
    sched: Schedule,
    category_noise: NoiseType = Uniform(),
    geometry_noise: NoiseType = DiscretizedGaussian(),
) -> StackSet:
    stacks = {}
    for kind in AttrKind:
        noise = category_noise if kind is AttrKind.CATEGORY else geometry_noise
        stacks[kind] = build_stack(noise, kind, sched, bins[kind])
    return StackSet(stacks=stacks, schedule=sched)


# ---------------------------------------------------------------------------
# Corruption strategies


class CorruptionStrategy(Enum):
    PARALLEL = "ParallelDecoupled"
    SEQUENTIAL = "SequentialDecoupled"
    PARTIAL = "PartialDecoupled"
    NON_DECOUPLED = "NonDecoupled"


class DecouplingLevel(Enum):
    NONE = "None"
    ELEMENT = "Element"
    TOKEN = "Token"
    TYPE_GROUP = "TypeGroup"


#: Fraction of the master range by which the partial strategy delays each
#: attribute class; sizes lead, positions trail by 0.3T, categories by 0.6T.
PARTIAL_OVERLAP = 0.3
DEFAULT_SELECT_PROB = 0.9


def _kind_class(kind: AttrKind) -> str:
    if kind is AttrKind.CATEGORY:
        return "category"
    if kind in (AttrKind.X, AttrKind.Y):
        return "position"
    return "size"


def _clamp_t(value: float, T: int) -> int:
    return min(max(int(round(value)), 1), T)


def _window(strategy: CorruptionStrategy, cls: str, master: int, T: int, overlap: float) -> int:
    """Map a master timestep onto the per-class window of the given strategy;
    every class window is the identity clipped to [1, T] shifted by the class's
    stage delay."""
    if strategy in (CorruptionStrategy.PARALLEL, CorruptionStrategy.NON_DECOUPLED):
        return _clamp_t(master, T)
    if strategy is CorruptionStrategy.PARTIAL:
        delay = {"size": 0.0, "position": overlap * T, "category": 2 * overlap * T}[cls]
        return _clamp_t(master - delay, T)
    if strategy is CorruptionStrategy.SEQUENTIAL:
        delay = {"size": 0, "position": T, "category": 2 * T}[cls]
        return _clamp_t(master - delay, T)
    raise TypeError(f"unsupported strategy {strategy!r}")


def _master_range(strategy: CorruptionStrategy, T: int, overlap: float) -> int:
    if strategy is CorruptionStrategy.PARTIAL:
        return max(1, int(round((1 + 2 * overlap) * T)))
    if strategy is CorruptionStrategy.SEQUENTIAL:
        return 3 * T
    return T


@dataclass
class CorruptionPlan:
    """Per-token corruption selection and timestep assignment; t = 0 means untouched."""

    selected: np.ndarray  # bool (5N,)
    timesteps: np.ndarray  # int (5N,)

    def __post_init__(self):
        if self.selected.shape != self.timesteps.shape:
            raise ShapeError("selected/timesteps must be aligned")

    @property
    def n_tokens(self) -> int:
        return len(self.selected)


def plan_corruption(
    seq: TokenSequence,
    strategy: CorruptionStrategy,
    level: DecouplingLevel,
    T: int,
    rng: np.random.Generator,
    select_prob: float = DEFAULT_SELECT_PROB,
    overlap: float = PARTIAL_OVERLAP,
    select_per: str = "token",
) -> CorruptionPlan:
    """Choose which tokens diffuse and assign their timesteps.

    The decoupling level fixes how many independent timelines exist (one,
    per element, per token, or one per attribute class); the strategy fixes
    the master-timestep range and how each attribute class's window maps onto
    it.  The staged strategies draw a single master per timeline and shift it
    per class, so with the default TypeGroup level the three classes advance
    in their staggered order.  ``select_per`` = "group" selects whole
    timelines instead of individual tokens.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    tokens = seq.tokens
    n = len(tokens)
    kinds = [t.kind for t in tokens]

    # Timeline index per token.
    if strategy is CorruptionStrategy.NON_DECOUPLED or level is DecouplingLevel.NONE:
        groups = np.zeros(n, dtype=np.int64)
    elif level is DecouplingLevel.ELEMENT:
        groups = np.array([t.element_index for t in tokens], dtype=np.int64)
    elif level is DecouplingLevel.TOKEN:
        groups = np.arange(n, dtype=np.int64)
    else:  # TYPE_GROUP
        class_ids = {"category": 0, "position": 1, "size": 2}
        groups = np.array([class_ids[_kind_class(k)] for k in kinds], dtype=np.int64)

    # The staged strategies share one master across the class timelines: their
    # decoupling comes from the per-class windows, not from independent draws.
    if strategy in (CorruptionStrategy.PARTIAL, CorruptionStrategy.SEQUENTIAL) and level in (
        DecouplingLevel.TYPE_GROUP,
        DecouplingLevel.NONE,
    ):
        groups = np.zeros(n, dtype=np.int64)

    if select_per == "token":
        selected = rng.random(n) < select_prob
    elif select_per == "group":
        unique = np.unique(groups)
        chosen = {g: rng.random() < select_prob for g in unique}
        selected = np.array([chosen[g] for g in groups])
    else:
        raise ValueError(f"select_per must be 'token' or 'group', got {select_per!r}")

    hi = _master_range(strategy, T, overlap)
    masters = {g: int(rng.integers(1, hi + 1)) for g in np.unique(groups)}

    timesteps = np.zeros(n, dtype=np.int64)
    for i in range(n):
        if selected[i]:
            timesteps[i] = _window(strategy, _kind_class(kinds[i]), masters[groups[i]], T, overlap)
    return CorruptionPlan(selected=np.asarray(selected, dtype=bool), timesteps=timesteps)


def corrupt(
    seq: TokenSequence,
    plan: CorruptionPlan,
    stacks: StackSet,
    rng: np.random.Generator,
) -> TokenSequence:
    """Replace each selected token by a forward sample at its planned timestep.

    Selected tokens lose their condition flag even when the sample happens to
    equal the clean value; unselected tokens stay precise.
    """
    if plan.n_tokens != len(seq.tokens):
        raise ShapeError(f"plan covers {plan.n_tokens} tokens, sequence has {len(seq.tokens)}")
    values = np.array([t.value_index for t in seq.tokens], dtype=np.int64)
    new_values = values.copy()
    for kind in AttrKind:
        idx = np.array(
            [i for i, t in enumerate(seq.tokens) if t.kind is kind and plan.selected[i]],
            dtype=np.int64,
        )
        if len(idx) == 0:
            continue
        stack = stacks[kind]
        if np.any(values[idx] >= stack.k):
            raise DomainError("cannot corrupt a token that is already MASK")
        new_values[idx] = stack.sample_forward_batch(values[idx], plan.timesteps[idx], rng)
    tokens = []
    for i, tok in enumerate(seq.tokens):
        if plan.selected[i]:
            tokens.append(
                AttributeToken(tok.element_index, tok.kind, int(new_values[i]), condition_flag=0)
            )
        else:
            tokens.append(
                AttributeToken(tok.element_index, tok.kind, tok.value_index, condition_flag=1)
            )
    return TokenSequence(tuple(tokens), dict(seq.relations), seq.canvas)
