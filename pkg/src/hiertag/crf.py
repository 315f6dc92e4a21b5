"""Linear-chain CRF lattice algorithms in log-space.

Everything here is a pure function of a PotentialTable (per-position emission
scores plus transition/start/stop scores) and an optional LatticeMask that
restricts each position to a subset of tags.  The loss is the gap between the
full and the masked log-partition, so its gradients are differences of
posterior expectations.  All recursions use max-shifted log-sum-exp; finite
inputs always produce finite outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


def logsumexp(a: np.ndarray, axis: int | None = None):
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))
    if axis is None:
        return out.item()
    return np.squeeze(out, axis=axis)


@dataclass
class PotentialTable:
    """Log-potentials for one sequence: emissions (n, y), transitions (y, y),
    start (y,), stop (y,)."""

    emissions: np.ndarray
    transitions: np.ndarray
    start: np.ndarray
    stop: np.ndarray

    def __post_init__(self) -> None:
        self.emissions = np.asarray(self.emissions, dtype=np.float64)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.start = np.asarray(self.start, dtype=np.float64)
        self.stop = np.asarray(self.stop, dtype=np.float64)
        if self.emissions.ndim != 2 or self.emissions.shape[0] < 1:
            raise ValueError("emissions must be (n, y_count) with n >= 1")
        y = self.emissions.shape[1]
        if y < 1:
            raise ValueError("y_count must be >= 1")
        if self.transitions.shape != (y, y):
            raise ValueError("transitions must be (y_count, y_count)")
        if self.start.shape != (y,) or self.stop.shape != (y,):
            raise ValueError("start and stop must be (y_count,)")
        for arr in (self.emissions, self.transitions, self.start, self.stop):
            if not np.isfinite(arr).all():
                raise ValueError("potentials must be finite")

    @property
    def n(self) -> int:
        return self.emissions.shape[0]

    @property
    def y_count(self) -> int:
        return self.emissions.shape[1]


class LatticeMask:
    """Per-position allowed tag indices.  Every position keeps at least one."""

    def __init__(self, allowed: Iterable[Iterable[int]]) -> None:
        self.allowed: tuple[np.ndarray, ...] = tuple(
            np.unique(np.asarray(list(a), dtype=np.int64)) for a in allowed
        )
        for i, idx in enumerate(self.allowed):
            if idx.size == 0:
                raise ValueError(f"mask position {i} allows no tags")
            if idx[0] < 0:
                raise ValueError(f"mask position {i} has a negative tag index")
        # An all-singleton mask pins a unique path; recursions collapse to it.
        self.singleton_path: np.ndarray | None = None
        if all(idx.size == 1 for idx in self.allowed):
            self.singleton_path = np.concatenate(self.allowed)

    @classmethod
    def full(cls, n: int, y_count: int) -> "LatticeMask":
        return cls([range(y_count)] * n)

    def __len__(self) -> int:
        return len(self.allowed)

    def validate_for(self, table: PotentialTable) -> None:
        if len(self.allowed) != table.n:
            raise ValueError(
                f"mask length {len(self.allowed)} != sequence length {table.n}"
            )
        for i, idx in enumerate(self.allowed):
            if idx[-1] >= table.y_count:
                raise ValueError(
                    f"mask position {i} allows tag {int(idx[-1])} "
                    f">= y_count {table.y_count}"
                )


@dataclass
class LatticeGradients:
    """d(loss)/d(potential) for every PotentialTable entry."""

    d_emissions: np.ndarray
    d_transitions: np.ndarray
    d_start: np.ndarray
    d_stop: np.ndarray


def _posteriors_dense(table: PotentialTable):
    em, trans = table.emissions, table.transitions
    n, y = em.shape

    alpha = np.empty((n, y))
    prev = table.start + em[0]
    alpha[0] = prev
    for i in range(1, n):
        step = prev[:, None] + trans
        m = step.max(axis=0)
        prev = m + np.log(np.exp(step - m).sum(axis=0)) + em[i]
        alpha[i] = prev
    last = prev + table.stop
    m = last.max()
    log_z = float(m + np.log(np.exp(last - m).sum()))

    beta = np.empty((n, y))
    prev = table.stop
    beta[-1] = prev
    for i in range(n - 2, -1, -1):
        step = trans + (em[i + 1] + prev)[None, :]
        m = step.max(axis=1)
        prev = m + np.log(np.exp(step - m[:, None]).sum(axis=1))
        beta[i] = prev

    unary = np.exp(alpha + beta - log_z)
    pairwise = np.exp(
        alpha[: n - 1, :, None]
        + trans[None, :, :]
        + (em[1:] + beta[1:])[:, None, :]
        - log_z
    )
    return log_z, unary, pairwise


def _pinned_posteriors(table: PotentialTable, path: np.ndarray):
    n, y = table.emissions.shape
    log_z = sequence_score(table, path)
    unary = np.zeros((n, y))
    unary[np.arange(n), path] = 1.0
    pairwise = np.zeros((max(n - 1, 0), y, y))
    pairwise[np.arange(n - 1), path[:-1], path[1:]] = 1.0
    return log_z, unary, pairwise


def _posteriors_masked(table: PotentialTable, mask: LatticeMask):
    if mask.singleton_path is not None:
        return _pinned_posteriors(table, mask.singleton_path)
    em, trans = table.emissions, table.transitions
    n, y = em.shape
    idx = mask.allowed
    blocks = [trans[idx[i][:, None], idx[i + 1]] for i in range(n - 1)]

    alphas: list[np.ndarray] = [table.start[idx[0]] + em[0, idx[0]]]
    for i in range(1, n):
        step = alphas[i - 1][:, None] + blocks[i - 1]
        m = step.max(axis=0)
        alphas.append(m + np.log(np.exp(step - m).sum(axis=0)) + em[i, idx[i]])
    last = alphas[-1] + table.stop[idx[-1]]
    m = last.max()
    log_z = float(m + np.log(np.exp(last - m).sum()))

    betas: list[np.ndarray] = [np.empty(0)] * n
    betas[-1] = table.stop[idx[-1]]
    for i in range(n - 2, -1, -1):
        step = blocks[i] + (em[i + 1, idx[i + 1]] + betas[i + 1])[None, :]
        m = step.max(axis=1)
        betas[i] = m + np.log(np.exp(step - m[:, None]).sum(axis=1))

    unary = np.zeros((n, y))
    for i in range(n):
        unary[i, idx[i]] = np.exp(alphas[i] + betas[i] - log_z)
    pairwise = np.zeros((max(n - 1, 0), y, y))
    for i in range(n - 1):
        block = np.exp(
            alphas[i][:, None]
            + blocks[i]
            + (em[i + 1, idx[i + 1]] + betas[i + 1])[None, :]
            - log_z
        )
        pairwise[i][idx[i][:, None], idx[i + 1]] = block
    return log_z, unary, pairwise


def _posteriors(table: PotentialTable, mask: LatticeMask | None):
    if mask is None:
        return _posteriors_dense(table)
    mask.validate_for(table)
    return _posteriors_masked(table, mask)


def log_partition(table: PotentialTable, mask: LatticeMask | None = None) -> float:
    """Log of the summed exp-scores of all (mask-compatible) tag sequences."""
    em, trans = table.emissions, table.transitions
    n = table.n
    if mask is None:
        alpha = table.start + em[0]
        for i in range(1, n):
            step = alpha[:, None] + trans
            m = step.max(axis=0)
            alpha = m + np.log(np.exp(step - m).sum(axis=0)) + em[i]
        last = alpha + table.stop
        m = last.max()
        return float(m + np.log(np.exp(last - m).sum()))
    mask.validate_for(table)
    if mask.singleton_path is not None:
        return sequence_score(table, mask.singleton_path)
    idx = mask.allowed
    alpha = table.start[idx[0]] + em[0, idx[0]]
    for i in range(1, n):
        step = alpha[:, None] + trans[idx[i - 1][:, None], idx[i]]
        m = step.max(axis=0)
        alpha = m + np.log(np.exp(step - m).sum(axis=0)) + em[i, idx[i]]
    last = alpha + table.stop[idx[-1]]
    m = last.max()
    return float(m + np.log(np.exp(last - m).sum()))


def constrained_log_partition(table: PotentialTable, mask: LatticeMask) -> float:
    return log_partition(table, mask)


def log_partition_backward(table: PotentialTable, mask: LatticeMask | None = None) -> float:
    """Same quantity as log_partition, via the backward recursion (cross-check)."""
    em, trans = table.emissions, table.transitions
    n = table.n
    if mask is None:
        beta = table.stop.copy()
        for i in range(n - 2, -1, -1):
            beta = logsumexp(trans + (em[i + 1] + beta)[None, :], axis=1)
        return float(logsumexp(table.start + em[0] + beta))
    mask.validate_for(table)
    idx = mask.allowed
    beta = table.stop[idx[-1]].copy()
    for i in range(n - 2, -1, -1):
        step = trans[np.ix_(idx[i], idx[i + 1])] + (em[i + 1, idx[i + 1]] + beta)[None, :]
        beta = logsumexp(step, axis=1)
    return float(logsumexp(table.start[idx[0]] + em[0, idx[0]] + beta))


def marginals(table: PotentialTable, mask: LatticeMask | None = None):
    """Posterior tag and tag-pair probabilities, zero outside the mask."""
    _, unary, pairwise = _posteriors(table, mask)
    return unary, pairwise


def loss_and_grad(table: PotentialTable, mask: LatticeMask):
    """Gap between full and masked log-partitions, with its gradients.

    The gradient w.r.t. each potential entry is the unconstrained posterior
    expectation of that entry's indicator minus the masked one.
    """
    log_z, unary, pairwise = _posteriors_dense(table)
    log_z_m, unary_m, pairwise_m = _posteriors(table, mask)
    loss = log_z - log_z_m
    grads = LatticeGradients(
        d_emissions=unary - unary_m,
        d_transitions=pairwise.sum(axis=0) - pairwise_m.sum(axis=0),
        d_start=unary[0] - unary_m[0],
        d_stop=unary[-1] - unary_m[-1],
    )
    return loss, grads


def sequence_score(table: PotentialTable, tags: Sequence[int]) -> float:
    if len(tags) != table.n:
        raise ValueError(f"tag sequence length {len(tags)} != n {table.n}")
    t = np.asarray(tags, dtype=np.int64)
    if t.size and (t.min() < 0 or t.max() >= table.y_count):
        raise ValueError("tag index out of range")
    score = table.start[t[0]] + table.emissions[np.arange(table.n), t].sum()
    score += table.transitions[t[:-1], t[1:]].sum() + table.stop[t[-1]]
    return float(score)


def sequence_log_prob(table: PotentialTable, tags: Sequence[int]) -> float:
    """Log-probability of one tag sequence under the full lattice; always <= 0."""
    return sequence_score(table, tags) - log_partition(table)


def viterbi(table: PotentialTable) -> tuple[list[int], float]:
    """Highest-scoring tag sequence.

    np.argmax takes the first maximum, so every backpointer decision breaks
    ties toward the lower tag index.
    """
    em, trans = table.emissions, table.transitions
    n, y = em.shape
    delta = table.start + em[0]
    back = np.empty((n, y), dtype=np.int64)
    for i in range(1, n):
        step = delta[:, None] + trans
        back[i] = np.argmax(step, axis=0)
        delta = step[back[i], np.arange(y)] + em[i]
    delta = delta + table.stop
    last = int(np.argmax(delta))
    path = [last]
    for i in range(n - 1, 0, -1):
        path.append(int(back[i, path[-1]]))
    path.reverse()
    return path, float(delta[last])
