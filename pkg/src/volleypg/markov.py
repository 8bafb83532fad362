"""Empirical rally Markov chain and sideout probabilities by absorption."""
from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import MissingState, NoSupport, NonConvergent
from .states import (
    BACKOFF_LEVELS,
    RECEIVER_WINS,
    SERVER_WINS,
    TERMINALS,
    PointStateKey,
    coarsen,
    encode_state_sequence,
    win_prob,
)

DEFAULT_SUPPORT = 20


def transition_counts(points: Iterable) -> Counter:
    """Consecutive state pairs of every rally. Counters from shards add up."""
    pairs = Counter()
    for p in points:
        seq = encode_state_sequence(p)
        pairs.update(zip(seq, seq[1:]))
    return pairs


@dataclass
class TransitionModel:
    states: list
    counts: sp.csr_matrix
    P1: sp.csr_matrix
    support: int
    # state index -> (level, class key) for rows that were pooled
    backoff: dict = field(default_factory=dict)

    def __post_init__(self):
        self.index = {s: i for i, s in enumerate(self.states)}

    @property
    def n_states(self) -> int:
        return len(self.states)

    def visits(self) -> np.ndarray:
        return np.asarray(self.counts.sum(axis=1)).ravel()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.P1.sum(axis=1)).ravel()

    @classmethod
    def from_counts(cls, pairs: Counter, support: int = DEFAULT_SUPPORT) -> "TransitionModel":
        states = sorted(set(TERMINALS) | {s for pair in pairs for s in pair})
        index = {s: i for i, s in enumerate(states)}
        n = len(states)
        rows_of = defaultdict(dict)
        for (a, b), c in pairs.items():
            rows_of[a][b] = rows_of[a].get(b, 0) + c
        pooled = {lvl: defaultdict(Counter) for lvl in BACKOFF_LEVELS[1:]}
        for a, row in rows_of.items():
            for lvl in BACKOFF_LEVELS[1:]:
                pooled[lvl][coarsen(a, lvl)].update(row)

        ci, cj, cv = [], [], []
        pi, pj, pv = [], [], []
        backoff = {}
        for s in states:
            i = index[s]
            if s.terminal:
                pi.append(i)
                pj.append(i)
                pv.append(1.0)
                continue
            row = rows_of.get(s, {})
            for b, c in row.items():
                ci.append(i)
                cj.append(index[b])
                cv.append(c)
            use = row
            if sum(row.values()) < support:
                for lvl in BACKOFF_LEVELS[1:]:
                    cand = pooled[lvl][coarsen(s, lvl)]
                    use = cand
                    backoff[i] = (lvl, coarsen(s, lvl))
                    if sum(cand.values()) >= support:
                        break
            total = sum(use.values())
            if total == 0:
                # never left this state: keep it absorbing so the residual check flags it
                pi.append(i)
                pj.append(i)
                pv.append(1.0)
                continue
            for b in sorted(use, key=index.__getitem__):
                pi.append(i)
                pj.append(index[b])
                pv.append(use[b] / total)
        counts = sp.csr_matrix((np.asarray(cv, dtype=np.int64), (ci, cj)), shape=(n, n))
        P1 = sp.csr_matrix((np.asarray(pv, dtype=np.float64), (pi, pj)), shape=(n, n))
        P1.sort_indices()
        counts.sort_indices()
        return cls(states, counts, P1, support, backoff)

    def to_json(self) -> dict:
        c = self.counts.tocoo()
        order = np.lexsort((c.col, c.row))
        return {
            "support": self.support,
            "states": [s.to_list() for s in self.states],
            "counts": [[int(c.row[k]), int(c.col[k]), int(c.data[k])] for k in order],
        }

    @classmethod
    def from_json(cls, d: dict) -> "TransitionModel":
        states = [PointStateKey.from_list(x) for x in d["states"]]
        pairs = Counter()
        for i, j, c in d["counts"]:
            pairs[(states[i], states[j])] += c
        model = cls.from_counts(pairs, d["support"])
        return model


def count_transitions(points: Sequence, support: int = DEFAULT_SUPPORT, threads: int = 1) -> TransitionModel:
    if threads > 1 and len(points) > 1:
        step = math.ceil(len(points) / threads)
        shards = [points[k:k + step] for k in range(0, len(points), step)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(transition_counts, shards))
        pairs = Counter()
        for part in parts:
            pairs.update(part)
    else:
        pairs = transition_counts(points)
    return TransitionModel.from_counts(pairs, support)


def matrix_power_steps(n_steps: int) -> int:
    """Number of squarings so that 2**k >= n_steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    return max(0, math.ceil(math.log2(n_steps)))


@dataclass
class PwpTable:
    states: list
    v_values: np.ndarray
    visits: np.ndarray
    residual: np.ndarray
    n_steps: int
    steps_used: int

    def __post_init__(self):
        self.index = {s: i for i, s in enumerate(self.states)}
        self._classes = {}
        for lvl in BACKOFF_LEVELS[1:]:
            num = defaultdict(float)
            den = defaultdict(float)
            for s, v, n in zip(self.states, self.v_values, self.visits):
                if s.terminal or n <= 0:
                    continue
                k = coarsen(s, lvl)
                num[k] += v * n
                den[k] += n
            self._classes[lvl] = {k: num[k] / den[k] for k in num}

    def lookup(self, key: PointStateKey) -> tuple[float, int]:
        """Sideout probability and the back-off level used to find it."""
        i = self.index.get(key)
        if i is not None:
            return float(self.v_values[i]), 0
        if key == RECEIVER_WINS:
            return 1.0, 0
        if key == SERVER_WINS:
            return 0.0, 0
        for lvl in BACKOFF_LEVELS[1:]:
            v = self._classes[lvl].get(coarsen(key, lvl))
            if v is not None:
                return float(v), lvl
        raise MissingState(f"no sideout probability for {key}", state=str(key))

    def v(self, key: PointStateKey) -> float:
        return self.lookup(key)[0]

    def w(self, key: PointStateKey) -> float:
        """Win probability of the team in possession at ``key``."""
        return win_prob(self.v(key), key.side)

    def win_prob(self, key: PointStateKey, side: str) -> float:
        return win_prob(self.v(key), side)

    @property
    def max_residual(self) -> float:
        return float(self.residual.max()) if len(self.residual) else 0.0

    def to_json(self) -> dict:
        return {
            "n_steps": self.n_steps,
            "steps_used": self.steps_used,
            "states": [s.to_list() for s in self.states],
            "v": [float(x) for x in self.v_values],
            "visits": [int(x) for x in self.visits],
            "residual": [float(x) for x in self.residual],
        }

    @classmethod
    def from_json(cls, d: dict) -> "PwpTable":
        return cls(
            [PointStateKey.from_list(x) for x in d["states"]],
            np.asarray(d["v"], dtype=float),
            np.asarray(d["visits"], dtype=np.int64),
            np.asarray(d["residual"], dtype=float),
            d["n_steps"], d["steps_used"],
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["state_key", "count", "v"])
            for s, n, v in zip(self.states, self.visits, self.v_values):
                w.writerow([str(s), int(n), f"{v:.4f}"])


def absorb(model: TransitionModel, n_steps: int = 100, tol: float = 1e-9) -> PwpTable:
    """Sideout probability of every state from the n-step transition matrix.

    The power is taken by repeated squaring, so the matrix actually used is
    P1 raised to the smallest power of two that is at least ``n_steps``.
    """
    k = matrix_power_steps(n_steps)
    P = model.P1.tocsr()
    for _ in range(k):
        P = (P @ P).tocsr()
    rw = model.index[RECEIVER_WINS]
    sw = model.index[SERVER_WINS]
    dense_cols = P[:, [rw, sw]].toarray()
    nonterminal = np.ones(model.n_states, dtype=bool)
    nonterminal[[rw, sw]] = False
    residual = np.asarray(P[:, nonterminal].sum(axis=1)).ravel()
    v = np.clip(dense_cols[:, 0], 0.0, 1.0)
    table = PwpTable(list(model.states), v, model.visits(), residual, n_steps, 2 ** k)
    bad = residual > tol
    if bad.any():
        worst = {str(model.states[i]): float(residual[i]) for i in np.flatnonzero(bad)}
        raise NonConvergent(
            f"{int(bad.sum())} states keep more than {tol:g} mass after {2 ** k} steps",
            residual=worst,
        )
    return table


# --- conditional baselines over attack outcomes ----------------------------------

# outcome categories of an attack
ERROR, CLEAN, BLOCK_ERROR, THROUGH, RETURN = "error", "clean", "block_error", "through", "return"
CATEGORIES = (ERROR, CLEAN, BLOCK_ERROR, THROUGH, RETURN)

# nodes of the attack outcome tree, as the set of categories below them
NODES = {
    "root": frozenset(CATEGORIES),
    "error": frozenset({ERROR}),
    "no_error": frozenset({CLEAN, BLOCK_ERROR, THROUGH, RETURN}),
    "clean": frozenset({CLEAN}),
    "touch": frozenset({BLOCK_ERROR, THROUGH, RETURN}),
    "block_error": frozenset({BLOCK_ERROR}),
    "no_block_error": frozenset({THROUGH, RETURN}),
    "through": frozenset({THROUGH}),
    "return": frozenset({RETURN}),
}


@dataclass(frozen=True)
class AttackContext:
    pre: PointStateKey
    category: str
    w_post: float


class BaselineTable:
    """Mean of w(S') over attacks in one tree node, by (coarsened) pre-state."""

    def __init__(self, node: str, contexts: Iterable[AttackContext], support: int = DEFAULT_SUPPORT):
        if node not in NODES:
            raise KeyError(f"unknown tree node {node!r}")
        self.node = node
        self.support = support
        cats = NODES[node]
        sums = {lvl: defaultdict(float) for lvl in BACKOFF_LEVELS}
        counts = {lvl: defaultdict(int) for lvl in BACKOFF_LEVELS}
        for c in contexts:
            if c.category not in cats:
                continue
            for lvl in BACKOFF_LEVELS:
                k = coarsen(c.pre, lvl)
                sums[lvl][k] += c.w_post
                counts[lvl][k] += 1
        self._sums = sums
        self._counts = counts

    def cell(self, pre: PointStateKey, level: int) -> tuple[int, float]:
        k = coarsen(pre, level)
        n = self._counts[level].get(k, 0)
        return n, (self._sums[level][k] / n if n else math.nan)

    def level_for(self, pre: PointStateKey) -> int:
        """Finest level with enough support, else the coarsest level if it has any data."""
        for lvl in BACKOFF_LEVELS:
            if self.cell(pre, lvl)[0] >= self.support:
                return lvl
        if self.cell(pre, BACKOFF_LEVELS[-1])[0] > 0:
            return BACKOFF_LEVELS[-1]
        raise NoSupport(f"no attacks reach node {self.node!r} from {pre}", state=str(pre), node=self.node)

    def mean(self, pre: PointStateKey) -> float:
        return self.cell(pre, self.level_for(pre))[1]

    def items(self, level: int = 0):
        for k, n in sorted(self._counts[level].items()):
            yield k, n, self._sums[level][k] / n


def conditional_w_baseline(contexts: Sequence[AttackContext], condition: str,
                           support: int = DEFAULT_SUPPORT) -> BaselineTable:
    return BaselineTable(condition, contexts, support)
