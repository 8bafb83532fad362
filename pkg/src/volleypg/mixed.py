"""Gaussian linear models with an intercept and random intercepts.

Variance components are REML estimates found by EM iterations on
Henderson's mixed-model equations, accelerated with SQUAREM. The data enter
only through weighted cross-products, accumulated once.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from . import kernels
from .errors import (
    ConvergenceWarning,
    DegenerateSplit,
    DroppedFactor,
    SingularDesign,
    UnknownFactor,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Observation:
    y: float
    levels: Mapping[str, str]
    weight: float = 1.0


@dataclass
class MixedFit:
    factors: list
    intercept: float
    residual_variance: float
    components: dict
    blups: dict
    n_obs: int = 0
    iterations: int = 0
    rel_change: float = 0.0
    converged: bool = True
    dropped: list = field(default_factory=list)
    neg2_reml: float = float("nan")

    def blup(self, factor: str, level) -> float:
        if factor not in self.blups:
            raise UnknownFactor(f"factor {factor!r} not in model", factor=factor)
        return self.blups[factor].get(level, 0.0)

    def to_json(self) -> dict:
        return {
            "factors": list(self.factors),
            "intercept": self.intercept,
            "residual_variance": self.residual_variance,
            "components": dict(self.components),
            "blups": {f: dict(sorted(b.items())) for f, b in self.blups.items()},
            "n_obs": self.n_obs,
            "convergence": {
                "iterations": self.iterations,
                "rel_change": self.rel_change,
                "converged": self.converged,
            },
            "dropped": list(self.dropped),
            "neg2_reml": self.neg2_reml,
        }

    @classmethod
    def from_json(cls, d: dict) -> "MixedFit":
        conv = d.get("convergence", {})
        return cls(
            list(d["factors"]), float(d["intercept"]), float(d["residual_variance"]),
            {k: float(v) for k, v in d["components"].items()},
            {f: {k: float(v) for k, v in b.items()} for f, b in d["blups"].items()},
            int(d.get("n_obs", 0)), int(conv.get("iterations", 0)),
            float(conv.get("rel_change", 0.0)), bool(conv.get("converged", True)),
            list(d.get("dropped", [])), float(d.get("neg2_reml", float("nan"))),
        )

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "MixedFit":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class _Design:
    names: list
    levels: list          # per factor: array of level labels (sorted)
    sizes: list
    offsets: list
    mwm: np.ndarray       # (1+q, 1+q) cross-product with the intercept column first
    mwy: np.ndarray
    ywy: float
    n: int


def _build_design(y, factors: Mapping[str, Sequence], w) -> tuple[_Design, list]:
    names, levels, codes, dropped = [], [], [], []
    for name, labels in factors.items():
        arr = np.asarray(labels).astype(str)
        if arr.shape[0] != y.shape[0]:
            raise ValueError(f"factor {name!r} has {arr.shape[0]} labels for {y.shape[0]} responses")
        uniq, inv = np.unique(arr, return_inverse=True)
        if len(uniq) < 2:
            warnings.warn(f"factor {name!r} has fewer than two levels and was dropped", DroppedFactor,
                          stacklevel=3)
            dropped.append(name)
            continue
        names.append(name)
        levels.append(uniq)
        codes.append(inv.astype(np.int64))
    sizes = [len(l) for l in levels]
    offsets = list(np.cumsum([1] + sizes[:-1])) if sizes else []
    q = 1 + sum(sizes)
    # column 0 is the intercept, coded as its own always-on "factor"
    cols = [np.zeros(len(y), dtype=np.int64)] + [c + off for c, off in zip(codes, offsets)]
    mat = np.column_stack(cols)
    mwm, mwy = kernels.crossprod(mat, w, y, q)
    ywy = float(np.dot(w * y, y))
    return _Design(names, levels, sizes, [int(o) for o in offsets], mwm, mwy, ywy, len(y)), dropped


class _Solver:
    def __init__(self, d: _Design):
        self.d = d

    def solve(self, sig_e: float, comps: np.ndarray):
        """Solve the mixed-model equations with the factors whose component is positive."""
        d = self.d
        keep = [0]
        lam = [0.0]
        active = []
        for k, (off, size) in enumerate(zip(d.offsets, d.sizes)):
            if comps[k] > 0:
                keep.extend(range(off, off + size))
                lam.extend([sig_e / comps[k]] * size)
                active.append(k)
        keep = np.asarray(keep)
        C = d.mwm[np.ix_(keep, keep)] + np.diag(lam)
        r = d.mwy[keep]
        try:
            U = linalg.cholesky(C, lower=False, check_finite=False)
        except linalg.LinAlgError:
            raise SingularDesign("mixed-model equations are not positive definite") from None
        sol = linalg.cho_solve((U, False), r, check_finite=False)
        Uinv, info = lapack.dtrtri(U, lower=0)
        if info != 0:
            raise SingularDesign("triangular inverse failed")
        self._last_U = U
        cinv_diag = np.einsum("ij,ij->i", Uinv, Uinv)
        logdet = 2.0 * float(np.sum(np.log(np.diag(U))))
        return keep, sol, cinv_diag, logdet, active

    def zero_score(self, theta: np.ndarray, k: int) -> float:
        """Derivative of -2 REML log-likelihood in component k at zero, others at theta.

        Non-negative means zero is a local optimum along that coordinate.
        """
        d = self.d
        sig_e = theta[0]
        comps = theta[1:].copy()
        comps[k] = 0.0
        keep, sol, _, _, _ = self.solve(sig_e, comps)
        U = self._last_U
        off, size = d.offsets[k], d.sizes[k]
        idx = np.arange(off, off + size)
        M = d.mwm[np.ix_(keep, idx)]
        g = (d.mwy[idx] - M.T @ sol) / sig_e
        B = linalg.solve_triangular(U, M, trans="T", lower=False, check_finite=False)
        tr = (float(np.trace(d.mwm[np.ix_(idx, idx)])) - float(np.sum(B * B))) / sig_e
        return tr - float(g @ g)

    def em_step(self, theta: np.ndarray):
        """One EM update of (sigma_e^2, components); also returns -2 REML log-likelihood at theta."""
        d = self.d
        sig_e = theta[0]
        comps = theta[1:]
        keep, sol, cdiag, logdet, active = self.solve(sig_e, comps)
        n, p = d.n, 1
        quad = d.ywy - float(sol @ d.mwy[keep])
        new = np.zeros_like(theta)
        pos = 1
        penalty = 0.0
        trace_term = 0.0
        logG = 0.0
        for k in active:
            size = d.sizes[k]
            u = sol[pos:pos + size]
            tr = float(cdiag[pos:pos + size].sum())
            lam = sig_e / comps[k]
            uu = float(u @ u)
            new[1 + k] = (uu + sig_e * tr) / size
            penalty += lam * uu
            trace_term += lam * tr
            logG += size * math.log(comps[k] / sig_e)
            pos += size
        q_act = len(keep)
        resid = quad - penalty
        new[0] = (resid + sig_e * (q_act - trace_term)) / n
        neg2 = (n - p) * math.log(sig_e) + logG + logdet + quad / sig_e
        return new, neg2


def fit(y, factors: Mapping[str, Sequence], weights=None, *, max_iter: int = 500, tol: float = 1e-8,
        zero_tol: float = 1e-10) -> MixedFit:
    """REML fit of y ~ 1 + (1|f1) + (1|f2) + ... with crossed factors.

    Nesting is carried by the labels: team and player ids must be globally
    unique, so a nested hierarchy is just a set of crossed factors.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] < 2:
        raise SingularDesign("need at least two observations", n_obs=int(y.size))
    if not np.all(np.isfinite(y)):
        raise ValueError("responses must be finite")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    all_names = list(factors)
    design, dropped = _build_design(y, factors, w)
    n = design.n

    def zero_blups():
        return {name: {} for name in all_names}

    sw = float(w.sum())
    mean = float((w * y).sum() / sw)
    spread = float((w * (y - mean) ** 2).sum() / sw)
    if spread <= 1e-30 * max(1.0, mean * mean):
        blups = zero_blups()
        for name, lv in zip(design.names, design.levels):
            blups[name] = {str(l): 0.0 for l in lv}
        return MixedFit(all_names, float(y[0]), 0.0, {f: 0.0 for f in all_names}, blups, n,
                        0, 0.0, True, dropped)

    solver = _Solver(design)
    F = len(design.names)
    theta = np.empty(1 + F)
    theta[0] = spread / 2
    theta[1:] = spread / (2 * max(F, 1))
    floor = spread * 1e-14

    def em(th):
        new, neg2 = solver.em_step(th)
        new[0] = max(new[0], floor)
        # a zeroed component stays zero
        new[1:] = np.where(th[1:] > 0, new[1:], 0.0)
        return new, neg2

    def rel_change(a, b):
        scale = np.maximum(np.abs(a), zero_tol * spread)
        return float(np.max(np.abs(b - a) / scale))

    revived = [0] * F
    converged = False
    change = math.inf
    it = 0
    neg2 = math.nan
    while True:
        while it < max_iter:
            it += 1
            th1, neg2 = em(theta)
            change = rel_change(theta, th1)
            if change < tol:
                theta = th1
                converged = True
                break
            th2, neg2_1 = em(th1)
            active = np.concatenate([[True], theta[1:] > 0]) & (th1 > 0) & (th2 > 0)
            nxt = th2
            if active.sum() > 0:
                l0, l1, l2 = np.log(theta[active]), np.log(th1[active]), np.log(th2[active])
                r = l1 - l0
                v = l2 - l1 - r
                nv = float(np.linalg.norm(v))
                if nv > 0:
                    alpha = min(-float(np.linalg.norm(r)) / nv, -1.0)
                    ext = theta.copy()
                    ext[active] = np.exp(l0 - 2 * alpha * r + alpha * alpha * v)
                    try:
                        th3, neg2_ext = em(ext)
                        if math.isfinite(neg2_ext) and neg2_ext <= neg2_1 + 1e-12 * abs(neg2_1):
                            nxt = th3
                    except SingularDesign:
                        pass
            theta = nxt
            # components collapsing onto the boundary: zero them once zero is locally optimal
            total = theta[0] + theta[1:].sum()
            for k in range(F):
                c = theta[1 + k]
                if 0 < c < 1e-3 * total:
                    trial = theta.copy()
                    trial[1 + k] = 0.0
                    if c < zero_tol * total or solver.zero_score(theta, k) >= 0:
                        theta = trial
        if not converged:
            break
        # a zeroed component may need to come back once the others have settled
        total = theta[0] + theta[1:].sum()
        back = [k for k in range(F) if theta[1 + k] == 0 and revived[k] < 2
                and solver.zero_score(theta, k) < 0]
        if not back:
            break
        for k in back:
            revived[k] += 1
            theta[1 + k] = 1e-3 * total
        converged = False

    if not converged:
        warnings.warn(f"REML iterations stopped after {it} updates (relative change {change:.3g})",
                      ConvergenceWarning, stacklevel=2)

    keep, sol, _, _, active = solver.solve(theta[0], theta[1:])
    _, neg2 = solver.em_step(theta)
    blups = zero_blups()
    components = {f: 0.0 for f in all_names}
    pos = 1
    act = set(active)
    for k, (name, lv) in enumerate(zip(design.names, design.levels)):
        components[name] = float(theta[1 + k])
        if k in act:
            vals = sol[pos:pos + design.sizes[k]]
            pos += design.sizes[k]
        else:
            vals = np.zeros(design.sizes[k])
        blups[name] = {str(l): float(v) for l, v in zip(lv, vals)}
    return MixedFit(all_names, float(sol[0]), float(theta[0]), components, blups, n, it,
                    float(change), converged, dropped, float(neg2))


def fit_observations(observations: Sequence[Observation], factors: Sequence[str], **opts) -> MixedFit:
    y = [o.y for o in observations]
    w = [o.weight for o in observations]
    cols = {f: [o.levels[f] for o in observations] for f in factors}
    return fit(y, cols, w, **opts)


def predict_linear(fit: MixedFit, assignment: Mapping[str, str], subset: Sequence[str],
                   include_intercept: bool = True) -> float:
    """Intercept (optionally) plus the BLUPs of ``subset`` at the given levels.

    Levels absent from the fit contribute their prior mean, zero.
    """
    total = fit.intercept if include_intercept else 0.0
    for f in subset:
        if f not in fit.blups:
            raise UnknownFactor(f"factor {f!r} not in model", factor=f)
        total += fit.blups[f].get(assignment.get(f), 0.0)
    return total


def variance_ratio(fit: MixedFit, factor_a: str, factor_b: str) -> float:
    for f in (factor_a, factor_b):
        if f not in fit.components:
            raise UnknownFactor(f"factor {f!r} not in model", factor=f)
    a = fit.components[factor_a]
    b = fit.components[factor_b]
    if a + b <= 0:
        warnings.warn(f"{factor_a} and {factor_b} both have zero variance; splitting evenly",
                      DegenerateSplit, stacklevel=2)
        return 0.5
    return a / (a + b)
