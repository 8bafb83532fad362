"""Reference implementations of the hot loops.

Each function performs its floating-point operations in the same order as
the compiled version so both backends give bit-identical results.
"""
import numpy as np

# layout of the rollout state vector shared with the compiled kernel
DONE, HITS, CUR, STEPS, TARGET, MAX_STEPS, LOST = range(7)


def mc_advance(indptr, indices, cum, start, rw, sw, u, st):
    """Advance Monte Carlo rollouts using the uniforms in ``u``.

    Consumes one uniform per step. A rollout ends on reaching ``rw`` (a hit)
    or ``sw``; rollouts exceeding ``st[MAX_STEPS]`` steps are counted as lost.
    Returns the number of uniforms consumed.
    """
    indptr = indptr.tolist()
    indices = indices.tolist()
    cum = cum.tolist()
    done, hits, cur, steps = int(st[DONE]), int(st[HITS]), int(st[CUR]), int(st[STEPS])
    target, max_steps, lost = int(st[TARGET]), int(st[MAX_STEPS]), int(st[LOST])
    n = len(u)
    k = 0
    while k < n and done < target:
        x = u[k]
        k += 1
        lo, hi = indptr[cur], indptr[cur + 1]
        nxt = indices[hi - 1]
        for j in range(lo, hi):
            if x < cum[j]:
                nxt = indices[j]
                break
        steps += 1
        if nxt == rw or nxt == sw or steps >= max_steps:
            if nxt == rw:
                hits += 1
            elif nxt != sw:
                lost += 1
            done += 1
            cur = start
            steps = 0
        else:
            cur = nxt
    st[DONE], st[HITS], st[CUR], st[STEPS], st[LOST] = done, hits, cur, steps, lost
    return k


def crossprod(codes, w, y, q):
    """Weighted cross-products of an indicator design.

    ``codes`` is (n, F) with column indices already offset so the F factors
    occupy disjoint ranges of 0..q-1. Returns (Z'WZ, Z'Wy) as dense arrays.
    """
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, f = codes.shape
    wy = w * y
    ztwz = np.zeros(q * q)
    ztwy = np.zeros(q)
    for a in range(f):
        ca = codes[:, a]
        ztwy += np.bincount(ca, weights=wy, minlength=q)
        for b in range(f):
            ztwz += np.bincount(ca * q + codes[:, b], weights=w, minlength=q * q)
    return ztwz.reshape(q, q), ztwy
