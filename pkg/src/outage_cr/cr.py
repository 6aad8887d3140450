"""Common-randomness capacity of a finite correlated source under a rate budget.

The quantity computed is

    max I(U;X)  subject to  I(U;X) - I(U;Y) <= c,  U - X - Y Markov,

over test channels P_{U|X}. With c set to the eta-outage capacity of a slow
fading MIMO link this is the eta-outage CR capacity.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .channel import PROB_TOL
from .rng import as_generator, parallel_map, split

FEAS_TOL = 1e-9
_TINY = 1e-300


@dataclass(frozen=True)
class JointSource:
    pmf: np.ndarray
    x_labels: tuple = ()
    y_labels: tuple = ()

    def __post_init__(self):
        pmf = np.array(self.pmf, dtype=float)
        if pmf.ndim != 2:
            raise ValueError("pmf must be a matrix")
        if np.any(pmf < 0) or abs(pmf.sum() - 1) > PROB_TOL:
            raise ValueError("pmf entries must be nonnegative and sum to 1")
        if np.any(pmf.sum(axis=1) == 0) or np.any(pmf.sum(axis=0) == 0):
            raise ValueError("pmf has an all-zero row or column")
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)
        xl = tuple(self.x_labels) or tuple(str(i) for i in range(pmf.shape[0]))
        yl = tuple(self.y_labels) or tuple(str(j) for j in range(pmf.shape[1]))
        if len(xl) != pmf.shape[0] or len(yl) != pmf.shape[1]:
            raise ValueError("label count does not match pmf shape")
        object.__setattr__(self, "x_labels", xl)
        object.__setattr__(self, "y_labels", yl)

    @property
    def px(self) -> np.ndarray:
        return self.pmf.sum(axis=1)

    @property
    def py(self) -> np.ndarray:
        return self.pmf.sum(axis=0)

    @property
    def h_x(self) -> float:
        return entropy(self.px)

    @property
    def h_x_given_y(self) -> float:
        return entropy(self.pmf.ravel()) - entropy(self.py)

    @property
    def i_xy(self) -> float:
        return self.h_x - self.h_x_given_y


def dsbs(p: float) -> JointSource:
    """Doubly symmetric binary source: X ~ Bern(1/2), Y = X xor Bern(p)."""
    return JointSource([[(1 - p) / 2, p / 2], [p / 2, (1 - p) / 2]])


def entropy(p) -> float:
    p = np.asarray(p, dtype=float).ravel()
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def binary_entropy(p: float) -> float:
    return entropy([p, 1 - p])


def load_source_csv(path) -> JointSource:
    """Matrix CSV with a header row of Y labels and a leading column of X labels."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header row and at least one data row")
    y_labels = [c.strip() for c in rows[0][1:]]
    x_labels, pmf = [], []
    for line, r in enumerate(rows[1:], start=2):
        if len(r) != len(y_labels) + 1:
            raise ValueError(f"{path}:{line}: expected {len(y_labels) + 1} fields")
        x_labels.append(r[0].strip())
        try:
            pmf.append([float(c) for c in r[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}:{line}: {exc}") from exc
    return JointSource(np.array(pmf), tuple(x_labels), tuple(y_labels))


def write_source_csv(source: JointSource, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x\\y", *source.y_labels])
        for lab, row in zip(source.x_labels, source.pmf):
            w.writerow([lab, *(repr(float(v)) for v in row)])


@dataclass(frozen=True)
class TestChannel:
    rows: np.ndarray  # (|X|, u_card), row x is P_{U|X=x}

    __test__ = False  # not a pytest class

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 2 or np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1) > PROB_TOL):
            raise ValueError("test channel rows must be probability vectors")
        if rows.shape[1] > rows.shape[0] + 1:
            raise ValueError("u_card may not exceed |X| + 1")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def u_card(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class CrPoint:
    comm_rate_c: float
    cr_rate: float
    channel: TestChannel
    iuy: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cr_rate - self.iuy > self.comm_rate_c + FEAS_TOL:
            raise ValueError("point violates the rate budget")


def _clean(rows: np.ndarray) -> np.ndarray:
    rows = np.clip(rows, 0, None)
    return rows / rows.sum(axis=1, keepdims=True)


def _mi_terms(rows: np.ndarray, pmf: np.ndarray):
    """I(U;X), I(U;Y) in bits for a batch of channels (..., |X|, u)."""
    px = pmf.sum(axis=1)
    py = pmf.sum(axis=0)
    pu = np.einsum("x,...xu->...u", px, rows)
    # I(U;X) = sum_x p(x) sum_u W log W - sum_u p(u) log p(u)
    wlogw = np.where(rows > 0, rows * np.log2(np.maximum(rows, _TINY)), 0.0)
    h_u = -np.sum(np.where(pu > 0, pu * np.log2(np.maximum(pu, _TINY)), 0.0), axis=-1)
    iux = np.einsum("x,...xu->...", px, wlogw) + h_u
    puy = np.einsum("...xu,xy->...uy", rows, pmf)
    ratio = puy / np.maximum(pu[..., :, None] * py, _TINY)
    iuy = np.sum(np.where(puy > 0, puy * np.log2(np.maximum(ratio, _TINY)), 0.0), axis=(-2, -1))
    return np.maximum(iux, 0.0), np.clip(iuy, 0.0, None)


def induced_quantities(source: JointSource, channel: TestChannel) -> tuple[float, float]:
    """(I(U;X), I(U;Y)) in bits for U drawn through ``channel`` from X."""
    if channel.rows.shape[0] != source.pmf.shape[0]:
        raise ValueError("channel rows must match the X alphabet")
    iux, iuy = _mi_terms(channel.rows, source.pmf)
    iuy = min(float(iuy), float(iux))  # data processing, removes rounding noise
    return float(iux), iuy


def _grads(rows: np.ndarray, pmf: np.ndarray):
    px = pmf.sum(axis=1)
    py = pmf.sum(axis=0)
    pu = np.maximum(px @ rows, _TINY)
    logw = np.log2(np.maximum(rows, _TINY))
    g_iux = px[:, None] * (logw - np.log2(pu)[None, :])
    puy = np.maximum(rows.T @ pmf, _TINY)  # (u, y)
    log_post = np.log2(puy / py[None, :])  # log p(u|y)
    g_iuy = pmf @ log_post.T - px[:, None] * np.log2(pu)[None, :]
    return g_iux, g_iuy


@dataclass(frozen=True)
class CrOptions:
    u_card: int | None = None
    restarts: int = 24
    max_iter: int = 300
    seed: int = 0
    threads: int = 1


def _identity_channel(nx: int, u_card: int) -> np.ndarray:
    rows = np.zeros((nx, u_card))
    rows[np.arange(nx), np.arange(nx) % u_card] = 1.0
    return rows


def _feasible_blend(rows: np.ndarray, pmf: np.ndarray, c: float) -> np.ndarray:
    """Move toward the constant channel until the budget holds (constant has cost 0)."""
    def cost(t):
        iux, iuy = _mi_terms((1 - t) * rows + t * const, pmf)
        return float(iux - min(iuy, iux))

    const = np.tile(rows.mean(axis=0), (rows.shape[0], 1))
    if cost(0.0) <= c:
        return rows
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if cost(mid) <= c:
            hi = mid
        else:
            lo = mid
    return (1 - hi) * rows + hi * const


def _vertex_starts(nx: int, u_card: int):
    """Deterministic channels X -> U up to relabeling, plus an erasure variant of each."""
    seen = set()
    for f in itertools.product(range(u_card), repeat=nx):
        # canonical relabeling: first-occurrence order
        remap, canon = {}, []
        for v in f:
            remap.setdefault(v, len(remap))
            canon.append(remap[v])
        key = tuple(canon)
        if key in seen:
            continue
        seen.add(key)
        rows = np.zeros((nx, u_card))
        rows[np.arange(nx), key] = 1.0
        yield rows
        if max(key) + 1 < u_card:
            erase = 0.5 * rows
            erase[:, u_card - 1] += 0.5
            yield erase


def _local_solve(rows0: np.ndarray, pmf: np.ndarray, c: float, max_iter: int):
    nx, nu = rows0.shape

    def unpack(v):
        return v.reshape(nx, nu)

    def obj(v):
        w = unpack(v)
        iux, _ = _mi_terms(w, pmf)
        g, _ = _grads(w, pmf)
        return -float(iux), -g.ravel()

    def budget(v):
        iux, iuy = _mi_terms(unpack(v), pmf)
        return float(c - (iux - iuy))

    def budget_jac(v):
        g1, g2 = _grads(unpack(v), pmf)
        return -(g1 - g2).ravel()

    cons = [{"type": "ineq", "fun": budget, "jac": budget_jac}]
    a = np.kron(np.eye(nx), np.ones(nu))
    cons.append({"type": "eq", "fun": lambda v: a @ v - 1, "jac": lambda v: a})
    res = minimize(obj, rows0.ravel(), jac=True, method="SLSQP", bounds=[(0, 1)] * (nx * nu),
                   constraints=cons, options={"maxiter": max_iter, "ftol": 1e-12})
    rows = _feasible_blend(_clean(unpack(res.x)), pmf, c)
    iux, iuy = _mi_terms(rows, pmf)
    return float(iux), float(min(iuy, iux)), rows


def cr_capacity(source: JointSource, c_budget: float, options: CrOptions | None = None,
                warm_start=None) -> CrPoint:
    """Largest I(U;X) with I(U;X) - I(U;Y) <= c_budget.

    Multi-start SLSQP over P_{U|X} from every deterministic map (and an
    erasure-mixed variant), the supplied warm start, and random Dirichlet
    rows. Each local solution is pulled toward the constant channel until the
    budget certificate holds, so every candidate is feasible.
    """
    if c_budget < 0:
        raise ValueError("c_budget must be nonnegative")
    opts = options or CrOptions()
    pmf = source.pmf
    nx = pmf.shape[0]
    u_card = opts.u_card or nx + 1
    if u_card > nx + 1:
        raise ValueError("u_card may not exceed |X| + 1")
    if c_budget >= source.h_x_given_y - FEAS_TOL and u_card >= nx:
        # U = X is feasible and I(U;X) <= H(X)
        rows = _identity_channel(nx, u_card)
        iux, iuy = induced_quantities(source, TestChannel(rows))
        if iux - iuy <= c_budget + FEAS_TOL:
            return CrPoint(c_budget, iux, TestChannel(rows), iuy, {"method": "identity"})
    starts = list(_vertex_starts(nx, u_card))
    if warm_start is not None:
        starts.insert(0, np.asarray(warm_start.rows if isinstance(warm_start, TestChannel)
                                    else warm_start, dtype=float))
    rng = as_generator(opts.seed)
    starts += [rng.dirichlet(np.ones(u_card), size=nx) for _ in range(opts.restarts)]
    results = parallel_map(lambda w: _local_solve(w, pmf, c_budget, opts.max_iter), starts,
                           opts.threads)
    best = max(range(len(results)), key=lambda k: (results[k][0], -k))
    iux, iuy, rows = results[best]
    return CrPoint(c_budget, iux, TestChannel(rows), iuy,
                   {"method": "slsqp", "starts": len(starts), "best_start": best})


def simplex_grid(dim: int, resolution: float) -> np.ndarray:
    """All probability vectors of length ``dim`` with coordinates on multiples of 1/m."""
    m = int(round(1 / resolution))
    if abs(m * resolution - 1) > 1e-9:
        raise ValueError("1/resolution must be an integer")
    pts = [c for c in itertools.product(range(m + 1), repeat=dim - 1) if sum(c) <= m]
    pts = np.array([list(c) + [m - sum(c)] for c in pts], dtype=float)
    return pts / m


def cr_capacity_bruteforce(source: JointSource, c_budget: float, grid_resolution: float = 0.02,
                           u_card: int | None = None, max_channels: int = 50_000_000,
                           chunk: int = 400_000) -> CrPoint:
    """Exact maximum over test channels whose rows lie on a simplex grid."""
    pmf = source.pmf
    nx = pmf.shape[0]
    u_card = u_card or nx + 1
    if nx > 3 or u_card > 4 or grid_resolution < 0.01:
        raise ValueError("instance too large for brute force (|X| <= 3, u_card <= 4, res >= 0.01)")
    grid = simplex_grid(u_card, grid_resolution)
    total = len(grid) ** nx
    if total > max_channels:
        raise ValueError(f"{total} grid channels exceeds cap {max_channels}")
    best_val, best_idx = -1.0, 0
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        idx = np.unravel_index(flat, (len(grid),) * nx)
        rows = np.stack([grid[i] for i in idx], axis=1)
        iux, iuy = _mi_terms(rows, pmf)
        ok = iux - np.minimum(iuy, iux) <= c_budget + FEAS_TOL
        if ok.any():
            vals = np.where(ok, iux, -1.0)
            k = int(np.argmax(vals))
            if vals[k] > best_val + 1e-15:
                best_val, best_idx = float(vals[k]), int(flat[k])
    idx = np.unravel_index(best_idx, (len(grid),) * nx)
    rows = np.stack([grid[i] for i in idx])
    iux, iuy = induced_quantities(source, TestChannel(rows))
    return CrPoint(c_budget, iux, TestChannel(rows), iuy,
                   {"method": "grid", "resolution": grid_resolution, "channels": total})


def cr_curve(source: JointSource, c_grid, options: CrOptions | None = None) -> list[CrPoint]:
    """cr_capacity along an ascending budget grid, carrying the best channel forward."""
    c_grid = [float(c) for c in c_grid]
    if any(b < a for a, b in zip(c_grid, c_grid[1:])):
        raise ValueError("c_grid must be sorted ascending")
    out, prev = [], None
    for c in c_grid:
        pt = cr_capacity(source, c, options, warm_start=prev.channel if prev else None)
        if prev is not None and prev.cr_rate > pt.cr_rate:
            pt = CrPoint(c, prev.cr_rate, prev.channel, prev.iuy, {"method": "carried"})
        out.append(pt)
        prev = pt
    return out


def eta_outage_cr_capacity(source: JointSource, ensemble, spec, rng, options: CrOptions | None = None,
                           threads: int = 1) -> CrPoint:
    """cr_capacity at the budget given by the eta-outage capacity of ``ensemble``."""
    from .outage import eta_outage_capacity

    r_cap, r_cr = split(as_generator(rng), 2)
    est = eta_outage_capacity(ensemble, spec, r_cap, threads=threads)
    c = est.value_bits
    opts = options or CrOptions(seed=int(r_cr.integers(2**31)), threads=threads)
    pt = cr_capacity(source, c, opts)
    diag = dict(pt.diagnostics, eta_outage_capacity=c, bisection=est.diagnostics)
    return CrPoint(c, pt.cr_rate, pt.channel, pt.iuy, diag)
