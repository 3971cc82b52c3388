"""Dense BFGS with Armijo backtracking, vectorized over independent problems.

All bins of a scene are solved in lock-step: each row of the parameter array
is its own problem with its own inverse-Hessian estimate, step size and stopping
state, so the result for one row never depends on the others.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from .beamformer import (BinProblem, FilterPair, Variant, closed_form_filters, load_diagonal,
                         cost_and_gradient)


class InitPolicy(str, Enum):
    CLOSED_FORM = "closed_form_warm_start"
    SELECTORS = "selectors"
    ZEROS = "zeros"


@dataclass(frozen=True)
class SolveConfig:
    grad_tol: float = 1e-8
    max_iters: int = 500
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    init_policy: InitPolicy = InitPolicy.CLOSED_FORM
    multi_start: bool = False
    keep_trace: bool = True
    stall_iters: int = 50  # stop when f drops by less than stall_rtol over this many steps (0 = off)
    stall_rtol: float = 1e-12
    precondition: bool = True  # seed BFGS with the inverse Hessian of the quadratic part
    saddle_escapes: int = 3  # negative-curvature restarts from converged points (0 = off)
    saddle_tol: float = 1e-6  # min Hessian eigenvalue below -saddle_tol * max |eigenvalue|

    def __post_init__(self):
        object.__setattr__(self, "init_policy", InitPolicy(self.init_policy))
        if (self.grad_tol < 0 or self.max_iters <= 0 or self.max_backtracks <= 0
                or self.saddle_escapes < 0):
            raise ValueError("tolerances and iteration limits must be positive")
        if not (0 < self.armijo_c1 < 1 and 0 < self.backtrack < 1):
            raise ValueError("Armijo parameters must lie in (0, 1)")


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: np.ndarray
    grad_norm: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    line_search_failed: np.ndarray
    traces: list[list[float]] = field(default_factory=list)
    grad_traces: list[list[float]] = field(default_factory=list)


def minimize_bfgs(fun: Callable, x0, config: SolveConfig = SolveConfig(),
                  h0=None) -> MinimizeResult:
    """Minimize ``B`` independent problems.

    ``fun(x, rows)`` takes a (n, dim) array and the integer indices of those rows
    in the batch and returns ``(f, g)`` of shapes (n,) and (n, dim). ``h0`` is an
    optional (B, dim, dim) initial inverse Hessian, also used on resets; without it
    the identity is used and rescaled by s'y / y'y after the first step.
    """
    x = np.array(x0, dtype=float, copy=True)
    if x.ndim == 1:
        x = x[None, :]
    n_rows, dim = x.shape
    rows = np.arange(n_rows)
    f, g = fun(x, rows)
    f, g = np.array(f, dtype=float).reshape(n_rows), np.array(g, dtype=float)
    eye = np.eye(dim)
    if h0 is None:
        base = np.broadcast_to(eye, (n_rows, dim, dim))
        fresh = np.ones(n_rows, dtype=bool)  # inverse Hessian not yet scaled
    else:
        base = np.asarray(h0, dtype=float)
        fresh = np.zeros(n_rows, dtype=bool)
    hess = base.copy()
    iters = np.zeros(n_rows, dtype=int)
    failed = np.zeros(n_rows, dtype=bool)
    gnorm = np.linalg.norm(g, axis=1)
    done = gnorm <= config.grad_tol * (1 + np.abs(f))
    traces = [[v] for v in f] if config.keep_trace else []
    grad_traces = [[v] for v in gnorm] if config.keep_trace else []
    f_mark = f.copy()
    it_mark = np.zeros(n_rows, dtype=int)

    for _ in range(config.max_iters):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        ga = g[act]
        p = -np.einsum("bij,bj->bi", hess[act], ga)
        slope = np.einsum("bi,bi->b", ga, p)
        bad = ~(slope < 0)
        if bad.any():
            rb = act[bad]
            hess[rb] = base[rb]
            fresh[rb] = h0 is None
            p[bad] = -np.einsum("bij,bj->bi", hess[rb], ga[bad])
            slope[bad] = np.einsum("bi,bi->b", ga[bad], p[bad])

        step = np.ones(act.size)
        accepted = np.zeros(act.size, dtype=bool)
        f_new = f[act].copy()
        g_new = ga.copy()
        for _ in range(config.max_backtracks):
            pend = np.flatnonzero(~accepted)
            if pend.size == 0:
                break
            xt = x[act[pend]] + step[pend, None] * p[pend]
            ft, gt = fun(xt, act[pend])
            ft = np.asarray(ft, dtype=float).reshape(pend.size)
            gt = np.asarray(gt, dtype=float)
            f0 = f[act[pend]]
            dec = step[pend] * slope[pend]
            ok = np.isfinite(ft) & (ft <= f0 + config.armijo_c1 * dec)
            # Near a minimum the predicted decrease drops below the rounding error
            # of f; fall back to the approximate Armijo test on the directional
            # derivative (Hager & Zhang).
            tiny = -dec <= 1e-10 * (1 + np.abs(f0))
            approx = (tiny & (ft <= f0 + 1e-13 * (1 + np.abs(f0)))
                      & (np.einsum("bi,bi->b", gt, p[pend])
                         <= (2 * config.armijo_c1 - 1) * slope[pend]))
            ok |= np.isfinite(ft) & approx
            hit = pend[ok]
            accepted[hit] = True
            f_new[hit] = ft[ok]
            g_new[hit] = gt[ok]
            step[pend[~ok]] *= config.backtrack

        lost = act[~accepted]
        failed[lost] = True
        done[lost] = True

        idx = np.flatnonzero(accepted)
        rows_ok = act[idx]
        s = step[idx, None] * p[idx]
        y = g_new[idx] - g[rows_ok]
        x[rows_ok] += s
        f[rows_ok] = f_new[idx]
        g[rows_ok] = g_new[idx]
        iters[rows_ok] += 1

        sy = np.einsum("bi,bi->b", s, y)
        yy = np.einsum("bi,bi->b", y, y)
        curv = sy > 1e-12 * np.linalg.norm(s, axis=1) * np.sqrt(yy)
        reset = rows_ok[~curv]
        hess[reset] = base[reset]
        fresh[reset] = h0 is None
        upd = np.flatnonzero(curv)
        if upd.size:
            r = rows_ok[upd]
            s_u, y_u, sy_u = s[upd], y[upd], sy[upd]
            h = hess[r]
            scale_now = fresh[r]
            if scale_now.any():
                h[scale_now] = (sy_u[scale_now] / yy[upd][scale_now])[:, None, None] * eye
                fresh[r[scale_now]] = False
            rho = 1.0 / sy_u
            hy = np.einsum("bij,bj->bi", h, y_u)
            yhy = np.einsum("bi,bi->b", y_u, hy)
            h = (h - rho[:, None, None] * (np.einsum("bi,bj->bij", s_u, hy)
                                           + np.einsum("bi,bj->bij", hy, s_u))
                 + (rho * (1 + rho * yhy))[:, None, None] * np.einsum("bi,bj->bij", s_u, s_u))
            hess[r] = 0.5 * (h + np.swapaxes(h, 1, 2))

        gnorm[rows_ok] = np.linalg.norm(g[rows_ok], axis=1)
        done[rows_ok] |= gnorm[rows_ok] <= config.grad_tol * (1 + np.abs(f[rows_ok]))
        if config.stall_iters:
            due = rows_ok[iters[rows_ok] - it_mark[rows_ok] >= config.stall_iters]
            stalled = f_mark[due] - f[due] <= config.stall_rtol * (1 + np.abs(f[due]))
            done[due[stalled]] = True
            f_mark[due] = f[due]
            it_mark[due] = iters[due]
        if config.keep_trace:
            for r in rows_ok:
                traces[r].append(f[r])
                grad_traces[r].append(gnorm[r])

    converged = gnorm <= config.grad_tol * (1 + np.abs(f))
    return MinimizeResult(x, f, gnorm, iters, converged, failed & ~converged, traces, grad_traces)


@dataclass
class SolveReport:
    w: FilterPair
    cost: float
    grad_norm: float
    iterations: int
    converged: bool
    cost_trace: list[float]
    grad_trace: list[float] = field(default_factory=list)


def initial_point(problem: BinProblem, policy: InitPolicy) -> np.ndarray:
    m = problem.n_mics_per_side
    batch = problem.phi_y.shape[:-2]
    if policy is InitPolicy.CLOSED_FORM:
        return closed_form_filters(problem).real
    if policy is InitPolicy.SELECTORS:
        w = FilterPair.passthrough(m)
        return np.broadcast_to(w.real, batch + (8 * m,)).copy()
    return np.zeros(batch + (8 * m,))


def _batched_objective(problem: BinProblem):
    def fun(x, rows):
        return cost_and_gradient(x, problem.take(rows))
    return fun


def quadratic_inverse_hessian(problem: BinProblem) -> np.ndarray:
    """Inverse real Hessian of the penalty-free cost, (bins, 8M, 8M).

    Each side contributes ``w^H Phi_y w``, whose Hessian in ``[Re w, Im w]`` is
    ``2 [[Re Phi_y, -Im Phi_y], [Im Phi_y, Re Phi_y]]``. Phi_y is diagonally loaded.
    """
    phi = load_diagonal(problem.phi_y)
    d = phi.shape[-1]
    inv = np.linalg.inv(phi)
    inv = 0.5 * (inv + np.swapaxes(inv.conj(), -1, -2))
    out = np.zeros(phi.shape[:-2] + (4 * d, 4 * d))
    for side in range(2):
        re = slice(side * d, (side + 1) * d)
        im = slice((2 + side) * d, (3 + side) * d)
        out[..., re, re] = 0.5 * inv.real
        out[..., im, im] = 0.5 * inv.real
        out[..., re, im] = -0.5 * inv.imag
        out[..., im, re] = 0.5 * inv.imag
    return out


def fd_hessian(fun: Callable, x, rows) -> np.ndarray:
    """Symmetrized central-difference Hessian of each row, (n, dim, dim)."""
    n, dim = x.shape
    h = 1e-5 * np.maximum(1.0, np.linalg.norm(x, axis=1))
    steps = h[:, None, None] * np.eye(dim)
    xs = np.concatenate([(x[:, None] + steps).reshape(-1, dim), (x[:, None] - steps).reshape(-1, dim)])
    g = np.asarray(fun(xs, np.tile(np.repeat(rows, dim), 2))[1], dtype=float)
    hess = (g[:n * dim] - g[n * dim:]).reshape(n, dim, dim) / (2 * h[:, None, None])
    return 0.5 * (hess + np.swapaxes(hess, 1, 2))


def escape_saddles(fun: Callable, res: MinimizeResult, config: SolveConfig,
                   h0=None) -> MinimizeResult:
    """Restart BFGS from rows that stopped at or near saddle points.

    A stopping point (converged or stalled) whose finite-difference Hessian has a clearly negative
    eigenvalue is left along that eigenvector (the sign and length giving the
    lower cost) and BFGS is rerun from there. Rows are updated in place.
    """
    for _ in range(config.saddle_escapes):
        rows = np.arange(res.x.shape[0])
        lam, vec = np.linalg.eigh(fd_hessian(fun, res.x[rows], rows))
        neg = lam[:, 0] < -config.saddle_tol * np.max(np.abs(lam), axis=1)
        if not neg.any():
            break
        rows, v = rows[neg], vec[neg, :, 0]
        x0, f0 = res.x[rows], res.fun[rows]
        best_x, best_f = x0.copy(), f0.copy()
        t = np.maximum(1.0, np.linalg.norm(x0, axis=1))
        for _ in range(30):
            for sign in (1.0, -1.0):
                xt = x0 + sign * t[:, None] * v
                ft = np.asarray(fun(xt, rows)[0], dtype=float)
                better = np.isfinite(ft) & (ft < best_f)
                best_x[better], best_f[better] = xt[better], ft[better]
            t *= 0.5
        moved = best_f < f0 - 1e-12 * (1 + np.abs(f0))
        if not moved.any():
            break
        rows, start = rows[moved], best_x[moved]
        sub = minimize_bfgs(lambda x, r: fun(x, rows[r]), start, config,
                            None if h0 is None else h0[rows])
        keep = sub.fun < f0[moved]
        rows, kept = rows[keep], np.flatnonzero(keep)
        res.x[rows] = sub.x[kept]
        res.fun[rows] = sub.fun[kept]
        res.grad_norm[rows] = sub.grad_norm[kept]
        res.converged[rows] = sub.converged[kept]
        res.line_search_failed[rows] = sub.line_search_failed[kept]
        res.iterations[rows] += sub.iterations[kept] + 1
        if config.keep_trace:
            for r, k in zip(rows, kept):
                res.traces[r] += sub.traces[k]
                res.grad_traces[r] += sub.grad_traces[k]
    return res


def solve_batch(problem: BinProblem, config: SolveConfig = SolveConfig()) -> MinimizeResult:
    """Solve a batched :class:`BinProblem` (leading dim = bins).

    With a rank-1 speech model the closed-form warm start has parallel left and
    right filters, a set the IC penalty gradient never leaves; its stationary
    points are often saddles, so stopping points are checked for negative
    curvature (``saddle_escapes``).
    """
    fun = _batched_objective(problem)
    h0 = quadratic_inverse_hessian(problem) if config.precondition else None
    policies = [config.init_policy]
    if config.multi_start:
        policies += [p for p in InitPolicy if p is not config.init_policy]
    best = None
    for policy in policies:
        res = minimize_bfgs(fun, initial_point(problem, policy), config, h0)
        if problem.alpha > 0 and problem.variant is not Variant.MWF:
            res = escape_saddles(fun, res, config, h0)
        if best is None:
            best = res
            continue
        better = res.fun < best.fun
        for name in ("x", "fun", "grad_norm", "iterations", "converged", "line_search_failed"):
            getattr(best, name)[better] = getattr(res, name)[better]
        if config.keep_trace:
            for r in np.flatnonzero(better):
                best.traces[r] = res.traces[r]
                best.grad_traces[r] = res.grad_traces[r]
    return best


def solve_bin(problem: BinProblem, config: SolveConfig = SolveConfig()) -> SolveReport:
    """Quasi-Newton solve of a single (unbatched) bin problem."""
    if problem.phi_y.ndim != 2:
        raise ValueError("solve_bin expects a single bin; use solve_all_bins for batches")
    batched = problem.take(np.newaxis)
    res = solve_batch(batched, config)
    return SolveReport(FilterPair.from_real(res.x[0]), float(res.fun[0]), float(res.grad_norm[0]),
                       int(res.iterations[0]), bool(res.converged[0]),
                       res.traces[0] if config.keep_trace else [],
                       res.grad_traces[0] if config.keep_trace else [])


@dataclass
class AllBinsResult:
    filters: FilterPair  # (bins, 2M) each
    active: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    cost: np.ndarray
    grad_norm: np.ndarray
    traces: dict[int, list[float]] = field(default_factory=dict)
    grad_traces: dict[int, list[float]] = field(default_factory=dict)

    @property
    def converged_bins(self) -> int:
        return int(np.sum(self.converged[self.active]))

    @property
    def total_iterations(self) -> int:
        return int(np.sum(self.iterations))


def solve_all_bins(problem: BinProblem, active, config: SolveConfig = SolveConfig()) -> AllBinsResult:
    """Solve every active bin; inactive bins get passthrough selector filters.

    For the plain MWF variant (or alpha = 0) the solver still runs, starting from
    the configured initial point.
    """
    active = np.asarray(active, dtype=bool)
    n_bins = active.size
    m = problem.n_mics_per_side
    filters = FilterPair.passthrough(m, n_bins)
    w = filters.stacked.copy()
    converged = np.ones(n_bins, dtype=bool)
    iterations = np.zeros(n_bins, dtype=int)
    cost = np.zeros(n_bins)
    gnorm = np.zeros(n_bins)
    traces, grad_traces = {}, {}
    idx = np.flatnonzero(active)
    if idx.size:
        res = solve_batch(problem.take(idx), config)
        w[idx] = FilterPair.from_real(res.x).stacked
        converged[idx] = res.converged
        iterations[idx] = res.iterations
        cost[idx] = res.fun
        gnorm[idx] = res.grad_norm
        if config.keep_trace:
            traces = {int(k): res.traces[i] for i, k in enumerate(idx)}
            grad_traces = {int(k): res.grad_traces[i] for i, k in enumerate(idx)}
    return AllBinsResult(FilterPair.from_stacked(w), active, converged, iterations, cost,
                         gnorm, traces, grad_traces)


def write_trace_csv(result: AllBinsResult, path) -> None:
    """Per-bin convergence trace: bin, iteration, cost, grad_norm."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "iteration", "cost", "grad_norm"])
        for k in sorted(result.traces):
            for it, (c, gn) in enumerate(zip(result.traces[k], result.grad_traces[k])):
                writer.writerow([k, it, repr(float(c)), repr(float(gn))])


__all__ = ["SolveConfig", "SolveReport", "InitPolicy", "minimize_bfgs", "solve_bin",
           "solve_batch", "solve_all_bins", "escape_saddles", "fd_hessian", "AllBinsResult", "write_trace_csv", "Variant"]
