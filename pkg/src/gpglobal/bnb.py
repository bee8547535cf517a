"""Spatial branch-and-bound: linearization-based lower bounds from McCormick
subgradients, penalized Nelder-Mead upper bounds, best-first node selection.

The lower-bounding LP is assembled from subgradient cuts at the node
midpoint (plus the incumbent when it lies in the node) and solved by a dense
two-phase simplex with Bland's rule, so runs are deterministic.
"""

from __future__ import annotations

import heapq
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .envelopes import EnvelopeRootFindError
from .interval import Interval
from .problem import Problem
from .train import lhs_sample

_LP_TOL = 1e-9
_PIVOT_TOL = 1e-10


@dataclass
class Settings:
    abs_tol: float = 1e-3
    rel_tol: float = 1e-3
    feas_tol: float = 1e-6
    max_time: float = 60.0
    max_iter: int = 10_000_000
    multistart_count: int = 30
    use_envelopes: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.abs_tol <= 0.0 or self.rel_tol <= 0.0 or self.feas_tol <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass
class BnBResult:
    status: str                    # optimal | time_limit | iter_limit | infeasible
    ub: float
    lb: float
    incumbent: np.ndarray | None
    iterations: int
    wall_time: float
    time_per_iteration: float


@dataclass(order=True)
class Node:
    lb: float
    uid: int
    box: tuple = field(compare=False)
    depth: int = field(compare=False, default=0)
    reference_point: np.ndarray = field(compare=False, default=None)


# ---------------------------------------------------------------------------
# dense two-phase simplex


def simplex_lp(c, A, b, bounds):
    """Minimize c@x subject to A@x <= b and box bounds.

    Two-phase dense simplex with Bland's rule (entering: lowest eligible
    index; leaving: lowest basis index among minimum ratios).  Returns
    (x, value) or None when infeasible.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    lo = np.array([iv.lo for iv in bounds])
    width = np.array([iv.hi - iv.lo for iv in bounds])
    if A is None or len(A) == 0:
        A = np.zeros((0, n))
        b = np.zeros(0)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)

    # shift to u = x - lo >= 0 and append the width rows u <= width
    A2 = np.vstack([A, np.eye(n)])
    b2 = np.concatenate([b - A @ lo, width])
    m = A2.shape[0]

    # slack columns; rows with negative rhs are negated and get artificials
    T = np.hstack([A2, np.eye(m), b2[:, None]])
    neg_rows = np.where(b2 < 0.0)[0]
    T[neg_rows] *= -1.0
    n_art = neg_rows.shape[0]
    if n_art:
        art_cols = np.zeros((m, n_art))
        for k, r in enumerate(neg_rows):
            art_cols[r, k] = 1.0
        T = np.hstack([T[:, :-1], art_cols, T[:, -1:]])
    total = n + m + n_art

    basis = np.empty(m, dtype=int)
    basis[:] = n + np.arange(m)      # slack basis
    for k, r in enumerate(neg_rows):
        basis[r] = n + m + k          # artificial basis

    def pivot(T, basis, row, col):
        T[row] /= T[row, col]
        colv = T[:, col].copy()
        colv[row] = 0.0
        T -= np.outer(colv, T[row])
        basis[row] = col

    def run_phase(T, basis, z, n_allowed):
        for _ in range(200 * (total + m)):
            eligible = np.where(z[:n_allowed] < -_LP_TOL)[0]
            if eligible.shape[0] == 0:
                return z
            enter = int(eligible[0])  # Bland: lowest eligible index
            col = T[:, enter]
            rows = np.where(col > _PIVOT_TOL)[0]
            if rows.shape[0] == 0:
                raise RuntimeError("simplex: unbounded direction (breakdown)")
            ratios = T[rows, -1] / col[rows]
            best = ratios.min()
            cand = rows[ratios <= best + 1e-12]
            leave = int(cand[np.argmin(basis[cand])])
            zval = z[enter]
            pivot(T, basis, leave, enter)
            z -= zval * T[leave]
        raise RuntimeError("simplex: iteration limit (breakdown)")

    if n_art:
        # phase 1: price out the artificial objective
        cost1 = np.zeros(total + 1)
        cost1[n + m:total] = 1.0
        z = cost1.copy()
        for r in neg_rows:
            z -= T[r]
        z = run_phase(T, basis, z, n + m)
        if -z[-1] > 1e-7:
            return None
        for r in np.where(basis >= n + m)[0]:
            # drive residual artificials out of the basis
            cols = np.where(np.abs(T[r, : n + m]) > _PIVOT_TOL)[0]
            if cols.shape[0]:
                pivot(T, basis, r, cols[0])
        T = np.hstack([T[:, : n + m], T[:, -1:]])
        total = n + m

    cost2 = np.zeros(total + 1)
    cost2[:n] = c
    z = cost2.copy()
    for r in range(m):
        if basis[r] < total and cost2[basis[r]] != 0.0:
            z -= cost2[basis[r]] * T[r]
    z = run_phase(T, basis, z, total)

    u = np.zeros(total)
    for r in range(m):
        if basis[r] < total:
            u[basis[r]] = T[r, -1]
    x = lo + u[:n]
    return x, float(c @ x)


# ---------------------------------------------------------------------------
# bounding


def _gap_threshold(ub: float, s: Settings) -> float:
    if not math.isfinite(ub):
        return -math.inf
    return ub - max(s.abs_tol, s.rel_tol * abs(ub))


def _interval_fathom(ineq, eq, s: Settings) -> bool:
    for g in ineq:
        if g.range.lo > s.feas_tol:
            return True
    for h in eq:
        if h.range.lo > s.feas_tol or h.range.hi < -s.feas_tol:
            return True
    return False


def lower_bound(p: Problem, node: Node, s: Settings,
                incumbent: np.ndarray | None = None, node_id: int = 0):
    """LP lower bound over the node box; +inf fathoms the node.

    Envelope root-find failures do not fathom: the bound falls back to the
    interval bound of a relaxation without the derived envelopes (which
    needs no root finding).
    """
    box = node.box
    refs = [node.reference_point]
    if incumbent is not None and all(iv.contains(v) for iv, v in zip(box, incumbent)):
        refs.append(np.asarray(incumbent, dtype=float))

    relaxed = []
    try:
        for ref in refs:
            relaxed.append(p.relax_box(box, ref, s.use_envelopes))
    except EnvelopeRootFindError:
        obj, ineq, eq = p.relax_box(box, node.reference_point, use_envelopes=False)
        if _interval_fathom(ineq, eq, s):
            return math.inf, None
        return obj.range.lo, None

    obj0 = relaxed[0][0]
    if _interval_fathom(relaxed[0][1], relaxed[0][2], s):
        return math.inf, None

    n = p.n_vars
    rows, rhs = [], []
    for iref, (ref, (obj, ineq, eq)) in enumerate(zip(refs, relaxed)):
        # affine expressions give the same hyperplane at every reference
        # point; only the first linearization of those adds information
        def exact(r):
            return iref > 0 and r.cv == r.cc and np.array_equal(r.cv_sub, r.cc_sub)

        if not exact(obj):
            # epigraph cut: obj.cv(ref) + s.(x - ref) <= t
            row = np.zeros(n + 1)
            row[:n] = obj.cv_sub
            row[n] = -1.0
            rows.append(row)
            rhs.append(float(obj.cv_sub @ ref) - obj.cv)
        for g in ineq:
            if exact(g):
                continue
            row = np.zeros(n + 1)
            row[:n] = g.cv_sub
            rows.append(row)
            rhs.append(float(g.cv_sub @ ref) - g.cv)
        for h in eq:
            if exact(h):
                continue
            row = np.zeros(n + 1)
            row[:n] = h.cv_sub
            rows.append(row)
            rhs.append(float(h.cv_sub @ ref) - h.cv)
            row = np.zeros(n + 1)
            row[:n] = -h.cc_sub
            rows.append(row)
            rhs.append(h.cc - float(h.cc_sub @ ref))

    c = np.zeros(n + 1)
    c[n] = 1.0
    bounds = list(box) + [obj0.range]
    try:
        sol = simplex_lp(c, np.array(rows), np.array(rhs), bounds)
    except RuntimeError as exc:
        raise RuntimeError(f"LP breakdown at node {node_id}: {exc}") from exc
    if sol is None:
        return math.inf, None
    x, value = sol
    return max(value, obj0.range.lo), x[:n]


def _violation(ineq, eq) -> float:
    v = 0.0
    if len(ineq):
        v = max(v, float(np.max(ineq)))
    if len(eq):
        v = max(v, float(np.max(np.abs(eq))))
    return v


def _cheap_probe(p: Problem, x, s: Settings):
    """Evaluate the (lifted) point; returns (obj, full point) when feasible."""
    free = list(p.free_dims) if p.free_dims is not None else list(range(p.n_vars))
    x = np.asarray(x, dtype=float)
    xf = x[free] if x.shape[0] == p.n_vars else x
    xf = np.clip(xf, [p.box[j].lo for j in free], [p.box[j].hi for j in free])
    full = p.lift(xf) if p.lift is not None else xf
    try:
        obj, ineq, eq = p.eval_point(full)
    except (ValueError, ZeroDivisionError):
        return None
    if _violation(ineq, eq) > s.feas_tol:
        return None
    return float(obj), full


def upper_bound_local(p: Problem, start, s: Settings):
    """Penalized Nelder-Mead from one start; returns (ub, x) when a point
    feasible to the feasibility tolerance is found, else None."""
    free = list(p.free_dims) if p.free_dims is not None else list(range(p.n_vars))
    lift = p.lift if p.lift is not None else (lambda xf: np.asarray(xf, dtype=float))
    start = np.asarray(start, dtype=float)
    x0 = start[free] if start.shape[0] == p.n_vars else start
    nm_bounds = [(p.box[j].lo, p.box[j].hi) for j in free]
    x0 = np.clip(x0, [b[0] for b in nm_bounds], [b[1] for b in nm_bounds])

    constrained = bool(p.inequalities) or (bool(p.equalities) and p.lift is None)
    weight = 1e2
    best = None
    for _ in range(6):
        def penalized(xf):
            try:
                obj, ineq, eq = p.eval_point(lift(xf))
            except (ValueError, ZeroDivisionError):
                return 1e12
            pen = 0.0
            if len(ineq):
                pen += float(np.sum(np.maximum(ineq, 0.0) ** 2))
            if len(eq) and p.lift is None:
                pen += float(np.sum(eq**2))
            return obj + weight * pen

        res = minimize(penalized, x0, method="Nelder-Mead", bounds=nm_bounds,
                       options={"maxiter": 400 * max(len(free), 1),
                                "xatol": 1e-10, "fatol": 1e-12})
        x_full = lift(res.x)
        try:
            obj, ineq, eq = p.eval_point(x_full)
        except (ValueError, ZeroDivisionError):
            return best
        if _violation(ineq, eq) <= s.feas_tol:
            if best is None or obj < best[0]:
                best = (float(obj), x_full)
            if not constrained:
                break
            x0 = res.x
            weight *= 10.0  # polish toward the boundary
        else:
            if not constrained:
                break
            x0 = res.x
            weight *= 10.0
    return best


def branch(node: Node, root_widths: np.ndarray, uid: int,
           branch_dims=None):
    """Bisect the dimension of largest width relative to the root box; ties
    break toward the lowest index.  Returns None when every width is below
    1e-12 (the node is exhausted, not branched)."""
    widths = np.array([iv.width for iv in node.box])
    rel = np.where(root_widths > 0.0, widths / np.maximum(root_widths, 1e-300), 0.0)
    if branch_dims is not None:
        mask = np.zeros(rel.shape[0], dtype=bool)
        mask[list(branch_dims)] = True
        rel = np.where(mask, rel, 0.0)
        widths = np.where(mask, widths, 0.0)
    if np.all(widths < 1e-12):
        return None
    j = int(np.argmax(rel))
    iv = node.box[j]
    mid = iv.mid
    left = list(node.box)
    right = list(node.box)
    left[j] = Interval(iv.lo, mid)
    right[j] = Interval(mid, iv.hi)
    kids = []
    for k, bx in enumerate((tuple(left), tuple(right))):
        ref = np.array([b.mid for b in bx])
        kids.append(Node(node.lb, uid + k, bx, node.depth + 1, ref))
    return kids


def solve(p: Problem, s: Settings) -> BnBResult:
    """Best-first branch-and-bound; deterministic for a fixed seed."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(s.seed)
    root_box = tuple(p.box)
    root_widths = np.array([iv.width for iv in root_box])

    ub = math.inf
    incumbent = None

    free = list(p.free_dims) if p.free_dims is not None else list(range(p.n_vars))
    free_bounds = np.array([[p.box[j].lo, p.box[j].hi] for j in free])
    starts = [np.array([0.5 * (b[0] + b[1]) for b in free_bounds])]
    if s.multistart_count > 1:
        starts.extend(lhs_sample(len(free), s.multistart_count - 1, free_bounds,
                                 seed=int(rng.integers(2**31))))
    for st in starts:
        if time.perf_counter() - t0 > s.max_time:
            break
        res = upper_bound_local(p, st, s)
        if res is not None and res[0] < ub:
            ub, incumbent = res

    uid = 0
    root = Node(-math.inf, uid, root_box, 0, np.array([iv.mid for iv in root_box]))
    heap = [root]
    global_lb = -math.inf
    pruned_lb = math.inf
    iterations = 0
    status = None

    while heap:
        node = heapq.heappop(heap)
        lb_open = min(node.lb, heap[0].lb) if heap else node.lb
        global_lb = max(global_lb, min(lb_open, pruned_lb, ub))

        if ub - global_lb <= max(s.abs_tol, s.rel_tol * abs(ub)):
            status = "optimal"
            break
        if time.perf_counter() - t0 > s.max_time:
            status = "time_limit"
            break
        if iterations >= s.max_iter:
            status = "iter_limit"
            break
        iterations += 1

        lb_node, x_lp = lower_bound(p, node, s, incumbent, node_id=node.uid)
        lb_node = max(lb_node, node.lb)
        if lb_node >= _gap_threshold(ub, s):
            pruned_lb = min(pruned_lb, lb_node)
            continue

        if x_lp is not None:
            # cheap probe each node; the full local search only on promising
            # points or periodically (it dominates node cost otherwise)
            probe = _cheap_probe(p, x_lp, s)
            improving = probe is not None and probe[0] < ub - 1e-12
            if improving:
                ub, incumbent = probe
            if improving or iterations % 20 == 0:
                res = upper_bound_local(p, x_lp, s)
                if res is not None and res[0] < ub:
                    ub, incumbent = res

        node.lb = lb_node
        uid += 1
        kids = branch(node, root_widths, uid * 2, p.branch_dims)
        if kids is None:
            pruned_lb = min(pruned_lb, lb_node)
            continue
        for kid in kids:
            heapq.heappush(heap, kid)

        if iterations % 100 == 0:
            gap = ub - global_lb
            print(f"iter {iterations}  open {len(heap)}  lb {global_lb:.6g}  "
                  f"ub {ub:.6g}  gap {gap:.3g}", file=sys.stderr)

    if status is None:
        # heap exhausted
        if incumbent is None:
            status = "infeasible"
            global_lb = math.inf
        else:
            status = "optimal"
            global_lb = max(global_lb, min(pruned_lb, ub))
    elif status == "optimal" and incumbent is None:
        status = "infeasible"

    wall = time.perf_counter() - t0
    return BnBResult(status=status, ub=ub, lb=global_lb, incumbent=incumbent,
                     iterations=iterations, wall_time=wall,
                     time_per_iteration=wall / max(iterations, 1))
