"""Backward dynamic programming on the scenario tree.

The robust value function at a node is the one-period worst-case value whose
sections are the children's value functions; the per-prior variant fixes one
kernel per node instead of minimizing over the ambiguity hull.  Two
evaluation modes: ``exact_recursive`` memoizes on exact wealth keys and
recurses (cost grows with depth, intended for short horizons), while
``grid_interpolated`` precomputes each node on a wealth grid and linearly
interpolates, which under-approximates the concave exact function.

Around the recursion sit the certified envelopes: the backward suprema of
the growth constant and of the utility's negative part, the per-node cash
thresholds at which next-period value functions are provably negative
enough, strategy gluing, admissibility, and the assembled solve report.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import (
    AssumptionFailure,
    CertificationFailure,
    ClosureCheckError,
    LambdaError,
    NAFailure,
    NtUnbounded,
    ParameterError,
    RAEViolation,
)
from .extmath import INF, minus_integral
from .geometry import affine_hull, quantitative_alpha, support, zero_in_relative_interior
from .market import (
    AmbiguitySet,
    ProductPriorSpec,
    ScenarioTree,
    increment,
    leaf_distribution,
    reachable_leaves,
)
from .oneperiod import BoundPack, OnePeriodInstance, compute_bounds, make_instance, maximize
from .utility import AECertificate, RandomUtility, certificate_for, certify_type_A

N_CAP = 2.0**40
_DIVERGED = 1e12


def _max_workers() -> int:
    try:
        return max(1, int(os.environ.get("ROBUSTDP_THREADS", "1")))
    except ValueError:
        return 1


def _level_map(nodes: Iterable[str], fn: Callable[[str], object]) -> dict:
    nodes = list(nodes)
    workers = _max_workers()
    if workers > 1 and len(nodes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return dict(zip(nodes, pool.map(fn, nodes)))
    return {nid: fn(nid) for nid in nodes}


# --------------------------------------------------------------------------
# reference prior construction and hull mixing
# --------------------------------------------------------------------------

def build_p_star(tree: ScenarioTree, ambiguity: dict[str, AmbiguitySet]) -> ProductPriorSpec:
    """Uniform mixture of extremes per node, certified geometry-preserving.

    The mixture charges the whole one-step support, so its affine hulls match
    the union hulls by construction; the remaining certificate is that 0 lies
    in the relative interior of each support hull, which fails exactly when
    one-step arbitrage exists somewhere (raised with the offending node).
    """
    mixing = {}
    for nid in tree.non_terminal():
        extremes = ambiguity[nid].extremes
        s = support(tree, ambiguity, nid)
        ok, witness = zero_in_relative_interior(s)
        if not ok:
            raise NAFailure(nid, witness=witness)
        mixing[nid] = np.full(len(extremes), 1.0 / len(extremes))
    return ProductPriorSpec(mixing=mixing)


def build_H_prior(
    tree: ScenarioTree,
    ambiguity: dict[str, AmbiguitySet],
    q_spec: ProductPriorSpec,
    lambdas,
) -> ProductPriorSpec:
    """Mix the reference kernel into an arbitrary product spec, node by node.

    Any positive weight on the uniform mixture keeps the full support, so the
    result inherits the certified geometry.  ``lambdas`` is either one float
    or a per-node map; every value must sit in (0, 1].
    """
    p_star = build_p_star(tree, ambiguity)
    mixing = {}
    for nid in tree.non_terminal():
        lam = lambdas[nid] if isinstance(lambdas, dict) else lambdas
        if not 0.0 < lam <= 1.0:
            raise LambdaError(f"mixing weight {lam!r} at node {nid!r} outside (0, 1]")
        mixing[nid] = lam * p_star.mixing[nid] + (1.0 - lam) * q_spec.mixing[nid]
    return ProductPriorSpec(mixing=mixing)


# --------------------------------------------------------------------------
# backward envelopes
# --------------------------------------------------------------------------

@dataclass
class AuxProcesses:
    """Backward suprema C_t and J_t plus the per-kernel scalars they feed.

    ``C[node]`` is the worst-case child expectation of the growth constant;
    ``J(node, x)`` the worst-case expectation of the terminal negative part
    at fixed wealth (no strategy shift enters this recursion).  ``c_for`` and
    ``i_for`` evaluate the kernel-specific constants used by the threshold
    searches.
    """

    tree: ScenarioTree
    ambiguity: dict[str, AmbiguitySet]
    utility: RandomUtility
    C: dict[str, float]
    _j_memo: dict[tuple[str, float], float] = field(default_factory=dict)

    def J(self, node_id: str, x: float) -> float:
        key = (node_id, float(x))
        if key in self._j_memo:
            return self._j_memo[key]
        node = self.tree.node(node_id)
        if node.t == self.tree.T:
            u = self.utility.eval(node_id, float(x))
            val = INF if u == -INF else max(-u, 0.0)
        else:
            val = 0.0
            for ext in self.ambiguity[node_id].extremes:
                total = 0.0
                for child, q in zip(node.children, ext):
                    if q > 0.0:
                        total += float(q) * self.J(child, x)
                val = max(val, total)
        self._j_memo[key] = val
        return val

    def c_for(self, node_id: str, kernel: np.ndarray) -> float:
        node = self.tree.node(node_id)
        total = 0.0
        for child, q in zip(node.children, kernel):
            if q > 0.0:
                total += float(q) * (self.C[child] + self.J(child, 0.0))
        return total

    def i_for(self, node_id: str, kernel: np.ndarray, alpha: float) -> float:
        return 1.0 + 2.0 * self.c_for(node_id, kernel) / alpha


def propagate_CJ(
    tree: ScenarioTree,
    ambiguity: dict[str, AmbiguitySet],
    C_leaf: dict[str, float] | float,
    utility: RandomUtility,
    x_grid: Iterable[float] = (0.0,),
) -> AuxProcesses:
    """Backward sweep of the growth-constant and negative-part envelopes."""
    C: dict[str, float] = {}
    for leaf in tree.leaves():
        C[leaf] = float(C_leaf[leaf]) if isinstance(C_leaf, dict) else float(C_leaf)
        if C[leaf] < 0.0:
            raise ParameterError(f"growth constant at leaf {leaf!r} must be nonnegative")
    for t in range(tree.T - 1, -1, -1):
        for nid in tree.levels[t]:
            node = tree.node(nid)
            best = 0.0
            for ext in ambiguity[nid].extremes:
                total = 0.0
                for child, q in zip(node.children, ext):
                    if q > 0.0:
                        total += float(q) * C[child]
                best = max(best, total)
            C[nid] = best
    aux = AuxProcesses(tree=tree, ambiguity=ambiguity, utility=utility, C=C)
    for x in x_grid:
        aux.J(tree.root, float(x))
    return aux


# --------------------------------------------------------------------------
# value-function handles
# --------------------------------------------------------------------------

_CLOSURE_DELTAS = (1e-4, 1e-6, 1e-8)


@dataclass
class GridParams:
    x_min: float = -1e3
    x_max: float = 1e3
    step: float = 2.0**-6


class ValueFunctionHandle:
    """Memoized evaluator of the node value functions.

    ``kernels`` is None in the robust mode (minimize over the node's
    extremes) or maps node -> kernel in the per-prior mode (the kernel is
    both the single integrating prior and the reference prior of that
    context).
    """

    def __init__(
        self,
        tree: ScenarioTree,
        ambiguity: dict[str, AmbiguitySet],
        utility: RandomUtility,
        cert: AECertificate,
        aux: AuxProcesses,
        kernels: dict[str, np.ndarray] | None,
        mode: str = "exact_recursive",
        grid: GridParams | None = None,
        tol: float = 1e-9,
        alpha_safety: float = 0.9,
    ):
        if mode not in ("exact_recursive", "grid_interpolated"):
            raise ParameterError(f"unknown mode {mode!r}")
        self.tree = tree
        self.ambiguity = ambiguity
        self.utility = utility
        self.cert = cert
        self.aux = aux
        self.kernels = kernels
        self.mode = mode
        self.grid = grid or GridParams()
        self.tol = tol
        self.alpha_safety = alpha_safety
        self.alpha: dict[str, float] = {}
        self.alpha_approx: dict[str, bool] = {}
        self._memo: dict[str, dict[float, float]] = {}
        self._ctx: dict[str, tuple[OnePeriodInstance, BoundPack | None]] = {}
        self._grid_vals: dict[str, np.ndarray] = {}
        self._knots: np.ndarray | None = None
        self._compute_alphas()
        if mode == "grid_interpolated":
            self._build_grids()

    # -- shared per-node machinery ------------------------------------------

    def _node_kernel(self, nid: str) -> np.ndarray:
        if self.kernels is not None:
            return self.kernels[nid]
        exts = self.ambiguity[nid].extremes
        return np.mean(np.stack(exts), axis=0)

    def _node_extremes(self, nid: str) -> np.ndarray:
        if self.kernels is not None:
            return np.atleast_2d(self.kernels[nid])
        return np.stack(self.ambiguity[nid].extremes)

    def _compute_alphas(self) -> None:
        def one(nid: str) -> float:
            node = self.tree.node(nid)
            incs = [increment(self.tree, child) for child in node.children]
            s = support(self.tree, self.ambiguity, nid)
            frame = affine_hull(s)
            kern = self._node_kernel(nid)
            a, approx = quantitative_alpha(kern, incs, frame)
            if approx:
                a *= self.alpha_safety
            self.alpha_approx[nid] = approx
            return a

        self.alpha = _level_map(self.tree.non_terminal(), one)

    def _sections(self, nid: str) -> list[Callable[[float], float]]:
        node = self.tree.node(nid)
        out = []
        for child in node.children:
            if node.t + 1 == self.tree.T:
                out.append(self.utility.section(child))
            else:
                out.append(lambda x, c=child: self.value(c, x))
        return out

    def node_context(self, nid: str, with_bounds: bool = True):
        """One-period instance (and bound pack) for a non-terminal node."""
        have = self._ctx.get(nid)
        if have is not None and (have[1] is not None or not with_bounds):
            return have
        node = self.tree.node(nid)
        incs = np.stack([increment(self.tree, child) for child in node.children])
        inst = make_instance(
            increments=incs,
            extremes=self._node_extremes(nid),
            sections=self._sections(nid),
            gamma=self.cert.gamma,
            p_star=self._node_kernel(nid),
            alpha=self.alpha[nid],
            labels=node.children,
        )
        bounds = None
        if with_bounds:
            C_out = [self.aux.C[c] + self.aux.J(c, 0.0) for c in node.children]
            try:
                bounds = compute_bounds(inst, C_out)
            except AssumptionFailure as exc:
                exc.node = exc.node or nid
                raise
        self._ctx[nid] = (inst, bounds)
        return inst, bounds

    # -- exact recursion ------------------------------------------------------

    def value(self, node_id: str, x: float) -> float:
        x = float(x)
        node = self.tree.node(node_id)
        if node.t == self.tree.T:
            return self.utility.eval(node_id, x)
        if self.mode == "grid_interpolated":
            return self._grid_value(node_id, x)
        memo = self._memo.setdefault(node_id, {})
        if x in memo:
            return memo[x]
        inst, bounds = self.node_context(node_id, with_bounds=self._needs_bounds(node_id))
        if inst.frame.dim == 0:
            from .oneperiod import psi_robust

            val = psi_robust(inst, x, np.zeros(inst.dim))
        else:
            val = maximize(inst, x, bounds, tol=self.tol).value
        memo[x] = val
        return val

    def _needs_bounds(self, nid: str) -> bool:
        inst, _ = self.node_context(nid, with_bounds=False)
        return inst.frame.dim > 0

    def value_checked(self, node_id: str, x: float, rel: float = 1e-4) -> float:
        """Evaluate and spot-check right-continuity at ``x``.

        On assumption-passing instances the value function needs no explicit
        upper-semicontinuous closure; this asserts that numerically by
        sampling shrinking right offsets.
        """
        base = self.value(node_id, x)
        if not math.isfinite(base):
            return base
        for delta in _CLOSURE_DELTAS:
            probe = self.value(node_id, x + delta)
            if abs(probe - base) <= rel * (1.0 + abs(base)):
                return base
        raise ClosureCheckError(
            f"value at node {node_id!r} not right-continuous at {x!r}: "
            f"{base} vs {self.value(node_id, x + _CLOSURE_DELTAS[-1])}"
        )

    # -- grid mode -------------------------------------------------------------

    def _build_grids(self) -> None:
        g = self.grid
        n = int(round((g.x_max - g.x_min) / g.step)) + 1
        self._knots = g.x_min + g.step * np.arange(n)
        for t in range(self.tree.T - 1, -1, -1):
            level = self.tree.levels[t]
            _level_map(level, self._grid_sweep)

    def _child_eval_np(self, child: str) -> Callable[[np.ndarray], np.ndarray]:
        node = self.tree.node(child)
        if node.t == self.tree.T:
            return self.utility.section_np(child)
        knots, vals = self._knots, self._grid_vals[child]

        def f(w: np.ndarray) -> np.ndarray:
            out = np.interp(w, knots, vals, left=-INF, right=vals[-1])
            out[np.isnan(out)] = -INF
            return out

        return f

    def _grid_sweep(self, nid: str) -> None:
        node = self.tree.node(nid)
        xs = self._knots
        inst, _ = self.node_context(nid, with_bounds=False)
        kids = node.children
        evals = [self._child_eval_np(c) for c in kids]
        extremes = self._node_extremes(nid)

        if inst.frame.dim == 0:
            deltas = np.zeros(len(kids))
            vals = self._psi_np(xs, np.zeros_like(xs), deltas, evals, extremes)
            self._grid_vals[nid] = vals
            return
        if inst.frame.dim > 1:
            # rare at desk scale: per-point scalar maximization
            _, bounds = self.node_context(nid, with_bounds=True)
            self._grid_vals[nid] = np.array(
                [maximize(inst, float(x), bounds, tol=self.tol).value for x in xs]
            )
            return
        u = inst.frame.basis[0]
        deltas = inst.increments @ u
        lo = np.full(xs.shape, -1.0)
        hi = np.ones_like(lo)
        g_lo = self._psi_np(xs, lo, deltas, evals, extremes)
        g_hi = self._psi_np(xs, hi, deltas, evals, extremes)
        cap = 2.0**60
        for _ in range(40):
            nxt = np.minimum(hi * 4.0, cap)
            g_nxt = self._psi_np(xs, nxt, deltas, evals, extremes)
            grow = g_nxt > g_hi
            if not grow.any():
                break
            hi = np.where(grow, nxt, hi)
            g_hi = np.where(grow, g_nxt, g_hi)
        for _ in range(40):
            nxt = np.maximum(lo * 4.0, -cap)
            g_nxt = self._psi_np(xs, nxt, deltas, evals, extremes)
            grow = g_nxt > g_lo
            if not grow.any():
                break
            lo = np.where(grow, nxt, lo)
            g_lo = np.where(grow, g_nxt, g_lo)
        lo, hi = lo * 4.0, hi * 4.0
        golden = (math.sqrt(5.0) - 1.0) / 2.0
        c = hi - golden * (hi - lo)
        d = lo + golden * (hi - lo)
        gc = self._psi_np(xs, c, deltas, evals, extremes)
        gd = self._psi_np(xs, d, deltas, evals, extremes)
        for _ in range(200):
            widths = hi - lo
            if np.all(widths <= self.tol * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))):
                break
            left = gc >= gd
            hi = np.where(left, d, hi)
            lo = np.where(~left, c, lo)
            c_new = hi - golden * (hi - lo)
            d_new = lo + golden * (hi - lo)
            gc_new = self._psi_np(xs, c_new, deltas, evals, extremes)
            gd_new = self._psi_np(xs, d_new, deltas, evals, extremes)
            c, d, gc, gd = c_new, d_new, gc_new, gd_new
        mid = 0.5 * (lo + hi)
        self._grid_vals[nid] = self._psi_np(xs, mid, deltas, evals, extremes)

    @staticmethod
    def _psi_np(xs, ss, deltas, evals, extremes) -> np.ndarray:
        """Vectorized worst-case one-step objective at (xs_i, ss_i)."""
        child_vals = [f(xs + ss * delta) for f, delta in zip(evals, deltas)]
        best = None
        for row in extremes:
            total = np.zeros_like(xs)
            for q, vals in zip(row, child_vals):
                if q > 0.0:
                    contrib = np.where(vals == -INF, -INF, float(q) * vals)
                    total = total + contrib
            total[np.isnan(total)] = -INF
            best = total if best is None else np.minimum(best, total)
        return best

    def _grid_value(self, node_id: str, x: float) -> float:
        vals = self._grid_vals[node_id]
        if x < self._knots[0]:
            return -INF
        if x > self._knots[-1]:
            return float(vals[-1])
        return float(np.interp(x, self._knots, vals))

    def knot_gap_bound(self, node_id: str) -> float:
        """Max one-gap increment of the node's grid values (interp error cap)."""
        vals = self._grid_vals[node_id]
        finite = np.isfinite(vals)
        if finite.sum() < 2:
            return INF
        diffs = np.abs(np.diff(vals[finite]))
        return float(diffs.max()) if diffs.size else 0.0


def _assemble_handle(
    tree, ambiguity, utility, kernels, mode, params
) -> ValueFunctionHandle:
    params = dict(params or {})
    cert = params.get("cert")
    if cert is None:
        cert = certificate_for(utility, tree.leaves(), gamma_hint=params.get("gamma"))
    C_leaf = {leaf: cert.C(leaf) for leaf in tree.leaves()}
    aux = params.get("aux")
    if aux is None:
        aux = propagate_CJ(tree, ambiguity, C_leaf, utility)
    grid = None
    if mode == "grid_interpolated":
        grid = GridParams(
            x_min=params.get("x_min", -1e3),
            x_max=params.get("x_max", 1e3),
            step=params.get("step", 2.0**-6),
        )
    return ValueFunctionHandle(
        tree=tree,
        ambiguity=ambiguity,
        utility=utility,
        cert=cert,
        aux=aux,
        kernels=kernels,
        mode=mode,
        grid=grid,
        tol=params.get("tol", 1e-9),
        alpha_safety=params.get("alpha_safety", 0.9),
    )


def value_function(
    tree: ScenarioTree,
    ambiguity: dict[str, AmbiguitySet],
    utility: RandomUtility,
    mode: str = "exact_recursive",
    params: dict | None = None,
) -> ValueFunctionHandle:
    """Robust value-function handle (worst case over the ambiguity hull)."""
    build_p_star(tree, ambiguity)  # raises NAFailure with the offending node
    return _assemble_handle(tree, ambiguity, utility, None, mode, params)


def value_function_P(
    tree: ScenarioTree,
    ambiguity: dict[str, AmbiguitySet],
    utility: RandomUtility,
    prior: ProductPriorSpec,
    mode: str = "exact_recursive",
    params: dict | None = None,
) -> ValueFunctionHandle:
    """Single-prior value-function handle for a geometry-preserving spec."""
    kernels = {}
    for nid in tree.non_terminal():
        kern = prior.kernel(ambiguity, nid)
        s = support(tree, ambiguity, nid)
        node = tree.node(nid)
        charged = set()
        for child, q in zip(node.children, kern):
            if q > 0.0:
                charged.add(tuple(increment(tree, child).tolist()))
        full = {tuple(p.tolist()) for p in s.points}
        if charged != full:
            raise AssumptionFailure(
                "h_membership", node=nid,
                message=f"kernel at node {nid!r} does not charge the full support",
            )
        kernels[nid] = kern
    return _assemble_handle(tree, ambiguity, utility, kernels, mode, params)


# --------------------------------------------------------------------------
# per-node cash thresholds
# --------------------------------------------------------------------------

def compute_N_t(
    tree: ScenarioTree,
    ambiguity: dict[str, AmbiguitySet],
    handle: ValueFunctionHandle,
    aux: AuxProcesses,
    which: str | ProductPriorSpec = "star",
) -> dict[str, int]:
    """Smallest k >= 1 with enough kernel mass on {U_{t+1}(., -k) <= -i_t}.

    ``which='star'`` uses the uniform-mixture reference kernel and the robust
    next-period value; a product spec uses its own kernels (and should pair
    with a per-prior handle).  The searched probability is nondecreasing in
    k, so doubling plus bisection is exact; passing the 2^40 cap raises
    NtUnbounded for the node.
    """
    out: dict[str, int] = {}
    for nid in tree.non_terminal():
        node = tree.node(nid)
        if which == "star":
            kern = np.mean(np.stack(ambiguity[nid].extremes), axis=0)
        else:
            kern = which.kernel(ambiguity, nid)
        alpha = handle.alpha[nid]
        i_t = aux.i_for(nid, kern, alpha)
        target = 1.0 - alpha / 2.0

        def mass(k: float) -> float:
            total = 0.0
            for child, q in zip(node.children, kern):
                if q > 0.0 and handle.value(child, -float(k)) <= -i_t:
                    total += float(q)
            return total

        k = 1.0
        while mass(k) < target:
            k *= 2.0
            if k > N_CAP:
                raise NtUnbounded(nid)
        lo, hi = max(1, int(k // 2)), int(k)
        while lo < hi:
            mid = (lo + hi) // 2
            if mass(mid) >= target:
                hi = mid
            else:
                lo = mid + 1
        out[nid] = max(1, hi)
    return out


# --------------------------------------------------------------------------
# strategies
# --------------------------------------------------------------------------

@dataclass
class GluedStrategy:
    x0: float
    h: dict[str, np.ndarray]
    wealth: dict[str, float]


def glue_strategy(
    tree: ScenarioTree,
    ambiguity: dict[str, AmbiguitySet],
    handle: ValueFunctionHandle,
    x0: float,
    identity_rel: float = 1e-6,
) -> GluedStrategy:
    """Forward sweep applying the one-step maximizer at each realized wealth.

    At every node the one-step optimality identity is asserted: the node's
    value at its wealth equals the worst-case child expectation under the
    chosen strategy, within a small relative tolerance.
    """
    if handle.mode != "exact_recursive":
        raise ParameterError("gluing needs the exact handle (wealths leave any grid)")
    wealth: dict[str, float] = {tree.root: float(x0)}
    hmap: dict[str, np.ndarray] = {}
    for t in range(tree.T):
        for nid in tree.levels[t]:
            node = tree.node(nid)
            w = wealth[nid]
            inst, bounds = handle.node_context(nid, with_bounds=handle._needs_bounds(nid))
            if inst.frame.dim == 0:
                h = np.zeros(inst.dim)
                from .oneperiod import psi_robust

                val = psi_robust(inst, w, h)
            else:
                res = maximize(inst, w, bounds, tol=handle.tol)
                h, val = res.h, res.value
            learned = handle.value(nid, w)
            if math.isfinite(val) and abs(val - learned) > identity_rel * (1.0 + abs(learned)):
                raise ClosureCheckError(
                    f"one-step identity fails at node {nid!r}: {val} vs {learned}"
                )
            hmap[nid] = h
            for child in node.children:
                wealth[child] = w + float(h @ increment(tree, child))
    return GluedStrategy(x0=float(x0), h=hmap, wealth=wealth)


def robust_expectation(
    tree: ScenarioTree,
    ambiguity: dict[str, AmbiguitySet],
    leaf_values: dict[str, float],
) -> float:
    """Worst case over the hull of the tree expectation of terminal values.

    Kernels are chosen node by node, so the product infimum decomposes into
    a backward minimum of one-step expectations.
    """
    vals = {leaf: float(leaf_values[leaf]) for leaf in tree.leaves()}
    for t in range(tree.T - 1, -1, -1):
        for nid in tree.levels[t]:
            node = tree.node(nid)
            child_vals = [vals[c] for c in node.children]
            best = INF
            for ext in ambiguity[nid].extremes:
                best = min(best, minus_integral(child_vals, ext.tolist()))
            vals[nid] = best
    return vals[tree.root]


@dataclass
class AdmissibilityReport:
    admissible: bool
    max_loss_part: float
    witness: str | None = None


def check_admissibility(
    tree: ScenarioTree,
    ambiguity: dict[str, AmbiguitySet],
    utility: RandomUtility,
    strategy: GluedStrategy,
) -> AdmissibilityReport:
    """Finite trees: admissible iff no reachable leaf scores -inf."""
    worst = 0.0
    witness = None
    for leaf in sorted(reachable_leaves(tree, ambiguity)):
        u = utility.eval(leaf, strategy.wealth[leaf])
        loss = INF if u == -INF else max(-u, 0.0)
        if loss > worst:
            worst, witness = loss, leaf
    return AdmissibilityReport(
        admissible=math.isfinite(worst), max_loss_part=worst,
        witness=None if math.isfinite(worst) else witness,
    )


# --------------------------------------------------------------------------
# finiteness sampling and the solve pipeline
# --------------------------------------------------------------------------

def check_assumption_U0(
    tree: ScenarioTree,
    ambiguity: dict[str, AmbiguitySet],
    utility: RandomUtility,
    samples: int = 5,
    seed: int = 0,
    params: dict | None = None,
) -> dict:
    """Evaluate the per-prior value at unit wealth for sampled hull members.

    Uses the uniform-mixture spec plus ``samples`` random geometry-preserving
    mixtures (random extreme choice per node, mixing weight in [0.1, 1]).
    Values beyond 1e12 are flagged as numerically infinite.
    """
    rng = np.random.default_rng(seed)
    p_star = build_p_star(tree, ambiguity)
    specs = [("p_star", p_star)]
    node_ids = tree.non_terminal()
    for s in range(samples):
        mixing = {}
        for nid in node_ids:
            m = len(ambiguity[nid].extremes)
            pick = np.zeros(m)
            pick[rng.integers(m)] = 1.0
            lam = float(rng.uniform(0.1, 1.0))
            mixing[nid] = lam * p_star.mixing[nid] + (1.0 - lam) * pick
        specs.append((f"sample_{s}", ProductPriorSpec(mixing=mixing)))
    values = {}
    diverged = False
    for name, spec in specs:
        h = value_function_P(tree, ambiguity, utility, spec, "exact_recursive", params)
        v = h.value(tree.root, 1.0)
        values[name] = v
        if not math.isfinite(v) or abs(v) > _DIVERGED:
            diverged = True
    return {"values": values, "max": max(values.values()), "diverged": diverged}


@dataclass
class SolveReport:
    value: float | None = None
    strategy: dict | None = None
    wealth: dict | None = None
    admissible: bool | None = None
    diagnostics: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json_dict(self) -> dict:
        return {
            "value": self.value,
            "strategy": self.strategy,
            "wealth": self.wealth,
            "admissible": self.admissible,
            "diagnostics": self.diagnostics,
            "failures": self.failures,
        }


def solve(
    tree: ScenarioTree,
    ambiguity: dict[str, AmbiguitySet],
    utility: RandomUtility,
    x0: float,
    mode: str = "exact_recursive",
    params: dict | None = None,
) -> SolveReport:
    """Full pipeline: geometry check, certificates, value, gluing, audit.

    Failures are collected into the report (with assumption names and node
    provenance) rather than raised, so diagnostics on pathological instances
    are ordinary outputs.  When the glued strategy is admissible the
    consistency identity between the dynamic value and the worst-case
    expectation of the realized terminal utility is asserted within
    1e-5 relative.
    """
    params = dict(params or {})
    diagnostics_level = params.get("diagnostics", "full")
    report = SolveReport()
    diag = report.diagnostics
    t0 = time.monotonic()

    try:
        build_p_star(tree, ambiguity)
    except NAFailure as exc:
        report.failures.append({
            "assumption": "no_arbitrage", "node": exc.node,
            "witness": None if exc.witness is None else np.asarray(exc.witness).tolist(),
        })
        return report

    try:
        cert = certificate_for(utility, tree.leaves(), gamma_hint=params.get("gamma"))
    except RAEViolation as exc:
        report.failures.append({"assumption": "elasticity", "message": str(exc)})
        return report
    params["cert"] = cert
    diag["ae_certificate"] = {
        "gamma": cert.gamma, "side": cert.side, "max_C": cert.max_C(),
    }

    if diagnostics_level == "full":
        try:
            type_a = certify_type_A(utility, tree, ambiguity, gamma_hint=params.get("gamma"))
            diag["type_A"] = type_a.to_json_dict()
        except CertificationFailure as exc:
            diag["type_A"] = {
                "overall": False, "failed_clause": exc.clause,
                "witness": exc.witness,
            }

    try:
        handle = value_function(tree, ambiguity, utility, mode="exact_recursive", params=params)
        value = handle.value_checked(tree.root, x0)
    except (AssumptionFailure, NtUnbounded) as exc:
        report.failures.append({
            "assumption": getattr(exc, "assumption", "threshold"),
            "node": getattr(exc, "node", None), "message": str(exc),
        })
        return report
    except ClosureCheckError as exc:
        report.failures.append({"assumption": "closure", "message": str(exc)})
        return report
    report.value = value
    diag["alpha"] = dict(handle.alpha)
    diag["alpha_approximate"] = {k: v for k, v in handle.alpha_approx.items() if v}

    if mode == "grid_interpolated":
        gh = value_function(tree, ambiguity, utility, mode="grid_interpolated", params=params)
        diag["grid"] = {
            "value": gh.value(tree.root, x0),
            "knot_gap_bound": gh.knot_gap_bound(tree.root),
        }

    try:
        strategy = glue_strategy(tree, ambiguity, handle, x0)
    except (AssumptionFailure, NtUnbounded, ClosureCheckError) as exc:
        report.failures.append({
            "assumption": getattr(exc, "assumption", "gluing"),
            "node": getattr(exc, "node", None), "message": str(exc),
        })
        return report
    report.strategy = {nid: h.tolist() for nid, h in strategy.h.items()}
    report.wealth = {nid: w for nid, w in strategy.wealth.items()}

    n0 = {}
    k1_visited = {}
    for nid in tree.non_terminal():
        _, bounds = handle.node_context(nid, with_bounds=handle._needs_bounds(nid))
        if bounds is not None:
            n0[nid] = bounds.n0_star
            k1_visited[nid] = bounds.K1(strategy.wealth[nid])
    diag["n0"] = n0
    diag["K1_visited"] = k1_visited
    diag["C_t"] = {nid: handle.aux.C[nid] for nid in tree.nodes}
    diag["J_t0"] = {nid: handle.aux.J(nid, 0.0) for nid in tree.nodes}

    adm = check_admissibility(tree, ambiguity, utility, strategy)
    report.admissible = adm.admissible
    diag["admissibility"] = {
        "max_loss_part": adm.max_loss_part, "witness": adm.witness,
    }

    leaf_payoff = {leaf: utility.eval(leaf, strategy.wealth[leaf]) for leaf in tree.leaves()}
    realized = robust_expectation(tree, ambiguity, leaf_payoff)
    diag["realized_robust_expectation"] = realized
    if adm.admissible:
        if abs(realized - value) > 1e-5 * (1.0 + abs(value)):
            report.failures.append({
                "assumption": "dp_consistency",
                "message": f"value {value} vs realized {realized}",
            })

    if diagnostics_level == "full":
        try:
            diag["N_t"] = compute_N_t(tree, ambiguity, handle, handle.aux, "star")
        except NtUnbounded as exc:
            report.failures.append({"assumption": "threshold", "node": exc.node})
        try:
            diag["U0_sample"] = check_assumption_U0(
                tree, ambiguity, utility,
                samples=params.get("u0_samples", 3), seed=params.get("seed", 0),
                params={"cert": cert},
            )
        except (AssumptionFailure, NtUnbounded) as exc:
            report.failures.append({
                "assumption": getattr(exc, "assumption", "threshold"),
                "node": getattr(exc, "node", None), "message": str(exc),
            })
    diag["timing_ms"] = int(1000 * (time.monotonic() - t0))
    return report
