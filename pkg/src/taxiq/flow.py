"""Network flow balance: matched-pair rates, incoming/outgoing vehicle flows.

For zone i and service s in {ats, tts}:

    lambda_pv_s = min(lambda_v_s + p_pick_s * F_in, p_s * lambda_p)
    F_out       = lambda_pv_ats + lambda_pv_tts + p_pass * F_in
    F_in_i      = sum_j W[j, i] * F_out_j

where W[j, i] is the portion-weighted routing mass from zone j's road into
zone i. The reference solver is Picard iteration from F_in = 0 followed by an
exact linear solve on the active min-branches; the LP is an independent
cross-check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import Infeasible, NonConvergence
from .model import NetworkConfig, ROUTING_KEYS

log = logging.getLogger(__name__)

SERVICES = ("ats", "tts")


@dataclass(frozen=True, eq=False)
class FlowSolution:
    zones: tuple[str, ...]
    lambda_pv_ats: np.ndarray
    lambda_pv_tts: np.ndarray
    f_in: np.ndarray
    f_out: np.ndarray
    lambda_hat_v_ats: np.ndarray
    lambda_hat_v_tts: np.ndarray
    lambda_road: np.ndarray
    method: str = "fixed-point"
    iterations: int = 0
    residual: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def lambda_pv(self, service: str) -> np.ndarray:
        return getattr(self, f"lambda_pv_{service}")

    def lambda_hat_v(self, service: str) -> np.ndarray:
        return getattr(self, f"lambda_hat_v_{service}")

    def rows(self):
        cols = ("lambda_pv_ats", "lambda_pv_tts", "f_in", "f_out",
                "lambda_hat_v_ats", "lambda_hat_v_tts", "lambda_road")
        for i, z in enumerate(self.zones):
            yield {"zone": z, **{c: float(getattr(self, c)[i]) for c in cols}}


def inflow_weight(config: NetworkConfig, j: int, i: int) -> float:
    """Routing mass from zone j's road queue into zone i, mixed over vehicle classes."""
    n = config.n
    if not (0 <= j < n and 0 <= i < n):
        raise IndexError(f"zone index out of range: j={j}, i={i}, n={n}")
    if not config.adjacency[j, i]:
        return 0.0
    por = config.params[j].portions()
    p = np.array([getattr(config.routing, k)[j, i] for k in ROUTING_KEYS])
    return float(p @ por)


def inflow_matrix(config: NetworkConfig) -> np.ndarray:
    """W with W[j, i] = inflow_weight(config, j, i)."""
    stack = config.routing.stack()[:, :, : config.n]  # (class, j, i)
    por = np.array([p.portions() for p in config.params])  # (j, class)
    w = np.einsum("cji,jc->ji", stack, por)
    return np.where(config.adjacency, w, 0.0)


def exit_mass(config: NetworkConfig) -> np.ndarray:
    stack = config.routing.stack()[:, :, config.n]  # (class, j)
    por = np.array([p.portions() for p in config.params])
    return np.einsum("cj,jc->j", stack, por)


class _Terms:
    """Per-zone vectors used by both solvers."""

    def __init__(self, config: NetworkConfig):
        self.lv = {s: config.vec(f"lambda_v_{s}") for s in SERVICES}
        self.pick = {s: config.vec(f"p_pick_{s}") for s in SERVICES}
        lp = config.vec("lambda_p")
        self.demand = {"ats": config.vec("p_ats") * lp, "tts": config.vec("p_tts") * lp}
        self.p_pass = config.vec("p_pass")
        self.w = inflow_matrix(config)

    def pairs(self, f_in):
        return {s: np.minimum(self.lv[s] + self.pick[s] * f_in, self.demand[s]) for s in SERVICES}

    def f_out(self, f_in):
        d = self.pairs(f_in)
        return d["ats"] + d["tts"] + self.p_pass * f_in

    def step(self, f_in):
        return self.w.T @ self.f_out(f_in)


def effective_rates(config: NetworkConfig, solution: FlowSolution) -> FlowSolution:
    """Fill effective vehicle arrivals, road arrivals and F_out from F_in and pair rates."""
    f_in = np.asarray(solution.f_in, dtype=float)
    hat = {s: config.vec(f"lambda_v_{s}") + f_in * config.vec(f"p_pick_{s}") for s in SERVICES}
    lam_road = solution.lambda_pv_ats + solution.lambda_pv_tts + config.vec("p_pass") * f_in
    return FlowSolution(
        zones=config.zones,
        lambda_pv_ats=np.asarray(solution.lambda_pv_ats, dtype=float),
        lambda_pv_tts=np.asarray(solution.lambda_pv_tts, dtype=float),
        f_in=f_in,
        f_out=lam_road.copy(),
        lambda_hat_v_ats=hat["ats"],
        lambda_hat_v_tts=hat["tts"],
        lambda_road=lam_road,
        method=solution.method,
        iterations=solution.iterations,
        residual=solution.residual,
        diagnostics=dict(solution.diagnostics),
    )


def _from_f_in(config, terms, f_in, **kw) -> FlowSolution:
    d = terms.pairs(f_in)
    n = config.n
    stub = FlowSolution(
        zones=config.zones,
        lambda_pv_ats=d["ats"],
        lambda_pv_tts=d["tts"],
        f_in=f_in,
        f_out=np.zeros(n),
        lambda_hat_v_ats=np.zeros(n),
        lambda_hat_v_tts=np.zeros(n),
        lambda_road=np.zeros(n),
        **kw,
    )
    return effective_rates(config, stub)


def _polish(terms: _Terms, f_in: np.ndarray):
    """Solve the linear system selected by the active min-branches at f_in."""
    n = len(f_in)
    k = terms.p_pass.copy()
    b = np.zeros(n)
    for s in SERVICES:
        supply = terms.lv[s] + terms.pick[s] * f_in <= terms.demand[s]
        k += np.where(supply, terms.pick[s], 0.0)
        b += np.where(supply, terms.lv[s], terms.demand[s])
    a = np.eye(n) - terms.w.T * k[None, :]
    try:
        cand = np.linalg.solve(a, terms.w.T @ b)
    except np.linalg.LinAlgError:
        return None
    if np.any(cand < -1e-12):
        return None
    return np.maximum(cand, 0.0)


def fixed_point_map(config: NetworkConfig):
    """The map F_in -> W^T F_out(F_in), for external checks."""
    return _Terms(config).step


def solve_fixed_point(
    config: NetworkConfig,
    start=None,
    damping: float = 1.0,
    tol: float = 1e-9,
    max_iter: int = 100_000,
    polish: bool = True,
) -> FlowSolution:
    """Picard iteration on F_in (from zero unless ``start`` is given)."""
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    terms = _Terms(config)
    f = np.zeros(config.n) if start is None else np.array(start, dtype=float)
    change = np.inf
    it = 0
    while it < max_iter:
        nxt = (1 - damping) * f + damping * terms.step(f)
        it += 1
        change = float(np.max(np.abs(nxt - f))) if config.n else 0.0
        f = nxt
        if change < tol:
            break
    else:
        raise NonConvergence(
            f"fixed point did not converge in {max_iter} iterations; check exit probabilities",
            change,
        )
    residual = float(np.max(np.abs(terms.step(f) - f))) if config.n else 0.0
    polished = False
    if polish and config.n:
        cand = _polish(terms, f)
        if cand is not None:
            r = float(np.max(np.abs(terms.step(cand) - cand)))
            if r <= residual:
                f, residual, polished = cand, r, True
    log.debug("fixed point: %d iterations, residual %.3e, polished=%s", it, residual, polished)
    return _from_f_in(
        config, terms, f,
        method="fixed-point", iterations=it, residual=residual,
        diagnostics={"polished": polished, "last_change": change, "damping": damping},
    )


def multistart_divergence(config: NetworkConfig, n_starts: int = 5, seed: int = 0, scale: float | None = None) -> float:
    """Sup-norm spread of F_in across random starts; ~0 when the fixed point is unique."""
    rng = np.random.default_rng(seed)
    base = solve_fixed_point(config)
    if scale is None:
        scale = 10.0 * (1.0 + float(np.max(base.f_in, initial=0.0)))
    spread = 0.0
    for _ in range(n_starts):
        sol = solve_fixed_point(config, start=rng.uniform(0, scale, config.n))
        spread = max(spread, float(np.max(np.abs(sol.f_in - base.f_in), initial=0.0)))
    return spread


def solve_lp(config: NetworkConfig) -> FlowSolution:
    """Linear-program route: maximize total pair rate under the min-branch upper bounds.

    Variables are [lambda_pv_tts, lambda_pv_ats, F_in]. Each pair rate is
    bounded above by both of its min branches; the inflow identity is an
    equality. Maximizing pushes every pair rate onto the smaller branch.
    """
    t = _Terms(config)
    n = config.n
    if n == 0:
        raise ValueError("empty network")
    eye = np.eye(n)
    zero = np.zeros((n, n))
    # lambda_pv_s - p_pick_s * F <= lambda_v_s
    a_ub = np.block([
        [eye, zero, -np.diag(t.pick["tts"])],
        [zero, eye, -np.diag(t.pick["ats"])],
    ])
    b_ub = np.concatenate([t.lv["tts"], t.lv["ats"]])
    # F - W^T (lpv_tts + lpv_ats + p_pass F) = 0
    wt = t.w.T
    a_eq = np.hstack([-wt, -wt, eye - wt * t.p_pass[None, :]])
    b_eq = np.zeros(n)
    bounds = [(0.0, d) for d in t.demand["tts"]] + [(0.0, d) for d in t.demand["ats"]] + [(0.0, None)] * n
    c = np.concatenate([-np.ones(2 * n), np.zeros(n)])
    res = linprog(
        c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        raise Infeasible("flow-balance LP infeasible (invalid config?)")
    if res.status == 3:
        raise Infeasible("flow-balance LP unbounded: routing has no leakage to the exit node")
    if res.status != 0:
        raise Infeasible(f"LP solver failed: {res.message}")
    x = res.x
    lpv_tts, lpv_ats, f_in = x[:n], x[n: 2 * n], np.maximum(x[2 * n:], 0.0)
    residual = float(np.max(np.abs(t.step(f_in) - f_in)))
    stub = FlowSolution(
        zones=config.zones,
        lambda_pv_ats=np.maximum(lpv_ats, 0.0),
        lambda_pv_tts=np.maximum(lpv_tts, 0.0),
        f_in=f_in,
        f_out=np.zeros(n),
        lambda_hat_v_ats=np.zeros(n),
        lambda_hat_v_tts=np.zeros(n),
        lambda_road=np.zeros(n),
        method="lp",
        iterations=int(getattr(res, "nit", 0)),
        residual=residual,
        diagnostics={"objective": float(-res.fun)},
    )
    return effective_rates(config, stub)


def solve(config: NetworkConfig, method: str = "fixed-point", **kw) -> FlowSolution:
    if method == "fixed-point":
        return solve_fixed_point(config, **kw)
    if method == "lp":
        return solve_lp(config)
    raise ValueError(f"unknown method {method!r}")


def total_exit_flow(config: NetworkConfig, solution: FlowSolution) -> float:
    return float(np.sum(solution.f_out * exit_mass(config)))


def class_flows(config: NetworkConfig, solution: FlowSolution, tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
    """Per-class road departure rates, shape (n, 4) in ROUTING_CLASSES order.

    Occupied flow of service s out of zone j is lambda_pv_s; empty flow is the
    pass-through share of the incoming vehicles that still carry service s.
    Vehicles keep their service label while passing through and take the
    label of the matching queue they join.
    """
    n = config.n
    stack = config.routing.stack()[:, :, :n] * config.adjacency[None, :, :]
    p_pass = config.vec("p_pass")
    occ = {"ats": solution.lambda_pv_ats, "tts": solution.lambda_pv_tts}
    fin = {s: np.zeros(n) for s in SERVICES}
    out = np.zeros((n, 4))
    for _ in range(max_iter):
        out = np.column_stack([occ["ats"], p_pass * fin["ats"], occ["tts"], p_pass * fin["tts"]])
        new = {
            "ats": stack[0].T @ out[:, 0] + stack[1].T @ out[:, 1],
            "tts": stack[2].T @ out[:, 2] + stack[3].T @ out[:, 3],
        }
        delta = max(float(np.max(np.abs(new[s] - fin[s]), initial=0.0)) for s in SERVICES)
        fin = new
        if delta < tol:
            break
    return np.column_stack([occ["ats"], p_pass * fin["ats"], occ["tts"], p_pass * fin["tts"]])


def with_consistent_portions(config: NetworkConfig, rounds: int = 200, tol: float = 1e-13) -> NetworkConfig:
    """Set each zone's flow portions to the class composition its road actually emits."""
    cfg = config
    for _ in range(rounds):
        sol = solve_fixed_point(cfg, tol=1e-13)
        flows = class_flows(cfg, sol)
        tot = flows.sum(axis=1, keepdims=True)
        por = np.where(tot > 0, flows / np.where(tot > 0, tot, 1.0), 0.25)
        old = np.array([p.portions() for p in cfg.params])
        cfg = cfg.with_params(
            portion_occ_ats=por[:, 0], portion_emp_ats=por[:, 1],
            portion_occ_tts=por[:, 2], portion_emp_tts=por[:, 3],
        )
        if np.max(np.abs(por - old)) < tol:
            break
    return cfg
