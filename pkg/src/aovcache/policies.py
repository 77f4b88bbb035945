"""Decision rules mapping cache state and a request to an action.

Action numbering follows the event semantics: 0 serve the cached copy,
1 fetch+serve+cache (evicting a victim when the requester is uncached),
2 wait for more requests, 3 fetch+serve+discard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import NamedTuple

from .model import CacheSystemState, SystemParams
from .thresholds import compute_I, optimal_average_cost
from .whittle import ContentTables, build_content_tables

__all__ = [
    "ActionKind",
    "Action",
    "PolicyKind",
    "PolicyTables",
    "build_policy_tables",
    "whittle_decide",
    "infinite_capacity_decide",
    "myopic_decide",
    "static_topm_decide",
    "relaxed_lower_bound",
    "dual_value",
]


class ActionKind(IntEnum):
    SERVE_CACHED = 0
    FETCH_SERVE_CACHE = 1
    WAIT = 2
    FETCH_SERVE_DISCARD = 3


class Action(NamedTuple):
    kind: ActionKind
    evict: int | None = None


class PolicyKind(Enum):
    WHITTLE = "whittle"
    MYOPIC = "myopic"
    STATIC_TOP_M = "static-top-m"
    INFINITE_CAPACITY = "infinite-capacity"


@dataclass(frozen=True)
class PolicyTables:
    """Per-content constants shared by all policies of one system.

    Independent of the cache capacity M, so one build covers a whole
    capacity sweep.
    """

    beta: float
    p: tuple[float, ...]
    lam: tuple[float, ...]
    c_alam: tuple[float, ...]   # c_a * lam, the ageing cost rate
    c_f: tuple[float, ...]
    c_w: tuple[float, ...]
    content: tuple[ContentTables, ...]

    @property
    def tau_star(self) -> tuple[float, ...]:
        return tuple(c.tau_star for c in self.content)


def build_policy_tables(system: SystemParams, grid_size: int = 1024,
                        indices: bool = True) -> PolicyTables:
    content = tuple(
        build_content_tables(c, system.beta, grid_size, indices)
        for c in system.contents
    )
    return PolicyTables(
        beta=system.beta,
        p=tuple(c.p for c in system.contents),
        lam=tuple(c.lam for c in system.contents),
        c_alam=tuple(c.costs.c_a * c.lam for c in system.contents),
        c_f=tuple(c.costs.c_f for c in system.contents),
        c_w=tuple(c.costs.c_w for c in system.contents),
        content=content,
    )


def _min_cached_index(state: CacheSystemState, tables: PolicyTables) -> tuple[float, int]:
    """Smallest cached-copy index and the lowest id attaining it."""
    best_w = math.inf
    best_id = -1
    t = state.t
    queue = state.queue
    fetch_time = state.fetch_time
    content = tables.content
    for n in state.cache_set:
        w = content[n].cached_idle(queue[n], t - fetch_time[n])
        if w < best_w or (w == best_w and n < best_id):
            best_w, best_id = w, n
    return best_w, best_id


def whittle_decide(state: CacheSystemState, requested: int,
                   tables: PolicyTables) -> Action:
    """Index policy: serve fresh-enough copies, pool requests, and admit
    an uncached content only when its index beats the cheapest cached one."""
    tb = tables.content[requested]
    q = state.queue[requested]
    if state.infinite or requested in state.cache_set:
        if state.t - state.fetch_time[requested] <= tb.tau_star:
            return Action(ActionKind.SERVE_CACHED)
        if q < tb.q_star:
            return Action(ActionKind.WAIT)
        return Action(ActionKind.FETCH_SERVE_CACHE)  # refresh in place
    if q < tb.q_star:
        return Action(ActionKind.WAIT)
    w_req = tb.uncached(q)
    w_min, victim = _min_cached_index(state, tables)
    if w_req > w_min:
        return Action(ActionKind.FETCH_SERVE_CACHE, evict=victim)
    if q < tb.q_hat:
        return Action(ActionKind.WAIT)
    return Action(ActionKind.FETCH_SERVE_DISCARD)


def infinite_capacity_decide(Q: int, tau: float, tau_star: float, Q_star: int) -> Action:
    """Optimal single-content rule: serve below tau_star, wait below Q_star."""
    if tau <= tau_star:
        return Action(ActionKind.SERVE_CACHED)
    if Q < Q_star:
        return Action(ActionKind.WAIT)
    return Action(ActionKind.FETCH_SERVE_CACHE)


def static_topm_decide(state: CacheSystemState, requested: int,
                       tables: PolicyTables) -> Action:
    """Fixed top-M cache: refresh stale copies in place, never admit or wait."""
    if requested in state.cache_set:
        if state.t - state.fetch_time[requested] <= tables.content[requested].tau_star:
            return Action(ActionKind.SERVE_CACHED)
        return Action(ActionKind.FETCH_SERVE_CACHE)
    return Action(ActionKind.FETCH_SERVE_DISCARD)


# -- myopic (one-step lookahead) baseline -----------------------------------


def _lookahead(tables: PolicyTables, n: int, q: int, tau: float) -> float:
    """Cheapest way to serve content n's next request one epoch ahead."""
    return min(tables.c_f[n], (q + 1) * tables.c_alam[n] * (tau + 1.0 / tables.beta))


def myopic_decide(state: CacheSystemState, requested: int, tables: PolicyTables,
                  include_common: bool = True) -> Action:
    """Minimize the single-stage plus terminal cost of the coming epoch.

    ``include_common`` controls the shared carrying term over the other
    cached contents, identical for every candidate action; the
    simulator drops it since it cannot change the argmin.
    """
    beta = tables.beta
    r = requested
    q = state.queue[r]
    p_r, cf_r, cw_r, cal_r = tables.p[r], tables.c_f[r], tables.c_w[r], tables.c_alam[r]
    t = state.t
    if r in state.cache_set:
        tau = t - state.fetch_time[r]
        w = 0.0
        if include_common:
            for l in state.cache_set:
                if l == r:
                    continue
                ql = state.queue[l]
                w += ql * tables.c_w[l] / beta + tables.p[l] * min(
                    tables.c_f[l],
                    (ql + 1) * tables.c_alam[l] * (t - state.fetch_time[l] + 1.0 / beta),
                    (ql + 1) * tables.c_w[l] / beta,
                )
        c_serve = cal_r * tau * (q + 1) + p_r * min(cf_r, cal_r * (tau + 1.0 / beta)) + w
        c_fetch = cf_r + p_r * min(cf_r, cal_r / beta) + w
        c_wait = (
            cw_r * (q + 1) / beta
            + p_r * min(cf_r, (q + 2) * cal_r * (tau + 1.0 / beta))
            + (1.0 - p_r) * min(cf_r, (q + 1) * cal_r * (tau + 1.0 / beta))
            + w
        )
        if c_serve <= c_fetch and c_serve <= c_wait:
            return Action(ActionKind.SERVE_CACHED)
        if c_fetch <= c_wait:
            return Action(ActionKind.FETCH_SERVE_CACHE)
        return Action(ActionKind.WAIT)
    # uncached: compare fetch-and-cache (with best eviction), wait, fetch-discard
    carry = 0.0
    best_evict_gain = math.inf
    victim = -1
    for l in state.cache_set:
        look = tables.p[l] * _lookahead(tables, l, state.queue[l], t - state.fetch_time[l])
        carry += look
        gain = tables.p[l] * tables.c_f[l] - look  # cost shift if l is evicted
        if gain < best_evict_gain or (gain == best_evict_gain and l < victim):
            best_evict_gain, victim = gain, l
    c_cache = cf_r + p_r * min(cf_r, cal_r / beta) + carry + best_evict_gain
    c_wait = cw_r * (q + 1) / beta + carry
    c_discard = cf_r + p_r * cf_r + carry
    if c_cache <= c_wait and c_cache <= c_discard:
        return Action(ActionKind.FETCH_SERVE_CACHE, evict=victim)
    if c_wait <= c_discard:
        return Action(ActionKind.WAIT)
    return Action(ActionKind.FETCH_SERVE_DISCARD)


# -- relaxed-problem dual bound ---------------------------------------------


def dual_value(system: SystemParams, C_h: float) -> float:
    """Lagrangian dual at C_h: sum of per-content optima minus C_h * M."""
    total = sum(optimal_average_cost(c, system.beta, C_h) for c in system.contents)
    return total - C_h * system.M


def relaxed_lower_bound(system: SystemParams, refine: int = 200) -> tuple[float, float]:
    """Lower bound on the constrained optimum: max over C_h of the dual.

    The dual is concave (pointwise minimum of affine functions of C_h,
    minus a linear term), so golden-section search over [0, max_n I_n]
    finds the maximizer; a local grid pass of ``refine`` points guards
    against the kinks the queue-threshold floors introduce.  Returns
    (C_h_star, bound).
    """
    ceilings = [compute_I(c, system.beta) for c in system.contents]
    hi = max(ceilings)
    if system.M == 0:
        return hi, dual_value(system, hi)  # saturated: dual is flat past max I_n
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = 0.0, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = dual_value(system, c), dual_value(system, d)
    for _ in range(60):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = dual_value(system, c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = dual_value(system, d)
        if b - a <= 1e-12 * hi:
            break
    mid = 0.5 * (a + b)
    span = max(b - a, hi / refine)
    best_x, best_v = mid, dual_value(system, mid)
    for k in range(refine + 1):
        x = min(max(mid - span + 2.0 * span * k / refine, 0.0), hi)
        v = dual_value(system, x)
        if v > best_v:
            best_x, best_v = x, v
    return best_x, best_v
