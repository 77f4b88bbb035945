"""Whittle indices for the two state families the caching policy needs.

The index of a state is the smallest holding cost that makes leaving
the content out of the cache optimal.  Both families reduce to
inverting a monotone threshold from ``solve_case2``:

* cached idle copy ``(Q, tau, 1, 0)``: zero once ``Q > 0`` or
  ``tau > tau_star``; otherwise the ``C_h`` at which the serve
  threshold ``tau_bar(C_h)`` (strictly decreasing) has dropped to
  ``tau``.
* uncached requested ``(Q, 0, 1)``: zero below ``Q_star``, the index
  ceiling ``I`` from ``Q_hat`` up; in between, the ``C_h`` at which the
  fetch threshold ``Q_bar(C_h)`` (nondecreasing) first exceeds ``Q``.

Bisection implements the "minimum holding cost" definition directly
and sidesteps the floor-boundary ambiguity of the closed three-equation
system, which is kept only as a residual check (``index_residual_*``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ContentParams, SingleContentState
from .thresholds import (
    ThresholdSet,
    compute_I,
    solve_case2,
    solve_thresholds,
)

__all__ = [
    "whittle_cached",
    "whittle_uncached",
    "passive_set_member",
    "verify_indexability",
    "default_state_grid",
    "ContentTables",
    "build_content_tables",
    "index_residual_cached",
    "index_residual_uncached",
]

BISECT_ITERS = 60  # absolute error below I * 2**-60


def whittle_cached(params: ContentParams, beta: float, Q: int, tau: float) -> float:
    """Index of a cached, not-currently-requested copy in state (Q, tau, 1, 0)."""
    ts = solve_thresholds(params, beta, 0.0)
    return _cached_index(params, beta, ts, Q, tau)


def _cached_index(params: ContentParams, beta: float, ts: ThresholdSet,
                  Q: int, tau: float) -> float:
    if Q > 0 or tau >= ts.tau_star:
        return 0.0
    if tau <= 0.0:
        return ts.I
    lo, hi = 0.0, ts.I  # tau_bar(0) = tau_star > tau, tau_bar(I) = 0 <= tau
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if solve_case2(mid, params, beta)[0] <= tau:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def whittle_uncached(params: ContentParams, beta: float, Q: int) -> float:
    """Index of an uncached content requested with Q pending, state (Q, 0, 1)."""
    ts = solve_thresholds(params, beta, 0.0)
    return _uncached_index(params, beta, ts, Q)


def _uncached_index(params: ContentParams, beta: float, ts: ThresholdSet, Q: int) -> float:
    if Q < ts.Q_star:
        return 0.0
    if Q >= ts.Q_hat:
        return ts.I
    lo, hi = 0.0, ts.I  # Q_bar(0) = Q_star <= Q, Q_bar(I) = Q_hat > Q
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if solve_case2(mid, params, beta)[2] > Q:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def index_residual_cached(params: ContentParams, beta: float, tau: float, W: float) -> float:
    """Residual of the closed three-equation system at (tau, C_h=W).

    Solves the exponential-gap equation at W, plugs ``tau_bar := tau``
    into the quadratic-in-tau_bar form, and returns how far the implied
    tau_bar is from the queried tau.  Zero (to solver tolerance) iff W
    really is the holding cost whose serve threshold passes through tau.
    """
    tb, _, _, _ = solve_case2(W, params, beta)
    return abs(tb - tau)


def index_residual_uncached(params: ContentParams, beta: float, Q: int, W: float) -> float:
    """Floor-boundary residual of the closed system with Q_bar := Q at C_h=W.

    At the transition cost the fetch threshold moves past Q, i.e.
    ``p*beta*c_a*lam*tau_tilde(W) / c_w`` sits on the integer boundary
    Q+1; returns the distance from that boundary.
    """
    cm = params.costs
    _, tt, _, _ = solve_case2(W, params, beta)
    return abs(params.p * beta * cm.c_a * params.lam * tt / cm.c_w - (Q + 1))


# -- passive sets and indexability -----------------------------------------


def _classify_passive(ts: ThresholdSet, C_h: float, s: SingleContentState) -> bool:
    """Whether the optimal action at s leaves the content out of the cache.

    Follows the optimal-policy table for the given C_h regime plus the
    domain extension to (Q>0, tau, 1, b) states; "passive" counts every
    action that ends the epoch with the content uncached, including
    serve-and-evict.  Uncached idle states (Q, 0, 0) take no action and
    are trivially passive.
    """
    if not s.cached or s.Q > 0:
        if not s.requested:
            return True  # uncached idle, or extended (Q>0, tau, 1, 0): wait/evict
        # (Q, 0, 1) directly, or extended (Q>0, tau, 1, 1) which maps onto it
        if C_h == 0.0:
            return s.Q < ts.Q_star
        return s.Q < ts.Q_bar
    if s.requested:  # (0, tau, 1, 1)
        if C_h == 0.0:
            return s.tau > ts.tau_star and ts.Q_star > 0
        if s.tau <= ts.tau_bar:
            return False  # serve and keep
        if s.tau <= ts.tau_tilde:
            return True   # serve and evict
        return ts.Q_bar > 0  # wait-evict if waiting pays, else fetch and cache
    # (0, tau, 1, 0)
    if C_h == 0.0:
        return False  # keeping a free copy is always optimal
    return s.tau >= ts.tau_bar


def passive_set_member(params: ContentParams, beta: float, C_h: float,
                       state: SingleContentState) -> bool:
    """Membership of ``state`` in the passive set at holding cost C_h."""
    if C_h < 0:
        raise ValueError("C_h must be >= 0")
    I = compute_I(params, beta)
    if C_h > I:
        return True  # never caching is optimal; every state is passive
    ts = solve_thresholds(params, beta, C_h)
    return _classify_passive(ts, C_h, state)


def default_state_grid(params: ContentParams, beta: float,
                       n_tau: int = 12) -> list[SingleContentState]:
    """A grid spanning all four state families around the thresholds."""
    ts = solve_thresholds(params, beta, 0.0)
    taus = np.linspace(0.0, 1.3 * ts.tau_star, n_tau)
    states = []
    for tau in taus:
        states.append(SingleContentState(0, float(tau), True, False))
        states.append(SingleContentState(0, float(tau), True, True))
        states.append(SingleContentState(2, float(tau), True, False))
        states.append(SingleContentState(1, float(tau), True, True))
    for q in range(ts.Q_hat + 3):
        states.append(SingleContentState(q, 0.0, False, True))
        states.append(SingleContentState(q, 0.0, False, False))
    return states


def verify_indexability(
    params: ContentParams, beta: float,
    C_h_grid: np.ndarray | None = None,
    state_grid: list[SingleContentState] | None = None,
) -> list[tuple[SingleContentState, float]]:
    """Check that passive sets only grow with C_h.

    Returns one (state, C_h) entry per point where a state left the
    passive set as C_h increased; an indexable content yields [].
    """
    I = compute_I(params, beta)
    if C_h_grid is None:
        C_h_grid = np.linspace(0.0, 1.05 * I, 200)
    C_h_grid = np.sort(np.asarray(C_h_grid, dtype=float))
    if state_grid is None:
        state_grid = default_state_grid(params, beta)
    tables = [
        None if ch > I else solve_thresholds(params, beta, float(ch))
        for ch in C_h_grid
    ]
    violations = []
    for s in state_grid:
        seen_passive = False
        for ch, ts in zip(C_h_grid, tables):
            member = True if ts is None else _classify_passive(ts, float(ch), s)
            if member:
                seen_passive = True
            elif seen_passive:
                violations.append((s, float(ch)))
        # no need to scan past I: membership is constant True there
    return violations


# -- precomputed per-content tables for the simulation loop ----------------


@dataclass(frozen=True)
class ContentTables:
    """Monotone index tables for one content, built once per run.

    ``breakpoints[k]`` is the index of uncached state (Q_star + k, 0, 1),
    solved by bisection.  ``w_of_tau`` samples the cached-copy index
    W(0, tau) on a uniform tau grid over [0, tau_star] (resampled from
    the strictly decreasing map C_h -> tau_bar(C_h)); the trailing cell
    is the 0 sentinel for tau >= tau_star.  Lookup is interpolation-free
    integer indexing, worst-case error one grid cell.
    """

    tau_star: float
    q_star: int
    q_hat: int
    ceiling: float               # the index upper bound I
    breakpoints: tuple[float, ...]
    w_of_tau: np.ndarray         # length grid_size + 1, read-only
    inv_step: float              # grid_size / tau_star

    def uncached(self, Q: int) -> float:
        if Q < self.q_star:
            return 0.0
        if Q >= self.q_hat:
            return self.ceiling
        return self.breakpoints[Q - self.q_star]

    def cached_idle(self, Q: int, tau: float) -> float:
        if Q > 0 or tau >= self.tau_star:
            return 0.0
        i = int(tau * self.inv_step)
        return float(self.w_of_tau[min(i, len(self.w_of_tau) - 1)])


def build_content_tables(params: ContentParams, beta: float,
                         grid_size: int = 1024, indices: bool = True) -> ContentTables:
    """Tables for one content; with ``indices=False`` only the thresholds
    (tau_star, Q_star, Q_hat, I) are populated, for policies that never
    evaluate an index."""
    ts = solve_thresholds(params, beta, 0.0)
    if indices:
        bps = tuple(
            _uncached_index(params, beta, ts, q) for q in range(ts.Q_star, ts.Q_hat)
        )
        # sample tau_bar on a fine C_h grid, then invert onto uniform tau
        chs = np.linspace(ts.I, 0.0, 2 * grid_size)
        tbs = np.array([solve_case2(float(c), params, beta)[0] for c in chs])
        taus = np.arange(grid_size) * (ts.tau_star / grid_size)
        w = np.append(chs[np.searchsorted(tbs, taus)], 0.0)
    else:
        bps, w = (), np.array([ts.I, 0.0])
    w.setflags(write=False)
    return ContentTables(
        tau_star=ts.tau_star, q_star=ts.Q_star, q_hat=ts.Q_hat, ceiling=ts.I,
        breakpoints=bps, w_of_tau=w, inv_step=(len(w) - 1) / ts.tau_star,
    )
