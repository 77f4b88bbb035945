"""Brute-force value-iteration solvers used to cross-check the closed forms.

These discretize ``tau`` on a uniform grid, cap the queue, and run
relative value iteration on the embedded decision-epoch chain (epochs
arrive at the request rate, so the average cost per unit time is
``rate * average cost per epoch``).  The exponential-kernel integrals

    integral_0^inf rate * exp(-rate*t) * h(tau + t) dt

are evaluated exactly for a piecewise-linear ``h`` on the grid, with the
tail mass past ``tau_max`` lumped into the last cell.  Accuracy is
test-grade: first order in the grid step.

Deliberately shares no code with ``aovcache.thresholds`` /
``aovcache.whittle`` so the two routes fail independently; the few
closed-form expressions appearing in ``Grid.for_params`` size the grid
only and never feed the returned values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .model import ContentParams, SingleContentState

__all__ = ["Grid", "ValueTable", "value_iterate_infinite", "value_iterate_holding",
           "whittle_by_sweep", "passive_in_table"]

# greedy action codes shared by both MDP families
SERVE_KEEP = 0
FETCH_KEEP = 1
WAIT = 2
FETCH_EVICT = 3
SERVE_EVICT = 4


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform tau grid [0, tau_max] with step dtau, queue capped at q_max."""

    tau_max: float
    dtau: float
    q_max: int

    @property
    def taus(self) -> np.ndarray:
        k = int(round(self.tau_max / self.dtau))
        return np.arange(k + 1) * self.dtau

    @staticmethod
    def for_params(rate: float, lam: float, c_a: float, c_f: float, c_w: float,
                   refine: float = 1.0) -> "Grid":
        """Default sizing from crude bounds on the thresholds.

        The batch-dispatch queue bound and the zero-queue serve
        threshold bound used here only pick the window; the solution is
        still read off the converged value table.
        """
        q_ross = int((math.sqrt(1.0 + 8.0 * rate * c_f / c_w) - 1.0) // 2)
        theta_nc = (2.0 * rate * c_f + c_w * q_ross * (q_ross + 1)) / (2.0 * (q_ross + 1))
        tau0_est = theta_nc / (rate * c_a * lam)
        a = 2.0 * rate * c_f / (c_a * lam)
        qq = q_ross + 2
        tau_star_lb = (math.sqrt(qq * qq + a) - qq) / rate
        dtau = tau_star_lb / (100.0 * refine)
        tau_max = 4.0 * tau0_est
        return Grid(tau_max=tau_max, dtau=dtau, q_max=q_ross + 10)


@dataclass
class ValueTable:
    """Converged relative costs, average cost, and the greedy policy."""

    theta: float
    grid: Grid
    sweeps: int
    residual: float          # span of (T h - h - g) at the last sweep
    # infinite-capacity family
    h: np.ndarray | None = None            # h[q, j]
    greedy: np.ndarray | None = None       # codes SERVE_KEEP / WAIT / FETCH_KEEP
    # holding-cost family
    h_cached_req: np.ndarray | None = None     # h(0, tau, 1, 1)
    h_cached_idle: np.ndarray | None = None    # h(0, tau, 1, 0)
    h_uncached_req: np.ndarray | None = None   # h(Q, 0, 1)
    h_uncached_idle: np.ndarray | None = None  # h(Q, 0, 0)
    greedy_cached_req: np.ndarray | None = None
    greedy_cached_idle: np.ndarray | None = None  # 0 = keep, 2 = evict
    greedy_uncached_req: np.ndarray | None = None

    # threshold read-off helpers (accurate to one grid cell)

    def tau_serve_end(self) -> float:
        """Largest grid tau where the requested cached copy is still served."""
        g = self.greedy if self.greedy is not None else None
        row = g[0] if g is not None else self.greedy_cached_req
        served = np.nonzero((row == SERVE_KEEP) | (row == SERVE_EVICT))[0]
        return 0.0 if len(served) == 0 else served[-1] * self.grid.dtau

    def tau_serve_keep_end(self) -> float:
        """Largest grid tau with action serve-and-keep (tau_bar analogue)."""
        row = self.greedy if self.greedy is not None else self.greedy_cached_req
        if row.ndim == 2:
            row = row[0]
        kept = np.nonzero(row == SERVE_KEEP)[0]
        return 0.0 if len(kept) == 0 else kept[-1] * self.grid.dtau

    def queue_fetch_threshold(self) -> int:
        """Smallest queue at which the greedy action fetches."""
        if self.greedy is not None:
            j = min(len(self.greedy[0]) - 1,
                    int(self.tau_serve_end() / self.grid.dtau) + 2)
            col = self.greedy[:, j]
            hit = np.nonzero(col == FETCH_KEEP)[0]
        else:
            col = self.greedy_uncached_req
            hit = np.nonzero((col == FETCH_KEEP) | (col == FETCH_EVICT))[0]
        return int(hit[0]) if len(hit) else len(col)


def _kernel_coeffs(rate: float, dtau: float) -> tuple[float, float, float]:
    r = math.exp(-rate * dtau)
    c1 = (1.0 - r) / (rate * dtau) - r
    return (1.0 - r) - c1, c1, r


def _expint_rows(h: np.ndarray, alpha: float, gamma: float, decay: float) -> np.ndarray:
    """J[..., j] = integral of rate*e^(-rate t) h(..., tau_j + t) dt (piecewise linear h).

    Backward recursion J_j = alpha*h_j + gamma*h_{j+1} + decay*J_{j+1},
    J_K = h_K, run as an IIR filter on the reversed axis.
    """
    u = h[..., ::-1]
    y = lfilter([alpha, gamma], [1.0, -decay], u, axis=-1)
    k = np.arange(u.shape[-1])
    y = y + (1.0 - alpha) * u[..., :1] * decay ** k
    return y[..., ::-1]


def value_iterate_infinite(
    beta: float, lam: float, c_a: float, c_f: float, c_w: float,
    grid: Grid | None = None, tol: float = 1e-9, max_sweeps: int = 100_000,
) -> ValueTable:
    """Relative value iteration for the always-cached single content MDP.

    ``beta`` is the content's own request rate.  Actions per epoch:
    serve the copy (ageing ``c_a*lam*tau*(Q+1)``), wait (``c_w*(Q+1)/beta``),
    or fetch (``c_f``).  Reference state is (Q=0, tau=0).
    """
    if grid is None:
        grid = Grid.for_params(beta, lam, c_a, c_f, c_w)
    taus = grid.taus
    k = len(taus)
    qm = grid.q_max
    alpha, gamma, decay = _kernel_coeffs(beta, grid.dtau)

    h = np.zeros((qm + 1, k))
    qcol = np.arange(qm + 1, dtype=float)[:, None]
    serve_age = c_a * lam * taus[None, :] * (qcol + 1.0)
    wait_cost = c_w * (qcol + 1.0) / beta
    up = np.arange(1, qm + 2)
    up[-1] = qm  # queue cap: waiting at q_max self-loops

    g = 0.0
    for sweep in range(1, max_sweeps + 1):
        J = _expint_rows(h, alpha, gamma, decay)
        serve = serve_age + J[0][None, :]
        wait = wait_cost + J[up]
        fetch = c_f + J[0, 0]
        T = np.minimum(np.minimum(serve, wait), fetch)
        g = T[0, 0]
        T -= g
        delta = T - h
        sp = delta.max() - delta.min()
        h = T
        if sp < tol:
            stacked = np.stack([serve, wait, np.broadcast_to(fetch, serve.shape)])
            greedy = np.argmin(stacked, axis=0)  # 0 serve, 1 wait, 2 fetch
            greedy = np.where(greedy == 1, WAIT, np.where(greedy == 2, FETCH_KEEP, SERVE_KEEP))
            return ValueTable(theta=beta * g, grid=grid, sweeps=sweep,
                              residual=sp, h=h, greedy=greedy)
    raise ConvergenceError(f"no convergence after {max_sweeps} sweeps (span {sp:g})")


def value_iterate_holding(
    params: ContentParams, beta: float, C_h: float,
    grid: Grid | None = None, tol: float = 1e-9, max_sweeps: int = 100_000,
    warm: ValueTable | None = None, damping: float = 0.5,
) -> ValueTable:
    """Relative value iteration for the single content with holding cost.

    Decision epochs are all request arrivals (rate ``beta``); the
    tagged content is the requested one with probability ``p``.  State
    families: cached-and-requested (0,tau,1,1) with actions
    serve/fetch/wait-evict/fetch-evict/serve-evict, cached-idle
    (0,tau,1,0) with keep/evict, uncached-requested (Q,0,1) with
    fetch-cache/wait/fetch-discard, and uncached-idle (Q,0,0) with no
    action.  Reference state is (0, 0, 1, 0).

    Updates are damped (h <- (1-k) h + k (T h - g)): for p = 1 and
    C_h > I the greedy chain cycles deterministically between queue
    states, and the undamped iteration oscillates with period 2.  The
    stopping rule checks the span of ``T h - h - g``, which bounds
    ``|beta * g - theta|`` regardless of damping.
    """
    p, lam = params.p, params.lam
    cm = params.costs
    c_a, c_f, c_w = cm.c_a, cm.c_f, cm.c_w
    if grid is None:
        grid = Grid.for_params(p * beta, lam, c_a, c_f, c_w)
    taus = grid.taus
    qm = grid.q_max
    alpha, gamma, decay = _kernel_coeffs(beta, grid.dtau)

    if warm is not None and warm.grid == grid:
        A = warm.h_cached_req.copy()
        B = warm.h_cached_idle.copy()
        C = warm.h_uncached_req.copy()
        D = warm.h_uncached_idle.copy()
    else:
        A = np.zeros(len(taus))
        B = np.zeros(len(taus))
        C = np.zeros(qm + 1)
        D = np.zeros(qm + 1)

    age = c_a * lam * taus
    qs = np.arange(qm + 1, dtype=float)
    wait_costs = (qs + 1.0) * c_w / beta
    idle_costs = qs * c_w / beta
    up = np.arange(1, qm + 2)
    up[-1] = qm
    chb = C_h / beta

    g = 0.0
    for sweep in range(1, max_sweeps + 1):
        L = _expint_rows(p * A + (1.0 - p) * B, alpha, gamma, decay)
        evicted0 = p * C[0] + (1.0 - p) * D[0]
        TA = np.minimum.reduce([
            age + chb + L,                                   # 0 serve & keep
            np.full_like(A, c_f + chb + L[0]),               # 1 fetch, serve & cache
            np.full_like(A, c_w / beta + p * C[up[0]] + (1.0 - p) * D[up[0]]),  # 2 wait & evict
            np.full_like(A, c_f + evicted0),                 # 3 fetch, serve & evict
            age + evicted0,                                  # 4 serve & evict
        ])
        TB = np.minimum(chb + L, evicted0)
        TC = np.minimum.reduce([
            np.full_like(C, c_f + chb + L[0]),               # 1 fetch, serve & cache
            wait_costs + p * C[up] + (1.0 - p) * D[up],      # 2 wait
            np.full_like(C, c_f + evicted0),                 # 3 fetch, serve & discard
        ])
        TD = idle_costs + p * C + (1.0 - p) * D
        g = TB[0]
        TA -= g
        TB -= g
        TC -= g
        TD -= g
        hi = max((TA - A).max(), (TB - B).max(), (TC - C).max(), (TD - D).max())
        lo = min((TA - A).min(), (TB - B).min(), (TC - C).min(), (TD - D).min())
        done = hi - lo < tol
        if done or damping >= 1.0:
            A, B, C, D = TA, TB, TC, TD
        else:
            k = damping
            A += k * (TA - A)
            B += k * (TB - B)
            C += k * (TC - C)
            D += k * (TD - D)
        if done:
            break
    else:
        raise ConvergenceError(f"no convergence after {max_sweeps} sweeps (span {hi - lo:g})")

    # greedy tables from the converged values
    L = _expint_rows(p * A + (1.0 - p) * B, alpha, gamma, decay)
    evicted0 = p * C[0] + (1.0 - p) * D[0]
    a_choices = np.stack([
        age + chb + L,
        np.full_like(A, c_f + chb + L[0]),
        np.full_like(A, c_w / beta + p * C[up[0]] + (1.0 - p) * D[up[0]]),
        np.full_like(A, c_f + evicted0),
        age + evicted0,
    ])
    greedy_a = np.argmin(a_choices, axis=0)
    greedy_b = np.where(chb + L <= evicted0, SERVE_KEEP, WAIT)
    c_choices = np.stack([
        np.full_like(C, c_f + chb + L[0]),
        wait_costs + p * C[up] + (1.0 - p) * D[up],
        np.full_like(C, c_f + evicted0),
    ])
    greedy_c = np.array([FETCH_KEEP, WAIT, FETCH_EVICT])[np.argmin(c_choices, axis=0)]
    return ValueTable(
        theta=beta * g, grid=grid, sweeps=sweep, residual=hi - lo,
        h_cached_req=A, h_cached_idle=B, h_uncached_req=C, h_uncached_idle=D,
        greedy_cached_req=greedy_a, greedy_cached_idle=greedy_b,
        greedy_uncached_req=greedy_c,
    )


def passive_in_table(table: ValueTable, state: SingleContentState) -> bool:
    """Whether the greedy action leaves the content out of the cache."""
    if not state.cached:
        if not state.requested:
            return True
        q = min(state.Q, len(table.greedy_uncached_req) - 1)
        return table.greedy_uncached_req[q] in (WAIT, FETCH_EVICT)
    if state.Q > 0:
        if not state.requested:
            return True
        q = min(state.Q, len(table.greedy_uncached_req) - 1)
        return table.greedy_uncached_req[q] in (WAIT, FETCH_EVICT)
    j = min(int(round(state.tau / table.grid.dtau)), len(table.greedy_cached_idle) - 1)
    if state.requested:
        return table.greedy_cached_req[j] in (WAIT, FETCH_EVICT, SERVE_EVICT)
    return table.greedy_cached_idle[j] == WAIT


def whittle_by_sweep(
    params: ContentParams, beta: float, state: SingleContentState,
    C_h_grid: np.ndarray, grid: Grid | None = None, tol: float = 1e-8,
) -> float:
    """Index estimate: smallest grid C_h whose greedy action goes passive.

    Runs ``value_iterate_holding`` per grid point (warm-started along
    the sweep), so accuracy is one C_h grid step plus one tau cell.
    """
    if state.cached and state.Q > 0 and not state.requested:
        return 0.0
    cm = params.costs
    if grid is None:
        grid = Grid.for_params(params.p * beta, params.lam, cm.c_a, cm.c_f, cm.c_w)
    warm = None
    for ch in np.sort(np.asarray(C_h_grid, dtype=float)):
        warm = value_iterate_holding(params, beta, float(ch), grid=grid,
                                     tol=tol, warm=warm)
        if passive_in_table(warm, state):
            return float(ch)
    return float(C_h_grid[-1])
