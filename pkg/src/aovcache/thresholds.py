"""Closed-form threshold solvers for the single-content caching problems.

Three regimes of the single-content problem with holding cost ``C_h``:

* ``C_h = 0``  -- serve below ``tau_star``, wait below ``Q_star``, else
  fetch; optimal cost ``p*beta*c_a*lam*tau_star``.
* ``0 < C_h <= I`` -- serve below ``tau_bar``, serve-and-evict up to
  ``tau_tilde``, wait below ``Q_bar``, else fetch; optimal cost
  ``p*beta*c_a*lam*tau_tilde``.
* ``C_h > I`` -- never cache; wait below ``Q_hat``, else fetch and
  discard; optimal cost ``(2*p*beta*c_f + c_w*Q_hat*(Q_hat+1)) / (2*(Q_hat+1))``.

All solvers here are scalar, deterministic and cheap (microseconds);
an independent value-iteration cross-check lives in ``aovcache.oracle``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import ContentParams

__all__ = [
    "ThresholdSet",
    "solve_infinite_capacity",
    "solve_q_hat",
    "compute_I",
    "solve_case2",
    "solve_thresholds",
    "optimal_average_cost",
    "case2_residuals",
]


class ConsistencyError(RuntimeError):
    """No queue threshold satisfied its floor fixed point (should not happen)."""


def _check_positive(**kwargs) -> None:
    for name, value in kwargs.items():
        if not value > 0:
            raise ValueError(f"{name} must be > 0, got {value!r}")


def solve_infinite_capacity(
    beta: float, lam: float, c_a: float, c_f: float, c_w: float
) -> tuple[float, int, float]:
    """Serve/wait/fetch thresholds for one content requested at rate ``beta``.

    Returns ``(tau_star, Q_star, theta)`` jointly satisfying

        tau = (-(Q+1) + sqrt((Q+1)^2 + 2*beta*c_f/(c_a*lam)
                             + Q*(Q+1)*c_w/(c_a*lam))) / beta
        Q   = floor(beta*c_a*lam*tau / c_w)

    and ``theta = beta*c_a*lam*tau_star``.  The pair is unique; we scan
    Q upward and accept the floor-consistent candidate.
    """
    _check_positive(beta=beta, lam=lam, c_a=c_a, c_f=c_f, c_w=c_w)
    a = 2.0 * beta * c_f / (c_a * lam)
    b = c_w / (c_a * lam)
    bound = math.ceil(math.sqrt(1.0 + 8.0 * beta * c_f / c_w)) + 2
    for q in range(bound + 1):
        tau = (-(q + 1) + math.sqrt((q + 1) ** 2 + a + q * (q + 1) * b)) / beta
        if math.floor(beta * c_a * lam * tau / c_w) == q:
            return tau, q, beta * c_a * lam * tau
    raise ConsistencyError(
        f"no consistent Q in 0..{bound} (beta={beta}, lam={lam}, "
        f"c_a={c_a}, c_f={c_f}, c_w={c_w})"
    )


def solve_q_hat(
    p: float, beta: float, c_a: float, lam: float, c_f: float, c_w: float
) -> tuple[int, float, float]:
    """Dispatch threshold for the never-cache regime.

    ``Q_hat`` solves the floor fixed point

        Q_hat = floor((2*p*beta*c_f + c_w*Q_hat*(Q_hat+1)) / (2*c_w*(Q_hat+1)))

    whose solution is the floor of ``(sqrt(1 + 8*p*beta*c_f/c_w) - 1)/2``
    (batch-dispatching a Poisson stream).  Returns
    ``(Q_hat, theta_case1, tau0)`` where ``theta_case1`` is the optimal
    cost for ``C_h > I`` and ``tau0 = theta_case1 / (p*beta*c_a*lam)``.
    """
    _check_positive(p=p, beta=beta, c_a=c_a, lam=lam, c_f=c_f, c_w=c_w)
    r = p * beta
    q_hat = math.floor((math.sqrt(1.0 + 8.0 * r * c_f / c_w) - 1.0) / 2.0)

    def fixed(q: int) -> bool:
        return math.floor((2.0 * r * c_f + c_w * q * (q + 1)) / (2.0 * c_w * (q + 1))) == q

    if not fixed(q_hat):
        # float noise at an integer boundary; the fixed point is adjacent
        for cand in (q_hat - 1, q_hat + 1, q_hat + 2):
            if cand >= 0 and fixed(cand):
                q_hat = cand
                break
        else:
            raise ConsistencyError(f"no Q_hat fixed point near {q_hat}")
    theta = (2.0 * r * c_f + c_w * q_hat * (q_hat + 1)) / (2.0 * (q_hat + 1))
    tau0 = theta / (r * c_a * lam)
    return q_hat, theta, tau0


def compute_I(params: ContentParams, beta: float) -> float:
    """Largest holding cost at which caching the content is still worthwhile.

    ``I = p*beta*c_a*lam*tau0 - p*c_a*lam*(1 - exp(-beta*tau0))`` -- exactly
    the ``C_h`` at which the serve region collapses (``tau_bar = 0``,
    ``tau_tilde = tau0``).
    """
    cm = params.costs
    _, _, tau0 = solve_q_hat(params.p, beta, cm.c_a, params.lam, cm.c_f, cm.c_w)
    return params.p * params.lam * cm.c_a * (beta * tau0 - 1.0 + math.exp(-beta * tau0))


def _solve_gap(c: float) -> float:
    """Root x >= 0 of ``x + exp(-x) = 1 + c`` by monotone bisection."""
    if c < 0:
        raise ValueError("holding-cost ratio must be >= 0")
    if c == 0.0:
        return 0.0
    lo, hi = 0.0, 1.0 + c  # x + e^-x > x, so the root is below 1 + c
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid + math.exp(-mid) - 1.0 < c:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * (1.0 + c):
            break
    return 0.5 * (lo + hi)


def solve_case2(
    C_h: float, params: ContentParams, beta: float
) -> tuple[float, float, int, float]:
    """Thresholds ``(tau_bar, tau_tilde, Q_bar, theta)`` for ``0 <= C_h <= I``.

    The triple is the unique solution of

        (i)   beta*(tt - tb) + exp(-beta*(tt - tb)) - 1 - C_h/(p*c_a*lam) = 0
        (ii)  beta*p*c_a*lam*(tt*tb - tb^2/2) - C_h*tb
                + (Qb+1)*c_a*lam*tt - c_f - c_w*Qb*(Qb+1)/(2*p*beta) = 0
        (iii) Qb = floor(p*beta*c_a*lam*tt / c_w)

    Substituting ``tt = tb + x/beta`` with x from (i) turns (ii) into a
    quadratic in ``tb`` per queue candidate; we scan Qb upward and keep
    the floor-consistent root.  At ``C_h = 0`` this collapses to the
    serve/wait/fetch thresholds with request rate ``p*beta``; at
    ``C_h = I`` it yields ``tau_bar = 0`` and ``tau_tilde = tau0``.
    """
    if C_h < 0:
        raise ValueError(f"C_h must be >= 0, got {C_h}")
    p, lam = params.p, params.lam
    cm = params.costs
    c_a, c_f, c_w = cm.c_a, cm.c_f, cm.c_w
    _check_positive(p=p, beta=beta)
    r = p * beta
    I = compute_I(params, beta)
    if C_h > I * (1.0 + 1e-12) + 1e-15:
        raise ValueError(f"C_h={C_h} exceeds the index ceiling I={I}")

    x = _solve_gap(C_h / (p * c_a * lam))
    q_hat, _, _ = solve_q_hat(p, beta, c_a, lam, c_f, c_w)
    sol = None
    near = None  # closest candidate sitting on an integer boundary (float noise)
    for q in range(q_hat + 3):
        f = x / beta - C_h / (r * c_a * lam) + (q + 1) / r
        d = (
            c_f / (r * c_a * lam)
            - (q + 1) * x / (r * beta)
            + c_w * q * (q + 1) / (2.0 * r * r * c_a * lam)
        )
        disc = f * f + 2.0 * d
        if disc < 0.0:
            continue
        tb = -f + math.sqrt(disc)
        if tb < -1e-12:
            continue
        tb = max(tb, 0.0)
        tt = tb + x / beta
        v = r * c_a * lam * tt / c_w
        if math.floor(v) == q:
            sol = (tb, tt, q)
            break
        # at a Q_bar jump, v lands on the integer boundary and float noise
        # can push both adjacent candidates out; accept the closer one
        dist = max(q - v, v - (q + 1.0))
        if dist < 1e-9 * (q + 1.0) and (near is None or dist < near[0]):
            near = (dist, tb, tt, q)
    if sol is None and near is not None:
        sol = near[1:]
    if sol is None:
        raise ConsistencyError(
            f"no floor-consistent Q_bar for C_h={C_h} (params={params}, beta={beta})"
        )
    tb, tt, q = sol
    return tb, tt, q, r * c_a * lam * tt


def case2_residuals(
    C_h: float, params: ContentParams, beta: float,
    tau_bar: float, tau_tilde: float, Q_bar: int,
) -> tuple[float, float, float]:
    """Residuals of the three defining equations at a candidate solution."""
    p, lam = params.p, params.lam
    cm = params.costs
    r = p * beta
    x = beta * (tau_tilde - tau_bar)
    r1 = x + math.exp(-x) - 1.0 - C_h / (p * cm.c_a * lam)
    r2 = (
        beta * p * cm.c_a * lam * (tau_tilde * tau_bar - tau_bar * tau_bar / 2.0)
        - C_h * tau_bar
        + (Q_bar + 1) * cm.c_a * lam * tau_tilde
        - cm.c_f
        - cm.c_w * Q_bar * (Q_bar + 1) / (2.0 * r)
    )
    v = r * cm.c_a * lam * tau_tilde / cm.c_w
    r3 = 0.0 if math.floor(v) == Q_bar else v - Q_bar
    return r1, r2, r3


@dataclass(frozen=True)
class ThresholdSet:
    """All threshold quantities for one content at one holding cost.

    Satisfies ``tau_bar <= tau_star <= tau_tilde <= tau0`` and
    ``Q_star <= Q_bar <= Q_hat``; ``Q_bar = floor(p*beta*c_a*lam*tau_tilde/c_w)``.
    """

    tau_star: float
    Q_star: int
    tau_bar: float
    tau_tilde: float
    Q_bar: int
    Q_hat: int
    tau0: float
    I: float
    theta: float
    C_h: float


def solve_thresholds(params: ContentParams, beta: float, C_h: float = 0.0) -> ThresholdSet:
    """Bundle of every Theorem-level threshold for one content at one C_h."""
    cm = params.costs
    r = params.p * beta
    tau_star, q_star, _ = solve_infinite_capacity(r, params.lam, cm.c_a, cm.c_f, cm.c_w)
    q_hat, theta1, tau0 = solve_q_hat(params.p, beta, cm.c_a, params.lam, cm.c_f, cm.c_w)
    I = compute_I(params, beta)
    if C_h > I:
        tb, tt, qb, theta = 0.0, tau0, q_hat, theta1
    else:
        tb, tt, qb, theta = solve_case2(C_h, params, beta)
    return ThresholdSet(
        tau_star=tau_star, Q_star=q_star, tau_bar=tb, tau_tilde=tt,
        Q_bar=qb, Q_hat=q_hat, tau0=tau0, I=I, theta=theta, C_h=C_h,
    )


def optimal_average_cost(params: ContentParams, beta: float, C_h: float) -> float:
    """Optimal single-content average cost (holding charges included) at C_h."""
    cm = params.costs
    if C_h < 0:
        raise ValueError("C_h must be >= 0")
    I = compute_I(params, beta)
    if C_h > I:
        _, theta1, _ = solve_q_hat(params.p, beta, cm.c_a, params.lam, cm.c_f, cm.c_w)
        return theta1
    return solve_case2(C_h, params, beta)[3]
