"""Bob's expected gain, its closed-form minimax bound, and a numeric oracle
that re-derives the bound by direct max-min search.

Symbols: ``R`` is the reward ratio (coins paid for a detected deviation),
``eta`` Bob's splitting parameter in [0, 1], ``eps`` Alice's preparation bias
in [-1/2, 1/2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-9
GUARD_POINTS = 101
OUTER_POINTS = 1001

_INV_PHI = (math.sqrt(5) - 1) / 2


def _check_R(R):
    if not R > 0:
        raise ValueError(f"R must be positive, got {R}")


def gain_from_probs(P_b, P_D, R):
    """Expected gain given P(find particle in B) and P(detect deviation)."""
    return P_b + (1 - P_b) * (P_D * R - (1 - P_D))


def prob_found_closed(eta, eps):
    return (0.5 - eps) * (1 - eta)


def prob_detect_closed(eta, eps):
    """Detection probability for the eps-family preparation.

    At ``eta == 0, eps == -1/2`` the not-found branch is impossible and the
    expression is 0/0; it is taken as 0 there.
    """
    eta = np.asarray(eta, dtype=float)
    eps = np.asarray(eps, dtype=float)
    num = 2 * eta * (1 - np.sqrt(1 - 4 * eps * eps))
    den = (1 + eta) ** 2 + 2 * eps * (1 - eta * eta)
    safe = np.where(den > 0, den, 1.0)
    out = np.where(den > 0, num / safe, 0.0)
    return float(out) if out.ndim == 0 else out


def gain_bob(R, eta, eps):
    """Bob's expected gain for splitting ``eta`` against preparation ``eps``.

    Accepts scalars or broadcastable arrays.
    """
    s = np.sqrt(1 - 4 * np.asarray(eps, dtype=float) ** 2)
    g = -(1 / (1 + eta)) * (2 * eps * (1 - eta * eta) + eta * (eta + s) - eta * (1 - s) * R)
    return float(g) if np.ndim(g) == 0 else g


def _gain_scalar(R, eta, eps):
    s = math.sqrt(max(1 - 4 * eps * eps, 0.0))
    return -(2 * eps * (1 - eta * eta) + eta * (eta + s) - eta * (1 - s) * R) / (1 + eta)


def golden_section(f, a, b, tol=DEFAULT_TOL, maximize=False):
    """Golden-section search for the extremum of a unimodal ``f`` on [a, b].

    Returns ``(x, f(x), evaluations)``.
    """
    sign = -1.0 if maximize else 1.0
    g = lambda x: sign * f(x)  # noqa: E731
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = g(c), g(d)
    n = 2
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = g(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = g(d)
        n += 1
    x, fx = (c, fc) if fc < fd else (d, fd)
    return x, sign * fx, n


def _bracket(grid, i):
    return grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]


def _inner_min(R, eta, tol):
    grid = np.linspace(-0.5, 0.5, GUARD_POINTS)
    values = gain_bob(R, eta, grid)
    i = int(np.argmin(values))
    lo, hi = _bracket(grid, i)
    x, fx, n = golden_section(lambda e: _gain_scalar(R, eta, e), lo, hi, tol)
    # the grid point itself may beat the refined point at a boundary minimum
    if values[i] < fx:
        x, fx = float(grid[i]), float(values[i])
    return x, fx, GUARD_POINTS + n


def min_gain_over_eps(R, eta, tol=DEFAULT_TOL):
    """Alice's best response to splitting ``eta``: returns ``(eps*, G_min)``."""
    _check_R(R)
    if not 0 <= eta <= 1:
        raise ValueError(f"eta={eta} outside [0, 1]")
    eps, g, _ = _inner_min(R, eta, tol)
    return float(eps), float(g)


@dataclass(frozen=True)
class MinimaxResult:
    delta: float
    eta_star: float
    eps_star_at_eta_star: float
    evaluations: int


def minimax_numeric(R, tol=DEFAULT_TOL) -> MinimaxResult:
    """Max over eta of min over eps of Bob's gain, by scan plus golden refinement."""
    _check_R(R)
    evaluations = 0

    def outer(eta):
        nonlocal evaluations
        _, g, n = _inner_min(R, eta, tol)
        evaluations += n
        return g

    grid = np.linspace(0.0, 1.0, OUTER_POINTS)
    scan = [outer(float(eta)) for eta in grid]
    j = int(np.argmax(scan))
    lo, hi = _bracket(grid, j)
    eta_star, delta, _ = golden_section(outer, float(lo), float(hi), tol, maximize=True)
    if scan[j] > delta:
        eta_star, delta = float(grid[j]), scan[j]
    eps_star, _ = min_gain_over_eps(R, eta_star, tol)
    return MinimaxResult(float(delta), float(eta_star), eps_star, evaluations)


def _root_term(R):
    # R + 2 - sqrt((R+2)^2 - 1), via the conjugate to avoid cancellation
    return 1 / ((R + 2) + math.sqrt((R + 2) ** 2 - 1))


def eta_tilde(R):
    """Bob's optimal splitting parameter."""
    _check_R(R)
    return math.sqrt(_root_term(R))


def delta_closed(R):
    """Bob's guaranteed expected gain (closed form)."""
    _check_R(R)
    t = eta_tilde(R)
    q = math.sqrt((R + 2) ** 2 - 1)
    r_minus_q = -(4 * R + 3) / (R + q)
    return -(2 + r_minus_q * (1 - t)) / (1 + t)


def asymptotics(R):
    """Large-R approximations ``(delta, eta_tilde)``."""
    _check_R(R)
    return -math.sqrt(2 / R), math.sqrt(1 / (2 * R))


def honest_play_gain(R):
    """Bob's expected gain when both parties follow the protocol."""
    return -eta_tilde(R)


def worst_case_detection_prob(R, tol=DEFAULT_TOL):
    """Detection probability at Bob's optimal split against Alice's worst bias."""
    eta = eta_tilde(R)
    eps, _ = min_gain_over_eps(R, eta, tol)
    return prob_detect_closed(eta, eps)


def max_games_advisory(R):
    """Scale 1/delta^2; the number of games played should stay well below it."""
    return 1 / delta_closed(R) ** 2


def coin_toss_win_probability(delta):
    """Minimum probability of Bob winning when R = 1 (gains are only +1/-1)."""
    return (1 + delta) / 2
