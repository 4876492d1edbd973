"""Hybrid Lyapunov machinery for sampled-data loops.

Holds the maximum allowable sampling interval ``t_max``, the Riccati-type
scalar ODE ``phi`` that weights the error term, the combined function
``U = V + gamma * phi * W**2`` and a numerical envelope check that compares
a simulated flow segment against the exponential bound on ``U``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import solve_ivp

FloatArray = NDArray[np.float64]

# integrator contract shared by every ODE solve in the package
RTOL = 1e-9
ATOL = 1e-12
METHOD = "DOP853"

_EQ_RTOL = 1e-12


class IntegrationError(RuntimeError):
    """Raised when an adaptive solve stops before reaching its horizon."""

    def __init__(self, message: str, tau: float):
        super().__init__(f"{message} (at tau={tau:.17g})")
        self.tau = tau


@dataclass(frozen=True)
class ParameterSet:
    """One ``(epsilon, gamma, L)`` triple of the hybrid Lyapunov conditions."""

    epsilon: float
    gamma: float
    L: float

    def __post_init__(self):
        if not math.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be finite, got {self.epsilon}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValueError(f"L must be positive, got {self.L}")

    def rate(self, delta: float) -> float:
        """Effective rate ``max(L + epsilon/2, 1 - delta)``."""
        return effective_rate(self.L, self.epsilon, delta)

    def interval_bound(self, delta: float) -> float:
        """``delta * t_max(gamma, rate)``: the longest interval this set admits."""
        return delta * t_max(self.gamma, self.rate(delta))


@dataclass(frozen=True)
class PhiParams:
    gamma: float
    ell: float
    lam: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.ell > 0:
            raise ValueError(f"ell must be positive, got {self.ell}")
        if not 0 < self.lam < 1:
            raise ValueError(f"lambda must lie in (0, 1), got {self.lam}")


@dataclass(frozen=True)
class LyapunovData:
    """Concrete ``V``, ``W`` and ``H`` used by certification and envelope checks.

    ``V(x) = x' P x``, ``W(e) = |M e|`` and ``H(x, e) = |H_x x + H_e e|``.
    All evaluators accept batched inputs with the state on the last axis.
    """

    P: FloatArray
    W_weight: FloatArray
    H_x: FloatArray
    H_e: FloatArray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        M = np.asarray(self.W_weight, dtype=float)
        Hx = np.asarray(self.H_x, dtype=float)
        He = np.asarray(self.H_e, dtype=float)
        n = P.shape[0]
        if P.shape != (n, n) or not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(P).max())):
            raise ValueError("P must be a symmetric square matrix")
        if np.linalg.eigvalsh(P).min() <= 0:
            raise ValueError("P must be positive definite")
        if M.ndim != 2 or M.shape[0] != M.shape[1] or np.linalg.svd(M, compute_uv=False).min() <= 0:
            raise ValueError("W_weight must be a nonsingular square matrix")
        if Hx.shape[1] != n or He.shape[1] != M.shape[1] or Hx.shape[0] != He.shape[0]:
            raise ValueError("H_x / H_e shapes do not match the state and error dimensions")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "W_weight", M)
        object.__setattr__(self, "H_x", Hx)
        object.__setattr__(self, "H_e", He)

    def V(self, x: ArrayLike) -> FloatArray | float:
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.P, x)

    def grad_V(self, x: ArrayLike) -> FloatArray:
        return 2.0 * np.asarray(x, dtype=float) @ self.P

    def W(self, e: ArrayLike) -> FloatArray | float:
        return np.linalg.norm(np.asarray(e, dtype=float) @ self.W_weight.T, axis=-1)

    def grad_W(self, e: ArrayLike) -> FloatArray:
        """Gradient of ``W``; defined wherever ``e != 0``."""
        me = np.asarray(e, dtype=float) @ self.W_weight.T
        norm = np.linalg.norm(me, axis=-1, keepdims=True)
        return (me / norm) @ self.W_weight

    def H(self, x: ArrayLike, e: ArrayLike) -> FloatArray | float:
        x = np.asarray(x, dtype=float)
        e = np.asarray(e, dtype=float)
        return np.linalg.norm(x @ self.H_x.T + e @ self.H_e.T, axis=-1)

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "W_weight": self.W_weight.tolist(),
            "H_x": self.H_x.tolist(),
            "H_e": self.H_e.tolist(),
        }


def effective_rate(L: float, epsilon: float, delta: float) -> float:
    return max(L + epsilon / 2.0, 1.0 - delta)


def t_max(gamma: float, ell: float) -> float:
    """Maximum allowable sampling interval for rates ``gamma`` and ``ell``.

    Three branches depending on the sign of ``gamma - ell``; values within
    a relative band of 1e-12 take the equality branch ``1/ell``.
    """
    if not (gamma > 0 and ell > 0):
        raise ValueError(f"t_max needs gamma > 0 and ell > 0, got ({gamma}, {ell})")
    if abs(gamma - ell) <= _EQ_RTOL * max(gamma, ell):
        return 1.0 / ell
    r = math.sqrt(abs((gamma / ell) ** 2 - 1.0))
    if gamma > ell:
        return math.atan(r) / (ell * r)
    return math.atanh(r) / (ell * r)


def _phi_rhs(gamma: float, ell: float):
    def rhs(_tau, phi):
        return -2.0 * ell * phi - gamma * (phi * phi + 1.0)

    return rhs


@dataclass(frozen=True)
class PhiSolution:
    """Dense solution of the ``phi`` ODE on ``[0, horizon]``."""

    params: PhiParams
    tau: FloatArray
    phi: FloatArray
    _sol: object = field(repr=False, compare=False)

    def __call__(self, tau: ArrayLike) -> FloatArray:
        tau = np.asarray(tau, dtype=float)
        return np.asarray(self._sol(tau))[0]


def phi_solve(params: PhiParams, horizon: float, samples: int = 1001) -> PhiSolution:
    """Integrate ``phi' = -2 ell phi - gamma (phi^2 + 1)``, ``phi(0) = 1/lambda``."""
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    grid = np.linspace(0.0, horizon, samples)
    sol = solve_ivp(
        _phi_rhs(params.gamma, params.ell),
        (0.0, horizon),
        [1.0 / params.lam],
        method=METHOD,
        rtol=RTOL,
        atol=ATOL,
        t_eval=grid,
        dense_output=True,
    )
    if sol.status != 0:
        raise IntegrationError(f"phi integration failed: {sol.message}", float(sol.t[-1]))
    return PhiSolution(params, grid, sol.y[0], sol.sol)


def phi_zero_crossing(params: PhiParams, horizon: float | None = None) -> float:
    """First time ``phi`` reaches zero, located by event detection.

    With ``lambda`` close to zero this approaches ``t_max(gamma, ell)``
    without using the closed form, so it serves as an independent check.
    """
    if horizon is None:
        horizon = 100.0 / min(params.gamma, params.ell)

    def hits_zero(_tau, phi):
        return phi[0]

    hits_zero.terminal = True
    hits_zero.direction = -1
    sol = solve_ivp(
        _phi_rhs(params.gamma, params.ell),
        (0.0, horizon),
        [1.0 / params.lam],
        method=METHOD,
        rtol=RTOL,
        atol=ATOL,
        events=hits_zero,
    )
    if sol.status == -1:
        raise IntegrationError(f"phi integration failed: {sol.message}", float(sol.t[-1]))
    if not len(sol.t_events[0]):
        raise IntegrationError("phi did not cross zero before the horizon", horizon)
    return float(sol.t_events[0][0])


def u_value(V_val, gamma, phi_val, W_val):
    """``U = V + gamma * phi * W**2`` (broadcasts over arrays)."""
    return V_val + gamma * phi_val * W_val * W_val


@dataclass(frozen=True)
class EnvelopeReport:
    decay_violation: float  # max_t U(t) - exp(-eps t) U(0+)
    sandwich_violation: float  # max_t V(t) - U(t)
    u0: float
    lam: float

    def ok(self, rtol: float = 1e-6) -> bool:
        tol = rtol * (1.0 + self.u0)
        return self.decay_violation <= tol and self.sandwich_violation <= tol


def envelope_check(
    tau: ArrayLike,
    x_p: ArrayLike,
    e: ArrayLike,
    pset: ParameterSet,
    lyap: LyapunovData,
    delta: float,
    lam: float = 0.01,
) -> EnvelopeReport:
    """Compare one sampled flow segment against the ``U`` envelope.

    ``tau`` is time since the jump (``tau[0] == 0`` is the post-jump
    instant), ``x_p`` and ``e`` the plant state and the network-plus-observer
    error sampled at ``tau``. ``lam`` is shrunk by decades until ``phi``
    stays nonnegative over the segment.
    """
    tau = np.asarray(tau, dtype=float)
    x_p = np.atleast_2d(np.asarray(x_p, dtype=float))
    e = np.atleast_2d(np.asarray(e, dtype=float))
    ell = pset.rate(delta)
    span = float(tau[-1])
    limit = t_max(pset.gamma, ell)
    if not span < limit:
        raise ValueError(f"segment length {span:.17g} is not below t_max = {limit:.17g}")
    if tau[0] != 0.0:
        raise ValueError("tau must start at the post-jump instant 0")

    V = lyap.V(x_p)
    W = lyap.W(e)
    if span == 0.0:
        phi = np.full_like(tau, 1.0 / lam)
    else:
        while True:
            sol = phi_solve(PhiParams(pset.gamma, ell, lam), span, samples=2)
            phi = sol(tau)
            if phi.min() >= 0.0:
                break
            lam *= 0.1
            if lam < 1e-15:
                raise ValueError("no admissible lambda keeps phi nonnegative on the segment")
    U = u_value(V, pset.gamma, phi, W)
    bound = np.exp(-pset.epsilon * tau) * U[0]
    return EnvelopeReport(
        decay_violation=float(np.max(U - bound)),
        sandwich_violation=float(np.max(V - U)),
        u0=float(U[0]),
        lam=lam,
    )
