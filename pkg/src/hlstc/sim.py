"""Hybrid closed-loop simulation of the networked loop.

The state carries the plant state, the observer state and the held
observer sample ``x_hat_o`` that produced the current input. The network
error ``e = x_hat_o - x_p`` is derived, not integrated. Jump times are known
when they are scheduled, so every flow segment is integrated exactly to its
end without event location.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from hlstc.lyapunov import ATOL, METHOD, RTOL, IntegrationError, LyapunovData
from hlstc.stc import STATE_FEEDBACK, Fallback, StcConfig, eta_update, initial_eta, next_interval

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e9


class DivergenceError(RuntimeError):
    def __init__(self, t: float, x_p, x_o):
        super().__init__(
            f"state diverged at t={t:.6g}: |x_p|={np.linalg.norm(x_p):.3g}, |x_o|={np.linalg.norm(x_o):.3g}"
        )
        self.t = t


@dataclass
class HybridState:
    x_p: np.ndarray
    x_o: np.ndarray
    x_hat_o: np.ndarray
    eta: np.ndarray
    tau: float = 0.0
    q: float = 0.0
    t: float = 0.0
    j: int = 0

    @property
    def e(self) -> np.ndarray:
        return self.x_hat_o - self.x_p

    @property
    def e_o(self) -> np.ndarray:
        return self.x_o - self.x_p


@dataclass(frozen=True)
class TransmissionEvent:
    j: int
    t: float
    interval: float
    set_index: int
    fallback: Fallback
    v_obs: float
    c: float
    norm_xp: float
    norm_eo: float
    # pre-jump window and post-jump continuous state, kept for replay and audits
    eta: tuple = ()
    x_p: tuple = ()
    x_o: tuple = ()
    x_hat_o: tuple = ()


@dataclass
class RunResult:
    events: list[TransmissionEvent]
    final: HybridState
    horizon: float
    trajectory: dict | None = None
    t_min: float | None = None

    def count(self, horizon: float | None = None) -> int:
        """Transmissions with ``0 < t_j <= horizon`` (the jump at ``t = 0`` excluded)."""
        h = self.horizon if horizon is None else horizon
        return sum(1 for ev in self.events if 0.0 < ev.t <= h * (1 + 1e-12))

    @property
    def times(self) -> np.ndarray:
        return np.array([ev.t for ev in self.events])

    @property
    def intervals(self) -> np.ndarray:
        """Realised gaps ``t_{j+1} - t_j`` between logged transmissions."""
        return np.diff(self.times)


def flow(state: HybridState, model) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of ``(x_p, x_o)``; ``tau`` grows at rate 1, the rest is frozen."""
    u_hat = model.controller(state.x_hat_o)
    y = model.output(state.x_p)
    return model.plant_rhs(state.x_p, u_hat), model.observer_rhs(state.x_o, u_hat, y)


def _closed_loop(model, u_hat: float, n: int) -> Callable:
    plant_rhs, observer_rhs, output = model.plant_rhs, model.observer_rhs, model.output

    def rhs(_t, z):
        x_p, x_o = z[:n], z[n:]
        return np.concatenate((plant_rhs(x_p, u_hat), observer_rhs(x_o, u_hat, output(x_p))))

    return rhs


def _too_large(_t, z):
    return DIVERGENCE_LIMIT - np.max(np.abs(z))


_too_large.terminal = True


def integrate_segment(model, x_p, x_o, x_hat_o, duration: float, tau_eval=None):
    """Flow ``(x_p, x_o)`` for ``duration`` seconds with the input held at ``g_c(x_hat_o)``.

    Returns the end state ``(x_p, x_o)`` and, if ``tau_eval`` is given, the
    samples as an array of shape ``(len(tau_eval), 2 n)``.
    """
    n = len(x_p)
    z0 = np.concatenate((x_p, x_o)).astype(float)
    if duration == 0.0:
        samples = None if tau_eval is None else np.tile(z0, (len(tau_eval), 1))
        return z0[:n], z0[n:], samples
    u_hat = model.controller(x_hat_o)
    points = None
    if tau_eval is not None:
        tau_eval = np.asarray(tau_eval, dtype=float)
        # t_eval does not alter step selection, so the end point is reproducible
        points = tau_eval if len(tau_eval) and tau_eval[-1] == duration else np.append(tau_eval, duration)
    sol = solve_ivp(
        _closed_loop(model, u_hat, n),
        (0.0, duration),
        z0,
        method=METHOD,
        rtol=RTOL,
        atol=ATOL,
        t_eval=points,
        events=_too_large,
    )
    if sol.status == 1:
        raise DivergenceError(float(sol.t_events[0][0]), sol.y[:n, -1], sol.y[n:, -1])
    if sol.status != 0:
        raise IntegrationError(f"flow integration failed: {sol.message}", float(sol.t[-1]))
    z_end = sol.y[:, -1]
    samples = None if tau_eval is None else sol.y.T[: len(tau_eval)]
    if not np.all(np.isfinite(z_end)):
        raise DivergenceError(math.nan, z_end[:n], z_end[n:])
    return z_end[:n], z_end[n:], samples


def observed_value(state: HybridState, cfg: StcConfig, lyap: LyapunovData) -> float:
    x = state.x_p if cfg.mode == STATE_FEEDBACK else state.x_o
    return float(lyap.V(x))


def jump(state: HybridState, cfg: StcConfig, lyap: LyapunovData, reset_error: bool = False):
    """Transmit: sample the observer, schedule the next interval, update the window.

    With ``reset_error`` the held sample is the plant state, i.e. ``e``
    restarts from zero as in the abstract hybrid model.
    """
    v_obs = observed_value(state, cfg, lyap)
    decision = next_interval(v_obs, state.eta, cfg)
    x_hat = state.x_p.copy() if reset_error else state.x_o.copy()
    new = HybridState(
        x_p=state.x_p,
        x_o=state.x_o,
        x_hat_o=x_hat,
        eta=eta_update(state.eta, v_obs, decision.interval, cfg),
        tau=0.0,
        q=decision.interval,
        t=state.t,
        j=state.j,
    )
    event = TransmissionEvent(
        j=state.j,
        t=state.t,
        interval=decision.interval,
        set_index=decision.set_index,
        fallback=decision.fallback,
        v_obs=v_obs,
        c=decision.c,
        norm_xp=float(np.linalg.norm(state.x_p)),
        norm_eo=float(np.linalg.norm(state.e_o)),
        eta=tuple(state.eta.tolist()),
        x_p=tuple(state.x_p.tolist()),
        x_o=tuple(state.x_o.tolist()),
        x_hat_o=tuple(x_hat.tolist()),
    )
    return new, event


def initial_state(x_p, x_o, cfg: StcConfig, lyap: LyapunovData, eta_init="observer_value") -> HybridState:
    """State at ``(0, 0)`` before the first transmission.

    ``eta_init`` is a rule name (``"observer_value"`` or ``"zeros"``) or an
    explicit array.
    """
    x_p = np.asarray(x_p, dtype=float)
    x_o = np.asarray(x_o, dtype=float)
    if isinstance(eta_init, str):
        v0 = float(lyap.V(x_p if cfg.mode == STATE_FEEDBACK else x_o))
        eta = initial_eta(v0, cfg, eta_init)
    else:
        eta = np.asarray(eta_init, dtype=float)
        if eta.shape != (cfg.n_eta,):
            raise ValueError(f"eta must have {cfg.n_eta} entries, got shape {eta.shape}")
        if np.any(eta < 0):
            raise ValueError("eta entries must be nonnegative")
        if cfg.mode != STATE_FEEDBACK and np.any(eta > cfg.v_max):
            logger.warning("initial eta exceeds v_max=%g; the clamp only applies to later updates", cfg.v_max)
    return HybridState(x_p=x_p, x_o=x_o, x_hat_o=x_o.copy(), eta=eta)


def _output_grid(horizon: float, step: float) -> np.ndarray:
    n = int(math.floor(horizon / step * (1 + 1e-12))) + 1
    return np.arange(n) * step


def _run(initial: HybridState, schedule, model, horizon: float, output_step, lyap):
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    n = len(initial.x_p)
    grid = None if output_step is None else _output_grid(horizon, output_step)
    chunks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    events: list[TransmissionEvent] = []
    state = initial
    cursor = 0
    limit = horizon * (1 + 1e-12)
    while True:
        state, event = schedule(state)
        events.append(event)
        end = state.t + state.q
        last = end > limit
        duration = horizon - state.t if last else state.q
        tau_eval = None
        if grid is not None:
            stop = np.searchsorted(grid, horizon if last else end, side="right" if last else "left")
            tau_eval = np.clip(grid[cursor:stop] - state.t, 0.0, duration)
            cursor = stop
        x_p, x_o, samples = integrate_segment(model, state.x_p, state.x_o, state.x_hat_o, duration, tau_eval)
        if samples is not None and len(samples):
            u = model.controller(state.x_hat_o)
            chunks.append((tau_eval + state.t, samples, np.full(len(samples), u)))
        if np.linalg.norm(x_p) > DIVERGENCE_LIMIT or np.linalg.norm(x_o) > DIVERGENCE_LIMIT:
            raise DivergenceError(state.t + duration, x_p, x_o)
        if last:
            state = replace(state, x_p=x_p, x_o=x_o, tau=duration, t=horizon)
            break
        state = replace(state, x_p=x_p, x_o=x_o, tau=0.0, q=0.0, t=end, j=state.j + 1)

    trajectory = None
    if grid is not None:
        t = np.concatenate([c[0] for c in chunks])
        z = np.concatenate([c[1] for c in chunks])
        u = np.concatenate([c[2] for c in chunks])
        trajectory = {
            "t": t,
            "x_p": z[:, :n],
            "x_o": z[:, n:],
            "u_hat": u,
            "V_obs": lyap.V(z[:, n:]) if lyap is not None else np.full(len(t), np.nan),
            "V_plant": lyap.V(z[:, :n]) if lyap is not None else np.full(len(t), np.nan),
        }
    return RunResult(events=events, final=state, horizon=horizon, trajectory=trajectory)


def simulate_run(
    initial: HybridState,
    cfg: StcConfig,
    lyap: LyapunovData,
    model,
    horizon: float,
    output_step: float | None = 1e-3,
    reset_error: bool = False,
) -> RunResult:
    """Run the self-triggered loop from ``initial`` until ``horizon``.

    The first transmission happens at ``t = 0``. Pass ``output_step=None``
    to skip the fixed-step trajectory (event log only).
    """

    def schedule(state):
        return jump(state, cfg, lyap, reset_error)

    result = _run(initial, schedule, model, horizon, output_step, lyap)
    result.t_min = cfg.t_min
    return result


def periodic_run(
    x_p,
    x_o,
    period: float,
    model,
    horizon: float,
    lyap: LyapunovData | None = None,
    output_step: float | None = 1e-3,
) -> RunResult:
    """Time-triggered baseline: transmit every ``period`` seconds from ``t = 0``."""
    if not period > 0:
        raise ValueError(f"period must be positive, got {period}")
    x_p = np.asarray(x_p, dtype=float)
    x_o = np.asarray(x_o, dtype=float)

    def schedule(state):
        # multiply rather than accumulate so t_j = j * period exactly
        t = state.j * period
        v_obs = float(lyap.V(state.x_o)) if lyap is not None else math.nan
        new = replace(state, x_hat_o=state.x_o.copy(), tau=0.0, q=(state.j + 1) * period - t, t=t)
        event = TransmissionEvent(
            j=state.j,
            t=t,
            interval=new.q,
            set_index=-1,
            fallback=Fallback.NONE,
            v_obs=v_obs,
            c=math.nan,
            norm_xp=float(np.linalg.norm(state.x_p)),
            norm_eo=float(np.linalg.norm(state.e_o)),
            x_p=tuple(state.x_p.tolist()),
            x_o=tuple(state.x_o.tolist()),
            x_hat_o=tuple(state.x_o.tolist()),
        )
        return new, event

    start = HybridState(x_p=x_p, x_o=x_o, x_hat_o=x_o.copy(), eta=np.zeros(0))
    return _run(start, schedule, model, horizon, output_step, lyap)


def replay_segment(event: TransmissionEvent, model, samples: int = 201):
    """Re-integrate the flow that followed ``event`` on a uniform ``tau`` grid.

    Returns ``(tau, x_p, x_o, x_hat_o)``.
    """
    tau = np.linspace(0.0, event.interval, samples)
    x_p0 = np.array(event.x_p)
    x_o0 = np.array(event.x_o)
    x_hat = np.array(event.x_hat_o)
    _, _, z = integrate_segment(model, x_p0, x_o0, x_hat, event.interval, tau)
    n = len(x_p0)
    return tau, z[:, :n], z[:, n:], x_hat
