"""Grid-based certification of the hybrid Lyapunov conditions.

Two pointwise inequalities are checked for a parameter set ``(eps, gamma, L)``
on a box grid over ``(x, e)`` and at both vertices of the polytopic
embedding of the closed loop ``x' = A x + B(a_t) e``, ``e' = -x'``:

* error growth:  ``<dW/de, e'> <= L W(e) + H(x, e)``
* plant decay:   ``<grad V, x'> <= -eps V(x) - H(x, e)**2 + gamma**2 W(e)**2``

Both sides are affine in ``a_t``, so the two vertices cover every value in
between. A pass is a falsification result on the sampled box, not a proof.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.linalg as sla

from hlstc.lyapunov import LyapunovData, ParameterSet, effective_rate, t_max
from hlstc.robot_arm import PolytopicAbstraction, RobotArmParams, observer_error_matrix

logger = logging.getLogger(__name__)

SLACK = 1e-9
W_SCALE = 0.6


@dataclass(frozen=True)
class CertGrid:
    half_width: float | tuple[float, ...] = 10.0
    samples: int = 50

    def __post_init__(self):
        if self.samples < 2:
            raise ValueError("need at least 2 samples per axis")
        widths = np.atleast_1d(self.half_width)
        if np.any(widths <= 0):
            raise ValueError("box half-widths must be positive")

    def axes(self, dim: int) -> list[np.ndarray]:
        widths = np.broadcast_to(np.asarray(self.half_width, dtype=float), (dim,))
        return [np.linspace(-w, w, self.samples) for w in widths]

    def refined(self) -> "CertGrid":
        return CertGrid(self.half_width, 2 * self.samples)

    def to_dict(self) -> dict:
        hw = self.half_width
        return {"half_width": list(hw) if isinstance(hw, tuple) else hw, "samples": self.samples}


@dataclass(frozen=True)
class MarginReport:
    margin_error: float  # min of L W + H - <dW, g>
    margin_decay: float  # min of -eps V - H^2 + gamma^2 W^2 - <grad V, f>
    witness_error: tuple
    witness_decay: tuple
    passed: bool


def robot_arm_lyapunov(abstraction: PolytopicAbstraction, w_scale: float = W_SCALE) -> LyapunovData:
    """Default ``V``, ``W``, ``H`` for the closed loop in ``abstraction``.

    ``P`` solves ``A'P + PA = -2I``. ``W(e) = w_scale |e|`` and
    ``H(x, e) = w_scale |A x + B(0) e|``, the nominal (``a_t = 0``) flow, so
    the error inequality holds with ``L`` the largest symmetric part of
    ``-(B(a_t) - B(0))`` over the polytope.
    """
    A = abstraction.A
    n = A.shape[0]
    P = sla.solve_continuous_lyapunov(A.T, -2.0 * np.eye(n))
    P = 0.5 * (P + P.T)
    B_mid = 0.5 * (abstraction.B_vertices[0] + abstraction.B_vertices[1])
    return LyapunovData(
        P=P,
        W_weight=w_scale * np.eye(n),
        H_x=w_scale * A,
        H_e=w_scale * B_mid,
        meta={"construction": "lyapunov_eq_-2I", "w_scale": w_scale},
    )


def _points(grid: CertGrid, n_x: int, n_e: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield the box grid in slabs along the first axis: ``(x, e)`` arrays."""
    axes = grid.axes(n_x + n_e)
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, n_x + n_e - 1)
    for v in axes[0]:
        z = np.empty((len(rest), n_x + n_e))
        z[:, 0] = v
        z[:, 1:] = rest
        yield z[:, :n_x], z[:, n_x:]


@dataclass
class _Terms:
    """Per-point quantities of both inequalities at one polytope vertex."""

    x: np.ndarray
    e: np.ndarray
    W: np.ndarray
    H: np.ndarray
    dWg: np.ndarray
    V: np.ndarray
    dVf: np.ndarray


def _terms(lyap: LyapunovData, abstraction: PolytopicAbstraction, grid: CertGrid) -> Iterator[_Terms]:
    A = abstraction.A
    n_x = A.shape[0]
    n_e = abstraction.B_vertices[0].shape[1]
    for x, e in _points(grid, n_x, n_e):
        W = lyap.W(e)
        H = lyap.H(x, e)
        V = lyap.V(x)
        gV = lyap.grad_V(x)
        nz = W > 0
        gW = np.zeros_like(e)
        gW[nz] = lyap.grad_W(e[nz])
        Ax = x @ A.T
        for B in abstraction.B_vertices:
            f = Ax + e @ B.T
            yield _Terms(x, e, W, H, -np.einsum("ij,ij->i", gW, f), V, np.einsum("ij,ij->i", gV, f))


def check_many(
    sets: Sequence[ParameterSet],
    lyap: LyapunovData,
    abstraction: PolytopicAbstraction,
    grid: CertGrid,
) -> list[MarginReport]:
    """Evaluate both inequalities for several parameter sets in one grid pass."""
    k = len(sets)
    eps = np.array([s.epsilon for s in sets])
    gam2 = np.array([s.gamma**2 for s in sets])
    Ls = np.array([s.L for s in sets])
    worst_err = np.full(k, np.inf)
    worst_dec = np.full(k, np.inf)
    wit_err: list[tuple] = [()] * k
    wit_dec: list[tuple] = [()] * k
    ok = np.ones(k, dtype=bool)
    for t in _terms(lyap, abstraction, grid):
        nz = t.W > 0
        if np.any(nz):
            W, H, dWg = t.W[nz], t.H[nz], t.dWg[nz]
            margin = Ls[:, None] * W + H - dWg
            mag = Ls[:, None] * W + H + np.abs(dWg)
            ok &= np.all(margin >= -SLACK * (1 + mag), axis=1)
            idx = np.argmin(margin, axis=1)
            best = margin[np.arange(k), idx]
            rows = np.flatnonzero(nz)
            for i in np.flatnonzero(best < worst_err):
                worst_err[i] = best[i]
                r = rows[idx[i]]
                wit_err[i] = (tuple(t.x[r].tolist()), tuple(t.e[r].tolist()))
        W2 = t.W**2
        H2 = t.H**2
        margin = -eps[:, None] * t.V - H2 + gam2[:, None] * W2 - t.dVf
        mag = np.abs(eps[:, None]) * t.V + H2 + gam2[:, None] * W2 + np.abs(t.dVf)
        ok &= np.all(margin >= -SLACK * (1 + mag), axis=1)
        idx = np.argmin(margin, axis=1)
        best = margin[np.arange(k), idx]
        for i in np.flatnonzero(best < worst_dec):
            worst_dec[i] = best[i]
            wit_dec[i] = (tuple(t.x[idx[i]].tolist()), tuple(t.e[idx[i]].tolist()))
    return [
        MarginReport(float(worst_err[i]), float(worst_dec[i]), wit_err[i], wit_dec[i], bool(ok[i]))
        for i in range(k)
    ]


def check_set(
    pset: ParameterSet,
    lyap: LyapunovData,
    abstraction: PolytopicAbstraction,
    grid: CertGrid,
) -> MarginReport:
    return check_many([pset], lyap, abstraction, grid)[0]


def critical_L(lyap: LyapunovData, abstraction: PolytopicAbstraction, grid: CertGrid) -> float:
    """Smallest ``L`` for which the error inequality holds at every grid point."""
    worst = -np.inf
    for t in _terms(lyap, abstraction, grid):
        nz = t.W > 0
        if np.any(nz):
            worst = max(worst, float(np.max((t.dWg[nz] - t.H[nz]) / t.W[nz])))
    return worst


def critical_gamma_sq(
    eps: Iterable[float], lyap: LyapunovData, abstraction: PolytopicAbstraction, grid: CertGrid
) -> tuple[np.ndarray, np.ndarray]:
    """Smallest ``gamma**2`` passing the decay inequality on the grid, per epsilon.

    Also returns, per epsilon, the worst residual at ``e = 0`` where ``gamma``
    has no effect; a positive value there means no ``gamma`` works.
    """
    eps = np.asarray(list(eps), dtype=float)
    need = np.full(len(eps), -np.inf)
    for t in _terms(lyap, abstraction, grid):
        nz = t.W > 0
        num = eps[:, None] * t.V[nz] + t.H[nz] ** 2 + t.dVf[nz]
        need = np.maximum(need, np.max(num / t.W[nz] ** 2, axis=1))
    # gamma-free condition on the e = 0 slice of the box
    A = abstraction.A
    n_x = A.shape[0]
    x = np.stack(np.meshgrid(*grid.axes(n_x), indexing="ij"), axis=-1).reshape(-1, n_x)
    e0 = np.zeros((len(x), abstraction.B_vertices[0].shape[1]))
    base = lyap.H(x, e0) ** 2 + np.einsum("ij,ij->i", lyap.grad_V(x), x @ A.T)
    residual = np.max(eps[:, None] * lyap.V(x) + base, axis=1)
    return need, residual


def default_eps_grid(lower: float = -20.0, upper: float = 0.01, count: int = 23, first_gap: float = 0.05) -> list[float]:
    """``count`` values in ``[lower, upper]``, geometrically spaced below ``upper``.

    ``upper`` itself is always included; the remaining gaps ``upper - eps``
    run geometrically from ``first_gap`` to ``upper - lower``.
    """
    if count < 1 or not lower < upper:
        raise ValueError("need count >= 1 and lower < upper")
    if count == 1:
        return [upper]
    gaps = np.geomspace(first_gap, upper - lower, count - 1)
    values = [upper] + [upper - g for g in gaps]
    values[-1] = lower
    return values


@dataclass
class SweepResult:
    sets: list[ParameterSet]
    skipped: list[tuple[float, str]] = field(default_factory=list)
    L_critical: float = math.nan


def sweep_parameter_sets(
    lyap: LyapunovData,
    abstraction: PolytopicAbstraction,
    eps_grid: Sequence[float],
    grid: CertGrid,
    delta: float = 0.999,
    rel_tol: float = 1e-3,
    refine: bool = False,
) -> SweepResult:
    """Certified ``(eps, gamma, L)`` triples, sorted largest epsilon first.

    ``L`` and ``gamma`` are the grid-critical values inflated by ``rel_tol``,
    i.e. the upper end of a bisection bracket of that relative width. Every
    emitted set is re-checked; with ``refine`` it must also pass on a grid
    with twice the samples per axis, otherwise it is dropped as fragile.
    """
    skipped: list[tuple[float, str]] = []
    L_crit = critical_L(lyap, abstraction, grid)
    L = max(L_crit, 0.0) * (1 + rel_tol) or rel_tol
    need, residual = critical_gamma_sq(eps_grid, lyap, abstraction, grid)
    candidates = []
    for eps, g2, res in zip(eps_grid, need, residual):
        if res > 0:
            skipped.append((float(eps), "decay inequality fails at e = 0 for every gamma"))
            continue
        gamma = math.sqrt(max(g2, 0.0)) * (1 + rel_tol) or rel_tol
        candidates.append(ParameterSet(float(eps), gamma, L))
    if candidates:
        reports = check_many(candidates, lyap, abstraction, grid)
        if refine:
            fine = check_many(candidates, lyap, abstraction, grid.refined())
        else:
            fine = reports
        kept = []
        for s, r, rf in zip(candidates, reports, fine):
            if not r.passed:
                skipped.append((s.epsilon, "failed re-check"))
            elif not rf.passed:
                skipped.append((s.epsilon, "fragile: fails on the refined grid"))
            else:
                kept.append(s)
        candidates = kept
    for eps, note in skipped:
        logger.info("skipping eps=%g: %s", eps, note)
    sets = sorted(candidates, key=lambda s: (-s.epsilon, -s.interval_bound(delta)))
    return SweepResult(sets, skipped, L_crit)


@dataclass(frozen=True)
class ObserverReport:
    sign_conditions: bool
    quadratic_certificate: bool
    P_o: tuple | None
    decay_rate: float
    passed: bool


def certify_observer(p: RobotArmParams, scan: int = 41) -> ObserverReport:
    """Check the observer-error gains at both vertices ``a_t = -a, a``.

    Passing requires ``theta1 > 0`` and ``theta2 + a_t > 0`` at both vertices.
    A common quadratic certificate ``P_o = [[1, s], [s, r]]`` is searched on a
    grid over ``r`` (log-spaced) and the correlation ``s / sqrt(r)``; the one
    with the largest guaranteed decay rate is reported.
    """
    vertices = (-p.a, p.a)
    sign_ok = p.theta1 > 0 and all(p.theta2 + v > 0 for v in vertices)
    mats = [observer_error_matrix(v, p) for v in vertices]
    best_rate, best_P = -np.inf, None
    for r in np.geomspace(1e-3, 1e3, scan):
        for rho in np.linspace(-0.95, 0.95, scan):
            s = rho * math.sqrt(r)
            P = np.array([[1.0, s], [s, r]])
            lam_max = np.linalg.eigvalsh(P)[-1]
            rate = min(-np.linalg.eigvalsh(M.T @ P + P @ M)[-1] for M in mats) / lam_max
            if rate > best_rate:
                best_rate, best_P = rate, P
    quad_ok = best_rate > 0
    return ObserverReport(
        sign_conditions=bool(sign_ok),
        quadratic_certificate=bool(quad_ok),
        P_o=tuple(map(tuple, best_P.tolist())) if quad_ok else None,
        decay_rate=float(best_rate),
        passed=bool(sign_ok),
    )


# -- parameter-set cache -------------------------------------------------------


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sweep_key(lyap: LyapunovData, abstraction: PolytopicAbstraction, eps_grid, grid: CertGrid, delta, rel_tol, refine) -> str:
    payload = {
        "lyapunov": lyap.to_dict(),
        "A": abstraction.A.tolist(),
        "B": [B.tolist() for B in abstraction.B_vertices],
        "eps_grid": [float(e) for e in eps_grid],
        "grid": grid.to_dict(),
        "delta": delta,
        "rel_tol": rel_tol,
        "refine": refine,
    }
    return hashlib.sha256(_canonical(payload).encode()).hexdigest()


def sets_to_json(sets: Sequence[ParameterSet], delta: float, meta: dict) -> dict:
    body = {
        "sets": [
            {**asdict(s), "t_max_effective": t_max(s.gamma, effective_rate(s.L, s.epsilon, delta))}
            for s in sets
        ],
        "delta": delta,
        "meta": meta,
    }
    body["hash"] = hashlib.sha256(_canonical(body).encode()).hexdigest()
    return body


def sets_from_json(body: dict) -> list[ParameterSet]:
    content = {k: v for k, v in body.items() if k != "hash"}
    if hashlib.sha256(_canonical(content).encode()).hexdigest() != body.get("hash"):
        raise ValueError("parameter-set file hash mismatch")
    return [ParameterSet(s["epsilon"], s["gamma"], s["L"]) for s in body["sets"]]


def cached_sweep(
    cache_dir: str | Path | None,
    lyap: LyapunovData,
    abstraction: PolytopicAbstraction,
    eps_grid: Sequence[float],
    grid: CertGrid,
    delta: float = 0.999,
    rel_tol: float = 1e-3,
    refine: bool = False,
) -> list[ParameterSet]:
    """``sweep_parameter_sets`` backed by a JSON file named after the input hash."""
    key = sweep_key(lyap, abstraction, eps_grid, grid, delta, rel_tol, refine)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"param_sets_{key[:16]}.json"
        if path.exists():
            try:
                return sets_from_json(json.loads(path.read_text()))
            except (ValueError, KeyError, json.JSONDecodeError):
                logger.warning("ignoring corrupt parameter-set cache %s", path)
    result = sweep_parameter_sets(lyap, abstraction, eps_grid, grid, delta, rel_tol, refine)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "key": key,
            "grid": grid.to_dict(),
            "lyapunov": lyap.to_dict(),
            "eps_grid": [float(e) for e in eps_grid],
            "rel_tol": rel_tol,
            "refine": refine,
            "L_critical": result.L_critical,
            "skipped": result.skipped,
        }
        path.write_text(json.dumps(sets_to_json(result.sets, delta, meta), indent=2))
    return result.sets
