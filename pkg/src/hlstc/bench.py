"""Monte Carlo transmission benchmark against periodic sampling.

Initial conditions for run ``k`` come from a Philox generator seeded with
``SeedSequence(seed, spawn_key=(k,))``, so each run's draw depends only on
``(seed, k)`` and results do not depend on the worker count.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from hlstc.certify import CertGrid, cached_sweep, default_eps_grid, robot_arm_lyapunov
from hlstc.config import ExperimentConfig
from hlstc.lyapunov import LyapunovData
from hlstc.robot_arm import make_model
from hlstc.sim import DivergenceError, initial_state, simulate_run
from hlstc.stc import StcConfig

logger = logging.getLogger(__name__)

MAX_DIVERGENCE_FRACTION = 0.01
CACHE_ENV = "HLSTC_CACHE_DIR"


class ExperimentError(RuntimeError):
    pass


@dataclass
class Setup:
    model: object
    lyap: LyapunovData
    stc: StcConfig


def default_cache_dir(cfg: ExperimentConfig) -> str:
    return cfg.cache_dir or os.environ.get(CACHE_ENV) or ".hlstc-cache"


def build(cfg: ExperimentConfig, sets=None) -> Setup:
    """Model, Lyapunov data and STC configuration; runs (or loads) the sweep if needed."""
    model = make_model(cfg.model_name, cfg.model_params)
    abstraction = model.polytopic()
    lyap = robot_arm_lyapunov(abstraction, cfg.w_scale)
    if sets is None:
        sets = cached_sweep(
            default_cache_dir(cfg),
            lyap,
            abstraction,
            default_eps_grid(cfg.eps_lower, cfg.eps_upper, cfg.eps_count),
            CertGrid(cfg.half_width, cfg.samples),
            cfg.delta,
            cfg.rel_tol,
            cfg.refine,
        )
    if not sets:
        raise ExperimentError("the sweep produced no certified parameter set")
    stc = StcConfig(
        eps_ref=cfg.eps_ref,
        delta=cfg.delta,
        v_max=cfg.v_max,
        m=cfg.m,
        sets=tuple(sets),
        v_floor=cfg.v_floor,
        mode=cfg.mode,
    )
    return Setup(model, lyap, stc)


def draw_initial_condition(seed: int, index: int, half_width: float, dim: int) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    rng = np.random.Generator(np.random.Philox(ss))
    return rng.uniform(-half_width, half_width, dim)


def periodic_count(period: float, horizon: float) -> int:
    """Number of ``j >= 1`` with ``j * period`` in ``(0, horizon]``."""
    n = int(math.floor(horizon / period)) + 1
    limit = horizon * (1 + 1e-12)
    while n * period > limit:
        n -= 1
    return n


@dataclass
class RunRecord:
    index: int
    initial: list
    counts: dict
    min_interval: float
    final_norm_xp: float
    final_norm_eo: float
    initial_norm_eo: float
    diverged: bool = False
    message: str = ""


def _one_run(args) -> RunRecord:
    index, ic, setup, horizons, eta_init = args
    n = len(ic) // 2
    state = initial_state(ic[:n], ic[n:], setup.stc, setup.lyap, eta_init)
    e0 = float(np.linalg.norm(state.e_o))
    try:
        result = simulate_run(state, setup.stc, setup.lyap, setup.model, max(horizons), output_step=None)
    except DivergenceError as exc:
        return RunRecord(index, ic.tolist(), {}, math.nan, math.inf, math.inf, e0, True, str(exc))
    iv = result.intervals
    return RunRecord(
        index=index,
        initial=ic.tolist(),
        counts={h: result.count(h) for h in horizons},
        min_interval=float(iv.min()) if len(iv) else math.inf,
        final_norm_xp=float(np.linalg.norm(result.final.x_p)),
        final_norm_eo=float(np.linalg.norm(result.final.e_o)),
        initial_norm_eo=e0,
    )


@dataclass
class RunStats:
    runs: int
    seed: int
    horizons: tuple
    t_min: float
    counts: dict  # horizon -> list of per-run counts, ordered by run index
    periodic: dict  # horizon -> count at period t_min
    min_interval: float
    converged: list
    diverged: list
    records: list = field(repr=False, default_factory=list)

    def summary(self, horizon: float) -> dict:
        c = np.asarray(self.counts[horizon], dtype=float)
        return {
            "mean": float(c.mean()),
            "median": float(np.median(c)),
            "min": int(c.min()),
            "max": int(c.max()),
            "periodic": self.periodic[horizon],
            "reduction_ratio": float(c.mean()) / self.periodic[horizon],
        }

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "seed": self.seed,
            "t_min": self.t_min,
            "min_interval": self.min_interval,
            "horizons": {str(h): self.summary(h) for h in self.horizons},
            "converged": self.converged,
            "diverged": self.diverged,
            "per_run": [
                {
                    "index": r.index,
                    "initial": r.initial,
                    "counts": {str(h): c for h, c in r.counts.items()},
                    "min_interval": r.min_interval,
                    "final_norm_xp": r.final_norm_xp,
                    "final_norm_eo": r.final_norm_eo,
                    "diverged": r.diverged,
                }
                for r in self.records
            ],
        }


def monte_carlo(cfg: ExperimentConfig, setup: Setup | None = None) -> RunStats:
    setup = setup or build(cfg)
    dim = 2 * setup.model.n_x
    jobs = [
        (k, draw_initial_condition(cfg.seed, k, cfg.ic_half_width, dim), setup, cfg.horizons, cfg.eta_init)
        for k in range(cfg.runs)
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(_one_run, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        records = [_one_run(job) for job in jobs]
    records.sort(key=lambda r: r.index)

    diverged = [r.index for r in records if r.diverged]
    if len(diverged) > MAX_DIVERGENCE_FRACTION * cfg.runs:
        raise ExperimentError(f"{len(diverged)} of {cfg.runs} runs diverged (runs {diverged[:10]} ...)")
    ok = [r for r in records if not r.diverged]
    if not ok:
        raise ExperimentError("every run diverged")
    t_min = setup.stc.t_min
    return RunStats(
        runs=cfg.runs,
        seed=cfg.seed,
        horizons=cfg.horizons,
        t_min=t_min,
        counts={h: [r.counts[h] for r in ok] for h in cfg.horizons},
        periodic={h: periodic_count(t_min, h) for h in cfg.horizons},
        min_interval=min(r.min_interval for r in ok),
        converged=[r.final_norm_xp <= cfg.convergence_threshold for r in records],
        diverged=diverged,
        records=records,
    )
