"""CSV/JSON writers. Floats are written with 17 significant digits."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

from hlstc import __version__

EVENT_HEADER = ["j", "t", "interval", "set_index", "fallback", "V_obs", "C", "norm_xp", "norm_eo"]


def fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    value = float(value)
    if math.isnan(value):
        return "nan"
    return format(value, ".17g")


def content_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def meta_block(config_hash: str, seed: int | None) -> dict:
    return {"version": __version__, "config_hash": config_hash, "seed": seed}


def _write_csv(path: Path, header: list[str], rows, meta: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# hlstc {meta['version']} config_hash={meta['config_hash']} seed={meta['seed']}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def write_events(path, events, meta: dict) -> Path:
    """Event log; ``fallback`` is 0 (none), 1 (no improving candidate) or 2 (gate)."""
    rows = (
        (ev.j, ev.t, ev.interval, ev.set_index, int(ev.fallback), ev.v_obs, ev.c, ev.norm_xp, ev.norm_eo)
        for ev in events
    )
    return _write_csv(Path(path), EVENT_HEADER, rows, meta)


def write_trajectory(path, traj: dict, meta: dict) -> Path:
    n = traj["x_p"].shape[1]
    header = ["t"] + [f"xp{i + 1}" for i in range(n)] + [f"xo{i + 1}" for i in range(n)] + ["u_hat", "V_obs", "V_plant"]
    rows = (
        (t, *xp, *xo, u, vo, vp)
        for t, xp, xo, u, vo, vp in zip(
            traj["t"], traj["x_p"].tolist(), traj["x_o"].tolist(), traj["u_hat"], traj["V_obs"], traj["V_plant"]
        )
    )
    return _write_csv(Path(path), header, rows, meta)


def write_tmax_table(path, rows, meta: dict) -> Path:
    return _write_csv(Path(path), ["gamma", "ell", "t_max"], rows, meta)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Read a CSV written here, skipping the ``#`` metadata line."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, list(reader)


def _encode(obj):
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return str(obj)
        return float(format(obj, ".17g"))
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if hasattr(obj, "item"):
        return _encode(obj.item())
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_encode(obj), indent=2, sort_keys=True) + "\n")
    return path
