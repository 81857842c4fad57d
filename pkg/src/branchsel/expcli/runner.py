"""Replica execution and result persistence.

Replicas are the only unit of parallelism; each derives its random stream
from (master_seed, replica_index) alone, so results are identical for any
worker count.  Files are written atomically (write, then rename): partial
rows are never visible.  CSV is RFC-4180 with a header row and 17
significant digits for reals; summaries are single-line JSON.
"""

from __future__ import annotations

import json
import math
import os
import subprocess
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np


def _batch(args):
    fn_name, cfg, lo, hi = args
    from . import scenarios
    fn = scenarios.SCENARIOS[fn_name].replica_fn
    return [fn(cfg, i) for i in range(lo, hi)]


def run_replicas(scenario_name: str, cfg, n: int | None = None) -> list:
    """Per-replica results in replica order, parallelized over processes."""
    n = cfg.replicas if n is None else n
    if cfg.threads <= 1:
        from . import scenarios
        fn = scenarios.SCENARIOS[scenario_name].replica_fn
        return [fn(cfg, i) for i in range(n)]
    batches = max(cfg.threads * 4, 1)
    size = max(1, -(-n // batches))
    spans = [(scenario_name, cfg, lo, min(lo + size, n))
             for lo in range(0, n, size)]
    out: list = []
    with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
        for chunk in ex.map(_batch, spans):
            out.extend(chunk)
    return out


def fmt_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(",".join(header) + "\r\n")
            for row in rows:
                f.write(",".join(fmt_cell(v) for v in row) + "\r\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


def write_jsonl(path: str | Path, records: Sequence[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            for rec in records:
                f.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_id() -> str:
    """git describe of the working tree when available, else the package
    version; embedded in summaries to pin the code that produced them."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=here, capture_output=True, text=True, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from .. import __version__
    return f"branchsel-{__version__}"


def mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    if x.size == 1:
        return float(x[0]), math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))
