"""Batches of independent runs across seeds and a noise sweep.

Each run is a pure function of (scenario dict, seed, noise level), so the
batch farms tasks to a process pool and merges results by task index; the
output is identical for any worker count. The swept quantity is the true
self-velocity noise sigma, the channel the head-on study varies.
"""

from __future__ import annotations

import multiprocessing
import traceback
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .analysis import (RunClassification, classify, summary_row,
                       sweep_summary, write_summary_csv, write_sweep_csv)
from .engine import RunLog, run_scenario, scenario_from_dict, scenario_to_dict


@dataclass(frozen=True)
class BatchTask:
    index: int
    seed: int
    noise_level: float | None  # None: keep the scenario's own noise


@dataclass(frozen=True)
class RunResult:
    task: BatchTask
    log_path: str
    classification: RunClassification | None
    aborted: bool
    error: str | None


def _level_tag(level: float | None) -> str:
    return "base" if level is None else f"sigma_{level:g}"


def _log_path(out_dir: Path, task: BatchTask) -> Path:
    return out_dir / "runs" / _level_tag(task.noise_level) / f"seed_{task.seed:04d}.jsonl"


def _execute(scenario_dict: dict, task: BatchTask, out_dir: str) -> RunResult:
    """Run one task: build, simulate, write the log, classify."""
    path = _log_path(Path(out_dir), task)
    try:
        scenario = scenario_from_dict(scenario_dict)
        scenario = replace(scenario, seed=task.seed)
        if task.noise_level is not None:
            scenario = replace(scenario, noise=replace(
                scenario.noise, sigma_selfvel=task.noise_level))
        log = run_scenario(scenario)
        path.parent.mkdir(parents=True, exist_ok=True)
        log.write(str(path))
        result = classify(log) if len(scenario.agents) == 2 else None
        return RunResult(task, str(path), result, log.aborted, None)
    except Exception:
        return RunResult(task, str(path), None, False, traceback.format_exc(limit=4))


def _execute_star(args) -> RunResult:
    return _execute(*args)


def run_batch(scenario, seeds: Sequence[int],
              noise_sweep: Sequence[float] | None = None,
              out_dir: str | Path = "batch_out",
              workers: int = 1) -> list[RunResult]:
    """One run per (noise level, seed); logs and CSVs under out_dir.

    Empty/None noise_sweep keeps the scenario's single noise level. Rows
    come back ordered by task index however many workers ran them; a
    failed run is reported in its row and the batch continues.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    levels: list[float | None] = list(noise_sweep) if noise_sweep else [None]
    sdict = scenario_to_dict(scenario)
    tasks = [BatchTask(index=i, seed=seed, noise_level=level)
             for i, (level, seed) in enumerate(
                 (lv, sd) for lv in levels for sd in seeds)]
    args = [(sdict, t, str(out)) for t in tasks]

    if workers <= 1:
        results = [_execute_star(a) for a in args]
    else:
        # fork is fine: tasks share nothing and reseed from their own ids
        with multiprocessing.Pool(processes=workers) as pool:
            results = pool.map(_execute_star, args, chunksize=1)
    results.sort(key=lambda r: r.task.index)

    by_level: dict[float, list[RunClassification]] = {}
    for level in levels:
        rows = []
        for r in results:
            if r.task.noise_level != level or r.classification is None:
                continue
            rows.append(summary_row(r.task.seed, r.classification))
            if level is not None:
                by_level.setdefault(level, []).append(r.classification)
        write_summary_csv(out / f"summary_{_level_tag(level)}.csv", rows)
    if noise_sweep:
        write_sweep_csv(out / "sweep.csv", sweep_summary(by_level))
    return results


def read_log(path: str | Path) -> RunLog:
    """Parse a run log written by RunLog.write back into a RunLog."""
    import json

    header = None
    records: list[dict] = []
    end = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            kind = obj.get("kind")
            if kind == "header":
                header = obj
            elif kind in ("end", "abort"):
                end = obj
            else:
                records.append(obj)
    if header is None:
        raise ValueError(f"{path}: no header line")
    return RunLog(header=header, records=records, end=end)
