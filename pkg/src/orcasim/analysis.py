"""Offline statistics over run logs.

Dance detection (same-side avoidance), run categorization, convergence-rate
fitting, and noise-sweep aggregation. Everything here is a pure function of
the RunLog contents; re-running on the same log yields identical output.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .engine import RunLog

SMOOTH = "SmoothAvoidance"
DANCE = "ReciprocalDance"
ONE_NONCOOP = "OneNonCooperative"
BOTH_NONCOOP = "BothNonCooperative"

DANCE_MIN_TICKS = 3  # single-tick sign flips from LP tie-breaking are not dances


@dataclass(frozen=True)
class RunClassification:
    label: str
    dance_events: tuple[int, ...]  # ticks inside qualifying blocks
    min_clearance: float
    collided: bool
    convergence_rate: float | None


def _agent_ids(log: RunLog) -> list[str]:
    return [a["id"] for a in log.header["scenario"]["agents"]]


def _max_range(log: RunLog) -> float:
    return float(log.header["scenario"]["camera"]["max_range"])


def _avoidance_u(agent_rec: dict, neighbor: str) -> np.ndarray | None:
    """u toward neighbor if that plane is active this tick, else None."""
    for entry in agent_rec["avoidance"]:
        if entry["neighbor"] == neighbor and entry["active"]:
            return np.asarray(entry["u"], dtype=float)
    return None


def _dance_predicate_ticks(log: RunLog, i: str, j: str) -> list[int]:
    """Ticks where i and j both push the same way against each other.

    Both planes must be active; the sign test uses the pair's scaled
    velocity space, which is where u was computed and logged.
    """
    ticks = []
    for rec in log.records:
        u_i = _avoidance_u(rec["agents"][i], j)
        u_j = _avoidance_u(rec["agents"][j], i)
        if u_i is None or u_j is None:
            continue
        if float(np.dot(u_i, u_j)) > 0.0:
            ticks.append(rec["tick"])
    return ticks


def _consecutive_blocks(ticks: Sequence[int]) -> list[tuple[int, int]]:
    """Maximal runs of consecutive tick numbers as (first, last) pairs."""
    blocks: list[tuple[int, int]] = []
    start = prev = None
    for t in ticks:
        if prev is not None and t == prev + 1:
            prev = t
            continue
        if start is not None:
            blocks.append((start, prev))
        start = prev = t
    if start is not None:
        blocks.append((start, prev))
    return blocks


def detect_dance_events(log: RunLog, min_ticks: int = DANCE_MIN_TICKS
                        ) -> list[tuple[int, int]]:
    """Debounced dance events as (first_tick, last_tick) blocks.

    Evaluated per unordered pair; with more than two agents the blocks of
    all pairs are merged (overlaps collapse through the tick set).
    """
    ids = _agent_ids(log)
    ticks: set[int] = set()
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            raw = _dance_predicate_ticks(log, ids[a], ids[b])
            for first, last in _consecutive_blocks(raw):
                if last - first + 1 >= min_ticks:
                    ticks.update(range(first, last + 1))
    return _consecutive_blocks(sorted(ticks))


def detect_dance(log: RunLog, min_ticks: int = DANCE_MIN_TICKS) -> list[int]:
    """All ticks belonging to debounced dance events."""
    out: list[int] = []
    for first, last in detect_dance_events(log, min_ticks):
        out.extend(range(first, last + 1))
    return out


def _held_track_in_range(log: RunLog, observer: str, target: str) -> bool:
    """Did observer ever hold a track of target while truly within range?"""
    rng = _max_range(log)
    for rec in log.records:
        dist = float(np.linalg.norm(
            np.asarray(rec["agents"][target]["pos"])
            - np.asarray(rec["agents"][observer]["pos"])))
        if dist > rng:
            continue
        belief = rec["agents"][observer]["belief"]
        if belief is None:
            continue
        if any(tr["target"] == target for tr in belief["tracks"]):
            return True
    return False


def min_clearance(log: RunLog) -> float:
    """Smallest scaled separation over the run (inf if never defined)."""
    best = math.inf
    for rec in log.records:
        sep = rec["min_separation"]
        if sep is not None:
            best = min(best, sep)
    return best


def classify(log: RunLog) -> RunClassification:
    """Categorize a two-agent run.

    Cooperation is judged from the log, not the scenario flags: an agent
    that never held a track of the other while within sensing range never
    yielded to it, whatever the config said.
    """
    ids = _agent_ids(log)
    if len(ids) != 2:
        raise ValueError(f"classification needs a 2-agent run, got {len(ids)}")
    i, j = ids
    held_i = _held_track_in_range(log, i, j)
    held_j = _held_track_in_range(log, j, i)
    dance_ticks = detect_dance(log)
    clearance = min_clearance(log)
    collided = clearance < 1.0
    rate = None
    if not held_i or not held_j:
        label = BOTH_NONCOOP if not (held_i or held_j) else ONE_NONCOOP
        if label == ONE_NONCOOP:
            observer, target = (i, j) if held_i else (j, i)
            rate = fit_convergence(log, (observer, target))
    elif dance_ticks:
        label = DANCE
    else:
        label = SMOOTH
    return RunClassification(label=label,
                             dance_events=tuple(dance_ticks),
                             min_clearance=clearance,
                             collided=collided,
                             convergence_rate=rate)


def fit_rate(times: Sequence[float], residuals: Sequence[float],
             floor: float = 1e-12) -> float | None:
    """Least-squares decay rate of residuals, positive when converging.

    Fits log(residual) against time, skipping entries at or below floor
    (converged tail contributes only rounding noise). Needs at least two
    usable points.
    """
    t, r = np.asarray(times, dtype=float), np.asarray(residuals, dtype=float)
    keep = r > floor
    if int(keep.sum()) < 2:
        return None
    slope = np.polyfit(t[keep], np.log(r[keep]), 1)[0]
    return float(-slope)


def fit_convergence(log: RunLog, pair: tuple[str, str]) -> float | None:
    """Decay rate of the relative velocity toward its converged value.

    The interval is the longest consecutive block of ticks where the
    observer's plane against the target is active; the converged relative
    velocity is taken at the end of that block. Shorter than 10 ticks
    means no estimate; an interval that starts already converged is
    degenerate and reports 0.0.
    """
    observer, target = pair
    active_ticks = [rec["tick"] for rec in log.records
                    if _avoidance_u(rec["agents"][observer], target) is not None]
    blocks = _consecutive_blocks(active_ticks)
    if not blocks:
        return None
    first, last = max(blocks, key=lambda b: b[1] - b[0])
    if last - first + 1 < 10:
        return None
    by_tick = {rec["tick"]: rec for rec in log.records}
    times, rel = [], []
    for t in range(first, last + 1):
        rec = by_tick[t]
        v_i = np.asarray(rec["agents"][observer]["vel"], dtype=float)
        v_j = np.asarray(rec["agents"][target]["vel"], dtype=float)
        times.append(rec["time"])
        rel.append(v_i - v_j)
    v_star = rel[-1]
    residuals = [float(np.linalg.norm(v - v_star)) for v in rel]
    if max(residuals) < 1e-8:
        return 0.0  # degenerate: nothing left to converge
    # The tail equals v_star by construction; let fit_rate's floor drop it.
    rate = fit_rate(times, residuals, floor=1e-9 * max(residuals))
    return rate


def binomial_ci(successes: int, trials: int) -> tuple[float, float]:
    """95% Wilson score interval for a binomial fraction."""
    if trials == 0:
        return (0.0, 1.0)
    z = 1.959963984540054
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials
                                   + z * z / (4 * trials * trials))
    # At the extremes the bound is exactly the endpoint; cancellation
    # otherwise leaves ~1e-18 residue that looks wrong in reports.
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return (lo, hi)


def nondecreasing_within_ci(counts: Sequence[tuple[int, int]]) -> bool:
    """True unless some step decreases beyond what its CIs can explain.

    counts is a sequence of (successes, trials) per sweep level; a step
    down only violates monotonicity when the intervals are disjoint.
    """
    for (k0, n0), (k1, n1) in zip(counts, counts[1:]):
        lo0, _ = binomial_ci(k0, n0)
        _, hi1 = binomial_ci(k1, n1)
        if hi1 < lo0:
            return False
    return True


def summary_row(seed: int, result: RunClassification) -> dict:
    events = _consecutive_blocks(sorted(result.dance_events))
    return {
        "seed": seed,
        "label": result.label,
        "min_clearance": result.min_clearance,
        "dance_event_count": len(events),
        "convergence_rate": ("" if result.convergence_rate is None
                             else result.convergence_rate),
    }


SUMMARY_FIELDS = ["seed", "label", "min_clearance", "dance_event_count",
                  "convergence_rate"]
SWEEP_FIELDS = ["noise_level", "dance_fraction", "collision_fraction",
                "mean_min_clearance", "run_count"]


def write_summary_csv(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def sweep_summary(runs_by_level: dict[float, Sequence[RunClassification]]
                  ) -> dict[float, dict]:
    out: dict[float, dict] = {}
    for level in sorted(runs_by_level):
        results = runs_by_level[level]
        n = len(results)
        danced = sum(1 for r in results if r.dance_events)
        collided = sum(1 for r in results if r.collided)
        clear = [r.min_clearance for r in results if math.isfinite(r.min_clearance)]
        out[level] = {
            "noise_level": level,
            "dance_fraction": danced / n if n else 0.0,
            "collision_fraction": collided / n if n else 0.0,
            "mean_min_clearance": (sum(clear) / len(clear)) if clear else math.nan,
            "run_count": n,
        }
    return out


def write_sweep_csv(path: str | Path, summary: dict[float, dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        writer.writeheader()
        for level in sorted(summary):
            writer.writerow(summary[level])
