"""How well an agent knows where its neighbor is.

Each agent runs a relative-state filter fed only by what its own camera
saw: a noisy pixel, a noisy distance, and a noisy read of its own
velocity. Distance noise grows with range, so the estimate should
sharpen as two agents close on each other. This script runs a noisy
head-on approach and compares the believed relative position against
the truth the whole way in.
"""

import numpy as np

from orcasim import Engine, head_on_scenario

eng = Engine(head_on_scenario(seed=3, duration=6.0, separation=10.0))
log = eng.run()

# Collect (true distance, estimation error, reported sigma) for agent a's
# track of agent b at every tick where a track exists.
rows = []
for rec in log.records:
    if rec.get("kind") != "tick":
        continue
    a = rec["agents"]["a"]
    b = rec["agents"]["b"]
    if a["belief"] is None:
        continue
    track = next((t for t in a["belief"]["tracks"] if t["target"] == "b"), None)
    if track is None:
        continue
    true_rel = np.array(b["pos"]) - np.array(a["pos"])
    err = float(np.linalg.norm(np.array(track["rel_pos"]) - true_rel))
    rows.append((float(np.linalg.norm(true_rel)), err, track["pos_sigma"]))

print(f"{len(rows)} ticks with an active track")

# Bin by true distance and report the mean error per bin. The trend is
# the point: far away the distance measurement is loose, up close it is
# tight, and the filter's own sigma should tell the same story.
edges = [8.0, 6.0, 4.0, 2.0, 0.0]
print(f"{'distance bin':>14}  {'mean err':>9}  {'mean sigma':>10}  {'ticks':>5}")
for hi, lo in zip(edges[:-1], edges[1:]):
    binned = [(e, s) for d, e, s in rows if lo <= d < hi]
    if not binned:
        continue
    errs = [e for e, _ in binned]
    sigmas = [s for _, s in binned]
    print(f"{lo:>5.0f} - {hi:<4.0f} m  {np.mean(errs):>9.4f}  "
          f"{np.mean(sigmas):>10.4f}  {len(binned):>5}")

# The filter never sees the true noise magnitudes, only its configured
# assumptions, yet the reported sigma stays honest enough to use for
# inflating the avoidance radius of a stale track.
close = [e for d, e, _ in rows if d < 3.0]
far = [e for d, e, _ in rows if d > 7.0]
if close and far:
    print(f"\nmean error beyond 7 m: {np.mean(far):.4f}")
    print(f"mean error inside 3 m: {np.mean(close):.4f}")
