import filecmp
from pathlib import Path

from orcasim.batch import read_log, run_batch
from orcasim.engine import head_on_scenario
from orcasim.sensing import NoiseModel

ZERO = NoiseModel(sigma_pixel=0.0, sigma_dist_0=0.0, sigma_selfvel=0.0,
                  dist_bias_coeff=0.0)


def _all_files(root: Path) -> list[Path]:
    return sorted(p for p in root.rglob("*") if p.is_file())


def test_worker_count_invariance(tmp_path):
    sc = head_on_scenario(0, noise=ZERO)
    seeds = [0, 1, 2, 3]
    d1 = tmp_path / "w1"
    d2 = tmp_path / "w2"
    r1 = run_batch(sc, seeds, noise_sweep=[0.0, 0.4], out_dir=d1, workers=1)
    r2 = run_batch(sc, seeds, noise_sweep=[0.0, 0.4], out_dir=d2, workers=2)
    f1, f2 = _all_files(d1), _all_files(d2)
    assert [p.relative_to(d1) for p in f1] == [p.relative_to(d2) for p in f2]
    for a, b in zip(f1, f2):
        assert filecmp.cmp(a, b, shallow=False), f"{a} differs"
    assert [r.task for r in r1] == [r.task for r in r2]


def test_batch_layout_and_counts(tmp_path):
    sc = head_on_scenario(0, noise=ZERO)
    results = run_batch(sc, [0, 1], noise_sweep=[0.0, 0.1],
                        out_dir=tmp_path, workers=1)
    assert len(results) == 4
    assert (tmp_path / "runs" / "sigma_0" / "seed_0000.jsonl").exists()
    assert (tmp_path / "runs" / "sigma_0.1" / "seed_0001.jsonl").exists()
    assert (tmp_path / "summary_sigma_0.csv").exists()
    assert (tmp_path / "summary_sigma_0.1.csv").exists()
    assert (tmp_path / "sweep.csv").exists()
    assert all(r.error is None and not r.aborted for r in results)


def test_empty_sweep_uses_scenario_noise(tmp_path):
    sc = head_on_scenario(0, noise=ZERO)
    results = run_batch(sc, [0], noise_sweep=None, out_dir=tmp_path, workers=1)
    assert len(results) == 1
    assert results[0].task.noise_level is None
    assert (tmp_path / "runs" / "base" / "seed_0000.jsonl").exists()
    assert (tmp_path / "summary_base.csv").exists()
    assert not (tmp_path / "sweep.csv").exists()
    # the written log carries the scenario's own (zero) noise
    log = read_log(results[0].log_path)
    assert log.header["scenario"]["noise"]["sigma_selfvel"] == 0.0


def test_sweep_level_overrides_selfvel_only(tmp_path):
    sc = head_on_scenario(0, noise=ZERO)
    results = run_batch(sc, [0], noise_sweep=[0.2], out_dir=tmp_path, workers=1)
    log = read_log(results[0].log_path)
    noise = log.header["scenario"]["noise"]
    assert noise["sigma_selfvel"] == 0.2
    assert noise["sigma_pixel"] == 0.0  # other channels untouched


def test_batch_continues_past_failures(tmp_path):
    # seed-dependent sabotage is hard to arrange through the public API, so
    # break one task by making its scenario unbuildable: duration <= 0 fails
    # validation only when the dict round-trip runs inside the worker.
    sc = head_on_scenario(0, noise=ZERO)
    results = run_batch(sc, [0, 1], out_dir=tmp_path, workers=1)
    assert all(r.error is None for r in results)

    import orcasim.batch as batch_mod
    sdict = batch_mod.scenario_to_dict(sc)
    sdict["duration"] = -1.0
    bad = batch_mod._execute(sdict, batch_mod.BatchTask(0, 0, None), str(tmp_path))
    assert bad.error is not None
    assert bad.classification is None


def test_read_log_round_trip(tmp_path):
    sc = head_on_scenario(2, noise=ZERO)
    results = run_batch(sc, [2], out_dir=tmp_path, workers=1)
    log = read_log(results[0].log_path)
    assert log.header["scenario"]["seed"] == 2
    assert log.end["kind"] == "end"
    assert len(log.records) == log.end["ticks"]
