import csv
import json

import numpy as np
import pytest

from covertnav.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from covertnav.maps import build_cover_map, build_height_map, load_map, GridSpec
from covertnav.perception import identify_cover
from covertnav.rl.cql import CQLParams, cql_train, load_qfunction
from covertnav.rl.dataset import load_dataset
from covertnav.worldgen import World, load_cloud, save_cloud, save_world, sample_point_cloud


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps({
        "world": {"extent": [20, 20]},
        "dataset": {"worlds_per_scenario": 1, "behaviour": {"goal_range": [6, 12], "max_steps": 30}},
        "eval": {"trials": 1, "scenarios": ["urban"]},
        "placement": {"goal_range": [6, 14]},
    }))
    assert run("world", "--config", cfg, "--scenario", "mixed", "--seed", 2, "--out", d / "w") == EXIT_OK
    assert run("dataset", "--config", cfg, "--seed", 1, "--episodes", 3, "--augmentations", 1, "--out", d / "d.bin") == EXIT_OK
    assert run("train", "--config", cfg, "--dataset", d / "d.bin", "--seed", 0, "--epochs", 4, "--out", d / "q.json") == EXIT_OK
    assert run("eval", "--config", cfg, "--q", d / "q.json", "--seed", 3, "--out", d / "e") == EXIT_OK
    return d, cfg


def test_world_files_reload_and_repeat(pipeline, tmp_path):
    d, cfg = pipeline
    assert run("world", "--config", cfg, "--scenario", "mixed", "--seed", 2, "--out", tmp_path) == EXIT_OK
    for name in ("world.json", "cloud.txt"):
        assert (tmp_path / name).read_bytes() == (d / "w" / name).read_bytes()
    assert len(load_cloud(d / "w" / "cloud.txt")) > 0


def test_bad_extent_exits_nonzero(tmp_path, capsys):
    assert run("world", "--extent", 3, 3, "--out", tmp_path) == EXIT_CONFIG
    assert "extent" in capsys.readouterr().err


def test_maps_match_library(pipeline, tmp_path):
    d, cfg = pipeline
    assert run("maps", "--config", cfg, "--world", d / "w" / "world.json", "--cloud", d / "w" / "cloud.txt",
               "--goal", 15.5, 15.5, "--start", 3.5, 3.5, "--out", tmp_path) == EXIT_OK
    cloud = load_cloud(d / "w" / "cloud.txt")
    spec = GridSpec(20, 20)
    _, _, cover = identify_cover(cloud)
    ref = build_cover_map(cloud, sorted(cover), spec).values
    got = load_map(tmp_path / "cover.map").values
    assert np.array_equal(got, np.array([[float(format(v, ".9g")) for v in r] for r in ref]))
    ref_h = build_height_map(cloud, spec).values
    assert np.allclose(load_map(tmp_path / "height.map").values, ref_h, rtol=1e-8)
    assert (tmp_path / "threat.map").exists()


def test_maps_empty_world(tmp_path):
    w = World(12, 12)
    save_world(tmp_path / "w.json", w)
    save_cloud(tmp_path / "c.txt", sample_point_cloud(w, seed=0))
    assert run("maps", "--world", tmp_path / "w.json", "--cloud", tmp_path / "c.txt", "--out", tmp_path / "m") == EXIT_OK
    assert not load_map(tmp_path / "m" / "cover.map").values.any()


def test_dataset_header_and_determinism(pipeline, tmp_path):
    d, cfg = pipeline
    data = load_dataset(d / "d.bin")
    assert data.header["count"] == len(data) > 0
    assert run("dataset", "--config", cfg, "--seed", 1, "--episodes", 3, "--augmentations", 1, "--out", tmp_path / "d.bin") == EXIT_OK
    assert (tmp_path / "d.bin").read_bytes() == (d / "d.bin").read_bytes()
    assert run("dataset", "--config", cfg, "--seed", 1, "--episodes", 0, "--out", tmp_path / "e.bin") == EXIT_OK
    assert (tmp_path / "e.bin").read_bytes().count(b"\n") == 1


def test_train_matches_library_and_logs(pipeline):
    d, _ = pipeline
    rows = list(csv.reader(open(d / "q.loss.csv")))
    assert rows[0] == ["epoch", "td", "cql"] and len(rows) == 1 + 4
    direct = cql_train(load_dataset(d / "d.bin").transitions, CQLParams(epochs=4, seed=0))
    assert np.array_equal(load_qfunction(d / "q.json").values, direct.values)


def test_train_empty_dataset(pipeline, tmp_path):
    d, cfg = pipeline
    run("dataset", "--config", cfg, "--seed", 1, "--episodes", 0, "--out", tmp_path / "e.bin")
    assert run("train", "--dataset", tmp_path / "e.bin", "--seed", 0, "--out", tmp_path / "q.json") == EXIT_CONFIG


def test_eval_outputs(pipeline):
    d, _ = pipeline
    e = d / "e"
    traces = sorted((e / "traces").glob("*.jsonl"))
    assert len(traces) == 4
    trials = list(csv.DictReader(open(e / "trials.csv")))
    from covertnav.sim.episode import read_trace, replay_metrics

    for row in trials:
        t = read_trace(e / "traces" / f"{row['policy']}_{row['scenario']}_{int(row['trial']):03d}.jsonl")
        m = replay_metrics(t, 0.2)
        assert float(row["exposure"]) == m.threat_exposure
        assert float(row["cover_util"]) == m.cover_utilization
    comp = json.loads((e / "comparison.json").read_text())
    assert set(comp) == {"urban", "all"}


def test_eval_missing_q(tmp_path):
    assert run("eval", "--q", tmp_path / "none.json", "--seed", 0, "--out", tmp_path) == EXIT_IO


def test_export_viz(pipeline, tmp_path):
    d, _ = pipeline
    trace = sorted((d / "e" / "traces").glob("*.jsonl"))[0]
    n = sum(1 for _ in open(trace))
    (tmp_path / "empty.jsonl").write_text("")
    run("maps", "--world", d / "w" / "world.json", "--cloud", d / "w" / "cloud.txt", "--goal", 10.5, 10.5,
        "--start", 2.5, 2.5, "--out", tmp_path / "m")
    assert run("export-viz", "--trace", trace, tmp_path / "empty.jsonl", "--map", tmp_path / "m" / "threat.map",
               "--out", tmp_path / "v") == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "v" / "trajectories.csv")))
    assert sum(r["trace"] == trace.stem for r in rows) == n
    assert json.loads((tmp_path / "v" / "trajectories.json").read_text())["empty"] == []
    heat = json.loads((tmp_path / "v" / "threat_heatmap.json").read_text())
    assert np.array_equal(np.array(heat["values"]), load_map(tmp_path / "m" / "threat.map").values)
    assert run("export-viz", "--out", tmp_path / "v2") == EXIT_CONFIG
