import json

import numpy as np
import pytest

from sinrnet import envelopes
from sinrnet.errors import ParameterError
from sinrnet.estimators import SinrClustering
from sinrnet.geometry import density, validate_r_clustering
from sinrnet.harness import (ExperimentConfig, fit, generate_network, network_report, read_rows,
                             rows_csv, run_experiment, spontaneous_pattern, spread_sources,
                             success_from_trace)
from sinrnet.sinr_phy import SinrParams


def test_grid_and_line_reports():
    rep = network_report(generate_network({"kind": "grid", "rows": 5, "cols": 5}))
    assert (rep["n"], rep["D"], rep["delta"]) == (25, 8, 4)
    rep = network_report(generate_network({"kind": "line", "n": 9}))
    assert (rep["n"], rep["D"], rep["delta"]) == (9, 8, 2)


def test_uniform_generator_is_connected_and_seeded():
    a = generate_network({"kind": "uniform", "max_degree": 30}, seed=3)
    b = generate_network({"kind": "uniform", "max_degree": 30}, seed=3)
    assert np.array_equal(a.pos, b.pos) and np.array_equal(a.ids, b.ids)
    rep = network_report(a)
    assert rep["connected"] and rep["delta"] <= 30
    assert 40 <= rep["n"] <= 300
    assert rep["density"] == density(a)


def test_unknown_kind_and_task():
    with pytest.raises(ParameterError):
        generate_network({"kind": "torus"})
    with pytest.raises(ParameterError):
        ExperimentConfig("juggle", {"kind": "line", "n": 3})
    with pytest.raises(ParameterError):
        ExperimentConfig("local", {"kind": "line", "n": 3}, seeds=[])


def test_single_cell_single_row(tmp_path):
    cfg = ExperimentConfig("global", {"kind": "line", "n": 5}, out=str(tmp_path / "m.csv"))
    rows = run_experiment(cfg)
    assert len(rows) == 1 and rows[0].success and rows[0].D == 4
    back = read_rows(tmp_path / "m.csv")
    assert back[0].rounds_used == rows[0].rounds_used


def test_rerun_is_byte_identical(tmp_path):
    cfg = ExperimentConfig("local", {"kind": "uniform", "n": 40, "avg_degree": 8},
                           grid={"avg_degree": [6, 9]}, seeds=[0, 1])
    a = run_experiment(cfg, out=str(tmp_path / "a.csv"))
    b = run_experiment(cfg, out=str(tmp_path / "b.csv"))
    assert len(a) == 4
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert rows_csv(a) == rows_csv(b)


def test_generator_errors_become_rows(tmp_path):
    cfg = ExperimentConfig("local", {"kind": "uniform", "n": 40, "side": 100.0, "retries": 2},
                           out=str(tmp_path / "m.csv"))
    rows = run_experiment(cfg)
    assert not rows[0].success and "ConstructionError" in rows[0].error


@pytest.mark.parametrize("task,spec", [
    ("local", {"kind": "uniform", "n": 30, "avg_degree": 8}),
    ("global", {"kind": "grid", "rows": 3, "cols": 4}),
    ("cluster", {"kind": "uniform", "n": 30, "avg_degree": 8}),
    ("wakeup", {"kind": "line", "n": 5}),
    ("leader", {"kind": "uniform", "n": 20, "avg_degree": 6}),
])
def test_success_recomputed_from_trace(tmp_path, task, spec):
    cfg = ExperimentConfig(task, spec, trace_dir=str(tmp_path / "tr"), out=None)
    rows = run_experiment(cfg)
    files = list((tmp_path / "tr").iterdir())
    assert len(files) == 1
    assert success_from_trace(files[0]) == rows[0].success


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SINRNET_OUTPUT_DIR", str(tmp_path / "o"))
    run_experiment(ExperimentConfig("global", {"kind": "line", "n": 3}, out="x.csv"))
    assert (tmp_path / "o" / "x.csv").exists()


def test_spread_sources_and_patterns():
    net = generate_network({"kind": "uniform", "n": 80, "avg_degree": 8}, seed=1)
    src = spread_sources(net, 0, 4)
    eps = net.params.epsilon
    for i, a in enumerate(src):
        for b in src[i + 1:]:
            assert net.distance(a, b) > 1 - eps
    pat = spontaneous_pattern(net, 2, 100)
    assert pat == spontaneous_pattern(net, 2, 100)
    assert all(0 <= r < 100 for r in pat.values())


def test_fit_takes_the_largest_ratio(tmp_path):
    rows = run_experiment(ExperimentConfig("global", {"kind": "line"}, grid={"n": [4, 8]}, out=None))
    out = tmp_path / "env.json"
    consts = fit(rows, str(out))
    N = SinrParams().id_bound
    want = max(r.rounds_used / envelopes.shape("global", r.D, r.delta, N) for r in rows)
    assert consts["C"]["global"] == pytest.approx(want)
    assert json.loads(out.read_text())["C"]["global"] == pytest.approx(want)
    for r in rows:
        assert r.rounds_used <= envelopes.bound("global", r.D, r.delta, N,
                                                constants=envelopes.load_constants(str(out)))


def test_envelope_shapes():
    assert envelopes.log_star(1) == 0 and envelopes.log_star(2) == 1
    assert envelopes.log_star(16) == 3 and envelopes.log_star(65536) == 4
    N = 1024
    assert envelopes.shape("leader", 3, 4, N) == pytest.approx(envelopes.shape("global", 3, 4, N)
                                                              * np.log2(N))
    assert envelopes.shape("local", 99, 4, N) == envelopes.shape("local", 1, 4, N)


def test_estimator_matches_protocol():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 3, (60, 2))
    est = SinrClustering().fit(X)
    assert est.labels_.shape == (60,) and est.labels_.min() == 0
    assert est.n_clusters_ == len(est.center_ids_) == est.labels_.max() + 1
    assert validate_r_clustering(est.network_, est.assignment_, 1.0, 0.2).ok
    assert np.array_equal(est.predict(X), est.labels_)
    assert np.array_equal(SinrClustering().fit_predict(X), est.labels_)
    with pytest.raises(ValueError):
        SinrClustering().fit(rng.uniform(0, 1, (5, 3)))
