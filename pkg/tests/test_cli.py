import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

from vfaqmri import cli, pipeline
from vfaqmri.config import resolve
from vfaqmri.gamp import GampDivergence
from vfaqmri.io import read_bundle
from vfaqmri.metrics import MetricsTable

SMALL = ["--shape", "32,32"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "data"
    assert cli.main(["simulate", *SMALL, "--seed", "0", "--out", str(out)]) == 0
    return out


def _digest(directory, names):
    h = hashlib.sha256()
    for n in names:
        h.update((Path(directory) / f"{n}.bin").read_bytes())
    return h.hexdigest()


def test_simulate_outputs(data_dir):
    for n in ("z0", "t1", "t2s", "mask", "images", "kspace"):
        assert (data_dir / f"{n}.bin").exists() and (data_dir / f"{n}.json").exists()
    cfg = json.loads((data_dir / "config.json").read_text())
    assert cfg["phantom"]["shape"] == [32, 32] and cfg["derived"]["noise_tau"] > 0
    k, role = read_bundle(data_dir / "kspace")
    assert role == "kspace_full" and k.shape == (3, 4, 32, 32) and k.dtype == np.complex64


def test_sample_outputs(tmp_path):
    out = tmp_path / "m"
    assert cli.main(["sample", *SMALL, "--rate", "0.3", "--scheme", "u2", "--calib", "8", "--seed", "4",
                     "--fa", "2", "--echoes", "3", "--out", str(out)]) == 0
    masks, _ = read_bundle(out / "masks")
    assert masks.shape == (2, 3, 32, 32)
    cov = json.loads((out / "coverage.json").read_text())
    assert len(cov["rates"]) == 6 and all(abs(r - 0.3) <= 0.005 for r in cov["rates"])
    assert json.loads((out / "config.json").read_text())["sampling"]["seed"] == 4


# frozen digest of the LSQ reconstruction bundles of the 32 x 32 fixture; FFT or BLAS
# builds that round differently will change it
LSQ_DIGEST = "59a442548d651dca82c480e351ad1a922a5b49dbce8ac70d82c543b1410249ce"


def test_lsq_reconstruction_is_deterministic(data_dir, tmp_path):
    args = ["reconstruct", "--data", str(data_dir), "--method", "lsq", "--rate", "0.3", "--calib", "8"]
    assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--out", str(tmp_path / "b")]) == 0
    names = ("images", "z0", "t1", "t2s", "mask")
    da, db = _digest(tmp_path / "a", names), _digest(tmp_path / "b", names)
    assert da == db
    assert da == LSQ_DIGEST
    log = json.loads((tmp_path / "a" / "log.json").read_text())
    assert log["method"] == "lsq" and len(log["residual"]) >= 1
    cfg = json.loads((tmp_path / "a" / "config.json").read_text())
    assert cfg == resolve({}, {"phantom.shape": None, "sampling.rate": 0.3, "sampling.calib": 8,
                               "solver.method": "lsq"})


def test_reconstruct_with_masks_dir(data_dir, tmp_path):
    m = tmp_path / "m"
    assert cli.main(["sample", *SMALL, "--rate", "0.3", "--calib", "8", "--out", str(m)]) == 0
    assert cli.main(["reconstruct", "--data", str(data_dir), "--masks", str(m), "--method", "l1",
                     "--out", str(tmp_path / "r")]) == 0
    log = json.loads((tmp_path / "r" / "log.json").read_text())
    assert len(log["objective"]) == 100


def test_missing_input_exit_code_and_no_partial_output(tmp_path, capsys):
    out = tmp_path / "r"
    assert cli.main(["reconstruct", "--data", str(tmp_path / "nope"), "--out", str(out)]) == 2
    assert not out.exists() and not list(tmp_path.iterdir())
    assert "data error" in capsys.readouterr().err


def test_corrupt_bundle_is_data_error(data_dir, tmp_path):
    bad = tmp_path / "bad"
    bad.mkdir()
    for f in data_dir.iterdir():
        (bad / f.name).write_bytes(f.read_bytes())
    (bad / "kspace.bin").write_bytes(b"\0" * 10)
    assert cli.main(["reconstruct", "--data", str(bad), "--method", "lsq", "--out", str(tmp_path / "r")]) == 2
    assert not (tmp_path / "r").exists()


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["simulate"],
    ["simulate", "--shape", "32", "--out", "x"],
    ["reconstruct", "--data", "d", "--out", "o", "--scheme", "U7"],
    ["reconstruct", "--data", "d", "--out", "o", "--rate", "abc"],
])
def test_usage_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(argv) == 1


def test_config_file_and_unknown_key(tmp_path, data_dir):
    c = tmp_path / "c.json"
    c.write_text(json.dumps({"solver": {"lsq": {"max_iters": 5}}, "sampling": {"rate": 0.3, "calib": 8}}))
    out = tmp_path / "r"
    assert cli.main(["reconstruct", "--config", str(c), "--data", str(data_dir), "--method", "lsq",
                     "--out", str(out)]) == 0
    echoed = json.loads((out / "config.json").read_text())
    assert echoed["solver"]["lsq"]["max_iters"] == 5 and echoed["solver"]["method"] == "lsq"
    c.write_text(json.dumps({"solver": {"lsq": {"iters": 5}}}))
    assert cli.main(["reconstruct", "--config", str(c), "--data", str(data_dir), "--out", str(tmp_path / "s")]) == 1
    assert cli.main(["reconstruct", "--config", str(tmp_path / "none.json"), "--data", str(data_dir),
                     "--out", str(tmp_path / "s")]) == 2


def test_divergence_exit_code(data_dir, tmp_path, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise GampDivergence("residual grew")
    monkeypatch.setattr(pipeline, "run_method", boom)
    out = tmp_path / "r"
    assert cli.main(["reconstruct", "--data", str(data_dir), "--calib", "8", "--out", str(out)]) == 3
    assert not out.exists()
    assert "solver diverged" in capsys.readouterr().err


def test_evaluate_and_render(data_dir, tmp_path, capsys):
    r = tmp_path / "r"
    assert cli.main(["reconstruct", "--data", str(data_dir), "--method", "lsq", "--rate", "0.3", "--calib", "8",
                     "--out", str(r)]) == 0
    table = tmp_path / "t.csv"
    assert cli.main(["evaluate", "--est", str(r), "--ref", str(data_dir), "--out", str(table)]) == 0
    t = MetricsTable.from_csv(table.read_text())
    assert t.columns == [(0.3, "lsq")] and len(t.rows) == 3
    assert 0 < t.get("t1", "U1", 0.3, "lsq") < 1
    capsys.readouterr()
    assert cli.main(["render", "--in", str(r / "t1"), "--min", "0", "--max", "5000", "--ref", str(data_dir / "t1"),
                     "--out", str(tmp_path / "t1.pgm")]) == 0
    assert (tmp_path / "t1.pgm").read_bytes().startswith(b"P5\n32 32\n255\n")
    assert (tmp_path / "t1_err.pgm").exists()
    assert cli.main(["render", "--in", str(r / "t1"), "--min", "1", "--max", "1", "--out", str(tmp_path / "x.pgm")]) == 2
    assert cli.main(["render", "--in", str(r / "images"), "--min", "0", "--max", "1",
                     "--out", str(tmp_path / "x.pgm")]) == 2


def test_trends_degenerate_sweep_matches_reconstruct(data_dir, tmp_path):
    out = tmp_path / "tr"
    argv = ["trends", "--data", str(data_dir), "--methods", "lsq", "--schemes", "U2", "--rates", "0.3",
            "--patterns", "vd", "--calib", "8", "--out", str(out)]
    assert cli.main(argv) == 0
    r = tmp_path / "r"
    assert cli.main(["reconstruct", "--data", str(data_dir), "--method", "lsq", "--scheme", "U2", "--rate", "0.3",
                     "--calib", "8", "--out", str(r)]) == 0
    assert cli.main(["evaluate", "--est", str(r), "--ref", str(data_dir), "--out", str(tmp_path / "t.csv")]) == 0
    assert (out / "table_vd.csv").read_text() == (tmp_path / "t.csv").read_text()
    cells = list((out / "cells").iterdir())
    assert len(cells) == 1
    for name in ("t1", "r2s", "z0"):
        assert (cells[0] / f"{name}.pgm").exists() and (cells[0] / f"{name}_err.pgm").exists()


def test_trends_resume_and_failed_cells(data_dir, tmp_path, capsys):
    out = tmp_path / "tr"
    cfg = resolve({"sampling": {"calib": 8}, "trends": {"methods": ["lsq"], "schemes": ["U1", "U4"],
                                                        "rates": [0.01, 0.3], "patterns": ["vd"]}})
    res = pipeline.trends(cfg, out, data_dir=data_dir)
    assert res["computed"] == 4
    status = sorted(v["status"] for v in res["cells"].values())
    assert status == ["failed", "failed", "ok", "ok"]
    text = (out / "table_vd.csv").read_text()
    assert "failed" in text and text.count("\n") == 7
    mtime = {p: p.stat().st_mtime_ns for p in (out / "cells").rglob("*") if p.is_file()}
    again = pipeline.trends(cfg, out, data_dir=data_dir)
    # only the failed cells are retried; completed cells are untouched
    assert again["computed"] == 2
    for p, t in mtime.items():
        if "0.3-" in p.parent.name:
            assert p.stat().st_mtime_ns == t
    assert (out / "table_vd.csv").read_text() == text
    assert json.loads((out / "reversal.json").read_text())["vd"]["0.01:lsq"]["status"] == "INVESTIGATE"


def test_trends_resume_complete_sweep_is_free(data_dir, tmp_path):
    cfg = resolve({"sampling": {"calib": 8}, "trends": {"methods": ["lsq"], "schemes": ["U1", "U2", "U3", "U4"],
                                                        "rates": [0.3], "patterns": ["vd", "pd"]}})
    first = pipeline.trends(cfg, tmp_path / "tr", data_dir=data_dir)
    assert first["computed"] == 8 and all(v["status"] == "ok" for v in first["cells"].values())
    t0 = time.perf_counter()
    second = pipeline.trends(cfg, tmp_path / "tr", data_dir=data_dir)
    assert second["computed"] == 0 and time.perf_counter() - t0 < 5
    assert set(first["reversal"]) == {"vd", "pd"}
    assert first["tables"]["vd"].is_complete() and len(first["tables"]["vd"].rows) == 12


def test_trends_simulates_its_own_data(tmp_path):
    argv = ["trends", *SMALL, "--methods", "lsq", "--schemes", "U1", "--rates", "0.3", "--patterns", "vd",
            "--calib", "8", "--out", str(tmp_path / "tr")]
    assert cli.main(argv) == 0
    assert (tmp_path / "tr" / "data" / "kspace.bin").exists()
    assert cli.main(argv) == 0


def test_trends_worker_pool_matches_serial(data_dir, tmp_path):
    base = {"sampling": {"calib": 8}, "trends": {"methods": ["lsq", "l1"], "schemes": ["U1", "U3"],
                                                 "rates": [0.3], "patterns": ["vd"]}}
    serial = pipeline.trends(resolve(base), tmp_path / "a", data_dir=data_dir)
    pooled = pipeline.trends(resolve(base, {"trends.workers": 2}), tmp_path / "b", data_dir=data_dir)
    assert serial["tables"]["vd"].to_csv() == pooled["tables"]["vd"].to_csv()
    assert (tmp_path / "a" / "table_vd.csv").read_bytes() == (tmp_path / "b" / "table_vd.csv").read_bytes()


def test_amp_pe_end_to_end_128(tmp_path):
    """Full-size smoke run of the joint method under a runtime budget."""
    data = tmp_path / "data"
    assert cli.main(["simulate", "--shape", "128,128", "--out", str(data)]) == 0
    out = tmp_path / "amp"
    t0 = time.perf_counter()
    assert cli.main(["reconstruct", "--data", str(data), "--method", "amp-pe", "--rate", "0.15", "--scheme", "u2",
                     "--out", str(out)]) == 0
    assert time.perf_counter() - t0 < 300
    for n in ("images", "z0", "t1", "t2s", "mask", "degenerate"):
        assert (out / f"{n}.bin").exists()
    log = json.loads((out / "log.json").read_text())
    for key in ("residual", "lambda", "tau_w", "map_change"):
        assert len(log[key]) >= 1
    assert len(log["lambda"][0]) == 12
    assert json.loads((out / "config.json").read_text())["sampling"]["scheme"] == "U2"
