import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from tvem.cli import main


def _write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def _trace(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def gmm_data(tmp_path):
    cfg = _write(tmp_path / "gen.json", {"model": "gmm", "C": 3, "D": 2, "N": 60, "seed": 5})
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "gen")]) == 0
    return tmp_path / "gen"


def test_generate_shape_and_determinism(tmp_path):
    cfg = _write(tmp_path / "gen.json", {"model": "gmm", "C": 3, "D": 2, "N": 40})
    for out in ("a", "b"):
        assert main(["generate", "--config", cfg, "--seed", "11", "--out", str(tmp_path / out)]) == 0
    for name in ("data.csv", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    lines = (tmp_path / "a" / "data.csv").read_text().splitlines()
    assert lines[0] == "d1,d2" and len(lines) == 41
    assert all(len(line.split(",")) == 2 for line in lines[1:])
    assert main(["generate", "--config", cfg, "--seed", "12", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "data.csv").read_bytes() != (tmp_path / "a" / "data.csv").read_bytes()


def test_generate_poisson_and_bsc(tmp_path):
    cfg = _write(tmp_path / "p.json", {"model": "poisson", "C": 2, "D": 3, "N": 10})
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "p")]) == 0
    rows = (tmp_path / "p" / "data.csv").read_text().splitlines()[1:]
    assert all(v.isdigit() for row in rows for v in row.split(","))
    cfg = _write(tmp_path / "b.json", {"model": "bsc", "H": 3, "D": 4, "N": 10})
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    truth = json.loads((tmp_path / "b" / "truth.json").read_text())
    assert np.asarray(truth["states"]).shape == (10, 3)


def test_generate_config_errors(tmp_path, capsys):
    cfg = _write(tmp_path / "bad.json", {"model": "gmm", "C": 3, "D": 2, "N": 0})
    assert main(["generate", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "field 'N'" in capsys.readouterr().err
    bad = tmp_path / "broken.json"
    bad.write_text('{"model": "gmm",\n  "C": }')
    assert main(["generate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert f"{bad}:2:" in capsys.readouterr().err
    cfg = _write(tmp_path / "u.json", {"model": "gmm", "C": 3, "D": 2, "N": 4, "colour": 1})
    assert main(["generate", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert main(["generate", "--out", str(tmp_path)]) == 2


def test_train_outputs_and_determinism(gmm_data, tmp_path):
    cfg = _write(tmp_path / "t.json", {"model": "gmm", "C": 3, "S": 2, "max_iter": 200, "eps_rel": 1e-10,
                                       "timing": False})
    data = str(gmm_data / "data.csv")
    for out in ("r1", "r2"):
        assert main(["train", data, "--config", cfg, "--seed", "2", "--out", str(tmp_path / out)]) == 0
    t1 = (tmp_path / "r1" / "trace.csv").read_bytes()
    assert t1 == (tmp_path / "r2" / "trace.csv").read_bytes()
    assert (tmp_path / "r1" / "params.json").read_bytes() == (tmp_path / "r2" / "params.json").read_bytes()
    rows = _trace(tmp_path / "r1" / "trace.csv")
    assert list(rows[0]) == ["iter", "F_after_E", "F_after_M", "wall_ms", "replacements"]
    F = np.array([[float(r["F_after_E"]), float(r["F_after_M"])] for r in rows]).ravel()
    assert np.all(np.diff(F) >= -1e-9 * (1 + np.abs(F[:-1])))
    manifest = json.loads((tmp_path / "r1" / "manifest.json").read_text())
    assert manifest["seed"] == 2 and manifest["digest"] == "sha256"
    assert len(manifest["inputs"]["data"]["sha256"]) == 64
    assert manifest["config"]["S"] == 2


def test_train_exit_code_on_max_iter(gmm_data, tmp_path):
    cfg = _write(tmp_path / "t.json", {"model": "gmm", "C": 3, "max_iter": 1, "eps_rel": 1e-300})
    assert main(["train", str(gmm_data / "data.csv"), "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_train_dimension_and_data_errors(gmm_data, tmp_path):
    cfg = _write(tmp_path / "t.json", {"model": "gmm", "C": 3, "D": 5})
    assert main(["train", str(gmm_data / "data.csv"), "--config", cfg, "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("d1,d2\n1.0,2.0\n3.0\n")
    cfg = _write(tmp_path / "t2.json", {"model": "gmm", "C": 1})
    assert main(["train", str(bad), "--config", cfg, "--out", str(tmp_path)]) == 2
    assert main(["train", str(tmp_path / "missing.csv"), "--config", cfg]) == 2


def test_tiny_dataset_under_a_second(tmp_path):
    data = tmp_path / "tiny.csv"
    values = np.random.default_rng(0).normal(size=(5, 2))
    data.write_text("d1,d2\n" + "\n".join(f"{a!r},{b!r}" for a, b in values.tolist()) + "\n")
    cfg = _write(tmp_path / "t.json", {"model": "gmm", "C": 2, "S": 2})
    t0 = time.perf_counter()
    code = main(["train", str(data), "--config", cfg, "--out", str(tmp_path / "o")])
    assert code in (0, 3) and time.perf_counter() - t0 < 1.0


def test_train_monotonicity_exit(gmm_data, tmp_path, monkeypatch):
    from tvem.models import GaussianMixture

    def bad_m_step(self, data, states, log_joints, params_old):
        return self.random_params(np.random.default_rng(0))

    monkeypatch.setattr(GaussianMixture, "m_step", bad_m_step)
    cfg = _write(tmp_path / "t.json", {"model": "gmm", "C": 3})
    out = tmp_path / "o"
    assert main(["train", str(gmm_data / "data.csv"), "--config", cfg, "--out", str(out)]) == 4
    dump = json.loads((out / "monotonicity_violation.json").read_text())
    assert dump["phase"] == "M-step"
    with pytest.warns(RuntimeWarning):
        code = main(["train", str(gmm_data / "data.csv"), "--config", cfg, "--out", str(out),
                     "--assert-monotone", "off", "--seed", "1"])
    assert code in (0, 3)


def test_train_resume(tmp_path):
    gen = _write(tmp_path / "g.json", {"model": "bsc", "H": 4, "D": 6, "N": 40})
    assert main(["generate", "--config", gen, "--out", str(tmp_path)]) == 0
    data = str(tmp_path / "data.csv")
    base = {"model": "bsc", "H": 4, "S": 3, "eps_rel": 1e-300, "timing": False,
            "estep": {"strategy": "hybrid"}}
    full = _write(tmp_path / "full.json", {**base, "max_iter": 10})
    part = _write(tmp_path / "part.json", {**base, "max_iter": 4, "checkpoint_every": 2})
    assert main(["train", data, "--config", full, "--out", str(tmp_path / "full")]) == 3
    assert main(["train", data, "--config", part, "--out", str(tmp_path / "part")]) == 3
    assert main(["train", data, "--config", full, "--out", str(tmp_path / "res"),
                 "--resume", str(tmp_path / "part" / "checkpoint.json")]) == 3
    assert (tmp_path / "res" / "trace.csv").read_bytes() == (tmp_path / "full" / "trace.csv").read_bytes()
    assert (tmp_path / "res" / "params.json").read_bytes() == (tmp_path / "full" / "params.json").read_bytes()


def test_eval_cases(gmm_data, tmp_path):
    data = str(gmm_data / "data.csv")
    cfg = _write(tmp_path / "t.json", {"model": "gmm", "C": 3, "S": 2, "max_iter": 500, "eps_rel": 1e-14})
    train_out = tmp_path / "train"
    main(["train", data, "--config", cfg, "--out", str(train_out)])
    last = _trace(train_out / "trace.csv")[-1]
    assert main(["eval", data, str(train_out / "params.json"), "--config", cfg,
                 "--states", str(train_out / "states.json"), "--out", str(tmp_path / "e")]) == 0
    m = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert abs(m["F_states"] - float(last["F_after_M"])) <= 1e-9 * (1 + abs(m["F_states"]))
    assert abs(m["F"] - float(last["F_after_M"])) <= 1e-9 * (1 + abs(m["F"]))
    assert m["F"] <= m["log_likelihood"] + 1e-9

    full = _write(tmp_path / "full.json", {"S": 3})
    assert main(["eval", data, str(gmm_data / "truth.json"), "--config", full, "--out", str(tmp_path / "f")]) == 0
    m = json.loads((tmp_path / "f" / "metrics.json").read_text())
    assert abs(m["gap"]) <= 1e-9 * (1 + abs(m["F"]))


def test_eval_random_params_bound(tmp_path):
    gen = _write(tmp_path / "g.json", {"model": "bsc", "H": 5, "D": 4, "N": 30})
    assert main(["generate", "--config", gen, "--seed", "4", "--out", str(tmp_path / "a")]) == 0
    assert main(["generate", "--config", gen, "--seed", "9", "--out", str(tmp_path / "b")]) == 0
    cfg = _write(tmp_path / "e.json", {"S": 3, "estep": {"strategy": "blind"}})
    assert main(["eval", str(tmp_path / "a" / "data.csv"), str(tmp_path / "b" / "truth.json"),
                 "--config", cfg, "--out", str(tmp_path / "m")]) == 0
    m = json.loads((tmp_path / "m" / "metrics.json").read_text())
    assert m["F"] <= m["log_likelihood"] + 1e-9 and m["gap"] >= -1e-9


def test_eval_dimension_mismatch(gmm_data, tmp_path):
    gen = _write(tmp_path / "g.json", {"model": "gmm", "C": 2, "D": 3, "N": 5})
    assert main(["generate", "--config", gen, "--out", str(tmp_path / "o")]) == 0
    assert main(["eval", str(gmm_data / "data.csv"), str(tmp_path / "o" / "truth.json")]) == 2


def test_compare_report(tmp_path):
    gen = _write(tmp_path / "g.json", {"model": "bsc", "H": 3, "D": 4, "N": 30})
    assert main(["generate", "--config", gen, "--out", str(tmp_path)]) == 0
    cfg = _write(tmp_path / "c.json", {"model": "bsc", "H": 3, "max_iter": 60, "eps_rel": 1e-10})
    assert main(["compare", str(tmp_path / "data.csv"), "--config", cfg, "--truth",
                 str(tmp_path / "truth.json"), "--out", str(tmp_path / "r")]) == 0
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    rows = {(r["method"], r["S"]): r for r in report["rows"]}
    assert [S for m, S in rows if m == "tvem"] == list(range(1, 9))
    assert all(r["gap"] >= -1e-9 for r in report["rows"])
    assert rows[("tvem", 8)]["gap"] <= 1e-9 * (1 + abs(rows[("tvem", 8)]["F"]))
    hard, one = rows[("hard-em", 1)], rows[("tvem", 1)]
    assert hard["F"] == pytest.approx(one["F"], abs=1e-9) and hard["iterations"] == one["iterations"]
    assert all(r["recovery_error"] is not None for r in report["rows"])


def test_compare_space_too_large(tmp_path, monkeypatch):
    gen = _write(tmp_path / "g.json", {"model": "bsc", "H": 6, "D": 4, "N": 10})
    assert main(["generate", "--config", gen, "--out", str(tmp_path)]) == 0
    monkeypatch.setenv("TVEM_ENUM_CAP", "16")
    cfg = _write(tmp_path / "c.json", {"model": "bsc", "H": 6, "max_iter": 5, "S_list": [1, 2],
                                       "estep": {"strategy": "blind"}})
    assert main(["compare", str(tmp_path / "data.csv"), "--config", cfg, "--out", str(tmp_path / "r")]) == 0
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    assert report["oracle_available"] is False
    assert all(r["log_likelihood"] is None and r["gap"] is None for r in report["rows"])
    assert {r["method"] for r in report["rows"]} == {"tvem", "exact-em", "hard-em"}


def test_common_flags(gmm_data, tmp_path):
    cfg = _write(tmp_path / "t.json", {"model": "gmm", "C": 3, "max_iter": 5})
    data = str(gmm_data / "data.csv")
    out = str(tmp_path / "o")
    assert main(["train", data, "--config", cfg, "--out", out, "--threads", "0"]) in (0, 3)
    assert main(["train", data, "--config", cfg, "--out", out, "--threads", "-1"]) == 2
    assert main(["train", data, "--config", cfg, "--out", out, "--seed", "-3"]) == 2
    assert main(["train", data, "--config", cfg, "--assert-monotone", "maybe"]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tvem.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "tvem" in proc.stdout
