import hashlib
import json
import os
import subprocess
from pathlib import Path

import pytest

CLI = os.environ.get("DISTILL_LAB_CLI", "distill-lab")

DATA = {"kind": "blobs", "per_class": 30, "test_per_class": 30, "noise": 0.6}
TRAIN = {"epochs": 6, "milestones": [4]}


def run(*args, cwd=None):
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, cwd=cwd)


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return path


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def teacher(tmp_path_factory):
    root = tmp_path_factory.mktemp("teacher")
    cfg = write_config(root / "teacher.json", {
        "data": DATA, "teacher": {"widths": [2, 12]}, "train": TRAIN, "output_dir": str(root / "out"), "seeds": [0],
    })
    r = run("train-teacher", "--config", cfg)
    assert r.returncode == 0, r.stderr
    assert "teacher seed=0" in r.stdout
    return root / "out" / "seed_0" / "teacher.ckpt"


def student_config(tmp_path, teacher, strategy, out="out", **distill):
    return write_config(tmp_path / f"{strategy}.json", {
        "data": DATA, "teacher": {"checkpoint": str(teacher)}, "student": {"widths": [2, 4]},
        "distill": {"strategy": strategy, **distill}, "train": TRAIN,
        "output_dir": str(tmp_path / out), "seeds": [0, 1],
    })


def test_usage_errors_exit_2(tmp_path):
    assert run().returncode == 2
    assert run("no-such-command").returncode == 2
    assert run("gen-data").returncode == 2
    assert run("--help").returncode == 0


def test_gen_data_is_idempotent(tmp_path):
    args = ["gen-data", "--kind", "spirals", "--n", 50, "--seed", 3]
    r = run(*args, "--out", tmp_path / "a")
    assert r.returncode == 0, r.stderr
    assert "train: N=150 C=3 d=2" in r.stdout
    first = digest(tmp_path / "a" / "train.csv")
    assert run(*args, "--out", tmp_path / "a").returncode == 0
    assert digest(tmp_path / "a" / "train.csv") == first
    header = (tmp_path / "a" / "test.csv").read_text().splitlines()[0]
    assert header == "x0,x1,label"


def test_config_errors_name_the_field(tmp_path, teacher):
    cfg = student_config(tmp_path, teacher, "kd", tau=-1)
    r = run("distill", "--config", cfg)
    assert r.returncode == 2
    assert "distill.tau" in r.stderr
    bad = write_config(tmp_path / "bad.json", {"data": DATA, "output_dir": "x", "colour": 1})
    r = run("distill", "--config", bad)
    assert r.returncode == 2
    assert "colour: unknown key" in r.stderr
    (tmp_path / "broken.json").write_text("{")
    assert run("distill", "--config", tmp_path / "broken.json").returncode == 2


def test_missing_checkpoint_is_an_io_error(tmp_path):
    cfg = student_config(tmp_path, tmp_path / "nowhere.ckpt", "kd")
    assert run("distill", "--config", cfg).returncode == 1


def test_divergence_exits_3(tmp_path):
    cfg = write_config(tmp_path / "hot.json", {
        "data": DATA, "student": {"widths": [2, 4]}, "distill": {"strategy": "ce_only"},
        "train": {"epochs": 3, "milestones": [], "lr": 1e200}, "output_dir": str(tmp_path / "o"),
    })
    r = run("distill", "--config", cfg)
    assert r.returncode == 3, r.stderr
    assert "non-finite" in r.stderr


def test_distill_probe_and_report(tmp_path, teacher):
    teacher_before = digest(teacher)
    cfg = student_config(tmp_path, teacher, "srrl")
    r = run("distill", "--config", cfg)
    assert r.returncode == 0, r.stderr
    assert "mean test_acc=" in r.stdout
    out = tmp_path / "out"
    summary = json.loads((out / "seed_1" / "summary.json").read_text())
    assert summary["strategy"] == "srrl"
    assert summary["initial_frob_dist"] is not None
    agg = json.loads((out / "aggregate.json").read_text())
    accs = [json.loads((out / f"seed_{s}" / "summary.json").read_text())["final_test_acc"] for s in (0, 1)]
    assert agg["aggregate"]["mean_test_acc"] == pytest.approx(sum(accs) / 2, abs=1e-15)

    # Rerunning overwrites with identical bytes and leaves inputs alone.
    before = {p: digest(p) for p in out.rglob("*") if p.is_file()}
    assert run("distill", "--config", cfg).returncode == 0
    assert {p: digest(p) for p in out.rglob("*") if p.is_file()} == before
    assert digest(teacher) == teacher_before

    data_dir = tmp_path / "data"
    assert run("gen-data", "--kind", "blobs", "--n", 30, "--noise", 0.6, "--out", data_dir).returncode == 0
    student = out / "seed_0" / "student.ckpt"
    for norm in ("l1_prob", "l2_prob", "l1_logit"):
        r = run("probe", "--teacher", teacher, "--student", student, "--data", data_dir / "test.csv",
                "--norm", norm, "--connector", student)
        assert r.returncode == 0, r.stderr
        report = json.loads(r.stdout)
        assert report["holds_aggregate"] is True
        assert report["per_sample_violations"] == 0
        assert (out / "seed_0" / f"bound_report_{norm}.json").exists()

    r = run("report", "--runs", out, "--out", tmp_path / "merged.csv")
    assert r.returncode == 0, r.stderr
    merged = (tmp_path / "merged.csv").read_text().splitlines()
    assert len(merged) == 1 + 2 * TRAIN["epochs"]
    assert "fm" in merged[0].split(",")


def test_self_probe_is_exact(tmp_path, teacher):
    data_dir = tmp_path / "data"
    run("gen-data", "--kind", "blobs", "--n", 20, "--noise", 0.6, "--out", data_dir)
    r = run("probe", "--teacher", teacher, "--student", teacher, "--data", data_dir / "train.csv",
            "--out", tmp_path / "self.json")
    assert r.returncode == 0, r.stderr
    report = json.loads((tmp_path / "self.json").read_text())
    assert report["delta1"] == 0 and report["delta2"] == 0
    assert report["eps_student"] == report["eps_teacher"]


def test_sweep_writes_one_row_per_point(tmp_path, teacher):
    cfg = student_config(tmp_path, teacher, "ijckd_reuse", out="sweep")
    r = run("sweep", "--config", cfg, "--axis", "connector_depth=1,2")
    assert r.returncode == 0, r.stderr
    rows = (tmp_path / "sweep" / "sweep_connector_depth.csv").read_text().splitlines()
    assert rows[0].startswith("axis,value,label")
    assert [row.split(",")[1] for row in rows[1:]] == ["1", "2"]
    assert run("sweep", "--config", cfg, "--axis", "width").returncode == 2


def test_report_without_runs_exits_2(tmp_path):
    (tmp_path / "empty").mkdir()
    assert run("report", "--runs", tmp_path / "empty", "--out", tmp_path / "r.csv").returncode == 2
