# SPDX-License-Identifier: Apache-2.0
"""End-to-end checks of the drl command line through its file contracts."""
import csv
import json
import math
import os
import subprocess

import pytest
from scipy import stats

DRL = os.environ.get("DRL_BIN", "drl")

TINY = {
    "generator": {"n_subjects": 24, "folds": 3},
    "cv": {"folds": 3, "run_folds": [0]},
    "model": {"backbone": {"channel_plan": [4, 4, 4, 4, 4, 8]},
              "head": {"num_heads": 2, "num_blocks": 1, "ffn_multiplier": 2}},
    "schedule": {"epochs": 2, "steps_per_epoch": 2, "batch_size": 4, "validation_pairs": 8},
}


def drl(*args, env=None, cwd=None):
    full_env = dict(os.environ)
    full_env.pop("DRL_OUTPUT_ROOT", None)
    full_env.update(env or {})
    return subprocess.run([DRL, *map(str, args)], capture_output=True, text=True, env=full_env,
                          cwd=cwd)


def ok(*args, **kw):
    r = drl(*args, **kw)
    assert r.returncode == 0, r.stdout + r.stderr
    return r


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture
def trained(tmp_path, tiny):
    out = tmp_path / "run"
    ok("generate", "-c", tiny, "-o", out)
    ok("train", "-c", tiny, "-o", out)
    return tiny, out


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_generate_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        ok("generate", "--set", "generator.n_subjects=100", "--set", "generator.seed=7",
           "-o", tmp_path / name)
    a = (tmp_path / "a" / "dataset" / "manifest.csv").read_bytes()
    b = (tmp_path / "b" / "dataset" / "manifest.csv").read_bytes()
    assert a == b
    rows = read_csv(tmp_path / "a" / "dataset" / "manifest.csv")
    assert len(rows) == 100
    first = rows[0]["image_path"]
    assert (tmp_path / "a" / "dataset" / first).read_bytes() == \
        (tmp_path / "b" / "dataset" / first).read_bytes()
    resolved = json.loads((tmp_path / "a" / "dataset" / "resolved_config.json").read_text())
    assert resolved["generator"]["n_subjects"] == 100


def test_invalid_extents_are_rejected(tmp_path):
    r = drl("generate", "--set", "generator.extents=[20,40]", "-o", tmp_path)
    assert r.returncode == 1
    assert "halvings" in r.stderr


def test_unknown_keys_and_bad_values_are_validation_errors(tmp_path):
    assert drl("generate", "--set", "generator.n_subjekts=5", "-o", tmp_path).returncode == 1
    assert drl("generate", "--set", "loss.mode=triple", "-o", tmp_path).returncode == 1
    assert drl("frobnicate").returncode == 1


def test_unwritable_output_is_a_runtime_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    r = drl("generate", "--set", "generator.n_subjects=5", "-o", blocker / "sub")
    assert r.returncode == 2


def test_mixture_ages_follow_configured_weights(tmp_path):
    n = 3000
    ok("generate", "--set", f"generator.n_subjects={n}", "--set",
       "generator.age_distribution=mixture", "--set", "generator.extents=[32,32]", "-o", tmp_path)
    ages = [float(r["tau_years"]) for r in read_csv(tmp_path / "dataset" / "manifest.csv")]
    components = [(0.5, 22, 5), (0.3, 50, 15), (0.2, 75, 10)]
    edges = [0, 15, 20, 25, 30, 40, 50, 60, 70, 80, 90, 100]

    def cdf(x):
        # Truncated to [0, 100] like the generator.
        raw = lambda v: sum(w * stats.norm.cdf(v, m, s) for w, m, s in components)
        return (raw(x) - raw(0)) / (raw(100) - raw(0))

    expected = [n * (cdf(b) - cdf(a)) for a, b in zip(edges, edges[1:])]
    observed = [sum(1 for t in ages if a <= t < b or (b == 100 and t == 100))
                for a, b in zip(edges, edges[1:])]
    _, p = stats.chisquare(observed, expected)
    assert p > 0.01


def test_env_var_sets_default_output_root(tmp_path):
    ok("generate", "--set", "generator.n_subjects=6", env={"DRL_OUTPUT_ROOT": str(tmp_path / "root")})
    assert (tmp_path / "root" / "dataset" / "manifest.csv").exists()


def test_train_writes_one_or_four_checkpoints(tmp_path, tiny):
    out = tmp_path / "run"
    ok("generate", "-c", tiny, "-o", out)
    r = ok("train", "-c", tiny, "-o", out)
    assert "epoch 2/2" in r.stdout
    assert sorted(os.listdir(out / "train" / "checkpoints")) == ["fold0-model0.ckpt"]
    curve = read_csv(out / "train" / "training_curve.csv")
    assert [row["epoch"] for row in curve] == ["1", "2"]
    assert all(row["val_mae_r2"] for row in curve)

    single = tmp_path / "single"
    ok("generate", "-c", tiny, "-o", single)
    ok("train", "-c", tiny, "-o", single, "--set", "loss.mode=single")
    assert len(os.listdir(single / "train" / "checkpoints")) == 4
    curve = read_csv(single / "train" / "training_curve.csv")
    assert {row["relations"] for row in curve} == {"r1", "r2", "r3", "r4"}


def test_resume_matches_uninterrupted_training(tmp_path, tiny):
    straight, split = tmp_path / "straight", tmp_path / "split"
    for out in (straight, split):
        ok("generate", "-c", tiny, "-o", out)
    ok("train", "-c", tiny, "-o", straight)
    ok("train", "-c", tiny, "-o", split, "--set", "schedule.epochs=1")
    r = ok("train", "-c", tiny, "-o", split, "--resume")
    assert "epoch 1/2" not in r.stdout and "epoch 2/2" in r.stdout
    ckpt = "train/checkpoints/fold0-model0.ckpt"
    assert (straight / ckpt).read_bytes() == (split / ckpt).read_bytes()


def test_paper_schedule_preset(tmp_path):
    ok("generate", "--set", "generator.n_subjects=6", "--set", "schedule.preset=paper-schedule",
       "-o", tmp_path)
    resolved = json.loads((tmp_path / "dataset" / "resolved_config.json").read_text())
    assert resolved["schedule"]["epochs"] == 80
    assert resolved["schedule"]["half_period"] == 35


def test_evaluate_reports_all_strategies(trained):
    tiny, out = trained
    r = ok("evaluate", "-c", tiny, "-o", out)
    assert "CS(5)" in r.stdout
    report = json.loads((out / "evaluate" / "report.json").read_text())
    assert [s["strategy"] for s in report["strategies"]] == [f"S{i}" for i in range(1, 17)]
    assert report["alpha"] == 5
    rows = read_csv(out / "evaluate" / "estimates.csv")
    assert len(rows) == 8  # one held-out fold of 24 subjects in 3 folds
    for name in ("fold_metrics.csv", "scatter.csv", "uncertainty.csv", "resolved_config.json"):
        assert (out / "evaluate" / name).exists()


def test_evaluate_filters(trained):
    tiny, out = trained
    ok("evaluate", "-c", tiny, "-o", out, "--strategies", "S8,S15", "--alpha", "2")
    header = read_csv(out / "evaluate" / "estimates.csv")[0].keys()
    assert list(header) == ["id", "tau_years", "cohort", "fold", "S8", "S15", "uncertainty"]
    report = json.loads((out / "evaluate" / "report.json").read_text())
    assert report["alpha"] == 2

    ok("evaluate", "-c", tiny, "-o", out, "--mode", "self")
    report = json.loads((out / "evaluate" / "report.json").read_text())
    assert [s["strategy"] for s in report["strategies"]] == [f"S{i}" for i in range(10, 17)]
    assert all(s["mode"] == "self" for s in report["strategies"])


def test_evaluate_rejects_a_different_architecture(trained):
    tiny, out = trained
    r = drl("evaluate", "-c", tiny, "-o", out, "--set", "model.head.num_blocks=2")
    assert r.returncode == 1
    assert "architecture" in r.stderr


def test_compare_reports(trained, tmp_path):
    tiny, out = trained
    ok("evaluate", "-c", tiny, "-o", out)
    report = out / "evaluate" / "report.json"
    r = ok("compare", report, report, "--names", "a,b", "-o", tmp_path / "cmp")
    table = json.loads((tmp_path / "cmp" / "compare" / "comparison.json").read_text())
    assert [row["p"] for row in table["rows"]] == [1.0, 1.0]
    assert [row["average_rank"] for row in table["rows"]] == [1.5, 1.5]
    assert "a" in r.stdout

    # A report whose S3 estimates are all 10 years worse.
    worse = json.loads(report.read_text())
    for s in worse["subjects"]:
        s["estimates"]["S3"] = s["estimates"]["S3"] + 10 if s["tau"] < 50 else s["estimates"]["S3"] - 10
    (tmp_path / "worse.json").write_text(json.dumps(worse))
    ok("compare", report, report, tmp_path / "worse.json", "-o", tmp_path / "cmp3")
    table = json.loads((tmp_path / "cmp3" / "compare" / "comparison.json").read_text())
    ranks = [row["average_rank"] for row in table["rows"]]
    assert ranks[0] == ranks[1]

    other = json.loads(report.read_text())
    other["subjects"][0]["id"] = "sub-99999"
    (tmp_path / "other.json").write_text(json.dumps(other))
    assert drl("compare", report, tmp_path / "other.json", "-o", tmp_path / "bad").returncode == 1


def test_estimate_recovers_exact_relations(tmp_path):
    ages = {"a": 30.0, "b": 52.5, "c": 71.0}
    rows = ["pair_id,x_id,y_id,r1_hat,r2_hat,r3_hat,r4_hat"]
    pairs = [("a", "b"), ("c", "a"), ("b", "b"), ("a", "c")]
    for i, (x, y) in enumerate(pairs):
        tx, ty = ages[x], ages[y]
        rows.append(f"p{i},{x},{y},{tx + ty},{tx - ty},{max(tx, ty)},{min(tx, ty)}")
    (tmp_path / "rel.csv").write_text("\n".join(rows) + "\n")
    manifest = ["id,tau_years,cohort,fold,image_path"] + \
        [f"{k},{v},site-a,0,images/{k}.drlr" for k, v in ages.items()]
    (tmp_path / "ages.csv").write_text("\n".join(manifest) + "\n")
    ok("estimate", tmp_path / "rel.csv", "--ages", tmp_path / "ages.csv", "-o", tmp_path)
    est = read_csv(tmp_path / "estimate" / "estimates.csv")
    for row in est:
        if row["strategy"] in ("S4", "S9", "S16"):
            continue
        assert math.isclose(float(row["estimate_years"]), ages[row["subject_id"]], abs_tol=1e-9), row
    assert {row["strategy"] for row in est if row["subject_id"] == "b"} >= {"S10", "S15", "S16"}
    # MC with one or two references: a is "smaller" than b and c, so every age
    # below 47.5 ties and the smallest wins; c is "greater" than a, so 36.
    s4 = {row["subject_id"]: float(row["estimate_years"]) for row in est if row["strategy"] == "S4"}
    assert s4 == {"a": 0.0, "c": 36.0}
