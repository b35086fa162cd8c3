import csv
import hashlib
import json

import pytest

from mfdse import cli
from mfdse import starlight as st
from mfdse.optimizer import RunHistory
from mfdse.sampling import Dataset
from mfdse.workload import all_bundled_layers

TINY_WORKLOAD = {
    "name": "tiny",
    "layers": [
        {"name": "a", "N": 1, "K": 16, "C": 8, "P": 4, "Q": 4, "R": 3, "S": 3},
        {"name": "b", "N": 1, "K": 32, "C": 16, "P": 2, "Q": 2, "R": 1, "S": 1},
    ],
}
BO_FAST = ["--n-outer", "2", "--m-inner", "2", "--pool", "60", "--hw-mappings", "2", "--refit-steps", "1"]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Tiny datasets and checkpoints shared by the subcommand tests."""
    out = tmp_path_factory.mktemp("cli")
    (out / "tiny.json").write_text(json.dumps(TINY_WORKLOAD))
    base = ["--out-dir", out, "--seed", 5]
    assert run("gen-data", *base, "--fidelity", "low", "--n", 96) == 0
    assert run("gen-data", *base, "--fidelity", "high", "--n", 40) == 0
    assert run("train-low", *base, "--epochs", 5) == 0
    assert run("train-high", *base, "--low-model", "models/low.json", "--epochs", 20, "--eval-interval", 5) == 0
    return out, base


def test_help_and_version(capsys):
    assert cli.main(["--help"]) == 0
    assert "make-paper-figures" in capsys.readouterr().out
    assert cli.main(["--version"]) == 0
    assert cli.main([]) == 2


def test_gen_data_count_and_determinism(tmp_path):
    assert run("gen-data", "--out-dir", tmp_path, "--fidelity", "low", "--n", 64, "--seed", 7) == 0
    path = tmp_path / "data" / "low.jsonl"
    lines = path.read_text().splitlines()
    assert len(lines) == 65
    header = json.loads(lines[0])
    assert header["n"] == 64
    assert header["provenance"]["config"]["seed"] == 7
    first = sha(path)
    assert run("gen-data", "--out-dir", tmp_path, "--fidelity", "low", "--n", 64, "--seed", 7) == 0
    assert sha(path) == first
    assert run("gen-data", "--out-dir", tmp_path, "--fidelity", "low", "--n", 64, "--seed", 8,
               "--output", "other.jsonl") == 0
    assert sha(tmp_path / "other.jsonl") != first


def test_gen_data_default_layers(tmp_path):
    assert run("gen-data", "--out-dir", tmp_path, "--fidelity", "high", "--n", 30) == 0
    ds = Dataset.load(tmp_path / "data" / "high.jsonl")
    assert ds.fidelity == "high"
    names = {l.name for l in all_bundled_layers()[:30]}
    assert {s.design.layer.name for s in ds.samples} == names


@pytest.mark.parametrize("argv", [
    ["gen-data", "--fidelity", "low", "--n", "0"],
    ["gen-data", "--fidelity", "low", "--n", "x"],
    ["gen-data", "--fidelity", "medium"],
    ["gen-data"],
    ["run-dse", "--fix-hw", "12,64,64"],
    ["run-dse", "--fix-hw", "16,64"],
    ["run-dse", "--trials", "0"],
    ["run-baseline", "--kind", "dosa"],
    ["gen-data", "--fidelity", "low", "--jobs", "0"],
])
def test_usage_errors_exit_2(argv, tmp_path):
    assert cli.main(argv + ["--out-dir", str(tmp_path)]) == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert run("train-low", "--out-dir", tmp_path) == 1
    assert "dataset not found" in capsys.readouterr().err
    assert run("gen-data", "--out-dir", tmp_path, "--fidelity", "low", "--workload", "missing.json") == 1
    (tmp_path / "bad.json").write_text("{")
    assert run("gen-data", "--out-dir", tmp_path, "--fidelity", "low", "--cost-model", "bad.json") == 1


def test_seed_env(monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "11")
    args = cli.build_parser().parse_args(["gen-data", "--fidelity", "low"])
    assert args.seed == 11
    args = cli.build_parser().parse_args(["gen-data", "--fidelity", "low", "--seed", "2"])
    assert args.seed == 2
    monkeypatch.delenv(cli.SEED_ENV)
    assert cli.build_parser().parse_args(["gen-data", "--fidelity", "low"]).seed == 0


def test_train_outputs(pipeline):
    out, _ = pipeline
    low_hist = list(csv.reader((out / "models" / "low_history.csv").open()))
    assert low_hist[0] == ["epoch", "pred", "recon", "kl", "total"]
    assert len(low_hist) == 1 + 5
    high_hist = list(csv.reader((out / "models" / "starlight_history.csv").open()))
    # epochs / eval-interval rows
    assert len(high_hist) - 1 == 20 // 5
    assert [int(r[0]) for r in high_hist[1:]] == [5, 10, 15, 20]
    model = st.load_model(out / "models" / "starlight.json")
    assert model.provenance == "transferred"
    assert model.epochs_trained == 20
    rows = list(csv.DictReader((out / "models" / "starlight_metrics.csv").open()))
    assert {r["metric"] for r in rows} == {"spearman_rho", "pearson_r"}


def test_train_high_source_required(pipeline, capsys):
    out, base = pipeline
    assert run("train-high", *base) == 2
    assert "--from-scratch" in capsys.readouterr().err
    assert run("train-high", *base, "--from-scratch", "--low-model", "models/low.json") == 2


def test_train_fidelity_mismatch(pipeline, capsys):
    out, base = pipeline
    assert run("train-low", *base, "--data", "data/high.jsonl", "--output", "x.json") == 1
    assert "low-fidelity" in capsys.readouterr().err
    assert run("train-high", *base, "--data", "data/low.jsonl", "--from-scratch", "--output", "x.json") == 1


def test_train_high_from_scratch(pipeline):
    out, base = pipeline
    assert run("train-high", *base, "--from-scratch", "--epochs", 3, "--output", "models/scratch.json") == 0
    assert st.load_model(out / "models" / "scratch.json").provenance == "scratch"


def test_provenance_everywhere(pipeline):
    out, _ = pipeline
    ds_head = json.loads((out / "data" / "low.jsonl").read_text().splitlines()[0])
    ckpt = json.loads((out / "models" / "starlight.json").read_text())
    sidecar = json.loads((out / "models" / "starlight_history.meta.json").read_text())
    low_side = json.loads((out / "models" / "low.meta.json").read_text())
    for prov in (ds_head["provenance"], ckpt["run_provenance"], sidecar, low_side):
        assert len(prov["config_hash"]) == 16
        assert prov["version"].startswith(cli.__version__)
    assert set(ckpt["run_provenance"]["inputs"]) == {"high.jsonl", "low.json"}
    assert ckpt["run_provenance"]["inputs"]["high.jsonl"] == cli.file_hash(out / "data" / "high.jsonl")


def test_run_dse_trials_and_summary(pipeline):
    out, base = pipeline
    assert run("run-dse", *base, "--workload", "tiny.json", "--trials", 3, *BO_FAST) == 0
    files = sorted((out / "runs" / "polaris" / "tiny").glob("*.jsonl"))
    assert [f.name for f in files] == ["seed5.jsonl", "seed6.jsonl", "seed7.jsonl"]
    hists = [RunHistory.load(f) for f in files]
    assert all(h.n_evaluations == 2 * 2 * 2 for h in hists)
    assert all("config_hash" in h.meta["provenance"] for h in hists)
    rows = list(csv.DictReader((out / "runs" / "polaris_summary.csv").open()))
    assert len(rows) == 1
    finals = sorted(h.final_edp for h in hists)
    assert float(rows[0]["median_edp"]) == finals[1]
    assert float(rows[0]["min_edp"]) == finals[0]
    assert float(rows[0]["max_edp"]) == finals[2]
    assert (out / "runs" / "polaris_summary.meta.json").exists()


def test_run_dse_resume_is_identical(pipeline, tmp_path):
    out, base = pipeline
    args = ["--workload", "tiny.json", "--trials", 1, "--runs-dir", "resume_runs", *BO_FAST]
    assert run("run-dse", *base, *args) == 0
    path = out / "resume_runs" / "polaris" / "tiny" / "seed5.jsonl"
    full = path.read_text()
    # truncate to the header and first three evaluations, then resume
    path.write_text("\n".join(full.splitlines()[:4]) + "\n")
    assert run("run-dse", *base, *args, "--resume") == 0
    assert path.read_text() == full


def test_run_dse_fixed_hw(pipeline):
    out, base = pipeline
    assert run("run-dse", *base, "--workload", "tiny.json", "--trials", 1, "--fix-hw", "16,64,64",
               "--pool", 60, "--refit-steps", 0) == 0
    hist = RunHistory.load(out / "runs" / "polaris_sw" / "tiny" / "seed5.jsonl")
    assert hist.n_evaluations == 20 * 2
    assert hist.hw_configs == [(16, 64, 64)]


def test_offline_random_baseline(pipeline):
    out, base = pipeline
    assert run("run-baseline", *base, "--kind", "offline_random", "--workload", "tiny.json", "--trials", 1) == 2
    assert run("run-baseline", *base, "--kind", "offline_random", "--model", "models/starlight.json",
               "--workload", "tiny.json", "--trials", 1, "--samples", 200) == 0
    hist = RunHistory.load(out / "runs" / "offline_random" / "tiny" / "seed5.jsonl")
    assert hist.n_evaluations == len(TINY_WORKLOAD["layers"])


def test_report_compare(pipeline, capsys):
    out, base = pipeline
    assert run("run-dse", *base, "--workload", "tiny.json", "--trials", 1, *BO_FAST) == 0
    assert run("run-baseline", *base, "--kind", "vanilla_bo", "--workload", "tiny.json", "--trials", 1,
               *BO_FAST) == 0
    assert run("run-baseline", *base, "--kind", "offline_random", "--model", "models/starlight.json",
               "--workload", "tiny.json", "--trials", 1, "--samples", 200) == 0
    capsys.readouterr()
    assert run("report", *base, "--compare", "polaris,offline_random,vanilla_bo") == 0
    table = capsys.readouterr().out
    assert "Spotlight-like" in table and "Offline Random" in table and "tiny" in table
    rows = list(csv.DictReader((out / "report" / "summary.csv").open()))
    assert {r["method"] for r in rows} == {"polaris", "offline_random", "vanilla_bo"}
    conv = list(csv.DictReader((out / "report" / "convergence.csv").open()))
    series = [float(r["cumulative_min_edp"]) for r in conv if r["method"] == "polaris" and r["trial"] == "0"]
    assert all(b <= a for a, b in zip(series, series[1:]))
    assert run("report", *base, "--compare", "polaris,nothing") == 1


def test_ablation_kind(pipeline, capsys):
    out, base = pipeline
    assert run("run-baseline", *base, "--kind", "dkl_scratch", "--epochs", 2, "--trials", 2) == 0
    rows = list(csv.DictReader((out / "ablations" / "dkl_scratch.csv").open()))
    assert len(rows) == 1 and rows[0]["trials"] == "2"
    assert run("ablate", *base, "--variants", "starlight,nope") == 2


def test_ablate_sizes(pipeline):
    out, base = pipeline
    assert run("ablate", *base, "--sizes", "0.5,1.0", "--variants", "starlight,transferred_nn",
               "--trials", 1, "--epochs", 2) == 0
    rows = list(csv.DictReader((out / "ablations" / "ablation.csv").open()))
    assert {(r["variant"], r["size"]) for r in rows} == {
        ("starlight", "0.5"), ("starlight", "1.0"), ("transferred_nn", "0.5"), ("transferred_nn", "1.0")}


def test_make_paper_figures_quick_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("make-paper-figures", "--scale", "quick", "--out-dir", a, "--seed", 2) == 0
    assert run("make-paper-figures", "--scale", "quick", "--out-dir", b, "--seed", 2) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) > 10
    for rel in files:
        assert sha(a / rel) == sha(b / rel), rel


def test_delay_target(tmp_path):
    assert run("gen-data", "--out-dir", tmp_path, "--fidelity", "high", "--n", 12, "--target", "delay") == 0
    ds = Dataset.load(tmp_path / "data" / "high.jsonl")
    assert all(s.edp == s.delay_cycles for s in ds.samples)
    assert ds.provenance["config"]["target"] == "delay"
