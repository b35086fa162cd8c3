"""Command-line entry point.

Every subcommand resolves its paths against ``--out-dir`` and stamps its
outputs with the resolved configuration, a hash of it, hashes of the input
files, and a version string.  Nothing time-dependent is recorded, so a rerun
with identical inputs reproduces identical bytes.

Exit codes: 0 on success, 2 on usage errors, 1 on runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import baselines as bl
from . import optimizer as opt
from . import starlight as st
from . import starlight_low as sl
from .metrics import MetricsRecord, pearson_r, spearman_rho, summarize_runs, write_convergence_csv, \
    write_metrics_csv, write_summary_csv
from .oracle_high import HighFidelityOracle
from .oracle_low import DEFAULT_COST_MODEL, CostModel, LowFidelityOracle
from .sampling import Dataset, collect_dataset
from .workload import BUNDLED_WORKLOADS, HwConfig, bundled_workload_path, bundled_workloads, load_workload

log = logging.getLogger("mfdse")

SEED_ENV = "POLARIS_SEED"
DSE_METHODS = ("polaris", "offline_random", "vanilla_bo")
LABELS = {"polaris": "Polaris", "offline_random": "Offline Random", "vanilla_bo": bl.VANILLA_LABEL}

# knobs for make-paper-figures; "desk" is the acceptance-scale pipeline
SCALES = {
    "quick": dict(n_low=256, n_high=48, epochs_low=10, epochs_high=10, workloads="resnet-like",
                  trials=1, n_outer=2, m_inner=2, pool=100, hw_mappings=2, refit=2, offline=500),
    "desk": dict(n_low=4096, n_high=256, epochs_low=1000, epochs_high=1000, workloads="all",
                 trials=3, n_outer=8, m_inner=6, pool=1000, hw_mappings=4, refit=10, offline=48_000),
}


class DelayTarget:
    """Oracle view whose ``edp`` field carries delay, for delay-only studies."""

    def __init__(self, oracle):
        self.oracle = oracle
        self.name = oracle.name
        self.model = oracle.model

    def __call__(self, dp):
        cost = self.oracle(dp)
        return dataclasses.replace(cost, edp=cost.delay_cycles)


def _oracle(args, fidelity: str, cost: CostModel):
    oracle = LowFidelityOracle(cost) if fidelity == "low" else HighFidelityOracle(cost)
    return DelayTarget(oracle) if args.target == "delay" else oracle


class UsageError(Exception):
    """Bad flag combination detected after parsing; maps to exit code 2."""


# ---------------------------------------------------------------------------
# provenance


def version_string() -> str:
    """Package version plus ``git describe`` of the source tree when available."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always"], cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5, check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        out = ""
    return f"{__version__}+{out}" if out else __version__


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


# flags that change how a run executes but not what it computes
NON_CONFIG = ("func", "out_dir", "verbose", "resume", "jobs")


def provenance(args, inputs=()) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in NON_CONFIG}
    blob = json.dumps(config, sort_keys=True, default=str)
    return {
        "command": args.command,
        "config": json.loads(blob),
        "config_hash": hashlib.sha256(blob.encode()).hexdigest()[:16],
        "inputs": {str(p.name): file_hash(p) for p in inputs},
        "version": version_string(),
    }


def write_sidecar(path: Path, prov: dict) -> None:
    path.with_suffix(".meta.json").write_text(json.dumps(prov, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def write_rows(path: Path, header, rows, prov: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    write_sidecar(path, prov)
    return path


# ---------------------------------------------------------------------------
# argument helpers


def _resolve(args, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(args.out_dir) / p


def _existing(args, p, what: str) -> Path:
    path = _resolve(args, p)
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _cost_model(args) -> tuple[CostModel, list[Path]]:
    if args.cost_model is None:
        return DEFAULT_COST_MODEL, []
    path = _existing(args, args.cost_model, "cost model")
    return CostModel.from_json(path), [path]


def _workloads(args, choice: str) -> tuple[dict, list[Path]]:
    """``all``, a comma list of bundled names, or a workload JSON path."""
    if choice == "all":
        return bundled_workloads(), []
    names = [s.strip() for s in choice.split(",") if s.strip()]
    if all(n in BUNDLED_WORKLOADS for n in names):
        out = {}
        for n in names:
            out.update(dict(load_workload(bundled_workload_path(n))))
        return out, []
    path = _existing(args, choice, "workload file")
    return dict(load_workload(path)), [path]


def _load_dataset(args, p, fidelity: str) -> tuple[Dataset, Path]:
    path = _existing(args, p, "dataset")
    ds = Dataset.load(path)
    if len(ds) == 0:
        raise ValueError(f"{path}: empty dataset")
    if ds.fidelity != fidelity:
        raise ValueError(f"{path}: expected a {fidelity}-fidelity dataset, got {ds.fidelity!r}")
    return ds, path


def _positive(name):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {text!r}") from None
        if value < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1, got {value}")
        return value
    return parse


def _hw_arg(text) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--fix-hw expects ARRAY,ACC_KB,SPAD_KB, got {text!r}") from None
    if len(vals) != 3 or not HwConfig(*vals).is_valid():
        raise argparse.ArgumentTypeError(f"--fix-hw {text!r} is not in the hardware design space")
    return vals


def _bo_config(args, seed: int) -> opt.BoConfig:
    return opt.BoConfig(
        n_outer=args.n_outer, m_inner=args.m_inner, sw_pool_size=args.pool, beta=args.beta, seed=seed,
        fix_hw=HwConfig(*args.fix_hw) if getattr(args, "fix_hw", None) else None,
        m_inner_fixed_hw=args.m_fixed, hw_mappings_per_layer=args.hw_mappings, refit_steps=args.refit_steps,
    )


def _history_path(args, method: str, workload: str, seed: int) -> Path:
    return _resolve(args, Path(args.runs_dir) / method / workload / f"seed{seed}.jsonl")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    model, inputs = _cost_model(args)
    workloads, w_inputs = _workloads(args, args.workload)
    layers = [layer for ls in workloads.values() for layer in ls]
    oracle = _oracle(args, args.fidelity, model)
    ds = collect_dataset(oracle, layers, args.n, seed=args.seed)
    ds.provenance = provenance(args, inputs + w_inputs)
    out = ds.save(_resolve(args, args.output or f"data/{args.fidelity}.jsonl"))
    print(f"wrote {len(ds)} {args.fidelity}-fidelity samples to {out}")
    return 0


def cmd_train_low(args) -> int:
    ds, path = _load_dataset(args, args.data, "low")
    weights = sl.LossWeights(pred=args.pred_weight, recon=args.recon_weight, kl=args.kl_weight)
    train_idx, test_idx = ds.split(args.seed)
    model, hist = sl.train_low(ds, args.epochs, seed=args.seed, weights=weights, lr=args.lr, train_idx=train_idx)
    prov = provenance(args, [path])
    out = sl.save_low_model(model, _resolve(args, args.output), meta=prov)
    write_rows(out.with_name(out.stem + "_history.csv"), ["epoch", "pred", "recon", "kl", "total"],
               hist.rows(), prov)
    if len(test_idx) >= 2:
        pred = sl.predict_low(model, ds.features()[test_idx])
        target = ds.log_edp()[test_idx]
        ctx = {"epochs": args.epochs}
        recs = [
            MetricsRecord("spearman_rho", "starlight_low", spearman_rho(pred, target), len(target), args.seed,
                          ds.content_hash(), ctx),
            MetricsRecord("pearson_r", "starlight_low", pearson_r(pred, target), len(target), args.seed,
                          ds.content_hash(), ctx),
        ]
        mpath = write_metrics_csv(recs, out.with_name(out.stem + "_metrics.csv"))
        write_sidecar(mpath, prov)
        print(f"low-fidelity test rho={recs[0].value:.4f}")
    print(f"wrote {out}")
    return 0


def cmd_train_high(args) -> int:
    if args.low_model is None and not args.from_scratch:
        raise UsageError("train-high needs --low-model (transfer source) or --from-scratch")
    if args.low_model is not None and args.from_scratch:
        raise UsageError("--low-model and --from-scratch are mutually exclusive")
    ds, path = _load_dataset(args, args.data, "high")
    inputs = [path]
    train_idx, test_idx = ds.split(args.seed)
    if args.from_scratch:
        model = st.init_from_scratch(ds, train_idx, args.seed)
    else:
        lpath = _existing(args, args.low_model, "low-fidelity checkpoint")
        inputs.append(lpath)
        model = st.init_from_transfer(sl.export_encoder(sl.load_low_model(lpath)), ds, train_idx, args.seed)
    x, y = ds.features(), ds.log_edp()
    test = (x[test_idx], model.standardize(y[test_idx])) if len(test_idx) >= 2 else None
    model, hist = st.train_joint(model, args.epochs, lr_gp=args.lr, test=test, eval_interval=args.eval_interval)
    prov = provenance(args, inputs)
    out = st.save_model(model, _resolve(args, args.output), meta=prov)
    rows = [(e, m, hist.rho[i] if hist.rho else "") for i, (e, m) in enumerate(zip(hist.epoch, hist.mll))]
    write_rows(out.with_name(out.stem + "_history.csv"), ["epoch", "mll", "test_rho"], rows, prov)
    if test is not None:
        recs = st.evaluate_surrogate(model, test[0], y[test_idx], args.seed, ds.content_hash())
        mpath = write_metrics_csv(recs, out.with_name(out.stem + "_metrics.csv"))
        write_sidecar(mpath, prov)
        print(f"test rho={recs[0].value:.4f} r={recs[1].value:.4f}")
    print(f"wrote {out}")
    return 0


def _finish_runs(args, method: str, histories, prov: dict) -> None:
    summaries = summarize_runs(histories)
    path = write_summary_csv(summaries, _resolve(args, Path(args.runs_dir) / f"{method}_summary.csv"))
    write_sidecar(path, prov)
    for s in summaries:
        print(f"{LABELS.get(s['method'], s['method'])} {s['workload']}: median={s['median']:.4g} "
              f"min={s['min']:.4g} max={s['max']:.4g} ({s['trials']} trials)")


def cmd_run_dse(args) -> int:
    mpath = _existing(args, args.model, "surrogate checkpoint")
    model = st.load_model(mpath)
    cost, inputs = _cost_model(args)
    workloads, w_inputs = _workloads(args, args.workload)
    prov = provenance(args, [mpath] + inputs + w_inputs)
    method = "polaris_sw" if args.fix_hw else "polaris"
    histories = []
    for name, layers in workloads.items():
        for trial in range(args.trials):
            seed = args.seed + trial
            config = _bo_config(args, seed)
            path = _history_path(args, method, name, seed)
            resume = path if args.resume and path.is_file() else None
            surrogate = opt.StarlightSurrogate(model, config.refit_steps, config.lr_gp)
            run = opt.run_sw_dse if args.fix_hw else opt.run_codesign
            histories.append(run(config, layers, surrogate, _oracle(args, "high", cost), name, path, resume,
                                 meta={"provenance": prov}))
    _finish_runs(args, method, histories, prov)
    return 0


def cmd_run_baseline(args) -> int:
    if args.kind in bl.VARIANTS:
        return _run_ablation(args, [args.kind], [1.0])
    cost, inputs = _cost_model(args)
    workloads, w_inputs = _workloads(args, args.workload)
    model = None
    if args.kind == "offline_random":
        if args.model is None:
            raise UsageError("offline_random screens candidates on a surrogate; pass --model")
        mpath = _existing(args, args.model, "surrogate checkpoint")
        model = st.load_model(mpath)
        inputs = [mpath] + inputs
    prov = provenance(args, inputs + w_inputs)
    histories = []
    for name, layers in workloads.items():
        for trial in range(args.trials):
            seed = args.seed + trial
            path = _history_path(args, args.kind, name, seed)
            oracle = _oracle(args, "high", cost)
            if args.kind == "offline_random":
                h = bl.offline_random(model, layers, args.samples, seed, oracle, name, meta={"provenance": prov})
                h.save(path)
            else:
                config = _bo_config(args, seed)
                resume = path if args.resume and path.is_file() else None
                h = bl.vanilla_bo(layers, config, oracle, name, path, resume, meta={"provenance": prov})
            histories.append(h)
    _finish_runs(args, args.kind, histories, prov)
    return 0


def _run_ablation(args, variants, sizes) -> int:
    lpath = _existing(args, args.low_model, "low-fidelity checkpoint")
    ds, dpath = _load_dataset(args, args.data, "high")
    low = sl.load_low_model(lpath)
    seeds = [args.seed + i for i in range(args.trials)]
    rows = bl.ablation_suite(low, ds, sizes, seeds, args.epochs, variants)
    prov = provenance(args, [lpath, dpath])
    name = "ablation" if len(variants) > 1 else variants[0]
    write_rows(_resolve(args, Path("ablations") / f"{name}.csv"),
               ["variant", "size", "train_size", "mean_rho", "std_rho", "trials"],
               [(r["variant"], r["size"], r["train_size"], r["mean_rho"], r["std_rho"], r["trials"]) for r in rows],
               prov)
    print(bl.ablation_table(rows))
    return 0


def cmd_ablate(args) -> int:
    unknown = set(args.variants) - set(bl.VARIANTS)
    if unknown:
        raise UsageError(f"unknown variants {sorted(unknown)}; expected a subset of {bl.VARIANTS}")
    return _run_ablation(args, args.variants, args.sizes)


def cmd_report(args) -> int:
    histories, inputs = [], []
    for method in args.compare:
        root = _resolve(args, Path(args.runs_dir) / method)
        files = sorted(root.glob("*/*.jsonl"))
        if not files:
            raise FileNotFoundError(f"no run histories for {method!r} under {root}")
        for f in files:
            histories.append(opt.RunHistory.load(f))
            inputs.append(f)
    summaries = summarize_runs(histories)
    prov = provenance(args, [])
    prov["inputs"] = {str(f.relative_to(_resolve(args, args.runs_dir))): file_hash(f) for f in inputs}
    out = _resolve(args, args.report_dir)
    write_sidecar(write_summary_csv(summaries, out / "summary.csv"), prov)
    write_sidecar(write_convergence_csv(summaries, out / "convergence.csv"), prov)
    table = report_table(summaries, args.compare)
    (out / "comparison.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def report_table(summaries, methods) -> str:
    """Median final EDP per workload and method, with the ratio to the first method."""
    by = {(s["workload"], s["method"]): s for s in summaries}
    workloads = sorted({s["workload"] for s in summaries})
    labels = [LABELS.get(m, m) for m in methods]
    lines = [f"{'workload':<16}" + "".join(f"{lab:>18}" for lab in labels)]
    for w in workloads:
        ref = by.get((w, methods[0]))
        cells = []
        for m in methods:
            s = by.get((w, m))
            if s is None:
                cells.append(f"{'-':>18}")
            elif ref is None or m == methods[0]:
                cells.append(f"{s['median']:>18.4g}")
            else:
                cells.append(f"{s['median']:>10.4g} ({s['median'] / ref['median']:.2f}x)")
        lines.append(f"{w:<16}" + "".join(cells))
    return "\n".join(lines)


def cmd_make_paper_figures(args) -> int:
    """Chain gen-data, training, every DSE method and the report."""
    k = SCALES[args.scale]
    common = ["--out-dir", str(args.out_dir), "--seed", str(args.seed)]
    if args.cost_model is not None:
        common += ["--cost-model", str(args.cost_model)]
    if args.target != "edp":
        common += ["--target", args.target]
    bo = ["--n-outer", str(k["n_outer"]), "--m-inner", str(k["m_inner"]), "--pool", str(k["pool"]),
          "--hw-mappings", str(k["hw_mappings"]), "--refit-steps", str(k["refit"])]
    runs = ["--workload", k["workloads"], "--trials", str(k["trials"])]
    steps = [
        ["gen-data", "--fidelity", "low", "--n", str(k["n_low"])],
        ["gen-data", "--fidelity", "high", "--n", str(k["n_high"]), "--seed", str(args.seed + 1)],
        ["train-low", "--epochs", str(k["epochs_low"])],
        ["train-high", "--low-model", "models/low.json", "--epochs", str(k["epochs_high"])],
        ["run-dse", *runs, *bo],
        ["run-baseline", "--kind", "vanilla_bo", *runs, *bo],
        ["run-baseline", "--kind", "offline_random", "--model", "models/starlight.json", *runs,
         "--samples", str(k["offline"])],
        ["report", "--compare", ",".join(DSE_METHODS)],
    ]
    for step in steps:
        log.info("make-paper-figures: %s", " ".join(step))
        code = main([step[0], *common, *step[1:]])
        if code != 0:
            return code
    return 0


# ---------------------------------------------------------------------------
# parser


def _default_seed() -> int:
    text = os.environ.get(SEED_ENV)
    if text is None:
        return 0
    try:
        return int(text)
    except ValueError:
        raise SystemExit(f"error: {SEED_ENV}={text!r} is not an integer") from None


def _csv_list(kind=str):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=".", help="base directory for all relative paths (default: .)")
    common.add_argument("--seed", type=int, default=_default_seed(),
                        help=f"global seed (default: ${SEED_ENV} or 0)")
    common.add_argument("--cost-model", default=None, help="cost-model JSON (default: built-in constants)")
    common.add_argument("--target", choices=("edp", "delay"), default="edp",
                        help="objective stored in the edp field of oracle results (default: edp)")
    common.add_argument("--jobs", type=_positive("--jobs"), default=1, help="worker cap (default: 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    bo = argparse.ArgumentParser(add_help=False)
    bo.add_argument("--n-outer", type=_positive("--n-outer"), default=8, help="hardware iterations n")
    bo.add_argument("--m-inner", type=_positive("--m-inner"), default=6, help="evaluations per layer m")
    bo.add_argument("--m-fixed", type=_positive("--m-fixed"), default=20,
                    help="evaluations per layer for software-only DSE")
    bo.add_argument("--pool", type=_positive("--pool"), default=10_000, help="software candidate pool size")
    bo.add_argument("--hw-mappings", type=_positive("--hw-mappings"), default=64,
                    help="mappings scored per layer for each hardware candidate")
    bo.add_argument("--refit-steps", type=int, default=st.REFIT_STEPS, help="MLL steps after each observation")
    bo.add_argument("--beta", type=float, default=2.0, help="UCB exploration weight")
    bo.add_argument("--resume", action="store_true", help="continue from existing history files")

    runs = argparse.ArgumentParser(add_help=False)
    runs.add_argument("--workload", default="all", help="'all', bundled names (comma list) or a JSON path")
    runs.add_argument("--trials", type=_positive("--trials"), default=3, help="independent trials (seeds)")
    runs.add_argument("--runs-dir", default="runs", help="history directory (default: runs)")

    parser = argparse.ArgumentParser(prog="mfdse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", parents=[common], help="sample and evaluate design points")
    p.add_argument("--fidelity", choices=("low", "high"), required=True)
    p.add_argument("--n", type=_positive("--n"), default=None, help="samples (default: 4096 low, 256 high)")
    p.add_argument("--workload", default="all", help="layers to sample from (default: all bundled)")
    p.add_argument("--output", default=None, help="default: data/<fidelity>.jsonl")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-low", parents=[common], help="train the low-fidelity VAE and predictor")
    p.add_argument("--data", default="data/low.jsonl")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--pred-weight", type=float, default=1.0, help="predictor loss weight")
    p.add_argument("--recon-weight", type=float, default=1.0)
    p.add_argument("--kl-weight", type=float, default=0.01)
    p.add_argument("--output", default="models/low.json")
    p.set_defaults(func=cmd_train_low)

    p = sub.add_parser("train-high", parents=[common], help="fine-tune the deep-kernel GP")
    p.add_argument("--data", default="data/high.jsonl")
    p.add_argument("--low-model", default=None, help="low-fidelity checkpoint supplying the encoder")
    p.add_argument("--from-scratch", action="store_true", help="random encoder (ablation)")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--eval-interval", type=_positive("--eval-interval"), default=10)
    p.add_argument("--lr", type=float, default=st.DEFAULT_LR_GP, help="GP learning rate; encoder uses lr/10")
    p.add_argument("--output", default="models/starlight.json")
    p.set_defaults(func=cmd_train_high)

    p = sub.add_parser("run-dse", parents=[common, bo, runs], help="hardware/software co-design")
    p.add_argument("--model", default="models/starlight.json")
    p.add_argument("--fix-hw", type=_hw_arg, default=None, metavar="ARRAY,ACC_KB,SPAD_KB",
                   help="software-only DSE on this configuration")
    p.set_defaults(func=cmd_run_dse)

    p = sub.add_parser("run-baseline", parents=[common, bo, runs], help="baseline optimizer or surrogate")
    p.add_argument("--kind", choices=bl.KINDS, required=True)
    p.add_argument("--model", default=None, help="surrogate checkpoint (offline_random)")
    p.add_argument("--samples", type=_positive("--samples"), default=bl.OFFLINE_SAMPLES,
                   help="offline_random screening samples")
    p.add_argument("--low-model", default="models/low.json", help="for surrogate ablation kinds")
    p.add_argument("--data", default="data/high.jsonl", help="for surrogate ablation kinds")
    p.add_argument("--epochs", type=int, default=1000, help="for surrogate ablation kinds")
    p.set_defaults(func=cmd_run_baseline, fix_hw=None)

    p = sub.add_parser("ablate", parents=[common], help="surrogate variants against training size")
    p.add_argument("--low-model", default="models/low.json")
    p.add_argument("--data", default="data/high.jsonl")
    p.add_argument("--sizes", type=_csv_list(float), default=[0.25, 0.5, 0.75, 1.0])
    p.add_argument("--variants", type=_csv_list(), default=list(bl.VARIANTS))
    p.add_argument("--trials", type=_positive("--trials"), default=5, help="seeds per cell")
    p.add_argument("--epochs", type=int, default=1000)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", parents=[common], help="aggregate run histories")
    p.add_argument("--compare", type=_csv_list(), default=list(DSE_METHODS))
    p.add_argument("--runs-dir", default="runs")
    p.add_argument("--report-dir", default="report")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("make-paper-figures", parents=[common], help="run the whole pipeline")
    p.add_argument("--scale", choices=tuple(SCALES), default="desk")
    p.set_defaults(func=cmd_make_paper_figures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gen-data" and args.n is None:
        args.n = 4096 if args.fidelity == "low" else 256
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mfdse {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"mfdse {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
