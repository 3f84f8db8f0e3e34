"""Command-line entry point: ``signbip {stats,train,sweep,bench}``.

Settings resolve in this order, later winning: built-in defaults, a flat
``key = value`` config file (``--config``), ``SIGNBIP_<KEY>`` environment
variables, then explicit flags. The resolved settings are written to
``<outdir>/config.txt`` before any work starts.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import argparse
import csv
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import data, experiment
from .errors import DataError, NumericFailure, SignbipError
from .model import INJECTION_GRID, LAYER_GRID, RANK_GRID, HyperParams, write_checkpoint

log = logging.getLogger("signbip")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ENV_PREFIX = "SIGNBIP_"

# flag dest -> HyperParams field
_HP_FLAGS = {
    "layers": "layers",
    "injection_ratio": "injection_ratio",
    "rank_ratio": "rank_ratio",
    "final_dim": "final_dim",
    "epochs": "epochs",
    "lr": "learning_rate",
    "weight_decay": "weight_decay",
    "ablation": "ablation",
    "metric": "select_metric",
    "mlp_hidden": "mlp_hidden",
}
_HP_TYPES = {f.name: f.type for f in fields(HyperParams)}


class UsageError(Exception):
    pass


def _convert(key, value):
    kind = _HP_TYPES.get(key)
    if kind in (int, "int"):
        return int(value)
    if kind in (float, "float"):
        return float(value)
    return value


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _env_settings():
    return {
        key[len(ENV_PREFIX):].lower(): value
        for key, value in os.environ.items()
        if key.startswith(ENV_PREFIX) and len(key) > len(ENV_PREFIX)
    }


def resolve_hyperparams(args) -> HyperParams:
    settings = {}
    layered = []
    if getattr(args, "config", None):
        layered.append(read_config_file(args.config))
    layered.append(_env_settings())
    for layer in layered:
        for key, value in layer.items():
            key = _HP_FLAGS.get(key, key)
            if key in _HP_TYPES:
                settings[key] = value
    for dest, key in _HP_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            settings[key] = value
    try:
        return HyperParams(**{k: _convert(k, v) for k, v in settings.items() if k != "seed"})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def write_config(outdir: Path, args, hp: HyperParams, extra=None):
    outdir.mkdir(parents=True, exist_ok=True)
    lines = [f"command = {args.command}"]
    for key in ("dataset", "seed", "threads", "deterministic", "keep_going"):
        if hasattr(args, key):
            lines.append(f"{key} = {getattr(args, key)}")
    for key, value in asdict(hp).items():
        if key != "seed":
            lines.append(f"{key} = {value}")
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    (outdir / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _seeds(args):
    return args.seed if args.seed else [0, 1, 2, 3, 4]


def _load(args):
    return data.load_edge_list(args.dataset)


# -- commands ----------------------------------------------------------------

STATS_FIELDS = ("dataset", "n_u", "n_v", "n_edges", "n_pos", "n_neg", "pos_fraction", "neg_fraction")


def cmd_stats(args):
    row = data.stats(_load(args))
    writer = csv.DictWriter(sys.stdout, fieldnames=STATS_FIELDS)
    writer.writeheader()
    writer.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})
    return EXIT_OK


def _write_log(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_auc", "val_macro_f1", "seconds"])
        for r in records:
            w.writerow([r.epoch, f"{r.train_loss:.6f}", f"{r.val_auc:.6f}", f"{r.val_macro_f1:.6f}",
                        f"{r.seconds:.6f}"])


REPORT_COLUMNS = ("seed", "selected_by", "auc", "binary_f1", "macro_f1", "micro_f1",
                  "n_pos", "n_neg", "best_epoch")


def _report_rows(seed, metric, report, best_epoch):
    return {
        "seed": seed, "selected_by": metric, "auc": f"{report.auc:.6f}",
        "binary_f1": f"{report.binary_f1:.6f}", "macro_f1": f"{report.macro_f1:.6f}",
        "micro_f1": f"{report.micro_f1:.6f}", "n_pos": report.n_pos, "n_neg": report.n_neg,
        "best_epoch": best_epoch,
    }


def _summary_rows(metric, reports):
    summary = experiment.summarize(reports)
    mean = {"seed": "mean", "selected_by": metric}
    std = {"seed": "std", "selected_by": metric}
    for name, (mu, sd) in summary.items():
        mean[name] = f"{mu:.6f}"
        std[name] = f"{sd:.6f}"
    return [mean, std]


def cmd_train(args):
    hp = resolve_hyperparams(args)
    outdir = Path(args.outdir)
    seeds = _seeds(args)
    write_config(outdir, args, hp, {"seeds": ",".join(map(str, seeds))})
    ds = _load(args)
    rows = []
    reports = {m: [] for m in ("auc", "macro_f1")}
    failed = False
    for seed in seeds:
        try:
            res = experiment.train_one(ds, hp, seed, svd_cache_dir=args.svd_cache)
        except (NumericFailure, SignbipError, ValueError) as exc:
            log.error("seed %d failed: %s", seed, exc)
            failed = True
            if not args.keep_going:
                raise
            continue
        trained = res.model
        _write_log(outdir / f"log_seed{seed}.csv", trained.log)
        write_checkpoint(outdir / f"checkpoint_seed{seed}.bin", trained.params, trained.hp)
        for metric, report in res.test.items():
            rows.append(_report_rows(seed, metric, report, trained.snapshots[metric].epoch))
            reports[metric].append(report)
        log.info("seed %d: test auc=%.4f macro_f1=%.4f", seed, res.test["auc"].auc,
                 res.test["macro_f1"].macro_f1)
    for metric, reps in reports.items():
        if reps:
            rows.extend(_summary_rows(metric, reps))
    with open(outdir / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, restval="")
        w.writeheader()
        w.writerows(rows)
    _print_summary(reports)
    return EXIT_DATA if failed and not rows else EXIT_OK


def _print_summary(reports):
    for metric, reps in reports.items():
        if not reps:
            continue
        s = experiment.summarize(reps)
        print(f"[selected by val {metric}] test AUC {s['auc'][0]:.4f} +- {s['auc'][1]:.4f} | "
              f"Macro-F1 {s['macro_f1'][0]:.4f} +- {s['macro_f1'][1]:.4f} | "
              f"Binary-F1 {s['binary_f1'][0]:.4f} | Micro-F1 {s['micro_f1'][0]:.4f}")


def cmd_sweep(args):
    hp = resolve_hyperparams(args)
    outdir = Path(args.outdir)
    seeds = _seeds(args)
    grids = {
        "rank_grid": _float_list(args.rank_grid),
        "injection_grid": _float_list(args.injection_grid),
        "layer_grid": _int_list(args.layer_grid),
    }
    if not all(grids.values()):
        raise UsageError("every grid needs at least one value")
    write_config(outdir, args, hp, {"seeds": ",".join(map(str, seeds)),
                                    **{k: ",".join(map(str, v)) for k, v in grids.items()}})
    ds = _load(args)
    workers = 1 if args.deterministic else max(1, args.threads)
    result = experiment.sweep(ds, hp, seeds, workers=workers, **grids)

    with open(outdir / "grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank_ratio", "injection_ratio", "layers", "seed", "val_auc", "val_macro_f1", "error"])
        for c in result.cells:
            w.writerow([c.rank_ratio, c.injection_ratio, c.layers, c.seed,
                        f"{c.val.get('auc', float('nan')):.6f}",
                        f"{c.val.get('macro_f1', float('nan')):.6f}", c.error or ""])

    rows, reports = [], {}
    for metric, config in result.selected.items():
        reps = result.test_reports(metric)
        reports[metric] = reps
        for cell in result.cells_for(config):
            rows.append(_report_rows(cell.seed, metric, cell.test[metric], ""))
        rows.extend(_summary_rows(metric, reps))
    with open(outdir / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=("rank_ratio", "injection_ratio", "layers") + REPORT_COLUMNS,
                           restval="")
        w.writeheader()
        for row in rows:
            r, c, layers = result.selected[row["selected_by"]]
            w.writerow({"rank_ratio": r, "injection_ratio": c, "layers": layers, **row})
    primary = hp.select_metric
    r, c, layers = result.selected[primary]
    print(f"best config by mean val {primary}: rank_ratio={r} injection_ratio={c} layers={layers}")
    _print_summary(reports)
    return EXIT_OK


def cmd_bench(args):
    outdir = Path(args.outdir)
    sizes = _int_list(args.sizes)
    if not sizes or sizes != sorted(sizes):
        raise UsageError("--sizes must be a non-empty ascending list")
    hp = resolve_hyperparams(args)
    write_config(outdir, args, hp, {"sizes": args.sizes, "k": args.k})
    rows = experiment.bench(sizes, layers=hp.layers if args.layers is not None else 3,
                            final_dim=hp.final_dim, k=args.k)
    with open(outdir / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "n_u", "n_v", "k", "preprocess_seconds", "forward_seconds",
                    "backward_seconds", "epoch_seconds"])
        for r in rows:
            w.writerow([r.m, r.n_u, r.n_v, r.k, f"{r.preprocess_seconds:.6f}", f"{r.forward_seconds:.6f}",
                        f"{r.backward_seconds:.6f}", f"{r.epoch_seconds:.6f}"])
    for r in rows:
        print(f"m={r.m:>8d} svd={r.preprocess_seconds:.3f}s epoch={r.epoch_seconds:.4f}s")
    ratios = experiment.epoch_ratios(rows)
    if ratios:
        print("epoch time ratios:", " ".join(f"{x:.2f}" for x in ratios))
    return EXIT_OK


# -- argument parsing --------------------------------------------------------

def _add_hp_flags(p):
    p.add_argument("--layers", type=int)
    p.add_argument("--injection-ratio", type=float)
    p.add_argument("--rank-ratio", type=float)
    p.add_argument("--final-dim", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--mlp-hidden", type=int)
    p.add_argument("--ablation", choices=["full", "no-rmp", "no-spmp"])
    p.add_argument("--metric", choices=["auc", "macro_f1"])


def _add_run_flags(p):
    p.add_argument("--dataset", required=True, help="signed edge list (u<TAB>v<TAB>sign)")
    p.add_argument("--seed", type=int, action="append", help="repeatable; default 0..4")
    p.add_argument("--outdir", required=True)
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--keep-going", action="store_true")
    _add_hp_flags(p)


def build_parser():
    parser = argparse.ArgumentParser(prog="signbip", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train and test over several seeds")
    _add_run_flags(p)
    p.add_argument("--svd-cache", help="directory for cached SVD factors")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="grid search over rank ratio, injection ratio and layers")
    _add_run_flags(p)
    p.add_argument("--rank-grid", default=",".join(map(str, RANK_GRID)))
    p.add_argument("--injection-grid", default=",".join(map(str, INJECTION_GRID)))
    p.add_argument("--layer-grid", default=",".join(map(str, LAYER_GRID)))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="per-epoch timing on synthetic graphs of growing size")
    p.add_argument("--sizes", default="10000,20000,40000,80000", help="ascending edge counts")
    p.add_argument("--outdir", required=True)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--config")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--deterministic", action="store_true")
    _add_hp_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = getattr(args, "threads", 1)
    with threadpool_limits(1 if getattr(args, "deterministic", False) else threads):
        try:
            return args.func(args)
        except UsageError as exc:
            log.error("%s", exc)
            return EXIT_USAGE
        except NumericFailure as exc:
            log.error("numeric failure: %s", exc)
            return EXIT_NUMERIC
        except (DataError, OSError, SignbipError) as exc:
            log.error("data error: %s", exc)
            return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
