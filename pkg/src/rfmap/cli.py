"""Command-line entry point: ``rfmap <verb> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import geoscene
from .config import ConfigError, MissingSceneError, RunConfig
from .geoscene import PARAM_KINDS, ParseError
from .ndiff import TrainingDivergence

log = logging.getLogger("rfmap")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_DIVERGED = 5

THREADS_ENV = "RFMAP_THREADS"
STAGE_FILE = "STAGE"


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.validate()
    return cfg


def resolve_threads(cli_value) -> int | None:
    if cli_value is not None:
        return cli_value
    env = os.environ.get(THREADS_ENV)
    if env is None or env == "":
        return None
    try:
        n = int(env)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
    return n


def build_scene(cfg: RunConfig):
    if cfg.scene_path is not None:
        return geoscene.read_scene(cfg.scene_path)
    s = cfg.scene
    return geoscene.synthesize_scene(s.seed, s.bounds, s.n_walls, s.n_scatterers, f_c=s.f_c,
                                     tx_height=s.tx_height, rx_height=s.rx_height,
                                     tx_power=s.tx_power)


def prepare(cfg: RunConfig, rate: float | None = None):
    scene = build_scene(cfg)
    dataset = geoscene.generate_dataset(scene, cfg.grid_spacing, cfg.L)
    split = geoscene.sample_split(dataset, cfg.rate if rate is None else rate, cfg.seed)
    return dataset, split


def out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def mark(path: Path, stage: str) -> None:
    (path / STAGE_FILE).write_text(stage + "\n", encoding="utf-8")


def write_history(path, rows, fields) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_predictions(path, coords, pred, types=None) -> None:
    """Predictions in the dataset CSV schema; types default to NONE where unknown."""
    L = pred.shape[1] // 4
    values = pred.reshape(len(pred), L, 4)
    if types is None:
        types = np.full((len(pred), L), int(geoscene.PathType.NONE))
    geoscene.write_table(path, coords, values, types)


def comparison_table(path, metrics: dict, columns, header: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([header, *columns])
        for name in ("mse", "rmse", "nmse"):
            w.writerow([name.upper(), *(repr(float(getattr(metrics[c], name))) for c in columns)])


# --------------------------------------------------------------------------
# Verbs
# --------------------------------------------------------------------------


def cmd_generate(cfg: RunConfig, args) -> int:
    path = out_dir(cfg)
    dataset, split = prepare(cfg)
    geoscene.write_dataset(dataset, path / "dataset.csv", scene_path=path / "scene.json")
    geoscene.write_split(split, path / "split.json")
    print(f"wrote {len(dataset)} records to {path / 'dataset.csv'}")
    return EXIT_OK


def run_pipeline(cfg: RunConfig, path: Path, rate: float | None = None, dump_graph: bool = False):
    """Algorithm run with artifacts; returns ``(metrics, mapper, dataset, split)``."""
    from . import ndiff
    from .baselines import fit_mapper, make_mapper
    from .evaluation import compute_metrics, write_metrics
    from .graph import GNN_HISTORY_FIELDS, write_edge_list
    from .pinn import HISTORY_FIELDS
    from .pipeline import stage_seeds

    mark(path, "generate")
    dataset, split = prepare(cfg, rate)
    geoscene.write_dataset(dataset, path / "dataset.csv", scene_path=path / "scene.json")
    geoscene.write_split(split, path / "split.json")
    cfg.save(path / "config.json")

    mark(path, "train")
    mapper = make_mapper(cfg, dataset.scene, stage_seeds(cfg.seed)["pipeline"])
    fit_mapper(mapper, dataset, split)
    digest = cfg.digest()
    ndiff.save_checkpoint(path / "pinn_checkpoint.json", mapper.pinn_.params_,
                          norm_stats=mapper.scaler_.to_dict(),
                          loss_weights=cfg.loss_weights.to_dict(), config_hash=digest)
    ndiff.save_checkpoint(path / "gnn_checkpoint.json", mapper.gnn_.params_,
                          norm_stats=mapper.scaler_.to_dict(), config_hash=digest)
    write_history(path / "history.csv", mapper.pinn_.history_, HISTORY_FIELDS[:-1])
    write_history(path / "gnn_history.csv", mapper.gnn_.history_, GNN_HISTORY_FIELDS)

    mark(path, "predict")
    coords = dataset.coords
    types = mapper.predict_types(coords)
    y_pinn = mapper.predict_pinn(coords)
    write_predictions(path / "pinn_predictions.csv", coords, y_pinn, types)
    pred = mapper.predict(coords)
    write_predictions(path / "predictions.csv", coords, pred, types)
    if dump_graph:
        write_edge_list(mapper.gnn_.full_graph_, path / "graph_full.csv")

    mark(path, "evaluate")
    U = split.unknown
    metrics = compute_metrics(pred[U], dataset.Y[U], mapper.scaler_)
    write_metrics(path / "metrics.json", metrics, method="proposed", rate=split.rate,
                  seed=cfg.seed, n_unknown=int(len(U)))
    mark(path, "done")
    return metrics, mapper, dataset, split


def cmd_run(cfg: RunConfig, args) -> int:
    path = out_dir(cfg)
    metrics, *_ = run_pipeline(cfg, path, dump_graph=args.dump_graph)
    print(f"NMSE {metrics.nmse:.6f}  MSE {metrics.mse:.6f}  RMSE {metrics.rmse:.6f}")
    return EXIT_OK


def cmd_baselines(cfg: RunConfig, args) -> int:
    from .baselines import METHODS, run_methods
    from .evaluation import compute_metrics, write_metrics
    from .validation import MultipathScaler

    methods = tuple(args.methods.split(",")) if args.methods else cfg.methods
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {', '.join(bad)}; choose from {', '.join(METHODS)}")
    path = out_dir(cfg)
    mark(path, "baselines")
    dataset, split = prepare(cfg)
    Xt, Yt = dataset.coords[split.train], dataset.Y[split.train]
    scaler = MultipathScaler().fit(Xt, Yt)
    results = run_methods(dataset, split, cfg, methods)
    U = split.unknown
    metrics, manifest = {}, []
    for name, res in results.items():
        fname = f"pred_{name}.csv"
        write_predictions(path / fname, dataset.coords[U], res.predictions)
        metrics[name] = compute_metrics(res.predictions, dataset.Y[U], scaler)
        write_metrics(path / f"metrics_{name}.json", metrics[name], method=name,
                      rate=split.rate, seed=cfg.seed, n_unknown=int(len(U)))
        manifest.append({"method": name, "predictions": fname, "seconds": round(res.seconds, 3)})
    (path / "manifest.json").write_text(json.dumps({"runs": manifest}, indent=2) + "\n")
    comparison_table(path / "comparison.csv", metrics, list(methods), "metric")
    for name in methods:
        print(f"{name:>10s}  NMSE {metrics[name].nmse:.6f}")
    mark(path, "done")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    rates = [float(r) for r in args.rates.split(",")] if args.rates else list(cfg.rates)
    for r in rates:
        if not 0.0 < r < 1.0:
            raise UsageError(f"sampling rates must lie in (0, 1), got {r}")
    path = out_dir(cfg)
    metrics = {}
    for r in rates:
        sub = path / f"rate_{r:g}"
        sub.mkdir(exist_ok=True)
        metrics[f"{r:g}"], *_ = run_pipeline(cfg, sub, rate=r)
        print(f"rate {r:g}: NMSE {metrics[f'{r:g}'].nmse:.6f}")
    comparison_table(path / "sweep.csv", metrics, list(metrics), "metric")
    return EXIT_OK


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing run artifact: {path}")
    return path


def _lookup(coords: np.ndarray, xy) -> int:
    hit = np.flatnonzero(np.all(np.isclose(coords, xy), axis=1))
    if not len(hit):
        raise UsageError(f"no record at ({xy[0]}, {xy[1]})")
    return int(hit[0])


def cmd_export(cfg: RunConfig, args) -> int:
    from .evaluation import (error_cdf, export_heatmap, reconstruct_cir, write_cdf, write_cir)

    run = Path(args.run_dir)
    scene = geoscene.read_scene(_require(run / "scene.json"))
    truth = geoscene.read_dataset(_require(run / "dataset.csv"), scene=scene)
    dest = Path(args.dest or run / "exports")
    dest.mkdir(parents=True, exist_ok=True)
    path_idx = args.path - 1
    if not 0 <= path_idx < truth.L:
        raise UsageError(f"--path must lie in 1..{truth.L}")

    def load_pred(name):
        c, v, _ = geoscene.read_table(_require(run / name))
        return c, v.reshape(len(v), -1)

    if args.kind == "heatmap":
        kind = PARAM_KINDS.index(args.param)
        if args.source == "truth":
            coords, values = truth.coords, truth.Y
        else:
            coords, values = load_pred("predictions.csv")
        out = dest / f"heatmap_{args.source}_{args.param}_p{args.path}.csv"
        export_heatmap(coords, values, kind, path_idx, out)
    elif args.kind == "cdf":
        split = geoscene.read_split(_require(run / "split.json"))
        coords, pred = load_pred("predictions.csv")
        U = split.unknown
        for kind, name in enumerate(PARAM_KINDS):
            e, f = error_cdf(pred[U], truth.Y[U], kind, path_idx)
            write_cdf(dest / f"cdf_{name}_p{args.path}.csv", e, f)
    else:
        if args.at is None:
            raise UsageError("cir export needs --at X Y")
        i = _lookup(truth.coords, args.at)
        profiles = {"truth": reconstruct_cir(truth.Y[i], scene.f_c)}
        sources = [("proposed", "predictions.csv")] + sorted(
            (p.stem[len("pred_"):], p.name) for p in run.glob("pred_*.csv"))
        for method, fname in sources:
            if not (run / fname).exists():
                continue
            coords, pred = load_pred(fname)
            hit = np.flatnonzero(np.all(np.isclose(coords, args.at), axis=1))
            if len(hit):
                profiles[method] = reconstruct_cir(pred[hit[0]], scene.f_c)
        write_cir(dest / f"cir_{args.at[0]:g}_{args.at[1]:g}.csv", profiles)
    print(f"exported {args.kind} to {dest}")
    return EXIT_OK


def cmd_grad_check(cfg: RunConfig, args) -> int:
    from .checks import gnn_gradient_check, pinn_gradient_check

    worst = 0.0
    for s in range(args.seeds):
        seed = cfg.seed + s
        for name, fn in (("pinn", pinn_gradient_check), ("gnn", gnn_gradient_check)):
            rep = fn(seed, L=cfg.L, batch=args.batch)
            worst = max(worst, rep.max_rel_error)
            print(f"{name} seed {seed}: max relative error {rep.max_rel_error:.3e} "
                  f"over {rep.n_checked} coordinates")
    ok = worst < args.tolerance
    print(("PASS" if ok else "FAIL") + f" (worst {worst:.3e}, tolerance {args.tolerance:g})")
    return EXIT_OK if ok else EXIT_FAILURE


VERBS = {"generate": cmd_generate, "run": cmd_run, "baselines": cmd_baselines,
         "sweep": cmd_sweep, "export": cmd_export, "grad-check": cmd_grad_check}


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return n


def _seed(text: str) -> int:
    n = int(text)
    if not 0 <= n < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=_seed, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--threads", type=_positive_int,
                        help=f"numeric thread count (default: ${THREADS_ENV} or library default)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="rfmap", description="Dense multipath maps from sparse samples.",
                     parents=[common])
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="write scene, dataset and split")
    run = sub.add_parser("run", parents=[common], help="train and evaluate the two-stage mapper")
    run.add_argument("--dump-graph", action="store_true", help="write the inference graph edges")
    base = sub.add_parser("baselines", parents=[common], help="compare methods")
    base.add_argument("--methods", help="comma-separated subset of methods")
    sweep = sub.add_parser("sweep", parents=[common], help="repeat the run over sampling rates")
    sweep.add_argument("--rates", help="comma-separated sampling rates")
    exp = sub.add_parser("export", parents=[common], help="heatmap, CDF or CIR files from a run")
    exp.add_argument("run_dir")
    exp.add_argument("kind", choices=("heatmap", "cdf", "cir"))
    exp.add_argument("--param", choices=PARAM_KINDS, default="power")
    exp.add_argument("--path", type=_positive_int, default=1, help="1-based path index")
    exp.add_argument("--source", choices=("truth", "proposed"), default="proposed")
    exp.add_argument("--at", type=float, nargs=2, metavar=("X", "Y"))
    exp.add_argument("--dest", help="export directory (default: RUN_DIR/exports)")
    gc = sub.add_parser("grad-check", parents=[common], help="compare gradients with finite differences")
    gc.add_argument("--seeds", type=_positive_int, default=3)
    gc.add_argument("--batch", type=_positive_int, default=8)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        threads = resolve_threads(args.threads)
        cfg = load_config(args)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            return VERBS[args.verb](cfg, args)
    except (UsageError, MissingSceneError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ParseError, json.JSONDecodeError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
