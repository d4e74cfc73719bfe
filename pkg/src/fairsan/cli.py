"""Command-line interface: ``fairsan {schema,train,sanitize,evaluate}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.
"""

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .data import Schema, TabularEncoder, fold_indices, infer_schema, read_csv, split_folds
from .evaluators import FAMILIES
from .exceptions import (DataError, FairsanError, TrainingDivergenceError, UndefinedMetricError,
                         UsageError)
from .sanitizer import Sanitizer, alpha_progression
from .scenarios import (SCENARIOS, CVConfig, aggregate, derive_seed, evaluate_cell, train_cell,
                        write_damage_csv, write_long, write_results_csv, write_summary_json)

logger = logging.getLogger("fairsan")

OUTPUT_ROOT_ENV = "FAIRSAN_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def alpha_dirname(alpha):
    return f"alpha_{alpha!r}"


# schema ------------------------------------------------------------------

def cmd_schema(args):
    df = read_csv(args.input, delimiter=args.delimiter)
    kinds = {}
    for item in args.kind:
        name, sep, kind = item.partition("=")
        if not sep:
            raise UsageError(f"--kind expects NAME=KIND, got {item!r}")
        kinds[name] = kind
    schema = infer_schema(df, args.sensitive, args.decision, kinds=kinds,
                          log_columns=args.log_column, categorical_threshold=args.threshold)
    out = args.output or os.path.splitext(args.input)[0] + ".schema.json"
    schema.to_json(out)
    print(f"{len(df)} records, {len(schema.columns)} columns -> {out}")
    for col in schema.columns:
        extra = f" ({len(col.categories)} categories)" if col.categories else ""
        log = " log" if col.name in schema.log_columns else ""
        print(f"  {col.name:<24} {col.kind:<12} {col.role}{log}{extra}")
    return EXIT_OK


# train -------------------------------------------------------------------

def _sanitizer_params(args):
    return {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "disc_ratio": args.disc_ratio,
        "noise_dim": args.noise_dim,
        "san_lr": args.lr,
        "disc_lr": args.disc_lr if args.disc_lr is not None else args.lr,
    }


def _default_out(seed):
    root = os.environ.get(OUTPUT_ROOT_ENV, "fairsan-runs")
    return os.path.join(root, f"run-seed{seed}")


def _train_one(job):
    df, schema, blocks, fold, alpha, config, cell_dir = job
    _, sanitizer = train_cell(df, schema, blocks, fold, alpha, config)
    sanitizer.save(cell_dir)
    return fold, alpha, sanitizer.best_epoch_


def cmd_train(args):
    if args.sweep is None and not args.alpha:
        raise UsageError("give --alpha or --sweep")
    alphas = alpha_progression(args.sweep) if args.sweep is not None else list(args.alpha)
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise UsageError(f"alpha must lie in [0, 1], got {a}")
    schema = Schema.from_json(args.schema)
    df = read_csv(args.input, delimiter=args.delimiter)
    out = args.out or _default_out(args.seed)
    os.makedirs(out, exist_ok=True)
    config = CVConfig(n_folds=args.folds, folds=args.fold or None, seed=args.seed,
                      sanitizer=_sanitizer_params(args))
    blocks = split_folds(len(df), config.n_folds, derive_seed(config.seed, purpose="folds"))
    shutil.copyfile(args.input, os.path.join(out, "dataset.csv"))
    manifest = {
        "fairsan_version": __version__,
        "manifest_version": 1,
        "dataset_sha256": _sha256(args.input),
        "delimiter": args.delimiter,
        "schema": schema.to_dict(),
        "schema_sha256": hashlib.sha256(
            json.dumps(schema.to_dict(), sort_keys=True).encode("utf-8")).hexdigest(),
        "seed": args.seed,
        "alphas": alphas,
        "n_folds": config.n_folds,
        "folds": config.fold_ids(),
        "sanitizer": config.sanitizer,
        "n_records": len(df),
    }
    _dump_json(os.path.join(out, "run_manifest.json"), manifest)
    np.savetxt(os.path.join(out, "folds.txt"), blocks, fmt="%d")
    jobs = []
    for fold in config.fold_ids():
        fold_dir = os.path.join(out, f"fold_{fold}")
        os.makedirs(fold_dir, exist_ok=True)
        train, _, _ = fold_indices(blocks, fold)
        encoder = TabularEncoder(schema).fit(df.iloc[train])
        _dump_json(os.path.join(fold_dir, "encoder.json"), encoder.to_dict())
        for alpha in alphas:
            jobs.append((df, schema, blocks, fold, alpha, config,
                         os.path.join(fold_dir, alpha_dirname(alpha))))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(_train_one, jobs))
    else:
        done = [_train_one(job) for job in jobs]
    for fold, alpha, epoch in done:
        print(f"fold {fold} alpha {alpha}: selected epoch {epoch}")
    print(f"run written to {out}")
    return EXIT_OK


# sanitize ----------------------------------------------------------------

class Run:
    """A training run directory written by ``fairsan train``."""

    def __init__(self, path):
        self.path = path
        manifest_path = os.path.join(path, "run_manifest.json")
        if not os.path.exists(manifest_path):
            raise UsageError(f"{path} is not a run directory (no run_manifest.json)")
        with open(manifest_path, encoding="utf-8") as fh:
            self.manifest = json.load(fh)
        self.schema = Schema.from_dict(self.manifest["schema"])

    def encoder(self, fold):
        path = os.path.join(self.path, f"fold_{fold}", "encoder.json")
        if not os.path.exists(path):
            raise UsageError(f"run has no fold {fold}")
        with open(path, encoding="utf-8") as fh:
            return TabularEncoder.from_dict(json.load(fh))

    def sanitizer(self, fold, alpha, epoch=None):
        path = os.path.join(self.path, f"fold_{fold}", alpha_dirname(alpha))
        if not os.path.exists(os.path.join(path, "sanitizer.json")):
            raise UsageError(f"missing checkpoints for fold {fold}, alpha {alpha}")
        return Sanitizer.load(path, epoch=epoch)

    def dataset(self):
        return read_csv(os.path.join(self.path, "dataset.csv"),
                        delimiter=self.manifest.get("delimiter", ","))

    def blocks(self):
        return np.loadtxt(os.path.join(self.path, "folds.txt"), dtype=np.int64, ndmin=1)


def _format_frame(frame):
    out = frame.copy()
    for name in out.columns:
        if out[name].dtype.kind == "f":
            out[name] = [repr(float(v)) for v in out[name]]
    return out


def cmd_sanitize(args):
    run = Run(args.run_dir)
    alphas = run.manifest["alphas"]
    if args.alpha is None:
        if len(alphas) != 1:
            raise UsageError(f"run has several alphas {alphas}; choose one with --alpha")
        alpha = alphas[0]
    else:
        matches = [a for a in alphas if abs(a - args.alpha) < 1e-12]
        if not matches:
            raise UsageError(f"alpha {args.alpha} not in run (has {alphas})")
        alpha = matches[0]
    encoder = run.encoder(args.fold)
    sanitizer = run.sanitizer(args.fold, alpha, epoch=args.epoch)
    raw = read_csv(args.input, delimiter=args.delimiter)
    missing = [c for c in run.schema.names if c not in raw.columns]
    if missing:
        raise DataError(f"input lacks schema columns {missing}")
    X = encoder.transform(raw)
    public, s = X[:, :encoder.sensitive_index_], X[:, encoder.sensitive_index_]
    encoded = sanitizer.transform(public, s, noise_seed=args.noise_seed)
    if args.encoded_out:
        names = list(encoder.get_feature_names_out())[:encoded.shape[1]]
        with open(args.encoded_out, "w", encoding="utf-8") as fh:
            fh.write(",".join(names) + "\n")
            for row in encoded:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    decoded = encoder.inverse_transform(encoded)
    header = [c for c in raw.columns if c != run.schema.sensitive.name]
    for extra in header:
        if extra not in decoded.columns:
            decoded[extra] = raw[extra].to_numpy()
    decoded = _format_frame(decoded[header])
    out = args.output or os.path.splitext(args.input)[0] + ".sanitized.csv"
    decoded.to_csv(out, index=False, sep=args.delimiter, lineterminator="\n")
    print(f"sanitized {len(decoded)} records with epoch {sanitizer.best_epoch_} -> {out}")
    return EXIT_OK


# evaluate ----------------------------------------------------------------

def cmd_evaluate(args):
    run = Run(args.run_dir)
    scenarios = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    for sc in scenarios:
        if sc not in SCENARIOS:
            raise UsageError(f"unknown scenario {sc!r}; choose from {sorted(SCENARIOS)}")
    df = run.dataset()
    blocks = run.blocks()
    config = CVConfig(n_folds=run.manifest["n_folds"], folds=run.manifest["folds"],
                      seed=run.manifest["seed"], scenarios=tuple(scenarios),
                      families=tuple(args.families.split(",")),
                      sanitizer=run.manifest["sanitizer"])
    baseline_only = all(not SCENARIOS[sc].uses_sanitized for sc in scenarios)
    out = args.out or os.path.join(run.path, "evaluation")
    os.makedirs(out, exist_ok=True)
    results, damage = [], []
    for fold in config.fold_ids():
        encoder = run.encoder(fold)
        alphas = [None] if baseline_only else run.manifest["alphas"]
        for alpha in alphas:
            sanitizer = None if alpha is None else run.sanitizer(fold, alpha)
            probe_dir = os.path.join(out, "probes", f"fold_{fold}",
                                     "baseline" if alpha is None else alpha_dirname(alpha))
            res, dmg = evaluate_cell(df, encoder, sanitizer, blocks, fold, alpha, config,
                                     probe_dir=probe_dir)
            results.extend(res)
            damage.extend(dmg)
    write_results_csv(os.path.join(out, "results.csv"), results)
    write_long(os.path.join(out, "metrics_long.csv"), os.path.join(out, "metrics_long.json"),
               results)
    write_damage_csv(os.path.join(out, "damage.csv"), damage)
    write_summary_json(os.path.join(out, "summary.json"), aggregate(results))
    print(f"{len(results)} result rows -> {out}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="fairsan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("schema", help="infer a schema file from a CSV")
    p.add_argument("input")
    p.add_argument("--sensitive", required=True)
    p.add_argument("--decision", required=True)
    p.add_argument("--kind", action="append", default=[], metavar="NAME=KIND",
                   help="force a column kind (numeric or categorical)")
    p.add_argument("--log-column", action="append", default=[], metavar="NAME")
    p.add_argument("--threshold", type=int, default=5,
                   help="numeric columns with fewer distinct values become categorical")
    p.add_argument("--delimiter", default=",")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser("train", help="train sanitizers for every fold and alpha")
    p.add_argument("input")
    p.add_argument("--schema", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--alpha", type=float, nargs="+")
    group.add_argument("--sweep", type=int, metavar="K", help="use alpha_1..alpha_K")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--disc-ratio", type=int, default=50)
    p.add_argument("--noise-dim", type=int, default=3)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--disc-lr", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=10, help="number of blocks")
    p.add_argument("--fold", type=int, action="append", help="train only these folds")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--delimiter", default=",")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sanitize", help="sanitize a CSV with a trained run")
    p.add_argument("run_dir")
    p.add_argument("input")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--alpha", type=float)
    p.add_argument("--epoch", type=int, help="override the selected epoch")
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--delimiter", default=",")
    p.add_argument("-o", "--output")
    p.add_argument("--encoded-out", metavar="CSV",
                   help="also write the sanitized records in the encoded [0, 1] space")
    p.set_defaults(func=cmd_sanitize)

    p = sub.add_parser("evaluate", help="scenario evaluation of a trained run")
    p.add_argument("run_dir")
    p.add_argument("--scenarios", default="baseline,s1,s2,s3,s4")
    p.add_argument("--families", default=",".join(FAMILIES))
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, FairsanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
