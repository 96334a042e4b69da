"""``stegozoo`` command line: zoo generation, attacks, features, detection.

Exit codes: 0 success, 2 bad arguments or configuration, 3 runtime failure.
Every command writes ``run_config.json`` (its resolved arguments) next to its
outputs. Relative paths are resolved against ``$STEGOZOO_HOME`` when set.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, bitview, featurex, stegattack, tensorstore, zooforge
from .detectkit import checkpoint, experiment
from .detectkit.experiment import EvalReport

log = logging.getLogger("stegozoo")

DEFAULT_SEED = 0
DEFAULT_PAYLOAD_BYTES = 256
PIPELINE_METHODS = {"loss": ("mean_eps", "rf", "gb", "hgb"), "grads": ("rf", "gb", "hgb"), "weights": ("rf", "gb", "hgb")}


class ConfigError(ValueError):
    """Bad user input; maps to exit code 2."""


def parse_levels(text: str) -> list[int]:
    """``"8"``, ``"1..23"``, ``"1,2,4,8"`` or a mix like ``"1..4,8"``."""
    levels = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            levels.extend(range(int(lo), int(hi) + 1))
        elif part:
            levels.append(int(part))
    if not levels:
        raise ConfigError(f"empty level list {text!r}")
    for x in levels:
        if not stegattack.MIN_X <= x <= stegattack.MAX_X:
            raise ConfigError(f"X must lie in [{stegattack.MIN_X}, {stegattack.MAX_X}], got {x}")
    return sorted(set(levels))


def _levels_arg(text: str) -> list[int]:
    try:
        return parse_levels(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _seeds_arg(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated seed list: {text!r}") from None


def _path(args, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() or not args.home else Path(args.home) / p


def _seed(args, name: str = "seed") -> int:
    value = getattr(args, name, None)
    if value is None:
        if args.strict:
            raise ConfigError(f"--{name.replace('_', '-')} is required in --strict mode")
        setattr(args, name, DEFAULT_SEED)
        return DEFAULT_SEED
    return value


def write_run_config(directory: Path, command: str, params: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    cfg = {"command": command, "version": __version__, "params": params}
    (directory / "run_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")


def _params(args) -> dict:
    skip = {"func", "home", "verbose"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in skip}


# zoo gen

def cmd_zoo_gen(args) -> int:
    seed = _seed(args)
    out = _path(args, args.out)
    try:
        manifest = zooforge.ZooManifest(
            zoo_id=args.zoo_id or out.name,
            arch=args.arch,
            hidden_activation=args.hidden,
            count=args.count,
            seed=seed,
            epochs=args.epochs,
            max_epochs=args.max_epochs,
            lr=args.lr,
            accuracy_floor=args.floor,
            init_mode=args.init_mode,
            init_jitter=args.init_jitter,
        )
    except (ValueError, tensorstore.ShapeError) as exc:
        raise ConfigError(str(exc)) from None
    t0 = time.time()
    models = zooforge.generate_zoo(manifest, jobs=args.jobs)
    zooforge.save_manifest(manifest, out)
    zooforge.save_models(models, zooforge.benign_dir(out))
    write_run_config(out, "zoo gen", _params(args))
    log.info("wrote %d models to %s in %.1fs", len(models), out, time.time() - t0)
    return 0


# attack

def _payload(args) -> stegattack.Payload:
    if args.payload is not None:
        data = _path(args, args.payload).read_bytes()
        if not data:
            raise ConfigError("payload file is empty")
        return stegattack.Payload.from_bytes(data)
    seed = _seed(args, "payload_seed")
    return stegattack.Payload.random(args.payload_bytes, seed)


def cmd_attack(args) -> int:
    if (args.x is None) == (args.sweep is None):
        raise ConfigError("give exactly one of --x or --sweep")
    levels = [args.x] if args.x is not None else args.sweep
    for x in levels:
        if not stegattack.MIN_X <= x <= stegattack.MAX_X:
            raise ConfigError(f"X must lie in [{stegattack.MIN_X}, {stegattack.MAX_X}], got {x}")
    root = _path(args, args.zoo)
    payload = _payload(args)
    benign = zooforge.load_models(zooforge.benign_dir(root))
    for x in levels:
        attacked = zooforge.attack_zoo(benign, x, payload)
        out = zooforge.attacked_dir(root, x)
        zooforge.save_models(attacked, out)
        info = {"x_lsb": x, "payload_bits": len(payload), "payload_sha256": payload.digest(), "models": len(attacked)}
        (out / "attack.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
        log.info("X=%d: attacked %d models", x, len(attacked))
    write_run_config(root / "attacked", "attack", _params(args))
    return 0


# extract

def cmd_extract(args) -> int:
    m = tensorstore.load(_path(args, args.model))
    x = args.x if args.x is not None else int(m.meta.get("x_lsb", 0))
    if not stegattack.MIN_X <= x <= stegattack.MAX_X:
        raise ConfigError("model has no recorded x_lsb; pass --x")
    n_bits = args.bits if args.bits is not None else m.n_params * x
    try:
        payload = stegattack.extract(m, x, n_bits)
    except stegattack.CapacityError as exc:
        raise ConfigError(str(exc)) from None
    if args.out:
        out = _path(args, args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(payload.to_bytes())
        write_run_config(out.parent, "extract", _params(args))
    else:
        print(payload.to_bytes().hex())
    return 0


# features

def _ae_config(args) -> featurex.AEConfig:
    return featurex.AEConfig(bottleneck=args.ae_bottleneck, epochs=args.ae_epochs, lr=args.ae_lr,
                             weight_decay=args.ae_weight_decay)


def cmd_features(args) -> int:
    seed = _seed(args)
    root = _path(args, args.zoo)
    out = _path(args, args.out)
    levels = args.levels or zooforge.attacked_levels(root)
    if not levels:
        raise ConfigError(f"{root} has no attacked levels; run 'attack' first")
    benign = zooforge.load_models(zooforge.benign_dir(root))
    ae = None
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "loss":
        ids = [m.meta["model_id"] for m in benign]
        train_ids = featurex.split_benign(ids, args.train_frac, seed)
        chosen = set(train_ids)
        ae = featurex.train_autoencoder([m for m in benign if m.meta["model_id"] in chosen], _ae_config(args), seed)
        ae.save(out / "ae.mzw")
        split = {"seed": seed, "train_frac": args.train_frac, "train_ids": train_ids}
        (out / "split.json").write_text(json.dumps(split, indent=2) + "\n")
    for x in levels:
        attacked = zooforge.load_models(zooforge.attacked_dir(root, x))
        ds = featurex.build_dataset(benign, attacked, args.kind, ae, args.grad_target)
        ds.meta.update(zoo=str(root), x_lsb=x, grad_target=args.grad_target)
        featurex.write_csv(ds, out / f"x{x}.csv")
        log.info("%s features for X=%d: %d rows x %d", args.kind, x, len(ds), ds.dim)
    write_run_config(out, "features", _params(args))
    return 0


def _load_feature_dir(directory: Path, levels) -> tuple[dict, list | None]:
    datasets = {}
    for x in levels:
        path = directory / f"x{x}.csv"
        if not path.exists():
            raise experiment.ExperimentError(f"missing dataset for X={x}: {path}")
        datasets[x] = featurex.read_csv(path)
    split = directory / "split.json"
    train_ids = json.loads(split.read_text())["train_ids"] if split.exists() else None
    return datasets, train_ids


def _available_levels(directory: Path) -> list[int]:
    found = [int(p.stem[1:]) for p in directory.glob("x*.csv") if p.stem[1:].isdigit()]
    return sorted(found)


# detect

def cmd_detect_train(args) -> int:
    seed = _seed(args)
    data = _path(args, args.data)
    ds = featurex.read_csv(data)
    split = data.parent / "split.json"
    train_ids = json.loads(split.read_text())["train_ids"] if split.exists() else None
    row, det = experiment.run_level(ds, args.method, seed, train_ids)
    out = _path(args, args.out)
    info = {"feature": ds.kind, "method": args.method, "seed": seed, "x_lsb": row.x_lsb, "data": str(data)}
    checkpoint.save(det, out, info)
    write_run_config(out.parent, "detect train", _params(args))
    print(EvalReport([row]).table())
    return 0


def evaluate_directory(feature_dir: Path, method: str, seeds: list[int], levels=None) -> EvalReport:
    levels = levels or _available_levels(feature_dir)
    datasets, train_ids = _load_feature_dir(feature_dir, levels)
    report = EvalReport()
    for seed in seeds:
        report.rows += experiment.run_experiment(datasets, method, seed, levels, train_ids).rows
    return report


def cmd_detect_eval(args) -> int:
    seeds = args.seeds if args.seeds else [_seed(args)]
    features = _path(args, args.features)
    levels = args.levels or list(experiment.LEVELS)
    report = evaluate_directory(features, args.method, seeds, levels)
    out = _path(args, args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "report.csv")
    (out / "f1.svg").write_text(experiment.plot_svg([report]))
    (out / "table.txt").write_text(report.table() + "\n")
    write_run_config(out, "detect eval", _params(args))
    print(report.table())
    return 0


# report

def cmd_report(args) -> int:
    reports = [EvalReport.read(_path(args, p)) for p in args.reports]
    if args.compare:
        header, table = experiment.compare(reports, args.metric)
        text = experiment.format_compare(header, table)
    else:
        text = "\n\n".join(r.table() for r in reports)
    print(text)
    if args.out:
        out = _path(args, args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        if args.compare:
            rows = [",".join(header)] + [",".join("" if v is None else repr(v) for v in row) for row in table]
            out.write_text("\n".join(rows) + "\n")
        else:
            out.write_text(text + "\n")
        if args.svg:
            out.with_suffix(".svg").write_text(experiment.plot_svg(reports, args.metric))
        write_run_config(out.parent, "report", _params(args))
    return 0


# inspect

def cmd_inspect(args) -> int:
    m = tensorstore.load(_path(args, args.model))
    w = tensorstore.flatten(m)
    words = bitview.as_words(w)
    x = args.x if args.x is not None else int(m.meta.get("x_lsb", 0)) or None
    print(f"arch {m.arch}  n_W={m.n_params}  meta={json.dumps(dict(m.meta), sort_keys=True)[:200]}")
    stop = min(w.size, args.start + args.count)
    for i in range(args.start, stop):
        bits = bitview.word_to_bits(int(words[i]))
        s, e, mant = bits[0], bits[1:9], bits[9:]
        if x:
            mant = mant[:23 - x] + "[" + mant[23 - x:] + "]"
        print(f"{i:6d}  {float(w[i]): .9e}  0x{int(words[i]):08x}  {s}|{e}|{mant}")
    return 0


# pipeline

def run_pipeline(
    root: Path,
    seed: int = 0,
    count: int = 200,
    levels=experiment.LEVELS,
    kinds=("loss", "grads", "weights"),
    methods: dict | None = None,
    payload_bytes: int = DEFAULT_PAYLOAD_BYTES,
    jobs: int = 1,
) -> dict[str, Path]:
    """zoo gen -> attack sweep -> features -> detect eval, all under ``root``.

    Returns the report CSV path for every ``<kind>_<method>``.
    """
    root = Path(root)
    methods = methods or PIPELINE_METHODS
    levels = list(levels)
    common = ["--home", str(root), "--jobs", str(jobs)]
    level_arg = ",".join(map(str, levels))
    steps = [
        common + ["zoo", "gen", "--count", str(count), "--seed", str(seed), "--out", "zoo"],
        common + ["attack", "--zoo", "zoo", "--sweep", level_arg, "--payload-seed", str(seed),
                  "--payload-bytes", str(payload_bytes)],
    ]
    for kind in kinds:
        steps.append(common + ["features", "--zoo", "zoo", "--kind", kind, "--seed", str(seed),
                               "--out", f"features/{kind}", "--levels", level_arg])
    reports = {}
    for kind in kinds:
        for method in methods[kind]:
            name = f"{kind}_{method}"
            steps.append(common + ["detect", "eval", "--features", f"features/{kind}", "--method", method,
                                   "--seed", str(seed), "--levels", level_arg, "--out", f"reports/{name}"])
            reports[name] = root / "reports" / name / "report.csv"
    for argv in steps:
        code = main(argv)
        if code != 0:
            raise RuntimeError(f"pipeline step failed with exit code {code}: {' '.join(argv)}")
    return reports


def cmd_pipeline(args) -> int:
    seed = _seed(args)
    root = Path(args.out) if Path(args.out).is_absolute() or not args.home else Path(args.home) / args.out
    t0 = time.time()
    reports = run_pipeline(root, seed, args.count, args.levels or experiment.LEVELS, jobs=args.jobs)
    merged = [EvalReport.read(p) for p in reports.values()]
    header, table = experiment.compare(merged)
    (root / "reports" / "summary.txt").write_text(experiment.format_compare(header, table) + "\n")
    (root / "reports" / "f1.svg").write_text(experiment.plot_svg(merged))
    write_run_config(root, "pipeline", _params(args))
    print(experiment.format_compare(header, table))
    log.info("pipeline finished in %.1fs", time.time() - t0)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stegozoo", description=__doc__.splitlines()[0])
    p.add_argument("--home", default=os.environ.get("STEGOZOO_HOME"),
                   help="workspace for relative paths (default: $STEGOZOO_HOME or the current directory)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for zoo generation")
    p.add_argument("--strict", action="store_true", help="refuse to run without explicit seeds")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    zoo = sub.add_parser("zoo", help="model zoo generation").add_subparsers(dest="zoo_command", required=True)
    g = zoo.add_parser("gen", help="train a benign zoo")
    g.add_argument("--out", required=True)
    g.add_argument("--arch", default="2-8-8-2")
    g.add_argument("--hidden", default="tanh", help="hidden activation")
    g.add_argument("--count", type=int, default=200)
    g.add_argument("--seed", type=int)
    g.add_argument("--zoo-id")
    g.add_argument("--epochs", type=int, default=50, help="minimum epochs per model")
    g.add_argument("--max-epochs", type=int, default=400)
    g.add_argument("--lr", type=float, default=0.05)
    g.add_argument("--floor", type=float, default=0.9, help="train accuracy every model must reach")
    g.add_argument("--init-mode", choices=("shared", "independent"), default="shared")
    g.add_argument("--init-jitter", type=float, default=0.05)
    g.set_defaults(func=cmd_zoo_gen)

    a = sub.add_parser("attack", help="X-LSB fill attack on every model of a zoo")
    a.add_argument("--zoo", required=True)
    a.add_argument("--x", type=int)
    a.add_argument("--sweep", type=_levels_arg, help="levels, e.g. 1..23")
    a.add_argument("--payload", help="payload file (raw bytes)")
    a.add_argument("--payload-seed", type=int, help="draw a pseudorandom payload instead of --payload")
    a.add_argument("--payload-bytes", type=int, default=DEFAULT_PAYLOAD_BYTES)
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("extract", help="read the hidden bits back out of a model")
    e.add_argument("--model", required=True)
    e.add_argument("--x", type=int)
    e.add_argument("--bits", type=int, help="payload length in bits (default: full capacity)")
    e.add_argument("--out", help="write bytes here instead of printing hex")
    e.set_defaults(func=cmd_extract)

    f = sub.add_parser("features", help="feature datasets, one CSV per attack level")
    f.add_argument("--zoo", required=True)
    f.add_argument("--kind", choices=featurex.FEATURE_KINDS, required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int)
    f.add_argument("--levels", type=_levels_arg)
    f.add_argument("--train-frac", type=float, default=0.7, help="benign share used to fit the autoencoder")
    f.add_argument("--grad-target", choices=("zeros", "uniform"), default="zeros")
    f.add_argument("--ae-epochs", type=int, default=500)
    f.add_argument("--ae-lr", type=float, default=1e-3)
    f.add_argument("--ae-bottleneck", type=int)
    f.add_argument("--ae-weight-decay", type=float, default=3e-3)
    f.set_defaults(func=cmd_features)

    d = sub.add_parser("detect", help="train or evaluate detectors").add_subparsers(dest="detect_command",
                                                                                    required=True)
    t = d.add_parser("train", help="fit one detector on one dataset and save an SDK1 checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--method", choices=experiment.METHODS, required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_detect_train)
    ev = d.add_parser("eval", help="sweep a detector over attack levels")
    ev.add_argument("--features", required=True, help="directory of x<X>.csv datasets")
    ev.add_argument("--method", choices=experiment.METHODS, required=True)
    ev.add_argument("--seed", type=int)
    ev.add_argument("--seeds", type=_seeds_arg, help="comma-separated seeds; one row per seed and level")
    ev.add_argument("--levels", type=_levels_arg)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_detect_eval)

    r = sub.add_parser("report", help="print or join EvalReport CSVs")
    r.add_argument("reports", nargs="+")
    r.add_argument("--compare", action="store_true", help="join on attack level")
    r.add_argument("--metric", choices=("A", "R", "P", "F1"), default="F1")
    r.add_argument("--out")
    r.add_argument("--svg", action="store_true", help="also write a line chart next to --out")
    r.set_defaults(func=cmd_report)

    i = sub.add_parser("inspect", help="bit-level view of a model's weights")
    i.add_argument("--model", required=True)
    i.add_argument("--start", type=int, default=0)
    i.add_argument("--count", type=int, default=16)
    i.add_argument("--x", type=int, help="bracket the X LSB region")
    i.set_defaults(func=cmd_inspect)

    pl = sub.add_parser("pipeline", help="zoo gen, attack sweep, features and detect eval in one go")
    pl.add_argument("--out", required=True)
    pl.add_argument("--seed", type=int)
    pl.add_argument("--count", type=int, default=200)
    pl.add_argument("--levels", type=_levels_arg)
    pl.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"stegozoo: error: {exc}", file=sys.stderr)
        return 2
    except (zooforge.GenerationError, experiment.ExperimentError, featurex.FeatureError,
            tensorstore.FormatError, checkpoint.CheckpointError, FileNotFoundError,
            ArithmeticError, RuntimeError) as exc:
        print(f"stegozoo: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
