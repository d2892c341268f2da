"""Command-line entry point: ``brlgan {verify,gradcheck,train,sample,eval}``.

Exit status is 0 on success, 1 when a check or run fails and 2 on bad usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, kernels
from .analysis import EquivalenceReport, verify_film_equivalence
from .conditioning import FiLMParams
from .data import (ClassifierTrainingError, ShapeWorldSpec, generate_dataset,
                   image_grid, train_classifier, write_image_ppm)
from .gan import TrainConfig, build_models, load_checkpoint, save_checkpoint, train
from .gradcheck import LAYERS, check_layer
from .tensor import NonFiniteError, Rng

log = logging.getLogger("brlgan")

# stream ids under Rng(seed) used by the workflows; 1-3 belong to training
DATA_STREAM, TEST_STREAM, CLASSIFIER_STREAM, GRID_STREAM = 4, 5, 6, 7
DATA_KEYS = {"samples_per_class": int, "noise_std": float}
CLASSIFIER_SAMPLES = 128
CLASSIFIER_LR = 3e-3
TEST_SAMPLES = 8


class UsageError(Exception):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _config_types() -> dict:
    types = {f.name: type(f.default) for f in fields(TrainConfig)}
    types.update(DATA_KEYS)
    return {k: (_bool if t is bool else t) for k, t in types.items()}


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    types = _config_types()
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (s.strip() for s in line.partition("="))
        if not sep:
            raise UsageError(f"{path}:{n}: expected key=value")
        if key not in types:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        try:
            out[key] = types[key](val)
        except ValueError as e:
            raise UsageError(f"{path}:{n}: {e}") from None
    return out


def _dims(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected DxD_condxO, got {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected three positive sizes DxD_condxO, got {text!r}")
    return dims


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--out", default=None, help="directory for every artifact written")
    common.add_argument("--config", default=None, help="key=value file; flags take precedence")
    common.add_argument("--threads", type=int, default=1, help="BLAS thread cap (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--rank", type=int)
    training.add_argument("--depth", type=int)
    training.add_argument("--lr", type=float)
    training.add_argument("--beta1", type=float)
    training.add_argument("--batch", type=int)
    training.add_argument("--epochs", type=int)
    training.add_argument("--samples-per-class", dest="samples_per_class", type=int)
    training.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    training.add_argument("--no-squash", dest="squash", action="store_const", const=False,
                          help="leave the discriminator output unbounded")
    training.add_argument("--timing", action="store_true",
                          help="record wall time in metrics.csv (breaks byte-identical reruns)")

    p = argparse.ArgumentParser(prog="brlgan", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version",
                   version=f"brlgan {__version__} (kernels: {kernels.BACKEND})")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("verify", parents=[common],
                       help="check that FiLM equals a rank-2 bilinear map")
    s.add_argument("--dims", type=_dims, default=(8, 4, 6), help="DxD_condxO (default 8x4x6)")
    s.add_argument("--trials", type=int, default=100, help="random FiLM parameterizations")
    s.add_argument("--conditions", type=int, default=16, help="conditions probed per trial")

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    s.add_argument("--layer", choices=LAYERS + ("all",), default="all")
    s.add_argument("--draws", type=int, default=20)

    sub.add_parser("train", parents=[common, training], help="train the editing GAN")

    s = sub.add_parser("sample", parents=[common], help="edit one image per class with every attribute")
    s.add_argument("--checkpoint", required=True)

    s = sub.add_parser("eval", parents=[common], help="inception score and attribute accuracy")
    s.add_argument("--checkpoint", required=True, action="append",
                   help="checkpoint directory; repeat to score several")
    s.add_argument("--splits", type=int, default=10)
    return p


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_verify(args) -> int:
    D, D_cond, O = args.dims
    if args.trials < 1 or args.conditions < 1:
        raise UsageError("--trials and --conditions must be positive")
    rng = Rng(args.seed)
    report = EquivalenceReport(0.0, [])
    for _ in range(args.trials):
        p = FiLMParams.init(rng, D, D_cond, O, std=1.0)
        report = report.merge(verify_film_equivalence(p, 1, rng, args.conditions))
    summary = {"pass": report.passed, "dims": [D, D_cond, O], "trials": args.trials,
               "matrices": len(report.ranks), "max_deviation": report.max_deviation,
               "tolerance": report.tolerance, "max_rank": max(report.ranks),
               "rank_counts": {str(r): report.ranks.count(r) for r in sorted(set(report.ranks))}}
    line = json.dumps(summary, sort_keys=True)
    print(line)
    if args.out:
        (_out(args, ".") / "verify.json").write_text(line + "\n")
    return 0 if report.passed else 1


def cmd_gradcheck(args) -> int:
    layers = LAYERS if args.layer == "all" else (args.layer,)
    rows = ["layer,draws,checked,max_rel_error,redrawn,pass"]
    ok = True
    for layer in layers:
        r = check_layer(layer, seed=args.seed, draws=args.draws)
        ok &= r.passed
        rows.append(f"{r.layer},{r.draws},{r.checked},{r.max_rel_error:.6e},{r.redrawn},"
                    f"{int(r.passed)}")
        print(rows[-1] if len(rows) > 2 else "\n".join(rows), flush=True)
    if args.out:
        (_out(args, ".") / "gradcheck.csv").write_text("\n".join(rows) + "\n")
    return 0 if ok else 1


def train_settings(args) -> tuple[TrainConfig, ShapeWorldSpec]:
    settings = read_config(args.config) if args.config else {}
    for key in _config_types():
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    if args.seed is not None:
        settings["seed"] = args.seed
    data = {k: settings.pop(k) for k in DATA_KEYS if k in settings}
    cfg = TrainConfig.from_dict(settings)
    return cfg, ShapeWorldSpec(image_size=cfg.image_size, **data)


def cmd_train(args) -> int:
    cfg, spec = train_settings(args)
    out = _out(args, "run")
    dataset = generate_dataset(spec, Rng(cfg.seed).child(DATA_STREAM))
    if cfg.epochs == 0:
        G, D = build_models(cfg, dataset.num_classes)
        (out / "metrics.csv").write_text("epoch,loss_d,loss_g,seconds\n")
        save_checkpoint(out / "checkpoint", cfg, dataset, G, D)
        return 0
    result = train(cfg, dataset, out, record_time=args.timing)
    last = result.metrics[-1]
    print(json.dumps({"epochs": cfg.epochs, "loss_d": last[1], "loss_g": last[2],
                      "checkpoint": str(out / "checkpoint")}))
    return 0


def _dataset_spec(stored: dict, samples_per_class: int) -> ShapeWorldSpec:
    return ShapeWorldSpec(image_size=stored["image_size"], colors=stored["colors"],
                          shapes=stored["shapes"], samples_per_class=samples_per_class,
                          noise_std=stored["noise_std"])


def _load(path):
    if not (Path(path) / "manifest.json").is_file():
        raise UsageError(f"{path} is not a checkpoint directory (no manifest.json)")
    return load_checkpoint(path)


def cmd_sample(args) -> int:
    from .evaluate import edit_grid

    _, stored, G, _ = _load(args.checkpoint)
    rng = Rng(args.seed)
    test = generate_dataset(_dataset_spec(stored, TEST_SAMPLES), rng.child(TEST_STREAM))
    edited, sources = edit_grid(G, test, rng.child(GRID_STREAM))
    n = test.num_classes
    # first column holds the source, then one edit per attribute id
    rows = np.concatenate([test.images[sources][:, None], edited.reshape(n, n, *edited.shape[1:])],
                          axis=1)
    out = _out(args, ".")
    write_image_ppm(image_grid(rows.reshape(-1, *edited.shape[1:]), n, n + 1), out / "samples.ppm")
    return 0


def cmd_eval(args) -> int:
    from .evaluate import conditioning_accuracy, grid_inception_score

    rng = Rng(args.seed)
    out = _out(args, ".")
    classifiers = {}
    is_rows, acc_rows = [], []
    used = set()
    for path in args.checkpoint:
        cfg, stored, G, _ = _load(path)
        key = json.dumps(stored, sort_keys=True)
        if key not in classifiers:
            ref = generate_dataset(_dataset_spec(stored, CLASSIFIER_SAMPLES), rng.child(CLASSIFIER_STREAM))
            clf = train_classifier(ref.images, ref.labels, ref.num_classes,
                                   rng.child(CLASSIFIER_STREAM).child(0), lr=CLASSIFIER_LR)
            test = generate_dataset(_dataset_spec(stored, TEST_SAMPLES), rng.child(TEST_STREAM))
            classifiers[key] = clf, test
        clf, test = classifiers[key]
        mean, std, edited = grid_inception_score(G, clf, test, rng.child(GRID_STREAM), args.splits)
        acc = conditioning_accuracy(G, clf, test)
        is_rows.append(("brl", cfg.rank, repr(mean), repr(std)))
        acc_rows.append(("brl", cfg.rank, repr(acc)))
        name = f"edits_d{cfg.rank}"
        if name in used:
            name += f"_{len(used)}"
        used.add(name)
        n = test.num_classes
        write_image_ppm(image_grid(edited, n, n), out / f"{name}.ppm")
        print(json.dumps({"checkpoint": str(path), "d": cfg.rank, "is_mean": mean, "is_std": std,
                          "color_accuracy": acc}), flush=True)
    for name, header, rows in (("is_score.csv", ("method", "d", "mean", "std"), is_rows),
                               ("conditioning.csv", ("method", "d", "color_accuracy"), acc_rows)):
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    return 0


COMMANDS = {"verify": cmd_verify, "gradcheck": cmd_gradcheck, "train": cmd_train,
            "sample": cmd_sample, "eval": cmd_eval}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse: 0 for --help/--version, 2 for bad usage
        return int(e.code or 0)
    if args.seed is None and args.command != "train":
        args.seed = 0
    if args.seed is not None and args.seed < 0:
        print("brlgan: error: --seed must be non-negative", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("brlgan: error: --threads must be >= 1", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except (UsageError, ValueError, KeyError, FileNotFoundError) as e:
        print(f"brlgan {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (NonFiniteError, ClassifierTrainingError) as e:
        print(f"brlgan {args.command}: failed: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
