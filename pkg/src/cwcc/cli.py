"""Command-line harness: ``cwcc synth|train|eval|predict|uq``.

Data goes to files and standard output, diagnostics to standard error.  Every
report starts with a header naming the package version, the seed, a hash of
the effective flags and the CRC of any checkpoint involved, so a number in a
report can always be traced back to the run that produced it.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import METHODS, estimate
from .dataset import (SynthConfig, cross_validation_splits, load_manifest, read_image,
                      resize_image, stack, synthesize, write_image, write_manifest)
from .formats import file_crc, read_tensors
from .metrics import ErrorSummary, pearson, recovery_error, reproduction_error, summarize
from .model import (CwccConfig, CwccModel, TrainConfig, correct_image, count_parameters,
                    load_checkpoint, save_checkpoint, train)
from .uncertainty import (BranchTrainConfig, ErrorDataset, UncertaintyBranch,
                          build_error_dataset, threshold_filter, train_branch)

log = logging.getLogger(__name__)

EVAL_METHODS = ("cwcc", *METHODS, "ground_truth")
TAU_SWEEP = tuple(np.round(np.arange(0.5, 10.01, 0.5), 4))


class CliError(Exception):
    """A user-facing failure: printed to stderr, exit status 1."""


# --------------------------------------------------------------------- helpers
def _config_hash(args: argparse.Namespace) -> str:
    flags = {k: v for k, v in vars(args).items() if k not in ("out", "func", "verbose")}
    blob = json.dumps(flags, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _header(args, checkpoint: Path | None = None) -> list[str]:
    crc = file_crc(checkpoint) if checkpoint is not None else "none"
    return [f"# cwcc {__version__} {args.command}", f"# seed: {args.seed}",
            f"# config_hash: {_config_hash(args)}", f"# checkpoint_crc: {crc}"]


def _emit_report(lines: list[str], out: Path) -> None:
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _summary_lines(title: str, rec: ErrorSummary, rep: ErrorSummary) -> list[str]:
    cols = ErrorSummary.FIELDS
    lines = [title, "metric        " + "  ".join(f"{c:>12}" for c in cols)]
    for name, s in (("recovery", rec), ("reproduction", rep)):
        lines.append(f"{name:<14}" + "  ".join(f"{_fmt(getattr(s, c)):>12}" for c in cols))
    return lines


def _manifest(args):
    if not args.manifest:
        raise CliError("--manifest is required")
    return load_manifest(args.manifest)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint(args) -> Path:
    if not args.checkpoint:
        raise CliError("--checkpoint is required")
    path = Path(args.checkpoint)
    if not path.exists():
        raise CliError(f"checkpoint not found: {path}")
    return path


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr)


def _fit(args, train_samples, val_samples=None) -> tuple[CwccModel, list]:
    cfg = CwccConfig(input_size=args.input_size, variant=args.variant)
    model = CwccModel(cfg, seed=args.seed)
    val = stack(val_samples, cfg.input_size) if val_samples else None
    return train(model, stack(train_samples, cfg.input_size), val, _train_config(args),
                 seed=args.seed)


# -------------------------------------------------------------------- commands
def cmd_synth(args) -> int:
    if args.n < 1:
        raise CliError(f"--n must be >= 1, got {args.n}")
    cfg = SynthConfig(size=args.size, reflectance_bias=tuple(args.bias), grey_mean=args.grey_mean,
                      noise_std=args.noise, folds=args.folds, seed=args.seed)
    samples = synthesize(cfg, args.n)
    out = _out_dir(args)
    (out / "images").mkdir(exist_ok=True)
    for i, s in enumerate(samples):
        s.path = out / "images" / f"{i:05d}.rif"
        write_image(s.image, s.path)
    write_manifest(samples, out / "manifest.csv")
    print(f"wrote {len(samples)} images and {out / 'manifest.csv'}")
    return 0


def cmd_train(args) -> int:
    samples = _manifest(args)
    held = {args.test_fold, args.val_fold} - {None}
    train_s = [s for s in samples if s.fold not in held]
    val_s = [s for s in samples if s.fold == args.val_fold] if args.val_fold is not None else None
    if not train_s:
        raise CliError("no training samples left after removing held-out folds")
    if val_s is not None and not val_s:
        raise CliError(f"validation fold {args.val_fold} is empty")
    out = _out_dir(args)
    model, history = _fit(args, train_s, val_s)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.cwck"
    save_checkpoint(model, ckpt, train_seed=args.seed, epochs=args.epochs,
                    test_fold=args.test_fold, val_fold=args.val_fold)
    _write_csv(out / "train_log.csv", ["epoch", "train_err_deg", "val_err_deg"],
               [(h.epoch, repr(h.train_err_deg), repr(h.val_err_deg) if val_s else "")
                for h in history])
    best = min(history, key=lambda h: h.val_err_deg) if history else None
    lines = _header(args, ckpt) + [
        f"variant: {args.variant}", f"parameters: {count_parameters(model)}",
        f"training images: {len(train_s)}", f"checkpoint: {ckpt}"]
    if best is not None:
        lines.append(f"selected epoch: {best.epoch} (train {_fmt(best.train_err_deg)} deg, "
                     f"selection {_fmt(best.val_err_deg)} deg)")
    _emit_report(lines, out)
    return 0


def _estimates(args, samples, model: CwccModel | None) -> np.ndarray:
    if args.method == "ground_truth":
        return np.stack([s.gt for s in samples])
    if args.method == "cwcc":
        x, _ = stack(samples, model.config.input_size)
        return model.predict(x)
    params = {"p": args.p, "sigma": args.sigma, "order": args.order}
    return np.stack([estimate(args.method, s.load(), **params) for s in samples])


def _error_rows(samples, est):
    gts = np.stack([s.gt for s in samples])
    rec = np.atleast_1d(recovery_error(gts, est))
    rep = np.atleast_1d(reproduction_error(gts, est))
    rows = [(s.path.as_posix() if s.path else "", s.fold, *map(repr, map(float, e)),
             repr(float(a)), repr(float(b))) for s, e, a, b in zip(samples, est, rec, rep)]
    return rows, rec, rep


ERROR_HEADER = ["path", "fold", "est_r", "est_g", "est_b", "recovery_deg", "reproduction_deg"]


def cmd_eval(args) -> int:
    samples = _manifest(args)
    out = _out_dir(args)
    ckpt = None
    model = None
    if args.method == "cwcc" and not args.cv:
        ckpt = _checkpoint(args)
        model = load_checkpoint(ckpt)
    lines = _header(args, ckpt) + [f"method: {args.method}"]
    if args.cv:
        all_rows, fold_rec, fold_rep = [], [], []
        for k, (train_s, test_s) in enumerate(cross_validation_splits(samples, args.cv)):
            fold_model = _fit(args, train_s)[0] if args.method == "cwcc" else None
            rows, rec, rep = _error_rows(test_s, _estimates(args, test_s, fold_model))
            all_rows += rows
            fold_rec.append(summarize(rec))
            fold_rep.append(summarize(rep))
            lines += _summary_lines(f"fold {k} (n={len(test_s)})", fold_rec[-1], fold_rep[-1])
        lines += _summary_lines(f"average over {args.cv} folds",
                                ErrorSummary.average(fold_rec), ErrorSummary.average(fold_rep))
    else:
        if args.fold is not None:
            samples = [s for s in samples if s.fold == args.fold]
            if not samples:
                raise CliError(f"fold {args.fold} has no samples")
        all_rows, rec, rep = _error_rows(samples, _estimates(args, samples, model))
        lines += _summary_lines(f"all (n={len(samples)})", summarize(rec), summarize(rep))
    _write_csv(out / "errors.csv", ERROR_HEADER, all_rows)
    _emit_report(lines, out)
    return 0


def cmd_predict(args) -> int:
    ckpt = _checkpoint(args)
    if not args.image:
        raise CliError("--image is required")
    model = load_checkpoint(ckpt)
    image = read_image(args.image)
    e = model.predict(resize_image(image, model.config.input_size))
    print(" ".join(f"{v:.10f}" for v in e))
    tensors, _ = read_tensors(ckpt)
    if any(k.startswith("uq/") for k in tensors):
        from .uncertainty import hidden_and_estimate
        hidden, _ = hidden_and_estimate(model, resize_image(image, model.config.input_size))
        print(f"predicted_error_deg {_fmt(float(UncertaintyBranch.from_state(tensors).predict(hidden)[0]))}")
    if args.out:
        out = _out_dir(args)
        target = out / f"{Path(args.image).stem}_corrected.rif"
        write_image(correct_image(image, e), target)
        log.info("corrected image written to %s", target)
    return 0


def cmd_uq(args) -> int:
    samples = _manifest(args)
    ckpt = _checkpoint(args)
    model = load_checkpoint(ckpt)
    out = _out_dir(args)
    if args.cv:
        test_folds = list(range(args.cv))
        next(cross_validation_splits(samples, args.cv))  # validates the fold ids
    else:
        fold = args.test_fold if args.test_fold is not None else model.metadata.get("test_fold")
        if fold is None:
            raise CliError("no held-out fold: pass --test-fold or --cv")
        test_folds = [fold]
    x, y = stack(samples, model.config.input_size)
    full = build_error_dataset(model, x, y)
    folds = np.array([s.fold for s in samples])
    hyper = BranchTrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr)
    lines = _header(args, ckpt)
    scatter, correlations = [], []
    for k in test_folds:
        test = folds == k
        if not test.any() or test.all():
            raise CliError(f"fold {k} must hold some but not all samples")
        sub = ErrorDataset(full.hidden[~test], full.errors[~test])
        branch, _ = train_branch(UncertaintyBranch(seed=args.seed), sub, hyper,
                                 seed=args.seed, backbone=model)
        pred = branch.predict(full.hidden[test])
        true = full.errors[test]
        scatter += [(k, repr(float(p)), repr(float(t))) for p, t in zip(pred, true)]
        try:
            r = pearson(pred, true)
            correlations.append(r)
            lines.append(f"fold {k}: pearson {_fmt(r)} (n={int(test.sum())})")
        except ValueError as exc:
            lines.append(f"fold {k}: pearson undefined ({exc})")
        name = f"uq_fold{k}.cwck" if args.cv else "uq.cwck"
        kept = {k: v for k, v in model.metadata.items() if k not in ("config", "variant", "seed")}
        save_checkpoint(model, out / name, branch=branch, **kept, uq_test_fold=k)
    _write_csv(out / "scatter.csv", ["fold", "predicted_deg", "true_deg"], scatter)
    pairs = np.array([(float(p), float(t)) for _, p, t in scatter])
    if correlations:
        lines.append(f"mean fold pearson: {_fmt(float(np.mean(correlations)))}")
    if len(pairs) > 1 and np.ptp(pairs[:, 0]) > 0 and np.ptp(pairs[:, 1]) > 0:
        lines.append(f"pooled pearson: {_fmt(pearson(pairs[:, 0], pairs[:, 1]))}")
    report = threshold_filter(pairs, args.tau)
    lines.append(f"unfiltered worst-25% mean true error: {_fmt(summarize(pairs[:, 1]).worst25_mean)}")
    lines.append("threshold: " + report.describe())
    sweep = []
    for tau in sorted(set(TAU_SWEEP) | {args.tau}):
        r = threshold_filter(pairs, tau)
        sweep.append((_fmt(tau), r.accepted, r.rejected,
                      "" if r.worst_accepted is None else repr(r.worst_accepted)))
    _write_csv(out / "tau_sweep.csv", ["tau_deg", "accepted", "rejected", "worst_accepted_deg"],
               sweep)
    _emit_report(lines, out)
    return 0


# ---------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--manifest")
    common.add_argument("--checkpoint")
    common.add_argument("--out", default=".")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    hyper = argparse.ArgumentParser(add_help=False)
    hyper.add_argument("--epochs", type=int, default=30)
    hyper.add_argument("--batch", type=int, default=16)
    hyper.add_argument("--lr", type=float, default=1e-3)
    hyper.add_argument("--input-size", type=int, default=128)
    hyper.add_argument("--variant", choices=("shared", "per_channel"), default="shared")

    p = argparse.ArgumentParser(prog="cwcc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cwcc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--bias", type=float, nargs=3, default=(1.0, 1.0, 1.0),
                   metavar=("R", "G", "B"), help="per-channel reflectance bias")
    s.add_argument("--grey-mean", action="store_true",
                   help="force every scene's mean reflectance to be neutral")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", parents=[common, hyper], help="train a CWCC model")
    t.add_argument("--test-fold", type=int, help="fold excluded from training")
    t.add_argument("--val-fold", type=int, help="fold used for best-epoch selection")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common, hyper], help="evaluate a model or baseline")
    e.add_argument("--method", choices=EVAL_METHODS, default="cwcc")
    e.add_argument("--cv", type=int, help="run F-fold cross validation")
    e.add_argument("--fold", type=int, help="evaluate one fold only")
    e.add_argument("--p", type=float, help="Minkowski order (shades_of_grey, grey_edge)")
    e.add_argument("--sigma", type=float, help="Gaussian sigma (grey_edge)")
    e.add_argument("--order", type=int, choices=(1, 2), help="derivative order (grey_edge)")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", parents=[common], help="estimate and correct one image")
    r.add_argument("--image")
    r.set_defaults(func=cmd_predict, out=None)

    u = sub.add_parser("uq", parents=[common], help="train and assess the uncertainty branch")
    u.add_argument("--tau", type=float, default=2.5)
    u.add_argument("--epochs", type=int, default=50)
    u.add_argument("--batch", type=int, default=16)
    u.add_argument("--lr", type=float, default=1e-3)
    u.add_argument("--cv", type=int, help="hold out each of F folds in turn")
    u.add_argument("--test-fold", type=int)
    u.set_defaults(func=cmd_uq)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"cwcc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
