"""Command-line entry point for batch experiments: corpus synthesis,
training, evaluation, pseudo-label audits, gradient checks, and ablation
sweeps.  Every subcommand is deterministic given its flags and seed."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import SynthConfig, SynthCorpus, load_dataset, synth_corpus, write_corpus
from .detector import Mode
from .encoder import EncoderConfig
from .evaluate import ErrorCategory, audit_pseudo_labels, build_report, gold_items
from .gradcheck import run_gradcheck
from .trainer import (
    ABLATIONS,
    Checkpoint,
    TrainConfig,
    Variant,
    fit,
    teacher_pseudo_label,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse's default exit(2) to exit 1
        raise UsageError(message)


def _read_config_file(path: str) -> dict[str, str]:
    values = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"bad config line (expected key = value): {raw!r}")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values

TRAIN_KEYS = {
    "alpha": float, "beta": float, "lambda": float, "eta": float, "kappa": float,
    "aug_rate": float, "epochs": int, "batch": int, "lr": float, "seed": int,
    "mode": str, "variant": str, "ablate": str,
    "d": int, "layers": int, "vocab_buckets": int, "window": int, "max_n": int,
}


def _train_config(args, seed: int) -> TrainConfig:
    cfgfile = _read_config_file(args.config) if args.config else {}

    def pick(flag_value, key, cast):
        if flag_value is not None:
            return flag_value
        if key in cfgfile:
            try:
                return cast(cfgfile[key])
            except ValueError as exc:
                raise UsageError(f"bad config value for {key}: {exc}") from None
        return None

    def pick_default(flag_value, key, cast, default):
        v = pick(flag_value, key, cast)
        return default if v is None else v

    ablate_raw = pick_default(args.ablate, "ablate", str, "")
    ablations = frozenset(a for a in ablate_raw.replace("+", ",").split(",") if a)
    unknown = ablations - set(ABLATIONS)
    if unknown:
        raise UsageError(f"unknown ablations {sorted(unknown)}; valid: {ABLATIONS}")
    try:
        mode = Mode(pick_default(args.mode, "mode", str, "aste"))
        variant = Variant(pick_default(args.variant, "variant", str, "tfmt"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    enc = EncoderConfig(
        d=pick_default(args.d, "d", int, 16),
        layers=pick_default(args.layers, "layers", int, 2),
        vocab_buckets=pick_default(None, "vocab_buckets", int, 4096),
        window=pick_default(None, "window", int, 1),
        max_n=pick_default(None, "max_n", int, 24),
    )
    try:
        return TrainConfig(
            alpha=pick_default(args.alpha, "alpha", float, 1.0),
            beta=pick_default(args.beta, "beta", float, 0.005),
            ema_lambda=pick_default(args.ema_lambda, "lambda", float, 0.6),
            eta=pick_default(args.eta, "eta", float, 0.98),
            kappa=pick_default(args.kappa, "kappa", float, 0.3),
            aug_rate=pick_default(args.aug_rate, "aug_rate", float, 0.5),
            batch=pick_default(args.batch, "batch", int, 4),
            epochs=pick_default(args.epochs, "epochs", int, 10),
            lr=pick_default(args.lr, "lr", float, 1e-2),
            seed=seed,
            mode=mode,
            variant=variant,
            ablations=ablations,
            encoder=enc,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_bundle(data_dir: str) -> SynthCorpus:
    base = Path(data_dir)
    def read(name):
        p = base / f"{name}.txt"
        if not p.exists():
            raise UsageError(f"missing corpus file: {p}")
        return load_dataset(p)
    return SynthCorpus(
        source_train=read("source_train"),
        source_dev=read("source_dev"),
        target_unlabeled=read("target_unlabeled"),
        target_test=read("target_test"),
    )


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


METRIC_HEADER = ["epoch", "step", "l_rpn", "l_rpc", "l_sup", "l_uns", "l_mmd", "total",
                 "dev_f1", "test_f1"]


def _metric_rows(history: list[dict]) -> list[list[str]]:
    return [[_fmt(row[k]) for k in METRIC_HEADER] for row in history]


def _guard_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise UsageError(f"refusing to overwrite {path}; pass --force")


def _parse_seeds(args) -> list[int]:
    if args.seeds:
        try:
            return [int(s) for s in args.seeds.split(",") if s]
        except ValueError as exc:
            raise UsageError(f"bad --seeds: {exc}") from None
    return [args.seed if args.seed is not None else 0]


def _run_seeds(data: SynthCorpus, args, seeds: list[int], out: Path, tag: str,
               overrides: dict | None = None, force: bool = False,
               write_ckpt: bool = True) -> dict:
    """Train once per seed, write per-seed metric CSVs, return summary stats."""
    finals = []
    for seed in seeds:
        cfg = _train_config(args, seed)
        if overrides:
            from dataclasses import replace
            cfg = replace(cfg, **overrides)
        mpath = out / f"metrics_{tag}_seed{seed}.csv"
        _guard_overwrite(mpath, force)
        ckpt, rows = fit(data, cfg)
        _write_csv(mpath, METRIC_HEADER, _metric_rows(rows))
        if write_ckpt:
            save_checkpoint(out / f"checkpoint_{tag}_seed{seed}.bin", ckpt)
        finals.append(
            {
                "seed": seed,
                "best_epoch": ckpt.epoch,
                "dev_f1": rows[-1]["dev_f1"] if rows else 0.0,
                "best_dev_f1": max((r["dev_f1"] for r in rows), default=0.0),
                "test_f1": rows[ckpt.epoch - 1]["test_f1"] if rows and ckpt.epoch >= 1 else 0.0,
                "final_test_f1": rows[-1]["test_f1"] if rows else 0.0,
            }
        )
    test_scores = np.array([f["test_f1"] for f in finals])
    dev_scores = np.array([f["best_dev_f1"] for f in finals])
    return {
        "per_seed": finals,
        "mean_test_f1": float(test_scores.mean()),
        "std_test_f1": float(test_scores.std()),
        "mean_dev_f1": float(dev_scores.mean()),
        "std_dev_f1": float(dev_scores.std()),
    }


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        num_source=args.num_source,
        num_dev=args.num_dev,
        num_target=args.num_target,
        num_test=args.num_test,
        seed=args.seed if args.seed is not None else 0,
        num_aspects=args.num_aspects,
        num_opinions=args.num_opinions,
    )
    corpus = synth_corpus(cfg)
    paths = write_corpus(corpus, args.out)
    for name, p in paths.items():
        print(f"wrote {p} ({len(getattr(corpus, name))} sentences)")
    return EXIT_OK


def cmd_train(args) -> int:
    data = _load_bundle(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _parse_seeds(args)
    variant = args.variant or "tfmt"
    spath = out / "summary.csv"
    _guard_overwrite(spath, args.force)
    summary = _run_seeds(data, args, seeds, out, variant, force=args.force)
    header = ["variant", "seeds", "mean_dev_f1", "std_dev_f1", "mean_test_f1", "std_test_f1"]
    _write_csv(spath, header, [[
        variant, ";".join(str(s) for s in seeds),
        _fmt(summary["mean_dev_f1"]), _fmt(summary["std_dev_f1"]),
        _fmt(summary["mean_test_f1"]), _fmt(summary["std_test_f1"]),
    ]])
    for f in summary["per_seed"]:
        print(f"seed {f['seed']}: best epoch {f['best_epoch']}, "
              f"dev F1 {f['best_dev_f1']:.4f}, test F1 {f['test_f1']:.4f}")
    print(f"mean test F1 {summary['mean_test_f1']:.4f} +- {summary['std_test_f1']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if args.mode is not None and Mode(args.mode) != ckpt.config.mode:
        raise UsageError(
            f"mode mismatch: checkpoint is {ckpt.config.mode.value}, flag says {args.mode}"
        )
    records = load_dataset(args.data)
    if not records:
        raise UsageError(f"empty test file: {args.data}")
    from .trainer import _predict_items

    preds = _predict_items(records, ckpt.student, ckpt.config)
    golds = [gold_items(ls, ckpt.config.mode) for ls in records]
    report = build_report(preds, golds)
    print(f"evaluated {report.n_sentences} sentences ({ckpt.config.mode.value})")
    for name, value in report.rows():
        print(f"  {name:20s} {value:.6f}")
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        _write_csv(path, ["metric", "value"], [[n, _fmt(v)] for n, v in report.rows()])
        print(f"wrote {path}")
    return EXIT_OK


def cmd_audit(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.config.mode != Mode.ASTE:
        raise UsageError("audit requires an ASTE checkpoint (taxonomy includes polarity)")
    records = load_dataset(args.data)
    if not any(ls.triplets for ls in records):
        raise UsageError(f"audit needs labeled target data: {args.data}")
    eta = args.eta if args.eta is not None else ckpt.config.eta
    from .tagging import RegionClass, class_to_polarity
    from .corpus import Span, Triplet

    counts = {cat: 0 for cat in ErrorCategory}
    total_retained = 0
    for ls in records:
        labels = teacher_pseudo_label(ckpt.teacher, ls.sentence, ckpt.config, eta=eta)
        pseudo = []
        for pl in labels:
            cls = int(np.argmax(pl.probs))
            if cls == int(RegionClass.INVALID):
                # retained by foreground confidence but argmax says invalid:
                # use the most confident foreground class instead
                fg = pl.probs[:3]
                cls = int(np.argmax(fg))
            pseudo.append(
                Triplet(Span(pl.a, pl.c), Span(pl.b, pl.d), class_to_polarity(RegionClass(cls)))
            )
        total_retained += len(pseudo)
        for cat, k in audit_pseudo_labels(pseudo, list(ls.triplets)).items():
            counts[cat] += k
    print(f"retained {total_retained} pseudo labels at eta={eta}")
    rows = []
    for cat in ErrorCategory:
        frac = counts[cat] / total_retained if total_retained else 0.0
        print(f"  {cat.value:20s} {counts[cat]:6d}  ({frac:.3f})")
        rows.append([cat.value, str(counts[cat]), _fmt(frac)])
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        _write_csv(path, ["category", "count", "fraction"], rows)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    result = run_gradcheck(
        d=args.d if args.d is not None else 8,
        seed=args.seed if args.seed is not None else 19,
        eps=args.eps,
        tol=args.tol,
    )
    for name in sorted(result.per_group):
        print(f"  {name:12s} rel err {result.per_group[name]:.3e}")
    print(f"max relative error: {result.max_rel_err:.3e} (tolerance {result.tol:.0e})")
    if not result.passed:
        print("GRADCHECK FAILED")
        return EXIT_RUNTIME
    print("gradcheck passed")
    return EXIT_OK


ABLATION_ROWS = [
    ("full", frozenset()),
    ("no_aug", frozenset({"no_aug"})),
    ("no_uns", frozenset({"no_uns"})),
    ("no_mmd", frozenset({"no_mmd"})),
    ("no_uns+no_mmd", frozenset({"no_uns", "no_mmd"})),
]


def cmd_ablate(args) -> int:
    data = _load_bundle(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _guard_overwrite(out / "ablation.csv", args.force)
    seeds = _parse_seeds(args)
    header = ["row", "alpha", "beta", "ablations", "n_seeds",
              "mean_dev_f1", "std_dev_f1", "mean_test_f1", "std_test_f1"]
    rows_out = []

    def add_row(label: str, overrides: dict, tag: str):
        summary = _run_seeds(data, args, seeds, out, tag,
                             overrides=overrides, force=args.force, write_ckpt=False)
        cfg0 = _train_config(args, seeds[0])
        from dataclasses import replace
        cfg0 = replace(cfg0, **overrides)
        rows_out.append([
            label, _fmt(cfg0.alpha), _fmt(cfg0.beta),
            "+".join(sorted(cfg0.ablations)) or "none", str(len(seeds)),
            _fmt(summary["mean_dev_f1"]), _fmt(summary["std_dev_f1"]),
            _fmt(summary["mean_test_f1"]), _fmt(summary["std_test_f1"]),
        ])
        print(f"{label:16s} mean test F1 {summary['mean_test_f1']:.4f} "
              f"+- {summary['std_test_f1']:.4f}")

    for label, ablations in ABLATION_ROWS:
        add_row(label, {"ablations": ablations}, f"ablate_{label.replace('+', '_')}")
    if args.alpha_grid:
        for a in (float(x) for x in args.alpha_grid.split(",") if x):
            add_row(f"alpha={a}", {"alpha": a}, f"alpha{a}")
    if args.beta_grid:
        for b in (float(x) for x in args.beta_grid.split(",") if x):
            add_row(f"beta={b}", {"beta": b}, f"beta{b}")
    path = out / "ablation.csv"
    _guard_overwrite(path, args.force)
    _write_csv(path, header, rows_out)
    print(f"wrote {path}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _add_train_flags(p: _Parser) -> None:
    p.add_argument("--config", help="flat key = value config file; flags override")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda", dest="ema_lambda", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--aug-rate", dest="aug_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--ablate", help="comma- or plus-separated: no_aug,no_uns,no_mmd")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--force", action="store_true")


def build_parser() -> _Parser:
    parser = _Parser(prog="tablemt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic two-domain corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--num-source", type=int, default=50)
    p.add_argument("--num-dev", type=int, default=20)
    p.add_argument("--num-target", type=int, default=50)
    p.add_argument("--num-test", type=int, default=30)
    p.add_argument("--num-aspects", type=int, default=10)
    p.add_argument("--num-opinions", type=int, default=8)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train per seed and summarize")
    p.add_argument("--data", required=True, help="directory from `synth`")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a labeled file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("audit", help="categorize teacher pseudo-label errors")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="labeled target-domain file")
    p.add_argument("--eta", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--d", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="ablation table and coefficient sweeps")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha-grid", help="comma-separated alpha values")
    p.add_argument("--beta-grid", help="comma-separated beta values")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
