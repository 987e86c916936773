"""``cpdnet`` command line: train, predict, eval, check, check-equivalence, info.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training
divergence, 4 unreadable or corrupt checkpoint, 5 self-check failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3
EXIT_CHECKPOINT = 4
EXIT_CHECK_FAILED = 5

THREADS_ENV = "CPD_NET_THREADS"


def _thread_limit():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise SystemExit(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise SystemExit(f"{THREADS_ENV} must be >= 1, got {n}")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - declared dependency
        return nullcontext()
    return threadpool_limits(limits=n)


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------
_TRAIN_FLAGS = {
    "channels": "channels",
    "epochs": "epochs",
    "seed": "seed",
    "lr0": "lr0",
    "batch": "batch",
    "patch": "patch",
    "steps_per_epoch": "steps_per_epoch",
    "loss": "loss",
    "dataset": "dataset",
    "output": "output",
}


def cmd_train(args) -> int:
    from .config import ConfigError, load_config
    from .data import AugmentationPlan, DataError, augment_with_stats, load_manifest, load_samples
    from .model import build_model
    from .trainer import TrainingDiverged, train

    overrides = {key: str(getattr(args, flag)) for flag, key in _TRAIN_FLAGS.items() if getattr(args, flag) is not None}
    for item in args.set or []:
        if "=" not in item:
            _err(f"--set expects key=value, got {item!r}")
            return EXIT_CONFIG
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if not cfg.dataset:
        _err("no dataset given (use --dataset or dataset= in the config)")
        return EXIT_CONFIG
    if not cfg.output:
        _err("no output directory given (use --output or output= in the config)")
        return EXIT_CONFIG
    try:
        manifest = load_manifest(cfg.dataset, "train")
        samples = load_samples(manifest, soft=cfg.soft_labels)
    except DataError as exc:
        _err(str(exc))
        return EXIT_DATA
    if cfg.augment:
        plan = AugmentationPlan(fine_rotation_step=cfg.fine_step, seed=cfg.train.seed, max_per_base=cfg.max_per_base)
        expanded, skipped = [], 0
        for s in samples:
            variants, n_skip = augment_with_stats(s, plan)
            expanded += variants
            skipped += n_skip
        print(f"augmentation: {len(samples)} -> {len(expanded)} samples ({skipped} skipped)")
        samples = expanded
    model = build_model(cfg.model, cfg.train.seed)
    out = Path(cfg.output)
    try:
        result = train(model, samples, cfg.train, out_dir=out)
    except TrainingDiverged as exc:
        _err(str(exc))
        if exc.checkpoint:
            print(f"diagnostic checkpoint: {exc.checkpoint}")
        return EXIT_DIVERGED
    final = result.losses[-1] if result.losses else float("nan")
    probe = f" probe_ods={result.probe[-1]:.4f}" if result.probe else ""
    print(
        f"trained {result.steps} steps over {result.epochs_done} epochs: final_loss={final:.6f}{probe} "
        f"checkpoint={result.checkpoints[-1] if result.checkpoints else '-'}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict / info
# ---------------------------------------------------------------------------
def _load(path):
    from .checkpoint import CheckpointError, load_model

    try:
        return load_model(path)
    except CheckpointError as exc:
        _err(str(exc))
        return None


def cmd_predict(args) -> int:
    from .data import IMAGE_SUFFIXES, DataError, read_image, sliding_window_predict, write_edge_png

    in_dir = Path(args.input)
    if not in_dir.is_dir():
        _err(f"input directory not found: {in_dir}")
        return EXIT_DATA
    if args.window % 8 or args.window <= 0 or args.stride <= 0:
        _err("window must be a positive multiple of 8 and stride positive")
        return EXIT_CONFIG
    loaded = _load(args.checkpoint)
    if loaded is None:
        return EXIT_CHECKPOINT
    model, _ = loaded
    files = sorted(p for p in in_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        print("0 images")
        return EXIT_OK
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for p in files:
        try:
            image = read_image(p)
        except DataError as exc:
            _err(str(exc))
            return EXIT_DATA
        em = sliding_window_predict(model, image, args.window, args.stride, p.stem)
        write_edge_png(out / f"{p.stem}.png", em.values)
    print(f"{len(files)} images written to {out}")
    return EXIT_OK


def cmd_info(args) -> int:
    from .model import stage_shapes
    from .nn import count_parameters

    loaded = _load(args.checkpoint)
    if loaded is None:
        return EXIT_CHECKPOINT
    model, ckpt = loaded
    cfg = model.config
    print(f"model: {cfg.name} (C={cfg.base_channels}, blocks_per_stage={cfg.blocks_per_stage}, seed={ckpt.seed})")
    n = count_parameters(model)
    print(f"parameters: {n} ({n / 1e6:.3f}M)")
    for i, (c, h, w) in enumerate(stage_shapes(cfg, args.size, args.size), 1):
        print(f"stage{i}: {c} x {h} x {w}")
    for key in ("epoch", "step"):
        if key in ckpt.extra:
            print(f"{key}: {ckpt.extra[key]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------
def _gt_groups(gt_dir: Path) -> dict[str, list[Path]]:
    import re

    from .data import IMAGE_SUFFIXES

    pat = re.compile(r"^(?P<stem>.+)\.a(?P<idx>\d+)$")
    groups: dict[str, list[tuple[int, Path]]] = {}
    for p in sorted(gt_dir.iterdir()):
        if not (p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES):
            continue
        m = pat.match(p.stem)
        stem, idx = (m["stem"], int(m["idx"])) if m else (p.stem, -1)
        groups.setdefault(stem, []).append((idx, p))
    return {k: [p for _, p in sorted(v, key=lambda t: t[0])] for k, v in groups.items()}


def _parse_tolerance(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise ValueError("tolerance must be positive")
    return value


def cmd_eval(args) -> int:
    from .data import IMAGE_SUFFIXES, DataError, read_edge_png, read_label
    from .evaluation import EdgeMap, GroundTruth, evaluate

    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            _err(f"directory not found: {d}")
            return EXIT_DATA
    preds = {p.stem: p for p in sorted(pred_dir.iterdir()) if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES}
    gts = _gt_groups(gt_dir)
    if set(preds) != set(gts):
        only_p = sorted(set(preds) - set(gts))
        only_g = sorted(set(gts) - set(preds))
        _err(f"stem mismatch: predictions without ground truth {only_p[:5]}, ground truth without predictions {only_g[:5]}")
        return EXIT_DATA
    if not preds:
        _err(f"no edge maps in {pred_dir}")
        return EXIT_DATA
    maps, truths = [], []
    try:
        for stem in sorted(preds):
            maps.append(EdgeMap(read_edge_png(preds[stem]), stem))
            truths.append(GroundTruth([read_label(p) for p in gts[stem]], stem))
    except (DataError, ValueError) as exc:
        _err(str(exc))
        return EXIT_DATA
    try:
        report = evaluate(maps, truths, args.mode, args.tolerance)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_DATA
    print(report.table())
    out = Path(args.report) if args.report else pred_dir / "eval_report.txt"
    report.write(out)
    print(f"report written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------
def _dump_failure(result, dump_dir: Path) -> Path:
    dump_dir.mkdir(parents=True, exist_ok=True)
    safe = "".join(ch if ch.isalnum() else "_" for ch in result.name)
    path = dump_dir / f"check_failure_{safe}.npz"
    arrays = {k: np.asarray(v) for k, v in result.failure.items()}
    np.savez(path, **arrays)
    return path


def _report_suites(results, dump_dir: Path) -> int:
    failed = False
    for r in results:
        print(r.line())
        if not r.passed:
            failed = True
            if r.failure:
                printable = {k: v for k, v in r.failure.items() if np.ndim(v) == 0}
                print(f"  failing case: {printable}")
                print(f"  replay data: {_dump_failure(r, dump_dir)}")
    print("all suites passed" if not failed else "self-check FAILED")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_check(args) -> int:
    from . import verify

    if args.trials < 1:
        _err("--trials must be >= 1")
        return EXIT_CONFIG
    ctx = verify.injected_fault() if args.inject_fault else nullcontext()
    with ctx:
        results = verify.run_all(args.seed, args.trials, args.equivalence_trials)
    return _report_suites(results, Path(args.dump_dir))


def cmd_check_equivalence(args) -> int:
    from . import verify

    if args.trials < 1:
        _err("--trials must be >= 1")
        return EXIT_CONFIG
    ctx = verify.injected_fault() if args.inject_fault else nullcontext()
    with ctx:
        results = [
            verify.cpdc_equivalence(args.seed, args.trials, np.float32),
            verify.cpdc_equivalence(args.seed, args.trials, np.float64),
            verify.constant_rejection(args.seed),
        ]
    return _report_suites(results, Path(args.dump_dir))


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpdnet", description="CPD-Net crisp edge detection")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="key=value configuration file")
    t.add_argument("--dataset", help="dataset root with images/ and labels/")
    t.add_argument("--output", help="directory for checkpoints and metrics.log")
    t.add_argument("--channels", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr0", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--patch", type=int)
    t.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    t.add_argument("--loss", choices=("HFL", "WCE", "hfl", "wce"))
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="sliding-window prediction to PNG")
    p.add_argument("checkpoint")
    p.add_argument("input", help="directory of input images")
    p.add_argument("output", help="directory for predicted edge maps")
    p.add_argument("--window", type=int, default=320)
    p.add_argument("--stride", type=int, default=240)
    p.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score edge maps against ground truth")
    e.add_argument("pred", help="directory of predicted edge maps")
    e.add_argument("gt", help="directory of ground-truth label maps")
    e.add_argument("--mode", choices=("s", "c", "S", "C"), default="s", help="s: with NMS, c: raw maps")
    e.add_argument("--tolerance", type=_parse_tolerance, default=0.0075, help="fraction of the image diagonal")
    e.add_argument("--report", help="key=value report path (default: <pred>/eval_report.txt)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check", help="run numerical self-checks")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--trials", type=int, default=5)
    c.add_argument("--equivalence-trials", dest="equivalence_trials", type=int, default=100)
    c.add_argument("--dump-dir", dest="dump_dir", default=".")
    c.add_argument("--inject-fault", dest="inject_fault", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_check)

    q = sub.add_parser("check-equivalence", help="CPDC operator equivalence sweep")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--trials", type=int, default=100)
    q.add_argument("--dump-dir", dest="dump_dir", default=".")
    q.add_argument("--inject-fault", dest="inject_fault", action="store_true", help=argparse.SUPPRESS)
    q.set_defaults(func=cmd_check_equivalence)

    i = sub.add_parser("info", help="describe a checkpoint")
    i.add_argument("checkpoint")
    i.add_argument("--size", type=int, default=320, help="input size for the stage shape listing")
    i.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    with _thread_limit():
        return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
