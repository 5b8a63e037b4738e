"""Operator command line.

Machine-readable results go to stdout as JSON; progress and tables go to
stderr. Exit codes: 0 success, 1 usage error, 2 runtime failure. A JSON
config file (flat keys named like the long flags) can seed any command's
defaults; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _say(msg: str) -> None:
    sys.stderr.write(msg + "\n")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_studies(data_dir: Path):
    from .volume_io import load_study

    manifests = sorted(data_dir.glob("*/manifest.json"))
    if not manifests:
        manifests = sorted(data_dir.glob("manifest.json"))
    return [load_study(m) for m in manifests]


def _build_model(args, seed: int):
    from .model import GmlnConfig, GmlnModel

    cfg = GmlnConfig(use_fusion=not getattr(args, "no_fusion", False))
    return GmlnModel(cfg, seed=seed)


def _model_from_checkpoint(path, no_fusion: bool = False):
    from . import checkpoint as ckpt
    from .model import GmlnConfig, GmlnModel

    model = GmlnModel(GmlnConfig(use_fusion=not no_fusion), seed=0)
    ckpt.load_model(path, model)
    return model


def cmd_phantom_gen(args) -> int:
    from .phantom import PhantomConfig, generate_dataset, shifted_config
    from .volume_io import save_study

    cfg = PhantomConfig(size=(args.size,) * 3, seed=args.seed, noise_sigma=args.noise)
    if args.shifted:
        cfg = shifted_config(cfg)
    out = Path(args.out)
    studies = generate_dataset(cfg, args.count, start_index=args.start_index)
    for s in studies:
        save_study(out / s.id, s)
    _say(f"wrote {len(studies)} studies under {out}")
    _emit({"out": str(out), "studies": [s.id for s in studies]})
    return 0


def cmd_train(args) -> int:
    from .figures import save_loss_curves
    from .train import TrainConfig, train

    studies = _load_studies(Path(args.data))
    model = _build_model(args, seed=args.seed)
    cfg = TrainConfig(steps=args.steps, batch_size=args.batch_size, seed=args.seed,
                      checkpoint_every=args.checkpoint_every,
                      constant_lr=args.constant_lr, flip_augment=args.flip_augment)
    _say(f"training on {len(studies)} studies for {cfg.steps} steps "
         f"(batch {cfg.batch_size}, seed {cfg.seed}, fusion={'off' if args.no_fusion else 'on'})")
    result = train(model, studies, cfg, out_dir=args.out)
    if result.history:
        save_loss_curves(result.history, Path(args.out) / "loss_curves.png")
    if result.aborted:
        _say(f"aborted at step {result.final_step}: non-finite loss or gradients; "
             f"last good checkpoint retained")
        _emit({"aborted": True, "final_step": result.final_step,
               "checkpoint": result.checkpoint_path})
        return 2
    _emit({
        "aborted": False,
        "steps": result.final_step,
        "final_loss": result.history[-1]["loss_total"] if result.history else None,
        "checkpoint": result.checkpoint_path,
        "param_count": model.param_count(),
        "metrics_log": str(Path(args.out) / "metrics.csv"),
    })
    return 0


def cmd_eval(args) -> int:
    from .figures import save_dice_summary
    from .metrics import region_dice, study_entry, write_eval_report
    from .train import segment_volume, study_input

    model = _model_from_checkpoint(args.ckpt, args.no_fusion)
    studies = [s for s in _load_studies(Path(args.data)) if s.gt_labels is not None]
    if not studies:
        _say("no labeled studies found")
        return 2
    entries = []
    for s in studies:
        pred = segment_volume(model, study_input(s))
        entries.append(study_entry(s.id, region_dice(pred, s.gt_labels), model.version))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_eval_report(out / "report.jsonl", entries)
    save_dice_summary(entries, out / "dice_summary.png")
    per_region = {r: float(np.mean([e["dice"][r] for e in entries])) for r in ("WT", "TC", "ET")}
    _emit({
        "studies": len(entries),
        "mean_dice": float(np.mean([e["mean"] for e in entries])),
        "per_region": per_region,
        "param_count": model.param_count(),
        "model_version": model.version,
        "report": str(out / "report.jsonl"),
    })
    return 0


def cmd_infer(args) -> int:
    from .train import segment_volume, study_input
    from .volume_io import write_volume

    model = _model_from_checkpoint(args.ckpt, args.no_fusion)
    studies = _load_studies(Path(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for s in studies:
        pred = segment_volume(model, study_input(s))
        path = out / f"{s.id}-pred.vseg"
        write_volume(path, pred)
        written.append({"study": s.id, "prediction": str(path)})
    _emit({"predictions": written, "model_version": model.version})
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .feedback import FeedbackStore, FineTunePolicy
    from .server import ServerConfig, create_app

    store = FeedbackStore(args.store)
    model = (_model_from_checkpoint(args.ckpt) if args.ckpt
             else _build_model(args, seed=args.seed))
    policy = FineTunePolicy(steps=args.finetune_steps, min_samples=args.min_samples)
    cfg = ServerConfig(store_root=args.store, host=args.host, port=args.port,
                       ui_dir=args.ui_dir)
    app = create_app(store, model, policy, cfg)
    _say(f"serving on http://{cfg.host}:{cfg.port} (store {args.store})")
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="warning")
    return 0


def cmd_finetune(args) -> int:
    from . import checkpoint as ckpt
    from .errors import DataError
    from .feedback import FeedbackStore, FineTunePolicy, run_finetune_cycle

    store = FeedbackStore(args.store)
    model = _model_from_checkpoint(args.ckpt)
    policy = FineTunePolicy(steps=args.steps, min_samples=args.min_samples,
                            lr_scale=args.lr_scale)
    try:
        report = run_finetune_cycle(model, store, policy, seed=args.seed)
    except DataError as exc:
        _say(str(exc))
        return 2
    _emit({
        "version_before": report.version_before,
        "version_after": report.version_after,
        "sample_count": report.sample_count,
        "loss_before": report.loss_before,
        "loss_after": report.loss_after,
        "checkpoint": report.checkpoint_path,
        "review_queue": report.review_queue,
    })
    return 0


def cmd_gradcheck(args) -> int:
    from .verification import GRAD_TOL, full_suite

    seeds = tuple(range(args.seeds))
    _say(f"running float64 gradient suite over seeds {list(seeds)}")
    results = full_suite(seeds)
    width = max(len(n) for n, _ in results)
    ok = True
    for name, err in results:
        status = "ok" if err < GRAD_TOL else "FAIL"
        _say(f"  {name:<{width}}  {err:10.3e}  {status}")
        ok &= err < GRAD_TOL
    _emit({"tolerance": GRAD_TOL, "max_errors": {n: e for n, e in results}, "pass": ok})
    return 0 if ok else 2


def cmd_feedback_replay(args) -> int:
    from .feedback import FeedbackStore

    store = FeedbackStore(args.store)
    _emit(store.summary())
    return 0


def cmd_upsample_report(args) -> int:
    from .diagnostics import phase_study_rows, upsampler_phase_study
    from .figures import save_phase_disparity

    scores = upsampler_phase_study(range(args.seeds))
    rows = phase_study_rows(scores)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "phase_disparity.csv", "w", encoding="utf-8") as f:
        f.write("method,mean,std\n")
        for r in rows:
            f.write(f"{r['method']},{r['mean']!r},{r['std']!r}\n")
    save_phase_disparity(rows, out / "phase_disparity.png")
    for r in rows:
        _say(f"  {r['method']:<14} {r['mean']:.4f} +- {r['std']:.4f}")
    _emit({"rows": rows, "csv": str(out / "phase_disparity.csv")})
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="gmlnbts", description=__doc__)
    p.add_argument("--config", help="JSON file with flat default values for any flag")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("phantom-gen", help="generate synthetic studies")
    g.add_argument("--count", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--shifted", action="store_true",
                   help="scanner-shift variant (gain x1.15, noise x2)")
    g.add_argument("--start-index", type=int, default=0)
    g.set_defaults(fn=cmd_phantom_gen)

    t = sub.add_parser("train", help="train a model on studies with labels")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=200)
    t.add_argument("--batch-size", type=int, default=2)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--checkpoint-every", type=int, default=50)
    t.add_argument("--constant-lr", type=float, default=None)
    t.add_argument("--flip-augment", action="store_true")
    t.add_argument("--no-fusion", action="store_true",
                   help="ablation: concatenate modality features directly")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="region Dice report for labeled studies")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--no-fusion", action="store_true")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="write predicted label volumes")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--no-fusion", action="store_true")
    i.set_defaults(fn=cmd_infer)

    s = sub.add_parser("serve", help="run the feedback HTTP service")
    s.add_argument("--store", required=True)
    s.add_argument("--ckpt")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--ui-dir", default=None)
    s.add_argument("--finetune-steps", type=int, default=30)
    s.add_argument("--min-samples", type=int, default=2)
    s.set_defaults(fn=cmd_serve)

    f = sub.add_parser("finetune", help="run one fine-tune cycle from stored feedback")
    f.add_argument("--store", required=True)
    f.add_argument("--ckpt", required=True)
    f.add_argument("--steps", type=int, default=30)
    f.add_argument("--min-samples", type=int, default=2)
    f.add_argument("--lr-scale", type=float, default=0.1)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(fn=cmd_finetune)

    c = sub.add_parser("gradcheck", help="float64 finite-difference verification suite")
    c.add_argument("--seeds", type=int, default=3)
    c.set_defaults(fn=cmd_gradcheck)

    r = sub.add_parser("feedback-replay", help="rebuild store state from the rating log")
    r.add_argument("--store", required=True)
    r.set_defaults(fn=cmd_feedback_replay)

    u = sub.add_parser("upsample-report", help="checkerboard diagnostic table and figure")
    u.add_argument("--out", required=True)
    u.add_argument("--seeds", type=int, default=10)
    u.set_defaults(fn=cmd_upsample_report)

    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        defaults = {k.replace("-", "_"): v
                    for k, v in json.loads(Path(cfg_path).read_text(encoding="utf-8")).items()}
        for action in parser._actions:
            if isinstance(action, argparse._SubParsersAction):
                for sp in action.choices.values():
                    sp.set_defaults(**defaults)
                    for sub_action in sp._actions:
                        if sub_action.dest in defaults:
                            sub_action.required = False
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
