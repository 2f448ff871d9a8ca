"""Command-line entry point.

Subcommands: generate-data, train, track, eval, gradcheck, oracle-attn,
bench. Exit codes: 0 on success, 2 on bad flags (argparse), 1 with a
one-line "error: ..." message on anything else.
"""

import argparse
import sys
from pathlib import Path

from . import bench as bench_mod
from .config import AUX_OF_TASK, ModelConfig, TASKS, TrackerConfig, TrainConfig, config_dict, parse_kv_file, split_overrides
from .diagnostics import gradcheck_families, oracle_attention_cases
from .evaluate import evaluate_ope, read_trackfile, write_report, write_trackfile
from .model import build_model, load_model, save_model
from .rng import Rng
from .synth import MODALITIES, SUITE_KINDS, generate_suite, load_sequence
from .tracker import track_sequence
from .train import train_one_shot


def _load_suite(root):
    root = Path(root)
    manifests = sorted(root.glob("*/sequence.jsonl"))
    if not manifests:
        raise FileNotFoundError(f"no sequences under {root} (expected <seq>/sequence.jsonl)")
    return [load_sequence(m) for m in manifests]


def cmd_generate_data(args):
    paths = generate_suite(args.out, args.kind, args.count, args.seed,
                           modality=args.modality, extent=args.extent, length=args.length)
    print(f"wrote {len(paths)} sequences to {args.out}")
    return 0


def cmd_train(args):
    model_cfg = ModelConfig()
    train_cfg = TrainConfig()
    overrides = parse_kv_file(args.config) if args.config else {}
    split_overrides(overrides, model_cfg, train_cfg)
    if args.attn:
        model_cfg.attn = args.attn
        model_cfg.__post_init__()
    train_cfg.tasks = [t.strip() for t in args.tasks.split(",") if t.strip()]
    for task in train_cfg.tasks:
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}, expected a subset of {TASKS}")
    train_cfg.seed = args.seed

    data_root = Path(args.data)
    data_by_task = {}
    for task in train_cfg.tasks:
        task_dir = data_root / task
        if not task_dir.exists():
            raise FileNotFoundError(f"no data directory for task {task!r} at {task_dir}")
        data_by_task[task] = _load_suite(task_dir)

    model = build_model(model_cfg, seed=args.seed)
    rng = Rng(args.seed, ("train",))

    def progress(epoch, step, loss):
        if not args.quiet and step % 50 == 0:
            print(f"epoch {epoch} step {step} loss {loss:.4f}", file=sys.stderr)

    log = train_one_shot(model, data_by_task, train_cfg, rng, progress=progress)
    save_model(model, args.out, extra=config_dict(train_cfg))
    final = log.step_losses[-1] if log.step_losses else float("nan")
    print(f"trained {len(log.step_losses)} steps, final loss {final:.4f}, checkpoint {args.out}")
    return 0


def _tracker_config(args):
    cfg = TrackerConfig()
    if getattr(args, "no_propagation", False):
        cfg.propagate_token = False
    if getattr(args, "cosine_window", False):
        cfg.cosine_window = True
    return cfg


def cmd_track(args):
    if args.mode not in TASKS:
        raise ValueError(f"unknown mode {args.mode!r}, expected one of {TASKS}")
    model, _ = load_model(args.ckpt, attn_override=args.attn)
    seq = load_sequence(args.seq)
    mode = "rgb_only" if AUX_OF_TASK[args.mode] is None else "dual"
    if mode == "dual" and seq.aux is None:
        raise ValueError(f"sequence {seq.name} has no auxiliary stream, cannot track in mode {args.mode}")
    results = track_sequence(model, seq, mode, cfg=_tracker_config(args))
    write_trackfile(args.out, results)
    print(f"tracked {seq.length} frames of {seq.name} -> {args.out}")
    return 0


def cmd_eval(args):
    tracks_dir = Path(args.tracks)
    pairs = []
    for manifest in sorted(Path(args.data).glob("*/sequence.jsonl")):
        seq = load_sequence(manifest)
        trackfile = tracks_dir / f"{manifest.parent.name}.txt"
        if not trackfile.exists():
            raise FileNotFoundError(f"missing trackfile {trackfile} for sequence {seq.name}")
        pred = [box for box, _ in read_trackfile(trackfile)]
        gt = [seq.box(t) for t in range(seq.length)]
        pairs.append((seq.name, pred, gt))
    report = evaluate_ope(pairs)
    if args.report:
        write_report(report, args.report, csv_path=args.csv)
    print(f"AUC={report.auc:.3f} mean_iou={report.mean_iou:.3f} "
          f"precision={report.precision:.3f} norm_precision={report.norm_precision:.3f}")
    return 0


def cmd_gradcheck(args):
    results = gradcheck_families(seed=args.seed, samples_per_family=args.samples)
    ok = True
    for fam, err in sorted(results.items()):
        status = "ok" if err < 1e-4 else "FAIL"
        ok = ok and err < 1e-4
        print(f"{fam:<12} max_rel_err {err:.3e} {status}")
    print(f"gradcheck {'passed' if ok else 'FAILED'}")
    return 0 if ok else 1


def cmd_oracle_attn(args):
    worst, records = oracle_attention_cases(n_cases=args.cases, seed=args.seed)
    n_ok = sum(1 for r in records if r["ok"])
    print(f"{n_ok}/{len(records)} cases within 1e-10, max abs diff {worst:.3e}")
    return 0 if n_ok == len(records) else 1


def cmd_bench(args):
    result = bench_mod.compare(dim=args.dim, n_ref=args.n_ref, k=args.k,
                               n_search=args.n_search, n_tok=args.n_tok)
    print(f"concat multiplies/layer:   {result['concat']:>12}")
    print(f"separate multiplies/layer: {result['separate']:>12}")
    print(f"score-term only: concat {result['concat_scores']} vs separate {result['separate_scores']}")
    print(f"separated layout is {'cheaper' if result['separate_cheaper'] else 'NOT cheaper'}")
    return 0 if result["separate_cheaper"] else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="tokentrack",
                                     description="Video-level multi-modal tracker on synthetic sequences")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render a synthetic sequence suite")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", default="train", choices=SUITE_KINDS)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--modality", default="none", choices=MODALITIES)
    p.add_argument("--extent", type=int, default=64)
    p.add_argument("--length", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("train", help="train one parameter set over a task mix")
    p.add_argument("--data", required=True, help="root with one subdirectory per task")
    p.add_argument("--tasks", default="rgb", help="comma-separated subset of rgb,rgbd,rgbt,rgbe")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--config", default=None, help="flat key=value overrides")
    p.add_argument("--attn", default=None, choices=("concat", "separate"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("track", help="run one sequence through a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seq", required=True, help="sequence directory or manifest path")
    p.add_argument("--mode", default="rgb", help="rgb, rgbd, rgbt or rgbe")
    p.add_argument("--out", required=True, help="trackfile path")
    p.add_argument("--attn", default=None, choices=("concat", "separate"))
    p.add_argument("--no-propagation", action="store_true", help="feed a fresh token every frame")
    p.add_argument("--cosine-window", action="store_true")
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("eval", help="score trackfiles against ground truth")
    p.add_argument("--data", required=True, help="suite root")
    p.add_argument("--tracks", required=True, help="directory of <seq>.txt trackfiles")
    p.add_argument("--report", default=None, help="write a JSON report here")
    p.add_argument("--csv", default=None, help="write the success curve as CSV")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify analytic gradients per parameter family")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=50)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("oracle-attn", help="compare fast attention against the dense oracle")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_oracle_attn)

    p = sub.add_parser("bench", help="multiply counts of the two attention layouts")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--n-ref", type=int, default=16)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--n-search", type=int, default=64)
    p.add_argument("--n-tok", type=int, default=1)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
