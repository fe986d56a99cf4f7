"""Command-line entry point.

Verbs: `gen` (demo datasets), `train` (staged pipeline training), `eval`
(seeded batch evaluation), `ablate` (evaluation with a component disabled),
`gradcheck` (finite-difference audit of the autodiff stack).

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The output root is `--out`, else $PHAFORCE_OUT, else ./phaforce_out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import nn
from .config import ABLATIONS, ConfigError, RunConfig, load_config
from .executor import batch_eval
from .pipeline import (PhaForcePolicy, load_pipeline, save_pipeline,
                       train_pipeline)
from .sim import make_env
from .sim.dataset import generate_dataset

GRADCHECK_TOL = 1e-4


def _out_root(args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get("PHAFORCE_OUT", "phaforce_out"))


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) \
        else RunConfig()
    overrides = {}
    for key in ("task", "seed", "n_demos", "n_trials", "max_steps",
                "ablate"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "ood", False):
        overrides["ood"] = True
    if overrides:
        cfg = RunConfig(**{**cfg.__dict__, **overrides})
    return cfg


def _dataset_dir(root: Path, task: str) -> Path:
    return root / "datasets" / task


def _ckpt_dir(root: Path, cfg: RunConfig) -> Path:
    suffix = "" if cfg.ablate in ("none", "no_fast") else f"_{cfg.ablate}"
    return root / "checkpoints" / (cfg.task + suffix)


def cmd_gen(args) -> int:
    cfg = _run_config(args)
    root = _out_root(args)
    manifest = generate_dataset(_dataset_dir(root, cfg.task), cfg.task,
                                cfg.n_demos, seed=cfg.seed)
    print(f"gen: {manifest['n_episodes']} episodes of {cfg.task!r} "
          f"({manifest['failures']} expert retries) -> "
          f"{_dataset_dir(root, cfg.task)}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    root = _out_root(args)
    dataset = Path(args.dataset) if args.dataset \
        else _dataset_dir(root, cfg.task)
    if not (dataset / "manifest.json").exists():
        print(f"train: no dataset at {dataset} (run `phaforce gen` first)",
              file=sys.stderr)
        return 1
    pipeline, report = train_pipeline(cfg.pipeline_config(), dataset,
                                      log=print)
    ckpt = _ckpt_dir(root, cfg)
    save_pipeline(ckpt, pipeline)
    (ckpt / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n")
    print(f"train: checkpoint -> {ckpt}")
    return 0


def cmd_eval(args, require_ablation: bool = False) -> int:
    cfg = _run_config(args)
    if require_ablation and cfg.ablate == "none":
        print("ablate: an --ablate mode is required", file=sys.stderr)
        return 2
    root = _out_root(args)
    ckpt = Path(args.ckpt) if args.ckpt else _ckpt_dir(root, cfg)
    if not (ckpt / "manifest.json").exists():
        print(f"eval: no checkpoint at {ckpt} (run `phaforce train` first)",
              file=sys.stderr)
        return 1
    pipeline = load_pipeline(ckpt)
    if pipeline.config.task != cfg.task:
        print(f"eval: checkpoint is for task {pipeline.config.task!r}, "
              f"requested {cfg.task!r}", file=sys.stderr)
        return 2
    for flag in ("no_pb", "no_ori"):
        if cfg.ablate == flag and not getattr(pipeline.config, flag):
            print(f"eval: ablation {flag} needs a checkpoint trained with "
                  f"that flag (got {ckpt})", file=sys.stderr)
            return 2
    policy = PhaForcePolicy(pipeline, no_fast=(cfg.ablate == "no_fast"))
    name = f"{cfg.task}_{cfg.ablate}" + ("_ood" if cfg.ood else "")
    summary = batch_eval(
        lambda: make_env(cfg.task, ood=cfg.ood), policy,
        n_trials=cfg.n_trials, base_seed=cfg.seed, task=cfg.task,
        max_steps=cfg.max_steps, out_dir=root / "eval" / name)
    fn = "--" if summary["mean_Fn"] is None else f"{summary['mean_Fn']:.2f}"
    print(f"eval {name}: SR={summary['SR']:.2f} Score={summary['Score']:.2f} "
          f"mean_Fn={fn} over={summary['over']:.2f} "
          f"under={summary['under']:.2f}")
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed or 0)
    checks = {}

    mlp = nn.MLP([5, 8, 3], rng, "gc.mlp")
    x = rng.standard_normal((4, 5))
    checks["mlp"] = nn.grad_check(
        lambda: (mlp(nn.Tensor(x)).square()).mean(), mlp.parameters())

    conv = nn.CausalConv1d(3, 4, 2, 2, rng, "gc.conv")
    seq = rng.standard_normal((2, 9, 3))
    checks["causal_conv"] = nn.grad_check(
        lambda: conv(nn.Tensor(seq)).tanh().mean(), conv.parameters())

    from .vision import ViewCNN
    cnn = ViewCNN(rng, 6, "gc.cnn", channels=(2, 3, 4))
    img = rng.uniform(0, 1, (2, 32, 32))
    checks["view_cnn"] = nn.grad_check(
        lambda: cnn(img).square().mean(), cnn.parameters(),
        max_entries_per_param=8)

    worst = max(checks.values())
    for name, err in sorted(checks.items()):
        status = "ok" if err <= GRADCHECK_TOL else "FAIL"
        print(f"gradcheck {name}: max rel err {err:.3e} [{status}]")
    return 0 if worst <= GRADCHECK_TOL else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phaforce",
        description="Phase-scheduled slow-fast visual-force policy tooling")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False, ckpt=False):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--task", choices=("charger", "usb", "wiping"))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output root directory")
        if dataset:
            p.add_argument("--dataset", help="demo dataset directory")
            p.add_argument("--n-demos", dest="n_demos", type=int)
        if ckpt:
            p.add_argument("--ckpt", help="checkpoint directory")
            p.add_argument("--trials", dest="n_trials", type=int)
            p.add_argument("--max-steps", dest="max_steps", type=int)
            p.add_argument("--ood", action="store_true",
                           help="shifted-scene evaluation (wiping only)")
        p.add_argument("--ablate", choices=ABLATIONS)

    p = sub.add_parser("gen", help="generate a demonstration dataset")
    common(p, dataset=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train the staged pipeline")
    common(p, dataset=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained checkpoint")
    common(p, ckpt=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="evaluate with a component disabled")
    common(p, ckpt=True)
    p.set_defaults(fn=lambda a: cmd_eval(a, require_ablation=True))

    p = sub.add_parser("gradcheck",
                       help="finite-difference audit of the autodiff stack")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failures map to exit 1
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
