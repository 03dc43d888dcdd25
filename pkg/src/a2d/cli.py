"""Command-line entry point.

    a2d train          train a fixed-backbone agent with plain A2C
    a2d eval           evaluate a checkpoint
    a2d distill        train a student under a teacher checkpoint
    a2d search         architecture search (one-level by default)
    a2d derive         extract the discrete architecture from a search run
    a2d retrain        train a derived architecture from scratch
    a2d ablate-scaling train the whole fixed-backbone ladder
    a2d ablate-distill score matrix over distillation modes and students
    a2d sweep-lambda   cost-weight sweep: search + derive per lambda

Flags override config-file values (flag > A2D_SEED/A2D_OUT > file >
default); every run directory receives the fully resolved config.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .agent import BACKBONE_PRESETS, BackboneConfig, build_agent, load_agent, save_agent
from .distill import load_teacher, train_with_distillation
from .errors import ConfigError
from .metrics import JsonlWriter, RunRecord, config_hash, run_dir, tradeoff_report
from .nas import agent_flops, derive, retrain_derived, search
from .trainer import Trainer, evaluate, net_policy


def _parse_override(text):
    if "=" not in text:
        raise ConfigError([f"--set expects key=value, got {text!r}"])
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _resolve(args) -> dict:
    file_dict = cfgmod.load_config_file(args.config) if args.config else {}
    overrides = {}
    for item in args.set or []:
        key, value = _parse_override(item)
        overrides[key] = value
    for flag, dotted in [
        ("seed", "seed"),
        ("out", "out_dir"),
        ("run_id", "run_id"),
        ("teacher", "teacher"),
        ("backbone", "backbone"),
        ("total_steps", "train.total_steps"),
        ("workers", "train.workers"),
        ("distill", "distill.mode"),
        ("optimization", "search.optimization"),
        ("cost_weight", "search.cost_weight"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[dotted] = value
    resolved = cfgmod.resolve_config(file_dict, overrides)
    print(f"[a2d] effective config (flag > env > file > default): seed={resolved['seed']} "
          f"env={resolved['env']['name']} backbone={resolved['backbone']}")
    return resolved


def _start_run(resolved, command):
    chash = config_hash(resolved)
    run_id = resolved["run_id"] or f"{command}-s{resolved['seed']}-{chash[:8]}"
    resolved = dict(resolved, run_id=run_id)
    d = run_dir(resolved["out_dir"], run_id)
    (d / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    return d, run_id, chash


def _finish_record(d, run_id, chash, resolved, model_name, history, final, t0):
    record = RunRecord(
        run_id=run_id,
        config_hash=chash,
        seed=resolved["seed"],
        task=resolved["env"]["name"],
        model=model_name,
        evals=[{"step": h["step"], "mean_score": h["mean_score"]} for h in history],
        final=final,
        wall_clock=time.time() - t0,
    ).validate()
    record.save(d / "record.json")
    return record


def cmd_train(args):
    resolved = _resolve(args)
    d, run_id, chash = _start_run(resolved, "train")
    t0 = time.time()
    env_factory = cfgmod.env_factory_from(resolved)
    spec = env_factory().spec
    backbone, name = cfgmod.backbone_from(resolved)
    train_cfg = cfgmod.train_config_from(resolved)
    net = build_agent(backbone, spec, init_seed=train_cfg.seed)

    def save_ckpt(net_, steps):
        save_agent(net_, backbone, spec, d / "checkpoints" / f"step{steps}.ckpt")

    with JsonlWriter(d / "metrics.jsonl") as writer:
        trainer = Trainer(net, env_factory, train_cfg, metrics_writer=writer,
                          checkpoint_fn=save_ckpt)
        trainer.train()
    final = {
        "score": trainer.history[-1]["mean_score"],
        "mflops": agent_flops(backbone, spec.obs_shape, spec.num_actions) / 1e6,
        "params": net.param_count(),
    }
    _finish_record(d, run_id, chash, resolved, name, trainer.history, final, t0)
    print(f"[a2d] train done: score={final['score']:.4f} mflops={final['mflops']:.3f} -> {d}")
    return 0


def cmd_eval(args):
    resolved = _resolve(args)
    env_factory = cfgmod.env_factory_from(resolved)
    spec = env_factory().spec
    net, _ = load_agent(args.checkpoint, spec)
    train_cfg = cfgmod.train_config_from(resolved)
    mean_score, scores = evaluate(
        net_policy(net),
        env_factory,
        episodes=args.episodes or train_cfg.eval_episodes,
        null_op_max=train_cfg.null_op_max,
        seed=resolved["seed"],
    )
    print(f"[a2d] eval: mean={mean_score:.4f} over {len(scores)} episodes")
    return 0


def cmd_distill(args):
    resolved = _resolve(args)
    d, run_id, chash = _start_run(resolved, "distill")
    t0 = time.time()
    env_factory = cfgmod.env_factory_from(resolved)
    spec = env_factory().spec
    backbone, name = cfgmod.backbone_from(resolved)
    train_cfg = cfgmod.train_config_from(resolved)
    distill_cfg = cfgmod.distill_config_from(resolved).validate()

    with JsonlWriter(d / "metrics.jsonl") as writer:
        net, history = train_with_distillation(
            backbone, env_factory, train_cfg, distill_cfg, metrics_writer=writer
        )
    save_agent(net, backbone, spec, d / "checkpoints" / "final.ckpt")
    final = {
        "score": history[-1]["mean_score"],
        "mflops": agent_flops(backbone, spec.obs_shape, spec.num_actions) / 1e6,
        "params": net.param_count(),
    }
    _finish_record(d, run_id, chash, resolved, name, history, final, t0)
    print(f"[a2d] distill({distill_cfg.mode}) done: score={final['score']:.4f} -> {d}")
    return 0


def cmd_search(args):
    resolved = _resolve(args)
    if isinstance(resolved["backbone"], str) and not resolved["backbone"].startswith("supernet"):
        resolved = dict(resolved, backbone="supernet-6")
    d, run_id, chash = _start_run(resolved, "search")
    t0 = time.time()
    env_factory = cfgmod.env_factory_from(resolved)
    backbone, _ = cfgmod.backbone_from(resolved)
    train_cfg = cfgmod.train_config_from(resolved)
    search_cfg = cfgmod.search_config_from(resolved)
    distill_cfg = cfgmod.distill_config_from(resolved)

    with JsonlWriter(d / "metrics.jsonl") as writer, JsonlWriter(d / "arch.jsonl") as arch_writer:
        result = search(
            backbone, env_factory, train_cfg, search_cfg, distill_cfg,
            metrics_writer=writer, arch_writer=arch_writer,
        )
    arch_state = {
        "logits": result.arch.logits.data.tolist(),
        "tau": result.arch.tau,
        "supernet": backbone.to_dict(),
    }
    (d / "arch_state.json").write_text(json.dumps(arch_state, indent=2, sort_keys=True) + "\n")
    final = {
        "score": result.history[-1]["mean_score"] if result.history else float("nan"),
        "mflops": result.arch_history[-1]["expected_mflops"],
        "params": result.net.param_count(),
    }
    _finish_record(d, run_id, chash, resolved, "supernet", result.history, final, t0)
    print(f"[a2d] search done ({search_cfg.optimization}, distill={distill_cfg.mode}): "
          f"score={final['score']:.4f} expected_mflops={final['mflops']:.3f} -> {d}")
    return 0


def _load_search_run(out_dir, run):
    d = Path(out_dir) / run
    state_path = d / "arch_state.json"
    if not state_path.exists():
        raise ConfigError([f"{state_path} not found; run `a2d search` first"])
    state = json.loads(state_path.read_text())
    resolved = json.loads((d / "config.json").read_text())
    return d, state, resolved


def cmd_derive(args):
    from .nas.cells import ArchParams

    d, state, resolved = _load_search_run(args.out or "runs", args.run)
    supernet_cfg = BackboneConfig.from_dict(state["supernet"])
    env_factory = cfgmod.env_factory_from(resolved)
    logits = np.array(state["logits"])
    arch = ArchParams(logits.shape[0])
    arch.logits.data = logits
    arch.tau = state["tau"]
    derived = derive(arch, supernet_cfg, env_factory().spec.obs_shape)
    (d / "derived_arch.json").write_text(
        json.dumps(derived.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    print(f"[a2d] derived ops: {' '.join(derived.derived_ops)} -> {d / 'derived_arch.json'}")
    return 0


def cmd_retrain(args):
    search_dir, _, resolved = _load_search_run(args.out or "runs", args.run)
    derived_path = search_dir / "derived_arch.json"
    if not derived_path.exists():
        raise ConfigError([f"{derived_path} not found; run `a2d derive --run {args.run}` first"])
    derived = BackboneConfig.from_dict(json.loads(derived_path.read_text()))

    resolved = dict(resolved, backbone=derived.to_dict(), run_id=None)
    if args.seed is not None:
        resolved["seed"] = args.seed
    if args.teacher is not None:
        resolved["teacher"] = args.teacher
    d, run_id, chash = _start_run(resolved, "retrain")
    t0 = time.time()
    env_factory = cfgmod.env_factory_from(resolved)
    spec = env_factory().spec
    train_cfg = cfgmod.train_config_from(resolved)
    distill_cfg = cfgmod.distill_config_from(resolved).validate()

    with JsonlWriter(d / "metrics.jsonl") as writer:
        net, final = retrain_derived(
            derived, env_factory, train_cfg, distill_cfg, metrics_writer=writer
        )
    save_agent(net, derived, spec, d / "checkpoints" / "final.ckpt")
    history = [{"step": 0, "mean_score": final["score"]}]
    _finish_record(d, run_id, chash, resolved, "searched", history, final, t0)
    print(f"[a2d] retrain done: score={final['score']:.4f} mflops={final['mflops']:.3f} -> {d}")
    return 0


def cmd_ablate_scaling(args):
    resolved = _resolve(args)
    models = (args.models or "tiny,res-S,res-M,res-L").split(",")
    seeds = [int(s) for s in (args.seeds or str(resolved["seed"])).split(",")]
    records = []
    for model in models:
        for seed in seeds:
            sub = dict(resolved, backbone=model, seed=seed, run_id=None)
            d, run_id, chash = _start_run(sub, "train")
            t0 = time.time()
            env_factory = cfgmod.env_factory_from(sub)
            spec = env_factory().spec
            train_cfg = cfgmod.train_config_from(sub)
            net = build_agent(BACKBONE_PRESETS[model], spec, init_seed=seed)
            with JsonlWriter(d / "metrics.jsonl") as writer:
                trainer = Trainer(net, env_factory, train_cfg, metrics_writer=writer)
                trainer.train()
            final = {
                "score": trainer.history[-1]["mean_score"],
                "mflops": agent_flops(BACKBONE_PRESETS[model], spec.obs_shape, spec.num_actions) / 1e6,
                "params": net.param_count(),
            }
            records.append(
                _finish_record(d, run_id, chash, sub, model, trainer.history, final, t0)
            )
            print(f"[a2d] {model} seed={seed}: score={final['score']:.4f} "
                  f"mflops={final['mflops']:.3f}")
    out = Path(resolved["out_dir"]) / "ablate_scaling.csv"
    out.write_text(tradeoff_report(records))
    print(f"[a2d] scaling table -> {out}")
    return 0


def cmd_ablate_distill(args):
    resolved = _resolve(args)
    if resolved["teacher"] is None:
        raise ConfigError(["ablate-distill needs --teacher (a trained checkpoint)"])
    modes = (args.modes or "none,actor_only,actor_plus_reuse_critic,proposed").split(",")
    students = (args.models or "tiny,res-S").split(",")
    seeds = [int(s) for s in (args.seeds or "0,1,2,3,4").split(",")]
    env_factory = cfgmod.env_factory_from(resolved)
    spec = env_factory().spec
    teacher, _ = load_teacher(resolved["teacher"], spec)

    rows = []
    for student in students:
        for mode in modes:
            scores = []
            for seed in seeds:
                sub = dict(resolved, backbone=student, seed=seed, run_id=None)
                sub["distill"] = dict(sub["distill"], mode=mode)
                d, run_id, chash = _start_run(sub, f"ablate-distill-{student}-{mode}")
                t0 = time.time()
                train_cfg = cfgmod.train_config_from(sub)
                distill_cfg = cfgmod.distill_config_from(sub)
                with JsonlWriter(d / "metrics.jsonl") as writer:
                    net, history = train_with_distillation(
                        BACKBONE_PRESETS[student], env_factory, train_cfg, distill_cfg,
                        metrics_writer=writer, teacher=teacher if mode != "none" else None,
                    )
                final = {
                    "score": history[-1]["mean_score"],
                    "mflops": agent_flops(BACKBONE_PRESETS[student], spec.obs_shape,
                                          spec.num_actions) / 1e6,
                    "params": net.param_count(),
                }
                _finish_record(d, run_id, chash, sub, student, history, final, t0)
                scores.append(final["score"])
                print(f"[a2d] {student}/{mode} seed={seed}: {final['score']:.4f}")
            rows.append((student, mode, float(np.mean(scores)), float(np.std(scores)), len(scores)))

    out = Path(resolved["out_dir"]) / "ablate_distill.csv"
    lines = ["model,mode,mean_score,std_score,seeds"]
    lines += [f"{m},{mo},{mean:.4f},{std:.4f},{n}" for m, mo, mean, std, n in rows]
    out.write_text("\n".join(lines) + "\n")
    print(f"[a2d] distillation matrix -> {out}")
    return 0


def cmd_sweep_lambda(args):
    resolved = _resolve(args)
    lambdas = [float(x) for x in (args.lambdas or "0,0.05,0.2").split(",")]
    seeds = [int(s) for s in (args.seeds or str(resolved["seed"])).split(",")]
    if isinstance(resolved["backbone"], str) and not resolved["backbone"].startswith("supernet"):
        resolved = dict(resolved, backbone="supernet-6")
    env_factory = cfgmod.env_factory_from(resolved)
    spec = env_factory().spec
    backbone, _ = cfgmod.backbone_from(resolved)

    lines = ["lambda,seed,derived_ops,mflops"]
    for lam in lambdas:
        for seed in seeds:
            sub = dict(resolved, seed=seed, run_id=None)
            sub["search"] = dict(sub["search"], cost_weight=lam)
            d, run_id, chash = _start_run(sub, f"sweep-lambda-{lam}")
            t0 = time.time()
            train_cfg = cfgmod.train_config_from(sub)
            search_cfg = cfgmod.search_config_from(sub)
            distill_cfg = cfgmod.distill_config_from(sub)
            with JsonlWriter(d / "metrics.jsonl") as writer, \
                 JsonlWriter(d / "arch.jsonl") as arch_writer:
                result = search(backbone, env_factory, train_cfg, search_cfg, distill_cfg,
                                metrics_writer=writer, arch_writer=arch_writer)
            derived = derive(result.arch, backbone, spec.obs_shape)
            (d / "derived_arch.json").write_text(
                json.dumps(derived.to_dict(), indent=2, sort_keys=True) + "\n"
            )
            flops = agent_flops(derived, spec.obs_shape, spec.num_actions) / 1e6
            final = {"score": result.history[-1]["mean_score"] if result.history else float("nan"),
                     "mflops": flops, "params": 0}
            _finish_record(d, run_id, chash, sub, "searched", result.history, final, t0)
            lines.append(f"{lam},{seed},{'|'.join(derived.derived_ops)},{flops:.4f}")
            print(f"[a2d] lambda={lam} seed={seed}: mflops={flops:.4f}")
    out = Path(resolved["out_dir"]) / "sweep_lambda.csv"
    out.write_text("\n".join(lines) + "\n")
    print(f"[a2d] lambda sweep -> {out}")
    return 0


def _add_common(p, teacher=False):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override seed (also A2D_SEED)")
    p.add_argument("--out", help="output root directory (also A2D_OUT)")
    p.add_argument("--run-id", dest="run_id", help="run directory name")
    p.add_argument("--workers", type=int, help="rollout workers (1 = reference mode)")
    p.add_argument("--total-steps", dest="total_steps", type=int, help="training budget")
    p.add_argument("--backbone", help=f"backbone preset ({', '.join(BACKBONE_PRESETS)})")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="generic dotted-key override, e.g. --set train.num_envs=4")
    if teacher:
        p.add_argument("--teacher", help="teacher checkpoint path")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="a2d",
        description="actor-critic training, distillation, and cost-aware architecture search",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="plain A2C training")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("distill", help="teacher-guided student training")
    _add_common(p, teacher=True)
    p.add_argument("--distill", choices=["none", "actor_only", "actor_plus_reuse_critic",
                                         "proposed"], help="distillation mode")
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("search", help="differentiable architecture search")
    _add_common(p, teacher=True)
    p.add_argument("--distill", choices=["none", "actor_only", "actor_plus_reuse_critic",
                                         "proposed"], help="distillation mode (none = vanilla)")
    p.add_argument("--optimization", choices=["one_level", "bi_level"])
    p.add_argument("--cost-weight", dest="cost_weight", type=float, help="lambda")
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("derive", help="extract the argmax architecture from a search run")
    p.add_argument("--run", required=True, help="search run id")
    p.add_argument("--out", help="output root the run lives under")
    p.set_defaults(fn=cmd_derive)

    p = sub.add_parser("retrain", help="train a derived architecture from scratch")
    p.add_argument("--run", required=True, help="search run id holding derived_arch.json")
    p.add_argument("--out", help="output root the run lives under")
    p.add_argument("--seed", type=int)
    p.add_argument("--teacher", help="teacher checkpoint path")
    p.set_defaults(fn=cmd_retrain)

    p = sub.add_parser("ablate-scaling", help="train the fixed-backbone size ladder")
    _add_common(p)
    p.add_argument("--models", help="comma list (default tiny,res-S,res-M,res-L)")
    p.add_argument("--seeds", help="comma list of seeds")
    p.set_defaults(fn=cmd_ablate_scaling)

    p = sub.add_parser("ablate-distill", help="distillation-mode score matrix")
    _add_common(p, teacher=True)
    p.add_argument("--modes", help="comma list of distillation modes")
    p.add_argument("--models", help="comma list of student backbones (default tiny,res-S)")
    p.add_argument("--seeds", help="comma list of seeds (default 0..4)")
    p.set_defaults(fn=cmd_ablate_distill)

    p = sub.add_parser("sweep-lambda", help="cost-weight sweep: search + derive per lambda")
    _add_common(p, teacher=True)
    p.add_argument("--lambdas", help="comma list of cost weights (default 0,0.05,0.2)")
    p.add_argument("--seeds", help="comma list of seeds")
    p.set_defaults(fn=cmd_sweep_lambda)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"[a2d] {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"[a2d] missing file: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

