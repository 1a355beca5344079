"""Operator command line: gen-data, train, eval, inspect.

Every command is deterministic given its config and seed. Exit codes:
0 success, 2 config error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, DataError, NavgenError


def _cmd_gen_data(args) -> int:
    from .config import load_config
    from .datagen import generate_all

    cfg = load_config(args.config)
    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create out-dir {out_dir}: {exc}") from exc
    table = generate_all(cfg, out_dir)
    kinds = sorted(next(iter(table.values())).keys())
    width = max(len(s) for s in list(table) + ["split"]) + 2
    print("split".ljust(width) + "  ".join(k.ljust(7) for k in kinds) + "total")
    for split, counts in table.items():
        cells = "  ".join(str(counts[k]).ljust(7) for k in kinds)
        print(split.ljust(width) + cells + str(sum(counts.values())))
    return 0


def _load_train_state(args, cfg, bundle):
    from . import checkpoint as ckpt
    from .config import config_to_dict
    from .model import init_params
    from .trainer import init_opt_state
    from .vocabulary import get_vocab

    if args.resume:
        path = Path(args.resume)
        if not path.exists():
            raise DataError(f"checkpoint not found: {path}")
        params, opt_state, meta = ckpt.load_checkpoint(path)
        if meta.get("run_config") != config_to_dict(cfg):
            raise ConfigError(["--resume checkpoint was trained with a different config"])
        return params, opt_state, meta["step"], meta["rng_state"]
    params = init_params(cfg.seed, cfg.model, cfg.world.d_feat, len(get_vocab()))
    return params, init_opt_state(params), 0, None


def _cmd_train(args) -> int:
    from . import checkpoint as ckpt
    from .config import config_to_dict, load_config
    from .datagen import load_split
    from .trainer import records_to_csv, train

    cfg = load_config(args.config)
    data_dir = Path(args.data)
    split_dir = data_dir / "train" if (data_dir / "train").exists() else data_dir
    bundle = load_split(split_dir)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    params, opt_state, start_step, rng_state = _load_train_state(args, cfg, bundle)
    params, opt_state, records, rng_state = train(
        bundle, params, opt_state, cfg.train, cfg.model, cfg.eval, cfg.seed,
        start_step=start_step, stop_after=args.stop_after, rng_state=rng_state)

    final_step = records[-1].step + 1 if records else start_step
    meta = {
        "run_config": config_to_dict(cfg),
        "step": final_step,
        "rng_state": rng_state,
        "vocab_size": _vocab_size(),
    }
    ckpt.save_checkpoint(out_dir / "checkpoint.nvgn", params, opt_state, meta)
    csv_path = out_dir / "loss.csv"
    body = records_to_csv(records)
    if args.resume and csv_path.exists():
        body = body.split("\n", 1)[1]
        with open(csv_path, "a", encoding="utf-8") as fh:
            fh.write(body)
    else:
        csv_path.write_text(body, encoding="utf-8")
    if records:
        print(f"trained steps [{records[0].step}, {records[-1].step}] "
              f"final loss {records[-1].loss:.4f}")
    print(f"checkpoint: {out_dir / 'checkpoint.nvgn'}")
    return 0


def _vocab_size() -> int:
    from .vocabulary import get_vocab
    return len(get_vocab())


def _cmd_eval(args) -> int:
    from . import checkpoint as ckpt
    from .config import config_from_dict
    from .datagen import load_split
    from .evalrun import evaluate, rows_to_csv, summary_table

    path = Path(args.checkpoint)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    params, _, meta = ckpt.load_checkpoint(path)
    cfg = config_from_dict(meta["run_config"])
    bundle = load_split(args.data)
    kinds = [k.strip().upper() for k in args.tasks.split(",")] if args.tasks else None
    exclude = [k.strip().upper() for k in args.exclude_kind.split(",")] if args.exclude_kind else ()
    policy = "oracle" if args.oracle_policy else "model"
    rows, summary, _ = evaluate(bundle, params, cfg, kinds=kinds,
                                exclude=exclude, policy=policy, seed=cfg.seed)
    print(summary_table(summary))
    if args.report:
        report_path = Path(args.report)
        report_path.write_text(
            json.dumps({"seed": cfg.seed, "rows": rows, "summary": summary},
                       sort_keys=True, indent=2),
            encoding="utf-8")
        report_path.with_suffix(".csv").write_text(rows_to_csv(rows), encoding="utf-8")
        print(f"report: {report_path}")
    return 0


def _find_world_for(episodes_path: Path, episode_id: str, world_arg):
    from .datagen import WORLDS_MANIFEST
    from .world import load_world

    if world_arg:
        return load_world(world_arg)
    manifest_path = episodes_path.parent / WORLDS_MANIFEST
    if not manifest_path.exists():
        raise DataError(
            f"no worlds manifest next to {episodes_path}; pass --world explicitly")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    widx = 0
    if episode_id.startswith("w") and "-" in episode_id:
        widx = int(episode_id[1:episode_id.index("-")])
    return load_world(episodes_path.parent / manifest["worlds"][widx]["file"])


def _cmd_inspect(args) -> int:
    from . import checkpoint as ckpt
    from .agent import INFER, qa_parts, rollout, summ_parts
    from .config import RunConfig, config_from_dict
    from .encoder import encode_candidates
    from .model import init_params
    from .schema import assemble, dump_stream
    from .tasks import read_jsonl
    from .agent import _nav_parts
    from .vocabulary import get_vocab

    spec = args.episode
    episode_id = None
    if ":" in spec and not Path(spec).exists():
        path_part, episode_id = spec.rsplit(":", 1)
        episodes_path = Path(path_part)
    else:
        episodes_path = Path(spec)
    if not episodes_path.exists():
        raise DataError(f"episodes file not found: {episodes_path}")
    episodes = read_jsonl(episodes_path)
    if episode_id is None:
        episode = episodes[0]
    else:
        matches = [e for e in episodes if e.episode_id == episode_id]
        if not matches:
            raise DataError(f"episode {episode_id!r} not in {episodes_path}")
        episode = matches[0]

    world = _find_world_for(episodes_path, episode.episode_id, args.world)
    vocab = get_vocab()
    if args.checkpoint:
        params, _, meta = ckpt.load_checkpoint(args.checkpoint)
        cfg = config_from_dict(meta["run_config"])
    else:
        cfg = RunConfig()
        params = init_params(cfg.seed, cfg.model, world.cfg.d_feat, len(vocab))

    if episode.kind == "QA":
        parts = qa_parts(world, episode, list(episode.goal_viewpoints), params, cfg.model)
    elif episode.kind == "SUMM":
        parts = summ_parts(world, episode, params, cfg.model)
    else:
        entries, _ = encode_candidates(world, episode.start, params, cfg.model)
        parts = _nav_parts(episode, [], entries)
    stream = assemble(parts, vocab)
    sys.stdout.write(dump_stream(stream, vocab))

    if args.checkpoint and episode.kind in ("VLN", "OBJLOC", "EQA"):
        from .rngutil import generator
        traj = rollout(world, episode, params, INFER, cfg.model,
                       rng=generator(cfg.seed, "inspect"), eval_cfg=cfg.eval)
        print("---")
        print(f"visited: {traj.visited}")
        print(f"chosen:  {traj.chosen}")
        print(f"teacher: {traj.teacher}")
        print(f"stopped: {traj.stopped}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="navgen",
                                     description="schema-prompted navigation testbed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate worlds and episode datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="run the two-stage training schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset root or train split dir")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--stop-after", type=int, default=None,
                   help="stop after this global step (for staged runs)")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="split directory")
    p.add_argument("--tasks", default=None, help="comma-separated kinds")
    p.add_argument("--exclude-kind", default=None, help="kinds to drop (held-out protocol)")
    p.add_argument("--report", default=None, help="write JSON (+CSV) report here")
    p.add_argument("--oracle-policy", action="store_true",
                   help="follow teacher actions instead of the model")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("inspect", help="dump an episode's schema stream")
    p.add_argument("--episode", required=True, help="episodes.jsonl[:episode_id]")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--world", default=None, help="world file override")
    p.set_defaults(fn=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return exc.exit_code
    except NavgenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
