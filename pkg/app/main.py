"""Command-line entry point: ``python -m app.main <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error (including a failed
gradient check).
"""
import argparse
import json
import sys
from typing import Any, Callable, Dict, List, Optional

from decouple import RepositoryEnv
from pydantic import ValidationError

from app.autograd.gradcheck import OP_CHECKS
from app.config import settings
from app.schemas.config import GenParams, ModelConfig, MotionMode, TrainConfig
from app.tasks.pipeline_tasks import eval_task, gen_data_task, gradcheck_task, heatmap_task, train_task
from app.utils.exceptions import GmlError, UsageError
from app.utils.logger import get_loggers

logger = get_loggers("Cli")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

AD_LOSSES = {"both": (True, True), "no-cls": (True, False), "no-l1": (False, True)}
MODES = ["cstm", "cstm_only", "stm", "mcb"]

# key -> (cast, default); shared by train flags and --config files
TRAIN_OPTIONS: Dict[str, tuple] = {
    "data": (str, None),
    "out": (str, None),
    "steps": (int, 100),
    "lr": (float, 0.001),
    "wd": (float, 1e-6),
    "momentum": (float, 0.0),
    "grad_clip": (float, settings.GRAD_CLIP_NORM),
    "batch": (int, 16),
    "mode": (str, "mcb"),
    "ad": (str, "on"),
    "ad_losses": (str, "both"),
    "seed": (int, settings.DEFAULT_SEED),
    "stages": (int, 2),
    "width": (int, 16),
    "log": (str, None),
    "resume": (str, None),
}
TRAIN_CHOICES = {"mode": MODES, "ad": ["on", "off"], "ad_losses": list(AD_LOSSES)}


class CliParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message, self.format_usage())


def _shape(value: str):
    try:
        dims = tuple(int(v) for v in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must be C,T,H,W integers, got {value!r}")
    if len(dims) != 4:
        raise argparse.ArgumentTypeError(f"shape must have 4 entries, got {value!r}")
    return dims


def build_parser() -> CliParser:
    parser = CliParser(prog="gmln", description="Spatio-temporal forgery detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic real/fake dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--count", type=int, default=64)
    gen.add_argument("--fake-ratio", type=float, default=0.5)
    gen.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    gen.add_argument("--shape", type=_shape, default=(3, 8, 32, 32), help="C,T,H,W")
    gen.add_argument("--jitter-amp", type=float, default=GenParams().jitter_amp)
    gen.add_argument("--region-fraction", type=float, default=GenParams().region_fraction)

    tr = sub.add_parser("train", help="train a model on a generated dataset")
    tr.add_argument("--data")
    tr.add_argument("--out")
    tr.add_argument("--steps", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--wd", type=float)
    tr.add_argument("--momentum", type=float)
    tr.add_argument("--grad-clip", type=float, help="global gradient-norm ceiling, 0 disables")
    tr.add_argument("--batch", type=int)
    tr.add_argument("--mode", choices=MODES)
    tr.add_argument("--ad", choices=TRAIN_CHOICES["ad"])
    tr.add_argument("--ad-losses", choices=TRAIN_CHOICES["ad_losses"])
    tr.add_argument("--seed", type=int)
    tr.add_argument("--stages", type=int)
    tr.add_argument("--width", type=int)
    tr.add_argument("--config", help="key = value file; flags override it")
    tr.add_argument("--log", help="CSV metrics log")
    tr.add_argument("--resume", help="checkpoint to continue from")

    ev = sub.add_parser("eval", help="score a dataset with a checkpoint")
    ev.add_argument("--data", required=True)
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--report")
    ev.add_argument("--batch", type=int, default=16)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    gc.add_argument("--seed", type=int, default=1)
    gc.add_argument("--op", choices=list(OP_CHECKS))

    hm = sub.add_parser("heatmap", help="export clue-map heatmaps for one sequence")
    hm.add_argument("--ckpt", required=True)
    hm.add_argument("--input", required=True)
    hm.add_argument("--out", required=True)
    return parser


def read_config_file(path: str) -> Dict[str, str]:
    try:
        repository = RepositoryEnv(path)
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}")
    values = {key.strip().replace("-", "_"): value for key, value in repository.data.items()}
    unknown = sorted(set(values) - set(TRAIN_OPTIONS))
    if unknown:
        raise UsageError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return values


def resolve_train_options(args: argparse.Namespace) -> Dict[str, Any]:
    from_file = read_config_file(args.config) if args.config else {}
    resolved = {}
    for key, (cast, default) in TRAIN_OPTIONS.items():
        flag = getattr(args, key)
        if flag is not None:
            resolved[key] = flag
        elif key in from_file:
            try:
                resolved[key] = cast(from_file[key])
            except ValueError:
                raise UsageError(f"config key {key}: cannot parse {from_file[key]!r}")
        else:
            resolved[key] = default
        if key in TRAIN_CHOICES and resolved[key] not in TRAIN_CHOICES[key]:
            raise UsageError(f"{key} must be one of {', '.join(TRAIN_CHOICES[key])}, got {resolved[key]!r}")
    for key in ("data", "out"):
        if not resolved[key]:
            raise UsageError(f"train needs --{key}")
    return resolved


def _echo(command: str, resolved: Dict[str, Any]) -> None:
    print(f"effective-config: {json.dumps({'command': command, **resolved}, sort_keys=True, default=str)}")


def cmd_gen_data(args: argparse.Namespace) -> int:
    c, t, h, w = args.shape
    try:
        params = GenParams(channels=c, frames=t, height=h, width=w,
                           jitter_amp=args.jitter_amp, region_fraction=args.region_fraction)
    except ValidationError as e:
        raise UsageError(str(e))
    _echo("gen-data", {"out": args.out, "count": args.count, "fake_ratio": args.fake_ratio,
                       "seed": args.seed, "params": params.model_dump()})
    manifest = gen_data_task(args.out, args.count, args.fake_ratio, params, args.seed)
    print(f"wrote {len(manifest)} sequences to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    opts = resolve_train_options(args)
    use_l1, use_cls = AD_LOSSES[opts["ad_losses"]]
    mode = MotionMode.parse(opts["mode"])
    try:
        cfg = TrainConfig(lr=opts["lr"], weight_decay=opts["wd"], momentum=opts["momentum"],
                          grad_clip=opts["grad_clip"] or None, batch_size=opts["batch"], steps=opts["steps"],
                          seed=opts["seed"], mode=mode,
                          ad_enabled=opts["ad"] == "on", use_l1_loss=use_l1, use_ad_cls_loss=use_cls)
        model_cfg = ModelConfig(stages=opts["stages"], base_width=opts["width"], mode=mode,
                                ad_enabled=cfg.ad_enabled, seed=opts["seed"])
    except ValidationError as e:
        raise UsageError(str(e))
    _echo("train", {**opts, "mode": mode.value})
    result = train_task(opts["data"], opts["out"], cfg, model_cfg, resume_path=opts["resume"], log_path=opts["log"])
    if len(result.log):
        print(f"final total loss {result.log['total'].iloc[-1]:.6f} at step {result.checkpoint.step}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    _echo("eval", {"data": args.data, "ckpt": args.ckpt, "report": args.report, "batch": args.batch})
    metrics = eval_task(args.data, args.ckpt, args.report, batch_size=args.batch)
    for name, value in metrics.items():
        print(f"{name},{value!r}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    _echo("gradcheck", {"seed": args.seed, "op": args.op, "tolerance": settings.GRADCHECK_TOLERANCE})
    reports = gradcheck_task(seed=args.seed, op=args.op)
    for r in reports:
        print(f"{r.op_id:<26} {r.max_rel_error:.3e} {'ok' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_RUNTIME


def cmd_heatmap(args: argparse.Namespace) -> int:
    _echo("heatmap", {"ckpt": args.ckpt, "input": args.input, "out": args.out})
    for path in heatmap_task(args.ckpt, args.input, args.out):
        print(path)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "heatmap": cmd_heatmap,
}


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else EXIT_OK
    except UsageError as e:
        sys.stderr.write(e.usage or parser.format_usage())
        sys.stderr.write(f"error: {e}\n")
        return EXIT_USAGE
    except (GmlError, OSError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
