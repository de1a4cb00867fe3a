"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .core import Episode, read_image, read_mask, write_mask
from .dbst import load_sequence, save_sequence
from .errors import ConfigError, InputError, RefVidError

log = logging.getLogger("refvid")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        doc = {"t": round(record.created, 3), "level": record.levelname.lower(), "logger": record.name,
               "msg": record.getMessage()}
        if record.exc_info:
            doc["exc"] = self.formatException(record.exc_info)
        return json.dumps(doc, sort_keys=True)


def setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if level == "debug":
        handler.setFormatter(JsonLineFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    # keep argparse's message but let main() own the exit code
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


# flags that map one-to-one onto RunConfig keys
CONFIG_FLAGS = {
    "method": dict(choices=("cav", "concat", "mixup", "affine")),
    "shots": dict(type=int),
    "tracker": dict(),
    "backend": dict(),
    "preset": dict(),
    "alpha_lo": dict(type=float),
    "alpha_hi": dict(type=float),
    "n_frames": dict(type=int),
    "strategy": dict(choices=("acc", "abc")),
    "steps": dict(type=int),
    "lr": dict(type=float),
    "temperature": dict(type=float),
    "n_episodes": dict(type=int),
}


def _add_config_flags(p, *names):
    for name in names:
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **CONFIG_FLAGS[name])


def _add_ttga_toggle(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--ttga", dest="ttga", action="store_true", default=None, help="adapt and prompt (default on)")
    g.add_argument("--no-ttga", dest="ttga", action="store_false", help="prompt frame 0 only")


def build_parser() -> argparse.ArgumentParser:
    common = Parser(add_help=False)
    # suppressed defaults so a flag given before the subcommand is not reset by the subparser
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                        help="JSON run configuration; flags override its values")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--log-level", default=argparse.SUPPRESS, choices=("debug", "info", "warning", "error"))

    p = Parser(prog="refvid", description="Reference segmentation through pseudo videos.", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("generate-sequence", parents=[common], help="write a pseudo video for a reference/target pair")
    g.add_argument("--ref", type=Path, required=True)
    g.add_argument("--target", type=Path, required=True)
    g.add_argument("--out", type=Path, required=True, help="output directory")
    g.add_argument("--resolution", type=int, default=None)
    g.add_argument("--cache-dir", type=Path, default=None)
    _add_config_flags(g, "preset", "backend", "alpha_lo", "alpha_hi", "n_frames")

    a = sub.add_parser("adapt", parents=[common], help="fine-tune the extractor on references and save the prototype")
    a.add_argument("--ref", type=Path, action="append", required=True)
    a.add_argument("--ref-mask", type=Path, action="append", required=True)
    a.add_argument("--out", type=Path, required=True, help="output directory")
    a.add_argument("--resolution", type=int, default=None)
    _add_config_flags(a, "strategy", "steps", "lr", "temperature")

    s = sub.add_parser("segment", parents=[common], help="segment one target image")
    s.add_argument("--ref", type=Path, action="append", required=True)
    s.add_argument("--ref-mask", type=Path, action="append", required=True)
    s.add_argument("--target", type=Path, required=True)
    s.add_argument("--target-gt", type=Path, default=None)
    s.add_argument("--out-mask", type=Path, required=True)
    s.add_argument("--out-strip", type=Path, default=None)
    s.add_argument("--save-sequence", type=Path, default=None, help="directory for frames, prompts and masks")
    s.add_argument("--resolution", type=int, default=None)
    s.add_argument("--cache-dir", type=Path, default=None)
    _add_config_flags(s, "method", "tracker", "backend", "preset", "alpha_lo", "alpha_hi", "n_frames",
                      "strategy", "steps", "lr", "temperature")
    _add_ttga_toggle(s)

    e = sub.add_parser("evaluate", parents=[common], help="benchmark a configuration on a dataset manifest")
    e.add_argument("--manifest", type=Path, required=True)
    e.add_argument("--out", type=Path, required=True, help="report JSON path")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--journal", type=Path, default=None, help="JSON-lines journal; enables resume")
    e.add_argument("--cache-dir", type=Path, default=None)
    _add_config_flags(e, *CONFIG_FLAGS)
    _add_ttga_toggle(e)

    v = sub.add_parser("visualize", parents=[common], help="render a strip from a saved sequence directory")
    v.add_argument("--sequence", type=Path, required=True)
    v.add_argument("--out", type=Path, required=True)

    m = sub.add_parser("make-suite", parents=[common], help="render the synthetic benchmark suite")
    m.add_argument("--out", type=Path, required=True)
    m.add_argument("--classes", type=int, default=8)
    m.add_argument("--per-class", type=int, default=6)
    m.add_argument("--resolution", type=int, default=128)
    m.add_argument("--semantic-gap", type=float, default=0.3)
    m.add_argument("--geometric-gap", type=float, default=0.1)
    return p


def resolve_config(args):
    """Defaults, then the config file, then explicit flags."""
    from .bench.evaluate import RunConfig

    values = {}
    if getattr(args, "config", None) is not None:
        values.update(RunConfig.load(args.config).to_dict())
    for name in list(CONFIG_FLAGS) + ["ttga"]:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    return RunConfig.from_dict(values)


def _load_pairs(images, masks, size):
    if len(images) != len(masks):
        raise InputError("give one --ref-mask per --ref")
    return [(read_image(i, size), read_mask(m, size)) for i, m in zip(images, masks)]


def _size(args, fallback):
    if args.resolution is not None:
        return (args.resolution, args.resolution)
    with_shape = read_image(fallback)
    return with_shape.shape[:2]


def cmd_generate(args, cfg) -> int:
    from .bench.evaluate import Toolkit
    from .dbst import generate_sequence, make_alpha_schedule

    size = _size(args, args.target)
    ref = read_image(args.ref, size)
    tgt = read_image(args.target, size)
    tools = Toolkit.build(cfg, args.cache_dir)
    schedule = make_alpha_schedule(cfg.n_frames, cfg.alpha_lo, cfg.alpha_hi)
    seq = generate_sequence(ref, tgt, schedule, tools.backend, preset=cfg.preset, seed=cfg.seed, cache=tools.cache)
    save_sequence(args.out, seq, {"config": cfg.to_dict()})
    log.info("wrote %d frames to %s", len(seq), args.out)
    return EXIT_OK


def cmd_adapt(args, cfg) -> int:
    from .ttga import finetune
    from .ttga.extractor import ToyExtractor

    size = _size(args, args.ref[0])
    refs = _load_pairs(args.ref, args.ref_mask, size)
    episode = Episode(references=refs, target=refs[0][0], class_id="adapt")
    result = finetune(episode, ToyExtractor(seed=cfg.seed), cfg.ttga_config(cfg.seed), cfg.strategy)
    args.out.mkdir(parents=True, exist_ok=True)
    np.save(args.out / "prototype.npy", result.prototype)
    np.savez(args.out / "extractor.npz", **result.extractor.parameters())
    result.write_log(args.out / "finetune.jsonl")
    summary = {"initial_loss": result.initial_loss, "final_loss": result.final_loss, "strategy": cfg.strategy,
               "steps": cfg.steps}
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    log.info("loss %.6f -> %.6f", result.initial_loss, result.final_loss)
    return EXIT_OK


def save_run(directory: Path, seq, track) -> None:
    """Sequence frames plus per-frame prompt and predicted masks."""
    save_sequence(directory, seq)
    names = {"prompts": [], "predictions": []}
    for i, (p, m) in enumerate(zip(seq.prompts, track.masks)):
        if p is not None:
            write_mask(directory / f"prompt_{i:03d}.png", p)
        names["prompts"].append(None if p is None else f"prompt_{i:03d}.png")
        write_mask(directory / f"pred_{i:03d}.png", m)
        names["predictions"].append(f"pred_{i:03d}.png")
    (directory / "masks.json").write_text(json.dumps(names, indent=2, sort_keys=True))


def load_run(directory: Path):
    from .ivos import TrackResult

    seq = load_sequence(directory)
    try:
        names = json.loads((directory / "masks.json").read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"{directory} has no readable masks.json: {exc}") from exc
    prompts = [None if n is None else read_mask(directory / n) for n in names["prompts"]]
    preds = [read_mask(directory / n) for n in names["predictions"]]
    return seq.with_prompts(prompts), TrackResult(preds)


def cmd_segment(args, cfg) -> int:
    from .bench.evaluate import Toolkit, run_episode
    from .viz import visualize

    size = _size(args, args.target)
    refs = _load_pairs(args.ref, args.ref_mask, size)
    gt = read_mask(args.target_gt, size) if args.target_gt else None
    episode = Episode(references=refs, target=read_image(args.target, size), target_gt=gt, class_id="cli",
                      episode_id="cli")
    tools = Toolkit.build(cfg, args.cache_dir)
    out = run_episode(cfg, episode, tools, cfg.seed)
    args.out_mask.parent.mkdir(parents=True, exist_ok=True)
    write_mask(args.out_mask, out.track.target_mask)
    if args.out_strip is not None:
        visualize(episode, out.sequence, out.track, args.out_strip)
    if args.save_sequence is not None:
        save_run(args.save_sequence, out.sequence, out.track)
    line = {"foreground_fraction": out.fg_fraction, "prompted_frames": out.sequence.prompted_indices}
    if gt is not None:
        line["iou"] = out.iou
    print(json.dumps(line, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    from .bench.evaluate import FAILURE_LIMIT, failure_rate, run_evaluation

    t0 = time.perf_counter()
    report = run_evaluation(cfg, args.manifest, workers=args.workers, journal=args.journal, cache_dir=args.cache_dir)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    report.save(args.out)
    rate = failure_rate(report)
    print(json.dumps({"aggregate_miou": report.aggregate_miou, "episodes": len(report.per_episode),
                      "failures": len(report.failures), "seconds": round(time.perf_counter() - t0, 1)},
                     sort_keys=True))
    return EXIT_OK if rate <= FAILURE_LIMIT else EXIT_RUNTIME


def cmd_visualize(args, cfg) -> int:
    from .viz import visualize

    seq, track = load_run(args.sequence)
    visualize(None, seq, track, args.out)
    return EXIT_OK


def cmd_make_suite(args, cfg) -> int:
    from .bench.synthetic import SuiteSpec, write_suite

    spec = SuiteSpec(n_classes=args.classes, per_class=args.per_class, resolution=args.resolution,
                     semantic_gap=args.semantic_gap, geometric_gap=args.geometric_gap, seed=cfg.seed)
    print(write_suite(args.out, spec))
    return EXIT_OK


COMMANDS = {
    "generate-sequence": cmd_generate,
    "adapt": cmd_adapt,
    "segment": cmd_segment,
    "evaluate": cmd_evaluate,
    "visualize": cmd_visualize,
    "make-suite": cmd_make_suite,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    setup_logging(getattr(args, "log_level", "warning"))
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, InputError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (RefVidError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
