"""Segment one target from one reference and save the annotated strip.

Renders a small synthetic suite, picks a same-class pair, runs the full
method and writes ``strip.png`` into the output directory.

    python3 demos/segment_pair.py --out /tmp/refvid-demo
"""
import argparse
from pathlib import Path

from refvid.bench.evaluate import RunConfig, Toolkit, run_episode
from refvid.bench.manifest import DatasetManifest, plan_episodes
from refvid.bench.synthetic import SuiteSpec, write_suite
from refvid.viz import visualize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("refvid-demo"))
    ap.add_argument("--episode", type=int, default=3)
    args = ap.parse_args()

    manifest = DatasetManifest.load(write_suite(args.out / "suite", SuiteSpec(n_classes=4, per_class=3)))
    plan = plan_episodes(manifest, shots=1, n_episodes=args.episode + 1)[args.episode]
    episode = plan.materialize(manifest)

    cfg = RunConfig()
    tools = Toolkit.build(cfg, cache_dir=args.out / "cache")
    for name, run_cfg in [("concat", cfg.replace(method="concat", ttga=False)),
                          ("transition only", cfg.replace(ttga=False)),
                          ("full", cfg)]:
        out = run_episode(run_cfg, episode, tools, seed=0)
        print(f"{name:>16}: IoU {out.iou:.3f}, prompted frames {out.sequence.prompted_indices}")

    path = visualize(episode, out.sequence, out.track, args.out / "strip.png")
    print(f"strip written to {path}")


if __name__ == "__main__":
    main()
