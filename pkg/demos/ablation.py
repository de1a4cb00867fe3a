"""Small ablation grid on the synthetic suite.

Runs the two-frame baseline, the transition-only variant and the full
method with both consistency strategies, then prints one mIoU per row.
A few dozen episodes finish in about a minute; the acceptance tests use 200.

    python3 demos/ablation.py --episodes 40 --out /tmp/refvid-ablation
"""
import argparse
from pathlib import Path

from refvid.bench.evaluate import RunConfig, run_evaluation
from refvid.bench.synthetic import SuiteSpec, write_suite

GRID = [
    ("concat", dict(method="concat", ttga=False)),
    ("concat + transition", dict(method="cav", ttga=False)),
    ("full, ACC", dict(method="cav", strategy="acc")),
    ("full, ABC", dict(method="cav", strategy="abc")),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=40)
    ap.add_argument("--out", type=Path, default=Path("refvid-ablation"))
    args = ap.parse_args()

    manifest = write_suite(args.out / "suite", SuiteSpec())
    for name, overrides in GRID:
        cfg = RunConfig(n_episodes=args.episodes, **overrides)
        report = run_evaluation(cfg, manifest, cache_dir=args.out / "cache")
        report.save(args.out / f"{name.replace(' ', '_').replace(',', '')}.json")
        print(f"{name:>22}: mIoU {100 * report.aggregate_miou:6.2f}  ({len(report.failures)} failures)")


if __name__ == "__main__":
    main()
