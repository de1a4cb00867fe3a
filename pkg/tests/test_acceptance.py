"""Acceptance checks.  Each test prints one ``PASS``/``FAIL`` line.

The benchmark tests share one synthetic suite, one sequence cache and one
set of evaluation reports, built lazily on first use.
"""
import json
import math
import time

import numpy as np
import pytest

from refvid.bench.evaluate import RunConfig, read_journal, run_evaluation
from refvid.bench.synthetic import SuiteSpec, write_suite
from refvid.cli import main
from refvid.dbst import AdapterDelta, LatentNoise, interpolate_adapter, slerp
from refvid.ttga import TTGAConfig, ToyExtractor, finetune
from refvid.ttga.ops import _otsu_bin, bce_loss, masked_average_pool, otsu_histogram

from test_finetune import separable_episode
from test_interp import slerp_oracle
from test_ttga_ops import adversarial_maps, map_oracle, otsu_oracle

N_ORDERING = 200
N_NEGATIVE = 50
N_MIXUP = 96


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return emit


# -- math oracles ------------------------------------------------------------

def test_interpolation_math(verdict):
    t0 = time.perf_counter()
    r = np.random.default_rng(0)
    end_err = norm_err = oracle_err = 0.0
    for _ in range(1000):
        a, b = r.standard_normal((2, 64))
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        za, zb = LatentNoise(a), LatentNoise(b)
        end_err = max(end_err, np.abs(slerp(za, zb, 0.0).z - a).max(), np.abs(slerp(za, zb, 1.0).z - b).max())
        t = r.uniform()
        out = slerp(za, zb, t).z
        norm_err = max(norm_err, abs(np.linalg.norm(out) - 1.0))
        oracle_err = max(oracle_err, np.abs(out - slerp_oracle(a, b, t)).max())
    affine_err = 0.0
    for _ in range(200):
        x, y = r.standard_normal((2, 3, 5))
        t = r.uniform()
        dr, dt = AdapterDelta({"w": x}), AdapterDelta({"w": y})
        got = interpolate_adapter(dr, dt, t).tensors["w"]
        affine_err = max(affine_err, np.abs(got - ((1 - t) * x + t * y)).max(),
                         np.abs(interpolate_adapter(dr, dt, 0.0).tensors["w"] - x).max(),
                         np.abs(interpolate_adapter(dr, dt, 1.0).tensors["w"] - y).max())
    dt_s = time.perf_counter() - t0
    ok = end_err <= 1e-6 and norm_err <= 1e-5 and oracle_err <= 1e-9 and affine_err <= 1e-12 and dt_s < 5
    verdict("interpolation math", ok, f"endpoint {end_err:.1e}, norm {norm_err:.1e}, oracle {oracle_err:.1e}, "
                                      f"adapter {affine_err:.1e}, {dt_s:.2f}s")


def test_map_oracle(verdict):
    t0 = time.perf_counter()
    r = np.random.default_rng(1)
    err = 0.0
    for i in range(500):
        h, w, d = r.integers(1, 9, 3)
        f = r.standard_normal((h, w, d))
        if i % 5 == 0:
            m = np.zeros((h, w), np.uint8)
            m[r.integers(h), r.integers(w)] = 1
        elif i % 5 == 1:
            m = np.ones((h, w), np.uint8)
        else:
            m = (r.random((h, w)) < 0.5).astype(np.uint8)
            m[0, 0] = 1
        err = max(err, np.abs(masked_average_pool(f, m) - map_oracle(f, m)).max())
    dt_s = time.perf_counter() - t0
    verdict("masked average pooling oracle", err <= 1e-6 and dt_s < 10, f"max error {err:.1e}, {dt_s:.2f}s")


def test_otsu_oracle(verdict):
    t0 = time.perf_counter()
    r = np.random.default_rng(2)
    maps = [r.random((16, 16)) * r.uniform(0.1, 2) - r.uniform() for _ in range(100)]
    adversarial = list(adversarial_maps(r))
    while len(adversarial) < 20:
        k = len(adversarial)
        adversarial += [np.full(64, 0.5) + r.normal(0, 1e-9, 64),
                        np.concatenate([r.normal(-0.5, 0.02, 200), r.normal(0.5 + 0.01 * k, 0.02, 20)]),
                        r.standard_t(1.5, 300)][: 20 - len(adversarial)]
    mismatches = 0
    for m in maps + adversarial:
        hist, _ = otsu_histogram(m)
        mismatches += _otsu_bin(hist) != otsu_oracle([int(v) for v in hist])
    dt_s = time.perf_counter() - t0
    verdict("Otsu exhaustive oracle", mismatches == 0 and dt_s < 10,
            f"{mismatches} mismatches over {len(maps)} random + {len(adversarial)} adversarial maps, {dt_s:.2f}s")


def test_bce_closed_forms(verdict):
    e1 = abs(bce_loss(np.array([1.0]), np.array([1])) - math.log1p(math.exp(-1.0)))
    e1n = abs(bce_loss(np.array([-1.0]), np.array([0])) - math.log1p(math.exp(-1.0)))
    e0 = abs(bce_loss(np.array([0.0]), np.array([1])) - math.log(2.0))
    err = max(e1, e1n, e0)
    verdict("BCE closed forms", err <= 1e-9, f"max error {err:.1e}")


def test_acc_loop(verdict):
    t0 = time.perf_counter()
    wins = 0
    for seed in range(20):
        res = finetune(separable_episode(seed), ToyExtractor(seed=seed), TTGAConfig(steps=100, seed=seed), "acc")
        wins += res.final_loss < res.initial_loss
    ex = ToyExtractor()
    before = {k: v.copy() for k, v in ex.parameters().items()}
    after = finetune(separable_episode(0), ex, TTGAConfig(steps=0)).extractor.parameters()
    identical = all(np.array_equal(before[k], after[k]) for k in before)
    dt_s = time.perf_counter() - t0
    verdict("ACC loop", wins >= 18 and identical and dt_s < 120,
            f"loss decreased in {wins}/20 runs, 0-step parameters identical={identical}, {dt_s:.1f}s")


# -- benchmark ---------------------------------------------------------------

@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    manifest = write_suite(root / "suite", SuiteSpec())
    cache = root / "cache"
    runs = {}

    def run(name, **kw):
        if name not in runs:
            cfg = RunConfig(**kw)
            journal = root / f"{name}.jsonl"
            t0 = time.perf_counter()
            report = run_evaluation(cfg, manifest, journal=journal, cache_dir=cache)
            runs[name] = (report, read_journal(journal, cfg.fingerprint()), time.perf_counter() - t0)
        return runs[name]

    run.root = root
    run.manifest = manifest
    return run


def test_pipeline_ordering(bench, verdict):
    concat, _, t1 = bench("concat", method="concat", ttga=False, n_episodes=N_ORDERING)
    dbst, _, t2 = bench("dbst", method="cav", ttga=False, n_episodes=N_ORDERING)
    full, _, t3 = bench("acc", method="cav", strategy="acc", n_episodes=N_ORDERING)
    a, b, c = (100 * r.aggregate_miou for r in (concat, dbst, full))
    seconds = t1 + t2 + t3
    ok = b - a >= 1.0 and c - b >= 1.0 and seconds < 900
    verdict("pipeline ordering", ok,
            f"concat {a:.2f} < +DBST {b:.2f} < full {c:.2f} (gaps {b - a:.2f}, {c - b:.2f}) "
            f"on {N_ORDERING} episodes, {seconds:.0f}s")


def test_acc_vs_abc(bench, verdict):
    acc, _, _ = bench("acc", method="cav", strategy="acc", n_episodes=N_ORDERING)
    abc, _, _ = bench("abc", method="cav", strategy="abc", n_episodes=N_ORDERING)
    a, b = 100 * acc.aggregate_miou, 100 * abc.aggregate_miou
    verdict("ACC vs ABC", a >= b, f"ACC {a:.2f}, ABC {b:.2f}")


def test_negative_failsafe(bench, verdict):
    _, records, _ = bench("negative", method="cav", n_episodes=N_NEGATIVE, negative=True)
    fg = [r["fg_fraction"] for r in records.values() if r["status"] == "ok"]
    median = float(np.median(fg))
    verdict("negative fail-safe", len(fg) == N_NEGATIVE and median < 0.01,
            f"median foreground {100 * median:.2f}% over {len(fg)} negative episodes, "
            f"{sum(f == 0 for f in fg)} empty")


def test_mixup_not_better_than_concat(tmp_path, verdict):
    manifest = write_suite(tmp_path / "gap", SuiteSpec(semantic_gap=0.8, dataset_id="gap"))
    concat = run_evaluation(RunConfig(method="concat", ttga=False, n_episodes=N_MIXUP), manifest)
    mixup = run_evaluation(RunConfig(method="mixup", ttga=False, n_episodes=N_MIXUP), manifest)
    a, b = 100 * concat.aggregate_miou, 100 * mixup.aggregate_miou
    verdict("mixup vs concat on large semantic gap", b <= a, f"mixup {b:.2f}, concat {a:.2f} on {N_MIXUP} episodes")


def test_cli_determinism(bench, tmp_path, verdict):
    args = ["evaluate", "--manifest", str(bench.manifest), "--method", "cav", "--n-episodes", "8",
            "--steps", "20", "--seed", "3"]
    codes = [main(args + ["--out", str(tmp_path / f"r{i}.json")]) for i in (1, 2)]
    a, b = (tmp_path / "r1.json").read_bytes(), (tmp_path / "r2.json").read_bytes()
    episodes = len(json.loads(a)["per_episode"])
    verdict("evaluate determinism", codes == [0, 0] and a == b and episodes == 8,
            f"exit codes {codes}, byte-identical={a == b}, {episodes} episodes")


@pytest.mark.skip(reason="full-scale tier needs diffusion weights, SAM2 and the chest X-ray data; see README")
def test_full_scale_chest_xray():
    pass
