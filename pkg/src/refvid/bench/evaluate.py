"""End-to-end evaluation: build a sequence, optionally adapt and prompt, track, score."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..baselines import affine_sequence, concat_sequence, mixup_sequence
from ..core import EvaluationReport, Episode, aggregate_miou, iou
from ..dbst import PRESETS, SequenceCache, SyntheticMorphBackend, generate_sequence, make_alpha_schedule
from ..errors import ConfigError, RefVidError
from ..ivos import TRACKERS, TrackerSession, make_tracker
from ..ttga import GateConfig, TTGAConfig, finetune, make_prompts, medoid_reference
from ..ttga.extractor import ToyExtractor
from .manifest import DatasetManifest, plan_episodes

log = logging.getLogger(__name__)

METHODS = ("cav", "concat", "mixup", "affine")
BACKENDS = ("synthetic", "diffusion")
EXTRACTORS = ("toy",)
FAILURE_LIMIT = 0.05


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run's numbers.

    ``ttga`` adapts the prototype and prompts the first half of the frames;
    without it only frame 0 is prompted.  For ``concat`` there are no
    intermediate frames, so ``ttga`` has no effect there.
    """

    method: str = "cav"
    shots: int = 1
    tracker: str = "mock"
    backend: str = "synthetic"
    extractor: str = "toy"
    preset: str = "fast"
    alpha_lo: float = 0.2
    alpha_hi: float = 0.8
    n_frames: int = 9
    ttga: bool = True
    strategy: str = "acc"
    steps: int = 100
    lr: float = 1e-3
    temperature: float = 1.0
    gate_min_fg: float = 0.001
    gate_max_fg: float = 0.95
    prompt_intermediate: bool = False
    n_episodes: int = 1200
    negative: bool = False
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.method in METHODS, f"method must be one of {METHODS}"),
            (self.tracker in TRACKERS, f"tracker must be one of {TRACKERS}"),
            (self.backend in BACKENDS, f"backend must be one of {BACKENDS}"),
            (self.extractor in EXTRACTORS, f"extractor must be one of {EXTRACTORS}"),
            (self.preset in PRESETS, f"preset must be one of {sorted(PRESETS)}"),
            (self.strategy in ("acc", "abc"), "strategy must be 'acc' or 'abc'"),
            (self.shots >= 1, "shots must be >= 1"),
            (self.n_frames >= 1, "n_frames must be >= 1"),
            (self.n_episodes >= 0, "n_episodes must be >= 0"),
            (self.steps >= 0, "steps must be >= 0"),
            (0.0 < self.alpha_lo <= self.alpha_hi < 1.0, "need 0 < alpha_lo <= alpha_hi < 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        values = {}
        for k, v in d.items():
            want = type(known[k].default)
            if want is bool and not isinstance(v, bool):
                raise ConfigError(f"config key {k!r} must be a boolean")
            if want is float and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if not isinstance(v, want) or (want is int and isinstance(v, bool)):
                raise ConfigError(f"config key {k!r} must be {want.__name__}, got {v!r}")
            values[k] = v
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def ttga_config(self, seed: int) -> TTGAConfig:
        return TTGAConfig(steps=self.steps, lr=self.lr, temperature=self.temperature, seed=seed)

    def gate(self) -> GateConfig:
        return GateConfig(self.gate_min_fg, self.gate_max_fg)


@dataclass
class Toolkit:
    """Per-worker instances of the backend, extractor and tracker."""

    backend: object
    extractor: object
    tracker: object
    cache: Optional[SequenceCache] = None

    @classmethod
    def build(cls, cfg: RunConfig, cache_dir=None) -> "Toolkit":
        if cfg.backend == "synthetic":
            backend = SyntheticMorphBackend(preset=PRESETS[cfg.preset])
        else:
            from ..dbst.diffusion import DiffusionBackend

            backend = DiffusionBackend()
        extractor = ToyExtractor(seed=cfg.seed)
        cache = SequenceCache(cache_dir) if cache_dir else None
        return cls(backend, extractor, make_tracker(cfg.tracker), cache)


@dataclass
class EpisodeOutcome:
    episode_id: str
    class_id: str
    iou: float
    fg_fraction: float
    sequence: object = None
    track: object = None
    events: list = field(default_factory=list)


def episode_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def build_sequence(cfg: RunConfig, episode: Episode, tools: Toolkit, seed: int, events=None):
    """Method-dependent pseudo video with prompts attached."""
    ref_idx = medoid_reference(tools.extractor, episode.references) if episode.shots > 1 else 0
    ref, mask = episode.references[ref_idx]
    tgt = episode.target
    schedule = make_alpha_schedule(cfg.n_frames, cfg.alpha_lo, cfg.alpha_hi)
    if cfg.method == "concat":
        seq = concat_sequence(ref, tgt, mask)
    elif cfg.method == "mixup":
        seq = mixup_sequence(ref, tgt, schedule, mask)
    elif cfg.method == "affine":
        seq = affine_sequence(ref, mask, tgt, cfg.n_frames, seed, prompt_intermediate=cfg.prompt_intermediate)
    else:
        seq = generate_sequence(ref, tgt, schedule, tools.backend, preset=cfg.preset, seed=seed, cache=tools.cache)
        seq = seq.with_prompts([mask] + [None] * (len(seq) - 1))
    if cfg.ttga and cfg.method == "cav":
        result = finetune(episode, tools.extractor, cfg.ttga_config(seed), cfg.strategy)
        seq = make_prompts(seq, episode, result.extractor, result.prototype, cfg.gate(),
                           reference_index=ref_idx, events=events)
    return seq


def run_episode(cfg: RunConfig, episode: Episode, tools: Toolkit, seed: int) -> EpisodeOutcome:
    events: list = []
    seq = build_sequence(cfg, episode, tools, seed, events)
    track = tools.tracker.propagate(TrackerSession.from_sequence(seq))
    pred = track.target_mask
    gt = episode.target_gt if episode.target_gt is not None else np.zeros_like(pred)
    return EpisodeOutcome(episode.episode_id, str(episode.class_id), iou(pred, gt), float(pred.mean()),
                          seq, track, events)


def read_journal(path, fingerprint: str) -> dict:
    """Completed records from a journal, keyed by episode id."""
    path = Path(path)
    done = {}
    if not path.exists():
        return done
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except ValueError:
            # a run killed mid-write leaves at most one torn trailing line
            log.warning("ignoring unreadable journal line %d", n)
            continue
        if rec.get("config_fingerprint") != fingerprint:
            raise ConfigError(f"journal {path} belongs to a different configuration")
        done[rec["episode_id"]] = rec
    return done


def report_from_records(records, fingerprint: str) -> EvaluationReport:
    ok = [(r["episode_id"], r["class_id"], r["iou"]) for r in records if r["status"] == "ok"]
    failures = sorted(({"episode_id": r["episode_id"], "error": r["error"]}
                       for r in records if r["status"] != "ok"), key=lambda f: f["episode_id"])
    if ok:
        report = aggregate_miou(ok, fingerprint)
    else:
        report = EvaluationReport([], {}, float("nan"), fingerprint)
    report.failures = failures
    return report


def failure_rate(report: EvaluationReport) -> float:
    total = len(report.per_episode) + len(report.failures)
    return len(report.failures) / total if total else 0.0


def _evaluate_one(args):
    cfg, manifest, plan, index, cache_dir = args
    tools = _worker_tools(cfg, cache_dir)
    return _record(cfg, manifest, plan, tools, index)


_WORKER: dict = {}


def _worker_tools(cfg, cache_dir):
    key = (cfg.fingerprint(), str(cache_dir))
    if key not in _WORKER:
        _WORKER.clear()
        _WORKER[key] = Toolkit.build(cfg, cache_dir)
    return _WORKER[key]


def _record(cfg, manifest, plan, tools, index) -> dict:
    rec = {"episode_id": plan.episode_id, "class_id": str(plan.class_id),
           "config_fingerprint": cfg.fingerprint()}
    t0 = time.perf_counter()
    try:
        episode = plan if isinstance(plan, Episode) else plan.materialize(manifest)
        out = run_episode(cfg, episode, tools, episode_seed(cfg.seed, index))
    except RefVidError as exc:
        rec.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        log.warning("episode %s failed: %s", plan.episode_id, exc)
    else:
        rec.update(status="ok", iou=out.iou, fg_fraction=out.fg_fraction)
    rec["seconds"] = round(time.perf_counter() - t0, 3)
    return rec


def run_evaluation(cfg: RunConfig, manifest, workers: int = 1, journal=None, cache_dir=None,
                   episodes: Optional[list] = None) -> EvaluationReport:
    """Evaluate ``cfg`` on ``cfg.n_episodes`` sampled episodes.

    ``episodes`` overrides sampling with explicit :class:`EpisodePlan` or
    :class:`Episode` objects.  With ``journal`` every finished episode is
    appended as one JSON line and episodes already present are skipped, so an
    interrupted run resumes where it stopped.  The report depends only on the
    records, never on timing or worker count.
    """
    if manifest is not None and not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.load(manifest)
    if episodes is None:
        episodes = plan_episodes(manifest, cfg.shots, cfg.n_episodes, cfg.seed, negative=cfg.negative)
    fp = cfg.fingerprint()
    done = read_journal(journal, fp) if journal else {}
    todo = [(i, ep) for i, ep in enumerate(episodes) if ep.episode_id not in done]
    records = [done[ep.episode_id] for ep in episodes if ep.episode_id in done]

    if journal:
        _drop_torn_tail(journal)
    fh = open(journal, "a") if journal else None
    try:
        if workers > 1 and len(todo) > 1:
            import multiprocessing as mp

            with mp.get_context("spawn").Pool(workers) as pool:
                jobs = [(cfg, manifest, ep, i, cache_dir) for i, ep in todo]
                for rec in pool.imap_unordered(_evaluate_one, jobs):
                    records.append(rec)
                    _append(fh, rec)
        else:
            tools = Toolkit.build(cfg, cache_dir)
            for i, ep in todo:
                rec = _record(cfg, manifest, ep, tools, i)
                records.append(rec)
                _append(fh, rec)
    finally:
        if fh is not None:
            fh.close()

    report = report_from_records(records, fp)
    rate = failure_rate(report)
    if rate > FAILURE_LIMIT:
        log.error("failure rate %.1f%% exceeds %.0f%%", 100 * rate, 100 * FAILURE_LIMIT)
    return report


def _drop_torn_tail(path) -> None:
    """Cut a partial last line so new records start on a fresh line."""
    path = Path(path)
    if not path.exists():
        return
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        with open(path, "r+b") as fh:
            fh.truncate(data.rfind(b"\n") + 1)


def _append(fh, rec):
    if fh is not None:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()
