"""Dataset manifests and episode sampling."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from ..core import DEFAULT_RESOLUTION, Episode, read_image, read_mask
from ..errors import ManifestError


@dataclass
class ManifestEntry:
    image: Path
    mask: Path
    class_id: str


@dataclass
class DatasetManifest:
    """Image/mask pairs with class labels.

    On disk this is one JSON document::

        {"dataset_id": "...", "resolution": [H, W],
         "entries": [{"image": "rel/path.png", "mask": "rel/path.png", "class": "label"}, ...]}

    Paths are relative to the manifest's directory.  Every image is resized to
    ``resolution`` on load.
    """

    dataset_id: str
    entries: List[ManifestEntry]
    resolution: tuple = DEFAULT_RESOLUTION
    root: Path = field(default_factory=Path)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
        root = path.parent
        try:
            entries = [ManifestEntry(root / e["image"], root / e["mask"], str(e["class"])) for e in doc["entries"]]
            dataset_id = str(doc["dataset_id"])
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"manifest {path} is missing field {exc}") from exc
        missing = [str(p) for e in entries for p in (e.image, e.mask) if not p.exists()]
        if missing:
            raise ManifestError(f"manifest {path} references missing files: {missing[:3]}")
        resolution = tuple(doc.get("resolution", DEFAULT_RESOLUTION))
        return cls(dataset_id, entries, resolution, root)

    def classes(self) -> dict:
        out: dict = {}
        for i, e in enumerate(self.entries):
            out.setdefault(e.class_id, []).append(i)
        return dict(sorted(out.items()))

    def load_pair(self, index: int):
        e = self.entries[index]
        return read_image(e.image, self.resolution), read_mask(e.mask, self.resolution)


def _ordered_combos(members, k, rng):
    """Shuffled ``(references, target)`` index combinations, without repeats."""
    combos = [(refs, t) for t in members for refs in itertools.combinations([m for m in members if m != t], k)]
    order = rng.permutation(len(combos))
    return [combos[i] for i in order]


@dataclass(frozen=True)
class EpisodePlan:
    """Indices into a manifest describing one episode, cheap to hold in bulk."""

    episode_id: str
    class_id: str
    references: tuple
    target: int
    negative: bool = False

    def materialize(self, manifest: DatasetManifest) -> Episode:
        references = [manifest.load_pair(r) for r in self.references]
        tgt_img, tgt_mask = manifest.load_pair(self.target)
        if self.negative:
            tgt_mask = np.zeros_like(tgt_mask)
        return Episode(references=references, target=tgt_img, target_gt=tgt_mask, class_id=self.class_id,
                       dataset_id=manifest.dataset_id, episode_id=self.episode_id)


def plan_episodes(manifest: DatasetManifest, shots: int, n_episodes: int, seed: int = 0,
                  negative: bool = False) -> List[EpisodePlan]:
    """Deterministic, class-balanced episode plans.

    Episode ``i`` draws from class ``i mod n_classes`` (classes in sorted
    order).  Within a class, ``(references, target)`` combinations are dealt
    without replacement and reshuffled once exhausted; the target is never one
    of the references.  With ``negative`` the target comes from a different
    class and its ground truth is an empty mask.
    """
    if shots < 1 or n_episodes < 0:
        raise ManifestError("shots must be >= 1 and n_episodes >= 0")
    classes = manifest.classes()
    small = [c for c, members in classes.items() if len(members) < shots + 1]
    if small:
        raise ManifestError(f"classes {small} have fewer than {shots + 1} samples")
    if negative and len(classes) < 2:
        raise ManifestError("negative episodes need at least two classes")
    rng = np.random.default_rng(seed)
    names = list(classes)
    decks: dict = {c: [] for c in names}
    plans = []
    for i in range(n_episodes):
        c = names[i % len(names)]
        if not decks[c]:
            decks[c] = _ordered_combos(classes[c], shots, rng)
        refs, target = decks[c].pop()
        if negative:
            others = [j for o in names if o != c for j in classes[o]]
            target = others[int(rng.integers(len(others)))]
        plans.append(EpisodePlan(f"{manifest.dataset_id}-{i:05d}", c, tuple(int(r) for r in refs),
                                 int(target), negative))
    return plans


def sample_episodes(manifest: DatasetManifest, shots: int, n_episodes: int, seed: int = 0,
                    negative: bool = False) -> List[Episode]:
    """Materialised episodes of :func:`plan_episodes`."""
    return [p.materialize(manifest) for p in plan_episodes(manifest, shots, n_episodes, seed, negative)]
