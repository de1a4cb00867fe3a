"""Adapter over the SAM2 video predictor (tiny variant by default)."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ..errors import BackendUnavailable, TrackerError
from .tracker import TrackerSession, TrackResult

DEFAULT_CONFIG = "configs/sam2.1/sam2.1_hiera_t.yaml"


class Sam2Tracker:
    """Mask prompts in, per-frame masks out.

    Frames are written to a temporary JPEG folder because the predictor reads
    videos from disk.  Propagation runs forward from the earliest prompt and
    then backward, so frames before it are covered too.
    """

    def __init__(self, checkpoint: Optional[str] = None, config: str = DEFAULT_CONFIG, device: str = "cpu"):
        try:
            from sam2.build_sam import build_sam2_video_predictor
        except ImportError as exc:
            raise BackendUnavailable(f"sam2-tiny tracker needs the sam2 package: {exc}") from exc
        checkpoint = checkpoint or os.environ.get("REFVID_SAM2_CHECKPOINT")
        if not checkpoint:
            raise BackendUnavailable("sam2-tiny tracker needs a checkpoint (argument or REFVID_SAM2_CHECKPOINT)")
        self.predictor = build_sam2_video_predictor(config, checkpoint, device=device)

    def propagate(self, session: TrackerSession) -> TrackResult:
        import torch

        n = len(session.frames)
        out = [None] * n
        with tempfile.TemporaryDirectory() as tmp:
            for i, frame in enumerate(session.frames):
                rgb = frame if frame.shape[2] == 3 else np.repeat(frame, 3, axis=2)
                Image.fromarray(np.rint(rgb * 255).astype(np.uint8)).save(Path(tmp) / f"{i:05d}.jpg", quality=95)
            try:
                with torch.inference_mode():
                    state = self.predictor.init_state(video_path=tmp)
                    for i, p in enumerate(session.prompts):
                        if p is not None:
                            self.predictor.add_new_mask(state, frame_idx=i, obj_id=1, mask=p.astype(bool))
                    for reverse in (False, True):
                        for idx, _, logits in self.predictor.propagate_in_video(state, reverse=reverse):
                            if out[idx] is None:
                                out[idx] = (logits[0, 0] > 0).cpu().numpy().astype(np.uint8)
            except Exception as exc:  # the predictor's failure modes are not part of its API
                raise TrackerError(f"sam2 propagation failed: {exc}") from exc
        shape = session.frames[0].shape[:2]
        masks = [m if m is not None else np.zeros(shape, np.uint8) for m in out]
        return TrackResult(masks, [None] * n)
