"""Adapter over a pretrained latent-diffusion model (``diffusers`` + ``peft``).

Only used in full-scale runs.  The heavy dependencies are imported on first
use; without them every entry point raises :class:`BackendUnavailable`.
"""
from __future__ import annotations

import hashlib

import numpy as np

from ..core import as_image
from ..errors import BackendUnavailable
from .interp import PRESETS, AdapterDelta, DbstPreset, LatentNoise

DEFAULT_MODEL = "stable-diffusion-v1-5/stable-diffusion-v1-5"
LORA_TARGETS = ("to_q", "to_k", "to_v", "to_out.0")


def _require():
    try:
        import diffusers  # noqa: F401
        import peft  # noqa: F401
        import torch  # noqa: F401
    except ImportError as exc:
        raise BackendUnavailable(f"diffusion backend needs torch, diffusers and peft: {exc}") from exc


class DiffusionBackend:
    """LoRA fitting, DDIM inversion and LoRA-conditioned DDIM sampling.

    Adapters are the LoRA weights of the UNet attention projections, fitted
    per image with the usual noise-prediction loss.  ``invert`` runs DDIM
    inversion under the image's own adapter so the latent reconstructs that
    image.  ``denoise`` loads a (possibly interpolated) adapter and samples
    from the given latent.
    """

    def __init__(self, model_id: str = DEFAULT_MODEL, device: str = "cpu", prompt: str = ""):
        self.model_id = model_id
        self.device = device
        self.prompt = prompt
        self.preset: DbstPreset = PRESETS["standard"]
        self.seed = 0
        self._pipe = None
        self._adapters: dict = {}

    # -- plumbing ---------------------------------------------------------

    def _pipeline(self):
        _require()
        if self._pipe is None:
            import torch
            from diffusers import DDIMScheduler, StableDiffusionPipeline

            pipe = StableDiffusionPipeline.from_pretrained(self.model_id, torch_dtype=torch.float32)
            pipe.scheduler = DDIMScheduler.from_config(pipe.scheduler.config)
            pipe.set_progress_bar_config(disable=True)
            self._pipe = pipe.to(self.device)
        return self._pipe

    def _embed(self):
        pipe = self._pipeline()
        ids = pipe.tokenizer(self.prompt, padding="max_length", max_length=pipe.tokenizer.model_max_length,
                             return_tensors="pt").input_ids.to(self.device)
        return pipe.text_encoder(ids)[0]

    def _encode(self, image):
        import torch

        pipe = self._pipeline()
        x = torch.from_numpy(as_image(image).transpose(2, 0, 1)[None]).float().to(self.device) * 2 - 1
        with torch.no_grad():
            return pipe.vae.encode(x).latent_dist.mean * pipe.vae.config.scaling_factor

    def _decode(self, latent) -> np.ndarray:
        import torch

        pipe = self._pipeline()
        with torch.no_grad():
            x = pipe.vae.decode(latent / pipe.vae.config.scaling_factor).sample
        return np.clip((x[0].permute(1, 2, 0).cpu().numpy() + 1) / 2, 0.0, 1.0).astype(np.float64)

    def _lora_params(self, unet):
        return {n: p for n, p in unet.named_parameters() if "lora_" in n}

    def _attach_lora(self, rank: int):
        from peft import LoraConfig

        unet = self._pipeline().unet
        if not self._lora_params(unet):
            unet.add_adapter(LoraConfig(r=rank, lora_alpha=rank, init_lora_weights="gaussian",
                                        target_modules=list(LORA_TARGETS)))
        return unet

    def _load(self, delta: AdapterDelta):
        import torch

        unet = self._attach_lora(delta.rank)
        with torch.no_grad():
            for name, p in self._lora_params(unet).items():
                p.copy_(torch.from_numpy(delta.tensors[name]))
        return unet

    # -- backend contract -------------------------------------------------

    def prepare(self, preset: DbstPreset, seed: int = 0, prompt: str = "") -> None:
        self.preset = preset
        self.seed = int(seed)
        if prompt:
            self.prompt = prompt
        self._pipeline()

    def fit_adapter(self, image) -> AdapterDelta:
        import torch

        pipe = self._pipeline()
        unet = self._attach_lora(self.preset.lora_rank)
        gen = torch.Generator().manual_seed(self.seed)
        params = self._lora_params(unet)
        # a zero up-projection restarts every fit from the base model
        with torch.no_grad():
            for n, p in params.items():
                if "lora_B" in n:
                    p.zero_()
        opt = torch.optim.AdamW(params.values(), lr=self.preset.learning_rate)
        latent = self._encode(image)
        cond = self._embed().detach()
        n_train = pipe.scheduler.config.num_train_timesteps
        for _ in range(self.preset.lora_steps):
            noise = torch.randn(latent.shape, generator=gen)
            t = torch.randint(0, n_train, (1,), generator=gen)
            noisy = pipe.scheduler.add_noise(latent, noise, t)
            loss = torch.nn.functional.mse_loss(unet(noisy, t, cond).sample, noise)
            opt.zero_grad()
            loss.backward()
            opt.step()
        tensors = {n: p.detach().cpu().numpy().astype(np.float64) for n, p in params.items()}
        delta = AdapterDelta(tensors, rank=self.preset.lora_rank)
        self._adapters[self._key(image)] = delta
        return delta

    def invert(self, image) -> LatentNoise:
        import torch
        from diffusers import DDIMInverseScheduler

        pipe = self._pipeline()
        key = self._key(image)
        delta = self._adapters.get(key) or self.fit_adapter(image)
        unet = self._load(delta)
        inverse = DDIMInverseScheduler.from_config(pipe.scheduler.config)
        inverse.set_timesteps(self.preset.inversion_steps)
        cond = self._embed()
        z = self._encode(image)
        with torch.no_grad():
            for t in inverse.timesteps:
                z = inverse.step(unet(z, t, cond).sample, t, z).prev_sample
        return LatentNoise(z.cpu().numpy().astype(np.float64), timestep_count=self.preset.inversion_steps)

    def denoise(self, latent: LatentNoise, delta: AdapterDelta) -> np.ndarray:
        import torch

        pipe = self._pipeline()
        unet = self._load(delta)
        pipe.scheduler.set_timesteps(self.preset.n_denoise_steps)
        cond = self._embed()
        z = torch.from_numpy(np.asarray(latent.z)).float().to(self.device)
        with torch.no_grad():
            for t in pipe.scheduler.timesteps:
                z = pipe.scheduler.step(unet(z, t, cond).sample, t, z).prev_sample
        return self._decode(z)

    @staticmethod
    def _key(image) -> str:
        return hashlib.sha256(np.ascontiguousarray(as_image(image)).tobytes()).hexdigest()
