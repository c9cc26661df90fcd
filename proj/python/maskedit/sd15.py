# Copyright 2026 The maskedit Authors
# SPDX-License-Identifier: Apache-2.0
"""Stable Diffusion 1.5 backend over diffusers.

Every attention module of the UNet gets a processor that projects q/k/v with
the module's own weights, hands the per-head matrices to the C++ attention
hook and feeds the returned per-head outputs through the module's output
projection. The attention math itself therefore runs in the C++ core.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np
import torch

from . import _core

SD15_BETA_START = 0.00085
SD15_BETA_END = 0.012
SD15_TRAIN_STEPS = 1000


def _heads(t: torch.Tensor, heads: int) -> list[np.ndarray]:
    """(1, N, C) -> per-head (N, C / heads) float64 arrays."""
    _, n, c = t.shape
    per = t[0].reshape(n, heads, c // heads).permute(1, 0, 2)
    return [np.ascontiguousarray(h) for h in per.detach().to("cpu", torch.float64).numpy()]


def _grid(tokens: int, latent_h: int, latent_w: int) -> tuple[int, int]:
    scale = math.sqrt(latent_h * latent_w / tokens)
    h, w = round(latent_h / scale), round(latent_w / scale)
    if h * w != tokens:
        raise ValueError(f"cannot map {tokens} tokens onto a grid of aspect {latent_h}:{latent_w}")
    return h, w


class _Forward:
    """State of one UNet forward pass."""

    def __init__(self, options, extras, latent_hw):
        self.options = options
        self.extras = extras
        self.latent_hw = latent_hw
        self.counts = {_core.AttentionKind.SELF: 0, _core.AttentionKind.CROSS: 0}
        self.visited = []


class _Probe:
    def __init__(self, latent_hw):
        self.latent_hw = latent_hw
        self.sites = []


class _HookedAttnProcessor:
    def __init__(self, owner: "SD15Backend"):
        self.owner = owner

    def __call__(self, attn, hidden_states, encoder_hidden_states=None, attention_mask=None, temb=None, *args, **kwargs):
        state = self.owner._state
        if attention_mask is not None:
            raise ValueError("attention masks are not supported by the hooked processor")
        residual = hidden_states
        if attn.spatial_norm is not None:
            hidden_states = attn.spatial_norm(hidden_states, temb)
        input_ndim = hidden_states.ndim
        if input_ndim == 4:
            b, c, h, w = hidden_states.shape
            hidden_states = hidden_states.view(b, c, h * w).transpose(1, 2)
        if attn.group_norm is not None:
            hidden_states = attn.group_norm(hidden_states.transpose(1, 2)).transpose(1, 2)

        cross = encoder_hidden_states is not None
        context = encoder_hidden_states if cross else hidden_states
        if cross and attn.norm_cross:
            context = attn.norm_encoder_hidden_states(context)
        q = attn.to_q(hidden_states)
        k = attn.to_k(context)
        v = attn.to_v(context)
        heads = attn.heads
        kind = _core.AttentionKind.CROSS if cross else _core.AttentionKind.SELF
        tokens, dim = q.shape[1], q.shape[2]
        grid = _grid(tokens, *state.latent_hw)

        if isinstance(state, _Probe):
            state.sites.append((kind, grid, heads, dim // heads))
            out = torch.nn.functional.scaled_dot_product_attention(
                q.view(1, tokens, heads, -1).transpose(1, 2),
                k.view(1, k.shape[1], heads, -1).transpose(1, 2),
                v.view(1, v.shape[1], heads, -1).transpose(1, 2),
            )
            out = out.transpose(1, 2).reshape(1, tokens, dim)
        else:
            layer = state.counts[kind]
            state.counts[kind] += 1
            site = _core.AttentionSite(state.options.step_index, layer, kind, _core.Grid(*grid))
            k_extra, v_extra = [], []
            if cross:
                for e in state.extras:
                    k_extra.append(_heads(attn.to_k(e), heads))
                    v_extra.append(_heads(attn.to_v(e), heads))
            call = _core.AttentionCall(site, _heads(q, heads), _heads(k, heads), _heads(v, heads), k_extra, v_extra)
            per_head = state.options.run_site(call)
            stacked = torch.from_numpy(np.stack(per_head))  # heads x N x dh
            out = stacked.permute(1, 0, 2).reshape(1, tokens, dim).to(q.device, q.dtype)
            state.visited.append(site)

        out = attn.to_out[0](out)
        out = attn.to_out[1](out)
        if input_ndim == 4:
            out = out.transpose(-1, -2).reshape(b, c, h, w)
        if attn.residual_connection:
            out = out + residual
        return out / attn.rescale_output_factor


class SD15Backend(_core.Backend):
    """Latent diffusion backend built from diffusers components.

    ``tokenizer`` needs the Hugging Face call convention: ``tokenizer(text,
    padding=..., max_length=..., truncation=...)`` returning ``input_ids``,
    plus ``model_max_length`` and ``convert_ids_to_tokens``.
    """

    def __init__(self, unet, vae, text_encoder, tokenizer, *, image_size=512, device="cpu", dtype=torch.float32,
                 name="sd15", fingerprint_extra=""):
        super().__init__()
        self.unet = unet.to(device, dtype).eval()
        self.vae = vae.to(device, dtype).eval()
        self.text_encoder = text_encoder.to(device).eval()
        self.tokenizer = tokenizer
        self.device = torch.device(device)
        self.dtype = dtype
        self.image_size = image_size
        self.scaling = float(getattr(vae.config, "scaling_factor", 0.18215))
        factor = 2 ** (len(vae.config.block_out_channels) - 1)
        if image_size % factor:
            raise ValueError(f"image_size must be a multiple of {factor}")
        self.latent_hw = (image_size // factor, image_size // factor)
        self._state = None
        self.unet.set_attn_processor(_HookedAttnProcessor(self))
        self._descriptor = self._build_descriptor(name, fingerprint_extra)

    @classmethod
    def from_pretrained(cls, path: str, *, device: str | None = None, dtype=None, image_size=512):
        from diffusers import StableDiffusionPipeline

        device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        dtype = dtype or (torch.float16 if device.startswith("cuda") else torch.float32)
        pipe = StableDiffusionPipeline.from_pretrained(path, torch_dtype=dtype, safety_checker=None)
        sched = pipe.scheduler.config
        if (sched.get("beta_schedule") != "scaled_linear" or abs(sched.get("beta_start") - SD15_BETA_START) > 1e-12
                or abs(sched.get("beta_end") - SD15_BETA_END) > 1e-12
                or sched.get("num_train_timesteps") != SD15_TRAIN_STEPS):
            raise ValueError("checkpoint noise schedule differs from the scaled-linear 0.00085..0.012 schedule")
        return cls(pipe.unet, pipe.vae, pipe.text_encoder, pipe.tokenizer, image_size=image_size, device=device,
                   dtype=dtype, name="sd15", fingerprint_extra=str(path))

    # Backend interface

    def descriptor(self):
        return self._descriptor

    def encode_text(self, prompt, object_word=""):
        max_len = self.tokenizer.model_max_length
        ids = list(self.tokenizer(prompt, padding="max_length", max_length=max_len, truncation=True).input_ids)
        truncated = len(self.tokenizer(prompt).input_ids) > max_len
        with torch.no_grad():
            emb = self.text_encoder(torch.tensor([ids], device=self.device))[0][0]
        positions = []
        if object_word:
            needle = list(self.tokenizer(object_word, add_special_tokens=False).input_ids)
            for start in range(1, len(ids) - len(needle) + 1):
                if needle and ids[start:start + len(needle)] == needle:
                    positions.extend(range(start, start + len(needle)))
        texts = [str(t) for t in self.tokenizer.convert_ids_to_tokens(ids)]
        matrix = emb.detach().to("cpu", torch.float64).numpy()
        return _core.PromptEmbedding(matrix, texts, sorted(set(positions)), truncated)

    def encode_image(self, image):
        x = torch.from_numpy(image.numpy()).permute(2, 0, 1)[None].to(self.device, self.dtype) * 2.0 - 1.0
        with torch.no_grad():
            z = self.vae.encode(x).latent_dist.mean * self.scaling
        return _core.LatentTensor(z.detach().to("cpu", torch.float64).numpy())

    def decode_latent(self, latent):
        z = torch.from_numpy(latent.numpy()).to(self.device, self.dtype) / self.scaling
        with torch.no_grad():
            x = self.vae.decode(z).sample
        x = ((x[0].permute(1, 2, 0).to("cpu", torch.float64) + 1.0) / 2.0).clamp(0.0, 1.0)
        return _core.Image(np.ascontiguousarray(x.numpy()))

    def _predict_noise(self, z, timestep, cond, options):
        latent = torch.from_numpy(z.numpy()).to(self.device, self.dtype)
        context = torch.from_numpy(cond.token_embeddings)[None].to(self.device, self.dtype)
        extras = [torch.from_numpy(e.token_embeddings)[None].to(self.device, self.dtype) for e in options.extra_conds]
        self._state = _Forward(options, extras, self.latent_hw)
        try:
            with torch.no_grad():
                eps = self.unet(latent, timestep, encoder_hidden_states=context).sample
            visited = self._state.visited
        finally:
            self._state = None
        return _core.NoiseResult(_core.LatentTensor(eps.detach().to("cpu", torch.float64).numpy(), timestep), visited)

    # Internals

    def _build_descriptor(self, name, fingerprint_extra):
        probe = _Probe(self.latent_hw)
        self._state = probe
        try:
            with torch.no_grad():
                null = self.text_encoder(torch.tensor([[0]], device=self.device))[0].to(self.dtype)
                z = torch.zeros(1, self.unet.config.in_channels, *self.latent_hw, device=self.device, dtype=self.dtype)
                self.unet(z, 1, encoder_hidden_states=null)
        finally:
            self._state = None
        counts = {_core.AttentionKind.SELF: 0, _core.AttentionKind.CROSS: 0}
        sites = []
        for kind, grid, heads, head_dim in probe.sites:
            sites.append(_core.AttentionLayerInfo(kind, counts[kind], _core.Grid(*grid), heads, head_dim))
            counts[kind] += 1
        digest = hashlib.sha256()
        for module in (self.unet, self.vae, self.text_encoder):
            config = module.config.to_dict() if hasattr(module.config, "to_dict") else dict(module.config)
            digest.update(json.dumps(config, sort_keys=True, default=str).encode())
            for p in list(module.parameters())[:8]:
                digest.update(p.detach().to("cpu", torch.float64).numpy().tobytes()[:4096])
        digest.update(fingerprint_extra.encode())
        latent_shape = [1, self.unet.config.in_channels, *self.latent_hw]
        return _core.BackendDescriptor(name, latent_shape, self.image_size, self.image_size, sites,
                                       f"{name}:{digest.hexdigest()[:16]}")
