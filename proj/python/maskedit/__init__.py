# Copyright 2026 The maskedit Authors
# SPDX-License-Identifier: Apache-2.0
"""Mask-guided zero-shot real-image editing.

The numerical core is the C++ library exposed as ``maskedit._core``. The
SD-1.5 adapter lives in ``maskedit.sd15`` and needs torch and diffusers.
"""

from ._core import (
    CLEAN_TIMESTEP,
    AttentionCall,
    AttentionKind,
    AttentionLayerInfo,
    AttentionSite,
    Backend,
    BackendDescriptor,
    ForwardOptions,
    Grid,
    Image,
    LatentTensor,
    MaskEditError,
    NoiseResult,
    PromptEmbedding,
    SpatialMask,
    ToyBackend,
    __version__,
    background_lpips,
    clip_score,
    edit,
    load_mask_png,
    load_png,
    metric_methodology,
    run_cli,
    save_mask_png,
    save_png,
)

__all__ = [
    "CLEAN_TIMESTEP",
    "AttentionCall",
    "AttentionKind",
    "AttentionLayerInfo",
    "AttentionSite",
    "Backend",
    "BackendDescriptor",
    "ForwardOptions",
    "Grid",
    "Image",
    "LatentTensor",
    "MaskEditError",
    "NoiseResult",
    "PromptEmbedding",
    "SpatialMask",
    "ToyBackend",
    "__version__",
    "background_lpips",
    "clip_score",
    "edit",
    "load_mask_png",
    "load_png",
    "metric_methodology",
    "run_cli",
    "save_mask_png",
    "save_png",
]
