# Copyright 2026 The maskedit Authors
# SPDX-License-Identifier: Apache-2.0
"""Writes metric fixtures under tests/fixtures with independently computed values.

clip_pair.json        image/text embeddings and 100 * max(0, cos)
lpips_pair.json       expected masked proxy-perceptual distance for
                      micro-001 against lpips_edited.png
"""

import json
import pathlib

import numpy as np
from PIL import Image

ROOT = pathlib.Path(__file__).resolve().parents[1]
FIX = ROOT / "tests" / "fixtures"
DILATION = 8


def clip_fixture() -> None:
    rng = np.random.default_rng(20260101)
    text = rng.normal(size=512)
    image = 0.3 * text + rng.normal(size=512)
    cos = float(image @ text / (np.linalg.norm(image) * np.linalg.norm(text)))
    body = {"image_embedding": image.tolist(), "text_embedding": text.tolist(),
            "prompt": "a photo of a red apple on a table", "clip_score": 100.0 * max(0.0, cos)}
    (FIX / "clip_pair.json").write_text(json.dumps(body) + "\n")


def dilate(mask: np.ndarray, r: int) -> np.ndarray:
    h, w = mask.shape
    out = np.zeros_like(mask)
    ys, xs = np.nonzero(mask)
    yy, xx = np.mgrid[0:h, 0:w]
    for y, x in zip(ys, xs):
        out |= (yy - y) ** 2 + (xx - x) ** 2 <= r * r
    return out


def pyramid_mse(a: np.ndarray, b: np.ndarray) -> float:
    total, levels = 0.0, 0
    for _ in range(3):
        total += float(np.mean((a - b) ** 2))
        levels += 1
        if a.shape[0] < 2 or a.shape[1] < 2:
            break
        h, w = a.shape[0] // 2 * 2, a.shape[1] // 2 * 2
        a = a[:h, :w].reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3))
        b = b[:h, :w].reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3))
    return total / levels


def lpips_fixture() -> None:
    micro = ROOT / "data" / "imba_micro"
    original = np.asarray(Image.open(micro / "images" / "micro-001.png").convert("RGB"), dtype=np.uint8)
    mask = np.asarray(Image.open(micro / "masks" / "micro-001.png").convert("L")) > 0
    rng = np.random.default_rng(7)
    edited = original.astype(int)
    edited[:, :20] += 25
    edited += rng.integers(-12, 13, size=edited.shape)
    edited = np.clip(edited, 0, 255).astype(np.uint8)
    Image.fromarray(edited).save(FIX / "lpips_edited.png")

    region = dilate(mask, DILATION)
    a = original.astype(float) / 255.0
    b = edited.astype(float) / 255.0
    a[region] = 0.0
    b[region] = 0.0
    body = {"original": "data/imba_micro/images/micro-001.png", "edited": "tests/fixtures/lpips_edited.png",
            "mask": "data/imba_micro/masks/micro-001.png", "dilation_px": DILATION,
            "proxy_distance": pyramid_mse(a, b)}
    (FIX / "lpips_pair.json").write_text(json.dumps(body, indent=1) + "\n")


if __name__ == "__main__":
    FIX.mkdir(parents=True, exist_ok=True)
    clip_fixture()
    lpips_fixture()
