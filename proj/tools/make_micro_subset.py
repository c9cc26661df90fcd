# Copyright 2026 The maskedit Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the synthetic 6-sample benchmark subset in data/imba_micro."""

import json
import pathlib
import sys

import numpy as np
from PIL import Image

SIZE = 64

SAMPLES = [
    # id, task, retain, prompt, object word, shape, colour
    ("micro-001", "replace", False, "a photo of a red apple on a table", "apple", "disk", (200, 60, 40)),
    ("micro-002", "replace", False, "a photo of a blue cup on a table", "cup", "box", (40, 70, 190)),
    ("micro-003", "pose", True, "a photo of a cat lying down", "cat", "ellipse", (150, 110, 70)),
    ("micro-004", "background", True, "a dog on a beach", "beach", "disk", (90, 90, 90)),
    ("micro-005", "remove", False, "", "", "box", (30, 160, 60)),
    ("micro-006", "region", False, "a wooden texture", "wooden", "ellipse", (210, 190, 60)),
]


def shape_mask(kind, index):
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    cy, cx = 30 + 2 * index, 28 + 3 * index
    if kind == "disk":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= 13 ** 2
    if kind == "box":
        return (abs(yy - cy) <= 11) & (abs(xx - cx) <= 14)
    return ((yy - cy) / 10.0) ** 2 + ((xx - cx) / 16.0) ** 2 <= 1.0


def main(root):
    root = pathlib.Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(2026)
    records = []
    for i, (sid, task, retain, prompt, word, kind, colour) in enumerate(SAMPLES):
        yy, xx = np.mgrid[0:SIZE, 0:SIZE] / (SIZE - 1)
        base = np.stack([0.55 + 0.3 * yy, 0.6 + 0.2 * xx, 0.75 - 0.25 * yy], axis=-1) * 255
        base += rng.normal(0, 4, base.shape)
        mask = shape_mask(kind, i)
        base[mask] = np.array(colour, dtype=float) + rng.normal(0, 6, (mask.sum(), 3))
        img = np.clip(np.round(base), 0, 255).astype(np.uint8)
        Image.fromarray(img, "RGB").save(root / "images" / f"{sid}.png")
        Image.fromarray(mask.astype(np.uint8) * 255, "L").save(root / "masks" / f"{sid}.png")
        records.append({
            "id": sid,
            "image": f"images/{sid}.png",
            "source_mask": f"masks/{sid}.png",
            "target_prompt": prompt,
            "task": task,
            "retain_object": retain,
            "object_word": word,
            "notes": f"synthetic {kind} on a gradient",
        })
    counts = {
        "total": len(records),
        "retention": sum(r["retain_object"] for r in records),
        "modification": sum(r["task"] != "background" for r in records),
        "background": sum(r["task"] == "background" for r in records),
    }
    manifest = {"format": "imba-v1", "declared": counts, "samples": records}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else pathlib.Path(__file__).resolve().parent.parent / "data" / "imba_micro")
