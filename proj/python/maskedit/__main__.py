# Copyright 2026 The maskedit Authors
# SPDX-License-Identifier: Apache-2.0
"""Command line entry point.

``python -m maskedit edit --backend sd15 --weights DIR ...`` runs an edit on
Stable Diffusion 1.5. ``python -m maskedit gpu-smoke --weights DIR`` runs the
GPU acceptance tier on the micro subset. Everything else is forwarded to the
native CLI, which runs the toy backend.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import _core

REFERENCE_CLIP = 29.26
REFERENCE_LPIPS = 0.149


def _resize(array: np.ndarray, size: int, nearest: bool) -> np.ndarray:
    import torch

    t = torch.from_numpy(np.ascontiguousarray(array, dtype=np.float64))
    t = t[None, None] if t.ndim == 2 else t.permute(2, 0, 1)[None]
    if nearest:
        out = torch.nn.functional.interpolate(t, size=(size, size), mode="nearest")
    else:
        out = torch.nn.functional.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    out = out[0, 0] if array.ndim == 2 else out[0].permute(1, 2, 0)
    return np.ascontiguousarray(out.numpy())


def _fit(image: _core.Image, mask: _core.SpatialMask, size: int):
    im, mk = image.numpy(), mask.numpy()
    if im.shape[:2] != (size, size):
        im = _resize(im, size, nearest=False)
    if mk.shape != (size, size):
        mk = (_resize(mk, size, nearest=True) >= 0.5).astype(np.float64)
    return _core.Image(im), _core.SpatialMask(mk)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def _load_sd15(weights: str, device: str | None):
    from .sd15 import SD15Backend

    return SD15Backend.from_pretrained(weights, device=device)


def _cmd_edit(argv: list[str]) -> int:
    p = argparse.ArgumentParser(prog="python -m maskedit edit")
    p.add_argument("--backend", choices=["toy", "sd15"], default="toy")
    p.add_argument("--weights")
    p.add_argument("--device")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="edit-options JSON file; flags override it")
    p.add_argument("--task")
    p.add_argument("--prompt")
    p.add_argument("--object-word")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--guidance", type=float)
    args, rest = p.parse_known_args(argv)
    if args.backend == "toy":
        code, out, err = _core.run_cli(["edit", *argv_without(argv, ["--backend", "--weights", "--device"])])
        sys.stdout.write(out)
        sys.stderr.write(err)
        return code
    if rest:
        p.error(f"unrecognized arguments: {' '.join(rest)}")
    if not args.weights:
        p.error("--weights is required for --backend sd15")
    options = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("task", "prompt", "object_word", "steps", "seed", "guidance"):
        value = getattr(args, key)
        if value is not None:
            options[key] = value
    try:
        backend = _load_sd15(args.weights, args.device)
        size = backend.descriptor().image_height
        image, mask = _fit(_core.load_png(args.image), _core.load_mask_png(args.mask), size)
        _core.edit(backend, image, mask, options, image_ref=args.image,
                   progress=lambda k, n: print(f"step {k}/{n}", file=sys.stderr), out=args.out)
    except _core.MaskEditError as e:
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return 2 if e.code in {"invalid-request", "invalid-mask", "empty-mask", "load", "policy"} else 3
    print(f"wrote {args.out}")
    return 0


def argv_without(argv: list[str], flags: list[str]) -> list[str]:
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        name = a.split("=", 1)[0]
        if name in flags:
            skip = "=" not in a
            continue
        out.append(a)
    return out


def _load_micro(dataset: Path):
    manifest = json.loads((dataset / "manifest.json").read_text())
    return manifest["samples"]


def _cmd_gpu_smoke(argv: list[str]) -> int:
    p = argparse.ArgumentParser(prog="python -m maskedit gpu-smoke")
    p.add_argument("--weights", help="Stable Diffusion 1.5 diffusers directory")
    p.add_argument("--dataset", default=os.environ.get("MASKEDIT_MICRO", "data/imba_micro"))
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--clip-endpoint")
    p.add_argument("--lpips-endpoint")
    args = p.parse_args(argv)
    names = ("gpu-reconstruction-psnr", "gpu-background-lpips", "gpu-clip-score")

    try:
        import torch
        has_cuda = torch.cuda.is_available()
    except ImportError:
        has_cuda = False
    reason = None
    if not args.weights or not Path(args.weights).is_dir():
        reason = "no SD-1.5 weights directory given (--weights DIR)"
    elif not has_cuda:
        reason = "no CUDA device"
    if reason:
        for n in names:
            print(f"SKIP {n}: {reason}")
        return 0

    started = time.monotonic()
    backend = _load_sd15(args.weights, "cuda")
    size = backend.descriptor().image_height
    dataset = Path(args.dataset)
    rows = []
    for s in _load_micro(dataset):
        image, mask = _fit(_core.load_png(str(dataset / s["image"])), _core.load_mask_png(str(dataset / s["source_mask"])),
                           size)
        base = {"task": s["task"], "object_word": s.get("object_word", ""), "steps": args.steps,
                "schedule": {"retain_object": bool(s.get("retain_object", False))}}
        control = _core.edit(backend, image, mask, {**base, "prompt": "", "no_edit_control": True})["image"]
        edited = _core.edit(backend, image, mask, {**base, "prompt": s["target_prompt"]})["image"]
        plain = _core.edit(backend, image, mask, {**base, "prompt": s["target_prompt"],
                                                  "controllers": {"preservation": False, "localization": False}})["image"]
        prompt = s["target_prompt"]
        row = {
            "id": s["id"],
            "psnr": psnr(control.numpy(), image.numpy()),
            "lpips_cpam": _core.background_lpips(image, edited, mask, args.lpips_endpoint),
            "lpips_off": _core.background_lpips(image, plain, mask, args.lpips_endpoint),
            "clip_cpam": _core.clip_score(edited, prompt, args.clip_endpoint) if prompt else None,
            "clip_control": _core.clip_score(control, prompt, args.clip_endpoint) if prompt else None,
        }
        rows.append(row)
        print(f"{s['id']}: psnr {row['psnr']:.2f} dB, lpips cpam {row['lpips_cpam']:.4f} "
              f"off {row['lpips_off']:.4f}", flush=True)
    elapsed = time.monotonic() - started

    worst = min(r["psnr"] for r in rows)
    lpips_bad = [r["id"] for r in rows if r["lpips_cpam"] > r["lpips_off"]]
    scored = [r for r in rows if r["clip_cpam"] is not None]
    clip_cpam = float(np.mean([r["clip_cpam"] for r in scored])) if scored else math.nan
    clip_control = float(np.mean([r["clip_control"] for r in scored])) if scored else math.nan
    mean_lpips = float(np.mean([r["lpips_cpam"] for r in rows]))
    ok = [worst >= 25.0, not lpips_bad, bool(scored) and clip_cpam >= clip_control]
    details = [
        f"min no-edit reconstruction PSNR {worst:.2f} dB (>= 25)",
        "CPAM background LPIPS <= controllers-off on every sample" if not lpips_bad
        else f"CPAM background LPIPS above controllers-off on {', '.join(lpips_bad)}",
        f"mean CLIPScore CPAM {clip_cpam:.3f} vs no-edit {clip_control:.3f}",
    ]
    for n, good, d in zip(names, ok, details):
        print(f"{'PASS' if good else 'FAIL'} {n}: {d}")
    print(f"reference means (not gated): CLIPScore {REFERENCE_CLIP}, background LPIPS {REFERENCE_LPIPS}; "
          f"this run: CLIPScore {clip_cpam:.3f}, background LPIPS {mean_lpips:.4f}")
    print(f"metrics: {_core.metric_methodology(args.clip_endpoint, args.lpips_endpoint)}")
    print(f"runtime {elapsed:.1f} s (budget 900 s)")
    return 0 if all(ok) else 1


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "edit":
        return _cmd_edit(argv[1:])
    if argv and argv[0] == "gpu-smoke":
        return _cmd_gpu_smoke(argv[1:])
    code, out, err = _core.run_cli(argv)
    sys.stdout.write(out)
    sys.stderr.write(err)
    return code


if __name__ == "__main__":
    sys.exit(main())
