#!/usr/bin/env python3
"""Build tiny randomly initialised open_clip models and record their outputs.

The models use the published architecture code (open_clip), a small
byte-pair vocabulary and random weights, so the resulting fixtures check the
Rust encoders and tokenizer against the reference implementation without
downloading pretrained weights. Reference outputs are computed in float64.

Usage: python scripts/make_reference_fixtures.py crates/core/tests/fixtures/reference
"""

import gzip
import json
import os
import sys

import numpy as np
import torch
from PIL import Image

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import convert_checkpoint as cc  # noqa: E402

import open_clip  # noqa: E402
from open_clip.model import CLIP, CLIPTextCfg, CLIPVisionCfg  # noqa: E402
from open_clip.tokenizer import SimpleTokenizer, bytes_to_unicode  # noqa: E402

WORDS = ["good", "bad", "photo", "a", "of", "high", "low", "contrast", "quality", "there", "is", "in", "the"]
PROMPTS = ["Good photo.", "Bad photo.", "A photo of high contrast.", "There is low quality in the photo.", "", "Naïve   PHOTO!!"]
IMAGE_SIZES = [(224, 224), (160, 288)]


def merges_text(words):
    enc = bytes_to_unicode()
    lines, seen = ["#version: 0.2"], set()
    for w in words:
        syms = [enc[b] for b in w.lower().encode("utf-8")]
        if len(syms) < 2:
            continue
        acc = syms[0]
        for i, s in enumerate(syms[1:], start=1):
            right = s + "</w>" if i == len(syms) - 1 else s
            line = f"{acc} {right}"
            if line not in seen:
                seen.add(line)
                lines.append(line)
            acc += right
    return "\n".join(lines) + "\n"


def randomize(model, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in list(model.named_parameters()) + list(model.named_buffers()):
            if not p.is_floating_point() or name.endswith("attn_mask"):
                continue
            if name.endswith("running_var"):
                p.copy_(torch.rand(p.shape, generator=g) + 0.5)
            elif name.endswith("running_mean") or name.endswith(".bias"):
                p.copy_((torch.rand(p.shape, generator=g) - 0.5) * 0.2)
            elif p.ndim == 1 and ("ln" in name or "bn" in name or "downsample.1" in name):
                p.copy_(torch.rand(p.shape, generator=g) * 0.5 + 0.75)
            else:
                fan_in = p.shape[-1] if p.ndim == 2 else (int(np.prod(p.shape[1:])) if p.ndim > 2 else 4)
                p.copy_(torch.randn(p.shape, generator=g) / max(fan_in, 1) ** 0.5)


def make_images(out_dir):
    paths = []
    for i, (h, w) in enumerate(IMAGE_SIZES * 2):
        yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w])[:, None, None]
        base = np.stack([np.sin(3 * xx + i), np.cos(2 * yy - i), xx * yy], -1) * 0.5 + 0.5
        img = np.clip(base + 0.08 * np.sign(np.sin(40 * xx * (i + 1)) * np.cos(35 * yy))[..., None], 0, 1)
        arr = (img * 255).round().astype(np.uint8)
        name = f"img{i}_{h}x{w}.png"
        Image.fromarray(arr, "RGB").save(os.path.join(out_dir, name))
        paths.append(name)
    return paths


def load_normalized(path):
    arr = np.asarray(Image.open(path).convert("RGB"))
    x = (arr.astype(np.float32) / np.float32(255.0)).astype(np.float64)
    mean = np.array(cc.CLIP_MEAN)
    std = np.array(cc.CLIP_STD)
    x = (x - mean) / std
    return torch.from_numpy(x.transpose(2, 0, 1).copy())[None]


def embed_image(model, x, mode, key):
    visual = model.visual
    pos = getattr(visual.attnpool, "positional_embedding") if key == "rn" else visual.positional_embedding
    saved = pos.data.clone()
    if mode == "removed":
        if key == "rn":
            grid = (x.shape[2] // 32) * (x.shape[3] // 32)
            visual.attnpool.positional_embedding = torch.nn.Parameter(torch.zeros(grid + 1, saved.shape[1], dtype=saved.dtype))
        else:
            p = visual.conv1.kernel_size[0]
            grid = (x.shape[2] // p) * (x.shape[3] // p)
            visual.positional_embedding = torch.nn.Parameter(torch.zeros(grid + 1, saved.shape[1], dtype=saved.dtype))
            visual.grid_size = (x.shape[2] // p, x.shape[3] // p)
    with torch.no_grad():
        out = model.encode_image(x)[0].tolist()
    if key == "rn":
        visual.attnpool.positional_embedding = torch.nn.Parameter(saved)
    else:
        visual.positional_embedding = torch.nn.Parameter(saved)
    return out


def build(key, vocab_size):
    text = CLIPTextCfg(context_length=77, vocab_size=vocab_size, width=16, heads=2, layers=2)
    if key == "rn":
        vision = CLIPVisionCfg(layers=(1, 1, 1, 1), width=4, head_width=32, image_size=224)
    else:
        vision = CLIPVisionCfg(layers=2, width=32, head_width=16, patch_size=32, image_size=224)
    return CLIP(embed_dim=16, vision_cfg=vision, text_cfg=text, quick_gelu=True)


def main(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    vocab_path = os.path.join(out_dir, "vocab.txt.gz")
    with gzip.open(vocab_path, "wt", encoding="utf-8") as f:
        f.write(merges_text(WORDS))
    tok = SimpleTokenizer(bpe_path=vocab_path)
    vocab_size = len(tok.encoder)
    images = make_images(out_dir)

    reference = {"vocab_size": vocab_size, "prompts": [], "models": {}}
    for p in PROMPTS:
        ids = tok.encode(p)
        reference["prompts"].append({"text": p, "content_ids": ids})

    for key, seed in (("rn", 11), ("vit", 12)):
        torch.manual_seed(seed)
        model = build(key, vocab_size).eval()
        randomize(model, seed)
        model = model.double()
        state = cc.to_numpy_state(model)
        heads = 4 if key == "rn" else 2
        cc.export(state, os.path.join(out_dir, key), vocab_path, vision_heads=heads, text_heads=2)
        texts = []
        for p in PROMPTS:
            ids = [tok.sot_token_id] + tok.encode(p) + [tok.eot_token_id]
            t = torch.zeros(1, 77, dtype=torch.long)
            t[0, : len(ids)] = torch.tensor(ids)
            with torch.no_grad():
                texts.append(model.encode_text(t)[0].tolist())
        imgs = []
        for name in images:
            x = load_normalized(os.path.join(out_dir, name))
            entry = {"file": name, "removed": embed_image(model, x, "removed", key)}
            if x.shape[2:] == (224, 224):
                entry["vanilla"] = embed_image(model, x, "vanilla", key)
            imgs.append(entry)
        reference["models"][key] = {"text": texts, "images": imgs}

    with open(os.path.join(out_dir, "reference.json"), "w") as f:
        json.dump(reference, f, indent=1)
    for stem in ("rn", "vit"):
        os.remove(os.path.join(out_dir, f"{stem}.vocab.txt.gz"))
    print(f"open_clip {open_clip.__version__}: wrote fixtures to {out_dir}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/reference")
