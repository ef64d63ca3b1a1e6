#!/usr/bin/env python3
"""Convert a CLIP-style checkpoint into the flat tensor archive read by lookfeel.

Writes three files next to each other:

    OUT.lfta        tensors (name -> shape -> little-endian f32 data)
    OUT.toml        model card (variant, dims, heads, normalization constants)
    OUT.vocab.txt.gz  byte-pair merges (copied from --vocab or the open_clip package)

Sources accepted by --checkpoint:
  * an OpenAI CLIP TorchScript archive (RN50.pt, ViT-B-32.pt, ...)
  * a plain PyTorch state dict (.pt/.pth/.bin) with CLIP key names
  * an open_clip pretrained tag, e.g. --open-clip RN50 openai (downloads)

Archive layout (all integers little-endian):

    b"LFTA" | u32 version=1 | u32 count
    count x ( u32 name_len | name utf-8 | u8 dtype=0 (f32) | u32 ndim
              | ndim x u64 dim | prod(dims) x f32 )

Tensors are written in lexicographic name order. Batch-norm buffers
(running_mean / running_var) are included; num_batches_tracked and
logit_scale are dropped.
"""

import argparse
import gzip
import os
import shutil
import struct
import sys

import numpy as np

MAGIC = b"LFTA"
VERSION = 1
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
SKIP_SUFFIXES = ("num_batches_tracked",)
SKIP_KEYS = {"logit_scale", "input_resolution", "context_length", "vocab_size"}


def write_archive(state, path):
    names = sorted(k for k in state if k not in SKIP_KEYS and not k.endswith(SKIP_SUFFIXES))
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(names)))
        for name in names:
            arr = np.ascontiguousarray(np.asarray(state[name], dtype="<f4"))
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<BI", 0, arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(arr.tobytes())
    return names


def infer_card(state, vision_heads=None, text_heads=None):
    """Model card from tensor shapes, following the published CLIP recipe."""
    embed_dim = state["text_projection"].shape[1]
    text_width = state["ln_final.weight"].shape[0]
    context_length = state["positional_embedding"].shape[0]
    if "visual.attnpool.positional_embedding" in state:
        variant = "residual-attnpool"
        rows = state["visual.attnpool.positional_embedding"].shape[0]
        grid = int(round((rows - 1) ** 0.5))
        native = grid * 32
        width = state["visual.layer1.0.conv1.weight"].shape[0]
        vheads = vision_heads or width * 32 // 64
    else:
        variant = "patch-transformer"
        patch = state["visual.conv1.weight"].shape[-1]
        rows = state["visual.positional_embedding"].shape[0]
        grid = int(round((rows - 1) ** 0.5))
        native = grid * patch
        vheads = vision_heads or state["visual.conv1.weight"].shape[0] // 64
    return {
        "variant": variant,
        "embed_dim": int(embed_dim),
        "native_input_size": int(native),
        "vision_heads": int(vheads),
        "text_heads": int(text_heads or text_width // 64),
        "context_length": int(context_length),
        "mean": list(CLIP_MEAN),
        "std": list(CLIP_STD),
    }


def write_card(card, path):
    def fmt(v):
        if isinstance(v, str):
            return f'"{v}"'
        if isinstance(v, list):
            return "[" + ", ".join(repr(float(x)) for x in v) + "]"
        return str(v)

    with open(path, "w") as f:
        for k in ("variant", "embed_dim", "native_input_size", "vision_heads", "text_heads", "context_length", "mean", "std"):
            f.write(f"{k} = {fmt(card[k])}\n")


def to_numpy_state(obj):
    import torch

    if isinstance(obj, torch.jit.ScriptModule):
        obj = obj.state_dict()
    elif hasattr(obj, "state_dict") and not isinstance(obj, dict):
        obj = obj.state_dict()
    if "state_dict" in obj and isinstance(obj["state_dict"], dict):
        obj = obj["state_dict"]
    out = {}
    for k, v in obj.items():
        k = k[len("module."):] if k.startswith("module.") else k
        if hasattr(v, "detach"):
            out[k] = v.detach().float().cpu().numpy()
    return out


def default_vocab():
    try:
        import open_clip
    except ImportError:
        return None
    p = os.path.join(os.path.dirname(open_clip.__file__), "bpe_simple_vocab_16e6.txt.gz")
    return p if os.path.exists(p) else None


def export(state, out_stem, vocab_path, vision_heads=None, text_heads=None):
    names = write_archive(state, out_stem + ".lfta")
    card = infer_card(state, vision_heads, text_heads)
    write_card(card, out_stem + ".toml")
    dst = out_stem + ".vocab.txt.gz"
    if vocab_path.endswith(".gz"):
        shutil.copyfile(vocab_path, dst)
    else:
        with open(vocab_path, "rb") as src, gzip.open(dst, "wb") as g:
            g.write(src.read())
    return names, card


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="TorchScript archive or state dict")
    src.add_argument("--open-clip", nargs=2, metavar=("MODEL", "PRETRAINED"), help="open_clip model name and tag")
    ap.add_argument("--out", required=True, help="output path stem (without extension)")
    ap.add_argument("--vocab", default=None, help="bpe merges file (.txt or .txt.gz)")
    ap.add_argument("--vision-heads", type=int, default=None)
    ap.add_argument("--text-heads", type=int, default=None)
    args = ap.parse_args(argv)

    import torch

    if args.checkpoint:
        try:
            obj = torch.jit.load(args.checkpoint, map_location="cpu")
        except RuntimeError:
            obj = torch.load(args.checkpoint, map_location="cpu", weights_only=False)
    else:
        import open_clip

        obj, _, _ = open_clip.create_model_and_transforms(args.open_clip[0], pretrained=args.open_clip[1])
    state = to_numpy_state(obj)

    vocab = args.vocab or default_vocab()
    if vocab is None:
        sys.exit("no vocabulary given and open_clip is not installed; pass --vocab")
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    names, card = export(state, args.out, vocab, args.vision_heads, args.text_heads)
    print(f"wrote {len(names)} tensors to {args.out}.lfta ({card['variant']}, embed_dim {card['embed_dim']})")


if __name__ == "__main__":
    main()
