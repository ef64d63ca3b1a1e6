#!/usr/bin/env python3
"""Write an `image_path,mos,split` manifest for a quality dataset.

Raw dataset layouts vary, so each adapter only knows where a dataset keeps
its images and scores. Paths in the output are relative to the manifest.

    make_manifest.py koniq   ROOT OUT.csv [--split-file F]
    make_manifest.py livec   ROOT OUT.csv
    make_manifest.py spaq    ROOT OUT.csv [--test-fraction 0.2 --seed 0]
    make_manifest.py tid2013 ROOT OUT.csv
    make_manifest.py folder  ROOT OUT.csv [--scores F.csv]

Datasets without an official split get a seeded random test draw
(`--test-fraction`, `--seed`); reported numbers then depend on that draw.
Pass `--split-file` (one test image name per line) to pin a published split.
"""

import argparse
import csv
import os
import random
import sys

IMAGE_EXTS = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff"}


def seeded_split(names, fraction, seed):
    order = sorted(names)
    random.Random(seed).shuffle(order)
    test = set(order[: round(len(order) * fraction)])
    return {n: ("test" if n in test else "train") for n in names}


def read_split_file(path):
    with open(path) as f:
        return {line.strip() for line in f if line.strip()}


def koniq(root, args):
    scores = os.path.join(root, "koniq10k_scores_and_distributions.csv")
    sets = os.path.join(root, "koniq10k_distributions_sets.csv")
    source = sets if os.path.exists(sets) else scores
    rows = []
    with open(source, newline="") as f:
        for r in csv.DictReader(f):
            split = r.get("set", "").strip().lower()
            split = {"training": "train", "validation": "train", "test": "test"}.get(split, "")
            rows.append((os.path.join(root, "1024x768", r["image_name"]), float(r["MOS"]), split))
    return rows


def livec(root, args):
    from scipy.io import loadmat

    names = [str(n[0][0]) for n in loadmat(os.path.join(root, "Data", "AllImages_release.mat"))["AllImages_release"]]
    mos = loadmat(os.path.join(root, "Data", "AllMOS_release.mat"))["AllMOS_release"][0]
    # the first seven images are the annotators' practice set
    return [(os.path.join(root, "Images", n), float(m), "all") for n, m in list(zip(names, mos))[7:]]


def spaq(root, args):
    import pandas as pd

    table = pd.read_excel(os.path.join(root, "Annotations", "MOS and Image attribute scores.xlsx"))
    return [
        (os.path.join(root, "TestImage", str(r["Image name"])), float(r["MOS"]), "")
        for _, r in table.iterrows()
    ]


def tid2013(root, args):
    rows = []
    with open(os.path.join(root, "mos_with_names.txt")) as f:
        for line in f:
            if line.strip():
                score, name = line.split()
                rows.append((os.path.join(root, "distorted_images", name), float(score), ""))
    return rows


def folder(root, args):
    scores = {}
    if args.scores:
        with open(args.scores, newline="") as f:
            for r in csv.reader(f):
                if r and r[0] != "image" and len(r) > 1:
                    scores[r[0]] = float(r[1])
    rows = []
    for dirpath, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            if os.path.splitext(name)[1].lower() in IMAGE_EXTS:
                rows.append((os.path.join(dirpath, name), scores.get(name), "all"))
    return rows


ADAPTERS = {"koniq": koniq, "livec": livec, "spaq": spaq, "tid2013": tid2013, "folder": folder}


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("dataset", choices=sorted(ADAPTERS))
    p.add_argument("root")
    p.add_argument("out")
    p.add_argument("--split-file", help="test image names, one per line")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scores", help="folder adapter: CSV of image name,score")
    args = p.parse_args()

    rows = ADAPTERS[args.dataset](args.root, args)
    if not rows:
        sys.exit(f"no images found under {args.root}")
    names = [os.path.basename(r[0]) for r in rows]
    if args.split_file:
        test = read_split_file(args.split_file)
        rows = [(path, mos, "test" if n in test else "train") for (path, mos, _), n in zip(rows, names)]
    elif any(split == "" for _, _, split in rows):
        splits = seeded_split(names, args.test_fraction, args.seed)
        rows = [(path, mos, split or splits[n]) for (path, mos, split), n in zip(rows, names)]

    base = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(base, exist_ok=True)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["image_path", "mos", "split"])
        for path, mos, split in rows:
            w.writerow([os.path.relpath(os.path.abspath(path), base), "" if mos is None else repr(mos), split])
    print(f"{len(rows)} rows -> {args.out}", file=sys.stderr)


if __name__ == "__main__":
    main()
