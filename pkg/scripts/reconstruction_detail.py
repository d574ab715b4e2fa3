"""Outline reconstruction from the K largest Fourier terms.

Rasterizes a synthetic outline, traces it back out of the image, and
reconstructs it from K = 20, 50, 100, 200 terms. Prints one row per K and,
with --out, writes a panel image with the traced outline in grey and each
reconstruction in red.

    python scripts/reconstruction_detail.py --out detail.png
    python scripts/reconstruction_detail.py --species-seed 4 --specimen 3
"""

import argparse

import numpy as np
from PIL import Image, ImageDraw

from morphophylo.fourier import contour_coefficients, reconstruct, reconstruction_error
from morphophylo.shape_io import GrayImage, outline_from_image
from morphophylo.synth import (EvolutionConfig, base_coefficients, generate_dataset, generate_tree,
                               outline_points, rasterize)


def source_image(args):
    if args.species_seed is None:
        return rasterize(outline_points(base_coefficients(args.shape)))
    cfg = EvolutionConfig(n_species=4, per_species=max(2, args.specimen + 1),
                          seed=args.species_seed, base_shape=args.shape)
    ds = generate_dataset(generate_tree(4, args.species_seed), cfg, raster=True)
    return ds.images[args.specimen]


def panel(outline, fc, ks, size=256):
    img = Image.new("RGB", (size * len(ks), size), "white")
    draw = ImageDraw.Draw(img)
    traced = [tuple(p) for p in outline.points.tolist()]
    for col, k in enumerate(ks):
        dx = col * size
        draw.line([(x + dx, y) for x, y in traced] + [(traced[0][0] + dx, traced[0][1])], fill=(170, 170, 170), width=3)
        rec = reconstruct(fc, k, 1024).points
        draw.line([(x + dx, y) for x, y in rec.tolist()] + [(rec[0, 0] + dx, rec[0, 1])], fill=(200, 0, 0), width=1)
        draw.text((dx + 6, 6), f"K = {k}", fill="black")
    return img


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--shape", default="beetle-template", choices=("ellipse", "beetle-template"))
    ap.add_argument("--species-seed", type=int, help="use an evolved specimen instead of the root outline")
    ap.add_argument("--specimen", type=int, default=0)
    ap.add_argument("--ks", default="20,50,100,200")
    ap.add_argument("--order", default="amplitude", choices=("amplitude", "frequency"))
    ap.add_argument("--out", help="PNG panel")
    args = ap.parse_args()

    ks = [int(k) for k in args.ks.split(",")]
    outline = outline_from_image(GrayImage(source_image(args)))
    fc = contour_coefficients(outline)
    span = outline.points.max(axis=0) - outline.points.min(axis=0)
    diagonal = float(np.hypot(*span))
    print(f"bounding-box diagonal {diagonal:.1f} px")
    print("K,rms_px,max_px,rms_pct_diag")
    for k in ks:
        rep = reconstruction_error(outline, fc, k, args.order)
        print(f"{k},{rep.rms_error:.4f},{rep.max_error:.4f},{100 * rep.rms_error / diagonal:.4f}")
    if args.out:
        panel(outline, fc, ks).save(args.out)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
