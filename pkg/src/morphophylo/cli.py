"""Command-line front end.

Subcommands: mask, fourier, train, embed, tree, compare, synth, baseline,
pipeline. Machine-readable results go to stdout as one JSON object per
line; tabular artifacts are CSV. Exit codes: 0 success, 1 input error,
2 non-finite numbers, 3 contract violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import encoder, fourier, metrics, phylo, shape_io, synth
from .config import PipelineConfig, apply_overrides, load_config
from .errors import InputError, MorphoPhyloError, NumericError
from .newick import read_newick, save_newick

log = logging.getLogger("morphophylo")

CONTOUR_SUFFIX = ".contour.txt"
MASK_SUFFIX = ".mask.png"


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def _write_json(path: Path, record: dict) -> None:
    path.write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")


def _report_failure(path, exc) -> None:
    msg = str(exc)
    if str(path) not in msg:
        msg = f"{path}: {msg}"
    print(f"failed: {msg}", file=sys.stderr)


@dataclass
class StageReport:
    processed: int = 0
    failed: list[tuple[str, str]] = field(default_factory=list)
    suspect: list[str] = field(default_factory=list)

    def summary(self) -> str:
        line = f"processed {self.processed}, failed {len(self.failed)}"
        if self.suspect:
            line += f", suspect {len(self.suspect)}"
        return line


# --- stages ---------------------------------------------------------------

def run_mask(in_dir, out_dir, cfg: PipelineConfig) -> StageReport:
    """Mask and outline for every image under `in_dir`, mirrored under `out_dir`."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    if not in_dir.is_dir():
        raise InputError(f"{in_dir}: not a directory")
    report = StageReport()
    for path, _species, stem in shape_io.iter_dataset(in_dir):
        target = out_dir / path.parent.relative_to(in_dir)
        try:
            img = shape_io.load_grayscale(path)
            mask = shape_io.binarize_mask(img, cfg.threshold)
            outline = shape_io.largest_contour(shape_io.extract_contours(mask))
            outline = shape_io.resample_contour(outline, cfg.resample_points)
        except MorphoPhyloError as exc:
            report.failed.append((str(path), str(exc)))
            _report_failure(path, exc)
            continue
        target.mkdir(parents=True, exist_ok=True)
        shape_io.write_mask_png(mask, target / f"{stem}{MASK_SUFFIX}")
        shape_io.write_contour(outline, target / f"{stem}{CONTOUR_SUFFIX}")
        report.processed += 1
    return report


@dataclass
class FourierResult:
    ids: list[str]
    species: list[str]
    rows: np.ndarray
    reports: list[tuple[str, fourier.ReconstructionReport, bool]]
    stage: StageReport


def run_fourier(contour_dir, out_file, cfg: PipelineConfig, report_out=None,
                binary_out=None) -> FourierResult:
    contour_dir = Path(contour_dir)
    if not contour_dir.is_dir():
        raise InputError(f"{contour_dir}: not a directory")
    stage = StageReport()
    ids, species, rows, reports = [], [], [], []
    paths = sorted(p for p in contour_dir.rglob(f"*{CONTOUR_SUFFIX}") if p.is_file())
    for path in paths:
        specimen = path.name[:-len(CONTOUR_SUFFIX)]
        try:
            outline = shape_io.read_contour(path)
            if len(outline) != cfg.resample_points:
                outline = shape_io.resample_contour(outline, cfg.resample_points)
            fc = fourier.contour_coefficients(outline, cfg.harmonics)
        except MorphoPhyloError as exc:
            stage.failed.append((str(path), str(exc)))
            _report_failure(path, exc)
            continue
        flagged = False
        for k in cfg.report_ks:
            rep = fourier.reconstruction_error(outline, fc, k, cfg.truncation)
            bad = rep.suspect(cfg.suspect_threshold)
            flagged |= bad
            reports.append((specimen, rep, bad))
        if flagged:
            stage.suspect.append(specimen)
        ids.append(specimen)
        species.append(path.parent.name)
        rows.append(fourier.assemble_descriptor(fc))
        stage.processed += 1
    rows = np.array(rows).reshape(len(rows), 2 + 4 * cfg.harmonics)
    fourier.write_descriptor_csv(out_file, ids, species, rows)
    if binary_out is not None:
        fourier.write_descriptor_binary(binary_out, rows)
    if report_out is not None:
        lines = ["specimen_id,K,rms_error,max_error,suspect"]
        lines += [f"{sid},{r.K},{r.rms_error!r},{r.max_error!r},{int(bad)}" for sid, r, bad in reports]
        Path(report_out).write_text("\n".join(lines) + "\n")
    return FourierResult(ids, species, rows, reports, stage)


def run_train(descriptor_file, checkpoint, cfg: PipelineConfig):
    _, species, rows = fourier.read_descriptor_csv(descriptor_file)
    tc = cfg.train_config()
    params, history = encoder.train(tc, rows, species)
    if not all(np.isfinite(history.epoch_loss)):
        raise NumericError("non-finite training loss")
    encoder.save_checkpoint(params, checkpoint, history)
    return params, history


def run_embed(checkpoint, descriptor_file, out_file) -> encoder.EmbeddingMatrix:
    params = encoder.load_checkpoint(checkpoint)
    ids, species, rows = fourier.read_descriptor_csv(descriptor_file)
    emb = encoder.embed(params, rows, species, ids)
    write_embeddings(out_file, emb)
    return emb


def write_embeddings(path, emb: encoder.EmbeddingMatrix) -> None:
    header = ["specimen_id", "species_id"] + [f"e{i}" for i in range(emb.rows.shape[1])]
    lines = [",".join(header)]
    for sid, sp, row in zip(emb.ids, emb.labels, emb.rows.tolist()):
        lines.append(",".join([sid, sp] + [repr(v) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_embeddings(path) -> encoder.EmbeddingMatrix:
    """Embedding CSV (e0, e1, ...) or, for raw-descriptor trees, descriptor CSV (v0, ...)."""
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
    except OSError as exc:
        raise InputError(f"{path}: unreadable ({exc.strerror})") from None
    prefix = "v" if header[2:3] == ["v0"] else "e"
    ids, species, rows = fourier.read_descriptor_csv(path, prefix=prefix)
    return encoder.EmbeddingMatrix(rows, species, ids)


def tree_from_rows(rows, species, cfg: PipelineConfig):
    labels, centroids = phylo.species_centroids(encoder.EmbeddingMatrix(rows, species))
    dm = phylo.distance_matrix(labels, centroids, cfg.distance)
    return phylo.build_tree(dm, cfg.tree_method), dm


def run_tree(embedding_file, out_file, cfg: PipelineConfig, phylip_out=None):
    emb = read_embeddings(embedding_file)
    tree, dm = tree_from_rows(emb.rows, emb.labels, cfg)
    save_newick(tree, out_file, cfg.precision)
    if phylip_out is not None:
        phylo.write_phylip(dm, phylip_out)
    return tree


def run_compare(estimated, truth, matching_out=None) -> metrics.TreeScore:
    score = metrics.align_score(estimated, truth)
    if matching_out is not None:
        lines = ["edge_t1,edge_t2,score"]
        for a, b, s in score.matching:
            lines.append(f"{'|'.join(sorted(a))},{'|'.join(sorted(b))},{s!r}")
        Path(matching_out).write_text("\n".join(lines) + "\n")
    return score


def run_synth(out_dir, cfg: PipelineConfig) -> synth.SyntheticDataset:
    tree = synth.generate_tree(cfg.n_species, cfg.seed)
    ds = synth.generate_dataset(tree, cfg.evolution_config(), raster=cfg.raster,
                                n_points=cfg.resample_points)
    synth.write_dataset(ds, out_dir)
    return ds


def run_pipeline(out_dir, cfg: PipelineConfig) -> dict:
    """synth -> [mask -> fourier] -> train -> embed -> tree -> compare."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps())
    run_synth(out / "synth", cfg)
    truth = read_newick(out / "synth" / "ground_truth.nwk")
    descriptors = out / "descriptors.csv"
    if cfg.raster:
        masked = run_mask(out / "synth" / "images", out / "masks", cfg)
        if masked.failed:
            raise InputError(f"mask stage failed on {len(masked.failed)} images")
        run_fourier(out / "masks", descriptors, cfg, report_out=out / "reconstruction.csv")
    else:
        shutil.copyfile(out / "synth" / "descriptors.csv", descriptors)
    _, history = run_train(descriptors, out / "encoder.dseq", cfg)
    run_embed(out / "encoder.dseq", descriptors, out / "embeddings.csv")
    tree = run_tree(out / "embeddings.csv", out / "tree.nwk", cfg, phylip_out=out / "distances.phy")
    score = run_compare(read_newick(out / "tree.nwk"), truth, out / "matching.csv")

    _, species, rows = fourier.read_descriptor_csv(descriptors)
    raw_tree, _ = tree_from_rows(rows, species, cfg)
    save_newick(raw_tree, out / "raw_tree.nwk", cfg.precision)
    raw_score = run_compare(read_newick(out / "raw_tree.nwk"), truth)
    baseline = metrics.random_baseline(truth, cfg.baseline_trials, cfg.seed)
    record = {
        "seed": cfg.seed,
        "trained": score.record(),
        "raw_descriptors": raw_score.record(),
        "random_baseline": baseline.record(),
        "final_loss": history.epoch_loss[-1],
        "first_loss": history.epoch_loss[0],
    }
    _write_json(out / "score.json", record)
    return record


# --- argument handling ----------------------------------------------------

def _load(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    for item in args.set or ():
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return apply_overrides(cfg, overrides) if overrides else cfg


def cmd_mask(args, cfg):
    report = run_mask(args.in_dir, args.out_dir, cfg)
    print(report.summary())
    return 1 if args.strict and report.failed else 0


def cmd_fourier(args, cfg):
    if args.harmonics is not None:
        cfg = replace(cfg, harmonics=args.harmonics)
    if args.report is not None:
        cfg = replace(cfg, report_k=args.report)
    if args.suspect_threshold is not None:
        cfg = replace(cfg, suspect_threshold=args.suspect_threshold)
    result = run_fourier(args.contour_dir, args.out_file, cfg, args.report_out, args.binary)
    for sid in result.stage.suspect:
        print(f"suspect: {sid}", file=sys.stderr)
    print(result.stage.summary())
    return 1 if args.strict and result.stage.failed else 0


def cmd_train(args, cfg):
    tc = cfg.train_config()
    _, history = run_train(args.descriptors, args.checkpoint, cfg)
    _emit({"epochs": len(history.epoch_loss), "first_loss": history.epoch_loss[0],
           "final_loss": history.epoch_loss[-1], "optimizer_steps": history.steps,
           "skipped_steps": history.skipped_steps, "mini_batch": tc.mini_batch,
           "accumulation_steps": tc.accumulation_steps, "samples_per_step": history.samples_per_step})
    return 0


def cmd_embed(args, cfg):
    emb = run_embed(args.checkpoint, args.descriptors, args.out_file)
    _emit({"rows": len(emb.labels), "dim": int(emb.rows.shape[1])})
    return 0


def cmd_tree(args, cfg):
    if args.method:
        cfg = replace(cfg, tree_method=args.method)
    if args.distance:
        cfg = replace(cfg, distance=args.distance)
    tree = run_tree(args.embeddings, args.out_file, cfg, args.phylip)
    _emit({"leaves": len(tree.leaf_labels()), "method": cfg.tree_method})
    return 0


def cmd_compare(args, cfg):
    score = run_compare(read_newick(args.tree1), read_newick(args.tree2), args.matching)
    _emit(score.record())
    return 0


def cmd_synth(args, cfg):
    ds = run_synth(args.out_dir, cfg)
    _emit({"specimens": len(ds.ids), "species": cfg.n_species, "images": len(ds.images)})
    return 0


def cmd_baseline(args, cfg):
    trials = args.trials if args.trials is not None else cfg.baseline_trials
    result = metrics.random_baseline(read_newick(args.truth), trials, cfg.seed)
    _emit(result.record())
    return 0


def cmd_pipeline(args, cfg):
    _emit(run_pipeline(args.out_dir, cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphophylo", description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="flat key = value settings file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--strict", action="store_true", help="nonzero exit if any input fails")
    parser.add_argument("--quiet", action="store_true", help="only warnings and errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="binarize images and trace one outline each")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("fourier", help="outline files -> descriptor CSV (+ reconstruction report)")
    p.add_argument("contour_dir")
    p.add_argument("out_file")
    p.add_argument("--harmonics", type=int)
    p.add_argument("--report", metavar="K-LIST", help="comma-separated term counts, default 20,50,100,200")
    p.add_argument("--report-out", help="CSV: specimen_id,K,rms_error,max_error,suspect")
    p.add_argument("--suspect-threshold", type=float, help="max pointwise error (pixels) flagging a specimen")
    p.add_argument("--binary", help="also write the packed FDSC descriptor file")
    p.set_defaults(func=cmd_fourier)

    p = sub.add_parser("train", help="fit the encoder; writes checkpoint and <checkpoint>.history.csv")
    p.add_argument("descriptors")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embeddings CSV from a checkpoint and descriptors")
    p.add_argument("checkpoint")
    p.add_argument("descriptors")
    p.add_argument("out_file")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("tree", help="species tree (Newick) from embeddings or descriptors")
    p.add_argument("embeddings")
    p.add_argument("out_file")
    p.add_argument("--method", choices=("upgma", "nj"))
    p.add_argument("--distance", choices=("euclidean", "cosine"))
    p.add_argument("--phylip", help="also write the species distance matrix")
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("compare", help="nAS and nRF of tree1 against tree2 (JSON line)")
    p.add_argument("tree1")
    p.add_argument("tree2")
    p.add_argument("--matching", help="CSV dump of matched edge pairs and scores")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="synthetic dataset with a known phylogeny")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("baseline", help="random-tree baseline against a truth tree (JSON line)")
    p.add_argument("truth")
    p.add_argument("--trials", type=int)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("pipeline", help="synth -> masks -> descriptors -> train -> embed -> tree -> compare")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _load(args)
        return args.func(args, cfg)
    except MorphoPhyloError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
