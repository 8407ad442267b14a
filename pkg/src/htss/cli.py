"""Command-line front end: gen, taxonomy, pseudolabel, train, eval.

Every subcommand reads a flat JSON config (--config), with --seed and
--out overriding the corresponding config keys and --print-config
dumping the defaults. Outputs are deterministic: rerunning a subcommand
with the same config writes byte-identical files.

Exit codes: 0 success, 2 config error, 4 numeric failure, 3 any data
error. The HTSS_LOG environment variable sets log verbosity (DEBUG,
INFO, WARNING, ...); logs go to stderr and never into output files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats
from .errors import ConfigError, DataError, HTSSError, NumericError
from .lossgrad import merge_subclass_predictions, softmax_atoms
from .metrics import ConfusionMatrix, MetricReport
from .model import (
    BatchPlan,
    OptimizerState,
    forward,
    load_checkpoint,
    train_loop,
)
from .synthgen import View, WorldSpec, emit_dataset, load_dataset, relation_triples
from .annotations import canvas_from_boxes, canvas_from_tags
from .taxonomy import (
    BBOX,
    PIXEL_KINDS,
    WEAK_KINDS,
    AtomPartition,
    RelationTable,
    build_group_sets,
    build_semantic_atoms,
    partition_atoms,
    semantic_closure,
    validate_taxonomy,
)

log = logging.getLogger("htss")

DEFAULTS: dict[str, dict] = {
    "gen": {
        "world": "world.json",
        "out": "data",
    },
    "taxonomy": {
        "label_spaces": [],
        "relations": "",
        "partition": False,
        "out": "taxonomy_out",
    },
    "pseudolabel": {
        "manifests": [],
        "out": "canvases",
    },
    "train": {
        "manifests": [],
        "relations": "",
        "quotas": {},
        "learning_rate": 0.2,
        "momentum": 0.9,
        "epochs": 1,
        "refine_threshold": 0.9,
        "feature_width": 8,
        "partition": False,
        "checkpoint_every": 0,
        "seed": 0,
        "out": "train_out",
    },
    "eval": {
        "checkpoint": "",
        "manifests": [],
        "train_label_spaces": [],
        "relations": "",
        "partition": False,
        "c_values": [],
        "n_t": 10,
        "out": "eval_out",
    },
}


def _load_config(command: str, args) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config is None:
        raise ConfigError("missing --config (use --print-config to see defaults)")
    try:
        raw = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    try:
        user = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(user) - set(cfg)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    cfg.update(user)
    if args.out is not None:
        cfg["out"] = args.out
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _require_paths(cfg: dict, key: str) -> list[str]:
    value = cfg.get(key)
    if not isinstance(value, list) or not value or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"config key {key!r} must be a non-empty list of paths")
    return value


def _read_relations(path: str) -> RelationTable:
    if not path:
        return RelationTable.empty()
    return formats.read_relations(path)


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(cfg: dict, seed_override: int | None = None) -> None:
    doc_path = cfg["world"]
    try:
        doc = json.loads(Path(doc_path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read world spec {doc_path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"world spec {doc_path} is not valid JSON: {exc}") from None
    views_doc = doc.pop("views", None)
    if not views_doc:
        raise ConfigError("world spec needs a non-empty 'views' list")
    world = WorldSpec.from_dict(doc)
    if seed_override is not None:
        world = replace(world, seed=seed_override)
    views = [View.from_dict(v) for v in views_doc]
    if len({v.dataset_id for v in views}) != len(views):
        raise ConfigError("duplicate dataset_id among views")
    out = _out_dir(cfg)
    for view in views:
        manifest = emit_dataset(world, view, out)
        log.info("wrote %s", manifest.path)
    formats.write_relations(out / "relations.tsv", relation_triples(world))
    log.info("wrote %s", out / "relations.tsv")


def cmd_taxonomy(cfg: dict) -> None:
    spaces = [formats.read_label_space(p) for p in _require_paths(cfg, "label_spaces")]
    relations = _read_relations(cfg["relations"])
    atoms = build_semantic_atoms(spaces, relations)
    tax = build_group_sets(atoms, spaces, relations)
    report = validate_taxonomy(tax, spaces)
    out = _out_dir(cfg)
    formats.write_taxonomy(out / "taxonomy.json", tax, spaces)
    formats.write_manifest(out / "validation.json", {
        "valid": report.is_valid,
        "violations": [
            {"kind": v.kind, "dataset_id": v.dataset_id, "detail": v.detail}
            for v in report.violations
        ],
    })
    if cfg["partition"]:
        part = partition_atoms(tax, spaces, relations)
        formats.write_manifest(out / "partition.json", {
            "atoms": list(part.atoms),
            "a_set": [part.atom_name(i) for i in sorted(part.a_set)],
            "s_set": [part.atom_name(i) for i in sorted(part.s_set)],
            "p_set": [part.atom_name(i) for i in sorted(part.p_set)],
            "parent_of": {part.atom_name(s): part.atom_name(p)
                          for s, p in sorted(part.parent_of.items())},
        })
    log.info("taxonomy written to %s (%d atoms, valid=%s)", out, len(atoms),
             report.is_valid)


def cmd_pseudolabel(cfg: dict) -> None:
    out = _out_dir(cfg)
    for manifest_path in _require_paths(cfg, "manifests"):
        ds = load_dataset(manifest_path)
        if ds.supervision not in WEAK_KINDS:
            raise DataError(
                f"dataset {ds.dataset_id!r} has supervision {ds.supervision!r}; "
                "pseudolabel needs a box or tag dataset")
        (out / ds.dataset_id).mkdir(parents=True, exist_ok=True)
        num = ds.space.num_classes
        for i, (image, label) in enumerate(zip(ds.images, ds.labels)):
            h, w = image.shape[:2]
            if ds.supervision == BBOX:
                canvas = canvas_from_boxes(label, h, w, num)
            else:
                canvas = canvas_from_tags(label, h, w, num)
            formats.write_raster(out / ds.dataset_id / f"canvas_{i:05d}.rast",
                                 canvas.probs.astype(np.float32))
        log.info("wrote %d canvases for %s", len(ds.images), ds.dataset_id)


def _build_taxonomy(spaces, relations):
    atoms = build_semantic_atoms(spaces, relations)
    return build_group_sets(atoms, spaces, relations)


def cmd_train(cfg: dict) -> None:
    datasets = [load_dataset(p) for p in _require_paths(cfg, "manifests")]
    spaces = [ds.space for ds in datasets]
    relations = _read_relations(cfg["relations"])
    tax = _build_taxonomy(spaces, relations)
    partition = partition_atoms(tax, spaces, relations) if cfg["partition"] else None

    quotas = cfg["quotas"]
    if not isinstance(quotas, dict) or not quotas:
        raise ConfigError("config key 'quotas' must be a non-empty object")
    try:
        plan = BatchPlan(quotas={str(k): int(v) for k, v in quotas.items()},
                         seed=int(cfg["seed"]))
        optimizer = OptimizerState(learning_rate=float(cfg["learning_rate"]),
                                   momentum=float(cfg["momentum"]))
        epochs = int(cfg["epochs"])
        threshold = float(cfg["refine_threshold"])
        width = int(cfg["feature_width"])
        every = int(cfg["checkpoint_every"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training config value: {exc}") from None
    out = _out_dir(cfg)
    result = train_loop(datasets, tax, partition, plan, optimizer, epochs,
                        threshold, feature_width=width, out_dir=out,
                        checkpoint_every=every)
    log.info("trained %d steps, final loss %.6f", len(result.losses),
             result.losses[-1])


def _eval_class_lut(part: AtomPartition, space, relations) -> np.ndarray:
    """Atom index -> class id of the evaluation label space (0 if none)."""
    names = {part.atoms[i - 1]: i for i in range(1, part.atom_count + 1)}
    lut = np.zeros(part.atom_count + 1, dtype=np.int64)
    for m, cname in enumerate(space.classes[1:], start=1):
        covered = [names[n] for n in semantic_closure(cname, relations) if n in names]
        if not covered:
            raise DataError(
                f"evaluation class {cname!r} of {space.dataset_id!r} covers no atom")
        for a in covered:
            if lut[a] and lut[a] != m:
                raise DataError(
                    f"evaluation space {space.dataset_id!r} maps atom "
                    f"{part.atom_name(a)!r} to two classes")
            lut[a] = m
    return lut


def cmd_eval(cfg: dict) -> None:
    if not cfg["checkpoint"]:
        raise ConfigError("config key 'checkpoint' is required")
    params = load_checkpoint(cfg["checkpoint"])
    spaces = [formats.read_label_space(p)
              for p in _require_paths(cfg, "train_label_spaces")]
    relations = _read_relations(cfg["relations"])
    tax = _build_taxonomy(spaces, relations)
    part = (partition_atoms(tax, spaces, relations) if cfg["partition"]
            else AtomPartition.trivial(tax))
    n_ap, n_s = len(part.ap_atoms), len(part.s_atoms)
    if params.out_channels != n_ap + n_s:
        raise DataError(
            f"checkpoint predicts {params.out_channels} atoms but the taxonomy "
            f"needs {n_ap + n_s}")
    try:
        n_t = int(cfg["n_t"])
        c_values = [int(c) for c in cfg["c_values"]]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad eval config value: {exc}") from None

    out = _out_dir(cfg)
    reports = []
    for manifest_path in _require_paths(cfg, "manifests"):
        ds = load_dataset(manifest_path)
        if ds.supervision not in PIXEL_KINDS:
            raise DataError(
                f"evaluation dataset {ds.dataset_id!r} must be pixel-supervised")
        lut = _eval_class_lut(part, ds.space, relations)
        cm = ConfusionMatrix(ds.space.num_classes)
        for image, label in zip(ds.images, ds.labels):
            logits, _ = forward(params, image)
            ap_probs = softmax_atoms(logits[:, :, :n_ap])
            s_probs = (softmax_atoms(logits[:, :, n_ap:]) if n_s
                       else np.zeros(logits.shape[:2] + (0,)))
            atom_ids = merge_subclass_predictions(ap_probs, s_probs, part)
            cm.add(label.class_ids, lut[atom_ids])
        report = MetricReport.build(ds.dataset_id, ds.space.classes, cm,
                                    c_values or [ds.space.num_classes], n_t)
        reports.append(report)
        formats.write_manifest(out / f"report_{ds.dataset_id}.json", report.to_dict())
        (out / f"report_{ds.dataset_id}.txt").write_text(report.to_text(),
                                                         encoding="utf-8")
    formats.write_manifest(out / "summary.json", {
        "datasets": [r.dataset_id for r in reports],
        "mean_miou": float(np.mean([r.miou for r in reports])),
    })
    for r in reports:
        log.info("%s mIoU %.4f", r.dataset_id, r.miou)


HANDLERS = {
    "gen": cmd_gen,
    "taxonomy": cmd_taxonomy,
    "pseudolabel": cmd_pseudolabel,
    "train": cmd_train,
    "eval": cmd_eval,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="htss",
        description="Heterogeneous-supervision semantic segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "generate synthetic dataset views from a world spec",
        "taxonomy": "merge label spaces and validate the taxonomy",
        "pseudolabel": "dump pseudo-label canvases for a weak dataset",
        "train": "train the per-pixel atom classifier",
        "eval": "evaluate a checkpoint (IoU, mIoU, Knowledgeability)",
    }
    for name in HANDLERS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="path to a JSON config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--print-config", action="store_true",
                       help="print the default config and exit")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, os.environ.get("HTSS_LOG", "WARNING").upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    if args.print_config:
        print(json.dumps(DEFAULTS[args.command], indent=2, sort_keys=True))
        return 0
    try:
        cfg = _load_config(args.command, args)
        if args.command == "gen":
            cmd_gen(cfg, seed_override=args.seed)
        else:
            HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except HTSSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
