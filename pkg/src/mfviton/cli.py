"""Command-line entry point: ``mfviton <subcommand> [options]``.

Exit codes: 0 ok, 2 usage, 3 config/lineage, 4 numerical divergence, 5 I/O.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics, pipeline as P, synthworld as sw
from .config import RunConfig, load_config
from .errors import ArtifactIOError, ConfigError, MFVitonError
from .storage import ImageStore, image_to_png, read_checkpoint_header, read_manifest

log = logging.getLogger("mfviton")

GENERATED_VERSION = 1


def _resolve(args, path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(args.workdir) / p


def _config(args, **extra) -> RunConfig:
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    overrides = {k.strip(): v.strip() for k, v in overrides.items()}
    overrides.update({k: str(v) for k, v in extra.items() if v is not None})
    config_path = _resolve(args, args.config) if args.config else None
    return load_config(config_path, overrides)


def _snapshot(cfg: RunConfig, out: Path, stem: str):
    directory = out if out.suffix == "" else out.parent
    cfg.snapshot(directory, f"{stem}.config.txt")


def _bool(v):
    return None if v is None else ("true" if v else "false")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_world(args):
    cfg = _config(args, n_train=args.n, n_test=args.n_test, seed=args.seed)
    out = _resolve(args, args.out)
    paths = P.generate_world(cfg, out, workers=args.workers)
    _snapshot(cfg, out, "gen-world")
    for name, path in paths.items():
        print(f"{name}: {path}")


def _check_topology(cfg: RunConfig, header: dict):
    if header["topology"] != cfg.topology().to_dict():
        raise ConfigError("checkpoint topology does not match the run configuration")


def cmd_train_stage1(args):
    cfg = _config(args, stage1_steps=args.steps, seed=args.seed, stage="stage1")
    manifest_path = _resolve(args, args.manifest)
    manifest = read_manifest(manifest_path)
    out = _resolve(args, args.out)
    _, result = P.train_stage1(cfg, manifest, manifest_path.parent, out, log_every=args.log_every)
    _snapshot(cfg, out, out.stem)
    first, last = result.smoothed()
    print(f"stage1: {out} loss {first:.4f} -> {last:.4f}")


def cmd_build_mf_dataset(args):
    cfg = _config(
        args, seed=args.seed, corrupt_fraction=args.corrupt_fraction, clean_mode=_bool(args.clean), sample_steps=args.steps, stage="mf-dataset"
    )
    src_path = _resolve(args, args.manifest)
    source = read_manifest(src_path)
    ckpt = _resolve(args, args.checkpoint)
    model, header = P.load_model(ckpt)
    if header["lineage"].get("world") != source.lineage.get("world"):
        raise ConfigError("stage-I checkpoint and source manifest come from different worlds")
    out = _resolve(args, args.out)
    m = P.generate_mf_dataset(model, source, src_path.parent, cfg, out, stage1_id=P.checkpoint_id(ckpt), workers=args.workers)
    path = m.write(out / "manifest.jsonl")
    _snapshot(cfg, out, "build-mf-dataset")
    print(f"mask-free dataset: {path} {json.dumps(m.counts())}")


def cmd_augment_wild(args):
    cfg = _config(args, wild_ratio=args.ratio, seed=args.seed, stage="augment-wild")
    src_path = _resolve(args, args.manifest)
    source = read_manifest(src_path)
    out = _resolve(args, args.out)
    m = P.augment_in_the_wild(source, src_path.parent, out, ratio=cfg.wild_ratio, seed=cfg.seed)
    path = m.write(out / "manifest.jsonl")
    _snapshot(cfg, out, "augment-wild")
    print(f"in-the-wild dataset: {path} {json.dumps(m.counts())}")


def cmd_train_stage2(args):
    cfg = _config(args, stage2_steps=args.steps, seed=args.seed, freeze_garment_branch=_bool(args.freeze_garment_branch), stage="stage2")
    manifest_path = _resolve(args, args.manifest)
    manifest = read_manifest(manifest_path)
    init = _resolve(args, args.init)
    model, header = P.load_model(init)
    _check_topology(cfg, header)
    if not header["stage"].startswith("stage1"):
        raise ConfigError(f"stage II must start from a stage-I checkpoint, got stage {header['stage']!r}")
    out = _resolve(args, args.out)
    _, result = P.train_stage2(cfg, manifest, manifest_path.parent, model, P.checkpoint_id(init), out, log_every=args.log_every)
    _snapshot(cfg, out, out.stem)
    first, last = result.smoothed()
    print(f"stage2: {out} loss {first:.4f} -> {last:.4f}")


def cmd_infer(args):
    cfg = _config(args, sample_steps=args.steps, seed=args.seed, stage="infer")
    ckpt = _resolve(args, args.checkpoint)
    model, header = P.load_model(ckpt)
    manifest_path = _resolve(args, args.manifest)
    manifest = read_manifest(manifest_path)
    modes = {s["cond"]["mode"] for s in manifest.samples}
    want = "masked" if header["stage"].startswith("stage1") else "maskfree"
    if modes and modes != {want}:
        raise ConfigError(f"{header['stage']} checkpoint expects {want} inputs, manifest holds {sorted(modes)}")
    if header["lineage"].get("world") != manifest.lineage.get("world") and not args.force:
        raise ConfigError("checkpoint and manifest come from different worlds (use --force to override)")
    images = P.infer_manifest(model, manifest, manifest_path.parent, cfg.sample_steps, cfg.seed)
    out = _resolve(args, args.out)
    store = ImageStore(out)
    header_rec = {
        "record": "header",
        "kind": "generated",
        "version": GENERATED_VERSION,
        "canvas": list(manifest.canvas),
        "config_hash": cfg.hash(),
        "lineage": {**manifest.lineage, "checkpoint": P.checkpoint_id(ckpt), "source": str(manifest_path)},
        "n": len(images),
    }
    lines = [json.dumps(header_rec, sort_keys=True)]
    for s, img in zip(manifest.samples, images):
        lines.append(json.dumps({"record": "generated", "id": s["id"], "image": store.put(img)}, sort_keys=True))
    out.mkdir(parents=True, exist_ok=True)
    (out / "generated.jsonl").write_text("\n".join(lines) + "\n")
    _snapshot(cfg, out, "infer")
    print(f"generated {len(images)} images: {out / 'generated.jsonl'}")


def _read_image_list(path: Path):
    """Images plus lineage from either a generated list or a dataset manifest (its targets)."""
    try:
        first = json.loads(path.read_text().splitlines()[0])
    except (OSError, IndexError, json.JSONDecodeError) as exc:
        raise ArtifactIOError(f"cannot read image list {path}") from exc
    store = ImageStore(path.parent)
    if first.get("kind") == "generated":
        rows = [json.loads(x) for x in path.read_text().splitlines()[1:] if x.strip()]
        return [r["id"] for r in rows], [store.get(r["image"]) for r in rows], first["lineage"]
    m = read_manifest(path)
    return [s["id"] for s in m.samples], [store.get(s["target_image"]) for s in m.samples], m.lineage


def cmd_evaluate(args):
    gen_path, tgt_path = _resolve(args, args.generated), _resolve(args, args.targets)
    gen_ids, generated, gen_lineage = _read_image_list(gen_path)
    tgt_ids, targets, tgt_lineage = _read_image_list(tgt_path)
    if gen_lineage.get("world") != tgt_lineage.get("world") and not args.force:
        raise ConfigError("generated and target lists come from different worlds (use --force to override)")
    report = {"generated": str(gen_path), "targets": str(tgt_path), "lineage": gen_lineage}
    do_paired = args.paired or not args.unpaired
    do_unpaired = args.unpaired or not args.paired
    if do_paired:
        if gen_ids != tgt_ids:
            raise ConfigError("paired evaluation needs generated and target lists in the same sample order")
        report["paired"] = metrics.evaluate_paired(metrics.PairedSet(generated, targets))
    if do_unpaired:
        report["unpaired"] = metrics.evaluate_unpaired(metrics.UnpairedSet(generated, targets))
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        out = _resolve(args, args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
    print(text)


def cmd_demo_failures(args):
    """Grid per person: clean / over-masked / leaking masked inputs, plus stage-I outputs if a checkpoint is given."""
    cfg = _config(args, seed=args.seed)
    rng = np.random.default_rng([cfg.seed, 99])
    model = P.load_model(_resolve(args, args.checkpoint))[0] if args.checkpoint else None
    rows = []
    for r in range(args.rows):
        person, garment = sw.sample_person(rng), sw.sample_garment(rng)
        target = sw.sample_garment(rng, avoid_hue_bucket=sw.hue_bucket(garment.base_color))
        scene = sw.render_scene(person, garment, sw.BackgroundSpec(), cfg.canvas)
        base = sw.agnostic_mask(person, cfg.canvas)
        masks = [base, sw.corrupt_mask(base, "overmask", args.magnitude, r), sw.corrupt_mask(base, "leak", args.magnitude, r)]
        row = [scene.image] + [P.masked_person(scene.image, m) for m in masks]
        if model is not None:
            for m in masks:
                row.append(P.infer(model, scene.image, target, cfg.sample_steps, seed=r, mode="masked", mask=m, pose_map=scene.pose_map))
        rows.append(np.concatenate(row, axis=1))
    grid = np.concatenate(rows, axis=0)
    out = _resolve(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(image_to_png(grid))
    print(f"failure-mode grid ({args.rows} rows; columns: person, clean mask, over-mask, leak"
          + (", then stage-I outputs for each" if model is not None else "") + f"): {out}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfviton", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", default=".", help="root for all relative paths")
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (wins over --config)")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", parents=[common], help="render the synthetic masked dataset")
    p.add_argument("--n", type=int, help="training samples")
    p.add_argument("--n-test", type=int)
    p.add_argument("--out", default="world")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("train-stage1", parents=[common], help="mask-based training")
    p.add_argument("--manifest", default="world/train.jsonl")
    p.add_argument("--out", default="ckpt/stage1.ckpt")
    p.add_argument("--steps", type=int)
    p.add_argument("--log-every", type=int, default=250)
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("build-mf-dataset", parents=[common], help="stage-I synthesis of mask-free pairs (OFI)")
    p.add_argument("--checkpoint", default="ckpt/stage1.ckpt")
    p.add_argument("--manifest", default="world/train.jsonl")
    p.add_argument("--out", default="mf")
    p.add_argument("--clean", action="store_true", default=None, help="oracle conditionals (the w/o-OFI baseline)")
    p.add_argument("--corrupt-fraction", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_build_mf_dataset)

    p = sub.add_parser("augment-wild", parents=[common], help="procedural backgrounds with the altered-background ratio")
    p.add_argument("--manifest", default="mf/manifest.jsonl")
    p.add_argument("--out", default="wild")
    p.add_argument("--ratio", type=float)
    p.set_defaults(func=cmd_augment_wild)

    p = sub.add_parser("train-stage2", parents=[common], help="mask-free fine-tuning")
    p.add_argument("--manifest", default="wild/manifest.jsonl")
    p.add_argument("--init", default="ckpt/stage1.ckpt")
    p.add_argument("--out", default="ckpt/stage2.ckpt")
    p.add_argument("--steps", type=int)
    p.add_argument("--freeze-garment-branch", action="store_true", default=None)
    p.add_argument("--log-every", type=int, default=250)
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("infer", parents=[common], help="sample try-on images for every manifest entry")
    p.add_argument("--checkpoint", default="ckpt/stage2.ckpt")
    p.add_argument("--manifest", default="world/test_maskfree.jsonl")
    p.add_argument("--out", default="generated")
    p.add_argument("--steps", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", parents=[common], help="paired / unpaired metrics report")
    p.add_argument("--generated", default="generated/generated.jsonl")
    p.add_argument("--targets", default="world/test_maskfree.jsonl")
    p.add_argument("--paired", action="store_true")
    p.add_argument("--unpaired", action="store_true")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("demo-failures", parents=[common], help="over-masking / mask-leakage comparison grid")
    p.add_argument("--out", default="demo_failures.png")
    p.add_argument("--checkpoint", help="stage-I checkpoint; adds its outputs for every mask")
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--magnitude", type=int, default=4)
    p.set_defaults(func=cmd_demo_failures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except MFVitonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ArtifactIOError.exit_code
    return 0


def dispatch(argv) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
