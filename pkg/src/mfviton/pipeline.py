"""Two-stage orchestration: mask-based training, mask-free dataset synthesis,
in-the-wild augmentation, mask-free fine-tuning and inference."""
from __future__ import annotations

import copy
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import latentcodec, synthworld as sw
from .config import RunConfig
from .errors import ConfigError, DivergenceError
from .flowmatch import cfm_loss, euler_sample, seeded_noise
from .storage import DatasetManifest, ImageStore, load_checkpoint, read_manifest, save_checkpoint, sha256_bytes
from .tryonnet import (
    Conditioning,
    ContextBundle,
    MFVitonModel,
    build_maskfree_context,
    build_masked_context,
    masked_context,
    downsample_mask,
    image_to_tensor,
    masked_person,
    to_nchw,
    to_nhwc,
)

log = logging.getLogger(__name__)

MAX_SKIP_FRACTION = 0.05

# stream ids for seeded sub-generators: np.random.default_rng([seed, STREAM, index])
_WORLD, _TEST, _CORRUPT, _WILD_PERM, _WILD_BG, _WILD_ALT, _SAMPLER, _TEST_BG = range(1, 9)


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def _sample_seed(*key) -> int:
    return int(_rng(*key).integers(0, 2**31 - 1))


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers, initializer=torch.set_num_threads, initargs=(1,)) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# synthetic world


def world_id(cfg: RunConfig) -> str:
    key = f"{cfg.seed}|{cfg.canvas}|{cfg.n_train}|{cfg.n_test}"
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def _specs_dict(**specs) -> dict:
    return {k: sw.spec_to_dict(v) for k, v in specs.items()}


def _world_sample(args):
    seed, stream, i, canvas = args
    rng = _rng(seed, stream, i)
    person = sw.sample_person(rng)
    garment = sw.sample_garment(rng)
    alt = sw.sample_garment(rng, avoid_hue_bucket=sw.hue_bucket(garment.base_color))
    studio = sw.BackgroundSpec()
    scene = sw.render_scene(person, garment, studio, canvas)
    mask = sw.agnostic_mask(person, canvas)
    wild = sw.sample_background(_rng(seed, _TEST_BG, stream, i))
    return {
        "id": f"{'train' if stream == _WORLD else 'test'}-{i:05d}",
        "images": {
            "target_image": scene.image,
            "person_agnostic": masked_person(scene.image, mask),
            "mask": mask,
            "pose": scene.pose_map,
            "garment_product": sw.render_garment_product(garment, canvas),
            "garment_mask": scene.garment_mask,
            "background_mask": scene.background_mask,
        },
        "prompt": sw.prompt_tokens(garment, "masked"),
        "seeds": {"sample": [seed, stream, i]},
        "specs": _specs_dict(person=person, garment=garment, alt_garment=alt, background=studio, wild_background=wild),
    }


def _masked_record(store: ImageStore, item: dict) -> dict:
    paths = {k: store.put(v) for k, v in item["images"].items()}
    return {
        "id": item["id"],
        "target_image": paths["target_image"],
        "cond": {"mode": "masked", "person_agnostic": paths["person_agnostic"], "mask": paths["mask"], "pose": paths["pose"]},
        "garment_product": paths["garment_product"],
        "garment_mask": paths["garment_mask"],
        "background_mask": paths["background_mask"],
        "prompt": item["prompt"],
        "provenance": "oracle_render",
        "background_altered": False,
        "seeds": item["seeds"],
        "specs": item["specs"],
    }


def generate_world(cfg: RunConfig, out_dir: Path, workers: int = 1) -> dict[str, Path]:
    """Render the masked train/test splits plus an oracle mask-free test split.

    Writes ``train.jsonl``, ``test.jsonl`` and ``test_maskfree.jsonl`` (persons
    wearing the alternate garment on procedural backgrounds as conditionals).
    """
    out_dir = Path(out_dir)
    store = ImageStore(out_dir)
    wid = world_id(cfg)
    paths = {}
    for split, stream, n in (("train", _WORLD, cfg.n_train), ("test", _TEST, cfg.n_test)):
        items = _map(_world_sample, [(cfg.seed, stream, i, cfg.canvas) for i in range(n)], workers)
        samples = [_masked_record(store, it) for it in items]
        m = DatasetManifest(samples, split=split, canvas=cfg.canvas, config_hash=cfg.hash(), lineage={"world": wid})
        paths[split] = m.write(out_dir / f"{split}.jsonl")
        if split == "test":
            mf = [_oracle_maskfree_record(store, s, cfg.canvas) for s in samples]
            m = DatasetManifest(mf, split="test", canvas=cfg.canvas, config_hash=cfg.hash(), lineage={"world": wid})
            paths["test_maskfree"] = m.write(out_dir / "test_maskfree.jsonl")
    return paths


def sample_specs(sample: dict) -> dict:
    readers = {
        "person": sw.person_from_dict,
        "garment": sw.garment_from_dict,
        "alt_garment": sw.garment_from_dict,
        "cond_garment": sw.garment_from_dict,
        "background": sw.background_from_dict,
        "cond_background": sw.background_from_dict,
        "wild_background": sw.background_from_dict,
    }
    return {k: readers[k](v) for k, v in sample["specs"].items()}


def _oracle_maskfree_record(store: ImageStore, sample: dict, canvas) -> dict:
    specs = sample_specs(sample)
    p, a, b, bg = specs["person"], specs["garment"], specs["alt_garment"], specs["wild_background"]
    target = sw.render_scene(p, a, bg, canvas)
    cond = sw.render_scene(p, b, bg, canvas)
    return {
        "id": sample["id"],
        "target_image": store.put(target.image),
        "cond": {"mode": "maskfree", "cond_image": store.put(cond.image)},
        "garment_product": sample["garment_product"],
        "garment_mask": sample["garment_mask"],
        "background_mask": sample["background_mask"],
        "prompt": sw.prompt_tokens(a, "maskfree"),
        "provenance": "oracle_render",
        "background_altered": False,
        "seeds": sample["seeds"],
        "specs": _specs_dict(person=p, garment=a, cond_garment=b, background=bg, cond_background=bg),
    }


# ---------------------------------------------------------------------------
# tensors for training


@dataclass
class TrainingArrays:
    x0: torch.Tensor
    context: torch.Tensor
    prompt: torch.Tensor
    ref_prompt: torch.Tensor
    garment_latent: torch.Tensor
    garment_image: torch.Tensor

    def __len__(self):
        return self.x0.shape[0]

    def batch(self, idx) -> tuple[torch.Tensor, Conditioning]:
        cond = Conditioning(
            self.context[idx], self.prompt[idx], self.ref_prompt[idx], self.garment_latent[idx], self.garment_image[idx]
        )
        return self.x0[idx], cond


def sample_context(store: ImageStore, sample: dict) -> ContextBundle:
    cond = sample["cond"]
    if cond["mode"] == "maskfree":
        return build_maskfree_context(store.get(cond["cond_image"]))
    # The gray fill is off the 8-bit grid, so re-apply it after the PNG round trip.
    full_mask = store.get(cond["mask"])
    person = latentcodec.encode(masked_person(store.get(cond["person_agnostic"]), full_mask))
    pose = latentcodec.encode(store.get(cond["pose"]))
    return ContextBundle("masked", np.concatenate([person, downsample_mask(full_mask)[..., None], pose], axis=-1))


def load_arrays(manifest: DatasetManifest, root: Path, mode: str | None = None) -> TrainingArrays:
    store = ImageStore(root)
    if mode is not None:
        bad = [s["id"] for s in manifest.samples if s["cond"]["mode"] != mode]
        if bad:
            raise ConfigError(f"expected only {mode} samples; {len(bad)} differ (first: {bad[0]})")
    targets = np.stack([store.get(s["target_image"]) for s in manifest.samples])
    contexts = np.stack([sample_context(store, s).channels for s in manifest.samples])
    garments = np.stack([store.get(s["garment_product"]) for s in manifest.samples])
    prompts = np.array([s["prompt"] for s in manifest.samples])
    return TrainingArrays(
        x0=to_nchw(latentcodec.encode(targets)),
        context=to_nchw(contexts),
        prompt=torch.as_tensor(prompts, dtype=torch.long),
        ref_prompt=torch.as_tensor(prompts[:, 1:], dtype=torch.long),
        garment_latent=to_nchw(latentcodec.encode(garments)),
        garment_image=image_to_tensor(garments),
    )


# ---------------------------------------------------------------------------
# training


def build_model(cfg: RunConfig, seed: int | None = None) -> MFVitonModel:
    torch.manual_seed(cfg.seed if seed is None else seed)
    return MFVitonModel(cfg.topology())


def trainable_parameters(model: MFVitonModel, freeze_garment_branch: bool = False):
    params = []
    for name, p in model.named_parameters():
        if freeze_garment_branch and name.startswith(("reference.", "adapter.")):
            p.requires_grad_(False)
            continue
        p.requires_grad_(True)
        params.append(p)
    return params


def _make_optimizer(cfg: RunConfig, params):
    if cfg.optimizer == "adamw":
        return torch.optim.AdamW(params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay, foreach=True)
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=cfg.lr, momentum=0.9)
    raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")


@dataclass
class TrainResult:
    losses: list[float]
    checkpoint: Path | None = None

    def smoothed(self, window: int = 50) -> tuple[float, float]:
        """Mean loss over the first and the last ``window`` steps."""
        w = min(window, len(self.losses))
        return float(np.mean(self.losses[:w])), float(np.mean(self.losses[-w:]))


def train(
    model: MFVitonModel,
    data: TrainingArrays,
    cfg: RunConfig,
    steps: int,
    seed: int,
    freeze_garment_branch: bool = False,
    log_every: int = 250,
    on_divergence=None,
) -> TrainResult:
    """AdamW with linear warmup over uniformly resampled minibatches.

    Batch indices, timesteps and noise all come from one seeded generator,
    so two runs with the same inputs produce identical loss sequences.
    """
    params = trainable_parameters(model, freeze_garment_branch)
    opt = _make_optimizer(cfg, params)
    warm = max(cfg.warmup_steps, 1)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: min(1.0, (s + 1) / warm))
    g = torch.Generator().manual_seed(seed)
    flow = cfg.flow()
    losses = []
    last_good = copy.deepcopy(model.state_dict())
    model.train()
    for step in range(steps):
        idx = torch.randint(len(data), (cfg.batch_size,), generator=g)
        x0, cond = data.batch(idx)
        try:
            loss = cfm_loss(model.velocity, x0, cond, g, flow)
        except DivergenceError:
            model.load_state_dict(last_good)
            if on_divergence is not None:
                on_divergence(model, step)
            raise
        opt.zero_grad(set_to_none=True)
        loss.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        opt.step()
        sched.step()
        losses.append(float(loss.detach()))
        if step % 100 == 99:
            last_good = copy.deepcopy(model.state_dict())
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d/%d loss %.5f", step + 1, steps, float(np.mean(losses[-log_every:])))
    model.eval()
    return TrainResult(losses)


def checkpoint_id(path: Path) -> str:
    return sha256_bytes(Path(path).read_bytes())[:16]


def save_model(model: MFVitonModel, path: Path, cfg: RunConfig, stage: str, lineage: dict) -> Path:
    header = {"stage": stage, "config_hash": cfg.hash(), "lineage": lineage, "topology": model.topo.to_dict()}
    return save_checkpoint(path, model.state_dict(), header)


def load_model(path: Path) -> tuple[MFVitonModel, dict]:
    from .garmentnet import Topology

    state, header = load_checkpoint(path)
    model = MFVitonModel(Topology.from_dict(header["topology"]))
    model.load_state_dict(state)
    model.eval()
    return model, header


def _train_stage(cfg, manifest, root, out, stage, mode, init=None, lineage=None, log_every=250):
    data = load_arrays(manifest, root, mode=mode)
    model = init if init is not None else build_model(cfg)
    steps = cfg.stage1_steps if stage == "stage1" else cfg.stage2_steps
    lineage = {**manifest.lineage, **(lineage or {})}

    def dump(m, step):
        if out is not None:
            save_model(m, Path(out).with_suffix(".diverged.ckpt"), cfg, f"{stage}-diverged@{step}", lineage)

    result = train(
        model, data, cfg, steps, seed=cfg.seed + (11 if stage == "stage1" else 23),
        freeze_garment_branch=cfg.freeze_garment_branch and stage == "stage2", log_every=log_every, on_divergence=dump,
    )
    if out is not None:
        result.checkpoint = save_model(model, out, cfg, stage, lineage)
        np.savetxt(Path(out).with_suffix(".loss.txt"), np.asarray(result.losses), fmt="%.8e")
    return model, result


def train_stage1(cfg: RunConfig, manifest: DatasetManifest, root: Path, out: Path | None = None, log_every: int = 250):
    """Mask-based training on masked-mode samples; returns ``(model, TrainResult)``."""
    return _train_stage(cfg, manifest, root, out, "stage1", "masked", log_every=log_every)


def train_stage2(
    cfg: RunConfig, manifest: DatasetManifest, root: Path, init: MFVitonModel, init_id: str | None = None,
    out: Path | None = None, log_every: int = 250,
):
    """Mask-free fine-tuning starting from stage-I weights (no layer surgery).

    ``init_id`` identifies the stage-I checkpoint; it must match the one that
    generated the mask-free dataset, when the manifest records it.
    """
    want = manifest.lineage.get("stage1")
    if init_id is not None and want is not None and init_id != want:
        raise ConfigError(f"mask-free dataset was generated by stage-I checkpoint {want}, not {init_id}")
    model = copy.deepcopy(init)
    lineage = {"stage1": init_id} if init_id is not None else None
    return _train_stage(cfg, manifest, root, out, "stage2", "maskfree", init=model, lineage=lineage, log_every=log_every)


# ---------------------------------------------------------------------------
# sampling


def sample_images(model: MFVitonModel, cond: Conditioning, seeds, steps: int) -> np.ndarray:
    """Euler-sample a batch and decode to clipped, 8-bit-quantized images."""
    cond = model.prepare(cond)
    noise = seeded_noise((model.topo.latent_channels, *cond.context.shape[2:]), seeds)
    z = euler_sample(model.velocity, cond, steps, noise)
    return sw.quantize(latentcodec.decode(to_nhwc(z)))


def conditioning_for(contexts, garments, mode: str, canvas=sw.CANVAS) -> Conditioning:
    """Batch contexts with garment specs (product shot, prompt tokens)."""
    images = np.stack([sw.render_garment_product(g, canvas) for g in garments])
    prompts = np.array([sw.prompt_tokens(g, mode) for g in garments])
    ctx = to_nchw(np.stack([c.channels for c in contexts]))
    return Conditioning(
        context=ctx,
        prompt=torch.as_tensor(prompts, dtype=torch.long),
        ref_prompt=torch.as_tensor(prompts[:, 1:], dtype=torch.long),
        garment_latent=to_nchw(latentcodec.encode(images)),
        garment_image=image_to_tensor(images),
    )


def infer(
    model: MFVitonModel,
    person_image: np.ndarray,
    garment: sw.GarmentSpec,
    steps: int = 20,
    seed: int = 0,
    mode: str = "maskfree",
    mask: np.ndarray | None = None,
    pose_map: np.ndarray | None = None,
) -> np.ndarray:
    """Try ``garment`` on the person in ``person_image``.

    Mask-free mode needs only the person image; masked mode additionally needs
    the try-on mask and pose map.
    """
    if mode == "maskfree":
        if mask is not None:
            raise ConfigError("mask-free inference takes no mask")
        ctx = build_maskfree_context(person_image)
    elif mode == "masked":
        if mask is None or pose_map is None:
            raise ConfigError("masked inference requires a mask and a pose map")
        ctx = masked_context(person_image, mask, pose_map)
    else:
        raise ConfigError(f"unknown inference mode {mode!r}")
    cond = conditioning_for([ctx], [garment], mode, person_image.shape[:2])
    return sample_images(model, cond, [seed], steps)[0]


def infer_manifest(model: MFVitonModel, manifest: DatasetManifest, root: Path, steps: int, seed: int, chunk: int = 32,
                   garment_key: str = "garment") -> np.ndarray:
    """Batched inference over every sample of a manifest, in manifest order."""
    store = ImageStore(root)
    mode = manifest.samples[0]["cond"]["mode"] if manifest.samples else "maskfree"
    out = []
    for start in range(0, len(manifest.samples), chunk):
        part = manifest.samples[start : start + chunk]
        contexts = [sample_context(store, s) for s in part]
        garments = [sample_specs(s)[garment_key] for s in part]
        cond = conditioning_for(contexts, garments, mode, manifest.canvas)
        seeds = [_sample_seed(seed, _SAMPLER, start + j) for j in range(len(part))]
        out.append(sample_images(model, cond, seeds, steps))
    return np.concatenate(out) if out else np.zeros((0,) + tuple(manifest.canvas) + (3,), np.float32)


# ---------------------------------------------------------------------------
# mask-free dataset synthesis


def _corruption_plan(cfg: RunConfig, index: int) -> dict:
    rng = _rng(cfg.seed, _CORRUPT, index)
    corrupt = bool(rng.random() < cfg.corrupt_fraction)
    mode = ("overmask", "leak")[int(rng.integers(2))]
    magnitude = int(rng.choice(cfg.corrupt_magnitudes))
    return {"corrupt": corrupt, "mode": mode, "magnitude": magnitude, "mask_seed": int(rng.integers(0, 2**31 - 1))}


def _mf_chunk(args):
    """Stage-I generation for one chunk of samples; pure given its arguments."""
    state, topo, cfg, specs_list, indices = args
    from .garmentnet import Topology

    model = MFVitonModel(Topology.from_dict(topo))
    model.load_state_dict(state)
    model.eval()
    contexts, garments, plans, keep = [], [], [], []
    for specs, i in zip(specs_list, indices):
        p, a = specs["person"], specs["garment"]
        scene = sw.render_scene(p, a, sw.BackgroundSpec(), cfg.canvas)
        plan = _corruption_plan(cfg, i)
        mask = sw.agnostic_mask(p, cfg.canvas)
        if plan["corrupt"]:
            mask = sw.corrupt_mask(mask, plan["mode"], plan["magnitude"], plan["mask_seed"])
        contexts.append(build_masked_context(scene, mask))
        keep.append((scene.image, mask))
        garments.append(specs["alt_garment"])
        plans.append(plan)
    seeds = [_sample_seed(cfg.seed, _SAMPLER, 10_000_000 + i) for i in indices]
    cond = conditioning_for(contexts, garments, "masked", cfg.canvas)
    try:
        images = list(sample_images(model, cond, seeds, cfg.sample_steps))
    except DivergenceError:
        images = []
        for k in range(len(indices)):
            one = conditioning_for([contexts[k]], [garments[k]], "masked", cfg.canvas)
            try:
                images.append(sample_images(model, one, [seeds[k]], cfg.sample_steps)[0])
            except DivergenceError as exc:
                log.warning("sample %d skipped: %s", indices[k], exc)
                images.append(None)
    # Paste the known pixels back outside the (possibly corrupted) mask, as an
    # inpainting pipeline does; stage-I artifacts stay inside the mask.
    images = [
        None if img is None else sw.quantize(np.where(np.asarray(mask, bool)[..., None], img, source))
        for img, (source, mask) in zip(images, keep)
    ]
    return list(zip(images, plans, seeds))


def generate_mf_dataset(
    model: MFVitonModel | None,
    source: DatasetManifest,
    source_root: Path,
    cfg: RunConfig,
    out_dir: Path,
    stage1_id: str | None = None,
    workers: int = 1,
) -> DatasetManifest:
    """Build mask-free pairs (cond = person in garment B, target = person in garment A).

    OFI mode takes the conditional from stage-I sampling with the (possibly
    corrupted) try-on mask; clean mode renders it with the oracle instead.
    """
    out_dir = Path(out_dir)
    src_store, store = ImageStore(source_root), ImageStore(out_dir)
    all_specs = [sample_specs(s) for s in source.samples]
    n = len(all_specs)
    if cfg.clean_mode:
        results = [(sw.render_scene(sp["person"], sp["alt_garment"], sw.BackgroundSpec(), cfg.canvas).image, None, None) for sp in all_specs]
    else:
        if model is None:
            raise ConfigError("OFI generation needs a stage-I model")
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        jobs = []
        for start in range(0, n, cfg.gen_chunk):
            idx = list(range(start, min(start + cfg.gen_chunk, n)))
            jobs.append((state, model.topo.to_dict(), cfg, [all_specs[i] for i in idx], idx))
        results = [r for chunk in _map(_mf_chunk, jobs, workers) for r in chunk]
    samples, skipped = [], []
    for i, (sample, specs, (cond_img, plan, seed)) in enumerate(zip(source.samples, all_specs, results)):
        if cond_img is None:
            skipped.append(sample["id"])
            continue
        if cfg.clean_mode:
            provenance = "oracle_render"
        else:
            provenance = "stage1_output_corrupted_mask" if plan["corrupt"] else "stage1_output"
        garment = specs["garment"]
        seeds = dict(sample["seeds"])
        if plan is not None:
            seeds.update({"sampler": seed, "corruption": plan})
        samples.append(
            {
                "id": sample["id"],
                "target_image": store.put(src_store.get(sample["target_image"])),
                "cond": {"mode": "maskfree", "cond_image": store.put(cond_img)},
                "garment_product": store.put(src_store.get(sample["garment_product"])),
                "garment_mask": store.put(src_store.get(sample["garment_mask"])),
                "background_mask": store.put(src_store.get(sample["background_mask"])),
                "prompt": sw.prompt_tokens(garment, "maskfree"),
                "provenance": provenance,
                "background_altered": False,
                "seeds": seeds,
                "specs": _specs_dict(
                    person=specs["person"], garment=garment, cond_garment=specs["alt_garment"],
                    background=specs["background"], cond_background=specs["background"],
                ),
            }
        )
    if len(skipped) > MAX_SKIP_FRACTION * max(n, 1):
        raise DivergenceError(f"{len(skipped)} of {n} samples diverged during generation (limit {MAX_SKIP_FRACTION:.0%})")
    lineage = {**source.lineage, "ofi": not cfg.clean_mode}
    if stage1_id is not None and not cfg.clean_mode:
        lineage["stage1"] = stage1_id
    check_anti_copy(samples)
    return DatasetManifest(samples, split=source.split, canvas=cfg.canvas, config_hash=cfg.hash(), lineage=lineage)


def check_anti_copy(samples) -> None:
    for s in samples:
        if s["cond"]["mode"] == "maskfree" and s["specs"]["cond_garment"] == s["specs"]["garment"]:
            raise ConfigError(f"sample {s['id']} pairs a conditional with its own target garment")


# ---------------------------------------------------------------------------
# in-the-wild augmentation


def altered_indices(n: int, ratio: float, seed: int) -> set[int]:
    k = int(np.floor(ratio * n + 0.5))
    return set(int(i) for i in _rng(seed, _WILD_PERM).permutation(n)[:k])


def augment_in_the_wild(
    manifest: DatasetManifest, root: Path, out_dir: Path, ratio: float = 0.2, seed: int = 0
) -> DatasetManifest:
    """Composite every pair onto procedural backgrounds.

    Targets get background A. Conditionals get the same background A, except
    for exactly ``round(ratio * N)`` seeded-permutation picks, which get an
    independent background B.
    """
    src, store = ImageStore(root), ImageStore(out_dir)
    canvas = tuple(manifest.canvas)
    altered = altered_indices(len(manifest.samples), ratio, seed)
    samples = []
    for i, s in enumerate(manifest.samples):
        if "background_mask" not in s:
            raise ConfigError(f"sample {s['id']} has no background mask")
        if s["cond"]["mode"] != "maskfree":
            raise ConfigError("in-the-wild augmentation applies to mask-free pairs")
        bmask = src.get(s["background_mask"])
        bg = sw.sample_background(_rng(seed, _WILD_BG, i))
        cond_bg = sw.sample_background(_rng(seed, _WILD_ALT, i)) if i in altered else bg
        target = sw.composite(src.get(s["target_image"]), sw.render_background(bg, canvas), bmask)
        cond = sw.composite(src.get(s["cond"]["cond_image"]), sw.render_background(cond_bg, canvas), bmask)
        rec = copy.deepcopy(s)
        rec["target_image"] = store.put(target)
        rec["cond"] = {"mode": "maskfree", "cond_image": store.put(cond)}
        for key in ("garment_product", "garment_mask", "background_mask"):
            rec[key] = store.put(src.get(s[key]))
        rec["background_altered"] = i in altered
        rec["specs"]["background"] = sw.spec_to_dict(bg)
        rec["specs"]["cond_background"] = sw.spec_to_dict(cond_bg)
        rec["seeds"] = {**s["seeds"], "wild": [seed, i]}
        samples.append(rec)
    lineage = {**manifest.lineage, "wild_ratio": ratio}
    return DatasetManifest(samples, split=manifest.split, canvas=canvas, config_hash=manifest.config_hash, lineage=lineage)

