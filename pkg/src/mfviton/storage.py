"""On-disk formats: PNG image store, dataset manifests and checkpoints.

Checkpoint byte layout (all integers little-endian)::

    offset 0   8 bytes   magic b"MFVTCKPT"
    offset 8   uint32    format version (1)
    offset 12  uint64    header length N in bytes
    offset 20  N bytes   UTF-8 JSON header
    offset 20+N          tensor blobs, float32 little-endian, C order

The JSON header carries ``topology``, ``config_hash``, ``stage``, ``lineage``
and a ``tensors`` list of ``{name, shape, offset, nbytes}`` where ``offset`` is
relative to the start of the blob section. Tensors appear in state-dict order.

A manifest is a JSON-lines file: one ``header`` record followed by one
``sample`` record per training pair. Image paths are relative to the manifest
directory and point into ``images/<sha256>.png``, named by the SHA-256 of the
file bytes.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ArtifactIOError, ConfigError

MAGIC = b"MFVTCKPT"
FORMAT_VERSION = 1
MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# images


def image_to_png(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    buf = io.BytesIO()
    if image.ndim == 2:
        Image.fromarray(image.astype(bool)).convert("1").save(buf, format="PNG")
    else:
        arr = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_to_image(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        if im.mode == "1":
            return np.asarray(im, dtype=np.uint8)
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return (arr.astype(np.float64) / 255.0).astype(np.float32)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class ImageStore:
    """Content-addressed PNG directory rooted next to a manifest."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def put(self, image: np.ndarray) -> str:
        data = image_to_png(image)
        digest = sha256_bytes(data)
        rel = f"images/{digest}.png"
        path = self.root / rel
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(data)
            tmp.replace(path)
        return rel

    def get(self, rel: str, verify: bool = False) -> np.ndarray:
        path = self.root / rel
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise ArtifactIOError(f"missing image {path}") from exc
        if verify and sha256_bytes(data) != Path(rel).stem:
            raise ArtifactIOError(f"hash mismatch for {path}")
        return png_to_image(data)


def save_scene(scene, directory: Path, seeds: dict | None = None) -> dict:
    """Persist a scene: RGB PNGs, 1-bit mask PNGs and a ``scene.json`` sidecar."""
    from .synthworld import spec_to_dict

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {
        "image": scene.image,
        "pose_map": scene.pose_map,
        "garment_mask": scene.garment_mask,
        "background_mask": scene.background_mask,
    }
    for name, arr in files.items():
        (directory / f"{name}.png").write_bytes(image_to_png(arr))
    person, garment, background = scene.specs
    record = {
        "person": spec_to_dict(person),
        "garment": spec_to_dict(garment),
        "background": spec_to_dict(background),
        "seeds": seeds or {},
    }
    (directory / "scene.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    return record


def load_scene(directory: Path):
    from .synthworld import SceneRender, background_from_dict, garment_from_dict, person_from_dict

    directory = Path(directory)
    record = json.loads((directory / "scene.json").read_text())
    arrays = {n: png_to_image((directory / f"{n}.png").read_bytes()) for n in ("image", "pose_map", "garment_mask", "background_mask")}
    specs = (person_from_dict(record["person"]), garment_from_dict(record["garment"]), background_from_dict(record["background"]))
    return SceneRender(specs=specs, **arrays)


# ---------------------------------------------------------------------------
# manifests

PROVENANCES = ("oracle_render", "stage1_output", "stage1_output_corrupted_mask")


@dataclass
class DatasetManifest:
    samples: list[dict]
    split: str = "train"
    canvas: tuple[int, int] = (64, 48)
    config_hash: str = ""
    lineage: dict = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def counts(self) -> dict:
        prov = Counter(s["provenance"] for s in self.samples)
        modes = Counter(s["cond"]["mode"] for s in self.samples)
        return {
            "n": len(self.samples),
            "provenance": {k: prov.get(k, 0) for k in PROVENANCES},
            "mode": dict(sorted(modes.items())),
            "background_altered": sum(bool(s.get("background_altered")) for s in self.samples),
        }

    def header(self) -> dict:
        return {
            "record": "header",
            "version": self.version,
            "canvas": list(self.canvas),
            "split": self.split,
            "config_hash": self.config_hash,
            "lineage": self.lineage,
            "counts": self.counts(),
        }

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps({"record": "sample", **s}, sort_keys=True) for s in self.samples]
        tmp = path.with_suffix(".tmp")
        tmp.write_text("\n".join(lines) + "\n")
        tmp.replace(path)
        return path


def read_manifest(path: Path, verify: bool = False) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read manifest {path}") from exc
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not records or records[0].get("record") != "header":
        raise ArtifactIOError(f"{path} has no manifest header")
    head = records[0]
    samples = []
    for r in records[1:]:
        r = dict(r)
        r.pop("record", None)
        samples.append(r)
    m = DatasetManifest(
        samples=samples,
        split=head["split"],
        canvas=tuple(head["canvas"]),
        config_hash=head["config_hash"],
        lineage=head.get("lineage", {}),
        version=head["version"],
    )
    if head["counts"] != m.counts():
        raise ConfigError(f"{path}: header counts {head['counts']} disagree with the sample records {m.counts()}")
    if verify:
        store = ImageStore(path.parent)
        for s in samples:
            for rel in sample_paths(s):
                store.get(rel, verify=True)
    return m


def sample_paths(sample: dict) -> list[str]:
    paths = [sample["target_image"], sample["garment_product"]]
    paths += [v for k, v in sample["cond"].items() if k != "mode"]
    paths += [sample[k] for k in ("garment_mask", "background_mask") if k in sample]
    return paths


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: Path, state: dict[str, torch.Tensor], header: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for name, tensor in state.items():
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy().astype("<f4"))
        data = arr.tobytes(order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    head = json.dumps({**header, "tensors": entries}, sort_keys=True).encode()
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(head)))
        fh.write(head)
        for data in blobs:
            fh.write(data)
    tmp.replace(path)
    return path


def read_checkpoint_header(path: Path) -> dict:
    return load_checkpoint(path, header_only=True)[1]


def load_checkpoint(path: Path, header_only: bool = False):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read checkpoint {path}") from exc
    if raw[:8] != MAGIC:
        raise ArtifactIOError(f"{path} is not a checkpoint (bad magic)")
    version, n = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise ArtifactIOError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[20 : 20 + n].decode())
    if header_only:
        return None, header
    base = 20 + n
    state = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        arr = np.frombuffer(raw, dtype="<f4", count=e["nbytes"] // 4, offset=start).reshape(e["shape"])
        state[e["name"]] = torch.from_numpy(arr.astype(np.float32))
    return state, header
