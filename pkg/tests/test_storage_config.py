import io
import json
import struct

import numpy as np
import pytest
import torch
from PIL import Image

from mfviton import synthworld as sw
from mfviton.config import RunConfig, load_config, parse_config_text
from mfviton.errors import ArtifactIOError, ConfigError
from mfviton.storage import (
    MAGIC,
    DatasetManifest,
    ImageStore,
    image_to_png,
    load_checkpoint,
    load_scene,
    png_to_image,
    read_checkpoint_header,
    read_manifest,
    save_checkpoint,
    save_scene,
)

from conftest import BLUE_STRIPES, PERSON, random_image


# --- images ---------------------------------------------------------------


def test_png_round_trip_on_8bit_grid():
    img = random_image(np.random.default_rng(0))
    assert np.array_equal(png_to_image(image_to_png(img)), img)


def test_mask_png_is_one_bit():
    mask = sw.agnostic_mask(PERSON)
    data = image_to_png(mask)
    assert Image.open(io.BytesIO(data)).mode == "1"
    assert np.array_equal(png_to_image(data), mask)


def test_image_store_content_addressing(tmp_path):
    store = ImageStore(tmp_path)
    img = random_image(np.random.default_rng(1))
    rel = store.put(img)
    assert rel == store.put(img) and rel.startswith("images/")
    assert np.array_equal(store.get(rel, verify=True), img)
    (tmp_path / rel).write_bytes(image_to_png(np.zeros_like(img)))
    with pytest.raises(ArtifactIOError):
        store.get(rel, verify=True)
    with pytest.raises(ArtifactIOError):
        store.get("images/missing.png")


def test_scene_persistence_round_trip(tmp_path):
    scene = sw.render_scene(PERSON, BLUE_STRIPES, sw.sample_background(np.random.default_rng(2)))
    save_scene(scene, tmp_path, seeds={"sample": [0, 1, 2]})
    back = load_scene(tmp_path)
    assert back.specs == scene.specs
    for name in ("image", "pose_map", "garment_mask", "background_mask"):
        assert np.array_equal(getattr(back, name), getattr(scene, name))
    assert json.loads((tmp_path / "scene.json").read_text())["seeds"] == {"sample": [0, 1, 2]}


# --- manifests ------------------------------------------------------------


def fake_samples(n):
    provs = ["oracle_render", "stage1_output", "stage1_output_corrupted_mask"]
    return [
        {
            "id": f"s{i}",
            "target_image": "images/a.png",
            "garment_product": "images/b.png",
            "cond": {"mode": "maskfree", "cond_image": "images/c.png"},
            "provenance": provs[i % 3],
            "background_altered": i % 4 == 0,
        }
        for i in range(n)
    ]


def test_manifest_round_trip_and_counts(tmp_path):
    m = DatasetManifest(fake_samples(7), split="train", config_hash="abc", lineage={"world": "w"})
    path = m.write(tmp_path / "m.jsonl")
    back = read_manifest(path)
    assert back.samples == m.samples and back.lineage == {"world": "w"} and back.canvas == (64, 48)
    c = back.counts()
    assert c["provenance"] == {"oracle_render": 3, "stage1_output": 2, "stage1_output_corrupted_mask": 2}
    assert c["background_altered"] == 2


def test_manifest_count_tampering_detected(tmp_path):
    path = DatasetManifest(fake_samples(4)).write(tmp_path / "m.jsonl")
    lines = path.read_text().splitlines()
    lines.pop()  # drop a sample; header counts no longer agree
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ConfigError):
        read_manifest(path)


def test_manifest_errors(tmp_path):
    with pytest.raises(ArtifactIOError):
        read_manifest(tmp_path / "none.jsonl")
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"record": "sample"}) + "\n")
    with pytest.raises(ArtifactIOError):
        read_manifest(bad)


# --- checkpoints ----------------------------------------------------------


def test_checkpoint_byte_layout(tmp_path):
    state = {"a.weight": torch.arange(6, dtype=torch.float32).reshape(2, 3), "b": torch.tensor([1.5])}
    path = save_checkpoint(tmp_path / "x.ckpt", state, {"stage": "stage1", "config_hash": "h"})
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    version, n = struct.unpack("<IQ", raw[8:20])
    header = json.loads(raw[20 : 20 + n])
    assert version == 1 and header["stage"] == "stage1"
    entry = header["tensors"][0]
    assert entry == {"name": "a.weight", "shape": [2, 3], "offset": 0, "nbytes": 24}
    blob = np.frombuffer(raw, "<f4", count=6, offset=20 + n)
    assert np.array_equal(blob, np.arange(6, dtype=np.float32))
    back, head = load_checkpoint(path)
    assert all(torch.equal(back[k], state[k]) for k in state)
    assert read_checkpoint_header(path)["config_hash"] == "h"


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"NOTACKPT" + bytes(20))
    with pytest.raises(ArtifactIOError):
        load_checkpoint(p)
    with pytest.raises(ArtifactIOError):
        load_checkpoint(tmp_path / "missing.ckpt")


# --- config ---------------------------------------------------------------


def test_config_text_round_trip_and_hash():
    cfg = RunConfig()
    parsed = RunConfig().with_overrides(parse_config_text(cfg.to_text()))
    assert parsed == cfg and parsed.hash() == cfg.hash()
    assert cfg.with_overrides({"stage": "stage2"}).hash() == cfg.hash()
    assert cfg.with_overrides({"lr": "0.002"}).hash() != cfg.hash()


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nseed = 3\nwidths = 16,32,32\nclean_mode = true\n")
    cfg = load_config(path, {"seed": "5"})
    assert cfg.seed == 5 and cfg.widths == (16, 32, 32) and cfg.clean_mode is True
    assert cfg.topology().widths == (16, 32, 32) and cfg.topology().context_channels == 97


@pytest.mark.parametrize("text", ["nonsense line", "unknown_key = 1", "seed = abc", "clean_mode = maybe"])
def test_config_errors(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text + "\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_snapshot_records_hash(tmp_path):
    cfg = RunConfig(seed=9)
    text = cfg.snapshot(tmp_path).read_text()
    assert text.startswith(f"# config_hash = {cfg.hash()}") and "seed = 9" in text
