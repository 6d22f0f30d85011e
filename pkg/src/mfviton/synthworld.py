"""Procedural persons, garments and backgrounds with analytic masks.

Every image produced here is a pure function of its specs (and seed, for the
corruption operators). Pixel values are quantized to the 8-bit grid
(``k / 255`` as float32) so that scenes survive a PNG round trip unchanged.
"""
from __future__ import annotations

import colorsys
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

CANVAS = (64, 48)  # (H, W)
STUDIO_GRAY = 230 / 255
PRODUCT_BACKGROUND = 1.0
MASK_FILL = 0.5

PATTERNS = ("solid", "stripes", "checker", "dots")
SLEEVES = ("short", "long")
MODES = ("masked", "maskfree")
BACKGROUND_KINDS = ("studio_blank", "procedural_scene")
N_GLYPHS = 8
N_HUE_BUCKETS = 8
N_LOGO_BUCKETS = 3  # per axis

# 5x5 logo bitmaps, one string per row.
_GLYPH_ROWS = (
    ("#####", "#...#", "#...#", "#...#", "#####"),  # square
    ("..#..", ".###.", "#####", ".###.", "..#.."),  # diamond
    ("#...#", ".#.#.", "..#..", ".#.#.", "#...#"),  # cross
    ("..#..", "..#..", "#####", "..#..", "..#.."),  # plus
    ("#####", "....#", "...#.", "..#..", ".#..."),  # seven
    ("..#..", ".#.#.", "#...#", "#####", "#...#"),  # letter A
    ("#...#", "##.##", "#.#.#", "#...#", "#...#"),  # letter M
    ("#.#.#", ".#.#.", "#.#.#", ".#.#.", "#.#.#"),  # chequer
)
GLYPHS = tuple(
    np.array([[c == "#" for c in row] for row in rows], dtype=bool) for rows in _GLYPH_ROWS
)

Color = tuple[float, float, float]


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid and return float32."""
    return (np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def _check_rgb(name: str, value) -> Color:
    rgb = tuple(float(v) for v in value)
    if len(rgb) != 3 or not all(0.0 <= v <= 1.0 for v in rgb):
        raise ValueError(f"{name} must be an RGB triple in [0, 1], got {value!r}")
    return rgb


@dataclass(frozen=True)
class PersonSpec:
    body_seed: int
    skin_tone: Color
    hair_color: Color
    arm_angles: tuple[float, float]
    torso_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "skin_tone", _check_rgb("skin_tone", self.skin_tone))
        object.__setattr__(self, "hair_color", _check_rgb("hair_color", self.hair_color))
        angles = tuple(float(a) for a in self.arm_angles)
        if len(angles) != 2 or not all(abs(a) <= math.pi / 3 + 1e-12 for a in angles):
            raise ValueError(f"arm_angles must be two radians in [-pi/3, pi/3], got {self.arm_angles!r}")
        object.__setattr__(self, "arm_angles", angles)
        if not 0.8 <= self.torso_scale <= 1.2:
            raise ValueError(f"torso_scale must lie in [0.8, 1.2], got {self.torso_scale}")


@dataclass(frozen=True)
class GarmentSpec:
    base_color: Color
    pattern: str = "solid"
    pattern_color: Color = (1.0, 1.0, 1.0)
    pattern_period: int = 4
    logo_glyph: int = 0
    logo_position: tuple[float, float] = (0.5, 0.3)
    sleeve: str = "short"

    def __post_init__(self):
        object.__setattr__(self, "base_color", _check_rgb("base_color", self.base_color))
        object.__setattr__(self, "pattern_color", _check_rgb("pattern_color", self.pattern_color))
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if self.sleeve not in SLEEVES:
            raise ValueError(f"unknown sleeve {self.sleeve!r}")
        if int(self.pattern_period) != self.pattern_period or self.pattern_period < 2:
            raise ValueError("pattern_period must be an integer >= 2")
        if not 0 <= self.logo_glyph < N_GLYPHS:
            raise ValueError(f"logo_glyph must be in [0, {N_GLYPHS})")
        pos = tuple(float(v) for v in self.logo_position)
        if len(pos) != 2 or not all(0.1 <= v <= 0.9 for v in pos):
            raise ValueError("logo_position must lie in [0.1, 0.9]^2")
        object.__setattr__(self, "logo_position", pos)


@dataclass(frozen=True)
class BackgroundSpec:
    kind: str = "studio_blank"
    scene_seed: int = 0
    palette: tuple[Color, Color, Color] = ((0.55, 0.7, 0.9), (0.45, 0.4, 0.35), (0.3, 0.5, 0.3))

    def __post_init__(self):
        if self.kind not in BACKGROUND_KINDS:
            raise ValueError(f"unknown background kind {self.kind!r}")
        if len(self.palette) != 3:
            raise ValueError("palette must hold exactly 3 colors")
        object.__setattr__(
            self, "palette", tuple(_check_rgb("palette", c) for c in self.palette)
        )


@dataclass
class SceneRender:
    image: np.ndarray
    garment_mask: np.ndarray
    background_mask: np.ndarray
    pose_map: np.ndarray
    specs: tuple[PersonSpec, GarmentSpec, BackgroundSpec] = field(repr=False)


def spec_to_dict(spec) -> dict:
    return asdict(spec)


def person_from_dict(d: dict) -> PersonSpec:
    return PersonSpec(
        body_seed=int(d["body_seed"]),
        skin_tone=tuple(d["skin_tone"]),
        hair_color=tuple(d["hair_color"]),
        arm_angles=tuple(d["arm_angles"]),
        torso_scale=float(d["torso_scale"]),
    )


def garment_from_dict(d: dict) -> GarmentSpec:
    return GarmentSpec(
        base_color=tuple(d["base_color"]),
        pattern=d["pattern"],
        pattern_color=tuple(d["pattern_color"]),
        pattern_period=int(d["pattern_period"]),
        logo_glyph=int(d["logo_glyph"]),
        logo_position=tuple(d["logo_position"]),
        sleeve=d["sleeve"],
    )


def background_from_dict(d: dict) -> BackgroundSpec:
    return BackgroundSpec(
        kind=d["kind"], scene_seed=int(d["scene_seed"]), palette=tuple(tuple(c) for c in d["palette"])
    )


# ---------------------------------------------------------------------------
# geometry


def _grid(canvas):
    h, w = canvas
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return yy + 0.5, xx + 0.5


def _segment_distance(yy, xx, p0, p1):
    (y0, x0), (y1, x1) = p0, p1
    dy, dx = y1 - y0, x1 - x0
    length2 = dy * dy + dx * dx
    s = np.clip(((yy - y0) * dy + (xx - x0) * dx) / max(length2, 1e-12), 0.0, 1.0)
    return np.hypot(yy - (y0 + s * dy), xx - (x0 + s * dx))


def _convex_polygon(yy, xx, vertices):
    """Pixels whose centers lie inside a convex polygon (either winding)."""
    pos = np.ones(yy.shape, dtype=bool)
    neg = np.ones(yy.shape, dtype=bool)
    n = len(vertices)
    for k in range(n):
        (ya, xa), (yb, xb) = vertices[k], vertices[(k + 1) % n]
        cross = (xb - xa) * (yy - ya) - (yb - ya) * (xx - xa)
        pos &= cross >= 0
        neg &= cross <= 0
    return pos | neg


@dataclass(frozen=True)
class _Body:
    head_center: tuple[float, float]
    head_radius: float
    torso: tuple[tuple[float, float], ...]
    shoulders: tuple[tuple[float, float], tuple[float, float]]
    elbows: tuple[tuple[float, float], tuple[float, float]]
    hands: tuple[tuple[float, float], tuple[float, float]]
    hips: tuple[tuple[float, float], tuple[float, float]]
    arm_radius: float
    torso_box: tuple[float, float, float, float]  # y0, x0, y1, x1


def _body_layout(person: PersonSpec, canvas) -> _Body:
    h, w = canvas
    sy, sx = h / 64.0, w / 48.0
    cx = w / 2.0
    s = person.torso_scale
    jitter = np.random.default_rng(person.body_seed).uniform(-0.5, 0.5)
    top, bottom = 19.0 * sy, 42.0 * sy
    half_top, half_bottom = 9.0 * s * sx, 7.0 * s * sx
    torso = ((top, cx - half_top), (bottom, cx - half_bottom), (bottom, cx + half_bottom), (top, cx + half_top))
    shoulders = ((top + 1.5 * sy, cx - half_top + 1.0), (top + 1.5 * sy, cx + half_top - 1.0))
    arm_len = 16.0 * sy
    left_a, right_a = person.arm_angles
    hands = (
        (shoulders[0][0] + arm_len * math.cos(left_a), shoulders[0][1] - arm_len * math.sin(left_a)),
        (shoulders[1][0] + arm_len * math.cos(right_a), shoulders[1][1] + arm_len * math.sin(right_a)),
    )
    elbows = tuple(
        (sh[0] + 0.75 * (hd[0] - sh[0]), sh[1] + 0.75 * (hd[1] - sh[1])) for sh, hd in zip(shoulders, hands)
    )
    hips = ((bottom, cx - half_bottom * 0.5), (bottom, cx + half_bottom * 0.5))
    return _Body(
        head_center=(11.0 * sy, cx),
        head_radius=(6.5 + jitter) * min(sy, sx),
        torso=torso,
        shoulders=shoulders,
        elbows=elbows,
        hands=hands,
        hips=hips,
        arm_radius=2.5 * min(sy, sx),
        torso_box=(top, cx - half_top, bottom, cx + half_top),
    )


def _body_masks(person: PersonSpec, canvas):
    """Region masks for one person: torso, sleeve parts of the arms, hands, head, hair, legs."""
    yy, xx = _grid(canvas)
    body = _body_layout(person, canvas)
    torso = _convex_polygon(yy, xx, body.torso)
    upper_arm = np.zeros_like(torso)
    hands = np.zeros_like(torso)
    for sh, el, hd in zip(body.shoulders, body.elbows, body.hands):
        upper_arm |= _segment_distance(yy, xx, sh, el) <= body.arm_radius
        hands |= _segment_distance(yy, xx, el, hd) <= body.arm_radius
    hands &= ~upper_arm
    hy, hx = body.head_center
    head = np.hypot(yy - hy, xx - hx) <= body.head_radius
    hair = head & (yy < hy - body.head_radius * 0.25)
    neck = (np.abs(xx - hx) <= 2.0) & (yy >= hy) & (yy < body.torso_box[0] + 1)
    h = canvas[0]
    legs = np.zeros_like(torso)
    for hip_y, hip_x in body.hips:
        legs |= (np.abs(xx - hip_x) <= 2.5 * canvas[1] / 48.0) & (yy >= hip_y - 1) & (yy < h - 2)
    return {
        "torso": torso,
        "upper_arm": upper_arm,
        "hands": hands,
        "head": head | neck,
        "hair": hair,
        "legs": legs,
        "body": body,
    }


# ---------------------------------------------------------------------------
# textures


def _garment_texture(garment: GarmentSpec, canvas, origin) -> tuple[np.ndarray, np.ndarray]:
    """Full-canvas garment texture anchored at ``origin`` (y, x) plus its logo mask."""
    h, w = canvas
    yy, xx = np.mgrid[0:h, 0:w]
    oy, ox = int(math.floor(origin[0])), int(math.floor(origin[1]))
    ly, lx = yy - oy, xx - ox
    base = np.array(garment.base_color)
    accent = np.array(garment.pattern_color)
    p = garment.pattern_period
    if garment.pattern == "solid":
        use_accent = np.zeros((h, w), dtype=bool)
    elif garment.pattern == "stripes":
        use_accent = np.mod(lx, p) >= p // 2
    elif garment.pattern == "checker":
        use_accent = ((np.floor_divide(lx, p) + np.floor_divide(ly, p)) % 2) == 1
    else:
        cy = np.mod(ly, p) - (p - 1) / 2.0
        cx = np.mod(lx, p) - (p - 1) / 2.0
        use_accent = np.hypot(cy, cx) <= max(p / 4.0, 0.5)
    tex = np.where(use_accent[..., None], accent, base)
    return tex, use_accent


def _logo_ink(garment: GarmentSpec) -> np.ndarray:
    return 1.0 - np.array(garment.base_color)


def _dress(garment: GarmentSpec, canvas, box):
    tex, _ = _garment_texture(garment, canvas, box[:2])
    tex = tex.copy()
    y0, x0, y1, x1 = box
    u, v = garment.logo_position
    cy = int(round(y0 + v * (y1 - y0)))
    cx = int(round(x0 + u * (x1 - x0)))
    glyph = GLYPHS[garment.logo_glyph]
    logo = np.zeros(canvas, dtype=bool)
    top, left = cy - 2, cx - 2
    logo[top : top + 5, left : left + 5] = glyph
    tex[logo] = _logo_ink(garment)
    return tex, logo


def render_background(background: BackgroundSpec, canvas=CANVAS) -> np.ndarray:
    h, w = canvas
    if background.kind == "studio_blank":
        return quantize(np.full((h, w, 3), STUDIO_GRAY))
    rng = np.random.default_rng(background.scene_seed)
    sky, floor, accent = (np.array(c) for c in background.palette)
    yy, xx = _grid(canvas)
    horizon = rng.uniform(0.55, 0.8) * h
    shade = (yy / h)[..., None]
    img = np.where((yy < horizon)[..., None], sky * (0.75 + 0.35 * (1 - shade)), floor * (0.7 + 0.4 * shade))
    for _ in range(int(rng.integers(3, 7))):
        color = np.clip(accent * rng.uniform(0.6, 1.3) + rng.uniform(-0.1, 0.1, 3), 0, 1)
        cy, cx = rng.uniform(0, horizon), rng.uniform(0, w)
        if rng.random() < 0.5:
            hh, ww = rng.uniform(3, 12), rng.uniform(3, 10)
            region = (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= ww)
        else:
            region = np.hypot(yy - cy, xx - cx) <= rng.uniform(2, 7)
        img = np.where(region[..., None], color, img)
    return quantize(img)


def _pants_color(person: PersonSpec) -> np.ndarray:
    rng = np.random.default_rng([person.body_seed, 1])
    return rng.uniform(0.1, 0.35, 3)


def person_layers(person: PersonSpec, canvas=CANVAS) -> dict:
    """Person region masks; the background mask depends on the person only."""
    masks = _body_masks(person, canvas)
    person_mask = masks["torso"] | masks["upper_arm"] | masks["hands"] | masks["head"] | masks["legs"]
    masks["person"] = person_mask
    return masks


def agnostic_mask(person: PersonSpec, canvas=CANVAS) -> np.ndarray:
    """Garment-agnostic try-on mask: torso plus sleeve region of both arms."""
    m = _body_masks(person, canvas)
    return (m["torso"] | m["upper_arm"]).astype(np.uint8)


def render_pose_map(person: PersonSpec, canvas=CANVAS) -> np.ndarray:
    yy, xx = _grid(canvas)
    body = _body_layout(person, canvas)
    neck = (body.torso_box[0], body.head_center[1])
    pelvis = (body.hips[0][0], body.head_center[1])
    limbs = [
        ((body.head_center, neck), (1.0, 0.2, 0.2)),
        ((neck, pelvis), (1.0, 1.0, 0.2)),
        ((body.shoulders[0], body.shoulders[1]), (0.2, 1.0, 0.2)),
        ((body.shoulders[0], body.elbows[0]), (0.2, 0.6, 1.0)),
        ((body.elbows[0], body.hands[0]), (0.2, 0.2, 1.0)),
        ((body.shoulders[1], body.elbows[1]), (1.0, 0.6, 0.2)),
        ((body.elbows[1], body.hands[1]), (1.0, 0.2, 1.0)),
        ((body.hips[0], body.hips[1]), (0.2, 1.0, 1.0)),
    ]
    pose = np.zeros(canvas + (3,))
    for (p0, p1), color in limbs:
        pose[_segment_distance(yy, xx, p0, p1) <= 0.8] = color
    return quantize(pose)


def render_scene(
    person: PersonSpec, garment: GarmentSpec, background: BackgroundSpec, canvas=CANVAS
) -> SceneRender:
    """Render a person wearing ``garment`` in front of ``background``.

    The garment region is the torso polygon, plus the upper-arm capsules for
    long sleeves. Pixels outside the garment region do not depend on the
    garment, so swapping garments is local by construction.
    """
    m = person_layers(person, canvas)
    body = m["body"]
    img = render_background(background, canvas).astype(np.float64)
    skin = np.array(person.skin_tone)
    img[m["legs"]] = _pants_color(person)
    img[m["head"]] = skin
    img[m["hair"]] = person.hair_color
    tex, _ = _dress(garment, canvas, body.torso_box)
    arms = m["upper_arm"] | m["hands"]
    garment_mask = m["torso"] & ~arms
    if garment.sleeve == "long":
        garment_mask |= m["upper_arm"]
    img[m["torso"] | m["upper_arm"] | m["hands"]] = skin
    img[garment_mask] = tex[garment_mask]
    background_mask = ~m["person"]
    return SceneRender(
        image=quantize(img),
        garment_mask=garment_mask.astype(np.uint8),
        background_mask=background_mask.astype(np.uint8),
        pose_map=render_pose_map(person, canvas),
        specs=(person, garment, background),
    )


_PRODUCT_PERSON = PersonSpec(
    body_seed=0, skin_tone=(1.0, 1.0, 1.0), hair_color=(1.0, 1.0, 1.0), arm_angles=(0.5, 0.5), torso_scale=1.0
)


def render_garment_product(garment: GarmentSpec, canvas=CANVAS) -> np.ndarray:
    """Flat front-facing product shot of ``garment`` on a white background."""
    m = _body_masks(_PRODUCT_PERSON, canvas)
    tex, _ = _dress(garment, canvas, m["body"].torso_box)
    region = m["torso"] | m["upper_arm"] if garment.sleeve == "long" else m["torso"]
    img = np.full(canvas + (3,), PRODUCT_BACKGROUND)
    img[region] = tex[region]
    return quantize(img)


def garment_logo_mask(garment: GarmentSpec, person: PersonSpec | None = None, canvas=CANVAS) -> np.ndarray:
    """Logo stamp pixels for a worn garment (or the product shot when ``person`` is None)."""
    body = _body_layout(person or _PRODUCT_PERSON, canvas)
    _, logo = _dress(garment, canvas, body.torso_box)
    return logo


# ---------------------------------------------------------------------------
# prompts


def hue_bucket(color) -> int:
    r, g, b = color
    mx, mn = max(r, g, b), min(r, g, b)
    if mx == mn:
        return 0
    d = mx - mn
    if mx == r:
        hue = ((g - b) / d) % 6
    elif mx == g:
        hue = (b - r) / d + 2
    else:
        hue = (r - g) / d + 4
    return int(hue / 6.0 * N_HUE_BUCKETS) % N_HUE_BUCKETS


def _logo_bucket(position) -> int:
    u, v = position
    bu = min(int((u - 0.1) / 0.8 * N_LOGO_BUCKETS), N_LOGO_BUCKETS - 1)
    bv = min(int((v - 0.1) / 0.8 * N_LOGO_BUCKETS), N_LOGO_BUCKETS - 1)
    return bv * N_LOGO_BUCKETS + bu


# token id layout: [mode | sleeve | hue | pattern | glyph | logo bucket]
_FIELD_SIZES = (len(MODES), len(SLEEVES), N_HUE_BUCKETS, len(PATTERNS), N_GLYPHS, N_LOGO_BUCKETS**2)
_FIELD_OFFSETS = tuple(int(v) for v in np.cumsum((0,) + _FIELD_SIZES[:-1]))
VOCAB_SIZE = int(sum(_FIELD_SIZES))
PROMPT_LENGTH = len(_FIELD_SIZES)


def attribute_tokens(garment: GarmentSpec) -> list[int]:
    values = (
        SLEEVES.index(garment.sleeve),
        hue_bucket(garment.base_color),
        PATTERNS.index(garment.pattern),
        garment.logo_glyph,
        _logo_bucket(garment.logo_position),
    )
    return [off + v for off, v in zip(_FIELD_OFFSETS[1:], values)]


def prompt_tokens(garment: GarmentSpec, mode: str) -> list[int]:
    """Mode token followed by the quantized garment attribute tokens."""
    if mode not in MODES:
        raise ValueError(f"unknown prompt mode {mode!r}")
    return [_FIELD_OFFSETS[0] + MODES.index(mode)] + attribute_tokens(garment)


# ---------------------------------------------------------------------------
# mask corruption

CROSS = ndimage.generate_binary_structure(2, 1)
HOLE_RADIUS = 2


def _check_binary(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2 or not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be a 2-D array of zeros and ones")
    return mask.astype(bool)


def dilate(mask: np.ndarray, k: int) -> np.ndarray:
    m = _check_binary(mask)
    if k == 0:
        return m.astype(np.uint8)
    return ndimage.binary_dilation(m, structure=CROSS, iterations=k).astype(np.uint8)


def erode(mask: np.ndarray, k: int) -> np.ndarray:
    m = _check_binary(mask)
    if k == 0:
        return m.astype(np.uint8)
    return ndimage.binary_erosion(m, structure=CROSS, iterations=k, border_value=1).astype(np.uint8)


def leak_hole_centers(eroded: np.ndarray, count: int, seed: int) -> list[tuple[int, int]]:
    """Seeded hole centers drawn from the pixels of an eroded mask."""
    ys, xs = np.nonzero(eroded)
    if count == 0 or len(ys) == 0:
        return []
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(ys), size=min(count, len(ys)), replace=False)
    return [(int(ys[i]), int(xs[i])) for i in idx]


def corrupt_mask(mask: np.ndarray, mode: str, magnitude: int, seed: int = 0) -> np.ndarray:
    """Emulate over-masking (dilation) or mask leakage (erosion plus holes)."""
    m = _check_binary(mask)
    if magnitude < 0 or magnitude > min(m.shape) // 4:
        raise ValueError(f"magnitude must lie in [0, {min(m.shape) // 4}], got {magnitude}")
    if mode == "overmask":
        return dilate(m, magnitude)
    if mode != "leak":
        raise ValueError(f"unknown corruption mode {mode!r}")
    out = erode(m, magnitude).astype(bool)
    yy, xx = np.mgrid[0 : m.shape[0], 0 : m.shape[1]]
    for cy, cx in leak_hole_centers(out, magnitude, seed):
        out &= np.hypot(yy - cy, xx - cx) > HOLE_RADIUS
    return out.astype(np.uint8)


# ---------------------------------------------------------------------------
# sampling


def _grid_color(rng, low=0.0, high=1.0) -> Color:
    return tuple(float(v) for v in np.round(rng.uniform(low, high, 3) * 255) / 255)


def _saturated_color(rng, hue: float) -> Color:
    sat, val = rng.uniform(0.6, 1.0), rng.uniform(0.55, 1.0)
    rgb = colorsys.hsv_to_rgb(hue % 1.0, sat, val)
    return tuple(float(v) for v in np.round(np.array(rgb) * 255) / 255)


def sample_person(rng: np.random.Generator) -> PersonSpec:
    tone = rng.uniform(0.35, 0.95)
    skin = tuple(float(v) for v in np.round(np.array([tone, tone * 0.8, tone * 0.65]) * 255) / 255)
    return PersonSpec(
        body_seed=int(rng.integers(0, 2**31)),
        skin_tone=skin,
        hair_color=_grid_color(rng, 0.0, 0.45),
        arm_angles=(float(rng.uniform(-0.2, math.pi / 3)), float(rng.uniform(-0.2, math.pi / 3))),
        torso_scale=float(rng.uniform(0.85, 1.15)),
    )


def sample_garment(rng: np.random.Generator, avoid_hue_bucket: int | None = None) -> GarmentSpec:
    while True:
        hue = rng.uniform(0.0, 1.0)
        base = _saturated_color(rng, hue)
        if avoid_hue_bucket is None or hue_bucket(base) != avoid_hue_bucket:
            break
    return GarmentSpec(
        base_color=base,
        pattern=PATTERNS[int(rng.integers(len(PATTERNS)))],
        pattern_color=_grid_color(rng),
        pattern_period=int(rng.integers(2, 7)),
        logo_glyph=int(rng.integers(N_GLYPHS)),
        logo_position=(float(rng.uniform(0.25, 0.75)), float(rng.uniform(0.2, 0.6))),
        sleeve=SLEEVES[int(rng.integers(2))],
    )


def sample_background(rng: np.random.Generator, kind: str = "procedural_scene") -> BackgroundSpec:
    if kind == "studio_blank":
        return BackgroundSpec(kind="studio_blank", scene_seed=0)
    palette = (_grid_color(rng, 0.4, 1.0), _grid_color(rng, 0.15, 0.6), _grid_color(rng))
    return BackgroundSpec(kind=kind, scene_seed=int(rng.integers(0, 2**31)), palette=palette)


def composite(foreground: np.ndarray, background: np.ndarray, background_mask: np.ndarray) -> np.ndarray:
    """Background pixels where the mask is 1, foreground pixels elsewhere (bit-exact)."""
    keep = np.asarray(background_mask).astype(bool)[..., None]
    return np.where(keep, background, foreground).astype(np.float32)
