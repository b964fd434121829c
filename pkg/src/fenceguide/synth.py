"""Pseudo-stereo training data.

A background and a wire-mesh fence are composited twice: once as the right
view and once with both layers moved left, the fence by more than the
background. Stereo convention used throughout the package: the left view's
content at column ``c`` is the right view's content at ``c + shift``, so
shifting the left edge map right by the fence parallax realigns the fence.
"""
from __future__ import annotations

import configparser
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from .edges import CannyParams
from .guidance import GuidanceParams, guidance_mask
from .imagecore import as_gray, as_mask, load_image, load_mask, save_image, save_mask

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
IMAGE_SUFFIXES = (".png", ".pgm")


class SynthError(ValueError):
    pass


@dataclass
class SceneRecipe:
    background_path: str
    fence_template_path: str
    fg_shift: int
    bg_shift: int
    affine: tuple = (0.0, 1.0, 0.0, 0.0)  # rotation deg, scale, tx, ty
    crop: tuple = (0, 0, 0, 0)  # top, left, height, width
    color_jitter: tuple = (0.0, 1.0)  # brightness delta, contrast factor
    noise_p: float = 0.0
    rng_seed: int = 0
    fence_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.fg_shift >= self.bg_shift >= 0:
            raise SynthError(f"need fg_shift >= bg_shift >= 0, got {self.fg_shift}, {self.bg_shift}")
        if not 0.0 <= self.noise_p <= 0.5:
            raise SynthError("noise_p must lie in [0, 0.5]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["affine"] = list(self.affine)
        d["crop"] = list(self.crop)
        d["color_jitter"] = list(self.color_jitter)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneRecipe":
        d = dict(d)
        for key in ("affine", "crop", "color_jitter"):
            d[key] = tuple(d[key])
        return cls(**d)


# ---------------------------------------------------------------------------
# procedural sources

def procedural_background(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Gradient + multi-octave smooth noise + a few flat shapes."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy) / max(height, width)
    img = 110.0 + rng.uniform(-40, 40) + rng.uniform(20, 60) * ramp

    amp = rng.uniform(20, 45)
    for cells in (4, 8, 16):
        grid = rng.normal(size=(cells + 1, cells + 1))
        smooth = ndimage.zoom(grid, (height / cells, width / cells), order=3)[:height, :width]
        img += amp * smooth
        amp *= 0.5

    for _ in range(rng.integers(2, 6)):
        level = rng.uniform(30, 220)
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry, rx = rng.uniform(0.05, 0.25) * height, rng.uniform(0.05, 0.25) * width
        if rng.random() < 0.5:
            shape = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            shape = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        img = np.where(shape, 0.6 * level + 0.4 * img, img)
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def fence_template(height: int, width: int, cell: int = 16, wire: int = 2,
                   rotation: float = 0.0, kind: str = "diamond",
                   phase: tuple = (0.0, 0.0), jitter: float = 0.0, wave: float = 0.0,
                   seed: int = 0) -> np.ndarray:
    """Wire mesh mask: two families of parallel wires ``wire`` px thick about every ``cell`` px.

    ``jitter`` moves each wire by up to that fraction of ``cell`` and
    ``wave`` bends wires sinusoidally by up to that many pixels, making the
    mesh quasi-periodic like a real fence. Both default to an exact lattice.
    """
    if cell < 2 or wire < 1 or wire >= cell:
        raise SynthError("need cell >= 2 and 1 <= wire < cell")
    if kind not in ("diamond", "rect"):
        raise SynthError(f"unknown fence kind {kind!r}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    t = np.radians(rotation + (45.0 if kind == "diamond" else 0.0))
    u = np.cos(t) * xx + np.sin(t) * yy + phase[0]
    v = -np.sin(t) * xx + np.cos(t) * yy + phase[1]
    on = np.zeros((height, width), dtype=bool)
    for across, along in ((u, v), (v, u)):
        if wave > 0:
            period = rng.uniform(40.0, 120.0)
            across = across + wave * np.sin(2 * np.pi * along / period + rng.uniform(0, 2 * np.pi))
        k = np.floor(across / cell + 0.5).astype(np.int64)
        offsets = rng.uniform(-jitter, jitter, size=1024) * cell
        centre = k * cell + offsets[k % 1024]
        on |= np.abs(across - centre) < wire / 2.0
    return on.astype(np.uint8)


def fence_texture(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Wire colour: dark or bright metal with mild shading."""
    base = rng.uniform(10, 60) if rng.random() < 0.5 else rng.uniform(190, 245)
    shade = rng.normal(0.0, 4.0, size=(height, width))
    return np.clip(np.floor(base + shade + 0.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# scene composition

def compose_pair(bg, fence_mask, fence_tex, recipe: SceneRecipe):
    """Build ``(L, R, gt_mask)``.

    The output size is ``recipe.crop[2:]``; a zero crop size means the
    background size minus the background shift margin. ``fence_mask`` is
    read from column 0 for the right view and from column ``fg_shift`` for
    the left view; missing columns count as no fence.
    """
    bg = as_gray(bg)
    fence_mask = as_mask(fence_mask)
    fence_tex = as_gray(fence_tex)
    if fence_mask.shape != fence_tex.shape:
        raise SynthError("fence mask and texture differ in size")
    top, left, h, w = (int(v) for v in recipe.crop)
    if h == 0 or w == 0:
        h, w = bg.shape[0] - top, bg.shape[1] - left - recipe.bg_shift
    if h <= 0 or w <= 0:
        raise SynthError("background too small for the requested shift")
    if fence_mask.shape[0] < h:
        raise SynthError("fence template shorter than the output")
    if fence_mask.shape[0] > bg.shape[0] or fence_mask.shape[1] > bg.shape[1] + recipe.fg_shift:
        raise SynthError("fence larger than background")
    if top + h > bg.shape[0] or left + w + recipe.bg_shift > bg.shape[1]:
        raise SynthError("shift exceeds background margin")

    s, b = recipe.fg_shift, recipe.bg_shift
    need = w + s
    if fence_mask.shape[1] < need:
        pad = need - fence_mask.shape[1]
        fence_mask = np.pad(fence_mask, ((0, 0), (0, pad)))
        fence_tex = np.pad(fence_tex, ((0, 0), (0, pad)))
    fm_r, tex_r = fence_mask[:h, :w], fence_tex[:h, :w]
    fm_l, tex_l = fence_mask[:h, s:s + w], fence_tex[:h, s:s + w]
    bg_r = bg[top:top + h, left:left + w]
    bg_l = bg[top:top + h, left + b:left + b + w]

    right = np.where(fm_r == 1, tex_r, bg_r).astype(np.uint8)
    lft = np.where(fm_l == 1, tex_l, bg_l).astype(np.uint8)
    return lft, right, fm_r.copy()


def augment(img, affine=(0.0, 1.0, 0.0, 0.0), crop=None, color_jitter=(0.0, 1.0)) -> np.ndarray:
    """Affine warp (bilinear, about the centre), crop, then brightness/contrast.

    ``affine`` is (rotation degrees counter-clockwise, scale, tx, ty).
    ``crop`` is (top, left, height, width) or None for the full frame.
    """
    img = as_gray(img)
    rot, scale, tx, ty = (float(v) for v in affine)
    out = img.astype(np.float64)
    if rot != 0.0 or scale != 1.0 or tx != 0.0 or ty != 0.0:
        if scale <= 0:
            raise SynthError("scale must be positive")
        t = np.radians(rot)
        c, s = np.cos(t), np.sin(t)
        # output (row, col) -> input (row, col), rows grow downward
        matrix = np.array([[c, s], [-s, c]]) / scale
        center = (np.array(img.shape, dtype=np.float64) - 1.0) / 2.0
        shift = np.array([ty, tx])
        offset = center - matrix @ (center + shift)
        out = ndimage.affine_transform(out, matrix, offset=offset, order=1, mode="reflect")
    if crop is not None:
        top, left, h, w = (int(v) for v in crop)
        if top < 0 or left < 0 or h < 1 or w < 1 or top + h > out.shape[0] or left + w > out.shape[1]:
            raise SynthError(f"crop {crop} outside image of shape {out.shape}")
        out = out[top:top + h, left:left + w]
    brightness, contrast = (float(v) for v in color_jitter)
    out = contrast * (out - 128.0) + 128.0 + brightness
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def salt_pepper(mask, p: float, rng_seed) -> np.ndarray:
    """Flip each pixel independently with probability ``p``."""
    if not 0.0 <= p <= 0.5:
        raise SynthError("p must lie in [0, 0.5]")
    mask = as_mask(mask)
    flips = np.random.default_rng(rng_seed).random(mask.shape) < p
    return (mask ^ flips).astype(np.uint8)


# ---------------------------------------------------------------------------
# dataset generation

@dataclass
class SynthConfig:
    n_train: int = 200
    n_test: int = 50
    image_size: int = 128
    seed: int = 42
    background_dir: str = ""
    fence_dir: str = ""
    fg_shift_min: int = 3
    fg_shift_max: int = 20
    cell_min: int = 8
    cell_max: int = 40
    wire_min: int = 1
    wire_max: int = 3
    fence_rotation: float = 15.0
    fence_jitter: float = 0.15
    fence_wave: float = 1.5
    rotation: float = 15.0
    scale_min: float = 0.8
    scale_max: float = 1.2
    translation: float = 5.0
    brightness: float = 25.0
    contrast_min: float = 0.8
    contrast_max: float = 1.25
    noise_p_max: float = 0.01
    tau: float = 100.0
    canny_sigma: float = 1.4
    canny_low: float = 30.0
    canny_high: float = 90.0

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0:
            raise SynthError("record counts must be >= 0")
        if self.fg_shift_min < 1:
            raise SynthError("fg_shift_min must be >= 1")
        if self.fg_shift_max < self.fg_shift_min:
            raise SynthError("fg_shift_max < fg_shift_min")
        if self.fg_shift_max >= self.image_size:
            raise SynthError("fg_shift_max must be < image_size")
        if not 0.0 <= self.noise_p_max <= 0.5:
            raise SynthError("noise_p_max must lie in [0, 0.5]")

    @classmethod
    def from_file(cls, path, **overrides) -> "SynthConfig":
        """Read a flat ``key = value`` file; unknown keys are rejected."""
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        text = Path(path).read_text()
        parser.read_string("[synth]\n" + text)
        values = dict(parser["synth"])
        return cls.from_mapping({**values, **{k: v for k, v in overrides.items() if v is not None}})

    @classmethod
    def from_mapping(cls, values: dict) -> "SynthConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(types)
        if unknown:
            raise SynthError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, raw in values.items():
            default = getattr(cls, key)
            kwargs[key] = type(default)(raw) if not isinstance(raw, type(default)) else raw
        return cls(**kwargs)


@dataclass
class DatasetManifest:
    root: Path
    records: list

    def split(self, name: str) -> list:
        return [r for r in self.records if r["split"] == name]

    @property
    def counts(self) -> dict:
        out = {}
        for r in self.records:
            out[r["split"]] = out.get(r["split"], 0) + 1
        return out

    def path(self, record: dict, key: str) -> Path:
        return self.root / record[key]

    def validate(self) -> None:
        seen = set()
        for r in self.records:
            for key in ("left_path", "right_path", "fm_path", "gt_mask_path"):
                p = r[key]
                if p in seen:
                    raise SynthError(f"duplicate output path {p}")
                seen.add(p)
                if not (self.root / p).is_file():
                    raise SynthError(f"missing file {p}")
            recipe = SceneRecipe.from_dict(r["recipe"])
            if not recipe.fg_shift > recipe.bg_shift:
                raise SynthError(f"record {r['split']}/{r['index']}: fence parallax must exceed background parallax")

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path=None) -> Path:
        path = Path(path) if path else self.root / MANIFEST_NAME
        path.write_text(self.dumps())
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        return cls(root=path.parent, records=records)


def _list_images(directory: str) -> list:
    if not directory:
        return []
    d = Path(directory)
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise SynthError(f"no PNG/PGM images in {d}")
    return files


def _record_rng(seed: int, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), 0 if split == "train" else 1, int(index)])


def sample_recipe(cfg: SynthConfig, rng: np.random.Generator, backgrounds: list,
                  fences: list) -> SceneRecipe:
    size = cfg.image_size
    fg = int(rng.integers(cfg.fg_shift_min, cfg.fg_shift_max + 1))
    bg = int(rng.integers(0, fg))
    affine = (float(rng.uniform(-cfg.rotation, cfg.rotation)),
              float(rng.uniform(cfg.scale_min, cfg.scale_max)),
              float(rng.uniform(-cfg.translation, cfg.translation)),
              float(rng.uniform(-cfg.translation, cfg.translation)))
    margin = cfg.fg_shift_max + 8
    crop = (int(rng.integers(0, 9)), int(rng.integers(0, margin - bg + 1)), size, size)
    jitter = (float(rng.uniform(-cfg.brightness, cfg.brightness)),
              float(rng.uniform(cfg.contrast_min, cfg.contrast_max)))
    bg_path = str(backgrounds[rng.integers(len(backgrounds))]) if backgrounds else "procedural"
    fence_params = {
        "kind": "diamond" if rng.random() < 0.5 else "rect",
        "cell": int(rng.integers(cfg.cell_min, cfg.cell_max + 1)),
        "wire": int(rng.integers(cfg.wire_min, cfg.wire_max + 1)),
        "rotation": float(rng.uniform(-cfg.fence_rotation, cfg.fence_rotation)),
        "phase": [float(rng.uniform(0, 40)), float(rng.uniform(0, 40))],
        "jitter": float(cfg.fence_jitter),
        "wave": float(rng.uniform(0.0, cfg.fence_wave)),
        "seed": int(rng.integers(0, 2**31 - 1)),
    }
    fence_path = str(fences[rng.integers(len(fences))]) if fences else "procedural"
    return SceneRecipe(
        background_path=bg_path, fence_template_path=fence_path, fg_shift=fg, bg_shift=bg,
        affine=affine, crop=crop, color_jitter=jitter,
        noise_p=float(rng.uniform(0.0, cfg.noise_p_max)),
        rng_seed=int(rng.integers(0, 2**31 - 1)), fence_params=fence_params)


def _tile_to(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    reps = (-(-h // mask.shape[0]), -(-w // mask.shape[1]))
    return np.tile(mask, reps)[:h, :w]


def render_scene(recipe: SceneRecipe, size: int, margin: int):
    """Deterministically build ``(L, R, gt)`` for a recipe."""
    rng = np.random.default_rng(recipe.rng_seed)
    src_h, src_w = size + 8, size + margin
    if recipe.background_path == "procedural":
        bg = procedural_background(src_h, src_w, rng)
    else:
        bg = load_image(recipe.background_path)
        if bg.shape[0] < src_h or bg.shape[1] < src_w:
            zoom = max(src_h / bg.shape[0], src_w / bg.shape[1])
            bg = np.clip(ndimage.zoom(bg.astype(np.float64), zoom, order=1), 0, 255)
            bg = np.floor(bg + 0.5).astype(np.uint8)
        bg = bg[:src_h, :src_w]
    bg = augment(bg, recipe.affine)

    fp = recipe.fence_params
    fh, fw = size, size + recipe.fg_shift
    if recipe.fence_template_path == "procedural":
        fmask = fence_template(fh, fw, cell=fp["cell"], wire=fp["wire"],
                               rotation=fp["rotation"], kind=fp["kind"],
                               phase=tuple(fp["phase"]), jitter=fp.get("jitter", 0.0),
                               wave=fp.get("wave", 0.0), seed=fp.get("seed", 0))
    else:
        fmask = _tile_to(load_mask(recipe.fence_template_path), fh, fw)
    ftex = fence_texture(fh, fw, rng)
    left, right, gt = compose_pair(bg, fmask, ftex, recipe)
    left = augment(left, color_jitter=recipe.color_jitter)
    right = augment(right, color_jitter=recipe.color_jitter)
    return left, right, gt


def _make_record(cfg: SynthConfig, out: Path, split: str, index: int,
                 backgrounds: list, fences: list) -> dict:
    rng = _record_rng(cfg.seed, split, index)
    recipe = sample_recipe(cfg, rng, backgrounds, fences)
    left, right, gt = render_scene(recipe, cfg.image_size, cfg.fg_shift_max + 8)
    canny_params = CannyParams(cfg.canny_sigma, cfg.canny_low, cfg.canny_high)
    gparams = GuidanceParams(tau=cfg.tau, max_shift=max(cfg.image_size // 4, cfg.fg_shift_max))
    fm, curve = guidance_mask(left, right, canny_params, gparams)
    fm_noisy = salt_pepper(fm, recipe.noise_p, recipe.rng_seed)

    stem = f"{split}/{index:06d}"
    paths = {key: f"{stem}_{tag}.png" for key, tag in
             (("left_path", "L"), ("right_path", "R"), ("fm_path", "FM"), ("gt_mask_path", "GT"))}
    save_image(left, out / paths["left_path"])
    save_image(right, out / paths["right_path"])
    save_mask(fm_noisy, out / paths["fm_path"])
    save_mask(gt, out / paths["gt_mask_path"])
    return {"split": split, "index": index, **paths, "recipe": recipe.to_dict(),
            "estimated_shift": curve.best_shift, "low_confidence": curve.low_confidence}


def generate_dataset(cfg: SynthConfig, out_dir, threads: int = 1) -> DatasetManifest:
    """Write ``n_train + n_test`` records and ``manifest.jsonl`` under ``out_dir``."""
    out = Path(out_dir)
    backgrounds = _list_images(cfg.background_dir)
    fences = _list_images(cfg.fence_dir)
    jobs = [("train", i) for i in range(cfg.n_train)] + [("test", i) for i in range(cfg.n_test)]
    for split in ("train", "test"):
        (out / split).mkdir(parents=True, exist_ok=True)

    def run(job):
        return _make_record(cfg, out, job[0], job[1], backgrounds, fences)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run, jobs))
    else:
        records = [run(j) for j in jobs]
    manifest = DatasetManifest(root=out, records=records)
    manifest.write()
    log.info("wrote %d records to %s", len(records), out)
    return manifest
