"""Procedural toy corpus: glyph scenes with a rule-based compatibility oracle.

Each scene is a colored background with a visible ground line (slope painted
into the image) and one glyph drawn inside a foreground box. A foreground is
compatible with a background when three attribute checks pass together: hue
(circular distance), geometry (glyph orientation vs. the slope-implied
angle), and shape (pixel aspect ratio of the glyph box vs. the query box).
All thresholds are inclusive and live in CorpusConfig.

Splits mirror the usual synthetic/real protocol: `train` and `test_s` pairs
carry a same-image ground-truth foreground; `test_r` backgrounds are freshly
generated, share the `test_s` foreground pool, and carry oracle labels only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .configs import ConfigError, CorpusConfig
from .imaging import Box, hue_distance, pad_to_square, save_png, load_png

CATEGORIES = ("triangle", "square", "bar", "cross", "arrow", "tee", "ell", "wedge")
SPLITS = ("train", "test_s", "test_r")

# compact split codes used inside ids (ids must stay URL-path safe)
_SPLIT_CODE = {"train": "train", "test_s": "tests", "test_r": "testr"}


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    category: str
    scene_hue: float
    ground_slope: float
    fg_box: Box
    fg_orientation: float
    fg_hue: float

    def to_json(self) -> dict:
        d = asdict(self)
        d["fg_box"] = [self.fg_box.x, self.fg_box.y, self.fg_box.w, self.fg_box.h]
        return d

    @staticmethod
    def from_json(d: dict) -> "SceneSpec":
        d = dict(d)
        d["fg_box"] = Box(*d["fg_box"])
        return SceneSpec(**d)


@dataclass
class Sample:
    background: np.ndarray
    query_box: Box
    foreground: np.ndarray
    label: int
    source: str  # same_image_gt | mined_negative | extended_positive | augmented


# ---------------------------------------------------------------------------
# Glyph shapes: point-in-shape tests on the [-1, 1]^2 frame. All are
# orientation-revealing within the slope window the scenes use.
# ---------------------------------------------------------------------------

def _triangle(x, y):
    return (x >= -1) & (np.abs(y) <= (1 - x) / 2)

def _square(x, y):
    return (np.abs(x) <= 1) & (np.abs(y) <= 1)

def _bar(x, y):
    return (np.abs(x) <= 1) & (np.abs(y) <= 0.35)

def _cross(x, y):
    return ((np.abs(x) <= 1) & (np.abs(y) <= 0.3)) | ((np.abs(y) <= 1) & (np.abs(x) <= 0.3))

def _arrow(x, y):
    shaft = (x <= 0.2) & (x >= -1) & (np.abs(y) <= 0.28)
    head = (x > 0.2) & (x <= 1) & (np.abs(y) <= (1 - x) * (0.75 / 0.8))
    return shaft | head

def _tee(x, y):
    top = (y <= -0.5) & (y >= -1) & (np.abs(x) <= 1)
    stem = (y > -0.5) & (y <= 1) & (np.abs(x) <= 0.25)
    return top | stem

def _ell(x, y):
    vert = (x <= -0.45) & (x >= -1) & (np.abs(y) <= 1)
    horz = (y >= 0.55) & (y <= 1) & (np.abs(x) <= 1)
    return vert | horz

def _wedge(x, y):
    return (np.abs(x) <= 1) & (np.abs(y) <= 1) & (y >= -x)


_SHAPE_FNS = {
    "triangle": _triangle, "square": _square, "bar": _bar, "cross": _cross,
    "arrow": _arrow, "tee": _tee, "ell": _ell, "wedge": _wedge,
}


def _rotated_extents(category: str, angle: float) -> tuple[float, float]:
    """Half-extents of the rotated shape's bounding box, from a dense boundary
    scan. Used to scale the rotated glyph so it exactly fills its box."""
    ts = np.linspace(0, 2 * math.pi, 720, endpoint=False)
    # sample the unit square border and keep points inside the shape by
    # shrinking radially; cheap and exact enough at 1/720 resolution
    grid = np.linspace(-1, 1, 160)
    gx, gy = np.meshgrid(grid, grid)
    inside = _SHAPE_FNS[category](gx, gy)
    xs, ys = gx[inside], gy[inside]
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    rx = xs * cos_a - ys * sin_a
    ry = xs * sin_a + ys * cos_a
    return float(np.abs(rx).max()), float(np.abs(ry).max())


# ---------------------------------------------------------------------------
# Scene generation
# ---------------------------------------------------------------------------

def _rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def scene_spec(seed: int, category: str, cfg: CorpusConfig) -> SceneSpec:
    """Deterministic scene attributes for a seed. The ground-truth glyph's hue
    and orientation sit within gt_jitter * tolerance of the scene's own cues,
    so the same-image pair is always oracle-compatible."""
    if category not in CATEGORIES:
        raise ValueError(f"unknown category '{category}'")
    rng = _rng_for(seed)
    scene_hue = float(rng.uniform(0, 1))
    ground_slope = float(rng.uniform(-0.5, 0.5))
    area = float(rng.uniform(max(cfg.fg_area_min, 0.08), min(cfg.fg_area_max, 0.35)))
    log_ar = float(rng.uniform(math.log(0.65), math.log(1.55)))
    ar = math.exp(log_ar)
    w = min(math.sqrt(area * ar), 0.9)
    h = min(math.sqrt(area / ar), 0.9)
    x = float(rng.uniform(0.02, 0.98 - w))
    y = float(rng.uniform(0.02, 0.98 - h))
    slope_angle = math.atan(ground_slope)
    fg_orientation = slope_angle + float(rng.uniform(-1, 1)) * cfg.gt_jitter * cfg.tau_geo
    fg_hue = (scene_hue + float(rng.uniform(-1, 1)) * cfg.gt_jitter * cfg.tau_hue) % 1.0
    return SceneSpec(seed=seed, category=category, scene_hue=scene_hue,
                     ground_slope=ground_slope, fg_box=Box(x, y, w, h),
                     fg_orientation=fg_orientation, fg_hue=fg_hue)


def _hsv_px(h, s, v):
    from .imaging import hsv_to_rgb
    return hsv_to_rgb(np.array([h, s, v]))


def render_background(spec: SceneSpec, size: int) -> np.ndarray:
    """Background without the glyph: hue-tinted sky over a darker ground
    region whose boundary line encodes ground_slope."""
    yn = (np.arange(size) + 0.5) / size
    xn = (np.arange(size) + 0.5) / size
    gy, gx = np.meshgrid(yn, xn, indexing="ij")
    line = 0.62 + spec.ground_slope * (gx - 0.5)
    sky_v = 0.9 - 0.3 * gy
    sky_s = np.full_like(gy, 0.55)
    ground = gy > line
    v = np.where(ground, sky_v * 0.55, sky_v)
    s = np.where(ground, 0.8, sky_s)
    band = np.abs(gy - line) < 1.5 / size
    v = np.where(band, 0.12, v)
    hsv = np.stack([np.full_like(v, spec.scene_hue), s, v], axis=-1)
    from .imaging import hsv_to_rgb
    return hsv_to_rgb(hsv)


def glyph_coverage(spec: SceneSpec, size: int, supersample: int = 2) -> np.ndarray:
    """Per-pixel glyph coverage in [0, 1]; nonzero only inside fg_box."""
    box = spec.fg_box
    s = size * supersample
    yn = (np.arange(s) + 0.5) / s
    xn = (np.arange(s) + 0.5) / s
    gy, gx = np.meshgrid(yn, xn, indexing="ij")
    # box frame in [-1, 1]
    qx = (gx - box.x) / box.w * 2 - 1
    qy = (gy - box.y) / box.h * 2 - 1
    inside_box = (np.abs(qx) <= 1) & (np.abs(qy) <= 1)
    ex, ey = _rotated_extents(spec.category, spec.fg_orientation)
    cos_a, sin_a = math.cos(spec.fg_orientation), math.sin(spec.fg_orientation)
    px = qx * ex
    py = qy * ey
    ux = px * cos_a + py * sin_a
    uy = -px * sin_a + py * cos_a
    mask = inside_box & _SHAPE_FNS[spec.category](ux, uy)
    cov = mask.astype(np.float64).reshape(size, supersample, size, supersample)
    cov = cov.mean(axis=(1, 3))
    # clip to the box's integer pixel footprint so the foreground crop and the
    # mean-fill region cover every glyph pixel exactly
    x0, y0, x1, y1 = box.to_pixels(size, size)
    clipped = np.zeros_like(cov)
    clipped[y0:y1, x0:x1] = cov[y0:y1, x0:x1]
    return clipped


def generate_scene(seed: int, category: str,
                   cfg: CorpusConfig | None = None) -> tuple[SceneSpec, np.ndarray]:
    """Render a full scene: background with the glyph composited in place."""
    cfg = cfg or CorpusConfig()
    spec = scene_spec(seed, category, cfg)
    bg = render_background(spec, cfg.size)
    cov = glyph_coverage(spec, cfg.size)[..., None]
    color = _hsv_px(spec.fg_hue, 0.95, 0.85)
    raster = bg * (1 - cov) + color * cov
    return spec, np.clip(raster, 0.0, 1.0)


def foreground_raster(spec: SceneSpec, size: int) -> np.ndarray:
    """Glyph on white, cropped to its box and padded to square."""
    cov = glyph_coverage(spec, size)
    color = _hsv_px(spec.fg_hue, 0.95, 0.85)
    x0, y0, x1, y1 = spec.fg_box.to_pixels(size, size)
    patch_cov = cov[y0:y1, x0:x1, None]
    white = np.ones((y1 - y0, x1 - x0, 3))
    fg = white * (1 - patch_cov) + color * patch_cov
    return pad_to_square(np.clip(fg, 0.0, 1.0))


def split_scene(spec: SceneSpec, raster: np.ndarray,
                cfg: CorpusConfig | None = None) -> Sample:
    """Separate a scene into (background with mean-filled box, foreground on
    white). The fill value is the whole-image channel mean, box included."""
    cfg = cfg or CorpusConfig()
    size = raster.shape[0]
    mean = raster.mean(axis=(0, 1), dtype=np.float64)
    bg = raster.copy()
    x0, y0, x1, y1 = spec.fg_box.to_pixels(size, size)
    bg[y0:y1, x0:x1] = mean
    fg = foreground_raster(spec, size)
    return Sample(background=bg, query_box=spec.fg_box, foreground=fg,
                  label=1, source="same_image_gt")


# ---------------------------------------------------------------------------
# Compatibility oracle
# ---------------------------------------------------------------------------

def slope_angle(slope: float) -> float:
    return math.atan(slope)


def oracle_attrs(bg_scene: SceneSpec, fg_hue: float, fg_orientation: float,
                 fg_aspect: float, cfg: CorpusConfig) -> int:
    """Attribute-level oracle; thresholds inclusive."""
    if hue_distance(fg_hue, bg_scene.scene_hue) > cfg.tau_hue:
        return 0
    if abs(fg_orientation - slope_angle(bg_scene.ground_slope)) > cfg.tau_geo:
        return 0
    box_ar = bg_scene.fg_box.w / bg_scene.fg_box.h
    r = fg_aspect / box_ar
    if max(r, 1.0 / r) > cfg.tau_ar:
        return 0
    return 1


def oracle_compatible(bg_scene: SceneSpec, fg_scene: SceneSpec,
                      cfg: CorpusConfig | None = None) -> int:
    """1 iff the foreground of fg_scene suits the background of bg_scene."""
    cfg = cfg or CorpusConfig()
    if bg_scene.category != fg_scene.category:
        raise ValueError("oracle compares foregrounds within one category")
    fg_aspect = fg_scene.fg_box.w / fg_scene.fg_box.h
    return oracle_attrs(bg_scene, fg_scene.fg_hue, fg_scene.fg_orientation,
                        fg_aspect, cfg)


# ---------------------------------------------------------------------------
# Dataset build
# ---------------------------------------------------------------------------

def _seed_for(root_seed: int, split: str, cat_idx: int, index: int, attempt: int = 0) -> int:
    # disjoint, deterministic seed blocks per (split, category, item)
    split_idx = SPLITS.index(split)
    return ((root_seed * 31 + split_idx) * 8 + cat_idx) * 100_000 + index + attempt * 7_919


def _mk_id(split: str, category: str, kind: str, index: int) -> str:
    return f"{_SPLIT_CODE[split]}-{category}-{kind}{index:03d}"


class ManifestEntry(dict):
    pass


def build_dataset(cfg: CorpusConfig, out_dir) -> dict:
    """Generate the corpus on disk and return {split: [manifest, ...]}.

    Layout: <out>/<split>/<category>/{bg,fg}_<idx>.png plus manifest.json per
    category directory. test_r candidates reference test_s foreground ids.
    """
    cfg.validate()
    out = Path(out_dir)
    cats = CATEGORIES[:cfg.categories]
    manifests: dict[str, list[dict]] = {s: [] for s in SPLITS}
    for ci, cat in enumerate(cats):
        train_m = _build_paired_split("train", ci, cat, cfg.train_per_category,
                                      cfg.train_per_category, cfg, out)
        test_m = _build_paired_split("test_s", ci, cat, cfg.test_backgrounds,
                                     cfg.test_foregrounds, cfg, out)
        testr_m = _build_query_split(ci, cat, test_m, cfg, out)
        manifests["train"].append(train_m)
        manifests["test_s"].append(test_m)
        manifests["test_r"].append(testr_m)
    for split in SPLITS:
        for m in manifests[split]:
            path = out / split / m["category"] / "manifest.json"
            path.write_text(json.dumps(m, indent=1, sort_keys=True))
    return manifests


def _build_paired_split(split: str, ci: int, cat: str, n_backgrounds: int,
                        n_foregrounds: int, cfg: CorpusConfig, out: Path) -> dict:
    """A split whose every background has a same-image ground truth; extra
    foreground-only scenes can widen the candidate pool (test_s)."""
    if n_foregrounds < n_backgrounds:
        raise ConfigError("foreground pool cannot be smaller than background count")
    d = out / split / cat
    d.mkdir(parents=True, exist_ok=True)
    specs: list[SceneSpec] = []
    attempts = [0] * n_foregrounds
    for i in range(n_foregrounds):
        specs.append(scene_spec(_seed_for(cfg.seed, split, ci, i), cat, cfg))

    def labels_for(bg_spec):
        return [oracle_compatible(bg_spec, s, cfg) for s in specs]

    # every background needs at least one oracle-negative candidate; regenerate
    # the offending scene with a bumped seed (vanishingly rare at default taus)
    for _round in range(50):
        bad = None
        for i in range(n_backgrounds):
            lab = labels_for(specs[i])
            if all(lab):
                bad = i
                break
        if bad is None:
            break
        attempts[bad] += 1
        specs[bad] = scene_spec(
            _seed_for(cfg.seed, split, ci, bad, attempts[bad]), cat, cfg)
    else:
        raise RuntimeError(f"could not satisfy negative-candidate invariant for {split}/{cat}")

    fg_ids = [_mk_id(split, cat, "f", i) for i in range(n_foregrounds)]
    entries, backgrounds, foregrounds = [], {}, {}
    for i, spec in enumerate(specs):
        fg = foreground_raster(spec, cfg.size)
        fg_file = f"fg_{i:03d}.png"
        save_png(d / fg_file, fg)
        from .imaging import glyph_aspect_ratio
        foregrounds[fg_ids[i]] = {
            "file": fg_file, "scene": spec.to_json(),
            "aspect_ratio": glyph_aspect_ratio(fg),
        }
        if i < n_backgrounds:
            _, raster = generate_scene(spec.seed, cat, cfg)
            sample = split_scene(spec, raster, cfg)
            bg_id = _mk_id(split, cat, "b", i)
            bg_file = f"bg_{i:03d}.png"
            save_png(d / bg_file, sample.background)
            backgrounds[bg_id] = {"file": bg_file, "scene": spec.to_json(),
                                  "mean_filled": True}
            entries.append({
                "background": bg_id,
                "query_box": [spec.fg_box.x, spec.fg_box.y, spec.fg_box.w, spec.fg_box.h],
                "gt_foreground": fg_ids[i],
                "candidates": list(fg_ids),
                "labels": labels_for(spec),
            })
    return {"split": split, "category": cat, "entries": entries,
            "backgrounds": backgrounds, "foregrounds": foregrounds}


def _build_query_split(ci: int, cat: str, test_manifest: dict,
                       cfg: CorpusConfig, out: Path) -> dict:
    """test_r: fresh backgrounds (no ground truth, box kept unfilled on disk)
    labelled by the oracle against the shared test_s foreground pool."""
    split = "test_r"
    d = out / split / cat
    d.mkdir(parents=True, exist_ok=True)
    fg_ids = sorted(test_manifest["foregrounds"].keys())
    fg_specs = [SceneSpec.from_json(test_manifest["foregrounds"][f]["scene"])
                for f in fg_ids]
    entries, backgrounds = [], {}
    n_cand = len(fg_ids)
    for i in range(cfg.test_r_backgrounds):
        for attempt in range(200):
            spec = scene_spec(_seed_for(cfg.seed, split, ci, i, attempt), cat, cfg)
            labels = [oracle_compatible(spec, s, cfg) for s in fg_specs]
            pos = sum(labels)
            if 1 <= pos <= n_cand - 1:
                break
        else:
            raise RuntimeError(f"no admissible test_r background for {cat}[{i}]")
        raster = render_background(spec, cfg.size)
        bg_id = _mk_id(split, cat, "b", i)
        bg_file = f"bg_{i:03d}.png"
        save_png(d / bg_file, raster)
        backgrounds[bg_id] = {"file": bg_file, "scene": spec.to_json(),
                              "mean_filled": False}
        entries.append({
            "background": bg_id,
            "query_box": [spec.fg_box.x, spec.fg_box.y, spec.fg_box.w, spec.fg_box.h],
            "gt_foreground": None,
            "candidates": list(fg_ids),
            "labels": labels,
        })
    return {"split": split, "category": cat, "entries": entries,
            "backgrounds": backgrounds, "foregrounds": {}}


# ---------------------------------------------------------------------------
# Corpus access
# ---------------------------------------------------------------------------

class CorpusView:
    """Read access to a built corpus: manifests plus raster loading by id."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifests: dict[str, list[dict]] = {}
        for split in SPLITS:
            split_dir = self.root / split
            if not split_dir.is_dir():
                continue
            ms = []
            for mpath in sorted(split_dir.glob("*/manifest.json")):
                ms.append(json.loads(mpath.read_text()))
            self.manifests[split] = ms
        if not self.manifests:
            raise FileNotFoundError(f"no corpus manifests under {self.root}")
        self._index: dict[str, Path] = {}
        self._scenes: dict[str, SceneSpec] = {}
        self._fg_meta: dict[str, dict] = {}
        for split, ms in self.manifests.items():
            for m in ms:
                cat_dir = self.root / split / m["category"]
                for bg_id, rec in m["backgrounds"].items():
                    self._index[bg_id] = cat_dir / rec["file"]
                    self._scenes[bg_id] = SceneSpec.from_json(rec["scene"])
                for fg_id, rec in m["foregrounds"].items():
                    self._index[fg_id] = cat_dir / rec["file"]
                    self._scenes[fg_id] = SceneSpec.from_json(rec["scene"])
                    self._fg_meta[fg_id] = rec
        self._cache: dict[str, np.ndarray] = {}

    def categories(self, split: str) -> list[str]:
        return [m["category"] for m in self.manifests[split]]

    def manifest(self, split: str, category: str) -> dict:
        for m in self.manifests[split]:
            if m["category"] == category:
                return m
        raise KeyError(f"no manifest for {split}/{category}")

    def has(self, image_id: str) -> bool:
        return image_id in self._index

    def raster(self, image_id: str) -> np.ndarray:
        if image_id not in self._cache:
            if image_id not in self._index:
                raise KeyError(f"unknown image id '{image_id}'")
            self._cache[image_id] = load_png(self._index[image_id])
        return self._cache[image_id]

    def scene(self, image_id: str) -> SceneSpec:
        return self._scenes[image_id]

    def fg_aspect_ratio(self, fg_id: str) -> float:
        return self._fg_meta[fg_id]["aspect_ratio"]
