"""Synthetic radar-like scenes with a controllable imaging-condition confounder.

Each class is a fixed, asymmetric constellation of point scatterers. An
imaging condition (azimuth, clutter level, speckle strength) is drawn per
image from one of ``num_ic_buckets`` buckets. In the training split the
bucket is tied to the class with probability ``rho``; in the test split it
is drawn independently of the class.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import SeedStream, ShapeError, derive_sample_seed, is_power_of_two, normalize_minmax
from .pgm import read_pgm, write_pgm

_STREAM_LAYOUT = 11
_STREAM_TRAIN = 12
_STREAM_TEST = 13

BACKGROUND_MAX = 0.4
SPECKLE_RANGE = (0.3, 0.8)
SCATTERERS_PER_CLASS = 4
EXTENT_RANGE = (1.2, 2.2)
AMPLITUDE_RANGE = (0.6, 1.0)
# blob support radius in units of extent, used for the in-frame check
SUPPORT = 3.0


@dataclass(frozen=True)
class ImagingCondition:
    azimuth_deg: float
    background_level: float
    speckle_scale: float

    def __post_init__(self):
        if not 0.0 <= self.azimuth_deg < 360.0:
            raise ValueError(f"azimuth_deg must lie in [0, 360), got {self.azimuth_deg}")
        if not 0.0 <= self.background_level <= BACKGROUND_MAX:
            raise ValueError(f"background_level must lie in [0, {BACKGROUND_MAX}], got {self.background_level}")
        if not 0.0 < self.speckle_scale <= 1.0:
            raise ValueError(f"speckle_scale must lie in (0, 1], got {self.speckle_scale}")


@dataclass(frozen=True)
class SceneSpec:
    """Class-specific scatterer layout.

    ``scatterers`` holds ``(row, col, amplitude, extent)`` tuples with
    ``row``/``col`` given as offsets from the image centre in pixels.
    """

    class_id: int
    scatterers: tuple[tuple[float, float, float, float], ...]

    def __post_init__(self):
        if len(self.scatterers) < 3:
            raise ValueError("a scene needs at least 3 scatterers")


@dataclass(frozen=True)
class ConfoundConfig:
    num_classes: int = 3
    n_per_class: int = 20
    h: int = 64
    w: int = 64
    rho: float = 0.9
    num_ic_buckets: int = 4
    test_per_class: int = 200

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if self.test_per_class < 1:
            raise ValueError("test_per_class must be >= 1")
        if not (is_power_of_two(self.h) and is_power_of_two(self.w)) or min(self.h, self.w) < 8:
            raise ValueError(f"h and w must be powers of two >= 8, got {self.h}x{self.w}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if not 2 <= self.num_ic_buckets <= 36:
            raise ValueError(f"num_ic_buckets must lie in [2, 36], got {self.num_ic_buckets}")


@dataclass(frozen=True)
class LabeledImage:
    image: np.ndarray
    label: int
    ic: ImagingCondition
    bucket: int


def _signature(points: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    return np.sort(d[np.triu_indices(len(points), 1)])


def class_layouts(num_classes: int, h: int, w: int, rng: SeedStream) -> list[SceneSpec]:
    """Draw one asymmetric constellation per class.

    Layouts are rejected until every pair of classes differs in its sorted
    inter-scatterer distances (invariant under rotation and flips) and no
    layout is close to its own mirror image.
    """
    gen = rng.generator()
    radius = min(h, w) / 2.0 - 1.0 - SUPPORT * EXTENT_RANGE[1]
    if radius < 2.0:
        raise ShapeError(f"{h}x{w} is too small to hold a scatterer layout")
    min_sep = 2.0 * EXTENT_RANGE[1]
    layouts: list[SceneSpec] = []
    signatures: list[np.ndarray] = []
    while len(layouts) < num_classes:
        r = radius * np.sqrt(gen.uniform(0.1, 1.0, SCATTERERS_PER_CLASS))
        theta = gen.uniform(0.0, 2.0 * np.pi, SCATTERERS_PER_CLASS)
        pts = np.stack([r * np.sin(theta), r * np.cos(theta)], axis=1)
        sig = _signature(pts)
        if sig[0] < min(min_sep, radius / 2):
            continue
        if any(np.max(np.abs(sig - s)) < 0.1 * radius for s in signatures):
            continue
        if _near_mirror_symmetric(pts, 0.05 * radius):
            continue
        amp = gen.uniform(*AMPLITUDE_RANGE, SCATTERERS_PER_CLASS)
        ext = gen.uniform(*EXTENT_RANGE, SCATTERERS_PER_CLASS)
        scat = tuple((float(p[0]), float(p[1]), float(a), float(e)) for p, a, e in zip(pts, amp, ext))
        layouts.append(SceneSpec(len(layouts), scat))
        signatures.append(sig)
    return layouts


def _near_mirror_symmetric(pts: np.ndarray, tol: float) -> bool:
    # a point set equals its own reflection iff some reflection axis maps it onto itself;
    # probe axes through the centroid at 1-degree steps
    c = pts - pts.mean(axis=0)
    for deg in range(180):
        t = np.deg2rad(deg)
        axis = np.array([np.sin(t), np.cos(t)])
        proj = c @ axis
        refl = 2.0 * proj[:, None] * axis[None, :] - c
        d = np.linalg.norm(c[:, None, :] - refl[None, :, :], axis=-1)
        if np.all(d.min(axis=1) < tol):
            return True
    return False


def rotated_positions(spec: SceneSpec, azimuth_deg: float, h: int, w: int) -> np.ndarray:
    t = np.deg2rad(azimuth_deg)
    cos, sin = np.cos(t), np.sin(t)
    off = np.array([(s[0], s[1]) for s in spec.scatterers])
    rows = cos * off[:, 0] - sin * off[:, 1] + (h - 1) / 2.0
    cols = sin * off[:, 0] + cos * off[:, 1] + (w - 1) / 2.0
    return np.stack([rows, cols], axis=1)


def clean_scene(spec: SceneSpec, ic: ImagingCondition, h: int, w: int) -> np.ndarray:
    """Noise-free rendering: clutter level plus rotated Gaussian blobs."""
    pos = rotated_positions(spec, ic.azimuth_deg, h, w)
    ext = np.array([s[3] for s in spec.scatterers])
    if np.any(pos - SUPPORT * ext[:, None] < 0) or np.any(pos[:, 0] + SUPPORT * ext > h - 1) \
            or np.any(pos[:, 1] + SUPPORT * ext > w - 1):
        raise ValueError(f"class {spec.class_id} scatterers leave the {h}x{w} frame at azimuth {ic.azimuth_deg}")
    rr = np.arange(h, dtype=np.float64)[:, None]
    cc = np.arange(w, dtype=np.float64)[None, :]
    img = np.full((h, w), ic.background_level)
    for (r, c), (_, _, amp, e) in zip(pos, spec.scatterers):
        img += amp * np.exp(-((rr - r) ** 2 + (cc - c) ** 2) / (2.0 * e * e))
    return img


def render_scene(spec: SceneSpec, ic: ImagingCondition, rng: SeedStream, h: int = 64, w: int = 64) -> np.ndarray:
    """Render one speckled scene.

    Speckle is ``(1 - s) + s * E`` with ``E ~ Exp(1)`` and ``s`` the
    speckle scale, so it has unit mean and never goes negative.
    """
    clean = clean_scene(spec, ic, h, w)
    e = rng.generator().exponential(1.0, size=(h, w))
    s = ic.speckle_scale
    return clean * ((1.0 - s) + s * e)


def sample_ic(bucket: int, num_buckets: int, gen: np.random.Generator) -> ImagingCondition:
    """Draw an imaging condition inside ``bucket``.

    Azimuth is uniform over the bucket's arc; clutter level is uniform over
    the bucket's slice of ``[0, BACKGROUND_MAX]``; speckle strength does not
    depend on the bucket.
    """
    arc = 360.0 / num_buckets
    az = float(gen.uniform(bucket * arc, (bucket + 1) * arc)) % 360.0
    band = BACKGROUND_MAX / num_buckets
    bg = float(gen.uniform(bucket * band, (bucket + 1) * band))
    sp = float(gen.uniform(*SPECKLE_RANGE))
    return ImagingCondition(az, bg, sp)


def _draw_split(cfg, layouts, rng: SeedStream, per_class: int, rho: float) -> list[LabeledImage]:
    out = []
    render_root = rng.child(1)
    for k in range(cfg.num_classes):
        for j in range(per_class):
            i = k * per_class + j
            gen = derive_sample_seed(rng, 0, i).generator()
            if gen.random() < rho:
                bucket = k % cfg.num_ic_buckets
            else:
                bucket = int(gen.integers(cfg.num_ic_buckets))
            ic = sample_ic(bucket, cfg.num_ic_buckets, gen)
            img = render_scene(layouts[k], ic, derive_sample_seed(render_root, 0, i), cfg.h, cfg.w)
            out.append(LabeledImage(img, k, ic, bucket))
    return out


def gen_dataset(cfg: ConfoundConfig, rng: SeedStream) -> tuple[list[LabeledImage], list[LabeledImage]]:
    """Generate ``(train, test)`` as a pure function of ``(cfg, rng)``.

    Items are ordered by class, then by index within the class.
    """
    cfg.validate()
    layouts = class_layouts(cfg.num_classes, cfg.h, cfg.w, rng.child(_STREAM_LAYOUT))
    train = _draw_split(cfg, layouts, rng.child(_STREAM_TRAIN), cfg.n_per_class, cfg.rho)
    test = _draw_split(cfg, layouts, rng.child(_STREAM_TEST), cfg.test_per_class, 0.0)
    return train, test


def as_arrays(items: list[LabeledImage]) -> tuple[np.ndarray, np.ndarray]:
    """Stack min-max normalized images and labels."""
    X = np.stack([normalize_minmax(it.image) for it in items]) if items else np.zeros((0, 0, 0))
    y = np.array([it.label for it in items], dtype=np.int64)
    return X, y


# --- on-disk layout -------------------------------------------------------

MANIFEST = "manifest.jsonl"


def manifest_record(path: str, item: LabeledImage) -> dict:
    return {
        "path": path,
        "label": item.label,
        "azimuth_deg": item.ic.azimuth_deg,
        "background_level": item.ic.background_level,
        "speckle_scale": item.ic.speckle_scale,
        "bucket": item.bucket,
    }


def write_dataset(root: str | os.PathLike, train: list[LabeledImage], test: list[LabeledImage]) -> Path:
    """Write ``<root>/<split>/<class_id>/<index>.pgm`` plus ``manifest.jsonl``.

    ``index`` counts images within one class of one split. Images are
    min-max normalized before 8-bit quantization.
    """
    root = Path(root)
    lines = []
    for split, items in (("train", train), ("test", test)):
        counters: dict[int, int] = {}
        for item in items:
            idx = counters.get(item.label, 0)
            counters[item.label] = idx + 1
            rel = f"{split}/{item.label}/{idx}.pgm"
            dest = root / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            write_pgm(dest, normalize_minmax(item.image))
            lines.append(json.dumps(manifest_record(rel, item)))
    manifest = root / MANIFEST
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def load_split(root: str | os.PathLike, split: str) -> tuple[np.ndarray, np.ndarray]:
    """Read one split back as ``(X, y)`` with pixel values in [0, 1]."""
    root = Path(root)
    images, labels = [], []
    with open(root / MANIFEST, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["path"].split("/", 1)[0] != split:
                continue
            images.append(read_pgm(root / rec["path"]))
            labels.append(int(rec["label"]))
    if not images:
        raise FileNotFoundError(f"no {split} images listed in {root / MANIFEST}")
    return np.stack(images), np.array(labels, dtype=np.int64)
