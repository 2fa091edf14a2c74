"""Synthetic brain-like phantoms with ground-truth lesion masks, storage, and manifests.

Each phantom is an elliptical "tissue" region with smooth shading and
low-frequency texture. Unhealthy phantoms carry one to three blob lesions that
differ from tissue both in intensity and in texture frequency. Intensities are
divided by the 99th percentile of the foreground and mapped to [-1, 1].

The generator also keeps the noise-free components it drew (healthy mean,
lesion offset, texture variances), which define a subject-specific two-class
Gaussian model; :meth:`PhantomSample.oracle` turns them into an exact score
oracle. Healthy subjects get a counterfactual lesion layout for that purpose.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import ndimage

from .score import GaussianMixtureOracle

HEALTHY = "healthy"
UNHEALTHY = "unhealthy"
_LABEL_CODE = {HEALTHY: 0, UNHEALTHY: 1}
_CODE_LABEL = {v: k for k, v in _LABEL_CODE.items()}

MAGIC = b"FPD1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHHB")
BACKGROUND_VAR = 1e-4  # oracle variance floor for the constant background


class GenerationError(RuntimeError):
    pass


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomConfig:
    size: int = 64
    axis_range: tuple[float, float] = (0.32, 0.44)  # ellipse semi-axes, fraction of size
    tissue_level: float = 0.70
    shading: float = 0.10
    texture_amplitude: float = 0.05
    texture_sigma: float = 0.7
    lesion_contrast: float = -0.05
    contrast_jitter: float = 0.2  # per-sample contrast is contrast * U(1 - j, 1 + j)
    texture_jitter: float = 0.5  # per-sample texture amplitude, same form
    lesion_texture_amplitude: float = 0.02
    lesion_texture_sigma: float = 0.7
    area_range: tuple[int, int] = (80, 400)
    max_blobs: int = 3
    unhealthy_prob: float = 0.5
    max_retries: int = 200

    def __post_init__(self):
        lo, hi = self.area_range
        if not (0 < lo <= hi):
            raise ValueError(f"bad lesion area range {self.area_range}")
        if not 0.0 <= self.unhealthy_prob <= 1.0:
            raise ValueError("unhealthy_prob must lie in [0, 1]")
        if not (0.0 <= self.contrast_jitter < 1.0 and 0.0 <= self.texture_jitter < 1.0):
            raise ValueError("jitter fractions must lie in [0, 1)")
        if self.size < 8:
            raise ValueError("phantoms must be at least 8x8")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PhantomConfig":
        d = dict(d)
        for k in ("axis_range", "area_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class PhantomSample:
    image: np.ndarray  # float32, (H, W), values in [-1, 1]
    label: str
    lesion_mask: np.ndarray
    foreground: np.ndarray
    seed: int = -1
    healthy_mean: np.ndarray | None = field(default=None, repr=False)
    lesion_offset: np.ndarray | None = field(default=None, repr=False)
    tissue_var: np.ndarray | None = field(default=None, repr=False)
    lesion_var: np.ndarray | None = field(default=None, repr=False)
    contrast: float = 0.0  # raw-intensity lesion offset drawn for this subject

    @property
    def lesion_area(self) -> int:
        return int(self.lesion_mask.sum())

    def oracle(self, prior_unhealthy: float = 0.5, location_weight: float = 1.0,
               location_blur: float = 0.0) -> GaussianMixtureOracle:
        """Subject-specific two-class Gaussian model of this phantom.

        With the defaults the unhealthy class knows the exact lesion layout.
        Lowering ``location_weight`` mixes that layout with a uniform lesion
        probability over the foreground (the lesion-area fraction), and
        ``location_blur`` smears the layout with a Gaussian of that width in
        pixels. The unhealthy class is then the moment-matched Gaussian of
        "lesion with probability P per pixel", so its variance grows by
        ``offset^2 P (1 - P)``.
        """
        if self.healthy_mean is None:
            raise ValueError("sample carries no generator components; regenerate it from its seed")
        if not 0.0 <= location_weight <= 1.0 or location_blur < 0:
            raise ValueError("location_weight must lie in [0, 1] and location_blur be >= 0")
        layout = self.lesion_offset != 0
        if location_weight == 1.0 and location_blur == 0.0:
            means = np.stack([self.healthy_mean, self.healthy_mean + self.lesion_offset])
            variances = np.stack([self.tissue_var, self.tissue_var + self.lesion_var])
        else:
            prob = layout.astype(float)
            if location_blur > 0:
                prob = ndimage.gaussian_filter(prob, location_blur, mode="constant")
                prob = np.clip(prob / prob[layout].mean(), 0.0, 1.0)
            uniform = np.where(self.foreground, layout.sum() / self.foreground.sum(), 0.0)
            prob = location_weight * prob + (1.0 - location_weight) * uniform
            offset = float(self.lesion_offset[layout].mean())
            lvar = float(self.lesion_var[layout].mean())
            means = np.stack([self.healthy_mean, self.healthy_mean + offset * prob])
            variances = np.stack([self.tissue_var,
                                  self.tissue_var + lvar * prob + offset ** 2 * prob * (1.0 - prob)])
        return GaussianMixtureOracle(means, variances, np.array([1 - prior_unhealthy, prior_unhealthy]))

    def same_content(self, other: "PhantomSample") -> bool:
        return (self.label == other.label
                and np.array_equal(self.image, other.image)
                and np.array_equal(self.lesion_mask, other.lesion_mask)
                and np.array_equal(self.foreground, other.foreground))


def _smooth_field(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return f / f.std()


def _ellipse(shape, cy, cx, ry, rx, theta) -> np.ndarray:
    yy, xx = np.mgrid[: shape[0], : shape[1]].astype(float)
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    return u * u + v * v <= 1.0


def _draw_lesions(rng: np.random.Generator, cfg: PhantomConfig, inner: np.ndarray) -> np.ndarray:
    lo, hi = cfg.area_range
    shape = inner.shape
    for _ in range(cfg.max_retries):
        target = rng.uniform(lo, hi)
        k = int(rng.integers(1, cfg.max_blobs + 1))
        parts = rng.dirichlet(np.full(k, 2.0)) * target
        mask = np.zeros(shape, dtype=bool)
        ys, xs = np.nonzero(inner)
        for area in parts:
            aspect = rng.uniform(0.6, 1.0)
            ry = np.sqrt(area / (np.pi * aspect))
            rx = ry * aspect
            j = int(rng.integers(len(ys)))
            mask |= _ellipse(shape, ys[j], xs[j], ry, rx, rng.uniform(0, np.pi))
        if mask.any() and not np.any(mask & ~inner) and lo <= mask.sum() <= hi:
            return mask
    raise GenerationError(f"could not place lesions after {cfg.max_retries} attempts")


def generate_sample(cfg: PhantomConfig, seed: int | np.random.Generator) -> PhantomSample:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(int(seed))
    n = cfg.size
    shape = (n, n)
    unhealthy = bool(rng.random() < cfg.unhealthy_prob)

    lo, hi = cfg.axis_range
    ry, rx = rng.uniform(lo, hi, size=2) * n
    cy, cx = (n - 1) / 2 + rng.uniform(-0.04, 0.04, size=2) * n
    fg = _ellipse(shape, cy, cx, ry, rx, rng.uniform(0, np.pi))
    shade = _smooth_field(rng, shape, n / 6.0)
    base = np.where(fg, cfg.tissue_level + cfg.shading * shade, 0.0)
    texture_unit = _smooth_field(rng, shape, cfg.texture_sigma)

    # Lesions stay clear of the foreground rim so the median filter sees tissue around them.
    inner = ndimage.binary_erosion(fg, iterations=2)
    lesion = _draw_lesions(rng, cfg, inner)
    contrast = cfg.lesion_contrast * rng.uniform(1 - cfg.contrast_jitter, 1 + cfg.contrast_jitter)
    lesion_tex = cfg.lesion_texture_amplitude * _smooth_field(rng, shape, cfg.lesion_texture_sigma)
    amplitude = cfg.texture_amplitude * rng.uniform(1 - cfg.texture_jitter, 1 + cfg.texture_jitter)
    texture = amplitude * texture_unit

    raw = base + np.where(fg, texture, 0.0)
    if unhealthy:
        raw = raw + np.where(lesion, contrast + lesion_tex, 0.0)
    p99 = float(np.percentile(raw[fg], 99))
    scale = 2.0 / p99
    image = (np.clip(raw / p99, 0.0, 1.0) * 2.0 - 1.0).astype(np.float32)

    healthy_mean = base * scale - 1.0
    offset = np.where(lesion, contrast * scale, 0.0)
    tissue_var = np.where(fg, (amplitude * scale) ** 2, BACKGROUND_VAR)
    lesion_var = np.where(lesion, (cfg.lesion_texture_amplitude * scale) ** 2, 0.0)
    return PhantomSample(
        image=image,
        label=UNHEALTHY if unhealthy else HEALTHY,
        lesion_mask=lesion if unhealthy else np.zeros(shape, dtype=bool),
        foreground=fg,
        seed=int(seed) if not isinstance(seed, np.random.Generator) else -1,
        healthy_mean=healthy_mean,
        lesion_offset=offset,
        tissue_var=tissue_var,
        lesion_var=lesion_var,
        contrast=float(contrast),
    )


def generate_unhealthy(cfg: PhantomConfig, seed: int) -> PhantomSample:
    """Unhealthy phantom drawn with the same machinery (label forced)."""
    return generate_sample(_forced(cfg, 1.0), seed)


def _forced(cfg: PhantomConfig, prob: float) -> PhantomConfig:
    d = cfg.to_dict()
    d["unhealthy_prob"] = prob
    return PhantomConfig.from_dict(d)


# -- persistence -------------------------------------------------------------

def encode_sample(sample: PhantomSample) -> bytes:
    h, w = sample.image.shape
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, h, w, _LABEL_CODE[sample.label])
    fg = np.packbits(np.asarray(sample.foreground, dtype=bool), axis=1).tobytes()
    les = np.packbits(np.asarray(sample.lesion_mask, dtype=bool), axis=1).tobytes()
    pix = np.asarray(sample.image, dtype="<f4").tobytes()
    return head + fg + les + pix


def decode_sample(blob: bytes, seed: int = -1) -> PhantomSample:
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, h, w, code = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in _CODE_LABEL:
        raise FormatError(f"bad label code {code}")
    row = (w + 7) // 8
    need = _HEADER.size + 2 * h * row + 4 * h * w
    if len(blob) != need:
        raise FormatError(f"payload size {len(blob)} != expected {need}")
    off = _HEADER.size

    def bits(o):
        packed = np.frombuffer(blob, dtype=np.uint8, count=h * row, offset=o).reshape(h, row)
        return np.unpackbits(packed, axis=1, count=w).astype(bool)

    fg = bits(off)
    les = bits(off + h * row)
    pix = np.frombuffer(blob, dtype="<f4", count=h * w, offset=off + 2 * h * row).reshape(h, w)
    return PhantomSample(image=pix.astype(np.float32), label=_CODE_LABEL[code], lesion_mask=les,
                         foreground=fg, seed=seed)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_sample(sample: PhantomSample, path) -> str:
    """Write a sample file; returns the sha256 digest of its bytes."""
    blob = encode_sample(sample)
    atomic_write_bytes(path, blob)
    return hashlib.sha256(blob).hexdigest()


def load_sample(path, seed: int = -1) -> PhantomSample:
    return decode_sample(Path(path).read_bytes(), seed)


# -- datasets ----------------------------------------------------------------

SPLITS = ("train", "val", "test")


def derive_seed(master_seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([int(master_seed), SPLITS.index(split) if split in SPLITS else 99, int(index)])
    return int(ss.generate_state(1)[0])


@dataclass
class DatasetManifest:
    root: Path
    generator: dict
    generator_hash: str
    master_seed: int
    splits: dict  # split -> list of {"file", "label", "seed", "lesion_area", "sha256"}

    def entries(self, split: str) -> list[dict]:
        return self.splits.get(split, [])

    def count(self, split: str) -> int:
        return len(self.entries(split))

    def body(self) -> dict:
        return {
            "generator": self.generator,
            "generator_hash": self.generator_hash,
            "master_seed": self.master_seed,
            "splits": {k: {"count": len(v), "samples": v} for k, v in self.splits.items()},
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.body(), sort_keys=True).encode()).hexdigest()

    def save(self, path=None) -> Path:
        path = Path(path) if path else self.root / "manifest.json"
        doc = dict(self.body(), manifest_hash=self.digest())
        atomic_write_bytes(path, json.dumps(doc, indent=1, sort_keys=True).encode())
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        m = cls(root=path.parent, generator=doc["generator"], generator_hash=doc["generator_hash"],
                master_seed=doc["master_seed"],
                splits={k: v["samples"] for k, v in doc["splits"].items()})
        if doc.get("manifest_hash") != m.digest():
            raise FormatError("manifest hash mismatch")
        for split in m.splits:
            if doc["splits"][split]["count"] != m.count(split):
                raise FormatError(f"count mismatch in split {split}")
        return m

    def config(self) -> PhantomConfig:
        return PhantomConfig.from_dict(self.generator)

    def sample(self, split: str, index: int, with_components: bool = False) -> PhantomSample:
        entry = self.entries(split)[index]
        sample = load_sample(self.root / entry["file"], seed=entry["seed"])
        if with_components:
            full = generate_sample(self.config(), entry["seed"])
            if not full.same_content(sample):
                raise FormatError(f"{entry['file']} does not match its regenerated content")
            return full
        return sample


def generate_dataset(cfg: PhantomConfig, counts: Mapping[str, int], seed: int, root) -> DatasetManifest:
    root = Path(root)
    splits = {}
    for split, n in counts.items():
        if n < 0:
            raise ValueError(f"negative count for split {split}")
        entries = []
        for i in range(int(n)):
            s = derive_seed(seed, split, i)
            sample = generate_sample(cfg, s)
            rel = f"{split}/{i:05d}.fpd"
            digest = save_sample(sample, root / rel)
            entries.append({"file": rel, "label": sample.label, "seed": s,
                            "lesion_area": sample.lesion_area, "sha256": digest})
        splits[split] = entries
    manifest = DatasetManifest(root=root, generator=cfg.to_dict(), generator_hash=cfg.digest(),
                               master_seed=int(seed), splits=splits)
    manifest.save()
    return manifest
