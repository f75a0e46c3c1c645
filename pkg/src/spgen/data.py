"""Scanpath/manifest formats, image loading and the synthetic blob dataset."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .metrics.saliency import SaliencyMap, build_saliency_map
from .scanpath import ScanPath, as_fixations

DOMAINS = ("source", "target")
SPLITS = ("train", "val", "test")
# per-channel direction of the target-domain intensity shift (R up, B down)
SHIFT_DIRECTION = np.array([1.0, 0.0, -1.0], dtype=np.float32)
PEAK_LADDER = np.array([0.6, 0.5, 0.4, 0.3, 0.2])


class DataError(ValueError):
    """Malformed or missing dataset files."""


@dataclass
class Sample:
    image: np.ndarray                       # (3, H, W) float32 in [0, 1]
    scanpaths: list[ScanPath]
    saliency: SaliencyMap | None = None
    domain: str = "source"
    id: str = ""

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise DataError(f"domain must be one of {DOMAINS}, got {self.domain!r}")


@dataclass
class ScanpathFile:
    image: str
    width: int
    height: int
    scanpaths: list[ScanPath]
    observers: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# scanpath JSON


def _field(obj, key, where, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise DataError(f"{where}: missing field {key!r}")
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        raise DataError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def parse_scanpaths(doc, source: str = "<memory>") -> ScanpathFile:
    width = _field(doc, "width", source, (int, float))
    height = _field(doc, "height", source, (int, float))
    entries = _field(doc, "scanpaths", source, list)
    paths, observers = [], []
    for s, entry in enumerate(entries):
        where = f"{source}: scanpaths[{s}]"
        fixes = _field(entry, "fixations", where, list)
        if not fixes:
            raise DataError(f"{where}: empty scanpath")
        pts = []
        for f, fix in enumerate(fixes):
            fw = f"{where}.fixations[{f}]"
            x = _field(fix, "x", fw, (int, float))
            y = _field(fix, "y", fw, (int, float))
            if not (0 <= x <= 1 and 0 <= y <= 1):
                raise DataError(f"{fw}: coordinate ({x}, {y}) outside the normalized range [0, 1] "
                                f"(fixation index {f})")
            pts.append((float(x), float(y)))
        paths.append(ScanPath(np.array(pts)))
        observers.append(str(entry.get("observer", s)) if isinstance(entry, dict) else str(s))
    return ScanpathFile(str(doc.get("image", "")), int(width), int(height), paths, observers)


def read_scanpath_file(path) -> ScanpathFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read scanpath file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_scanpaths(doc, str(path))


def load_scanpaths(path) -> list[ScanPath]:
    return read_scanpath_file(path).scanpaths


def scanpath_document(scanpaths, image: str = "", width: int = 1, height: int = 1,
                      observers=None) -> dict:
    observers = observers or [str(k) for k in range(len(scanpaths))]
    return {
        "image": image,
        "width": int(width),
        "height": int(height),
        "scanpaths": [
            {"observer": obs, "fixations": [{"x": float(x), "y": float(y)} for x, y in as_fixations(sp)]}
            for obs, sp in zip(observers, scanpaths)
        ],
    }


def write_scanpaths(path, scanpaths, image: str = "", width: int = 1, height: int = 1, observers=None) -> None:
    doc = scanpath_document(scanpaths, image, width, height, observers)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


# ---------------------------------------------------------------------------
# images


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of (C, H, W) with corner pixels aligned."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()

    def coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            src = np.zeros(n_out)
        else:
            src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = coords(h, out_h)
    x0, x1, fx = coords(w, out_w)
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    return (top * (1 - fy)[:, None] + bot * fy[:, None]).astype(img.dtype)


def load_image(path, target_h: int, target_w: int) -> np.ndarray:
    """Decode PNG/PPM to a (3, target_h, target_w) float32 array in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise DataError(f"{path}: unsupported image format {im.format}")
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except DataError:
        raise
    except FileNotFoundError as exc:
        raise DataError(f"image not found: {path}") from exc
    except OSError as exc:
        raise DataError(f"{path}: cannot decode image ({exc})") from exc
    return resize_bilinear(arr.transpose(2, 0, 1), target_h, target_w)


def save_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(image).transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path, format="PNG")


def load_saliency(path) -> SaliencyMap:
    """8- or 16-bit grayscale PNG/PGM, scaled to [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
            mode = im.mode
    except FileNotFoundError as exc:
        raise DataError(f"saliency map not found: {path}") from exc
    except OSError as exc:
        raise DataError(f"{path}: cannot decode saliency map ({exc})") from exc
    if arr.ndim != 2:
        raise DataError(f"{path}: saliency map must be single-channel, got mode {mode}")
    scale = 255.0 if arr.dtype == np.uint8 else 65535.0
    return SaliencyMap(arr.astype(np.float64) / scale)


def save_saliency(path, saliency) -> None:
    raw = saliency.raw if isinstance(saliency, SaliencyMap) else np.asarray(saliency)
    peak = raw.max() or 1.0
    arr = np.rint(raw / peak * 65535).astype(np.uint16)
    Image.fromarray(arr).save(path, format="PNG")


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    image: Path
    scanpaths: Path | None
    saliency: Path | None
    domain: str
    split: str

    @property
    def id(self) -> str:
        return (self.scanpaths or self.image).stem


def read_manifest(path, split: str | None = None, check_files: bool = True) -> list[ManifestEntry]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, list):
        raise DataError(f"{path}: manifest must be a JSON array")
    root = path.parent
    entries = []
    for k, item in enumerate(doc):
        where = f"{path}: entry {k}"
        image = _field(item, "image", where, str)
        domain = item.get("domain", "source")
        entry_split = item.get("split", "train")
        if domain not in DOMAINS:
            raise DataError(f"{where}: domain must be one of {DOMAINS}")
        if entry_split not in SPLITS:
            raise DataError(f"{where}: split must be one of {SPLITS}")
        sp = item.get("scanpaths")
        sal = item.get("saliency")
        entry = ManifestEntry(root / image, root / sp if sp else None, root / sal if sal else None,
                              domain, entry_split)
        if check_files:
            for p in (entry.image, entry.scanpaths, entry.saliency):
                if p is not None and not p.is_file():
                    raise DataError(f"{where}: referenced file does not exist: {p}")
        if split is None or entry_split == split:
            entries.append(entry)
    return entries


def load_dataset(manifest, h: int = 64, w: int = 64, split: str | None = None,
                 with_scanpaths: bool = True) -> list[Sample]:
    samples = []
    for entry in read_manifest(manifest, split):
        paths = load_scanpaths(entry.scanpaths) if (with_scanpaths and entry.scanpaths) else []
        sal = load_saliency(entry.saliency) if entry.saliency else None
        samples.append(Sample(load_image(entry.image, h, w), paths, sal, entry.domain, entry.id))
    return samples


def write_dataset(samples, out_dir, split: str = "train") -> Path:
    """Write images, scanpath JSON, saliency PNGs and ``manifest.json``."""
    out = Path(out_dir)
    for sub in ("images", "scanpaths", "saliency"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    manifest = []
    for s in samples:
        _, h, w = s.image.shape
        img_rel = f"images/{s.id}.png"
        save_image(out / img_rel, s.image)
        entry = {"image": img_rel, "scanpaths": None, "saliency": None, "domain": s.domain, "split": split}
        if s.scanpaths:
            sp_rel = f"scanpaths/{s.id}.json"
            write_scanpaths(out / sp_rel, s.scanpaths, img_rel, w, h)
            entry["scanpaths"] = sp_rel
        if s.saliency is not None:
            sal_rel = f"saliency/{s.id}.png"
            save_saliency(out / sal_rel, s.saliency)
            entry["saliency"] = sal_rel
        manifest.append(entry)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


# ---------------------------------------------------------------------------
# synthetic data


def synthetic_dataset(seed: int, n_images: int, h: int = 64, w: int = 64, domain_shift: float = 0.0,
                      domain: str = "source", sigma_px: float | None = None) -> list[Sample]:
    """Images of 2-5 Gaussian blobs; the scanpath visits blob centres brightest first.

    Target-domain images get ``domain_shift`` added along
    ``SHIFT_DIRECTION`` (red up, blue down) before clipping to [0, 1].
    """
    if n_images < 1:
        raise ValueError(f"n_images must be >= 1, got {n_images}")
    if domain not in DOMAINS:
        raise ValueError(f"domain must be one of {DOMAINS}, got {domain!r}")
    rng = np.random.default_rng(seed)
    sigma_px = h / 26 if sigma_px is None else sigma_px
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    blob_sigma = max(1.5, w / 20)
    margin = max(2, int(round(0.15 * min(h, w))))
    min_sep = 0.2 * min(h, w)
    prefix = "t" if domain == "target" else "s"
    samples = []
    for k in range(n_images):
        n_blobs = int(rng.integers(2, 6))
        centres: list[tuple[int, int]] = []
        while len(centres) < n_blobs:
            cx = int(rng.integers(margin, w - margin))
            cy = int(rng.integers(margin, h - margin))
            if all((cx - a) ** 2 + (cy - b) ** 2 >= min_sep ** 2 for a, b in centres):
                centres.append((cx, cy))
        # peak intensity falls on a fixed ladder by visit rank, so rank is a local cue
        peaks = PEAK_LADDER[:n_blobs] + rng.uniform(-0.015, 0.015, size=n_blobs)
        tint = rng.uniform(0.95, 1.05, size=(n_blobs, 3)).astype(np.float32)
        img = np.full((3, h, w), 0.2, dtype=np.float32)
        img += rng.normal(0, 0.02, size=img.shape).astype(np.float32)
        for (cx, cy), peak, col in zip(centres, peaks, tint):
            g = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * blob_sigma ** 2)) * peak
            img += col[:, None, None] * g[None]
        if domain == "target" and domain_shift:
            img += np.float32(domain_shift) * SHIFT_DIRECTION[:, None, None]
        img = np.clip(img, 0.0, 1.0).astype(np.float32)
        fix = np.array([(cx / w, cy / h) for cx, cy in centres], dtype=np.float64)
        sp = ScanPath(fix)
        samples.append(Sample(img, [sp], build_saliency_map([sp], sigma_px, h, w), domain, f"{prefix}{k:04d}"))
    return samples
