"""Dataset layout, augmentation, training patches and sliding-window inference."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .evaluation.types import EdgeMap, GroundTruth

IMAGE_SUFFIXES = (".png", ".pgm")
_ANNOTATOR = re.compile(r"^(?P<stem>.+)\.a(?P<idx>\d+)$")


class DataError(ValueError):
    """Dataset layout or content problem."""


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3, [0, 1]
    label: np.ndarray  # H x W, [0, 1]
    id: str = ""
    annotations: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.label = np.asarray(self.label, dtype=np.float32)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"sample {self.id!r}: image must be H x W x 3, got {self.image.shape}")
        if self.label.shape != self.image.shape[:2]:
            raise ValueError(f"sample {self.id!r}: label {self.label.shape} vs image {self.image.shape[:2]}")
        if self.label.size and (self.label.min() < 0 or self.label.max() > 1):
            raise ValueError(f"sample {self.id!r}: label values outside [0, 1]")

    def ground_truth(self) -> GroundTruth:
        anns = self.annotations or [self.label >= 0.5]
        return GroundTruth([np.asarray(a) >= 0.5 for a in anns], self.id)


@dataclass
class ManifestEntry:
    id: str
    image: str
    labels: list[str]


@dataclass
class DatasetManifest:
    root: Path
    split: str
    entries: list[ManifestEntry]

    def __len__(self) -> int:
        return len(self.entries)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------
def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def load_manifest(root, split: str = "train") -> DatasetManifest:
    """Pair ``images/<split>/*`` with ``labels/<split>/*`` by stem.

    Annotator variants ``<stem>.a0.png``, ``<stem>.a1.png``, ... attach to
    ``<stem>`` in index order.
    """
    root = Path(root)
    img_dir = root / "images" / split
    lab_dir = root / "labels" / split
    for d in (img_dir, lab_dir):
        if not d.is_dir():
            raise DataError(f"missing directory: {d}")
    images: dict[str, Path] = {}
    for p in _image_files(img_dir):
        if p.stem in images:
            raise DataError(f"duplicate image stem {p.stem!r} in {img_dir}")
        images[p.stem] = p
    labels: dict[str, list[tuple[int, Path]]] = {}
    for p in _image_files(lab_dir):
        m = _ANNOTATOR.match(p.stem)
        stem, idx = (m["stem"], int(m["idx"])) if m else (p.stem, -1)
        labels.setdefault(stem, []).append((idx, p))
    orphans = sorted(set(images) - set(labels))
    if orphans:
        raise DataError(f"image without label: {orphans[0]} (in {img_dir})")
    strays = sorted(set(labels) - set(images))
    if strays:
        raise DataError(f"label without image: {strays[0]} (in {lab_dir})")
    if not images:
        raise DataError(f"empty split {split!r} under {root}")
    entries = []
    for stem in sorted(images):
        group = sorted(labels[stem], key=lambda t: t[0])
        if len(group) > 1 and any(i < 0 for i, _ in group):
            raise DataError(f"{stem}: mixes a plain label with annotator-suffixed labels")
        entries.append(
            ManifestEntry(
                stem,
                str(images[stem].relative_to(root)),
                [str(p.relative_to(root)) for _, p in group],
            )
        )
    return DatasetManifest(root, split, entries)


def read_image(path) -> np.ndarray:
    """8-bit image as H x W x 3 float32 in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0


def read_label(path, soft: bool = False) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read label {path}: {exc}") from exc
    return arr if soft else (arr >= 0.5).astype(np.float32)


def load_sample(manifest: DatasetManifest, entry: ManifestEntry, soft: bool = False) -> Sample:
    image = read_image(manifest.root / entry.image)
    anns = [read_label(manifest.root / p, soft=False) for p in entry.labels]
    for a, p in zip(anns, entry.labels):
        if a.shape != image.shape[:2]:
            raise DataError(f"{entry.id}: label {p} is {a.shape}, image is {image.shape[:2]}")
    if len(anns) == 1:
        label = read_label(manifest.root / entry.labels[0], soft=True) if soft else anns[0]
    else:
        consensus = np.mean(anns, axis=0)
        label = consensus if soft else (consensus >= 0.5).astype(np.float32)
    return Sample(image, label, entry.id, anns)


def load_samples(manifest: DatasetManifest, soft: bool = False) -> list[Sample]:
    return [load_sample(manifest, e, soft) for e in manifest.entries]


def write_edge_png(path, values: np.ndarray) -> None:
    """8-bit grayscale PNG with value ``round(255 * p)``."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.rint(255.0 * v).astype(np.uint8), mode="L").save(path)


def read_edge_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read edge map {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class AugmentationPlan:
    base_rotations: tuple[int, ...] = (0, 90, 180, 270)
    fine_rotation_step: float | None = 15.0
    seed: int = 0
    max_per_base: int | None = None
    max_scale: float | None = None

    def __post_init__(self):
        for r in self.base_rotations:
            if r % 90:
                raise ValueError(f"base rotations must be multiples of 90 degrees, got {r}")
        if self.fine_rotation_step is not None and not 0 < self.fine_rotation_step <= 360:
            raise ValueError(f"fine rotation step must lie in (0, 360], got {self.fine_rotation_step}")
        if self.max_per_base is not None and self.max_per_base < 1:
            raise ValueError("max_per_base must be >= 1")

    @property
    def fine_angles(self) -> list[float]:
        if self.fine_rotation_step is None:
            return [0.0]
        n = int(math.floor(360.0 / self.fine_rotation_step + 1e-9))
        return [k * self.fine_rotation_step for k in range(n)]


def fit_scale(h: int, w: int, h1: int, w1: int, angle_deg: float) -> float:
    """Smallest zoom at which an h x w crop fits inside an h1 x w1 image rotated by the angle."""
    t = math.radians(angle_deg)
    c, s = abs(math.cos(t)), abs(math.sin(t))
    # snap exact right angles so axis-aligned cases stay exact
    c, s = (0.0 if c < 1e-12 else c), (0.0 if s < 1e-12 else s)
    return max((w * c + h * s) / w1, (w * s + h * c) / h1)


def _rotate_crop(image, label, angle_deg, h, w, rng) -> tuple[np.ndarray, np.ndarray, float]:
    h1, w1 = label.shape
    scale = fit_scale(h, w, h1, w1, angle_deg)
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    wr, hr = w / scale, h / scale
    # slack for the crop centre inside the source frame
    ex = 0.5 * (wr * abs(c) + hr * abs(s))
    ey = 0.5 * (wr * abs(s) + hr * abs(c))
    mx = max(0.5 * w1 - ex, 0.0)
    my = max(0.5 * h1 - ey, 0.0)
    cx = rng.uniform(-mx, mx) if mx > 1e-9 else 0.0
    cy = rng.uniform(-my, my) if my > 1e-9 else 0.0
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    u = (jj + 0.5 - 0.5 * w) / scale
    v = (ii + 0.5 - 0.5 * h) / scale
    xs = c * u + s * v + cx + 0.5 * w1 - 0.5
    ys = -s * u + c * v + cy + 0.5 * h1 - 0.5
    coords = np.stack([ys, xs])
    out_img = np.stack(
        [ndimage.map_coordinates(image[..., k], coords, order=1, mode="nearest") for k in range(3)], axis=-1
    )
    out_lab = ndimage.map_coordinates(label, coords, order=0, mode="nearest")
    return np.clip(out_img, 0.0, 1.0), out_lab, scale


def augment_with_stats(sample: Sample, plan: AugmentationPlan) -> tuple[list[Sample], int]:
    """All variants of ``sample`` plus the number of skipped variants.

    Element 0 is always the untouched sample.
    """
    h, w = sample.label.shape
    out = [sample]
    skipped = 0
    for bi, base in enumerate(plan.base_rotations):
        k = (base // 90) % 4
        img_b = np.rot90(sample.image, k, axes=(0, 1))
        lab_b = np.rot90(sample.label, k, axes=(0, 1))
        fine = list(enumerate(plan.fine_angles))
        if plan.max_per_base is not None and len(fine) > plan.max_per_base:
            pick = np.random.default_rng([plan.seed, bi, 10**6]).permutation(len(fine) - 1)[: plan.max_per_base - 1]
            fine = [fine[0]] + [fine[1 + i] for i in sorted(pick)]
        for fi, angle in fine:
            if k == 0 and angle == 0.0:
                continue  # identity already emitted
            rng = np.random.default_rng([plan.seed, bi, fi])
            if plan.max_scale is not None and fit_scale(h, w, *lab_b.shape, angle) > plan.max_scale:
                skipped += 1
                continue
            img, lab, _ = _rotate_crop(img_b, lab_b, angle, h, w, rng)
            out.append(Sample(img, lab, f"{sample.id}_r{base}_f{angle:g}"))
    return out, skipped


def augment(sample: Sample, plan: AugmentationPlan) -> list[Sample]:
    return augment_with_stats(sample, plan)[0]


# ---------------------------------------------------------------------------
# training patches
# ---------------------------------------------------------------------------
def _reflect_to(arr: np.ndarray, size: int) -> np.ndarray:
    h, w = arr.shape[:2]
    ph, pw = max(size - h, 0), max(size - w, 0)
    if not (ph or pw):
        return arr
    pad = [(ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, pad, mode="reflect" if min(h, w) > 1 else "edge")


def epoch_batches(
    samples: Sequence[Sample], patch: int = 320, batch: int = 8, seed: int = 0, epoch: int = 0
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One epoch of (images N x 3 x P x P, labels N x 1 x P x P) batches.

    Randomness depends only on ``(seed, epoch)``. The last batch may be short.
    """
    if not samples:
        raise DataError("no training samples")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(samples))
    for start in range(0, len(order), batch):
        imgs, labs = [], []
        for idx in order[start:start + batch]:
            s = samples[idx]
            img = _reflect_to(s.image, patch)
            lab = _reflect_to(s.label, patch)
            y = int(rng.integers(0, img.shape[0] - patch + 1))
            x = int(rng.integers(0, img.shape[1] - patch + 1))
            imgs.append(img[y:y + patch, x:x + patch].transpose(2, 0, 1))
            labs.append(lab[None, y:y + patch, x:x + patch])
        yield np.ascontiguousarray(np.stack(imgs), dtype=np.float32), np.ascontiguousarray(np.stack(labs), dtype=np.float32)


def sample_patches(
    samples: Sequence[Sample], patch: int = 320, batch: int = 8, seed: int = 0, epochs: int | None = None
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Batches over consecutive epochs (endless when ``epochs`` is None)."""
    epoch = 0
    while epochs is None or epoch < epochs:
        yield from epoch_batches(samples, patch, batch, seed, epoch)
        epoch += 1


# ---------------------------------------------------------------------------
# sliding-window inference
# ---------------------------------------------------------------------------
def window_origins(size: int, window: int, stride: int) -> list[int]:
    """Origins at multiples of ``stride``; the last one is clamped to the edge."""
    if size <= window:
        return [0]
    return list(range(0, size - window, stride)) + [size - window]


def _predictor(model) -> Callable[[np.ndarray], np.ndarray]:
    from .model import CpdNetModel
    from .tensor import Tensor, no_grad

    if isinstance(model, CpdNetModel):
        def run(chw: np.ndarray) -> np.ndarray:
            model.eval()
            with no_grad():
                return model(Tensor(chw[None].astype(np.float32))).data[0, 0]
        return run
    return lambda chw: np.asarray(model(chw), dtype=np.float64).reshape(chw.shape[1:])


def sliding_window_predict(model, image: np.ndarray, window: int = 320, stride: int = 240, source_id: str = "") -> EdgeMap:
    """Average overlapping window predictions over an H x W x 3 image.

    ``model`` is a :class:`CpdNetModel` or any callable mapping a 3 x h x w
    array to h x w values. Images smaller than the window are reflect-padded
    and the output is cropped back.
    """
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[:2]
    padded = _reflect_to(image, window)
    ph, pw = padded.shape[:2]
    oy = (ph - h) // 2
    ox = (pw - w) // 2
    run = _predictor(model)
    acc = np.zeros((ph, pw), dtype=np.float64)
    count = np.zeros((ph, pw), dtype=np.int64)
    chw = padded.transpose(2, 0, 1)
    for y in window_origins(ph, window, stride):
        for x in window_origins(pw, window, stride):
            acc[y:y + window, x:x + window] += run(np.ascontiguousarray(chw[:, y:y + window, x:x + window]))
            count[y:y + window, x:x + window] += 1
    out = acc / count
    return EdgeMap(np.clip(out[oy:oy + h, ox:ox + w], 0.0, 1.0), source_id)


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------
def square_outline(size: int, top: int, left: int, side: int) -> np.ndarray:
    lab = np.zeros((size, size), dtype=np.float32)
    b, r = top + side - 1, left + side - 1
    lab[top, left:r + 1] = 1
    lab[b, left:r + 1] = 1
    lab[top:b + 1, left] = 1
    lab[top:b + 1, r] = 1
    return lab


def synthetic_squares(n: int = 4, size: int = 96, seed: int = 0) -> list[Sample]:
    """White squares on black; labels are the squares' one-pixel outlines."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        side = int(rng.integers(size // 3, size // 2 + 1))
        top = int(rng.integers(size // 8, size - side - size // 8 + 1))
        left = int(rng.integers(size // 8, size - side - size // 8 + 1))
        img = np.zeros((size, size, 3), dtype=np.float32)
        img[top:top + side, left:left + side] = 1.0
        out.append(Sample(img, square_outline(size, top, left, side), f"square{i}"))
    return out


def write_dataset(root, samples: Sequence[Sample], split: str = "train") -> None:
    """Write samples in the ``images/<split>``, ``labels/<split>`` layout."""
    root = Path(root)
    (root / "images" / split).mkdir(parents=True, exist_ok=True)
    (root / "labels" / split).mkdir(parents=True, exist_ok=True)
    for s in samples:
        img = np.rint(np.clip(s.image, 0, 1) * 255).astype(np.uint8)
        Image.fromarray(img, mode="RGB").save(root / "images" / split / f"{s.id}.png")
        lab = np.rint(np.clip(s.label, 0, 1) * 255).astype(np.uint8)
        Image.fromarray(lab, mode="L").save(root / "labels" / split / f"{s.id}.png")
