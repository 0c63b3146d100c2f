"""Procedural two-view paired-identity image dataset.

Each identity is a stack of 2-4 horizontal color bands plus an elliptical
head blob, loosely mimicking clothing structure.  View B re-renders the same
identity through a fixed channel mix / brightness / shift transform plus
per-sample jitter and noise, so the two views of one identity are genuinely
different images of the same underlying appearance.

Images are 3x32x32, quantized to 8 bits at generation time and stored as
binary PPM (P6, maxval 255); in-memory tensors are the dequantized floats in
[-1, 1], so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .rng import Rng

IMAGE_SHAPE = (3, 32, 32)
TRAIN_FRACTION = 2 / 3  # 96 identities -> 64 train / 32 test


class DatasetError(RuntimeError):
    """Malformed dataset directory, manifest, or image file."""


@dataclass(frozen=True)
class ViewTransform:
    """Fixed per-camera appearance transform applied on top of the identity."""

    channel_mix: tuple[tuple[float, float, float], ...] = (
        (1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0),
        (0.0, 0.0, 1.0),
    )
    brightness: float = 1.0
    shift: tuple[float, float] = (0.0, 0.0)
    noise_sigma: float = 0.0

    def mix_matrix(self) -> np.ndarray:
        m = np.asarray(self.channel_mix, dtype=np.float64)
        if m.shape != (3, 3):
            raise DatasetError(f"channel_mix must be 3x3, got {list(m.shape)}")
        sums = m.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-3:
            raise DatasetError(f"channel_mix rows must sum to 1, got {sums.tolist()}")
        return m


VIEW_PRESETS: dict[str, tuple[ViewTransform, ViewTransform]] = {
    # View B swaps most of red/blue (0.7/0.3) and dims to 0.85: strong enough
    # that raw-pixel matching degrades across views.
    "default": (
        ViewTransform(noise_sigma=0.02),
        ViewTransform(
            channel_mix=((0.3, 0.0, 0.7), (0.0, 1.0, 0.0), (0.7, 0.0, 0.3)),
            brightness=0.85,
            shift=(1.0, 0.5),
            noise_sigma=0.02,
        ),
    ),
    "identity": (ViewTransform(), ViewTransform()),
    "hard": (
        ViewTransform(noise_sigma=0.03),
        ViewTransform(
            channel_mix=((0.1, 0.2, 0.7), (0.1, 0.8, 0.1), (0.7, 0.2, 0.1)),
            brightness=0.7,
            shift=(2.0, 1.0),
            noise_sigma=0.05,
        ),
    ),
}


@dataclass(frozen=True)
class IdentitySpec:
    """Band layout plus head blob; colors in [0, 1]."""

    id: int
    band_boundaries: tuple[float, ...]  # fractions of height, strictly increasing
    band_colors: tuple[tuple[float, float, float], ...]
    head_color: tuple[float, float, float]
    head_center: tuple[float, float]  # (row, col) fractions
    head_axes: tuple[float, float]  # (row, col) radii in pixels


@dataclass
class PairedSample:
    x: np.ndarray  # [3, 32, 32] float32 in [-1, 1], view A
    x_bar: np.ndarray  # view B
    identity: int


@dataclass
class Split:
    images_a: np.ndarray  # [N, 3, 32, 32] float32
    images_b: np.ndarray
    identities: np.ndarray  # [N] int64; pair i is (images_a[i], images_b[i])

    def __len__(self) -> int:
        return len(self.identities)

    def pairs(self) -> list[PairedSample]:
        return [
            PairedSample(self.images_a[i], self.images_b[i], int(self.identities[i]))
            for i in range(len(self))
        ]


@dataclass
class TwoViewDataset:
    train: Split
    test: Split
    config: dict

    def train_pairs_only(self) -> tuple[np.ndarray, np.ndarray]:
        """The trainer-facing view: images per view, no identity column."""
        return self.train.images_a, self.train.images_b


def sample_identity(identity: int, rng: Rng) -> IdentitySpec:
    r = rng.split("identity", identity)
    n_bands = int(r.integers(2, 5))
    cuts = np.sort(r.uniform((n_bands - 1,)) * 0.6 + 0.2)
    boundaries = tuple(float(c) for c in cuts)
    colors = tuple(
        tuple(float(v) for v in (r.uniform((3,)) * 0.85 + 0.1)) for _ in range(n_bands)
    )
    head_color = tuple(float(v) for v in (r.uniform((3,)) * 0.5 + 0.35))
    head_center = (0.16 + float(r.uniform(())) * 0.06, 0.45 + float(r.uniform(())) * 0.1)
    head_axes = (3.0 + float(r.uniform(())) * 1.5, 2.5 + float(r.uniform(())) * 1.5)
    return IdentitySpec(
        id=identity,
        band_boundaries=boundaries,
        band_colors=colors,
        head_color=head_color,
        head_center=head_center,
        head_axes=head_axes,
    )


def render_identity(spec: IdentitySpec, size: int = 32) -> np.ndarray:
    """Base appearance in [0, 1], [3, size, size]."""
    img = np.zeros((3, size, size), dtype=np.float64)
    bounds = (0.0,) + spec.band_boundaries + (1.0,)
    for bi, color in enumerate(spec.band_colors):
        r0 = int(round(bounds[bi] * size))
        r1 = int(round(bounds[bi + 1] * size))
        img[:, r0:r1, :] = np.asarray(color)[:, None, None]
    rows, cols = np.mgrid[0:size, 0:size]
    cy, cx = spec.head_center[0] * size, spec.head_center[1] * size
    ry, rx = spec.head_axes
    mask = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0
    img[:, mask] = np.asarray(spec.head_color)[:, None]
    return img


def _bilinear_shift(img: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """Sub-pixel translate with edge clamping."""
    _, h, w = img.shape
    rows = np.clip(np.arange(h) - dy, 0, h - 1)
    cols = np.clip(np.arange(w) - dx, 0, w - 1)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[None, :, None]
    fc = (cols - c0)[None, None, :]
    top = img[:, r0, :][:, :, c0] * (1 - fc) + img[:, r0, :][:, :, c1] * fc
    bot = img[:, r1, :][:, :, c0] * (1 - fc) + img[:, r1, :][:, :, c1] * fc
    return top * (1 - fr) + bot * fr


def render_view(
    spec: IdentitySpec, view: ViewTransform, pair_rng: Rng, view_tag: str, size: int = 32
) -> np.ndarray:
    """One u8-quantized observation of an identity under a view transform.

    The sub-pixel jitter comes from the pair's stream (both views of a pair
    see the same pose wobble); sensor noise is drawn per view.  With identity
    transforms and zero noise the two views are therefore pixel-identical.
    """
    img = render_identity(spec, size)
    jitter = pair_rng.split("jitter").uniform((2,)) * 2.0 - 1.0
    img = _bilinear_shift(img, view.shift[0] + jitter[0], view.shift[1] + jitter[1])
    img = np.einsum("ij,jhw->ihw", view.mix_matrix(), img)
    img = img * view.brightness
    img = img * 2.0 - 1.0  # tanh-scaled range
    if view.noise_sigma > 0:
        img = img + pair_rng.split("noise", view_tag).normal(img.shape) * view.noise_sigma
    img = np.clip(img, -1.0, 1.0)
    return _quantize_u8(img)


def _quantize_u8(img: np.ndarray) -> np.ndarray:
    return np.round((img + 1.0) * 127.5).astype(np.uint8)


def _dequantize(u8: np.ndarray) -> np.ndarray:
    return (u8.astype(np.float32) / 127.5) - 1.0


# ---------------------------------------------------------------------------
# PPM (P6) image I/O
# ---------------------------------------------------------------------------


def write_ppm(path: str | Path, img_u8_chw: np.ndarray) -> None:
    c, h, w = img_u8_chw.shape
    if c != 3 or img_u8_chw.dtype != np.uint8:
        raise DatasetError(f"write_ppm expects uint8 [3,H,W], got {img_u8_chw.dtype} {list(img_u8_chw.shape)}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img_u8_chw.transpose(1, 2, 0).tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"image file missing: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise DatasetError(f"{path}: not a binary PPM (P6) file")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError:
        raise DatasetError(f"{path}: malformed PPM header fields {fields[1:]}") from None
    if maxval != 255:
        raise DatasetError(f"{path}: maxval {maxval} unsupported (expected 255)")
    pos += 1  # single whitespace after maxval
    if len(data) - pos < w * h * 3:
        raise DatasetError(f"{path}: truncated pixel payload")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pixels.reshape(h, w, 3).transpose(2, 0, 1).copy()


def write_ppm_grid(path: str | Path, images: np.ndarray, cols: int = 4) -> None:
    """Tile a batch of [-1,1] float images into one P6 file."""
    n = len(images)
    rows = (n + cols - 1) // cols
    h, w = images.shape[2], images.shape[3]
    canvas = np.zeros((3, rows * (h + 2) + 2, cols * (w + 2) + 2), dtype=np.uint8)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        tile = _quantize_u8(np.clip(np.asarray(img, np.float64), -1.0, 1.0))
        canvas[:, 2 + r * (h + 2) : 2 + r * (h + 2) + h, 2 + c * (w + 2) : 2 + c * (w + 2) + w] = tile
    write_ppm(path, canvas)


# ---------------------------------------------------------------------------
# dataset generation, save, load
# ---------------------------------------------------------------------------


def generate_dataset(
    n_identities: int = 96,
    per_view_count: int = 6,
    view_a: ViewTransform | None = None,
    view_b: ViewTransform | None = None,
    seed: int = 0,
) -> TwoViewDataset:
    """Deterministic paired dataset with a disjoint train/test identity split."""
    if n_identities < 2:
        raise DatasetError(f"need at least 2 identities, got {n_identities}")
    if view_a is None or view_b is None:
        preset = VIEW_PRESETS["default"]
        view_a = view_a or preset[0]
        view_b = view_b or preset[1]
    rng = Rng(seed)
    n_train = max(1, int(round(n_identities * TRAIN_FRACTION)))
    if n_train >= n_identities:
        n_train = n_identities - 1
    splits = {}
    for split, ids in (("train", range(n_train)), ("test", range(n_train, n_identities))):
        xs, xbs, pids = [], [], []
        for identity in ids:
            spec = sample_identity(identity, rng)
            for index in range(per_view_count):
                pair_rng = rng.split("sample", split, identity, index)
                xs.append(_dequantize(render_view(spec, view_a, pair_rng, "A")))
                xbs.append(_dequantize(render_view(spec, view_b, pair_rng, "B")))
                pids.append(identity)
        splits[split] = Split(
            images_a=np.stack(xs).astype(np.float32),
            images_b=np.stack(xbs).astype(np.float32),
            identities=np.asarray(pids, dtype=np.int64),
        )
    config = {
        "n_identities": n_identities,
        "per_view_count": per_view_count,
        "seed": seed,
        "image_shape": list(IMAGE_SHAPE),
        "train_identities": n_train,
        "test_identities": n_identities - n_train,
        "view_a": asdict(view_a),
        "view_b": asdict(view_b),
    }
    return TwoViewDataset(train=splits["train"], test=splits["test"], config=config)


def save_dataset(dataset: TwoViewDataset, out_dir: str | Path) -> Path:
    """Write PPM files, manifest.csv (path,identity,view,split), dataset.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for split_name, split in (("train", dataset.train), ("test", dataset.test)):
        counters: dict[tuple[int, str], int] = {}
        for view_name, images in (("A", split.images_a), ("B", split.images_b)):
            (out_dir / split_name / view_name).mkdir(parents=True, exist_ok=True)
        for i in range(len(split)):
            identity = int(split.identities[i])
            index = counters.get((identity, "A"), 0)
            counters[(identity, "A")] = index + 1
            for view_name, images in (("A", split.images_a), ("B", split.images_b)):
                rel = f"{split_name}/{view_name}/{identity:05d}_{index:03d}.ppm"
                write_ppm(out_dir / rel, _quantize_u8(images[i].astype(np.float64)))
                rows.append((rel, identity, view_name, split_name))
    rows.sort()
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "identity", "view", "split"])
        writer.writerows(rows)
    with open(out_dir / "dataset.json", "w") as fh:
        json.dump(dataset.config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def load_dataset(data_dir: str | Path) -> TwoViewDataset:
    data_dir = Path(data_dir)
    manifest = data_dir / "manifest.csv"
    if not manifest.exists():
        raise DatasetError(f"manifest missing: {manifest}")
    entries: dict[tuple[str, str], list[tuple[str, int]]] = {}
    with open(manifest, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "identity", "view", "split"]:
            raise DatasetError(f"{manifest}: unexpected header {header}")
        for row in reader:
            if len(row) != 4:
                raise DatasetError(f"{manifest}: malformed row {row}")
            rel, identity, view, split = row
            entries.setdefault((split, view), []).append((rel, int(identity)))
    splits = {}
    for split in ("train", "test"):
        per_view = {}
        for view in ("A", "B"):
            rows = sorted(entries.get((split, view), []))
            if not rows:
                raise DatasetError(f"{manifest}: no rows for split={split} view={view}")
            images = np.stack([_dequantize(read_ppm(data_dir / rel)) for rel, _ in rows])
            per_view[view] = (images.astype(np.float32), np.asarray([i for _, i in rows]))
        ids_a, ids_b = per_view["A"][1], per_view["B"][1]
        if not np.array_equal(ids_a, ids_b):
            raise DatasetError(f"{manifest}: view A/B identity sequences differ in split {split}")
        splits[split] = Split(
            images_a=per_view["A"][0], images_b=per_view["B"][0], identities=ids_a.astype(np.int64)
        )
    config = {}
    cfg_path = data_dir / "dataset.json"
    if cfg_path.exists():
        config = json.loads(cfg_path.read_text())
    train_ids = set(splits["train"].identities.tolist())
    test_ids = set(splits["test"].identities.tolist())
    if train_ids & test_ids:
        raise DatasetError(f"train/test identity overlap: {sorted(train_ids & test_ids)[:5]}")
    return TwoViewDataset(train=splits["train"], test=splits["test"], config=config)
