"""Image decoding/encoding, paired-dataset management, patch extraction,
augmentation, and low-resolution input generation."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import cv2
import numpy as np

from . import records
from .errors import CheckpointError, ImageFormatError, ManifestError, ShapeError
from .tensor_core import DTYPE, Tensor, bicubic_downsample

PATCH_MAGIC = b"IRNP"
PATCH_VERSION = 1


# ---------------------------------------------------------------------------
# PNG I/O (8-bit SDR in, 16-bit HDR in/out), normalized to [0,1]
# ---------------------------------------------------------------------------


def _decode_png(path, want_dtype, depth_name):
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageFormatError(f"failed to decode PNG {path}", path=str(path))
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise ImageFormatError(f"{path} is not 3-channel RGB "
                               f"(shape {raw.shape})", path=str(path))
    if raw.dtype != want_dtype:
        raise ImageFormatError(f"{path} is {raw.dtype}, expected {depth_name}",
                               path=str(path))
    rgb = raw[:, :, ::-1]  # BGR -> RGB
    chw = np.ascontiguousarray(rgb.transpose(2, 0, 1), dtype=DTYPE)
    return chw[None]


def load_png8(path) -> Tensor:
    """Load an 8-bit RGB PNG as a (1,3,H,W) tensor in [0,1] (divide by 255)."""
    return _decode_png(path, np.uint8, "8-bit") / DTYPE(255.0)


def load_png16(path) -> Tensor:
    """Load a 16-bit RGB PNG as a (1,3,H,W) tensor in [0,1] (divide by 65535)."""
    return _decode_png(path, np.uint16, "16-bit") / DTYPE(65535.0)


def save_png16(x: Tensor, path) -> None:
    """Clamp to [0,1], scale by 65535, round to nearest, write 16-bit RGB PNG."""
    if x.ndim != 4 or x.shape[0] != 1 or x.shape[1] != 3:
        raise ShapeError(f"save_png16 expects a (1,3,H,W) tensor, got {x.shape}")
    q = np.rint(np.clip(x[0], 0.0, 1.0) * 65535.0).astype(np.uint16)
    bgr = np.ascontiguousarray(q.transpose(1, 2, 0)[:, :, ::-1])
    if not cv2.imwrite(str(path), bgr):
        raise ImageFormatError(f"failed to write PNG {path}", path=str(path))


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


class ImagePair(NamedTuple):
    sdr_path: str
    hdr_path: str


@dataclass
class DatasetManifest:
    """Ordered SDR/HDR file pairs plus the split they belong to."""
    entries: list[ImagePair]
    role: str = "train"


def write_manifest(entries, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(f"{e[0]}\t{e[1]}\n")


def load_manifest(path, role="train", validate=False) -> DatasetManifest:
    """Parse a manifest: one tab-separated "sdr<TAB>hdr" pair per line,
    '#'-prefixed lines ignored. With ``validate=True`` every file must exist,
    decode, and agree on spatial dimensions within its pair."""
    entries = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ManifestError(f"{path}:{lineno}: expected "
                                        f"'sdr<TAB>hdr', got {line!r}")
                entries.append(ImagePair(parts[0], parts[1]))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    manifest = DatasetManifest(entries=entries, role=role)
    if validate:
        validate_manifest(manifest)
    return manifest


def load_image_pair(entry: ImagePair) -> tuple[Tensor, Tensor]:
    sdr = load_png8(entry.sdr_path)
    hdr = load_png16(entry.hdr_path)
    if sdr.shape != hdr.shape:
        raise ManifestError(f"pair dimensions differ: {entry.sdr_path} is "
                            f"{sdr.shape[2:]}, {entry.hdr_path} is {hdr.shape[2:]}")
    return sdr, hdr


def validate_manifest(manifest: DatasetManifest) -> None:
    if not manifest.entries:
        raise ManifestError("manifest contains no pairs")
    for entry in manifest.entries:
        load_image_pair(entry)


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------


@dataclass
class PatchPair:
    """One aligned training example; for the joint x4 task the SDR patch is
    the downsampled counterpart of the HDR crop window."""
    sdr: Tensor
    hdr: Tensor


def crop_patches(pair, count: int, size: int, rng, lr_scale: int = 1) -> list[PatchPair]:
    """Take ``count`` aligned random crops of ``size`` x ``size`` pixels.

    With ``lr_scale`` > 1, crop windows snap to multiples of the scale on the
    full-resolution grid and the SDR crop is bicubic-reduced by that factor.
    """
    sdr, hdr = pair
    h, w = hdr.shape[2:]
    if h < size or w < size:
        raise ShapeError(f"image {h}x{w} is smaller than patch size {size}")
    if lr_scale > 1 and size % lr_scale != 0:
        raise ShapeError(f"patch size {size} not divisible by scale {lr_scale}")
    patches = []
    for _ in range(count):
        if lr_scale > 1:
            y = int(rng.integers(0, (h - size) // lr_scale + 1)) * lr_scale
            x = int(rng.integers(0, (w - size) // lr_scale + 1)) * lr_scale
        else:
            y = int(rng.integers(0, h - size + 1))
            x = int(rng.integers(0, w - size + 1))
        sdr_crop = np.ascontiguousarray(sdr[:, :, y:y + size, x:x + size])
        hdr_crop = np.ascontiguousarray(hdr[:, :, y:y + size, x:x + size])
        if lr_scale > 1:
            sdr_crop = make_lr(sdr_crop, lr_scale)
        patches.append(PatchPair(sdr=sdr_crop, hdr=hdr_crop))
    return patches


# the 8 dihedral transforms: (quarter-turns, horizontal flip last)
DIHEDRAL_TRANSFORMS = tuple((rot, flip) for flip in (False, True) for rot in range(4))


def apply_dihedral(x: Tensor, index: int) -> Tensor:
    rot, flip = DIHEDRAL_TRANSFORMS[index]
    y = np.rot90(x, k=rot, axes=(2, 3))
    if flip:
        y = y[:, :, :, ::-1]
    return np.ascontiguousarray(y)


def augment(patch: PatchPair, rng) -> PatchPair:
    """Apply one uniformly drawn dihedral transform, identically to both sides."""
    idx = int(rng.integers(0, len(DIHEDRAL_TRANSFORMS)))
    return PatchPair(sdr=apply_dihedral(patch.sdr, idx),
                     hdr=apply_dihedral(patch.hdr, idx))


def make_lr(sdr: Tensor, s: int) -> Tensor:
    """Bicubic x1/s reduction of an SDR image, clamped to [0,1]."""
    return bicubic_downsample(sdr, s)


def batcher(patches, batch_size: int, rng,
            transform=None) -> Iterator[tuple[Tensor, Tensor]]:
    """One epoch of seeded-shuffled batches; the final short batch is emitted
    and every patch is visited exactly once."""
    if not patches:
        raise ManifestError("batcher: empty patch set")
    if batch_size < 1:
        raise ManifestError(f"batcher: batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(len(patches))
    for start in range(0, len(order), batch_size):
        chosen = [patches[i] for i in order[start:start + batch_size]]
        if transform is not None:
            chosen = [transform(p) for p in chosen]
        yield (np.concatenate([p.sdr for p in chosen], axis=0),
               np.concatenate([p.hdr for p in chosen], axis=0))


# ---------------------------------------------------------------------------
# patch cache (same tensor-record encoding as checkpoints)
# ---------------------------------------------------------------------------


def save_patches(patches, cache_dir) -> None:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(patches):
        with open(cache_dir / f"patch_{i:05d}.bin", "wb") as fh:
            fh.write(PATCH_MAGIC)
            records.write_u32(fh, PATCH_VERSION)
            records.write_u32(fh, 2)
            records.write_tensor_record(fh, "sdr", p.sdr)
            records.write_tensor_record(fh, "hdr", p.hdr)


def load_patches(cache_dir) -> list[PatchPair]:
    cache_dir = Path(cache_dir)
    files = sorted(cache_dir.glob("patch_*.bin"))
    if not files:
        raise ManifestError(f"no cached patches under {cache_dir}")
    patches = []
    for path in files:
        with open(path, "rb") as fh:
            if fh.read(4) != PATCH_MAGIC:
                raise CheckpointError(f"bad patch magic in {path}")
            if records.read_u32(fh, what="patch version") != PATCH_VERSION:
                raise CheckpointError(f"unsupported patch version in {path}")
            n = records.read_u32(fh, what="record count")
            tensors = dict(records.read_tensor_record(fh) for _ in range(n))
        if set(tensors) != {"sdr", "hdr"}:
            raise CheckpointError(f"patch file {path} must hold exactly "
                                  f"'sdr' and 'hdr' records")
        patches.append(PatchPair(sdr=tensors["sdr"], hdr=tensors["hdr"]))
    return patches


def pair_directories(sdr_dir, hdr_dir):
    """Pair *.png files across two directories by filename stem.

    Returns (entries, unpaired_stems); entries are sorted by stem.
    """
    def stems(d):
        return {p.stem: p for p in sorted(Path(d).glob("*.png"))}

    sdr_map, hdr_map = stems(sdr_dir), stems(hdr_dir)
    common = sorted(set(sdr_map) & set(hdr_map))
    unpaired = sorted(set(sdr_map) ^ set(hdr_map))
    entries = [ImagePair(str(sdr_map[s]), str(hdr_map[s])) for s in common]
    return entries, unpaired
