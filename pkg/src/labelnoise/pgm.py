"""Binary PGM (P5) codec plus mask, image, and dataset directory formats.

Canonical encoding: ``P5 <width> <height> <maxval>\\n`` followed by the raw
samples (one byte for maxval < 256, else big-endian 16-bit). The reader also
accepts comments and arbitrary whitespace in the header.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grid import Mask, MultiChannelImage


class PGMError(ValueError):
    pass


def encode_pgm(values: np.ndarray, maxval: int = 255) -> bytes:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError("PGM data must be 2D")
    if not 0 < maxval < 65536:
        raise ValueError("maxval must be in 1..65535")
    if arr.size and (arr.min() < 0 or arr.max() > maxval):
        raise ValueError(f"sample values outside 0..{maxval}")
    h, w = arr.shape
    header = f"P5 {w} {h} {maxval}\n".encode("ascii")
    dtype = ">u1" if maxval < 256 else ">u2"
    return header + arr.astype(dtype).tobytes()


def decode_pgm(data: bytes, source: str = "<bytes>") -> tuple[np.ndarray, int]:
    """Return ``(values, maxval)`` from P5 bytes."""
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PGMError(f"{source}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise PGMError(f"{source}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PGMError(f"{source}: malformed PGM header") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise PGMError(f"{source}: invalid PGM dimensions or maxval")
    pos += 1  # single whitespace byte before the raster
    dtype = ">u1" if maxval < 256 else ">u2"
    nbytes = w * h * np.dtype(dtype).itemsize
    raster = data[pos : pos + nbytes]
    if len(raster) != nbytes:
        raise PGMError(f"{source}: expected {nbytes} raster bytes, got {len(raster)}")
    values = np.frombuffer(raster, dtype=dtype).reshape(h, w).astype(np.int64)
    return values, maxval


def read_pgm(path) -> tuple[np.ndarray, int]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise PGMError(f"{path}: {exc.strerror or exc}") from exc
    return decode_pgm(data, str(path))


def write_pgm(path, values: np.ndarray, maxval: int = 255) -> None:
    Path(path).write_bytes(encode_pgm(values, maxval))


def mask_to_pgm(mask: Mask) -> bytes:
    return encode_pgm(mask.values.astype(np.int64) * 255, 255)


def write_mask(path, mask: Mask) -> None:
    Path(path).write_bytes(mask_to_pgm(mask))


def read_mask(path) -> Mask:
    """Any sample >= half of maxval + 1 (>= 128 for 8-bit) is foreground."""
    values, maxval = read_pgm(path)
    return Mask((values >= (maxval + 1) // 2).astype(np.uint8))


def write_frequency_map(path, freq: np.ndarray) -> None:
    """Frequencies in [0, 1] stored as 16-bit samples, frequency * 65535."""
    q = np.floor(np.clip(freq, 0.0, 1.0) * 65535 + 0.5).astype(np.int64)
    write_pgm(path, q, 65535)


# -- multi-channel images -----------------------------------------------------


def _quantize(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = hi - lo if hi > lo else 1.0
    return np.floor((np.clip(values, lo, hi) - lo) / span * 65535 + 0.5).astype(np.int64)


def _dequantize(q: np.ndarray, lo: float, hi: float, maxval: int = 65535) -> np.ndarray:
    span = hi - lo if hi > lo else 1.0
    return lo + q.astype(np.float64) / maxval * span


def write_image(directory, stem: str, image: MultiChannelImage, intensity_range=None) -> dict:
    """Write one 16-bit PGM per channel; returns the manifest entry.

    Intensities are mapped linearly from ``intensity_range`` (default: the
    image's own min/max) onto 0..65535.
    """
    directory = Path(directory)
    lo, hi = intensity_range or (float(image.values.min()), float(image.values.max()))
    names = []
    for c in range(image.channels):
        name = f"{stem}_c{c}.pgm"
        write_pgm(directory / name, _quantize(image.values[c], lo, hi), 65535)
        names.append(name)
    return {"channels": names, "intensity_range": [lo, hi]}


def read_image(directory, entry: dict) -> MultiChannelImage:
    directory = Path(directory)
    lo, hi = entry["intensity_range"]
    chans = []
    for name in entry["channels"]:
        q, maxval = read_pgm(directory / name)
        chans.append(_dequantize(q, lo, hi, maxval))
    shapes = {c.shape for c in chans}
    if len(shapes) != 1:
        raise PGMError(f"{directory}: channel files have differing dimensions {sorted(shapes)}")
    return MultiChannelImage(np.stack(chans))


def save_image(manifest_path, image: MultiChannelImage) -> None:
    """Standalone image: channel PGMs next to a JSON manifest."""
    manifest_path = Path(manifest_path)
    stem = manifest_path.stem
    entry = write_image(manifest_path.parent, stem, image)
    entry.update(width=image.width, height=image.height)
    manifest_path.write_text(json.dumps(entry, indent=2, sort_keys=True) + "\n")


def load_image(manifest_path) -> MultiChannelImage:
    manifest_path = Path(manifest_path)
    try:
        entry = json.loads(manifest_path.read_text())
    except (OSError, ValueError) as exc:
        raise PGMError(f"{manifest_path}: cannot read image manifest ({exc})") from exc
    return read_image(manifest_path.parent, entry)


# -- dataset directories ------------------------------------------------------

MANIFEST = "manifest.json"


def write_dataset(directory, samples, config: dict | None = None) -> Path:
    """Write ``manifest.json`` plus per-sample channel and mask PGMs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lo = min(float(s.image.values.min()) for s in samples)
    hi = max(float(s.image.values.max()) for s in samples)
    entries = []
    for s in samples:
        stem = f"{s.id:05d}"
        entry = write_image(directory, stem, s.image, (lo, hi))
        mask_name = f"{stem}_mask.pgm"
        write_mask(directory / mask_name, s.mask)
        entries.append(
            {
                "id": s.id,
                "channels": entry["channels"],
                "mask": mask_name,
                "diseased": bool(s.mask.values.any()),
            }
        )
    first = samples[0].image
    manifest = {
        "width": first.width,
        "height": first.height,
        "channels": first.channels,
        "intensity_range": [lo, hi],
        "samples": entries,
    }
    if config is not None:
        manifest["config"] = config
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory / MANIFEST


def read_dataset(directory):
    """Load a dataset directory into a list of :class:`~labelnoise.synth.Sample`."""
    from .synth import Sample

    directory = Path(directory)
    path = directory / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise PGMError(f"{path}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        raise PGMError(f"{path}: malformed JSON ({exc})") from exc
    rng = manifest["intensity_range"]
    samples = []
    for e in manifest["samples"]:
        image = read_image(directory, {"channels": e["channels"], "intensity_range": rng})
        mask = read_mask(directory / e["mask"])
        if mask.shape != (image.height, image.width):
            raise PGMError(f"{directory / e['mask']}: mask dimensions differ from image")
        samples.append(Sample(int(e["id"]), image, mask))
    return samples


def list_masks(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise PGMError(f"{directory}: not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".pgm")

