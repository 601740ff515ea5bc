"""On-disk pyramid format: tiled PNG levels, raw dumps, and a manifest.

Layout:

    <dir>/manifest                     UTF-8 text, one typed key per line
    <dir>/level_<l>/tile_<x>_<y>.png   8-bit tiles (x = column, y = row)
    <dir>/level_<l>/raw.npy            optional float dump, bit-exact

Samples live in [-1, 1] inside the engine; PNG export maps affinely to
[0, 255] and clamps, so a PNG round trip is exact to one quantization
step while raw dumps round-trip bit-for-bit. Every tile and raw file is
checksummed into the manifest, which also records the per-level extent
and spatial resolution chain plus a config echo, so a pyramid can be
verified long after the run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ._version import __version__
from .errors import InvalidParameter, PyramidIOError, VerificationError
from .image import ImagePlane
from .pyramid import PyramidRun

MANIFEST_NAME = "manifest"
FORMAT_TAG = "wsigen-pyramid-1"


@dataclass
class LevelRecord:
    level: int
    extent: int
    resolution: float
    tile_size: int
    tile_count: int
    seconds: float
    tiles: dict[str, str] = field(default_factory=dict)  # filename -> sha256
    raw_sha256: str | None = None


@dataclass
class PyramidManifest:
    seed: int
    factor: int
    initial_resolution: float
    background: tuple[float, ...]
    precision: str
    complete: bool
    levels: list[LevelRecord]
    software: str = f"wsigen {__version__}"
    config: dict[str, str] = field(default_factory=dict)

    def level(self, index: int) -> LevelRecord:
        return self.levels[index]


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def to_png_bytes(tile: np.ndarray) -> bytes:
    """Quantize a [-1, 1] float tile to an 8-bit PNG byte string."""
    channels = tile.shape[2]
    scaled = np.clip((tile + 1.0) * 0.5, 0.0, 1.0)
    quantized = np.round(scaled * 255.0).astype(np.uint8)
    if channels == 1:
        img = Image.fromarray(quantized[:, :, 0], "L")
    elif channels == 3:
        img = Image.fromarray(quantized, "RGB")
    else:
        raise InvalidParameter(f"PNG tiles support 1 or 3 channels, got {channels}")
    import io

    buffer = io.BytesIO()
    img.save(buffer, format="PNG")
    return buffer.getvalue()


def from_png(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0 * 2.0 - 1.0


def write_pyramid(run: PyramidRun, directory, *, tile_size: int | None = None,
                  precision: str = "double", write_raw: bool = True,
                  config: dict[str, str] | None = None) -> PyramidManifest:
    """Write every level of a finished run and return the manifest.

    Tile size defaults to the plan's patch size so storage units match
    the processing unit.
    """
    directory = Path(directory)
    tile = tile_size if tile_size is not None else run.plan.patch_size
    if tile < 1 or run.plan.patch_size % tile:
        raise InvalidParameter(
            f"tile size {tile} must divide the patch size {run.plan.patch_size}")
    try:
        directory.mkdir(parents=True, exist_ok=True)
        records = []
        for l, plane in enumerate(run.levels):
            level_dir = directory / f"level_{l}"
            level_dir.mkdir(exist_ok=True)
            extent = plane.height
            per_side = extent // tile
            record = LevelRecord(level=l, extent=extent, resolution=plane.resolution,
                                 tile_size=tile, tile_count=per_side * per_side,
                                 seconds=(run.durations[l] if l < len(run.durations)
                                          else 0.0))
            writable_png = plane.channels in (1, 3)
            if not writable_png and not write_raw:
                raise InvalidParameter(
                    f"{plane.channels}-channel levels need raw dumps enabled")
            for ty in range(per_side):
                for tx in range(per_side):
                    if not writable_png:
                        continue
                    data = np.asarray(plane.data[ty * tile:(ty + 1) * tile,
                                                 tx * tile:(tx + 1) * tile],
                                      dtype=np.float64)
                    name = f"tile_{tx}_{ty}.png"
                    path = level_dir / name
                    path.write_bytes(to_png_bytes(data))
                    record.tiles[name] = _sha256(path)
            if write_raw:
                raw_path = level_dir / "raw.npy"
                dtype = np.float32 if precision == "single" else np.float64
                np.save(raw_path, np.asarray(plane.data, dtype=dtype))
                record.raw_sha256 = _sha256(raw_path)
            records.append(record)
        manifest = PyramidManifest(seed=run.seed, factor=run.plan.factor,
                                   initial_resolution=run.initial_resolution,
                                   background=run.background, precision=precision,
                                   complete=True, levels=records,
                                   config=dict(config or {}))
        (directory / MANIFEST_NAME).write_text(serialize_manifest(manifest),
                                               encoding="utf-8")
        return manifest
    except OSError as exc:
        raise PyramidIOError(f"writing pyramid to {directory} failed: {exc}") from exc


def mark_incomplete(directory, reason: str) -> None:
    """Flag a partially written pyramid so verify refuses it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"format = {FORMAT_TAG}", "complete = false", f"error = {reason}"]
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def serialize_manifest(manifest: PyramidManifest) -> str:
    lines = [f"format = {FORMAT_TAG}",
             f"software = {manifest.software}",
             f"complete = {'true' if manifest.complete else 'false'}",
             f"seed = {manifest.seed}",
             f"factor = {manifest.factor}",
             f"initial_resolution = {manifest.initial_resolution!r}",
             f"background = {','.join(repr(float(v)) for v in manifest.background)}",
             f"precision = {manifest.precision}",
             f"levels = {len(manifest.levels)}"]
    for key, value in sorted(manifest.config.items()):
        lines.append(f"config.{key} = {value}")
    for rec in manifest.levels:
        prefix = f"level.{rec.level}"
        lines.append(f"{prefix}.extent = {rec.extent}")
        lines.append(f"{prefix}.resolution = {rec.resolution!r}")
        lines.append(f"{prefix}.tile_size = {rec.tile_size}")
        lines.append(f"{prefix}.tile_count = {rec.tile_count}")
        lines.append(f"{prefix}.seconds = {rec.seconds!r}")
        if rec.raw_sha256 is not None:
            lines.append(f"raw.{rec.level}.sha256 = {rec.raw_sha256}")
        for name in sorted(rec.tiles):
            lines.append(f"tile.{rec.level}.{name} = {rec.tiles[name]}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> PyramidManifest:
    pairs = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise VerificationError(f"manifest line is not 'key = value': {raw!r}")
        pairs[key.strip()] = value.strip()
    if pairs.get("format") != FORMAT_TAG:
        raise VerificationError(f"unknown manifest format {pairs.get('format')!r}")
    complete = pairs.get("complete") == "true"
    if not complete:
        return PyramidManifest(seed=0, factor=0, initial_resolution=1.0,
                               background=(), precision="double", complete=False,
                               levels=[], config={})
    count = int(pairs["levels"])
    levels = []
    for l in range(count):
        prefix = f"level.{l}"
        rec = LevelRecord(level=l,
                          extent=int(pairs[f"{prefix}.extent"]),
                          resolution=float(pairs[f"{prefix}.resolution"]),
                          tile_size=int(pairs[f"{prefix}.tile_size"]),
                          tile_count=int(pairs[f"{prefix}.tile_count"]),
                          seconds=float(pairs[f"{prefix}.seconds"]))
        raw_key = f"raw.{l}.sha256"
        if raw_key in pairs:
            rec.raw_sha256 = pairs[raw_key]
        tile_prefix = f"tile.{l}."
        for key, value in pairs.items():
            if key.startswith(tile_prefix):
                rec.tiles[key[len(tile_prefix):]] = value
        levels.append(rec)
    config = {k[len("config."):]: v for k, v in pairs.items() if k.startswith("config.")}
    return PyramidManifest(seed=int(pairs["seed"]), factor=int(pairs["factor"]),
                           initial_resolution=float(pairs["initial_resolution"]),
                           background=tuple(float(v) for v in pairs["background"].split(",")
                                            if v),
                           precision=pairs["precision"], complete=True,
                           levels=levels, software=pairs.get("software", ""),
                           config=config)


def load_manifest(directory) -> PyramidManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise PyramidIOError(f"no manifest found in {directory}")
    return parse_manifest(path.read_text(encoding="utf-8"))


def read_level(directory, level: int, *, prefer_raw: bool = True) -> ImagePlane:
    """Reassemble one level; raw dumps give the exact stored samples."""
    directory = Path(directory)
    manifest = load_manifest(directory)
    if not manifest.complete:
        raise PyramidIOError(f"pyramid in {directory} is marked incomplete")
    if not 0 <= level < len(manifest.levels):
        raise PyramidIOError(f"level {level} not present (have {len(manifest.levels)})")
    rec = manifest.levels[level]
    level_dir = directory / f"level_{level}"
    if prefer_raw and rec.raw_sha256 is not None:
        data = np.load(level_dir / "raw.npy")
        return ImagePlane(data, rec.resolution)
    per_side = rec.extent // rec.tile_size
    tiles_y = []
    for ty in range(per_side):
        row = [from_png(level_dir / f"tile_{tx}_{ty}.png") for tx in range(per_side)]
        tiles_y.append(np.concatenate(row, axis=1))
    return ImagePlane(np.concatenate(tiles_y, axis=0), rec.resolution)


def verify_pyramid(directory) -> PyramidManifest:
    """Re-check a stored pyramid against its manifest.

    Confirms completeness, the presence and checksum of every referenced
    file, and the extent and spatial-resolution chains across levels.
    """
    directory = Path(directory)
    manifest = load_manifest(directory)
    if not manifest.complete:
        raise VerificationError(f"pyramid in {directory} is marked incomplete")
    s0 = manifest.levels[0].resolution
    e0 = manifest.levels[0].extent
    for rec in manifest.levels:
        expected_res = s0 / manifest.factor ** rec.level
        if rec.resolution != expected_res:
            raise VerificationError(
                f"level {rec.level} resolution {rec.resolution!r} breaks the chain "
                f"(expected {expected_res!r})")
        if rec.extent != e0 * manifest.factor ** rec.level:
            raise VerificationError(
                f"level {rec.level} extent {rec.extent} breaks the chain")
        level_dir = directory / f"level_{rec.level}"
        per_side = rec.extent // rec.tile_size
        if rec.tiles and rec.tile_count != per_side * per_side:
            raise VerificationError(
                f"level {rec.level} tile count {rec.tile_count} does not match extent")
        for name, recorded in sorted(rec.tiles.items()):
            path = level_dir / name
            if not path.exists():
                raise VerificationError(f"missing tile {path}")
            actual = _sha256(path)
            if actual != recorded:
                raise VerificationError(
                    f"checksum mismatch for tile {path}: {actual} != {recorded}")
        if rec.raw_sha256 is not None:
            raw_path = level_dir / "raw.npy"
            if not raw_path.exists():
                raise VerificationError(f"missing raw dump {raw_path}")
            if _sha256(raw_path) != rec.raw_sha256:
                raise VerificationError(f"checksum mismatch for raw dump {raw_path}")
    return manifest
