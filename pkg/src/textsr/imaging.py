"""Grayscale image I/O, bicubic resampling, and the synthetic text-strip
dataset generator.

Images live in memory as 2-d float64 arrays with values in [0, 1] and are
stored on disk as binary PGM (P5, maxval 255). Resampling uses the Keys
cubic kernel with a = -0.5 on a half-pixel-centered grid with edge
replication; this convention is frozen so independently produced outputs
match bit-for-bit.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class PgmError(ValueError):
    """Raised for malformed PGM files."""


def _check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-d (height, width), got shape {img.shape}")
    if min(img.shape) < 1:
        raise ValueError(f"image dimensions must be >= 1, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


# ---------------------------------------------------------------------------
# PGM (P5) reader / writer
# ---------------------------------------------------------------------------

def _header_tokens(data: bytes, pos: int, count: int):
    """Read `count` whitespace-separated header tokens, skipping # comments."""
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos] != ord("#"):
            pos += 1
        if pos == start:
            raise PgmError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def load_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5, maxval 255) into a [0, 1] float image."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise PgmError(f"{path}: bad magic {data[:2]!r}, expected P5")
    try:
        tokens, pos = _header_tokens(data, 2, 3)
        width, height, maxval = (int(t) for t in tokens)
    except (ValueError, PgmError) as exc:
        raise PgmError(f"{path}: unreadable header ({exc})") from exc
    if maxval != 255:
        raise PgmError(f"{path}: maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise PgmError(f"{path}: bad dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos:pos + width * height]
    if len(raster) < width * height:
        raise PgmError(f"{path}: truncated raster, {len(raster)} of {width * height} bytes")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return pixels.astype(np.float64) / 255.0


def save_pgm(img: np.ndarray, path) -> None:
    """Write a [0, 1] image as binary PGM; values are rounded to 8 bits."""
    img = _check_image(img)
    raw = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = raw.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(raw.tobytes())


# ---------------------------------------------------------------------------
# bicubic resampling (Keys kernel, a = -0.5)
# ---------------------------------------------------------------------------

def keys_cubic(t) -> np.ndarray:
    """Keys cubic interpolation kernel with a = -0.5."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = 1.5 * t3 - 2.5 * t2 + 1.0
    far = -0.5 * (t3 - 5.0 * t2 + 8.0 * t - 4.0)
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _resample_axis(img: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    in_len = img.shape[axis]
    ratio = in_len / out_len
    x = (np.arange(out_len) + 0.5) * ratio - 0.5
    base = np.floor(x).astype(np.int64)
    out = np.zeros(img.shape[:axis] + (out_len,) + img.shape[axis + 1:], dtype=np.float64)
    for off in (-1, 0, 1, 2):
        idx = base + off
        wts = keys_cubic(x - idx)
        np.clip(idx, 0, in_len - 1, out=idx)  # edge replication
        shape = [1, 1]
        shape[axis] = out_len
        out += np.take(img, idx, axis=axis) * wts.reshape(shape)
    return out


def bicubic_upscale_x2(img: np.ndarray) -> np.ndarray:
    """Upscale to exactly (2H, 2W); output clamped to [0, 1]."""
    img = _check_image(img)
    h, w = img.shape
    out = _resample_axis(_resample_axis(img, 2 * h, 0), 2 * w, 1)
    return np.clip(out, 0.0, 1.0)


def bicubic_downscale(img: np.ndarray, factor: int) -> np.ndarray:
    """Downscale by 2 or 4; dimensions must be divisible by the factor."""
    if factor not in (2, 4):
        raise ValueError(f"downscale factor must be 2 or 4, got {factor}")
    img = _check_image(img)
    h, w = img.shape
    if h % factor or w % factor:
        raise ValueError(f"image {h}x{w} not divisible by factor {factor}")
    out = _resample_axis(_resample_axis(img, h // factor, 0), w // factor, 1)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# dataset manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    image_id: str
    hr_path: str
    lr_path: str
    text: str = ""


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    split: str = "all"

    def ids(self) -> list[str]:
        return [e.image_id for e in self.entries]


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write one `id<TAB>hr_path<TAB>lr_path<TAB>text` line per entry (UTF-8)."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(f"{e.image_id}\t{e.hr_path}\t{e.lr_path}\t{e.text}\n")


def load_manifest(path, split: str = "all", check_files: bool = True) -> DatasetManifest:
    """Read a manifest; relative image paths are resolved against its directory."""
    base = Path(path).parent
    entries = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: expected id<TAB>hr<TAB>lr[<TAB>text]")
            image_id, hr_path, lr_path = parts[0], parts[1], parts[2]
            text = parts[3] if len(parts) > 3 else ""
            if image_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate id {image_id!r}")
            seen.add(image_id)
            hr_abs = str(hr_path if os.path.isabs(hr_path) else base / hr_path)
            lr_abs = str(lr_path if os.path.isabs(lr_path) else base / lr_path)
            if check_files:
                for p in (hr_abs, lr_abs):
                    if not os.path.exists(p):
                        raise FileNotFoundError(f"{path}:{lineno}: missing image file {p}")
            entries.append(ManifestEntry(image_id, hr_abs, lr_abs, text))
    return DatasetManifest(entries, split)


def split_dataset(manifest: DatasetManifest, validation_count: int = 30,
                  seed=0) -> tuple[DatasetManifest, DatasetManifest]:
    """Seeded random partition into (train, validation); disjoint, exhaustive."""
    n = len(manifest.entries)
    if not 0 < validation_count < n:
        raise ValueError(f"validation_count must be in 1..{n - 1}, got {validation_count}")
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = set(int(i) for i in perm[:validation_count])
    train = [e for i, e in enumerate(manifest.entries) if i not in val_idx]
    val = [e for i, e in enumerate(manifest.entries) if i in val_idx]
    return DatasetManifest(train, "train"), DatasetManifest(val, "validation")


# ---------------------------------------------------------------------------
# synthetic text-strip corpus
#
# Strips of random glyph strings rendered from a built-in 5x7 bitmap font at
# an integer scale, with jittered contrast and baseline. The LR partner is
# the HR strip bicubic-downscaled by 2, so HR dimensions are kept even.
# ---------------------------------------------------------------------------

_PUNCTUATION = ".,:;!?'\"()-+/="  # 14 marks

_FONT_5X7 = {
    "A": ("..X..", ".X.X.", "X...X", "X...X", "XXXXX", "X...X", "X...X"),
    "B": ("XXXX.", "X...X", "X...X", "XXXX.", "X...X", "X...X", "XXXX."),
    "C": (".XXX.", "X...X", "X....", "X....", "X....", "X...X", ".XXX."),
    "D": ("XXXX.", "X...X", "X...X", "X...X", "X...X", "X...X", "XXXX."),
    "E": ("XXXXX", "X....", "X....", "XXXX.", "X....", "X....", "XXXXX"),
    "F": ("XXXXX", "X....", "X....", "XXXX.", "X....", "X....", "X...."),
    "G": (".XXX.", "X...X", "X....", "X.XXX", "X...X", "X...X", ".XXXX"),
    "H": ("X...X", "X...X", "X...X", "XXXXX", "X...X", "X...X", "X...X"),
    "I": (".XXX.", "..X..", "..X..", "..X..", "..X..", "..X..", ".XXX."),
    "J": ("..XXX", "...X.", "...X.", "...X.", "...X.", "X..X.", ".XX.."),
    "K": ("X...X", "X..X.", "X.X..", "XX...", "X.X..", "X..X.", "X...X"),
    "L": ("X....", "X....", "X....", "X....", "X....", "X....", "XXXXX"),
    "M": ("X...X", "XX.XX", "X.X.X", "X.X.X", "X...X", "X...X", "X...X"),
    "N": ("X...X", "XX..X", "X.X.X", "X..XX", "X...X", "X...X", "X...X"),
    "O": (".XXX.", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."),
    "P": ("XXXX.", "X...X", "X...X", "XXXX.", "X....", "X....", "X...."),
    "Q": (".XXX.", "X...X", "X...X", "X...X", "X.X.X", "X..X.", ".XX.X"),
    "R": ("XXXX.", "X...X", "X...X", "XXXX.", "X.X..", "X..X.", "X...X"),
    "S": (".XXXX", "X....", "X....", ".XXX.", "....X", "....X", "XXXX."),
    "T": ("XXXXX", "..X..", "..X..", "..X..", "..X..", "..X..", "..X.."),
    "U": ("X...X", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."),
    "V": ("X...X", "X...X", "X...X", "X...X", "X...X", ".X.X.", "..X.."),
    "W": ("X...X", "X...X", "X...X", "X.X.X", "X.X.X", "XX.XX", "X...X"),
    "X": ("X...X", "X...X", ".X.X.", "..X..", ".X.X.", "X...X", "X...X"),
    "Y": ("X...X", "X...X", ".X.X.", "..X..", "..X..", "..X..", "..X.."),
    "Z": ("XXXXX", "....X", "...X.", "..X..", ".X...", "X....", "XXXXX"),
    "0": (".XXX.", "X...X", "X..XX", "X.X.X", "XX..X", "X...X", ".XXX."),
    "1": ("..X..", ".XX..", "..X..", "..X..", "..X..", "..X..", ".XXX."),
    "2": (".XXX.", "X...X", "....X", "...X.", "..X..", ".X...", "XXXXX"),
    "3": ("XXXXX", "...X.", "..X..", "...X.", "....X", "X...X", ".XXX."),
    "4": ("...X.", "..XX.", ".X.X.", "X..X.", "XXXXX", "...X.", "...X."),
    "5": ("XXXXX", "X....", "XXXX.", "....X", "....X", "X...X", ".XXX."),
    "6": ("..XX.", ".X...", "X....", "XXXX.", "X...X", "X...X", ".XXX."),
    "7": ("XXXXX", "....X", "...X.", "..X..", ".X...", ".X...", ".X..."),
    "8": (".XXX.", "X...X", "X...X", ".XXX.", "X...X", "X...X", ".XXX."),
    "9": (".XXX.", "X...X", "X...X", ".XXXX", "....X", "...X.", ".XX.."),
    ".": (".....", ".....", ".....", ".....", ".....", ".XX..", ".XX.."),
    ",": (".....", ".....", ".....", ".....", ".XX..", "..X..", ".X..."),
    ":": (".....", ".XX..", ".XX..", ".....", ".XX..", ".XX..", "....."),
    ";": (".....", ".XX..", ".XX..", ".....", ".XX..", "..X..", ".X..."),
    "!": ("..X..", "..X..", "..X..", "..X..", "..X..", ".....", "..X.."),
    "?": (".XXX.", "X...X", "....X", "...X.", "..X..", ".....", "..X.."),
    "'": ("..X..", "..X..", ".X...", ".....", ".....", ".....", "....."),
    '"': (".X.X.", ".X.X.", ".X.X.", ".....", ".....", ".....", "....."),
    "(": ("...X.", "..X..", ".X...", ".X...", ".X...", "..X..", "...X."),
    ")": (".X...", "..X..", "...X.", "...X.", "...X.", "..X..", ".X..."),
    "-": (".....", ".....", ".....", "XXXXX", ".....", ".....", "....."),
    "+": (".....", "..X..", "..X..", "XXXXX", "..X..", "..X..", "....."),
    "/": ("....X", "....X", "...X.", "..X..", ".X...", "X....", "X...."),
    "=": (".....", ".....", "XXXXX", ".....", "XXXXX", ".....", "....."),
}

GLYPH_ALPHABET = "".join(sorted(_FONT_5X7))

# Widest strip the generator will produce; bounds the patch count per image.
_MAX_STRIP_WIDTH = 112


def _glyph_mask(ch: str) -> np.ndarray:
    rows = _FONT_5X7[ch]
    return np.array([[c == "X" for c in row] for row in rows], dtype=bool)


def render_text_strip(text: str, height: int, scale: int, ink: float, background: float,
                      baseline_offset: int = 0, min_width: int = 0) -> np.ndarray:
    """Render `text` with the built-in 5x7 font at an integer scale.

    Returns a (height, width) image; width is always even. baseline_offset
    shifts the glyph row down from the top margin.
    """
    if not text:
        raise ValueError("cannot render empty text")
    glyph_h = 7 * scale
    if glyph_h > height:
        raise ValueError(f"glyphs of height {glyph_h} do not fit in {height} rows")
    advance = 6 * scale
    width = max(scale + advance * len(text), min_width)
    width += width % 2
    canvas = np.full((height, width), background, dtype=np.float64)
    y0 = min(max(baseline_offset, 0), height - glyph_h)
    x = scale
    for ch in text:
        mask = np.kron(_glyph_mask(ch), np.ones((scale, scale), dtype=bool))
        block = canvas[y0:y0 + glyph_h, x:x + 5 * scale]
        block[mask] = ink
        x += advance
    return canvas


def generate_synthetic_corpus(count: int, seed, out_dir,
                              height_range: tuple[int, int] = (18, 58)) -> DatasetManifest:
    """Generate `count` HR/LR text-strip pairs and a manifest under out_dir.

    HR heights are even values inside height_range; the LR partner is the HR
    image bicubic-downscaled by 2. Byte-identical output for identical
    (count, seed, height_range).
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    lo, hi = height_range
    if lo < 18 or hi < lo:
        raise ValueError(f"height_range must satisfy 18 <= lo <= hi, got {height_range}")
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        rng = np.random.default_rng([int(seed), i])
        height = 2 * int(rng.integers(lo // 2 + lo % 2, hi // 2 + 1))
        s_max = max(1, (height - 2) // 7)
        scale = int(rng.integers(max(1, s_max // 2), s_max + 1))
        max_chars = max(1, (_MAX_STRIP_WIDTH - scale) // (6 * scale))
        n_chars = int(rng.integers(1, max_chars + 1))
        text = "".join(rng.choice(list(GLYPH_ALPHABET), size=n_chars))
        ink = float(rng.uniform(0.02, 0.25))
        background = float(rng.uniform(0.78, 0.95))
        y0 = int(rng.integers(0, height - 7 * scale + 1))
        # strips must cover at least one 18x18 training window
        hr = render_text_strip(text, height, scale, ink, background,
                               baseline_offset=y0, min_width=18)
        lr = bicubic_downscale(hr, 2)
        image_id = f"img_{i:04d}"
        hr_rel = f"images/{image_id}_hr.pgm"
        lr_rel = f"images/{image_id}_lr.pgm"
        save_pgm(hr, out_dir / hr_rel)
        save_pgm(lr, out_dir / lr_rel)
        entries.append(ManifestEntry(image_id, str(out_dir / hr_rel), str(out_dir / lr_rel), text))
    manifest = DatasetManifest(entries, "all")
    rel = DatasetManifest([ManifestEntry(e.image_id, f"images/{e.image_id}_hr.pgm",
                                         f"images/{e.image_id}_lr.pgm", e.text)
                           for e in entries], "all")
    save_manifest(rel, out_dir / "manifest.tsv")
    return manifest
