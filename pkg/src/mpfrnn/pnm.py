"""Binary portable pixmap (P6) and graymap (P5) files with maxval 255."""

import numpy as np

from .errors import DataError, FormatError
from .loss import VOID

_WS = b" \t\r\n\v\f"


def _header_tokens(data, count, path):
    """Read ``count`` header tokens, skipping ``#`` comments.

    Returns the tokens and the offset of the raster (after the single
    whitespace byte that ends the header).
    """
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and (data[i] in _WS or data[i] == ord("#")):
            if data[i] == ord("#"):
                while i < n and data[i] not in b"\r\n":
                    i += 1
            else:
                i += 1
        start = i
        while i < n and data[i] not in _WS and data[i] != ord("#"):
            i += 1
        if start == i:
            raise FormatError(f"{path}: truncated header")
        tokens.append(data[start:i])
    if i >= n or data[i] not in _WS:
        raise FormatError(f"{path}: header not terminated by whitespace")
    return tokens, i + 1


def decode_pnm(data, path="<bytes>"):
    """Decode P5/P6 bytes into a (C, H, W) uint8 array."""
    if data[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file (magic {data[:2]!r})")
    tokens, offset = _header_tokens(data, 4, path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: non-numeric header field in {tokens[1:]}") from None
    if width < 1 or height < 1:
        raise FormatError(f"{path}: invalid size {width}x{height}")
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported (expected 255)")
    channels = 3 if tokens[0] == b"P6" else 1
    size = width * height * channels
    raster = data[offset:offset + size]
    if len(raster) != size:
        raise FormatError(f"{path}: expected {size} raster bytes, found {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return arr.transpose(2, 0, 1).copy()


def encode_pnm(arr):
    """Encode a (C, H, W) uint8 array with C in {1, 3}."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3, H, W) array, got {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 data, got {arr.dtype}")
    c, h, w = arr.shape
    magic = b"P6" if c == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (w, h)
    return header + arr.transpose(1, 2, 0).tobytes()


def read_header(path):
    """(channels, height, width) without reading the raster."""
    with open(path, "rb") as fh:
        head = fh.read(512)
    if head[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file")
    tokens, _ = _header_tokens(head, 4, path)
    try:
        w, h = int(tokens[1]), int(tokens[2])
    except ValueError:
        raise FormatError(f"{path}: non-numeric header field") from None
    return (3 if tokens[0] == b"P6" else 1), h, w


def _read(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from None


def to_uint8(image):
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def read_image(path):
    """Image as a float64 (C, H, W) array in [0, 1]."""
    return decode_pnm(_read(path), path).astype(np.float64) / 255.0


def write_image(path, image):
    """Write a (C, H, W) image in [0, 1]; values are rounded to 8 bits."""
    with open(path, "wb") as fh:
        fh.write(encode_pnm(to_uint8(image)))


def read_labels(path, num_classes=None):
    """Label map as an (H, W) uint8 array; ``VOID`` marks ignored pixels."""
    arr = decode_pnm(_read(path), path)
    if arr.shape[0] != 1:
        raise FormatError(f"{path}: label maps must be graymaps (P5)")
    labels = arr[0]
    if num_classes is not None:
        bad = (labels >= num_classes) & (labels != VOID)
        if bad.any():
            r, c = (int(v) for v in np.argwhere(bad)[0])
            raise DataError(f"{path}: label {int(labels[r, c])} at row {r}, column {c} "
                            f"outside 0..{num_classes - 1}")
    return labels


def write_labels(path, labels):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"expected an (H, W) label map, got {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("label values must fit in 8 bits")
    with open(path, "wb") as fh:
        fh.write(encode_pnm(labels.astype(np.uint8)[None]))
