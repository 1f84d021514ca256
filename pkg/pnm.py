"""Netpbm greymap/pixmap reading and writing (P2, P3, P5, P6) with samples scaled to [0, 1]."""

from pathlib import Path

import numpy as np

from errors import InvalidArgumentError, PnmParseError

CHANNELS = {b"P2": 1, b"P5": 1, b"P3": 3, b"P6": 3}
PLAIN = {b"P2", b"P3"}
WHITESPACE = b" \t\r\n\v\f"


def _skip_whitespace_and_comments(data: bytes, pos: int) -> int:
    while pos < len(data):
        if data[pos] in WHITESPACE:
            pos += 1
        elif data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        else:
            break
    return pos


def _read_int(data: bytes, pos: int, what: str) -> tuple[int, int]:
    """Parse the next decimal token, returning (value, position after the token)."""
    pos = _skip_whitespace_and_comments(data, pos)
    if pos >= len(data):
        raise PnmParseError(f"truncated file while reading {what}", pos)
    end = pos
    while end < len(data) and data[end] not in WHITESPACE and data[end : end + 1] != b"#":
        end += 1
    token = data[pos:end]
    if not token.isdigit():
        raise PnmParseError(f"expected an integer for {what}, got {token[:16]!r}", pos)
    return int(token), end


def read_image_pnm(path) -> np.ndarray:
    """Read a PGM/PPM file into a float array in [0, 1], shaped (h, w) or (h, w, 3).

    Raises:
        PnmParseError: on an unsupported magic, a malformed header or a truncated payload.
    """
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in CHANNELS:
        raise PnmParseError(f"unsupported magic {magic.decode('latin-1')!r}", 0)
    channels = CHANNELS[magic]
    width, pos = _read_int(data, 2, "width")
    height, pos = _read_int(data, pos, "height")
    maxval, pos = _read_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise PnmParseError(f"invalid dimensions {width}x{height}", pos)
    if not 1 <= maxval <= 65535:
        raise PnmParseError(f"maxval {maxval} outside [1, 65535]", pos)
    count = width * height * channels

    if magic in PLAIN:
        samples = np.empty(count, dtype=np.int64)
        for i in range(count):
            samples[i], pos = _read_int(data, pos, f"sample {i}")
    else:
        if pos >= len(data) or data[pos] not in WHITESPACE:
            raise PnmParseError("missing whitespace after maxval", pos)
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        if len(data) - pos < count * dtype.itemsize:
            raise PnmParseError(
                f"truncated payload: expected {count * dtype.itemsize} bytes, found {len(data) - pos}", len(data)
            )
        samples = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.int64)
    if np.any(samples > maxval):
        raise PnmParseError(f"sample exceeds maxval {maxval}", pos)

    shape = (height, width) if channels == 1 else (height, width, 3)
    return samples.reshape(shape) / maxval


def write_image_pnm(path, image: np.ndarray, maxval=255, plain=False):
    """Write a [0, 1] image as PGM (2-D) or PPM (h, w, 3), rounding to the nearest sample."""
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        magic = "P2" if plain else "P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = "P3" if plain else "P6"
    else:
        raise InvalidArgumentError(f"cannot write an image of shape {image.shape}")
    if not 1 <= maxval <= 65535:
        raise InvalidArgumentError(f"maxval must lie in [1, 65535], got {maxval}")
    if np.any(image < 0) or np.any(image > 1) or not np.all(np.isfinite(image)):
        raise InvalidArgumentError("image samples must lie in [0, 1]")
    height, width = image.shape[:2]
    samples = np.rint(image * maxval).astype(np.int64)
    header = f"{magic}\n{width} {height}\n{maxval}\n".encode("ascii")
    if plain:
        rows = samples.reshape(height, -1)
        payload = "\n".join(" ".join(str(v) for v in row) for row in rows).encode("ascii") + b"\n"
    else:
        dtype = ">u2" if maxval > 255 else "u1"
        payload = samples.astype(dtype).tobytes()
    Path(path).write_bytes(header + payload)
