"""Binary PPM (P6) frame files, the raw format of dumped source videos."""

from __future__ import annotations

import numpy as np


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image).tobytes())


def _read_token(fh) -> bytes:
    """Next whitespace-delimited header token, skipping # comments."""
    token = b""
    while True:
        c = fh.read(1)
        if not c:
            raise ValueError("truncated PPM header")
        if c == b"#":
            while c and c != b"\n":
                c = fh.read(1)
            continue
        if c.isspace():
            if token:
                return token
            continue
        token += c


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if _read_token(fh) != b"P6":
            raise ValueError(f"{path}: not a binary P6 PPM")
        w = int(_read_token(fh))
        h = int(_read_token(fh))
        maxval = int(_read_token(fh))
        if maxval != 255:
            raise ValueError(f"{path}: unsupported maxval {maxval}")
        data = fh.read(h * w * 3)
    if len(data) != h * w * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, np.uint8).reshape(h, w, 3).copy()
