"""Binary PGM ("P5", maxval <= 255) reading and writing.

Frame metadata rides along in header comments of the form
``# vlp.<key>=<value>`` so a simulated frame can be located later without a
side file.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ParseError
from .geometry import Pose2D
from .scene_sim import Frame


def encode_pgm(frame: Frame) -> bytes:
    comments = [f"# vlp.frame_start_time={frame.frame_start_time!r}"]
    if frame.pose is not None:
        comments.append("# vlp.pose=" + ",".join(repr(float(c)) for c in frame.pose))
    if frame.seed is not None:
        comments.append(f"# vlp.seed={frame.seed}")
    header = "P5\n" + "\n".join(comments) + f"\n{frame.width} {frame.height}\n255\n"
    return header.encode("ascii") + frame.pixels.tobytes()


def write_pgm(path, frame: Frame) -> None:
    Path(path).write_bytes(encode_pgm(frame))


def decode_pgm(data: bytes, path=None) -> Frame:
    pos = 0
    line = 1
    meta = {}
    tokens = []
    n = len(data)
    # Header: magic, width, height, maxval separated by whitespace/comments.
    while len(tokens) < 4:
        if pos >= n:
            raise ParseError("truncated PGM header", line, None, path)
        c = data[pos:pos + 1]
        if c == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise ParseError("unterminated header comment", line, None, path)
            text = data[pos + 1:end].decode("ascii", "replace").strip()
            if text.startswith("vlp.") and "=" in text:
                key, value = text[4:].split("=", 1)
                meta[key.strip()] = value.strip()
            pos = end + 1
            line += 1
        elif c.isspace():
            if c == b"\n":
                line += 1
            pos += 1
        else:
            start = pos
            while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
                pos += 1
            tokens.append((data[start:pos], line))
    magic, (w_tok, w_line), (h_tok, h_line), (m_tok, m_line) = tokens[0][0], *tokens[1:]
    if magic != b"P5":
        raise ParseError(f"unsupported magic {magic!r}; expected P5", tokens[0][1], 1, path)
    try:
        width, height, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError:
        raise ParseError("non-integer PGM dimensions", w_line, None, path) from None
    if width <= 0 or height <= 0:
        raise ParseError(f"invalid dimensions {width}x{height}", w_line, None, path)
    if not 0 < maxval <= 255:
        raise ParseError(f"maxval {maxval} unsupported (need 1..255)", m_line, None, path)
    if pos >= n or not data[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after maxval", m_line, None, path)
    pos += 1
    body = data[pos:]
    if len(body) < width * height:
        raise ParseError(f"pixel data truncated: {len(body)} of {width * height} bytes",
                         m_line, None, path)
    pixels = np.frombuffer(body[:width * height], dtype=np.uint8).reshape(height, width).copy()

    try:
        start = float(meta.get("frame_start_time", 0.0))
        pose = Pose2D.make(*(float(v) for v in meta["pose"].split(","))) if "pose" in meta else None
        seed = int(meta["seed"]) if "seed" in meta else None
    except (ValueError, TypeError):
        raise ParseError("malformed vlp metadata comment", None, None, path) from None
    return Frame(pixels, start, pose, seed)


def read_pgm(path) -> Frame:
    path = Path(path)
    return decode_pgm(path.read_bytes(), path)
