"""Line-oriented key-value files shared by scenarios and configs.

Every file starts with ``<MAGIC> 1``.  Blank lines and ``#`` comments are
ignored; every other line is a directive followed by whitespace-separated
fields.
"""
from __future__ import annotations

import math
from pathlib import Path

from .errors import TrajectoryParseError


def directives(text: str, magic: str, path=None):
    """Yield (lineno, tokens) after checking the header."""
    out = []
    header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if not header:
            if tok != [magic, "1"]:
                raise TrajectoryParseError(f"expected header '{magic} 1'", lineno, path)
            header = True
            continue
        out.append((lineno, tok))
    if not header:
        raise TrajectoryParseError(f"empty file, expected header '{magic} 1'", 1, path)
    return out


def number(tok, lineno, path=None) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise TrajectoryParseError(f"bad number {tok!r}", lineno, path) from None
    if not math.isfinite(v):
        raise TrajectoryParseError(f"non-finite number {tok!r}", lineno, path)
    return v


def read_params(path, magic: str) -> dict:
    """All ``param <name> <value>`` lines as a dict of floats."""
    text = Path(path).read_text()
    out = {}
    for lineno, tok in directives(text, magic, str(path)):
        if tok[0] != "param" or len(tok) != 3:
            raise TrajectoryParseError("expected 'param <name> <value>'", lineno, str(path))
        out[tok[1]] = number(tok[2], lineno, str(path))
    return out
