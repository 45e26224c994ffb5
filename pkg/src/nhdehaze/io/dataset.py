"""Paired hazy/clean datasets on disk with a ``key=value`` manifest."""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..haze import HazeRange, synth_pairs
from .images import load_image, save_image

MANIFEST = "manifest.txt"


def format_record(record: dict) -> str:
    def fmt(v):
        if isinstance(v, (list, tuple, np.ndarray)):
            return ",".join(fmt(x) for x in v)
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)

    return " ".join(f"{k}={fmt(v)}" for k, v in record.items())


def parse_record(line: str) -> dict:
    out = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise ValueError(f"malformed record token {token!r}")
        out[key] = value
    return out


def make_dataset(
    clean_images: Optional[Sequence[np.ndarray]],
    count: int,
    params_range: HazeRange,
    out_dir: Union[str, Path],
    seed: int = 0,
    size: int = 64,
) -> List[dict]:
    """Write ``count`` PNG pairs plus a manifest; returns the manifest records.

    Procedural scenes are generated when ``clean_images`` is empty.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, (hazy, clean, info) in enumerate(synth_pairs(count, size, seed, params_range, clean_images)):
        names = (f"hazy_{i:04d}.png", f"clean_{i:04d}.png")
        save_image(hazy, out_dir / names[0])
        save_image(clean, out_dir / names[1])
        records.append({"index": i, "hazy": names[0], "clean": names[1], **info})
    (out_dir / MANIFEST).write_text("".join(format_record(r) + "\n" for r in records))
    return records


def read_manifest(data_dir: Union[str, Path]) -> List[dict]:
    path = Path(data_dir) / MANIFEST
    return [parse_record(line) for line in path.read_text().splitlines() if line.strip()]


def load_dataset(data_dir: Union[str, Path]) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Load ``(hazy, clean)`` pairs as ``[3, H, W]`` arrays in manifest order."""
    data_dir = Path(data_dir)
    pairs = []
    for rec in read_manifest(data_dir):
        hazy = load_image(data_dir / rec["hazy"])[0]
        clean = load_image(data_dir / rec["clean"])[0]
        pairs.append((hazy, clean))
    if not pairs:
        raise ValueError(f"{data_dir}: manifest lists no pairs")
    return pairs
