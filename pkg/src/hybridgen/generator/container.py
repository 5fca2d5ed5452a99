"""Sample container files.

Layout: an 8-byte little-endian header length, a UTF-8 JSON header, then the
raw little-endian float64 arrays in the order the header lists them.  A file
holds one or more samples; the header's index table records each field's
name, shape and byte offset relative to the start of the payload.
"""

from __future__ import annotations

import json
import struct
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from .sample import Sample

MAGIC = "hybridgen-sample"
VERSION = 1
FIELDS = ("image", "target", "mask")


class ContainerError(ValueError):
    pass


def write_samples(path: str | Path, samples: Sequence[Sample]) -> None:
    index, chunks, offset = [], [], 0
    for sample in samples:
        entry = {}
        for name in FIELDS:
            arr = np.asarray(getattr(sample, name), dtype="<f8")
            entry[name] = {"shape": list(arr.shape), "offset": offset}
            chunks.append(arr.tobytes(order="C"))
            offset += arr.nbytes
        index.append(entry)
    header = {"format": MAGIC, "version": VERSION, "dtype": "<f8", "fields": list(FIELDS), "samples": index}
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for chunk in chunks:
            fh.write(chunk)


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8:
            raise ContainerError(f"{path}: truncated header")
        (n,) = struct.unpack("<Q", head)
        try:
            header = json.loads(fh.read(n))
        except json.JSONDecodeError as exc:
            raise ContainerError(f"{path}: malformed header") from exc
    if header.get("format") != MAGIC:
        raise ContainerError(f"{path}: not a sample container")
    return header


def read_samples(path: str | Path) -> list[Sample]:
    header = read_header(path)
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        fh.seek(8 + n)
        payload = fh.read()
    out = []
    for entry in header["samples"]:
        arrays = {}
        for name in header["fields"]:
            spec = entry[name]
            count = int(np.prod(spec["shape"], dtype=np.int64))
            start = spec["offset"]
            if start + 8 * count > len(payload):
                raise ContainerError(f"{path}: payload shorter than index")
            arrays[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=start).reshape(spec["shape"]).copy()
        out.append(Sample(image=arrays["image"], target=arrays["target"], mask=arrays["mask"] > 0.5))
    return out


def write_sample(path: str | Path, sample: Sample) -> None:
    write_samples(path, [sample])


def read_sample(path: str | Path) -> Sample:
    samples = read_samples(path)
    if len(samples) != 1:
        raise ContainerError(f"{path}: expected one sample, found {len(samples)}")
    return samples[0]
