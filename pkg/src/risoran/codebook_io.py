"""Binary codebook files (see docs/codebook_format.md)."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .phy import Codebook, Codeword, RisAperture, SteeringPair, generate_pre_phase

MAGIC = b"RISC"
VERSION = 1
SEED_ZERO = -1
SEED_CUSTOM = -2

_HEADER = struct.Struct(">4sBHddddddddqI")
_ANGLE = struct.Struct(">d")


class CodebookFormatError(ValueError):
    pass


def dumps(codebook: Codebook) -> bytes:
    ap = codebook.aperture
    n = ap.n_elements_per_side
    seed = ap.pre_phase_seed
    if seed is None:
        seed = SEED_CUSTOM
    elif seed != SEED_ZERO and not np.array_equal(ap.pre_phase, generate_pre_phase(n, seed)):
        seed = SEED_CUSTOM
    parts = [_HEADER.pack(MAGIC, VERSION, n, ap.element_spacing, ap.carrier_frequency, ap.efficiency,
                          codebook.incident[0], codebook.incident[1], codebook.scan_start_deg,
                          codebook.scan_end_deg, codebook.step_deg, seed, len(codebook))]
    if seed == SEED_CUSTOM:
        parts.append(np.asarray(ap.pre_phase, dtype=">f8").tobytes())
    for i, cw in enumerate(codebook):
        scan = codebook.angle_of(i)
        parts.append(_ANGLE.pack(scan))
        parts.append(np.packbits(cw.states.ravel()).tobytes())
    return b"".join(parts)


def loads(data: bytes) -> Codebook:
    if len(data) < _HEADER.size:
        raise CodebookFormatError("file shorter than the header")
    magic, version, n, spacing, freq, eff, inc_t, inc_p, start, stop, step, seed, count = \
        _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CodebookFormatError("not a codebook file")
    if version != VERSION:
        raise CodebookFormatError(f"unsupported codebook version {version}")
    pos = _HEADER.size
    if seed == SEED_CUSTOM:
        size = 8 * n * n
        if pos + size > len(data):
            raise CodebookFormatError("truncated pre-phase block")
        pre = np.frombuffer(data[pos:pos + size], dtype=">f8").astype(float).reshape(n, n)
        aperture = RisAperture(n, spacing, freq, eff, pre_phase=pre, pre_phase_seed=None)
        pos += size
    else:
        aperture = RisAperture.with_seed(n, seed, element_spacing=spacing, carrier_frequency=freq,
                                         efficiency=eff)
    nbytes = (n * n + 7) // 8
    words = []
    for i in range(count):
        if pos + _ANGLE.size + nbytes > len(data):
            raise CodebookFormatError("truncated codeword block")
        (scan,) = _ANGLE.unpack_from(data, pos)
        pos += _ANGLE.size
        bits = np.unpackbits(np.frombuffer(data[pos:pos + nbytes], dtype=np.uint8))[:n * n]
        pos += nbytes
        words.append(Codeword(bits.reshape(n, n), SteeringPair.on_cut(scan, (inc_t, inc_p)), i))
    if pos != len(data):
        raise CodebookFormatError("trailing bytes after the last codeword")
    return Codebook(aperture, (inc_t, inc_p), start, stop, step, tuple(words))


def save(codebook: Codebook, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_bytes(dumps(codebook))
    return path


def load(path: Union[str, Path]) -> Codebook:
    return loads(Path(path).read_bytes())
