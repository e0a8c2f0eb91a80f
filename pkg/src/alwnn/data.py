"""Dataset container plus the on-disk record format.

Record file: one struct per frame, little-endian, no padding:
    [u16 scheme_id][i16 snr_dB][f32 x L I samples][f32 x L Q samples]
Sidecar: same path with a .json suffix, UTF-8 JSON carrying version,
schemes, snr_grid, length, frames_per_cell and seed.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signals import SCHEME_IDS

FORMAT_VERSION = 1


class DataFormatError(Exception):
    """Raised when a dataset file or sidecar fails validation."""


def _record_dtype(length):
    return np.dtype([("sid", "<u2"), ("snr", "<i2"), ("iq", "<f4", (2, length))])


@dataclass
class Dataset:
    iq: np.ndarray       # (n, 2, L) float32, I then Q
    scheme_ids: np.ndarray  # (n,) uint16, global scheme ids
    snrs: np.ndarray     # (n,) int16, dB
    meta: dict

    def __len__(self):
        return len(self.scheme_ids)

    @property
    def length(self):
        return self.iq.shape[2]

    @property
    def schemes(self):
        return list(self.meta["schemes"])

    def labels(self):
        """Class indices 0..K-1 following the sidecar scheme order."""
        lut = np.full(max(SCHEME_IDS.values()) + 1, -1, dtype=np.int64)
        for k, name in enumerate(self.meta["schemes"]):
            lut[SCHEME_IDS[name]] = k
        out = lut[self.scheme_ids]
        if np.any(out < 0):
            raise DataFormatError("frame scheme id missing from sidecar scheme list")
        return out

    def subset(self, indices):
        return Dataset(self.iq[indices], self.scheme_ids[indices],
                       self.snrs[indices], dict(self.meta))


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def save_dataset(ds, path):
    path = Path(path)
    rec = np.empty(len(ds), dtype=_record_dtype(ds.length))
    rec["sid"] = ds.scheme_ids
    rec["snr"] = ds.snrs
    rec["iq"] = ds.iq
    path.parent.mkdir(parents=True, exist_ok=True)
    rec.tofile(path)
    sidecar_path(path).write_text(json.dumps(ds.meta, indent=2) + "\n", encoding="utf-8")


def load_dataset(path):
    path = Path(path)
    side = sidecar_path(path)
    if not path.exists():
        raise DataFormatError(f"missing record file {path}")
    if not side.exists():
        raise DataFormatError(f"missing sidecar {side}")
    try:
        meta = json.loads(side.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"sidecar {side} is not valid JSON: {e}") from e
    for key in ("version", "schemes", "snr_grid", "length", "frames_per_cell", "seed"):
        if key not in meta:
            raise DataFormatError(f"sidecar {side} missing field {key!r}")
    if meta["version"] != FORMAT_VERSION:
        raise DataFormatError(f"unsupported dataset version {meta['version']}")
    unknown = [s for s in meta["schemes"] if s not in SCHEME_IDS]
    if unknown:
        raise DataFormatError(f"unknown schemes in sidecar: {unknown}")
    length = int(meta["length"])
    dt = _record_dtype(length)
    size = path.stat().st_size
    if size % dt.itemsize != 0:
        raise DataFormatError(
            f"record file size {size} is not a multiple of the {dt.itemsize}-byte frame record")
    rec = np.fromfile(path, dtype=dt)
    expect = len(meta["schemes"]) * len(meta["snr_grid"]) * int(meta["frames_per_cell"])
    if len(rec) != expect:
        raise DataFormatError(f"expected {expect} frames, file holds {len(rec)}")
    valid_ids = {SCHEME_IDS[s] for s in meta["schemes"]}
    if not set(np.unique(rec["sid"]).tolist()) <= valid_ids:
        raise DataFormatError("record file contains scheme ids absent from the sidecar")
    if not set(np.unique(rec["snr"]).tolist()) <= {int(s) for s in meta["snr_grid"]}:
        raise DataFormatError("record file contains SNRs absent from the sidecar grid")
    return Dataset(np.ascontiguousarray(rec["iq"]), rec["sid"].copy(),
                   rec["snr"].copy(), meta)
