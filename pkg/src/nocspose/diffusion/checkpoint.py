"""Checkpoint container: a JSON header (architecture, schedule, categories,
PCA reference, format version) followed by named little-endian binary
blocks. Parameter arrays are stored as float32; the PCA basis keeps float64
so its orthonormality survives the round trip. Writing the same state twice
produces byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from ..features import PcaBasis
from .schedule import NoiseSchedule, make_schedule
from .unet import UNetConfig, UNetParams

MAGIC = b"NCKP"
FORMAT_VERSION = 1
_DTYPES = {"f4": "<f4", "f8": "<f8"}


class CheckpointError(RuntimeError):
    pass


@dataclass
class CheckpointBundle:
    params: UNetParams
    sched: NoiseSchedule
    basis: PcaBasis | None
    meta: dict

    @property
    def category_names(self) -> list:
        return list(self.meta.get("categories", {}).get("names", []))

    def category_id(self, name: str | None) -> int:
        if name is None:
            return 0
        ids = self.meta.get("categories", {}).get("ids", {})
        if name not in ids:
            raise CheckpointError(f"unknown category '{name}'; "
                                  f"checkpoint knows {sorted(ids)}")
        return int(ids[name])


def save_checkpoint(path, params: UNetParams, sched: NoiseSchedule,
                    basis: PcaBasis | None, meta: dict | None = None) -> None:
    tensors = {n: (a, "f4") for n, a in params.arrays.items()}
    pca_ref = None
    if basis is not None:
        tensors["pca.mean"] = (basis.mean, "f8")
        tensors["pca.components"] = (basis.components, "f8")
        tensors["pca.variances"] = (basis.variances, "f8")
        pca_ref = {"dim": basis.dim, "m": basis.m,
                   "tensors": ["pca.mean", "pca.components", "pca.variances"]}
    order = list(tensors)
    header = {
        "format_version": FORMAT_VERSION,
        "unet": params.config.to_dict(),
        "schedule": sched.to_dict(),
        "category_table_size": params.config.table_rows,
        "pca_basis": pca_ref,
        "tensors": [{"name": n, "shape": list(tensors[n][0].shape),
                     "dtype": tensors[n][1]} for n in order],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in order:
            arr, dt = tensors[n]
            f.write(np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tobytes())


def load_checkpoint(path) -> CheckpointBundle:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"not a checkpoint file: {path}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version in {path}")
        tensors = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            dtype = _DTYPES[spec.get("dtype", "f4")]
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * np.dtype(dtype).itemsize
            buf = f.read(nbytes)
            if len(buf) != nbytes:
                raise CheckpointError(f"truncated checkpoint: {path}")
            tensors[spec["name"]] = np.frombuffer(buf, dtype=dtype) \
                .reshape(shape).copy()
    cfg = UNetConfig.from_dict(header["unet"])
    params = UNetParams(cfg, {n: t for n, t in tensors.items()
                              if not n.startswith("pca.")})
    sc = header["schedule"]
    sched = make_schedule(sc["num_steps"], sc["beta_start"], sc["beta_end"])
    basis = None
    if header.get("pca_basis"):
        basis = PcaBasis(tensors["pca.mean"], tensors["pca.components"],
                         tensors["pca.variances"])
    return CheckpointBundle(params, sched, basis, header.get("meta", {}))
