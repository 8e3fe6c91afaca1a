"""Versioned binary container for trained models.

Layout: 4-byte magic ``HCF1``, a little-endian uint64 header length, a
UTF-8 JSON header (format version, shapes, hyperparameters, dataset tag,
encoder vocabularies, section table), then raw payload sections in table
order.  Code matrices are bit-packed (+1 -> 1) row-major with
little-endian bit order; float sections are little-endian float64,
C-order.  Round trips are bit-exact.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .encoders import DemographicEncoder, InteractionEncoder, ViewEncoders
from .errors import DataFormatError
from .linalg import PcaBasis
from .solver import Hyperparams, TrainedModel

MAGIC = b"HCF1"
MODEL_FORMAT_VERSION = 1


def _pack_codes(codes: np.ndarray) -> bytes:
    return np.packbits((codes > 0).astype(np.uint8).ravel(), bitorder="little").tobytes()


def _unpack_codes(raw: bytes, shape) -> np.ndarray:
    bits = np.unpackbits(
        np.frombuffer(raw, dtype=np.uint8), count=int(np.prod(shape)), bitorder="little"
    )
    return np.where(bits.reshape(shape) == 1, 1.0, -1.0)


def _float_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _float_from(raw: bytes, shape) -> np.ndarray:
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def save_model(model: TrainedModel, path) -> None:
    """Write a model atomically (temp file + rename)."""
    sections = []
    payload = []

    def add(name, kind, shape, raw):
        sections.append(
            {"name": name, "kind": kind, "shape": list(shape), "nbytes": len(raw)}
        )
        payload.append(raw)

    add("D", "bits", model.D.shape, _pack_codes(model.D))
    add("B", "bits", model.B.shape, _pack_codes(model.B))
    add("R", "f8", model.R.shape, _float_bytes(model.R))
    for i, Wm in enumerate(model.W):
        add(f"W{i}", "f8", Wm.shape, _float_bytes(Wm))

    encoders_header = None
    if model.encoders is not None:
        enc: ViewEncoders = model.encoders
        encoders_header = enc.to_dict()
        add("pca_mean", "f8", enc.interaction.basis.mean.shape,
            _float_bytes(enc.interaction.basis.mean))
        add("pca_components", "f8", enc.interaction.basis.components.shape,
            _float_bytes(enc.interaction.basis.components))

    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "n": int(model.B.shape[1]),
        "m": int(model.D.shape[1]),
        "r": int(model.r),
        "n_views": len(model.W),
        "view_dims": [int(Wm.shape[1]) for Wm in model.W],
        "hyper": model.hyper.to_dict(),
        "dataset_tag": model.dataset_tag,
        "encoders": encoders_header,
        "sections": sections,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")

    dirname = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(np.uint64(len(blob)).tobytes())
            f.write(blob)
            for raw in payload:
                f.write(raw)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_model(path) -> TrainedModel:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise DataFormatError("not a model file (bad magic)", path=str(path))
        (header_len,) = np.frombuffer(f.read(8), dtype=np.uint64)
        header = json.loads(f.read(int(header_len)).decode("utf-8"))
        if header["format_version"] != MODEL_FORMAT_VERSION:
            raise DataFormatError(
                f"model format version {header['format_version']} != "
                f"{MODEL_FORMAT_VERSION}",
                path=str(path),
            )
        raw = {}
        for sec in header["sections"]:
            raw[sec["name"]] = (f.read(sec["nbytes"]), sec)

    def bits(name):
        data, sec = raw[name]
        return _unpack_codes(data, tuple(sec["shape"]))

    def floats(name):
        data, sec = raw[name]
        return _float_from(data, tuple(sec["shape"]))

    encoders = None
    if header["encoders"] is not None:
        basis = PcaBasis(mean=floats("pca_mean"), components=floats("pca_components"))
        enc_h = header["encoders"]
        encoders = ViewEncoders(
            demo=DemographicEncoder.from_dict(enc_h["demo"]),
            interaction=InteractionEncoder(enc_h["interaction_vocab"], basis),
            normalized=enc_h["normalized"],
        )

    return TrainedModel(
        W=[floats(f"W{i}") for i in range(header["n_views"])],
        D=bits("D"),
        R=floats("R"),
        B=bits("B"),
        hyper=Hyperparams.from_dict(header["hyper"]),
        encoders=encoders,
        dataset_tag=header["dataset_tag"],
    )


def models_equal(a: TrainedModel, b: TrainedModel) -> bool:
    """Exact equality of every persisted field (test helper)."""
    if len(a.W) != len(b.W) or a.dataset_tag != b.dataset_tag:
        return False
    if a.hyper.to_dict() != b.hyper.to_dict():
        return False
    arrays = [(a.D, b.D), (a.B, b.B), (a.R, b.R)] + list(zip(a.W, b.W))
    return all(x.shape == y.shape and np.array_equal(x, y) for x, y in arrays)
