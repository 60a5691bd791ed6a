"""The "IBND" binary container used for checkpoints and dataset caches.

Layout (little-endian)::

    b"IBND"  u16 version  4-byte kind tag
    u32 block count
    per block:  u16 name length, name (utf-8), u8 ndim, ndim x u64 dims,
                u64 element count, payload (f8 for parameters; f8 or i8 for caches)

Parameter blocks follow the model's declaration order, so a write/read cycle
is bit-exact.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .classifier import SoftmaxDecoder
from .data import Dataset
from .encoders import GaussianEncoder, LogNormalEncoder, RbmEncoder
from .errors import BadMagicError, CheckpointError, TruncatedFileError
from .nn import Dense, DenseNet

MAGIC = b"IBND"
VERSION = 1

KIND_TAGS = {"gaussian": b"GAUS", "lognormal": b"LOGN", "rbm": b"RBM_", "dataset": b"DSET"}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}


def _pack_blocks(kind: str, blocks: list[tuple[str, np.ndarray]]) -> bytes:
    out = [MAGIC, struct.pack("<H", VERSION), KIND_TAGS[kind], struct.pack("<I", len(blocks))]
    for name, arr in blocks:
        arr = np.asarray(arr)
        code = 1 if np.issubdtype(arr.dtype, np.integer) else 0
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(struct.pack("<Q", arr.size))
        out.append(arr.tobytes())
    return b"".join(out)


def _unpack_blocks(buf: bytes):
    if len(buf) < 14:
        raise TruncatedFileError("IBND header truncated")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"not an IBND file (magic {buf[:4]!r})")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported IBND version {version}")
    tag = buf[6:10]
    if tag not in TAG_KINDS:
        raise CheckpointError(f"unknown kind tag {tag!r}")
    (count,) = struct.unpack_from("<I", buf, 10)
    pos = 14
    blocks = []
    try:
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + ln].decode("utf-8")
            pos += ln
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            (size,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            dt = _DTYPES[code]
            nbytes = size * dt.itemsize
            if pos + nbytes > len(buf) or int(np.prod(shape, dtype=np.int64)) != size:
                raise TruncatedFileError(f"block {name!r} truncated or inconsistent")
            arr = np.frombuffer(buf, dtype=dt, count=size, offset=pos).reshape(shape).copy()
            pos += nbytes
            blocks.append((name, arr))
    except struct.error as exc:
        raise TruncatedFileError(f"IBND block table truncated: {exc}") from exc
    if pos != len(buf):
        raise CheckpointError("trailing bytes after the last block")
    return TAG_KINDS[tag], blocks


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def checkpoint_bytes(encoder, decoder: SoftmaxDecoder | None = None) -> bytes:
    blocks = [("enc." + k, v) for k, v in encoder.params().items()]
    if decoder is not None:
        blocks += [("dec." + k, v) for k, v in decoder.params().items()]
    return _pack_blocks(encoder.kind, blocks)


def save_checkpoint(path, encoder, decoder=None):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(encoder, decoder))


def _net_from(blocks: dict, prefix: str, activations) -> DenseNet:
    layers = []
    i = 0
    while f"{prefix}{i}.W" in blocks:
        act = activations[i] if i < len(activations) else activations[-1]
        scale = 1.0
        if isinstance(act, tuple):
            act, scale = act
        layers.append(Dense(blocks[f"{prefix}{i}.W"], blocks[f"{prefix}{i}.b"], act, scale))
        i += 1
    if not layers:
        raise CheckpointError(f"no layers under {prefix!r}")
    return DenseNet(layers)


def load_checkpoint(path):
    """Return ``(encoder, decoder_or_None)``."""
    with open(path, "rb") as fh:
        kind, blocks = _unpack_blocks(fh.read())
    enc_b = {k[4:]: v for k, v in blocks if k.startswith("enc.")}
    dec_b = {k[4:]: v for k, v in blocks if k.startswith("dec.")}
    try:
        if kind == "gaussian":
            enc = GaussianEncoder(_net_from(enc_b, "trunk.", ["relu"]), _net_from(enc_b, "mu.", ["linear"]), _net_from(enc_b, "logvar.", ["linear"]))
        elif kind == "lognormal":
            from .encoders import ALPHA_MAX

            enc = LogNormalEncoder(
                _net_from(enc_b, "f.", ["softplus"]),
                _net_from(enc_b, "alpha.", [("sigmoid-scaled", ALPHA_MAX)]),
                enc_b["prior.mu"],
                enc_b["prior.logsigma"],
            )
        elif kind == "rbm":
            enc = RbmEncoder(enc_b["W"], enc_b["b"], enc_b["c"])
        else:
            raise CheckpointError(f"{path}: not a checkpoint (kind {kind})")
    except KeyError as exc:
        raise CheckpointError(f"missing parameter block {exc}") from exc
    dec = SoftmaxDecoder(dec_b["W"], dec_b["b"]) if dec_b else None
    return enc, dec


# ---------------------------------------------------------------------------
# dataset cache
# ---------------------------------------------------------------------------


def save_dataset_cache(path, ds: Dataset):
    prov = np.frombuffer(ds.provenance.encode("utf-8"), dtype=np.uint8).astype(np.int64)
    blocks = [("X", ds.X), ("y", ds.y), ("n_classes", np.array([ds.n_classes], dtype=np.int64)), ("provenance", prov)]
    with open(path, "wb") as fh:
        fh.write(_pack_blocks("dataset", blocks))


def load_dataset_cache(path) -> Dataset:
    with open(os.fspath(path), "rb") as fh:
        kind, blocks = _unpack_blocks(fh.read())
    if kind != "dataset":
        raise CheckpointError(f"{path}: IBND file holds a {kind} checkpoint, not a dataset")
    b = dict(blocks)
    prov = bytes(b["provenance"].astype(np.uint8)).decode("utf-8")
    return Dataset(b["X"], b["y"], int(b["n_classes"][0]), prov)
