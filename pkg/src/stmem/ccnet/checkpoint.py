"""STMC checkpoint files.

Layout (little endian):
    b"STMC", version u16, layer count u32, dims (layers + 1) x u32,
    hidden u32, normalize u8, scalar_kernel u8, k u32,
    per layer: every parameter in sorted-name order, then running mean and
    running var when the layer has BN, all f64 with shapes implied by the dims,
    has_stats u8 [+ mean, var as D x f64 each],
    has_optimizer u8 [+ step u64, lr/beta1/beta2/eps f64, m and v per parameter].
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..formats import FormatError
from ..memory import FeatureStats
from .network import CCNetwork, NetConfig
from .optim import Adam

MAGIC = b"STMC"
VERSION = 1


class ArchitectureMismatchError(ValueError):
    pass


def _put(fh, a):
    fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _get(fh, shape):
    n = int(np.prod(shape))
    buf = fh.read(8 * n)
    if len(buf) != 8 * n:
        raise FormatError("truncated checkpoint")
    return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()


def save_checkpoint(path, net: CCNetwork, optimizer: Adam | None = None) -> None:
    cfg = net.config
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, net.num_layers))
        fh.write(struct.pack(f"<{len(cfg.dims)}I", *cfg.dims))
        fh.write(struct.pack("<IBBI", cfg.hidden, int(cfg.normalize), int(cfg.scalar_kernel), cfg.k))
        for p, b in zip(net.layers, net.buffers):
            for k in sorted(p):
                _put(fh, p[k])
            if b:
                _put(fh, b["running_mean"])
                _put(fh, b["running_var"])
        fh.write(struct.pack("<B", net.stats is not None))
        if net.stats is not None:
            _put(fh, net.stats.mean)
            _put(fh, net.stats.var)
        fh.write(struct.pack("<B", optimizer is not None))
        if optimizer is not None:
            fh.write(struct.pack("<Q4d", optimizer.t, optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps))
            for name, a in net.param_items():
                _put(fh, optimizer.m.get(name, np.zeros_like(a)))
                _put(fh, optimizer.v.get(name, np.zeros_like(a)))


def load_checkpoint(path, expect: NetConfig | None = None):
    """(network, optimizer or None).  Raises ArchitectureMismatchError if `expect` differs."""
    path = Path(path)
    try:
        return _load(path, expect)
    except struct.error:
        raise FormatError(f"{path}: truncated checkpoint") from None


def _load(path: Path, expect: NetConfig | None):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise FormatError(f"{path}: not an STMC checkpoint")
        version, nl = struct.unpack("<HI", fh.read(6))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        dims = struct.unpack(f"<{nl + 1}I", fh.read(4 * (nl + 1)))
        hidden, norm, scalar, k = struct.unpack("<IBBI", fh.read(10))
        cfg = NetConfig(dims=dims, hidden=hidden, normalize=bool(norm), scalar_kernel=bool(scalar), k=k)
        if expect is not None and (tuple(expect.dims), expect.hidden, expect.scalar_kernel) != (cfg.dims, cfg.hidden, cfg.scalar_kernel):
            raise ArchitectureMismatchError(f"checkpoint architecture {cfg.dims}/{cfg.hidden} does not match configured {expect.dims}/{expect.hidden}")
        net = CCNetwork.create(cfg)
        for p, b in zip(net.layers, net.buffers):
            for key in sorted(p):
                p[key] = _get(fh, p[key].shape)
            if b:
                b["running_mean"] = _get(fh, b["running_mean"].shape)
                b["running_var"] = _get(fh, b["running_var"].shape)
        (has_stats,) = struct.unpack("<B", fh.read(1))
        if has_stats:
            d = dims[0]
            net.stats = FeatureStats(_get(fh, (d,)), _get(fh, (d,)))
        (has_opt,) = struct.unpack("<B", fh.read(1))
        opt = None
        if has_opt:
            t, lr, b1, b2, eps = struct.unpack("<Q4d", fh.read(40))
            opt = Adam(lr, b1, b2, eps)
            opt.t = t
            for name, a in net.param_items():
                opt.m[name] = _get(fh, a.shape)
                opt.v[name] = _get(fh, a.shape)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes")
    return net, opt
