"""Binary cube/checkpoint files, SRF CSV and JSON run configs.

All binary fields are little-endian. Writes go to a temporary file in the
target directory and are renamed into place.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import HsrnetConfig, ParamStore
from .spectral import SpectralCube, Srf

log = logging.getLogger(__name__)

CUBE_MAGIC = b"HSRC"
CKPT_MAGIC = b"HSRK"
VERSION = 1
_F32 = np.dtype("<f4")


class FormatError(ValueError):
    """A file does not follow its documented layout; ``field`` names the culprit."""

    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


class ConfigError(ValueError):
    pass


def atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- cube ------------------------------------------------------------------------

def encode_cube(cube: SpectralCube) -> bytes:
    c, h, w = cube.data.shape
    parts = [CUBE_MAGIC, struct.pack("<IIIIB", VERSION, w, h, c, 0 if cube.wavelengths_nm is None else 1)]
    if cube.wavelengths_nm is not None:
        parts.append(np.asarray(cube.wavelengths_nm, dtype=_F32).tobytes())
    parts.append(np.ascontiguousarray(cube.data, dtype=_F32).tobytes())
    return b"".join(parts)


def decode_cube(buf: bytes) -> SpectralCube:
    if len(buf) < 4 or buf[:4] != CUBE_MAGIC:
        raise FormatError("magic", f"expected {CUBE_MAGIC!r}, found {bytes(buf[:4])!r}")
    if len(buf) < 21:
        raise FormatError("header", f"truncated header ({len(buf)} bytes)")
    version, w, h, c, has_wl = struct.unpack_from("<IIIIB", buf, 4)
    if version != VERSION:
        raise FormatError("version", f"unsupported version {version}")
    if min(w, h, c) == 0:
        raise FormatError("dimensions", f"zero extent in {w}x{h}x{c}")
    if has_wl not in (0, 1):
        raise FormatError("has_wavelengths", f"flag must be 0 or 1, got {has_wl}")
    off = 21
    wl = None
    if has_wl:
        end = off + 4 * c
        if len(buf) < end:
            raise FormatError("wavelengths", "truncated wavelength table")
        wl = np.frombuffer(buf, dtype=_F32, count=c, offset=off).astype(np.float32)
        if np.any(~np.isfinite(wl)) or np.any(np.diff(wl) <= 0):
            raise FormatError("wavelengths", "must be finite and strictly ascending")
        off = end
    expected = 4 * w * h * c
    have = len(buf) - off
    if have < expected:
        raise FormatError("payload", f"truncated: {have} of {expected} bytes")
    if have > expected:
        raise FormatError("payload", f"{have - expected} trailing bytes")
    data = np.frombuffer(buf, dtype=_F32, count=w * h * c, offset=off).astype(np.float32).reshape(c, h, w)
    if not np.all(np.isfinite(data)):
        raise FormatError("payload", "non-finite values")
    return SpectralCube(data, wl)


def write_cube(path, cube: SpectralCube) -> None:
    atomic_write(path, encode_cube(cube))


def read_cube(path) -> SpectralCube:
    return decode_cube(Path(path).read_bytes())


# --- SRF CSV ----------------------------------------------------------------------

def parse_srf(text: str) -> Srf:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [(i + 1, r) for i, r in enumerate(rows) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise FormatError("header", "empty SRF file")
    line, header = rows[0]
    header = [h.strip() for h in header]
    if header[0] != "wavelength_nm" or len(header) < 2:
        raise FormatError("header", f"line {line}: expected 'wavelength_nm,band_1,...'")
    ncol = len(header)
    wl, resp = [], []
    for line, r in rows[1:]:
        if len(r) != ncol:
            raise FormatError("row", f"line {line}: {len(r)} fields, header has {ncol}")
        try:
            vals = [float(v) for v in r]
        except ValueError:
            raise FormatError("row", f"line {line}: non-numeric field") from None
        if not all(math.isfinite(v) for v in vals):
            raise FormatError("row", f"line {line}: non-finite value")
        if wl and vals[0] <= wl[-1]:
            raise FormatError("wavelength_nm", f"line {line}: wavelengths must be strictly ascending")
        if any(v < 0 for v in vals[1:]):
            raise FormatError("response", f"line {line}: negative response")
        wl.append(vals[0])
        resp.append(vals[1:])
    if not wl:
        raise FormatError("row", "no samples")
    resp = np.asarray(resp)
    dead = [header[1 + b] for b in range(resp.shape[1]) if not np.any(resp[:, b] > 0)]
    if dead:
        raise FormatError("response", f"band(s) {dead} have no positive sample")
    return Srf(np.asarray(wl), resp, header[1:])


def read_srf(path) -> Srf:
    return parse_srf(Path(path).read_text(encoding="utf-8"))


def encode_srf(srf: Srf) -> bytes:
    names = srf.band_names or [f"band_{i + 1}" for i in range(srf.num_bands)]
    lines = [",".join(["wavelength_nm", *names])]
    for w, row in zip(srf.sample_wavelengths_nm, srf.responses):
        lines.append(",".join(repr(float(v)) for v in (w, *row)))
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_srf(path, srf: Srf) -> None:
    atomic_write(path, encode_srf(srf))


# --- checkpoint ---------------------------------------------------------------------

def encode_checkpoint(cfg: HsrnetConfig, params: ParamStore) -> bytes:
    blob = json.dumps(cfg.to_json(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", t.data.ndim))
        parts.append(struct.pack(f"<{t.data.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype=_F32).tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> tuple[HsrnetConfig, ParamStore]:
    if buf[:4] != CKPT_MAGIC:
        raise FormatError("magic", f"expected {CKPT_MAGIC!r}, found {bytes(buf[:4])!r}")
    pos = 4

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(what, "truncated")
        out = buf[pos:pos + n]
        pos += n
        return out

    version, clen = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError("version", f"unsupported version {version}")
    try:
        cfg = HsrnetConfig.from_json(json.loads(take(clen, "config").decode("utf-8")))
    except FormatError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError("config", str(exc)) from None
    (count,) = struct.unpack("<I", take(4, "tensor_count"))
    store = ParamStore()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name_length"))
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("name", "invalid UTF-8") from None
        (ndim,) = struct.unpack("<B", take(1, "ndim"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims"))
        n = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(take(4 * n, f"payload[{name}]"), dtype=_F32).astype(np.float32).reshape(dims)
        if not np.all(np.isfinite(data)):
            raise FormatError(f"payload[{name}]", "non-finite values")
        try:
            store.add(name, data)
        except KeyError as exc:
            raise FormatError("name", str(exc)) from None
    if pos != len(buf):
        raise FormatError("payload", f"{len(buf) - pos} trailing bytes")
    from .network import layer_shapes

    expected = layer_shapes(cfg)
    if list(expected) != store.names() or any(tuple(store[n].shape) != s for n, s in expected.items()):
        raise FormatError("tensors", "parameter names/shapes do not match the embedded config")
    return cfg, store


def write_checkpoint(path, cfg: HsrnetConfig, params: ParamStore) -> None:
    atomic_write(path, encode_checkpoint(cfg, params))


def read_checkpoint(path) -> tuple[HsrnetConfig, ParamStore]:
    return decode_checkpoint(Path(path).read_bytes())


# --- run config --------------------------------------------------------------------------

_KNOWN = {
    "hsrnet": {"stages", "irn_features", "ssn_features_wide", "ssn_features_narrow", "cam_reduction", "seed"},
    "train": {"lr", "batch_size", "max_steps", "patch_size", "seed", "eval_every", "augment"},
    "loss": {"alpha"},
    "data": {"hsi", "msi", "split"},
    "srf": {"path", "tau"},
    "ablation": {"cam", "srf_grouping", "fast_loss"},
}
_REQUIRED = [("data", "hsi"), ("srf", "path")]


def _switch(value, key):
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("on", "off"):
        return value.lower() == "on"
    raise ConfigError(f"ablation.{key} must be 'on' or 'off'")


@dataclass
class RunConfig:
    hsi_paths: list[Path]
    srf_path: Path
    msi_paths: list[Path] | None = None
    split: float = 0.2
    tau: float = 0.01
    hsrnet: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    alpha: float = 1e-4
    cam: bool = True
    srf_grouping: bool = True
    fast_loss: bool = True


def parse_run_config(doc: dict, base_dir: Path = Path(".")) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    for section, value in doc.items():
        if section not in _KNOWN:
            log.warning("unknown config section %r ignored", section)
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"section {section!r} must be an object")
        for key in value:
            if key not in _KNOWN[section]:
                log.warning("unknown config key %s.%s ignored", section, key)
    for section, key in _REQUIRED:
        if key not in doc.get(section, {}):
            raise ConfigError(f"missing required key {section}.{key}")

    def paths(v, key):
        if isinstance(v, str):
            v = [v]
        if not isinstance(v, list) or not v or not all(isinstance(p, str) for p in v):
            raise ConfigError(f"{key} must be a path or a non-empty list of paths")
        return [(base_dir / p) for p in v]

    data = doc["data"]
    ab = doc.get("ablation", {})
    rc = RunConfig(
        hsi_paths=paths(data["hsi"], "data.hsi"),
        srf_path=base_dir / doc["srf"]["path"],
        msi_paths=paths(data["msi"], "data.msi") if "msi" in data else None,
        split=float(data.get("split", 0.2)),
        tau=float(doc["srf"].get("tau", 0.01)),
        hsrnet={k: v for k, v in doc.get("hsrnet", {}).items() if k in _KNOWN["hsrnet"]},
        train={k: v for k, v in doc.get("train", {}).items() if k in _KNOWN["train"]},
        alpha=float(doc.get("loss", {}).get("alpha", 1e-4)),
        cam=_switch(ab.get("cam", "on"), "cam"),
        srf_grouping=_switch(ab.get("srf_grouping", "on"), "srf_grouping"),
        fast_loss=_switch(ab.get("fast_loss", "on"), "fast_loss"),
    )
    if rc.msi_paths is not None and len(rc.msi_paths) != len(rc.hsi_paths):
        raise ConfigError("data.msi and data.hsi must list the same number of files")
    if not 0 <= rc.split < 1:
        raise ConfigError("data.split must lie in [0, 1)")
    return rc


def read_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError("config", f"invalid JSON: {exc}") from None
    return parse_run_config(doc, path.parent)


def write_history_csv(path, history) -> None:
    lines = ["step,train_loss,eval_cc,eval_psnr,eval_ssim,eval_sam"]
    for row in history:
        ev = row.eval
        cells = [str(row.step), repr(float(row.train_loss))]
        cells += [repr(float(getattr(ev, a))) if ev else "" for a in ("cc", "psnr_db", "ssim", "sam_degrees")]
        lines.append(",".join(cells))
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_trace_csv(path, fidelity, update_norm) -> None:
    lines = ["iter,fidelity,update_norm"]
    lines += [f"{i + 1},{f!r},{u!r}" for i, (f, u) in enumerate(zip(fidelity, update_norm))]
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))
