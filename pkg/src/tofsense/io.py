"""File formats: key = value configs, run manifests and atomic JSON/CSV writers."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ParameterError
from .fockstate import DensityMatrix, WignerGrid
from .phasespace import ProtocolConfig
from .synthlab import Shots, Sinogram

__all__ = [
    "ConfigError", "InputFormatError", "RunSettings", "load_config", "parse_config",
    "RunManifest", "MANIFEST_NAME", "MANIFEST_SCHEMA", "atomic_write", "write_json",
    "read_json", "write_csv", "read_csv", "save_shots", "load_shots", "save_sinogram",
    "load_sinogram", "save_density", "load_density", "save_wigner", "load_wigner",
]

MANIFEST_NAME = "manifest.json"
MANIFEST_SCHEMA = 1


class ConfigError(ValueError):
    """A configuration file or command-line value is invalid."""


class InputFormatError(ValueError):
    """An input file exists but cannot be parsed."""


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunSettings:
    """Simulation and analysis knobs that sit beside the physical parameters."""

    n_phases: int = 300
    shots_per_phase: int = 600
    with_prep: bool = False
    delta_factor: float = 0.2
    profile: str = "thermal"
    f_s: float = 5.0
    duration: float = 3600.0

    def __post_init__(self):
        bad = []
        if self.n_phases < 2:
            bad.append(f"n_phases must be >= 2 (got {self.n_phases})")
        if self.shots_per_phase < 2:
            bad.append(f"shots_per_phase must be >= 2 (got {self.shots_per_phase})")
        if not self.delta_factor > 0:
            bad.append(f"delta_factor must be > 0 (got {self.delta_factor})")
        if self.profile not in ("thermal", "squeezed", "custom"):
            bad.append(f"profile must be thermal, squeezed or custom (got {self.profile!r})")
        if not self.f_s > 0:
            bad.append(f"f_s must be > 0 (got {self.f_s})")
        if not self.duration > 0:
            bad.append(f"duration must be > 0 (got {self.duration})")
        if bad:
            raise ConfigError("; ".join(bad))


_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _convert(key: str, raw: str, kind):
    try:
        if kind is bool:
            return _BOOL[raw.lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError
            return value
        return raw
    except (KeyError, ValueError):
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None


def _field_types(cls):
    hints = {"float": float, "int": int, "bool": bool, "str": str}
    return {f.name: hints[f.type] if isinstance(f.type, str) else f.type for f in dataclasses.fields(cls)}


def parse_config(text: str, source: str = "<config>") -> tuple[ProtocolConfig, RunSettings]:
    """Parse ``key = value`` lines (``#`` comments, SI units) into configs."""
    phys_types = _field_types(ProtocolConfig)
    run_types = _field_types(RunSettings)
    phys, run = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in phys_types:
            phys[key] = _convert(key, raw, phys_types[key])
        elif key in run_types:
            run[key] = _convert(key, raw, run_types[key])
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    try:
        cfg = ProtocolConfig(**phys)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, RunSettings(**run)


def load_config(path) -> tuple[ProtocolConfig, RunSettings]:
    if path is None:
        return ProtocolConfig(), RunSettings()
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def config_dict(cfg: ProtocolConfig, run: RunSettings | None = None) -> dict:
    d = dataclasses.asdict(cfg)
    if run is not None:
        d.update(dataclasses.asdict(run))
    return d


# --------------------------------------------------------------------------
# manifest and atomic writes


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    seed: int | None
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    parameters: dict = field(default_factory=dict)
    version: str = __version__
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    schema: int = MANIFEST_SCHEMA

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        write_json(path, self.to_dict())
        return path


def atomic_write(path, data: str | bytes) -> Path:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def write_json(path, obj) -> Path:
    return atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    """Load JSON, turning syntax errors into InputFormatError with the byte offset."""
    raw = Path(path).read_bytes()
    text = raw.decode("utf-8", errors="replace")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise InputFormatError(f"{path}: invalid JSON at byte offset {offset} "
                               f"(line {exc.lineno}, column {exc.colno}): {exc.msg}") from None


def write_csv(path, header, rows, manifest: str | None = MANIFEST_NAME) -> Path:
    buf = io.StringIO()
    if manifest:
        buf.write(f"# manifest: {manifest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return atomic_write(path, buf.getvalue())


def read_csv(path, columns) -> dict:
    """Read numeric columns by name from a CSV that may start with ``#`` comment lines."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise InputFormatError(f"{path}: empty CSV") from None
    missing = [c for c in columns if c not in header]
    if missing:
        raise InputFormatError(f"{path}: missing columns {missing}; found {header}")
    idx = [header.index(c) for c in columns]
    data = {c: [] for c in columns}
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        try:
            for c, i in zip(columns, idx):
                data[c].append(float(row[i]))
        except (ValueError, IndexError):
            raise InputFormatError(f"{path}: bad value on data line {lineno}") from None
    return {c: np.asarray(v) for c, v in data.items()}


# --------------------------------------------------------------------------
# domain objects


SHOT_COLUMNS = ("t_sp_s", "t_tof_s", "z_meas_m")


def save_shots(path, shots: Shots) -> Path:
    return write_csv(path, SHOT_COLUMNS, zip(shots.t_sp.tolist(), shots.t_tof.tolist(), shots.z_meas.tolist()))


def load_shots(path, seed: int | None = None) -> Shots:
    d = read_csv(path, SHOT_COLUMNS)
    return Shots(d["t_sp_s"], d["t_tof_s"], d["z_meas_m"], seed)


def save_sinogram(path, sino: Sinogram) -> Path:
    obj = sino.to_dict()
    obj["manifest"] = MANIFEST_NAME
    obj["format"] = "tofsense.sinogram"
    return write_json(path, obj)


def load_sinogram(path) -> Sinogram:
    obj = read_json(path)
    try:
        return Sinogram.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"{path}: not a sinogram ({exc})") from None


def save_density(path, rho: DensityMatrix, extra: dict | None = None) -> Path:
    """JSON object {dim, re, im} with row-major real and imaginary parts."""
    obj = {"format": "tofsense.density", **rho.to_dict(), "manifest": MANIFEST_NAME}
    obj.update(extra or {})
    return write_json(path, obj)


def load_density(path) -> DensityMatrix:
    obj = read_json(path)
    try:
        return DensityMatrix.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"{path}: not a density matrix ({exc})") from None


def save_wigner(path, grid: WignerGrid) -> Path:
    """Wide CSV: the header row holds the p1 axis, the first column the z1 axis."""
    header = ["z1\\p1"] + [repr(float(p)) for p in grid.p_axis]
    rows = ([float(z)] + row for z, row in zip(grid.z_axis.tolist(), grid.values.tolist()))
    return write_csv(path, header, rows)


def load_wigner(path) -> WignerGrid:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    try:
        table = [[float(x) for x in row[1:]] for row in csv.reader(lines[1:]) if row]
        z_axis = [float(row[0]) for row in csv.reader(lines[1:]) if row]
        p_axis = [float(x) for x in next(csv.reader(lines[:1]))[1:]]
    except (ValueError, StopIteration):
        raise InputFormatError(f"{path}: not a Wigner grid") from None
    return WignerGrid(np.asarray(z_axis), np.asarray(p_axis), np.asarray(table))
