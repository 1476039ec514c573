from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .sampling import DEFAULT_RHO, EntryDistribution
from .simulation_models import DEFAULT_BINS, DEFAULT_REPS, SimulationConfig, SpikeTarget
from .spectral_models import SpectralMeasure

DEFAULT_OUT_DIR = "output"
WEIGHT_RENORMALIZE_TOL = 0.01

_CONFIG_KEYS = {
    "p",
    "n1",
    "n2",
    "dist",
    "reps",
    "seed",
    "exclusion_ratio",
    "rho",
    "top_spikes",
    "bottom_spikes",
    "spike_growth",
    "workers",
    "bins",
    "out_dir",
    "spikes",
}
_SPIKE_KEYS = {"label", "ranks", "value"}
_LABEL = re.compile(r"[A-Za-z0-9_.-]+")
_SYMBOLIC_RANK = re.compile(r"^p\s*(?:-\s*(\d+))?$")


class ConfigValidationError(Exception):
    """Raised when a config file, measure spec, rank spec or eigenvalue file is malformed."""


@dataclass(frozen=True)
class _Path:
    """Location inside a config document, printed as spikes[2].ranks[0]."""

    parts: tuple[str, ...] = ()

    def child(self, segment: str) -> "_Path":
        return _Path(self.parts + (segment,))

    def at(self, key: str, index: int) -> "_Path":
        return self.child(f"{key}[{index}]")

    def __str__(self) -> str:
        return ".".join(self.parts) or "root"


def load_simulation_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> SimulationConfig:
    """
    Read a YAML simulation config and apply `overrides` on top of it.

    Override keys use the config-file names; None values are ignored. With no
    path the config is built from the overrides alone.
    """

    raw: Any = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
        if raw is None:
            raw = {}
    if not isinstance(raw, dict):
        raise ConfigValidationError(f"{_Path()}: expected mapping at top level")

    merged = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    return build_config(merged)


def build_config(data: Mapping[str, Any], path: _Path = _Path()) -> SimulationConfig:
    """Validate a raw mapping and turn it into a SimulationConfig."""
    if not isinstance(data, Mapping):
        raise ConfigValidationError(f"{path}: expected mapping")
    _reject_unknown_keys(data, _CONFIG_KEYS, path)

    p = _require_int(data, "p", path, minimum=1)
    n1 = _optional_int(data, "n1", path, default=2 * p, minimum=1)
    n2 = _optional_int(data, "n2", path, default=4 * p, minimum=1)

    dist_raw = data.get("dist", EntryDistribution.STANDARD_NORMAL.value)
    try:
        dist = EntryDistribution(dist_raw)
    except ValueError as exc:
        allowed = [d.value for d in EntryDistribution]
        raise ConfigValidationError(f"{path.child('dist')}: expected one of {allowed}, got {dist_raw!r}") from exc

    top = _optional_floats(data, "top_spikes", path)
    bottom = _optional_floats(data, "bottom_spikes", path)
    spikes_raw = data.get("spikes")
    spikes: tuple[SpikeTarget, ...] = ()
    if spikes_raw is not None:
        if not isinstance(spikes_raw, list):
            raise ConfigValidationError(f"{path.child('spikes')}: expected list")
        spikes = tuple(_parse_spike(item, p, path.at("spikes", idx)) for idx, item in enumerate(spikes_raw))

    out_dir = data.get("out_dir", DEFAULT_OUT_DIR)
    if out_dir is not None and not isinstance(out_dir, (str, Path)):
        raise ConfigValidationError(f"{path.child('out_dir')}: expected path string")

    kwargs: dict[str, Any] = {
        "p": p,
        "n1": n1,
        "n2": n2,
        "dist": dist,
        "reps": _optional_int(data, "reps", path, default=DEFAULT_REPS, minimum=1),
        "master_seed": _optional_int(data, "seed", path, default=0, minimum=0),
        "spikes": spikes,
        "exclusion_ratio": _optional_float(data, "exclusion_ratio", path, default=0.2),
        "out_dir": out_dir,
        "spike_growth": _optional_float(data, "spike_growth", path, default=0.0),
        "workers": _optional_int(data, "workers", path, default=1, minimum=1),
        "bins": _optional_int(data, "bins", path, default=DEFAULT_BINS, minimum=1),
    }
    if "rho" in data:
        kwargs["rho"] = _optional_float(data, "rho", path, default=DEFAULT_RHO)
    if top is not None:
        kwargs["top_spikes"] = top
    if bottom is not None:
        kwargs["bottom_spikes"] = bottom

    try:
        return SimulationConfig(**kwargs)
    except ValueError as exc:
        raise ConfigValidationError(f"{path}: {exc}") from exc


def _parse_spike(data: Any, p: int, path: _Path) -> SpikeTarget:
    if not isinstance(data, dict):
        raise ConfigValidationError(f"{path}: expected mapping for spike")
    _reject_unknown_keys(data, _SPIKE_KEYS, path)
    label = _label(data, "label", path)

    ranks_raw = _field(data, "ranks", path)
    if not isinstance(ranks_raw, list):
        ranks_raw = [ranks_raw]
    if not ranks_raw:
        raise ConfigValidationError(f"{path.child('ranks')}: expected at least one rank")
    ranks = tuple(parse_rank(r, p, path.at("ranks", idx)) for idx, r in enumerate(ranks_raw))

    value = None
    if "value" in data and data["value"] is not None:
        value = _as_float(data["value"], path.child("value"))
    return SpikeTarget(label=label, ranks=ranks, value=value)


def parse_rank(value: Any, p: int | None, path: _Path | str = _Path()) -> int:
    """1-based rank from an int, a digit string or the symbolic forms p, p-1, p-2, ..."""
    if isinstance(value, bool):
        raise ConfigValidationError(f"{path}: expected rank, got {value!r}")
    if isinstance(value, int):
        rank = value
    elif isinstance(value, str) and value.strip().isdigit():
        rank = int(value.strip())
    elif isinstance(value, str) and (match := _SYMBOLIC_RANK.match(value.strip())):
        if p is None:
            raise ConfigValidationError(f"{path}: symbolic rank {value!r} needs p")
        rank = p - int(match.group(1) or 0)
    else:
        raise ConfigValidationError(f"{path}: expected rank integer or 'p-k', got {value!r}")
    if rank < 1 or (p is not None and rank > p):
        raise ConfigValidationError(f"{path}: rank {rank} outside [1, {p}]")
    return rank


def parse_measure_spec(spec: str) -> SpectralMeasure:
    """
    Parse `t:w[,t:w...]` into a SpectralMeasure.

    Weights summing to within 1% of 1 are renormalized; anything further off is rejected.
    """

    atoms: list[tuple[float, float]] = []
    for idx, chunk in enumerate(spec.split(",")):
        chunk = chunk.strip()
        if not chunk:
            continue
        location, sep, weight = chunk.partition(":")
        if not sep:
            raise ConfigValidationError(f"atom {idx + 1} ({chunk!r}): expected t:w")
        try:
            atoms.append((float(location), float(weight)))
        except ValueError as exc:
            raise ConfigValidationError(f"atom {idx + 1} ({chunk!r}): expected numbers t:w") from exc
    if not atoms:
        raise ConfigValidationError(f"empty measure spec {spec!r}")

    total = math.fsum(w for _, w in atoms)
    if not math.isfinite(total) or abs(total - 1.0) > WEIGHT_RENORMALIZE_TOL:
        raise ConfigValidationError(f"measure weights sum to {total:g}; expected 1 (within 1%)")
    try:
        return SpectralMeasure.from_atoms((t, w / total) for t, w in atoms)
    except ValueError as exc:
        raise ConfigValidationError(f"invalid measure {spec!r}: {exc}") from exc


def parse_float_list(spec: str) -> tuple[float, ...]:
    """Comma separated reals, e.g. `10,7.5,0.2`."""
    values: list[float] = []
    for idx, chunk in enumerate(spec.split(",")):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            values.append(float(chunk))
        except ValueError as exc:
            raise ConfigValidationError(f"item {idx + 1} ({chunk!r}): expected a number") from exc
    if not values:
        raise ConfigValidationError(f"empty number list {spec!r}")
    return tuple(values)


def parse_rank_groups(specs: list[str], p: int | None = None) -> dict[str, tuple[int, ...]]:
    """Parse `label=r[,r...]` items, e.g. `a1=1 a2=2,3 a4=p`, preserving order."""
    groups: dict[str, tuple[int, ...]] = {}
    for spec in specs:
        label, sep, ranks_raw = spec.partition("=")
        label = label.strip()
        if not sep or not label:
            raise ConfigValidationError(f"rank group {spec!r}: expected label=r[,r...]")
        if label in groups:
            raise ConfigValidationError(f"rank group {spec!r}: duplicate label {label!r}")
        chunks = [r for r in ranks_raw.split(",") if r.strip()]
        if not chunks:
            raise ConfigValidationError(f"rank group {spec!r}: no ranks")
        groups[label] = tuple(parse_rank(r, p, f"--ranks {label}") for r in chunks)
    return groups


def load_eigenvalues(path: str | Path) -> list[float]:
    """
    Read one eigenvalue per line (first CSV column when commas are present).

    Blank lines and `#` comments are skipped, as is a single non-numeric header
    on the first data line. Values must be nonnegative and descending.
    """

    values: list[float] = []
    header_allowed = True
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            field = text.split(",", 1)[0].strip()
            try:
                value = float(field)
            except ValueError as exc:
                if header_allowed:
                    header_allowed = False
                    continue
                raise ConfigValidationError(f"{path}:{lineno}: expected a number, got {field!r}") from exc
            header_allowed = False
            if not math.isfinite(value) or value < 0:
                raise ConfigValidationError(f"{path}:{lineno}: eigenvalue must be finite and nonnegative, got {value!r}")
            if values and value > values[-1]:
                raise ConfigValidationError(
                    f"{path}:{lineno}: {value!r} exceeds the previous eigenvalue {values[-1]!r}; "
                    "sort the file in descending order (largest first)"
                )
            values.append(value)
    if not values:
        raise ConfigValidationError(f"{path}: no eigenvalues found")
    return values


def _reject_unknown_keys(data: Mapping[str, Any], allowed: set[str], path: _Path) -> None:
    unknown = sorted(str(k) for k in data if k not in allowed)
    if unknown:
        raise ConfigValidationError(f"{path}: unexpected fields {unknown}; allowed: {', '.join(sorted(allowed))}")


def _field(data: Mapping[str, Any], key: str, path: _Path) -> Any:
    try:
        return data[key]
    except KeyError:
        raise ConfigValidationError(f"{path}: missing required field '{key}'") from None


def _label(data: Mapping[str, Any], key: str, path: _Path) -> str:
    """Spike labels name output files (histogram_<label>.csv)."""
    value = _field(data, key, path)
    if not isinstance(value, str) or not _LABEL.fullmatch(value):
        raise ConfigValidationError(f"{path.child(key)}: expected a label of letters, digits, '_', '.' or '-', got {value!r}")
    return value


def _require_int(data: Mapping[str, Any], key: str, path: _Path, minimum: int | None = None) -> int:
    return _as_int(_field(data, key, path), path.child(key), minimum)


def _optional_int(data: Mapping[str, Any], key: str, path: _Path, default: int, minimum: int | None = None) -> int:
    if data.get(key) is None:
        return default
    return _as_int(data[key], path.child(key), minimum)


def _as_int(value: Any, path: _Path, minimum: int | None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigValidationError(f"{path}: expected integer")
    if minimum is not None and value < minimum:
        raise ConfigValidationError(f"{path}: expected integer >= {minimum}, got {value}")
    return value


def _optional_float(data: Mapping[str, Any], key: str, path: _Path, default: float) -> float:
    if data.get(key) is None:
        return default
    return _as_float(data[key], path.child(key))


def _as_float(value: Any, path: _Path) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigValidationError(f"{path}: expected number")
    return float(value)


def _optional_floats(data: Mapping[str, Any], key: str, path: _Path) -> tuple[float, ...] | None:
    value = data.get(key)
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return tuple(_as_float(v, path.at(key, idx)) for idx, v in enumerate(value))
    raise ConfigValidationError(f"{path.child(key)}: expected list of numbers")
