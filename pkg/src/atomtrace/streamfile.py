"""Versioned binary container for time-tagged photon streams.

Layout (little endian):

    bytes 0-3    magic  b"ATRC"
    bytes 4-7    uint32 format version (currently 1)
    bytes 8-11   uint32 header length L
    bytes 12-    L bytes of UTF-8 JSON header
    body         n_events * int64  timestamps, integer nanoseconds
                 n_events * int32  origin labels (-1 = background,
                                   otherwise atom index)

The JSON header carries the duration, the declared event count, a full
echo of the simulation configuration (when the stream came from the
simulator) and the ground-truth record (when present), so a stream file
is self-describing and the exact run can be reproduced from it.

Timestamps are stored as integer nanoseconds; together with the
nanosecond quantization done at stream creation this makes write/read a
lossless round trip.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .events import (
    EventStream,
    IsatChoices,
    IsatFixed,
    IsatUniform,
    SimulationConfig,
    TruthRecord,
)
from .physics import AtomKinematics, ProbeBeamConfig, TransitionParams

__all__ = [
    "FORMAT_VERSION",
    "StreamFileError",
    "StreamVersionError",
    "StreamOrderError",
    "StreamTruncatedError",
    "write_stream",
    "read_stream",
    "config_to_dict",
    "config_from_dict",
]

MAGIC = b"ATRC"
FORMAT_VERSION = 1


class StreamFileError(ValueError):
    """Base class for malformed stream files."""


class StreamVersionError(StreamFileError):
    """Unrecognized magic number or format version."""


class StreamOrderError(StreamFileError):
    """Timestamps in the body are not sorted nondecreasing."""


class StreamTruncatedError(StreamFileError):
    """Body shorter than the declared event count."""


def _isat_model_to_dict(model):
    if model is None:
        return None
    if isinstance(model, IsatFixed):
        return {"mode": "fixed", "value": model.value}
    if isinstance(model, IsatChoices):
        return {"mode": "choices", "values": list(model.values)}
    if isinstance(model, IsatUniform):
        return {"mode": "uniform", "low": model.low, "high": model.high}
    raise TypeError(f"unknown i_sat model {model!r}")


def _isat_model_from_dict(d):
    if d is None:
        return None
    mode = d["mode"]
    if mode == "fixed":
        return IsatFixed(float(d["value"]))
    if mode == "choices":
        return IsatChoices(tuple(float(v) for v in d["values"]))
    if mode == "uniform":
        return IsatUniform(float(d["low"]), float(d["high"]))
    raise StreamFileError(f"unknown i_sat model mode {mode!r}")


def config_to_dict(config: SimulationConfig | None) -> dict | None:
    """JSON-ready echo of a simulation configuration (SI units)."""
    if config is None:
        return None
    p, b, k = config.transition, config.beam, config.kinematics
    return {
        "duration": config.duration,
        "atom_rate": config.atom_rate,
        "noise_rate": config.noise_rate,
        "detection_efficiency": config.detection_efficiency,
        "seed": int(config.seed),
        "depump_enabled": bool(config.depump_enabled),
        "dt": config.dt,
        "isat_model": _isat_model_to_dict(config.isat_model),
        "transition": {
            "gamma": p.gamma,
            "wavelength": p.wavelength,
            "i_sat": p.i_sat,
            "atom_mass": p.atom_mass,
            "depump_detuning": p.depump_detuning,
            "hyperfine_splitting": p.hyperfine_splitting,
        },
        "beam": {
            "intensity": b.intensity,
            "detuning": b.detuning,
            "height_dz": b.height_dz,
            "width": b.width,
        },
        "kinematics": {"v_perp": k.v_perp, "v_par0": k.v_par0},
    }


def config_from_dict(d: dict | None) -> SimulationConfig | None:
    if d is None:
        return None
    return SimulationConfig(
        duration=float(d["duration"]),
        atom_rate=float(d["atom_rate"]),
        transition=TransitionParams(**{k: float(v) for k, v in d["transition"].items()}),
        beam=ProbeBeamConfig(**{k: float(v) for k, v in d["beam"].items()}),
        kinematics=AtomKinematics(**{k: float(v) for k, v in d["kinematics"].items()}),
        detection_efficiency=float(d["detection_efficiency"]),
        noise_rate=float(d["noise_rate"]),
        seed=int(d["seed"]),
        isat_model=_isat_model_from_dict(d.get("isat_model")),
        depump_enabled=bool(d.get("depump_enabled", False)),
        dt=float(d.get("dt", 1e-8)),
    )


def _truth_to_dict(truth: TruthRecord | None) -> dict | None:
    if truth is None:
        return None
    dep = [None if np.isnan(x) else float(x) for x in truth.depumped_at]
    return {
        "arrival_times": truth.arrival_times.tolist(),
        "isat_values": truth.isat_values.tolist(),
        "expected_photons": truth.expected_photons.tolist(),
        "emitted_counts": truth.emitted_counts.tolist(),
        "detected_counts": truth.detected_counts.tolist(),
        "depumped_at": dep,
    }


def _truth_from_dict(d: dict | None) -> TruthRecord | None:
    if d is None:
        return None
    dep = np.array(
        [np.nan if x is None else float(x) for x in d["depumped_at"]], dtype=float
    )
    return TruthRecord(
        arrival_times=np.asarray(d["arrival_times"], dtype=float),
        isat_values=np.asarray(d["isat_values"], dtype=float),
        expected_photons=np.asarray(d["expected_photons"], dtype=float),
        emitted_counts=np.asarray(d["emitted_counts"], dtype=np.int64),
        detected_counts=np.asarray(d["detected_counts"], dtype=np.int64),
        depumped_at=dep,
    )


def write_stream(stream: EventStream, path) -> None:
    """Write a stream to disk; read_stream(write_stream(s)) == s."""
    header = {
        "duration_ns": int(round(stream.duration * 1e9)),
        "n_events": int(stream.times.size),
        "config": config_to_dict(stream.config),
        "truth": _truth_to_dict(stream.truth),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    t_ns = stream.times_ns
    ids = stream.atom_ids.astype("<i4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(t_ns.astype("<i8").tobytes())
        fh.write(ids.tobytes())


def read_stream(path) -> EventStream:
    """Read a stream file, validating format, ordering and completeness."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise StreamVersionError(f"{path}: not a stream file (bad magic)")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise StreamVersionError(
            f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})"
        )
    if len(raw) < 12 + header_len:
        raise StreamTruncatedError(f"{path}: header truncated")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StreamFileError(f"{path}: unreadable header: {exc}") from exc
    n = int(header["n_events"])
    body = raw[12 + header_len :]
    expected = n * 8 + n * 4
    if len(body) < expected:
        raise StreamTruncatedError(
            f"{path}: body holds {len(body)} bytes, expected {expected} for "
            f"{n} declared events"
        )
    t_ns = np.frombuffer(body[: n * 8], dtype="<i8")
    ids = np.frombuffer(body[n * 8 : expected], dtype="<i4").astype(np.int64)
    if np.any(np.diff(t_ns) < 0):
        raise StreamOrderError(f"{path}: timestamps are not sorted")
    return EventStream(
        times=t_ns / 1e9,
        atom_ids=ids,
        duration=header["duration_ns"] / 1e9,
        config=config_from_dict(header.get("config")),
        truth=_truth_from_dict(header.get("truth")),
    )
