"""Synthesis of time-tagged photon detection streams.

Atoms enter the probe beam as a homogeneous Poisson process; each transit
emits photons as an inhomogeneous Poisson process whose rate follows the
deterministic chirp from :mod:`atomtrace.physics`, thinned by the overall
detection efficiency.  Uniform background counts, an optional per-atom
saturation-intensity draw (randomly populated magnetic sublevels) and an
optional exponential depumping cutoff complete the model.

Streams are exactly reproducible: every random quantity is drawn from a
substream keyed on (seed, role, atom index), so adding or removing atoms
never perturbs the draws of the others.  Event timestamps are quantized to
integer nanoseconds at creation, which makes file round trips and equality
checks exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .physics import (
    AtomKinematics,
    ProbeBeamConfig,
    TransitionParams,
    TransitRecord,
    _chirp_tables,
    depump_branching,
    depump_rate,
    rb85_d2,
    DEFAULT_TIME_STEP,
)

__all__ = [
    "NOISE",
    "IsatFixed",
    "IsatChoices",
    "IsatUniform",
    "SimulationConfig",
    "PhotonEvent",
    "TruthRecord",
    "EventStream",
    "sample_isat",
    "sample_atom_arrivals",
    "sample_noise",
    "emit_photons_for_atom",
    "simulate_stream",
]

log = logging.getLogger("atomtrace.events")

#: Label used for background events in the ground-truth record.
NOISE = -1

# Substream roles (first element of the spawn key).
_ROLE_ARRIVALS = 0
_ROLE_NOISE = 1
_ROLE_ATOM = 2


@dataclass(frozen=True)
class IsatFixed:
    """Every atom sees the same saturation intensity (W/m^2)."""

    value: float

    def sample(self, rng, n=1):
        if not self.value > 0:
            raise ValueError("i_sat must be positive")
        return np.full(n, self.value)


@dataclass(frozen=True)
class IsatChoices:
    """Saturation intensity drawn uniformly from a discrete set."""

    values: tuple[float, ...]

    def sample(self, rng, n=1):
        values = np.asarray(self.values, dtype=float)
        if values.size == 0 or np.any(values <= 0):
            raise ValueError("choices must be positive and nonempty")
        return values[rng.integers(0, values.size, size=n)]


@dataclass(frozen=True)
class IsatUniform:
    """Saturation intensity drawn uniformly from [low, high] (W/m^2)."""

    low: float
    high: float

    def sample(self, rng, n=1):
        if not 0 < self.low <= self.high:
            raise ValueError("require 0 < low <= high")
        return rng.uniform(self.low, self.high, size=n)


IsatModel = IsatFixed | IsatChoices | IsatUniform


def sample_isat(model: IsatModel, rng) -> float:
    """Draw one per-atom saturation intensity from the given model."""
    return float(model.sample(rng, 1)[0])


@dataclass(frozen=True)
class SimulationConfig:
    """Full description of one simulated acquisition."""

    duration: float  # s
    atom_rate: float  # atoms/s entering the beam
    transition: TransitionParams
    beam: ProbeBeamConfig
    kinematics: AtomKinematics
    detection_efficiency: float
    noise_rate: float  # background counts/s
    seed: int
    isat_model: IsatModel | None = None  # None -> fixed at transition.i_sat
    depump_enabled: bool = False
    dt: float = DEFAULT_TIME_STEP

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.atom_rate < 0 or self.noise_rate < 0:
            raise ValueError("rates must be nonnegative")
        if not 0.0 <= self.detection_efficiency <= 1.0:
            raise ValueError("detection_efficiency must lie in [0, 1]")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def interaction_time(self) -> float:
        return self.beam.height_dz / self.kinematics.v_perp

    def effective_isat_model(self) -> IsatModel:
        return self.isat_model or IsatFixed(self.transition.i_sat)


@dataclass(frozen=True)
class PhotonEvent:
    """One detected photon; atom_id is None for background counts."""

    timestamp: float
    atom_id: int | None


@dataclass
class TruthRecord:
    """Ground truth of a simulated stream (unavailable for real data)."""

    arrival_times: np.ndarray
    isat_values: np.ndarray
    expected_photons: np.ndarray  # deterministic full-transit yield
    emitted_counts: np.ndarray
    detected_counts: np.ndarray
    depumped_at: np.ndarray  # nan where the atom survived

    def __eq__(self, other):
        if not isinstance(other, TruthRecord):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f), equal_nan=True)
            for f in (
                "arrival_times", "isat_values", "expected_photons",
                "emitted_counts", "detected_counts", "depumped_at",
            )
        )


@dataclass
class EventStream:
    """Time-sorted detection events with optional ground truth."""

    times: np.ndarray  # seconds, on the ns grid, nondecreasing
    atom_ids: np.ndarray  # int64, NOISE for background
    duration: float
    config: SimulationConfig | None = None
    truth: TruthRecord | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.atom_ids = np.asarray(self.atom_ids, dtype=np.int64)
        if self.times.shape != self.atom_ids.shape:
            raise ValueError("times and atom_ids must have equal length")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("event times must be nondecreasing")

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.atom_ids, other.atom_ids)
            and self.duration == other.duration
            and self.config == other.config
            and self.truth == other.truth
        )

    def __len__(self):
        return self.times.size

    @property
    def times_ns(self) -> np.ndarray:
        return np.round(self.times * 1e9).astype(np.int64)

    @property
    def total_rate(self) -> float:
        return self.times.size / self.duration

    def events(self):
        """Iterate events as PhotonEvent records."""
        for t, a in zip(self.times, self.atom_ids):
            yield PhotonEvent(float(t), None if a == NOISE else int(a))

    @classmethod
    def from_times(cls, times, duration, atom_ids=None) -> "EventStream":
        """Build a bare stream (noise-labelled unless ids are given)."""
        times = _quantize(np.asarray(times, dtype=float))
        order = np.argsort(times, kind="stable")
        times = times[order]
        if atom_ids is None:
            ids = np.full(times.size, NOISE, dtype=np.int64)
        else:
            ids = np.asarray(atom_ids, dtype=np.int64)[order]
        return cls(times=times, atom_ids=ids, duration=float(duration))


def _quantize(times):
    # Snap to the integer-nanosecond grid so equality and file round trips
    # are exact.
    return np.round(np.asarray(times, dtype=float) * 1e9) / 1e9


def _substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator keyed on (seed, *key).

    Spawn keys make the substreams independent of how many of them exist,
    so per-atom draws never depend on the total atom count.
    """
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key)))
    )


def sample_atom_arrivals(atom_rate: float, duration: float, rng) -> np.ndarray:
    """Homogeneous Poisson arrival times on [0, duration], sorted."""
    if atom_rate < 0:
        raise ValueError("atom_rate must be nonnegative")
    if atom_rate == 0:
        return np.empty(0)
    n = rng.poisson(atom_rate * duration)
    return np.sort(rng.uniform(0.0, duration, size=n))


def sample_noise(noise_rate: float, duration: float, rng) -> np.ndarray:
    """Homogeneous Poisson background counts on [0, duration], sorted."""
    if noise_rate < 0:
        raise ValueError("noise_rate must be nonnegative")
    if noise_rate == 0:
        return np.empty(0)
    n = rng.poisson(noise_rate * duration)
    return np.sort(rng.uniform(0.0, duration, size=n))


def _emit(times, rates, stop_time, efficiency, rng):
    """Sample one transit's photons by thinning.

    Candidate events are drawn homogeneously at the tabulated rate
    maximum and accepted with probability rate(t)/max; accepted events
    are then thinned once more by the detection efficiency.  Returns
    (emitted, detected) times relative to the transit start, sorted.
    """
    stop = min(float(stop_time), float(times[-1]))
    rate_max = float(rates.max(initial=0.0))
    if stop <= 0.0 or rate_max <= 0.0:
        return np.empty(0), np.empty(0)
    n_cand = rng.poisson(rate_max * stop)
    cand = rng.uniform(0.0, stop, size=n_cand)
    accept = rng.random(n_cand) * rate_max < np.interp(cand, times, rates)
    emitted = np.sort(cand[accept])
    detected = emitted[rng.random(emitted.size) < efficiency]
    return emitted, detected


def emit_photons_for_atom(
    transit: TransitRecord, detection_efficiency: float, rng
) -> np.ndarray:
    """Detected photon times for one transit (relative to its start).

    Inhomogeneous Poisson process with the transit's tabulated rate,
    thinned by the detection efficiency; the expected count is
    efficiency * n_phot.  Emission stops at ``depumped_at`` when set.
    """
    if not 0.0 <= detection_efficiency <= 1.0:
        raise ValueError("detection_efficiency must lie in [0, 1]")
    stop = transit.interaction_time
    if transit.depumped_at is not None:
        stop = min(stop, transit.depumped_at)
    _, detected = _emit(
        transit.times, transit.rates, stop, detection_efficiency, rng
    )
    return detected


def _transit_rate_tables(config, isats):
    """Rate tables for each atom, grouped by unique saturation intensity.

    Returns (times, rates_by_atom) where rates_by_atom[i] is a view of the
    rate table for atom i.  Atoms sharing an I_sat share one integration;
    fully heterogeneous draws are integrated in chunks to bound memory.
    """
    beam, kin, p = config.beam, config.kinematics, config.transition
    tau = config.interaction_time
    unique, inverse = np.unique(isats, return_inverse=True)
    n_atoms = isats.size
    rates_by_atom = [None] * n_atoms
    expected = np.empty(n_atoms)
    chunk = 512
    times = None
    for start in range(0, unique.size, chunk):
        sel = unique[start : start + chunk]
        times, _, rates, cum = _chirp_tables(
            p, beam.intensity, beam.detuning, sel, kin.v_par0, tau, config.dt
        )
        for local, global_idx in enumerate(range(start, start + sel.size)):
            members = np.nonzero(inverse == global_idx)[0]
            col_rates = rates[:, local].copy()
            col_n = float(cum[-1, local])
            for i in members:
                rates_by_atom[i] = col_rates
                expected[i] = col_n
    if times is None:  # no atoms at all
        times, _, rates, _ = _chirp_tables(
            p, beam.intensity, beam.detuning, p.i_sat, kin.v_par0, tau, config.dt
        )
    return times, rates_by_atom, expected


def simulate_stream(config: SimulationConfig) -> EventStream:
    """Generate one complete, reproducible detection stream.

    Composition: Poisson atom arrivals, per-atom saturation-intensity
    draw, deterministic transit integration, thinned photon emission
    (optionally cut short by an exponential depump time), plus uniform
    background counts.  Events past the acquisition window are dropped;
    transits may overlap freely.
    """
    tau = config.interaction_time
    if config.atom_rate * tau > 0.2:
        log.warning(
            "atom_rate * interaction_time = %.3f: transits will frequently "
            "overlap and bursts can merge",
            config.atom_rate * tau,
        )

    seed = int(config.seed)
    arrivals = sample_atom_arrivals(
        config.atom_rate, config.duration, _substream(seed, _ROLE_ARRIVALS)
    )
    n_atoms = arrivals.size
    atom_rngs = [_substream(seed, _ROLE_ATOM, i) for i in range(n_atoms)]

    isat_model = config.effective_isat_model()
    isats = np.array([sample_isat(isat_model, rng) for rng in atom_rngs])

    if n_atoms:
        table_times, rates_by_atom, expected = _transit_rate_tables(config, isats)
    else:
        expected = np.empty(0)

    branching = depump_branching(config.transition) if config.depump_enabled else None

    emitted_counts = np.zeros(n_atoms, dtype=np.int64)
    detected_counts = np.zeros(n_atoms, dtype=np.int64)
    depumped_at = np.full(n_atoms, np.nan)
    all_times = []
    all_ids = []
    for i in range(n_atoms):
        rng = atom_rngs[i]
        stop = tau
        if config.depump_enabled:
            p_i = replace(config.transition, i_sat=float(isats[i]))
            rate_i = depump_rate(
                p_i, config.beam.intensity, config.beam.detuning, branching
            )
            t_dep = rng.exponential(1.0 / rate_i) if rate_i > 0 else np.inf
            if t_dep < stop:
                stop = t_dep
                depumped_at[i] = t_dep
        emitted, detected = _emit(
            table_times, rates_by_atom[i], stop, config.detection_efficiency, rng
        )
        emitted_counts[i] = emitted.size
        if detected.size:
            abs_times = arrivals[i] + detected
            keep = abs_times <= config.duration
            abs_times = abs_times[keep]
            detected_counts[i] = abs_times.size
            all_times.append(abs_times)
            all_ids.append(np.full(abs_times.size, i, dtype=np.int64))

    noise = sample_noise(
        config.noise_rate, config.duration, _substream(seed, _ROLE_NOISE)
    )
    all_times.append(noise)
    all_ids.append(np.full(noise.size, NOISE, dtype=np.int64))

    times = _quantize(np.concatenate(all_times) if all_times else np.empty(0))
    ids = np.concatenate(all_ids) if all_ids else np.empty(0, dtype=np.int64)
    order = np.argsort(times, kind="stable")

    truth = TruthRecord(
        arrival_times=arrivals,
        isat_values=isats,
        expected_photons=expected,
        emitted_counts=emitted_counts,
        detected_counts=detected_counts,
        depumped_at=depumped_at,
    )
    return EventStream(
        times=times[order],
        atom_ids=ids[order],
        duration=config.duration,
        config=config,
        truth=truth,
    )
