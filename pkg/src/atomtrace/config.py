"""Run configuration files.

A run config is a YAML document in laboratory units: ordinary frequencies
in MHz (converted to angular rad/s at this boundary), intensities in
mW/cm^2 (to W/m^2), lengths in mm (to m) and times in us (to s).  It
collects everything needed to simulate a stream and to analyze one, plus
an optional parameter-scan block.

Example::

    transition:
      linewidth_mhz: 6.0
      wavelength_nm: 780.0
      saturation_intensity_mw_cm2: 3.9
      atom_mass_u: 85.0
      depump_offset_mhz: 121.0
      hyperfine_splitting_mhz: 3000.0
    beam:
      intensity_mw_cm2: 10.53
      detuning_mhz: 2.58
      height_mm: 0.18
      width_mm: 0.7
    kinematics:
      fall_speed_m_s: 3.0
      initial_parallel_speed_m_s: 0.0
    simulation:
      duration_us: 524000.0
      atom_rate_hz: 1800.0
      noise_rate_hz: 9400.0
      detection_efficiency: 0.0264
      seed: 1
      isat: {mode: fixed}
      depump: false
    analysis:
      bin_width_us: 2.0
      max_lag_us: 300.0
      window_us: 60.0
      threshold: 6        # or "auto"
    scan:
      kind: detuning       # detuning | height
      start: -18.0         # MHz (detuning) or mm (height)
      stop: 18.0
      points: 181
      interaction_time_us: 50.0
      exit_fraction: 0.5
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import yaml

from .events import IsatChoices, IsatFixed, IsatUniform, SimulationConfig
from .physics import AtomKinematics, ProbeBeamConfig, TransitionParams
from scipy.constants import atomic_mass

__all__ = [
    "ConfigError",
    "AnalysisParams",
    "ScanSpec",
    "RunConfig",
    "load_run_config",
    "save_run_config",
    "reference_run_config",
]

MHZ = 2.0 * math.pi * 1e6  # ordinary MHz -> angular rad/s
MW_CM2 = 10.0  # mW/cm^2 -> W/m^2
MM = 1e-3
US = 1e-6


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration; names the field."""


@dataclass(frozen=True)
class AnalysisParams:
    bin_width: float = 2e-6
    max_lag: float = 300e-6
    window: float = 60e-6
    threshold: int | None = 6  # None means "auto"

    def __post_init__(self):
        if not self.bin_width > 0 or not self.max_lag > 0 or not self.window > 0:
            raise ConfigError("analysis times must be positive")
        if self.threshold is not None and self.threshold < 1:
            raise ConfigError("analysis.threshold must be >= 1 or 'auto'")


@dataclass(frozen=True)
class ScanSpec:
    kind: str  # "detuning" or "height"
    start: float  # MHz or mm
    stop: float
    points: int
    interaction_time_us: float = 50.0  # detuning scans
    exit_fraction: float = 0.5  # height scans

    def __post_init__(self):
        if self.kind not in ("detuning", "height"):
            raise ConfigError(f"scan.kind must be 'detuning' or 'height', got {self.kind!r}")
        if self.points < 2:
            raise ConfigError("scan.points must be at least 2")
        if not self.stop > self.start:
            raise ConfigError("scan.stop must exceed scan.start")


@dataclass(frozen=True)
class RunConfig:
    simulation: SimulationConfig
    analysis: AnalysisParams
    scan: ScanSpec | None = None


def _section(doc, name):
    try:
        sec = doc[name]
    except (KeyError, TypeError):
        raise ConfigError(f"missing section {name!r}") from None
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return sec


_MISSING = object()


def _get(sec, section, key, cast=float, default=_MISSING):
    if key not in sec:
        if default is _MISSING:
            raise ConfigError(f"missing field {section}.{key}")
        return default
    try:
        return cast(sec[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc


def _isat_from_config(sec):
    if sec is None:
        return None
    mode = _get(sec, "simulation.isat", "mode", str, "fixed")
    if mode == "fixed":
        value = _get(sec, "simulation.isat", "value_mw_cm2", float, None)
        return None if value is None else IsatFixed(value * MW_CM2)
    if mode == "choices":
        values = _get(sec, "simulation.isat", "values_mw_cm2", list)
        return IsatChoices(tuple(float(v) * MW_CM2 for v in values))
    if mode == "uniform":
        return IsatUniform(
            _get(sec, "simulation.isat", "low_mw_cm2") * MW_CM2,
            _get(sec, "simulation.isat", "high_mw_cm2") * MW_CM2,
        )
    raise ConfigError(f"simulation.isat.mode must be fixed|choices|uniform, got {mode!r}")


def _isat_to_config(model):
    if model is None:
        return {"mode": "fixed"}
    if isinstance(model, IsatFixed):
        return {"mode": "fixed", "value_mw_cm2": model.value / MW_CM2}
    if isinstance(model, IsatChoices):
        return {"mode": "choices", "values_mw_cm2": [v / MW_CM2 for v in model.values]}
    if isinstance(model, IsatUniform):
        return {"mode": "uniform", "low_mw_cm2": model.low / MW_CM2,
                "high_mw_cm2": model.high / MW_CM2}
    raise ConfigError(f"unknown i_sat model {model!r}")


def load_run_config(path) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    tr = _section(doc, "transition")
    try:
        transition = TransitionParams(
            gamma=_get(tr, "transition", "linewidth_mhz") * MHZ,
            wavelength=_get(tr, "transition", "wavelength_nm") * 1e-9,
            i_sat=_get(tr, "transition", "saturation_intensity_mw_cm2") * MW_CM2,
            atom_mass=_get(tr, "transition", "atom_mass_u") * atomic_mass,
            depump_detuning=_get(tr, "transition", "depump_offset_mhz", float, 0.0) * MHZ,
            hyperfine_splitting=_get(tr, "transition", "hyperfine_splitting_mhz", float, 0.0) * MHZ,
        )
    except ValueError as exc:
        raise ConfigError(f"transition: {exc}") from exc

    bm = _section(doc, "beam")
    try:
        beam = ProbeBeamConfig(
            intensity=_get(bm, "beam", "intensity_mw_cm2") * MW_CM2,
            detuning=_get(bm, "beam", "detuning_mhz") * MHZ,
            height_dz=_get(bm, "beam", "height_mm") * MM,
            width=_get(bm, "beam", "width_mm") * MM,
        )
    except ValueError as exc:
        raise ConfigError(f"beam: {exc}") from exc

    kn = _section(doc, "kinematics")
    try:
        kinematics = AtomKinematics(
            v_perp=_get(kn, "kinematics", "fall_speed_m_s"),
            v_par0=_get(kn, "kinematics", "initial_parallel_speed_m_s", float, 0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"kinematics: {exc}") from exc

    sm = _section(doc, "simulation")
    try:
        simulation = SimulationConfig(
            duration=_get(sm, "simulation", "duration_us") * US,
            atom_rate=_get(sm, "simulation", "atom_rate_hz"),
            transition=transition,
            beam=beam,
            kinematics=kinematics,
            detection_efficiency=_get(sm, "simulation", "detection_efficiency"),
            noise_rate=_get(sm, "simulation", "noise_rate_hz"),
            seed=_get(sm, "simulation", "seed", int),
            isat_model=_isat_from_config(sm.get("isat")),
            depump_enabled=_get(sm, "simulation", "depump", bool, False),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"simulation: {exc}") from exc

    an = doc.get("analysis") or {}
    threshold = an.get("threshold", 6)
    if isinstance(threshold, str):
        if threshold != "auto":
            raise ConfigError("analysis.threshold must be an integer or 'auto'")
        threshold = None
    else:
        threshold = int(threshold)
    analysis = AnalysisParams(
        bin_width=_get(an, "analysis", "bin_width_us", float, 2.0) * US,
        max_lag=_get(an, "analysis", "max_lag_us", float, 300.0) * US,
        window=_get(an, "analysis", "window_us", float, 60.0) * US,
        threshold=threshold,
    )

    scan = None
    if "scan" in doc and doc["scan"] is not None:
        sc = _section(doc, "scan")
        scan = ScanSpec(
            kind=_get(sc, "scan", "kind", str),
            start=_get(sc, "scan", "start"),
            stop=_get(sc, "scan", "stop"),
            points=_get(sc, "scan", "points", int),
            interaction_time_us=_get(sc, "scan", "interaction_time_us", float, 50.0),
            exit_fraction=_get(sc, "scan", "exit_fraction", float, 0.5),
        )
    return RunConfig(simulation=simulation, analysis=analysis, scan=scan)


def save_run_config(run: RunConfig, path) -> None:
    """Write a run configuration back to YAML (laboratory units)."""
    sim, p, b, k = run.simulation, run.simulation.transition, run.simulation.beam, run.simulation.kinematics
    doc = {
        "transition": {
            "linewidth_mhz": p.gamma / MHZ,
            "wavelength_nm": p.wavelength / 1e-9,
            "saturation_intensity_mw_cm2": p.i_sat / MW_CM2,
            "atom_mass_u": p.atom_mass / atomic_mass,
            "depump_offset_mhz": p.depump_detuning / MHZ,
            "hyperfine_splitting_mhz": p.hyperfine_splitting / MHZ,
        },
        "beam": {
            "intensity_mw_cm2": b.intensity / MW_CM2,
            "detuning_mhz": b.detuning / MHZ,
            "height_mm": b.height_dz / MM,
            "width_mm": b.width / MM,
        },
        "kinematics": {
            "fall_speed_m_s": k.v_perp,
            "initial_parallel_speed_m_s": k.v_par0,
        },
        "simulation": {
            "duration_us": sim.duration / US,
            "atom_rate_hz": sim.atom_rate,
            "noise_rate_hz": sim.noise_rate,
            "detection_efficiency": sim.detection_efficiency,
            "seed": int(sim.seed),
            "isat": _isat_to_config(sim.isat_model),
            "depump": bool(sim.depump_enabled),
        },
        "analysis": {
            "bin_width_us": run.analysis.bin_width / US,
            "max_lag_us": run.analysis.max_lag / US,
            "window_us": run.analysis.window / US,
            "threshold": "auto" if run.analysis.threshold is None else run.analysis.threshold,
        },
    }
    if run.scan is not None:
        doc["scan"] = {
            "kind": run.scan.kind,
            "start": run.scan.start,
            "stop": run.scan.stop,
            "points": run.scan.points,
            "interaction_time_us": run.scan.interaction_time_us,
            "exit_fraction": run.scan.exit_fraction,
        }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=True)


def reference_run_config(seed: int = 1) -> RunConfig:
    """Operating point of the reference single-atom detector.

    2.7-fold saturated probe, blue detuned by 0.43 linewidths, 60 us
    transit at 3 m/s fall speed, 9.4 kHz background, 1.8 kHz atom rate and
    a detection efficiency giving about 20 counted photons per atom.
    """
    from .physics import rb85_d2

    p = rb85_d2()
    beam = ProbeBeamConfig(
        intensity=2.7 * p.i_sat,
        detuning=0.43 * p.gamma,
        height_dz=0.18e-3,
        width=0.7e-3,
    )
    kin = AtomKinematics(v_perp=3.0)
    sim = SimulationConfig(
        duration=0.524,
        atom_rate=1800.0,
        transition=p,
        beam=beam,
        kinematics=kin,
        detection_efficiency=0.0264,
        noise_rate=9400.0,
        seed=seed,
    )
    return RunConfig(simulation=sim, analysis=AnalysisParams(), scan=None)
