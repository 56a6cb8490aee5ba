"""atomtrace: simulate and analyze time-resolved single-atom fluorescence.

Deterministic atom-light physics (scattering, recoil chirp, photon
yields), stochastic time-tagged photon stream synthesis, and signal
recovery via autocorrelation fitting and sliding-window burst detection.
"""

from .physics import (
    AtomKinematics,
    EfficiencyChain,
    ProbeBeamConfig,
    TransitionParams,
    TransitRecord,
    collection_chain,
    depump_rate,
    detuning_scan,
    efficiency_overall,
    fluorescence_duration_scan,
    integrate_transit,
    mirror_chain,
    photon_yield,
    rb85_d2,
    scattering_rate,
)
from .events import (
    EventStream,
    IsatChoices,
    IsatFixed,
    IsatUniform,
    PhotonEvent,
    SimulationConfig,
    TruthRecord,
    emit_photons_for_atom,
    sample_atom_arrivals,
    sample_isat,
    sample_noise,
    simulate_stream,
)
from .analysis import (
    DetectionReport,
    G2Estimate,
    G2Fit,
    NoAtomSignalError,
    SlidingCount,
    detect_atoms,
    estimate_g2,
    fit_g2,
    optimal_threshold,
    peak_histogram,
    poisson_error_rates,
    sliding_count,
    triangular_g2,
)
from .streamfile import read_stream, write_stream
from .config import RunConfig, load_run_config, reference_run_config, save_run_config

__version__ = "0.1.0"
