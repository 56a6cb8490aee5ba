import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from atomtrace import (
    IsatChoices,
    IsatFixed,
    IsatUniform,
    ProbeBeamConfig,
    SimulationConfig,
    emit_photons_for_atom,
    integrate_transit,
    photon_yield,
    sample_atom_arrivals,
    sample_isat,
    sample_noise,
    simulate_stream,
)
from atomtrace.events import NOISE, TruthRecord, _emit, _substream
from atomtrace.physics import TransitRecord


def make_config(params, beam, kin, **overrides):
    n_phot = photon_yield(params, beam, kin, beam.height_dz / kin.v_perp)
    base = dict(
        duration=0.524,
        atom_rate=1800.0,
        transition=params,
        beam=beam,
        kinematics=kin,
        detection_efficiency=20.0 / n_phot,
        noise_rate=9400.0,
        seed=1,
    )
    base.update(overrides)
    return SimulationConfig(**base)


class TestArrivals:
    def test_zero_rate_empty(self):
        assert sample_atom_arrivals(0.0, 1.0, _substream(0, 0)).size == 0

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            sample_atom_arrivals(-1.0, 1.0, _substream(0, 0))

    def test_count_near_expectation(self):
        n = sample_atom_arrivals(1803.0, 0.524, _substream(42, 0)).size
        mean = 1803.0 * 0.524
        assert abs(n - mean) < 3.0 * np.sqrt(mean)

    def test_mean_over_seeds_within_one_percent(self):
        mean = 1803.0 * 0.524
        counts = [
            sample_atom_arrivals(1803.0, 0.524, _substream(seed, 0)).size
            for seed in range(1000)
        ]
        assert abs(np.mean(counts) - mean) / mean < 0.01

    def test_sorted_within_bounds(self):
        t = sample_atom_arrivals(1e4, 0.1, _substream(3, 0))
        assert np.all(np.diff(t) >= 0)
        assert t[0] >= 0 and t[-1] <= 0.1


class TestNoise:
    def test_zero_rate_empty(self):
        assert sample_noise(0.0, 1.0, _substream(0, 1)).size == 0

    def test_count_near_expectation(self):
        n = sample_noise(9.4e3, 0.524, _substream(11, 1)).size
        mean = 9.4e3 * 0.524
        assert abs(n - mean) < 3.0 * np.sqrt(mean)

    def test_mean_count_per_window(self):
        # 9.4 kHz background in 60 us windows: 0.564 counts on average.
        t = sample_noise(9.4e3, 2.0, _substream(5, 1))
        edges = np.arange(0.0, 2.0 + 60e-6, 60e-6)
        counts, _ = np.histogram(t, edges)
        mean = counts.mean()
        se = counts.std() / np.sqrt(counts.size)
        assert abs(mean - 0.564) < 4.0 * se

    def test_superposition_of_independent_streams(self):
        # Merging two independent background streams is indistinguishable
        # from one stream at the summed rate.
        a = sample_noise(4e3, 1.0, _substream(1, 1))
        b = sample_noise(6e3, 1.0, _substream(2, 1))
        merged = np.sort(np.concatenate([a, b]))
        single = sample_noise(10e3, 1.0, _substream(3, 1))
        ks = stats.ks_2samp(np.diff(merged), np.diff(single))
        assert ks.pvalue > 1e-3


class TestEmission:
    @pytest.fixture()
    def transit(self, params, operating_beam, kin):
        return integrate_transit(params, operating_beam, kin)

    def test_zero_efficiency_empty(self, transit):
        assert emit_photons_for_atom(transit, 0.0, _substream(0, 2, 0)).size == 0

    def test_bad_efficiency_rejected(self, transit):
        with pytest.raises(ValueError):
            emit_photons_for_atom(transit, 1.5, _substream(0, 2, 0))

    def test_mean_detected_count(self, transit):
        eff = 0.03
        counts = [
            emit_photons_for_atom(transit, eff, _substream(s, 2, 0)).size
            for s in range(2000)
        ]
        expected = eff * transit.n_phot
        se = np.std(counts) / np.sqrt(len(counts))
        assert abs(np.mean(counts) - expected) < 4.0 * se

    def test_counts_are_poissonian(self, transit):
        counts = np.array(
            [
                emit_photons_for_atom(transit, 0.03, _substream(s, 2, 0)).size
                for s in range(10_000)
            ]
        )
        ratio = counts.var() / counts.mean()
        assert 0.9 < ratio < 1.1

    def test_times_sorted_and_inside_transit(self, transit):
        t = emit_photons_for_atom(transit, 0.5, _substream(9, 2, 0))
        assert np.all(np.diff(t) >= 0)
        assert t[0] >= 0 and t[-1] <= transit.interaction_time

    def test_constant_rate_reduces_to_homogeneous_poisson(self):
        # Flat-rate transit: the thinning pipeline must reproduce a
        # homogeneous Poisson process (chi-square on the inter-arrival
        # exponential at the 3-sigma level).
        rate, T = 2e5, 1.0
        grid = np.linspace(0.0, T, 2001)
        flat = TransitRecord(
            interaction_time=T,
            times=grid,
            v_par=np.zeros_like(grid),
            rates=np.full_like(grid, rate),
            cumulative_photons=rate * grid,
            n_phot=rate * T,
            fluorescence_duration=T,
        )
        t = emit_photons_for_atom(flat, 0.5, _substream(123, 2, 0))
        lam = 0.5 * rate
        n = t.size
        assert abs(n - lam * T) < 3.0 * np.sqrt(lam * T)
        gaps = np.diff(t)
        k = 50
        quantiles = -np.log(1.0 - np.arange(k) / k)
        quantiles = np.append(quantiles, np.inf)
        observed, _ = np.histogram(gaps * lam, quantiles)
        expected = gaps.size / k
        chi2 = ((observed - expected) ** 2 / expected).sum()
        dof = k - 1
        assert chi2 < dof + 3.0 * np.sqrt(2.0 * dof)

    def test_depump_truncation_respected(self, transit):
        import dataclasses

        cut = dataclasses.replace(transit, depumped_at=transit.interaction_time / 4)
        t_full = emit_photons_for_atom(transit, 1.0, _substream(4, 2, 0))
        t_cut = emit_photons_for_atom(cut, 1.0, _substream(4, 2, 0))
        assert t_cut.size < t_full.size
        assert t_cut[-1] <= transit.interaction_time / 4


class TestIsatModels:
    def test_fixed_always_same(self):
        model = IsatFixed(39.0)
        rng = _substream(0, 2, 0)
        assert all(sample_isat(model, rng) == 39.0 for _ in range(5))

    @given(lo=st.floats(1.0, 50.0), width=st.floats(0.1, 50.0), seed=st.integers(0, 2**32))
    def test_uniform_containment(self, lo, width, seed):
        model = IsatUniform(lo, lo + width)
        draws = model.sample(_substream(seed, 2, 0), 50)
        assert np.all((draws >= lo) & (draws <= lo + width))

    def test_choices_membership(self):
        model = IsatChoices((29.0, 39.0, 66.0))
        draws = model.sample(_substream(7, 2, 0), 100)
        assert set(np.unique(draws)) <= {29.0, 39.0, 66.0}

    def test_bad_ranges_rejected(self):
        with pytest.raises(ValueError):
            IsatUniform(66.0, 29.0).sample(_substream(0, 0), 1)
        with pytest.raises(ValueError):
            IsatFixed(-1.0).sample(_substream(0, 0), 1)


class TestSimulateStream:
    def test_empty_when_rates_zero(self, params, operating_beam, kin):
        cfg = make_config(params, operating_beam, kin, atom_rate=0.0, noise_rate=0.0)
        s = simulate_stream(cfg)
        assert len(s) == 0
        assert s.truth.arrival_times.size == 0

    def test_same_seed_bit_identical(self, params, operating_beam, kin):
        cfg = make_config(params, operating_beam, kin, duration=0.05, seed=99)
        assert simulate_stream(cfg) == simulate_stream(cfg)

    def test_different_seed_differs(self, params, operating_beam, kin):
        a = simulate_stream(make_config(params, operating_beam, kin, duration=0.05, seed=1))
        b = simulate_stream(make_config(params, operating_beam, kin, duration=0.05, seed=2))
        assert a != b

    def test_events_sorted_and_bounded(self, params, operating_beam, kin):
        s = simulate_stream(make_config(params, operating_beam, kin, duration=0.05))
        assert np.all(np.diff(s.times) >= 0)
        assert s.times[0] >= 0 and s.times[-1] <= s.duration

    def test_labels_consistent_with_truth(self, params, operating_beam, kin):
        s = simulate_stream(make_config(params, operating_beam, kin, duration=0.1, seed=5))
        truth = s.truth
        for i in range(truth.arrival_times.size):
            assert (s.atom_ids == i).sum() == truth.detected_counts[i]
        n_noise = (s.atom_ids == NOISE).sum()
        mean_noise = s.config.noise_rate * s.duration
        assert abs(n_noise - mean_noise) < 4.0 * np.sqrt(mean_noise)

    def test_detected_rate_matches_thinned_yield(self, params, operating_beam, kin):
        # Total rate: noise + atom_rate * efficiency * expected yield.  The
        # stream is clustered, so the count variance is compound Poisson:
        # var = R_N T + R_A T E[N^2] with N ~ Poisson(eff * n_phot).
        cfgs = [
            make_config(params, operating_beam, kin, seed=s, duration=0.2)
            for s in range(8)
        ]
        totals = np.array([len(simulate_stream(c)) for c in cfgs])
        eff = cfgs[0].detection_efficiency
        n_phot = photon_yield(params, operating_beam, kin, cfgs[0].interaction_time)
        n_det = eff * n_phot
        mean = (9400.0 + 1800.0 * n_det) * 0.2
        var = (9400.0 + 1800.0 * (n_det + n_det**2)) * 0.2
        pooled = totals.sum()
        assert abs(pooled - totals.size * mean) < 4.0 * np.sqrt(totals.size * var)

    def test_per_atom_detected_mean(self, params, operating_beam, kin):
        s = simulate_stream(make_config(params, operating_beam, kin, seed=21))
        truth = s.truth
        eff = s.config.detection_efficiency
        expected = eff * truth.expected_photons.mean()
        se = truth.detected_counts.std() / np.sqrt(truth.detected_counts.size)
        assert abs(truth.detected_counts.mean() - expected) < 4.0 * se

    def test_uniform_isat_overdisperses_counts(self, params, kin):
        # Per-atom saturation spread adds variance on top of Poisson.
        beam = ProbeBeamConfig(
            intensity=2.7 * 39.0, detuning=0.43 * params.gamma,
            height_dz=0.18e-3, width=0.7e-3,
        )
        common = dict(duration=3.0, atom_rate=3000.0, noise_rate=0.0, seed=17)
        fixed = simulate_stream(make_config(params, beam, kin, **common))
        spread = simulate_stream(
            make_config(
                params, beam, kin,
                isat_model=IsatUniform(29.0, 66.0), **common,
            )
        )
        c_fixed = fixed.truth.detected_counts
        c_spread = spread.truth.detected_counts
        assert c_fixed.size > 5000
        ratio_fixed = c_fixed.var() / c_fixed.mean()
        ratio_spread = c_spread.var() / c_spread.mean()
        assert ratio_spread > ratio_fixed + 0.03
        assert 0.9 < ratio_fixed < 1.1

    def test_sigma_polarized_spread_is_strongly_overdispersed(self, params, kin):
        beam = ProbeBeamConfig(
            intensity=2.7 * 39.0, detuning=0.43 * params.gamma,
            height_dz=0.18e-3, width=0.7e-3,
        )
        s = simulate_stream(
            make_config(
                params, beam, kin,
                duration=2.0, atom_rate=2000.0, noise_rate=0.0, seed=8,
                isat_model=IsatUniform(16.0, 464.0),
            )
        )
        counts = s.truth.detected_counts
        assert counts.var() / counts.mean() > 1.5

    def test_depump_shortens_bursts(self, params, operating_beam, kin):
        base = make_config(params, operating_beam, kin, duration=0.3, seed=33)
        import dataclasses

        with_loss = dataclasses.replace(base, depump_enabled=True)
        s0 = simulate_stream(base)
        s1 = simulate_stream(with_loss)
        assert np.isnan(s0.truth.depumped_at).all()
        assert np.isfinite(s1.truth.depumped_at).any()
        m0 = s0.truth.detected_counts.mean()
        m1 = s1.truth.detected_counts.mean()
        assert m1 < 0.95 * m0

    def test_pileup_warning(self, params, operating_beam, kin, caplog):
        cfg = make_config(
            params, operating_beam, kin, atom_rate=6000.0, duration=0.02
        )
        with caplog.at_level(logging.WARNING, logger="atomtrace.events"):
            simulate_stream(cfg)
        assert any("overlap" in rec.message for rec in caplog.records)

    def test_atom_insertion_does_not_perturb_others(self, params, operating_beam, kin):
        # Raising the atom rate adds atoms but must not change the draws
        # of the background stream.
        lo = make_config(params, operating_beam, kin, duration=0.05, seed=3,
                         atom_rate=500.0)
        hi = make_config(params, operating_beam, kin, duration=0.05, seed=3,
                         atom_rate=2500.0)
        a, b = simulate_stream(lo), simulate_stream(hi)
        noise_a = a.times[a.atom_ids == NOISE]
        noise_b = b.times[b.atom_ids == NOISE]
        assert np.array_equal(noise_a, noise_b)
