import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from risoran.phy import (Codebook, Codeword, ConfigurationError, RisAperture, SteeringPair, SynthesisError,
                         angles_to_scan, array_factor, array_factor_from_phase, azimuth_grid, beam_metrics,
                         build_codebook, continuous_phase, generate_pre_phase, ideal_excitation,
                         interaction_vector, optimize_pre_phase, quantize, scan_angles, scan_to_angles,
                         search_pre_phase, synthesize_codeword, wrap_deg)

LAMBDA = 299792458.0 / 27.2e9


def floor_rounding_state(phase_deg):
    """Reference 1-bit rounding: 180 * floor(p / 180 + 0.5), folded to {0, 1}."""
    q = 180.0 * np.floor(np.asarray(phase_deg) / 180.0 + 0.5)
    return (np.mod(q, 360.0) != 0).astype(np.uint8)


# --------------------------------------------------------------- quantization

@pytest.mark.parametrize("phase, state", [(-90.0, 0), (-89.999, 0), (0.0, 0), (89.999, 0), (90.0, 1),
                                          (180.0, 1), (-90.001, 1), (-179.9, 1)])
def test_quantize_boundaries(phase, state):
    assert quantize(phase) == state


@given(st.floats(-179.999, 180.0, allow_nan=False))
def test_quantize_matches_floor_rounding(phase):
    assert quantize(phase) == floor_rounding_state(phase)


def test_quantize_is_binary_and_vectorised(rng):
    p = rng.uniform(-1000, 1000, size=(7, 9))
    q = quantize(p)
    assert q.shape == p.shape and q.dtype == np.uint8
    assert set(np.unique(q)) <= {0, 1}


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_wrap_interval(phase):
    w = float(wrap_deg(phase))
    assert -180.0 < w <= 180.0
    assert np.isclose(np.mod(w - phase + 1e-9, 360.0), 0.0, atol=1e-6) or \
        np.isclose(np.mod(w - phase, 360.0), 360.0, atol=1e-6)


# --------------------------------------------------------------- phases

def test_continuous_phase_two_by_two_by_hand():
    # N=2, d=lambda/2: x = y = [-d/2, d/2]; steer to (30, 0) with normal incidence
    ap = RisAperture(2, element_spacing=LAMBDA / 2, carrier_frequency=27.2e9)
    phase = continuous_phase(ap, SteeringPair((0.0, 0.0), (30.0, 0.0)))
    # k * x * sin30 = pi * (+-1/2) * 1/2 rad = +-45 deg along the first index
    expected = np.array([[-45.0, -45.0], [45.0, 45.0]])
    assert np.allclose(phase, expected, atol=1e-9)


def test_continuous_phase_subtracts_pre_phase_and_illumination():
    pre = np.array([[10.0, 20.0], [30.0, 170.0]])
    ap = RisAperture(2, element_spacing=LAMBDA / 2, carrier_frequency=27.2e9, pre_phase=pre,
                     pre_phase_seed=None)
    phase = continuous_phase(ap, SteeringPair((30.0, 0.0), (30.0, 0.0)))  # specular: no gradient
    assert np.allclose(phase, wrap_deg(-pre), atol=1e-9)


def test_specular_codeword_without_pre_phase_is_uniform():
    ap = RisAperture(8)
    cw = synthesize_codeword(ap, SteeringPair((25.0, 0.0), (25.0, 0.0)))
    assert np.all(cw.states == 0)


def test_pre_phase_reproducible_and_in_range():
    a, b = generate_pre_phase(32, 7), generate_pre_phase(32, 7)
    assert np.array_equal(a, b)
    assert a.shape == (32, 32) and a.min() >= 0.0 and a.max() < 180.0
    assert not np.array_equal(a, generate_pre_phase(32, 8))


def test_pre_phase_is_uniform():
    sample = generate_pre_phase(64, 3).ravel()
    assert stats.kstest(sample, stats.uniform(loc=0, scale=180).cdf).pvalue > 0.01


def test_aperture_validation():
    with pytest.raises(ConfigurationError):
        RisAperture(0)
    with pytest.raises(ConfigurationError):
        RisAperture(4, element_spacing=-1.0)
    with pytest.raises(ConfigurationError):
        RisAperture(4, pre_phase=np.zeros((3, 3)))
    with pytest.raises(ConfigurationError):
        RisAperture(4, efficiency=1.5)


def test_codeword_rejects_non_binary():
    with pytest.raises(ConfigurationError):
        Codeword(np.full((2, 2), 2), SteeringPair((0, 0), (20, 0)))


@pytest.mark.parametrize("theta", [-1.0, 90.0])
def test_steering_angle_domain(theta):
    with pytest.raises(ValueError):
        SteeringPair((0.0, 0.0), (theta, 0.0))


@given(st.floats(-89.0, 89.0, allow_nan=False))
def test_scan_angle_roundtrip(scan):
    assert angles_to_scan(*scan_to_angles(scan)) == pytest.approx(scan)


def test_interaction_vector_unit_modulus_and_order():
    ap = RisAperture.with_seed(4, 2)
    states = np.zeros((4, 4), dtype=np.uint8)
    states[0, 1] = 1
    psi = interaction_vector(ap, states)
    assert np.allclose(np.abs(psi), 1.0)
    # row-major: element (0, 1) is entry 1
    expected = np.exp(-1j * np.deg2rad(180.0 + ap.pre_phase[0, 1]))
    assert np.isclose(psi[1], expected)


# --------------------------------------------------------------- patterns

def test_ideal_excitation_peak_is_coherent_sum():
    ap = RisAperture(16)
    steer = SteeringPair((0.0, 0.0), (30.0, 0.0))
    grid = np.array([[30.0, 0.0]])
    pat = array_factor_from_phase(ap, ideal_excitation(ap, steer), (0.0, 0.0), grid)
    assert pat.peak_linear == pytest.approx(16 * 16, rel=1e-9)


def test_array_factor_brute_force_oracle():
    ap = RisAperture.with_seed(4, 5)
    steer = SteeringPair((10.0, 0.0), (40.0, 0.0))
    cw = synthesize_codeword(ap, steer)
    grid = np.array([[0.0, 0.0], [40.0, 0.0], [25.0, -180.0], [33.0, 90.0]])
    pat = array_factor(ap, cw, steer.incident, grid)
    k = 2 * np.pi / ap.wavelength
    x, y = ap.coordinates
    ti, pi_ = np.deg2rad(steer.incident)
    ref = []
    for th, ph in np.deg2rad(grid):
        u, v = np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph)
        total = 0j
        for m in range(4):
            for n in range(4):
                illum = np.rad2deg(k * (x[m] * np.sin(ti) * np.cos(pi_) + y[n] * np.sin(ti) * np.sin(pi_)))
                phi_tot = 180.0 * cw.states[m, n] + illum + ap.pre_phase[m, n]
                total += np.exp(-1j * np.deg2rad(phi_tot)) * np.exp(1j * k * (x[m] * u + y[n] * v))
        ref.append(abs(total))
    ref = np.array(ref)
    assert np.allclose(20 * np.log10(ref / ref.max()), pat.magnitude_db, atol=1e-9)


def test_array_factor_empty_grid():
    ap = RisAperture(4)
    with pytest.raises(ValueError):
        array_factor_from_phase(ap, np.zeros((4, 4)), (0, 0), np.zeros((0, 2)))


def test_pattern_normalised_to_zero_db(aperture32):
    cw = synthesize_codeword(aperture32, SteeringPair.on_cut(40.0))
    pat = array_factor(aperture32, cw, (0.0, 0.0), azimuth_grid())
    assert pat.magnitude_db.max() == pytest.approx(0.0)


def test_beam_points_where_asked(aperture32):
    for angle in (20.0, 35.0, 60.0):
        cw = synthesize_codeword(aperture32, SteeringPair.on_cut(angle))
        m = beam_metrics(array_factor(aperture32, cw, (0.0, 0.0), azimuth_grid()), (angle, 0.0))
        assert abs(m.peak_angle - angle) <= 1.0


def test_misdirected_beam_is_rejected():
    ap = RisAperture(16)
    cw = synthesize_codeword(ap, SteeringPair.on_cut(20.0))
    pat = array_factor(ap, cw, (0.0, 0.0), azimuth_grid())
    with pytest.raises(SynthesisError):
        beam_metrics(pat, (50.0, 0.0))


def test_zero_pre_phase_has_mirror_lobe():
    ap = RisAperture(16)
    cw = synthesize_codeword(ap, SteeringPair.on_cut(30.0))
    m = beam_metrics(array_factor(ap, cw, (0.0, 0.0), azimuth_grid()), (30.0, 0.0))
    assert m.quantization_lobe_db < 3.0  # suppression below peak, dB


def test_hpbw_widens_with_scan(aperture32):
    widths = []
    for angle in (20.0, 40.0, 60.0):
        cw = synthesize_codeword(aperture32, SteeringPair.on_cut(angle))
        widths.append(beam_metrics(array_factor(aperture32, cw, (0, 0), azimuth_grid()), (angle, 0.0)).hpbw_deg)
    assert widths[0] < widths[1] < widths[2]


# --------------------------------------------------------------- pre-phase search

def test_search_is_deterministic_and_keeps_best():
    steer = [SteeringPair.on_cut(a) for a in (20.0, 40.0)]
    a = search_pre_phase(12, 6, steer, seed=3)
    b = search_pre_phase(12, 6, steer, seed=3)
    assert a.seed == b.seed and np.array_equal(a.pre_phase, b.pre_phase)
    assert a.worst_lobe_db == min(a.scores)
    assert np.array_equal(optimize_pre_phase(12, 6, steer, seed=3), a.pre_phase)


def test_search_needs_candidates():
    with pytest.raises(ValueError):
        search_pre_phase(8, 0, [SteeringPair.on_cut(30.0)], seed=0)


# --------------------------------------------------------------- codebooks

def test_scan_angles_inclusive():
    assert np.allclose(scan_angles(20, 60, 2), np.arange(20, 61, 2))
    assert len(scan_angles(20, 60, 1)) == 41
    with pytest.raises(ValueError):
        scan_angles(20, 60, 0)


def test_codebook_structure(outdoor_codebook):
    cb = outdoor_codebook
    assert len(cb) == 21
    assert cb.angle_of(0) == pytest.approx(20.0) and cb.angle_of(20) == pytest.approx(60.0)
    assert cb.nearest_index(41.2) == 11
    assert cb.interaction_vectors().shape == (21, 1024)
    assert all(cw.index == i for i, cw in enumerate(cb))


def test_codebook_deterministic():
    ap = RisAperture.with_seed(8, 1)
    assert build_codebook(ap, (0, 0), 20, 60, 10) == build_codebook(ap, (0, 0), 20, 60, 10)
    assert isinstance(build_codebook(ap), Codebook)
