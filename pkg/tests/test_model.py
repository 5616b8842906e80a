import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eetsim.model import (EET_WAVENUMBER, NMR_ANGULAR, HamiltonianMatrix, PauliTermSum, UnitScaler,
                          build_exciton_hamiltonian, encode_site, expectations_from_density, khz,
                          load_hamiltonian, pauli_decompose, pauli_string_matrix,
                          populations_from_expectations, save_hamiltonian, scale_to_eet, scale_to_nmr,
                          tetramer_hamiltonian, thermal_frequency, TETRAMER_COUPLINGS_CM,
                          TETRAMER_SITE_ENERGIES_CM)


def random_hermitian(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (a + a.conj().T) / 2


def test_tetramer_matrix_layout():
    h = build_exciton_hamiltonian(TETRAMER_SITE_ENERGIES_CM, TETRAMER_COUPLINGS_CM)
    assert h.unit == EET_WAVENUMBER
    expected = np.array([[13000, 126, 16, 5],
                         [126, 12900, 132, 16],
                         [16, 132, 12300, 126],
                         [5, 16, 126, 12200]], dtype=float)
    assert np.array_equal(h.elements.real, expected)
    assert np.all(h.elements.imag == 0)


def test_single_site():
    h = build_exciton_hamiltonian([100.0])
    assert h.dim == 1 and h.elements[0, 0] == 100


def test_coupling_errors():
    with pytest.raises(ValueError):
        build_exciton_hamiltonian([1.0, 2.0], {(1, 3): 0.5})
    with pytest.raises(ValueError):
        build_exciton_hamiltonian([1.0, 2.0], {(1, 2): 0.5, (2, 1): 0.7})
    with pytest.raises(ValueError):
        build_exciton_hamiltonian([1.0, 2.0], {(1, 1): 0.5})


def test_hamiltonian_rejects_non_hermitian():
    with pytest.raises(ValueError):
        HamiltonianMatrix(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ValueError):
        HamiltonianMatrix(np.eye(2), unit="Hz")


@pytest.mark.parametrize("cm, khz_value", [(13000, 650.0), (0.2, 0.01), (900, 45.0), (0.0, 0.0)])
def test_scale_to_nmr_values(cm, khz_value):
    h = scale_to_nmr(HamiltonianMatrix(np.array([[cm]]), EET_WAVENUMBER))
    assert h.unit == NMR_ANGULAR
    assert h.elements[0, 0].real == pytest.approx(2 * np.pi * khz_value, rel=1e-12, abs=1e-15)


def test_scale_wrong_tag():
    with pytest.raises(ValueError):
        scale_to_nmr(HamiltonianMatrix(np.eye(2), NMR_ANGULAR))
    with pytest.raises(ValueError):
        scale_to_eet(HamiltonianMatrix(np.eye(2), EET_WAVENUMBER))


def test_scale_round_trip_and_linearity():
    rng = np.random.default_rng(1)
    a, b = random_hermitian(rng, 4), random_hermitian(rng, 4)
    ha, hb = HamiltonianMatrix(a, EET_WAVENUMBER), HamiltonianMatrix(b, EET_WAVENUMBER)
    back = scale_to_eet(scale_to_nmr(ha))
    assert np.allclose(back.elements, a, rtol=1e-12, atol=0)
    combo = scale_to_nmr(HamiltonianMatrix(2 * a - 3 * b, EET_WAVENUMBER)).elements
    assert np.allclose(combo, 2 * scale_to_nmr(ha).elements - 3 * scale_to_nmr(hb).elements, atol=1e-9)


def test_thermal_frequency_value():
    # k_B T / hbar at 5e-5 K is 2 pi x 1.042 MHz
    assert thermal_frequency(5e-5) == pytest.approx(khz(1042.0), rel=1e-3)
    assert UnitScaler().thermal_frequency(5e-5) == pytest.approx(thermal_frequency(5e-5))


def test_pauli_decompose_tetramer():
    h = tetramer_hamiltonian("methods")
    terms = pauli_decompose(h)
    assert terms.coefficient("ZI") == pytest.approx(khz(17.5), rel=1e-12)
    assert terms.coefficient("XZ") == pytest.approx(0.0, abs=1e-12)
    nonid = {k for k in terms.terms if k != "II"}
    # X1Z2 and Z1X2 carry (J13 - J24)/2 and (J12 - J34)/2, both zero here
    assert nonid == {"ZI", "IZ", "XI", "IX", "XX", "YY"}
    assert terms.identity_offset == pytest.approx(np.trace(h.elements).real / 4)


def test_pauli_decompose_generic_has_eight_terms():
    h = build_exciton_hamiltonian([4.0, 3.0, 2.0, 1.0], {(1, 2): 0.5, (3, 4): 0.4, (1, 3): 0.3,
                                                         (2, 4): 0.1, (2, 3): 0.2})
    nonid = {k for k in pauli_decompose(h).terms if k != "II"}
    assert nonid == {"ZI", "IZ", "XI", "IX", "XX", "YY", "XZ", "ZX"}


def test_pauli_decompose_rejects_bad_dimension():
    with pytest.raises(ValueError):
        pauli_decompose(np.eye(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_pauli_round_trip(n, seed):
    m = random_hermitian(np.random.default_rng(seed), 2**n)
    rec = pauli_decompose(m, n).to_matrix()
    assert np.linalg.norm(rec - m) <= 1e-10 * np.linalg.norm(m)
    assert np.allclose(np.linalg.eigvalsh(rec), np.linalg.eigvalsh(m), atol=1e-10)


def test_pauli_term_sum_validates_labels():
    with pytest.raises(ValueError):
        PauliTermSum(2, {"XQ": 1.0})
    assert str(PauliTermSum(1, {"Z": 2.0})) == "2*Z"


def test_encode_site():
    assert np.array_equal(encode_site(1), [1, 0, 0, 0])
    assert np.array_equal(encode_site(4), [0, 0, 0, 1])
    with pytest.raises(ValueError):
        encode_site(5)
    for i in range(1, 5):
        psi = encode_site(i)
        rho = np.outer(psi, psi.conj())
        p = populations_from_expectations(*expectations_from_density(rho))
        assert p[i - 1] == pytest.approx(1.0)


@pytest.mark.parametrize("z, expected", [((1, 1, 1), (1, 0, 0, 0)), ((0, 0, 0), (0.25,) * 4),
                                         ((-1, -1, 1), (0, 0, 0, 1))])
def test_populations_from_expectations(z, expected):
    assert np.allclose(populations_from_expectations(*z), expected)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_populations_match_density_diagonal(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    p = populations_from_expectations(*expectations_from_density(rho))
    assert np.allclose(p, np.diag(rho).real, atol=1e-12)
    assert p.sum() == pytest.approx(1.0, abs=1e-15)


def test_pauli_string_ordering():
    # first character acts on qubit 1, the most significant bit
    assert np.allclose(np.diag(pauli_string_matrix("ZI")).real, [1, 1, -1, -1])
    assert np.allclose(np.diag(pauli_string_matrix("IZ")).real, [1, -1, 1, -1])


def test_hamiltonian_file_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    h = HamiltonianMatrix(random_hermitian(rng, 3), EET_WAVENUMBER)
    path = tmp_path / "h.txt"
    save_hamiltonian(path, h)
    assert path.read_text().splitlines()[0] == f"3 {EET_WAVENUMBER}"
    back = load_hamiltonian(path)
    assert back.unit == h.unit
    assert np.array_equal(back.elements, h.elements)


def test_presets_differ_slightly():
    a = tetramer_hamiltonian("methods").elements
    b = tetramer_hamiltonian("maintext").elements
    assert np.allclose(np.diag(a), np.diag(b))
    assert b[0, 1].real == pytest.approx(khz(6.3))
    assert a[0, 1].real == pytest.approx(khz(6.304))
    with pytest.raises(ValueError):
        tetramer_hamiltonian("other")
