import numpy as np
import pytest
from numpy.testing import assert_allclose

from squirm import substrate as sub

EX = np.array([1.0, 0.0, 0.0])
EZ = np.array([0.0, 0.0, 1.0])


@pytest.fixture
def fp():
    return sub.FrictionParams(mu_l=10.0, mu_f=1.0, mu_b=0.3, beta=0.1)


def test_param_validation():
    with pytest.raises(ValueError):
        sub.FrictionParams(mu_l=-1.0, mu_f=1.0, mu_b=1.0)
    with pytest.raises(ValueError):
        sub.FrictionParams(mu_l=1.0, mu_f=1.0, mu_b=1.0, beta=0.0)
    with pytest.raises(ValueError):
        sub.ViscousParams(mu_o=0.0)


def test_effective_mu_limits(fp):
    mu0, _ = sub.effective_mu_t(np.zeros(3), EX, fp)
    assert mu0 == pytest.approx(0.5 * (fp.mu_f + fp.mu_b))
    mu_fast, _ = sub.effective_mu_t(100.0 * EX, EX, fp)
    assert mu_fast == pytest.approx(fp.mu_f, rel=1e-10)
    mu_back, _ = sub.effective_mu_t(-100.0 * EX, EX, fp)
    assert mu_back == pytest.approx(fp.mu_b, rel=1e-10)


def test_effective_mu_isotropic_forward_backward():
    fp = sub.FrictionParams(mu_l=2.0, mu_f=0.7, mu_b=0.7)
    for speed in (-3.0, 0.0, 5.0):
        mu_t, dmu = sub.effective_mu_t(speed * EX, EX, fp)
        assert mu_t == pytest.approx(0.7)
        assert dmu == pytest.approx(0.0)


def test_traction_pure_normal_motion(fp):
    t, _, _ = sub.traction(2.5 * EZ, EX, fp)
    assert_allclose(t, np.zeros(3), atol=1e-14)


def test_traction_saturated_tangential():
    fp = sub.FrictionParams(mu_l=5.0, mu_f=0.8, mu_b=0.8)
    t, _, _ = sub.traction(EX, EX, fp)
    assert_allclose(t, -0.8 * EX, atol=1e-12)


def test_traction_requires_orthonormal_frame(fp):
    with pytest.raises(ValueError):
        sub.traction(EX, 2.0 * EX, fp)
    with pytest.raises(ValueError):
        sub.traction(EX, EZ, fp)  # tau parallel to n


def test_traction_velocity_derivative_fd(fp):
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.standard_normal(3)
        t, dt_dv, _ = sub.traction(v, EX, fp)
        eps = 1e-6
        for k in range(3):
            dv = np.zeros(3)
            dv[k] = eps
            tp, _, _ = sub.traction(v + dv, EX, fp)
            tm, _, _ = sub.traction(v - dv, EX, fp)
            assert_allclose((tp - tm) / (2 * eps), dt_dv[:, k], atol=1e-6)


def test_traction_tangent_derivative_fd(fp):
    # Perturb tau in its plane (rotations about n keep the frame legal).
    rng = np.random.default_rng(1)
    for _ in range(10):
        v = rng.standard_normal(3)
        angle = rng.uniform(0, 2 * np.pi)
        tau = np.array([np.cos(angle), np.sin(angle), 0.0])
        t, _, dt_dtau = sub.traction(v, tau, fp)
        eps = 1e-7
        dtau = eps * np.array([-np.sin(angle), np.cos(angle), 0.0])
        tp, _, _ = sub.traction(v, tau + dtau, fp)
        tm, _, _ = sub.traction(v, tau - dtau, fp)
        fd = (tp - tm) / (2 * eps)
        assert_allclose(fd, dt_dtau @ (dtau / eps), atol=2e-5)


def test_fd_convergence_second_order(fp):
    # Central differences of the v-derivative converge at order 2.
    v = np.array([0.03, -0.02, 0.01])
    _, dt_dv, _ = sub.traction(v, EX, fp)
    errs = []
    for eps in (1e-2, 5e-3, 2.5e-3):
        fd = np.zeros((3, 3))
        for k in range(3):
            dv = np.zeros(3)
            dv[k] = eps
            tp, _, _ = sub.traction(v + dv, EX, fp)
            tm, _, _ = sub.traction(v - dv, EX, fp)
            fd[:, k] = (tp - tm) / (2 * eps)
        errs.append(np.abs(fd - dt_dv).max())
    rate1 = np.log(errs[0] / errs[1]) / np.log(2.0)
    rate2 = np.log(errs[1] / errs[2]) / np.log(2.0)
    assert rate1 > 1.7 and rate2 > 1.7


def test_dissipativity_random(fp):
    rng = np.random.default_rng(2)
    for _ in range(10_000):
        v = 3.0 * rng.standard_normal(3)
        t, _, _ = sub.traction(v, EX, fp)
        assert -float(t @ v) >= -1e-13


def test_traction_in_plane(fp):
    rng = np.random.default_rng(3)
    for _ in range(100):
        v = rng.standard_normal(3)
        t, _, _ = sub.traction(v, EX, fp)
        assert abs(t @ EZ) < 1e-12


def test_isotropic_limit():
    fp = sub.FrictionParams(mu_l=0.9, mu_f=0.9, mu_b=0.9)
    B = sub.friction_tensor(np.array([0.2, -0.1, 0.4]), EX, fp)
    assert_allclose(B, 0.9 * (np.eye(3) - np.outer(EZ, EZ)), atol=1e-14)


def test_viscous_force():
    vp = sub.ViscousParams(mu_o=1e-3)
    assert_allclose(sub.viscous_force(np.zeros(3), vp), np.zeros(3))
    assert_allclose(sub.viscous_force(EX, vp), [-1e-3, 0.0, 0.0])
    rng = np.random.default_rng(4)
    for _ in range(20):
        v = rng.standard_normal(3)
        b = sub.viscous_force(v, vp)
        assert -float(b @ v) >= 0.0
