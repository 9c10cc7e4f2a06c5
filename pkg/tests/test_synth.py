import numpy as np
import pytest

from conftest import random_mode_spec
from mspulse.assembly import GateSpec, assemble_problem, heating_error, rotation_angle
from mspulse.basis import PIECEWISE, Basis
from mspulse.errors import NumericalError, ValidationError
from mspulse.synth import (
    CONVENTIONAL,
    HEATING_OPTIMAL,
    MIN_RABI,
    kernel_projector,
    positive_extract,
    single_mode_fourier_compare,
    solve_psd_qcqp,
    synthesize,
)


def make_problem(rng, num_ions, theta=np.pi / 8, p=1, q=2):
    spec = random_mode_spec(rng, num_ions)
    basis = Basis(PIECEWISE, 6 * num_ions + 20, spec.tau)
    return assemble_problem(spec, basis, GateSpec(p, q, theta))


class TestKernelProjector:
    def test_rank_one_row(self):
        a = np.array([[1.0, 1.0, 0.0]])
        p = kernel_projector(a)
        v = np.array([1.0, 1.0, 0.0])
        expected = np.eye(3) - np.outer(v, v) / 2
        assert p == pytest.approx(expected, abs=1e-14)

    def test_kernel_dimension(self):
        rng = np.random.default_rng(0)
        for n in (2, 4):
            spec = random_mode_spec(rng, n)
            basis = Basis(PIECEWISE, 6 * n + 20, spec.tau)
            from mspulse.assembly import assemble_constraints

            a, a_diff = assemble_constraints(spec, basis)
            p = kernel_projector(a, a_diff)
            rank = int(round(np.trace(p)))
            assert rank >= basis.size - 4 * n

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 12)) + 1j * rng.normal(size=(3, 12))
        p = kernel_projector(a)
        x = rng.normal(size=(12, 1000))
        assert np.max(np.abs(p @ (p @ x) - p @ x)) < 1e-12

    def test_over_constrained_reported(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(5, 4))
        with pytest.raises(NumericalError, match="increase L"):
            kernel_projector(a)


class TestPositiveExtract:
    def test_two_by_two_hand_example(self):
        m = np.diag([1.0, -1.0])
        ext = positive_extract(np.eye(2), m)
        assert ext.M_tilde == pytest.approx(np.eye(2), abs=1e-14)
        c = np.array([1.0, 1.0])
        c_p = ext.S_p @ c
        c_q = ext.S_q @ c
        assert c_p == pytest.approx([1.0, 1.0])
        assert c_q == pytest.approx([1.0, -1.0])
        assert c_p @ m @ c_q == pytest.approx(2.0)
        assert c @ ext.M_tilde @ c == pytest.approx(2.0)

    def test_psd_matrix_needs_no_flip(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 5))
        m = x @ x.T
        ext = positive_extract(np.eye(5), m)
        assert np.all(ext.flip_signature == 1.0)
        assert ext.S_p @ np.eye(5) == pytest.approx(ext.S_q)
        assert ext.M_tilde == pytest.approx(m, rel=1e-12)

    def test_extraction_identity_random(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = rng.normal(size=(8, 8))
            m = 0.5 * (x + x.T)
            basis = np.linalg.qr(rng.normal(size=(8, 5)))[0]
            p = basis @ basis.T
            ext = positive_extract(p, m)
            err = np.linalg.norm(p @ m @ p @ _flip_matrix(ext) - ext.M_tilde)
            assert err <= 1e-10 * np.linalg.norm(m)
            lam = np.linalg.eigvalsh(ext.M_tilde)
            assert lam.min() >= -1e-10 * np.linalg.norm(ext.M_tilde, 2)


def _flip_matrix(ext):
    v = ext.eigenvectors
    return (v * ext.flip_signature[None, :]) @ v.T


class TestSolvePsdQcqp:
    def test_diagonal_pencil(self):
        c, lam = solve_psd_qcqp(np.diag([2.0, 12.0]), np.diag([1.0, 4.0]), 1.0)
        assert lam == pytest.approx(2.0)
        assert np.abs(c) == pytest.approx([1.0, 0.0], abs=1e-12)
        assert c @ np.diag([2.0, 12.0]) @ c == pytest.approx(2.0)

    def test_isotropic(self):
        c, lam = solve_psd_qcqp(np.eye(3), np.eye(3), 4.0)
        assert lam == pytest.approx(1.0)
        assert np.linalg.norm(c) == pytest.approx(2.0)

    def test_optimality_against_random_feasible(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(7, 7))
        h = x @ x.T
        y = rng.normal(size=(7, 7))
        m = y @ y.T
        theta = 0.7
        c, lam = solve_psd_qcqp(h, m, theta)
        assert c @ h @ c == pytest.approx(lam * theta, rel=1e-10)
        for _ in range(200):
            z = rng.normal(size=7)
            z = z * np.sqrt(theta / (z @ m @ z))
            assert z @ h @ z >= lam * theta - 1e-9

    def test_zero_angle_matrix_rejected(self):
        with pytest.raises(NumericalError, match="angle-generating"):
            solve_psd_qcqp(np.eye(3), np.zeros((3, 3)), 1.0)


class TestSynthesize:
    @pytest.mark.parametrize("method", [HEATING_OPTIMAL, MIN_RABI, CONVENTIONAL])
    def test_postconditions(self, method):
        rng = np.random.default_rng(7)
        problem = make_problem(rng, 2)
        res = synthesize(problem, method=method)
        assert res.theta_achieved == pytest.approx(np.pi / 8, rel=1e-8)
        stacked = np.vstack([problem.A.real, problem.A.imag,
                             problem.A_diff.real, problem.A_diff.imag])
        for c in (res.c_p, res.c_q):
            res_norm = np.abs(stacked @ c)
            scale = np.linalg.norm(stacked, axis=1) * np.linalg.norm(c)
            assert np.all(res_norm <= 1e-9 * scale)

    def test_theorem_identity(self):
        rng = np.random.default_rng(8)
        for n in (2, 3):
            problem = make_problem(rng, n)
            res = synthesize(problem, method=HEATING_OPTIMAL)
            theta_via_m = rotation_angle(res.c_p, res.c_q, problem)
            assert theta_via_m == pytest.approx(np.pi / 8, rel=1e-10)

    def test_objective_dominance(self):
        rng = np.random.default_rng(9)
        for n in (2, 3):
            problem = make_problem(rng, n)
            opt = synthesize(problem, method=HEATING_OPTIMAL)
            mr = synthesize(problem, method=MIN_RABI)
            conv = synthesize(problem, method=CONVENTIONAL)
            assert opt.predicted_estimate <= mr.predicted_estimate + 1e-12
            assert opt.predicted_estimate <= conv.predicted_estimate + 1e-12
            assert mr.rabi_l2 <= opt.rabi_l2 + 1e-12
            assert mr.rabi_l2 <= conv.rabi_l2 + 1e-12

    def test_lambda_min_matches_estimate(self):
        rng = np.random.default_rng(10)
        problem = make_problem(rng, 2)
        res = synthesize(problem, method=HEATING_OPTIMAL)
        assert res.predicted_estimate == pytest.approx(
            res.lambda_min * np.pi / 8, rel=1e-8
        )

    def test_feasible_perturbation_never_beats_optimum(self):
        rng = np.random.default_rng(11)
        problem = make_problem(rng, 2)
        res = synthesize(problem, method=HEATING_OPTIMAL)
        for _ in range(50):
            bump = rng.normal(size=problem.size)
            cand = res.c + 1e-3 * np.linalg.norm(res.c) * bump
            ext = positive_extract(kernel_projector(problem.A, problem.A_diff),
                                   problem.M)
            denom = cand @ ext.M_tilde @ cand
            if denom <= 0:
                continue
            cand = cand * np.sqrt(np.pi / 8 / denom)
            c_p = ext.S_p @ cand
            c_q = ext.S_q @ cand
            est = heating_error(c_p, c_q, problem, "diagonal")
            assert est >= res.predicted_estimate * (1 - 1e-9)

    def test_negative_target_flips_ion_q(self):
        rng = np.random.default_rng(12)
        spec = random_mode_spec(rng, 2)
        basis = Basis(PIECEWISE, 32, spec.tau)
        problem = assemble_problem(spec, basis, GateSpec(1, 2, -np.pi / 8))
        res = synthesize(problem)
        assert res.theta_achieved == pytest.approx(-np.pi / 8, rel=1e-8)
        assert any("flip" in w for w in res.warnings)

    def test_bit_reproducible(self):
        rng = np.random.default_rng(13)
        spec = random_mode_spec(rng, 2)
        basis = Basis(PIECEWISE, 32, spec.tau)
        problem = assemble_problem(spec, basis, GateSpec(1, 2, np.pi / 8))
        r1 = synthesize(problem, method=HEATING_OPTIMAL)
        r2 = synthesize(problem, method=HEATING_OPTIMAL)
        assert np.array_equal(r1.c_p, r2.c_p)
        assert np.array_equal(r1.c_q, r2.c_q)
        assert r1.theta_achieved == r2.theta_achieved

    def test_method_validation(self):
        rng = np.random.default_rng(14)
        problem = make_problem(rng, 2)
        with pytest.raises(ValidationError):
            synthesize(problem, method="annealing")


class TestFourierCompare:
    def test_single_tone_closed_form(self):
        theta = np.pi / 4
        gamma = 500.0
        delta = 2 * np.pi * 5e4
        rec = single_mode_fourier_compare(1, theta, gamma, delta)
        assert rec.coeffs[0] ** 2 == pytest.approx(theta / (4 * np.pi), rel=1e-12)
        assert rec.heating == pytest.approx(
            gamma * (2 * np.pi / delta) * 2 * theta / (4 * np.pi), rel=1e-12
        )
        assert rec.coeffs_prior is None
        assert rec.notes

    def test_ours_never_worse(self):
        for size in range(2, 13):
            rec = single_mode_fourier_compare(size, np.pi / 4, 500.0, 2 * np.pi * 5e4)
            assert rec.heating <= rec.heating_prior * (1 + 1e-12)

    def test_improvements_close(self):
        for size in range(2, 13):
            rec = single_mode_fourier_compare(size, np.pi / 4, 500.0, 2 * np.pi * 5e4)
            assert rec.improvement == pytest.approx(rec.improvement_prior, rel=0.1)

    def test_homogeneity(self):
        base = single_mode_fourier_compare(5, np.pi / 8, 500.0, 2 * np.pi * 5e4)
        quad = single_mode_fourier_compare(5, np.pi / 2, 500.0, 2 * np.pi * 5e4)
        assert np.abs(quad.coeffs) == pytest.approx(2 * np.abs(base.coeffs), rel=1e-9)
        assert quad.heating == pytest.approx(4 * base.heating, rel=1e-9)
        assert quad.heating_prior == pytest.approx(4 * base.heating_prior, rel=1e-9)

    def test_angle_constraint_satisfied(self):
        rec = single_mode_fourier_compare(7, np.pi / 4, 500.0, 2 * np.pi * 5e4)
        ls = np.arange(1, 8)
        assert 4 * np.pi * np.sum(rec.coeffs ** 2 / ls) == pytest.approx(np.pi / 4)
        assert 4 * np.pi * np.sum(rec.coeffs_prior ** 2 / ls) == pytest.approx(np.pi / 4)
        assert np.sum(rec.coeffs_prior / ls) == pytest.approx(0.0, abs=1e-12)
