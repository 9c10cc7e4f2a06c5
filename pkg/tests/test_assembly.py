import numpy as np
import pytest
import scipy.linalg

from conftest import nested_angle_oracle, random_mode_spec, single_mode_spec
from mspulse.assembly import (
    GateSpec,
    assemble_constraints,
    assemble_H,
    assemble_M,
    assemble_problem,
    export_trajectory,
    heating_error,
    rotation_angle,
    trajectory,
)
from mspulse.basis import PIECEWISE, Basis, Waveform, quad_oracle
from mspulse.errors import ValidationError

TAU = 1e-4
DELTA = 2 * np.pi * 1e4          # one full loop over the gate
OMEGA = 2 * np.pi * 5e4
B = 1 / np.sqrt(2)


@pytest.fixture
def single_mode_problem():
    spec = single_mode_spec(DELTA, 0.1, (B, B), 100.0, TAU)
    basis = Basis(PIECEWISE, 1, TAU)
    gate = GateSpec(1, 2, np.pi / 8)
    return assemble_problem(spec, basis, gate)


class TestConstraints:
    def test_zero_detuning_row(self):
        with pytest.warns(UserWarning, match="drive frequency"):
            spec = single_mode_spec(0.0, 0.1, (B, B), 0.0, 1.0)
        basis = Basis(PIECEWISE, 4, 1.0)
        a, _ = assemble_constraints(spec, basis)
        assert a[0] == pytest.approx(np.full(4, 0.25))

    def test_full_period_column_vanishes(self):
        spec = single_mode_spec(2 * np.pi / TAU, 0.1, (B, B), 0.0, TAU)
        basis = Basis(PIECEWISE, 1, TAU)
        a, _ = assemble_constraints(spec, basis)
        assert abs(a[0, 0]) < 1e-18

    def test_tau_mismatch_rejected(self):
        spec = single_mode_spec(DELTA, 0.1, (B, B), 0.0, TAU)
        with pytest.raises(ValidationError):
            assemble_constraints(spec, Basis(PIECEWISE, 4, 2 * TAU))

    def test_kernel_vector_closes_all_loops(self):
        rng = np.random.default_rng(21)
        spec = random_mode_spec(rng, 3)
        basis = Basis(PIECEWISE, 12, spec.tau)
        a, a_diff = assemble_constraints(spec, basis)
        stacked = np.vstack([a.real, a.imag, a_diff.real, a_diff.imag])
        kernel = scipy.linalg.null_space(stacked)
        c = kernel @ rng.normal(size=kernel.shape[1])
        wf = Waveform(basis, c)
        scale = np.linalg.norm(c) * spec.tau
        for ion in (1, 2, 3):
            sample = trajectory(wf, ion, spec, np.array([spec.tau]))
            for mode in range(3):
                bound = 1e-12 * spec.etas[mode] * abs(spec.vectors[mode, ion - 1]) * scale
                assert abs(sample.alpha[mode, 0]) <= max(bound, 1e-16)


class TestAngleMatrix:
    def test_closed_form_constant_pulse(self, single_mode_problem):
        c = np.array([OMEGA])
        theta = rotation_angle(c, c, single_mode_problem)
        assert theta == pytest.approx(np.pi / 8, rel=1e-9)
        assert theta == pytest.approx(0.392699, rel=1e-5)

    def test_zero_pulse(self, single_mode_problem):
        z = np.zeros(1)
        assert rotation_angle(z, z, single_mode_problem) == 0.0

    def test_quadratic_scaling(self, single_mode_problem):
        c = np.array([OMEGA])
        base = rotation_angle(c, c, single_mode_problem)
        assert rotation_angle(3 * c, 3 * c, single_mode_problem) == pytest.approx(9 * base)

    def test_against_nested_quadrature(self):
        # unit scales; the physical-scale value is covered by the pi/8 example
        spec = single_mode_spec(2.3, 0.12, (0.8, 0.6), 0.0, 1.0)
        basis = Basis(PIECEWISE, 3, 1.0)
        m = assemble_M(spec, basis, GateSpec(1, 2, 1.0))
        oracle = nested_angle_oracle(spec, basis, 0.8, 0.6)
        assert m == pytest.approx(oracle, rel=1e-8, abs=1e-14)


class TestHeatingMatrix:
    def test_closed_form_constant_pulse(self, single_mode_problem):
        c = np.array([OMEGA])
        e_pp = float(c @ single_mode_problem.H_pp @ c)
        assert e_pp == pytest.approx(1.25e-3, rel=1e-9)

    def test_zero_rates_zero_matrix(self):
        spec = single_mode_spec(DELTA, 0.1, (B, B), 0.0, TAU)
        basis = Basis(PIECEWISE, 4, TAU)
        h = assemble_H(spec, basis, GateSpec(1, 2, 1.0), 1, 1)
        assert np.all(h == 0.0)

    def test_psd_quadratic_form(self):
        rng = np.random.default_rng(9)
        spec = random_mode_spec(rng, 2)
        basis = Basis(PIECEWISE, 10, spec.tau)
        problem = assemble_problem(spec, basis, GateSpec(1, 2, 1.0))
        for _ in range(50):
            c = rng.normal(size=10)
            assert c @ problem.H_pp @ c >= -1e-18

    def test_psd_eigenvalues(self):
        rng = np.random.default_rng(10)
        spec = random_mode_spec(rng, 3)
        basis = Basis(PIECEWISE, 14, spec.tau)
        problem = assemble_problem(spec, basis, GateSpec(1, 3, 1.0))
        for h in (problem.H_pp, problem.H_qq, problem.G):
            lam = np.linalg.eigvalsh(h)
            assert lam.min() >= -1e-10 * np.linalg.norm(h, 2)


class TestHeatingError:
    def test_identical_pulses_full_and_diagonal(self, single_mode_problem):
        c = np.array([OMEGA])
        full = heating_error(c, c, single_mode_problem, mode="full")
        diag = heating_error(c, c, single_mode_problem, mode="diagonal")
        assert diag == pytest.approx(2.5e-3, rel=1e-9)
        assert full == pytest.approx(5.0e-3, rel=1e-9)

    def test_zero_pulse(self, single_mode_problem):
        z = np.zeros(1)
        assert heating_error(z, z, single_mode_problem, "full") == 0.0
        assert heating_error(z, z, single_mode_problem, "diagonal") == 0.0

    def test_cross_terms_bounded_by_diagonal(self):
        rng = np.random.default_rng(14)
        for _ in range(100):
            spec = random_mode_spec(rng, int(rng.integers(2, 5)))
            basis = Basis(PIECEWISE, 8, spec.tau)
            problem = assemble_problem(spec, basis, GateSpec(1, 2, 1.0))
            c_p = rng.normal(size=8)
            c_q = rng.normal(size=8)
            e_pq = abs(c_p @ problem.C_pq @ c_q) + abs(c_q @ problem.C_pq @ c_p)
            e_diag = abs(c_p @ problem.C_pp @ c_p) + abs(c_q @ problem.C_qq @ c_q)
            assert e_pq <= e_diag + 1e-12 * max(e_diag, 1.0)

    def test_full_at_most_twice_diagonal(self):
        rng = np.random.default_rng(15)
        spec = random_mode_spec(rng, 3)
        basis = Basis(PIECEWISE, 9, spec.tau)
        problem = assemble_problem(spec, basis, GateSpec(1, 2, 1.0))
        for _ in range(20):
            c_p = rng.normal(size=9)
            c_q = rng.normal(size=9)
            full = heating_error(c_p, c_q, problem, "full")
            diag = heating_error(c_p, c_q, problem, "diagonal")
            assert full <= 2 * diag + 1e-12


class TestTrajectory:
    def test_starts_at_origin(self, single_mode_problem):
        wf = Waveform(single_mode_problem.basis, np.array([OMEGA]))
        s = trajectory(wf, 1, single_mode_problem.spec, np.array([0.0, TAU / 2, TAU]))
        assert s.alpha[0, 0] == 0.0

    def test_loop_closes_at_full_period(self, single_mode_problem):
        wf = Waveform(single_mode_problem.basis, np.array([OMEGA]))
        s = trajectory(wf, 1, single_mode_problem.spec, np.array([TAU]))
        assert abs(s.alpha[0, 0]) < 1e-12

    def test_against_analytic_midpoint(self, single_mode_problem):
        # alpha(t) = (eta b Omega / 2 Delta) * (e^{i Delta t} - 1)
        wf = Waveform(single_mode_problem.basis, np.array([OMEGA]))
        t = TAU / 3
        s = trajectory(wf, 2, single_mode_problem.spec, np.array([t]))
        expected = (0.1 * B * OMEGA / (2 * DELTA)) * (np.exp(1j * DELTA * t) - 1)
        assert s.alpha[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_linear_scaling(self, single_mode_problem):
        wf1 = Waveform(single_mode_problem.basis, np.array([OMEGA]))
        wf3 = Waveform(single_mode_problem.basis, np.array([3 * OMEGA]))
        grid = np.linspace(0, TAU, 7)
        a1 = trajectory(wf1, 1, single_mode_problem.spec, grid).alpha
        a3 = trajectory(wf3, 1, single_mode_problem.spec, grid).alpha
        assert np.allclose(a3, 3 * a1, rtol=1e-14, atol=1e-30)

    def test_export_format(self, tmp_path, single_mode_problem):
        wf = Waveform(single_mode_problem.basis, np.array([OMEGA]))
        s = trajectory(wf, 1, single_mode_problem.spec, np.linspace(0, TAU, 3))
        path = tmp_path / "traj.csv"
        export_trajectory(s, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t_s,mode_index,re_alpha,im_alpha"
        assert len(lines) == 1 + 3 * 1


class TestScalingLaws:
    def test_theta_heating_alpha_scaling(self):
        rng = np.random.default_rng(33)
        spec = random_mode_spec(rng, 2)
        basis = Basis(PIECEWISE, 6, spec.tau)
        problem = assemble_problem(spec, basis, GateSpec(1, 2, 1.0))
        c_p = rng.normal(size=6) * 1e5
        c_q = rng.normal(size=6) * 1e5
        s = 2.7
        th1 = rotation_angle(c_p, c_q, problem)
        th2 = rotation_angle(s * c_p, s * c_q, problem)
        assert th2 == pytest.approx(s * s * th1, rel=1e-14)
        e1 = heating_error(c_p, c_q, problem, "full")
        e2 = heating_error(s * c_p, s * c_q, problem, "full")
        assert e2 == pytest.approx(s * s * e1, rel=1e-14)
