"""Pulse synthesis: positive extraction and the PSD-QCQP solve.

The raw problem (minimize the heating bound subject to the rotation-angle
equality and the loop-closure/robustness kernels) is non-convex.  Two
reductions make it tractable:

1. the cross heating terms are dropped, leaving the PSD diagonal objective;
2. the angle matrix, projected onto the constraint kernel, has its negative
   eigenvalues sign-flipped into a PSD M_tilde, the flips being absorbed
   into per-ion reconstruction maps S_p = P and S_q = P F.

The remaining problem (min c^T H_tilde c subject to c^T M_tilde c = theta)
is solved exactly by whitening M_tilde and taking the bottom eigenvector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .assembly import AssembledProblem, GateSpec, heating_error, rotation_angle
from .basis import Waveform
from .errors import NumericalError, ValidationError

EIG_TOL = 1e-10  # relative threshold for rank cuts and sign decisions

HEATING_OPTIMAL = "heating_optimal"
MIN_RABI = "min_rabi"
CONVENTIONAL = "conventional"
METHODS = (HEATING_OPTIMAL, MIN_RABI, CONVENTIONAL)


@dataclass(frozen=True)
class ExtractionResult:
    """Kernel projector plus the sign-flipped angle matrix and its maps."""

    P: np.ndarray
    M_tilde: np.ndarray
    S_p: np.ndarray
    S_q: np.ndarray
    flip_signature: np.ndarray
    eig_tol: float
    eigenvalues: np.ndarray = field(repr=False, default=None)
    eigenvectors: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class SynthesisResult:
    """Synthesized coefficient vectors with solver diagnostics."""

    c: np.ndarray
    c_p: np.ndarray
    c_q: np.ndarray
    theta_achieved: float
    predicted_estimate: float
    lambda_min: float | None
    rabi_l2: float
    rabi_max: float
    method: str
    warnings: tuple = ()
    mu: float = float("nan")
    theta_target: float = float("nan")


def _canonical_columns(v: np.ndarray) -> np.ndarray:
    """Flip eigenvector signs so the largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(v), axis=0)
    flips = np.sign(v[idx, np.arange(v.shape[1])])
    flips[flips == 0] = 1.0
    return v * flips[None, :]


def kernel_projector(a: np.ndarray, a_diff: np.ndarray | None = None) -> np.ndarray:
    """Orthogonal projector onto the joint null space of the constraint rows.

    Complex rows are split into real and imaginary parts, so each mode
    contributes up to four real rows.  The rank cut uses the relative
    singular-value threshold EIG_TOL.
    """
    blocks = []
    for mat in (a, a_diff):
        if mat is None:
            continue
        mat = np.atleast_2d(np.asarray(mat))
        if mat.size == 0:
            continue
        blocks.append(mat.real)
        if np.iscomplexobj(mat):
            blocks.append(mat.imag)
    if not blocks:
        raise ValidationError("no constraint rows given")
    stacked = np.vstack(blocks)
    size = stacked.shape[1]
    kernel = scipy.linalg.null_space(stacked, rcond=EIG_TOL)
    if kernel.shape[1] == 0:
        rank = np.linalg.matrix_rank(stacked, tol=None)
        raise NumericalError(
            f"over-constrained: increase L (rank {rank} of {stacked.shape[0]} "
            f"rows at L={size} leaves an empty kernel)"
        )
    return kernel @ kernel.T


def positive_extract(p: np.ndarray, m: np.ndarray) -> ExtractionResult:
    """Sign-flip the eigenvalues of P M P to obtain a PSD angle matrix.

    F carries the flip signs; M_tilde = P M P F is PSD, and the pulse maps
    are S_p = P, S_q = P F.
    """
    m = np.asarray(m)
    if not np.allclose(m, m.T, rtol=0, atol=1e-12 * max(np.abs(m).max(), 1e-300)):
        raise ValidationError("angle matrix must be symmetric")
    pmp = p @ m @ p
    pmp = 0.5 * (pmp + pmp.T)
    lam, vec = np.linalg.eigh(pmp)
    vec = _canonical_columns(vec)
    tol = EIG_TOL * max(np.abs(lam).max(), 1e-300)
    signs = np.where(lam < -tol, -1.0, 1.0)
    flip = (vec * signs[None, :]) @ vec.T
    m_tilde = (vec * np.abs(lam)[None, :]) @ vec.T
    m_tilde = 0.5 * (m_tilde + m_tilde.T)
    return ExtractionResult(
        P=p,
        M_tilde=m_tilde,
        S_p=p,
        S_q=p @ flip,
        flip_signature=signs,
        eig_tol=EIG_TOL,
        eigenvalues=lam,
        eigenvectors=vec,
    )


def solve_psd_qcqp(h_tilde: np.ndarray, m_tilde: np.ndarray,
                   theta: float) -> tuple[np.ndarray, float]:
    """Minimize c^T H c subject to c^T M c = theta, both matrices PSD.

    M is whitened to the identity on its numerical range; the optimum is
    the bottom eigenvector of the whitened H, rescaled to the constraint.
    """
    if not theta > 0:
        raise ValidationError("target angle must be positive")
    lam, vec = np.linalg.eigh(0.5 * (m_tilde + m_tilde.T))
    lam_max = lam.max(initial=0.0)
    keep = lam > EIG_TOL * max(lam_max, 1e-300)
    if lam_max <= 0 or not np.any(keep):
        raise NumericalError("no angle-generating direction in kernel")
    white = _canonical_columns(vec[:, keep]) / np.sqrt(lam[keep])[None, :]
    hw = white.T @ h_tilde @ white
    hw = 0.5 * (hw + hw.T)
    nu, u = np.linalg.eigh(hw)
    lambda_min = float(nu[0])
    if lambda_min < -1e-10 * max(np.abs(nu).max(), 1e-300):
        raise NumericalError(f"objective lost positive semidefiniteness: {lambda_min:.3e}")
    direction = _canonical_columns(u[:, :1])[:, 0]
    c = np.sqrt(theta) * (white @ direction)
    achieved = float(c @ m_tilde @ c)
    if abs(achieved - theta) > 1e-10 * theta:
        raise NumericalError(
            f"constraint normalization failed: {achieved} vs {theta}"
        )
    return c, lambda_min


def _active_constraints(problem: AssembledProblem):
    """Drop rows of modes that neither driven ion participates in."""
    bp = problem.spec.vectors[:, problem.gate.p - 1]
    bq = problem.spec.vectors[:, problem.gate.q - 1]
    keep = (bp != 0.0) | (bq != 0.0)
    return problem.A[keep], problem.A_diff[keep]


def _residual_ok(rows: np.ndarray, c: np.ndarray) -> bool:
    norms = np.linalg.norm(rows, axis=1) * np.linalg.norm(c)
    res = np.abs(rows @ c)
    return bool(np.all(res <= 1e-9 * np.maximum(norms, 1e-300)))


def synthesize(problem: AssembledProblem, gate: GateSpec | None = None,
               method: str = HEATING_OPTIMAL) -> SynthesisResult:
    """Produce a pulse pair for the gate by the requested method.

    ``heating_optimal`` minimizes the diagonal heating bound,
    ``min_rabi`` the squared L2 norm of the drive, and ``conventional``
    projects the uniform waveform onto the constraint kernel without any
    further optimization.
    """
    if gate is None:
        gate = problem.gate
    elif (gate.p, gate.q) != (problem.gate.p, problem.gate.q):
        raise ValidationError("gate ions differ from the assembled problem")
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")

    notes = list(problem.warnings)
    theta = gate.theta_magnitude
    a, a_diff = _active_constraints(problem)
    projector = kernel_projector(a, a_diff)
    extraction = positive_extract(projector, problem.M)

    lambda_min: float | None
    if method == CONVENTIONAL:
        c0 = projector @ np.full(problem.size, 1.0 / np.sqrt(problem.size))
        theta0 = float(c0 @ problem.M @ c0)
        m_norm = np.linalg.norm(problem.M, 2)
        if abs(theta0) <= EIG_TOL * max(m_norm, 1e-300):
            k = int(np.argmax(np.abs(extraction.eigenvalues)))
            c0 = extraction.eigenvectors[:, k]
            theta0 = float(c0 @ problem.M @ c0)
            notes.append("uniform projection generates no angle; "
                         "fell back to the dominant kernel eigenvector")
        c0 = c0 * np.sqrt(theta / abs(theta0))
        c = c0
        c_p = c0
        c_q = np.sign(theta0) * c0
        lambda_min = None
    else:
        objective = problem.H_pp if method == HEATING_OPTIMAL else problem.G
        other = problem.H_qq if method == HEATING_OPTIMAL else problem.G
        h_tilde = (extraction.S_p.T @ objective @ extraction.S_p
                   + extraction.S_q.T @ other @ extraction.S_q)
        c, lambda_min = solve_psd_qcqp(h_tilde, extraction.M_tilde, theta)
        c_p = extraction.S_p @ c
        c_q = extraction.S_q @ c

    if gate.flip_q:
        c_q = -c_q
        notes.append("negative target angle realized by flipping ion q's pulse")

    theta_achieved = rotation_angle(c_p, c_q, problem)
    if abs(theta_achieved - gate.theta_target) > 1e-8 * abs(gate.theta_target):
        raise NumericalError(
            f"achieved angle {theta_achieved} misses target {gate.theta_target}"
        )
    stacked = np.vstack([a.real, a.imag, a_diff.real, a_diff.imag])
    if not (_residual_ok(stacked, c_p) and _residual_ok(stacked, c_q)):
        raise NumericalError("constraint residuals exceed tolerance")

    wf_p = Waveform(problem.basis, c_p)
    wf_q = Waveform(problem.basis, c_q)
    return SynthesisResult(
        c=c,
        c_p=c_p,
        c_q=c_q,
        theta_achieved=theta_achieved,
        predicted_estimate=heating_error(c_p, c_q, problem, "diagonal"),
        lambda_min=lambda_min,
        rabi_l2=wf_p.l2_norm_sq() + wf_q.l2_norm_sq(),
        rabi_max=max(wf_p.max_abs(), wf_q.max_abs()),
        method=method,
        warnings=tuple(notes),
        mu=problem.spec.mu,
        theta_target=gate.theta_target,
    )


# -- single-mode polychromatic reduction --------------------------------------

@dataclass(frozen=True)
class FourierCompareResult:
    """Reduced single-mode problem solved two ways, plus the one-tone baseline."""

    coeffs: np.ndarray
    coeffs_prior: np.ndarray | None
    heating: float
    heating_prior: float | None
    single_tone_heating: float
    improvement: float
    improvement_prior: float | None
    notes: tuple = ()


def _fourier_heating(c: np.ndarray, gamma: float, delta: float) -> float:
    ls = np.arange(1, c.size + 1)
    return float(gamma * (2 * np.pi / delta)
                 * (np.sum(c ** 2 / ls ** 2) + np.sum(c / ls) ** 2))


def single_mode_fourier_compare(size: int, theta: float, gamma: float,
                                delta_fund: float) -> FourierCompareResult:
    """Compare the reduced heating objective with the hard-constraint variant.

    Both problems share the angle constraint 4 pi sum c_l^2 / l = theta
    with gate duration 2 pi / delta_fund; the variant adds the linear
    constraint sum c_l / l = 0 instead of penalizing that term.
    """
    if size < 1:
        raise ValidationError("need at least one tone")
    if not (theta > 0 and gamma >= 0 and delta_fund > 0):
        raise ValidationError("theta and delta_fund must be positive, gamma >= 0")
    ls = np.arange(1, size + 1, dtype=float)
    d = 1.0 / ls
    h_ours = np.diag(d ** 2) + np.outer(d, d)
    m_c = np.diag(4 * np.pi * d)
    c_ours, _ = solve_psd_qcqp(h_ours, m_c, theta)
    e_ours = _fourier_heating(c_ours, gamma, delta_fund)

    e_single = gamma * (2 * np.pi / delta_fund) * 2 * (theta / (4 * np.pi))
    notes = []

    if size == 1:
        notes.append("prior method infeasible at L=1: the zero-sum constraint "
                     "forces c = 0")
        c_prior = None
        e_prior = None
        imp_prior = None
    else:
        p_d = np.eye(size) - np.outer(d, d) / (d @ d)
        c_prior, _ = solve_psd_qcqp(p_d @ np.diag(d ** 2) @ p_d,
                                    p_d @ m_c @ p_d, theta)
        c_prior = p_d @ c_prior
        e_prior = _fourier_heating(c_prior, gamma, delta_fund)
        imp_prior = e_single / e_prior

    return FourierCompareResult(
        coeffs=c_ours,
        coeffs_prior=c_prior,
        heating=e_ours,
        heating_prior=e_prior,
        single_tone_heating=e_single,
        improvement=e_single / e_ours,
        improvement_prior=imp_prior,
        notes=tuple(notes),
    )


# -- result files --------------------------------------------------------------

def save_synthesis_result(result: SynthesisResult, path) -> None:
    doc = {
        "method": result.method,
        "mu_rad_per_s": result.mu,
        "theta_target": result.theta_target,
        "theta_achieved": result.theta_achieved,
        "lambda_min": result.lambda_min,
        "predicted_estimate": result.predicted_estimate,
        "rabi_l2": result.rabi_l2,
        "rabi_max": result.rabi_max,
        "c_p": [float(x) for x in result.c_p],
        "c_q": [float(x) for x in result.c_q],
        "warnings": list(result.warnings),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
