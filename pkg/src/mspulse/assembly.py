"""Matrix assembly for a (ModeSpec, Basis, ion pair) triple.

For real coefficient vectors c_p, c_q the relevant quantities are

    rotation angle   c_p^T M c_q
    heating terms    E_{j1 j2} = c_{j1}^T C^{(j1 j2)} c_{j2}
    loop closure     A c = 0      (one row per mode)
    loop robustness  A_diff c = 0

M has a closed form for the piecewise basis.  The heating kernels C are
Hermitian time integrals of partial-moment outer products, evaluated by
composite Gauss-Legendre quadrature per basis segment with refinement.
Only the real symmetric parts H = Re(C) enter quadratic forms with real
vectors; the complex kernels are kept for the cross-term moduli.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import PIECEWISE, Basis, Waveform
from .errors import NumericalError, ValidationError
from .modes import ModeSpec


@dataclass(frozen=True)
class GateSpec:
    """Driven ion pair (1-based indices) and target rotation angle."""

    p: int
    q: int
    theta_target: float

    def __post_init__(self):
        if self.p == self.q:
            raise ValidationError("gate needs two distinct ions")
        if self.p < 1 or self.q < 1:
            raise ValidationError("ion indices are 1-based")
        if self.theta_target == 0:
            raise ValidationError("target angle must be nonzero")

    @property
    def flip_q(self) -> bool:
        """True when the negative target is realized by flipping ion q's pulse."""
        return self.theta_target < 0

    @property
    def theta_magnitude(self) -> float:
        return abs(self.theta_target)


@dataclass(frozen=True)
class TrajectorySample:
    """Phase-space trajectory alpha[mode, instant] on a time grid."""

    times: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        alpha = np.asarray(self.alpha, dtype=complex)
        if alpha.shape[1] != times.size:
            raise ValidationError("alpha and times shapes disagree")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValidationError("time grid must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True)
class AssembledProblem:
    """All matrices needed to synthesize and score pulses for one gate."""

    A: np.ndarray
    A_diff: np.ndarray
    M: np.ndarray
    H_pp: np.ndarray
    H_qq: np.ndarray
    H_pq: np.ndarray
    G: np.ndarray
    spec: ModeSpec
    basis: Basis
    gate: GateSpec
    C_pp: np.ndarray = field(repr=False, default=None)
    C_qq: np.ndarray = field(repr=False, default=None)
    C_pq: np.ndarray = field(repr=False, default=None)
    warnings: tuple = ()

    @property
    def size(self) -> int:
        return self.basis.size


def _check_pair(spec: ModeSpec, basis: Basis) -> None:
    if spec.tau != basis.duration:
        raise ValidationError(
            f"spec tau {spec.tau} does not match basis duration {basis.duration}"
        )


def _require_piecewise(basis: Basis, what: str) -> None:
    if basis.kind != PIECEWISE:
        raise ValidationError(f"{what} is implemented for the piecewise basis only")


def assemble_constraints(spec: ModeSpec, basis: Basis):
    """Loop-closure matrix A and its detuning derivative A_diff (N x L).

    Row m of A is moment0(Delta_m); row m of A_diff is moment1(Delta_m).
    The physically present prefactor (i/2) eta_m b_j^m is nonzero and drops
    out of the kernel conditions, so rows are stored without it.
    """
    _check_pair(spec, basis)
    a = np.array([basis.moment0(d) for d in spec.detunings])
    a_diff = np.array([basis.moment1(d) for d in spec.detunings])
    return a, a_diff


def _q_func(x):
    """(x - sin x) / x**2 with a series branch near 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 0.1
    xs = x[small]
    x2 = xs * xs
    out[small] = xs * (1.0 / 6.0 + x2 * (-1.0 / 120.0 + x2 * (1.0 / 5040.0 - x2 / 362880.0)))
    xl = x[~small]
    out[~small] = (xl - np.sin(xl)) / (xl * xl)
    return out


def _angle_kernel(basis: Basis, delta: float) -> np.ndarray:
    """Ordered-time sine kernel summed over both argument orders (L x L)."""
    h = basis.duration / basis.size
    mids = 0.5 * (basis.edges[:-1] + basis.edges[1:])
    gaps = np.abs(mids[:, None] - mids[None, :])
    sinc = np.sinc(delta * h / (2.0 * np.pi))
    kern = h * h * sinc * sinc * np.sin(delta * gaps)
    np.fill_diagonal(kern, 2.0 * h * h * _q_func(np.full(basis.size, delta * h)))
    return kern


def assemble_M(spec: ModeSpec, basis: Basis, gate: GateSpec) -> np.ndarray:
    """Rotation-angle matrix M (real symmetric L x L), closed form."""
    _check_pair(spec, basis)
    _require_piecewise(basis, "the angle matrix")
    bp = spec.vectors[:, gate.p - 1]
    bq = spec.vectors[:, gate.q - 1]
    m = np.zeros((basis.size, basis.size))
    for mode in range(spec.num_modes):
        w = 0.25 * spec.etas[mode] ** 2 * bp[mode] * bq[mode]
        if w != 0.0:
            m += w * _angle_kernel(basis, spec.detunings[mode])
    return 0.5 * (m + m.T)


def _heating_gram(basis: Basis, delta: float, rtol: float = 1e-10,
                  start_order: int = 8, max_order: int = 128) -> np.ndarray:
    """Q = int_0^tau conj(P(t)) P(t)^T dt with P the partial moments.

    Composite Gauss-Legendre per basis segment, order doubled until the
    matrix settles to ``rtol`` in Frobenius norm.
    """
    edges = basis.edges
    prev = None
    order = start_order
    while order <= max_order:
        nodes, weights = np.polynomial.legendre.leggauss(order)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        ts = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
        ws = (half[:, None] * weights[None, :]).ravel()
        p = basis.partial_moment_grid(delta, ts)
        q = (p.conj() * ws[:, None]).T @ p
        if prev is not None:
            scale = np.linalg.norm(q)
            if np.linalg.norm(q - prev) <= rtol * max(scale, 1e-300):
                return q
        prev = q
        order *= 2
    raise NumericalError(
        f"heating kernel quadrature did not converge at delta={delta:.6e}"
    )


def _heating_kernels(spec: ModeSpec, basis: Basis, gate: GateSpec):
    """Complex Hermitian kernels C_pp, C_qq, C_pq."""
    bp = spec.vectors[:, gate.p - 1]
    bq = spec.vectors[:, gate.q - 1]
    size = basis.size
    c_pp = np.zeros((size, size), dtype=complex)
    c_qq = np.zeros((size, size), dtype=complex)
    c_pq = np.zeros((size, size), dtype=complex)
    for mode in range(spec.num_modes):
        rate = spec.gamma_up[mode] + spec.gamma_down[mode]
        if rate == 0.0:
            continue
        w = 0.25 * rate * spec.etas[mode] ** 2
        q = _heating_gram(basis, spec.detunings[mode])
        c_pp += w * bp[mode] ** 2 * q
        c_qq += w * bq[mode] ** 2 * q
        c_pq += w * bp[mode] * bq[mode] * q
    return c_pp, c_qq, c_pq


def _real_symmetric(c: np.ndarray) -> np.ndarray:
    return 0.5 * (c.real + c.real.T)


def assemble_H(spec: ModeSpec, basis: Basis, gate: GateSpec,
               j1: int, j2: int) -> np.ndarray:
    """Real symmetric heating-cost matrix for the ion pair (j1, j2).

    j1, j2 must each be gate.p or gate.q.  The returned matrix is the real
    symmetric part of the complex Hermitian kernel, which is exact inside
    quadratic forms with real coefficient vectors.
    """
    _check_pair(spec, basis)
    _require_piecewise(basis, "the heating cost matrix")
    for j in (j1, j2):
        if j not in (gate.p, gate.q):
            raise ValidationError(f"ion {j} is not part of the gate ({gate.p},{gate.q})")
    b1 = spec.vectors[:, j1 - 1]
    b2 = spec.vectors[:, j2 - 1]
    size = basis.size
    c = np.zeros((size, size), dtype=complex)
    for mode in range(spec.num_modes):
        rate = spec.gamma_up[mode] + spec.gamma_down[mode]
        if rate == 0.0:
            continue
        w = 0.25 * rate * spec.etas[mode] ** 2 * b1[mode] * b2[mode]
        if w != 0.0:
            c += w * _heating_gram(basis, spec.detunings[mode])
    return _real_symmetric(c)


def assemble_problem(spec: ModeSpec, basis: Basis, gate: GateSpec) -> AssembledProblem:
    """Build every matrix needed downstream, sharing the per-mode quadratures."""
    _check_pair(spec, basis)
    _require_piecewise(basis, "problem assembly")
    n_ions = spec.vectors.shape[1]
    if gate.p > n_ions or gate.q > n_ions:
        raise ValidationError(
            f"gate ions ({gate.p},{gate.q}) exceed the chain size {n_ions}"
        )
    a, a_diff = assemble_constraints(spec, basis)
    m = assemble_M(spec, basis, gate)
    c_pp, c_qq, c_pq = _heating_kernels(spec, basis, gate)
    notes = []
    if np.any(spec.detunings == 0.0):
        resonant = np.nonzero(spec.detunings == 0.0)[0]
        notes.append(f"resonant modes at indices {resonant.tolist()}")
    return AssembledProblem(
        A=a,
        A_diff=a_diff,
        M=m,
        H_pp=_real_symmetric(c_pp),
        H_qq=_real_symmetric(c_qq),
        H_pq=_real_symmetric(c_pq),
        G=basis.gram(),
        spec=spec,
        basis=basis,
        gate=gate,
        C_pp=c_pp,
        C_qq=c_qq,
        C_pq=c_pq,
        warnings=tuple(notes),
    )


def trajectory(waveform: Waveform, ion: int, spec: ModeSpec,
               grid: np.ndarray) -> TrajectorySample:
    """Phase-space trajectory alpha_ion^m(t) of every mode on a time grid.

    alpha = (i/2) eta_m b_ion^m  *  (c . partial_moment(Delta_m, t)).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size and (grid.min() < 0 or grid.max() > spec.tau):
        raise ValidationError("trajectory grid outside [0, tau]")
    if ion < 1 or ion > spec.vectors.shape[1]:
        raise ValidationError(f"ion index {ion} out of range")
    alpha = np.empty((spec.num_modes, grid.size), dtype=complex)
    for mode in range(spec.num_modes):
        p = waveform.basis.partial_moment_grid(spec.detunings[mode], grid)
        alpha[mode] = (
            0.5j * spec.etas[mode] * spec.vectors[mode, ion - 1] * (p @ waveform.coeffs)
        )
    return TrajectorySample(times=grid, alpha=alpha)


def rotation_angle(c_p: np.ndarray, c_q: np.ndarray,
                   problem: AssembledProblem) -> float:
    """Accumulated two-qubit rotation angle c_p^T M c_q."""
    return float(np.asarray(c_p) @ problem.M @ np.asarray(c_q))


def heating_error(c_p: np.ndarray, c_q: np.ndarray, problem: AssembledProblem,
                  mode: str = "full") -> float:
    """Heating-induced infidelity bound for a pulse pair.

    ``full``     : |E_pp| + |E_qq| + |E_pq| + |E_qp| using the complex kernels.
    ``diagonal`` : E_pp + E_qq, the PSD objective used for synthesis.
    """
    c_p = np.asarray(c_p, dtype=float)
    c_q = np.asarray(c_q, dtype=float)
    if mode == "diagonal":
        return float(c_p @ problem.H_pp @ c_p + c_q @ problem.H_qq @ c_q)
    if mode != "full":
        raise ValidationError(f"unknown heating error mode {mode!r}")
    e_pp = abs(c_p @ problem.C_pp @ c_p)
    e_qq = abs(c_q @ problem.C_qq @ c_q)
    e_pq = abs(c_p @ problem.C_pq @ c_q)
    e_qp = abs(c_q @ problem.C_pq @ c_p)
    return float(e_pp + e_qq + e_pq + e_qp)


def export_trajectory(sample: TrajectorySample, path) -> None:
    """Write a trajectory as CSV rows t_s,mode_index,re_alpha,im_alpha."""
    with open(path, "w") as fh:
        fh.write("t_s,mode_index,re_alpha,im_alpha\n")
        for k, t in enumerate(sample.times):
            for mode in range(sample.alpha.shape[0]):
                a = sample.alpha[mode, k]
                fh.write(f"{float(t)!r},{mode},{a.real!r},{a.imag!r}\n")
