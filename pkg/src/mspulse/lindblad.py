"""Open-system verification of pulse pairs on a truncated Fock space.

The simulated system is the two driven spins (the undriven ones commute
with everything and stay in product form) tensored with all N motional
modes, each truncated at n_cut quanta.  The master equation

    drho/dt = -i [H(t), rho]
              + sum_m Gamma_up_m D_m^dag(rho) + Gamma_down_m D_m(rho)

is integrated with classic fixed-step fourth-order Runge-Kutta, steps
aligned to the piecewise-pulse segments.

Internally the two spins are rotated into their X eigenbasis, where H(t)
is block diagonal with phonon-only blocks and the dissipators act within
each of the 16 spin blocks; the stored state is the dense density matrix
in that frame (10 independent blocks, the rest fixed by Hermiticity).
The returned density operator is always in the computational basis.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import json
import numpy as np
import scipy.sparse as sp

from ._kernels import (
    axpy,
    conj_transpose,
    finish_commutator,
    ladder_apply,
    ladder_apply_vec,
    rk4_update,
    sandwich,
)
from .assembly import GateSpec
from .basis import PIECEWISE, Waveform
from .errors import NumericalError, ValidationError
from .modes import ModeSpec

VACUUM = "vacuum"
ZERO_ZERO = "zero_zero"
PLUS_PLUS = "plus_plus"

_SIGN_P = np.array([1.0, 1.0, -1.0, -1.0])
_SIGN_Q = np.array([1.0, -1.0, 1.0, -1.0])
_BLOCK_PAIRS = [(a, b) for a in range(4) for b in range(a, 4)]

# Hadamard on each driven spin: computational <-> X eigenbasis
_R_SPIN = 0.5 * np.array([
    [1, 1, 1, 1],
    [1, -1, 1, -1],
    [1, 1, -1, -1],
    [1, -1, -1, 1],
], dtype=float)


@dataclass(frozen=True)
class SimConfig:
    """Integrator and initial-state choices for one simulation."""

    n_cut: int = 10
    dt: float | str = "auto"
    initial_spin: object = ZERO_ZERO   # or PLUS_PLUS, or a 4-vector
    initial_phonon: object = VACUUM    # or per-mode thermal occupations
    leakage_threshold: float = 1e-4
    memory_budget: int = 4 << 30

    def __post_init__(self):
        if self.n_cut < 1:
            raise ValidationError("n_cut must be at least 1")
        if isinstance(self.dt, str) and self.dt != "auto":
            raise ValidationError(f"dt must be a number or 'auto', got {self.dt!r}")
        if not isinstance(self.dt, str) and not self.dt > 0:
            raise ValidationError("dt must be positive")
        if isinstance(self.initial_spin, str):
            if self.initial_spin not in (ZERO_ZERO, PLUS_PLUS):
                raise ValidationError(f"unknown initial spin {self.initial_spin!r}")
        else:
            vec = np.asarray(self.initial_spin, dtype=complex)
            if vec.shape != (4,) or not np.isfinite(vec).all():
                raise ValidationError("custom initial spin must be a finite 4-vector")
            norm = np.linalg.norm(vec)
            if norm == 0:
                raise ValidationError("initial spin vector must be nonzero")
            object.__setattr__(self, "initial_spin", vec / norm)
        if not isinstance(self.initial_phonon, str):
            nbar = np.asarray(self.initial_phonon, dtype=float)
            if np.any(nbar < 0):
                raise ValidationError("thermal occupations must be nonnegative")
            object.__setattr__(self, "initial_phonon", nbar)
        elif self.initial_phonon != VACUUM:
            raise ValidationError(f"unknown initial phonon state {self.initial_phonon!r}")


@dataclass(frozen=True)
class SimReport:
    """Verification outcome of one pulse pair."""

    infidelity: float
    trace_residual: float
    min_eig: float
    leakage: float
    steps: int
    elapsed: float
    n_cut: int
    dt: float
    initial_spin: str
    initial_phonon: str
    fidelity_definition: str = "squared-uhlmann"
    warnings: tuple = ()


@dataclass
class GeneratorBundle:
    """Precomputed operators and schedule for one (spec, pulses, gate) triple."""

    spec: ModeSpec
    gate: GateSpec
    sim: SimConfig
    deltas: np.ndarray
    vp_base: np.ndarray          # (i/2) eta_m b_p^m per mode
    vq_base: np.ndarray
    omega_p: np.ndarray          # per-segment Rabi values, rad/s
    omega_q: np.ndarray
    seg_edges: np.ndarray
    steps_per_seg: np.ndarray
    dt: float
    n_levels: int
    d_ph: int
    offsets: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    sq: np.ndarray
    dvec: np.ndarray
    leak_masks: list
    pure_initial: bool
    _full_ops: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return 4 * self.d_ph

    # -- full-space sparse operators (reference representation) -------------

    def _phonon_lowering(self, mode: int):
        nm = self.n_levels
        n = self.spec.num_modes
        a_single = sp.diags(np.sqrt(np.arange(1, nm)), offsets=1, format="csr")
        left = sp.identity(nm ** mode, format="csr")
        right = sp.identity(nm ** (n - 1 - mode), format="csr")
        return sp.kron(sp.kron(left, a_single), right, format="csr")

    def spin_phonon_ops(self):
        """sigma_j (x) a_m and sigma_j (x) a_m^dag blocks, keyed (ion, mode, kind)."""
        if "ops" not in self._full_ops:
            pauli_x = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
            eye2 = sp.identity(2, format="csr")
            sigma = {"p": sp.kron(pauli_x, eye2), "q": sp.kron(eye2, pauli_x)}
            ops = {}
            for mode in range(self.spec.num_modes):
                a_full = self._phonon_lowering(mode)
                for ion in ("p", "q"):
                    ops[ion, mode, "a"] = sp.kron(sigma[ion], a_full, format="csr")
                    ops[ion, mode, "adag"] = sp.kron(
                        sigma[ion], a_full.conj().T, format="csr"
                    )
            self._full_ops["ops"] = ops
        return self._full_ops["ops"]

    def lowering_operators(self):
        """Full-space a_m (identity on spins), one per mode."""
        if "lowering" not in self._full_ops:
            eye4 = sp.identity(4, format="csr")
            self._full_ops["lowering"] = [
                sp.kron(eye4, self._phonon_lowering(m), format="csr")
                for m in range(self.spec.num_modes)
            ]
        return self._full_ops["lowering"]

    def _segment_of(self, t: float) -> int:
        idx = int(np.searchsorted(self.seg_edges, t, side="right")) - 1
        return min(max(idx, 0), self.omega_p.size - 1)

    def hamiltonian(self, t: float):
        """H(t) as a sparse matrix on the full spin (x) phonon space."""
        seg = self._segment_of(t)
        ops = self.spin_phonon_ops()
        phases = np.exp(1j * self.deltas * t)
        h = None
        for mode in range(self.spec.num_modes):
            for ion, base, om in (("p", self.vp_base, self.omega_p[seg]),
                                  ("q", self.vq_base, self.omega_q[seg])):
                z = base[mode] * om * phases[mode]
                term = z * ops[ion, mode, "adag"] + np.conj(z) * ops[ion, mode, "a"]
                h = term if h is None else h + term
        return h


def build_generators(spec: ModeSpec, pulses: tuple[Waveform, Waveform],
                     gate: GateSpec, sim: SimConfig) -> GeneratorBundle:
    """Precompute everything evolve() needs; fails fast on budget overruns."""
    wf_p, wf_q = pulses
    if wf_p.basis != wf_q.basis:
        raise ValidationError("the two pulses must share one basis")
    if wf_p.basis.kind != PIECEWISE:
        raise ValidationError("simulation supports piecewise pulses only")
    if wf_p.basis.duration != spec.tau:
        raise ValidationError("pulse duration does not match the mode spec")
    if max(gate.p, gate.q) > spec.num_ions:
        raise ValidationError("gate ions exceed the chain size")

    n = spec.num_modes
    nm = sim.n_cut + 1
    d_ph = nm ** n
    # state blocks + RK4 temporaries + two full-space copies for the return value
    required = 16 * d_ph ** 2 * (len(_BLOCK_PAIRS) + 4 + 3) + 2 * 16 * (4 * d_ph) ** 2
    if required > sim.memory_budget:
        raise NumericalError(
            f"Hilbert dimension {4 * d_ph} needs about {required} bytes, "
            f"over the budget of {sim.memory_budget}"
        )

    max_delta = float(np.max(np.abs(spec.detunings))) if n else 0.0
    max_omega = max(wf_p.max_abs(), wf_q.max_abs())
    if isinstance(sim.dt, str):
        candidates = [spec.tau / 20.0]
        if max_delta > 0:
            candidates.append(2 * np.pi / max_delta / 20.0)
        if max_omega > 0:
            candidates.append(1.0 / max_omega / 20.0)
        dt = min(candidates)
    else:
        dt = float(sim.dt)

    edges = wf_p.basis.edges
    seg_len = np.diff(edges)
    steps_per_seg = np.maximum(np.ceil(seg_len / dt - 1e-12), 1).astype(int)

    strides = nm ** (n - 1 - np.arange(n))
    idx = np.arange(d_ph)
    occ = (idx[None, :] // strides[:, None]) % nm
    src_parts, dst_parts, sq_parts, leak_masks = [], [], [], []
    offsets = [0]
    for mode in range(n):
        mask = occ[mode] >= 1
        src_m = idx[mask]
        src_parts.append(src_m)
        dst_parts.append(src_m - strides[mode])
        sq_parts.append(np.sqrt(occ[mode][mask].astype(float)))
        offsets.append(offsets[-1] + src_m.size)
        leak_masks.append(idx[occ[mode] == sim.n_cut])
    dvec = (spec.gamma_up @ (occ + 1.0)) + (spec.gamma_down @ occ.astype(float))

    pure_spin = isinstance(sim.initial_spin, (str, np.ndarray))
    pure_phonon = isinstance(sim.initial_phonon, str)
    return GeneratorBundle(
        spec=spec,
        gate=gate,
        sim=sim,
        deltas=spec.detunings.copy(),
        vp_base=0.5j * spec.etas * spec.vectors[:, gate.p - 1],
        vq_base=0.5j * spec.etas * spec.vectors[:, gate.q - 1],
        omega_p=wf_p.coeffs.copy(),
        omega_q=wf_q.coeffs.copy(),
        seg_edges=edges,
        steps_per_seg=steps_per_seg,
        dt=dt,
        n_levels=nm,
        d_ph=d_ph,
        offsets=np.array(offsets, dtype=np.int64),
        src=np.concatenate(src_parts) if n else np.zeros(0, dtype=np.int64),
        dst=np.concatenate(dst_parts) if n else np.zeros(0, dtype=np.int64),
        sq=np.concatenate(sq_parts) if n else np.zeros(0, dtype=float),
        dvec=dvec.astype(float),
        leak_masks=leak_masks,
        pure_initial=pure_spin and pure_phonon,
    )


def _initial_spin_vector(sim: SimConfig) -> np.ndarray:
    if isinstance(sim.initial_spin, str):
        if sim.initial_spin == ZERO_ZERO:
            return np.array([1.0, 0.0, 0.0, 0.0], dtype=complex)
        return np.full(4, 0.5, dtype=complex)
    return sim.initial_spin.astype(complex)


def _initial_phonon_diag(bundle: GeneratorBundle) -> np.ndarray:
    """Diagonal of the initial phonon density matrix."""
    sim = bundle.sim
    if isinstance(sim.initial_phonon, str):
        w = np.zeros(bundle.d_ph)
        w[0] = 1.0
        return w
    nbar = np.asarray(sim.initial_phonon, dtype=float)
    if nbar.shape != (bundle.spec.num_modes,):
        raise ValidationError(
            f"thermal occupations need {bundle.spec.num_modes} entries"
        )
    nm = bundle.n_levels
    n = bundle.spec.num_modes
    strides = nm ** (n - 1 - np.arange(n))
    occ = (np.arange(bundle.d_ph)[None, :] // strides[:, None]) % nm
    w = np.ones(bundle.d_ph)
    for mode in range(n):
        ratio = nbar[mode] / (1.0 + nbar[mode]) if nbar[mode] > 0 else 0.0
        per_level = (1.0 - ratio) * ratio ** np.arange(nm)
        per_level /= per_level.sum()  # renormalized on the truncated space
        w *= per_level[occ[mode]]
    return w


class _Monitor:
    """Running diagnostics shared by both integrator paths."""

    def __init__(self, n_modes):
        self.leakage = np.zeros(n_modes)
        self.steps = 0

    def update_leakage(self, per_mode):
        np.maximum(self.leakage, per_mode, out=self.leakage)

    @property
    def max_leakage(self) -> float:
        return float(self.leakage.max()) if self.leakage.size else 0.0


def _block_leakage(bundle, diag_blocks):
    out = np.empty(len(bundle.leak_masks))
    for m, mask in enumerate(bundle.leak_masks):
        out[m] = sum(block[mask, mask].real.sum() for block in diag_blocks)
    return out


def _evolve_matrix(bundle: GeneratorBundle, noisy: bool, monitor: _Monitor):
    d = bundle.d_ph
    npairs = len(_BLOCK_PAIRS)
    spin_x = _R_SPIN @ np.outer(_initial_spin_vector(bundle.sim),
                                _initial_spin_vector(bundle.sim).conj()) @ _R_SPIN
    ph_diag = _initial_phonon_diag(bundle)

    y = np.zeros((npairs, d, d), dtype=complex)
    for bi, (a, b) in enumerate(_BLOCK_PAIRS):
        y[bi][np.diag_indices(d)] = spin_x[a, b] * ph_diag

    k1, k2, k3, k4, ytmp = (np.empty_like(y) for _ in range(5))
    u = np.empty((d, d), dtype=complex)
    v = np.empty((d, d), dtype=complex)
    bd = np.empty((d, d), dtype=complex)
    z_p = np.empty(bundle.spec.num_modes, dtype=complex)
    z_q = np.empty(bundle.spec.num_modes, dtype=complex)
    noisy_flag = bool(noisy and (np.any(bundle.spec.gamma_up > 0)
                                 or np.any(bundle.spec.gamma_down > 0)))

    def rhs(t, state, out, vp_seg, vq_seg):
        phases = np.exp(1j * bundle.deltas * t)
        np.multiply(vp_seg, phases, out=z_p)
        np.multiply(vq_seg, phases, out=z_q)
        for bi, (a, b) in enumerate(_BLOCK_PAIRS):
            w_a = _SIGN_P[a] * z_p + _SIGN_Q[a] * z_q
            w_b = _SIGN_P[b] * z_p + _SIGN_Q[b] * z_q
            u.fill(0)
            ladder_apply(bundle.offsets, bundle.src, bundle.dst, bundle.sq,
                         w_a, state[bi], u)
            conj_transpose(state[bi], bd)
            v.fill(0)
            ladder_apply(bundle.offsets, bundle.src, bundle.dst, bundle.sq,
                         w_b, bd, v)
            finish_commutator(u, v, state[bi], bundle.dvec, noisy_flag, out[bi])
            if noisy_flag:
                for m in range(bundle.spec.num_modes):
                    lo, hi = bundle.offsets[m], bundle.offsets[m + 1]
                    sandwich(bundle.src[lo:hi], bundle.dst[lo:hi],
                             bundle.sq[lo:hi], bundle.spec.gamma_up[m],
                             bundle.spec.gamma_down[m], state[bi], out[bi])

    diag_ids = [bi for bi, (a, b) in enumerate(_BLOCK_PAIRS) if a == b]
    for seg in range(bundle.omega_p.size):
        vp_seg = bundle.vp_base * bundle.omega_p[seg]
        vq_seg = bundle.vq_base * bundle.omega_q[seg]
        nsteps = int(bundle.steps_per_seg[seg])
        h = (bundle.seg_edges[seg + 1] - bundle.seg_edges[seg]) / nsteps
        t0 = bundle.seg_edges[seg]
        for i in range(nsteps):
            t = t0 + i * h
            rhs(t, y, k1, vp_seg, vq_seg)
            axpy(0.5 * h, k1, y, ytmp)
            rhs(t + 0.5 * h, ytmp, k2, vp_seg, vq_seg)
            axpy(0.5 * h, k2, y, ytmp)
            rhs(t + 0.5 * h, ytmp, k3, vp_seg, vq_seg)
            axpy(h, k3, y, ytmp)
            rhs(t + h, ytmp, k4, vp_seg, vq_seg)
            rk4_update(y, k1, k2, k3, k4, h)
            monitor.steps += 1
            monitor.update_leakage(_block_leakage(bundle, [y[bi] for bi in diag_ids]))
            if monitor.steps % 100 == 0:
                for bi in diag_ids:
                    y[bi] = 0.5 * (y[bi] + y[bi].conj().T)
                tr = sum(np.trace(y[bi]).real for bi in diag_ids)
                if not np.isfinite(tr):
                    raise NumericalError("integrator produced a non-finite trace")
                if abs(tr - 1.0) > 1e-6:
                    raise NumericalError(
                        f"trace drifted to {tr} after {monitor.steps} steps"
                    )

    full = np.zeros((4, d, 4, d), dtype=complex)
    for bi, (a, b) in enumerate(_BLOCK_PAIRS):
        full[a, :, b, :] = y[bi]
        if a != b:
            full[b, :, a, :] = y[bi].conj().T
    rho_z = np.einsum("ac,cmdn,db->ambn", _R_SPIN, full, _R_SPIN, optimize=True)
    return rho_z.reshape(4 * d, 4 * d)


def _evolve_pure(bundle: GeneratorBundle, monitor: _Monitor):
    d = bundle.d_ph
    psi_x = _R_SPIN @ _initial_spin_vector(bundle.sim)
    psi = np.zeros((4, d), dtype=complex)
    psi[:, 0] = psi_x

    k = [np.empty(d, dtype=complex) for _ in range(4)]
    tmp = np.empty(d, dtype=complex)

    def deriv(t, vec, s, vp_seg, vq_seg):
        phases = np.exp(1j * bundle.deltas * t)
        w = _SIGN_P[s] * (vp_seg * phases) + _SIGN_Q[s] * (vq_seg * phases)
        tmp.fill(0)
        ladder_apply_vec(bundle.offsets, bundle.src, bundle.dst, bundle.sq,
                         w, vec, tmp)
        return -1j * tmp

    for seg in range(bundle.omega_p.size):
        vp_seg = bundle.vp_base * bundle.omega_p[seg]
        vq_seg = bundle.vq_base * bundle.omega_q[seg]
        nsteps = int(bundle.steps_per_seg[seg])
        h = (bundle.seg_edges[seg + 1] - bundle.seg_edges[seg]) / nsteps
        t0 = bundle.seg_edges[seg]
        for i in range(nsteps):
            t = t0 + i * h
            for s in range(4):
                k1 = deriv(t, psi[s], s, vp_seg, vq_seg)
                k2 = deriv(t + 0.5 * h, psi[s] + 0.5 * h * k1, s, vp_seg, vq_seg)
                k3 = deriv(t + 0.5 * h, psi[s] + 0.5 * h * k2, s, vp_seg, vq_seg)
                k4 = deriv(t + h, psi[s] + h * k3, s, vp_seg, vq_seg)
                psi[s] += (h / 6.0) * (k1 + 2 * (k2 + k3) + k4)
            monitor.steps += 1
            leak = np.array([
                sum(np.abs(psi[s][mask]) ** 2 for s in range(4)).sum()
                for mask in bundle.leak_masks
            ])
            monitor.update_leakage(leak)
            if monitor.steps % 100 == 0:
                norm = np.sum(np.abs(psi) ** 2)
                if not np.isfinite(norm):
                    raise NumericalError("integrator produced a non-finite norm")
                if abs(norm - 1.0) > 1e-6:
                    raise NumericalError(
                        f"norm drifted to {norm} after {monitor.steps} steps"
                    )

    full = np.einsum("am,bn->ambn", psi, psi.conj())
    rho_z = np.einsum("ac,cmdn,db->ambn", _R_SPIN, full, _R_SPIN, optimize=True)
    return rho_z.reshape(4 * d, 4 * d)


def evolve(bundle: GeneratorBundle, noisy: bool) -> np.ndarray:
    """Integrate the (noisy or noiseless) dynamics; returns rho(tau)."""
    monitor = _Monitor(bundle.spec.num_modes)
    if not noisy and bundle.pure_initial:
        return _evolve_pure(bundle, monitor)
    return _evolve_matrix(bundle, noisy, monitor)


def partial_trace_phonons(rho: np.ndarray, d_ph: int) -> np.ndarray:
    """Reduce a (4 d_ph) x (4 d_ph) state to the 4 x 4 spin factor."""
    dim = rho.shape[0]
    if rho.shape != (dim, dim) or dim % d_ph != 0 or dim // d_ph != 4:
        raise ValidationError("state shape inconsistent with the phonon dimension")
    return np.einsum("anbn->ab", rho.reshape(4, d_ph, 4, d_ph))


def reduced_fidelity(rho_noisy: np.ndarray, rho_ideal: np.ndarray,
                     d_ph: int) -> float:
    """Squared-Uhlmann fidelity of the reduced spin states."""
    if rho_noisy.shape != rho_ideal.shape:
        raise ValidationError("states live on different spaces")
    r1 = partial_trace_phonons(rho_noisy, d_ph)
    r2 = partial_trace_phonons(rho_ideal, d_ph)
    for name, r in (("noisy", r1), ("ideal", r2)):
        if abs(np.trace(r).real - 1.0) > 1e-6:
            raise ValidationError(f"{name} state trace is off unity")
    w, u = np.linalg.eigh(0.5 * (r1 + r1.conj().T))
    s = (u * np.sqrt(np.clip(w, 0.0, None))[None, :]) @ u.conj().T
    lam = np.linalg.eigvalsh(s @ (0.5 * (r2 + r2.conj().T)) @ s)
    return float(np.sum(np.sqrt(np.clip(lam, 0.0, None))) ** 2)


def _min_eigenvalue(rho: np.ndarray) -> float:
    herm = 0.5 * (rho + rho.conj().T)
    if herm.shape[0] <= 1500:
        return float(np.linalg.eigvalsh(herm)[0])
    from scipy.sparse.linalg import eigsh

    try:
        val = eigsh(herm, k=1, which="SA", tol=1e-9, maxiter=5000,
                    return_eigenvectors=False)
        return float(val[0])
    except Exception:
        return float(np.linalg.eigvalsh(herm)[0])


def simulate_report(spec: ModeSpec, pulses: tuple[Waveform, Waveform],
                    gate: GateSpec, sim: SimConfig) -> SimReport:
    """Run the noisy and noiseless evolutions and compare reduced spins."""
    start = time.perf_counter()
    bundle = build_generators(spec, pulses, gate, sim)
    monitor_noisy = _Monitor(spec.num_modes)
    rho_noisy = _evolve_matrix(bundle, True, monitor_noisy)
    monitor_ideal = _Monitor(spec.num_modes)
    if bundle.pure_initial:
        rho_ideal = _evolve_pure(bundle, monitor_ideal)
    else:
        rho_ideal = _evolve_matrix(bundle, False, monitor_ideal)

    fidelity = reduced_fidelity(rho_noisy, rho_ideal, bundle.d_ph)
    leakage = max(monitor_noisy.max_leakage, monitor_ideal.max_leakage)
    notes = []
    if leakage > sim.leakage_threshold:
        notes.append(
            f"top Fock level reached population {leakage:.3e}; "
            "raise n_cut to trust this point"
        )
    return SimReport(
        infidelity=1.0 - fidelity,
        trace_residual=abs(np.trace(rho_noisy).real - 1.0),
        min_eig=_min_eigenvalue(rho_noisy),
        leakage=leakage,
        steps=monitor_noisy.steps + monitor_ideal.steps,
        elapsed=time.perf_counter() - start,
        n_cut=sim.n_cut,
        dt=bundle.dt,
        initial_spin=(sim.initial_spin if isinstance(sim.initial_spin, str)
                      else "custom"),
        initial_phonon=(VACUUM if isinstance(sim.initial_phonon, str)
                        else "thermal"),
        warnings=tuple(notes),
    )


def save_sim_report(report: SimReport, path) -> None:
    doc = {
        "infidelity": report.infidelity,
        "trace_residual": report.trace_residual,
        "min_eig": report.min_eig,
        "leakage": report.leakage,
        "n_cut": report.n_cut,
        "dt_s": report.dt,
        "initial_spin": report.initial_spin,
        "initial_phonon": report.initial_phonon,
        "warnings": list(report.warnings),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
