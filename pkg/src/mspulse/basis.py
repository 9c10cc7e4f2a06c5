"""Pulse-expansion bases and their oscillatory moments.

Two basis families are supported:

* ``piecewise_constant``: L indicator functions on the equal partition of
  [0, tau].  All moments have closed forms.
* ``fourier``: f_l(t) = delta_fund * exp(i l delta_fund t), l = 1..L, the
  complex-envelope convention used by the single-mode polychromatic model.

The moments

    moment0_l(D)        = int_0^tau  f_l(t) exp(i D t) dt
    moment1_l(D)        = int_0^tau  t f_l(t) exp(i D t) dt
    partial_moment_l(D) = int_0^t    f_l(s) exp(i D s) ds

are the building blocks of every matrix downstream.  They are evaluated
with phase-factored forms that stay exact through D -> 0, so no separate
near-resonance branch is needed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError

PIECEWISE = "piecewise_constant"
FOURIER = "fourier"


def _seg_moment0(a, b, delta: float):
    """int_a^b exp(i delta t) dt, stable for all delta including 0.

    Equals h * sinc(delta h / 2pi) * exp(i delta (a+b)/2) with h = b - a.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    h = b - a
    return h * np.sinc(delta * h / (2.0 * np.pi)) * np.exp(0.5j * delta * (a + b))


def _g1(x):
    """(sin x - x cos x) / x**2 with a series branch near 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 0.1
    xs = x[small]
    x2 = xs * xs
    out[small] = xs * (1.0 / 3.0 + x2 * (-1.0 / 30.0 + x2 * (1.0 / 840.0 - x2 / 45360.0)))
    xl = x[~small]
    out[~small] = (np.sin(xl) - xl * np.cos(xl)) / (xl * xl)
    return out


def _seg_moment1(a, b, delta: float):
    """int_a^b t exp(i delta t) dt via the segment midpoint decomposition."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    h = b - a
    mid = 0.5 * (a + b)
    phase = np.exp(1j * delta * mid)
    sinc_part = h * np.sinc(delta * h / (2.0 * np.pi))
    odd_part = 0.5j * h * h * _g1(0.5 * delta * h)
    return phase * (mid * sinc_part + odd_part)


@dataclass(frozen=True)
class Basis:
    """A family of L linearly independent pulse-shape functions on [0, tau]."""

    kind: str
    size: int
    duration: float
    fundamental: float = 0.0  # rad/s, fourier only

    def __post_init__(self):
        if self.kind not in (PIECEWISE, FOURIER):
            raise ValidationError(f"unknown basis kind {self.kind!r}")
        if self.size < 1:
            raise ValidationError(f"basis needs at least one function, got L={self.size}")
        if not self.duration > 0:
            raise ValidationError(f"duration must be positive, got {self.duration}")
        if self.kind == FOURIER and not self.fundamental > 0:
            raise ValidationError("fourier basis requires a positive fundamental")

    # -- geometry ----------------------------------------------------------

    @property
    def edges(self) -> np.ndarray:
        """Segment edges of the equal partition (piecewise basis only)."""
        if self.kind != PIECEWISE:
            raise ValidationError("edges are only defined for the piecewise basis")
        return np.linspace(0.0, self.duration, self.size + 1)

    def _check_time(self, t: float) -> float:
        t = float(t)
        if not 0.0 <= t <= self.duration:
            raise ValidationError(f"t={t} outside [0, {self.duration}]")
        return t

    def segment_of(self, t: float) -> int:
        """Index of the segment containing t; t == tau maps to the last one."""
        t = self._check_time(t)
        idx = int(t * self.size / self.duration)
        return min(idx, self.size - 1)

    def _shifted_deltas(self, delta: float) -> np.ndarray:
        ls = np.arange(1, self.size + 1)
        return delta + ls * self.fundamental

    # -- evaluation and moments --------------------------------------------

    def evaluate(self, t: float) -> np.ndarray:
        """Vector (f_1(t), ..., f_L(t))."""
        t = self._check_time(t)
        if self.kind == PIECEWISE:
            out = np.zeros(self.size)
            out[self.segment_of(t)] = 1.0
            return out
        ls = np.arange(1, self.size + 1)
        return self.fundamental * np.exp(1j * ls * self.fundamental * t)

    def moment0(self, delta: float) -> np.ndarray:
        if not np.isfinite(delta):
            raise ValidationError(f"detuning must be finite, got {delta}")
        if self.kind == PIECEWISE:
            e = self.edges
            return _seg_moment0(e[:-1], e[1:], float(delta))
        shifted = self._shifted_deltas(float(delta))
        return self.fundamental * np.array(
            [_seg_moment0(0.0, self.duration, d) for d in shifted]
        )

    def moment1(self, delta: float) -> np.ndarray:
        if not np.isfinite(delta):
            raise ValidationError(f"detuning must be finite, got {delta}")
        if self.kind == PIECEWISE:
            e = self.edges
            return _seg_moment1(e[:-1], e[1:], float(delta))
        shifted = self._shifted_deltas(float(delta))
        return self.fundamental * np.array(
            [_seg_moment1(0.0, self.duration, d) for d in shifted]
        )

    def partial_moment(self, delta: float, t: float) -> np.ndarray:
        return self.partial_moment_grid(delta, np.array([self._check_time(t)]))[0]

    def partial_moment_grid(self, delta: float, ts: np.ndarray) -> np.ndarray:
        """Partial moments at many times at once; shape (len(ts), L)."""
        ts = np.asarray(ts, dtype=float)
        if ts.size and (ts.min() < 0.0 or ts.max() > self.duration):
            raise ValidationError("grid times outside [0, tau]")
        delta = float(delta)
        if self.kind == PIECEWISE:
            e = self.edges
            lo = np.broadcast_to(e[:-1], (ts.size, self.size))
            hi = np.minimum(e[1:][None, :], ts[:, None])
            out = np.zeros((ts.size, self.size), dtype=complex)
            active = hi > lo
            out[active] = _seg_moment0(lo[active], hi[active], delta)
            return out
        shifted = self._shifted_deltas(delta)
        cols = [
            self.fundamental * _seg_moment0(np.zeros_like(ts), ts, d) for d in shifted
        ]
        return np.stack(cols, axis=1)

    def gram(self) -> np.ndarray:
        """G_kl = int f_k* f_l dt (real diagonal for the piecewise basis)."""
        if self.kind == PIECEWISE:
            return np.eye(self.size) * (self.duration / self.size)
        ls = np.arange(1, self.size + 1)
        diff = ls[None, :] - ls[:, None]
        return self.fundamental ** 2 * np.array(
            [[_seg_moment0(0.0, self.duration, d * self.fundamental) for d in row]
             for row in diff]
        )


@dataclass(frozen=True)
class Waveform:
    """A pulse Omega(t) = c . f(t) expressed in a basis."""

    basis: Basis
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.basis.size,):
            raise ValidationError(
                f"coefficient vector has shape {c.shape}, expected ({self.basis.size},)"
            )
        object.__setattr__(self, "coeffs", c)

    def __call__(self, t):
        if self.basis.kind == PIECEWISE:
            ts = np.atleast_1d(np.asarray(t, dtype=float))
            idx = np.minimum(
                (ts * self.basis.size / self.basis.duration).astype(int),
                self.basis.size - 1,
            )
            vals = self.coeffs[idx]
            return vals if np.ndim(t) else float(vals[0])
        return self.coeffs @ self.basis.evaluate(t)

    def max_abs(self) -> float:
        """max_t |Omega(t)|; exact for piecewise, sampled for fourier."""
        if self.basis.kind == PIECEWISE:
            return float(np.max(np.abs(self.coeffs)))
        ts = np.linspace(0.0, self.basis.duration, 4096)
        ls = np.arange(1, self.basis.size + 1)
        env = np.exp(1j * np.outer(ts, ls * self.basis.fundamental)) @ self.coeffs
        return float(np.max(np.abs(self.basis.fundamental * env)))

    def l2_norm_sq(self) -> float:
        """int |Omega(t)|^2 dt."""
        g = self.basis.gram()
        return float(np.real(self.coeffs @ g @ self.coeffs))


def quad_oracle(integrand, a: float, b: float, tol: float = 1e-12,
                max_panels: int = 20000) -> complex:
    """Adaptive Gauss-Legendre panel quadrature with interval bisection.

    ``integrand`` must accept an ndarray of nodes and return values of the
    same shape.  The estimated absolute error is kept below ``tol``.  Used
    as the independent oracle in tests and for non-analytic integrands.
    """
    if b < a:
        raise ValidationError("quad_oracle requires a <= b")
    if not tol > 0:
        raise ValidationError("tolerance must be positive")
    if b == a:
        return 0.0 + 0.0j

    nodes, weights = np.polynomial.legendre.leggauss(15)

    def panel(lo, hi):
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        return half * np.sum(weights * np.asarray(integrand(mid + half * nodes)))

    total_width = b - a
    stack = [(a, b, panel(a, b))]
    acc = 0.0 + 0.0j
    used = 1
    while stack:
        lo, hi, coarse = stack.pop()
        mid = 0.5 * (lo + hi)
        left = panel(lo, mid)
        right = panel(mid, hi)
        used += 2
        if used > max_panels:
            raise NumericalError(
                f"quad_oracle: panel budget ({max_panels}) exhausted on [{a}, {b}]"
            )
        fine = left + right
        if abs(fine - coarse) <= tol * max((hi - lo) / total_width, 1e-3):
            acc += fine
        else:
            stack.append((lo, mid, left))
            stack.append((mid, hi, right))
    return complex(acc)


# -- pulse files -------------------------------------------------------------

PULSE_HEADER = ["t_start_s", "t_end_s", "omega_p_rad_per_s", "omega_q_rad_per_s"]


def save_pulse_pair(path, wf_p: Waveform, wf_q: Waveform) -> None:
    """Write a piecewise pulse pair as CSV, one row per segment."""
    if wf_p.basis != wf_q.basis:
        raise ValidationError("pulse pair must share one basis")
    if wf_p.basis.kind != PIECEWISE:
        raise ValidationError("pulse files are defined for the piecewise basis only")
    e = wf_p.basis.edges
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PULSE_HEADER)
        for k in range(wf_p.basis.size):
            writer.writerow([repr(float(e[k])), repr(float(e[k + 1])),
                             repr(float(wf_p.coeffs[k])), repr(float(wf_q.coeffs[k]))])


def load_pulse_pair(path) -> tuple[Waveform, Waveform]:
    """Read a pulse-pair CSV back into two waveforms on a shared basis."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PULSE_HEADER:
            raise ValidationError(f"bad pulse file header: {header}")
        rows = [[float(x) for x in row] for row in reader]
    if not rows:
        raise ValidationError("pulse file has no segments")
    starts = np.array([r[0] for r in rows])
    ends = np.array([r[1] for r in rows])
    tau = ends[-1]
    if abs(starts[0]) > 1e-12 * tau:
        raise ValidationError("pulse segments must start at t=0")
    if np.any(np.abs(ends[:-1] - starts[1:]) > 1e-9 * tau):
        raise ValidationError("pulse segments must be contiguous")
    widths = ends - starts
    if np.any(np.abs(widths - widths[0]) > 1e-9 * tau):
        raise ValidationError("pulse segments must form an equal partition")
    basis = Basis(PIECEWISE, len(rows), float(tau))
    cp = np.array([r[2] for r in rows])
    cq = np.array([r[3] for r in rows])
    return Waveform(basis, cp), Waveform(basis, cq)
