"""Motional-mode environment of a linear ion chain.

The chain model is the standard dimensionless Coulomb-crystal one: ion
positions minimize u_i^2/2 + sum 1/|u_i - u_j|, and the normal modes come
from the Hessian at the minimum.  Measured mode data can be injected from
a JSON file instead, bypassing the model entirely.

All frequencies are angular (rad/s).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ResonantModeWarning, ValidationError

AXIAL = "axial"
TRANSVERSE = "transverse"

# Desk-scale defaults; real traps should override these.
DEFAULT_AXIAL_FREQUENCY = 2 * np.pi * 0.2e6
DEFAULT_TRANSVERSE_FREQUENCY = 2 * np.pi * 4.0e6
DEFAULT_ETA_COM = 0.2


@dataclass(frozen=True)
class ChainConfig:
    """Trap and coupling parameters of a homogeneous linear chain."""

    num_ions: int
    axial_frequency: float = DEFAULT_AXIAL_FREQUENCY
    transverse_frequency: float = DEFAULT_TRANSVERSE_FREQUENCY
    branch: str = TRANSVERSE
    eta_com: float = DEFAULT_ETA_COM

    def __post_init__(self):
        if self.num_ions < 2:
            raise ValidationError(f"need at least 2 ions, got {self.num_ions}")
        if not self.axial_frequency > 0:
            raise ValidationError("axial frequency must be positive")
        if self.branch not in (AXIAL, TRANSVERSE):
            raise ValidationError(f"unknown branch {self.branch!r}")
        if self.branch == TRANSVERSE and not self.transverse_frequency > 0:
            raise ValidationError("transverse frequency must be positive")
        if not self.eta_com > 0:
            raise ValidationError("eta_com must be positive")


@dataclass(frozen=True)
class ModeBasisSet:
    """Normal-mode frequencies (ascending) and orthonormal participation vectors.

    ``vectors[m]`` is the length-N participation vector of mode m.
    """

    frequencies: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=float)
        vecs = np.asarray(self.vectors, dtype=float)
        n = freqs.size
        if vecs.shape != (n, n):
            raise ValidationError(f"vector block has shape {vecs.shape}, expected ({n},{n})")
        if np.any(np.diff(freqs) < 0):
            raise ValidationError("frequencies must be ascending")
        gram = vecs @ vecs.T
        if np.max(np.abs(gram - np.eye(n))) > 1e-8:
            raise ValidationError("participation vectors are not orthonormal")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "vectors", vecs)

    @property
    def num_modes(self) -> int:
        return self.frequencies.size


@dataclass(frozen=True)
class ModeSpec:
    """Full motional environment seen by the drive.

    detunings[m] = omega_m - mu.  Heating rates are quanta per second.
    """

    detunings: np.ndarray
    etas: np.ndarray
    vectors: np.ndarray
    gamma_up: np.ndarray
    gamma_down: np.ndarray
    mu: float
    tau: float

    def __post_init__(self):
        det = np.asarray(self.detunings, dtype=float)
        etas = np.asarray(self.etas, dtype=float)
        vecs = np.asarray(self.vectors, dtype=float)
        gup = np.asarray(self.gamma_up, dtype=float)
        gdn = np.asarray(self.gamma_down, dtype=float)
        n = det.size
        for name, arr, length in (
            ("etas", etas, n),
            ("gamma_up", gup, n),
            ("gamma_down", gdn, n),
        ):
            if arr.shape != (length,):
                raise ValidationError(f"{name} has shape {arr.shape}, expected ({length},)")
        if vecs.ndim != 2 or vecs.shape[0] != n:
            raise ValidationError(
                f"vectors have shape {vecs.shape}, expected ({n}, num_ions)"
            )
        gram = vecs @ vecs.T
        if np.max(np.abs(gram - np.eye(n))) > 1e-8:
            raise ValidationError("participation vectors are not orthonormal")
        if not np.all(np.isfinite(det)):
            raise ValidationError("detunings must be finite")
        if np.any(etas <= 0):
            raise ValidationError("Lamb-Dicke factors must be positive")
        if np.any(gup < 0) or np.any(gdn < 0):
            raise ValidationError("heating rates must be nonnegative")
        if not self.tau > 0:
            raise ValidationError("gate duration must be positive")
        if np.any(det == 0.0):
            warnings.warn(
                "a mode sits exactly on the drive frequency", ResonantModeWarning
            )
        object.__setattr__(self, "detunings", det)
        object.__setattr__(self, "etas", etas)
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "gamma_up", gup)
        object.__setattr__(self, "gamma_down", gdn)

    @property
    def num_modes(self) -> int:
        return self.detunings.size

    @property
    def num_ions(self) -> int:
        return self.vectors.shape[1]

    @property
    def omegas(self) -> np.ndarray:
        """Absolute mode frequencies (rad/s)."""
        return self.detunings + self.mu

    def with_rates(self, gamma_up, gamma_down) -> "ModeSpec":
        """Copy with the heating rates replaced."""
        return ModeSpec(self.detunings, self.etas, self.vectors,
                        np.asarray(gamma_up, float), np.asarray(gamma_down, float),
                        self.mu, self.tau)

    def with_mu(self, mu: float) -> "ModeSpec":
        """Copy retuned to a different drive frequency."""
        return ModeSpec(self.omegas - mu, self.etas, self.vectors,
                        self.gamma_up, self.gamma_down, float(mu), self.tau)


# -- chain model --------------------------------------------------------------

def _potential_gradient(u: np.ndarray) -> np.ndarray:
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    return u - np.sum(np.sign(diff) / diff ** 2, axis=1)


def _coulomb_hessian(u: np.ndarray) -> np.ndarray:
    """Dimensionless axial Hessian of the crystal potential."""
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    inv3 = 1.0 / np.abs(diff) ** 3
    hess = -2.0 * inv3
    np.fill_diagonal(hess, 1.0 + 2.0 * np.sum(inv3, axis=1))
    return hess


def solve_equilibrium(num_ions: int, max_iter: int = 200) -> np.ndarray:
    """Dimensionless equilibrium positions of the linear chain, ascending.

    Damped Newton iteration on the crystal potential; converges to a
    gradient norm below 1e-12 for chains up to at least 60 ions.
    """
    if num_ions < 2:
        raise ValidationError(f"need at least 2 ions, got {num_ions}")
    span = num_ions ** 0.56
    u = np.linspace(-span / 2, span / 2, num_ions)
    grad = _potential_gradient(u)
    for _ in range(max_iter):
        gnorm = np.linalg.norm(grad)
        if gnorm <= 1e-12:
            return np.sort(u)
        step = np.linalg.solve(_coulomb_hessian(u), grad)
        alpha = 1.0
        while alpha > 1e-6:
            trial = u - alpha * step
            if np.all(np.diff(np.sort(trial)) > 0):
                trial_grad = _potential_gradient(trial)
                if np.linalg.norm(trial_grad) < gnorm:
                    u, grad = trial, trial_grad
                    break
            alpha /= 2
        else:
            raise NumericalError(
                f"equilibrium search stalled at gradient norm {gnorm:.3e}"
            )
    raise NumericalError(
        "equilibrium search did not converge; last gradient norm "
        f"{np.linalg.norm(grad):.3e}"
    )


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    flips = np.sign(vectors[np.arange(len(vectors)), np.argmax(np.abs(vectors), axis=1)])
    return vectors * flips[:, None]


def normal_modes(positions: np.ndarray, config: ChainConfig) -> ModeBasisSet:
    """Normal modes of the chain on the configured branch.

    Axial: eigenmodes of the crystal Hessian A, frequencies w_z sqrt(lam).
    Transverse: B = (beta^2 + 1/2) I - A/2 with beta = w_x / w_z.
    """
    hess = _coulomb_hessian(np.asarray(positions, dtype=float))
    if config.branch == AXIAL:
        lam, vecs = np.linalg.eigh(hess)
        base = config.axial_frequency
    else:
        beta = config.transverse_frequency / config.axial_frequency
        lam, vecs = np.linalg.eigh((beta ** 2 + 0.5) * np.eye(len(hess)) - 0.5 * hess)
        base = config.axial_frequency
        if np.any(lam <= 0):
            raise NumericalError(
                f"transverse branch unstable at beta={beta:.3f}: "
                f"min eigenvalue {lam.min():.3e}"
            )
    if np.any(lam <= 0):
        raise NumericalError(
            f"{config.branch} branch unstable: min eigenvalue {lam.min():.3e}"
        )
    freqs = base * np.sqrt(lam)
    return ModeBasisSet(freqs, _fix_signs(vecs.T))


def com_frequency(config: ChainConfig) -> float:
    """Frequency of the center-of-mass mode on the configured branch."""
    return (config.transverse_frequency if config.branch == TRANSVERSE
            else config.axial_frequency)


def build_mode_spec(config: ChainConfig, mu: float, tau: float,
                    gamma_up, gamma_down) -> ModeSpec:
    """Assemble the ModeSpec for a chain: detunings, scaled eta, rates.

    eta_m = eta_com * sqrt(w_com / w_m), so softer modes couple harder.
    """
    gup = np.asarray(gamma_up, dtype=float)
    gdn = np.asarray(gamma_down, dtype=float)
    if gup.shape != (config.num_ions,) or gdn.shape != (config.num_ions,):
        raise ValidationError(
            f"rate vectors must have length {config.num_ions}, got "
            f"{gup.shape} and {gdn.shape}"
        )
    mode_set = normal_modes(solve_equilibrium(config.num_ions), config)
    etas = config.eta_com * np.sqrt(com_frequency(config) / mode_set.frequencies)
    return ModeSpec(
        detunings=mode_set.frequencies - mu,
        etas=etas,
        vectors=mode_set.vectors,
        gamma_up=gup,
        gamma_down=gdn,
        mu=float(mu),
        tau=float(tau),
    )


# -- file format ---------------------------------------------------------------

SCHEMA_VERSION = 1


def save_mode_spec(spec: ModeSpec, path) -> None:
    """Write a ModeSpec as schema-versioned JSON (rad/s throughout)."""
    omegas = spec.omegas
    doc = {
        "version": SCHEMA_VERSION,
        "num_ions": spec.num_modes,
        "mu_rad_per_s": spec.mu,
        "tau_s": spec.tau,
        "modes": [
            {
                "omega_rad_per_s": float(omegas[m]),
                "eta": float(spec.etas[m]),
                "b": [float(x) for x in spec.vectors[m]],
                "gamma_up_per_s": float(spec.gamma_up[m]),
                "gamma_down_per_s": float(spec.gamma_down[m]),
            }
            for m in range(spec.num_modes)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def _require(doc: dict, key: str):
    if key not in doc:
        raise ValidationError(f"mode spec file missing field {key!r}")
    return doc[key]


def load_mode_spec(path) -> ModeSpec:
    """Read a ModeSpec JSON file, validating shapes and invariants."""
    with open(path) as fh:
        doc = json.load(fh)
    if _require(doc, "version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported mode spec version {doc['version']!r}")
    n = _require(doc, "num_ions")
    mu = float(_require(doc, "mu_rad_per_s"))
    tau = float(_require(doc, "tau_s"))
    modes = _require(doc, "modes")
    if len(modes) != n:
        raise ValidationError(f"file declares {n} ions but lists {len(modes)} modes")
    omegas, etas, vectors, gup, gdn = [], [], [], [], []
    for m, entry in enumerate(modes):
        b = _require(entry, "b")
        if len(b) != n:
            raise ValidationError(
                f"mode {m}: participation vector has length {len(b)}, expected {n}"
            )
        omegas.append(float(_require(entry, "omega_rad_per_s")))
        etas.append(float(_require(entry, "eta")))
        vectors.append([float(x) for x in b])
        gup.append(float(_require(entry, "gamma_up_per_s")))
        gdn.append(float(_require(entry, "gamma_down_per_s")))
    vecs = np.array(vectors)
    gram = vecs @ vecs.T
    if np.max(np.abs(gram - np.eye(n))) > 1e-8:
        raise ValidationError("field 'b': participation vectors are not orthonormal")
    return ModeSpec(
        detunings=np.array(omegas) - mu,
        etas=np.array(etas),
        vectors=vecs,
        gamma_up=np.array(gup),
        gamma_down=np.array(gdn),
        mu=mu,
        tau=tau,
    )
