import numpy as np

from mspulse.basis import quad_oracle
from mspulse.modes import ModeSpec


def random_mode_spec(rng, num_ions, tau=1.5e-4, gamma_scale=100.0):
    """Synthetic motional environment with orthonormal participation vectors."""
    n = num_ions
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    detunings = rng.uniform(2 * np.pi * 1e3, 2 * np.pi * 8e4, size=n)
    detunings *= rng.choice([-1.0, 1.0], size=n)
    return ModeSpec(
        detunings=detunings,
        etas=rng.uniform(0.05, 0.3, size=n),
        vectors=q.T,
        gamma_up=rng.uniform(0.0, gamma_scale, size=n),
        gamma_down=rng.uniform(0.0, gamma_scale, size=n),
        mu=2 * np.pi * 4e6,
        tau=tau,
    )


def nested_angle_oracle(spec, basis, b_p, b_q, rel=1e-12):
    """Angle matrix by nested adaptive quadrature over ordered time boxes.

    Independent of the closed-form path: integrates sin(Delta (t1 - t2))
    over {t2 < t1} restricted to each pair of segment supports.
    """
    edges = basis.edges
    size = basis.size
    tol_in = rel * spec.tau ** 2
    tol_out = rel * spec.tau ** 2

    def ordered_box(delta, a, b):
        # t1 in segment a, t2 in segment b, with t2 < t1
        if a < b:
            return 0.0
        a_lo, a_hi = edges[a], edges[a + 1]

        def outer(t1_arr):
            vals = []
            for t1 in np.atleast_1d(t1_arr):
                b_lo, b_hi = edges[b], min(edges[b + 1], float(t1))
                if b_hi <= b_lo:
                    vals.append(0.0)
                    continue
                vals.append(
                    quad_oracle(
                        lambda t2: np.sin(delta * (t1 - t2)), b_lo, b_hi, tol_in
                    ).real
                )
            return np.array(vals)

        return quad_oracle(outer, a_lo, a_hi, tol_out).real

    m = np.zeros((size, size))
    for mode in range(spec.num_modes):
        w = 0.25 * spec.etas[mode] ** 2 * b_p[mode] * b_q[mode] \
            if np.ndim(b_p) else 0.25 * spec.etas[mode] ** 2 * b_p * b_q
        delta = spec.detunings[mode]
        for l1 in range(size):
            for l2 in range(size):
                m[l1, l2] += w * (ordered_box(delta, l1, l2)
                                  + ordered_box(delta, l2, l1))
    return m


def single_mode_spec(delta, eta, b_pair, gamma, tau):
    """One mode seen by two ions, as in the closed-form worked examples."""
    return ModeSpec(
        detunings=np.array([float(delta)]),
        etas=np.array([float(eta)]),
        vectors=np.array([list(b_pair)]),
        gamma_up=np.array([float(gamma)]),
        gamma_down=np.array([float(gamma)]),
        mu=2 * np.pi * 4e6,
        tau=float(tau),
    )
