"""Reference RK4 propagator in numpy; same contract as the compiled kernel."""

from __future__ import annotations

import numpy as np


def _eval(coef, knots, g, t):
    u = t - knots[g]
    c = coef[g]
    return c[0] + u * (c[1] + u * (c[2] + u * c[3]))


def propagate(knots, e, w, a, o, b0, phi0, theta0, t0, h, nsteps, stride):
    """RK4 for i ḃ = (W cos θ - i A)∘(z z*ᵀ) b, φ̇ = E, θ̇ = ω.

    ``w`` already carries the factor 2 of the drive. Coefficient tables hold
    ascending powers per grid interval. Returns states at every ``stride``
    steps plus the last one.
    """
    knots = np.asarray(knots)
    last = len(knots) - 2

    def locate(t):
        return min(max(int(np.searchsorted(knots, t, side="right")) - 1, 0), last)

    def rhs(t, b, phi, theta):
        g = locate(t)
        ev = _eval(e, knots, g, t)
        wv = _eval(w, knots, g, t)
        av = _eval(a, knots, g, t)
        om = _eval(o, knots, g, t)
        z = np.exp(1j * phi)
        m = (wv * np.cos(theta) - 1j * av) * np.outer(z, z.conj())
        return -1j * (m @ b), ev, om

    b = np.array(b0, dtype=complex)
    phi = np.array(phi0, dtype=float)
    theta = float(theta0)
    n_out = nsteps // stride + (1 if nsteps % stride else 0) + 1
    times = np.empty(n_out)
    bs = np.empty((n_out, len(b)), dtype=complex)
    phis = np.empty((n_out, len(b)))
    thetas = np.empty(n_out)
    times[0], bs[0], phis[0], thetas[0] = t0, b, phi, theta
    k_out = 1
    for step in range(nsteps):
        t = t0 + step * h
        k1b, k1p, k1t = rhs(t, b, phi, theta)
        k2b, k2p, k2t = rhs(t + 0.5 * h, b + 0.5 * h * k1b, phi + 0.5 * h * k1p, theta + 0.5 * h * k1t)
        k3b, k3p, k3t = rhs(t + 0.5 * h, b + 0.5 * h * k2b, phi + 0.5 * h * k2p, theta + 0.5 * h * k2t)
        k4b, k4p, k4t = rhs(t + h, b + h * k3b, phi + h * k3p, theta + h * k3t)
        b = b + h / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b)
        phi = phi + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        theta = theta + h / 6.0 * (k1t + 2 * k2t + 2 * k3t + k4t)
        done = step + 1
        if done % stride == 0 or done == nsteps:
            times[k_out], bs[k_out], phis[k_out], thetas[k_out] = t0 + done * h, b, phi, theta
            k_out += 1
    return times[:k_out], bs[:k_out], phis[:k_out], thetas[:k_out]
