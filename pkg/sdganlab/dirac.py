#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
The Dirac-GAN with an EMA generator and a self-distillation penalty.

The generator is a single parameter theta (G(z) = theta), the discriminator
is linear (D(x) = psi * x) and the data is fixed at 0. The EMA generator
phi follows theta with update rate eta_phi = 1 - beta, and the penalty
alpha/2 * (theta - phi)^2 pulls theta towards phi. With the linearized
adversarial loss c * psi * theta the joint dynamics are linear:

    dtheta/dt = -eta_G * (c * psi + alpha * (theta - phi))
    dpsi/dt   =  eta_D * c * theta
    dphi/dt   =  eta_phi * (theta - phi)

The Nash equilibrium is the origin. It is asymptotically stable if and only
if alpha > 0.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from sdganlab.exceptions import DivergenceError

# states with a larger norm end a simulation
DIVERGENCE_NORM = 1e6


@dataclass(frozen=True)
class DiracParams:
    """
    Coefficients of the Dirac-GAN system.

    Attributes
    ----------
    eta_G : float
        Generator learning rate, > 0.
    eta_D : float
        Discriminator learning rate, > 0.
    eta_phi : float
        EMA update rate 1 - beta, in [0, 1).
    alpha : float
        Weight of the self-distillation penalty, >= 0.
    c : float
        Slope f'(0) of the adversarial loss, != 0.

    """
    eta_G: float = 1.
    eta_D: float = 1.
    eta_phi: float = 0.01
    alpha: float = 1.
    c: float = 1.

    def __post_init__(self):
        if not self.eta_G > 0:
            raise ValueError("eta_G must be > 0, got {}".format(self.eta_G))
        if not self.eta_D > 0:
            raise ValueError("eta_D must be > 0, got {}".format(self.eta_D))
        if not 0 <= self.eta_phi < 1:
            raise ValueError("eta_phi must be in [0, 1), got {}".format(self.eta_phi))
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0, got {}".format(self.alpha))
        if self.c == 0 or not np.isfinite(self.c):
            raise ValueError("c must be finite and != 0, got {}".format(self.c))

    @property
    def beta(self):
        return 1. - self.eta_phi


@dataclass(frozen=True)
class DiracState:
    """ Active generator theta, discriminator psi and EMA generator phi. """
    theta: float = 0.
    psi: float = 0.
    phi: float = 0.

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("Non-finite Dirac state {}".format(self))

    def as_array(self):
        return np.array([self.theta, self.psi, self.phi], dtype=np.float64)

    @classmethod
    def from_array(cls, array):
        return cls(*(float(x) for x in array))


@dataclass
class StabilityReport:
    """
    Local stability of the equilibrium for one set of parameters.

    Attributes
    ----------
    params : DiracParams
    coefficients : tuple
        (a3, a2, a1, a0) of the characteristic cubic, a3 = 1.
    eigenvalues : ndarray
        The three complex roots.
    routh_hurwitz_pass : bool
        All of a2, a1, a0 > 0 and a2 * a1 > a3 * a0.
    max_real_part : float
        Largest real part of the eigenvalues.
    margin : float
        a2 * a1 - a3 * a0.

    """
    params: DiracParams
    coefficients: tuple
    eigenvalues: np.ndarray
    routh_hurwitz_pass: bool
    max_real_part: float
    margin: float

    @property
    def expected_margin(self):
        """ The margin in closed form, eta_D * eta_G^2 * c^2 * alpha. """
        p = self.params
        return p.eta_D * p.eta_G ** 2 * p.c ** 2 * p.alpha


@dataclass
class Trajectory:
    """
    Recorded states of a simulation.

    Attributes
    ----------
    times : ndarray
        Strictly increasing, shape (n, ). For the discrete simulation,
        this is the step number.
    states : ndarray
        Shape (n, 3), columns theta, psi, phi.
    integrator : str
        One of rk4, euler, discrete_sim_gd.
    diverged : bool
        True if the simulation was stopped because the state norm
        exceeded DIVERGENCE_NORM.

    """
    times: np.ndarray
    states: np.ndarray
    integrator: str
    diverged: bool = False
    columns: tuple = field(default=("t", "theta", "psi", "phi", "radius"),
                           init=False, repr=False)

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("Trajectory has {} times but {} states".format(
                len(self.times), len(self.states)))
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("Trajectory times are not strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def theta(self):
        return self.states[:, 0]

    @property
    def psi(self):
        return self.states[:, 1]

    @property
    def phi(self):
        return self.states[:, 2]

    @property
    def radius(self):
        """ Distance of (theta, psi) to the equilibrium. """
        return np.hypot(self.theta, self.psi)

    def state(self, i):
        return DiracState.from_array(self.states[i])

    def to_rows(self):
        """ Rows of (t, theta, psi, phi, radius) for csv export. """
        return np.column_stack([self.times, self.states, self.radius])


def vector_field(state, params):
    """
    Time derivative of the state.

    Parameters
    ----------
    state : DiracState
    params : DiracParams

    Returns
    -------
    DiracState
        (dtheta/dt, dpsi/dt, dphi/dt).

    """
    return DiracState.from_array(_field(state.as_array(), params))


def _field(x, p):
    theta, psi, phi = x
    return np.array([
        -p.eta_G * (p.c * psi + p.alpha * (theta - phi)),
        p.eta_D * p.c * theta,
        p.eta_phi * (theta - phi),
    ])


def jacobian(params):
    """ Jacobian of the (linear) vector field, a 3x3 array. """
    p = params
    return np.array([
        [-p.eta_G * p.alpha, -p.eta_G * p.c, p.eta_G * p.alpha],
        [p.eta_D * p.c, 0., 0.],
        [p.eta_phi, 0., -p.eta_phi],
    ])


def characteristic_coefficients(params):
    """
    Coefficients (a3, a2, a1, a0) of det(lambda * I - J).

    a0 is computed as a1 * eta_phi, so that for alpha = 0 the Routh-Hurwitz
    margin a2 * a1 - a0 is exactly zero in floating point.

    """
    p = params
    a2 = p.eta_G * p.alpha + p.eta_phi
    a1 = p.eta_D * p.eta_G * p.c * p.c
    a0 = a1 * p.eta_phi
    return 1., a2, a1, a0


def expanded_coefficients(matrix):
    """
    Coefficients of det(lambda * I - M) for a 3x3 matrix by cofactor expansion.

    Returns
    -------
    tuple
        (1, a2, a1, a0) with a2 = -tr(M), a1 = sum of the principal 2x2
        minors and a0 = -det(M).

    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError("Expected a 3x3 matrix, got shape {}".format(m.shape))
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    minors = (m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
              + m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]
              + m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
    det = (m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
           - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
           + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]))
    return 1., -trace, minors, -det


def _polish_roots(coefficients, roots, iterations=3):
    """ Refine roots of a polynomial with a few Newton steps. """
    poly = np.asarray(coefficients, dtype=np.complex128)
    dpoly = np.polyder(poly)
    polished = []
    for root in roots:
        for _ in range(iterations):
            slope = np.polyval(dpoly, root)
            if slope == 0:
                break
            step = np.polyval(poly, root) / slope
            if not np.isfinite(step):
                break
            root = root - step
        polished.append(root)
    return np.array(polished, dtype=np.complex128)


def eigenvalues(params):
    """
    Eigenvalues of the Jacobian, as the roots of the characteristic cubic.

    The roots are the eigenvalues of the companion matrix, refined with
    Newton steps.

    Returns
    -------
    ndarray
        Three complex numbers, sorted by descending real part.

    """
    coefficients = characteristic_coefficients(params)
    roots = scipy.linalg.eigvals(scipy.linalg.companion(coefficients))
    roots = _polish_roots(coefficients, roots)
    return roots[np.argsort(-roots.real, kind="stable")]


def routh_hurwitz(params):
    """
    Classify the equilibrium with the Routh-Hurwitz criterion for cubics.

    Returns
    -------
    StabilityReport

    """
    a3, a2, a1, a0 = characteristic_coefficients(params)
    margin = a2 * a1 - a3 * a0
    passed = a2 > 0 and a1 > 0 and a0 > 0 and margin > 0
    eigvals = eigenvalues(params)
    return StabilityReport(
        params=params,
        coefficients=(a3, a2, a1, a0),
        eigenvalues=eigvals,
        routh_hurwitz_pass=bool(passed),
        max_real_part=float(np.max(eigvals.real)),
        margin=margin,
    )


def stability_sweep(params, alphas, eta_phis):
    """
    Routh-Hurwitz reports on a grid of alpha and eta_phi values.

    The remaining coefficients are taken from params.

    Returns
    -------
    reports : List
        One StabilityReport per (alpha, eta_phi), alpha varying slowest.

    """
    reports = []
    for alpha in alphas:
        for eta_phi in eta_phis:
            cell = DiracParams(eta_G=params.eta_G, eta_D=params.eta_D,
                               eta_phi=eta_phi, alpha=alpha, c=params.c)
            reports.append(routh_hurwitz(cell))
    return reports


def _rk4_step(x, p, dt):
    k1 = _field(x, p)
    k2 = _field(x + 0.5 * dt * k1, p)
    k3 = _field(x + 0.5 * dt * k2, p)
    k4 = _field(x + dt * k3, p)
    return x + dt / 6. * (k1 + 2. * k2 + 2. * k3 + k4)


def _euler_step(x, p, dt):
    return x + dt * _field(x, p)


_INTEGRATORS = {
    "rk4": _rk4_step,
    "euler": _euler_step,
}


def simulate_ode(s0, params, t_end, dt, integrator="rk4"):
    """
    Integrate the continuous-time dynamics with a fixed step size.

    Parameters
    ----------
    s0 : DiracState
        Initial state.
    params : DiracParams
    t_end : float
        Integrate from 0 to t_end.
    dt : float
        Step size.
    integrator : str
        rk4 or euler.

    Returns
    -------
    Trajectory
        Every state, including the initial one. Truncated and flagged as
        diverged if the state norm exceeds DIVERGENCE_NORM.

    """
    if not dt > 0 or not t_end > 0:
        raise ValueError("dt and t_end must be > 0, got {} and {}".format(dt, t_end))
    if integrator not in _INTEGRATORS:
        raise NameError("Unknown integrator {}, must be one of {}".format(
            integrator, list(_INTEGRATORS)))
    step_fn = _INTEGRATORS[integrator]

    n_steps = int(round(t_end / dt))
    states = np.empty((n_steps + 1, 3))
    states[0] = s0.as_array()
    diverged = False
    n_done = n_steps
    for i in range(n_steps):
        states[i + 1] = step_fn(states[i], params, dt)
        if not _is_bounded(states[i + 1]):
            diverged = True
            n_done = i
            break
    times = np.arange(n_done + 1) * dt
    return Trajectory(times=times, states=states[:n_done + 1],
                      integrator=integrator, diverged=diverged)


def simulate_discrete(s0, params, steps, beta, update="simultaneous"):
    """
    Simulate gradient descent on the Dirac-GAN with an EMA generator.

    Per step, with pre-step values theta, psi, phi::

        theta' = theta - eta_G * (c * psi + alpha * (theta - phi))
        psi'   = psi + eta_D * c * theta      (simultaneous)
        psi'   = psi + eta_D * c * theta'     (alternating)
        phi'   = beta * phi + (1 - beta) * theta'

    The EMA is updated after the generator step with the new theta.
    params.eta_phi is not used, the EMA decay is given by beta.

    Parameters
    ----------
    s0 : DiracState
    params : DiracParams
    steps : int
        Number of update steps, > 0.
    beta : float
        EMA decay in [0, 1).
    update : str
        simultaneous or alternating.

    Returns
    -------
    Trajectory
        steps + 1 states, times are the step numbers.

    """
    if steps <= 0:
        raise ValueError("steps must be > 0, got {}".format(steps))
    if not 0 <= beta < 1:
        raise ValueError("beta must be in [0, 1), got {}".format(beta))
    if update not in ("simultaneous", "alternating"):
        raise NameError("Unknown update {}, must be either simultaneous or "
                        "alternating".format(update))
    p = params

    states = np.empty((steps + 1, 3))
    states[0] = s0.as_array()
    diverged = False
    n_done = steps
    for i in range(steps):
        theta, psi, phi = states[i]
        theta_new = theta - p.eta_G * (p.c * psi + p.alpha * (theta - phi))
        if update == "simultaneous":
            psi_new = psi + p.eta_D * p.c * theta
        else:
            psi_new = psi + p.eta_D * p.c * theta_new
        phi_new = beta * phi + (1. - beta) * theta_new
        states[i + 1] = (theta_new, psi_new, phi_new)
        if not _is_bounded(states[i + 1]):
            diverged = True
            n_done = i
            break
    times = np.arange(n_done + 1, dtype=np.float64)
    return Trajectory(times=times, states=states[:n_done + 1],
                      integrator="discrete_sim_gd", diverged=diverged)


def _is_bounded(x):
    return bool(np.all(np.isfinite(x))) and np.linalg.norm(x) <= DIVERGENCE_NORM


def amplitude(values, window=None):
    """
    Largest absolute value, optionally over the last window entries only.
    """
    values = np.asarray(values)
    if window is not None:
        values = values[-window:]
    return float(np.max(np.abs(values)))


def check_converged(trajectory, tol):
    """ Raise DivergenceError if the simulation diverged, else return whether
    |theta| + |psi| of the final state is below tol. """
    if trajectory.diverged:
        raise DivergenceError("Dirac simulation diverged after {} steps".format(
            len(trajectory) - 1))
    final = trajectory.states[-1]
    return bool(abs(final[0]) + abs(final[1]) < tol)
