from unittest import TestCase
import itertools

import numpy as np

import sdganlab.dirac as dirac
from sdganlab.dirac import DiracParams, DiracState
from sdganlab.exceptions import DivergenceError
from sdganlab.rng import Rng


def random_params(rng, n, alpha_high=2.):
    """ n random valid parameter sets. """
    params = []
    for _ in range(n):
        sign = 1. if rng.random() < 0.5 else -1.
        params.append(DiracParams(
            eta_G=float(rng.uniform(0.1, 3.)),
            eta_D=float(rng.uniform(0.1, 3.)),
            eta_phi=float(rng.uniform(0.001, 0.5)),
            alpha=float(rng.uniform(0., alpha_high)),
            c=sign * float(rng.uniform(0.2, 2.))))
    return params


GRID = {
    "eta_G": (0.1, 1., 10.),
    "eta_D": (0.1, 1., 10.),
    "eta_phi": (0.001, 0.01, 0.1),
    "c": (-2., 1.),
}


def grid_params(alphas):
    for eta_G, eta_D, eta_phi, c, alpha in itertools.product(
            *GRID.values(), alphas):
        yield DiracParams(eta_G=eta_G, eta_D=eta_D, eta_phi=eta_phi,
                          alpha=alpha, c=c)


class TestDiracParams(TestCase):
    def test_invalid(self):
        for kwargs in ({"eta_G": 0.}, {"eta_D": -1.}, {"eta_phi": 1.},
                       {"eta_phi": -0.1}, {"alpha": -0.5}, {"c": 0.}):
            with self.assertRaises(ValueError):
                DiracParams(**kwargs)

    def test_beta(self):
        self.assertAlmostEqual(DiracParams(eta_phi=0.01).beta, 0.99)


class TestVectorField(TestCase):
    def setUp(self):
        self.p = DiracParams(eta_G=1., eta_D=1., eta_phi=0.1, alpha=1., c=1.)

    def test_examples(self):
        self.assertEqual(dirac.vector_field(DiracState(1., 0., 0.), self.p),
                         DiracState(-1., 1., 0.1))
        self.assertEqual(dirac.vector_field(DiracState(0., 1., 0.), self.p),
                         DiracState(-1., 0., 0.))

    def test_equilibrium(self):
        for p in random_params(Rng(0), 20):
            self.assertEqual(dirac.vector_field(DiracState(0., 0., 0.), p),
                             DiracState(0., 0., 0.))


class TestJacobian(TestCase):
    def test_example(self):
        p = DiracParams(eta_G=1., eta_D=1., eta_phi=0.1, alpha=1., c=1.)
        np.testing.assert_array_equal(
            dirac.jacobian(p), [[-1., -1., 1.], [1., 0., 0.], [0.1, 0., -0.1]])

    def test_no_sd(self):
        p = DiracParams(eta_G=2., eta_D=1., eta_phi=0.1, alpha=0., c=3.)
        np.testing.assert_array_equal(dirac.jacobian(p)[0], [0., -6., 0.])

    def test_finite_differences(self):
        rng = Rng(1)
        h = 1e-4
        for p in random_params(rng, 20):
            x = rng.normal(3)
            numeric = np.empty((3, 3))
            for j in range(3):
                dx = np.zeros(3)
                dx[j] = h
                up = dirac.vector_field(DiracState(*(x + dx)), p).as_array()
                down = dirac.vector_field(DiracState(*(x - dx)), p).as_array()
                numeric[:, j] = (up - down) / (2 * h)
            np.testing.assert_allclose(numeric, dirac.jacobian(p), rtol=0,
                                       atol=1e-8)


class TestCharacteristicPolynomial(TestCase):
    def test_examples(self):
        p = DiracParams(eta_G=1., eta_D=1., eta_phi=0.01, alpha=1., c=1.)
        np.testing.assert_allclose(dirac.characteristic_coefficients(p),
                                   (1., 1.01, 1., 0.01), rtol=1e-15)
        p = DiracParams(eta_G=1., eta_D=1., eta_phi=0.05, alpha=0., c=1.)
        np.testing.assert_allclose(dirac.characteristic_coefficients(p),
                                   (1., 0.05, 1., 0.05), rtol=1e-15)

    def test_matches_expanded_determinant(self):
        for p in random_params(Rng(2), 1000):
            symbolic = dirac.characteristic_coefficients(p)
            expanded = dirac.expanded_coefficients(dirac.jacobian(p))
            self.assertEqual(symbolic[0], 1.)
            np.testing.assert_allclose(symbolic, expanded, rtol=0, atol=1e-12)

    def test_margin_identity(self):
        for p in random_params(Rng(2), 1000):
            a3, a2, a1, a0 = dirac.characteristic_coefficients(p)
            self.assertAlmostEqual(a2 * a1 - a3 * a0,
                                   p.eta_D * p.eta_G ** 2 * p.c ** 2 * p.alpha,
                                   delta=1e-12)


class TestEigenvalues(TestCase):
    def test_factorized_case(self):
        p = DiracParams(eta_G=1., eta_D=1., eta_phi=0.05, alpha=0., c=1.)
        eig = dirac.eigenvalues(p)
        target = np.array([1j, -1j, -0.05])
        for value in target:
            self.assertLess(np.min(np.abs(eig - value)), 1e-12)

    def test_residual_and_sign(self):
        for p in random_params(Rng(3), 200):
            coefficients = dirac.characteristic_coefficients(p)
            eig = dirac.eigenvalues(p)
            self.assertEqual(len(eig), 3)
            residual = np.abs(np.polyval(coefficients, eig))
            self.assertLess(np.max(residual), 1e-9)
            if p.alpha > 0:
                self.assertLess(np.max(eig.real), 0.)

    def test_example_stable(self):
        p = DiracParams(eta_G=1., eta_D=1., eta_phi=0.01, alpha=1., c=1.)
        self.assertTrue(np.all(dirac.eigenvalues(p).real < 0))

    def test_sorted_by_real_part(self):
        eig = dirac.eigenvalues(DiracParams(alpha=0.3))
        self.assertTrue(np.all(np.diff(eig.real) <= 0))


class TestRouthHurwitz(TestCase):
    def test_examples(self):
        report = dirac.routh_hurwitz(
            DiracParams(eta_G=1., eta_D=1., eta_phi=0.01, alpha=1., c=1.))
        self.assertAlmostEqual(report.margin, 1., delta=1e-12)
        self.assertTrue(report.routh_hurwitz_pass)
        self.assertEqual(report.coefficients[0], 1.)

        report = dirac.routh_hurwitz(
            DiracParams(eta_G=1., eta_D=1., eta_phi=0.01, alpha=0., c=1.))
        self.assertEqual(report.margin, 0.)
        self.assertFalse(report.routh_hurwitz_pass)

        report = dirac.routh_hurwitz(
            DiracParams(eta_G=1., eta_D=1., eta_phi=0.01, alpha=0.5, c=-1.))
        self.assertTrue(report.routh_hurwitz_pass)

    def test_grid_with_sd_is_stable(self):
        for p in grid_params((0.01, 0.1, 1.)):
            report = dirac.routh_hurwitz(p)
            self.assertTrue(report.routh_hurwitz_pass, p)
            self.assertLess(report.max_real_part, 0., p)
            self.assertAlmostEqual(report.margin, report.expected_margin,
                                   delta=1e-12 * max(1., report.coefficients[1]
                                                     * report.coefficients[2]))

    def test_grid_without_sd_is_marginal(self):
        for p in grid_params((0., )):
            report = dirac.routh_hurwitz(p)
            self.assertFalse(report.routh_hurwitz_pass, p)
            self.assertLess(abs(report.max_real_part), 1e-9, p)

    def test_classifier_agreement(self):
        for p in random_params(Rng(4), 1000):
            report = dirac.routh_hurwitz(p)
            self.assertEqual(report.routh_hurwitz_pass,
                             report.max_real_part < -1e-10, p)
            if p.alpha == 0:
                self.assertLess(abs(report.max_real_part), 1e-9)

    def test_sweep(self):
        base = DiracParams(eta_G=0.5, eta_D=2., c=1.5)
        reports = dirac.stability_sweep(base, [0., 1.], [0.01, 0.1, 0.2])
        self.assertEqual(len(reports), 6)
        self.assertEqual([r.params.alpha for r in reports], [0.] * 3 + [1.] * 3)
        self.assertEqual([r.params.eta_phi for r in reports], [0.01, 0.1, 0.2] * 2)
        self.assertEqual([r.routh_hurwitz_pass for r in reports],
                         [False] * 3 + [True] * 3)
        for r in reports:
            self.assertEqual(r.params.eta_G, 0.5)


class TestSimulateOde(TestCase):
    def test_conservation_without_sd(self):
        p = DiracParams(eta_G=1., eta_D=1., eta_phi=0.01, alpha=0., c=1.)
        traj = dirac.simulate_ode(DiracState(1., 0., 0.), p, 100., 1e-3)
        self.assertFalse(traj.diverged)
        self.assertEqual(len(traj), 100001)
        energy = p.eta_D * traj.theta ** 2 + p.eta_G * traj.psi ** 2
        self.assertLess(np.max(np.abs(energy - energy[0])), 1e-3)

    def test_conservation_general_rates(self):
        p = DiracParams(eta_G=0.5, eta_D=2., eta_phi=0.1, alpha=0., c=1.)
        traj = dirac.simulate_ode(DiracState(1., 0.5, 0.), p, 20., 1e-3)
        energy = p.eta_D * traj.theta ** 2 + p.eta_G * traj.psi ** 2
        self.assertLess(np.max(np.abs(energy - energy[0])), 1e-3)

    def test_sd_contracts(self):
        p = DiracParams(eta_G=1., eta_D=1., eta_phi=0.01, alpha=0.5, c=1.)
        traj = dirac.simulate_ode(DiracState(1., 0., 0.), p, 100., 1e-3)
        self.assertLess(traj.radius[-1], 0.1 * traj.radius[0])
        self.assertAlmostEqual(traj.times[-1], 100., places=9)

    def test_origin_stays(self):
        traj = dirac.simulate_ode(DiracState(0., 0., 0.), DiracParams(), 1., 0.01)
        np.testing.assert_array_equal(traj.states, 0.)

    def test_euler_diverges(self):
        p = DiracParams(eta_G=1., eta_D=1., eta_phi=0.01, alpha=0., c=1.)
        traj = dirac.simulate_ode(DiracState(1., 0., 0.), p, 1e4, 0.5,
                                  integrator="euler")
        self.assertTrue(traj.diverged)
        self.assertTrue(np.all(np.isfinite(traj.states)))
        self.assertLessEqual(np.max(np.linalg.norm(traj.states, axis=1)),
                             dirac.DIVERGENCE_NORM)
        with self.assertRaises(DivergenceError):
            dirac.check_converged(traj, 1e-2)

    def test_invalid(self):
        with self.assertRaises(ValueError):
            dirac.simulate_ode(DiracState(1., 0., 0.), DiracParams(), 1., 0.)
        with self.assertRaises(NameError):
            dirac.simulate_ode(DiracState(1., 0., 0.), DiracParams(), 1., 0.1,
                               integrator="leapfrog")


class TestSimulateDiscrete(TestCase):
    def test_standard_gan_does_not_converge(self):
        p = DiracParams(eta_G=0.1, eta_D=0.1, alpha=0.)
        traj = dirac.simulate_discrete(DiracState(1., 1., 1.), p, 5000, 0.)
        self.assertGreaterEqual(traj.radius[-1], traj.radius[0])

    def test_sd_with_ema_converges(self):
        p = DiracParams(eta_G=0.1, eta_D=0.1, alpha=1.)
        traj = dirac.simulate_discrete(DiracState(1., 1., 1.), p, 5000, 0.99)
        self.assertEqual(len(traj), 5001)
        self.assertEqual(traj.integrator, "discrete_sim_gd")
        self.assertTrue(dirac.check_converged(traj, 1e-2))

    def test_single_step(self):
        p = DiracParams(eta_G=0.1, eta_D=0.2, alpha=0.5, c=2.)
        s0 = DiracState(1., 2., 3.)
        theta = 1. - 0.1 * (2. * 2. + 0.5 * (1. - 3.))
        psi_sim = 2. + 0.2 * 2. * 1.
        psi_alt = 2. + 0.2 * 2. * theta
        phi = 0.9 * 3. + 0.1 * theta
        sim = dirac.simulate_discrete(s0, p, 1, 0.9)
        alt = dirac.simulate_discrete(s0, p, 1, 0.9, update="alternating")
        np.testing.assert_allclose(sim.states[1], (theta, psi_sim, phi),
                                   rtol=1e-15)
        np.testing.assert_allclose(alt.states[1], (theta, psi_alt, phi),
                                   rtol=1e-15)

    def test_ema_shrinks_amplitude(self):
        p = DiracParams(eta_G=0.1, eta_D=0.1, alpha=0.)
        traj = dirac.simulate_discrete(DiracState(1., 0., 0.), p, 5000, 0.999,
                                       update="alternating")
        self.assertFalse(traj.diverged)
        window = len(traj) // 2
        self.assertLess(dirac.amplitude(traj.phi, window),
                        dirac.amplitude(traj.theta, window))

    def test_origin_stays(self):
        traj = dirac.simulate_discrete(DiracState(0., 0., 0.), DiracParams(),
                                       100, 0.99)
        np.testing.assert_array_equal(traj.states, 0.)

    def test_invalid(self):
        s0 = DiracState(1., 0., 0.)
        with self.assertRaises(ValueError):
            dirac.simulate_discrete(s0, DiracParams(), 0, 0.9)
        with self.assertRaises(ValueError):
            dirac.simulate_discrete(s0, DiracParams(), 10, 1.)
        with self.assertRaises(NameError):
            dirac.simulate_discrete(s0, DiracParams(), 10, 0.9, update="random")


class TestTrajectory(TestCase):
    def test_rows(self):
        traj = dirac.simulate_discrete(DiracState(3., 4., 0.), DiracParams(),
                                       3, 0.5)
        rows = traj.to_rows()
        self.assertEqual(rows.shape, (4, 5))
        self.assertEqual(dirac.Trajectory.columns,
                         ("t", "theta", "psi", "phi", "radius"))
        np.testing.assert_array_equal(rows[:, 0], [0., 1., 2., 3.])
        self.assertEqual(rows[0, 4], 5.)
        self.assertEqual(traj.state(0), DiracState(3., 4., 0.))
