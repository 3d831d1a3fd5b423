import numpy as np
import pytest

from kepreg import flow, manifolds, model

rng = np.random.default_rng(23)

T = 2.0 * np.pi


class TestConstants:
    def test_k1_values(self):
        c = manifolds.constants(manifolds.ManifoldSpec(k=1, T=T, dim=2))
        assert c.tau == pytest.approx(2.0 ** (-1.0 / 3.0), abs=1e-15)
        assert c.S == pytest.approx(2.0 * np.pi * 2.0 ** (2.0 / 3.0),
                                    abs=1e-12)

    def test_closure_identity(self):
        """k sigma_k worth of s-time advances t by exactly T."""
        for k in range(1, 11):
            spec = manifolds.ManifoldSpec(k=k, T=T, dim=2)
            c = manifolds.constants(spec)
            # mean of |z|^2 over a seed orbit is 1/(2 tau); k sigma_k
            # of it must be T
            assert c.S / (2.0 * c.tau) == pytest.approx(T, rel=1e-12)

    def test_tau_ordering(self):
        taus = [manifolds.constants(
            manifolds.ManifoldSpec(k=k, T=T, dim=2)).tau for k in (1, 2, 3)]
        assert taus[0] < taus[1] < taus[2]

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            manifolds.ManifoldSpec(k=0, T=T, dim=2)
        with pytest.raises(ValueError):
            manifolds.ManifoldSpec(k=1, T=-1.0, dim=2)
        with pytest.raises(ValueError):
            manifolds.ManifoldSpec(k=1, T=T, dim=4)


class TestSeeds:
    def test_seed_constraints(self):
        for dim in (2, 3):
            for k in (1, 3):
                spec = manifolds.ManifoldSpec(k=k, T=T, dim=dim)
                c = manifolds.constants(spec)
                for _ in range(10):
                    X0 = manifolds.seed_state(
                        spec, manifolds.random_seed_params(spec, rng))
                    assert abs(model.reg_energy(X0, 0.0, None)) < 1e-12
                    assert X0[-1] == pytest.approx(c.tau)
                    if dim == 3:
                        assert abs(model.bl_value(X0)) < 1e-12

    def test_circular_seed_constant_radius(self):
        spec = manifolds.ManifoldSpec(k=1, T=T, dim=2)
        c = manifolds.constants(spec)
        X0 = manifolds.seed_state(spec, manifolds.circular_seed_params(spec))
        for s in np.linspace(0.0, c.S, 30):
            z, _, _, _ = model.unpack_state(
                manifolds.closed_form_flow(spec, X0, s))
            assert np.dot(z, z) == pytest.approx(1.0 / (2.0 * c.tau),
                                                 abs=1e-8)

    def test_rectilinear_seed_at_rest(self):
        spec = manifolds.ManifoldSpec(k=1, T=T, dim=2)
        X0 = manifolds.seed_state(spec,
                                  manifolds.rectilinear_seed_params(spec))
        _, w0, _, _ = model.unpack_state(X0)
        assert np.allclose(w0, 0.0)

    def test_off_manifold_rejected(self):
        spec = manifolds.ManifoldSpec(k=1, T=T, dim=2)
        X0 = manifolds.seed_state(spec, manifolds.circular_seed_params(spec))
        X0[-1] += 0.1
        with pytest.raises(ValueError):
            manifolds.closed_form_flow(spec, X0, 1.0)


class TestClosedForms:
    def _setup(self, dim=2, k=1):
        spec = manifolds.ManifoldSpec(k=k, T=T, dim=dim)
        c = manifolds.constants(spec)
        X0 = manifolds.seed_state(spec,
                                  manifolds.random_seed_params(spec, rng))
        return spec, c, X0

    def test_closed_form_solves_field(self):
        """FD derivative of the closed form matches the field."""
        spec, c, X0 = self._setup()
        h = 1e-6
        for s in np.linspace(0.3, c.S - 0.3, 9):
            d = (manifolds.closed_form_flow(spec, X0, s + h)
                 - manifolds.closed_form_flow(spec, X0, s - h)) / (2 * h)
            f = model.reg_field(manifolds.closed_form_flow(spec, X0, s),
                                0.0, None)
            assert np.allclose(d, f, atol=1e-7)

    def test_orbit_closes_with_time_advance(self):
        for dim in (2, 3):
            for k in (1, 2):
                spec, c, X0 = self._setup(dim, k)
                XS = manifolds.closed_form_flow(spec, X0, c.S)
                diff = XS - X0
                assert diff[-2] == pytest.approx(T, abs=1e-10)
                diff[-2] = 0.0
                assert np.linalg.norm(diff) < 1e-10

    def test_time_matches_quadrature(self):
        from scipy.integrate import quad
        spec, c, X0 = self._setup()

        def r2(s):
            z, _, _, _ = model.unpack_state(
                manifolds.closed_form_flow(spec, X0, s))
            return float(np.dot(z, z))

        for s_end in (1.0, c.S / 3.0, c.S):
            got = manifolds.closed_form_time(spec, X0, s_end) - X0[-2]
            expected, _ = quad(r2, 0.0, s_end, limit=200)
            assert got == pytest.approx(expected, abs=1e-9)

    def test_variation_solves_linearized_field(self):
        spec, c, X0 = self._setup()
        h = 1e-6
        for s in np.linspace(0.2, c.S - 0.2, 7):
            d = (manifolds.closed_form_variation(spec, X0, s + h)
                 - manifolds.closed_form_variation(spec, X0, s - h)) / (2 * h)
            X = manifolds.closed_form_flow(spec, X0, s)
            Y = manifolds.closed_form_variation(spec, X0, s)
            f = model.variational_field_unperturbed(X, Y)
            assert np.allclose(d, f, atol=1e-6)

    def test_variation_initial_value(self):
        spec, c, X0 = self._setup()
        Y0 = manifolds.closed_form_variation(spec, X0, 0.0)
        assert np.allclose(Y0, manifolds.variation_start(spec, X0),
                           atol=1e-13)

    def test_variation_endpoints(self):
        """Endpoint values against their standalone expressions."""
        for dim in (2, 3):
            for k in (1, 2, 3):
                spec, c, X0 = self._setup(dim, k)
                z0, w0, _, tau = model.unpack_state(X0)
                om = c.omega
                kpi = spec.k * np.pi
                Y = manifolds.closed_form_variation(spec, X0, c.S)
                zd = z0.size
                assert np.allclose(Y[:zd], z0 - (kpi / (2 * om)) * w0,
                                   atol=1e-10)
                assert np.allclose(Y[zd:2 * zd], (4 * kpi * tau / om) * z0,
                                   atol=1e-10)
                assert Y[-2] == pytest.approx(
                    (kpi / om) * (-2 * float(np.dot(z0, z0)) + 3.0 / tau),
                    abs=1e-10)
                assert Y[-1] == pytest.approx(-2 * tau)


class TestCertificates:
    def test_monodromy_matches_closed_variation(self):
        for dim in (2, 3):
            spec = manifolds.ManifoldSpec(k=1, T=T, dim=dim)
            c = manifolds.constants(spec)
            X0 = manifolds.seed_state(
                spec, manifolds.random_seed_params(spec, rng))
            field = lambda X: model.reg_field(X, 0.0)
            jac = lambda X: model.reg_field_jacobian(X, 0.0)
            _, mono = flow.monodromy(field, jac, X0, c.S)
            got = mono.M @ manifolds.variation_start(spec, X0)
            expected = manifolds.closed_form_variation(spec, X0, c.S)
            scale = max(1.0, np.linalg.norm(expected))
            assert np.linalg.norm(got - expected) < 1e-6 * scale

    def test_certificate_angle(self):
        for dim in (2, 3):
            for k in (1, 2):
                spec = manifolds.ManifoldSpec(k=k, T=T, dim=dim)
                for _ in range(3):
                    X0 = manifolds.seed_state(
                        spec, manifolds.random_seed_params(spec, rng))
                    rep = manifolds.nondegeneracy_certificate(spec, X0)
                    assert rep["principal_angle"] > 1e-3
                    assert rep["det_monodromy"] == pytest.approx(1.0,
                                                                 abs=1e-6)

    def test_certificate_is_json_serializable(self):
        import json
        spec = manifolds.ManifoldSpec(k=1, T=T, dim=2)
        X0 = manifolds.seed_state(spec,
                                  manifolds.random_seed_params(spec, rng))
        rep = manifolds.nondegeneracy_certificate(spec, X0)
        json.dumps(rep)

    def test_degeneracy_index_identity(self):
        spec = manifolds.ManifoldSpec(k=1, T=T, dim=2)
        c = manifolds.constants(spec)
        X0 = manifolds.seed_state(spec,
                                  manifolds.random_seed_params(spec, rng))
        field = lambda X: model.reg_field(X, 0.0)
        jac = lambda X: model.reg_field_jacobian(X, 0.0)
        _, mono = flow.monodromy(field, jac, X0, c.S)
        dim_e, info = manifolds.degeneracy_index(
            mono, model.reg_energy_gradient(X0, 0.0))
        assert info["identity_check"]
        assert dim_e >= 1
