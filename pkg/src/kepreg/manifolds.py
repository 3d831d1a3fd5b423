"""Unperturbed periodic manifolds of the regularized Kepler flow.

For forcing period T and index k >= 1, the manifold of zero-energy
states with tau = tau_k = (sqrt(2) k pi / T)^(2/3) is filled by closed
orbits of common period S_k = 2 k pi sqrt(2 / tau_k), along which the
flow, the time component and a distinguished variational solution are
available in closed form.  The closed forms provide the oracles for the
numerical monodromy and the Weinstein-type non-degeneracy certificate.
"""

from dataclasses import dataclass

import numpy as np

from . import flow, model
from .algebra import lc_plane_basis

__all__ = [
    "ManifoldSpec",
    "ManifoldConstants",
    "SeedParams",
    "constants",
    "seed_state",
    "random_seed_params",
    "circular_seed_params",
    "rectilinear_seed_params",
    "closed_form_flow",
    "closed_form_time",
    "closed_form_variation",
    "variation_start",
    "nondegeneracy_certificate",
    "degeneracy_index",
]

ON_MANIFOLD_TOL = 1e-10


@dataclass(frozen=True)
class ManifoldSpec:
    k: int
    T: float
    dim: int = 2

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("manifold index k must be >= 1")
        if self.T <= 0:
            raise ValueError("forcing period T must be positive")
        if self.dim not in (2, 3):
            raise ValueError("dimension must be 2 or 3")


@dataclass(frozen=True)
class ManifoldConstants:
    tau: float      # conjugate-time level tau_k
    omega: float    # angular frequency of z(s)
    sigma: float    # minimal period of z(s)
    S: float        # orbit period k * sigma


def constants(spec):
    """Manifold constants; k pi / (omega tau) reproduces T exactly."""
    tau = (np.sqrt(2.0) * spec.k * np.pi / spec.T) ** (2.0 / 3.0)
    omega = np.sqrt(tau / 2.0)
    sigma = 2.0 * np.pi / omega
    return ManifoldConstants(tau=tau, omega=omega, sigma=sigma,
                             S=spec.k * sigma)


@dataclass(frozen=True)
class SeedParams:
    """Angles selecting (z0, w0) on the sphere tau |z0|^2 + |w0|^2/8 = 1.

    |z0| = cos(psi)/sqrt(tau) and |w0| = sqrt(8) sin(psi); phi1/phi2 set
    the in-plane directions.  In 3D the planar data is embedded into the
    Levi-Civita plane spanned by the orthonormal ``plane`` columns.
    """

    psi: float = 0.0
    phi1: float = 0.0
    phi2: float = 0.0
    t0: float = 0.0
    plane: object = None        # (4, 2) array for 3D seeds


def _planar_seed(spec, params):
    c = constants(spec)
    r = np.cos(params.psi) / np.sqrt(c.tau)
    rho = np.sqrt(8.0) * np.sin(params.psi)
    z0 = r * np.array([np.cos(params.phi1), np.sin(params.phi1)])
    w0 = rho * np.array([np.cos(params.phi2), np.sin(params.phi2)])
    return z0, w0


def seed_state(spec, params):
    """Initial state on the manifold; K_0 = 0 (and BL = 0 in 3D) hold
    by construction."""
    c = constants(spec)
    z2, w2 = _planar_seed(spec, params)
    if spec.dim == 2:
        return model.pack_state(z2, w2, params.t0, c.tau)
    plane = params.plane
    if plane is None:
        plane = np.column_stack([np.array([1.0, 0.0, 0.0, 0.0]),
                                 np.array([0.0, 0.0, 1.0, 0.0])])
    plane = np.asarray(plane, float)
    z0 = plane @ z2
    w0 = plane @ w2
    return model.pack_state(z0, w0, params.t0, c.tau)


def random_seed_params(spec, rng):
    plane = None
    if spec.dim == 3:
        v1, v2 = lc_plane_basis(rng.normal(size=4), rng=rng)
        plane = np.column_stack([v1, v2])
    return SeedParams(psi=rng.uniform(0.0, 2.0 * np.pi),
                      phi1=rng.uniform(0.0, 2.0 * np.pi),
                      phi2=rng.uniform(0.0, 2.0 * np.pi),
                      t0=rng.uniform(0.0, spec.T),
                      plane=plane)


def circular_seed_params(spec, t0=0.0, plane=None):
    """Seed whose physical orbit is circular with radius 1/(2 tau_k)."""
    c = constants(spec)
    # |w0| = 4 omega |z0| and <z0, w0> = 0 make |z(s)| constant; on the
    # sphere parametrization this pins tan(psi) = 4 omega / sqrt(8 tau)
    psi = np.arctan2(4.0 * c.omega, np.sqrt(8.0 * c.tau))
    return SeedParams(psi=psi, phi1=0.0, phi2=np.pi / 2.0, t0=t0, plane=plane)


def rectilinear_seed_params(spec, t0=0.0, plane=None):
    """Seed with w0 = 0: a collision-bounce ray through the origin."""
    return SeedParams(psi=0.0, phi1=0.0, phi2=0.0, t0=t0, plane=plane)


def _check_on_manifold(spec, X0, tol=ON_MANIFOLD_TOL):
    c = constants(spec)
    _, _, _, tau = model.unpack_state(X0)
    K0 = model.reg_energy(X0, 0.0, None)
    if abs(tau - c.tau) > tol or abs(K0) > tol:
        raise ValueError(
            f"state is off the manifold: |tau - tau_k| = {abs(tau - c.tau):.2e}, "
            f"K_0 = {K0:.2e}")
    return c


def closed_form_flow(spec, X0, s):
    """Exact unperturbed solution through X0 on the manifold.

    z(s) = z0 cos(w s) + (w0 / 4w) sin(w s), w(s) = 4 z'(s), tau frozen
    and t(s) by the analytic quadrature of |z|^2.
    """
    c = _check_on_manifold(spec, X0)
    z0, w0, t0, tau = model.unpack_state(X0)
    om = c.omega
    cs, sn = np.cos(om * s), np.sin(om * s)
    z = z0 * cs + (w0 / (4.0 * om)) * sn
    w = -4.0 * om * z0 * sn + w0 * cs
    return model.pack_state(z, w, closed_form_time(spec, X0, s), tau)


def closed_form_time(spec, X0, s):
    """Analytic t(s) = t0 + integral of |z|^2 along the closed form."""
    c = _check_on_manifold(spec, X0)
    z0, w0, t0, _ = model.unpack_state(X0)
    om = c.omega
    a2 = float(np.dot(z0, z0))
    b2 = float(np.dot(w0, w0)) / (16.0 * om * om)
    ab = float(np.dot(z0, w0)) / (2.0 * om)
    s = np.asarray(s, float)
    int_cos2 = s / 2.0 + np.sin(2.0 * om * s) / (4.0 * om)
    int_sincos = np.sin(om * s) ** 2 / (2.0 * om)
    int_sin2 = s / 2.0 - np.sin(2.0 * om * s) / (4.0 * om)
    return t0 + a2 * int_cos2 + ab * int_sincos + b2 * int_sin2


def variation_start(spec, X0):
    """The distinguished tangent vector Y* = (z0, 0, 0, -2 tau_k)."""
    c = _check_on_manifold(spec, X0)
    z0, w0, _, _ = model.unpack_state(X0)
    return model.pack_state(z0, np.zeros_like(w0), 0.0, -2.0 * c.tau)


def closed_form_variation(spec, X0, s):
    """Exact linearized solution with initial value Y*.

    Along z(s) the solution collapses to Y1 = z - s z', Y2 = 2 tau s z,
    Y3 = 3 (t(s) - t0) - s |z(s)|^2, Y4 = -2 tau, which reproduces the
    endpoint values Y1(S) = z0 - (k pi / 2w) w0, Y2(S) = (4 k pi tau/w) z0
    and Y3(S) = (k pi / w)(-2 |z0|^2 + 3 / tau).
    """
    c = _check_on_manifold(spec, X0)
    z0, w0, t0, tau = model.unpack_state(X0)
    om = c.omega
    cs, sn = np.cos(om * s), np.sin(om * s)
    z = z0 * cs + (w0 / (4.0 * om)) * sn
    dz = -om * z0 * sn + (w0 / 4.0) * cs
    Y1 = z - s * dz
    Y2 = 2.0 * tau * s * z
    Y3 = 3.0 * (closed_form_time(spec, X0, s) - t0) - s * float(np.dot(z, z))
    return model.pack_state(Y1, Y2, Y3, -2.0 * tau)


# ---------------------------------------------------------------------------
# non-degeneracy certification

def _principal_angle(vec, span_vectors):
    """Smallest principal angle between span{vec} and span(span_vectors)."""
    v = vec / np.linalg.norm(vec)
    Q, _ = np.linalg.qr(np.column_stack(span_vectors))
    cosang = np.linalg.norm(Q.T @ v)
    return float(np.arccos(min(1.0, cosang)))


def nondegeneracy_certificate(spec, X0, cfg=None):
    """Certify (Id - P) Y* leaves the forbidden span, numerically.

    P is the monodromy over S_k computed by variational integration.
    The forbidden span is the field direction (2D), joined by the
    circle-action generator (3D).  Returns a JSON-serializable report
    with the vectors, the principal angle and the degeneracy index.
    """
    c = _check_on_manifold(spec, X0)
    if spec.dim == 3 and abs(model.bl_value(X0)) > ON_MANIFOLD_TOL:
        raise ValueError("3D certificate needs a BL = 0 state")
    cfg = cfg or flow.IntegratorConfig()
    field = lambda X: model.reg_field(X, 0.0)
    jac = lambda X: model.reg_field_jacobian(X, 0.0)
    _, mono = flow.monodromy(field, jac, X0, c.S, cfg)
    Ystar = variation_start(spec, X0)
    residual = Ystar - mono.M @ Ystar
    forbidden = [mono.field_dir]
    if spec.dim == 3:
        forbidden.append(model.group_direction(X0))
    angle = _principal_angle(residual, forbidden)
    dim_e, index_info = degeneracy_index(mono, model.reg_energy_gradient(X0, 0.0))
    return {
        "k": spec.k,
        "T": spec.T,
        "dim": spec.dim,
        "X0": list(map(float, X0)),
        "Id_minus_P_Ystar": list(map(float, residual)),
        "forbidden_span": [list(map(float, v)) for v in forbidden],
        "principal_angle": angle,
        "dim_E": dim_e,
        "degeneracy_index": dim_e - 1,
        "rank_Id_minus_Gamma": index_info["rank"],
        "det_monodromy": mono.det,
    }


def degeneracy_index(mono, grad_H, rank_tol=1e-8):
    """Degeneracy index dim(E) = 1 + dim ker(Id - Gamma) of a closed orbit.

    Builds the adapted basis (v1 not in W, v2 = field direction, rest
    spanning W), extracts the (2N-2) x (2N-2) block Gamma of the
    monodromy and decides ranks by SVD with a relative threshold.
    Returns (dim_E, info) with the isomorphism-identity cross-check
    dim_E - 1 = 2N - 2 - rank(Id - Gamma) re-derived from the same SVD.
    """
    w = np.asarray(mono.field_dir, float)
    nw = np.linalg.norm(w)
    if nw == 0.0:
        raise ValueError("field direction vanishes (equilibrium point)")
    g = np.asarray(grad_H, float)
    g = g / np.linalg.norm(g)
    w_hat = w - np.dot(g, w) * g
    w_hat = w_hat / np.linalg.norm(w_hat)
    D = g.size
    Q, _ = np.linalg.qr(np.column_stack([g, w_hat, np.eye(D)]))
    rest = Q[:, 2:]
    B = np.column_stack([g, w, *rest.T])
    Mp = np.linalg.solve(B, mono.M @ B)
    Gamma = Mp[2:, 2:]
    A = np.eye(D - 2) - Gamma
    svals = np.linalg.svd(A, compute_uv=False)
    thresh = rank_tol * max(np.linalg.norm(A), 1e-30)
    rank = int(np.sum(svals > thresh))
    nullity = (D - 2) - rank
    dim_e = 1 + nullity
    return dim_e, {"rank": rank,
                   "singular_values": list(map(float, svals)),
                   "identity_check": dim_e - 1 == (D - 2) - rank}
