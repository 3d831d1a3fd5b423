"""Perturbations, regularized Hamiltonians and vector fields.

The extended regularized state is a flat array

    2D: X = (zx, zy, wx, wy, t, tau)            (6 components)
    3D: X = (z0..z3, w0..w3, t, tau)            (10 components)

with t the *lifted* (unreduced) time; reduction modulo the forcing
period happens only when a perturbation is evaluated.  The regularized
energy is

    K_eps(X) = tau |z|^2 + |w|^2 / 8 - 1 - eps * P(t, z, eps)

with P(t, z, eps) = |z|^2 U(t, u(z), eps) and u(z) the Levi-Civita
(2D) or Kustaanheimo-Stiefel (3D) position.  The same -eps*P sign is
used in both dimensions so that both reduce to the same physical
equation.
"""

import numpy as np

from .algebra import ks_map

__all__ = [
    "Perturbation",
    "PerturbationError",
    "zero_perturbation",
    "forced_kepler",
    "fatou",
    "builtin_perturbations",
    "make_perturbation",
    "pack_state",
    "unpack_state",
    "state_dim",
    "space_dim",
    "position",
    "position_jacobian",
    "reg_energy",
    "reg_field",
    "reg_field_jacobian",
    "variational_field",
    "variational_field_unperturbed",
    "bl_value",
    "bl_gradient",
    "group_direction",
    "group_rotation_matrix",
    "physical_field",
    "physical_energy",
]


class PerturbationError(ValueError):
    """Raised when a perturbation fails its derivative self-check."""


class Perturbation:
    """Evaluator bundle for a smooth T-periodic force function U.

    Parameters
    ----------
    period : float
        Forcing period T.
    value, grad_u, dt : callables
        value(t, u, eps) -> scalar, grad_u(t, u, eps) -> (N,) array,
        dt(t, u, eps) -> scalar.  They are called with t already
        reduced modulo T and must be pure functions.
    smooth_at_origin : bool
        Whether U extends smoothly to u = 0; perturbations with
        singularities at the origin cannot be used in regularized runs.
    """

    def __init__(self, period, value, grad_u, dt, smooth_at_origin=True,
                 name="custom", params=None):
        if period <= 0:
            raise ValueError("period must be positive")
        self.period = float(period)
        self._value = value
        self._grad_u = grad_u
        self._dt = dt
        self.smooth_at_origin = bool(smooth_at_origin)
        self.name = name
        self.params = dict(params or {})

    def _reduce(self, t):
        T = self.period
        return t - T * np.floor(t / T)

    def value(self, t, u, eps):
        return float(self._value(self._reduce(t), np.asarray(u, float), eps))

    def grad_u(self, t, u, eps):
        return np.asarray(self._grad_u(self._reduce(t), np.asarray(u, float), eps),
                          float)

    def dt(self, t, u, eps):
        return float(self._dt(self._reduce(t), np.asarray(u, float), eps))

    def self_check(self, points, eps=1e-3, rel_tol=1e-5):
        """Compare analytic derivatives with central differences.

        ``points`` is an iterable of (t, u) samples.  Raises
        PerturbationError when either grad_u or dt disagrees with the
        finite-difference value beyond ``rel_tol`` relative error.
        """
        for t, u in points:
            u = np.asarray(u, float)
            g = self.grad_u(t, u, eps)
            g_fd = np.empty_like(g)
            for i in range(u.size):
                h = 1e-6 * max(1.0, abs(u[i]))
                up = u.copy()
                um = u.copy()
                up[i] += h
                um[i] -= h
                g_fd[i] = (self.value(t, up, eps) - self.value(t, um, eps)) / (2 * h)
            scale = max(1.0, float(np.linalg.norm(g)))
            if np.linalg.norm(g - g_fd) > rel_tol * scale:
                raise PerturbationError(
                    f"grad_u of '{self.name}' disagrees with finite differences "
                    f"at t={t}, u={u}: {g} vs {g_fd}")
            ht = 1e-6 * max(1.0, self.period)
            d_fd = (self.value(t + ht, u, eps) - self.value(t - ht, u, eps)) / (2 * ht)
            d = self.dt(t, u, eps)
            if abs(d - d_fd) > rel_tol * max(1.0, abs(d)):
                raise PerturbationError(
                    f"dt of '{self.name}' disagrees with finite differences "
                    f"at t={t}, u={u}: {d} vs {d_fd}")
        return True


def zero_perturbation(period=2.0 * np.pi, dim=2):
    """The trivial U = 0, for unperturbed runs."""
    n = dim
    return Perturbation(
        period,
        lambda t, u, eps: 0.0,
        lambda t, u, eps: np.zeros(n),
        lambda t, u, eps: 0.0,
        name="zero",
        params={"dim": dim},
    )


class _Fourier:
    """Truncated real Fourier series with exact mean readout."""

    def __init__(self, period, const, cos=None, sin=None):
        self.period = float(period)
        self.const = np.asarray(const, float)
        self.cos = np.asarray(cos, float) if cos is not None else \
            np.zeros((0, self.const.size))
        self.sin = np.asarray(sin, float) if sin is not None else \
            np.zeros((0, self.const.size))
        if self.cos.shape[1:] != self.const.shape or \
                self.sin.shape[1:] != self.const.shape:
            raise ValueError("coefficient shapes do not match")

    @property
    def dim(self):
        return self.const.size

    def __call__(self, t):
        out = self.const.copy()
        w = 2.0 * np.pi / self.period
        for m in range(self.cos.shape[0]):
            out = out + self.cos[m] * np.cos((m + 1) * w * t)
        for m in range(self.sin.shape[0]):
            out = out + self.sin[m] * np.sin((m + 1) * w * t)
        return out

    def deriv(self, t):
        out = np.zeros_like(self.const)
        w = 2.0 * np.pi / self.period
        for m in range(self.cos.shape[0]):
            out = out - (m + 1) * w * self.cos[m] * np.sin((m + 1) * w * t)
        for m in range(self.sin.shape[0]):
            out = out + (m + 1) * w * self.sin[m] * np.cos((m + 1) * w * t)
        return out

    def mean(self):
        return self.const.copy()


def forced_kepler(period, const=None, cos=None, sin=None, dim=2):
    """Linear forcing U(t, u) = <p(t), u> with p a truncated Fourier series."""
    if const is None:
        const = np.zeros(dim)
    p = _Fourier(period, const, cos, sin)
    if p.dim != dim:
        raise ValueError("forcing coefficients must have length dim")
    pert = Perturbation(
        period,
        lambda t, u, eps: float(np.dot(p(t), u)),
        lambda t, u, eps: p(t),
        lambda t, u, eps: float(np.dot(p.deriv(t), u)),
        name="forced_kepler",
        params={"dim": dim},
    )
    pert.forcing = p
    return pert


def fatou(k_prime, h_prime, n_prime, gamma=0.0):
    """Fatou's rotating-body potential (planar, singular at the origin).

    U = k'/r^3 + h'/r^5 [ (u1^2-u2^2) cos(2(n't+gamma))
                          + 2 u1 u2 sin(2(n't+gamma)) ].

    Periodic with period pi/n'.  Not smooth at u = 0, hence unusable
    for regularized runs.
    """
    if n_prime <= 0:
        raise ValueError("n_prime must be positive")

    def _phase(t):
        return 2.0 * (n_prime * t + gamma)

    def value(t, u, eps):
        r2 = float(np.dot(u, u))
        r = np.sqrt(r2)
        c, s = np.cos(_phase(t)), np.sin(_phase(t))
        quad = (u[0] ** 2 - u[1] ** 2) * c + 2.0 * u[0] * u[1] * s
        return k_prime / r ** 3 + h_prime * quad / r ** 5

    def grad_u(t, u, eps):
        r2 = float(np.dot(u, u))
        r = np.sqrt(r2)
        c, s = np.cos(_phase(t)), np.sin(_phase(t))
        quad = (u[0] ** 2 - u[1] ** 2) * c + 2.0 * u[0] * u[1] * s
        g = np.array([2.0 * u[0] * c + 2.0 * u[1] * s,
                      -2.0 * u[1] * c + 2.0 * u[0] * s])
        return (-3.0 * k_prime / r ** 5) * u + h_prime * g / r ** 5 \
            - 5.0 * h_prime * quad * u / r ** 7

    def dt(t, u, eps):
        r = np.sqrt(float(np.dot(u, u)))
        c, s = np.cos(_phase(t)), np.sin(_phase(t))
        return 2.0 * n_prime * h_prime * (
            -(u[0] ** 2 - u[1] ** 2) * s + 2.0 * u[0] * u[1] * c) / r ** 5

    return Perturbation(
        np.pi / n_prime, value, grad_u, dt,
        smooth_at_origin=False, name="fatou",
        params={"k_prime": k_prime, "h_prime": h_prime,
                "n_prime": n_prime, "gamma": gamma})


def builtin_perturbations():
    """Catalog of built-in perturbation factories, addressable by name."""
    return {"zero": zero_perturbation,
            "forced_kepler": forced_kepler,
            "fatou": fatou}


def make_perturbation(name, params):
    """Instantiate a catalog perturbation from a parameter map."""
    catalog = builtin_perturbations()
    if name not in catalog:
        raise KeyError(f"unknown perturbation '{name}' "
                       f"(available: {sorted(catalog)})")
    return catalog[name](**params)


# ---------------------------------------------------------------------------
# state layout helpers

def space_dim(X):
    """Physical dimension N (2 or 3) of a regularized state vector."""
    if len(X) == 6:
        return 2
    if len(X) == 10:
        return 3
    raise ValueError(f"regularized state must have 6 or 10 components, "
                     f"got {len(X)}")


def state_dim(dim):
    """Length of the regularized state vector for physical dimension N."""
    if dim == 2:
        return 6
    if dim == 3:
        return 10
    raise ValueError("dimension must be 2 or 3")


def pack_state(z, w, t, tau):
    return np.concatenate([np.atleast_1d(z), np.atleast_1d(w),
                           [float(t)], [float(tau)]])


def unpack_state(X):
    X = np.asarray(X, float)
    zd = (len(X) - 2) // 2
    return X[:zd], X[zd:2 * zd], float(X[2 * zd]), float(X[2 * zd + 1])


def position(z):
    """Physical position u for a regularized coordinate z (LC or KS)."""
    z = np.asarray(z, float)
    if z.size == 2:
        return np.array([z[0] ** 2 - z[1] ** 2, 2.0 * z[0] * z[1]])
    return ks_map(z)


def position_jacobian(z):
    """Jacobian A with A[k, i] = d u_k / d z_i."""
    z = np.asarray(z, float)
    if z.size == 2:
        x, y = z
        return np.array([[2 * x, -2 * y],
                         [2 * y, 2 * x]])
    z0, z1, z2, z3 = z
    return np.array([[2 * z0, 2 * z1, -2 * z2, -2 * z3],
                     [-2 * z3, 2 * z2, 2 * z1, -2 * z0],
                     [2 * z2, 2 * z3, 2 * z0, 2 * z1]])


def _position_hessians(zd):
    """Constant tensors B[k] with B[k][i, j] = d^2 u_k / d z_i d z_j."""
    if zd == 2:
        return np.array([[[2.0, 0.0], [0.0, -2.0]],
                         [[0.0, 2.0], [2.0, 0.0]]])
    B = np.zeros((3, 4, 4))
    B[0] = np.diag([2.0, 2.0, -2.0, -2.0])
    B[1][1, 2] = B[1][2, 1] = 2.0
    B[1][0, 3] = B[1][3, 0] = -2.0
    B[2][1, 3] = B[2][3, 1] = 2.0
    B[2][0, 2] = B[2][2, 0] = 2.0
    return B


def _check_regularizable(pert):
    if not pert.smooth_at_origin:
        raise ValueError(
            f"perturbation '{pert.name}' is singular at the origin and "
            "cannot be used in a regularized run")


# ---------------------------------------------------------------------------
# regularized Hamiltonian and field

def reg_energy(X, eps, pert):
    """Extended regularized Hamiltonian K_eps(X)."""
    z, w, t, tau = unpack_state(X)
    r2 = float(np.dot(z, z))
    K = tau * r2 + float(np.dot(w, w)) / 8.0 - 1.0
    if eps != 0.0:
        _check_regularizable(pert)
        K -= eps * r2 * pert.value(t, position(z), eps)
    return K


def _grad_z_P(z, t, eps, pert):
    """Gradient of P(t, z) = |z|^2 U(t, u(z)) with respect to z."""
    u = position(z)
    A = position_jacobian(z)
    Uval = pert.value(t, u, eps)
    g = pert.grad_u(t, u, eps)
    return 2.0 * Uval * z + float(np.dot(z, z)) * (A.T @ g)


def reg_field(X, eps, pert=None):
    """Right-hand side of the regularized Hamiltonian system."""
    z, w, t, tau = unpack_state(X)
    r2 = float(np.dot(z, z))
    if eps == 0.0 or pert is None:
        dw = -2.0 * tau * z
        dtau = 0.0
    else:
        _check_regularizable(pert)
        dw = -2.0 * tau * z + eps * _grad_z_P(z, t, eps, pert)
        dtau = eps * r2 * pert.dt(t, position(z), eps)
    return pack_state(w / 4.0, dw, r2, dtau)


def reg_energy_gradient(X, eps, pert=None):
    """Gradient of K_eps with respect to the state."""
    z, w, t, tau = unpack_state(X)
    r2 = float(np.dot(z, z))
    if eps == 0.0 or pert is None:
        gz = 2.0 * tau * z
        gt = 0.0
    else:
        gz = 2.0 * tau * z - eps * _grad_z_P(z, t, eps, pert)
        gt = -eps * r2 * pert.dt(t, position(z), eps)
    return pack_state(gz, w / 4.0, gt, r2)


def reg_field_jacobian(X, eps, pert=None, u_step=1e-6):
    """Exact Jacobian DF(X) of the regularized field.

    Second derivatives of U are obtained by central differencing its
    analytic gradient with step ``u_step * max(1, |u|)``; everything
    else is assembled analytically.
    """
    z, w, t, tau = unpack_state(X)
    zd = z.size
    D = 2 * zd + 2
    J = np.zeros((D, D))
    J[:zd, zd:2 * zd] = np.eye(zd) / 4.0
    J[zd:2 * zd, :zd] = -2.0 * tau * np.eye(zd)
    J[zd:2 * zd, 2 * zd + 1] = -2.0 * z
    J[2 * zd, :zd] = 2.0 * z
    if eps == 0.0 or pert is None:
        return J
    _check_regularizable(pert)

    u = position(z)
    A = position_jacobian(z)
    B = _position_hessians(zd)
    r2 = float(np.dot(z, z))
    Uval = pert.value(t, u, eps)
    g = pert.grad_u(t, u, eps)
    dUdt = pert.dt(t, u, eps)

    n = u.size
    H = np.empty((n, n))
    for i in range(n):
        h = u_step * max(1.0, abs(u[i]))
        up, um = u.copy(), u.copy()
        up[i] += h
        um[i] -= h
        H[:, i] = (pert.grad_u(t, up, eps) - pert.grad_u(t, um, eps)) / (2 * h)
    H = 0.5 * (H + H.T)
    ht = u_step * max(1.0, pert.period)
    dgdt = (pert.grad_u(t + ht, u, eps) - pert.grad_u(t - ht, u, eps)) / (2 * ht)
    d2Udt2 = (pert.dt(t + ht, u, eps) - pert.dt(t - ht, u, eps)) / (2 * ht)

    Ag = A.T @ g
    Hp = (2.0 * np.outer(z, Ag) + 2.0 * np.outer(Ag, z)
          + 2.0 * Uval * np.eye(zd)
          + r2 * (np.tensordot(g, B, axes=1) + A.T @ H @ A))
    dgradP_dt = 2.0 * dUdt * z + r2 * (A.T @ dgdt)

    J[zd:2 * zd, :zd] += eps * Hp
    J[zd:2 * zd, 2 * zd] = eps * dgradP_dt
    J[2 * zd + 1, :zd] = eps * (2.0 * dUdt * z + r2 * (A.T @ dgdt))
    J[2 * zd + 1, 2 * zd] = eps * r2 * d2Udt2
    return J


def variational_field(X, Y, eps, pert=None):
    """DF(X) . Y for the regularized field (any eps)."""
    return reg_field_jacobian(X, eps, pert) @ np.asarray(Y, float)


def variational_field_unperturbed(X, Y):
    """Linearized field along an unperturbed solution, in closed form.

    Valid only at eps = 0, where the linearization decouples as
    Y1' = Y2/4, Y2' = -2 tau Y1 - 2 z Y4, Y3' = 2 <z, Y1>, Y4' = 0.
    """
    z, _, _, tau = unpack_state(X)
    zd = z.size
    Y = np.asarray(Y, float)
    Y1, Y2 = Y[:zd], Y[zd:2 * zd]
    Y4 = Y[2 * zd + 1]
    return pack_state(Y2 / 4.0, -2.0 * tau * Y1 - 2.0 * z * Y4,
                      2.0 * float(np.dot(z, Y1)), 0.0)


# ---------------------------------------------------------------------------
# 3D first integral and circle action

def bl_value(X):
    """First integral Re(conj(z) i w) of the spatial regularized system."""
    z, w, _, _ = unpack_state(X)
    if z.size != 4:
        raise ValueError("bl_value is defined for 3D states only")
    return float(-z[0] * w[1] + z[1] * w[0] - z[2] * w[3] + z[3] * w[2])


def bl_gradient(X):
    """Gradient of bl_value, (i w, -i z, 0, 0)."""
    from .algebra import i_mul
    z, w, _, _ = unpack_state(X)
    return pack_state(i_mul(w), -i_mul(z), 0.0, 0.0)


def group_direction(X):
    """Infinitesimal generator (i z, i w, 0, 0) of the circle action."""
    from .algebra import i_mul
    z, w, _, _ = unpack_state(X)
    return pack_state(i_mul(z), i_mul(w), 0.0, 0.0)


def group_rotation_matrix(theta):
    """Matrix of X -> (g z, g w, t, tau) with g = cos(theta) + i sin(theta)."""
    c, s = np.cos(theta), np.sin(theta)
    Li = np.array([[0.0, -1.0, 0.0, 0.0],
                   [1.0, 0.0, 0.0, 0.0],
                   [0.0, 0.0, 0.0, -1.0],
                   [0.0, 0.0, 1.0, 0.0]])
    g = c * np.eye(4) + s * Li
    R = np.eye(10)
    R[:4, :4] = g
    R[4:8, 4:8] = g
    return R


# ---------------------------------------------------------------------------
# physical-space system

def physical_field(t, y, eps, pert):
    """Right-hand side of the physical system, y = (u, v)."""
    y = np.asarray(y, float)
    n = y.size // 2
    u, v = y[:n], y[n:]
    r = float(np.linalg.norm(u))
    if r == 0.0:
        raise ValueError("physical field is singular at u = 0")
    acc = -u / r ** 3
    if eps != 0.0:
        acc = acc + eps * pert.grad_u(t, u, eps)
    return np.concatenate([v, acc])


def physical_energy(u, v):
    """Kepler energy |v|^2 / 2 - 1 / |u|."""
    r = float(np.linalg.norm(u))
    return 0.5 * float(np.dot(v, v)) - 1.0 / r
