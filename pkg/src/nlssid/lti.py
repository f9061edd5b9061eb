"""Discrete-time linear state-space models: simulation, subspace + simulation
error estimation, and unit-state-variance normalization."""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.linalg import lstsq, svd

from .signals import Dataset, as_2d

__all__ = [
    "LtiStateSpace",
    "LtiEstimateOptions",
    "LtiFit",
    "simulate_lti",
    "output_jacobian",
    "normalize_states",
    "estimate_lti",
    "impulse_response",
    "lti_hash",
    "save_lti",
    "load_lti",
]


@dataclass
class LtiStateSpace:
    """x(k+1) = A x(k) + B u(k),  y(k) = C x(k) + D u(k)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n_x = self.A.shape[0]
        if self.A.shape != (n_x, n_x):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n_x:
            raise ValueError(f"B must have {n_x} rows, got {self.B.shape}")
        if self.C.shape[1] != n_x:
            raise ValueError(f"C must have {n_x} columns, got {self.C.shape}")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise ValueError(
                f"D must be {self.C.shape[0]} x {self.B.shape[1]}, got {self.D.shape}"
            )

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    @property
    def n_y(self):
        return self.C.shape[0]

    def eigenvalues(self):
        return np.linalg.eigvals(self.A)

    def is_stable(self) -> bool:
        """All eigenvalues of A strictly inside the unit circle."""
        return bool(np.max(np.abs(self.eigenvalues())) < 1.0)


def simulate_lti(model: LtiStateSpace, u, x0=None):
    """Simulate the exact state recursion.

    Returns ``(y, x)`` where ``y`` is (N, n_y) and ``x`` is the state
    trajectory with N+1 rows (the final state x(N) included).
    """
    u = as_2d(u, "u")
    n = u.shape[0]
    if u.shape[1] != model.n_u:
        raise ValueError(f"u has {u.shape[1]} channels, model expects {model.n_u}")
    if x0 is None:
        x0 = np.zeros(model.n_x)
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != model.n_x:
        raise ValueError(f"x0 must have length {model.n_x}")

    A, B, C, D = model.A, model.B, model.C, model.D
    x = np.empty((n + 1, model.n_x))
    y = np.empty((n, model.n_y))
    x[0] = x0
    for k in range(n):
        xk = x[k]
        uk = u[k]
        y[k] = C @ xk + D @ uk
        x[k + 1] = A @ xk + B @ uk
    return y, x


# parameter blocks of the flattened LTI vector, in column order
_LTI_BLOCKS = ("A", "B", "C", "D", "x0")


def _lti_layout(n_x, n_u, n_y):
    shapes = {
        "A": (n_x, n_x),
        "B": (n_x, n_u),
        "C": (n_y, n_x),
        "D": (n_y, n_u),
        "x0": (n_x,),
    }
    slices = {}
    start = 0
    for name in _LTI_BLOCKS:
        size = int(np.prod(shapes[name]))
        slices[name] = slice(start, start + size)
        start += size
    return shapes, slices, start


def pack_lti(model: LtiStateSpace, x0) -> np.ndarray:
    return np.concatenate(
        [model.A.ravel(), model.B.ravel(), model.C.ravel(), model.D.ravel(),
         np.asarray(x0, dtype=float).ravel()]
    )


def unpack_lti(theta, n_x, n_u, n_y):
    shapes, slices, size = _lti_layout(n_x, n_u, n_y)
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != size:
        raise ValueError(f"theta has length {theta.size}, layout needs {size}")
    parts = {k: theta[slices[k]].reshape(shapes[k]) for k in _LTI_BLOCKS}
    model = LtiStateSpace(parts["A"], parts["B"], parts["C"], parts["D"])
    return model, parts["x0"]


def output_jacobian(model: LtiStateSpace, u, x0=None) -> np.ndarray:
    """Exact d y(k) / d theta of the linear recursion, theta = [A,B,C,D,x0].

    Obtained by forward propagation of the state sensitivities
    S(k+1) = A S(k) + (direct terms); rows are sample-major, channel-minor.
    """
    u = as_2d(u, "u")
    n = u.shape[0]
    n_x, n_u, n_y = model.n_x, model.n_u, model.n_y
    if x0 is None:
        x0 = np.zeros(n_x)
    _, sl, p = _lti_layout(n_x, n_u, n_y)
    _, x = simulate_lti(model, u, x0)
    xk = x[:-1]

    d_state = np.zeros((n, n_x, p))
    a0 = sl["A"].start
    b0 = sl["B"].start
    for i in range(n_x):
        d_state[:, i, a0 + i * n_x: a0 + (i + 1) * n_x] = xk
        d_state[:, i, b0 + i * n_u: b0 + (i + 1) * n_u] = u

    s_all = np.empty((n, n_x, p))
    s = np.zeros((n_x, p))
    s[:, sl["x0"]] = np.eye(n_x)
    A = model.A
    for k in range(n):
        s_all[k] = s
        s = A @ s + d_state[k]

    jac = np.matmul(model.C[None, :, :], s_all)  # (n, n_y, p)
    c0 = sl["C"].start
    d0 = sl["D"].start
    for r in range(n_y):
        jac[:, r, c0 + r * n_x: c0 + (r + 1) * n_x] += xk
        jac[:, r, d0 + r * n_u: d0 + (r + 1) * n_u] += u
    return jac.reshape(n * n_y, p)


def normalize_states(model: LtiStateSpace, u):
    """Rescale the state basis so every simulated state has unit std.

    Applies the similarity transform T = diag(std(x_i)) computed from a
    zero-initial-state simulation on ``u``:  A' = T^-1 A T, B' = T^-1 B,
    C' = C T.  Input-output behavior is unchanged.  Returns ``(model', t)``
    with ``t`` the diagonal of T.
    """
    _, x = simulate_lti(model, u)
    stds = x[:-1].std(axis=0)  # population std over the N states x(0..N-1)
    if not np.all(np.isfinite(stds)):
        raise ValueError("state trajectory is not finite; model unstable on u")
    tiny = 1e-14 * max(1.0, float(stds.max()))
    bad = np.flatnonzero(stds <= tiny)
    if bad.size:
        raise ValueError(f"state {bad[0]} has zero variance on this input")
    t = stds
    scaled = LtiStateSpace(
        model.A * t[None, :] / t[:, None],
        model.B / t[:, None],
        model.C * t[None, :],
        model.D.copy(),
    )
    return scaled, t


def impulse_response(model: LtiStateSpace, n_lags: int) -> np.ndarray:
    """Markov parameters h(0) = D, h(k) = C A^(k-1) B, shape (n_lags, n_y, n_u)."""
    h = np.empty((n_lags, model.n_y, model.n_u))
    h[0] = model.D
    ak_b = model.B.copy()
    for k in range(1, n_lags):
        h[k] = model.C @ ak_b
        ak_b = model.A @ ak_b
    return h


@dataclass
class LtiEstimateOptions:
    horizon: int | None = None
    refine: bool = True
    lm: "object" = None  # LmOptions; resolved lazily to avoid a module cycle
    pe_check: bool = True


@dataclass
class LtiFit:
    """Result of :func:`estimate_lti`: refined model plus stage diagnostics."""

    model: LtiStateSpace
    x0: np.ndarray
    rmse_subspace: float
    rmse_refined: float
    stable: bool
    subspace_model: LtiStateSpace
    report: object | None = None
    warnings: list = field(default_factory=list)


def _block_hankel(s, n_blocks, n_cols):
    n, m = s.shape
    if n_blocks * m <= 0 or n_cols <= 0 or n_blocks + n_cols - 1 > n:
        raise ValueError("record too short for the requested Hankel shape")
    h = np.empty((n_blocks * m, n_cols))
    for r in range(n_blocks):
        h[r * m: (r + 1) * m] = s[r: r + n_cols].T
    return h


def _subspace_deterministic(u, y, order, horizon):
    """Past/future block-Hankel projection with SVD order truncation.

    The future outputs are projected onto the orthogonal complement of the
    future inputs and correlated against the past input/output instruments
    (PI-MOESP form); this stays well conditioned even for band-limited
    inputs whose deep Hankel blocks are nearly rank deficient.  Returns
    (A, C); the remaining matrices follow by linear least squares since the
    output is linear in (B, D, x0) once A and C are fixed.
    """
    n = u.shape[0]
    n_u = u.shape[1]
    n_y = y.shape[1]
    i = horizon
    j = n - 2 * i + 1
    if j < 2 * i * (n_u + n_y):
        raise ValueError(
            f"record too short for subspace horizon {i}: needs at least "
            f"{2 * i + 2 * i * (n_u + n_y) - 1} samples, got {n}"
        )
    u_p = _block_hankel(u[:i + j - 1], i, j)
    u_f = _block_hankel(u[i:], i, j)
    y_p = _block_hankel(y[:i + j - 1], i, j)
    y_f = _block_hankel(y[i:], i, j)
    w_p = np.vstack([u_p, y_p])

    # remove the span of the future inputs, then correlate with the past
    q, _ = np.linalg.qr(u_f.T)
    y_perp = y_f - (y_f @ q) @ q.T
    w_perp = w_p - (w_p @ q) @ q.T
    g = y_perp @ w_perp.T / j

    left, sv, _ = svd(g, full_matrices=False)
    if order > sv.size or sv[order - 1] <= 0:
        raise ValueError(f"projection rank too low for order {order}")
    gamma = left[:, :order] * np.sqrt(sv[:order])
    c_mat = gamma[:n_y]
    a_mat, *_ = lstsq(gamma[:-n_y], gamma[n_y:], rcond=None)
    return a_mat, c_mat


def _fit_b_d_x0(a_mat, c_mat, u, y):
    """Least-squares (B, D, x0) given (A, C): the output is linear in them."""
    n, n_u = u.shape
    n_y = y.shape[1]
    n_x = a_mat.shape[0]

    # response of each unit entry of B, propagated through the state recursion
    phi_b = np.empty((n, n_y, n_x * n_u))
    xb = np.zeros((n_x, n_x * n_u))
    for k in range(n):
        phi_b[k] = c_mat @ xb
        xb = a_mat @ xb
        vb = xb.reshape(n_x, n_x, n_u)
        for p in range(n_x):
            vb[p, p, :] += u[k]

    phi_x0 = np.empty((n, n_y, n_x))
    g = c_mat.copy()
    for k in range(n):
        phi_x0[k] = g
        g = g @ a_mat

    phi_d = np.zeros((n, n_y, n_y * n_u))
    for r in range(n_y):
        phi_d[:, r, r * n_u: (r + 1) * n_u] = u

    design = np.concatenate([phi_b, phi_d, phi_x0], axis=2).reshape(n * n_y, -1)
    sol, *_ = lstsq(design, y.ravel(), rcond=None)
    b_mat = sol[: n_x * n_u].reshape(n_x, n_u)
    d_mat = sol[n_x * n_u: n_x * n_u + n_y * n_u].reshape(n_y, n_u)
    x0 = sol[n_x * n_u + n_y * n_u:]
    return b_mat, d_mat, x0


def estimate_lti(dataset: Dataset, order: int, opts: LtiEstimateOptions | None = None) -> LtiFit:
    """Estimate a discrete-time linear model of the given order.

    Stage 1 is a deterministic subspace estimate (block-Hankel oblique
    projection, SVD truncation); stage 2 refines (A, B, C, D, x0) by
    minimizing the mean squared simulation error with the shared
    Levenberg-Marquardt engine.
    """
    if opts is None:
        opts = LtiEstimateOptions()
    if order < 1:
        raise ValueError("order must be >= 1")
    n = dataset.n_samples
    if n < 20 * (order + 1):
        raise ValueError(
            f"need at least {20 * (order + 1)} samples for order {order}, got {n}"
        )
    horizon = opts.horizon if opts.horizon is not None else max(2 * order + 2, 10)

    u, y = dataset.u, dataset.y
    fit_warnings = []
    if opts.pe_check:
        j = n - 2 * horizon + 1
        h_u = _block_hankel(u[:2 * horizon + j - 1], 2 * horizon, j)
        if np.linalg.matrix_rank(h_u) < 2 * horizon * dataset.n_u:
            msg = "input may not be persistently exciting for this horizon"
            warnings.warn(msg, stacklevel=2)
            fit_warnings.append(msg)

    a_mat, c_mat = _subspace_deterministic(u, y, order, horizon)
    b_mat, d_mat, x0 = _fit_b_d_x0(a_mat, c_mat, u, y)
    sub_model = LtiStateSpace(a_mat, b_mat, c_mat, d_mat)
    y_sub, _ = simulate_lti(sub_model, u, x0)
    rmse_sub = float(np.sqrt(np.mean((y - y_sub) ** 2)))

    if not opts.refine:
        stable = sub_model.is_stable()
        return LtiFit(sub_model, x0, rmse_sub, rmse_sub, stable, sub_model,
                      warnings=fit_warnings)

    # imported here to avoid a circular import at module load
    from .optim import LmOptions, lm_minimize

    lm_opts = opts.lm if opts.lm is not None else LmOptions(max_epochs=100)
    n_x, n_u, n_y = order, dataset.n_u, dataset.n_y

    def residual(theta):
        m, x0_ = unpack_lti(theta, n_x, n_u, n_y)
        with np.errstate(over="ignore", invalid="ignore"):
            y_hat, _ = simulate_lti(m, u, x0_)
            return (y - y_hat).ravel()

    def jacobian(theta):
        m, x0_ = unpack_lti(theta, n_x, n_u, n_y)
        return output_jacobian(m, u, x0_)

    theta0 = pack_lti(sub_model, x0)
    report = lm_minimize(residual, jacobian, theta0, lm_opts)
    model, x0_ref = unpack_lti(report.final_theta, n_x, n_u, n_y)
    rmse_ref = float(np.sqrt(report.cost_history[-1]))

    stable = model.is_stable()
    if not stable:
        msg = "refined model is unstable"
        warnings.warn(msg, stacklevel=2)
        fit_warnings.append(msg)
    return LtiFit(model, x0_ref, rmse_sub, rmse_ref, stable, sub_model,
                  report=report, warnings=fit_warnings)


def lti_hash(model: LtiStateSpace) -> str:
    h = hashlib.sha256()
    for m in (model.A, model.B, model.C, model.D):
        h.update(np.ascontiguousarray(m).tobytes())
    return h.hexdigest()


def lti_to_dict(model: LtiStateSpace, **meta) -> dict:
    d = {
        "n_x": model.n_x,
        "n_u": model.n_u,
        "n_y": model.n_y,
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "D": model.D.tolist(),
    }
    if meta:
        d["meta"] = meta
    return d


def lti_from_dict(d: dict) -> LtiStateSpace:
    return LtiStateSpace(np.array(d["A"]), np.array(d["B"]),
                         np.array(d["C"]), np.array(d["D"]))


def save_lti(model: LtiStateSpace, path, **meta):
    with open(path, "w") as fh:
        json.dump(lti_to_dict(model, **meta), fh, indent=2)


def load_lti(path) -> LtiStateSpace:
    with open(path) as fh:
        return lti_from_dict(json.load(fh))
