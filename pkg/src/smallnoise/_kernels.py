"""Inner loops shared by the flow, contrast and simulation modules.

Kernels that take model callables are written once and executed either as
numba-compiled code (all callables are numba dispatchers) or as plain
Python (user models). ``kernels_for(model)`` picks the variant.
"""
from __future__ import annotations

import numpy as np
import numba

STATUS_OK = 0
STATUS_NONFINITE = 1


# Elementwise building blocks. The jitted versions are plain loops (no
# temporaries); the Python versions use numpy with ``out=``.

@numba.njit(cache=True)
def _mm_jit(out, A, B):
    n, k = A.shape
    m = B.shape[1]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for l in range(k):
                s += A[i, l] * B[l, j]
            out[i, j] = s


@numba.njit(cache=True)
def _lyap_jit(out, J, V, S):
    p = J.shape[0]
    for i in range(p):
        for j in range(p):
            s = S[i, j]
            for l in range(p):
                s += J[i, l] * V[l, j] + V[i, l] * J[j, l]
            out[i, j] = s


@numba.njit(cache=True)
def _axpy_jit(out, x, c, y):
    o = out.reshape(-1)
    xf = x.reshape(-1)
    yf = y.reshape(-1)
    for i in range(o.size):
        o[i] = xf[i] + c * yf[i]


@numba.njit(cache=True)
def _acc_jit(out, w, y):
    o = out.reshape(-1)
    yf = y.reshape(-1)
    for i in range(o.size):
        o[i] += w * yf[i]


@numba.njit(cache=True)
def _sym_jit(V):
    p = V.shape[0]
    for i in range(p):
        for j in range(i + 1, p):
            s = 0.5 * (V[i, j] + V[j, i])
            V[i, j] = s
            V[j, i] = s


@numba.njit(cache=True)
def _mv_acc_jit(out, c, A, v):
    for i in range(A.shape[0]):
        s = 0.0
        for j in range(A.shape[1]):
            s += A[i, j] * v[j]
        out[i] += c * s


def _mm_py(out, A, B):
    np.matmul(A, B, out=out)


def _lyap_py(out, J, V, S):
    JV = J @ V
    np.add(JV, JV.T, out=out)
    out += S


def _axpy_py(out, x, c, y):
    np.multiply(y, c, out=out)
    out += x


def _acc_py(out, w, y):
    out += w * y


def _sym_py(V):
    V[...] = 0.5 * (V + V.T)


def _mv_acc_py(out, c, A, v):
    out += c * (A @ v)


def flow_kernel(drift, jac, grad_a, big_sigma, guard, mm, lyap, axpy, acc, sym,
                alpha, beta, x0, delta, n, m, want_cov, want_sens):
    """Classical RK4 on x, the resolvent Psi, the Lyapunov covariance V and dx/dalpha.

    Psi and V restart from I and 0 at each sampling time; x and dx/dalpha run
    continuously. Returns ``(xs, phis, covs, dxs, status, k_fail)`` where
    ``covs[k] = V(t_{k+1})`` (not yet divided by delta).
    """
    p = x0.shape[0]
    a = alpha.shape[0]
    xs = np.zeros((n + 1, p))
    phis = np.zeros((n, p, p))
    covs = np.zeros((n, p, p))
    dxs = np.zeros((n + 1, p, a))
    x = x0.copy()
    P = np.zeros((p, p))
    V = np.zeros((p, p))
    D = np.zeros((p, a))
    xs_ = np.zeros(p)
    Ps = np.zeros((p, p))
    Vs = np.zeros((p, p))
    Ds = np.zeros((p, a))
    kx = np.zeros(p)
    kP = np.zeros((p, p))
    kV = np.zeros((p, p))
    kD = np.zeros((p, a))
    ax = np.zeros(p)
    aP = np.zeros((p, p))
    aV = np.zeros((p, p))
    aD = np.zeros((p, a))
    xs[0] = x
    h = delta / m
    weights = np.array([1.0, 2.0, 2.0, 1.0])
    offsets = np.array([0.0, 0.5, 0.5, 1.0])
    for k in range(n):
        P[:, :] = 0.0
        for i in range(p):
            P[i, i] = 1.0
        V[:, :] = 0.0
        for _ in range(m):
            ax[:] = 0.0
            aP[:, :] = 0.0
            aV[:, :] = 0.0
            aD[:, :] = 0.0
            for s in range(4):
                c = offsets[s] * h
                w = weights[s]
                axpy(xs_, x, c, kx)
                J = jac(alpha, xs_)
                kx[:] = drift(alpha, xs_)
                acc(ax, w, kx)
                axpy(Ps, P, c, kP)
                mm(kP, J, Ps)
                acc(aP, w, kP)
                if want_cov:
                    axpy(Vs, V, c, kV)
                    lyap(kV, J, Vs, big_sigma(beta, guard(xs_)))
                    acc(aV, w, kV)
                if want_sens:
                    axpy(Ds, D, c, kD)
                    mm(kD, J, Ds)
                    acc(kD, 1.0, grad_a(alpha, xs_))
                    acc(aD, w, kD)
            acc(x, h / 6.0, ax)
            acc(P, h / 6.0, aP)
            if want_cov:
                acc(V, h / 6.0, aV)
                sym(V)
            if want_sens:
                acc(D, h / 6.0, aD)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(P))):
            return xs, phis, covs, dxs, STATUS_NONFINITE, k
        xs[k + 1] = x
        phis[k] = P
        covs[k] = V
        dxs[k + 1] = D
    return xs, phis, covs, dxs, STATUS_OK, -1


def sigma_stack_kernel(big_sigma, guard, beta, X):
    """Sigma(beta, guard(X[k])) for every row of ``X``."""
    n, p = X.shape
    out = np.zeros((n, p, p))
    for k in range(n):
        out[k] = big_sigma(beta, guard(X[k]))
    return out


def euler_kernel(drift, sigma, guard, acc, mv_acc, alpha, beta, eps, x0, h, n, m, dW):
    """Euler-Maruyama with ``m`` steps of size ``h`` between records.

    ``dW`` holds the Brownian increments, shape ``(n * m, p)``.
    """
    p = x0.shape[0]
    obs = np.zeros((n + 1, p))
    x = x0.copy()
    obs[0] = x
    for k in range(n):
        for j in range(m):
            s = sigma(beta, guard(x))
            acc(x, h, drift(alpha, x))
            mv_acc(x, eps, s, dW[k * m + j])
        if not np.all(np.isfinite(x)):
            return obs, STATUS_NONFINITE, k
        obs[k + 1] = x
    return obs, STATUS_OK, -1


@numba.njit(cache=True)
def _chol_inplace(A):
    p = A.shape[0]
    L = np.zeros((p, p))
    for j in range(p):
        s = A[j, j]
        for l in range(j):
            s -= L[j, l] * L[j, l]
        if not (s > 0.0) or not np.isfinite(s):
            return L, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, p):
            t = A[i, j]
            for l in range(j):
                t -= L[i, l] * L[j, l]
            L[i, j] = t / L[j, j]
    return L, True


@numba.njit(cache=True)
def chol_quad(S, N, ridge_rel):
    """Sum of ``N_k^T S_k^{-1} N_k`` and of ``log det S_k`` via Cholesky.

    A failed factorization is retried once with ``ridge_rel * trace/p`` added
    to the diagonal. Returns ``(quad, logdet, k_fail)``; ``k_fail`` is -1 on
    success.
    """
    n, p = N.shape
    quad = 0.0
    logdet = 0.0
    for k in range(n):
        L, ok = _chol_inplace(S[k])
        if not ok:
            A = S[k].copy()
            tr = 0.0
            for j in range(p):
                tr += A[j, j]
            lam = ridge_rel * abs(tr) / p
            for j in range(p):
                A[j, j] += lam
            L, ok = _chol_inplace(A)
            if not ok:
                return quad, logdet, k
        y = np.zeros(p)
        for j in range(p):
            t = N[k, j]
            for l in range(j):
                t -= L[j, l] * y[l]
            y[j] = t / L[j, j]
            quad += y[j] * y[j]
            logdet += 2.0 * np.log(L[j, j])
    return quad, logdet, -1


class Kernels:
    """Kernel variants bound to one model."""

    def __init__(self, jit: bool):
        self.jit = jit
        if jit:
            self.flow = _flow_jit
            self.sigma_stack = _sigma_stack_jit
            self.euler = _euler_jit
            self.ops = (_mm_jit, _lyap_jit, _axpy_jit, _acc_jit, _sym_jit)
            self.euler_ops = (_acc_jit, _mv_acc_jit)
        else:
            self.flow = flow_kernel
            self.sigma_stack = sigma_stack_kernel
            self.euler = euler_kernel
            self.ops = (_mm_py, _lyap_py, _axpy_py, _acc_py, _sym_py)
            self.euler_ops = (_acc_py, _mv_acc_py)


_flow_jit = numba.njit(flow_kernel)
_sigma_stack_jit = numba.njit(sigma_stack_kernel)
_euler_jit = numba.njit(euler_kernel)

_JIT = Kernels(True)
_PY = Kernels(False)


def kernels_for(model) -> Kernels:
    return _JIT if model.jit else _PY


def python_kernels() -> Kernels:
    return _PY
