"""Closed-form checks for the linear-drift models (CIR and OU).

For CIR, ``dX = alpha X dt + eps beta sqrt(X) dB`` with ``a = exp(alpha Delta)``:

* ``Phi_k = a``,
* ``S_k = x0 beta^2 (a - 1) / (alpha Delta) * a^k``,
* ``I_b = x0 (exp(alpha T) - 1) / (alpha beta^2)``,
* ``I_Delta = I_b * a * (ln a / (a - 1))^2``,
* ``J_Delta = J_b * (4a/3) * (a^3 - 1)/(a - 1) * (ln a / (a^2 - 1))^2`` with
  ``J_b = 3 x0 (exp(2 alpha T) - 1)^2 / (4 alpha beta^2 (exp(3 alpha T) - 1))``.

For OU, ``dX = alpha X dt + eps beta dB``: ``S_k = beta^2 (a^2 - 1)/(2 alpha Delta)``
and ``I_b = x0^2 (exp(2 alpha T) - 1) / (2 alpha beta^2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimate import fine_grid, info_I_b, info_I_delta, info_J_delta
from .flow import DEFAULT_SUBSTEPS, SamplingGrid, solve_flow
from .models import get_model

ORACLE_RTOL = 1e-6
ORACLE_DELTAS = (0.01, 0.02, 0.05, 0.1, 0.2, 0.25, 0.5)


@dataclass
class OracleCheck:
    name: str
    value: float
    expected: float
    tol: float
    # "rel": relative error against expected; "le": value <= expected;
    # "err": value already is a relative error, compared with tol
    kind: str = "rel"

    @property
    def error(self) -> float:
        if self.kind == "le":
            return self.value - self.expected
        if self.kind == "err":
            return self.value
        return abs(self.value - self.expected) / max(abs(self.expected), 1e-300)

    @property
    def passed(self) -> bool:
        if self.kind == "le":
            return self.value <= self.expected * (1 + self.tol)
        return self.error <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        rel = "<=" if self.kind == "le" else "~"
        return f"{status} {self.name}: {self.value:.10g} {rel} {self.expected:.10g} (err {self.error:.2e})"


def cir_phi(alpha, delta):
    return np.exp(alpha * delta)


def cir_s(alpha, beta, x0, delta, k):
    a = np.exp(alpha * delta)
    return x0 * beta ** 2 * (a - 1) / (alpha * delta) * a ** k


def cir_i_b(alpha, beta, x0, T):
    return x0 * np.expm1(alpha * T) / (alpha * beta ** 2)


def cir_i_delta(alpha, beta, x0, T, delta):
    a = np.exp(alpha * delta)
    return cir_i_b(alpha, beta, x0, T) * a * (np.log(a) / (a - 1)) ** 2


def cir_j_b(alpha, beta, x0, T):
    return 3 * x0 * np.expm1(2 * alpha * T) ** 2 / (4 * alpha * beta ** 2 * np.expm1(3 * alpha * T))


def cir_j_delta(alpha, beta, x0, T, delta):
    a = np.exp(alpha * delta)
    return (cir_j_b(alpha, beta, x0, T) * (4 * a / 3) * (a ** 3 - 1) / (a - 1)
            * (np.log(a) / (a ** 2 - 1)) ** 2)


def cir_d(alpha, x0, delta, k):
    return -x0 * np.exp(alpha * k * delta)


def ou_s(alpha, beta, delta):
    return beta ** 2 * np.expm1(2 * alpha * delta) / (2 * alpha * delta)


def ou_i_b(alpha, beta, x0, T):
    return x0 ** 2 * np.expm1(2 * alpha * T) / (2 * alpha * beta ** 2)


def cir_ratio_estimator(obs, delta):
    """``ln(sum X_k X_{k-1} / sum X_{k-1}^2) / Delta``, the CIR least-squares minimizer."""
    x = np.asarray(obs, dtype=float).ravel()
    return np.log(np.sum(x[1:] * x[:-1]) / np.sum(x[:-1] ** 2)) / delta


def run_oracle(alpha=1.0, beta=1.0, x0=1.0, T=1.0, deltas=ORACLE_DELTAS,
               substeps: int = DEFAULT_SUBSTEPS, rtol: float = ORACLE_RTOL) -> list:
    """Compare the numerical flow and information matrices with the closed forms."""
    checks = []
    cir, ou = get_model("cir"), get_model("ou")
    for delta in deltas:
        n = int(round(T / delta))
        grid = SamplingGrid(T, n)
        tag = f"Delta={grid.delta:g}"
        flow = solve_flow(cir, [alpha], [beta], [x0], grid, substeps)
        k = np.arange(1, n + 1)
        phi_err = np.max(np.abs(flow.phi[:, 0, 0] / cir_phi(alpha, grid.delta) - 1))
        s_err = np.max(np.abs(flow.s_mats[:, 0, 0] / cir_s(alpha, beta, x0, grid.delta, k) - 1))
        checks.append(OracleCheck(f"cir Phi_k max rel err {tag}", phi_err, 0.0, rtol, "err"))
        checks.append(OracleCheck(f"cir S_k max rel err {tag}", s_err, 0.0, rtol, "err"))
        i_d = info_I_delta(flow)[0, 0]
        j_d = info_J_delta(flow)[0, 0]
        checks.append(OracleCheck(f"cir I_Delta {tag}", i_d, cir_i_delta(alpha, beta, x0, T, grid.delta), rtol))
        checks.append(OracleCheck(f"cir J_Delta {tag}", j_d, cir_j_delta(alpha, beta, x0, T, grid.delta), rtol))
        checks.append(OracleCheck(f"cir J_Delta <= I_Delta {tag}", j_d, i_d, 1e-12, "le"))

        flow_ou = solve_flow(ou, [alpha], [beta], [x0], grid, substeps, sensitivities=False)
        s_err = np.max(np.abs(flow_ou.s_mats[:, 0, 0] / ou_s(alpha, beta, grid.delta) - 1))
        checks.append(OracleCheck(f"ou S_k max rel err {tag}", s_err, 0.0, rtol, "err"))

    fine = fine_grid(T)
    checks.append(OracleCheck("cir I_b", info_I_b(cir, [alpha], [beta], [x0], fine)[0, 0],
                              cir_i_b(alpha, beta, x0, T), rtol))
    checks.append(OracleCheck("ou I_b", info_I_b(ou, [alpha], [beta], [x0], fine)[0, 0],
                              ou_i_b(alpha, beta, x0, T), rtol))
    return checks

