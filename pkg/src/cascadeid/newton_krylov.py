"""Jacobian-free Newton-Krylov solver for the KKT system of a box-constrained problem.

The unknown vector packs ``z = (delta, mu, omega, sigma)``; the residual stacks
stationarity, primal feasibility (squared slack), complementarity and dual
feasibility (squared multiplier root).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ResidualFn = Callable[[np.ndarray], np.ndarray]
_SQRT_EPS = math.sqrt(np.finfo(float).eps)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    eps_fd: float | None = None  # None: scale with |z| and |r| per product
    eps_min: float = 1e-8
    step_cap: float = 1.0
    krylov_dim: int | None = None  # None: min(dimension, 30)
    max_newton_steps: int = 50
    gmres_rtol: float = 1e-12

    def __post_init__(self):
        if self.eps_fd is not None and not self.eps_fd > 0:
            raise ValueError("eps_fd must be > 0")
        if not self.eps_min > 0:
            raise ValueError("eps_min must be > 0")
        if not self.step_cap > 0:
            raise ValueError("step_cap must be > 0")
        if self.krylov_dim is not None and self.krylov_dim < 1:
            raise ValueError("krylov_dim must be >= 1")
        if self.max_newton_steps < 1:
            raise ValueError("max_newton_steps must be >= 1")


# ---------------------------------------------------------------------------
# KKT packing and residual
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KktLayout:
    n_delta: int
    n_constraints: int

    @property
    def size(self) -> int:
        return self.n_delta + 3 * self.n_constraints

    def pack(self, delta, mu, omega, sigma) -> np.ndarray:
        parts = [np.atleast_1d(np.asarray(p, dtype=float)) for p in (delta, mu, omega, sigma)]
        sizes = [self.n_delta] + [self.n_constraints] * 3
        for p, n in zip(parts, sizes):
            if p.shape != (n,):
                raise ValueError(f"block of shape {p.shape}, expected ({n},)")
        return np.concatenate(parts)

    def unpack(self, z) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise ValueError(f"vector of shape {z.shape}, expected ({self.size},)")
        d, n = self.n_delta, self.n_constraints
        return z[:d], z[d : d + n], z[d + n : d + 2 * n], z[d + 2 * n :]


@dataclass(frozen=True)
class Constraint:
    """Inequality ``value(delta) <= 0`` with its gradient."""

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]


def box_constraints(lower: Sequence[float], upper: Sequence[float]) -> list[Constraint]:
    """``lower_i - delta_i <= 0`` and ``delta_i - upper_i <= 0`` for every component."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    n = len(lower)
    out = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        lo, hi = lower[i], upper[i]
        out.append(Constraint(lambda d, i=i, lo=lo: lo - d[i], lambda d, e=e: -e))
        out.append(Constraint(lambda d, i=i, hi=hi: d[i] - hi, lambda d, e=e: e))
    return out


@dataclass(frozen=True)
class KktResidual:
    stationarity: np.ndarray
    primal: np.ndarray
    complementarity: np.ndarray
    dual: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.stationarity, self.primal, self.complementarity, self.dual])


def kkt_residual(
    z: np.ndarray,
    gradient: Callable[[np.ndarray], np.ndarray],
    constraints: Sequence[Constraint],
    layout: KktLayout | None = None,
) -> KktResidual:
    """Evaluate the four KKT blocks at ``z``; ``gradient`` returns the cost gradient."""
    if layout is None:
        n = len(constraints)
        layout = KktLayout(len(z) - 3 * n, n)
    delta, mu, omega, sigma = layout.unpack(z)
    v = np.array([c.value(delta) for c in constraints], dtype=float)
    grad_v = np.array([c.gradient(delta) for c in constraints], dtype=float).reshape(
        len(constraints), layout.n_delta
    )
    g = np.asarray(gradient(delta), dtype=float).reshape(layout.n_delta)
    return KktResidual(
        stationarity=g + mu @ grad_v,
        primal=v + omega**2,
        complementarity=mu * v,
        dual=mu - sigma**2,
    )


def initial_kkt_vector(delta0, constraints: Sequence[Constraint], sigma0: float = 0.0) -> np.ndarray:
    """Starting vector: slacks ``omega_i = sqrt(max(-v_i, 0))``, ``sigma_i = sigma0``
    and ``mu_i = sigma0**2`` so the dual block starts satisfied.

    With ``sigma0 = 0`` the dual block has a zero Jacobian in ``sigma`` and the
    multipliers cannot move away from zero; a positive seed lets Newton
    activate a bound.
    """
    delta0 = np.atleast_1d(np.asarray(delta0, dtype=float))
    v = np.array([c.value(delta0) for c in constraints], dtype=float)
    n = len(constraints)
    sigma = np.full(n, float(sigma0))
    return KktLayout(len(delta0), n).pack(delta0, sigma**2, np.sqrt(np.maximum(-v, 0.0)), sigma)


# ---------------------------------------------------------------------------
# Krylov machinery
# ---------------------------------------------------------------------------

def default_jvp_eps(z: np.ndarray, r: np.ndarray) -> float:
    rn = np.linalg.norm(r)
    if rn == 0:
        return 1e-7
    return max(1e-7, _SQRT_EPS * (1.0 + np.linalg.norm(z)) / rn)


def jvp(S: ResidualFn, z, r, eps_fd: float | None = None, s_z: np.ndarray | None = None) -> np.ndarray:
    """Forward-difference Jacobian-vector product ``(S(z + eps r) - S(z)) / eps``."""
    z = np.asarray(z, dtype=float)
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise SolverError("non-finite direction in Jacobian-vector product")
    if not np.any(r):
        return np.zeros_like(np.asarray(S(z) if s_z is None else s_z, dtype=float))
    eps = default_jvp_eps(z, r) if eps_fd is None else eps_fd
    if s_z is None:
        s_z = S(z)
    return (np.asarray(S(z + eps * r), dtype=float) - s_z) / eps


@dataclass
class GmresResult:
    step: np.ndarray
    residual_norms: list[float]  # ||S + J dz|| after each Arnoldi iteration
    iterations: int
    capped: bool


def gmres_correction(
    S: ResidualFn, z, config: SolverConfig, s_z: np.ndarray | None = None
) -> GmresResult:
    """Newton correction minimizing ``||S(z) + J(z) dz||`` over a Krylov subspace.

    The basis is built by Arnoldi with modified Gram-Schmidt, every product with
    ``J`` is a finite-difference :func:`jvp`. The initial guess is zero and the
    result is scaled down to ``config.step_cap`` if needed.
    """
    z = np.asarray(z, dtype=float)
    F = np.asarray(S(z) if s_z is None else s_z, dtype=float)
    if not np.all(np.isfinite(F)):
        raise SolverError("non-finite residual")
    n = len(z)
    beta = np.linalg.norm(F)
    if beta == 0:
        return GmresResult(np.zeros(n), [0.0], 0, False)
    m = min(n, 30) if config.krylov_dim is None else min(config.krylov_dim, n)
    V = np.zeros((n, m + 1))
    H = np.zeros((m + 1, m))
    V[:, 0] = -F / beta
    norms = [beta]
    y = np.zeros(0)
    k = 0
    for k in range(1, m + 1):
        w = jvp(S, z, V[:, k - 1], config.eps_fd, s_z=F)
        if not np.all(np.isfinite(w)):
            raise SolverError("non-finite Jacobian-vector product")
        for i in range(k):
            H[i, k - 1] = np.dot(w, V[:, i])
            w = w - H[i, k - 1] * V[:, i]
        h = np.linalg.norm(w)
        H[k, k - 1] = h
        rhs = np.zeros(k + 1)
        rhs[0] = beta
        y, *_ = np.linalg.lstsq(H[: k + 1, :k], rhs, rcond=None)
        res = float(np.linalg.norm(rhs - H[: k + 1, :k] @ y))
        norms.append(res)
        if h <= 1e-14 * beta or res <= config.gmres_rtol * beta:
            break
        V[:, k] = w / h
    dz = V[:, :k] @ y
    if not np.all(np.isfinite(dz)):
        raise SolverError("non-finite Newton correction")
    size = np.linalg.norm(dz)
    capped = size > config.step_cap
    if capped:
        dz = dz * (config.step_cap / size)
    return GmresResult(dz, norms, k, capped)


@dataclass
class JfnkResult:
    z: np.ndarray
    steps: int
    history: list[float]  # relative step sizes eps_s
    converged: bool
    residual_norms: list[float] = field(default_factory=list)  # ||S(z^s)||, s = 0..steps
    step_norms: list[float] = field(default_factory=list)
    last_step: np.ndarray | None = None

    def trace_rows(self):
        """Rows of the diagnostic trace ``(s, residual_norm, step_norm, epsilon_s)``."""
        for s, eps in enumerate(self.history):
            yield s, self.residual_norms[s], self.step_norms[s], eps


def jfnk_solve(S: ResidualFn, z0, config: SolverConfig | None = None) -> JfnkResult:
    """Newton iterations ``z <- z + dz`` until ``||dz|| / ||z|| <= eps_min`` or step cap.

    A non-converged run still returns its last iterate with ``converged=False``.
    """
    config = config or SolverConfig()
    z = np.array(z0, dtype=float)
    if not np.all(np.isfinite(z)):
        raise SolverError("initial vector is not finite")
    history: list[float] = []
    res_norms: list[float] = []
    step_norms: list[float] = []
    converged = False
    dz = None
    s = 0
    while s < config.max_newton_steps:
        F = np.asarray(S(z), dtype=float)
        res_norms.append(float(np.linalg.norm(F)))
        if res_norms[-1] == 0:
            history.append(0.0)
            step_norms.append(0.0)
            dz = np.zeros_like(z)
            converged = True
            break
        dz = gmres_correction(S, z, config, s_z=F).step
        zn = np.linalg.norm(z)
        dn = float(np.linalg.norm(dz))
        z = z + dz
        s += 1
        eps_s = dn / zn if zn > 0 else dn
        history.append(eps_s)
        step_norms.append(dn)
        if eps_s <= config.eps_min:
            converged = True
            break
    if len(res_norms) == len(history):
        res_norms.append(float(np.linalg.norm(S(z))))
    return JfnkResult(z, s, history, converged, res_norms, step_norms, dz)
