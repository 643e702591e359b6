"""Flexible GMRES and the network-then-V-cycle preconditioning protocol.

``fgmres`` stores the preconditioned basis vectors, so the preconditioner
may change between iterations (or be nonlinear, as the solver network is).
With a fixed linear preconditioner it reduces to standard right-
preconditioned GMRES.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericalError, SolverError
from .fields import TRUE_SHIFT, ComplexField, SlownessModel, apply_helmholtz_array


@dataclass
class SolveReport:
    """Iteration count and relative-residual trace of one solve."""

    iterations: int
    relative_residual_history: list[float] = field(repr=False)
    converged: bool = False
    wall_time: float = 0.0


def _givens(a: complex, b: float):
    # Rotation sending (a, b) -> (r, 0) for complex a and real b >= 0.
    if a == 0:
        return 0.0, 1.0 + 0.0j, b
    t = np.hypot(abs(a), b)
    c = abs(a) / t
    s = (a / abs(a)) * (b / t)
    return c, s, (a / abs(a)) * t


def fgmres(
    apply_A,
    apply_M,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = 1e-7,
    max_iter: int = 250,
    restart: int | None = 10,
) -> tuple[np.ndarray, SolveReport]:
    """Flexible right-preconditioned GMRES on complex arrays of any shape.

    Stops when ``||b - A x|| / ||b - A x0|| <= tol`` or after ``max_iter``
    preconditioner applications (each counted as one iteration, across
    restart windows of length ``restart``; ``restart=None`` keeps the full
    Krylov basis in memory).
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    start = time.perf_counter()
    b = np.asarray(b, dtype=np.complex128)
    shape = b.shape
    n = b.size
    if x0 is None:
        x = np.zeros(shape, dtype=np.complex128)
        r = b.copy()
    else:
        if x0.shape != shape:
            raise DimensionError(f"x0 {x0.shape} does not match b {shape}")
        x = np.asarray(x0, dtype=np.complex128).copy()
        r = b - apply_A(x)
    beta0 = np.linalg.norm(r)
    history = [1.0]
    if beta0 == 0.0:
        history.append(0.0)
        return x, SolveReport(0, history, True, time.perf_counter() - start)
    if 1.0 <= tol:
        return x, SolveReport(0, history, True, time.perf_counter() - start)

    window = max_iter if restart is None else min(restart, max_iter)
    iterations = 0
    converged = False
    while iterations < max_iter and not converged:
        m = min(window, max_iter - iterations)
        beta = np.linalg.norm(r)
        V = np.empty((m + 1, n), dtype=np.complex128)
        Z = np.empty((m, n), dtype=np.complex128)
        H = np.zeros((m + 1, m), dtype=np.complex128)
        rotations = []
        g = np.zeros(m + 1, dtype=np.complex128)
        g[0] = beta
        V[0] = (r / beta).ravel()
        j = 0
        while j < m:
            z = np.asarray(apply_M(V[j].reshape(shape)), dtype=np.complex128).ravel()
            w = np.asarray(apply_A(z.reshape(shape)), dtype=np.complex128).ravel()
            if not np.all(np.isfinite(w)):
                raise NumericalError(
                    f"non-finite Krylov vector at iteration {iterations + 1}"
                )
            Z[j] = z
            norm_before = np.linalg.norm(w)
            coeffs = V[: j + 1].conj() @ w
            w = w - coeffs @ V[: j + 1]
            h_next = np.linalg.norm(w)
            if h_next < 0.25 * norm_before:
                # One re-orthogonalisation pass guards the Givens residual
                # estimates against cancellation in modified Gram-Schmidt.
                extra = V[: j + 1].conj() @ w
                coeffs += extra
                w = w - extra @ V[: j + 1]
                h_next = np.linalg.norm(w)
            H[: j + 1, j] = coeffs
            for k, (c, s) in enumerate(rotations):
                hk, hk1 = H[k, j], H[k + 1, j]
                H[k, j] = c * hk + s * hk1
                H[k + 1, j] = -np.conj(s) * hk + c * hk1
            c, s, rr = _givens(H[j, j], h_next)
            rotations.append((c, s))
            H[j, j] = rr
            gj = g[j]
            g[j] = c * gj
            g[j + 1] = -np.conj(s) * gj
            iterations += 1
            j += 1
            estimate = abs(g[j]) / beta0
            history.append(estimate)
            if estimate <= tol:
                converged = True
                break
            if h_next <= 1e-14 * max(1.0, norm_before):
                raise SolverError(
                    f"Arnoldi breakdown at iteration {iterations} with "
                    f"relative residual {estimate:.3e}"
                )
            V[j] = w / h_next
        y = _solve_upper(H[:j, :j], g[:j])
        x = x + (y @ Z[:j]).reshape(shape)
        r = b - apply_A(x)
        true_rel = np.linalg.norm(r) / beta0
        if converged and true_rel > tol:
            converged = False  # estimate drifted below tol early; keep iterating
        if converged:
            history[-1] = true_rel
    return x, SolveReport(
        iterations, history, converged, time.perf_counter() - start
    )


def _solve_upper(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    y = np.zeros_like(g)
    for i in range(len(g) - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1 :] @ y[i + 1 :]) / R[i, i]
    return y


def solve_helmholtz(
    model: SlownessModel,
    b: ComplexField,
    hierarchy=None,
    tol: float = 1e-7,
    max_iter: int = 250,
    restart: int | None = 10,
) -> tuple[ComplexField, SolveReport]:
    """FGMRES with a V-cycle-only preconditioner on the true operator."""
    from .multigrid import build_hierarchy, v_cycle

    if hierarchy is None:
        hierarchy = build_hierarchy(model)

    def apply_a(u):
        return apply_helmholtz_array(u, model, TRUE_SHIFT)

    def apply_m(r):
        return v_cycle(r, None, hierarchy)

    x, report = fgmres(apply_a, apply_m, b.data, None, tol, max_iter, restart)
    return ComplexField(x, b.h), report


def solve_with_learned_preconditioner(
    model: SlownessModel,
    b: ComplexField,
    net,
    encodings=None,
    tol: float = 1e-7,
    max_iter: int = 250,
    restart: int | None = 10,
    warmup_iters: int = 3,
    hierarchy=None,
) -> tuple[ComplexField, SolveReport]:
    """Warm-up FGMRES with the V-cycle, then restart with the network.

    Runs ``warmup_iters`` iterations preconditioned by the V-cycle alone from
    a zero initial guess, then restarts FGMRES from that iterate with the
    preconditioner ``r -> v_cycle(r, u0=net(r, encodings))``, i.e. the
    network's error estimate smoothed by one V-cycle.  Reported iteration
    counts and residual history include the warm-up, relative to the initial
    residual of the whole solve.
    """
    from .multigrid import build_hierarchy, v_cycle
    from .network import precompute_encodings, preconditioner_estimate

    if hierarchy is None:
        hierarchy = build_hierarchy(model)
    if encodings is None:
        encodings = precompute_encodings(net, model)

    def apply_a(u):
        return apply_helmholtz_array(u, model, TRUE_SHIFT)

    def apply_vcycle(r):
        return v_cycle(r, None, hierarchy)

    start = time.perf_counter()
    x1, rep1 = fgmres(
        apply_a, apply_vcycle, b.data, None, tol, min(warmup_iters, max_iter), restart
    )
    if rep1.converged or rep1.iterations >= max_iter:
        rep1.wall_time = time.perf_counter() - start
        return ComplexField(x1, b.h), rep1

    beta0 = np.linalg.norm(b.data)
    rel1 = np.linalg.norm(b.data - apply_a(x1)) / beta0

    def apply_net_then_vcycle(r):
        return v_cycle(r, preconditioner_estimate(net, encodings, r), hierarchy)

    x2, rep2 = fgmres(
        apply_a,
        apply_net_then_vcycle,
        b.data,
        x1,
        tol / rel1,
        max_iter - rep1.iterations,
        restart,
    )
    history = rep1.relative_residual_history + [
        e * rel1 for e in rep2.relative_residual_history[1:]
    ]
    report = SolveReport(
        rep1.iterations + rep2.iterations,
        history,
        rep2.converged,
        time.perf_counter() - start,
    )
    return ComplexField(x2, b.h), report
