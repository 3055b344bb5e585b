"""Rank-truncated preconditioned conjugate gradients and the control pipeline.

The tracking-type control problem with a fractional elliptic constraint
reduces, after eliminating the adjoint variable, to one spectrally
diagonal equation for the control

    (beta * A^(-alpha) + (gamma/beta) * A^(alpha)) u = y_target

and a closed form for the state

    y = (I + (gamma/beta^2) * A^(2*alpha))^(-1) y_target.

Both operators and their preconditioners are canonical cores built by the
fracop module; the solver below runs classical PCG in canonical arithmetic
with a rank truncation after every operator application and vector update
so iterates never leave the low-rank manifold.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .decomp import TruncationSpec, trunc
from .fracop import (
    CoreFunctionKind,
    LowRankOperator,
    apply,
    build_core,
    reciprocal_core,
)
from .tensor import CpTensor, cp_add, cp_inner, cp_norm, cp_scale

__all__ = [
    "SolverConfig",
    "PcgReport",
    "PcgBreakdownError",
    "pcg",
    "build_preconditioner",
    "solve_control",
    "solve_state",
    "kkt_residual",
    "REPORT_COLUMNS",
    "report_row",
]


@dataclass(frozen=True)
class SolverConfig:
    """Model constants and solver knobs.

    eps is the truncation tolerance used inside the iteration (eps = 0
    disables truncation altogether); max_rank optionally caps iterate
    ranks on top of the tolerance.
    """

    alpha: float
    beta: float = 1.0
    gamma: float = 1.0
    eps: float = 1e-8
    precond_rank: int = 6
    residual_tol: float = 1e-6
    k_max: int = 100
    max_rank: int | None = None

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and 0.0 < float(self.alpha) <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if float(self.beta) <= 0.0 or float(self.gamma) <= 0.0:
            raise ValueError("beta and gamma must be positive")
        if float(self.eps) < 0.0 or not np.isfinite(self.eps):
            raise ValueError("eps must be a finite nonnegative real")
        if not 0.0 < float(self.residual_tol) < 1.0:
            raise ValueError("residual_tol must lie in (0, 1)")
        if int(self.k_max) < 1:
            raise ValueError("k_max must be positive")
        if int(self.precond_rank) < 1:
            raise ValueError("precond_rank must be positive")
        if self.max_rank is not None and int(self.max_rank) < 1:
            raise ValueError("max_rank must be positive when set")


@dataclass
class PcgReport:
    """What happened during one PCG run."""

    iterations: int
    residuals: list = field(default_factory=list)
    final_rank: int = 0
    converged: bool = False
    iteration_seconds: list = field(default_factory=list)
    seconds_per_iteration: float = 0.0


class PcgBreakdownError(RuntimeError):
    """Loss of positive definiteness, usually from over-aggressive truncation."""

    def __init__(self, iteration, value, what="<P, S>"):
        super().__init__(
            "PCG breakdown at iteration %d: %s = %.3e is not positive"
            % (iteration, what, value)
        )
        self.iteration = iteration
        self.value = value


def _truncator(cfg):
    if float(cfg.eps) == 0.0:
        return lambda x: x
    spec = TruncationSpec(tolerance=float(cfg.eps), max_rank=cfg.max_rank)
    return lambda x: trunc(x, spec)


def pcg(fun, precond, b, x0=None, cfg=None):
    """Preconditioned conjugate gradients in truncated canonical arithmetic.

    Follows the classical iteration with a rank truncation after every
    operator application, preconditioner application, and vector update.
    Returns (solution, PcgReport); raises PcgBreakdownError when a
    curvature or preconditioner inner product turns nonpositive.
    """
    if cfg is None:
        raise ValueError("pcg needs a SolverConfig")
    if b.dims != fun.dims or b.dims != precond.dims:
        raise ValueError("operator and right-hand side dims disagree")
    tr = _truncator(cfg)
    norm_b = cp_norm(b)
    if norm_b == 0.0:
        zero = CpTensor.zero(b.dims)
        return zero, PcgReport(iterations=0, residuals=[0.0], final_rank=0,
                               converged=True)
    x = x0 if x0 is not None else CpTensor.zero(b.dims)
    if x.dims != b.dims:
        raise ValueError("x0 dims do not match the right-hand side")
    if x.rank:
        r = tr(cp_add(b, cp_scale(fun(x), -1.0)))
    else:
        r = b
    rel = cp_norm(r) / norm_b
    residuals = [rel]
    iteration_seconds = []
    if rel <= cfg.residual_tol:
        return x, PcgReport(iterations=0, residuals=residuals, final_rank=x.rank,
                            converged=True)
    z = tr(precond(r))
    p = z
    rz = cp_inner(r, z)
    converged = False
    iterations = 0
    for k in range(1, int(cfg.k_max) + 1):
        t0 = time.perf_counter()
        if rz <= 0.0:
            raise PcgBreakdownError(k, rz, what="<R, Z>")
        s = tr(fun(p))
        ps = cp_inner(p, s)
        if ps <= 0.0:
            raise PcgBreakdownError(k, ps)
        step = rz / ps
        x = tr(cp_add(x, cp_scale(p, step)))
        r = tr(cp_add(r, cp_scale(s, -step)))
        rel = cp_norm(r) / norm_b
        residuals.append(rel)
        iterations = k
        if rel <= cfg.residual_tol:
            iteration_seconds.append(time.perf_counter() - t0)
            converged = True
            break
        z = tr(precond(r))
        rz_next = cp_inner(r, z)
        p = tr(cp_add(z, cp_scale(p, rz_next / rz)))
        rz = rz_next
        iteration_seconds.append(time.perf_counter() - t0)
    per_iter = float(np.median(iteration_seconds)) if iteration_seconds else 0.0
    report = PcgReport(iterations=iterations, residuals=residuals,
                       final_rank=x.rank, converged=converged,
                       iteration_seconds=iteration_seconds,
                       seconds_per_iteration=per_iter)
    return x, report


def build_preconditioner(kind, spectrum, r, method="auto", seed=0):
    """Rank-r canonical approximation of the entrywise reciprocal core."""
    if int(r) < 1:
        raise ValueError("preconditioner rank must be positive")
    spec = TruncationSpec(max_rank=int(r), mode="fixed-rank")
    return LowRankOperator(reciprocal_core(kind, spectrum, spec,
                                           method=method, seed=seed))


def _op_spec(cfg):
    tol = float(cfg.eps)
    return TruncationSpec(tolerance=tol, max_rank=None)


def _control_kind(cfg):
    return CoreFunctionKind("g2", cfg.alpha,
                            coeff_minus=float(cfg.beta),
                            coeff_plus=float(cfg.gamma) / float(cfg.beta))


def solve_control(y_design, cfg, spectrum, method="pcg", seed=0):
    """Optimal control from the design function.

    method "pcg" iterates on the g2 system preconditioned by the rank-r
    reciprocal core; "direct" applies the g3 solution operator in one shot
    and reports the residual of the g2 system at the result.
    """
    if y_design.dims != spectrum.mode_sizes:
        raise ValueError("design function dims do not match the spectrum")
    kind = _control_kind(cfg)
    fun = LowRankOperator(build_core(kind, spectrum, _op_spec(cfg), seed=seed))
    if method == "pcg":
        pre = build_preconditioner(kind, spectrum, cfg.precond_rank, seed=seed)
        return pcg(fun, pre, y_design, None, cfg)
    if method != "direct":
        raise ValueError("method must be 'pcg' or 'direct'")
    inv_kind = CoreFunctionKind("g3", cfg.alpha,
                                coeff_minus=kind.coeff_minus,
                                coeff_plus=kind.coeff_plus)
    sol_op = LowRankOperator(build_core(inv_kind, spectrum, _op_spec(cfg), seed=seed))
    u = apply(sol_op, y_design)
    if cfg.eps > 0.0:
        u = trunc(u, TruncationSpec(tolerance=float(cfg.eps), max_rank=cfg.max_rank))
    resid = cp_add(y_design, cp_scale(apply(fun, u), -1.0))
    denom = cp_norm(y_design)
    rel = cp_norm(resid) / denom if denom > 0.0 else 0.0
    report = PcgReport(iterations=0, residuals=[rel], final_rank=u.rank,
                       converged=rel <= cfg.residual_tol)
    return u, report


def solve_state(y_design, cfg, spectrum, method="direct", seed=0):
    """Optimal state from the design function.

    method "direct" applies the g4 solution operator with the gamma/beta^2
    coefficient folded into its core; "via-control" first solves for the
    control and then maps it through beta * A^(-alpha).  The two routes
    agree to truncation accuracy.
    """
    if y_design.dims != spectrum.mode_sizes:
        raise ValueError("design function dims do not match the spectrum")
    spec = _op_spec(cfg)
    if method == "direct":
        kind = CoreFunctionKind("g4", cfg.alpha,
                                coeff_plus=float(cfg.gamma) / float(cfg.beta) ** 2)
        op = LowRankOperator(build_core(kind, spectrum, spec, seed=seed))
        y = apply(op, y_design)
    elif method == "via-control":
        u, _ = solve_control(y_design, cfg, spectrum, method="pcg", seed=seed)
        kind = CoreFunctionKind("g1", cfg.alpha, coeff_minus=float(cfg.beta))
        op = LowRankOperator(build_core(kind, spectrum, spec, seed=seed))
        y = apply(op, u)
    else:
        raise ValueError("method must be 'direct' or 'via-control'")
    if cfg.eps > 0.0:
        y = trunc(y, TruncationSpec(tolerance=float(cfg.eps), max_rank=cfg.max_rank))
    return y


def _fractional_power_op(cfg, spectrum, seed=0):
    # A^alpha is the reciprocal of the plain inverse-power core
    kind = CoreFunctionKind("g1", cfg.alpha)
    return LowRankOperator(reciprocal_core(kind, spectrum, _op_spec(cfg), seed=seed))


def kkt_residual(y, u, p, y_design, cfg, spectrum):
    """Relative residuals of the three optimality blocks.

    Blocks: y + A^alpha p = y_target, gamma u = beta p, A^alpha y = beta u.
    When p is None the design relation p = (gamma/beta) u is substituted.
    All norms are relative to the design function (or absolute if it is zero).
    """
    if p is None:
        p = cp_scale(u, float(cfg.gamma) / float(cfg.beta))
    pow_op = _fractional_power_op(cfg, spectrum)
    denom = cp_norm(y_design)
    if denom == 0.0:
        denom = 1.0
    r1 = cp_norm(cp_add(cp_add(y, apply(pow_op, p)), cp_scale(y_design, -1.0))) / denom
    r2 = cp_norm(cp_add(cp_scale(u, float(cfg.gamma)),
                        cp_scale(p, -float(cfg.beta)))) / denom
    r3 = cp_norm(cp_add(apply(pow_op, y), cp_scale(u, -float(cfg.beta)))) / denom
    return r1, r2, r3


REPORT_COLUMNS = ("kind", "d", "n", "alpha", "r", "eps", "iterations",
                  "final_residual", "seconds_per_iteration")


def report_row(kind_tag, d, n, alpha, r, eps, report):
    """One CSV row summarizing a PCG run, matching REPORT_COLUMNS."""
    final = report.residuals[-1] if report.residuals else float("nan")
    return [kind_tag, int(d), int(n), float(alpha), int(r), float(eps),
            int(report.iterations), "%.6e" % final,
            "%.6e" % report.seconds_per_iteration]
