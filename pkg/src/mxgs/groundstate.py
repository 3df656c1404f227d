"""Ground-state solver and parameter continuation in s.

The main fixed-point iteration is of Petviashvili type on the physical
state u solving (shift - Delta + (-Delta)^s) u = u^{p+1}:

    u <- M^gamma * A^{-1}(|u|^p u),   M = <u, Au> / <u, |u|^p u>,
    gamma = (p+1)/p,

with a normalized preconditioned gradient flow on the quotient J as a
fallback when the fixed point stalls. Continuation transports a converged
anchor state u_sigma to a nearby s by the chord iteration

    w <- w - (dPhi(0))^{-1} Phi(w),   Phi(w) = grad_s I_s(u_sigma + w),

restricted to the reflection-symmetric sector, where dPhi(0) is inverted
through a preconditioned MINRES solve of the linearized operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from mxgs.energies import EnergyBreakdown, eval_F
from mxgs.spectral import (
    GridSpec,
    RealField,
    SymbolParams,
    apply_weights_raw,
    inner_weights_raw,
    symbol_weights,
    symmetrize_values,
)


class CollapseError(RuntimeError):
    """The iteration collapsed to the zero field (e.g. zero initial guess)."""


class SweepError(RuntimeError):
    """A sweep node failed; the partial trace is preserved on the exception."""

    def __init__(self, message, partial_trace):
        super().__init__(message)
        self.partial_trace = partial_trace


@dataclass
class SolverConfig:
    """Tolerances and limits for the fixed-point solver.

    Convergence requires both a small relative Nehari residual and a small
    successive-iterate step, since the Petviashvili factor can normalize
    before the profile is resolved.
    """

    tol_nehari: float = 1e-10
    tol_step: float = 1e-12
    tol_residual: float = 1e-8
    max_iter: int = 2000
    method: str = "auto"          # auto | petviashvili | gradient_flow
    flow_step: float = 0.9
    stall_check: int = 400
    log_every: int = 25


@dataclass
class GroundStateResult:
    field: RealField
    s: float
    p: float
    lambda_s: float
    breakdown: EnergyBreakdown
    residual_linf: float
    iterations: int
    converged: bool
    center: tuple
    method: str = "petviashvili"
    history: list = field(default_factory=list)

    def metadata(self):
        return {
            "s": self.s,
            "p": self.p,
            "lambda_s": self.lambda_s,
            "residual_linf": self.residual_linf,
            "iterations": self.iterations,
            "converged": self.converged,
            "center": list(self.center),
            "method": self.method,
            "breakdown": self.breakdown.to_dict(),
        }


@dataclass
class ContinuationStep:
    """One continuation move sigma -> s with its contraction diagnostics."""

    result: GroundStateResult
    s_from: float
    s_to: float
    norm_w: float
    contraction_estimate: float
    picard_iterations: int
    substeps: int = 1


@dataclass
class ContinuationTrace:
    records: list
    direction: str                 # 'toward_zero' | 'toward_one'
    anchor: GroundStateResult


@dataclass
class TraceRecord:
    s: float
    lambda_s: float
    norm_w: float
    contraction_estimate: float
    result: GroundStateResult
    scratch_h1_diff: float | None = None
    endpoint_h1_diff: float | None = None


def default_initial_guess(grid, p):
    """Gaussian exp(-|x|^2) scaled to unit L^{p+2} norm."""
    vals = np.exp(-grid.radius_sq())
    nrm = (grid.cell_volume * np.sum(np.abs(vals) ** (p + 2.0))) ** (1.0 / (p + 2.0))
    return RealField(grid, vals / nrm)


def _check_resolution(grid):
    if grid.N * math.pi / grid.L < 8.0:
        raise ValueError(
            f"grid too coarse to resolve the soliton core: N*pi/L = "
            f"{grid.N * math.pi / grid.L:.2f} < 8"
        )


def _nonlinearity(values, p):
    # odd extension |u|^p u keeps fractional powers defined off the positive cone
    return np.abs(values) ** p * values


def peak_coordinates(f):
    """Physical coordinates of the discrete maximum (lexicographic tie-break)."""
    idx = np.unravel_index(np.argmax(f.values), f.values.shape)
    coords = f.grid.axis_coords()
    return tuple(float(coords[i]) for i in idx)


def recenter_symmetrize(f):
    """Shift the maximum to the origin and average over axis reflections.

    The circular shift is exact (ties broken at the lexicographically
    smallest index); the reflection average projects onto the symmetric
    sector that radial profiles live in. The monotonicity defect of the
    result is available from radial_monotonicity_defect.
    """
    grid = f.grid
    idx = np.unravel_index(np.argmax(f.values), f.values.shape)
    origin = grid.N // 2
    shifted = np.roll(f.values, tuple(origin - i for i in idx), axis=tuple(range(grid.n)))
    return RealField(grid, symmetrize_values(shifted))


def radial_monotonicity_defect(f):
    """Largest increase of the profile along the +x1 ray from the origin."""
    grid = f.grid
    origin = grid.N // 2
    line = f.values[(slice(origin, grid.N),) + (origin,) * (grid.n - 1)]
    return float(max(0.0, np.max(np.diff(line)))) if line.size > 1 else 0.0


def _finalize(grid, values, params, warr, iterations, method, history, config):
    fld = RealField(grid, values)
    center = peak_coordinates(fld)
    pre_resid = apply_weights_raw(fld.values, warr) - _nonlinearity(fld.values, params.p)
    pre_max = float(np.max(np.abs(fld.values))) or 1.0
    was_converged = float(np.max(np.abs(pre_resid))) <= config.tol_residual * pre_max
    fld = recenter_symmetrize(fld)
    values = fld.values
    resid = apply_weights_raw(values, warr) - _nonlinearity(values, params.p)
    umax = float(np.max(np.abs(values)))
    residual_linf = float(np.max(np.abs(resid)))
    if was_converged and umax > 0 and residual_linf > config.tol_residual * umax:
        # an off-lattice peak leaves an O(h) defect after symmetrization;
        # the even fixed point is nearby, so a short polish recovers it
        polish = replace(config, max_iter=300, method="petviashvili")
        try:
            values, k, _, _ = _petviashvili_loop(values, warr, params.p, polish, grid.cell_volume)
            iterations += k
            fld = recenter_symmetrize(RealField(grid, values))
            values = fld.values
            resid = apply_weights_raw(values, warr) - _nonlinearity(values, params.p)
            umax = float(np.max(np.abs(values)))
            residual_linf = float(np.max(np.abs(resid)))
        except CollapseError:
            pass
    bd = eval_F(fld, params.s, params.p)
    qf = bd.kinetic_local + bd.kinetic_nonlocal + bd.mass
    lam = bd.potential ** (params.p / (params.p + 2.0)) if bd.potential > 0 else 0.0
    converged = (
        umax > 0
        and residual_linf <= config.tol_residual * umax
        and abs(bd.nehari_defect) <= config.tol_residual * qf
    )
    return GroundStateResult(
        field=fld,
        s=params.s,
        p=params.p,
        lambda_s=lam,
        breakdown=bd,
        residual_linf=residual_linf,
        iterations=iterations,
        converged=converged,
        center=center,
        method=method,
        history=history,
    )


def _petviashvili_loop(values, warr, p, config, cv):
    gamma = (p + 1.0) / p
    history = []
    stalled = False
    last_nehari = math.inf
    k = 0
    for k in range(1, config.max_iter + 1):
        fh = np.fft.fftn(values)
        # sum(u * Au) = sum(w |u^|^2)/size by discrete Parseval; the common
        # cell volume cancels in M
        qf = float(np.real(np.sum(warr * np.abs(fh) ** 2))) / values.size
        nl = _nonlinearity(values, p)
        denom = float(np.sum(values * nl))
        if denom == 0.0 or qf <= 0.0:
            raise CollapseError("iteration collapsed to the zero field")
        M = qf / denom
        new = M ** gamma * np.real(np.fft.ifftn(np.fft.fftn(nl) / warr))
        umax = float(np.max(np.abs(new)))
        if umax == 0.0 or not np.isfinite(umax):
            raise CollapseError("iteration collapsed to the zero field")
        step = float(np.max(np.abs(new - values))) / umax
        values = new
        nh_rel = _nehari_rel(values, warr, p, cv)
        if k % config.log_every == 0 or nh_rel < config.tol_nehari:
            history.append((k, nh_rel, step))
        if nh_rel < config.tol_nehari and step < config.tol_step:
            return values, k, history, False
        if k == config.stall_check and nh_rel > 1e-6 and nh_rel > 0.5 * last_nehari:
            stalled = True
            break
        if k % 50 == 0:
            last_nehari = nh_rel
    return values, k, history, stalled or True


def _nehari_rel(values, warr, p, cv):
    fh = np.fft.fftn(values)
    qf = cv / values.size * float(np.real(np.sum(warr * np.abs(fh) ** 2)))
    pot = cv * float(np.sum(np.abs(values) ** (p + 2.0)))
    return abs(qf - pot) / qf if qf > 0 else math.inf


def _gradient_flow_loop(values, warr, p, config, cv, max_iter):
    """Normalized preconditioned descent on J; returns a J-normalized profile."""
    tau = config.flow_step
    history = []
    nrm = (cv * np.sum(np.abs(values) ** (p + 2.0))) ** (1.0 / (p + 2.0))
    if nrm == 0.0:
        raise CollapseError("iteration collapsed to the zero field")
    values = values / nrm
    k = 0
    for k in range(1, max_iter + 1):
        fh = np.fft.fftn(values)
        mu = cv / values.size * float(np.real(np.sum(warr * np.abs(fh) ** 2)))
        nl = _nonlinearity(values, p)
        new = (1.0 - tau) * values + tau * mu * np.real(np.fft.ifftn(np.fft.fftn(nl) / warr))
        nrm = (cv * np.sum(np.abs(new) ** (p + 2.0))) ** (1.0 / (p + 2.0))
        if nrm == 0.0 or not np.isfinite(nrm):
            raise CollapseError("iteration collapsed to the zero field")
        new = new / nrm
        step = float(np.max(np.abs(new - values))) / float(np.max(np.abs(new)))
        values = new
        if k % config.log_every == 0:
            history.append((k, mu, step))
        if step < 1e-14:
            break
    fh = np.fft.fftn(values)
    mu = cv / values.size * float(np.real(np.sum(warr * np.abs(fh) ** 2)))
    # physical rescale u = lambda^{1/p} v with lambda = ||v||_s^2 at unit L^{p+2}
    return mu ** (1.0 / p) * values, k, history


def solve_ground_state(params, grid, init=None, config=None):
    """Converged ground state of (shift - Delta + (-Delta)^s) u = |u|^p u.

    Runs the Petviashvili fixed point from the supplied or default Gaussian
    guess; if it stalls (method='auto') the normalized gradient flow on J
    finishes the job and a short Petviashvili polish restores machine-level
    residuals. Non-convergence returns the best iterate flagged
    converged=False; a zero initial guess raises CollapseError.
    """
    config = config or SolverConfig()
    _check_resolution(grid)
    if init is None:
        init = default_initial_guess(grid, params.p)
    if init.grid != grid:
        raise ValueError("initial guess lives on a different grid")
    if not np.any(init.values):
        raise CollapseError("zero initial guess is a fixed point; rejected")
    warr = symbol_weights(grid, params.s, params.shift)
    cv = grid.cell_volume
    values = init.values.copy()
    method = config.method
    total_iters = 0
    history = []

    polish_cfg = replace(config, max_iter=100, method="petviashvili")
    if method in ("auto", "petviashvili"):
        values, k, history, unfinished = _petviashvili_loop(values, warr, params.p, config, cv)
        total_iters += k
        used = "petviashvili"
        if (method == "auto" and unfinished
                and _nehari_rel(values, warr, params.p, cv) > config.tol_nehari):
            values, k2, h2 = _gradient_flow_loop(
                values, warr, params.p, config, cv,
                max(config.max_iter - total_iters, 200))
            total_iters += k2
            history.extend(h2)
            values, k3, h3, _ = _petviashvili_loop(values, warr, params.p, polish_cfg, cv)
            total_iters += k3
            history.extend(h3)
            used = "petviashvili+gradient_flow"
    else:
        values, k, history = _gradient_flow_loop(values, warr, params.p, config, cv, config.max_iter)
        total_iters += k
        values, k3, h3, _ = _petviashvili_loop(values, warr, params.p, polish_cfg, cv)
        total_iters += k3
        history.extend(h3)
        used = "gradient_flow"

    return _finalize(grid, values, params, warr, total_iters, used, history, config)


# ---------------------------------------------------------------------------
# continuation in s
# ---------------------------------------------------------------------------


def _symmetric_linear_solve(rhs, warr_s, potential, grid, tol=1e-10, maxiter=4000):
    """Solve (A_s - potential) v = rhs in the reflection-symmetric sector.

    MINRES (the operator is symmetric but indefinite: one negative
    eigenvalue lives in this sector) with the free multiplier inverse as
    preconditioner.
    """
    shape = grid.shape
    size = grid.size

    def proj(v):
        return symmetrize_values(v.reshape(shape))

    def op(v):
        w = proj(v)
        out = apply_weights_raw(w, warr_s) - potential * w
        return symmetrize_values(out).ravel()

    def pre(v):
        return symmetrize_values(apply_weights_raw(proj(v), 1.0 / warr_s)).ravel()

    A = LinearOperator((size, size), matvec=op, dtype=float)
    M = LinearOperator((size, size), matvec=pre, dtype=float)
    sol, info = minres(A, rhs.ravel(), rtol=tol, maxiter=maxiter, M=M)
    if info != 0:
        raise RuntimeError(f"inner MINRES solve failed (info={info})")
    return sol.reshape(shape)


@dataclass
class ContinuationConfig:
    picard_tol: float = 1e-11
    max_picard: int = 60
    linear_tol: float = 1e-10
    max_halvings: int = 6
    solver: SolverConfig = field(default_factory=SolverConfig)


def _continuation_single(anchor, s_target, config):
    """One chord-iteration move; rejects the step if the contraction >= 1."""
    grid = anchor.field.grid
    p = anchor.p
    u0 = anchor.field.values
    warr_s = symbol_weights(grid, s_target)
    potential = (p + 1.0) * np.abs(u0) ** p
    pot_l2 = lambda v: _nonlinearity(v, p)

    def phi(w):
        # gradient of the energy in the s-metric: u - A_s^{-1}(|u|^p u)
        u = u0 + w
        return u - apply_weights_raw(pot_l2(u), 1.0 / warr_s)

    w = np.zeros(grid.shape)
    prev_step = None
    kappas = []
    iterations = 0
    for iterations in range(1, config.max_picard + 1):
        # chord step: w <- w - dPhi(0)^{-1} Phi(w), dPhi(0) = A_s^{-1}(A_s - pot)
        rhs = apply_weights_raw(phi(w), warr_s)
        delta = _symmetric_linear_solve(rhs, warr_s, potential, grid, tol=config.linear_tol)
        w_new = w - delta
        step = math.sqrt(max(inner_weights_raw(w_new - w, w_new - w, warr_s, grid), 0.0))
        if prev_step is not None and prev_step > 0:
            kappas.append(step / prev_step)
            if kappas[-1] >= 1.0 and iterations > 2:
                return None, max(kappas), iterations, w
        prev_step = step
        w = w_new
        wn = math.sqrt(max(inner_weights_raw(w, w, warr_s, grid), 0.0))
        if step < config.picard_tol * max(1.0, wn):
            break
    contraction = max(kappas) if kappas else 0.0
    if contraction >= 1.0:
        return None, contraction, iterations, w
    return w, contraction, iterations, w


def continuation_step(anchor, s_target, config=None):
    """Transport a converged anchor at sigma to s_target; adaptive in |ds|.

    Returns a ContinuationStep whose result has the full Euler-Lagrange
    residual re-verified. Steps whose measured contraction reaches 1 are
    rejected and retried with halved increments.
    """
    config = config or ContinuationConfig()
    if not anchor.converged:
        raise ValueError("continuation requires a converged anchor state")
    sigma = anchor.s
    if s_target == sigma:
        return ContinuationStep(
            result=anchor, s_from=sigma, s_to=sigma, norm_w=0.0,
            contraction_estimate=0.0, picard_iterations=0, substeps=0,
        )
    grid = anchor.field.grid
    p = anchor.p

    current = anchor
    remaining = [s_target]
    contraction = 0.0
    norm_w_total = 0.0
    picard_total = 0
    substeps = 0
    halvings = 0
    while remaining:
        target = remaining[-1]
        w, kappa, iters, _ = _continuation_single(current, target, config)
        if w is None:
            halvings += 1
            if halvings > config.max_halvings:
                raise RuntimeError(
                    f"continuation rejected at ds={target - current.s:.3g}: "
                    f"contraction estimate {kappa:.3g} >= 1 after {halvings} halvings"
                )
            remaining.append(0.5 * (current.s + target))
            continue
        substeps += 1
        picard_total += iters
        contraction = max(contraction, kappa)
        warr_t = symbol_weights(grid, target)
        norm_w_total += math.sqrt(max(inner_weights_raw(w, w, warr_t, grid), 0.0))
        params = SymbolParams(n=grid.n, s=target, p=p)
        result = _finalize(grid, current.field.values + w, params, warr_t,
                           iters, "continuation", [], config.solver)
        if not result.converged:
            raise RuntimeError(
                f"continued state at s={target} failed residual verification "
                f"(residual_linf={result.residual_linf:.3e})"
            )
        current = result
        remaining.pop()
    return ContinuationStep(
        result=current, s_from=sigma, s_to=s_target, norm_w=norm_w_total,
        contraction_estimate=contraction, picard_iterations=picard_total,
        substeps=substeps,
    )


def _h1_distance(a, b):
    grid = a.grid
    warr = 1.0 + grid.xi_sq()
    d = a.values - b.values
    return math.sqrt(max(inner_weights_raw(d, d, warr, grid), 0.0))


def sweep_s(s_values, params, grid, config=None, scratch_every=1):
    """Continuation trace along an ordered s list with scratch cross-checks.

    The first node anchors the sweep (scratch solve); every later node is
    reached by continuation from its predecessor. Every scratch_every-th
    node is additionally solved from scratch and compared in H^1 after
    recentering (the uniqueness probe). Distances to the endpoint state in
    the sweep direction are recorded per node. A failed node raises
    SweepError carrying the partial trace.
    """
    config = config or ContinuationConfig()
    s_values = [float(s) for s in s_values]
    if len(s_values) == 0:
        raise ValueError("empty s list")
    diffs = np.diff(s_values)
    if len(s_values) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ValueError("s values must be strictly monotone")
    direction = "toward_one" if (len(s_values) > 1 and diffs[0] > 0) else "toward_zero"

    records = []
    trace = ContinuationTrace(records=records, direction=direction, anchor=None)
    endpoint_s = 1.0 if direction == "toward_one" else 0.0
    try:
        endpoint_state = solve_ground_state(
            SymbolParams(n=params.n, s=endpoint_s, p=params.p, shift=params.shift),
            grid, config=config.solver,
        )
    except Exception as exc:
        raise SweepError(f"endpoint solve at s={endpoint_s} failed: {exc}", trace) from exc
    current = None
    for i, s in enumerate(s_values):
        try:
            if i == 0:
                sp = SymbolParams(n=params.n, s=s, p=params.p, shift=params.shift)
                result = solve_ground_state(sp, grid, config=config.solver)
                if not result.converged:
                    raise RuntimeError(f"anchor solve at s={s} did not converge")
                step_info = ContinuationStep(result, s, s, 0.0, 0.0, 0, 0)
                trace.anchor = result
            else:
                step_info = continuation_step(current, s, config)
            result = step_info.result
            scratch_diff = None
            if scratch_every and i % scratch_every == 0 and i > 0:
                sp = SymbolParams(n=params.n, s=s, p=params.p, shift=params.shift)
                scratch = solve_ground_state(sp, grid, config=config.solver)
                if scratch.converged:
                    scratch_diff = _h1_distance(result.field, scratch.field)
            records.append(TraceRecord(
                s=s,
                lambda_s=result.lambda_s,
                norm_w=step_info.norm_w,
                contraction_estimate=step_info.contraction_estimate,
                result=result,
                scratch_h1_diff=scratch_diff,
                endpoint_h1_diff=_h1_distance(result.field, endpoint_state.field),
            ))
            current = result
        except Exception as exc:
            raise SweepError(f"sweep failed at s={s}: {exc}", trace) from exc
    return trace
