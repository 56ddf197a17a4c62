"""Damped Newton iteration for the reduced nonlinear systems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import LinearSolveError, NonConvergence
from .linear import Factorization

__all__ = ["NewtonOptions", "NewtonResult", "newton_solve"]


@dataclass
class NewtonOptions:
    rtol: float = 1e-10
    atol: float = 1e-14
    step_tol: float = 1e-12
    max_iter: int = 30
    backtrack: float = 0.5
    min_step: float = 1.0 / 64.0
    verbose: bool = False


@dataclass
class NewtonResult:
    x: np.ndarray
    residual_norms: list = field(default_factory=list)
    natural_norms: list = field(default_factory=list)
    iterations: int = 0


def newton_solve(residual, jacobian, x0: np.ndarray, options: NewtonOptions | None = None) -> NewtonResult:
    """Solve residual(x) = 0 by Newton's method with an affine-invariant
    line search.

    Step acceptance uses the natural norm |J(x_k)^-1 r(x_trial)| (Jacobian
    factorization reused), which is immune to the mixed scaling of bordered
    systems whose appended scalar rows carry different units than the field
    equations; the natural norms in the log decrease monotonically. The
    iteration stops when the residual norm drops below max(rtol*|r0|, atol)
    or the Newton increment falls below step_tol*(1 + |x|).
    """
    opt = options or NewtonOptions()
    x = np.array(x0, dtype=float)
    r = residual(x)
    norm = float(np.linalg.norm(r))
    history = [norm]
    result = NewtonResult(x=x, residual_norms=history)
    target = max(opt.rtol * norm, opt.atol)
    if norm <= opt.atol:
        return result
    for it in range(opt.max_iter):
        try:
            fac = Factorization(jacobian(x))
            dx = fac.solve(-r)
        except LinearSolveError as exc:
            raise NonConvergence(f"linear solve failed at Newton step {it}: {exc}", history=history) from exc
        natural = float(np.linalg.norm(dx))
        if not result.natural_norms:
            result.natural_norms.append(natural)
        step = 1.0
        while True:
            x_trial = x + step * dx
            r_trial = residual(x_trial)
            nat_trial = float(np.linalg.norm(fac.solve(-r_trial, check=False)))
            if np.isfinite(nat_trial) and nat_trial < natural:
                break
            step *= opt.backtrack
            if step < opt.min_step:
                raise NonConvergence(
                    f"line search stalled at Newton step {it} (natural norm {natural:.3e})",
                    history=history,
                )
        x, r = x_trial, r_trial
        norm = float(np.linalg.norm(r))
        history.append(norm)
        result.natural_norms.append(nat_trial)
        result.x = x
        result.iterations = it + 1
        if opt.verbose:
            print(f"  newton {it + 1:2d}: |r| = {norm:.3e} natural = {nat_trial:.3e} (step {step:g})")
        if norm <= target:
            return result
        if step == 1.0 and nat_trial <= opt.step_tol * (1.0 + float(np.linalg.norm(x))):
            return result
    raise NonConvergence(
        f"no convergence in {opt.max_iter} Newton iterations (|r| = {history[-1]:.3e})",
        history=history,
    )
