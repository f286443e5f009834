"""Small dense convex QPs with nonnegativity bounds and one sum constraint.

Solves::

    minimize    1/2 b' Q b + c' b
    subject to  b_i >= 0                  for i in nonneg_indices
                sum_{i in S} b_i = target (optional)

with a primal active-set method.  The working set only ever contains bound
constraints; the sum constraint is always active and is carried through the
equality-constrained subproblem by its KKT system.  Problems here have a few
dozen variables at most, so every subproblem is a dense solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InfeasibleConstraint, MaxIterationsExceeded, QpFailure

DEFAULT_TOL = 1e-9
RIDGE_SCALE = 1e-10


@dataclass(frozen=True)
class QpProblem:
    q: np.ndarray
    c: np.ndarray
    nonneg_indices: tuple = ()
    sum_constraint: tuple | None = None

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        c = np.array(self.c, dtype=float).reshape(-1)
        d = c.size
        if q.shape != (d, d):
            raise DimensionMismatch(f"q has shape {q.shape}, expected {(d, d)}")
        scale = max(float(np.max(np.abs(q))) if d else 0.0, 1.0)
        if np.max(np.abs(q - q.T), initial=0.0) > 1e-12 * scale:
            raise ValueError("q must be symmetric")
        nonneg = tuple(sorted({int(i) for i in self.nonneg_indices}))
        if nonneg and (nonneg[0] < 0 or nonneg[-1] >= d):
            raise DimensionMismatch("nonneg_indices out of range")
        sum_constraint = None
        if self.sum_constraint is not None:
            idx, target = self.sum_constraint
            idx = tuple(sorted({int(i) for i in idx}))
            if idx and (idx[0] < 0 or idx[-1] >= d):
                raise DimensionMismatch("sum-constraint indices out of range")
            sum_constraint = (idx, float(target))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "nonneg_indices", nonneg)
        object.__setattr__(self, "sum_constraint", sum_constraint)

    @property
    def dim(self) -> int:
        return self.c.size

    def objective(self, beta) -> float:
        beta = np.asarray(beta, dtype=float)
        return float(0.5 * beta @ self.q @ beta + self.c @ beta)

    def sum_vector(self) -> np.ndarray:
        a = np.zeros(self.dim)
        if self.sum_constraint is not None:
            a[list(self.sum_constraint[0])] = 1.0
        return a

    def to_json(self) -> dict:
        return {
            "q": self.q.tolist(),
            "c": self.c.tolist(),
            "nonneg_indices": list(self.nonneg_indices),
            "sum_constraint": None
            if self.sum_constraint is None
            else {"indices": list(self.sum_constraint[0]), "target": self.sum_constraint[1]},
        }


@dataclass(frozen=True)
class QpSolution:
    beta: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    active_set: tuple
    ridge: float = 0.0
    converged: bool = True

    def to_json(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "active_set": list(self.active_set),
            "ridge": self.ridge,
            "converged": self.converged,
        }


def check_kkt(p: QpProblem, beta) -> float:
    """Max-norm KKT residual of ``beta`` for problem ``p``.

    Free coordinates contribute ``|g_i + nu a_i|``; bounded coordinates
    contribute ``|min(beta_i, g_i + nu a_i)|``, which is zero exactly when the
    bound holds, its multiplier is nonnegative and complementarity holds.  The
    sum-constraint multiplier ``nu`` is estimated from the constrained
    coordinates that are off their bounds.
    """
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != p.dim:
        raise DimensionMismatch(f"beta has length {beta.size}, problem has {p.dim}")
    g = p.q @ beta + p.c
    a = p.sum_vector()
    bounded = np.zeros(p.dim, dtype=bool)
    bounded[list(p.nonneg_indices)] = True

    nu = 0.0
    feas = 0.0
    if p.sum_constraint is not None:
        idx, target = p.sum_constraint
        idx = np.array(idx, dtype=int)
        feas = abs(float(beta[idx].sum()) - target) if idx.size else abs(target)
        if idx.size:
            interior = idx[~bounded[idx] | (beta[idx] > 0.0)]
            if interior.size:
                nu = -float(np.mean(g[interior]))
            else:
                nu = -float(np.min(g[idx]))

    mult = g + nu * a
    r = np.where(bounded, np.minimum(beta, mult), mult)
    return float(max(np.max(np.abs(r), initial=0.0), feas))


def _initial_point(p: QpProblem) -> np.ndarray:
    x = np.zeros(p.dim)
    if p.sum_constraint is None:
        return x
    idx, target = p.sum_constraint
    nonneg = set(p.nonneg_indices)
    free = [i for i in idx if i not in nonneg]
    if not idx:
        if target != 0.0:
            raise InfeasibleConstraint("empty sum constraint with nonzero target", problem=p)
        return x
    if free:
        x[free[0]] = target
    elif target < 0.0:
        raise InfeasibleConstraint(
            f"sum target {target} is negative but every summed coordinate is nonnegative",
            problem=p,
        )
    else:
        x[list(idx)] = target / len(idx)
    return x


def _solve_face(q, c, a, target, free, has_sum):
    """Minimize over the free coordinates with the others fixed at zero."""
    qf = q[np.ix_(free, free)]
    cf = c[free]
    af = a[free]
    use_sum = has_sum and np.any(af != 0.0)
    if use_sum:
        m = free.size
        kkt = np.zeros((m + 1, m + 1))
        kkt[:m, :m] = qf
        kkt[:m, m] = af
        kkt[m, :m] = af
        rhs = np.concatenate([-cf, [target]])
    else:
        kkt, rhs = qf, -cf
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    if use_sum:
        return sol[:-1], float(sol[-1])
    return sol, (None if has_sum else 0.0)


def solve(p: QpProblem, tol: float = DEFAULT_TOL, max_iter: int | None = None) -> QpSolution:
    """Solve ``p`` and certify the result by its KKT residual.

    Raises ``MaxIterationsExceeded`` (carrying the last iterate) when the
    working set keeps changing past ``max_iter``, and ``QpFailure`` when the
    final iterate misses ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    d = p.dim
    if max_iter is None:
        max_iter = 10 * d * d
    q = p.q
    ridge = 0.0
    if d:
        try:
            pivots = np.diag(np.linalg.cholesky(q))
            singular = pivots.min() ** 2 <= RIDGE_SCALE * max(float(np.max(np.diag(q))), 1e-300)
        except np.linalg.LinAlgError:
            singular = True
        if singular:
            tr = float(np.trace(q))
            ridge = RIDGE_SCALE * (tr / d if tr > 0 else 1.0)
            q = q + ridge * np.eye(d)

    a = p.sum_vector()
    has_sum = p.sum_constraint is not None
    target = p.sum_constraint[1] if has_sum else 0.0
    is_bounded = np.zeros(d, dtype=bool)
    is_bounded[list(p.nonneg_indices)] = True

    x = _initial_point(p)
    working = is_bounded & (x == 0.0)
    mult_tol = 0.1 * tol

    iterations = 0
    converged = False
    while iterations < max_iter:
        free = np.flatnonzero(~working)
        if free.size:
            xf, nu = _solve_face(q, p.c, a, target, free, has_sum)
            step = xf - x[free]
            shrinking = (step < 0.0) & is_bounded[free]
            if np.any(shrinking):
                ratios = np.full(free.size, np.inf)
                ratios[shrinking] = -x[free][shrinking] / step[shrinking]
                j = int(np.argmin(ratios))
                if ratios[j] < 1.0:
                    x[free] += max(float(ratios[j]), 0.0) * step
                    x[free[j]] = 0.0
                    working[free[j]] = True
                    iterations += 1
                    continue
            x[free] = xf
        else:
            nu = None

        g = q @ x + p.c
        if nu is None:
            # every summed coordinate is pinned at zero; any nu that keeps
            # their multipliers nonnegative certifies the face
            nu = -float(np.min(g[a != 0.0])) if has_sum and np.any(a != 0.0) else 0.0
        mult = g + nu * a
        bound_idx = np.flatnonzero(working)
        if bound_idx.size == 0 or mult[bound_idx].min() >= -mult_tol:
            converged = True
            break
        working[bound_idx[np.argmin(mult[bound_idx])]] = False
        iterations += 1

    x[is_bounded] = np.maximum(x[is_bounded], 0.0)
    x = _polish(p, x, working)
    residual = check_kkt(p, x)
    sol = QpSolution(
        beta=x,
        objective=p.objective(x),
        kkt_residual=residual,
        iterations=iterations,
        active_set=tuple(int(i) for i in np.flatnonzero(working & (x == 0.0))),
        ridge=ridge,
        converged=converged and residual <= tol,
    )
    if not converged:
        raise MaxIterationsExceeded(
            f"active set did not settle within {max_iter} changes (KKT residual {residual:.3e})",
            problem=p,
            solution=sol,
        )
    if residual > tol:
        raise QpFailure(f"KKT residual {residual:.3e} exceeds tolerance {tol:.1e}", problem=p, solution=sol)
    return sol


def _polish(p: QpProblem, x: np.ndarray, working: np.ndarray) -> np.ndarray:
    """Re-solve the final face against the unperturbed ``q``.

    Undoes the ridge bias (if any) and picks up one step of iterative
    refinement; kept only when it lowers the KKT residual without leaving
    the feasible set.
    """
    free = np.flatnonzero(~working)
    if free.size == 0:
        return x
    a = p.sum_vector()
    has_sum = p.sum_constraint is not None
    target = p.sum_constraint[1] if has_sum else 0.0
    g = p.q @ x + p.c
    # Newton correction on the face: solve for dx with a' dx = target - a'x
    dx, _ = _solve_face(p.q, g, a, target - float(a @ x), free, has_sum)
    cand = x.copy()
    cand[free] += dx
    bounded = np.array([i in set(p.nonneg_indices) for i in range(p.dim)])
    if np.any(cand[bounded] < 0.0):
        return x
    if check_kkt(p, cand) < check_kkt(p, x):
        return cand
    return x
