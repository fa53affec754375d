"""First-order solver for continuous conic programs.

Operator splitting on

    minimize    c . x
    subject to  A x = b          (affine set, projected via a cached KKT
                x in C            factorization)

where C is the product of per-variable intervals and second-order /
rotated second-order cone blocks, each with a closed-form Euclidean
projection.  The iteration is the standard two-block scheme

    x^{k+1}   = argmin_{Ax=b} c.x + (rho/2) ||x - z^k + u^k||^2
    x_hat     = alpha x^{k+1} + (1 - alpha) z^k
    z^{k+1}   = Proj_C(x_hat + u^k)
    u^{k+1}   = u^k + x_hat - z^{k+1}

with Ruiz equilibration of the data and optional residual-balancing
updates of rho.  Termination requires the primal residual, the explicit
stationarity (dual) residual, and the duality gap, all measured on the
original unscaled data, to fall below their tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .conic import ConicProgram, ProgramBuilder

_KKT_REG = 1e-10  # static regularization of the KKT (2,2) block
_RHO_MIN, _RHO_MAX = 1e-6, 1e6


@dataclass(frozen=True)
class SolverSettings:
    eps_primal: float = 1e-7
    eps_dual: float = 1e-7
    eps_gap: float = 1e-6
    max_iters: int = 100_000
    over_relaxation: float = 1.6
    scaling: bool = True
    step_rho: float = 1.0
    adaptive_rho: bool = True
    check_every: int = 25
    record_residuals: bool = False

    def __post_init__(self) -> None:
        if min(self.eps_primal, self.eps_dual, self.eps_gap) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 1.0 < self.over_relaxation < 2.0:
            raise ValueError("over_relaxation must lie in (1, 2)")
        if self.step_rho <= 0:
            raise ValueError("step_rho must be positive")


@dataclass
class SocpSolution:
    status: str  # optimal | infeasible | unbounded | iteration-limit
    x: np.ndarray
    y: np.ndarray
    primal_residual: float
    dual_residual: float
    duality_gap: float
    iters: int
    objective: float
    diagnostics: dict = field(default_factory=dict)


def project_soc(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of (t; u) onto {t >= ||u||}."""
    v = np.asarray(v, dtype=float)
    if v.size < 1:
        raise ValueError("need at least the head component")
    t, u = v[0], v[1:]
    nu = float(np.linalg.norm(u))
    if t >= nu:
        return v.copy()
    if t <= -nu:
        return np.zeros_like(v)
    coef = 0.5 * (t + nu)
    out = np.empty_like(v)
    out[0] = coef
    out[1:] = (coef / nu) * u
    return out


_SQ2 = math.sqrt(2.0)


def rotated_to_soc(p: float, q: float, u: np.ndarray) -> np.ndarray:
    """Map a rotated-cone point to standard SOC coordinates.

    (p, q, u) satisfies 2pq >= ||u||^2 with p, q >= 0 exactly when the
    returned vector (p + q; p - q, sqrt(2) u) lies in the second-order cone.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return np.concatenate(([p + q, p - q], _SQ2 * u))


def project_rotated(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of (p; q; u) onto {2pq >= ||u||^2, p >= 0, q >= 0}.

    Uses the orthogonal change of coordinates underlying rotated_to_soc, which
    maps the rotated cone onto the standard SOC.
    """
    v = np.asarray(v, dtype=float)
    if v.size < 2:
        raise ValueError("need p and q components")
    p, q, u = v[0], v[1], v[2:]
    w = np.concatenate(([(p + q) / _SQ2, (p - q) / _SQ2], u))
    z = project_soc(w)
    out = np.empty_like(v)
    out[0] = (z[0] + z[1]) / _SQ2
    out[1] = (z[0] - z[1]) / _SQ2
    out[2:] = z[2:]
    return out


def rewrite_rotated_cones(program: ConicProgram) -> ConicProgram:
    """Replace every rotated cone with linear rows plus one standard SOC.

    For each (p; q; u...) three kinds of auxiliary variables are appended with
    defining rows t = p + q, w0 = p - q, w_i = sqrt(2) u_i, and the cone
    (t; w0, w...) is added.  Solving either form yields the same feasible set;
    used for cross-checks of the native rotated-cone handling.
    """
    builder = ProgramBuilder.from_program(program)
    builder._rotated = []
    for cone in program.rotated_cones:
        p, q, u = cone[0], cone[1], list(cone[2:])
        t = builder.add_var()
        w0 = builder.add_var()
        builder.add_row({t: 1.0, p: -1.0, q: -1.0}, 0.0)
        builder.add_row({w0: 1.0, p: -1.0, q: 1.0}, 0.0)
        ws = []
        for ui in u:
            wi = builder.add_var()
            builder.add_row({wi: 1.0, ui: -_SQ2}, 0.0)
            ws.append(wi)
        builder.add_soc_cone(t, [w0] + ws)
    return builder.build()


# ---------------------------------------------------------------------------
# presolve: interval propagation over equality rows, used only to certify
# structural infeasibility (e.g. an islanded bus whose parent rows cannot sum
# to one) before spending iterations on it
# ---------------------------------------------------------------------------

def _propagate_bounds(program: ConicProgram, max_passes: int = 20) -> str | None:
    lo, hi = program.interval_bounds()
    for cone in program.soc_cones:
        lo[cone[0]] = max(lo[cone[0]], 0.0)
    for cone in program.rotated_cones:
        lo[cone[0]] = max(lo[cone[0]], 0.0)
        lo[cone[1]] = max(lo[cone[1]], 0.0)
    a = program.a_matrix
    b = program.b
    tol = 1e-9 * (1.0 + float(np.max(np.abs(b), initial=0.0)))
    rows = [(a.indices[a.indptr[r]:a.indptr[r + 1]], a.data[a.indptr[r]:a.indptr[r + 1]])
            for r in range(a.shape[0])]
    for _ in range(max_passes):
        changed = False
        for cone in program.soc_cones:
            h = cone[0]
            if np.isfinite(hi[h]):
                for i in cone[1:]:
                    if hi[i] > hi[h] + 1e-15:
                        hi[i] = hi[h]
                        changed = True
                    if lo[i] < -hi[h] - 1e-15:
                        lo[i] = -hi[h]
                        changed = True
        for cone in program.rotated_cones:
            p, q = cone[0], cone[1]
            if np.isfinite(hi[p]) and np.isfinite(hi[q]):
                m = math.sqrt(max(2.0 * hi[p] * hi[q], 0.0))
                for i in cone[2:]:
                    if hi[i] > m + 1e-15:
                        hi[i] = m
                        changed = True
                    if lo[i] < -m - 1e-15:
                        lo[i] = -m
                        changed = True
        for r, (cols, vals) in enumerate(rows):
            if len(cols) == 0:
                if abs(b[r]) > tol:
                    return f"row {r} has no variables but rhs {b[r]!r}"
                continue
            term_lo = np.where(vals > 0, vals * lo[cols], vals * hi[cols])
            term_hi = np.where(vals > 0, vals * hi[cols], vals * lo[cols])
            s_lo, s_hi = float(np.sum(term_lo)), float(np.sum(term_hi))
            if s_lo > b[r] + tol or s_hi < b[r] - tol:
                return (f"row {r}: attainable range [{s_lo!r}, {s_hi!r}] "
                        f"excludes rhs {b[r]!r}")
            if not (np.isfinite(s_lo) and np.isfinite(s_hi)):
                continue
            for k, (j, v) in enumerate(zip(cols, vals)):
                rest_lo = s_lo - term_lo[k]
                rest_hi = s_hi - term_hi[k]
                t_lo = (b[r] - rest_hi)
                t_hi = (b[r] - rest_lo)
                new_lo, new_hi = (t_lo / v, t_hi / v) if v > 0 else (t_hi / v, t_lo / v)
                if new_lo > lo[j] + 1e-12 * (1.0 + abs(new_lo)):
                    lo[j] = new_lo
                    changed = True
                if new_hi < hi[j] - 1e-12 * (1.0 + abs(new_hi)):
                    hi[j] = new_hi
                    changed = True
                if lo[j] > hi[j] + tol:
                    return f"variable {j} bounds became empty: [{lo[j]!r}, {hi[j]!r}]"
        if not changed:
            break
    return None


# ---------------------------------------------------------------------------
# solver workspace
# ---------------------------------------------------------------------------

class _ConeIndex:
    """Cone blocks grouped by length for vectorized batch projection."""

    def __init__(self, cones: tuple[tuple[int, ...], ...]):
        by_len: dict[int, list[tuple[int, ...]]] = {}
        for cone in cones:
            by_len.setdefault(len(cone), []).append(cone)
        self.groups = [np.array(group, dtype=int) for group in by_len.values()]


def _batch_project_soc(v: np.ndarray) -> np.ndarray:
    """Rows of v are (t, u...) points; project each onto the SOC."""
    t = v[:, 0]
    nu = np.linalg.norm(v[:, 1:], axis=1)
    out = v.copy()
    inside = t >= nu
    polar = t <= -nu
    mid = ~(inside | polar)
    out[polar] = 0.0
    if np.any(mid):
        coef = 0.5 * (t[mid] + nu[mid])
        out[mid, 0] = coef
        safe = np.where(nu[mid] > 0, nu[mid], 1.0)
        out[mid, 1:] = v[mid, 1:] * (coef / safe)[:, None]
    return out


def _batch_project_rotated(v: np.ndarray) -> np.ndarray:
    w = v.copy()
    w[:, 0] = (v[:, 0] + v[:, 1]) / _SQ2
    w[:, 1] = (v[:, 0] - v[:, 1]) / _SQ2
    z = _batch_project_soc(w)
    out = z.copy()
    out[:, 0] = (z[:, 0] + z[:, 1]) / _SQ2
    out[:, 1] = (z[:, 0] - z[:, 1]) / _SQ2
    return out


class _Workspace:
    def __init__(self, program: ConicProgram, settings: SolverSettings):
        self.program = program
        self.settings = settings
        self.n = program.n_vars
        self.m = program.n_rows
        self.lo, self.hi = program.interval_bounds()
        self.soc_idx = _ConeIndex(program.soc_cones)
        self.rot_idx = _ConeIndex(program.rotated_cones)

        a = program.a_matrix.tocsr()
        self.a_orig = a
        self.b_orig = program.b
        self.c_orig = program.c
        self._equilibrate()

    # -- scaling ----------------------------------------------------------
    def _cone_blocks(self) -> list[np.ndarray]:
        blocks = []
        for group in self.soc_idx.groups + self.rot_idx.groups:
            blocks.extend(group)
        return blocks

    def _equilibrate(self) -> None:
        a = self.a_orig.astype(float).tocsr()
        d = np.ones(self.m)
        e = np.ones(self.n)
        if self.settings.scaling and self.m > 0 and a.nnz > 0:
            for _ in range(10):
                row_max = np.asarray(abs(a).max(axis=1).todense()).ravel()
                dr = 1.0 / np.sqrt(np.where(row_max > 1e-12, row_max, 1.0))
                a = sp.diags(dr) @ a
                col_max = np.asarray(abs(a).max(axis=0).todense()).ravel()
                ec = 1.0 / np.sqrt(np.where(col_max > 1e-12, col_max, 1.0))
                # cone blocks must share one scaling factor to stay cones
                for block in self._cone_blocks():
                    g = float(np.exp(np.mean(np.log(ec[block]))))
                    ec[block] = g
                a = (a @ sp.diags(ec)).tocsr()
                d *= dr
                e *= ec
        self.d = d
        self.e = e
        self.a_s = a.tocsr()
        self.b_s = d * self.b_orig
        c_s = e * self.c_orig
        self.sigma_c = max(1.0, float(np.max(np.abs(c_s), initial=0.0)))
        self.c_s = c_s / self.sigma_c
        self.lo_s = self.lo / e
        self.hi_s = self.hi / e

    # -- KKT --------------------------------------------------------------
    def _factor(self, rho: float) -> None:
        if self.m == 0:
            self._lu = None
        else:
            kkt = sp.bmat(
                [
                    [rho * sp.eye(self.n), self.a_s.T],
                    [self.a_s, -_KKT_REG * sp.eye(self.m)],
                ],
                format="csc",
            )
            self._lu = spla.splu(kkt)
        self.rho = rho

    def _xy_update(self, rhs_top: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self._lu is None:
            return rhs_top / self.rho, np.zeros(0)
        sol = self._lu.solve(np.concatenate([rhs_top, self.b_s]))
        return sol[: self.n], sol[self.n:]

    # -- projections ------------------------------------------------------
    def _project(self, w: np.ndarray) -> np.ndarray:
        z = np.clip(w, self.lo_s, self.hi_s)
        for group in self.soc_idx.groups:
            z[group] = _batch_project_soc(w[group])
        for group in self.rot_idx.groups:
            z[group] = _batch_project_rotated(w[group])
        return z

    # -- original-space certificates and residuals -------------------------
    def _support(self, s: np.ndarray, x: np.ndarray) -> float:
        """sup_{v in intervals} s.v; cone blocks contribute zero for s in the polar."""
        side = np.where(s > 0, self.hi, np.where(s < 0, self.lo, 0.0))
        contrib = s * side
        bad = ~np.isfinite(contrib)
        if np.any(bad):
            contrib[bad] = (s * x)[bad]
        for group in self.soc_idx.groups + self.rot_idx.groups:
            contrib[group.ravel()] = 0.0
        return float(np.sum(contrib))

    def _residuals(self, z_s: np.ndarray, y_s: np.ndarray, u_s: np.ndarray):
        x = self.e * z_s
        y = self.sigma_c * self.d * y_s if self.m else np.zeros(0)
        s = self.sigma_c * self.rho * u_s / self.e
        if self.m:
            pr = float(np.linalg.norm(self.a_orig @ x - self.b_orig))
            pr /= max(1.0, float(np.linalg.norm(self.b_orig)))
            dr_vec = self.c_orig + self.a_orig.T @ y + s
        else:
            pr = 0.0
            dr_vec = self.c_orig + s
        dr = float(np.linalg.norm(dr_vec)) / max(1.0, float(np.linalg.norm(self.c_orig)))
        pobj = float(self.c_orig @ x)
        dobj = -float(self.b_orig @ y) - self._support(s, x) if self.m else -self._support(s, x)
        gap = abs(pobj - dobj) / max(1.0, abs(pobj), abs(dobj))
        return x, y, pr, dr, gap, pobj

    def _infeasibility_certificate(self, dy_s: np.ndarray) -> float | None:
        """Value of b.y + sup_C(-A^T y) for the normalized dual direction.

        Negative value certifies that no x in C satisfies Ax = b.  Returns None
        when the direction is not a valid certificate (unbounded support).
        """
        if self.m == 0:
            return None
        y = self.sigma_c * self.d * dy_s
        norm = float(np.max(np.abs(y), initial=0.0))
        if norm < 1e-12:
            return None
        y = y / norm
        r = -(self.a_orig.T @ y)
        side = np.where(r > 0, self.hi, np.where(r < 0, self.lo, 0.0))
        contrib = r * side
        if not np.all(np.isfinite(contrib)):
            return None
        # sup over a cone block is zero iff -r lies in the (self-dual) cone
        for group in self.soc_idx.groups:
            for cone in group:
                rc = r[cone]
                viol = np.linalg.norm(-rc - project_soc(-rc))
                if viol > 1e-7 * max(1.0, np.linalg.norm(rc)):
                    return None
                contrib[cone] = 0.0
        for group in self.rot_idx.groups:
            for cone in group:
                rc = r[cone]
                viol = np.linalg.norm(-rc - project_rotated(-rc))
                if viol > 1e-7 * max(1.0, np.linalg.norm(rc)):
                    return None
                contrib[cone] = 0.0
        return float(self.b_orig @ y) + float(np.sum(contrib))

    def _recession_direction(self, dz_s: np.ndarray) -> bool:
        dz = self.e * dz_s
        norm = float(np.linalg.norm(dz))
        if norm < 1e-12:
            return False
        dz = dz / norm
        tol = 1e-6
        if np.any(dz > tol) and np.any(np.isfinite(self.hi[dz > tol])):
            return False
        if np.any(dz < -tol) and np.any(np.isfinite(self.lo[dz < -tol])):
            return False
        for cone in self.program.soc_cones:
            v = dz[list(cone)]
            if np.linalg.norm(v - project_soc(v)) > tol:
                return False
        for cone in self.program.rotated_cones:
            v = dz[list(cone)]
            if np.linalg.norm(v - project_rotated(v)) > tol:
                return False
        if self.m and float(np.linalg.norm(self.a_orig @ dz)) > tol:
            return False
        return float(self.c_orig @ dz) < -tol

    # -- main loop ----------------------------------------------------------
    def run(self, x0: np.ndarray | None) -> SocpSolution:
        st = self.settings
        self._factor(st.step_rho)
        n = self.n
        if x0 is not None:
            z = self._project(np.asarray(x0, dtype=float) / self.e)
        else:
            z = self._project(np.zeros(n))
        u = np.zeros(n)
        alpha = st.over_relaxation

        best = None
        best_score = np.inf
        trace = []
        y_s = np.zeros(self.m)
        y_prev_check = np.zeros(self.m)
        z_prev_check = z.copy()
        stalled_checks = 0
        prev_max_res = np.inf
        rho_updates = 0

        status = "iteration-limit"
        it = 0
        while it < st.max_iters:
            it += 1
            x, y_s = self._xy_update(self.rho * (z - u) - self.c_s)
            x_hat = alpha * x + (1.0 - alpha) * z
            w = x_hat + u
            z = self._project(w)
            u = w - z

            if it % st.check_every == 0 or it == st.max_iters:
                xo, yo, pr, dr, gap, pobj = self._residuals(z, y_s, u)
                if st.record_residuals:
                    trace.append((it, pr, dr, gap, pobj))
                score = max(pr / st.eps_primal, dr / st.eps_dual, gap / st.eps_gap)
                if score < best_score:
                    best_score = score
                    best = (xo, yo, pr, dr, gap, pobj, it)
                if pr <= st.eps_primal and dr <= st.eps_dual and gap <= st.eps_gap:
                    status = "optimal"
                    best = (xo, yo, pr, dr, gap, pobj, it)
                    break

                max_res = max(pr, dr)
                if max_res > 0.99 * prev_max_res:
                    stalled_checks += 1
                else:
                    stalled_checks = 0
                prev_max_res = max_res

                if it >= 100 and stalled_checks >= 3:
                    cert = self._infeasibility_certificate(y_s - y_prev_check)
                    b_scale = max(1.0, float(np.max(np.abs(self.b_orig), initial=0.0)))
                    if cert is not None and cert < -1e-6 * b_scale:
                        return SocpSolution(
                            status="infeasible",
                            x=self.e * z,
                            y=self.sigma_c * self.d * y_s if self.m else np.zeros(0),
                            primal_residual=pr,
                            dual_residual=dr,
                            duality_gap=gap,
                            iters=it,
                            objective=pobj,
                            diagnostics={"certificate": "dual-divergence",
                                         "certificate_value": cert,
                                         "trace": trace},
                        )
                    if self._recession_direction(z - z_prev_check):
                        return SocpSolution(
                            status="unbounded",
                            x=self.e * z,
                            y=self.sigma_c * self.d * y_s if self.m else np.zeros(0),
                            primal_residual=pr,
                            dual_residual=dr,
                            duality_gap=gap,
                            iters=it,
                            objective=pobj,
                            diagnostics={"certificate": "primal-ray", "trace": trace},
                        )
                y_prev_check = y_s.copy()
                z_prev_check = z.copy()

                if (st.adaptive_rho and rho_updates < 40 and it < st.max_iters
                        and max(pr, dr) > min(st.eps_primal, st.eps_dual)):
                    new_rho = self.rho
                    if pr > 10.0 * dr:
                        new_rho = min(self.rho * 2.0, _RHO_MAX)
                    elif dr > 10.0 * pr:
                        new_rho = max(self.rho / 2.0, _RHO_MIN)
                    if new_rho != self.rho:
                        u *= self.rho / new_rho
                        self._factor(new_rho)
                        rho_updates += 1

        if status == "optimal":
            xo, yo, pr, dr, gap, pobj, it_best = best
            return SocpSolution("optimal", xo, yo, pr, dr, gap, it, pobj,
                                diagnostics={"trace": trace, "rho": self.rho})
        xo, yo, pr, dr, gap, pobj, _ = best if best is not None else (
            self.e * z, self.sigma_c * self.d * y_s, np.inf, np.inf, np.inf,
            float(self.c_orig @ (self.e * z)), it)
        return SocpSolution("iteration-limit", xo, yo, pr, dr, gap, it, pobj,
                            diagnostics={"trace": trace, "rho": self.rho})


def solve(program: ConicProgram, settings: SolverSettings | None = None,
          x0: np.ndarray | None = None) -> SocpSolution:
    """Solve a continuous conic program.

    Returns a solution whose ``x`` is exactly feasible for the interval and
    cone constraints; equality rows are satisfied to within the primal
    tolerance when the status is optimal.  Deterministic for fixed inputs.
    """
    settings = settings or SolverSettings()
    reason = _propagate_bounds(program)
    if reason is not None:
        return SocpSolution(
            status="infeasible",
            x=np.zeros(program.n_vars),
            y=np.zeros(program.n_rows),
            primal_residual=np.inf,
            dual_residual=np.inf,
            duality_gap=np.inf,
            iters=0,
            objective=np.nan,
            diagnostics={"certificate": "bound-propagation", "detail": reason},
        )
    return _Workspace(program, settings).run(x0)


def residual_trace_csv(solution: SocpSolution) -> str:
    """CSV dump of the per-check residual trace (record_residuals must be on)."""
    rows = ["iteration,primal_residual,dual_residual,duality_gap,objective"]
    for it, pr, dr, gap, obj in solution.diagnostics.get("trace", []):
        rows.append(f"{it},{pr!r},{dr!r},{gap!r},{obj!r}")
    return "\n".join(rows) + "\n"
