"""Solver-agnostic conic program intermediate representation.

A :class:`ConicProgram` is the continuous core shared by both reconfiguration
formulations and by the embedded solver:

    minimize    c . x
    subject to  A x = b
                x_i >= 0                    for i in nonneg_vars
                lo <= x_i <= hi             for (i, lo, hi) in box_vars
                x_t >= || x_u ||            for (t, u...) in soc_cones
                2 x_p x_q >= || x_u ||^2,   x_p, x_q >= 0
                                            for (p, q, u...) in rotated_cones

Implementation constraint (stronger than the data-model invariants): variables
that belong to a cone may not additionally carry a box or nonnegativity
constraint, and may not belong to a second cone.  The projection-based solver
relies on the cone product being a true product; model builders add linking
rows where a cone member also needs interval bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class ConicProgram:
    n_vars: int
    c: np.ndarray
    a_matrix: sp.csr_matrix
    b: np.ndarray
    nonneg_vars: frozenset[int] = frozenset()
    box_vars: tuple[tuple[int, float, float], ...] = ()
    soc_cones: tuple[tuple[int, ...], ...] = ()
    rotated_cones: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        object.__setattr__(self, "a_matrix", sp.csr_matrix(self.a_matrix, dtype=float))
        _validate_program(self)

    @property
    def n_rows(self) -> int:
        return self.a_matrix.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x)

    def equality_residual(self, x: np.ndarray) -> float:
        if self.n_rows == 0:
            return 0.0
        return float(np.max(np.abs(self.a_matrix @ x - self.b)))

    def interval_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-variable lower/upper bounds from nonneg and box constraints."""
        lo = np.full(self.n_vars, -np.inf)
        hi = np.full(self.n_vars, np.inf)
        for i in self.nonneg_vars:
            lo[i] = max(lo[i], 0.0)
        for i, lo_i, hi_i in self.box_vars:
            lo[i] = max(lo[i], lo_i)
            hi[i] = min(hi[i], hi_i)
        return lo, hi

    def cone_violation(self, x: np.ndarray) -> float:
        """Max violation of cone memberships at x (0 when all satisfied)."""
        worst = 0.0
        for cone in self.soc_cones:
            t, u = x[cone[0]], x[list(cone[1:])]
            worst = max(worst, float(np.linalg.norm(u) - t))
        for cone in self.rotated_cones:
            p, q, u = x[cone[0]], x[cone[1]], x[list(cone[2:])]
            worst = max(worst, -p, -q, float(u @ u - 2.0 * p * q))
        return max(worst, 0.0)

    def interval_violation(self, x: np.ndarray) -> float:
        lo, hi = self.interval_bounds()
        return float(max(np.max(np.maximum(lo - x, 0.0), initial=0.0),
                         np.max(np.maximum(x - hi, 0.0), initial=0.0)))

    def with_boxes(self, replacements: dict[int, tuple[float, float]]) -> "ConicProgram":
        """Copy of the program with the box bounds of selected variables replaced."""
        boxes = {i: (lo, hi) for i, lo, hi in self.box_vars}
        boxes.update(replacements)
        return ConicProgram(
            n_vars=self.n_vars,
            c=self.c,
            a_matrix=self.a_matrix,
            b=self.b,
            nonneg_vars=self.nonneg_vars,
            box_vars=tuple((i, lo, hi) for i, (lo, hi) in sorted(boxes.items())),
            soc_cones=self.soc_cones,
            rotated_cones=self.rotated_cones,
        )

    def to_text(self) -> str:
        """Structured dump for debugging and golden-file tests (not a stable interface)."""
        out = [f"vars {self.n_vars}", f"rows {self.n_rows}"]
        out.append("objective " + " ".join(f"{i}:{v!r}" for i, v in enumerate(self.c) if v != 0.0))
        coo = self.a_matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            out.append(f"eq {coo.row[k]} {coo.col[k]} {coo.data[k]!r}")
        for i, rhs in enumerate(self.b):
            out.append(f"rhs {i} {rhs!r}")
        out.append("nonneg " + " ".join(str(i) for i in sorted(self.nonneg_vars)))
        for i, lo, hi in self.box_vars:
            out.append(f"box {i} {lo!r} {hi!r}")
        for cone in self.soc_cones:
            out.append("soc " + " ".join(map(str, cone)))
        for cone in self.rotated_cones:
            out.append("rotated " + " ".join(map(str, cone)))
        return "\n".join(out) + "\n"


def _validate_program(p: ConicProgram) -> None:
    n = p.n_vars
    if p.c.shape != (n,):
        raise ValueError(f"objective length {p.c.shape} does not match n_vars {n}")
    if p.a_matrix.shape[1] != n:
        raise ValueError("equality matrix column count does not match n_vars")
    if p.b.shape != (p.a_matrix.shape[0],):
        raise ValueError("equality rhs length does not match row count")
    seen_boxes = set()
    for i, lo, hi in p.box_vars:
        if not 0 <= i < n:
            raise ValueError(f"box index {i} out of range")
        if lo > hi:
            raise ValueError(f"box for variable {i} is empty: [{lo}, {hi}]")
        if i in seen_boxes:
            raise ValueError(f"variable {i} has two boxes")
        seen_boxes.add(i)
    for i in p.nonneg_vars:
        if not 0 <= i < n:
            raise ValueError(f"nonneg index {i} out of range")
    interval_vars = seen_boxes | set(p.nonneg_vars)
    heads: set[int] = set()
    members: set[int] = set()
    for cone in p.soc_cones:
        if len(cone) < 1:
            raise ValueError("SOC cone needs at least the head variable")
        if cone[0] in heads:
            raise ValueError(f"variable {cone[0]} heads two cones")
        heads.add(cone[0])
        for i in cone:
            if not 0 <= i < n:
                raise ValueError(f"cone index {i} out of range")
            if i in members:
                raise ValueError(f"variable {i} appears in two cones")
            members.add(i)
    for cone in p.rotated_cones:
        if len(cone) < 2:
            raise ValueError("rotated cone needs p and q variables")
        for h in cone[:2]:
            if h in heads:
                raise ValueError(f"variable {h} heads two cones")
            heads.add(h)
        for i in cone:
            if not 0 <= i < n:
                raise ValueError(f"cone index {i} out of range")
            if i in members:
                raise ValueError(f"variable {i} appears in two cones")
            members.add(i)
    overlap = members & interval_vars
    if overlap:
        raise ValueError(
            f"cone member variables {sorted(overlap)} also carry interval constraints; "
            "add a linking row instead"
        )


class ProgramBuilder:
    """Incremental construction of a ConicProgram (also used to extend one)."""

    def __init__(self) -> None:
        self._n = 0
        self._obj: dict[int, float] = {}
        self._rows: list[dict[int, float]] = []
        self._rhs: list[float] = []
        self._nonneg: set[int] = set()
        self._boxes: dict[int, tuple[float, float]] = {}
        self._soc: list[tuple[int, ...]] = []
        self._rotated: list[tuple[int, ...]] = []

    @classmethod
    def from_program(cls, p: ConicProgram) -> "ProgramBuilder":
        builder = cls()
        builder._n = p.n_vars
        builder._obj = {i: v for i, v in enumerate(p.c) if v != 0.0}
        coo = p.a_matrix.tocoo()
        builder._rows = [dict() for _ in range(p.n_rows)]
        for r, col, v in zip(coo.row, coo.col, coo.data):
            builder._rows[r][int(col)] = builder._rows[r].get(int(col), 0.0) + float(v)
        builder._rhs = [float(v) for v in p.b]
        builder._nonneg = set(p.nonneg_vars)
        builder._boxes = {i: (lo, hi) for i, lo, hi in p.box_vars}
        builder._soc = list(p.soc_cones)
        builder._rotated = list(p.rotated_cones)
        return builder

    def add_var(self, *, nonneg: bool = False, box: tuple[float, float] | None = None,
                cost: float = 0.0) -> int:
        idx = self._n
        self._n += 1
        if nonneg:
            self._nonneg.add(idx)
        if box is not None:
            self._boxes[idx] = (float(box[0]), float(box[1]))
        if cost != 0.0:
            self._obj[idx] = cost
        return idx

    def add_cost(self, idx: int, coeff: float) -> None:
        self._obj[idx] = self._obj.get(idx, 0.0) + coeff

    def add_row(self, coeffs: dict[int, float], rhs: float) -> int:
        self._rows.append({int(k): float(v) for k, v in coeffs.items() if v != 0.0})
        self._rhs.append(float(rhs))
        return len(self._rows) - 1

    def set_rhs(self, row: int, rhs: float) -> None:
        self._rhs[row] = float(rhs)

    def set_box(self, idx: int, lo: float, hi: float) -> None:
        self._boxes[idx] = (float(lo), float(hi))

    def add_soc_cone(self, head: int, members: list[int]) -> None:
        self._soc.append((head, *members))

    def add_rotated_cone(self, p: int, q: int, members: list[int]) -> None:
        self._rotated.append((p, q, *members))

    def build(self) -> ConicProgram:
        c = np.zeros(self._n)
        for i, v in self._obj.items():
            c[i] = v
        rows, cols, vals = [], [], []
        for r, row in enumerate(self._rows):
            for i, v in row.items():
                rows.append(r)
                cols.append(i)
                vals.append(v)
        a = sp.csr_matrix((vals, (rows, cols)), shape=(len(self._rows), self._n))
        return ConicProgram(
            n_vars=self._n,
            c=c,
            a_matrix=a,
            b=np.array(self._rhs, dtype=float),
            nonneg_vars=frozenset(self._nonneg),
            box_vars=tuple((i, lo, hi) for i, (lo, hi) in sorted(self._boxes.items())),
            soc_cones=tuple(self._soc),
            rotated_cones=tuple(self._rotated),
        )
