"""Confidence sets by test inversion over parameter grids."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .moments import robust_tests
from .pipeline import ModelFit
from .subset import SubsetHypothesis, boundedness_diagnostic, sfar_column, sfar_row

VALID_TESTS = ("far", "klm", "jklm", "wald", "sfar")


@dataclass(frozen=True)
class GridAxis:
    lo: float
    hi: float
    steps: int

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("grid axes need at least 2 steps")
        if not self.lo < self.hi:
            raise ValueError("grid axis requires lo < hi")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.steps)


@dataclass(frozen=True)
class ParameterBinding:
    """Maps grid dimensions onto entries of the tested parameter.

    ``kind='full'`` targets vec(Lambda1) (column-major) for the full-vector
    tests; 'row'/'column' target the K-vector of a subset hypothesis.  ``base``
    holds values for the non-varying positions; ``vary`` lists the flat
    positions driven by the grid axes, in axis order.
    """

    kind: str
    base: np.ndarray
    vary: tuple[int, ...]
    index: int = 0

    def __post_init__(self):
        if self.kind not in ("full", "row", "column"):
            raise ValueError("binding kind must be 'full', 'row', or 'column'")
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float).reshape(-1))
        object.__setattr__(self, "vary", tuple(int(i) for i in self.vary))
        if any(i < 0 or i >= self.base.size for i in self.vary):
            raise ValueError("vary positions outside the parameter vector")
        if len(set(self.vary)) != len(self.vary):
            raise ValueError("duplicate vary positions")

    def assemble(self, point) -> np.ndarray:
        out = self.base.copy()
        out[list(self.vary)] = point
        return out


@dataclass(frozen=True)
class GridSpec:
    axes: tuple[GridAxis, ...]
    binding: ParameterBinding

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if not 1 <= len(self.axes) <= 3:
            raise ValueError("grids support 1 to 3 dimensions")
        if len(self.axes) != len(self.binding.vary):
            raise ValueError("grid dimensionality must match the bound positions")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.steps for a in self.axes)

    def points(self) -> np.ndarray:
        """All grid points in C order, shape (prod(steps), dims)."""
        values = [a.values for a in self.axes]
        return np.array(list(product(*values)))


def full_lambda_binding(k: int, base=None, vary=None) -> ParameterBinding:
    base = np.zeros(k * k) if base is None else np.asarray(base, dtype=float).reshape(-1)
    vary = tuple(range(k * k)) if vary is None else tuple(vary)
    return ParameterBinding(kind="full", base=base, vary=vary)


def row_binding(k: int, index: int = 0, base=None, vary=None) -> ParameterBinding:
    base = np.zeros(k) if base is None else np.asarray(base, dtype=float).reshape(-1)
    vary = tuple(range(k)) if vary is None else tuple(vary)
    return ParameterBinding(kind="row", base=base, vary=vary, index=index)


@dataclass(frozen=True)
class PvalueSurface:
    grid: GridSpec
    test: str
    pvalues: np.ndarray            # shape == grid.shape, NaN for failed points
    failures: tuple = ()

    def at(self, flat_index: int) -> float:
        return float(self.pvalues.reshape(-1)[flat_index])


@dataclass(frozen=True)
class ConfidenceSet:
    level: float
    test: str
    grid: GridSpec
    pvalues: np.ndarray
    accepted: np.ndarray           # (n_accepted, dims) parameter points
    accepted_mask: np.ndarray      # shape == grid.shape
    bounded: str                   # 'bounded' | 'unbounded' | 'empty'

    @property
    def is_empty(self) -> bool:
        return self.accepted.shape[0] == 0


def _point_evaluator(test: str, fit: ModelFit, binding: ParameterBinding, mode=None):
    k = fit.n_factors
    if test in ("far", "klm", "jklm"):
        if binding.kind != "full":
            raise ValueError(f"{test} requires a 'full' binding over vec(Lambda1)")

        def ev(params):
            lam = params.reshape(k, k, order="F")
            return robust_tests(fit, lam, mode=mode, which=(test,))[test].pvalue

    elif test == "wald":
        if binding.kind != "full":
            raise ValueError("wald requires a 'full' binding over vec(Lambda1)")
        cov = fit.asymptotic_cov()

        def ev(params):
            return fit.wald(params.reshape(k, k, order="F"), cov=cov).pvalue

    elif test == "sfar":
        if binding.kind == "full":
            raise ValueError("sfar requires a 'row' or 'column' binding")

        def ev(params):
            h = SubsetHypothesis(binding.kind, binding.index, params)
            if binding.kind == "row":
                return sfar_row(h, fit.stacked).pvalue_upper
            return sfar_column(h, fit.stacked).pvalue_upper

    else:
        raise ValueError(f"unknown test {test!r}; expected one of {VALID_TESTS}")
    return ev


def pvalue_curve(
    test: str,
    grid: GridSpec,
    fit: ModelFit,
    mode: str | None = None,
    threads: int = 1,
) -> PvalueSurface:
    """P-value at every grid point; failed points carry NaN and are recorded."""
    ev = _point_evaluator(test, fit, grid.binding, mode)
    pts = grid.points()
    failures = []

    def run_one(i):
        try:
            return ev(grid.binding.assemble(pts[i]))
        except Exception as exc:  # per-point failures must not kill the scan
            failures.append((i, repr(exc)))
            return np.nan

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vals = list(pool.map(run_one, range(len(pts))))
    else:
        vals = [run_one(i) for i in range(len(pts))]
    return PvalueSurface(
        grid=grid,
        test=test,
        pvalues=np.asarray(vals).reshape(grid.shape),
        failures=tuple(failures),
    )


def _touches_boundary(mask: np.ndarray) -> bool:
    if not mask.any():
        return False
    for axis in range(mask.ndim):
        first = np.take(mask, 0, axis=axis)
        last = np.take(mask, -1, axis=axis)
        if first.any() or last.any():
            return True
    return False


def joint_confidence_set(
    test: str,
    grid: GridSpec,
    level: float,
    fit: ModelFit,
    mode: str | None = None,
    threads: int = 1,
    n_directions: int = 64,
    seed: int = 0,
) -> ConfidenceSet:
    """Invert the chosen test over the grid at the given confidence level.

    Sets touching the grid boundary cannot be classified by the finite grid;
    for the subset statistic the distant-value scan decides boundedness, for
    the other tests a boundary-touching set is reported unbounded.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    surface = pvalue_curve(test, grid, fit, mode=mode, threads=threads)
    alpha = 1.0 - level
    with np.errstate(invalid="ignore"):
        mask = surface.pvalues >= alpha
    pts = grid.points()
    accepted = pts[mask.reshape(-1)]
    if accepted.shape[0] == 0:
        bounded = "empty"
    elif not _touches_boundary(mask):
        bounded = "bounded"
    elif test == "sfar":
        rep = boundedness_diagnostic(
            fit.stacked,
            alpha=alpha,
            n_directions=n_directions,
            index=grid.binding.index,
            seed=seed,
        )
        bounded = "bounded" if rep.bounded_all else "unbounded"
    else:
        bounded = "unbounded"
    return ConfidenceSet(
        level=level,
        test=test,
        grid=grid,
        pvalues=surface.pvalues,
        accepted=accepted,
        accepted_mask=mask,
        bounded=bounded,
    )


def project_cs(cs: ConfidenceSet, axis: int) -> list[tuple[float, float]]:
    """Union of axis intervals covering the projection of the accepted points."""
    if axis < 0 or axis >= len(cs.grid.axes):
        raise ValueError("axis out of range")
    if cs.is_empty:
        return []
    covered = np.any(
        cs.accepted_mask, axis=tuple(i for i in range(cs.accepted_mask.ndim) if i != axis)
    )
    values = cs.grid.axes[axis].values
    intervals = []
    start = None
    for i, hit in enumerate(covered):
        if hit and start is None:
            start = i
        elif not hit and start is not None:
            intervals.append((float(values[start]), float(values[i - 1])))
            start = None
    if start is not None:
        intervals.append((float(values[start]), float(values[-1])))
    return intervals
