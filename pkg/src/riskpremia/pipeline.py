"""One-stop estimation context shared by the testing modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kronecker import KpsDiagnostic, kps_residual_report
from .panels import FactorPanel, ReturnPanel
from .subset import StackedSystem, build_stacked
from .threestep import (
    AsymptoticCovariance,
    PriceOfRisk,
    ReturnRegression,
    WaldResult,
    asymptotic_covariance,
    second_stage,
    third_stage,
    wald_test,
)
from .varstage import RankError, VarEstimate, fit_var1


@dataclass(frozen=True)
class ModelFit:
    """Immutable bundle of every estimation output the tests consume.

    ``por`` is None when beta'beta is numerically singular (the unspanned
    factor pathology); the identification-robust tests remain available.
    """

    returns: ReturnPanel
    factors: FactorPanel
    var: VarEstimate
    reg: ReturnRegression
    stacked: StackedSystem
    kps_diag: KpsDiagnostic
    cov_mode: str                       # 'kps' or 'hc0'
    por: PriceOfRisk | None

    @property
    def n_assets(self) -> int:
        return self.returns.n_assets

    @property
    def n_factors(self) -> int:
        return self.var.n_factors

    @property
    def n_periods(self) -> int:
        return self.returns.n_periods

    def asymptotic_cov(self) -> AsymptoticCovariance:
        if self.por is None:
            raise RankError("price-of-risk estimates unavailable (singular beta'beta)")
        return asymptotic_covariance(self.factors, self.var, self.reg, self.por)

    def wald(self, h0_lambda1: np.ndarray, cov: AsymptoticCovariance | None = None) -> WaldResult:
        if self.por is None:
            raise RankError("price-of-risk estimates unavailable (singular beta'beta)")
        cov = cov if cov is not None else self.asymptotic_cov()
        return wald_test(self.por, cov, h0_lambda1, self.n_periods)


def fit_model(
    returns: ReturnPanel,
    factors: FactorPanel,
    variant: str = "II",
    cov: str = "auto",
    kps_threshold: float = 0.10,
    cond_cap: float = 1e12,
    score_cov: str = "model",
) -> ModelFit:
    """Run steps 1-3 plus the stacked system and pick the covariance mode.

    ``cov='auto'`` selects the Kronecker form when the factorization residual
    passes the threshold and the outer-product (HC0) form otherwise.
    """
    if cov not in ("auto", "kps", "hc0"):
        raise ValueError(f"unknown covariance mode {cov!r}")
    var = fit_var1(factors)
    reg = second_stage(returns, factors, var, variant=variant)
    stacked = build_stacked(returns, factors, var, score_cov=score_cov)
    diag = kps_residual_report(stacked.kps, threshold=kps_threshold)
    mode = cov if cov != "auto" else ("kps" if diag.passed else "hc0")
    try:
        por = third_stage(reg, var, cond_cap=cond_cap)
    except RankError:
        por = None
    return ModelFit(
        returns=returns,
        factors=factors,
        var=var,
        reg=reg,
        stacked=stacked,
        kps_diag=diag,
        cov_mode=mode,
        por=por,
    )
