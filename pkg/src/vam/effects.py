"""School effects: mean residuals, intervals, size bands, shrinkage.

A school's effect is the mean of its students' residuals. Intervals use the
model's overall residual SD (the convention of published school measures);
size categories follow the 0.1 / 0.2 / 0.45 absolute bands with intervals
overlapping zero forced into the lowest category.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .design import ModelSpec
from .errors import EstimationError, ValidationError

log = logging.getLogger("vam.effects")

Z_95 = 1.96

NONE_OR_VERY_SMALL = "none_or_very_small"
SMALL = "small"
MODERATE = "moderate"
LARGE = "large"
CATEGORIES = (NONE_OR_VERY_SMALL, SMALL, MODERATE, LARGE)


@dataclass
class EffectTable:
    """Per-school effects for one fitted model.

    ``effects`` columns: school_id, n, effect and, once derived, ci_low,
    ci_high, significant, category, shrunk_effect.
    """

    spec: ModelSpec | None
    effects: pd.DataFrame
    between_school_variance: float | None = None
    between_school_variance_unweighted: float | None = None
    pct_of_residual_variance_due_to_schools: float | None = None
    pct_significant: float | None = None
    category_shares: dict = field(default_factory=dict)
    sigma2_u: float | None = None
    sigma2_e: float | None = None

    @property
    def label(self) -> str:
        return self.spec.label if self.spec is not None else "model"

    @property
    def n_schools(self) -> int:
        return len(self.effects)

    def aligned_effects(self, column: str = "effect") -> pd.Series:
        return self.effects.set_index("school_id")[column]


def compute_school_effects(residuals, school_ids, spec: ModelSpec | None = None) -> EffectTable:
    """Mean residual per school, one row per school, sorted by school_id."""
    r = np.asarray(residuals, dtype=float)
    ids = np.asarray(school_ids)
    if r.shape != ids.shape:
        raise ValidationError("residuals and school ids differ in length")
    if r.size == 0:
        raise ValidationError("no residuals supplied")
    grouped = pd.Series(r).groupby(pd.Series(ids), sort=True)
    frame = grouped.agg(["count", "mean"]).reset_index()
    frame.columns = ["school_id", "n", "effect"]
    if (frame["n"] == 0).any():
        raise ValidationError("school with no students")
    frame["n"] = frame["n"].astype(np.int64)
    return EffectTable(spec=spec, effects=frame)


def confidence_intervals(table: EffectTable, residual_sd: float) -> EffectTable:
    """Attach 95% intervals: effect +/- 1.96 * residual_sd / sqrt(n)."""
    if residual_sd <= 0:
        raise ValidationError("residual_sd must be positive")
    frame = table.effects
    half = Z_95 * residual_sd / np.sqrt(frame["n"].to_numpy(dtype=float))
    frame = frame.assign(
        ci_low=frame["effect"].to_numpy() - half,
        ci_high=frame["effect"].to_numpy() + half,
    )
    frame["significant"] = (frame["ci_low"] > 0) | (frame["ci_high"] < 0)
    frame["category"] = classify_effects(
        frame["effect"].to_numpy(), frame["ci_low"].to_numpy(), frame["ci_high"].to_numpy()
    )
    table.effects = frame
    table.category_shares = _category_shares(frame)
    return table


def classify_effect(effect: float, ci: tuple[float, float]) -> str:
    """Size category of one effect, with the interval-overlap override."""
    ci_low, ci_high = ci
    if ci_low > ci_high:
        raise ValidationError("invalid interval")
    return classify_effects(
        np.array([effect]), np.array([ci_low]), np.array([ci_high])
    )[0]


def classify_effects(effect, ci_low, ci_high) -> np.ndarray:
    significant = (np.asarray(ci_low) > 0) | (np.asarray(ci_high) < 0)
    size = np.abs(np.asarray(effect, dtype=float))
    out = np.full(size.shape, NONE_OR_VERY_SMALL, dtype=object)
    out[significant & (size >= 0.1)] = SMALL
    out[significant & (size >= 0.2)] = MODERATE
    out[significant & (size >= 0.45)] = LARGE
    return out


def variance_decomposition(table: EffectTable, residuals) -> dict:
    """Between-school share of residual variance plus significance share.

    The between component weights each school by its student count with the
    same n-1 denominator as the residual variance, so between plus the mean
    within-school component reproduces the total exactly.
    """
    r = np.asarray(residuals, dtype=float)
    frame = table.effects
    n = r.size
    counts = frame["n"].to_numpy(dtype=float)
    if int(counts.sum()) != n:
        raise ValidationError("effects table does not match the residual vector")
    effects = frame["effect"].to_numpy(dtype=float)
    grand = r.mean()
    between = float(counts @ (effects - grand) ** 2 / (n - 1))
    resid_var = float(r.var(ddof=1))
    if resid_var == 0.0:
        raise EstimationError("residuals have zero variance")
    table.between_school_variance = between
    table.between_school_variance_unweighted = float(np.var(effects, ddof=1))
    table.pct_of_residual_variance_due_to_schools = 100.0 * between / resid_var
    if "significant" in frame.columns:
        table.pct_significant = float(100.0 * frame["significant"].mean())
    return {
        "between_school_variance": table.between_school_variance,
        "pct_of_residual_variance_due_to_schools": table.pct_of_residual_variance_due_to_schools,
        "pct_significant": table.pct_significant,
    }


def estimate_variance_components(residuals, school_ids) -> dict:
    """Between/within variance components by one-way ANOVA moments.

    The between component is clamped at zero when the between mean square
    falls under the within mean square.
    """
    r = np.asarray(residuals, dtype=float)
    ids = pd.Series(np.asarray(school_ids))
    grouped = pd.Series(r).groupby(ids, sort=True)
    counts = grouped.count().to_numpy(dtype=float)
    means = grouped.mean().to_numpy(dtype=float)
    n = r.size
    n_groups = counts.size
    if n_groups < 2:
        raise EstimationError("variance components need at least 2 schools")
    if n <= n_groups:
        raise EstimationError("no within-school replication")
    grand = r.mean()
    ssb = float(counts @ (means - grand) ** 2)
    ssw = float((r**2).sum() - counts @ means**2)
    if ssw <= 0.0:
        raise EstimationError("within-school residuals are constant")
    msw = ssw / (n - n_groups)
    msb = ssb / (n_groups - 1)
    n_tilde = (n - float(counts @ counts) / n) / (n_groups - 1)
    sigma2_u = max((msb - msw) / n_tilde, 0.0)
    return {"sigma2_u": sigma2_u, "sigma2_e": msw}


def shrink_effects(table: EffectTable, sigma2_u: float, sigma2_e: float) -> EffectTable:
    """Scale each effect by lambda_j = s2u / (s2u + s2e / n_j)."""
    if sigma2_u < 0 or sigma2_e <= 0:
        raise ValidationError("need sigma2_u >= 0 and sigma2_e > 0")
    frame = table.effects
    lam = sigma2_u / (sigma2_u + sigma2_e / frame["n"].to_numpy(dtype=float))
    table.effects = frame.assign(shrunk_effect=lam * frame["effect"].to_numpy())
    table.sigma2_u = sigma2_u
    table.sigma2_e = sigma2_e
    return table


def build_effect_table(fit, school_ids, shrink: bool = True) -> EffectTable:
    """Full per-school table for one fit: effects, intervals, categories,
    decomposition and (by default) shrunk effects."""
    table = compute_school_effects(fit.residuals, school_ids, spec=fit.spec)
    confidence_intervals(table, fit.residual_sd)
    variance_decomposition(table, fit.residuals)
    if shrink:
        components = estimate_variance_components(fit.residuals, school_ids)
        shrink_effects(table, components["sigma2_u"], components["sigma2_e"])
    return table


def _category_shares(frame: pd.DataFrame) -> dict:
    shares = {cat: 0.0 for cat in CATEGORIES}
    counts = frame["category"].value_counts()
    total = len(frame)
    for cat, cnt in counts.items():
        shares[cat] = 100.0 * cnt / total
    return shares
