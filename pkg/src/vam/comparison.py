"""Agreement between sets of school effects across model variants.

Correlations are unweighted across schools. Spearman is defined as the
Pearson correlation of average-rank transforms, so the two stay exactly
consistent by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .design import ModelFamily, PriorTreatment, canonical_specs
from .effects import LARGE, MODERATE, EffectTable
from .errors import ValidationError


def pearson(a, b) -> float:
    """Sample Pearson correlation."""
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("correlation inputs must be equal-length vectors")
    if x.size < 3:
        raise ValidationError("correlation needs at least 3 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(xc @ xc)
    sy = float(yc @ yc)
    if sx == 0.0 or sy == 0.0:
        raise ValidationError("correlation input has zero variance")
    return float(xc @ yc / np.sqrt(sx * sy))


def average_ranks(values) -> np.ndarray:
    """Ranks 1..n with ties given the mean of their rank positions."""
    return rankdata(np.asarray(values, dtype=float), method="average")


def spearman(a, b) -> float:
    """Pearson correlation of the average-rank transforms."""
    return pearson(average_ranks(a), average_ranks(b))


def correlation_matrix(tables: list[EffectTable]) -> tuple[list[str], np.ndarray]:
    """Dual-triangle matrix: Pearson below the diagonal, Spearman above."""
    if len(tables) < 2:
        raise ValidationError("need at least 2 effect tables")
    aligned = _align(tables)
    m = len(tables)
    out = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            out[j, i] = pearson(aligned[:, i], aligned[:, j])
            out[i, j] = spearman(aligned[:, i], aligned[:, j])
    return [t.label for t in tables], out


def moderate_or_large_share(table: EffectTable) -> float:
    """Percent of schools with significant effects of at least 0.2 SD."""
    if "category" not in table.effects.columns:
        raise ValidationError("effect table has no categories yet")
    cats = table.effects["category"]
    return float(100.0 * cats.isin([MODERATE, LARGE]).mean())


def scatter_export(a: EffectTable, b: EffectTable, schools: pd.DataFrame | None = None) -> pd.DataFrame:
    """Paired per-school rows for an agreement scatter of two models.

    Ranks use average-rank ties. When the school table is supplied, rows
    carry school_type and a flag for the top mean-prior-achievement ventile
    so selective-intake subgroups can be highlighted.
    """
    pair = _align([a, b])
    ids = a.effects["school_id"].to_numpy()
    frame = pd.DataFrame(
        {
            "school_id": ids,
            "effect_a": pair[:, 0],
            "effect_b": pair[:, 1],
            "rank_a": average_ranks(pair[:, 0]),
            "rank_b": average_ranks(pair[:, 1]),
        }
    )
    if schools is not None:
        keyed = schools.set_index("school_id")
        frame["school_type"] = keyed["school_type"].reindex(ids).to_numpy()
        top = keyed["mean_prior_ventile"].max()
        frame["top_prior_ventile"] = (
            keyed["mean_prior_ventile"].reindex(ids).to_numpy() == top
        )
    return frame


@dataclass
class ComparisonReport:
    model_labels: list[str]
    pearson_matrix: np.ndarray
    spearman_matrix: np.ndarray
    category_share_table: dict  # label -> {category: pct}
    moderate_or_large_line: dict  # treatment -> [pct per family]
    correlation_to_original_line: dict  # treatment -> [corr per family]
    scatter_exports: dict = field(default_factory=dict)  # "famA_vs_famB" -> frame
    families: list[str] = field(default_factory=list)
    n_schools: int = 0

    def to_dict(self) -> dict:
        # scatter frames ship as separate CSVs; the report lists the pairs
        return {
            "models": self.model_labels,
            "families": self.families,
            "n_schools": self.n_schools,
            "pearson_matrix": self.pearson_matrix.tolist(),
            "spearman_matrix": self.spearman_matrix.tolist(),
            "category_shares": self.category_share_table,
            "moderate_or_large": self.moderate_or_large_line,
            "correlation_to_original": self.correlation_to_original_line,
            "scatter_pairs": sorted(self.scatter_exports),
        }


def variant_analysis(tables: dict[tuple[str, str], EffectTable]) -> dict:
    """Summary lines over the family-by-treatment grid.

    For each treatment: the share of moderate-or-large schools per family,
    and the Pearson correlation of each family's effects against the same
    family with prior achievement included. Raw rows correlate 1 with
    themselves by construction.
    """
    families = [f.value for f in ModelFamily]
    treatments = [t.value for t in PriorTreatment]
    missing = [
        (spec.family.value, spec.prior_treatment.value)
        for spec in canonical_specs()
        if (spec.family.value, spec.prior_treatment.value) not in tables
    ]
    if missing:
        raise ValidationError(f"variant grid is missing cells: {missing[:4]}")
    share_line: dict[str, list[float]] = {}
    corr_line: dict[str, list[float]] = {}
    for treatment in treatments:
        shares, corrs = [], []
        for family in families:
            table = tables[(family, treatment)]
            original = tables[(family, PriorTreatment.INCLUDED.value)]
            shares.append(moderate_or_large_share(table))
            aligned = _align([table, original])
            corrs.append(pearson(aligned[:, 0], aligned[:, 1]))
        share_line[treatment] = shares
        corr_line[treatment] = corrs
    return {"moderate_or_large_line": share_line, "correlation_to_original_line": corr_line}


def build_report(
    tables: dict[tuple[str, str], EffectTable], schools: pd.DataFrame | None = None
) -> ComparisonReport:
    """Full comparison over the grid: the five included-prior models side by
    side, the treatment summary lines, and (when the school table is given)
    per-adjacent-pair scatter exports with subgroup flags."""
    families = list(ModelFamily)
    originals = [
        tables[(family.value, PriorTreatment.INCLUDED.value)] for family in families
    ]
    labels, matrix = correlation_matrix(originals)
    lines = variant_analysis(tables)
    shares = {t.label: dict(t.category_shares) for t in originals}
    pearson_m = np.tril(matrix, -1) + np.tril(matrix, -1).T + np.eye(len(labels))
    spearman_m = np.triu(matrix, 1) + np.triu(matrix, 1).T + np.eye(len(labels))
    scatters = {}
    if schools is not None:
        for fam_a, fam_b in zip(families, families[1:]):
            key = f"{fam_a.value.replace('-', '_')}_vs_{fam_b.value.replace('-', '_')}"
            table_a = tables[(fam_a.value, PriorTreatment.INCLUDED.value)]
            table_b = tables[(fam_b.value, PriorTreatment.INCLUDED.value)]
            scatters[key] = scatter_export(table_a, table_b, schools)
    return ComparisonReport(
        model_labels=labels,
        pearson_matrix=pearson_m,
        spearman_matrix=spearman_m,
        category_share_table=shares,
        moderate_or_large_line=lines["moderate_or_large_line"],
        correlation_to_original_line=lines["correlation_to_original_line"],
        scatter_exports=scatters,
        families=[f.value for f in ModelFamily],
        n_schools=originals[0].n_schools,
    )


def _align(tables: list[EffectTable]) -> np.ndarray:
    """Effects column-stacked over the common school_id ordering."""
    base = tables[0].effects["school_id"]
    ids = set(base)
    for t in tables[1:]:
        if set(t.effects["school_id"]) != ids:
            raise ValidationError("effect tables cover different school sets")
    order = np.sort(base.to_numpy())
    cols = [t.aligned_effects().reindex(order).to_numpy(dtype=float) for t in tables]
    return np.column_stack(cols)
