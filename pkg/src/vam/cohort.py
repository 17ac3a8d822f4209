"""Load, validate, standardize and discretize student/school tables.

The analysis-ready unit is a :class:`Cohort`: a student table carrying a
standardized outcome and achievement bands, a school table carrying
non-malleable characteristics plus derived composition ventiles, and the
band cut points used (persisted so the same discretization can be reapplied
to another dataset).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import OutputError, ValidationError

log = logging.getLogger("vam.cohort")

# Band code for students with no early-achievement score.
EARLY_MISSING = 0

STUDENT_COLUMNS = [
    "student_id",
    "school_id",
    "attainment8",
    "ks2_score",
    "ks1_score",
    "age_months",
    "gender",
    "ethnicity",
    "eal",
    "sen",
    "fsm",
    "deprivation_decile",
]

SCHOOL_COLUMNS = [
    "school_id",
    "region",
    "school_type",
    "admissions",
    "age_range",
    "gender_mix",
    "religious_denom",
    "school_deprivation_decile",
]

# Student columns parsed as numbers (everything else stays categorical text).
_STUDENT_NUMERIC = {
    "attainment8": float,
    "ks2_score": float,
    "ks1_score": float,
    "age_months": int,
    "eal": int,
    "sen": int,
    "fsm": int,
    "deprivation_decile": int,
}


@dataclass(frozen=True)
class IngestConfig:
    n_prior_bands: int = 34
    n_early_bands: int = 20
    n_composition_ventiles: int = 20
    prior_cuts: tuple[float, ...] | None = None
    early_cuts: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_prior_bands < 2 or self.n_early_bands < 2:
            raise ValidationError("band counts must be at least 2")
        if self.n_composition_ventiles < 2:
            raise ValidationError("n_composition_ventiles must be at least 2")
        for name in ("prior_cuts", "early_cuts"):
            cuts = getattr(self, name)
            if cuts is not None:
                cuts = tuple(float(c) for c in cuts)
                if any(b <= a for a, b in zip(cuts, cuts[1:])):
                    raise ValidationError(f"{name} must be strictly increasing")
                object.__setattr__(self, name, cuts)

    @classmethod
    def from_toml(cls, path) -> "IngestConfig":
        """Read the [ingest] table of a TOML config file."""
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise OutputError(f"cannot read config file {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"malformed TOML in {path}: {exc}") from exc
        section = data.get("ingest", {})
        known = {
            "n_prior_bands",
            "n_early_bands",
            "n_composition_ventiles",
            "prior_cuts",
            "early_cuts",
        }
        unknown = set(section) - known
        if unknown:
            raise ValidationError(
                f"unknown [ingest] settings in {path}: {sorted(unknown)}"
            )
        kwargs = dict(section)
        for name in ("prior_cuts", "early_cuts"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)


@dataclass(frozen=True)
class Cohort:
    """Immutable analysis-ready cohort.

    ``students`` rows are sorted by (school_id, student_id); ``schools`` by
    school_id. Neither table is mutated after construction.
    """

    students: pd.DataFrame
    schools: pd.DataFrame
    band_cuts: dict = field(default_factory=dict)

    @property
    def n_students(self) -> int:
        return len(self.students)

    @property
    def n_schools(self) -> int:
        return len(self.schools)

    def school_codes(self) -> np.ndarray:
        """Integer school index per student row (aligned to schools order)."""
        cats = pd.Categorical(
            self.students["school_id"], categories=self.schools["school_id"]
        )
        return np.asarray(cats.codes)


def standardize_outcome(raw_scores) -> np.ndarray:
    """Affine-transform scores to mean 0 and sample SD 1."""
    x = np.asarray(raw_scores, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValidationError("standardize_outcome needs a vector of at least 2 scores")
    sd = x.std(ddof=1)
    if sd == 0.0 or not np.isfinite(sd):
        raise ValidationError("outcome has zero variance; cannot standardize")
    return (x - x.mean()) / sd


def quantile_cuts(scores, n_bands: int) -> tuple[float, ...]:
    """Derive cut points giving equal-frequency bands with ties collapsed.

    Scores equal to each other always share a band (the lower of the
    provisional quantile groups they straddle). Bands left empty by that
    collapse are removed, so the returned cuts describe consecutive
    non-empty bands; intervals are closed on the left. NaNs are ignored.
    """
    x = np.asarray(scores, dtype=float)
    x = x[~np.isnan(x)]
    if n_bands < 2:
        raise ValidationError("n_bands must be at least 2")
    if x.size == 0:
        raise ValidationError("cannot derive bands: every score is missing")
    distinct = np.unique(x)
    if distinct.size < n_bands:
        raise ValidationError(
            f"n_bands={n_bands} exceeds the {distinct.size} distinct scores"
        )
    order = np.sort(x)
    n = order.size
    provisional = (np.arange(n) * n_bands) // n  # 0-based group per sorted position
    # First sorted position of each distinct value decides its (shared) band.
    first_pos = np.searchsorted(order, distinct, side="left")
    value_band = provisional[first_pos]
    # Renumber so bands are consecutive, then cut at each band's minimum value.
    _, consecutive = np.unique(value_band, return_inverse=True)
    cuts = [
        float(distinct[consecutive == b].min())
        for b in range(1, consecutive.max() + 1)
    ]
    return tuple(cuts)


def discretize_achievement(scores, n_bands: int, cuts=None) -> np.ndarray:
    """Map scores to integer bands 1..k (monotone in score).

    With explicit ``cuts`` the intervals are closed-left: a score equal to a
    cut belongs to the band above it. Without cuts, equal-frequency quantile
    bands are derived via :func:`quantile_cuts`. NaN scores map to
    ``EARLY_MISSING`` (only early achievement may be missing).
    """
    x = np.asarray(scores, dtype=float)
    if cuts is None:
        cuts = quantile_cuts(x, n_bands)
    else:
        cuts = tuple(float(c) for c in cuts)
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ValidationError("explicit cuts must be strictly increasing")
    bands = np.zeros(x.shape, dtype=np.int64)
    observed = ~np.isnan(x)
    bands[observed] = np.searchsorted(np.asarray(cuts), x[observed], side="right") + 1
    return bands


def derive_composition(cohort: Cohort, n_ventiles: int = 20) -> Cohort:
    """Attach school mean-achievement ventiles to schools and students.

    Schools are ranked by the mean student band (prior, and early over
    observed scores) and split into ``n_ventiles`` rank groups whose sizes
    differ by at most one; ties in the mean are broken by school_id order.
    """
    if cohort.n_schools < n_ventiles:
        raise ValidationError(
            f"{cohort.n_schools} schools cannot fill {n_ventiles} ventiles; "
            "lower n_composition_ventiles in the config"
        )
    students = cohort.students
    schools = cohort.schools.copy()

    grouped = students.groupby("school_id", sort=True)
    mean_prior = grouped["prior_band"].mean()

    early = students["early_band"].where(students["early_band"] != EARLY_MISSING)
    mean_early = early.groupby(students["school_id"]).mean()
    if mean_early.isna().any():
        # Schools with no observed early scores sit at the cohort-wide mean.
        mean_early = mean_early.fillna(early.mean())

    schools["mean_prior_ventile"] = _rank_groups(
        mean_prior.reindex(schools["school_id"]).to_numpy(),
        schools["school_id"].to_numpy(),
        n_ventiles,
    )
    schools["mean_early_ventile"] = _rank_groups(
        mean_early.reindex(schools["school_id"]).to_numpy(),
        schools["school_id"].to_numpy(),
        n_ventiles,
    )

    students = students.drop(
        columns=["mean_prior_ventile", "mean_early_ventile"], errors="ignore"
    )
    students = students.merge(
        schools[["school_id", "mean_prior_ventile", "mean_early_ventile"]],
        on="school_id",
        how="left",
    )
    return Cohort(students=students, schools=schools, band_cuts=cohort.band_cuts)


def _rank_groups(values: np.ndarray, ids: np.ndarray, n_groups: int) -> np.ndarray:
    """Split items into n_groups rank groups (sizes differ by at most 1)."""
    order = np.lexsort((ids, values))
    n = values.size
    base, extra = divmod(n, n_groups)
    sizes = np.full(n_groups, base, dtype=np.int64)
    sizes[:extra] += 1
    groups = np.repeat(np.arange(1, n_groups + 1), sizes)
    out = np.empty(n, dtype=np.int64)
    out[order] = groups
    return out


def load_cohort(students_path, schools_path, config: IngestConfig | None = None) -> Cohort:
    """Read and validate the two CSVs, then derive the analysis columns.

    Only ks1_score may be empty (the student lands in the missing early
    band); an empty or malformed cell anywhere else is reported with its
    data row number (first data row = 1) and column name.
    """
    config = config or IngestConfig()
    students_raw = _read_csv(students_path, STUDENT_COLUMNS)
    schools_raw = _read_csv(schools_path, SCHOOL_COLUMNS)

    students = _parse_students(students_raw, students_path)
    schools = _parse_schools(schools_raw, schools_path)

    unknown = set(students["school_id"]) - set(schools["school_id"])
    if unknown:
        raise ValidationError(
            f"{students_path}: unknown school_id values {sorted(unknown)[:5]}"
        )
    cohort = build_cohort(students, schools, config)
    log.info(
        "loaded cohort: %d students in %d schools", cohort.n_students, cohort.n_schools
    )
    for col in ("gender", "ethnicity", "region", "school_type"):
        table = cohort.students if col in cohort.students else cohort.schools
        log.info("  %s levels: %s", col, sorted(table[col].unique()))
    return cohort


def build_cohort(students: pd.DataFrame, schools: pd.DataFrame, config: IngestConfig) -> Cohort:
    """Assemble a Cohort from already-parsed tables.

    Shared by CSV ingest and the synthetic generator so both derive
    outcome_std, bands and ventiles identically.
    """
    if schools["school_id"].duplicated().any():
        raise ValidationError("duplicate school_id in school table")
    if students["student_id"].duplicated().any():
        raise ValidationError("duplicate student_id in student table")
    if len(schools) < 2:
        raise ValidationError("need at least 2 schools")

    schools = schools.sort_values("school_id", kind="stable").reset_index(drop=True)
    students = students.sort_values(
        ["school_id", "student_id"], kind="stable"
    ).reset_index(drop=True)

    counts = students["school_id"].value_counts()
    empty = set(schools["school_id"]) - set(counts.index)
    if empty:
        raise ValidationError(f"schools with no students: {sorted(empty)[:5]}")
    schools["n_students"] = counts.reindex(schools["school_id"]).to_numpy(dtype=np.int64)

    students = students.copy()
    students["outcome_raw"] = students["attainment8"].astype(float)
    students["outcome_std"] = standardize_outcome(students["outcome_raw"].to_numpy())

    prior_cuts = config.prior_cuts or quantile_cuts(
        students["ks2_score"].to_numpy(), config.n_prior_bands
    )
    early_scores = students["ks1_score"].to_numpy(dtype=float)
    early_cuts = config.early_cuts or quantile_cuts(early_scores, config.n_early_bands)
    students["prior_band"] = discretize_achievement(
        students["ks2_score"].to_numpy(), config.n_prior_bands, prior_cuts
    )
    students["early_band"] = discretize_achievement(
        early_scores, config.n_early_bands, early_cuts
    )
    students["age"] = students["age_months"].astype(np.int64)

    for col in ("gender", "ethnicity"):
        students[col] = students[col].astype(str)
    for col in ("region", "school_type", "admissions", "age_range", "gender_mix", "religious_denom"):
        schools[col] = schools[col].astype(str)

    cohort = Cohort(
        students=students,
        schools=schools,
        band_cuts={"prior": tuple(prior_cuts), "early": tuple(early_cuts)},
    )
    return derive_composition(cohort, config.n_composition_ventiles)


def _read_csv(path, required_columns) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc
    except pd.errors.ParserError as exc:
        raise ValidationError(f"{path}: malformed CSV: {exc}") from exc
    missing = [c for c in required_columns if c not in frame.columns]
    if missing:
        raise ValidationError(f"{path}: missing required column(s) {missing}")
    return frame


def _parse_students(raw: pd.DataFrame, path) -> pd.DataFrame:
    out = pd.DataFrame()
    for col in ("student_id", "school_id", "gender", "ethnicity"):
        _require_filled(raw, col, path)
        out[col] = raw[col].str.strip()
    for col, kind in _STUDENT_NUMERIC.items():
        cells = raw[col].str.strip()
        blank = cells == ""
        if col != "ks1_score" and blank.any():
            row = int(np.flatnonzero(blank.to_numpy())[0]) + 1
            raise ValidationError(f"{path}: missing value at row {row}, column '{col}'")
        values = pd.to_numeric(cells.where(~blank), errors="coerce")
        bad = values.isna() & ~blank
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0]) + 1
            raise ValidationError(
                f"{path}: non-numeric value at row {row}, column '{col}'"
            )
        out[col] = values.astype(float) if kind is float else values.astype("Int64")
    for col in ("eal", "sen", "fsm"):
        values = out[col].astype(np.int64)
        if not values.isin([0, 1]).all():
            raise ValidationError(f"{path}: column '{col}' must be 0/1")
        out[col] = values
    deciles = out["deprivation_decile"].astype(np.int64)
    if not deciles.between(1, 10).all():
        raise ValidationError(f"{path}: deprivation_decile must be in 1..10")
    out["deprivation_decile"] = deciles
    out["age_months"] = out["age_months"].astype(np.int64)
    out["attainment8"] = out["attainment8"].astype(float)
    out["ks2_score"] = out["ks2_score"].astype(float)
    out["ks1_score"] = out["ks1_score"].astype(float)  # NaN where blank
    return out


def _parse_schools(raw: pd.DataFrame, path) -> pd.DataFrame:
    out = pd.DataFrame()
    for col in SCHOOL_COLUMNS:
        _require_filled(raw, col, path)
        out[col] = raw[col].str.strip()
    deciles = pd.to_numeric(out["school_deprivation_decile"], errors="coerce")
    if deciles.isna().any():
        row = int(np.flatnonzero(deciles.isna().to_numpy())[0]) + 1
        raise ValidationError(
            f"{path}: non-numeric value at row {row}, column 'school_deprivation_decile'"
        )
    deciles = deciles.astype(np.int64)
    if not deciles.between(1, 10).all():
        raise ValidationError(f"{path}: school_deprivation_decile must be in 1..10")
    out["school_deprivation_decile"] = deciles
    return out


def _require_filled(frame: pd.DataFrame, col: str, path) -> None:
    blank = frame[col].str.strip() == ""
    if blank.any():
        row = int(np.flatnonzero(blank.to_numpy())[0]) + 1
        raise ValidationError(f"{path}: missing value at row {row}, column '{col}'")
