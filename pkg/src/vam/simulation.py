"""Synthetic cohorts with known ground truth, plus test oracles.

Students cluster within schools through shared intake latents (the sorting
strength is the intraclass correlation of those latents), and true school
effects can be tilted toward high-intake schools (selection strength is the
correlation between the true effect and the school's mean prior latent).
The outcome depends on achievement only through the discretized bands, so
the dummy designs downstream are exactly correctly specified.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .cohort import EARLY_MISSING, Cohort, IngestConfig, build_cohort, discretize_achievement, quantile_cuts
from .design import split_term
from .effects import build_effect_table
from .errors import EstimationError, OutputError, ValidationError

log = logging.getLogger("vam.simulation")

DEFAULT_COEFFICIENTS = {
    "prior": 1.0,
    "early": 0.0,
    "age": -0.010,
    "gender": 0.12,
    "ethnicity": 0.30,
    "eal": 0.12,
    "sen": -0.35,
    "fsm": -0.22,
    "deprivation": 0.35,
}

_ETHNICITY_LEVELS = [
    "white_british",
    "asian_indian",
    "asian_pakistani",
    "black_african",
    "black_caribbean",
    "mixed",
    "other",
]
# Relative attainment pattern per ethnicity level, scaled by the block coefficient.
_ETHNICITY_PATTERN = np.array([0.0, 0.55, 0.10, 0.35, 0.05, 0.20, 0.30])
# School-composition tilt per level (positive levels concentrate in
# higher-intake schools).
_ETHNICITY_TILT = np.array([0.15, 0.6, -0.5, -0.3, -0.4, 0.1, 0.2])
_ETHNICITY_BASE_LOGITS = np.array([1.9, -0.6, -0.7, -0.9, -1.2, -0.8, -1.0])

_REGIONS = [
    "east",
    "east_midlands",
    "london",
    "north_east",
    "north_west",
    "south_east",
    "south_west",
    "west_midlands",
    "yorkshire",
]
_REGION_PROBS = [0.11, 0.09, 0.16, 0.05, 0.13, 0.16, 0.10, 0.11, 0.09]


@dataclass(frozen=True)
class SimConfig:
    n_schools: int = 200
    students_min: int = 80
    students_max: int = 220
    sigma2_u_true: float = 0.03
    sigma2_e_true: float = 1.0
    sorting_strength: float = 0.5
    selection_strength: float = 0.0
    coefficients: dict = field(default_factory=lambda: dict(DEFAULT_COEFFICIENTS))
    early_missing_rate: float = 0.0424
    prior_early_corr: float = 0.7
    n_prior_bands: int = 34
    n_early_bands: int = 20
    grammar_share: float = 0.05
    seed: int = 42

    def __post_init__(self):
        if self.n_schools < 20:
            raise ValidationError("n_schools must be at least 20 (ventile grouping)")
        if not (1 <= self.students_min <= self.students_max):
            raise ValidationError("students_min/max must satisfy 1 <= min <= max")
        if self.sigma2_u_true < 0 or self.sigma2_e_true < 0:
            raise ValidationError("variances must be non-negative")
        for name in ("sorting_strength", "selection_strength"):
            value = getattr(self, name)
            if not (0.0 <= value < 1.0):
                raise ValidationError(f"{name} must lie in [0, 1)")
        if not (0.0 <= self.early_missing_rate < 1.0):
            raise ValidationError("early_missing_rate must lie in [0, 1)")
        if not (0.0 <= self.prior_early_corr < 1.0):
            raise ValidationError("prior_early_corr must lie in [0, 1)")
        merged = dict(DEFAULT_COEFFICIENTS)
        merged.update(self.coefficients)
        unknown = set(merged) - set(DEFAULT_COEFFICIENTS)
        if unknown:
            raise ValidationError(f"unknown coefficient blocks: {sorted(unknown)}")
        object.__setattr__(self, "coefficients", merged)

    @classmethod
    def from_toml(cls, path) -> "SimConfig":
        """Read the [simulate] table of a TOML config file."""
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise OutputError(f"cannot read config file {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"malformed TOML in {path}: {exc}") from exc
        section = dict(data.get("simulate", {}))
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(section) - known
        if unknown:
            raise ValidationError(
                f"unknown [simulate] settings in {path}: {sorted(unknown)}"
            )
        return cls(**section)


@dataclass
class GroundTruth:
    """Generator-side quantities on the standardized-outcome scale."""

    school_effects: pd.DataFrame  # school_id, true_effect
    level_effects: dict  # term -> {level label: absolute effect}
    numeric_slopes: dict  # term -> slope
    sigma2_u: float
    sigma2_e: float
    outcome_scale: float  # raw-total SD divided out by standardization


def calibrated_config(seed: int = 42, n_schools: int = 500, students_min: int = 100, students_max: int = 200) -> SimConfig:
    """Defaults calibrated so the unadjusted between-school share of outcome
    variance lands near 22.6%, a realistic magnitude for a national
    secondary cohort."""
    return SimConfig(
        n_schools=n_schools,
        students_min=students_min,
        students_max=students_max,
        sigma2_u_true=0.025,
        sigma2_e_true=1.2,
        sorting_strength=0.40,
        selection_strength=0.35,
        seed=seed,
    )


def recovery_config(seed: int = 42, n_schools: int = 500) -> SimConfig:
    """Correctly-specified setting: covariates carry no association with the
    true school effects, so coefficient recovery is unbiased. The school
    signal is strong enough that per-school effect estimates are
    informative at typical school sizes."""
    return replace(
        calibrated_config(seed=seed, n_schools=n_schools),
        selection_strength=0.0,
        sigma2_u_true=0.08,
    )


def generate_cohort(config: SimConfig) -> tuple[Cohort, GroundTruth]:
    """Draw a cohort fully determined by the seed."""
    rng = np.random.default_rng(config.seed)
    n_schools = config.n_schools
    sizes = rng.integers(config.students_min, config.students_max + 1, n_schools)
    n = int(sizes.sum())
    school_index = np.repeat(np.arange(n_schools), sizes)

    school_ids = np.array([f"S{i + 1:05d}" for i in range(n_schools)])
    student_ids = np.array([f"P{i + 1:07d}" for i in range(n)])

    s = config.sorting_strength
    u_ach = rng.normal(size=n_schools)  # achievement intake latent
    u_soc = rng.normal(size=n_schools)  # extra sociodemographic intake latent
    tilt = np.sqrt(s) * (0.6 * u_ach + 0.8 * u_soc)

    prior_latent = np.sqrt(s) * u_ach[school_index] + np.sqrt(1.0 - s) * rng.normal(size=n)
    rho = config.prior_early_corr
    early_latent = rho * prior_latent + np.sqrt(1.0 - rho**2) * rng.normal(size=n)
    early_missing = rng.random(n) < config.early_missing_rate
    ks1_score = np.where(early_missing, np.nan, early_latent)

    # Sociodemographics, school-clustered through the tilt.
    mix_code = rng.choice(3, size=n_schools, p=[0.90, 0.05, 0.05])  # mixed/boys/girls
    gender_draw = rng.random(n) < 0.5
    gender = np.where(
        mix_code[school_index] == 1,
        "M",
        np.where(mix_code[school_index] == 2, "F", np.where(gender_draw, "F", "M")),
    )
    logits = _ETHNICITY_BASE_LOGITS[None, :] + np.outer(tilt, _ETHNICITY_TILT)
    school_eth_probs = np.exp(logits)
    school_eth_probs /= school_eth_probs.sum(axis=1, keepdims=True)
    cum = np.cumsum(school_eth_probs, axis=1)[school_index]
    eth_codes = (rng.random(n)[:, None] > cum).sum(axis=1)
    ethnicity = np.array(_ETHNICITY_LEVELS, dtype=object)[eth_codes]

    eal = (rng.random(n) < _sigmoid(-1.6 + 0.9 * tilt)[school_index]).astype(np.int64)
    sen = (rng.random(n) < _sigmoid(-1.9 - 0.5 * tilt)[school_index]).astype(np.int64)
    fsm = (rng.random(n) < _sigmoid(-1.4 - 0.9 * tilt)[school_index]).astype(np.int64)
    depr_latent = 0.9 * tilt[school_index] + 0.8 * rng.normal(size=n)
    deprivation = _rank_bins(depr_latent, 10)  # 10 = least deprived
    age_months = rng.integers(180, 192, size=n)

    schools = _draw_school_table(rng, config, school_ids, u_ach, tilt, mix_code)

    # True school effects, correlated with mean prior intake via selection.
    sel = config.selection_strength
    shock = rng.normal(size=n_schools)
    v_base = sel * _standardize_pop(u_ach) + np.sqrt(1.0 - sel**2) * shock
    v = np.sqrt(config.sigma2_u_true) * v_base
    noise = rng.normal(size=n) * np.sqrt(config.sigma2_e_true)

    coef = config.coefficients
    prior_band = discretize_achievement(
        prior_latent, config.n_prior_bands, quantile_cuts(prior_latent, config.n_prior_bands)
    )
    early_band = discretize_achievement(
        ks1_score, config.n_early_bands, quantile_cuts(ks1_score, config.n_early_bands)
    )
    prior_effects = _band_curve(int(prior_band.max()), 3.0, 1.6) * coef["prior"]
    early_curve = _band_curve(int(max(early_band.max(), 1)), 1.5, 1.3) * coef["early"]
    observed_early = early_band != EARLY_MISSING
    early_effect_obs = np.zeros(n)
    early_effect_obs[observed_early] = early_curve[early_band[observed_early] - 1]
    # Students without an early score sit at the observed mean so that
    # missingness itself carries no signal.
    early_mean = float(early_effect_obs[observed_early].mean()) if observed_early.any() else 0.0
    early_effect = np.where(observed_early, early_effect_obs, early_mean)

    eth_effects = _ETHNICITY_PATTERN * coef["ethnicity"]
    depr_effects = coef["deprivation"] * (np.arange(1, 11) - 1) / 9.0
    index = (
        prior_effects[prior_band - 1]
        + early_effect
        + np.where(gender == "F", coef["gender"], 0.0)
        + eth_effects[eth_codes]
        + coef["eal"] * eal
        + coef["sen"] * sen
        + coef["fsm"] * fsm
        + depr_effects[deprivation - 1]
        + coef["age"] * (age_months - 186)
    )
    total = index + v[school_index] + noise
    scale = float(np.std(total, ddof=1))
    attainment8 = 50.0 + 12.0 * total

    students = pd.DataFrame(
        {
            "student_id": student_ids,
            "school_id": school_ids[school_index],
            "attainment8": attainment8,
            "ks2_score": prior_latent,
            "ks1_score": ks1_score,
            "age_months": age_months,
            "gender": gender,
            "ethnicity": ethnicity,
            "eal": eal,
            "sen": sen,
            "fsm": fsm,
            "deprivation_decile": deprivation,
        }
    )
    ingest = IngestConfig(
        n_prior_bands=config.n_prior_bands, n_early_bands=config.n_early_bands
    )
    cohort = build_cohort(students, schools, ingest)

    truth = GroundTruth(
        school_effects=pd.DataFrame(
            {"school_id": school_ids, "true_effect": v / scale}
        ),
        level_effects={
            "ks2_band": {
                str(b): prior_effects[b - 1] / scale
                for b in range(1, prior_effects.size + 1)
            },
            "ks1_band": {
                **{
                    str(b): early_curve[b - 1] / scale
                    for b in range(1, early_curve.size + 1)
                },
                "missing": early_mean / scale,
            },
            "gender": {"F": coef["gender"] / scale, "M": 0.0},
            "ethnicity": {
                level: eth_effects[i] / scale
                for i, level in enumerate(_ETHNICITY_LEVELS)
            },
            "eal": {"0": 0.0, "1": coef["eal"] / scale},
            "sen": {"0": 0.0, "1": coef["sen"] / scale},
            "fsm": {"0": 0.0, "1": coef["fsm"] / scale},
            "deprivation_decile": {
                str(d): depr_effects[d - 1] / scale for d in range(1, 11)
            },
        },
        numeric_slopes={"age": coef["age"] / scale},
        sigma2_u=config.sigma2_u_true / scale**2,
        sigma2_e=config.sigma2_e_true / scale**2,
        outcome_scale=scale,
    )
    log.info("generated cohort: %d students, %d schools, seed %d", n, n_schools, config.seed)
    return cohort, truth


def _draw_school_table(rng, config, school_ids, u_ach, tilt, mix_code) -> pd.DataFrame:
    n_schools = school_ids.size
    n_grammar = int(round(config.grammar_share * n_schools))
    grammar = np.zeros(n_schools, dtype=bool)
    if n_grammar:
        grammar[np.argsort(-u_ach, kind="stable")[:n_grammar]] = True
    base_type = rng.choice(
        ["academy", "community", "foundation", "free"],
        size=n_schools,
        p=[0.45, 0.35, 0.12, 0.08],
    )
    school_type = np.where(grammar, "grammar", base_type)
    base_adm = rng.choice(
        ["comprehensive", "modern"], size=n_schools, p=[0.95, 0.05]
    )
    admissions = np.where(grammar, "selective", base_adm)
    return pd.DataFrame(
        {
            "school_id": school_ids,
            "region": rng.choice(_REGIONS, size=n_schools, p=_REGION_PROBS),
            "school_type": school_type,
            "admissions": admissions,
            "age_range": rng.choice(
                ["11-16", "11-18", "14-18"], size=n_schools, p=[0.35, 0.55, 0.10]
            ),
            "gender_mix": np.array(["mixed", "boys", "girls"], dtype=object)[mix_code],
            "religious_denom": rng.choice(
                ["none", "church_of_england", "roman_catholic", "other"],
                size=n_schools,
                p=[0.62, 0.17, 0.16, 0.05],
            ),
            "school_deprivation_decile": _rank_bins(-tilt, 10),
        }
    )


def write_simulated_cohort(cohort: Cohort, truth: GroundTruth, outdir) -> dict:
    """Write students/schools in the ingest schema plus the truth tables.

    Returns path strings keyed by logical name.
    """
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    students = cohort.students[
        [
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
    ]
    schools = cohort.schools[
        [
            "school_id",
            "region",
            "school_type",
            "admissions",
            "age_range",
            "gender_mix",
            "religious_denom",
            "school_deprivation_decile",
        ]
    ]
    coeff_rows = [
        {"term": term, "level": level, "effect": value}
        for term, levels in truth.level_effects.items()
        for level, value in levels.items()
    ] + [
        {"term": term, "level": "", "effect": slope}
        for term, slope in truth.numeric_slopes.items()
    ]
    paths = {
        "students": outdir / "students.csv",
        "schools": outdir / "schools.csv",
        "truth": outdir / "truth.csv",
        "truth_coefficients": outdir / "truth_coefficients.csv",
    }
    try:
        students.to_csv(paths["students"], index=False, lineterminator="\n")
        schools.to_csv(paths["schools"], index=False, lineterminator="\n")
        truth.school_effects.to_csv(paths["truth"], index=False, lineterminator="\n")
        pd.DataFrame(coeff_rows).to_csv(
            paths["truth_coefficients"], index=False, lineterminator="\n"
        )
    except OSError as exc:
        raise OutputError(f"cannot write simulated cohort: {exc}") from exc
    return {key: str(path) for key, path in paths.items()}


def oracle_fit(design, outcome) -> np.ndarray:
    """Normal-equations solve by dense elimination. Test oracle only."""
    X = design.values if hasattr(design, "values") else np.asarray(design, dtype=float)
    y = np.asarray(outcome, dtype=float)
    try:
        return np.linalg.solve(X.T @ X, X.T @ y)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("singular normal equations") from exc


def recovery_report(fits, truth: GroundTruth, school_codes=None, school_ids=None) -> pd.DataFrame:
    """Coefficient and school-effect recovery for a set of fits.

    Per model: the share of retained coefficients within 3 cluster-robust
    SEs of their generator value, the Pearson correlation of estimated vs
    true school effects, and the between-variance error.
    """
    from .comparison import pearson

    rows = []
    fits = fits if isinstance(fits, (list, tuple)) else [fits]
    for fit in fits:
        if school_ids is None:
            raise ValidationError("recovery_report needs per-student school ids")
        table = build_effect_table(fit, school_ids, shrink=False)
        merged = table.effects.merge(truth.school_effects, on="school_id")
        corr = pearson(merged["effect"], merged["true_effect"])
        ses = fit.standard_errors()
        checked = within = 0
        for idx in fit.retained:
            name = fit.column_names[idx]
            if name == "intercept":
                continue
            expected = _expected_coefficient(name, fit.reference_levels, truth)
            if expected is None or ses[idx] == 0.0:
                continue
            checked += 1
            if abs(fit.coefficients[idx] - expected) <= 3.0 * ses[idx]:
                within += 1
        counts = merged["n"].to_numpy(dtype=float)
        true_eff = merged["true_effect"].to_numpy(dtype=float)
        n = counts.sum()
        grand = float(counts @ true_eff / n)
        true_between = float(counts @ (true_eff - grand) ** 2 / (n - 1))
        rows.append(
            {
                "model": fit.spec.label if fit.spec else "model",
                "n_coefficients": checked,
                "share_within_3se": within / checked if checked else np.nan,
                "effect_correlation": corr,
                "between_variance_error": abs(
                    table.between_school_variance - true_between
                ),
            }
        )
    return pd.DataFrame(rows)


def _expected_coefficient(name: str, references: dict, truth: GroundTruth):
    term, level = split_term(name)
    if term in truth.numeric_slopes:
        return truth.numeric_slopes[term]
    levels = truth.level_effects.get(term)
    if levels is None:
        return None
    ref = references.get(term)
    if ref is None:
        return None
    from .design import _level_label

    ref_label = _level_label(ref)
    if level not in levels or ref_label not in levels:
        return None
    return levels[level] - levels[ref_label]


def _band_curve(n_bands: int, spread: float, power: float) -> np.ndarray:
    """Monotone convex per-band effects from 0 up to ``spread``."""
    if n_bands <= 1:
        return np.zeros(max(n_bands, 1))
    grid = (np.arange(n_bands)) / (n_bands - 1)
    return spread * grid**power


def _rank_bins(values: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-count integer bins 1..n_bins by ascending value (stable ties)."""
    order = np.argsort(values, kind="stable")
    n = values.size
    base, extra = divmod(n, n_bins)
    sizes = np.full(n_bins, base, dtype=np.int64)
    sizes[:extra] += 1
    bins = np.repeat(np.arange(1, n_bins + 1), sizes)
    out = np.empty(n, dtype=np.int64)
    out[order] = bins
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _standardize_pop(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)
