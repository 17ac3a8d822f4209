import numpy as np
import pandas as pd
import pytest

from vam import SimConfig, generate_cohort

# ---------------------------------------------------------------------------
# Independent oracles. These deliberately avoid the library code paths they
# are used to check: plain loops and dense elimination only.


def oracle_normal_equations(X, y):
    """Dense-elimination solve of X'X b = X'y."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.linalg.solve(X.T @ X, X.T @ y)


def oracle_cluster_sandwich(X, residuals, clusters):
    """Direct-summation CR1 sandwich over all columns."""
    X = np.asarray(X, dtype=float)
    r = np.asarray(residuals, dtype=float)
    labels = list(dict.fromkeys(clusters))
    n, p = X.shape
    bread = np.linalg.inv(X.T @ X)
    meat = np.zeros((p, p))
    for g in labels:
        rows = [i for i in range(n) if clusters[i] == g]
        s = np.zeros(p)
        for i in rows:
            s += X[i] * r[i]
        meat += np.outer(s, s)
    G = len(labels)
    factor = (G / (G - 1)) * ((n - 1) / (n - p))
    return factor * bread @ meat @ bread


def oracle_average_ranks(values):
    """O(n^2) average ranks: 1 + #smaller + (#equal - 1)/2."""
    values = list(values)
    out = []
    for v in values:
        smaller = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        out.append(smaller + (equal + 1) / 2.0)
    return np.array(out)


def oracle_pearson(a, b):
    a = list(map(float, a))
    b = list(map(float, b))
    n = len(a)
    ma = sum(a) / n
    mb = sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / (va * vb) ** 0.5


def oracle_quantile_bands(scores, n_bands):
    """Per-value quantile band with equal scores sharing the lower band,
    renumbered consecutively."""
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    n = len(scores)
    provisional = {}
    for pos, idx in enumerate(order):
        band = (pos * n_bands) // n
        value = scores[idx]
        if value not in provisional:
            provisional[value] = band
    used = sorted(set(provisional.values()))
    renumber = {b: i + 1 for i, b in enumerate(used)}
    return np.array([renumber[provisional[v]] for v in scores])


# ---------------------------------------------------------------------------
# Small deterministic cohorts


@pytest.fixture(scope="session")
def small_cohort():
    """40 schools, ~1.6k students: every design builds, runs in ~1s."""
    config = SimConfig(
        n_schools=40,
        students_min=30,
        students_max=50,
        sorting_strength=0.5,
        selection_strength=0.3,
        sigma2_u_true=0.05,
        seed=101,
    )
    cohort, truth = generate_cohort(config)
    return cohort, truth


@pytest.fixture(scope="session")
def midsize_cohort():
    """Larger cohort where all 34 prior bands are populated."""
    config = SimConfig(
        n_schools=60,
        students_min=60,
        students_max=90,
        sorting_strength=0.4,
        selection_strength=0.2,
        sigma2_u_true=0.04,
        seed=202,
    )
    cohort, truth = generate_cohort(config)
    return cohort, truth


def write_cohort_csvs(tmpdir, students_rows, schools_rows):
    """Write raw CSVs in the ingest schema from row dictionaries."""
    students = pd.DataFrame(students_rows)
    schools = pd.DataFrame(schools_rows)
    spath = tmpdir / "students.csv"
    cpath = tmpdir / "schools.csv"
    students.to_csv(spath, index=False)
    schools.to_csv(cpath, index=False)
    return spath, cpath


def student_row(i, school, ks2, outcome, ks1="", **overrides):
    row = {
        "student_id": f"P{i:04d}",
        "school_id": school,
        "attainment8": outcome,
        "ks2_score": ks2,
        "ks1_score": ks1,
        "age_months": 180 + (i % 12),
        "gender": "F" if i % 2 else "M",
        "ethnicity": "white_british" if i % 3 else "other",
        "eal": i % 2,
        "sen": 0,
        "fsm": (i // 2) % 2,
        "deprivation_decile": 1 + (i % 10),
    }
    row.update(overrides)
    return row


def school_row(school, **overrides):
    row = {
        "school_id": school,
        "region": "london",
        "school_type": "academy",
        "admissions": "comprehensive",
        "age_range": "11-18",
        "gender_mix": "mixed",
        "religious_denom": "none",
        "school_deprivation_decile": 5,
    }
    row.update(overrides)
    return row
