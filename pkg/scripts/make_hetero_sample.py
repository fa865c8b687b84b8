"""Regenerate src/charcirc/data_files/hetero_sample.csv (deterministic)."""
from pathlib import Path

import numpy as np

from charcirc.data import Dataset, save_csv

N = 400


def main():
    rng = np.random.default_rng(20240611)
    group = rng.integers(0, 3, N)
    smoker = (rng.random(N) < np.array([0.2, 0.35, 0.5])[group]).astype(float)
    visits = np.minimum(rng.poisson(np.array([1.0, 2.5, 4.0])[group]), 12).astype(float)
    age = np.round(np.array([35.0, 50.0, 62.0])[group] + 8.0 * rng.standard_normal(N), 1)
    income = np.round(np.exp(10.2 + 0.2 * group + 0.6 * rng.standard_normal(N)), 2)
    score = np.round(2.0 * group + rng.standard_t(2.0, N), 4)
    region = rng.choice([1.0, 2.0, 3.0, 4.0], N, p=[0.4, 0.3, 0.2, 0.1])
    cols = (
        ("age", "continuous"), ("income", "continuous"), ("score", "continuous"),
        ("smoker", "discrete"), ("visits", "discrete"), ("region", "discrete"),
    )
    X = np.column_stack([age, income, score, smoker, visits, region])
    out = Path(__file__).resolve().parents[1] / "src" / "charcirc" / "data_files" / "hetero_sample.csv"
    save_csv(Dataset(cols, X), out)


if __name__ == "__main__":
    main()
