"""Freezes spectral-signature reference scores.

Usage: python3 scripts/make_numeric_oracles.py OUT_DIR

Scores are squared projections of the centered rows onto the k-th right
singular vector, taken from numpy's eigh of the covariance D^T D and
checked against numpy's SVD.
"""

import json
import sys

import numpy as np


def scores(matrix, k):
    centered = matrix - matrix.mean(axis=0)
    values, vectors = np.linalg.eigh(centered.T @ centered)
    order = np.argsort(-values, kind="stable")
    v = vectors[:, order[k - 1]]
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    assert np.allclose((centered @ v) ** 2, (centered @ vt[k - 1]) ** 2, atol=1e-9)
    return ((centered @ v) ** 2).tolist()


def main():
    out_dir = sys.argv[1]
    rng = np.random.default_rng(20240612)
    cases = []

    toy = rng.normal(0.0, 0.5, size=(100, 2))
    toy[95:] += np.array([10.0, 0.0])
    cases.append({"name": "toy2d", "matrix": toy.tolist(), "scores": {str(k): scores(toy, k) for k in (1, 2)}})

    wide = rng.normal(size=(60, 5)) * np.array([5.0, 3.0, 2.0, 1.0, 0.5])
    cases.append({"name": "aniso5d", "matrix": wide.tolist(),
                  "scores": {str(k): scores(wide, k) for k in (1, 2, 3)}})

    few = rng.normal(size=(4, 5))
    cases.append({"name": "short4x5", "matrix": few.tolist(), "scores": {str(k): scores(few, k) for k in (1, 2, 3)}})

    with open(f"{out_dir}/spectral_oracle.json", "w") as fh:
        json.dump(cases, fh)


if __name__ == "__main__":
    main()
