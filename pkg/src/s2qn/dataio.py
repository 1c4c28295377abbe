"""Datasets: LIBSVM text files and deterministic synthetic generators."""
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import IndexOrderError, ParseError


@dataclass(frozen=True)
class Dataset:
    """Feature rows plus targets.

    ``features`` is a CSR matrix or a dense array. For binary problems
    ``labels`` holds -1/+1; for networks it holds dense targets.
    ``scales`` records a per-feature max-abs normalization, if applied.
    """

    features: object
    labels: np.ndarray
    name: str = ""
    scales: np.ndarray | None = None

    @property
    def N(self):
        return self.features.shape[0]

    @property
    def n(self):
        return self.features.shape[1]

    def dense_features(self):
        return self.features.toarray() if sp.issparse(self.features) else np.asarray(self.features)


def map_binary_labels(raw, line_numbers=None):
    """Map a {0,1} or {-1,+1} label set to {-1,+1}; anything else is ambiguous."""
    raw = np.asarray(raw, dtype=np.float64)
    values = set(np.unique(raw).tolist())
    if values <= {-1.0, 1.0}:
        return raw.copy()
    if values <= {0.0, 1.0}:
        return np.where(raw > 0, 1.0, -1.0)
    raise ParseError(f"label set {sorted(values)} is neither {{0,1}} nor {{-1,+1}}")


def read_libsvm(path, n_features=None, sort_indices=False):
    """Parse ``label idx:val idx:val ...`` lines with 1-based indices.

    Blank lines and ``#`` comments are skipped. Indices must be strictly
    increasing within a row unless ``sort_indices`` is set (duplicates are
    always an error).
    """
    labels, indptr, cols, vals = [], [0], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                labels.append(float(parts[0]))
            except ValueError:
                raise ParseError(f"bad label {parts[0]!r}", lineno) from None
            row_idx, row_val = [], []
            for tok in parts[1:]:
                key, sep, val = tok.partition(":")
                if not sep:
                    raise ParseError(f"token {tok!r} is not idx:val", lineno)
                try:
                    j, x = int(key), float(val)
                except ValueError:
                    raise ParseError(f"token {tok!r} is not idx:val", lineno) from None
                if j < 1:
                    raise ParseError(f"index {j} is not 1-based", lineno)
                if not np.isfinite(x):
                    raise ParseError(f"non-finite value in {tok!r}", lineno)
                row_idx.append(j - 1)
                row_val.append(x)
            order = np.argsort(row_idx, kind="stable")
            if np.any(np.diff(row_idx) <= 0):
                if not sort_indices or np.any(np.diff(np.asarray(row_idx)[order]) == 0):
                    raise IndexOrderError("indices are not strictly increasing", lineno)
                row_idx = [row_idx[i] for i in order]
                row_val = [row_val[i] for i in order]
            cols.extend(row_idx)
            vals.extend(row_val)
            indptr.append(len(cols))
    n = max(cols, default=-1) + 1
    if n_features is not None:
        if n_features < n:
            raise ParseError(f"index {n} exceeds n_features={n_features}")
        n = n_features
    X = sp.csr_matrix((np.asarray(vals, dtype=np.float64), np.asarray(cols, dtype=np.int64),
                       np.asarray(indptr, dtype=np.int64)), shape=(len(labels), n))
    return Dataset(X, map_binary_labels(labels), name=Path(path).stem)


def write_libsvm(dataset, path):
    X = sp.csr_matrix(dataset.features)
    with open(path, "w") as fh:
        for i in range(X.shape[0]):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            toks = [f"{j + 1}:{float(x)!r}" for j, x in zip(X.indices[lo:hi], X.data[lo:hi])]
            label = "+1" if dataset.labels[i] > 0 else "-1"
            fh.write(" ".join([label, *toks]) + "\n")


def normalize_maxabs(dataset):
    """Scale every feature by its max absolute value; the scales are recorded."""
    X = dataset.features
    if sp.issparse(X):
        scales = np.asarray(abs(X).max(axis=0).todense()).ravel()
    else:
        scales = np.max(np.abs(X), axis=0)
    scales = np.where(scales > 0, scales, 1.0)
    Xn = X @ sp.diags(1.0 / scales) if sp.issparse(X) else X / scales
    if sp.issparse(Xn):
        Xn = sp.csr_matrix(Xn)
    return replace(dataset, features=Xn, scales=scales)


def denormalize(dataset):
    if dataset.scales is None:
        return dataset
    X = dataset.features
    Xd = sp.csr_matrix(X @ sp.diags(dataset.scales)) if sp.issparse(X) else X * dataset.scales
    return replace(dataset, features=Xd, scales=None)


PROFILES = ("isotropic", "graded", "whitened")


def synth_logistic(n, N, profile="isotropic", seed=0, theta_scale=1.0, feature_scale=1.0, condition=100.0):
    """Gaussian features and logistic labels drawn at a planted ``theta_gen``.

    ``profile`` sets the column scaling: ``isotropic`` (all equal),
    ``graded`` (column scales spread geometrically so the feature covariance
    has condition number ``condition``) or ``whitened`` (``X^T X / N`` is
    exactly ``feature_scale^2 I``). ``theta_gen`` has norm about
    ``theta_scale / feature_scale``, so margins have spread ``theta_scale``.
    """
    if n < 2 or N < 2:
        raise ValueError("need n >= 2 and N >= 2")
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7919]))
    X = rng.standard_normal((N, n))
    if profile == "graded":
        X *= np.geomspace(1.0, 1.0 / np.sqrt(condition), n)
    elif profile == "whitened":
        if N < n:
            raise ValueError("whitened profile needs N >= n")
        X -= X.mean(axis=0)
        w, E = np.linalg.eigh(X.T @ X / N)
        X = X @ E @ np.diag(w ** -0.5) @ E.T
    X *= feature_scale
    theta_gen = rng.standard_normal(n) * theta_scale / (feature_scale * np.sqrt(n))
    prob = expit(X @ theta_gen)
    y = np.where(rng.random(N) < prob, 1.0, -1.0)
    return Dataset(X, y, name=f"synth-logistic-{profile}-{seed}"), theta_gen


def synth_curves_toy(seed=0, n_samples=1000, size=16, width=0.9):
    """Images of random quadratic Bezier strokes, pixel values in [0, 1].

    Targets equal the inputs (autoencoder setting).
    """
    if n_samples > 2000:
        raise ValueError("the toy curves set is capped at 2000 samples")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 104729]))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    t = np.linspace(0.0, 1.0, 24)[:, None]
    images = np.empty((n_samples, size * size))
    for i in range(n_samples):
        P = rng.uniform(1.0, size - 2.0, size=(3, 2))
        curve = (1 - t) ** 2 * P[0] + 2 * (1 - t) * t * P[1] + t ** 2 * P[2]
        d2 = (xx[None] - curve[:, 0, None, None]) ** 2 + (yy[None] - curve[:, 1, None, None]) ** 2
        images[i] = np.exp(-d2.min(axis=0) / (2 * width ** 2)).ravel()
    images = np.clip(images, 0.0, 1.0)
    return Dataset(images, images.copy(), name=f"curves-toy-{seed}")


def synth_conv_maps(spec, N=64, seed=0, noise=0.1, loss="square"):
    """Random input maps and targets produced by a planted kernel.

    Returns ``(inputs, targets, planted_matrix)``; for cross-entropy the
    targets are sigmoid probabilities.
    """
    from .models.conv import conv_forward_backward

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 15485863]))
    a = rng.standard_normal((N, spec.in_channels, spec.height, spec.width))
    planted = rng.standard_normal((spec.m_G, spec.m_A)) / np.sqrt(spec.m_A)
    zero = np.zeros((N, spec.out_channels, spec.height, spec.width))
    s, _, _ = conv_forward_backward(spec, planted, (a, zero))
    s = s + noise * rng.standard_normal(s.shape)
    targets = expit(s) if loss == "cross-entropy" else s
    return a, targets, planted
