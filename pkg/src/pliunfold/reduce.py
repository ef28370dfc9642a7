"""Confound regression and PCA of vertex feature matrices."""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np

from .tensorio import read_tensor, write_tensor


class ConstantConfoundWarning(UserWarning):
    pass


def confound_regress(X, c) -> np.ndarray:
    """Residuals of each column of ``X`` after least squares on ``[1, c]``.

    A constant confound makes the design rank deficient; only the column
    means are removed then.
    """
    X = np.asarray(X, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != c.size:
        raise ValueError("confound length must match the number of rows")
    if not np.all(np.isfinite(c)) or not np.all(np.isfinite(X)):
        raise ValueError("non-finite values in regression inputs")
    Xc = X - X.mean(axis=0)
    cc = c - c.mean()
    ss = float(cc @ cc)
    if ss <= 1e-24 * max(1.0, float(c @ c)):
        warnings.warn("confound is constant; regressing the intercept only", ConstantConfoundWarning, stacklevel=2)
        return Xc
    beta = (cc @ Xc) / ss
    return Xc - np.outer(cc, beta)


@dataclass
class PcaModel:
    mean: np.ndarray  # (dims,)
    components: np.ndarray  # (k, dims), orthonormal rows
    eigenvalues: np.ndarray  # full spectrum, non-increasing
    explained_ratio: np.ndarray  # per retained component

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def save(self, prefix: str | os.PathLike) -> list[str]:
        prefix = os.fspath(prefix)
        paths = []
        for name in ("mean", "components", "eigenvalues", "explained_ratio"):
            p = f"{prefix}.{name}.plt"
            write_tensor(np.asarray(getattr(self, name), dtype=np.float64), p)
            paths.append(p)
        return paths

    @classmethod
    def load(cls, prefix: str | os.PathLike) -> "PcaModel":
        prefix = os.fspath(prefix)
        return cls(*(read_tensor(f"{prefix}.{n}.plt") for n in ("mean", "components", "eigenvalues", "explained_ratio")))


def pca_fit(X, k: int | None = None, threshold: float | None = None) -> PcaModel:
    """Principal components from the covariance eigendecomposition.

    Give ``k`` or a cumulative explained-variance ``threshold`` in (0, 1];
    with neither, all components are kept.  Each component is signed so
    its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    n, dims = X.shape
    if n < 2:
        raise ValueError("need at least 2 rows")
    if k is not None and threshold is not None:
        raise ValueError("give k or threshold, not both")
    if k is not None and not 1 <= k <= dims:
        raise ValueError(f"k={k} outside [1, {dims}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    if dims <= n:
        cov = (Xc.T @ Xc) / (n - 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        evals, evecs = evals[order], evecs[:, order]
    else:
        # thin case via the Gram matrix
        gram = (Xc @ Xc.T) / (n - 1)
        gvals, gvecs = np.linalg.eigh(gram)
        order = np.argsort(gvals)[::-1]
        gvals, gvecs = gvals[order], gvecs[:, order]
        keep = gvals > gvals[0] * 1e-12 if gvals[0] > 0 else np.zeros_like(gvals, bool)
        evecs = Xc.T @ gvecs[:, keep]
        evecs /= np.linalg.norm(evecs, axis=0)
        evals = np.concatenate([gvals[keep], np.zeros(dims - keep.sum())])
        if evecs.shape[1] < dims:
            # complete the basis so k = dims stays available
            q, _ = np.linalg.qr(np.concatenate([evecs, np.eye(dims)], axis=1))
            extra = q[:, evecs.shape[1] : dims]
            evecs = np.concatenate([evecs, extra], axis=1)
    evals = np.clip(evals, 0.0, None)
    total = evals.sum()
    ratios = evals / total if total > 0 else np.zeros_like(evals)
    if threshold is not None:
        if not 0 < threshold <= 1:
            raise ValueError("threshold must be in (0, 1]")
        cum = np.cumsum(ratios)
        k = int(np.searchsorted(cum, threshold - 1e-12) + 1)
        k = min(k, dims)
    k = dims if k is None else k
    comps = evecs[:, :k].T.copy()
    big = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), big])
    comps *= np.where(signs == 0, 1.0, signs)[:, None]
    return PcaModel(mean, comps, evals, ratios[:k])


def pca_transform(model: PcaModel, X) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - model.mean) @ model.components.T


def pca_inverse(model: PcaModel, scores) -> np.ndarray:
    return np.asarray(scores, dtype=np.float64) @ model.components + model.mean


def reduce_features(X, confound, threshold: float = 0.8) -> tuple[np.ndarray, PcaModel]:
    """Regress the confound out, then project on the leading components."""
    resid = confound_regress(X, confound)
    model = pca_fit(resid, threshold=threshold)
    return pca_transform(model, resid), model
