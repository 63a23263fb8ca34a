"""Laplace-Beltrami eigenbasis and point-wise spectral descriptors."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

logger = logging.getLogger(__name__)

DENSE_LIMIT = 1500
WKS_REFERENCE_ENERGIES = 100


class EigenSolverError(RuntimeError):
    pass


@dataclass
class SpectralBasis:
    """Truncated generalized eigenpairs of ``L phi = lambda M phi``.

    ``evecs`` is M-orthonormal and sign-fixed (largest-magnitude entry of each
    column is positive). ``mass`` is the lumped mass diagonal.
    """

    evals: np.ndarray
    evecs: np.ndarray
    mass: np.ndarray

    @property
    def k(self):
        return len(self.evals)

    def permuted(self, perm):
        return SpectralBasis(self.evals.copy(), self.evecs[perm], self.mass[perm])


def _fix_signs(evecs, rtol=1e-6):
    # magnitudes within rtol of the column maximum count as tied (symmetric
    # modes come in +-pairs); the lowest such row is the pivot
    mag = np.abs(evecs)
    pivot = np.argmax(mag >= (1.0 - rtol) * mag.max(axis=0), axis=0)
    signs = np.sign(evecs[pivot, np.arange(evecs.shape[1])])
    signs[signs == 0] = 1.0
    return evecs * signs


def eigendecompose(L, M, k, dense_limit=DENSE_LIMIT):
    """``k`` smallest eigenpairs of the pencil (L, M).

    Small problems use a dense symmetric solve on ``M^-1/2 L M^-1/2``; larger
    ones use shift-invert Lanczos. Both are held to the same residual bound
    ``||L phi - lambda M phi||_inf < 1e-6 (1 + lambda)``.
    """
    n = L.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    mass = np.asarray(M.diagonal(), dtype=np.float64)
    if n <= dense_limit or k >= n - 1:
        s = 1.0 / np.sqrt(mass)
        A = (L.toarray() * s[:, None]) * s[None, :]
        A = 0.5 * (A + A.T)
        evals, y = linalg.eigh(A, subset_by_index=[0, k - 1])
        evecs = y * s[:, None]
    else:
        # a slightly negative shift keeps the factorization non-singular
        v0 = np.full(n, 1.0 / np.sqrt(n))
        try:
            evals, evecs = eigsh(L.tocsc(), k=k, M=M.tocsc(), sigma=-1e-8, which="LM", v0=v0, tol=1e-12)
        except ArpackNoConvergence as exc:
            raise EigenSolverError(f"Lanczos did not converge: {len(exc.eigenvalues)} of {k} pairs") from exc
    order = np.argsort(evals)
    evals = evals[order]
    evecs = evecs[:, order]
    # re-normalize in the M inner product
    evecs = evecs / np.sqrt(np.einsum("ij,i,ij->j", evecs, mass, evecs))
    evecs = _fix_signs(evecs)
    evals = np.where(np.abs(evals) < 1e-12, 0.0, evals)
    resid = np.abs(L @ evecs - (mass[:, None] * evecs) * evals[None, :]).max(axis=0)
    bad = resid >= 1e-6 * (1.0 + np.abs(evals))
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise EigenSolverError(f"eigenpair {j} residual {resid[j]:.3e} exceeds tolerance (lambda={evals[j]:.4g})")
    return SpectralBasis(evals, evecs, mass)


def heat_kernel_signature(basis, n_times=5):
    """HKS at ``n_times`` log-spaced times in ``[4 ln10 / lambda_max, 4 ln10 / lambda_1]``."""
    if basis.k < 2 or n_times < 1:
        raise ValueError("heat_kernel_signature needs k >= 2 and n_times >= 1")
    lam = basis.evals
    if lam[1] <= 0 or lam[-1] <= 0:
        raise ValueError("spectrum is zero beyond the constant mode")
    t_min = 4 * np.log(10) / lam[-1]
    t_max = 4 * np.log(10) / lam[1]
    times = np.geomspace(t_min, t_max, n_times)
    weights = np.exp(-np.outer(lam, times))  # (k, n_times)
    return (basis.evecs ** 2) @ weights


def wave_kernel_signature(basis, n_energies=5):
    """WKS at ``n_energies`` log-energies, each band's weights summing to one.

    The band width ``sigma`` is 7x the spacing of a reference grid of
    ``max(n_energies, 100)`` energies over ``[log lambda_1, log lambda_max]``;
    the sampled energies then cover that interval shrunk by ``2 sigma`` on
    each side.
    """
    if basis.k < 3:
        raise ValueError("wave_kernel_signature needs k >= 3")
    lam = basis.evals[1:]
    if lam[0] <= 0:
        raise ValueError("spectrum is zero beyond the constant mode")
    log_lam = np.log(lam)
    e_min, e_max = log_lam[0], log_lam[-1]
    span = e_max - e_min
    sigma = 7.0 * span / max(n_energies, WKS_REFERENCE_ENERGIES)
    lo, hi = e_min + 2 * sigma, e_max - 2 * sigma
    if not hi > lo or sigma <= 0:
        raise ValueError("WKS energy range collapses; increase the number of eigenpairs")
    energies = np.linspace(lo, hi, n_energies)
    coef = np.exp(-((energies[None, :] - log_lam[:, None]) ** 2) / (2 * sigma ** 2))  # (k-1, n_e)
    coef /= coef.sum(axis=0, keepdims=True)
    return (basis.evecs[:, 1:] ** 2) @ coef


def spectral_channels(basis, count=6):
    """Eigenvectors 1..count (constant mode dropped)."""
    if count == 0:
        return np.zeros((basis.evecs.shape[0], 0))
    if basis.k < count + 1:
        raise ValueError(f"basis has {basis.k} pairs, need {count + 1}")
    return basis.evecs[:, 1:count + 1].copy()


def mesh_basis(mesh, k=64):
    """Convenience: cotan Laplacian + lumped mass of ``mesh`` and their first ``k`` pairs."""
    from .mesh import cotan_laplacian

    L, M = cotan_laplacian(mesh)
    return eigendecompose(L, M, min(k, mesh.n_vertices))
