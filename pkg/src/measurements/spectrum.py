"""Spectral diagnostics of the absorbing operator."""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.linalg

from src.operators.operator_matrix import DEFAULT_DENSE_LIMIT, OperatorMatrix, normality_defect, symmetrized_dense

logger = logging.getLogger(__name__)

IMAG_TOL = 1e-10


@dataclass(frozen=True)
class SpectrumReport:
    """Eigenvalues (sorted by real, then imaginary part) and the weighted Gram matrix of unit eigenvectors."""
    eigenvalues: np.ndarray
    gram: np.ndarray
    normality_defect: float
    hermitian: bool

    @property
    def scale(self):
        return max(1.0, float(np.max(np.abs(self.eigenvalues), initial=0.0)))

    @property
    def max_imag(self):
        return float(np.max(self.eigenvalues.imag))

    @property
    def min_imag(self):
        return float(np.min(self.eigenvalues.imag))

    @property
    def max_offdiag(self):
        off = np.abs(self.gram - np.diag(np.diag(self.gram)))
        return float(np.max(off, initial=0.0))

    @property
    def in_lower_half_plane(self):
        return self.max_imag <= IMAG_TOL * self.scale

    def to_frames(self):
        spectrum = pd.DataFrame({"index": np.arange(self.eigenvalues.size),
                                 "re": self.eigenvalues.real, "im": self.eigenvalues.imag})
        i, j = np.indices(self.gram.shape)
        gram = pd.DataFrame({"i": i.ravel(), "j": j.ravel(), "re": self.gram.real.ravel(),
                             "im": self.gram.imag.ravel(), "abs": np.abs(self.gram).ravel()})
        return spectrum, gram

    def summary(self):
        return {"eigenvalue_count": int(self.eigenvalues.size), "max_imag": self.max_imag,
                "min_imag": self.min_imag, "max_offdiag_gram": self.max_offdiag,
                "normality_defect": self.normality_defect, "hermitian": self.hermitian,
                "in_lower_half_plane": self.in_lower_half_plane}


def spectrum_report(H: OperatorMatrix, dense_limit=DEFAULT_DENSE_LIMIT) -> SpectrumReport:
    """Dense eigendecomposition of H in the weighted metric.

    Works on S = W^(1/2) H W^(-1/2); unit eigenvectors u of S are the weighted-unit
    eigenvectors W^(-1/2) u of H, so the weighted Gram matrix is U^H U.
    """
    S = symmetrized_dense(H, dense_limit)
    hermitian = bool(np.max(np.abs(S - S.conj().T)) <= 1e-14 * max(1.0, np.max(np.abs(S))))
    try:
        if hermitian:
            lam, U = scipy.linalg.eigh(0.5 * (S + S.conj().T))
            lam = lam.astype(complex)
        else:
            lam, U = scipy.linalg.eig(S)
    except (np.linalg.LinAlgError, ValueError) as e:
        logger.error(f"Eigensolver failed: {str(e)}")
        raise
    U = U / np.linalg.norm(U, axis=0)[None, :]
    order = np.lexsort((np.round(lam.imag, 12), np.round(lam.real, 12)))
    lam, U = lam[order], U[:, order]
    report = SpectrumReport(lam, U.conj().T @ U, normality_defect(H, dense_limit), hermitian)
    logger.info(f"Spectrum of {H.kind} operator: {lam.size} eigenvalues, max Im {report.max_imag:.3e}, "
                f"max off-diagonal Gram {report.max_offdiag:.3e}")
    return report
