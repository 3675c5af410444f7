"""Quadratic exposure model: SAR matrix, budget, and the exposure of a precoder."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .channel import ConfigurationError

__all__ = [
    "SarModel",
    "sar_value",
    "paper_sar_matrix",
    "synthesize_sar_matrix",
    "identity_sar_model",
]

HERMITIAN_TOL = 1e-12
MIN_EIG_TOL = -1e-10


@dataclass(frozen=True)
class SarModel:
    """Hermitian PSD coupling matrix R (W/kg per unit transmit power) plus budget Q0.

    ``synthetic`` marks matrices that were generated rather than measured, so
    reports can flag them.
    """

    matrix: np.ndarray
    budget: float
    synthetic: bool = False

    def __post_init__(self):
        R = np.asarray(self.matrix, dtype=complex)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ConfigurationError("SAR matrix must be square")
        scale = max(1.0, float(np.abs(R).max()))
        if np.abs(R - R.conj().T).max() > HERMITIAN_TOL * scale:
            raise ConfigurationError("SAR matrix is not Hermitian")
        eigs = np.linalg.eigvalsh(R)
        if eigs.min() < MIN_EIG_TOL:
            raise ConfigurationError(
                f"SAR matrix is not PSD (min eigenvalue {eigs.min():.3e})")
        if self.budget <= 0:
            raise ConfigurationError("SAR budget must be positive")
        object.__setattr__(self, "matrix", R)

    @property
    def n_antennas(self) -> int:
        return self.matrix.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "budget": self.budget,
            "synthetic": self.synthetic,
            "matrix": [[[v.real, v.imag] for v in row] for row in self.matrix],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SarModel":
        R = np.array([[complex(re, im) for re, im in row] for row in doc["matrix"]])
        return cls(matrix=R, budget=doc["budget"], synthetic=doc.get("synthetic", False))

    @classmethod
    def from_json(cls, text: str) -> "SarModel":
        return cls.from_json_dict(json.loads(text))


def sar_value(precoder: np.ndarray, model: SarModel) -> float:
    """Total exposure sum_k p_k^H R p_k of an (M, K) precoder."""
    P = np.asarray(precoder, dtype=complex)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] != model.n_antennas:
        raise ConfigurationError("precoder row count must match the SAR matrix size")
    val = np.einsum("mk,mn,nk->", P.conj(), model.matrix, P)
    scale = max(1.0, abs(val.real))
    assert abs(val.imag) < 1e-10 * scale, "quadratic form of a Hermitian matrix must be real"
    return float(val.real)


_PAPER_R4 = np.array(
    [
        [1.6, -1.2j, -0.42, 0.0],
        [1.2j, 1.6, -1.2j, -0.42],
        [-0.42, 1.2j, 1.6, -1.2j],
        [0.0, -0.42, 1.2j, 1.6],
    ]
)


def paper_sar_matrix(budget: float = 1.6) -> SarModel:
    """The measured 4-antenna SAR matrix (banded: 1.6 diagonal, +/-1.2j, -0.42)."""
    return SarModel(matrix=_PAPER_R4.copy(), budget=budget, synthetic=False)


def _banded_pattern(M: int, diag: float, band1: float, band2: float) -> np.ndarray:
    R = np.zeros((M, M), dtype=complex)
    np.fill_diagonal(R, diag)
    for i in range(M - 1):
        R[i, i + 1] = -1j * band1
        R[i + 1, i] = 1j * band1
    for i in range(M - 2):
        R[i, i + 2] = band2
        R[i + 2, i] = band2
    return R


def synthesize_sar_matrix(M: int, rng_seed: int = 0, diag: float = 1.6,
                          band1: float = 1.2, band2: float = -0.42,
                          jitter: float = 0.0, budget: float = 1.6) -> SarModel:
    """Banded Hermitian matrix for antenna counts the measurement does not cover.

    Extends the measured pattern (positive diagonal, imaginary first
    off-diagonal, small negative real second off-diagonal) to M antennas,
    optionally jitters the band magnitudes (seeded, multiplicative, +/-jitter),
    then projects to PSD by clipping negative eigenvalues at zero.
    """
    if M < 1:
        raise ConfigurationError("M must be >= 1")
    R = _banded_pattern(M, diag, band1, band2)
    if jitter > 0.0:
        rng = np.random.default_rng(rng_seed)
        scale = 1.0 + jitter * rng.uniform(-1.0, 1.0, size=(M, M))
        scale = (scale + scale.T) / 2.0  # keep the jittered matrix Hermitian
        R = R * scale
    eigs, vecs = np.linalg.eigh(R)
    clipped = np.clip(eigs, 0.0, None)
    R_psd = (vecs * clipped) @ vecs.conj().T
    R_psd = (R_psd + R_psd.conj().T) / 2.0
    return SarModel(matrix=R_psd, budget=budget, synthetic=True)


def identity_sar_model(M: int, budget: float) -> SarModel:
    """Identity coupling: the quadratic form reduces to total transmit power."""
    return SarModel(matrix=np.eye(M, dtype=complex), budget=budget, synthetic=True)
