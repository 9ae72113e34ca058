"""Exact truncated Dynamic Mode Decomposition of snapshot panels."""

import json
import logging
from dataclasses import dataclass
from typing import Iterable, Literal, NamedTuple, Sequence

import numpy as np

from .errors import BadModeIndex, DegenerateData, InputError, RankDeficient, TooFewSnapshots, ZeroEigenvalue
from .loaddata import LoadPanel

logger = logging.getLogger(__name__)

ENERGY_THRESHOLD = 0.999
RANK_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class SnapshotPair:
    """
    Snapshot matrices X = [x1 ... x(m-1)] and X' = [x2 ... xm].

    Args:
        X (np.ndarray): n × (m-1) real matrix.
        Xp (np.ndarray): n × (m-1) real matrix, X shifted one step ahead.
    """
    X: np.ndarray
    Xp: np.ndarray

    def __post_init__(self):
        X, Xp = np.asarray(self.X, dtype=float), np.asarray(self.Xp, dtype=float)
        if X.ndim != 2 or X.shape != Xp.shape:
            raise InputError(f"Snapshot matrices must share a 2-D shape, got {X.shape} and {Xp.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Xp", Xp)


@dataclass(frozen=True, eq=False)
class DmdResult:
    """
    Output of `dmd`.

    Args:
        rank (int): Truncation rank r.
        U (np.ndarray): n × r left singular vectors.
        Sigma (np.ndarray): r singular values, positive and non-increasing.
        V (np.ndarray): (m-1) × r right singular vectors.
        Atilde (np.ndarray): r × r reduced operator U* X' V Σ⁻¹.
        eigenvalues (np.ndarray): r complex eigenvalues of Atilde, in solver order.
        W (np.ndarray): r × r eigenvectors of Atilde.
        modes (np.ndarray): n × r exact DMD modes X' V Σ⁻¹ W.
        amplitudes (np.ndarray): r amplitudes fitted to the first snapshot.
    """
    rank: int
    U: np.ndarray
    Sigma: np.ndarray
    V: np.ndarray
    Atilde: np.ndarray
    eigenvalues: np.ndarray
    W: np.ndarray
    modes: np.ndarray
    amplitudes: np.ndarray

    def to_json(self) -> dict:
        """Serializes with complex numbers as [re, im] pairs and matrices as row-major nested lists."""
        return {
            "rank": self.rank,
            "U": _encode(self.U),
            "Sigma": _encode(self.Sigma),
            "V": _encode(self.V),
            "Atilde": _encode(self.Atilde),
            "eigenvalues": _encode(self.eigenvalues),
            "W": _encode(self.W),
            "modes": _encode(self.modes),
            "amplitudes": _encode(self.amplitudes),
        }

    def dumps(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_json(), indent=indent)

    @classmethod
    def from_json(cls, data: dict) -> "DmdResult":
        return cls(
            rank=int(data["rank"]),
            U=_decode(data["U"]),
            Sigma=_decode(data["Sigma"]),
            V=_decode(data["V"]),
            Atilde=_decode(data["Atilde"]),
            eigenvalues=_decode(data["eigenvalues"], complex_=True),
            W=_decode(data["W"], complex_=True),
            modes=_decode(data["modes"], complex_=True),
            amplitudes=_decode(data["amplitudes"], complex_=True),
        )


class ModeInfo(NamedTuple):
    index: int
    frequency: float
    growth: float
    energy: float
    degenerate: bool = False


def _encode(array: np.ndarray):
    array = np.asarray(array)
    if np.iscomplexobj(array):
        return np.stack([array.real, array.imag], axis=-1).tolist()
    return array.tolist()


def _decode(data, complex_: bool = False) -> np.ndarray:
    array = np.asarray(data, dtype=float)
    if complex_ or (array.ndim and array.shape[-1] == 2 and _is_pairs(data)):
        return array[..., 0] + 1j * array[..., 1]
    return array


def _is_pairs(data) -> bool:
    # real matrices never nest one level deeper than their rank
    depth, item = 0, data
    while isinstance(item, list) and item:
        depth, item = depth + 1, item[0]
    return depth == 3


def build_snapshot_pair(panel: LoadPanel | np.ndarray) -> SnapshotPair:
    """
    Splits a panel (or an n × m matrix) into the shifted snapshot matrices.

    Raises:
        TooFewSnapshots: Fewer than three snapshots.
    """
    data = panel.values if isinstance(panel, LoadPanel) else np.asarray(panel, dtype=float)
    if data.ndim != 2 or data.shape[1] < 3:
        raise TooFewSnapshots(f"DMD needs at least 3 snapshots, got shape {data.shape}")
    return SnapshotPair(X=data[:, :-1], Xp=data[:, 1:])


def truncated_svd(X: np.ndarray, r: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD X ≈ U·diag(Sigma)·V*, truncated to the first `r` singular triplets."""
    U, s, Vh = np.linalg.svd(X, full_matrices=False)
    V = Vh.conj().T
    if r is not None:
        U, s, V = U[:, :r], s[:r], V[:, :r]
    return U, s, V


def numeric_rank(sigma: np.ndarray, tol: float = RANK_TOLERANCE) -> int:
    if sigma.size == 0 or sigma[0] <= 0:
        return 0
    return int(np.count_nonzero(sigma / sigma[0] > tol))


def auto_rank(sigma: np.ndarray, energy: float = ENERGY_THRESHOLD) -> int:
    """Smallest rank whose singular values capture `energy` of the squared total."""
    power = np.asarray(sigma, dtype=float) ** 2
    captured = np.cumsum(power) / power.sum()
    return int(np.count_nonzero(captured < energy)) + 1 if captured[-1] >= energy else power.size


def dmd(pair: SnapshotPair, r: int | Literal["auto"] = "auto", energy: float = ENERGY_THRESHOLD) -> DmdResult:
    """
    Exact DMD of a snapshot pair.

    Args:
        pair (SnapshotPair): X and X'.
        r (int | "auto"): Truncation rank; "auto" keeps the smallest rank capturing `energy`.
        energy (float): Squared singular-value energy threshold for "auto".

    Returns:
        DmdResult: Reduced operator, eigenvalues, exact modes and first-snapshot amplitudes.

    Raises:
        DegenerateData: X is numerically zero.
        RankDeficient: `r` exceeds the numeric rank of X.
    """
    X, Xp = pair.X, pair.Xp
    U, s, V = truncated_svd(X)
    if s.size == 0 or not s[0] > np.finfo(float).tiny:
        raise DegenerateData("Snapshot matrix is numerically zero")
    available = numeric_rank(s)
    if r == "auto":
        rank = min(auto_rank(s, energy), available)
    else:
        rank = int(r)
        if rank < 1:
            raise InputError(f"Rank must be positive, got {rank}")
        if rank > available:
            raise RankDeficient(f"Requested rank {rank} exceeds numeric rank {available}")
    U, s, V = U[:, :rank], s[:rank], V[:, :rank]

    projected = Xp @ V / s
    Atilde = U.conj().T @ projected
    eigenvalues, W = np.linalg.eig(Atilde)
    modes = projected @ W
    amplitudes = np.linalg.lstsq(modes, X[:, 0], rcond=None)[0]
    logger.info("DMD of %d × %d snapshots at rank %d", X.shape[0], X.shape[1] + 1, rank)
    return DmdResult(rank=rank, U=U, Sigma=s, V=V, Atilde=Atilde, eigenvalues=eigenvalues,
                     W=W, modes=modes, amplitudes=amplitudes)


def dmd_of_panel(panel: LoadPanel, r: int | Literal["auto"] = "auto") -> DmdResult:
    return dmd(build_snapshot_pair(panel), r)


def _mode_indices(result: DmdResult, modes: Iterable[int] | None) -> np.ndarray:
    if modes is None:
        return np.arange(result.rank)
    indices = np.asarray(list(modes), dtype=int)
    bad = indices[(indices < 0) | (indices >= result.rank)]
    if bad.size:
        raise BadModeIndex(f"Mode indices {bad.tolist()} outside 0..{result.rank - 1}")
    return indices


def dynamics(result: DmdResult, steps: Iterable[int], modes: Iterable[int] | None = None) -> np.ndarray:
    """Time dynamics b_j·λ_j^k, one row per selected mode."""
    indices = _mode_indices(result, modes)
    k = np.asarray(list(steps), dtype=float)
    return result.amplitudes[indices, None] * result.eigenvalues[indices, None] ** k[None, :]


def reconstruct(result: DmdResult, modes: Iterable[int] | None = None,
                steps: Iterable[int] | None = None) -> np.ndarray:
    """
    Real part of Σ_j Φ_j·b_j·λ_j^k for each step k.

    Args:
        modes: Mode indices to include; `None` uses all of them, an empty subset yields zeros.
        steps: Step indices k; `None` reproduces the m-1 columns of X.

    Returns:
        np.ndarray: n × len(steps) real matrix.
    """
    steps = list(range(result.V.shape[0]) if steps is None else steps)
    indices = _mode_indices(result, modes)
    if indices.size == 0:
        return np.zeros((result.modes.shape[0], len(steps)))
    return (result.modes[:, indices] @ dynamics(result, steps, indices)).real


def mode_report(result: DmdResult, dt: float, strict: bool = False) -> list[ModeInfo]:
    """
    Continuous-time view of each mode.

    Args:
        dt (float): Snapshot spacing in seconds.
        strict (bool): Raise `ZeroEigenvalue` instead of flagging λ = 0 with growth -inf.

    Returns:
        list[ModeInfo]: Sorted by energy |b_j|·‖Φ_j‖ descending, ties by ascending frequency.
    """
    if not dt > 0:
        raise InputError(f"dt must be positive, got {dt}")
    report = []
    for j, (lam, b) in enumerate(zip(result.eigenvalues, result.amplitudes)):
        energy = float(abs(b) * np.linalg.norm(result.modes[:, j]))
        if lam == 0:
            if strict:
                raise ZeroEigenvalue(f"Mode {j} has a zero eigenvalue")
            report.append(ModeInfo(j, 0.0, float("-inf"), energy, True))
            continue
        omega = np.log(complex(lam)) / dt
        report.append(ModeInfo(j, float(omega.imag / (2 * np.pi)), float(omega.real), energy))
    # 12 significant digits so conjugate pairs tie deterministically
    return sorted(report, key=lambda m: (-float(f"{m.energy:.12g}"), m.frequency, m.index))


def spectrum(result: DmdResult) -> Sequence[complex]:
    return [complex(v) for v in result.eigenvalues]
