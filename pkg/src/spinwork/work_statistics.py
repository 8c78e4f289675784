"""Two-point-measurement work distributions and the characteristic function of work.

The characteristic function chi(u) is computed by two independent routes: a
Fourier sum over the measured work atoms, and a trace formula evaluated in the
initial/final eigenbases.  Both share one branch convention for ln chi:
continuous phase unwrapping along the u grid, anchored so ln chi(0) = 0.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .drive_dynamics import PropagatorResult
from .spectral_core import DensityMatrix, SpectralDecomposition, boltzmann_weights
from .spin_model import DimensionError, OperatorMatrix

NORMALIZATION_TOLERANCE = 1e-8


class ResolutionError(ValueError):
    """u grid too coarse for continuous phase unwrapping."""


@dataclass(frozen=True)
class WorkDistribution:
    """Discrete work atoms (w_k, p_k), sorted by w, separated by more than merge_tolerance."""

    works: np.ndarray
    probabilities: np.ndarray
    merge_tolerance: float

    def __post_init__(self):
        object.__setattr__(self, "works", np.asarray(self.works, dtype=float))
        object.__setattr__(self, "probabilities", np.asarray(self.probabilities, dtype=float))
        if self.works.shape != self.probabilities.shape or self.works.ndim != 1:
            raise ValueError("works and probabilities must be matching 1-d arrays")
        if self.probabilities.min(initial=0.0) < -1e-14:
            raise ValueError("negative probability atom")
        drift = abs(self.probabilities.sum() - 1.0)
        if drift > NORMALIZATION_TOLERANCE:
            raise ValueError(f"normalization drift {drift:.3e}")

    @property
    def n_atoms(self) -> int:
        return self.works.shape[0]


@dataclass(frozen=True)
class CfwSamples:
    """chi(u) on a real u grid with the continuously unwrapped logarithm."""

    u_grid: np.ndarray
    chi: np.ndarray
    ln_chi: np.ndarray


def default_merge_tolerance(spec_i: SpectralDecomposition, spec_f: SpectralDecomposition) -> float:
    """1e-9 times the summed spectral ranges; keeps degenerate gaps as single atoms."""
    return 1e-9 * (spec_i.spectral_range + spec_f.spectral_range)


def _merge_atoms(works: np.ndarray, probs: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(works, kind="stable")
    w, p = works[order], probs[order]
    if tol > 0 and w.size:
        boundaries = np.flatnonzero(np.diff(w) > tol)
        groups = np.concatenate([[0], boundaries + 1, [w.size]])
        merged_w = np.empty(groups.size - 1)
        merged_p = np.empty(groups.size - 1)
        for k in range(groups.size - 1):
            sl = slice(groups[k], groups[k + 1])
            mass = p[sl].sum()
            merged_p[k] = mass
            merged_w[k] = (w[sl] @ p[sl]) / mass if mass > 0 else w[sl].mean()
        return merged_w, merged_p
    return w, p


def tpm_distribution(
    spec_i: SpectralDecomposition,
    spec_f: SpectralDecomposition,
    u: PropagatorResult,
    beta: float,
    merge_tolerance: float | None = None,
) -> WorkDistribution:
    """Two-point-measurement work distribution.

    Transition kernel M = |V_f^dag U V_i|^2 elementwise; the atom at
    w = E^f_m - E^i_n carries M_mn p_n with p the initial Boltzmann weights.
    Atoms closer than the merge tolerance are merged at the
    probability-weighted mean work.
    """
    m = u.unitary.matrix
    if spec_i.dimension != m.shape[0] or spec_f.dimension != m.shape[0]:
        raise DimensionError("propagator and spectral data dimensions differ")
    if merge_tolerance is None:
        merge_tolerance = default_merge_tolerance(spec_i, spec_f)
    p = boltzmann_weights(spec_i, beta)
    kernel = np.abs(spec_f.eigenvectors.conj().T @ m @ spec_i.eigenvectors) ** 2
    works = np.subtract.outer(spec_f.eigenvalues, spec_i.eigenvalues).ravel()
    probs = (kernel * p[None, :]).ravel()
    works, probs = _merge_atoms(works, probs, merge_tolerance)
    return WorkDistribution(works, probs, merge_tolerance)


def _unwrapped_log(u_grid: np.ndarray, chi: np.ndarray, max_rate: float) -> np.ndarray:
    # a-priori aliasing bound: the phase can advance by up to max|w| per unit u
    du = float(np.abs(np.diff(u_grid)).max(initial=0.0))
    if du * max_rate >= np.pi:
        raise ResolutionError(
            f"u grid spacing {du:g} under-resolves the work support "
            f"(max |w| = {max_rate:g}); refine the u grid"
        )
    phase = np.angle(chi)
    steps = np.abs(np.diff(phase))
    # steps near pi are ambiguous after wrapping (chi passing near zero)
    if np.any(np.minimum(steps, 2 * np.pi - steps) > np.pi * (1 - 1e-9)):
        raise ResolutionError("phase advances by >= pi per grid step; refine the u grid")
    unwrapped = np.unwrap(phase)
    anchor = int(np.argmin(np.abs(u_grid)))
    unwrapped -= unwrapped[anchor] - phase[anchor]
    return np.log(np.abs(chi)) + 1j * unwrapped


def default_u_grid(beta: float, n_points: int = 201) -> np.ndarray:
    """Symmetric grid on [-5 beta, 5 beta]; odd counts place a node at u = 0."""
    return np.linspace(-5.0 * beta, 5.0 * beta, n_points)


def cfw_from_distribution(d: WorkDistribution, u_grid: np.ndarray) -> CfwSamples:
    """chi(u) = sum_k p_k exp(i u w_k), with ln chi unwrapped from u = 0."""
    u = np.asarray(u_grid, dtype=float)
    chi = np.exp(1j * np.outer(u, d.works)) @ d.probabilities.astype(complex)
    rate = float(np.abs(d.works).max(initial=0.0))
    return CfwSamples(u, chi, _unwrapped_log(u, chi, rate))


def cfw_trace(
    u_prop: PropagatorResult,
    spec_i: SpectralDecomposition,
    spec_f: SpectralDecomposition,
    beta: float,
    u_grid: np.ndarray,
) -> CfwSamples:
    """chi(u) = tr[U^dag e^{iuH_f} U e^{-(iu+beta)H_i}] / Z_i, evaluated in eigenbases."""
    m = u_prop.unitary.matrix
    if spec_i.dimension != m.shape[0] or spec_f.dimension != m.shape[0]:
        raise DimensionError("propagator and spectral data dimensions differ")
    u = np.asarray(u_grid, dtype=float)
    p = boltzmann_weights(spec_i, beta)
    kernel = np.abs(spec_f.eigenvectors.conj().T @ m @ spec_i.eigenvectors) ** 2
    right = p[None, :] * np.exp(-1j * np.outer(u, spec_i.eigenvalues))  # (u, n)
    left = np.exp(1j * np.outer(u, spec_f.eigenvalues))  # (u, m)
    chi = np.einsum("um,mn,un->u", left, kernel, right)
    rate = max(
        spec_f.eigenvalues[-1] - spec_i.eigenvalues[0],
        spec_i.eigenvalues[-1] - spec_f.eigenvalues[0],
    )
    return CfwSamples(u, chi, _unwrapped_log(u, chi, float(rate)))


@dataclass(frozen=True)
class JarzynskiReport:
    lhs: float
    rhs: float
    abs_deviation: float


def jarzynski_check(d: WorkDistribution, ln_z_i: float, ln_z_f: float, beta: float) -> JarzynskiReport:
    """<exp(-beta w)> against Z_f / Z_i; exact for the measurement scheme, so the
    deviation bounds numerical error only."""
    lhs = float(d.probabilities @ np.exp(-beta * d.works))
    rhs = float(np.exp(ln_z_f - ln_z_i))
    return JarzynskiReport(lhs=lhs, rhs=rhs, abs_deviation=abs(lhs - rhs))


def average_work(d: WorkDistribution) -> float:
    return float(d.probabilities @ d.works)


def mean_energy_change(
    rho_f: DensityMatrix, h_f: OperatorMatrix, rho_i: DensityMatrix, h_i: OperatorMatrix
) -> float:
    """tr[rho_f H_f] - tr[rho_i H_i]; equals the mean measured work for unitary evolution."""
    if rho_f.dimension != h_f.dimension or rho_i.dimension != h_i.dimension:
        raise DimensionError("state/operator dimension mismatch")
    final = float(np.real(np.trace(rho_f.matrix @ h_f.matrix)))
    initial = float(np.real(np.trace(rho_i.matrix @ h_i.matrix)))
    return final - initial


@dataclass(frozen=True)
class DeltaReport:
    variance: float
    mass_within_epsilon_of_mean: float
    is_delta: bool


def delta_concentration(d: WorkDistribution, epsilon: float) -> DeltaReport:
    """Concentration diagnostic: the distribution is a point mass iff the final
    state is the target thermal state (necessary-condition monitor)."""
    mean = average_work(d)
    variance = float(d.probabilities @ (d.works - mean) ** 2)
    mass = float(d.probabilities[np.abs(d.works - mean) <= epsilon].sum())
    return DeltaReport(
        variance=variance,
        mass_within_epsilon_of_mean=mass,
        is_delta=bool(variance < epsilon**2 and mass >= 1.0 - 1e-10),
    )


@dataclass(frozen=True)
class LinearityReport:
    w0_fit: float
    max_abs_residual: float
    rel_residual: float
    max_abs_re: float


def phase_linearity(c: CfwSamples) -> LinearityReport:
    """Least-squares fit of Im ln chi = w0 u through the origin.

    The residual measures departure from the pure-shift form ln chi = i u w0
    that characterizes Gibbs-to-Gibbs evolutions; |Re ln chi| is reported
    separately (it vanishes only in that case).
    """
    u = c.u_grid
    y = np.imag(c.ln_chi)
    denom = float(u @ u)
    w0 = float(u @ y / denom) if denom > 0 else 0.0
    resid = float(np.abs(y - w0 * u).max())
    scale = abs(w0) * float(np.abs(u).max())
    rel = resid / scale if scale > 0 else np.inf if resid > 0 else 0.0
    return LinearityReport(
        w0_fit=w0,
        max_abs_residual=resid,
        rel_residual=rel,
        max_abs_re=float(np.abs(np.real(c.ln_chi)).max()),
    )


def distribution_to_csv(d: WorkDistribution, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["w", "p"])
        for w, p in zip(d.works, d.probabilities):
            writer.writerow([repr(float(w)), repr(float(p))])


def cfw_to_csv(c: CfwSamples, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "re_chi", "im_chi", "re_ln_chi", "im_ln_chi"])
        for u, chi, ln in zip(c.u_grid, c.chi, c.ln_chi):
            writer.writerow(
                [repr(float(u)), repr(chi.real), repr(chi.imag), repr(ln.real), repr(ln.imag)]
            )
