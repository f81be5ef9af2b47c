"""Block detectors for the tag bit: exact LRTs and a calibrated energy detector.

All detectors are immutable after construction and decide on one (m, n) block
at a time; a log-likelihood ratio (or energy margin) of exactly zero resolves
to c = 0 so that ties are deterministic.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .simcore import _crandn, sample_source


def _as_block_matrix(x):
    """Accept either a TagSymbolBlock or a raw (m, n) array."""
    x = getattr(x, "x", x)
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError("block must be a 2-D (m, n) array")
    return x


@dataclass(frozen=True)
class GaussianLrtDetector:
    """Exact LRT for a complex-Gaussian ambient source.

    Under c = 1 the block columns are CN(0, sigma1) with
    sigma1 = sigma_s2 * w w^H + sigma_u2 * I, under c = 0 they are
    CN(0, sigma0) with h in place of w.  The log-likelihood ratio of a block
    is sum_n [ln det sigma0 - ln det sigma1 + x_n^H (sigma0^-1 - sigma1^-1) x_n].
    """

    sigma1: np.ndarray
    sigma0: np.ndarray
    sigma1_inv: np.ndarray = field(repr=False)
    sigma0_inv: np.ndarray = field(repr=False)
    logdet_ratio: float  # ln det sigma0 - ln det sigma1, per column

    @classmethod
    def from_channel(cls, channel, sigma_s2, sigma_u2):
        if sigma_u2 <= 0:
            raise ValueError("sigma_u2 must be positive (otherwise the "
                             "rank-1 signal covariance is singular)")
        if sigma_s2 < 0:
            raise ValueError("sigma_s2 must be nonnegative")
        m = channel.h.shape[0]
        eye = np.eye(m)
        sigma1 = sigma_s2 * np.outer(channel.w, channel.w.conj()) + sigma_u2 * eye
        sigma0 = sigma_s2 * np.outer(channel.h, channel.h.conj()) + sigma_u2 * eye
        inv1, logdet1 = _chol_inverse_logdet(sigma1)
        inv0, logdet0 = _chol_inverse_logdet(sigma0)
        return cls(sigma1=sigma1, sigma0=sigma0, sigma1_inv=inv1,
                   sigma0_inv=inv0, logdet_ratio=float(logdet0 - logdet1))

    def llr(self, x):
        """Log-likelihood ratio of one block."""
        return float(self.llr_batch(_as_block_matrix(x)[None, :, :])[0])

    def llr_batch(self, xs):
        """Log-likelihood ratios of a (b, m, n) stack of blocks."""
        xs = np.asarray(xs)
        diff = self.sigma0_inv - self.sigma1_inv
        # sum_n x_n^H A x_n = sum over entries of conj(X) * (A @ X)
        quad = np.einsum("bmn,mk,bkn->b", xs.conj(), diff, xs).real
        return quad + xs.shape[2] * self.logdet_ratio

    def decide(self, x):
        """Detected tag bit: c = 1 iff the log-likelihood ratio is positive."""
        return int(self.llr(x) > 0.0)


def _chol_inverse_logdet(sigma):
    """Inverse and log-determinant of a Hermitian positive-definite matrix."""
    factor = cho_factor(sigma, lower=True)
    inv = cho_solve(factor, np.eye(sigma.shape[0], dtype=sigma.dtype))
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0]).real))
    return inv, float(logdet)


@dataclass(frozen=True)
class ModulatedLrtDetector:
    """Exact LRT for a Q-ary modulated ambient source.

    Marginalizing the unknown source symbol over the constellation gives the
    per-column statistic logsumexp_q(-||x_n - w S_q||^2 / sigma_u2) minus the
    same expression with h; the common 1/(pi^m sigma_u2^m Q) factors cancel.
    """

    w: np.ndarray
    h: np.ndarray
    constellation: np.ndarray
    sigma_u2: float

    @classmethod
    def from_channel(cls, channel, constellation, sigma_u2):
        if sigma_u2 <= 0:
            raise ValueError("sigma_u2 must be positive")
        constellation = np.asarray(constellation, dtype=np.complex128)
        if constellation.ndim != 1 or constellation.size == 0:
            raise ValueError("constellation must be a nonempty 1-D array")
        return cls(w=channel.w, h=channel.h, constellation=constellation,
                   sigma_u2=float(sigma_u2))

    def llr(self, x):
        """Log-likelihood ratio of one block."""
        return float(self.llr_batch(_as_block_matrix(x)[None, :, :])[0])

    def llr_batch(self, xs):
        """Log-likelihood ratios of a (b, m, n) stack of blocks."""
        xs = np.asarray(xs)
        return self._hypothesis_loglik(xs, self.w) - self._hypothesis_loglik(xs, self.h)

    def _hypothesis_loglik(self, xs, beam):
        # points[m, q] = beam_m * S_q; dist2[b, q, n] = ||x_n - beam*S_q||^2
        points = np.outer(beam, self.constellation)
        diff = xs[:, :, None, :] - points[None, :, :, None]
        dist2 = np.einsum("bmqn,bmqn->bqn", diff.conj(), diff).real
        # logsumexp over q is max-shifted internally, so large sigma_s2/sigma_u2
        # ratios do not underflow the per-symbol exponentials
        return logsumexp(-dist2 / self.sigma_u2, axis=1).sum(axis=1)

    def decide(self, x):
        """Detected tag bit: c = 1 iff the log-likelihood ratio is positive."""
        return int(self.llr(x) > 0.0)


def energy_statistic(x):
    """Total received energy of a block: sum_n ||x_n||^2 (squared Frobenius)."""
    x = _as_block_matrix(x)
    return float(np.sum(np.abs(x) ** 2))


@dataclass(frozen=True)
class EnergyDetector:
    """Threshold test on the block energy.

    decide_high chooses the comparison direction: with a weak tag path the
    sign of E||w||^2 - E||h||^2 is random across channel draws (the zero-mean
    cross term of w = h + alpha*f*g dominates), so a genie-aided detector must
    calibrate the polarity along with the threshold.  Energy exactly equal to
    gamma resolves to c = 0.
    """

    gamma: float
    decide_high: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")

    def decide(self, x):
        e = energy_statistic(x)
        return int(e > self.gamma) if self.decide_high else int(e < self.gamma)

    def decide_batch(self, xs):
        e = np.sum(np.abs(np.asarray(xs)) ** 2, axis=(1, 2))
        return (e > self.gamma).astype(int) if self.decide_high else (e < self.gamma).astype(int)


def _calibration_energies(ch, params, trials, rng, chunk=8192):
    """Energies and labels of `trials` alternating-label blocks (vectorized).

    Per chunk, all source symbols are drawn first and then all noise samples;
    the labels alternate 1, 0, 1, ... so the calibration set is balanced.
    """
    source = params.effective_source()
    energies = np.empty(trials)
    labels = (1 - np.arange(trials) % 2).astype(int)
    sqrt_u = np.sqrt(params.sigma_u2)
    for start in range(0, trials, chunk):
        count = min(chunk, trials - start)
        s = sample_source(rng, source, count * params.n).reshape(count, params.n)
        u = sqrt_u * _crandn(rng, count, params.m, params.n)
        beams = np.where(labels[start:start + count, None] == 1,
                         ch.w[None, :], ch.h[None, :])
        x = beams[:, :, None] * s[:, None, :] + u
        energies[start:start + count] = np.sum(np.abs(x) ** 2, axis=(1, 2))
    return energies, labels


def calibrate_ed_threshold(ch, params, trials, rng):
    """Calibrate an EnergyDetector by empirical error minimization.

    Scans every threshold interval of the sorted calibration energies (both
    polarities) and returns the detector minimizing the empirical error
    count, with gamma at the midpoint of the optimal interval.
    """
    if trials < 1000:
        raise ValueError("calibration needs at least 1000 blocks")
    energies, labels = _calibration_energies(ch, params, trials, rng)
    order = np.argsort(energies, kind="stable")
    sorted_e = energies[order]
    sorted_labels = labels[order]
    total_ones = int(sorted_labels.sum())

    # ones_below[k] = number of label-1 blocks among the k smallest energies.
    ones_below = np.concatenate(([0], np.cumsum(sorted_labels)))
    ks = np.arange(trials + 1)
    # decide_high: the k smallest are decided 0, the rest decided 1
    errors_high = ones_below + ((trials - ks) - (total_ones - ones_below))
    # decide_low: the k smallest are decided 1, the rest decided 0
    errors_low = (ks - ones_below) + (total_ones - ones_below)

    best_high = int(np.argmin(errors_high))
    best_low = int(np.argmin(errors_low))
    if errors_high[best_high] <= errors_low[best_low]:
        decide_high, best_k = True, best_high
    else:
        decide_high, best_k = False, best_low

    if best_k == 0:
        gamma = sorted_e[0] / 2.0
    elif best_k == trials:
        gamma = 2.0 * sorted_e[-1] if sorted_e[-1] > 0 else 1.0
    else:
        gamma = (sorted_e[best_k - 1] + sorted_e[best_k]) / 2.0
    return EnergyDetector(gamma=float(max(gamma, 0.0)), decide_high=decide_high)
