"""Source-to-distortion ratios: filtered-projection SDR and scale-invariant SDR."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import signal as sps

SDR_CAP_DB = 100.0
BSS_PROJ = "BSS_PROJ"
SI_SDR = "SI_SDR"
RIDGE = 1e-10
RESID_TOL = 1e-8


@dataclass(frozen=True)
class SdrReport:
    sdr_db: float
    variant: str
    filter_taps: int = 0
    regularized: bool = False


def _as_array(x):
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def _ratio_db(num, den):
    if den <= 0 or num / den >= 10 ** (SDR_CAP_DB / 10):
        return SDR_CAP_DB
    if num <= 0:
        return -SDR_CAP_DB
    return max(-SDR_CAP_DB, 10.0 * np.log10(num / den))


def si_sdr(estimate, reference):
    """Scale-invariant SDR in dB, capped at 100 dB."""
    est, ref = _as_array(estimate), _as_array(reference)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = float(ref @ ref)
    if ref_energy == 0:
        raise ValueError("reference signal is all zeros")
    alpha = float(est @ ref) / ref_energy
    target = alpha * ref
    resid = target - est
    return SdrReport(_ratio_db(float(target @ target), float(resid @ resid)), SI_SDR)


def sdr_bss(estimate, reference, filter_taps=512):
    """SDR with distortion measured after the best ``filter_taps``-tap filter.

    The estimate (zero-padded by ``filter_taps - 1``) is projected by least
    squares onto the reference and its delays ``0..filter_taps-1``; the
    Gram matrix of these delayed copies is the Toeplitz autocorrelation of
    the reference.
    """
    est, ref = _as_array(estimate), _as_array(reference)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    n = len(ref)
    if n < filter_taps:
        raise ValueError(f"signals of {n} samples are shorter than {filter_taps} taps")
    if not np.any(ref):
        raise ValueError("reference signal is all zeros")
    n_fft = 1 << int(np.ceil(np.log2(n + filter_taps - 1)))
    ref_f = np.fft.rfft(ref, n_fft)
    est_f = np.fft.rfft(est, n_fft)
    autocorr = np.fft.irfft(np.abs(ref_f) ** 2, n_fft)[:filter_taps]
    xcorr = np.fft.irfft(np.conj(ref_f) * est_f, n_fft)[:filter_taps]
    regularized = False
    try:
        coef = scipy.linalg.solve_toeplitz(autocorr, xcorr)
        if not np.all(np.isfinite(coef)):
            raise np.linalg.LinAlgError("non-finite solution")
        # any exact solution of the normal equations gives the same projection,
        # so only a poor residual (not a large condition number) needs the ridge
        check = scipy.linalg.matmul_toeplitz(autocorr, coef)
        if np.linalg.norm(check - xcorr) > RESID_TOL * max(np.linalg.norm(xcorr), autocorr[0]):
            raise np.linalg.LinAlgError("inaccurate Levinson solution")
    except np.linalg.LinAlgError:
        regularized = True
        gram = scipy.linalg.toeplitz(autocorr) + RIDGE * autocorr[0] * np.eye(filter_taps)
        coef = np.linalg.solve(gram, xcorr)
    proj = sps.fftconvolve(ref, coef)
    padded = np.concatenate([est, np.zeros(filter_taps - 1)])
    resid = padded - proj
    return SdrReport(
        _ratio_db(float(proj @ proj), float(resid @ resid)), BSS_PROJ, filter_taps, regularized
    )


def sdr(estimate, reference, variant=BSS_PROJ, filter_taps=512):
    if variant == BSS_PROJ:
        return sdr_bss(estimate, reference, filter_taps)
    if variant == SI_SDR:
        return si_sdr(estimate, reference)
    raise ValueError(f"unknown SDR variant {variant!r}")
