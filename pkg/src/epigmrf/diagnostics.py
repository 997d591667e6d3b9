"""Chain quality diagnostics: effective sample size and split R-hat."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

MIN_DRAWS = 100


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalised autocorrelation function via FFT."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    centred = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centred, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    if acov[0] <= 0.0:
        return np.zeros(n)
    return acov / acov[0]


def ess(x: np.ndarray) -> float:
    """Effective sample size, autocorrelation sum truncated at the first
    negative even/odd pair; constant series report the sentinel 1."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 2 or np.var(x) == 0.0:
        return 1.0
    rho = autocorrelation(x)
    total = 0.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0.0:
            break
        total += pair
        t += 2
    tau_int = 1.0 + 2.0 * total
    return float(min(max(n / tau_int, 1.0), n))


def split_rhat(chains) -> float:
    """Potential scale reduction over split chain halves.

    Accepts one or more 1-d arrays; each is split in half before the usual
    between/within variance comparison.
    """
    halves = []
    for c in chains:
        c = np.asarray(c, dtype=np.float64)
        half = c.size // 2
        if half < 2:
            raise ConfigError("chains too short to split")
        halves.append(c[:half])
        halves.append(c[half : 2 * half])
    n = min(h.size for h in halves)
    seqs = np.stack([h[:n] for h in halves])
    within = seqs.var(axis=1, ddof=1).mean()
    between = n * seqs.mean(axis=1).var(ddof=1)
    if within == 0.0:
        return 1.0
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def summarize(draw_matrix: np.ndarray, names) -> list[dict]:
    """Per-parameter mean, sd and ESS for a (draws, params) matrix."""
    draw_matrix = np.asarray(draw_matrix, dtype=np.float64)
    if draw_matrix.shape[0] < MIN_DRAWS:
        raise ConfigError(f"need at least {MIN_DRAWS} post-burn-in draws for diagnostics")
    rows = []
    for j, name in enumerate(names):
        col = draw_matrix[:, j]
        rows.append(
            {
                "parameter": name,
                "mean": float(col.mean()),
                "sd": float(col.std(ddof=1)),
                "ess": ess(col),
            }
        )
    return rows
