"""GAMP on a small compressed-sensing problem.

A 16 x 16 image with 10 nonzero Haar coefficients is observed through 128
random rows of the unitary DFT. The script prints the recovery error and
the estimated Laplace rate and noise variance, noiseless and at 30 dB.
"""

import numpy as np

from vfaqmri.gamp import GampConfig, run_linear_stage
from vfaqmri.operator import ForwardOp, apply
from vfaqmri.wavelet import WaveletSpec, dwt2


def instance(seed, snr_db=None, n=16, m=128, k=10):
    rng = np.random.default_rng(seed)
    v = np.zeros(n * n, complex)
    idx = rng.choice(n * n, k, replace=False)
    v[idx] = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    v = v.reshape(n, n)
    mask = np.zeros(n * n, bool)
    mask[rng.choice(n * n, m, replace=False)] = True
    mask = mask.reshape(1, n, n)
    ws = WaveletSpec(1, 1)
    y = apply(ForwardOp(mask, wavelet=ws), v[None])
    tau = 0.0
    if snr_db is not None:
        tau = np.sum(np.abs(y) ** 2) / m / 10 ** (snr_db / 10)
        y = y + np.sqrt(tau / 2) * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)) * mask
    return v, mask, y, ws, tau


def main():
    for snr in (None, 30.0):
        for seed in range(5):
            v, mask, y, ws, tau = instance(seed, snr)
            mu, _, st = run_linear_stage(y, mask, GampConfig(wavelet=ws))
            nmse = np.sum(np.abs(dwt2(mu[0], ws) - v) ** 2) / np.sum(np.abs(v) ** 2)
            label = "noiseless" if snr is None else f"{snr:g} dB"
            extra = "" if snr is None else f"  tau_w/truth {st.tau_w / tau:.2f}"
            print(f"{label:9} seed {seed}: NMSE {nmse:.1e} in {st.iter:3d} iterations, "
                  f"lambda {st.lam[0]:.3g}{extra}")


if __name__ == "__main__":
    main()
