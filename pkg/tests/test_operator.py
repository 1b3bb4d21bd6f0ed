import numpy as np
import pytest

from vfaqmri.operator import ForwardOp, adjoint, apply, fft2c, ifft2c
from vfaqmri.phantom import coil_maps
from vfaqmri.wavelet import WaveletSpec


def _crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_impulse_gives_flat_spectrum():
    x = np.zeros((1, 16, 16), complex)
    x[0, 8, 8] = 1.0  # the centred origin voxel
    y = apply(ForwardOp(np.ones((1, 16, 16), bool)), x)
    assert np.allclose(np.abs(y), 1.0 / 16.0, rtol=1e-14)


def test_zero_maps_to_zero():
    op = ForwardOp(np.ones((2, 8, 8), bool), wavelet=WaveletSpec(2, 2))
    assert not np.any(apply(op, np.zeros((2, 8, 8), complex)))
    assert not np.any(adjoint(op, np.zeros((2, 8, 8), complex)))


def test_unitary_fft(rng):
    x = _crandn(rng, (32, 32))
    assert np.linalg.norm(fft2c(x)) == pytest.approx(np.linalg.norm(x), rel=1e-13)
    assert np.allclose(ifft2c(fft2c(x)), x, atol=1e-13)


def test_projection_norm(rng):
    x = _crandn(rng, (1, 32, 32))
    mask = rng.random((1, 32, 32)) < 0.3
    assert np.linalg.norm(apply(ForwardOp(mask), x)) <= np.linalg.norm(x)
    full = apply(ForwardOp(np.ones_like(mask)), x)
    assert np.linalg.norm(full) == pytest.approx(np.linalg.norm(x), rel=1e-13)
    assert np.allclose(adjoint(ForwardOp(np.ones_like(mask)), full), x, atol=1e-12)


@pytest.mark.parametrize("with_sens", [False, True])
@pytest.mark.parametrize("with_wavelet", [False, True])
def test_adjoint_dot_product(rng, with_sens, with_wavelet):
    shape = (32, 32)
    worst = 0.0
    for trial in range(100):
        mask = rng.random((2,) + shape) < 0.4
        sens = coil_maps(shape, 4, seed=trial) if with_sens else None
        op = ForwardOp(mask, sens=sens, wavelet=WaveletSpec(4, 3) if with_wavelet else None)
        x = _crandn(rng, (2,) + shape)
        ysh = (2, 4) + shape if with_sens else (2,) + shape
        kmask = mask[:, None] if with_sens else mask
        y = _crandn(rng, ysh) * kmask
        lhs = np.vdot(apply(op, x), y)
        rhs = np.vdot(x, adjoint(op, y))
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y)))
    assert worst <= 1e-12


def test_apply_adjoint_identity_on_samples(rng):
    mask = rng.random((1, 16, 16)) < 0.5
    op = ForwardOp(mask)
    y = _crandn(rng, (1, 16, 16)) * mask
    assert np.allclose(apply(op, adjoint(op, y)), y, atol=1e-13)


def test_shape_mismatch():
    op = ForwardOp(np.ones((1, 8, 8), bool))
    with pytest.raises(ValueError):
        apply(op, np.zeros((1, 8, 4)))
    with pytest.raises(ValueError):
        adjoint(op, np.zeros((1, 4, 8)))


def test_coil_maps_unit_energy():
    s = coil_maps((16, 16), 6, seed=2)
    assert np.allclose(np.sum(np.abs(s) ** 2, axis=0), 1.0)
