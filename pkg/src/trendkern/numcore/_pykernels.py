"""Pure-numpy reference for the fused LSTM kernels.

Same contract as the compiled ``_lstm_kernels`` module.
"""
import numpy as np


def _pointwise(z, c_prev):
    # z holds pre-activations with the sigmoid columns already halved
    H = c_prev.shape[1]
    np.tanh(z, out=z)
    for lo in (0, H, 3 * H):
        z[:, lo:lo + H] += 1.0
        z[:, lo:lo + H] *= 0.5
    i, f, g, o = z[:, :H], z[:, H:2 * H], z[:, 2 * H:3 * H], z[:, 3 * H:]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    return z, c, tanh_c, o * tanh_c


def _halve_sigmoid_columns(z, H):
    z[:, :2 * H] *= 0.5
    z[:, 3 * H:] *= 0.5
    return z


def lstm_forward(gates, c_prev):
    B, H = c_prev.shape
    if gates.shape != (B, 4 * H):
        raise ValueError(
            f"lstm_forward: gates {gates.shape} incompatible with cell state {(B, H)}"
        )
    return _pointwise(_halve_sigmoid_columns(gates.copy(), H), c_prev)


def lstm_step_forward(value, w_value, fixed, hw, c_prev):
    B, H = c_prev.shape
    if value.shape != (B,) or w_value.shape != (4 * H,) or fixed.shape != (B, 4 * H) or hw.shape != (B, 4 * H):
        raise ValueError(f"lstm_step_forward: operands incompatible with cell state {(B, H)}")
    z = value[:, None] * w_value + fixed + hw
    return _pointwise(_halve_sigmoid_columns(z, H), c_prev)


def lstm_backward(dh, dc, acts, c_prev, tanh_c):
    H = c_prev.shape[1]
    i, f, g, o = acts[:, :H], acts[:, H:2 * H], acts[:, 2 * H:3 * H], acts[:, 3 * H:]
    dct = dc + dh * o * (1.0 - tanh_c * tanh_c)
    dgates = np.empty_like(acts)
    dgates[:, :H] = dct * g * i * (1.0 - i)
    dgates[:, H:2 * H] = dct * c_prev * f * (1.0 - f)
    dgates[:, 2 * H:3 * H] = dct * i * (1.0 - g * g)
    dgates[:, 3 * H:] = dh * tanh_c * o * (1.0 - o)
    return dgates, dct * f
