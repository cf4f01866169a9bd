# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Fused LSTM kernels (gate order i, f, g, o).

Transcendentals go through numpy's vectorized tanh, applied in place on the
kernel's own buffers; sigmoid is evaluated as 0.5 * (tanh(z / 2) + 1) so a
single tanh sweep covers all four gates. Everything else is fused loops.
"""
import numpy as np


cdef _pointwise(double[:, ::1] z, const double[:, ::1] c_prev, object z_arr):
    """In place: pre-activations ``z`` (sigmoid columns pre-halved) -> gate activations."""
    cdef Py_ssize_t B = c_prev.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    cdef Py_ssize_t b, j
    np.tanh(z_arr, out=z_arr)
    c_arr = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] c = c_arr
    with nogil:
        for b in range(B):
            for j in range(H):
                z[b, j] = 0.5 * (z[b, j] + 1.0)
                z[b, H + j] = 0.5 * (z[b, H + j] + 1.0)
                z[b, 3 * H + j] = 0.5 * (z[b, 3 * H + j] + 1.0)
                c[b, j] = z[b, H + j] * c_prev[b, j] + z[b, j] * z[b, 2 * H + j]
    tc_arr = np.tanh(c_arr)
    h_arr = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] tc = tc_arr
    cdef double[:, ::1] h = h_arr
    with nogil:
        for b in range(B):
            for j in range(H):
                h[b, j] = z[b, 3 * H + j] * tc[b, j]
    return z_arr, c_arr, tc_arr, h_arr


def lstm_forward(const double[:, ::1] gates, const double[:, ::1] c_prev):
    cdef Py_ssize_t B = c_prev.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    if gates.shape[0] != B or gates.shape[1] != 4 * H:
        raise ValueError(
            f"lstm_forward: gates ({gates.shape[0]}, {gates.shape[1]}) "
            f"incompatible with cell state ({B}, {H})"
        )
    z_arr = np.empty((B, 4 * H), dtype=np.float64)
    cdef double[:, ::1] z = z_arr
    cdef Py_ssize_t b, j
    with nogil:
        for b in range(B):
            for j in range(4 * H):
                if 2 * H <= j < 3 * H:
                    z[b, j] = gates[b, j]
                else:
                    z[b, j] = 0.5 * gates[b, j]
    return _pointwise(z, c_prev, z_arr)


def lstm_step_forward(
    const double[::1] value,
    const double[::1] w_value,
    const double[:, ::1] fixed,
    const double[:, ::1] hw,
    const double[:, ::1] c_prev,
):
    """Gates = value * w_value + fixed + hw, then the cell update."""
    cdef Py_ssize_t B = c_prev.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    if (value.shape[0] != B or w_value.shape[0] != 4 * H or fixed.shape[0] != B
            or fixed.shape[1] != 4 * H or hw.shape[0] != B or hw.shape[1] != 4 * H):
        raise ValueError(f"lstm_step_forward: operands incompatible with cell state ({B}, {H})")
    z_arr = np.empty((B, 4 * H), dtype=np.float64)
    cdef double[:, ::1] z = z_arr
    cdef Py_ssize_t b, j
    cdef double s
    with nogil:
        for b in range(B):
            for j in range(4 * H):
                s = value[b] * w_value[j] + fixed[b, j] + hw[b, j]
                if 2 * H <= j < 3 * H:
                    z[b, j] = s
                else:
                    z[b, j] = 0.5 * s
    return _pointwise(z, c_prev, z_arr)


def lstm_backward(
    const double[:, ::1] dh,
    const double[:, ::1] dc,
    const double[:, ::1] acts,
    const double[:, ::1] c_prev,
    const double[:, ::1] tanh_c,
):
    cdef Py_ssize_t B = c_prev.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    dgates_arr = np.empty((B, 4 * H), dtype=np.float64)
    dc_prev_arr = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] dgates = dgates_arr
    cdef double[:, ::1] dc_prev = dc_prev_arr
    cdef Py_ssize_t b, j
    cdef double i_, f_, g_, o_, t_, dct
    with nogil:
        for b in range(B):
            for j in range(H):
                i_ = acts[b, j]
                f_ = acts[b, H + j]
                g_ = acts[b, 2 * H + j]
                o_ = acts[b, 3 * H + j]
                t_ = tanh_c[b, j]
                dct = dc[b, j] + dh[b, j] * o_ * (1.0 - t_ * t_)
                dgates[b, j] = dct * g_ * i_ * (1.0 - i_)
                dgates[b, H + j] = dct * c_prev[b, j] * f_ * (1.0 - f_)
                dgates[b, 2 * H + j] = dct * i_ * (1.0 - g_ * g_)
                dgates[b, 3 * H + j] = dh[b, j] * t_ * o_ * (1.0 - o_)
                dc_prev[b, j] = dct * f_
    return dgates_arr, dc_prev_arr
