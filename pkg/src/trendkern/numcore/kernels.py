"""Backend selection for the fused LSTM cell.

The compiled Cython module is used when it was built; otherwise the numpy
implementation is used. ``use_backend`` switches explicitly (tests and the
benchmark compare the two).
"""
import numpy as np

from . import _pykernels

try:
    from . import _lstm_kernels as _native
except ImportError:  # extension not built
    _native = None

_BACKENDS = {"python": _pykernels}
if _native is not None:
    _BACKENDS["cython"] = _native

_active = _native if _native is not None else _pykernels


def available_backends():
    return sorted(_BACKENDS)


def active_backend():
    return "cython" if _active is _native and _native is not None else "python"


def use_backend(name):
    """Select ``"cython"`` or ``"python"``; returns the previous backend name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    previous = active_backend()
    _active = _BACKENDS[name]
    return previous


def lstm_forward(gates, c_prev):
    """Return ``(acts, c, tanh_c, h)`` for pre-activation ``gates`` (B, 4H)."""
    return _active.lstm_forward(
        np.ascontiguousarray(gates, dtype=np.float64),
        np.ascontiguousarray(c_prev, dtype=np.float64),
    )


def lstm_step_forward(value, w_value, fixed, hw, c_prev):
    """Fused step: gates = value * w_value + fixed + hw, then the cell update.

    ``value`` is (B,), ``w_value`` (4H,); returns ``(acts, c, tanh_c, h)``.
    """
    f64 = np.float64
    return _active.lstm_step_forward(
        np.ascontiguousarray(value, dtype=f64).reshape(-1),
        np.ascontiguousarray(w_value, dtype=f64).reshape(-1),
        np.ascontiguousarray(fixed, dtype=f64),
        np.ascontiguousarray(hw, dtype=f64),
        np.ascontiguousarray(c_prev, dtype=f64),
    )


def lstm_backward(dh, dc, acts, c_prev, tanh_c):
    """Return ``(dgates, dc_prev)`` given upstream gradients of h and c."""
    return _active.lstm_backward(
        np.ascontiguousarray(dh, dtype=np.float64),
        np.ascontiguousarray(dc, dtype=np.float64),
        acts,
        np.ascontiguousarray(c_prev, dtype=np.float64),
        tanh_c,
    )
