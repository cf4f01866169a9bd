"""Central finite-difference checks for the tensor primitives and the model loss.

The numeric side only ever calls forward evaluations, so it is independent of
the tape and of every backward rule it verifies.
"""
from dataclasses import dataclass

import numpy as np

from . import numcore as nc

FD_STEP = 1e-5
REL_TOL = 1e-4
# Entries whose gradients are this small are compared on an absolute scale.
REL_FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    passed: bool


def numeric_gradient(fn, arrays, step=FD_STEP):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. every array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn(*arrays)
            flat[i] = orig - step
            down = fn(*arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def tape_gradient(fn, arrays):
    leaves = [nc.Tensor(a.copy(), requires_grad=True) for a in arrays]
    with nc.Tape() as tape:
        loss = fn(*leaves)
    return nc.backward(tape, loss, wrt=leaves)


def check(name, fn, arrays, step=FD_STEP, tol=REL_TOL):
    """Compare tape gradients of ``fn`` (Tensors -> scalar Tensor) with central differences."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    analytic = tape_gradient(fn, arrays)

    def value(*arrs):
        return fn(*[nc.Tensor(a) for a in arrs]).item()

    numeric = numeric_gradient(value, [a.copy() for a in arrays], step)
    err = relative_error(analytic, numeric)
    return CheckResult(name, err, err < tol)


def _away_from_zero(rng, shape, low=0.1):
    # keeps abs/relu kinks farther than the FD step from every sample
    return rng.uniform(low, 1.0, shape) * rng.choice([-1.0, 1.0], shape)


def primitive_cases(rng):
    """One randomized case per primitive: (name, fn, input arrays)."""
    w3 = rng.normal(size=(3, 4))

    def readout(t):
        # weighted sum so every output entry carries a distinct gradient
        w = np.linspace(0.5, 1.5, t.data.size).reshape(t.shape)
        return nc.sum(nc.mul(t, w))

    ids = np.array([2, 0, 2, 1])
    return [
        ("matmul", lambda a, b: readout(nc.matmul(a, b)), [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]),
        ("add", lambda a, b: readout(nc.add(a, b)), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        ("add-row", lambda a, b: readout(nc.add(a, b)), [rng.normal(size=(3, 4)), rng.normal(size=4)]),
        ("sub", lambda a, b: readout(nc.sub(a, b)), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        ("mul", lambda a, b: readout(nc.mul(a, b)), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        ("concat", lambda a, b: readout(nc.concat([a, b])), [rng.normal(size=(3, 2)), rng.normal(size=(3, 3))]),
        ("slice", lambda a: readout(nc.slice(a, 1, 3)), [rng.normal(size=(3, 4))]),
        ("slice-rows", lambda a: readout(nc.slice(a, 1, 3, axis=0)), [rng.normal(size=(4, 3))]),
        ("sigmoid", lambda a: readout(nc.sigmoid(a)), [rng.normal(size=(3, 4)) * 2]),
        ("tanh", lambda a: readout(nc.tanh(a)), [rng.normal(size=(3, 4)) * 2]),
        ("relu", lambda a: readout(nc.relu(a)), [_away_from_zero(rng, (3, 4))]),
        ("square", lambda a: readout(nc.square(a)), [rng.normal(size=(3, 4))]),
        ("abs", lambda a: readout(nc.abs(a)), [_away_from_zero(rng, (3, 4))]),
        ("mean", lambda a: nc.mean(nc.square(a)), [rng.normal(size=(3, 4))]),
        ("sum", lambda a: nc.sum(nc.matmul(a, w3)), [rng.normal(size=(2, 3))]),
        ("euclidean_distance", lambda a, b: readout(nc.euclidean_distance(a, b)),
         [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        ("embedding", lambda t: readout(nc.embedding(t, ids)), [rng.normal(size=(4, 3))]),
        ("l2_normalize", lambda a: readout(nc.l2_normalize(a)), [rng.normal(size=(3, 4))]),
        ("lstm_cell", lambda g, c: readout(nc.concat(list(nc.lstm_cell(g, c)))),
         [rng.normal(size=(2, 12)), rng.normal(size=(2, 3))]),
        ("lstm_step", lambda v, wv, fx, h, wh, c: readout(nc.concat(list(nc.lstm_step(v, wv, fx, h, wh, c)))),
         [rng.normal(size=(2, 1)), rng.normal(size=(1, 12)), rng.normal(size=(2, 12)),
          rng.normal(size=(2, 3)), rng.normal(size=(3, 12)) * 0.5, rng.normal(size=(2, 3))]),
    ]


def check_primitives(trials=20, seed=0):
    """Run every primitive case ``trials`` times; one result per primitive (worst trial)."""
    rng = np.random.default_rng(seed)
    worst = {}
    for _ in range(trials):
        for name, fn, arrays in primitive_cases(rng):
            res = check(name, fn, arrays)
            if name not in worst or res.max_rel_error > worst[name].max_rel_error:
                worst[name] = res
    return list(worst.values())


def check_model(seed=0, hidden=4, feat_size=2):
    """End-to-end total_loss gradient check on a 2-sample batch, both knowledge switches on."""
    from .model import KernConfig, model_gradcheck_problem

    config = KernConfig(
        input_len=5, output_len=3, ext_kg=True, int_kg=True, triplet_lambda=0.5,
        sample_range=1, feat_size=feat_size, rnn_hidden_size=hidden, margin=0.5, seed=seed,
    )
    names, arrays, fn = model_gradcheck_problem(config, seed)
    analytic = tape_gradient(fn, arrays)

    def value(*arrs):
        return fn(*[nc.Tensor(a) for a in arrs]).item()

    numeric = numeric_gradient(value, [a.copy() for a in arrays])
    results = []
    for name, a, n in zip(names, analytic, numeric):
        err = relative_error([a], [n])
        results.append(CheckResult(f"total_loss/{name}", err, err < REL_TOL))
    return results
