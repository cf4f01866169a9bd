"""Compare the compiled LSTM kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--batch 64] [--hidden 50] [--repeat 200]

Reports per-call times for the fused step forward and backward kernels, then
the wall time of one training epoch on a 32-series synthetic set.
"""
import argparse
import time
import timeit

import numpy as np

from trendkern import pipeline
from trendkern.dataio import generate_synthetic
from trendkern.knowledge import modulo_taxonomy
from trendkern.model import KernConfig
from trendkern.numcore import kernels


def kernel_times(batch, hidden, repeat):
    rng = np.random.default_rng(0)
    value, w_value = rng.normal(size=batch), rng.normal(size=4 * hidden)
    fixed, hw = rng.normal(size=(batch, 4 * hidden)), rng.normal(size=(batch, 4 * hidden))
    c_prev = rng.normal(size=(batch, hidden))
    acts, _, tanh_c, _ = kernels.lstm_step_forward(value, w_value, fixed, hw, c_prev)
    dh, dc = rng.normal(size=(batch, hidden)), rng.normal(size=(batch, hidden))
    fwd = min(timeit.repeat(lambda: kernels.lstm_step_forward(value, w_value, fixed, hw, c_prev),
                            number=repeat, repeat=5)) / repeat
    bwd = min(timeit.repeat(lambda: kernels.lstm_backward(dh, dc, acts, c_prev, tanh_c),
                            number=repeat, repeat=5)) / repeat
    return fwd, bwd


def epoch_time(hidden, batch):
    ds = generate_synthetic(4, 8, 104, seed=0)
    config = KernConfig(input_len=26, output_len=13, sample_range=50, rnn_hidden_size=hidden, seed=0)
    settings = pipeline.TrainSettings(epochs=2, batch_size=batch, lr=0.005)
    data = pipeline.prepare(ds, config, modulo_taxonomy(8, 4))
    t0 = time.perf_counter()
    pipeline.train(config, settings, ds, data=data)
    return (time.perf_counter() - t0) / settings.epochs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--hidden", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--skip-epoch", action="store_true")
    args = ap.parse_args()

    backends = kernels.available_backends()
    if len(backends) < 2:
        print("compiled kernels are not built; only the numpy fallback is available")
    start = kernels.active_backend()
    rows = []
    for name in backends:
        kernels.use_backend(name)
        fwd, bwd = kernel_times(args.batch, args.hidden, args.repeat)
        epoch = None if args.skip_epoch else epoch_time(args.hidden, args.batch)
        rows.append((name, fwd, bwd, epoch))
    kernels.use_backend(start)

    print(f"batch={args.batch} hidden={args.hidden}")
    print(f"{'backend':<10}{'step fwd (us)':>15}{'step bwd (us)':>15}{'epoch (s)':>12}")
    for name, fwd, bwd, epoch in rows:
        ep = "-" if epoch is None else f"{epoch:.2f}"
        print(f"{name:<10}{fwd * 1e6:>15.1f}{bwd * 1e6:>15.1f}{ep:>12}")
    if len(rows) == 2:
        (_, f0, b0, e0), (_, f1, b1, e1) = rows
        msg = f"speedup of {rows[0][0]} over {rows[1][0]}: fwd {f1 / f0:.2f}x, bwd {b1 / b0:.2f}x"
        if e0 and e1:
            msg += f", epoch {e1 / e0:.2f}x"
        print(msg)


if __name__ == "__main__":
    main()
