"""Benchmark the LSTM kernels on both backends (numba jit vs pure numpy).

Runs itself in a subprocess per backend because the backend is chosen at
import time via the LBTSHARE_NUMBA environment variable.

Usage: python3 benchmarks/bench_kernels.py [--seq-len 50] [--batch 64]
       [--input-dim 64] [--hidden 128] [--repeats 20]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def run_one(args):
    import numpy as np

    from lbtshare import kernels

    rng = np.random.default_rng(0)
    T, B, I, H = args.seq_len, args.batch, args.input_dim, args.hidden
    x = rng.standard_normal((T, B, I))
    wx = rng.standard_normal((I, 4 * H)) * 0.1
    wh = rng.standard_normal((H, 4 * H)) * 0.1
    b = np.zeros(4 * H)
    h0 = np.zeros((B, H))
    c0 = np.zeros((B, H))

    # warm-up (includes jit compilation on the numba backend)
    h_seq, c_seq, gates = kernels.lstm_forward(x, wx, wh, b, h0, c0)
    dh = np.ones((B, H))
    kernels.lstm_backward(x, wx, wh, h_seq, c_seq, gates, h0, c0, dh)

    t0 = time.perf_counter()
    for _ in range(args.repeats):
        h_seq, c_seq, gates = kernels.lstm_forward(x, wx, wh, b, h0, c0)
    fwd = (time.perf_counter() - t0) / args.repeats

    t0 = time.perf_counter()
    for _ in range(args.repeats):
        kernels.lstm_backward(x, wx, wh, h_seq, c_seq, gates, h0, c0, dh)
    bwd = (time.perf_counter() - t0) / args.repeats

    print(json.dumps({
        "backend": kernels.backend_name(),
        "forward_ms": fwd * 1e3,
        "backward_ms": bwd * 1e3,
        "checksum": float(h_seq[-1].sum()),
    }))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seq-len", type=int, default=50)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--input-dim", type=int, default=64)
    ap.add_argument("--hidden", type=int, default=128)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()

    if args.worker:
        run_one(args)
        return

    results = []
    for flag in ("1", "0"):
        env = dict(os.environ, LBTSHARE_NUMBA=flag)
        cmd = [sys.executable, os.path.abspath(__file__), "--worker",
               "--seq-len", str(args.seq_len), "--batch", str(args.batch),
               "--input-dim", str(args.input_dim), "--hidden", str(args.hidden),
               "--repeats", str(args.repeats)]
        out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        results.append(json.loads(out.stdout.strip().splitlines()[-1]))

    print(f"shape: T={args.seq_len} B={args.batch} I={args.input_dim} H={args.hidden}")
    for r in results:
        print(f"{r['backend']:>6}: forward {r['forward_ms']:8.2f} ms   "
              f"backward {r['backward_ms']:8.2f} ms")
    if abs(results[0]["checksum"] - results[1]["checksum"]) > 1e-9:
        raise SystemExit("backends disagree on the forward checksum")
    speedup = results[1]["forward_ms"] / results[0]["forward_ms"]
    print(f"forward speedup ({results[0]['backend']} over {results[1]['backend']}): {speedup:.2f}x")


if __name__ == "__main__":
    main()
