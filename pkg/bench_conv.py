"""Benchmark the compiled conv patch kernels against the numpy fallback.

Runs each backend in a worker subprocess (selection happens at import
time via TINYVIDGAN_CONV_BACKEND) and reports wall time per case for
the patch-matrix transforms plus a full convolution layer step.

    python3 bench_conv.py            # compare both backends
    python3 bench_conv.py --repeats 5
"""

import argparse
import json
import os
import subprocess
import sys
import time

CASES = [
    # name, input (n,c,d,h,w), kernel, stride, out channels
    ("critic-head-quarter", (16, 3, 8, 16, 16), 4, 2, 16),
    ("critic-mid-quarter", (16, 16, 4, 8, 8), 4, 2, 32),
    ("critic-head-full", (4, 3, 32, 64, 64), 4, 2, 64),
    ("critic-mid-full", (4, 64, 16, 32, 32), 4, 2, 128),
]


def _measure(repeats: int) -> list:
    import numpy as np

    from tinyvidgan.engine import ConvSpec, Tensor, conv3d
    from tinyvidgan.engine import kernels

    rows = []
    for name, shape, kernel, stride, c_out in CASES:
        rng = np.random.default_rng(0)
        x = rng.standard_normal(shape, dtype=np.float32)
        pad = kernel // 2 - 1 if kernel % 2 == 0 else kernel // 2
        xp = np.pad(x, ((0, 0), (0, 0)) + ((pad, pad),) * 3)
        w = rng.standard_normal((c_out, shape[1]) + (kernel,) * 3,
                                dtype=np.float32)
        b = np.zeros(c_out, dtype=np.float32)
        spec = ConvSpec(kernel=(kernel,) * 3, stride=(stride,) * 3,
                        padding=(pad,) * 3, in_channels=shape[1],
                        out_channels=c_out)

        best = {"im2col": float("inf"), "col2im": float("inf"),
                "layer": float("inf")}
        for _ in range(repeats):
            t0 = time.perf_counter()
            cols = kernels.im2col3d(xp, (kernel,) * 3, (stride,) * 3)
            best["im2col"] = min(best["im2col"], time.perf_counter() - t0)

            t0 = time.perf_counter()
            kernels.col2im3d(cols, xp.shape, (kernel,) * 3, (stride,) * 3)
            best["col2im"] = min(best["col2im"], time.perf_counter() - t0)

            t0 = time.perf_counter()
            out = conv3d(Tensor(x, requires_grad=True), spec,
                         Tensor(w, requires_grad=True), Tensor(b))
            out.sum().backward()
            best["layer"] = min(best["layer"], time.perf_counter() - t0)

        rows.append({"case": name, **{k: v * 1e3 for k, v in best.items()}})
    return rows


def _run_worker(backend: str, repeats: int) -> dict:
    env = dict(os.environ, TINYVIDGAN_CONV_BACKEND=backend)
    out = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--worker",
         "--repeats", str(repeats)],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3,
                        help="timing repeats per case (best is kept)")
    parser.add_argument("--worker", action="store_true",
                        help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        from tinyvidgan.engine.kernels import BACKEND
        print(json.dumps({"backend": BACKEND,
                          "rows": _measure(args.repeats)}))
        return

    results = {}
    for backend in ("cython", "numpy"):
        try:
            results[backend] = _run_worker(backend, args.repeats)
        except subprocess.CalledProcessError as exc:
            print(f"{backend} worker failed:\n{exc.stderr}", file=sys.stderr)
            if backend == "numpy":
                raise
    if "cython" not in results:
        print("compiled backend unavailable; numpy timings only")

    header = f"{'case':<22}{'stage':<8}"
    for backend in results:
        header += f"{results[backend]['backend']:>12}"
    if len(results) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for i, case in enumerate(CASES):
        for stage in ("im2col", "col2im", "layer"):
            line = f"{case[0]:<22}{stage:<8}"
            times = []
            for backend in results:
                ms = results[backend]["rows"][i][stage]
                times.append(ms)
                line += f"{ms:>10.2f}ms"
            if len(times) == 2 and times[0] > 0:
                line += f"{times[1] / times[0]:>9.1f}x"
            print(line)


if __name__ == "__main__":
    main()
