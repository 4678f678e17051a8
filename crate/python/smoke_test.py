"""Smoke test for the `slipflow` extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml --release`,
or copy `target/release/libslipflow.so` to `slipflow.so` somewhere on `PYTHONPATH`.
"""

import math
import sys

import slipflow


def check(name, ok, detail=""):
    print(f"{'ok  ' if ok else 'FAIL'} {name} {detail}")
    return ok


def field_2d(n, rank, fn):
    comps = {"scalar": 1, "vector": 2, "tensor": 4}[rank]
    values = [[fn(c, (k % n) / n, (k // n) / n) for k in range(n * n)] for c in range(comps)]
    return slipflow.Field([1.0, 1.0], [n, n], rank, values)


def main():
    results = []

    g = field_2d(32, "tensor", lambda c, x, y: math.cos(2 * math.pi * (x + c * y)))
    w, q = slipflow.solve_whole_space(g)
    div = max(abs(d) for d in slipflow.divergence(w))
    results.append(check("whole-space velocity is divergence free", div < 1e-9, f"{div:.1e}"))

    hs = slipflow.verify_halfspace(64)
    results.append(check("half-space fixture", hs["rel_l2_error"] < 1e-6, f"{hs['rel_l2_error']:.1e}"))

    r = slipflow.rough_solve(0.05, 1.0, 32, forcing="random", seed=7)
    results.append(check("rough solve contracts", r["converged"] and r["contraction"] < 0.5, f"{r['contraction']:.3f}"))

    m = slipflow.rough_solve(0.05, 1.0, 32, forcing="manufactured")
    results.append(check("manufactured error reported", m["velocity_h1"] < 0.2, f"{m['velocity_h1']:.2e}"))

    nm = slipflow.neumann_verify(0.05, 32)
    results.append(check("neumann solve", nm["converged"], f"w12 {nm['w12_error']:.2e}"))

    rows = slipflow.sharpness_table([math.pi / 2], [2.0])
    results.append(check("right-angle wedge exponent", abs(rows[0]["exponent"]) <= 0.02, f"{rows[0]['exponent']:.1e}"))

    f = field_2d(32, "scalar", lambda c, x, y: math.sin(2 * math.pi * x))
    ratio = slipflow.fractional_seminorm(f, 0.5, 2.0) / slipflow.fourier_seminorm(f, 0.5)
    results.append(check("seminorm ratio finite", math.isfinite(ratio) and ratio > 0, f"{ratio:.4f}"))

    try:
        slipflow.Field([1.0], [3], "scalar", [[0.0, 0.0, 0.0]])
        results.append(check("bad grid rejected", False))
    except slipflow.SlipflowError:
        results.append(check("bad grid rejected", True))

    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
