#!/usr/bin/env python3
"""Smoke test for the tiltrisk_py extension module.

Usage:
    cargo build -p tiltrisk-py --release
    python3 python/smoke_test.py

The script locates the cdylib under target/, copies it next to itself as
tiltrisk_py.so (the import name), and checks a handful of known values.
"""

import math
import shutil
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
ROOT = HERE.parent


def ensure_module():
    dest = HERE / "tiltrisk_py.so"
    candidates = [
        ROOT / "target" / "release" / "libtiltrisk_py.so",
        ROOT / "target" / "debug" / "libtiltrisk_py.so",
    ]
    built = [p for p in candidates if p.exists()]
    if not built:
        sys.exit("build the extension first: cargo build -p tiltrisk-py --release")
    src = max(built, key=lambda p: p.stat().st_mtime)
    if not dest.exists() or dest.stat().st_mtime < src.stat().st_mtime:
        shutil.copy2(src, dest)
    sys.path.insert(0, str(HERE))


def close(a, b, tol, label):
    if abs(a - b) > tol:
        sys.exit(f"FAIL {label}: {a} vs {b} (tol {tol})")
    print(f"ok {label}: {a:.12g}")


def main():
    ensure_module()
    import tiltrisk_py as tr

    close(tr.tilted_value(2.0, 1.0), math.e**2, 1e-12, "tilted_value")

    # Log-sum-exp identity on a two-point model.
    u, w, lam = [1.0, 3.0], [0.25, 0.75], 2.0
    expect = -lam * math.log(w[0] * math.exp(-u[0] / lam) + w[1] * math.exp(-u[1] / lam))
    close(tr.dv_criterion(u, w, lam), expect, 1e-12, "dv_criterion")

    d, g = tr.solve_delta_star(1.0, 1.0)
    close(d, 1.0336113384790282, 1e-6, "delta_star(1,1)")

    mm = tr.treatment_minimax_value(1.0, 1.0)
    close(mm["value"], 1.2728734447887044, 1e-12, "treatment value(1,1)")

    # Zero noise: no estimation error, value collapses to 1.
    close(tr.estimation_minimax_value(1e-9, 1.0, 25.0), 1.0, 1e-7, "estimation sigma->0")
    # Sanity point: sigma=0.5, lambda=2, generous cap -> 1/sqrt(1 - 2 sigma^2/lambda).
    close(tr.estimation_minimax_value(0.5, 2.0, 25.0), 1.0 / math.sqrt(0.75), 1e-4,
          "estimation(0.5, 2)")

    # Large lambda: shift tends to sigma^2/2.
    close(tr.linex_optimal_shift(1e8, 1e3, 1.0), 0.5, 1e-3, "linex shift limit")

    sol = tr.solve_treatment_game(1.0, 1.0, 10.0)
    if not sol["converged"]:
        sys.exit(f"FAIL game did not converge: {sol}")
    close(sol["upper_value"], mm["value"], 1e-6, "game vs closed form")
    close(sol["threshold"], 0.0, 1e-9, "game threshold")

    rep = tr.worst_case_risk("bernoulli", "mle", "estimation", 2.0, 1000, 2000, 7)
    if not (0.8 * rep["v_star"] < rep["value"] < 1.2 * rep["v_star"]):
        sys.exit(f"FAIL mc ratio off: {rep}")
    print(f"ok mc worst-case ratio: {rep['ratio']:.4f} (se {rep['stderr']:.2e})")
    rep2 = tr.worst_case_risk("bernoulli", "mle", "estimation", 2.0, 1000, 2000, 7)
    if rep2["value"] != rep["value"]:
        sys.exit("FAIL mc not reproducible under fixed seed")
    print("ok mc reproducible")

    # Direction with 1'c = 0 is orthogonal to the estimand's gradient.
    pw = tr.pathwise_derivative_check([1.0, 0.8, 0.8, 4.0], [1.0, -1.0], 0.2, [1e-6])
    close(pw["inner_product"], 0.0, 1e-10, "orthogonal pathwise derivative")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
