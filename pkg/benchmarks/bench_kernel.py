"""Compare the compiled trajectory kernel with the pure-Python fallback.

Both backends integrate the same trajectories (same model, same Wiener increments);
the script reports wall time per trajectory, the speed-up, and the largest state
difference between the two.

Usage::

    python3 benchmarks/bench_kernel.py [--reps 3] [--tmax 5]
"""

import argparse
import time
import warnings

import numpy as np

from gausselim import _backend
from gausselim.scenarios import build, make_config
from gausselim.sde import StepSizeWarning, wiener_increments

CASES = (
    ("qnd full, cutoff 20", "qnd", dict(cutoffs=(20,)), "Full"),
    ("jc full, cutoff 20", "jc", dict(cutoffs=(20,)), "Full"),
    ("twoosc full, cutoffs 12x6", "twoosc", dict(cutoffs=(12, 6)), "Full"),
    ("qnd reduced (GAE)", "qnd", {}, "GAE"),
)


def time_kernel(model, inc, icfg, kernel, reps):
    best, out = np.inf, None
    for _ in range(reps):
        t0 = time.perf_counter()
        out = model.run(inc, 0, icfg, kernel=kernel)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=3, help="repetitions, best time is kept")
    parser.add_argument("--tmax", type=float, default=5.0, help="trajectory length in 1/kappa")
    args = parser.parse_args(argv)

    if _backend.BACKEND != "compiled":
        raise SystemExit("compiled kernel not available; build it with "
                         "'pip install -e . --no-build-isolation'")
    print(f"{'case':28s} {'dim':>5s} {'compiled [s]':>13s} {'python [s]':>11s} "
          f"{'speed-up':>9s} {'max |diff|':>11s}")
    for label, scenario, kw, name in CASES:
        cfg = make_config(scenario, models=(name,) if name == "Full" else ("GAE",), **kw)
        model = build(cfg).models[name]
        icfg = cfg.integration(args.tmax)
        inc = wiener_increments(cfg.seed, 0, icfg.n_steps, model.n_meas, icfg.dt)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StepSizeWarning)
            t_c, out_c = time_kernel(model, inc, icfg, _backend.integrate, args.reps)
            t_p, out_p = time_kernel(model, inc, icfg, _backend.python_integrate, args.reps)
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(out_c, out_p))
        print(f"{label:28s} {model.generator.dim:5d} {t_c:13.4f} {t_p:11.4f} {t_p / t_c:9.1f} {diff:11.1e}")


if __name__ == "__main__":
    main()
