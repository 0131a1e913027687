"""Concentration sweeps: kappa_b in {1, 3, 10, 15, 20}, or kappa_e via --axis."""

import sys

from sweep_common import run_axis_sweep

if __name__ == "__main__":
    if "--axis" in sys.argv:
        i = sys.argv.index("--axis")
        axis = sys.argv[i + 1]
        del sys.argv[i:i + 2]
    else:
        axis = "kappa_b"
    defaults = {"kappa_b": [1.0, 3.0, 10.0, 15.0, 20.0],
                "kappa_e": [64.0, 256.0, 1024.0, 4096.0, 16384.0]}
    run_axis_sweep(axis, defaults[axis])
