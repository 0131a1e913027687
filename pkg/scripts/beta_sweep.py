"""Compression-strength sweep: beta in {0, 0.01, 0.1, 1, 1.5, 2}.

Expected shape: accuracy flat-to-rising through beta=1, then collapse or
degradation at beta=2.
"""

from sweep_common import run_axis_sweep

if __name__ == "__main__":
    run_axis_sweep("beta", [0.0, 0.01, 0.1, 1.0, 1.5, 2.0])
