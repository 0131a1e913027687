"""Masking-aggressiveness sweep: area lower bound in {0.08, 0.16, 0.25, 0.50}.

Expected shape: the uncompressed baseline loses more accuracy as the
bound rises (milder masking) than the compressed model does.
"""

from sweep_common import run_axis_sweep

if __name__ == "__main__":
    run_axis_sweep("area_lower_bound", [0.08, 0.16, 0.25, 0.50])
