"""Short trot; prints per-stride speed and writes leg-end trajectories for plotting."""

import sys
from pathlib import Path

import numpy as np

from huskysim import harness

text = """
[scenario]
name = trot_foot_paths
log_interval_s = 0.005

[script.1]
action = trot
duration_s = 4
v_des_mps = 0.3, 0
"""
out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/trot_foot_paths")
summary = harness.run_scenario(harness.parse_scenario(text), out)
c = harness.read_log(out / harness.TRAJECTORY_FILE)
for k in np.unique(c["stride"]).astype(int):
    sel = c["stride"] == k
    print(f"stride {k:2d}: vx {c['vx'][sel].mean():+.3f} m/s, max |roll| {np.degrees(np.abs(c['roll'][sel]).max()):.2f} deg")
chans = [f"foot_{leg}_{a}" for leg in ("FL", "FR", "BR", "BL") for a in "xz"]
harness.emit_plotdata(out / harness.TRAJECTORY_FILE, chans)
print(f"mean speed {summary.trot[0]['mean_speed_mps']:.3f} m/s, foot paths in {out / 'plotdata'}")
