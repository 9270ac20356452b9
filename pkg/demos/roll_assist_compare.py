"""Roll-rate kick during a trot, with and without differential thrust."""

import sys
from dataclasses import replace
from pathlib import Path

from huskysim import harness

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/roll_assist_compare")
cfg = harness.load_scenario(harness.resolve_scenario("roll_assist"))
on = harness.run_scenario(cfg, out / "thrusters_on")
off = harness.run_scenario(replace(cfg, roll_assist=None), out / "thrusters_off")

a, b = on.pushes[0], off.pushes[0]
print(f"thrusters on : settle {a['roll_settle_s']:.3f} s, peak roll {a['peak_roll_deg']:.2f} deg")
print(f"thrusters off: settle {b['roll_settle_s']:.3f} s, peak roll {b['peak_roll_deg']:.2f} deg")
print(f"speed-up x{b['roll_settle_s'] / a['roll_settle_s']:.1f}")
