"""Run the full trot / morph / hover / land / morph-back mission and print its timeline."""

import sys
from pathlib import Path

from huskysim import harness

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/fig3_mission")
summary = harness.run_scenario(harness.load_scenario(harness.resolve_scenario("fig3_mission")), out)

for it in summary.items:
    print(f"{it['start_s']:7.2f} -> {it['end_s']:7.2f} s  {it['action']}")
print(f"forward morph {summary.morph_forward_s:.2f} s, takeoff at {summary.takeoff_time_s:.2f} s")
print(f"hover settle {summary.hover[0]['settle_s']:.2f} s, landing at {summary.landing_time_s:.2f} s")
print(f"reverse morph {summary.morph_reverse_s:.2f} s, exit code {summary.exit_code}")

# attitude and motor traces for plotting
paths = harness.emit_plotdata(out / harness.TRAJECTORY_FILE,
                              ["roll", "pitch", "yaw", "thr_FL", "thr_FR", "thr_BR", "thr_BL"])
print(f"plot data: {paths[0].parent}")
