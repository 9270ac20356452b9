"""Mass-budget report and a thruster-mass sweep for the default mass table."""

from huskysim import design

budget = design.MassBudget()
print(f"repurposed leg mass: {design.repurposed_mass(budget):.3f} kg")
for line in design.vehicle_thrust_to_weight(budget).lines():
    print(line)

template = design.step_template_from_budget(budget)
rows = design.tradeoff_sweep(template, [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
print()
print(design.sweep_to_csv(rows), end="")
