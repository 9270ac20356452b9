"""Design-tradeoff arithmetic for structure repurposing.

Mass accumulation when thruster structures are bolted onto a legged base,
the resulting erosion of leg loading and thrust-to-weight, and the mass that
is reused when the legs themselves become propeller arms.
"""

from __future__ import annotations

import configparser
import csv
import io
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

G = 9.81

# kgf -> N
MAX_THRUST_KGF = 13.4
MAX_THRUST_N = MAX_THRUST_KGF * G
CLAIMED_THRUST_TO_WEIGHT = 2.0

SWEEP_HEADER = ("m_t", "m3", "load_ratio", "beta_prime")

_LEG_PARTS = ("hip_kg", "upper_leg_kg", "lower_leg_kg", "ankle_kg", "foot_kg")


class DesignError(ValueError):
    """Raised for inputs outside the domain of the design formulas."""


@dataclass(frozen=True)
class MassBudget:
    """Component masses in kg, one field per mass-table column."""

    body_kg: float = 1.68
    hip_kg: float = 0.048
    upper_leg_kg: float = 0.46
    lower_leg_kg: float = 0.060
    ankle_kg: float = 0.055
    foot_kg: float = 0.075
    bldc_kg: float = 0.197
    servo_kg: float = 0.165
    battery_kg: float = 0.50
    prop_kg: float = 0.021
    servo_count_per_leg: int = 3
    leg_count: int = 4

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name.endswith("_kg") and not value >= 0.0:
                raise DesignError(f"{f.name} must be >= 0, got {value!r}")
        for name in ("servo_count_per_leg", "leg_count"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise DesignError(f"{name} must be a positive integer, got {value!r}")

    @property
    def leg_structure_kg(self) -> float:
        """Per-leg structural mass (hip, upper leg, lower leg, ankle, foot)."""
        return sum(getattr(self, name) for name in _LEG_PARTS)

    @classmethod
    def from_file(cls, path: str | Path) -> "MassBudget":
        return cls.from_mapping(_read_section(path, "budget"))

    @classmethod
    def from_mapping(cls, values: dict) -> "MassBudget":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise DesignError(f"unknown mass budget key {key!r}")
            kwargs[key] = int(raw) if key in ("servo_count_per_leg", "leg_count") else float(raw)
        return cls(**kwargs)


@dataclass(frozen=True)
class DesignStep:
    """One point of the progressive design argument.

    ``leg_pair_mass_kg`` is the mass of a single leg (two are added in step 1),
    ``thruster_unit_mass_kg`` the mass of one thruster structure (two are added
    per subsequent step).
    """

    step_index: int
    base_mass_kg: float
    leg_pair_mass_kg: float
    thruster_unit_mass_kg: float
    alpha: float = 1.0
    beta: float = 1.0
    thrust_total_N: float | None = None

    def __post_init__(self):
        if self.step_index not in (1, 2, 3):
            raise DesignError(f"step_index must be 1, 2 or 3, got {self.step_index!r}")
        if not (self.base_mass_kg > 0 and self.leg_pair_mass_kg > 0):
            raise DesignError("base and leg masses must be > 0")
        if not self.thruster_unit_mass_kg >= 0:
            raise DesignError("thruster mass must be >= 0")
        if not (self.alpha > 0 and self.beta > 0):
            raise DesignError("alpha and beta must be > 0")

    def at(self, step_index: int) -> "DesignStep":
        return DesignStep(step_index, self.base_mass_kg, self.leg_pair_mass_kg,
                          self.thruster_unit_mass_kg, self.alpha, self.beta, self.thrust_total_N)

    def with_thruster_mass(self, m_t: float) -> "DesignStep":
        return DesignStep(self.step_index, self.base_mass_kg, self.leg_pair_mass_kg,
                          m_t, self.alpha, self.beta, self.thrust_total_N)


def cumulative_mass(step: DesignStep) -> float:
    """Total mass after ``step.step_index`` design steps."""
    m1 = step.base_mass_kg + 2.0 * step.leg_pair_mass_kg
    if step.step_index == 1:
        return m1
    m2 = m1 + 2.0 * step.thruster_unit_mass_kg
    if step.step_index == 2:
        return m2
    if step.step_index == 3:
        return m2 + 2.0 * step.thruster_unit_mass_kg
    raise DesignError(f"invalid step_index {step.step_index!r}")


def leg_load_ratio(step: DesignStep) -> float:
    """Desired-to-actual leg loading ratio N_d/N_k at the given step."""
    m_t = step.thruster_unit_mass_kg
    if step.step_index == 1:
        return step.alpha
    m_k = cumulative_mass(step)
    if m_k == 0:
        raise DesignError("cumulative mass is zero")
    added = 2.0 * m_t if step.step_index == 2 else 4.0 * m_t
    return (1.0 - added / m_k) * step.alpha


def thrust_to_weight_step3(step: DesignStep) -> float:
    """Modified thrust-to-weight ratio once both thruster pairs are added."""
    m3 = cumulative_mass(step.at(3))
    if m3 <= 0:
        raise DesignError("m3 must be > 0")
    return (2.0 - 4.0 * step.thruster_unit_mass_kg / m3) * step.beta


def thrust_to_weight_step3_consistent(step: DesignStep) -> float:
    """Cross-check form 2*beta*m2/m3, i.e. beta read as T/(m2*g)."""
    m2 = cumulative_mass(step.at(2))
    m3 = cumulative_mass(step.at(3))
    return 2.0 * step.beta * m2 / m3


def repurposed_mass(budget: MassBudget) -> float:
    """Leg structure mass that doubles as flight structure, summed over legs."""
    return budget.leg_count * budget.leg_structure_kg


@dataclass(frozen=True)
class ThrustToWeightReport:
    ratio: float
    total_mass_kg: float
    max_thrust_N: float
    formula: str
    claimed: float = CLAIMED_THRUST_TO_WEIGHT

    @property
    def discrepancy(self) -> float:
        return self.ratio - self.claimed

    def lines(self) -> list[str]:
        out = [
            f"total_mass = {self.formula}",
            f"total_mass_kg = {self.total_mass_kg:.4f}",
            f"max_thrust_N = {self.max_thrust_N:.4f} ({self.max_thrust_N / G:.3f} kgf)",
            f"thrust_to_weight = {self.ratio:.4f}",
        ]
        if abs(self.discrepancy) > 0.05:
            out.append(
                f"WARNING: ratio differs from the claimed ~{self.claimed:g} by "
                f"{self.discrepancy:+.3f}; no aggregation of the mass table reproduces it"
            )
        return out


def total_mass(budget: MassBudget) -> float:
    per_leg = (budget.leg_structure_kg + budget.bldc_kg + budget.prop_kg
               + budget.servo_count_per_leg * budget.servo_kg)
    return budget.body_kg + budget.leg_count * per_leg + budget.battery_kg


def aggregation_formula(budget: MassBudget) -> str:
    return (f"body + {budget.leg_count} x (hip + upper_leg + lower_leg + ankle + foot"
            f" + bldc + prop + {budget.servo_count_per_leg} x servo) + battery")


def vehicle_thrust_to_weight(budget: MassBudget, max_thrust_N: float = MAX_THRUST_N) -> ThrustToWeightReport:
    if not max_thrust_N > 0:
        raise DesignError(f"max_thrust_N must be > 0, got {max_thrust_N!r}")
    m = total_mass(budget)
    if m <= 0:
        raise DesignError("total mass is zero")
    return ThrustToWeightReport(max_thrust_N / (m * G), m, max_thrust_N, aggregation_formula(budget))


@dataclass(frozen=True)
class SweepRow:
    m_t: float
    m3: float
    load_ratio: float
    beta_prime: float


def tradeoff_sweep(step_template: DesignStep, m_t_values: Iterable[float]) -> list[SweepRow]:
    rows = []
    for m_t in m_t_values:
        if m_t < 0:
            raise DesignError(f"thruster mass must be >= 0, got {m_t!r}")
        s3 = step_template.with_thruster_mass(float(m_t)).at(3)
        rows.append(SweepRow(float(m_t), cumulative_mass(s3), leg_load_ratio(s3),
                             thrust_to_weight_step3(s3)))
    return rows


def sweep_to_csv(rows: Sequence[SweepRow], stream=None) -> str:
    buf = stream if stream is not None else io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for r in rows:
        writer.writerow([repr(r.m_t), repr(r.m3), repr(r.load_ratio), repr(r.beta_prime)])
    return buf.getvalue() if stream is None else ""


def step_template_from_budget(budget: MassBudget, overrides: dict | None = None) -> DesignStep:
    """Design-step template read off a budget.

    Base mass is body plus battery; the per-leg mass is leg structure plus the
    leg's servos. ``overrides`` may replace any of base_mass_kg,
    leg_pair_mass_kg, alpha, beta.
    """
    values = {
        "base_mass_kg": budget.body_kg + budget.battery_kg,
        "leg_pair_mass_kg": budget.leg_structure_kg + budget.servo_count_per_leg * budget.servo_kg,
        "thruster_unit_mass_kg": budget.bldc_kg + budget.prop_kg,
        "alpha": 1.0,
        "beta": 1.0,
    }
    for key, raw in (overrides or {}).items():
        if key not in values:
            raise DesignError(f"unknown design key {key!r}")
        values[key] = float(raw)
    return DesignStep(step_index=3, **values)


def load_design_file(path: str | Path) -> tuple[MassBudget, DesignStep]:
    budget = MassBudget.from_mapping(_read_section(path, "budget"))
    template = step_template_from_budget(budget, _read_section(path, "design", required=False))
    return budget, template


def _read_section(path: str | Path, section: str, required: bool = True) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not parser.read(path):
        raise FileNotFoundError(path)
    if not parser.has_section(section):
        if required:
            raise DesignError(f"{path}: missing [{section}] section")
        return {}
    return dict(parser.items(section))
