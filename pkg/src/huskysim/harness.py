"""Scenario runner: INI scenario files in, trajectory/event CSVs and a summary out.

A scenario is a mode script (trot, push, morph_to_aerial, hover, land,
morph_to_legged) executed against one simulator instance. Every summary
statistic is recomputed from the trajectory CSV, so ``summarize(log)`` and the
in-run summary agree by construction.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import control as ctl
from . import gait
from . import kinematics as kin
from . import morphing as morph
from .design import G, MAX_THRUST_KGF, MassBudget
from .rotation import rpy_from_quat
from .sim import (MAX_DT, ContactParams, Event, RobotModel, SimulationFault, Simulator, Terrain,
                  make_state)

EXIT_OK, EXIT_CONFIG, EXIT_FAULT, EXIT_FALL = 0, 2, 3, 4

ACTIONS = ("trot", "push", "morph_to_aerial", "hover", "land", "morph_to_legged")
ROLL_SETTLE_BAND_RAD = math.radians(0.5)
HOVER_SETTLE_BAND_M = 0.02
PUSH_RECOVERY_STRIDES = 6
PUSH_RECOVERY_FRACTION = 0.2
LAND_TIMEOUT_S = 30.0

TRAJECTORY_FILE = "trajectory.csv"
EVENTS_FILE = "events.csv"
TRANSITIONS_FILE = "transitions.csv"
SUMMARY_FILE = "summary.json"

_JOINT_COLS = [f"q_{leg}_{j}" for leg in kin.LEG_NAMES for j in kin.JOINT_NAMES]
_BASE_COLS = (["t", "item", "action", "phase", "status", "x", "y", "z", "roll", "pitch", "yaw",
               "vx", "vy", "vz", "wx", "wy", "wz"] + _JOINT_COLS
              + [f"thr_{leg}" for leg in kin.LEG_NAMES]
              + [f"fz_{leg}" for leg in kin.LEG_NAMES] + ["fz_perch", "gate", "v_des_x", "v_des_y",
                                                         "sp_x", "sp_y", "sp_z", "stride"]
              + [f"stance_{leg}" for leg in kin.LEG_NAMES] + ["push"])
_TRACE_COLS = ["perch_load_fraction", "splay_error_rad", "col_com_offset_m"]
_TEXT_COLS = {"action", "phase", "status"}


class ScenarioError(ValueError):
    """Configuration problems; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


class LogParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# --- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class ScriptItem:
    action: str
    duration_s: float | None = None
    v_des_mps: tuple = (0.0, 0.0)
    t_s: float | None = None               # push time, from the start of the preceding trot
    impulse_mps: tuple = (0.0, 0.0, 0.0)
    omega_kick_radps: tuple = (0.0, 0.0, 0.0)
    setpoint_m: tuple = (0.0, 0.0, 1.0)
    yaw_rad: float = 0.0
    descent_rate_mps: float = 0.3


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    script: tuple = ()
    dt_s: float = 0.001
    log_interval_s: float = 0.01
    output_dir: str | None = None
    seed: int = 0
    budget: MassBudget = field(default_factory=MassBudget)
    thrust_kgf: float = MAX_THRUST_KGF
    friction: float = ContactParams().mu
    trot: ctl.TrotControllerConfig = field(default_factory=ctl.TrotControllerConfig)
    roll_assist: ctl.RollAssistConfig | None = None
    hover: ctl.HoverControllerConfig = field(default_factory=ctl.HoverControllerConfig)
    guards: morph.MorphGuards = field(default_factory=morph.MorphGuards)

    def model(self) -> RobotModel:
        return RobotModel(budget=self.budget, total_max_thrust=self.thrust_kgf * G,
                          contact=replace(ContactParams(), mu=self.friction))


_ITEM_KEYS = {
    "trot": {"duration_s", "v_des_mps"},
    "push": {"t_s", "impulse_mps", "omega_kick_radps"},
    "morph_to_aerial": set(),
    "hover": {"duration_s", "setpoint_m", "yaw_rad"},
    "land": {"descent_rate_mps"},
    "morph_to_legged": set(),
}
_SECTION_KEYS = {
    "scenario": {"name", "dt_s", "log_interval_s", "output_dir", "seed"},
    "model": {"budget_file", "thrust_kgf", "friction"},
    "trot": {"period_s", "duty_factor", "k_v_s", "height_m", "stance_width_m", "apex_height_m"},
    "roll_assist": {"enabled", "kp_nm_per_rad", "kd_nms_per_rad", "cap_fraction"},
    "hover": {"position_gains", "altitude_gains", "attitude_gains", "yaw_gains", "max_tilt_rad"},
    "morph": {"perch_contact_threshold_n", "weight_transfer_fraction", "splay_tolerance_rad",
              "col_com_tolerance_m", "timeout_factor"} | {f"{p.lower()}_s" for p in morph.NOMINAL_DURATIONS_S},
}


def _vec(raw: str, n: int, key: str, errors: list, pad: bool = False) -> tuple:
    try:
        vals = [float(v) for v in raw.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        errors.append(f"{key}: expected {n} comma-separated numbers, got {raw!r}")
        return (0.0,) * n
    if pad and 0 < len(vals) < n:
        vals += [0.0] * (n - len(vals))
    if len(vals) != n or not all(math.isfinite(v) for v in vals):
        errors.append(f"{key}: expected {n} finite numbers, got {raw!r}")
        return (0.0,) * n
    return tuple(vals)


def _num(raw: str, key: str, errors: list, cast=float):
    try:
        v = cast(raw)
    except ValueError:
        errors.append(f"{key}: expected a number, got {raw!r}")
        return None
    if not math.isfinite(v):
        errors.append(f"{key}: must be finite, got {raw!r}")
        return None
    return v


def parse_scenario(text: str, base_dir: Path | str = ".", source: str = "<string>") -> ScenarioConfig:
    """Parse scenario INI text; raises ScenarioError listing every problem."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ScenarioError([f"{source}: {exc}"]) from None
    errors: list[str] = []
    base_dir = Path(base_dir)

    items: list[tuple[int, ScriptItem]] = []
    for sec in cp.sections():
        if sec.startswith("script."):
            idx = _num(sec.split(".", 1)[1], f"[{sec}]", errors, int)
            if idx is None:
                continue
            items.append((idx, _parse_item(sec, cp[sec], errors)))
        elif sec not in _SECTION_KEYS:
            errors.append(f"unknown section [{sec}]")
        else:
            for key in cp[sec]:
                if key not in _SECTION_KEYS[sec]:
                    errors.append(f"[{sec}] unknown key {key!r}")
    items.sort(key=lambda p: p[0])
    if len({i for i, _ in items}) != len(items):
        errors.append("duplicate script indices")
    script = tuple(item for _, item in items)

    kw: dict = {"script": script}
    s = cp["scenario"] if cp.has_section("scenario") else {}
    if "name" in s:
        kw["name"] = s["name"]
    for key in ("dt_s", "log_interval_s"):
        if key in s:
            v = _num(s[key], key, errors)
            if v is not None:
                kw[key] = v
    if "output_dir" in s:
        kw["output_dir"] = str((base_dir / s["output_dir"]))
    if "seed" in s:
        v = _num(s["seed"], "seed", errors, int)
        if v is not None:
            kw["seed"] = v

    if cp.has_section("model"):
        m = cp["model"]
        if "budget_file" in m:
            path = base_dir / m["budget_file"]
            try:
                kw["budget"] = MassBudget.from_file(path)
            except (OSError, ValueError, KeyError) as exc:
                errors.append(f"budget_file {str(path)!r}: {exc}")
        for key, name in (("thrust_kgf", "thrust_kgf"), ("friction", "friction")):
            if key in m:
                v = _num(m[key], key, errors)
                if v is not None:
                    if v <= 0:
                        errors.append(f"{key} must be > 0, got {v}")
                    kw[name] = v

    trot_kw = {}
    sched_kw = {}
    if cp.has_section("trot"):
        t = cp["trot"]
        for key, target, name in (("period_s", sched_kw, "period_s"), ("duty_factor", sched_kw, "duty_factor"),
                                  ("k_v_s", trot_kw, "k_v"), ("height_m", trot_kw, "height"),
                                  ("stance_width_m", trot_kw, "stance_width"),
                                  ("apex_height_m", trot_kw, "apex_height")):
            if key in t:
                v = _num(t[key], key, errors)
                if v is not None:
                    target[name] = v
    try:
        kw["trot"] = ctl.TrotControllerConfig(schedule=gait.GaitSchedule(**sched_kw), **trot_kw)
    except ValueError as exc:
        errors.append(f"[trot] {exc}")

    if cp.has_section("roll_assist"):
        r = cp["roll_assist"]
        try:
            enabled = r.getboolean("enabled", fallback=True)
        except ValueError:
            errors.append(f"roll_assist.enabled: expected a boolean, got {r['enabled']!r}")
            enabled = False
        ra = {}
        for key, name in (("kp_nm_per_rad", "kp"), ("kd_nms_per_rad", "kd"), ("cap_fraction", "cap")):
            if key in r:
                v = _num(r[key], key, errors)
                if v is not None:
                    ra[name] = v
        try:
            cfg_ra = ctl.RollAssistConfig(**ra)
            kw["roll_assist"] = cfg_ra if enabled else None
        except ValueError as exc:
            errors.append(f"[roll_assist] {exc}")

    if cp.has_section("hover"):
        h = cp["hover"]
        hk = {}
        for key in ("position_gains", "altitude_gains", "attitude_gains", "yaw_gains"):
            if key in h:
                hk[key] = _vec(h[key], 3, key, errors)
        if "max_tilt_rad" in h:
            v = _num(h["max_tilt_rad"], "max_tilt_rad", errors)
            if v is not None:
                hk["max_tilt_rad"] = v
        try:
            kw["hover"] = ctl.HoverControllerConfig(**hk)
        except ValueError as exc:
            errors.append(f"[hover] {exc}")

    if cp.has_section("morph"):
        mm = cp["morph"]
        gk: dict = {}
        durations = dict(morph.NOMINAL_DURATIONS_S)
        names = {"perch_contact_threshold_n": "perch_contact_threshold_N"}
        for key in mm:
            v = _num(mm[key], key, errors)
            if v is None or key not in _SECTION_KEYS["morph"]:
                continue
            if key.endswith("_s") and key[:-2] in {p.lower() for p in durations}:
                phase = next(p for p in durations if p.lower() == key[:-2])
                durations[phase] = v
            else:
                gk[names.get(key, key)] = v
        try:
            kw["guards"] = morph.MorphGuards(durations_s=durations, **gk)
        except ValueError as exc:
            errors.append(f"[morph] {exc}")

    cfg = ScenarioConfig(**kw)
    errors.extend(validate(cfg))
    if errors:
        raise ScenarioError(errors)
    return cfg


def _parse_item(sec: str, body, errors: list) -> ScriptItem:
    action = body.get("action", "").strip()
    if action not in ACTIONS:
        errors.append(f"[{sec}] unknown action {action!r} (expected one of {', '.join(ACTIONS)})")
        return ScriptItem(action=action or "?")
    kw: dict = {}
    for key in body:
        if key == "action":
            continue
        if key not in _ITEM_KEYS[action]:
            errors.append(f"[{sec}] key {key!r} is not valid for {action}")
            continue
        raw = body[key]
        if key in ("v_des_mps",):
            kw[key] = _vec(raw, 2, f"[{sec}] {key}", errors, pad=True)
        elif key in ("impulse_mps", "omega_kick_radps", "setpoint_m"):
            kw[key] = _vec(raw, 3, f"[{sec}] {key}", errors)
        else:
            v = _num(raw, f"[{sec}] {key}", errors)
            if v is not None:
                kw[key] = v
    return ScriptItem(action=action, **kw)


def validate(cfg: ScenarioConfig) -> list[str]:
    """Every rule the scenario breaks (empty when valid)."""
    errors = []
    if not 0.0 < cfg.dt_s <= MAX_DT:
        errors.append(f"dt_s must lie in (0, {MAX_DT}], got {cfg.dt_s}")
    if not cfg.log_interval_s > 0:
        errors.append(f"log_interval_s must be > 0, got {cfg.log_interval_s}")
    elif cfg.dt_s > 0 and cfg.log_interval_s < cfg.dt_s * (1 - 1e-9):
        errors.append(f"log_interval_s ({cfg.log_interval_s}) must be >= dt_s ({cfg.dt_s})")
    mode = "legged"
    landed = False
    last_trot: ScriptItem | None = None
    for n, item in enumerate(cfg.script, 1):
        where = f"script item {n} ({item.action})"
        if item.action not in ACTIONS:
            continue
        if item.action in ("trot", "hover"):
            if item.duration_s is None:
                errors.append(f"{where}: duration_s is required")
            elif not item.duration_s > 0:
                errors.append(f"{where}: duration_s must be > 0, got {item.duration_s}")
        if item.action == "trot":
            if mode != "legged":
                errors.append(f"{where}: trot needs legged mode")
            last_trot = item
            continue
        if item.action == "push":
            if mode != "legged" or last_trot is None:
                errors.append(f"{where}: push must follow a trot")
            if item.t_s is None:
                errors.append(f"{where}: t_s is required")
            elif last_trot is not None and last_trot.duration_s is not None and \
                    not 0.0 <= item.t_s < last_trot.duration_s:
                errors.append(f"{where}: t_s must lie in [0, {last_trot.duration_s}) of the preceding trot")
            continue
        last_trot = None
        if item.action == "morph_to_aerial":
            if mode != "legged":
                errors.append(f"{where}: already aerial")
            mode, landed = "aerial", False
        elif item.action == "hover":
            if mode != "aerial":
                errors.append(f"{where}: hover before morph_to_aerial")
            elif item.setpoint_m[2] <= 0:
                errors.append(f"{where}: setpoint altitude must be > 0")
            landed = False
        elif item.action == "land":
            if mode != "aerial":
                errors.append(f"{where}: land needs aerial mode")
            if not item.descent_rate_mps > 0:
                errors.append(f"{where}: descent_rate_mps must be > 0")
            landed = True
        elif item.action == "morph_to_legged":
            if mode != "aerial":
                errors.append(f"{where}: morph_to_legged needs aerial mode")
            elif not landed:
                errors.append(f"{where}: morph_to_legged must follow land")
            mode = "legged"
    return errors


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError([f"cannot read {path}: {exc}"]) from None
    cfg = parse_scenario(text, path.parent, str(path))
    if cfg.name == "scenario":
        cfg = replace(cfg, name=path.stem)
    return cfg


def bundled_scenarios() -> dict[str, Path]:
    root = Path(__file__).parent / "scenarios"
    return {p.stem: p for p in sorted(root.glob("*.ini"))}


def resolve_scenario(name_or_path: str | Path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    key = p.stem if p.suffix == ".ini" else str(name_or_path)
    if key in bundled:
        return bundled[key]
    raise ScenarioError([f"no scenario file {str(name_or_path)!r} (bundled: {', '.join(bundled)})"])


# --- running -----------------------------------------------------------------------

@dataclass
class _Run:
    cfg: ScenarioConfig
    model: RobotModel
    sim: Simulator
    writer: csv.writer
    trace: bool
    events: list = field(default_factory=list)
    transitions: list = field(default_factory=list)
    step: int = 0
    log_every: int = 10
    status: str = "ok"
    morph_state: morph.MorphState = field(default_factory=morph.MorphState)
    hover: ctl.HoverController | None = None
    item: int = 0
    action: str = ""
    v_des: tuple = (0.0, 0.0)
    setpoint: tuple | None = None
    stride: int = -1
    stance: tuple = (0, 0, 0, 0)
    push_pending: bool = False
    throttles: np.ndarray = field(default_factory=lambda: np.zeros(4))
    gate: bool = False
    last_logged: int = -1
    trot_controller: ctl.TrotController | None = None

    def drain(self, source_events: list) -> None:
        # move controller/sim events into the run log exactly once
        if source_events:
            self.events.extend(source_events)
            source_events.clear()


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _log_row(run: _Run, force: bool = False) -> None:
    if run.last_logged == run.step or not (force or run.step % run.log_every == 0):
        return
    st = run.sim.state
    roll, pitch, yaw = rpy_from_quat(st.orientation)
    sp = run.setpoint if run.setpoint is not None else (math.nan, math.nan, math.nan)
    row = [round(st.t, 9), run.item, run.action, run.morph_state.phase, run.status, *st.position, roll, pitch, yaw,
           *st.velocity, *st.omega, *st.q.reshape(-1), *run.throttles, *st.foot_forces[:, 2],
           st.perch_force[2], run.gate, *run.v_des, *sp, run.stride, *run.stance, run.push_pending]
    if run.trace:
        g = run.morph_state.guards
        row += [g.perch_load_fraction, g.splay_error_rad, g.col_com_offset_m]
    run.writer.writerow([_fmt(v) for v in row])
    run.push_pending = False
    run.last_logged = run.step


def _advance(run: _Run, joints, throttles, gate: bool) -> None:
    run.throttles = np.asarray(throttles, dtype=float)
    run.gate = gate
    run.sim.step(joints, run.throttles)
    run.step += 1
    run.drain(run.sim.events)
    _log_row(run)


def _morph_tick(run: _Run):
    ms, cmd = morph.morph_step(run.morph_state, run.sim.state, run.model, run.cfg.guards, run.sim.t,
                               run.sim.terrain.perch_points, run.transitions)
    run.morph_state = ms
    return cmd


def _flight_throttles(run: _Run, cmd: morph.MorphCommand) -> np.ndarray:
    if not cmd.gate:
        return np.zeros(4)
    if cmd.throttle is not None:
        return np.full(4, cmd.throttle)
    return run.hover.update(run.sim.state, run.sim.dt)


def _run_trot(run: _Run, item: ScriptItem, pushes: list[ScriptItem]) -> None:
    cfg = run.cfg
    dt = run.sim.dt
    trot_cfg = replace(cfg.trot, v_des=tuple(item.v_des_mps))
    controller = run.trot_controller
    if controller is None:
        controller = ctl.TrotController(run.model, trot_cfg, run.sim.terrain.height)
        run.trot_controller = controller
    else:
        controller.set_velocity(item.v_des_mps)
    fall = ctl.FallDetector(cfg.trot.height, terrain_height=run.sim.terrain.height)
    schedule = cfg.trot.schedule
    n_steps = int(round(item.duration_s / dt))
    push_at = {int(round(p.t_s / dt)): p for p in pushes}
    start = run.sim.t
    run.v_des = tuple(item.v_des_mps)
    assist = cfg.roll_assist
    for k in range(n_steps):
        if k in push_at:
            p = push_at[k]
            run.sim.apply_impulse(p.impulse_mps)
            if any(p.omega_kick_radps):
                st = run.sim.state
                run.sim.state = replace(st, omega=st.omega + np.asarray(p.omega_kick_radps, dtype=float))
            run.events.append(Event(run.sim.t, "harness", "push",
                                    f"impulse_mps={list(p.impulse_mps)};omega_kick_radps={list(p.omega_kick_radps)}"))
            run.push_pending = True
        t = run.sim.t
        joints = controller.update(run.sim.state, t)
        run.drain(controller.events)
        if assist is not None:
            thr = np.full(4, assist.base_throttle) + ctl.roll_assist(run.model, run.sim.state, assist)
        else:
            thr = np.zeros(4)
        t_next = t + dt
        run.stride = int(math.floor((t_next - start) / schedule.period_s + 1e-9))
        run.stance = tuple(int(gait.phase(t_next, schedule, name).mode == "stance") for name in kin.LEG_NAMES)
        _advance(run, joints, thr, False)
        if fall.update(run.sim.state):
            run.status = "fall"
            run.events.append(Event(run.sim.t, "harness", "fall", f"z={run.sim.state.position[2]:.4f}"))
            return
    run.stride = -1
    run.stance = (0, 0, 0, 0)


def _run_morph(run: _Run, target: str) -> None:
    run.morph_state = morph.request(run.morph_state, target, run.sim.t)
    goal = "Aerial" if target == "aerial" else "Legged"
    run.v_des = (0.0, 0.0)
    limit = sum(run.cfg.guards.timeout_s(p) for p in morph.NOMINAL_DURATIONS_S) + LAND_TIMEOUT_S
    t0 = run.sim.t
    while True:
        cmd = _morph_tick(run)
        if run.morph_state.fault is not None:
            run.status = "fault"
            _log_row(run, force=True)
            return
        if run.morph_state.phase == goal and run.morph_state.target is None:
            break
        if run.sim.t - t0 > limit:
            run.status = "fault"
            run.events.append(Event(run.sim.t, "harness", "fault", f"morph to {target} did not finish"))
            return
        _advance(run, cmd.joints, _flight_throttles(run, cmd), cmd.gate)
    if goal == "Legged":
        run.trot_controller = None
        run.hover.reset()


def _run_hover(run: _Run, item: ScriptItem) -> None:
    run.hover.set_setpoint(item.setpoint_m, item.yaw_rad)
    run.setpoint = tuple(item.setpoint_m)
    for _ in range(int(round(item.duration_s / run.sim.dt))):
        cmd = _morph_tick(run)
        if run.morph_state.fault is not None:
            run.status = "fault"
            return
        _advance(run, cmd.joints, _flight_throttles(run, cmd), cmd.gate)
        run.drain(run.hover.events)


def _run_land(run: _Run, item: ScriptItem) -> None:
    g = run.cfg.guards
    dt = run.sim.dt
    z0 = run.sim.state.position[2]
    xy = run.sim.state.position[:2].copy() if run.setpoint is None else np.asarray(run.setpoint[:2])
    # aim below the touchdown height so the perch ends up loaded
    touchdown = run.sim.terrain.height - float(np.min(np.asarray(run.sim.terrain.perch_points)[:, 2]))
    floor = touchdown - 0.1
    window = deque()
    t0 = run.sim.t
    while True:
        t = run.sim.t
        z_sp = max(floor, z0 - item.descent_rate_mps * (t - t0))
        run.setpoint = (float(xy[0]), float(xy[1]), z_sp)
        run.hover.set_setpoint(run.setpoint)
        cmd = _morph_tick(run)
        _advance(run, cmd.joints, _flight_throttles(run, cmd), cmd.gate)
        run.drain(run.hover.events)
        st = run.sim.state
        window.append((st.t, morph.total_contact_normal(st), st.velocity[2]))
        while window and window[0][0] < st.t - g.landing_window_s - dt:
            window.popleft()
        ts, fs, vs = zip(*window)
        if morph.landing_detect(ts, fs, vs, g.landing_window_s, g.perch_contact_threshold_N,
                                g.landing_speed_mps):
            run.events.append(Event(st.t, "harness", "landing_detect", f"z={st.position[2]:.4f}"))
            return
        if st.t - t0 > LAND_TIMEOUT_S:
            run.status = "fault"
            run.events.append(Event(st.t, "harness", "fault", "landing not detected"))
            return


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None,
                 morph_trace: bool = False) -> "RunSummary":
    """Execute the mode script and write trajectory, events, transitions and summary."""
    errors = validate(cfg)
    if errors:
        raise ScenarioError(errors)
    out = Path(out_dir or cfg.output_dir or Path("runs") / cfg.name)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.model()
    q0 = ctl.standing_pose(model, cfg.trot.height, cfg.trot.stance_width)
    terrain = Terrain(friction=cfg.friction)
    z0 = terrain.height + cfg.trot.height - model.weight / (4 * model.contact.stiffness)
    sim = Simulator(model, make_state(q0, position=(0.0, 0.0, z0)), terrain, cfg.dt_s)

    traj_path = out / TRAJECTORY_FILE
    with open(traj_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_BASE_COLS + (_TRACE_COLS if morph_trace else []))
        run = _Run(cfg, model, sim, writer, morph_trace,
                   log_every=max(1, int(round(cfg.log_interval_s / cfg.dt_s))))
        run.hover = ctl.HoverController(model, cfg.hover)
        if cfg.script:
            run.item, run.action = 1, cfg.script[0].action
            _log_row(run, force=True)
        try:
            _execute(run)
        except SimulationFault as exc:
            run.status = "fault"
            run.events.append(Event(run.sim.t, "sim", "fault", f"{exc} ({exc.term})"))
        if cfg.script:
            _log_row(run, force=True)

    _write_events(out / EVENTS_FILE, run.events)
    _write_transitions(out / TRANSITIONS_FILE, run.transitions)
    summary = summarize(traj_path)
    (out / SUMMARY_FILE).write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    return summary


def _execute(run: _Run) -> None:
    script = run.cfg.script
    i = 0
    while i < len(script):
        item = script[i]
        run.item, run.action = i + 1, item.action
        if item.action == "trot":
            pushes = []
            j = i + 1
            while j < len(script) and script[j].action == "push":
                pushes.append(script[j])
                j += 1
            run.setpoint = None
            _run_trot(run, item, pushes)
            i = j
        elif item.action == "morph_to_aerial":
            _run_morph(run, "aerial")
            i += 1
        elif item.action == "hover":
            _run_hover(run, item)
            i += 1
        elif item.action == "land":
            _run_land(run, item)
            i += 1
        elif item.action == "morph_to_legged":
            _run_morph(run, "legged")
            run.setpoint = None
            i += 1
        else:
            i += 1
        if run.status != "ok":
            _log_row(run, force=True)
            return


def _write_events(path: Path, events: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "source", "kind", "detail"])
        for e in sorted(events, key=lambda e: e.t):
            w.writerow([_fmt(round(e.t, 9)), e.source, e.kind, e.detail])


def _write_transitions(path: Path, events: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "phase_from", "phase_to", "guard_values"])
        for e in events:
            if e.kind == "transition":
                move, _, guards = e.detail.partition(";")
                a, _, b = move.partition("->")
                w.writerow([_fmt(round(e.t, 9)), a, b, guards])
            else:
                w.writerow([_fmt(round(e.t, 9)), e.kind, "", e.detail])


def run_batch(paths, out_root: str | Path, jobs: int = 1, morph_trace: bool = False) -> list[tuple[str, int]]:
    """Run independent scenarios, each into its own directory under ``out_root``."""
    tasks = [(str(p), str(Path(out_root) / Path(p).stem), morph_trace) for p in paths]
    if jobs <= 1 or len(tasks) <= 1:
        return [_batch_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_batch_one, tasks))


def _batch_one(task) -> tuple[str, int]:
    path, out, trace = task
    try:
        summary = run_scenario(load_scenario(path), out, trace)
    except ScenarioError:
        return path, EXIT_CONFIG
    return path, summary.exit_code


# --- summaries -----------------------------------------------------------------------

@dataclass
class RunSummary:
    status: str
    exit_code: int
    duration_s: float
    items: list
    phase_durations_s: dict
    legged_max_roll_deg: float
    legged_max_pitch_deg: float
    legged_mean_abs_roll_deg: float
    legged_mean_abs_pitch_deg: float
    trot: list
    pushes: list
    morph_forward_complete: bool
    morph_forward_s: float | None
    morph_reverse_complete: bool
    morph_reverse_s: float | None
    takeoff_time_s: float | None
    hover: list
    landing_time_s: float | None
    interlock_violations: int
    logs: dict

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def read_log(path: str | Path) -> dict[str, np.ndarray | list]:
    """Columns of a trajectory CSV; raises LogParseError with the offending line."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LogParseError("empty file, no header", 1) from None
        missing = [c for c in _BASE_COLS if c not in header]
        if missing:
            raise LogParseError(f"header lacks columns {missing}", 1)
        rows = []
        for line_no, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise LogParseError(f"expected {len(header)} fields, found {len(row)}", line_no)
            parsed = []
            for name, v in zip(header, row):
                if name in _TEXT_COLS:
                    parsed.append(v)
                    continue
                try:
                    parsed.append(float(v))
                except ValueError:
                    raise LogParseError(f"column {name!r}: not a number: {v!r}", line_no) from None
            rows.append(parsed)
    cols: dict = {}
    for k, name in enumerate(header):
        vals = [r[k] for r in rows]
        cols[name] = vals if name in _TEXT_COLS else np.array(vals, dtype=float)
    return cols


def _first(mask) -> int | None:
    idx = np.nonzero(mask)[0]
    return int(idx[0]) if len(idx) else None


def summarize(log_path: str | Path) -> RunSummary:
    """All summary statistics, recomputed from the trajectory CSV."""
    log_path = Path(log_path)
    c = read_log(log_path)
    n = len(c["t"])
    t = c["t"]
    status = c["status"][-1] if n else "ok"
    logs = {"trajectory": str(log_path), "events": str(log_path.with_name(EVENTS_FILE)),
            "transitions": str(log_path.with_name(TRANSITIONS_FILE))}
    deg = math.degrees
    item = c["item"].astype(int) if n else np.zeros(0, dtype=int)
    actions = c["action"]
    phases = c["phase"]

    items = []
    for k in sorted(set(item.tolist())):
        idx = np.nonzero(item == k)[0]
        # an item starts where the previous one ended
        start = t[idx[0] - 1] if idx[0] > 0 else t[idx[0]]
        items.append({"index": k, "action": actions[idx[0]], "start_s": float(start),
                      "end_s": float(t[idx[-1]]), "duration_s": round(float(t[idx[-1]] - start), 9)})

    phase_durations: dict[str, float] = {}
    for k in range(1, n):
        phase_durations[phases[k]] = phase_durations.get(phases[k], 0.0) + float(t[k] - t[k - 1])
    phase_durations = {p: round(v, 9) for p, v in phase_durations.items()}

    legged = np.array([a == "trot" for a in actions], dtype=bool)
    roll, pitch = np.abs(c["roll"]), np.abs(c["pitch"])
    lmax_r = deg(float(roll[legged].max())) if legged.any() else 0.0
    lmax_p = deg(float(pitch[legged].max())) if legged.any() else 0.0
    lmean_r = deg(float(roll[legged].mean())) if legged.any() else 0.0
    lmean_p = deg(float(pitch[legged].mean())) if legged.any() else 0.0

    trot = []
    pushes = []
    for it in items:
        if it["action"] != "trot":
            continue
        idx = np.nonzero(item == it["index"])[0]
        i0 = idx[0] - 1 if idx[0] > 0 else idx[0]
        idx = idx[t[idx] > t[i0]]
        if len(idx) == 0:
            continue
        v_des = np.array([c["v_des_x"][idx[-1]], c["v_des_y"][idx[-1]]])
        disp = np.array([c["x"][idx[-1]] - c["x"][i0], c["y"][idx[-1]] - c["y"][i0]])
        dur = float(t[idx[-1]] - t[i0])
        v_mean = disp / dur if dur > 0 else np.zeros(2)
        speed = float(np.linalg.norm(v_mean))
        target = float(np.linalg.norm(v_des))
        st = np.vstack([c[f"stance_{leg}"][idx] for leg in kin.LEG_NAMES]).T.astype(int)
        pair_a = (st[:, 0] == 1) & (st[:, 2] == 1) & (st[:, 1] == 0) & (st[:, 3] == 0)
        pair_b = (st[:, 1] == 1) & (st[:, 3] == 1) & (st[:, 0] == 0) & (st[:, 2] == 0)
        labels = np.where(pair_a, 0, np.where(pair_b, 1, -1))
        switches = int(np.count_nonzero(np.diff(labels) != 0))
        trot.append({
            "index": it["index"], "duration_s": dur, "v_des_mps": float(target),
            "mean_speed_mps": speed, "speed_ratio": speed / target if target > 0 else None,
            "max_roll_deg": deg(float(roll[idx].max())), "max_pitch_deg": deg(float(pitch[idx].max())),
            "diagonal_pairs_only": bool(np.all(labels >= 0)), "pair_switches": switches,
        })
        stride = c["stride"][idx].astype(int)
        for pk in idx[c["push"][idx] > 0]:
            pushes.append(_push_metrics(c, idx, pk, stride, v_des))

    hover = []
    for it in items:
        if it["action"] != "hover":
            continue
        idx = np.nonzero(item == it["index"])[0]
        hover.append(_hover_metrics(c, idx))

    def span(first_phase: str, last_phase: str, after: int = 0):
        a = _first(np.array([p == first_phase for p in phases[after:]], dtype=bool))
        if a is None:
            return None, None
        a += after
        b = _first(np.array([p == last_phase for p in phases[a:]], dtype=bool))
        if b is None:
            return a, None
        return a, a + b

    fa, fb = span("Crouch", "Aerial")
    fwd_s = float(t[fb] - t[fa - 1]) if fb is not None else None
    ra, rb = span("SpinDown", "Legged")
    rev_s = float(t[rb] - t[ra - 1]) if rb is not None else None

    takeoff = None
    if fb is not None:
        contact = c["fz_perch"] + sum(c[f"fz_{leg}"] for leg in kin.LEG_NAMES)
        k = _first((np.arange(n) >= fb) & (contact <= 0.0))
        takeoff = float(t[k]) if k is not None else None

    landing = None
    for it in items:
        if it["action"] == "land" and (it["index"] < int(item[-1]) or status == "ok"):
            landing = it["end_s"]

    closed = np.array([p not in morph.GATE_OPEN for p in phases], dtype=bool)
    thr = np.vstack([c[f"thr_{leg}"] for leg in kin.LEG_NAMES]).T if n else np.zeros((0, 4))
    # roll assist is the one sanctioned thruster use in legged mode
    assisted = np.array([a == "trot" for a in actions], dtype=bool)
    violations = int(np.count_nonzero(closed & ~assisted & np.any(thr > 0, axis=1)))

    exit_code = {"ok": EXIT_OK, "fault": EXIT_FAULT, "fall": EXIT_FALL}.get(status, EXIT_FAULT)
    if exit_code == EXIT_OK and any(not p["recovered"] for p in pushes):
        exit_code = EXIT_FALL
    if exit_code == EXIT_OK and violations:
        exit_code = EXIT_FAULT

    return RunSummary(
        status=status, exit_code=exit_code, duration_s=float(t[-1] - t[0]) if n else 0.0,
        items=items, phase_durations_s=phase_durations,
        legged_max_roll_deg=lmax_r, legged_max_pitch_deg=lmax_p,
        legged_mean_abs_roll_deg=lmean_r, legged_mean_abs_pitch_deg=lmean_p,
        trot=trot, pushes=pushes,
        morph_forward_complete=fb is not None, morph_forward_s=fwd_s,
        morph_reverse_complete=rb is not None, morph_reverse_s=rev_s,
        takeoff_time_s=takeoff, hover=hover, landing_time_s=landing,
        interlock_violations=violations, logs=logs,
    )


def _push_metrics(c, idx, pk, stride, v_des) -> dict:
    t = c["t"]
    t_push = float(t[pk])
    after = idx[idx >= pk]
    s0 = int(c["stride"][pk])
    # stride-averaged velocity of each full stride after the push
    recovered_at = None
    errors = []
    for k in range(1, PUSH_RECOVERY_STRIDES + 1):
        sel = idx[stride == s0 + k]
        if len(sel) < 2:
            break
        # heading is free during trot, so compare speeds rather than velocity vectors
        speed = float(np.hypot(c["vx"][sel].mean(), c["vy"][sel].mean()))
        target = float(np.linalg.norm(v_des))
        err = abs(speed - target)
        errors.append(err)
        if recovered_at is None and err <= PUSH_RECOVERY_FRACTION * target:
            recovered_at = k
    roll = np.abs(c["roll"][after])
    above = np.nonzero(roll > ROLL_SETTLE_BAND_RAD)[0]
    settle = float(t[after[above[-1]]] - t_push) if len(above) else 0.0
    if len(above) and above[-1] == len(after) - 1:
        settle = math.inf
    return {"t_s": t_push, "stride_speed_errors_mps": errors, "recovered": recovered_at is not None,
            "recovery_stride": recovered_at, "roll_settle_s": settle,
            "peak_roll_deg": math.degrees(float(roll.max())) if len(roll) else 0.0}


def _hover_metrics(c, idx) -> dict:
    t = c["t"][idx]
    ez = np.abs(c["z"][idx] - c["sp_z"][idx])
    i0 = idx[0] - 1 if idx[0] > 0 else idx[0]
    t_start = float(c["t"][i0])
    out_of_band = np.nonzero(ez > HOVER_SETTLE_BAND_M)[0]
    if len(out_of_band) == 0:
        k = 0
    elif out_of_band[-1] == len(idx) - 1:
        k = None
    else:
        k = int(out_of_band[-1]) + 1
    res = {"duration_s": float(t[-1] - t_start), "setpoint_m": [float(c[a][idx[0]]) for a in ("sp_x", "sp_y", "sp_z")]}
    if k is None:
        res.update(settled=False, settle_s=None, rms_roll_deg=None, rms_pitch_deg=None,
                   alt_error_m=None, alt_error_max_m=None)
        return res
    tail = idx[k:]
    res.update(
        settled=True, settle_s=float(t[k] - t_start),
        rms_roll_deg=math.degrees(float(np.sqrt(np.mean(c["roll"][tail] ** 2)))),
        rms_pitch_deg=math.degrees(float(np.sqrt(np.mean(c["pitch"][tail] ** 2)))),
        alt_error_m=float(np.mean(ez[k:])), alt_error_max_m=float(np.max(ez[k:])),
    )
    return res


# --- plot data ------------------------------------------------------------------------

def available_channels(header) -> list[str]:
    numeric = [h for h in header if h not in _TEXT_COLS and h != "t"]
    feet = [f"foot_{leg}_{a}" for leg in kin.LEG_NAMES for a in "xyz"]
    return numeric + feet


def emit_plotdata(log_path: str | Path, channels, out_dir: str | Path | None = None) -> list[Path]:
    """Write one two-column (t, value) CSV per requested channel.

    ``foot_<LEG>_<x|y|z>`` channels are leg-end positions in the hip frame,
    recomputed from the logged joint angles by forward kinematics.
    """
    channels = [ch for ch in channels if ch]
    if not channels:
        return []
    c = read_log(log_path)
    header = list(c.keys())
    avail = available_channels(header)
    unknown = [ch for ch in channels if ch not in avail]
    if unknown:
        raise KeyError(f"unknown channel(s) {unknown}; available: {', '.join(avail)}")
    out = Path(out_dir) if out_dir is not None else Path(log_path).parent / "plotdata"
    out.mkdir(parents=True, exist_ok=True)
    model_legs = kin.default_legs()
    paths = []
    for ch in channels:
        if ch.startswith("foot_"):
            _, leg, axis = ch.split("_")
            li = kin.LEG_NAMES.index(leg)
            q = np.vstack([c[f"q_{leg}_{j}"] for j in kin.JOINT_NAMES]).T
            vals = np.array([kin.forward_kinematics(model_legs[li], qi)["xyz".index(axis)] for qi in q])
        else:
            vals = c[ch]
        path = out / f"{ch}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", ch])
            for tv, v in zip(c["t"], vals):
                w.writerow([repr(float(tv)), repr(float(v))])
        paths.append(path)
    return paths
