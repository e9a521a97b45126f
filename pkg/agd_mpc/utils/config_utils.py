import contextlib
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from ..mpc import DisturbanceEvent, MpcConfig, SolverKind
from ..solvers.agd_solver import AgdSettings
from ..solvers.ddp_solver import DdpSettings, default_alphas
from .cost import CostFunctions, CostWeights, EeMode, ReferenceSpec
from .dynamics import ModelSpec, RobotDynamics
from .errors import ConfigError, InvalidArgumentError
from .ocp import OcpDef

logger = logging.getLogger(__name__)

SETTINGS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "settings")
MODEL_PRESETS = ("double_integrator", "pendulum", "planar_arm2", "planar_arm3")
MODEL_FIELDS = ("kind", "n_links", "link_lengths", "link_masses", "com_ratios",
                "gravity", "viscous_damping", "a_matrix", "b_matrix")


# ---- schema (validated by omegaconf: unknown keys and type mismatches are rejected) ----

@dataclass
class ModelSection:
    preset: Optional[str] = None
    kind: Optional[str] = None
    n_links: Optional[int] = None
    link_lengths: Optional[List[float]] = None
    link_masses: Optional[List[float]] = None
    com_ratios: Optional[List[float]] = None
    gravity: Optional[float] = None
    viscous_damping: Optional[float] = None
    a_matrix: Optional[List[List[float]]] = None
    b_matrix: Optional[List[List[float]]] = None


@dataclass
class CostSection:
    q_diag: Optional[List[float]] = None
    r_diag: Optional[List[float]] = None
    qf_diag: Optional[List[float]] = None
    w_ee: float = 0.0
    terminal_scale: float = 1.0
    x_ref: Optional[List[float]] = None
    u_ref: Optional[List[float]] = None
    gravity_compensation: bool = False
    ee_mode: str = "off"
    fixed_point: List[float] = field(default_factory=lambda: [0.0, 0.0])
    circle_center: List[float] = field(default_factory=lambda: [0.0, 0.0])
    circle_radius: float = 0.0
    circle_omega: float = 0.0
    circle_phase: float = 0.0


@dataclass
class OcpSection:
    horizon: int = 30
    dt: float = 0.01
    x0: Optional[List[float]] = None
    start_on_reference: bool = False
    preview: bool = True


@dataclass
class AgdSection:
    alpha: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 1000
    grad_tol: float = 0.0


@dataclass
class DdpSection:
    mu_init: float = 1e-6
    mu_min: float = 1e-9
    mu_max: float = 1e6
    mu_factor: float = 10.0
    alphas: Optional[List[float]] = None
    armijo_c: float = 1e-4
    max_iters: int = 100
    grad_tol: float = 1e-9


@dataclass
class MpcSection:
    sim_duration: float = 10.0
    control_dt: float = 0.001
    iters_per_cycle: Optional[int] = None
    preview_reference: bool = True
    warm_start: bool = True
    shift_policy: str = "time_aligned"
    record_wall_time: bool = True
    progress: bool = False


@dataclass
class DisturbanceSection:
    t_start: float = 0.0
    t_end: float = 0.0
    tau_extra: List[float] = field(default_factory=list)


@dataclass
class BenchSection:
    horizons: List[int] = field(default_factory=lambda: [100, 400])
    agd_iters: int = 200
    ddp_iters: int = 50
    warmup_iters: int = 10
    n_jobs: int = 1


@dataclass
class GradcheckSection:
    models: List[str] = field(default_factory=lambda: list(MODEL_PRESETS))
    instances: int = 20
    horizon: int = 30
    tolerance: float = 1e-4


@dataclass
class ExperimentSchema:
    model: ModelSection = field(default_factory=ModelSection)
    cost: CostSection = field(default_factory=CostSection)
    ocp: OcpSection = field(default_factory=OcpSection)
    agd: AgdSection = field(default_factory=AgdSection)
    ddp: DdpSection = field(default_factory=DdpSection)
    mpc: MpcSection = field(default_factory=MpcSection)
    disturbances: List[DisturbanceSection] = field(default_factory=list)
    bench: BenchSection = field(default_factory=BenchSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)
    output_dir: str = "results"
    seed: int = 0


@dataclass(eq=False)
class ExperimentConfig:
    """A validated experiment: the resolved raw document plus the domain objects built from it"""
    raw: dict
    model: ModelSpec
    weights: CostWeights
    refs: ReferenceSpec
    ocp: OcpDef
    agd: AgdSettings
    ddp: DdpSettings
    mpc: MpcSection
    events: List[DisturbanceEvent]
    bench: BenchSection
    gradcheck: GradcheckSection
    output_dir: str
    seed: int
    path: Optional[str] = None

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.raw == other.raw

    def solver_settings(self, solver):
        return self.agd if SolverKind(solver) is SolverKind.AGD else self.ddp

    def mpc_config(self, solver):
        section = self.mpc
        return MpcConfig(sim_duration=section.sim_duration, control_dt=section.control_dt,
                         iters_per_cycle=section.iters_per_cycle, solver=SolverKind(solver),
                         preview_reference=section.preview_reference, seed=self.seed,
                         warm_start=section.warm_start, shift_policy=section.shift_policy,
                         record_wall_time=section.record_wall_time, progress=section.progress)


class ConfigLoader:
    """Parse, validate and resolve JSON experiment configs"""

    @staticmethod
    def get_settings_path(name):
        return os.path.join(SETTINGS_DIR, f"{name}.json")

    @staticmethod
    def load_model_preset(name):
        """Model preset from the settings directory, as a dict of ModelSpec fields"""
        settings_path = ConfigLoader.get_settings_path(name)
        if not os.path.exists(settings_path):
            raise ConfigError(f"Unknown model preset {name!r} (available: {', '.join(MODEL_PRESETS)})",
                              key="preset")
        with open(settings_path, "r", encoding="utf-8") as f:
            preset = json.load(f)
        unknown = set(preset) - set(MODEL_FIELDS)
        if unknown:
            raise ConfigError(f"Model preset {name!r} has unknown keys: {sorted(unknown)}", path=settings_path)
        return preset

    @staticmethod
    def preset_model(name):
        return ConfigLoader._model_spec(ConfigLoader.load_model_preset(name))

    @staticmethod
    def line_of(text, full_key):
        """1-based line of a dotted key (e.g. 'ocp.dt', 'disturbances[0].t_end') in JSON text"""
        if not text or not full_key:
            return None
        pos = 0
        found = None
        for part in re.findall(r"[A-Za-z_][A-Za-z0-9_]*", str(full_key)):
            match = re.compile(rf'"{re.escape(part)}"\s*:').search(text, pos)
            if match is None:
                break
            pos = match.start()
            found = pos
        if found is None:
            return None
        return text.count("\n", 0, found) + 1

    @staticmethod
    def load(path):
        logger.info(f"📂 Loading experiment config {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"Cannot read config: {e.strerror}", path=str(path))
        return ConfigLoader.loads(text, path=str(path))

    @staticmethod
    def loads(text, path=None):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON: {e.msg}", path=path, line=e.lineno)
        if not isinstance(data, dict):
            raise ConfigError("Config must be a JSON object", path=path, line=1)

        try:
            merged = OmegaConf.merge(OmegaConf.structured(ExperimentSchema), OmegaConf.create(data))
            schema = OmegaConf.to_object(merged)
            raw = OmegaConf.to_container(merged, resolve=True, enum_to_str=True)
        except OmegaConfBaseException as e:
            key = getattr(e, "full_key", None)
            message = str(e).splitlines()[0] if str(e) else type(e).__name__
            raise ConfigError(message, path=path, line=ConfigLoader.line_of(text, key), key=key)
        return ConfigLoader.build(schema, raw, text=text, path=path)

    @staticmethod
    @contextlib.contextmanager
    def _located(text, path, key):
        """Re-raise domain validation errors as ConfigErrors pointing at key"""
        try:
            yield
        except ConfigError as e:
            if e.line is None:
                e.line = ConfigLoader.line_of(text, e.key or key)
            e.path = e.path or path
            raise
        except InvalidArgumentError as e:
            raise ConfigError(str(e), path=path, line=ConfigLoader.line_of(text, key), key=key) from e

    @staticmethod
    def _require(condition, message, key):
        if not condition:
            raise ConfigError(message, key=key)

    @staticmethod
    def _model_spec(values):
        values = dict(values)
        if values.get("kind") is None:
            raise ConfigError("model needs a kind or a preset", key="model")
        for name in ("link_lengths", "link_masses", "com_ratios"):
            if name in values:
                values[name] = tuple(values[name])
        return ModelSpec(**values)

    @staticmethod
    def _initial_state(model, refs, section):
        x0 = np.zeros(model.nx) if section.x0 is None else np.asarray(section.x0, dtype=float)
        ConfigLoader._require(x0.shape == (model.nx,), f"x0 must have {model.nx} entries", "ocp.x0")
        if not section.start_on_reference:
            return x0
        ConfigLoader._require(model.has_end_effector and refs.ee_mode is not EeMode.OFF,
                              "start_on_reference needs a planar_arm model with ee tracking", "ocp.start_on_reference")

        n = model.n_dof
        q_init = x0[:n] if np.any(x0[:n]) else np.full(n, 0.3)
        q = RobotDynamics.inverse_kinematics(model, CostFunctions.ee_target(refs, 0.0), q_init)
        target_velocity = np.zeros(2)
        if refs.ee_mode is EeMode.CIRCLE:
            angle = refs.circle_phase
            target_velocity = refs.circle_radius * refs.circle_omega * np.array([-np.sin(angle), np.cos(angle)])
        qd = np.linalg.lstsq(RobotDynamics.ee_jacobian(model, q), target_velocity, rcond=None)[0]
        return np.concatenate([q, qd])

    @staticmethod
    def build(schema, raw, text=None, path=None):
        """Domain objects from a schema-validated config"""
        located = ConfigLoader._located

        with located(text, path, "model"):
            values = {}
            if schema.model.preset is not None:
                values.update(ConfigLoader.load_model_preset(schema.model.preset))
            for name in MODEL_FIELDS:
                value = getattr(schema.model, name)
                if value is not None:
                    values[name] = value
            model = ConfigLoader._model_spec(values)

        section = schema.cost
        with located(text, path, "cost"):
            nx, nu = model.nx, model.nu
            x_ref = section.x_ref if section.x_ref is not None else [0.0] * nx
            u_ref = section.u_ref if section.u_ref is not None else [0.0] * nu
            weights = CostWeights(
                q_diag=section.q_diag if section.q_diag is not None else [0.0] * nx,
                r_diag=section.r_diag if section.r_diag is not None else [1.0] * nu,
                w_ee=section.w_ee, terminal_scale=section.terminal_scale, qf_diag=section.qf_diag)
            refs = ReferenceSpec(x_ref=x_ref, u_ref=u_ref, ee_mode=section.ee_mode,
                                 fixed_point=section.fixed_point, circle_center=section.circle_center,
                                 circle_radius=section.circle_radius, circle_omega=section.circle_omega,
                                 circle_phase=section.circle_phase)
            CostFunctions.check_dimensions(weights, refs, model)

        with located(text, path, "ocp"):
            ConfigLoader._require(schema.ocp.dt > 0, f"dt must be positive, got {schema.ocp.dt}", "ocp.dt")
            ConfigLoader._require(schema.ocp.horizon >= 1, f"horizon must be at least 1, got {schema.ocp.horizon}",
                                  "ocp.horizon")
            x0 = ConfigLoader._initial_state(model, refs, schema.ocp)

        if section.gravity_compensation:
            with located(text, path, "cost.gravity_compensation"):
                refs = replace(refs, u_ref=tuple(RobotDynamics.gravity_torque(model, x0[:model.n_dof])))

        with located(text, path, "ocp"):
            ocp = OcpDef(model=model, weights=weights, refs=refs, horizon=schema.ocp.horizon,
                         dt=schema.ocp.dt, x0=x0, preview=schema.ocp.preview)

        with located(text, path, "agd"):
            agd = AgdSettings(**vars(schema.agd))
        with located(text, path, "ddp"):
            ddp_values = vars(schema.ddp).copy()
            if ddp_values["alphas"] is None:
                ddp_values["alphas"] = default_alphas()
            ddp = DdpSettings(**ddp_values)

        with located(text, path, "mpc"):
            # validates the section once; per-solver configs are built on demand
            MpcConfig(sim_duration=schema.mpc.sim_duration, control_dt=schema.mpc.control_dt,
                      iters_per_cycle=schema.mpc.iters_per_cycle, shift_policy=schema.mpc.shift_policy)
            ConfigLoader._require(schema.ocp.dt >= schema.mpc.control_dt - 1e-12,
                                  "ocp.dt must not be shorter than mpc.control_dt", "mpc.control_dt")

        events = []
        for i, item in enumerate(schema.disturbances):
            with located(text, path, f"disturbances[{i}]"):
                ConfigLoader._require(len(item.tau_extra) == model.nu,
                                      f"tau_extra must have {model.nu} entries", f"disturbances[{i}].tau_extra")
                events.append(DisturbanceEvent(t_start=item.t_start, t_end=item.t_end,
                                               tau_extra=tuple(item.tau_extra)))

        with located(text, path, "bench"):
            bench = schema.bench
            for name in ("agd_iters", "ddp_iters", "n_jobs"):
                ConfigLoader._require(getattr(bench, name) >= 1, f"{name} must be at least 1", f"bench.{name}")
            ConfigLoader._require(bench.warmup_iters >= 0, "warmup_iters must be nonnegative", "bench.warmup_iters")
        with located(text, path, "gradcheck"):
            check = schema.gradcheck
            for name in check.models:
                ConfigLoader._require(name in MODEL_PRESETS, f"Unknown gradcheck model {name!r}", "gradcheck.models")
            ConfigLoader._require(check.instances >= 1 and check.horizon >= 1,
                                  "gradcheck instances and horizon must be at least 1", "gradcheck")
            ConfigLoader._require(check.tolerance > 0, "tolerance must be positive", "gradcheck.tolerance")

        return ExperimentConfig(raw=raw, model=model, weights=weights, refs=refs, ocp=ocp,
                                agd=agd, ddp=ddp, mpc=schema.mpc, events=events,
                                bench=schema.bench, gradcheck=schema.gradcheck,
                                output_dir=schema.output_dir, seed=schema.seed, path=path)

    @staticmethod
    def dumps(cfg):
        """Resolved config as JSON text; loads(dumps(cfg)) == cfg"""
        return json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n"

    @staticmethod
    def with_overrides(cfg, **updates):
        """Same config with top-level keys (seed, output_dir, ...) replaced"""
        raw = json.loads(json.dumps(cfg.raw))
        raw.update({key: value for key, value in updates.items() if value is not None})
        return ConfigLoader.loads(json.dumps(raw), path=cfg.path)

    @staticmethod
    def config_hash(cfg):
        canonical = json.dumps(cfg.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
