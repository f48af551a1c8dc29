"""Experiment configuration, manifests and (de)serialization.

Config documents are strict JSON: unknown keys are errors, defaults are
materialized on parse, and the manifest written next to every artifact
echoes the full config plus all physics-convention flags, so a run can be
re-executed byte-identically from its manifest alone.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass, field, fields

import numpy as np

from . import __version__
from .core import UNORDERED, ModelParams
from .dynamics import (
    LANGEVIN,
    MICROCANONICAL,
    NOISE_ALL,
    IntegratorConfig,
    TrajectoryRecord,
)


class ConfigError(ValueError):
    """Config document rejected; message carries the offending field path."""


@dataclass
class ModelSection:
    d: int = 2
    N: int = 4
    mu: float = 1.0
    omega: float = 1.0
    kappa: float = 0.0
    pair_sum: str = UNORDERED


@dataclass
class IntegratorSection:
    mode: str = MICROCANONICAL
    dt: float = 0.01
    steps: int = 1000
    gamma: float = 0.0
    temperature: float = 0.0
    record_every: int = 1
    record_frames: bool = False
    noise_mode: str = NOISE_ALL
    project_trace_noise: bool = False


@dataclass
class EnsembleSection:
    replicas: int = 1
    master_seed: int = 2024
    spread: float = 0.5


@dataclass
class AnalysisSection:
    grid_lo: float = -4.0
    grid_hi: float = 4.0
    grid_points: int = 64
    bandwidth: float = 0.0  # 0 = Silverman rule
    fit_window: list = field(default_factory=lambda: [0.0, 0.0])  # 0s = 5..50 recorded lags
    method: str = "msd_slope"


@dataclass
class SweepSection:
    t_scaled: float = 0.1
    N_list: list = field(default_factory=lambda: [8, 16, 32])
    replicas: int = 8
    burn_in_steps: int = 2000
    steps: int = 4000
    dt: float = 0.01
    gamma: float = 0.1
    record_every: int = 5
    spread: float = 0.5


@dataclass
class OracleSection:
    grid_points: int = 512
    extent: float = 24.0  # total box length
    dt: float = 0.001
    steps: int = 2000
    hbar: float = 1.0
    mass: float = 1.0
    sigma0: float = 1.0
    omega0: float = 1.0
    p0: float = 0.0
    walkers: int = 10000
    nu_convention: str = "both"  # "nelson" (hbar/2m), "direct" (hbar/m), "both"
    potential: str = "free"  # "free" or "harmonic"


@dataclass
class OutputSection:
    directory: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    integrator: IntegratorSection = field(default_factory=IntegratorSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    output: OutputSection = field(default_factory=OutputSection)

    def model_params(self) -> ModelParams:
        m = self.model
        return ModelParams(d=m.d, N=m.N, mu=m.mu, omega=m.omega, kappa=m.kappa,
                           pair_sum=m.pair_sum)

    def integrator_config(self, seed: int) -> IntegratorConfig:
        i = self.integrator
        return IntegratorConfig(
            mode=i.mode, dt=i.dt, steps=i.steps, gamma=i.gamma,
            temperature=i.temperature, seed=seed, record_every=i.record_every,
            record_frames=i.record_frames, noise_mode=i.noise_mode,
            project_trace_noise=i.project_trace_noise,
        )


def _fill_section(cls, doc: dict, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    for key in doc:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key")
    kwargs = {}
    for name in known:
        if name not in doc:
            continue
        val = doc[name]
        want = type(getattr(defaults, name))
        ok = (
            isinstance(val, bool) if want is bool
            else isinstance(val, (int, float)) and not isinstance(val, bool) if want is float
            else isinstance(val, int) and not isinstance(val, bool) if want is int
            else isinstance(val, want)
        )
        if not ok:
            raise ConfigError(f"{path}.{name}: expected {want.__name__}")
        kwargs[name] = val
    return cls(**kwargs)


_SECTIONS = {
    "model": ModelSection,
    "integrator": IntegratorSection,
    "ensemble": EnsembleSection,
    "analysis": AnalysisSection,
    "sweep": SweepSection,
    "oracle": OracleSection,
    "output": OutputSection,
}


def parse_config(text: str) -> ExperimentConfig:
    """Strict parse: JSON syntax errors carry line/column, semantic errors a field path."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"syntax error at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected an object")
    if "config" in doc:  # a manifest: re-execute from its config echo
        doc = doc["config"]
    for key in doc:
        if key not in _SECTIONS:
            raise ConfigError(f"{key}: unknown section")
    cfg = ExperimentConfig(**{
        name: _fill_section(cls, doc.get(name, {}), name)
        for name, cls in _SECTIONS.items()
    })
    _validate(cfg, sweep_requested="sweep" in doc)
    return cfg


def _validate(cfg: ExperimentConfig, sweep_requested: bool):
    m = cfg.model
    if m.d < 1:
        raise ConfigError("model.d: must be >= 1")
    if m.N < 2:
        raise ConfigError("model.N: must be >= 2")
    if m.mu <= 0:
        raise ConfigError("model.mu: must be > 0")
    if m.omega <= 0:
        raise ConfigError("model.omega: must be > 0")
    if m.kappa < 0:
        raise ConfigError("model.kappa: must be >= 0")
    i = cfg.integrator
    if i.dt <= 0:
        raise ConfigError("integrator.dt: must be > 0")
    if i.steps < 0:
        raise ConfigError("integrator.steps: must be >= 0")
    if i.mode not in (MICROCANONICAL, LANGEVIN):
        raise ConfigError(f"integrator.mode: unknown mode {i.mode!r}")
    if i.mode == LANGEVIN and i.gamma <= 0:
        raise ConfigError("integrator.gamma: langevin mode requires gamma > 0")
    if cfg.ensemble.replicas < 1:
        raise ConfigError("ensemble.replicas: must be >= 1")
    if sweep_requested and m.d < 2:
        raise ConfigError(
            "sweep: scaling formulas require model.d >= 2 (singular at d = 1)"
        )
    if cfg.oracle.nu_convention not in ("nelson", "direct", "both"):
        raise ConfigError("oracle.nu_convention: must be nelson, direct or both")
    if cfg.oracle.potential not in ("free", "harmonic"):
        raise ConfigError("oracle.potential: must be free or harmonic")


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True)


def replica_seed(master_seed: int, replica: int, stream: str) -> int:
    """Splittable seeding: adding replicas or streams never perturbs existing ones."""
    tags = {"dynamics": 0, "burn_in": 1, "init": 2, "nelson": 3, "analysis": 4}
    ss = np.random.SeedSequence([int(master_seed), int(replica), tags[stream]])
    return int(ss.generate_state(1)[0])


def conventions(cfg: ExperimentConfig) -> dict:
    return {
        "potential_sign": "commuting_configurations_are_minima",
        "pair_sum": cfg.model.pair_sum,
        "continuity_sign": "drho_dt + div(rho v) = 0",
        "nu_convention": cfg.oracle.nu_convention,
        "kinetic_mass_weighting": "diag 2*mu, offdiag 4*mu (K = mu Tr V^2)",
    }


def build_manifest(cfg: ExperimentConfig, per_replica_seeds: list, wall_clock: float) -> dict:
    return {
        "config": dataclasses.asdict(cfg),
        "code_version": __version__,
        "per_replica_seeds": per_replica_seeds,
        "wall_clock_seconds": wall_clock,
        "conventions": conventions(cfg),
    }


# ---------------------------------------------------------------------------
# atomic artifact writing


def atomic_write_text(path: str, text: str):
    """Write via a temp file in the same directory + rename; never a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def record_to_csv(record: TrajectoryRecord) -> str:
    """Fixed column order: time, K, U, momenta, per-direction eigenvalues,
    then (if frames were recorded) particle positions and the frame residual."""
    d = record.com_momenta.shape[1]
    N = record.spectra[0].lam.shape[1]
    cols = ["time", "K", "U"]
    cols += [f"p_{a}" for a in range(d)]
    cols += [f"lam_{a}_{i}" for a in range(d) for i in range(N)]
    with_frames = record.frames is not None
    if with_frames:
        cols += [f"pos_{i}_{a}" for i in range(N) for a in range(d)]
        cols += ["jd_residual"]
    lines = [",".join(cols)]
    for idx in range(len(record.times)):
        row = [record.times[idx], record.energies[idx, 0], record.energies[idx, 1]]
        row += list(record.com_momenta[idx])
        row += list(record.spectra[idx].lam.ravel())
        if with_frames:
            fr = record.frames[idx]
            row += list(fr.positions.ravel())
            row.append(fr.residual)
        lines.append(",".join(_fmt(x) for x in row))
    return "\n".join(lines) + "\n"


def load_record_csv(text: str) -> dict:
    """Parse a record CSV back into named numpy columns."""
    lines = [ln for ln in text.strip().splitlines() if ln]
    header = lines[0].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    return {name: data[:, j] for j, name in enumerate(header)}


SWEEP_COLUMNS = [
    "N", "T", "t_scaled", "nu_hat", "nu_stderr", "nu_pred", "hbar_emergent",
    "irrot_residual", "mean_frame_residual", "pair_sum", "nu_convention",
]


def sweep_to_csv(points, pair_sum: str, nu_convention: str) -> str:
    lines = [",".join(SWEEP_COLUMNS)]
    for p in points:
        row = [
            str(p.N), _fmt(p.T), _fmt(p.t_scaled), _fmt(p.nu_hat), _fmt(p.nu_stderr),
            _fmt(p.nu_pred), _fmt(p.hbar_emergent), _fmt(p.irrot_residual),
            _fmt(p.mean_frame_residual), pair_sum, nu_convention,
        ]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def wavefunction_to_csv(wf) -> str:
    lines = ["x,re_psi,im_psi"]
    for x, p in zip(wf.x, wf.psi):
        lines.append(f"{_fmt(x)},{_fmt(p.real)},{_fmt(p.imag)}")
    return "\n".join(lines) + "\n"


def load_wavefunction_csv(text: str):
    rows = [ln.split(",") for ln in text.strip().splitlines()[1:]]
    data = np.array([[float(v) for v in r] for r in rows])
    return data[:, 0], data[:, 1] + 1j * data[:, 2]
