"""Experiment presets, configuration parsing, and structured output writing.

Configs are flat ``key = value`` text with ``include <path>`` support; presets
resolve to complete validated configs. Every run writes a manifest (config
hash, derived grid values, wall time) next to deterministic CSV bodies; field
dumps use the CSV and binary formats defined in ``wigner``.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import constmodel as cm
from .grids import GaussianSpec, PhaseSpaceGrid, build_grid, gaussian_packet, save_wavefunction
from .models import ModelSpec, constant_model, dac_model, rotate_wavefunction
from .observables import ObservableRecord, marginal, negativity_index
from .qcle import run_qcle
from .tdse import run_tdse, timestep
from .wigner import (
    PWTDM,
    coherence_magnitude,
    partial_wigner_transform,
    pseudo_density,
    rotate_basis,
    write_field_binary,
    write_field_csv,
)

__all__ = [
    "ExperimentConfig",
    "parse_config_text",
    "load_config",
    "list_presets",
    "preset_config",
    "run_experiment",
    "compare_bundles",
    "initial_pwtm",
]

_MARGINAL_LABELS = ("total", "surface0", "surface1", "coherence_re", "coherence_im")


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of one reproducible experiment."""

    preset: str = "custom"
    kind: str = "single"  # single | populations | negativity | const-analytic
    model: str = "dac"
    # DAC potential parameters
    a: float = 0.1
    b: float = 0.28
    c: float = 0.015
    d: float = 0.06
    e0: float = 0.05
    mass: float = 2000.0
    hbar: float = 1.0
    # constant-model parameters
    d_coupling: float = 1.0
    gap: float = 0.05
    # initial packet
    r0: float = -15.0
    p0: float = 40.0
    sigma_p: float = 0.0  # 0 -> p0/20
    theta: float = 0.0
    # grid
    k: int = 2
    dr_cap: float = 0.05
    # execution
    method: str = "qcle"  # qcle | tdse-split | tdse-dvr | const-analytic branch
    snapshot_times: tuple[float, ...] = ()
    max_steps: int = 100_000
    sample_every: int = 0  # 0 -> automatic cadence
    p0_ladder: tuple[float, ...] = ()
    methods: tuple[str, ...] = ()
    # const-analytic controls
    branch: str = "exact"  # exact | nonlocal | marginal-ode | pert-large | pert-fourier
    order: int = 0
    times: tuple[float, ...] = ()

    def resolved_sigma_p(self) -> float:
        return self.sigma_p if self.sigma_p > 0 else self.p0 / 20.0

    def model_spec(self) -> ModelSpec:
        if self.model == "dac":
            return dac_model(self.a, self.b, self.c, self.d, self.e0, self.mass, self.hbar)
        return constant_model(self.d_coupling, self.gap, self.mass, self.hbar)

    def grid(self, p0: float | None = None) -> PhaseSpaceGrid:
        p0 = self.p0 if p0 is None else p0
        sigma_p = self.sigma_p if self.sigma_p > 0 else p0 / 20.0
        sigma_r = self.hbar / (2.0 * sigma_p)
        return build_grid(self.r0, p0, sigma_r, self.k, self.dr_cap, self.hbar)

    def canonical_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(f"{x:.17g}" if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = f"{v:.17g}"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FLOAT_TUPLES = {"snapshot_times", "p0_ladder", "times"}
_STR_TUPLES = {"methods"}


def parse_config_text(text: str, base_dir: Path | None = None) -> dict[str, str]:
    """Flat key=value parser with '#' comments and 'include <path>' lines."""
    out: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            inc = Path(line.split(None, 1)[1].strip())
            if base_dir is not None and not inc.is_absolute():
                inc = base_dir / inc
            out.update(parse_config_text(inc.read_text(encoding="utf-8"), inc.parent))
            continue
        if "=" in line:
            key, _, value = line.partition("=")
        else:
            key, _, value = line.partition(" ")
        out[key.strip()] = value.strip()
    return out


def config_from_mapping(mapping: dict[str, str]) -> ExperimentConfig:
    kwargs = {}
    valid = {f.name: f for f in fields(ExperimentConfig)}
    for key, value in mapping.items():
        if key not in valid:
            raise KeyError(f"unknown config key {key!r}")
        if key in _FLOAT_TUPLES:
            kwargs[key] = tuple(float(x) for x in value.split(",") if x.strip())
        elif key in _STR_TUPLES:
            kwargs[key] = tuple(x.strip() for x in value.split(",") if x.strip())
        else:
            typ = valid[key].type
            if typ in ("float", float):
                kwargs[key] = float(value)
            elif typ in ("int", int):
                kwargs[key] = int(value)
            else:
                kwargs[key] = value
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return config_from_mapping(parse_config_text(path.read_text(encoding="utf-8"), path.parent))


# ---------------------------------------------------------------------------
# preset registry
# ---------------------------------------------------------------------------

def _fig_preset(p0: float, method: str, snaps: tuple[float, ...]) -> ExperimentConfig:
    return ExperimentConfig(
        preset=f"dac-p{p0:g}-{method}",
        model="dac",
        p0=p0,
        method=method,
        snapshot_times=snaps,
    )


_SNAP_TIMES = {4.0: (6750.0, 13500.0), 20.0: (1500.0, 3000.0), 40.0: (750.0, 1500.0), 100.0: (300.0, 600.0)}


def _ln_e_ladder(n: int = 25, lo: float = -5.5, hi: float = 1.6, mass: float = 2000.0):
    return tuple(float(np.sqrt(2.0 * mass * np.exp(x))) for x in np.linspace(lo, hi, n))


def _presets() -> dict[str, ExperimentConfig]:
    reg: dict[str, ExperimentConfig] = {}
    for p0, snaps in _SNAP_TIMES.items():
        for method in ("qcle", "tdse-split", "tdse-dvr"):
            cfg = _fig_preset(p0, method, snaps)
            reg[cfg.preset] = cfg
    reg["dac-populations"] = ExperimentConfig(
        preset="dac-populations",
        kind="populations",
        p0_ladder=_ln_e_ladder(),
        methods=("qcle", "tdse-split", "tdse-dvr"),
    )
    reg["dac-populations-ci"] = ExperimentConfig(
        preset="dac-populations-ci",
        kind="populations",
        p0_ladder=(20.0, 40.0, 100.0),
        methods=("qcle", "tdse-split", "tdse-dvr"),
    )
    # Fig. 8 grids: n(R) at dR'=0.015, k=2; eta(P) at dR'=0.05, k=5
    reg["dac-negativity-r"] = ExperimentConfig(
        preset="dac-negativity-r",
        kind="negativity",
        dr_cap=0.015,
        k=2,
        p0_ladder=_ln_e_ladder(),
        methods=("tdse-split",),
    )
    reg["dac-negativity-p"] = ExperimentConfig(
        preset="dac-negativity-p",
        kind="negativity",
        dr_cap=0.05,
        k=5,
        p0_ladder=_ln_e_ladder(),
        methods=("tdse-split",),
    )
    reg["dac-negativity-ci"] = ExperimentConfig(
        preset="dac-negativity-ci",
        kind="negativity",
        dr_cap=0.05,
        k=5,
        p0_ladder=(20.0, 40.0, 100.0),
        methods=("qcle", "tdse-split"),
    )
    reg["const-neg-large"] = ExperimentConfig(
        preset="const-neg-large",
        kind="const-analytic",
        model="constant",
        d_coupling=500.0,
        gap=100.0,
        mass=200.0,
        p0=20.0,
        sigma_p=2.0,
        r0=0.0,
        theta=np.pi / 4.0,
        branch="marginal-ode",
        times=(0.0, 5.0e-4, 1.0e-3),
    )
    reg["const-neg-small"] = ExperimentConfig(
        preset="const-neg-small",
        kind="const-analytic",
        model="constant",
        d_coupling=1.0,
        gap=0.05,
        mass=2000.0,
        p0=20.0,
        sigma_p=1.0,
        r0=0.0,
        theta=0.0,
        branch="marginal-ode",
        times=(0.0, 250.0, 500.0),
    )
    return reg


def list_presets() -> list[str]:
    return sorted(_presets())


def preset_config(name: str, **overrides) -> ExperimentConfig:
    reg = _presets()
    if name not in reg:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(sorted(reg))}")
    cfg = reg[name]
    return replace(cfg, **overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# experiment execution
# ---------------------------------------------------------------------------

def initial_pwtm(config: ExperimentConfig, grid: PhaseSpaceGrid, p0: float | None = None) -> PWTDM:
    """Adiabatic PWTDM of the theta-mixed Gaussian via the transform chain."""
    model = config.model_spec()
    p0 = config.p0 if p0 is None else p0
    sigma_p = config.sigma_p if config.sigma_p > 0 else p0 / 20.0
    spec = GaussianSpec.from_sigma_p(config.r0, p0, sigma_p, config.theta, config.hbar)
    psi = gaussian_packet(spec, grid, basis="adiabatic")
    psi_d = rotate_wavefunction(psi, model, "diabatic")
    return rotate_basis(partial_wigner_transform(psi_d), model, "to_adiabatic")


def _write_observables(path: Path, records: list[ObservableRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {ObservableRecord.HEADER}\n")
        fh.write(ObservableRecord.HEADER + "\n")
        for rec in records:
            fh.write(rec.as_row() + "\n")


def _write_marginals(path: Path, rho: PWTDM, axis: str) -> None:
    margs = [marginal(rho, axis, label) for label in _MARGINAL_LABELS]
    coord = "R" if axis == "R" else "P"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# marginal densities over {coord}; basis {rho.basis}\n")
        fh.write(coord + "," + ",".join(_MARGINAL_LABELS) + "\n")
        for i, x in enumerate(margs[0].coordinates):
            row = ",".join(f"{m.values[i]:.17g}" for m in margs)
            fh.write(f"{x:.17g},{row}\n")


def _dump_state(outdir: Path, tag: str, rho: PWTDM) -> None:
    dens = pseudo_density(rho)
    write_field_binary(outdir / f"pseudo_{tag}.bin", rho.grid, dens, rho.basis, "pseudo_density")
    write_field_binary(
        outdir / f"coherence_{tag}.bin",
        rho.grid,
        coherence_magnitude(rho),
        rho.basis,
        "coherence_magnitude",
    )
    _write_marginals(outdir / f"marginal_R_{tag}.csv", rho, "R")
    _write_marginals(outdir / f"marginal_P_{tag}.csv", rho, "P")


def _manifest(outdir: Path, config: ExperimentConfig, derived: dict, wall: float) -> None:
    digest = hashlib.sha256(config.canonical_text().encode()).hexdigest()
    with open(outdir / "manifest.txt", "w", encoding="utf-8") as fh:
        fh.write(f"config_sha256 = {digest}\n")
        fh.write(f"preset = {config.preset}\n")
        for key, value in derived.items():
            fh.write(f"{key} = {value:.17g}\n" if isinstance(value, float) else f"{key} = {value}\n")
        fh.write(f"wall_seconds = {wall:.3f}\n")
    (outdir / "config.txt").write_text(config.canonical_text(), encoding="utf-8")


def _single_run(config: ExperimentConfig, outdir: Path, p0: float | None = None):
    model = config.model_spec()
    grid = config.grid(p0)
    dt = timestep(model, grid)
    sample = config.sample_every or None
    target = abs(config.r0)
    if config.method == "qcle":
        rho0 = initial_pwtm(config, grid, p0)
        run = run_qcle(
            rho0,
            model,
            grid,
            terminate_mean_r=target,
            max_steps=config.max_steps,
            sample_every=sample,
            snapshot_times=config.snapshot_times,
        )
        for t, rho in run.snapshots.items():
            _dump_state(outdir, f"t{t:g}", rho)
        _dump_state(outdir, "final", run.final)
        records = run.records
        terminated = run.terminated_at
    else:
        method = {"tdse-split": "split", "tdse-dvr": "dvr"}[config.method]
        p0v = config.p0 if p0 is None else p0
        sigma_p = config.sigma_p if config.sigma_p > 0 else p0v / 20.0
        spec = GaussianSpec.from_sigma_p(config.r0, p0v, sigma_p, config.theta, config.hbar)
        psi0 = gaussian_packet(spec, grid, basis="adiabatic")
        run = run_tdse(
            psi0,
            model,
            grid,
            method=method,
            terminate_mean_r=target,
            max_steps=config.max_steps,
            sample_every=sample,
            snapshot_times=config.snapshot_times,
        )
        for t, psi in run.snapshots.items():
            save_wavefunction(psi, outdir / f"wavefunction_t{t:g}.csv")
            rho = rotate_basis(partial_wigner_transform(psi), model, "to_adiabatic")
            _dump_state(outdir, f"t{t:g}", rho)
        save_wavefunction(run.final, outdir / "wavefunction_final.csv")
        rho_final = rotate_basis(partial_wigner_transform(run.final), model, "to_adiabatic")
        _dump_state(outdir, "final", rho_final)
        records = run.records
        terminated = run.terminated_at
    _write_observables(outdir / "observables.csv", records)
    return grid, dt, records, terminated


def _populations_run(config: ExperimentConfig, outdir: Path):
    rows = []
    for p0 in config.p0_ladder:
        for method in config.methods:
            sub = replace(config, method=method, snapshot_times=(), kind="single")
            subdir = outdir / f"p0_{p0:g}_{method}"
            subdir.mkdir(parents=True, exist_ok=True)
            _, _, records, terminated = _single_run(sub, subdir, p0=p0)
            final = records[-1]
            ln_e = math.log(p0**2 / (2.0 * config.mass))
            rows.append(
                (p0, ln_e, method, final.pop_diff, 0.5 * (1.0 - final.pop_diff), terminated)
            )
    with open(outdir / "populations.csv", "w", encoding="utf-8") as fh:
        fh.write("# final adiabatic population difference per initial momentum and method\n")
        fh.write("p0,ln_e,method,pop_diff,excited_pop,t_final\n")
        for p0, ln_e, method, pd, ex, tf in rows:
            fh.write(f"{p0:.17g},{ln_e:.17g},{method},{pd:.17g},{ex:.17g},{tf:.17g}\n")
    return rows


def _negativity_run(config: ExperimentConfig, outdir: Path):
    rows = []
    for p0 in config.p0_ladder:
        for method in config.methods:
            sub = replace(config, method=method, snapshot_times=(), kind="single")
            subdir = outdir / f"p0_{p0:g}_{method}"
            subdir.mkdir(parents=True, exist_ok=True)
            _, _, records, terminated = _single_run(sub, subdir, p0=p0)
            final = records[-1]
            ln_e = math.log(p0**2 / (2.0 * config.mass))
            rows.append((p0, ln_e, method, final.neg_r, final.neg_p, terminated))
    with open(outdir / "negativity.csv", "w", encoding="utf-8") as fh:
        fh.write("# asymptotic negativity indices of the overall marginals\n")
        fh.write("p0,ln_e,method,neg_r,neg_p,t_final\n")
        for p0, ln_e, method, nr, np_, tf in rows:
            fh.write(f"{p0:.17g},{ln_e:.17g},{method},{nr:.17g},{np_:.17g},{tf:.17g}\n")
    return rows


def _const_analytic_run(config: ExperimentConfig, outdir: Path):
    params = cm.ConstParams(
        d_coupling=config.d_coupling,
        gap=config.gap,
        mass=config.mass,
        p0=config.p0,
        sigma_p=config.resolved_sigma_p(),
        r0=config.r0,
        hbar=config.hbar,
    )
    times = config.times or (0.0,)
    hd = params.hbar * params.d_coupling
    de_t = params.d_coupling * params.gap * max(times)
    reach = abs(hd) + de_t + 10.0 * params.sigma_p
    dp = params.sigma_p / 8.0
    n = int(np.ceil(2.0 * reach / dp)) | 1
    p_values = params.p0 + (np.arange(n) - (n - 1) // 2) * dp

    def write_marg(tag: str, mv: cm.MarginalVector):
        with open(outdir / f"marginal_P_{tag}.csv", "w", encoding="utf-8") as fh:
            fh.write(f"# constant-model momentum marginals, branch {config.branch}\n")
            fh.write("P,eta0,eta_r,eta_i,eta1,total\n")
            tot = mv.total()
            for i, p in enumerate(mv.p_values):
                comps = ",".join(f"{mv.components[j, i]:.17g}" for j in range(4))
                fh.write(f"{p:.17g},{comps},{tot[i]:.17g}\n")

    branch = config.branch
    if branch == "marginal-ode":
        grid = PhaseSpaceGrid.rectangular(
            np.linspace(-1, 1, 9), p_values, hbar=params.hbar
        )
        _, eta0 = cm.const_initial_state(params, config.theta, grid)
        series = cm.const_marginal_qcle_solve(eta0, params, max(times), snapshot_times=tuple(times))
        for t, mv in series:
            write_marg(f"t{t:g}", mv)
        rows = [(t, negativity_index(mv.total())) for t, mv in series]
    elif branch in ("pert-large", "pert-fourier"):
        rows = []
        for t in times:
            if branch == "pert-large":
                mv = cm.pert_marginal_large_coupling(config.order, p_values, t, params)
            else:
                mv = cm.pert_marginal_fourier(config.order, p_values, t, params)
            write_marg(f"t{t:g}", mv)
            rows.append((t, negativity_index(mv.total())))
    elif branch == "exact":
        rows = []
        sigma_r = params.sigma_r
        grid = build_grid(params.r0, params.p0, sigma_r, config.k, config.dr_cap, params.hbar)
        for t in times:
            rho = cm.const_exact_pwtm(t, params, grid, config.theta)
            eta = marginal(rho, "P")
            with open(outdir / f"marginal_P_t{t:g}.csv", "w", encoding="utf-8") as fh:
                fh.write("# exact-solution total momentum marginal\nP,total\n")
                for p, v in zip(eta.coordinates, eta.values):
                    fh.write(f"{p:.17g},{v:.17g}\n")
            rows.append((t, negativity_index(eta.values)))
    else:
        raise ValueError(f"unknown const-analytic branch {branch!r}")
    with open(outdir / "negativity_vs_time.csv", "w", encoding="utf-8") as fh:
        fh.write("# negativity index of the total momentum marginal\n")
        fh.write("t,neg_p\n")
        for t, neg in rows:
            fh.write(f"{t:.17g},{neg:.17g}\n")
    return rows


def run_experiment(config: ExperimentConfig, output_dir) -> Path:
    """Execute a config and write its output bundle; returns the bundle path."""
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    derived: dict = {"kind": config.kind, "method": config.method}
    try:
        if config.kind == "single":
            grid, dt, records, terminated = _single_run(config, outdir)
            derived.update(
                n_points=grid.n_r, dr=grid.dr, dp=grid.dp, dt=dt, t_final=terminated
            )
        elif config.kind == "populations":
            _populations_run(config, outdir)
        elif config.kind == "negativity":
            _negativity_run(config, outdir)
        elif config.kind == "const-analytic":
            derived.update(branch=config.branch, order=config.order)
            _const_analytic_run(config, outdir)
        else:
            raise ValueError(f"unknown experiment kind {config.kind!r}")
    except Exception as exc:
        raise type(exc)(f"[preset {config.preset}] {exc}") from exc
    _manifest(outdir, config, derived, time.perf_counter() - started)
    return outdir


# ---------------------------------------------------------------------------
# bundle comparison
# ---------------------------------------------------------------------------

def _load_csv_columns(path: Path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        lines = [l for l in fh.read().splitlines() if l and not l.startswith("#")]
    names = lines[0].split(",")
    cols: dict[str, list] = {n: [] for n in names}
    for line in lines[1:]:
        for name, value in zip(names, line.split(",")):
            cols[name].append(value)
    out = {}
    for name, values in cols.items():
        try:
            out[name] = np.array([float(v) for v in values])
        except ValueError:
            out[name] = np.array(values)
    return out


def compare_bundles(dir_a, dir_b, csv_name: str = "observables.csv", threshold: float | None = None):
    """Max and L2 discrepancies for shared numeric columns of two bundles.

    Returns (report dict, passed flag); rows are matched positionally and the
    shorter table is compared against the same-length head of the longer one.
    """
    a = _load_csv_columns(Path(dir_a) / csv_name)
    b = _load_csv_columns(Path(dir_b) / csv_name)
    shared = [k for k in a if k in b and a[k].dtype.kind == "f" and b[k].dtype.kind == "f"]
    if not shared:
        raise ValueError("no shared numeric columns to compare")
    report = {}
    worst = 0.0
    for key in shared:
        n = min(a[key].size, b[key].size)
        diff = a[key][:n] - b[key][:n]
        report[key] = {
            "max_abs": float(np.abs(diff).max()) if n else float("nan"),
            "l2": float(np.sqrt(np.mean(diff**2))) if n else float("nan"),
        }
        worst = max(worst, report[key]["max_abs"])
    passed = True if threshold is None else worst <= threshold
    return report, passed
