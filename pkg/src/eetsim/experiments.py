"""Config-driven experiments, series comparison and ensemble-size sweeps.

A configuration is one JSON object.  ``kind`` selects the experiment and
``preset`` names a bundled parameter set whose keys the remaining fields
override.  Frequencies are given as ordinary frequencies in kHz
(``*_khz``), times in ms and temperatures in K.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .grape import CNOT, SpinSystem, gate_fidelity, compile_propagator, optimize
from .heom import BathParams, converged_depth, cost_estimate, heom_propagate
from .model import HamiltonianMatrix, UnitScaler, khz, tetramer_hamiltonian
from .ramsey import RamseyConfig, extract_envelope, ramsey_analytic, ramsey_simulate, write_series_csv
from .spectral import Debye, LineshapeParams, modulation_profile
from .trajectory import ensemble_average

KINDS = ("eet_dynamics", "ramsey", "grape_design", "ensemble_sweep", "cost_table")
PRESETS = ("methods_tetramer", "maintext_tetramer", "ramsey_figure", "chloroform")
OUTPUT_ENV = "EETSIM_OUTPUT_DIR"

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_COMPARISON, EXIT_OUTPUT = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    exit_code = EXIT_CONFIG


class SolverError(RuntimeError):
    exit_code = EXIT_SOLVER


class OutputError(OSError):
    exit_code = EXIT_OUTPUT


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("eetsim").joinpath("presets").joinpath(f"{name}.json").read_text()
    return json.loads(text)


@dataclass
class ExperimentConfig:
    kind: str
    params: dict
    master_seed: int = 0
    output_dir: str | None = None
    preset: str | None = None
    threads: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        preset = data.pop("preset", None)
        params = load_preset(preset) if preset else {}
        params.update(data.pop("params", {}))
        kind = data.pop("kind", params.pop("kind", None))
        params.pop("kind", None)
        seed = data.pop("master_seed", 0)
        out = data.pop("output_dir", None)
        threads = data.pop("threads", 1)
        params.update(data)
        if kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {kind!r}")
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("master_seed must be a nonnegative integer")
        cfg = cls(kind, params, seed, out, preset, int(threads))
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def validate(self):
        p = self.params
        positive = [k for k in p if k.endswith(("_khz", "_ms", "_K", "_hz")) and k != "shifts_hz"]
        for k in positive:
            if p[k] is not None and not (isinstance(p[k], (int, float)) and p[k] > 0):
                raise ConfigError(f"parameter {k} must be positive, got {p[k]!r}")
        for k in ("M", "L", "max_iter"):
            if k in p and (not isinstance(p[k], int) or p[k] < 1):
                raise ConfigError(f"parameter {k} must be a positive integer")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "preset": self.preset, "master_seed": self.master_seed,
                "params": self.params}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def resolve_output_dir(self) -> Path:
        base = self.output_dir or os.environ.get(OUTPUT_ENV) or "eetsim_output"
        return Path(base)


# Comparison --------------------------------------------------------------

@dataclass
class ComparisonReport:
    columns: list
    max_deviation: dict
    rms_deviation: dict
    n_points: int
    tolerance: float
    interpolated: bool = False

    @property
    def overall_max(self) -> float:
        return max(self.max_deviation.values())

    @property
    def overall_rms(self) -> float:
        return math.sqrt(float(np.mean([v**2 for v in self.rms_deviation.values()])))

    @property
    def passed(self) -> bool:
        return self.overall_max <= self.tolerance

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(overall_max=self.overall_max, overall_rms=self.overall_rms, passed=self.passed)
        return d


def read_series(path):
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise ConfigError(f"{path}: header has {len(header)} columns, rows have {data.shape[1]}")
    return header, data


def _value_columns(header):
    return [c for c in header[1:] if not c.endswith("_se")]


def compare_arrays(t_a, cols_a: dict, t_b, cols_b: dict, tolerance: float) -> ComparisonReport:
    shared = [c for c in cols_a if c in cols_b]
    if not shared:
        raise ConfigError("series have no value columns in common")
    lo, hi = max(t_a[0], t_b[0]), min(t_a[-1], t_b[-1])
    if lo > hi:
        raise ConfigError("time grids do not overlap")
    same_grid = t_a.shape == t_b.shape and np.allclose(t_a, t_b, rtol=0, atol=1e-12)
    if same_grid:
        mask = np.ones(t_a.size, dtype=bool)
    else:
        mask = (t_a >= lo - 1e-12) & (t_a <= hi + 1e-12)
    maxd, rms = {}, {}
    for c in shared:
        a = np.asarray(cols_a[c])[mask]
        b = np.asarray(cols_b[c]) if same_grid else np.interp(t_a[mask], t_b, cols_b[c])
        d = np.abs(a - b)
        maxd[c] = float(d.max())
        rms[c] = float(np.sqrt(np.mean(d**2)))
    return ComparisonReport(shared, maxd, rms, int(mask.sum()), float(tolerance), not same_grid)


def compare_series(a, b, tolerance: float) -> ComparisonReport:
    """Per-column deviations between two CSV series (``b`` interpolated onto ``a``)."""
    ha, da = read_series(a)
    hb, db = read_series(b)
    if ha[0] != "t_ms" or hb[0] != "t_ms":
        raise ConfigError("series must start with a t_ms column")
    cols_a = {c: da[:, ha.index(c)] for c in _value_columns(ha)}
    cols_b = {c: db[:, hb.index(c)] for c in _value_columns(hb)}
    return compare_arrays(da[:, 0], cols_a, db[:, 0], cols_b, tolerance)


def population_columns(pops):
    return {f"P{k + 1}": pops[:, k] for k in range(pops.shape[1])}


# Experiment builders -----------------------------------------------------

def _grid(p, step_key="t_step_ms"):
    step = p.get(step_key) or p["dt_ms"]
    n = int(round(p["t_max_ms"] / step))
    return step * np.arange(n + 1)


def tetramer_setup(p):
    """Hamiltonian, bath, comb profile, time grid and initial state for a tetramer run."""
    h = tetramer_hamiltonian(p.get("hamiltonian", "methods"))
    h = HamiltonianMatrix(h.traceless())
    lam, gam, T = khz(p["lambda_khz"]), khz(p["gamma_khz"]), p["temperature_K"]
    bath = BathParams.uniform(h.dim, lam, gam, T)
    w0 = khz(p["omega0_khz"])
    J = int(round(p["omegaJ_khz"] / p["omega0_khz"]))
    profile = modulation_profile(Debye(lam, gam), T, w0, J)
    psi0 = np.zeros(h.dim, dtype=complex)
    psi0[p.get("initial_site", 1) - 1] = 1.0
    return h, bath, profile, _grid(p), psi0


def heom_reference(p, h, bath, t, psi0):
    rho0 = np.outer(psi0, psi0.conj())
    depth = p.get("heom_depth")
    info = {}
    if depth is None:
        conv = converged_depth(h, bath, rho0, t, p.get("heom_tol", 1e-4), max_depth=p.get("heom_max_depth", 6))
        depth = conv.depth + 1 if conv.converged else conv.depth
        info = {"converged_depth": conv.depth, "residual": conv.residual, "converged": conv.converged}
    result = heom_propagate(h, bath, rho0, t, depth, keep_rho=False)
    info.update(depth=depth, ado_count=result.count, step_ms=result.step, warnings=result.warnings)
    return result, info


def _run_eet(cfg, out):
    p = cfg.params
    h, bath, profile, t, psi0 = tetramer_setup(p)
    heom, info = heom_reference(p, h, bath, t, psi0)
    heom.to_csv(out / "heom.csv")
    ens = ensemble_average(h, profile, p["M"], p["dt_ms"], t, psi0, cfg.master_seed,
                           mapping=p.get("mapping", "two_qubit"), threads=cfg.threads)
    ens.to_csv(out / "ensemble.csv")
    report = compare_arrays(t, population_columns(ens.mean), heom.t, population_columns(heom.populations),
                            p.get("tolerance", 0.1))
    return report, {"heom": info}


def _ramsey_setup(p):
    T = float(UnitScaler().temperature_to_nmr(p["temperature_eet_K"])) if "temperature_eet_K" in p \
        else p["temperature_K"]
    lam, gam = khz(p["lambda_khz"]), khz(p["gamma_khz"])
    w0 = khz(p["omega0_khz"])
    J = int(round(p["omegaJ_khz"] / p["omega0_khz"]))
    profile = modulation_profile(Debye(lam, gam), T, w0, J)
    t = _grid(p, "dt_ms")
    cfg = RamseyConfig(khz(p["omega_L_khz"]), t, profile, p["dt_ms"], p["M"])
    return cfg, profile, LineshapeParams(lam, gam, T), T


def _run_ramsey(cfg, out):
    p = cfg.params
    rc, profile, lp, T = _ramsey_setup(p)
    sim = ramsey_simulate(rc, profile, cfg.master_seed, threads=cfg.threads)
    sim.to_csv(out / "ramsey_simulated.csv")
    analytic = ramsey_analytic(rc)
    write_series_csv(out / "ramsey_analytic.csv", ["t_ms", "P0"], [rc.t_grid, analytic])
    env = extract_envelope(rc.t_grid, sim.mean, rc.omega_L)
    env.to_csv(out / "ramsey_envelope.csv")
    rms = float(np.sqrt(np.mean((sim.mean - analytic) ** 2)))
    tol = p.get("tolerance", 3 * float(np.mean(sim.stderr)))
    # fringes pass on RMS deviation, so the report column carries the RMS value
    report = ComparisonReport(["P0_rms"], {"P0_rms": rms}, {"P0_rms": rms}, rc.t_grid.size, tol)
    extra = {"temperature_nmr_K": T, "envelope_decay_ms": env.decay_time,
             "max_abs_deviation": float(np.max(np.abs(sim.mean - analytic))),
             "rms_deviation": rms, "mean_stderr": float(np.mean(sim.stderr))}
    return report, extra


def _target_gate(name, seed):
    if name == "CNOT":
        return CNOT
    if name == "random":
        from scipy.stats import unitary_group
        return unitary_group.rvs(4, random_state=seed)
    raise ConfigError(f"unknown gate {name!r}")


def _run_grape(cfg, out):
    p = cfg.params
    sys = SpinSystem(tuple(p["shifts_hz"]), {(0, 1): p["coupling_hz"]})
    U = _target_gate(p.get("gate", "CNOT"), cfg.master_seed)
    dt = p["duration_ms"] / p["L"]
    res = optimize(U, sys, L=p["L"], dt=dt, step=p.get("step", 0.1), max_iter=p.get("max_iter", 2000),
                   target_fidelity=p.get("target_fidelity", 0.999), seed=cfg.master_seed)
    res.pulse.to_csv(out / "pulse.csv")
    write_series_csv(out / "grape_trace.csv", ["iteration", "fidelity"],
                     [np.arange(len(res.trace)), res.trace])
    F = gate_fidelity(U, compile_propagator(res.pulse, sys))
    tol = p.get("tolerance", 0.99)
    report = ComparisonReport(["infidelity"], {"infidelity": 1 - F}, {"infidelity": 1 - F}, 1, 1 - tol)
    return report, {"fidelity": F, "status": res.status, "iterations": res.iterations}


@dataclass
class SweepTable:
    rows: list          # (M, seed, max_dev, rms)
    improved_fraction: float
    mean_by_M: dict

    @property
    def monotone(self) -> bool:
        vals = [self.mean_by_M[m] for m in sorted(self.mean_by_M)]
        return all(b <= a for a, b in zip(vals, vals[1:]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("M,seed,max_deviation,rms_deviation\n")
            for M, seed, mx, rms in self.rows:
                fh.write(f"{M},{seed},{mx:.17g},{rms:.17g}\n")


def ensemble_sweep(config: ExperimentConfig, M_list, n_seeds: int = 1, reference=None) -> SweepTable:
    """Deviation of ensemble populations from the HEOM reference versus ``M``.

    Seeds ``master_seed + s`` for ``s < n_seeds`` are run for each ``M``.
    ``improved_fraction`` is the share of seeds where the largest ``M``
    beats the smallest one.
    """
    M_list = list(M_list)
    if not M_list or any(b <= a for a, b in zip(M_list, M_list[1:])) or M_list[0] < 1:
        raise ConfigError("M_list must be a nonempty increasing list of positive integers")
    p = config.params
    h, bath, profile, t, psi0 = tetramer_setup(p)
    if reference is None:
        reference = heom_reference(p, h, bath, t, psi0)[0].populations
    rows = []
    for s in range(n_seeds):
        seed = config.master_seed + s
        for M in M_list:
            ens = ensemble_average(h, profile, M, p["dt_ms"], t, psi0, seed,
                                   mapping=p.get("mapping", "two_qubit"), threads=config.threads)
            d = np.abs(ens.mean - reference)
            rows.append((M, seed, float(d.max()), float(np.sqrt(np.mean(d**2)))))
    mean_by_M = {M: float(np.mean([r[2] for r in rows if r[0] == M])) for M in M_list}
    first = {r[1]: r[2] for r in rows if r[0] == M_list[0]}
    last = {r[1]: r[2] for r in rows if r[0] == M_list[-1]}
    improved = float(np.mean([last[s] < first[s] for s in first])) if len(M_list) > 1 else 0.0
    return SweepTable(rows, improved, mean_by_M)


def _run_sweep(cfg, out):
    p = cfg.params
    table = ensemble_sweep(cfg, p.get("M_list", [50, 100, 150]), p.get("n_seeds", 1))
    table.to_csv(out / "sweep.csv")
    last = max(table.mean_by_M)
    tol = p.get("tolerance", 0.1)
    report = ComparisonReport(["max_deviation"], {"max_deviation": table.mean_by_M[last]},
                              {"max_deviation": table.mean_by_M[last]}, len(table.rows), tol)
    return report, {"monotone": table.monotone, "improved_fraction": table.improved_fraction,
                    "mean_by_M": {str(k): v for k, v in table.mean_by_M.items()}}


def cost_table(n_levels: int, k_exponentials: int, depths) -> list:
    return [(d, cost_estimate(n_levels, k_exponentials, d)) for d in depths]


def write_cost_csv(path, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("depth,count,stirling_bound,stirling_lower,overflow\n")
        for d, c in rows:
            fh.write(f"{d},{c.count},{c.stirling_bound:.17g},{c.stirling_lower:.17g},{int(c.overflow)}\n")


def _run_cost(cfg, out):
    p = cfg.params
    rows = cost_table(p.get("n_sites", 4), p.get("k", 1), range(p.get("max_depth", 8) + 1))
    write_cost_csv(out / "cost.csv", rows)
    ok = all(c.count <= c.stirling_bound for _, c in rows)
    report = ComparisonReport(["bound_violations"], {"bound_violations": 0.0 if ok else 1.0},
                              {"bound_violations": 0.0 if ok else 1.0}, len(rows), 0.0)
    return report, {}


_RUNNERS = {"eet_dynamics": _run_eet, "ramsey": _run_ramsey, "grape_design": _run_grape,
            "ensemble_sweep": _run_sweep, "cost_table": _run_cost}

PLOT_STUB = '''"""Plot the CSV files in this directory (requires matplotlib)."""
import csv, glob
import matplotlib.pyplot as plt

for path in sorted(glob.glob("*.csv")):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t_ms":
        continue
    cols = list(zip(*[[float(x) for x in r] for r in rows[1:]]))
    plt.figure()
    for name, col in zip(rows[0][1:], cols[1:]):
        if not name.endswith("_se"):
            plt.plot(cols[0], col, label=name)
    plt.xlabel("t (ms)")
    plt.legend()
    plt.title(path)
    plt.savefig(path.replace(".csv", ".png"), dpi=120)
'''


@dataclass
class RunArtifacts:
    output_dir: Path
    report: ComparisonReport
    manifest: dict
    files: list = field(default_factory=list)


def run_experiment(config: ExperimentConfig) -> RunArtifacts:
    """Run one experiment, write its CSVs, report and manifest."""
    out = config.resolve_output_dir()
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OutputError(f"output directory {out} is not writable: {exc}") from exc
    start = time.perf_counter()
    try:
        report, extra = _RUNNERS[config.kind](config, out)
    except (ConfigError, OutputError):
        raise
    except KeyError as exc:
        raise ConfigError(f"missing parameter {exc}") from exc
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise SolverError(str(exc)) from exc
    runtime = time.perf_counter() - start
    (out / "report.json").write_text(json.dumps({**report.to_dict(), **extra}, indent=2, default=float) + "\n")
    (out / "plot.py").write_text(PLOT_STUB)
    manifest = {
        "config": config.to_dict(),
        "config_sha256": config.digest(),
        "master_seed": config.master_seed,
        "threads": config.threads,
        "versions": {"eetsim": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "runtime_s": runtime,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    files = sorted(p.name for p in out.iterdir())
    return RunArtifacts(out, report, manifest, files)
