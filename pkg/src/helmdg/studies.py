"""Study configuration, convergence records and the four study drivers."""
import configparser
import csv
import io
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .coefficients import CoefficientSet
from .discretization import Discretization
from .errors import ConfigError, HelmDGError, InputError
from .estimator import compute_eta, effectivity
from .factors import sample_gamma_ba
from .measure import best_conforming_energy, error_norms
from .mesh import l_shape, parse_label, read_mesh, refine, uniform_refine, unit_square, write_mesh
from .solver import manufactured, solve_ipdg, stability_probe
from .spaces import evaluate

SCHEMA_VERSION = 1
KINDS = ("uniform_convergence", "adaptive", "gamma_ba_scaling", "stability_sweep")
SIDES = ("left", "right", "bottom", "top")


@dataclass
class StudyConfig:
    """Everything one study needs; see :func:`parse_config` for the file format."""

    case: str = "plane_wave"
    domain: str = "case"
    mesh_file: str = ""
    n: int = 4
    boundary: object = None
    omega: float = 5.0
    mu: object = 1.0
    A: object = 1.0
    gamma: object = 1.0
    p: int = 1
    beta0: float = 10.0
    kind: str = "uniform_convergence"
    levels: int = 4
    max_dofs: int = 20000
    max_iterations: int = 30
    theta_mark: float = 0.5
    factors: bool = False
    probe: bool = False
    omegas: tuple = ()
    seed: int = 0
    output: str = ""
    fields: bool = False
    timings: bool = False
    case_params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown study kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.domain not in ("unit_square", "l_shape", "file", "case"):
            raise ConfigError(f"unknown domain preset {self.domain!r}")
        if self.domain == "file" and not self.mesh_file:
            raise ConfigError("domain = file needs mesh_file")
        for name in ("omega", "beta0"):
            if not (float(getattr(self, name)) > 0):
                raise ConfigError(f"{name} must be positive")
        for name in ("mu", "gamma"):
            vals = getattr(self, name)
            vals = vals.values() if isinstance(vals, dict) else [vals]
            if any(not float(v) > 0 for v in vals):
                raise ConfigError(f"{name} must be positive")
        if self.p < 1 or self.n < 1 or self.levels < 1:
            raise ConfigError("p, n and levels must be at least 1")
        if not 0.0 < self.theta_mark < 1.0:
            raise ConfigError("theta_mark must lie in (0, 1)")
        if self.kind == "stability_sweep" and not len(self.omegas):
            raise ConfigError("stability_sweep needs a list of omegas")
        try:
            self.coefficients()
        except InputError as exc:
            raise ConfigError(str(exc)) from exc

    def coefficients(self, omega=None):
        return CoefficientSet(omega=float(self.omega if omega is None else omega),
                              mu=self.mu, A=self.A, gamma=self.gamma)

    def problem(self, omega=None):
        return manufactured(self.case, self.coefficients(omega), **self.case_params)

    def base_mesh(self):
        if self.domain == "file":
            return read_mesh(self.mesh_file)
        domain = _case_domain(self.case) if self.domain == "case" else self.domain
        if self.boundary is None and domain == _case_domain(self.case):
            return self.problem().mesh(self.n)
        builder = unit_square if domain == "unit_square" else l_shape
        return builder(self.n, boundary="D" if self.boundary is None else self.boundary)

    def discretization(self, mesh, omega=None):
        return Discretization(mesh, self.coefficients(omega), self.p, penalty=self.beta0)


def _case_domain(case):
    return "l_shape" if case == "corner_singular" else "unit_square"


# ---------------------------------------------------------------------------
def _parse_value(text):
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    parts = [s for s in text.replace(",", " ").split()]
    try:
        vals = [float(s) for s in parts]
    except ValueError:
        raise ConfigError(f"cannot parse number(s) from {text!r}") from None
    if len(vals) == 4:
        return np.array(vals).reshape(2, 2)
    raise ConfigError(f"expected a number or four matrix entries, got {text!r}")


def _parse_regions(text):
    """``1.0`` or ``0: 1.0; 1: 2.5`` (per region or patch)."""
    if ":" not in text:
        return _parse_value(text)
    out = {}
    for item in text.split(";"):
        if not item.strip():
            continue
        key, val = item.split(":", 1)
        try:
            out[int(key)] = _parse_value(val)
        except ValueError:
            raise ConfigError(f"bad region id in {item!r}") from None
    return out


def _parse_boundary(text):
    text = text.strip()
    if "=" not in text:
        parse_label(text)
        return text.upper()
    out = {}
    for item in text.replace(";", ",").split(","):
        if not item.strip():
            continue
        side, lab = (s.strip() for s in item.split("=", 1))
        if side not in SIDES:
            raise ConfigError(f"unknown side {side!r}")
        parse_label(lab)
        out[side] = lab.upper()
    return out


def _getbool(sec, key, default):
    try:
        return sec.getboolean(key, fallback=default)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text, base_dir="."):
    """Parse a line-oriented ``key = value`` configuration with sections.

    Sections and keys::

        [problem]         case, and any case parameter as ``param.<name>``
        [domain]          preset (case | unit_square | l_shape | file), mesh_file, n, boundary
        [coefficients]    omega, mu, alpha (scalar or 4 entries), gamma
        [discretization]  p, beta0
        [study]           kind, levels, max_dofs, max_iterations, theta_mark,
                          factors, probe, omegas, seed
        [output]          directory, fields, timings
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    known = {"problem", "domain", "coefficients", "discretization", "study", "output"}
    for s in cp.sections():
        if s not in known:
            raise ConfigError(f"unknown section [{s}]")
    kw = {}
    try:
        if cp.has_section("problem"):
            sec = cp["problem"]
            kw["case"] = sec.get("case", "plane_wave")
            kw["case_params"] = {k[6:]: _parse_case_param(v) for k, v in sec.items() if k.startswith("param.")}
        if cp.has_section("domain"):
            sec = cp["domain"]
            kw["domain"] = sec.get("preset", "case")
            if "mesh_file" in sec:
                path = sec["mesh_file"]
                kw["mesh_file"] = path if os.path.isabs(path) else os.path.join(base_dir, path)
            kw["n"] = sec.getint("n", 4)
            if "boundary" in sec:
                kw["boundary"] = _parse_boundary(sec["boundary"])
        if cp.has_section("coefficients"):
            sec = cp["coefficients"]
            kw["omega"] = sec.getfloat("omega", 5.0)
            for key, name in (("mu", "mu"), ("alpha", "A"), ("gamma", "gamma")):
                if key in sec:
                    kw[name] = _parse_regions(sec[key])
        if cp.has_section("discretization"):
            sec = cp["discretization"]
            kw["p"] = sec.getint("p", 1)
            kw["beta0"] = sec.getfloat("beta0", 10.0)
        if cp.has_section("study"):
            sec = cp["study"]
            kw["kind"] = sec.get("kind", "uniform_convergence")
            kw["levels"] = sec.getint("levels", 4)
            kw["max_dofs"] = sec.getint("max_dofs", 20000)
            kw["max_iterations"] = sec.getint("max_iterations", 30)
            kw["theta_mark"] = sec.getfloat("theta_mark", 0.5)
            kw["factors"] = _getbool(sec, "factors", False)
            kw["probe"] = _getbool(sec, "probe", False)
            kw["seed"] = sec.getint("seed", 0)
            if "omegas" in sec:
                kw["omegas"] = tuple(float(s) for s in sec["omegas"].replace(",", " ").split())
        if cp.has_section("output"):
            sec = cp["output"]
            path = sec.get("directory", "")
            kw["output"] = path if (not path or os.path.isabs(path)) else os.path.join(base_dir, path)
            kw["fields"] = _getbool(sec, "fields", False)
            kw["timings"] = _getbool(sec, "timings", False)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    except HelmDGError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return StudyConfig(**kw)


def _parse_case_param(text):
    vals = text.replace(",", " ").split()
    try:
        nums = [float(v) for v in vals]
    except ValueError:
        return text.strip()
    return nums[0] if len(nums) == 1 else tuple(nums)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
COLUMNS = ("level", "h", "n_elements", "dofs", "omega", "energy_error", "l2_error", "robin_error",
           "eta", "rc_surrogate", "effectivity", "best_error", "check_g", "check_d", "tilde_g",
           "tilde_d", "gamma_ba", "stability", "cond_ratio", "near_singular", "n_marked",
           "runtime_s")
COLUMN_DOC = {
    "level": "mesh index in the study (0 = coarsest)",
    "h": "max element diameter",
    "n_elements": "number of triangles",
    "dofs": "dimension of the broken space",
    "omega": "angular frequency",
    "energy_error": "energy-norm error with the discrete gradient",
    "l2_error": "L2(mu) error",
    "robin_error": "L2(gamma) error on the Robin boundary",
    "eta": "residual estimator",
    "rc_surrogate": "||u_h - J u_h||_{dagger,1}",
    "effectivity": "eta / energy_error (1 for 0/0)",
    "best_error": "best conforming approximation error in the energy norm",
    "check_g, check_d, tilde_g, tilde_d": "sampled approximation factors",
    "gamma_ba": "combined approximation factor",
    "stability": "smallest singular value of the energy-normalised conforming b",
    "cond_ratio": "cond1(b) / cond1(shifted b)",
    "near_singular": "1 if the solver flagged near-singularity",
    "n_marked": "marked elements (adaptive study)",
    "runtime_s": "wall time of the mesh level (only with timings = true)",
}


@dataclass
class ConvergenceRecord:
    """Per-mesh rows of one study (ordered coarse to fine for refinement studies)."""

    kind: str
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    timings: bool = False

    def column(self, name):
        return np.array([r.get(name, np.nan) for r in self.rows], dtype=float)

    def columns(self):
        cols = [c for c in COLUMNS if any(c in r for r in self.rows)]
        if not self.timings and "runtime_s" in cols:
            cols.remove("runtime_s")
        return cols

    def to_csv(self):
        buf = io.StringIO()
        buf.write("# helmdg convergence record\n")
        buf.write(f"# schema_version = {SCHEMA_VERSION}\n")
        buf.write(f"# kind = {self.kind}\n")
        for k in sorted(self.meta):
            buf.write(f"# {k} = {self.meta[k]}\n")
        cols = self.columns()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_fmt(r.get(c, np.nan)) for c in cols])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = text.splitlines()
        meta = {}
        body = []
        for ln in lines:
            if ln.startswith("# ") and " = " in ln:
                k, v = ln[2:].split(" = ", 1)
                meta[k] = v
            elif ln and not ln.startswith("#"):
                body.append(ln)
        kind = meta.pop("kind", "")
        version = int(meta.pop("schema_version", SCHEMA_VERSION))
        if version != SCHEMA_VERSION:
            raise InputError(f"unsupported record schema version {version}")
        reader = csv.reader(body)
        cols = next(reader)
        rows = []
        for vals in reader:
            rows.append({c: (int(v) if c in _INT_COLS else float(v)) for c, v in zip(cols, vals)})
        return cls(kind, rows, meta, timings="runtime_s" in cols)

    def write(self, path):
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(self.to_csv())
        except OSError as exc:
            raise OSError(f"cannot write record {path}: {exc}") from exc


_INT_COLS = {"level", "n_elements", "dofs", "near_singular", "n_marked"}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def fit_slope(x, y):
    """Least-squares slope of log y against log x."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


# ---------------------------------------------------------------------------
class StudyError(HelmDGError):
    """A module error raised inside a study, tagged with the mesh index and stage."""

    def __init__(self, level, stage, cause):
        super().__init__(f"level {level}, stage {stage}: {cause}")
        self.level = level
        self.stage = stage
        self.cause = cause


class _Stage:
    def __init__(self, level):
        self.level = level
        self.name = "setup"

    def __call__(self, name):
        self.name = name
        return self


def _guarded(fn):
    def run(config, *args, **kw):
        stage = _Stage(0)
        try:
            return fn(config, stage, *args, **kw)
        except StudyError:
            raise
        except HelmDGError as exc:
            raise StudyError(stage.level, stage.name, exc) from exc
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def solve_level(config, mesh, omega=None, with_factors=False, with_probe=False, stage=None):
    """Solve, measure and estimate on one mesh.  Returns (row, disc, uh, report)."""
    stage = stage or _Stage(0)
    disc = config.discretization(mesh, omega)
    case = config.problem(omega)
    stage("solve")
    uh = solve_ipdg(disc, case)
    stage("measure")
    err = error_norms(disc, uh, case)
    stage("estimate")
    rep = compute_eta(disc, uh, case)
    eff = effectivity(rep, err.energy)
    rep.effectivity = eff.value
    row = {"h": float(mesh.h), "n_elements": mesh.n_triangles, "dofs": disc.broken.dim,
           "omega": disc.coeffs.omega, "energy_error": err.energy, "l2_error": err.l2_mu,
           "robin_error": err.robin, "eta": rep.eta, "rc_surrogate": rep.rc_surrogate,
           "effectivity": eff.value, "cond_ratio": uh.info.cond_ratio,
           "near_singular": bool(uh.info.near_singular)}
    if with_factors:
        stage("factors")
        f = sample_gamma_ba(disc, seed=config.seed)
        row.update(check_g=f.check_g, check_d=f.check_d, tilde_g=f.tilde_g, tilde_d=f.tilde_d,
                   gamma_ba=f.gamma_ba)
    if with_probe:
        stage("probe")
        row["stability"] = stability_probe(disc).value
    return row, disc, uh, rep, err


def _out_path(config, name):
    if not config.output:
        return None
    os.makedirs(config.output, exist_ok=True)
    return os.path.join(config.output, name)


def _meta(config):
    return {"case": config.case, "p": config.p, "omega": repr(float(config.omega)), "beta0": repr(float(config.beta0)),
            "seed": config.seed, "domain": config.domain}


def _finish(config, record, name):
    path = _out_path(config, name)
    if path:
        record.write(path)
    return record


@_guarded
def run_uniform_study(config, stage):
    """Uniform-refinement study: one row per mesh, coarse to fine."""
    record = ConvergenceRecord("uniform_convergence", meta=_meta(config), timings=config.timings)
    mesh = config.base_mesh()
    for level in range(config.levels):
        stage.level = level
        t0 = time.perf_counter()
        if level:
            stage("refine")
            mesh = uniform_refine(mesh, 1)
        row, disc, uh, rep, _ = solve_level(config, mesh, with_factors=config.factors,
                                            with_probe=config.probe, stage=stage)
        stage("best_approximation")
        row["best_error"] = best_conforming_energy(disc, config.problem())[0]
        row["level"] = level
        row["runtime_s"] = time.perf_counter() - t0
        record.rows.append(row)
        if config.fields and config.output:
            stage("output")
            emit_fields(mesh, {"u_h": uh}, _out_path(config, f"level{level:02d}"), rep)
    record.meta["slope_energy"] = repr(fit_slope(record.column("h"), record.column("energy_error")))
    return _finish(config, record, "uniform.csv")


def dorfler_mark(eta_K, theta):
    """Smallest set with sum eta_K^2 >= theta^2 eta^2 (ties broken by element index)."""
    sq = np.asarray(eta_K, float) ** 2
    order = np.lexsort((np.arange(len(sq)), -sq))
    csum = np.cumsum(sq[order])
    total = csum[-1]
    if total <= 0:
        return np.arange(len(sq))
    k = int(np.searchsorted(csum, theta ** 2 * total * (1 - 1e-14))) + 1
    return np.sort(order[:k])


@_guarded
def run_adaptive(config, stage):
    """solve -> estimate -> mark (Dorfler) -> refine until the dof budget is reached."""
    record = ConvergenceRecord("adaptive", meta=_meta(config), timings=config.timings)
    record.meta["theta_mark"] = repr(float(config.theta_mark))
    mesh = config.base_mesh()
    marked_history = []
    for it in range(config.max_iterations):
        stage.level = it
        t0 = time.perf_counter()
        row, disc, uh, rep, _ = solve_level(config, mesh, stage=stage)
        stage("mark")
        marked = dorfler_mark(rep.eta_K, config.theta_mark)
        row["level"] = it
        row["n_marked"] = len(marked)
        row["runtime_s"] = time.perf_counter() - t0
        record.rows.append(row)
        marked_history.append((mesh, marked))
        if config.fields and config.output:
            stage("output")
            emit_fields(mesh, {"u_h": uh}, _out_path(config, f"iter{it:02d}"), rep)
        if disc.broken.dim >= config.max_dofs:
            break
        stage("refine")
        mesh = refine(mesh, marked)
    record.marked = marked_history
    record.meta["slope_dofs"] = repr(fit_slope(record.column("dofs"), record.column("energy_error")))
    if config.output:
        write_mesh(mesh, _out_path(config, "final.mesh"))
    return _finish(config, record, "adaptive.csv")


@_guarded
def run_gamma_study(config, stage):
    """Approximation factors and the stability probe against h; fits the exponent."""
    record = ConvergenceRecord("gamma_ba_scaling", meta=_meta(config), timings=config.timings)
    mesh = config.base_mesh()
    for level in range(config.levels):
        stage.level = level
        t0 = time.perf_counter()
        if level:
            stage("refine")
            mesh = uniform_refine(mesh, 1)
        disc = config.discretization(mesh)
        stage("factors")
        f = sample_gamma_ba(disc, seed=config.seed)
        stage("probe")
        probe = stability_probe(disc)
        record.rows.append({"level": level, "h": float(mesh.h), "n_elements": mesh.n_triangles,
                            "dofs": disc.broken.dim, "omega": disc.coeffs.omega, "check_g": f.check_g,
                            "check_d": f.check_d, "tilde_g": f.tilde_g, "tilde_d": f.tilde_d,
                            "gamma_ba": f.gamma_ba, "stability": probe.value,
                            "runtime_s": time.perf_counter() - t0})
    h = record.column("h")
    for name in ("check_g", "check_d", "gamma_ba"):
        record.meta[f"exponent_{name}"] = repr(fit_slope(h, record.column(name)))
    return _finish(config, record, "gamma.csv")


@_guarded
def run_stability_sweep(config, stage):
    """Fixed mesh, varying omega: stability probe, conditioning flag and (optionally) gamma_ba."""
    record = ConvergenceRecord("stability_sweep", meta=_meta(config), timings=config.timings)
    mesh = config.base_mesh()
    for i, om in enumerate(config.omegas):
        stage.level = i
        t0 = time.perf_counter()
        row, *_ = solve_level(config, mesh, omega=om, with_factors=config.factors, with_probe=True, stage=stage)
        row["level"] = i
        row["runtime_s"] = time.perf_counter() - t0
        record.rows.append(row)
    return _finish(config, record, "sweep.csv")


def run_study(config):
    """Dispatch on ``config.kind``."""
    return {"uniform_convergence": run_uniform_study, "adaptive": run_adaptive,
            "gamma_ba_scaling": run_gamma_study, "stability_sweep": run_stability_sweep}[config.kind](config)


# ---------------------------------------------------------------------------
FIELD_SAMPLES_HEADER = "helmdg-samples v1"
SAMPLE_POINTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0 / 3.0, 1.0 / 3.0]])


def field_samples(mesh, fields, report=None):
    """Rows (element, sample, x, y, Re/Im per field, eta_K): 3 vertices + centroid per element."""
    nt = mesh.n_triangles
    ns = len(SAMPLE_POINTS)
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    pts = v0[:, None, :] + np.einsum("tij,sj->tsi", mesh.jac, SAMPLE_POINTS)
    cols = []
    for name, fld in fields.items():
        vals = evaluate(fld, np.repeat(np.arange(nt), ns), np.tile(SAMPLE_POINTS, (nt, 1)))
        cols.append((name, np.asarray(vals).reshape(nt, ns)))
    eta = report.eta_K if report is not None else None
    rows = []
    for k in range(nt):
        for s in range(ns):
            r = [k, s, pts[k, s, 0], pts[k, s, 1]]
            for _, v in cols:
                r += [v[k, s].real, v[k, s].imag]
            if eta is not None:
                r.append(eta[k])
            rows.append(r)
    header = ["element", "sample", "x", "y"]
    for name, _ in cols:
        header += [f"{name}_re", f"{name}_im"]
    if eta is not None:
        header.append("eta_K")
    return header, rows


def emit_fields(mesh, fields, path, report=None):
    """Write ``path``.mesh and ``path``.csv (per-element vertex + centroid samples).

    Returns the two file names.
    """
    mpath, spath = f"{path}.mesh", f"{path}.csv"
    write_mesh(mesh, mpath)
    header, rows = field_samples(mesh, fields, report)
    try:
        with open(spath, "w", encoding="utf-8") as fh:
            fh.write(f"# {FIELD_SAMPLES_HEADER}\n# schema_version = {SCHEMA_VERSION}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([str(int(x)) if i < 2 else repr(float(x)) for i, x in enumerate(r)])
    except OSError as exc:
        raise OSError(f"cannot write field samples {spath}: {exc}") from exc
    return mpath, spath


def with_overrides(config, **kw):
    """Copy of ``config`` with fields replaced (validated)."""
    names = {f.name for f in fields(StudyConfig)}
    bad = set(kw) - names
    if bad:
        raise ConfigError(f"unknown config fields {sorted(bad)}")
    return replace(config, **kw)
