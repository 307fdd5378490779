"""Config-driven orchestration: synthetic truth, variation checks, recovery, reports.

Configuration files are TOML documents (any extension). Sections:

``[model]``
    ``kind`` (hydra, holling_tanner, bazykin or custom), ``params``,
    ``diffusion = [d1, d2]``, ``base = [u0, v0]`` (the base solution to vary
    around), optional ``terms_F`` / ``terms_G`` as ``[[m, n, h, coeff], ...]``
    and ``relaxed``.
``[grid]``
    ``L`` (number or ``"pi"``), ``N``, ``T``, ``steps``, ``scheme``,
    ``positivity_clip``.
``[forward]``
    initial data ``f`` and ``g`` as profile tables (see :func:`profile`).
``[design]``
    ``kind = "default"`` or ``"custom"``; ``modes``; ``excite_v``;
    ``jitter`` (random rescaling of each experiment, driven by ``seed``);
    custom designs list ``[[design.experiments]]`` with ``f1``, ``g1``,
    optional ``f2``, ``g2``, ... profile tables.
``[recovery]``
    ``max_order``, ``ladder``, ``richardson_levels``, ``data`` (fd or exact),
    ``known_Fu``, ``damping``, ``tolerance`` (absolute, on coefficients),
    ``truth``, ``fit``, ``variation_check`` and ``variation_tolerance``.
``[variation]``
    ``order``, ``eps``, ``ladder``, ``mode`` for the ``variation`` subcommand.
``[output]``
    ``dir``, ``field_stride``.

``seed`` sits at the top level. The only environment variable consulted is
``LVINV_OUT``, which overrides the output directory.
"""
from __future__ import annotations

import contextlib
import csv
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import LVInvError, NumericalError, ValidationError
from .forward import SolverConfig, measure, solve_forward
from .recovery import (Experiment, ExperimentDesign, RecoveryReport, StructuralFit, default_design,
                       fit_structural_params, generate_measurements, recover_from_exact,
                       recover_from_measurements, require_diagonal)
from .spectral import Grid1D, SpaceTimeField, neumann_mode
from .taylor_model import ModelPreset, check_admissible, load_model, preset
from .variation import (EpsilonFamily, VariationStack, agreement, assemble_initial,
                        extract_variation_fd, richardson_ladder, stack_direct)

ENV_OUT = "LVINV_OUT"

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_TOLERANCE = 0, 2, 3, 4


class StageError(LVInvError):
    """A module error annotated with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        return exit_code_for(self.cause)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return exc.exit_code
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_VALIDATION


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (LVInvError, OSError) as exc:
        raise StageError(name, exc) from exc


# -- configuration -----------------------------------------------------------

def _length(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() == "pi":
            return math.pi
        raise ValidationError(f"unrecognised length {value!r} (use a number or \"pi\")")
    return float(value)


def profile(desc, grid: Grid1D) -> np.ndarray:
    """Sample a profile table on the grid.

    Keys: ``const`` (constant), ``phi<k>`` (amplitude of the normalised mode
    k), ``phi<k>_plus`` (mode k shifted to be nonnegative), and ``bump =
    [center, width, height]`` (Gaussian). A bare number is a constant.
    """
    if isinstance(desc, (int, float)):
        return np.full(grid.N + 1, float(desc))
    if not isinstance(desc, dict):
        raise ValidationError(f"profile must be a number or a table, got {desc!r}")
    out = np.zeros(grid.N + 1)
    x = grid.nodes
    for key, val in desc.items():
        if key == "const":
            out += float(val)
        elif key == "bump":
            c, w, h = (float(a) for a in val)
            out += h * np.exp(-((x - c) / w) ** 2)
        elif key.startswith("phi"):
            body = key[3:]
            plus = body.endswith("_plus")
            k = int(body[:-5] if plus else body)
            phi = neumann_mode(grid, k).phi
            if plus and k:
                phi = phi + float(np.max(np.abs(phi)))
            out += float(val) * phi
        else:
            raise ValidationError(f"unknown profile key {key!r}")
    return out


@dataclass
class RecoverySettings:
    max_order: int = 2
    ladder: tuple = (1e-2, 2e-2, 4e-2)
    richardson_levels: int = 1
    data: str = "fd"
    known_Fu: float | None = None
    damping: float = 0.0
    tolerance: float = 5e-2
    truth: bool = True
    truth_preset: str | None = None
    fit: str | None = None
    variation_check: bool = True
    variation_tolerance: tuple = (1e-3, 1e-3, 1e-2, 1e-2)

    @property
    def epsilons(self) -> tuple:
        return richardson_ladder(self.ladder, self.richardson_levels)


@dataclass
class VariationSettings:
    order: int = 2
    eps: float | None = None
    ladder: tuple = (1e-2, 2e-2, 4e-2)
    richardson_levels: int = 1
    mode: str = "both"

    @property
    def epsilons(self) -> tuple:
        ladder = self.ladder if self.eps is None else tuple(self.eps * 2.0**j for j in range(len(self.ladder)))
        return richardson_ladder(ladder, self.richardson_levels)


@dataclass
class RunConfig:
    model: ModelPreset
    base: tuple
    grid: Grid1D
    T: float
    solver: SolverConfig
    design: ExperimentDesign
    recovery: RecoverySettings
    variation: VariationSettings
    forward_f: np.ndarray
    forward_g: np.ndarray
    output_dir: Path
    field_stride: int = 20
    seed: int = 0
    source: str = ""


def _design(section, grid, T, solver, epsilons, seed) -> ExperimentDesign:
    modes = tuple(section.get("modes", (0, 1, 2, 3, 4)))
    kind = section.get("kind", "default")
    if kind == "default":
        design = default_design(grid, T, solver, epsilons, modes, bool(section.get("excite_v", True)))
    elif kind == "custom":
        exps = []
        for i, e in enumerate(section.get("experiments", [])):
            order = 1
            while f"f{order + 1}" in e or f"g{order + 1}" in e:
                order += 1
            fs = tuple(profile(e.get(f"f{k}", 0.0), grid) for k in range(1, order + 1))
            gs = tuple(profile(e.get(f"g{k}", 0.0), grid) for k in range(1, order + 1))
            exps.append(Experiment(fs, gs, e.get("label", f"experiment {i + 1}")))
        design = ExperimentDesign(grid, tuple(exps), modes, T, solver, epsilons)
    else:
        raise ValidationError(f"unknown design kind {kind!r}")
    jitter = float(section.get("jitter", 0.0))
    if jitter:
        if not 0 <= jitter < 1:
            raise ValidationError("jitter must lie in [0, 1)")
        rng = np.random.default_rng(seed)
        exps = []
        for e in design.experiments:
            s = 1.0 + jitter * rng.uniform(-1.0, 1.0, size=2)
            exps.append(Experiment(tuple(s[0] * a for a in e.f), tuple(s[1] * a for a in e.g), e.label))
        design = replace(design, experiments=tuple(exps))
    return design


def build_config(raw: dict, source: str = "", out: str | None = None) -> RunConfig:
    """Validate every section and build the run objects (no solves happen here)."""
    with stage("config"):
        model = load_model(raw.get("model", {"kind": "bazykin"}))
        base = raw.get("model", {}).get("base", model.base_solutions[0])
        if base and isinstance(base[0], (list, tuple)):
            base = base[0]
        base = tuple(float(b) for b in base)
        if base not in model.base_solutions:
            raise ValidationError(f"base {base} is not among the model's base solutions {model.base_solutions}")
        g = raw.get("grid", {})
        grid = Grid1D(_length(g.get("L", math.pi)), int(g.get("N", 256)))
        T = float(g.get("T", 1.0))
        if not T > 0:
            raise ValidationError("T must be positive")
        solver = SolverConfig(g.get("scheme", "backward_euler_imex"), int(g.get("steps", 2000)),
                              bool(g.get("positivity_clip", False)))
        r = raw.get("recovery", {})
        rec = RecoverySettings(
            max_order=int(r.get("max_order", 2)),
            ladder=tuple(float(e) for e in r.get("ladder", (1e-2, 2e-2, 4e-2))),
            richardson_levels=int(r.get("richardson_levels", 1)),
            data=r.get("data", "fd"),
            known_Fu=None if r.get("known_Fu") is None else float(r["known_Fu"]),
            damping=float(r.get("damping", 0.0)),
            tolerance=float(r.get("tolerance", 5e-2)),
            truth=bool(r.get("truth", True)),
            truth_preset=r.get("truth_preset"),
            fit=r.get("fit"),
            variation_check=bool(r.get("variation_check", True)),
            variation_tolerance=tuple(float(x) for x in r.get("variation_tolerance", (1e-3, 1e-3, 1e-2, 1e-2))),
        )
        if rec.data not in ("fd", "exact"):
            raise ValidationError(f"recovery.data must be 'fd' or 'exact', got {rec.data!r}")
        if rec.max_order < 1:
            raise ValidationError("recovery.max_order must be >= 1")
        if rec.damping < 0:
            raise ValidationError("recovery.damping must be >= 0")
        v = raw.get("variation", {})
        var = VariationSettings(
            order=int(v.get("order", 2)),
            eps=None if v.get("eps") is None else float(v["eps"]),
            ladder=tuple(float(e) for e in v.get("ladder", (1e-2, 2e-2, 4e-2))),
            richardson_levels=int(v.get("richardson_levels", 1)),
            mode=v.get("mode", "both"),
        )
        if var.mode not in ("fd", "direct", "both"):
            raise ValidationError(f"variation.mode must be fd, direct or both, got {var.mode!r}")
        seed = int(raw.get("seed", 0))
        design = _design(raw.get("design", {}), grid, T, solver, rec.epsilons, seed)
        fw = raw.get("forward", {})
        f = profile(fw.get("f", {"const": base[0], "phi1_plus": 0.1}), grid)
        gg = profile(fw.get("g", {"const": base[1], "phi2_plus": 0.1}), grid)
        o = raw.get("output", {})
        out_dir = out or os.environ.get(ENV_OUT) or o.get("dir", "lvinv_out")
        stride = int(o.get("field_stride", 20))
        if stride < 1 or solver.steps % stride:
            raise ValidationError(f"output.field_stride {stride} must divide steps = {solver.steps}")
    return RunConfig(model, base, grid, T, solver, design, rec, var, f, gg, Path(out_dir), stride, seed, source)


def read_config(path) -> dict:
    with stage("config"):
        try:
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from exc


def merge_overrides(raw: dict, overrides: dict | None) -> dict:
    """Overlay ``{section: {key: value}}`` onto a raw config; ``None`` values are skipped."""
    for sec, vals in (overrides or {}).items():
        raw.setdefault(sec, {}).update({k: v for k, v in vals.items() if v is not None})
    return raw


def load_config(path, out: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Read a TOML config file; ``overrides`` maps section -> {key: value}."""
    return build_config(merge_overrides(read_config(path), overrides), str(path), out)


# -- outputs -----------------------------------------------------------------

def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def emit_plot_data(fields: dict, report: RecoveryReport | None, out_dir, stride: int = 1) -> list:
    """Long-format CSVs: ``x,t,value,series`` for fields and ``order,coeff,estimate,truth,error``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if fields:
        p = out_dir / "plot_fields.csv"
        fh, w = _writer(p)
        with fh:
            w.writerow(["x", "t", "value", "series"])
            for name, fld in fields.items():
                x = fld.grid.nodes
                for t, row in zip(fld.times[::stride], fld.values[::stride]):
                    for xi, val in zip(x, row):
                        w.writerow([f"{xi:.12g}", f"{t:.12g}", f"{val:.12g}", name])
        paths.append(p)
    if report is not None:
        p = out_dir / "plot_recovery.csv"
        fh, w = _writer(p)
        with fh:
            w.writerow(["order", "coeff", "estimate", "truth", "error"])
            for e in report.entries:
                w.writerow([e.order, e.name, f"{e.estimate:.12g}",
                            "" if e.truth is None else f"{e.truth:.12g}",
                            "" if e.abs_error is None else f"{e.abs_error:.12g}"])
        paths.append(p)
    return paths


def write_agreement(path, rows):
    fh, w = _writer(path)
    with fh:
        w.writerow(["order", "experiment", "species", "rel_error", "tolerance", "pass"])
        for r in rows:
            w.writerow([r["order"], r["experiment"], r["species"], f"{r['rel_error']:.6g}",
                        f"{r['tolerance']:.3g}", int(r["pass"])])


# -- subcommands -------------------------------------------------------------

@dataclass
class RunResult:
    exit_code: int
    out_dir: Path
    files: list = field(default_factory=list)
    report: RecoveryReport | None = None
    messages: list = field(default_factory=list)
    fit: StructuralFit | None = None


def run_forward(cfg: RunConfig) -> RunResult:
    out = cfg.output_dir
    with stage("output"):
        out.mkdir(parents=True, exist_ok=True)
    with stage("forward/solve_forward"):
        u, v = solve_forward(cfg.model, cfg.grid, cfg.forward_f, cfg.forward_g, cfg.T, cfg.solver)
    rec = measure(u, v, 0.0)
    files = [out / "forward_u.csv", out / "forward_v.csv", out / "measurement.csv"]
    with stage("output"):
        u.to_csv(files[0], cfg.field_stride)
        v.to_csv(files[1], cfg.field_stride)
        rec.to_csv(files[2])
    msg = f"min u = {u.values.min():.3e}, min v = {v.values.min():.3e}"
    return RunResult(EXIT_OK, out, files, None, [msg])


def _variation_rows(cfg, order, epsilons, mode):
    rows, fields = [], {}
    tF, tG = cfg.model.tables(cfg.base, max(order, 2))
    tol = cfg.recovery.variation_tolerance
    for i, exp in enumerate(cfg.design.experiments):
        with stage("variation/assemble_initial"):
            fam = EpsilonFamily(cfg.base, *_family_lists(exp, order), epsilons)
        direct = fd = None
        if mode in ("direct", "both"):
            with stage("variation/solve_variation_direct"):
                direct = stack_direct(tF, tG, cfg.grid, fam, cfg.T, cfg.solver, cfg.model.diffusion, order)
        if mode in ("fd", "both"):
            with stage("forward/solve_forward"):
                sols = [solve_forward(cfg.model, cfg.grid, *assemble_initial(fam, e), cfg.T, cfg.solver)
                        for e in fam.epsilons]
            with stage("variation/extract_variation_fd"):
                fd = VariationStack()
                for k in range(1, order + 1):
                    fd.add(k, *extract_variation_fd(fam.epsilons, sols, cfg.base, k), provenance="fd")
        for k in range(1, order + 1):
            src = direct if direct is not None else fd
            fields[f"e{i + 1}_u{k}"] = src.u(k)
            fields[f"e{i + 1}_v{k}"] = src.v(k)
        if fd is not None and direct is not None:
            for k, (eu, ev) in agreement(fd, direct).items():
                t = tol[min(k, len(tol)) - 1]
                rows.append({"order": k, "experiment": i + 1, "species": "u", "rel_error": eu,
                             "tolerance": t, "pass": eu <= t})
                rows.append({"order": k, "experiment": i + 1, "species": "v", "rel_error": ev,
                             "tolerance": t, "pass": ev <= t})
    return rows, fields


def _family_lists(exp, order):
    pairs = [exp.coefficient(k) for k in range(1, max(order, len(exp.f)) + 1)]
    return tuple(p[0] for p in pairs), tuple(p[1] for p in pairs)


def run_variation(cfg: RunConfig) -> RunResult:
    out = cfg.output_dir
    with stage("output"):
        out.mkdir(parents=True, exist_ok=True)
    var = cfg.variation
    validate_families(cfg, var.order, var.epsilons)
    rows, fields = _variation_rows(cfg, var.order, var.epsilons, var.mode)
    files = []
    with stage("output"):
        for name, fld in fields.items():
            p = out / f"variation_{name}.csv"
            fld.to_csv(p, cfg.field_stride)
            files.append(p)
        if rows:
            p = out / "variation_agreement.csv"
            write_agreement(p, rows)
            files.append(p)
    ok = all(r["pass"] for r in rows)
    return RunResult(EXIT_OK if ok else EXIT_TOLERANCE, out, files, None,
                     [f"order {r['order']} exp {r['experiment']} {r['species']}: {r['rel_error']:.3e}" for r in rows])


def validate_families(cfg: RunConfig, order: int, epsilons=None):
    """Assemble every initial datum of every experiment before any solve starts."""
    with stage("variation/assemble_initial"):
        for exp in cfg.design.experiments:
            EpsilonFamily(cfg.base, *_family_lists(exp, order),
                          cfg.design.epsilons if epsilons is None else epsilons)


def _recover(cfg: RunConfig, save_measurements: Path | None = None):
    rec = cfg.recovery
    model, design, base = cfg.model, cfg.design, cfg.base
    with stage("recovery/validate"):
        trueF, trueG = model.tables(base, max(rec.max_order, 3 if rec.fit else 1))
        require_diagonal(trueF, trueG)
        if rec.truth_preset:
            trueF, trueG = preset(rec.truth_preset, None, model.diffusion).tables(base, rec.max_order)
    known_Fu = rec.known_Fu if rec.known_Fu is not None else (trueF[(1, 0)] if model.relaxed else 0.0)
    if rec.data == "exact":
        with stage("recovery/recover_order_k"):
            report = recover_from_exact(model, design, base, rec.max_order, known_Fu, rec.damping)
        return report, trueF, trueG
    with stage("forward/solve_forward"):
        records = generate_measurements(model, design, base, rec.max_order)
    if save_measurements is not None:
        with stage("output"):
            for i, recs in enumerate(records):
                for j, r in enumerate(recs):
                    r.to_csv(save_measurements / f"measurement_e{i + 1}_eps{j + 1}.csv")
    with stage("recovery/recover_from_measurements"):
        report = recover_from_measurements(records, design, base, model.diffusion, rec.max_order,
                                           known_Fu, rec.damping)
    return report, trueF, trueG


def _tolerance_check(report: RecoveryReport, tol: float):
    bad = [e for e in report.entries if e.truth is not None and e.abs_error > tol]
    return bad


def run_recover(cfg: RunConfig, report_path=None) -> RunResult:
    out = cfg.output_dir
    with stage("output"):
        out.mkdir(parents=True, exist_ok=True)
    validate_families(cfg, cfg.recovery.max_order)
    report, trueF, trueG = _recover(cfg)
    if cfg.recovery.truth:
        report.attach_truth(trueF, trueG)
    else:
        for e in report.entries:
            e.truth = None
    path = Path(report_path) if report_path else out / "recovery_report.csv"
    with stage("output"):
        path.parent.mkdir(parents=True, exist_ok=True)
        report.to_csv(path)
        summary = path.with_suffix(".txt")
        summary.write_text(report.summary())
    bad = _tolerance_check(report, cfg.recovery.tolerance)
    msgs = [report.summary()] + [f"tolerance exceeded: {e.name} abs error {e.abs_error:.3g}" for e in bad]
    return RunResult(EXIT_TOLERANCE if bad else EXIT_OK, out, [path, summary], report, msgs)


def run_pipeline(cfg: RunConfig) -> RunResult:
    """End-to-end run; exit code 0 iff every configured tolerance is met."""
    out = cfg.output_dir
    with stage("output"):
        out.mkdir(parents=True, exist_ok=True)
    files, msgs, failures = [], [], []
    validate_families(cfg, cfg.recovery.max_order)
    # admissibility findings are recorded, never fatal
    adm_F = check_admissible(cfg.model.F, "A", cfg.base, relaxed=cfg.model.relaxed)
    adm_G = check_admissible(cfg.model.G, "B", cfg.base)
    fw = run_forward(cfg)
    files += fw.files
    plot_fields = {}
    rec = cfg.recovery
    if rec.variation_check and rec.data == "fd":
        rows, fields = _variation_rows(cfg, rec.max_order, rec.epsilons, "both")
        with stage("output"):
            p = out / "variation_agreement.csv"
            write_agreement(p, rows)
        files.append(p)
        failures += [f"variation order {r['order']} experiment {r['experiment']} {r['species']}: "
                     f"{r['rel_error']:.3g} > {r['tolerance']:.3g}" for r in rows if not r["pass"]]
        plot_fields.update({k: v for k, v in fields.items() if k.startswith("e1_")})
    report, trueF, trueG = _recover(cfg, save_measurements=out if rec.data == "fd" else None)
    if rec.truth:
        report.attach_truth(trueF, trueG)
    else:
        for e in report.entries:
            e.truth = None
    fit = None
    if rec.fit:
        with stage("recovery/fit_structural_params"):
            fit = fit_structural_params(rec.fit, report.tableF, report.tableG,
                                        max(e.residual for e in report.entries if e.order > 1))
    with stage("output"):
        p = out / "recovery_report.csv"
        report.to_csv(p)
        files.append(p)
        files += emit_plot_data(plot_fields, report, out, cfg.field_stride)
    failures += [f"{e.name}: abs error {e.abs_error:.3g} > {rec.tolerance:.3g}"
                 for e in _tolerance_check(report, rec.tolerance)]
    lines = [f"config: {cfg.source}", f"model: {cfg.model.kind} {dict(cfg.model.params)}",
             f"admissibility F (class A): {'ok' if adm_F.ok else '; '.join(adm_F.violations)}",
             f"admissibility G (class B): {'ok' if adm_G.ok else '; '.join(adm_G.violations)}"]
    lines += [f"  {n}" for n in adm_F.notes + adm_G.notes]
    lines += fw.messages
    lines.append(report.summary().rstrip())
    if fit is not None:
        lines.append(f"structural fit ({fit.kind}): " + ", ".join(f"{k} = {v:.6g}" for k, v in fit.params.items()))
    lines.append("status: " + ("ok" if not failures else "tolerance failures"))
    lines += [f"  {f}" for f in failures]
    with stage("output"):
        p = out / "summary.txt"
        p.write_text("\n".join(lines) + "\n")
        files.append(p)
    msgs.append("\n".join(lines))
    return RunResult(EXIT_TOLERANCE if failures else EXIT_OK, out, files, report, msgs, fit)
