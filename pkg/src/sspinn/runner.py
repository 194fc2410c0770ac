"""Run directories: solve, evaluate checkpoints, and parameter sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, from_dict, save_config
from .field_model import CheckpointError, load_checkpoint, save_checkpoint
from .loss import LossAssembler
from .optim import TrainingAborted, build_layout, train
from .oracles import burgers_implicit, clm_exact, residual_report
from .sampling import build_collocation

log = logging.getLogger(__name__)


def _fmt(x):
    if isinstance(x, (str, int, np.integer)):
        return str(x)
    return repr(float(x))


def write_csv(path, header, rows, config_hash):
    """CSV with a leading ``# config_hash=...`` comment line."""
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    """Return ``(config_hash, header, rows-as-float-array-or-strings)``."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# config_hash="):
        raise ValueError(f"{path}: missing config hash header")
    h = lines[0].split("=", 1)[1]
    reader = csv.reader(lines[1:])
    header = next(reader)
    rows = list(reader)
    return h, header, rows


def claim_directory(out, config_hash):
    """Refuse to write into a directory holding outputs of a different configuration."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for f in sorted(out.glob("*.csv")):
        first = f.read_text().split("\n", 1)[0]
        if first.startswith("# config_hash=") and first.split("=", 1)[1] != config_hash:
            raise ConfigError(f"{f.name} was written by config {first.split('=', 1)[1]}, "
                              f"not {config_hash}", str(out))
    meta = out / "metadata.json"
    if meta.exists():
        other = json.loads(meta.read_text()).get("config_hash")
        if other not in (None, config_hash):
            raise ConfigError(f"metadata.json belongs to config {other}, not {config_hash}", str(out))
    return out


def _history_header(problem):
    cols = ["iteration", "stage"]
    cols += [f"loss_c[{c.id}]" for c in problem.constraints]
    cols += [f"loss_f[{e}]" for e in problem.equations]
    cols += [f"loss_df[{e}]" for e in problem.equations]
    cols += ["total"] + [s.name for s in problem.scalars]
    return cols


def _history_row(row):
    it, stage, bd, scalars, _ = row
    return [it, stage, *bd.loss_c, *bd.loss_f, *bd.loss_df, bd.total, *scalars.values()]


def _network_dims(cfg: RunConfig, problem):
    hidden = cfg.network.get("hidden")
    per_field = cfg.network.get("per_field", {})
    return {f: list(per_field.get(f, hidden)) for f in problem.field_names()}


def _input_scale(cfg: RunConfig, problem):
    s = cfg.network.get("input_scale")
    if s is None:
        half = max(max(abs(a), abs(b)) for a, b in zip(problem.domain.lo, problem.domain.hi))
        s = 1.0 / half
    return s


def _loss_weights(cfg: RunConfig):
    w = cfg.loss.get("weights")
    if not w:
        return None
    return (w.get("condition", 1.0), w.get("equation", 1.0), w.get("gradient", 1.0))


def _collocation(cfg: RunConfig, problem):
    c = cfg.collocation
    r = c.get("r_split")
    if r is None:
        half = max(max(abs(a), abs(b)) for a, b in zip(problem.domain.lo, problem.domain.hi))
        r = half / 4.0
    return build_collocation(problem, c["n_near"], c["n_far"], float(r), c["n_boundary"], cfg.seed)


def export_grid(cfg: RunConfig, problem):
    """Regular export grid; problems with a Hilbert term keep it strictly inside the quadrature box."""
    ex = cfg.export
    lo = np.array(ex.get("lo", problem.domain.lo), dtype=float)
    hi = np.array(ex.get("hi", problem.domain.hi), dtype=float)
    n = ex.get("n", [1001] if problem.dim == 1 else [65, 65])
    if problem.hilbert is not None:
        L = problem.hilbert["L"]
        lo = np.maximum(lo, -L * (1 - 1e-9))
        hi = np.minimum(hi, L * (1 - 1e-9))
    axes = [np.linspace(a, b, int(k)) for a, b, k in zip(lo, hi, n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1), axes


def snapshot(problem, layout, theta, Y):
    """Fields and residuals of the trained networks at the rows of ``Y``."""
    from .sampling import CollocationSet

    coll = CollocationSet(Y, {c.id: Y[:1] for c in problem.constraints})
    asm = LossAssembler(problem, layout, coll)
    bundle, jets, scalars = asm.interior_residuals(theta)
    aux = None
    if problem.hilbert is not None:
        aux = {"H_omega": asm.hilbert_terms(theta, jets)}
    return jets, bundle, scalars, aux


def write_snapshot(path, problem, Y, jets, bundle, config_hash):
    coords = ["y1", "y2"][:problem.dim] if problem.dim == 2 else ["y"]
    header = coords + problem.field_names() + problem.equations
    cols = [Y[:, i] for i in range(problem.dim)]
    cols += [np.asarray(jets[f].value) for f in problem.field_names()]
    cols += [np.asarray(v) for v in bundle.values]
    rows = np.stack(cols, axis=1)
    write_csv(path, header, rows, config_hash)


def burgers_reference_lam(problem, inferred):
    """Exponent of the oracle branch: the fixed value, else the smooth ``1/(2i+2)`` inside the window."""
    fixed = problem.options.get("lam_fixed")
    if fixed is not None:
        return float(fixed)
    lo, hi = problem.options["lam_window"]
    smooth = [1.0 / (2 * i + 2) for i in range(50) if lo < 1.0 / (2 * i + 2) < hi]
    return smooth[0] if len(smooth) == 1 else float(inferred)


def _oracle_comparison(problem, Y, jets, scalars):
    """Columns comparing against closed-form solutions where one exists."""
    if problem.name == "burgers":
        ref_lam = burgers_reference_lam(problem, scalars["lam"])
        y = Y[:, 0]
        ref = burgers_implicit(y, ref_lam)
        got = np.asarray(jets["U"].value)
        return ["y", "U", "U_oracle", "abs_error"], np.stack([y, got, ref, np.abs(got - ref)], axis=1), \
            {"oracle": f"burgers_implicit(lam={ref_lam})", "sup_error": float(np.max(np.abs(got - ref)))}
    if problem.name == "degregorio" and problem.options.get("a_value") == 0.0 \
            and problem.options.get("a_window") is None:
        y = Y[:, 0]
        om, _, _ = clm_exact(y)
        got = np.asarray(jets["Omega"].value)
        return ["y", "Omega", "Omega_oracle", "abs_error"], np.stack([y, got, om, np.abs(got - om)], axis=1), \
            {"oracle": "clm_exact", "sup_error": float(np.max(np.abs(got - om))),
             "rms_error": float(np.sqrt(np.mean((got - om) ** 2)))}
    return None


def solve(cfg: RunConfig, out_dir=None, warm_start=None):
    """Train per ``cfg`` and write a self-contained run directory; returns its path.

    ``warm_start`` is an optional checkpoint whose parameters seed the run
    (the network shapes must match).
    """
    problem = cfg.make_problem()
    schedule = cfg.make_schedule()
    h = cfg.hash()
    out = claim_directory(out_dir or cfg.output_dir, h)
    save_config(cfg, out / "config.json")
    coll = _collocation(cfg, problem)
    write_csv(out / "collocation.csv", ["set"] + [f"y{i + 1}" for i in range(problem.dim)],
              coll.to_rows(), h)

    layout, theta0 = build_layout(problem, _network_dims(cfg, problem), cfg.seed,
                                  _input_scale(cfg, problem), cfg.scalar_init)
    if warm_start is not None:
        wl, wtheta, _ = load_checkpoint(warm_start)
        if [f.layer_dims for f in wl.fields] != [f.layer_dims for f in layout.fields]:
            raise CheckpointError("warm-start checkpoint has different network shapes")
        for f, wf in zip(layout.fields, wl.fields):
            theta0[f.offset:f.offset + f.size] = wtheta[wf.offset:wf.offset + wf.size]

    history_rows, timing_rows = [], []
    meta = {"config": cfg.to_dict(), "config_hash": h}

    def on_log(row):
        history_rows.append(_history_row(row))
        timing_rows.append([row[0], row[4]])

    def on_stage(name, th):
        save_checkpoint(out / f"checkpoint_{name}.npz", layout, th, cfg.seed, meta)

    t0 = time.perf_counter()
    status, message = "ok", ""
    try:
        result = train(problem, schedule, coll, cfg.seed, gamma=cfg.loss.get("gamma", 0.1),
                       weights=_loss_weights(cfg), layout=layout, theta0=theta0,
                       on_log=on_log, on_stage=on_stage)
        theta, breakdown, scalars = result.theta, result.breakdown, result.scalars
        steps = [[k, int(i.accepted), int(i.fallback), i.alpha, i.f_old, i.f_new, i.n_evals]
                 for k, i in enumerate(result.lbfgs_infos)]
        write_csv(out / "lbfgs_steps.csv", ["step", "accepted", "fallback", "alpha", "f_old", "f_new", "n_evals"],
                  steps, h)
    except TrainingAborted as exc:
        save_checkpoint(out / "checkpoint_aborted.npz", layout, exc.theta, cfg.seed, meta)
        status, message = "aborted", str(exc)
        theta = exc.theta
        breakdown, scalars = None, layout.scalar_values(theta)
    wall = time.perf_counter() - t0
    write_csv(out / "loss_history.csv", _history_header(problem), history_rows, h)
    write_csv(out / "timing.csv", ["iteration", "seconds"], timing_rows, h)

    Y, _ = export_grid(cfg, problem)
    jets, bundle, _, aux = snapshot(problem, layout, theta, Y)
    write_snapshot(out / "profile.csv", problem, Y, jets, bundle, h)
    report = residual_report(problem, jets, scalars, Y, aux)
    comparison = _oracle_comparison(problem, Y, jets, scalars)
    if comparison is not None:
        write_csv(out / "oracle_comparison.csv", comparison[0], comparison[1], h)

    metadata = {
        "config_hash": h,
        "status": status,
        "message": message,
        "problem": problem.to_dict(),
        "scalars": scalars,
        "final_loss": None if breakdown is None else {
            "total": breakdown.total, "gamma": breakdown.gamma,
            "loss_c": dict(zip([c.id for c in problem.constraints], breakdown.loss_c.tolist())),
            "loss_f": dict(zip(problem.equations, breakdown.loss_f.tolist())),
            "loss_df": dict(zip(problem.equations, breakdown.loss_df.tolist())),
        },
        "residual_report": report,
        "oracle": None if comparison is None else comparison[2],
        "versions": {"sspinn": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "wall_time_s": wall,
    }
    (out / "metadata.json").write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")
    if status != "ok":
        raise TrainingAborted(message, theta, -1)
    return out


def evaluate(checkpoint, out_dir, grid_n=None):
    """Fields and residual CSVs for a checkpoint on a regular grid.

    Returns ``(paths, report)``; reuses the export grid of the originating
    config unless ``grid_n`` overrides the per-axis counts.
    """
    layout, theta, header = load_checkpoint(checkpoint)
    meta = header.get("meta", {})
    if "config" not in meta:
        raise CheckpointError(f"{checkpoint}: no embedded run configuration")
    cfg = from_dict(meta["config"])
    if grid_n is not None:
        cfg.export = dict(cfg.export, n=list(grid_n))
    problem = cfg.make_problem()
    if [f.name for f in layout.fields] != problem.field_names():
        raise CheckpointError(f"{checkpoint}: fields do not match problem {problem.name}")
    h = meta.get("config_hash", cfg.hash())
    out = claim_directory(out_dir, h)
    Y, _ = export_grid(cfg, problem)
    jets, bundle, scalars, aux = snapshot(problem, layout, theta, Y)
    coords = ["y1", "y2"] if problem.dim == 2 else ["y"]
    paths = []
    for name in problem.field_names():
        p = out / f"field_{name}.csv"
        write_csv(p, coords + [name], np.column_stack([Y, np.asarray(jets[name].value)]), h)
        paths.append(p)
    for name, v in zip(problem.equations, bundle.values):
        p = out / f"residual_{name}.csv"
        write_csv(p, coords + [name], np.column_stack([Y, np.asarray(v)]), h)
        paths.append(p)
    write_snapshot(out / "profile.csv", problem, Y, jets, bundle, h)
    report = residual_report(problem, jets, scalars, Y, aux)
    rows = [[k, v["rms"], v["sup"]] for k, v in report["equations"].items()]
    rows += [[k, v["rms"], v["sup"]] for k, v in report["fields"].items()]
    write_csv(out / "norms.csv", ["name", "rms", "sup"], rows, h)
    comparison = _oracle_comparison(problem, Y, jets, scalars)
    if comparison is not None:
        write_csv(out / "oracle_comparison.csv", comparison[0], comparison[1], h)
        paths.append(out / "oracle_comparison.csv")
    return paths, report


SWEEP_TARGETS = {"a": ("a_value", "lam"), "lam": ("lam_fixed", None)}


def sweep(cfg: RunConfig, parameter: str, values, out_dir=None, warm_start=False):
    """Solve once per value of a fixed scalar; returns summary rows.

    ``parameter`` is ``"a"`` (De Gregorio, infers ``lam``) or ``"lam"``
    (infers whichever other scalar is trainable).  Failed sub-runs are
    recorded and the sweep continues.
    """
    if parameter not in SWEEP_TARGETS:
        raise ConfigError(f"cannot sweep {parameter!r}; choose from {sorted(SWEEP_TARGETS)}", "parameter")
    key, _ = SWEEP_TARGETS[parameter]
    problem = cfg.make_problem()
    if parameter == "a" and problem.name != "degregorio":
        raise ConfigError("parameter 'a' only exists for degregorio", "parameter")
    inferred = [s.name for s in problem.scalars if s.name != parameter]
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, prev = [], None
    for k, v in enumerate(values):
        opts = dict(cfg.problem_options)
        opts[key] = float(v)
        if parameter == "a":
            opts["a_window"] = None
        sub = cfg.with_overrides(problem_options=opts, output_dir=str(out / f"run_{k:03d}"))
        try:
            run = solve(sub, warm_start=prev if warm_start else None)
            meta = json.loads((run / "metadata.json").read_text())
            row = [float(v)] + [meta["scalars"][n] for n in inferred] + [meta["final_loss"]["total"], "ok"]
            prev = run / "checkpoint_final.npz"
        except Exception as exc:  # a failing value must not stop the sweep
            log.warning("sweep value %s failed: %s", v, exc)
            row = [float(v)] + [float("nan")] * len(inferred) + [float("nan"), f"failed: {exc}"]
        rows.append(row)
    write_csv(out / "sweep.csv", [parameter] + inferred + ["final_loss", "status"], rows, cfg.hash())
    return rows
