"""Command line entry point: ``treeqms evaluate|verify|fixpoint|sweep``.

Every command writes one JSON report with a ``header`` (tool and library
versions) and a ``body`` (results). Neither section holds timestamps, so
identical inputs give byte-identical reports. Flags can also be set through
``TREEQMS_<FLAG>`` environment variables (``TREEQMS_MODEL``, ``TREEQMS_TOL``,
``TREEQMS_NMAX``, ``TREEQMS_OUT``, ``TREEQMS_DENSE_BUDGET``, ``TREEQMS_OBSERVABLE``).

Exit codes: 0 success, 2 configuration error, 3 budget exceeded,
4 verification failure, 5 solver did not converge.
"""

from __future__ import annotations

import contextlib
import json
import math
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import __version__, dense
from .engine import PAULI_N_MAX, QmsHandle, evaluate, evaluate_localized
from .errors import (BudgetExceededError, ConfigError, IdentityPreservationError, NotPositiveError, RegionError,
                     SolverError, TreeQMSError, UnsupportedModelError)
from .ising import ModelSpec, build_amplitude, closed_form_alpha, solve_fixed_point
from .operators import to_records
from .specs import ParsedModel, parse_model_spec, parse_observable_spec
from .verify import (DEFAULT_TOL, VerificationReport, check_commutation, check_level_markov,
                     check_localized_markov, check_sub_qms, check_translation_invariance, extract_potential)

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_VERIFY, EXIT_SOLVER = 0, 2, 3, 4, 5
ENV_PREFIX = "TREEQMS"
CHECKS = ("markov", "level-markov", "commutation", "translation", "sub-qms")
GRID = (0.0, 0.5, 1.0, 1.5, 2.0)


@dataclass(frozen=True)
class RunConfig:
    command: str
    model: Path
    observable: Path | None = None
    tol: float = DEFAULT_TOL
    n_max: int = PAULI_N_MAX
    out: Path | None = None
    dense_budget: int = dense.DENSE_MAX_SITES

    def __post_init__(self):
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise ConfigError(f"tol must be > 0, got {self.tol}")
        if self.n_max < 1:
            raise ConfigError(f"n_max must be >= 1, got {self.n_max}")
        if self.dense_budget < 1:
            raise ConfigError(f"dense budget must be >= 1, got {self.dense_budget}")


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _header(command: str) -> dict:
    return {"tool": "treeqms", "version": __version__, "command": command,
            "python": platform.python_version(), "numpy": np.__version__}


def render_report(command: str, body: dict) -> str:
    return json.dumps({"header": _header(command), "body": _jsonable(body)}, indent=2) + "\n"


@contextlib.contextmanager
def dense_budget(sites: int):
    saved = dense.DENSE_MAX_SITES
    dense.DENSE_MAX_SITES = sites
    try:
        yield
    finally:
        dense.DENSE_MAX_SITES = saved


def _load_model(cfg: RunConfig) -> ParsedModel:
    try:
        text = Path(cfg.model).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read model spec: {err}") from None
    return parse_model_spec(text)


def _root_marginal(h: QmsHandle) -> list:
    rho = h.root_marginal()
    return [[complex(v) for v in row] for row in rho]


# commands


def cmd_evaluate(cfg: RunConfig) -> tuple[dict, int]:
    model = _load_model(cfg)
    if cfg.observable is None:
        raise ConfigError("evaluate needs --observable")
    try:
        obs = parse_observable_spec(Path(cfg.observable).read_text())
    except OSError as err:
        raise ConfigError(f"cannot read observable spec: {err}") from None
    h = model.build(cfg.n_max)
    records = []
    for o in obs:
        res = evaluate(h, o.operator, o.volume)
        rec = {"name": o.name, "observable": to_records(o.operator), "value": res.value,
               "volume": res.volume, "path": res.path}
        if h.certified:
            try:
                loc = evaluate_localized(h, o.operator, volume=o.volume)
                rec["localized_value"] = loc.value
            except RegionError:
                pass
        records.append(rec)
    body = {"model": model.describe(), "root_marginal": _root_marginal(h), "results": records}
    return body, EXIT_OK


def run_checks(h: QmsHandle, tol: float, checks=CHECKS, potential_volume: int = 2) -> list[VerificationReport]:
    """The standard verification suite on a handle."""
    reports = []
    if "markov" in checks:
        for v in [h.root] + list(h.successors(h.root)):
            reports.append(check_localized_markov(h, v, tol=tol))
    if "level-markov" in checks:
        for n in (0, 1):
            if n + 1 <= h.n_max:
                reports.append(check_level_markov(h, n, tol))
    if "commutation" in checks:
        try:
            d = extract_potential(h, potential_volume)
        except NotPositiveError as err:
            reports.append(VerificationReport("commutation", False, float("inf"), str(err), tol,
                                              (potential_volume,), "operator"))
        else:
            rep = check_commutation(d, tol=max(tol, 1e-12))
            rep.notes["decomposition_residual"] = d.decomposition_residual
            reports.append(rep)
    if "translation" in checks:
        reports.append(check_translation_invariance(h, tol))
    if "sub-qms" in checks:
        reports.append(check_sub_qms(h, root=h.successors(h.root)[0], tol=tol))
    return reports


def cmd_verify(cfg: RunConfig, checks=CHECKS) -> tuple[dict, int]:
    model = _load_model(cfg)
    h = model.build(cfg.n_max)
    reports = run_checks(h, cfg.tol, checks)
    failed = [r for r in reports if not r.passed]
    body = {"model": model.describe(), "root_marginal": _root_marginal(h),
            "passed": not failed, "failures": [f"{r.property}: {r.witness}" for r in failed],
            "reports": [r.to_dict() for r in reports]}
    return body, EXIT_VERIFY if failed else EXIT_OK


def cmd_fixpoint(cfg: RunConfig) -> tuple[dict, int]:
    model = _load_model(cfg)
    amp = model.fork_amplitude()
    fp = solve_fixed_point(amp)
    body = {"model": model.describe(), "h": fp.h, "residual": fp.residual, "iterations": fp.iterations,
            "scalar": fp.is_scalar}
    status = EXIT_OK
    if fp.is_scalar:
        body["alpha_solver"] = fp.alpha
    if model.kind == "ising_competing":
        closed = closed_form_alpha(model.ising)
        body["alpha_closed_form"] = closed
        body["alpha_difference"] = abs(fp.alpha - closed)
        body["passed"] = bool(fp.is_scalar and abs(fp.alpha - closed) < cfg.tol)
        status = EXIT_OK if body["passed"] else EXIT_VERIFY
    return body, status


def cmd_sweep(cfg: RunConfig, betas=GRID, couplings=GRID) -> tuple[dict, int]:
    model = _load_model(cfg)
    if model.kind != "ising_competing":
        raise ConfigError("sweep needs an ising_competing model")
    points = []
    for beta in betas:
        for J in couplings:
            m = ModelSpec(beta, J, model.k, 2, model.depth)
            fp = solve_fixed_point(build_amplitude(m))
            closed = closed_form_alpha(m)
            p = {"beta": beta, "J": J, "alpha_solver": fp.alpha, "alpha_closed_form": closed,
                 "residual": fp.residual}
            h = ParsedModel("ising_competing", model.depth, model.k, m).build(max(2, min(cfg.n_max, PAULI_N_MAX)))
            markov = check_localized_markov(h, h.root, tol=cfg.tol)
            p["markov_residual"] = markov.residual
            p["passed"] = bool(abs(fp.alpha - closed) < cfg.tol and markov.passed)
            points.append(p)
    n_fail = sum(not p["passed"] for p in points)
    body = {"model": model.describe(), "points": points,
            "summary": {"points": len(points), "passed": len(points) - n_fail, "failed": n_fail}}
    return body, EXIT_VERIFY if n_fail else EXIT_OK


def run(cfg: RunConfig, **kwargs) -> tuple[str, int]:
    """Dispatch a command and map errors onto exit codes; returns ``(report, status)``."""
    commands = {"evaluate": cmd_evaluate, "verify": cmd_verify, "fixpoint": cmd_fixpoint, "sweep": cmd_sweep}
    try:
        with dense_budget(cfg.dense_budget):
            body, status = commands[cfg.command](cfg, **kwargs)
    except SolverError as err:
        body, status = {"error": str(err), "residual": err.residual, "iterations": err.iterations}, EXIT_SOLVER
    except BudgetExceededError as err:
        body, status = {"error": str(err)}, EXIT_BUDGET
    except (ConfigError, UnsupportedModelError, IdentityPreservationError, NotPositiveError,
            RegionError, KeyError, TreeQMSError, ValueError) as err:
        body, status = {"error": str(err).strip("'\"")}, EXIT_CONFIG
    body = {"exit_status": status, **body}
    return render_report(cfg.command, body), status


def _emit(cfg: RunConfig, report: str) -> None:
    if cfg.out is None:
        click.echo(report, nl=False)
    else:
        Path(cfg.out).write_text(report)


# click wiring


def _options(f):
    f = click.option("--dense-budget", "dense_budget", type=int, default=dense.DENSE_MAX_SITES, show_default=True,
                     envvar=f"{ENV_PREFIX}_DENSE_BUDGET", help="Largest number of qubit sites for dense matrices.")(f)
    f = click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None,
                     envvar=f"{ENV_PREFIX}_OUT", help="Report file (default: stdout).")(f)
    f = click.option("--nmax", "n_max", type=int, default=PAULI_N_MAX, show_default=True,
                     envvar=f"{ENV_PREFIX}_NMAX", help="Deepest level a handle may be evaluated at.")(f)
    f = click.option("--tol", type=float, default=DEFAULT_TOL, show_default=True,
                     envvar=f"{ENV_PREFIX}_TOL", help="Pass threshold for residuals.")(f)
    f = click.option("--model", type=click.Path(dir_okay=False, path_type=Path), required=True,
                     envvar=f"{ENV_PREFIX}_MODEL", help="Model spec (JSON).")(f)
    return f


def _execute(command: str, observable=None, **kwargs):
    extra = {k: kwargs.pop(k) for k in ("checks", "betas", "couplings") if k in kwargs}
    try:
        cfg = RunConfig(command, observable=observable, **kwargs)
    except ConfigError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(EXIT_CONFIG)
    report, status = run(cfg, **extra)
    _emit(cfg, report)
    sys.exit(status)


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from None


@click.group()
@click.version_option(__version__, prog_name="treeqms")
def main():
    """Quantum Markov states on Cayley trees."""


@main.command("evaluate")
@_options
@click.option("--observable", type=click.Path(dir_okay=False, path_type=Path), envvar=f"{ENV_PREFIX}_OBSERVABLE",
              help="Observable spec (JSON).")
def evaluate_cmd(**kwargs):
    """Evaluate observables on the model's state."""
    _execute("evaluate", **kwargs)


@main.command("verify")
@_options
@click.option("--checks", default=",".join(CHECKS), show_default=True,
              help="Comma-separated subset of " + ", ".join(CHECKS) + ".")
def verify_cmd(checks, **kwargs):
    """Run the verification suite; exit 4 if any check fails."""
    chosen = tuple(c.strip() for c in checks.split(",") if c.strip())
    unknown = [c for c in chosen if c not in CHECKS]
    if unknown:
        raise click.BadParameter(f"unknown check {unknown[0]!r}", param_hint="--checks")
    _execute("verify", checks=chosen, **kwargs)


@main.command("fixpoint")
@_options
def fixpoint_cmd(**kwargs):
    """Solve the boundary equation for the root fork amplitude."""
    _execute("fixpoint", **kwargs)


@main.command("sweep")
@_options
@click.option("--betas", default=",".join(map(str, GRID)), show_default=True, help="Comma-separated beta values.")
@click.option("--couplings", default=",".join(map(str, GRID)), show_default=True, help="Comma-separated J values.")
def sweep_cmd(betas, couplings, **kwargs):
    """Grid over (beta, J) with solver versus closed-form alpha."""
    _execute("sweep", betas=_floats(betas), couplings=_floats(couplings), **kwargs)


if __name__ == "__main__":
    main()
