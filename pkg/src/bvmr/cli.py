"""Config-driven runner: ``bvmr {run,convergence,mollify-study,quasilinear} --config FILE``.

Exit status: 0 when every requested check passes, 1 when a check fails,
2 when the configuration is malformed (the message names the field).
"""

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import estimates
from .bv_time import PiecewiseAffine
from .forms import BUILDERS, build_form
from .stepper import SCHEMES, PerturbationSpec, SourceTerm, mr_norms, solve_linear, solve_perturbed

PROFILES = {
    "ones": lambda x: np.ones_like(x),
    "sin_pi": lambda x: np.sin(np.pi * x),
    "cos_pi": lambda x: np.cos(np.pi * x),
    "hat": lambda x: np.maximum(0.0, 1.0 - np.abs(2.0 * x - 1.0)),
}


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


def _require(cond, field, message):
    if not cond:
        raise ConfigError(field, message)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    _require(isinstance(cfg, dict), "config", "top level must be an object")
    return cfg


class Experiment:
    """Validated configuration with the objects it describes."""

    def __init__(self, cfg, tol_factor=None, out=None):
        self.cfg = cfg
        problem = cfg.get("problem")
        _require(isinstance(problem, dict), "problem", "missing or not an object")
        builder = problem.get("builder")
        _require(builder in BUILDERS, "problem.builder", f"must be one of {list(BUILDERS)}, got {builder!r}")
        params = dict(problem.get("params", {}))
        T = cfg.get("T", params.get("T", 1.0))
        _require(isinstance(T, (int, float)) and T > 0, "T", f"must be a positive number, got {T!r}")
        K = cfg.get("K", 100)
        _require(isinstance(K, int) and not isinstance(K, bool) and K >= 2, "K", f"must be an integer >= 2, got {K!r}")
        scheme = cfg.get("scheme", "implicit_euler")
        _require(scheme in SCHEMES, "scheme", f"must be one of {list(SCHEMES)}")
        params["T"] = float(T)
        spec = {"builder": builder, "params": params}
        if "modulus" in problem:
            spec["modulus"] = problem["modulus"]
        try:
            self.form, self.builder_pert = build_form(spec)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("problem.params", str(exc)) from exc
        self.T, self.K, self.scheme = float(T), K, scheme
        self.u0 = self._vector(cfg.get("u0", 1.0), "u0")
        src = cfg.get("source")
        self.source = None if src is None else SourceTerm.constant(self._vector(src, "source"))
        self.perturbation = self._perturbation(cfg.get("perturbation"))
        checks = cfg.get("checks", ["lions", "interpolation"])
        _require(isinstance(checks, list), "checks", "must be a list of names")
        bad = [c for c in checks if c not in estimates.CHECK_NAMES]
        _require(not bad, "checks", f"unknown names {bad}; available {list(estimates.CHECK_NAMES)}")
        if "perturbed_mr_bound" in checks:
            _require(self.perturbation is not None, "checks", "perturbed_mr_bound needs a perturbation")
        self.checks = checks
        tol = cfg.get("tol_factor", estimates.TOL_FACTOR) if tol_factor is None else tol_factor
        _require(isinstance(tol, (int, float)) and tol > 0, "tol_factor", "must be positive")
        self.tol_factor = float(tol)
        self.out = out or cfg.get("output_dir", "out")

    def _vector(self, value, field):
        n = self.form.dim
        if isinstance(value, str):
            _require(value in PROFILES, field, f"unknown profile {value!r}; available {sorted(PROFILES)}")
            x = self.form.mesh.dof_coordinates() if self.form.mesh is not None else np.zeros(n)
            return PROFILES[value](x)
        if isinstance(value, (int, float)):
            return np.full(n, float(value))
        _require(isinstance(value, list) and len(value) == n and all(isinstance(v, (int, float)) for v in value),
                 field, f"must be a number, a profile name or a list of {n} numbers")
        return np.array(value, dtype=float)

    def _perturbation(self, data):
        if data is None:
            return None
        _require(isinstance(data, dict), "perturbation", "must be an object")
        if data.get("from_builder"):
            _require(self.builder_pert is not None, "perturbation.from_builder",
                     "the builder provides no lower-order part")
            return self.builder_pert
        try:
            B = data.get("B", 1.0)
            B = PiecewiseAffine.from_dict(B, self.T) if isinstance(B, dict) else B
            h = data.get("h")
            h = PiecewiseAffine.from_dict(h, self.T) if isinstance(h, dict) else h
            C = data.get("C")
            C_fn = None
            if C is not None:
                C_mat = np.atleast_2d(np.array(C, dtype=float))
                if np.ndim(C) == 0:
                    C_mat = float(C) * self.form.space.gram_H
                _require(C_mat.shape == (self.form.dim,) * 2, "perturbation.C",
                         f"must be a number or a {self.form.dim}x{self.form.dim} matrix")

                def C_fn(t, side="raw"):
                    return C_mat
                if h is None:
                    from .stepper import c_operator_norm_sq
                    h = c_operator_norm_sq(self.form.space, C_mat)
            return PerturbationSpec(B=B, C=C_fn, h=h, beta0=data.get("beta0"), beta1=data.get("beta1"))
        except (TypeError, ValueError) as exc:
            raise ConfigError("perturbation", str(exc)) from exc

    def solve(self, K=None):
        K = self.K if K is None else K
        if self.perturbation is not None:
            return solve_perturbed(self.form, self.perturbation, K, self.source, self.u0)
        return solve_linear(self.form, K, self.source, self.u0, self.scheme)

    def exact_final(self):
        """Closed form of ``u(T)`` for scalar problems without a source, else ``None``."""
        if self.cfg["problem"]["builder"] != "scalar" or self.source is not None:
            return None
        a = self.form.family.terms[0][0]
        factor = 1.0
        pert = self.perturbation
        if pert is not None:
            if pert.C is not None or not isinstance(pert.B, (int, float)):
                return None
            factor = float(pert.B)
        return self.u0 * math.exp(-factor * a.integral(0.0, self.T))


def _write_json(path, data):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(estimates._plain(data), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def cmd_run(exp):
    traj = exp.solve()
    os.makedirs(exp.out, exist_ok=True)
    traj.to_csv(os.path.join(exp.out, "trajectory.csv"))
    reports = estimates.run_checks(traj, exp.checks, tol_factor=exp.tol_factor)
    _write_json(os.path.join(exp.out, "report.json"), {
        "problem": exp.cfg["problem"], "K": traj.grid.K, "T": exp.T, "scheme": exp.scheme,
        "inserted_times": list(traj.grid.inserted), "tol_factor": exp.tol_factor,
        "declared": {"M": exp.form.M, "alpha": exp.form.alpha,
                     "gvar": exp.form.modulus.total_variation()},
        "mr_norms": mr_norms(traj).to_dict(), "final_state": traj.final.tolist(),
        "checks": [r.to_dict() for r in reports]})
    failed = [r.name for r in reports if not r.passed]
    for r in reports:
        print(r.line())
    print(f"run: {len(reports) - len(failed)}/{len(reports)} checks passed, K={traj.grid.K}, "
          f"output in {exp.out}" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return 1 if failed else 0


def convergence_table(exp, refinements):
    """Rows ``(K, dt, error, order)``; order from successive log ratios."""
    refinements = sorted(set(int(k) for k in refinements))
    if len(refinements) < 2:
        raise ConfigError("refinements", "at least two grid sizes are needed")
    exact = exp.exact_final()
    ref = None
    if exact is None:
        ref = exp.solve(4 * refinements[-1])
    rows = []
    prev = None
    for K in refinements:
        traj = exp.solve(K)
        if exact is not None:
            err = float(exp.form.space.norm_H(traj.final - exact))
        else:
            sampled = np.array([np.interp(traj.times, ref.times, col) for col in ref.states.T]).T
            err = float(exp.form.space.norms_H(traj.states - sampled).max())
        dt = exp.T / K
        order = math.nan if prev is None or err == 0 or prev[1] == 0 else math.log(prev[1] / err) / math.log(prev[0] / dt)
        rows.append((K, dt, err, order))
        prev = (dt, err)
    return rows, "closed_form" if exact is not None else "fine_grid"


def cmd_convergence(exp, refinements):
    rows, oracle = convergence_table(exp, refinements)
    os.makedirs(exp.out, exist_ok=True)
    _write_rows(os.path.join(exp.out, "convergence.csv"), ["K", "dt", "error_H", "order"], rows)
    for K, dt, err, order in rows:
        print(f"K={K:6d} dt={dt:.3e} error={err:.3e} order={order:.3f}")
    print(f"convergence: oracle={oracle}, output in {exp.out}")
    return 0


def cmd_mollify(exp, orders):
    if not orders:
        raise ConfigError("orders", "at least one mollifier order is required")
    rows = estimates.mollification_convergence_study(exp.form, exp.source, exp.u0, orders, exp.K)
    os.makedirs(exp.out, exist_ok=True)
    estimates.study_to_csv(rows, os.path.join(exp.out, "mollify_study.csv"))
    for r in rows:
        print(f"n={r['n']:4d} err_l2v={r['err_l2v']:.3e} dual_drift={r['dual_drift']:.3e} bound={r['drift_bound']:.3e}")
    within = all(r["dual_drift"] <= r["drift_bound"] * (1 + 1e-12) + 10 * r["dt_max"] for r in rows)
    print(f"mollify-study: {len(rows)} orders, drift within bound: {within}, output in {exp.out}")
    return 0 if within else 1


def cmd_quasilinear(exp):
    from . import quasilinear as ql

    data = exp.cfg.get("quasilinear")
    _require(isinstance(data, dict), "quasilinear", "missing or not an object")
    m_name, f_name = data.get("m", "one"), data.get("f", "zero")
    _require(m_name in ql.M_FUNCTIONS, "quasilinear.m", f"must be one of {sorted(ql.M_FUNCTIONS)}")
    _require(f_name in ql.F_FUNCTIONS, "quasilinear.f", f"must be one of {sorted(ql.F_FUNCTIONS)}")
    try:
        spec = ql.QuasilinearSpec(ql.M_FUNCTIONS[m_name], ql.F_FUNCTIONS[f_name],
                                  float(data.get("beta0", 1.0)), float(data.get("beta1", 2.0)),
                                  g_src=data.get("g_src", 0.0), h=data.get("h", 0.0), q=data.get("q"))
    except (TypeError, ValueError) as exc:
        raise ConfigError("quasilinear", str(exc)) from exc
    kwargs = {"tol": float(data.get("tol", 1e-8)), "max_iter": int(data.get("max_iter", 25)),
              "theta": float(data.get("theta", 0.5))}
    rep = ql.solve_fixed_point(spec, exp.form, exp.K, exp.u0, **kwargs)
    os.makedirs(exp.out, exist_ok=True)
    rep.trajectory.to_csv(os.path.join(exp.out, "trajectory.csv"))
    out = {"fixed_point": rep.to_dict(), "growth_violation": spec.check_growth(T=exp.T)}
    ok = rep.converged
    if rep.converged:
        bound = ql.apriori_bound_check(rep, spec, exp.form, exp.u0, tol_factor=exp.tol_factor)
        out["apriori"] = bound.to_dict()
        ok = ok and bound.metadata["both_pass"]
        print(bound.line())
    if data.get("homotopy", False):
        rows = ql.homotopy_witness(spec, exp.form, exp.K, exp.u0, **kwargs)
        out["homotopy"] = rows
        ok = ok and all(r["bounded"] for r in rows)
    _write_json(os.path.join(exp.out, "report.json"), out)
    print(f"quasilinear: converged={rep.converged} iterations={rep.iterations} "
          f"increment={rep.increment:.3e} residual={rep.residual:.3e}, output in {exp.out}")
    return 0 if ok else 1


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}") from exc


def build_parser():
    parser = argparse.ArgumentParser(prog="bvmr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "solve and run the configured checks"),
                           ("convergence", "refinement study of the time error"),
                           ("mollify-study", "compare mollified and direct solves"),
                           ("quasilinear", "damped Picard iteration for the quasilinear problem")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON experiment file")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--tol", type=float, help="tolerance factor kappa in kappa*dt*scale")
        if name == "convergence":
            p.add_argument("--refinements", type=_int_list, default=[100, 200, 400, 800],
                           help="comma-separated step counts K")
        if name == "mollify-study":
            p.add_argument("--orders", type=_int_list, default=[4, 8, 16, 32],
                           help="comma-separated mollifier orders n")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        exp = Experiment(load_config(args.config), tol_factor=args.tol, out=args.out)
        if args.command == "run":
            return cmd_run(exp)
        if args.command == "convergence":
            return cmd_convergence(exp, args.refinements)
        if args.command == "mollify-study":
            return cmd_mollify(exp, args.orders)
        return cmd_quasilinear(exp)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # invalid requests caught below the config layer (e.g. a grid too coarse for n)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
