"""``epilab`` command line: simulate, equilibria, sweep, verify, design, roa.

Exit codes: 0 success, 1 numerical failure or failed verdict, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import analysis, design, dynamics, passivity
from .config import ConfigError, RunConfig, parse_config
from .export import ExportTable, provenance, to_text
from .model import G, STATE_NAMES, FeedbackLaw, as_output_map
from .presets import PRESETS, get_preset

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2


class _Usage(Exception):
    pass


class _Run:
    """Resolved configuration plus output plumbing for one command."""

    def __init__(self, command, cfg: RunConfig, out: Optional[str]):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.preset = get_preset(cfg.run.preset) if cfg.run.preset else None
        # with the table on stdout, human-readable lines go to stderr
        self.log_stream = sys.stdout if out else sys.stderr

    @property
    def c(self):
        return as_output_map(self.cfg.output.c)

    @property
    def threads(self):
        return self.cfg.run.threads or None

    def log(self, msg: str):
        print(msg, file=self.log_stream)

    def emit(self, columns, data, failure=None, **extra):
        header = provenance(self.cfg.hash(), self.command, **extra)
        text = to_text(ExportTable(columns, data, header, failure))
        if self.out:
            Path(self.out).write_text(text)
        else:
            sys.stdout.write(text)


# -- commands -----------------------------------------------------------------------

def cmd_simulate(run: _Run) -> int:
    cfg = run.cfg
    s = cfg.simulate
    opts = dynamics.SolverOptions(cfg.solver.rel_tol, cfg.solver.abs_tol,
                                  cfg.solver.max_step, cfg.solver.max_steps)
    x_star = None
    if s.mode == "autonomous":
        controller = s.u
        x0 = np.array(s.x0)
    elif s.mode == "closed_loop":
        eq = analysis.operating_equilibrium(cfg.feedback.u_star, cfg.model)
        if eq is None:
            run.log(f"no operating equilibrium at u* = {cfg.feedback.u_star}")
            return EXIT_NUMERICAL
        x_star = eq.x_star
        controller = FeedbackLaw(cfg.feedback.u_star, cfg.feedback.k, float(run.c @ x_star))
        if s.offset_radius > 0:
            rng = np.random.default_rng(cfg.run.seed)
            d = rng.normal(size=6)
            x0 = x_star + s.offset_radius * rng.uniform() ** (1 / 6) * d / np.linalg.norm(d)
        else:
            x0 = np.array(s.x0)
    else:
        raise ConfigError(f"simulate.mode must be 'autonomous' or 'closed_loop', got {s.mode!r}")

    columns = ["t", *STATE_NAMES, "u", "y"]
    try:
        traj = dynamics.integrate(x0, (0.0, s.t_end), controller, run.c, cfg.model, opts)
    except dynamics.IntegrationError as exc:
        ts, xs = exc.times, exc.states
        u = controller.input(xs @ run.c) if isinstance(controller, FeedbackLaw) else \
            np.full(len(ts), float(controller))
        run.emit(columns, np.column_stack([ts, xs, u, xs @ run.c]), failure=str(exc))
        run.log(f"integration failed: {exc}")
        return EXIT_NUMERICAL

    run.emit(columns, np.column_stack([traj.times, traj.states, traj.inputs, traj.outputs]))
    run.log(f"steps: {len(traj)}")
    if traj.duration >= cfg.model.tau0:
        rep = dynamics.detect_cycles(traj, t_min=s.t_min or None, p=cfg.model)
        run.log(f"seizures: {rep.n_seizures}  mean period: {rep.mean_period:.6g}  "
                f"ictal fraction: {rep.ictal_fraction:.6g}")
    if x_star is not None:
        run.log(f"final distance to x*: {np.linalg.norm(traj.final_state - x_star):.6e}")
    return EXIT_OK


def cmd_equilibria(run: _Run) -> int:
    cfg = run.cfg
    k = cfg.feedback.k
    eqs = analysis.find_equilibria(cfg.feedback.u_star, cfg.model, k=k,
                                   c=run.c if k else None)
    columns = [*STATE_NAMES, "residual", "abscissa", "x1_negative", "x2_active", "hurwitz"]
    rows = [[*e.x_star, e.residual_norm, e.spectral_abscissa, *map(float, e.branch_signature),
             float(e.is_hurwitz)] for e in eqs]
    run.emit(columns, np.array(rows).reshape(-1, len(columns)))
    run.log(f"{len(eqs)} equilibria at u* = {cfg.feedback.u_star:g}, k = {k:g}")
    for e in eqs:
        run.log("  x* = [" + ", ".join(f"{v:.5f}" for v in e.x_star)
                + f"]  abscissa = {e.spectral_abscissa:.6g}")
    return EXIT_OK


def cmd_sweep(run: _Run) -> int:
    sw = run.cfg.sweep
    u_axis, k_axis = analysis.sweep_axes(sw.u_min, sw.u_max, sw.k_min, sw.k_max, sw.step)
    grid = analysis.stability_sweep(u_axis, k_axis, run.c, run.cfg.model,
                                    anchor_u=sw.anchor_u, threads=run.threads)
    uu, kk = np.meshgrid(grid.u_star_axis, grid.k_axis, indexing="ij")
    data = np.column_stack([uu.ravel(), kk.ravel(), grid.abscissa.ravel(),
                            grid.found.ravel().astype(float)])
    run.emit(["u_star", "k", "abscissa", "found"], data)
    run.log(f"stable cells: {grid.stable_count()} of {grid.abscissa.size}; "
            f"rows without equilibrium: {int((~grid.found[:, 0]).sum())}")
    return EXIT_OK


def _certificate_matrix(run: _Run):
    if run.preset is None:
        raise ConfigError("this command needs --preset (one of "
                          + ", ".join(sorted(PRESETS)) + ")")
    return run.preset


def cmd_verify(run: _Run) -> int:
    cfg = run.cfg
    c = run.c
    u_star, k = cfg.feedback.u_star, cfg.feedback.k
    eq = analysis.operating_equilibrium(u_star, cfg.model)
    if eq is None:
        run.log(f"no operating equilibrium at u* = {u_star}")
        return EXIT_NUMERICAL
    A = eq.jacobian - k * np.outer(G, c)
    obstruction = passivity.matching_obstruction(c)
    run.log(f"g.c = c1 + c3 = {obstruction.gTc:.6g}: {obstruction.verdict}")
    ok = True
    row = {"gTc": obstruction.gTc}

    pre = run.preset
    if pre is not None and pre.scale == 1.0:
        # a Lyapunov function for the closed loop
        lam = float(np.linalg.eigvalsh(pre.P)[0])
        diss = passivity.check_dissipation(pre.P, A, strict=True)
        run.log(f"lambda_min(P) = {lam:.6g}; -lambda_max(A'P + PA) = {diss.value:.6g}")
        ok = lam > 0 and diss.ok
        row.update(psd_margin=lam, dissipation_margin=diss.value)
        run.log(f"Lyapunov check: {'pass' if ok else 'fail'}")
        if cfg.verify.passivity:
            m = passivity.check_matching(pre.P, G, c)
            run.log(f"matching ||Pg - c||_inf = {m.value:.6g}: {'pass' if m.ok else 'fail'}")
            row["matching_residual"] = m.value
            ok = ok and m.ok and obstruction.passivatable
    elif pre is not None:
        c_used = pre.P @ G if pre.name == "redesigned" else c
        cert = passivity.verify_linear_passivity(A, G, c_used, pre.P)
        run.log(f"psd margin {cert.psd_margin:.6g}; dissipation margin "
                f"{cert.dissipation_margin:.6g}; matching residual {cert.matching_residual:.3g}")
        run.log(f"verdict: {cert.verdict}")
        if pre.name == "redesigned":
            quoted = passivity.check_matching(pre.P, G, c)
            ratio = c_used[2] / c_used[0]
            run.log(f"c := Pg = [{', '.join(f'{v:g}' for v in c_used)}]; residual against "
                    f"the quoted c = {quoted.value:.6g}; c3/c1 of Pg = {ratio:.6g} "
                    f"vs quoted {c[2] / c[0]:.6g}")
        ok = cert.strict
        row.update(psd_margin=cert.psd_margin, dissipation_margin=cert.dissipation_margin,
                   matching_residual=cert.matching_residual)
    if pre is None or cfg.verify.passivity:
        kyp = design.kyp_feasibility(A, G, c)
        run.log(f"KYP search with Pg = c: {kyp.status} (best margin {kyp.objective_value:.6g})")
        row["kyp_margin"] = kyp.objective_value
        ok = ok and kyp.status == "solved" and obstruction.passivatable
    row["pass"] = float(ok)
    run.emit(list(row), np.array([list(row.values())]), preset=pre.name if pre else "")
    run.log("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_design(run: _Run) -> int:
    cfg, d = run.cfg, run.cfg.design
    try:
        if d.mode == "output":
            eq = analysis.operating_equilibrium(d.u_star, cfg.model)
            if eq is None:
                run.log(f"no operating equilibrium at u* = {d.u_star}")
                return EXIT_NUMERICAL
            res = design.design_output(eq.jacobian, G, d.loss, delta=d.delta, eps=d.eps)
        elif d.mode == "sparse_lyapunov":
            eq = analysis.operating_equilibrium(cfg.feedback.u_star, cfg.model)
            if eq is None:
                run.log(f"no operating equilibrium at u* = {cfg.feedback.u_star}")
                return EXIT_NUMERICAL
            A_cl = eq.jacobian - cfg.feedback.k * np.outer(G, run.c)
            res = design.solve_sparse_lyapunov(A_cl, eps=d.lyapunov_eps, delta=d.delta)
        else:
            raise ConfigError(f"design.mode must be 'output' or 'sparse_lyapunov', got {d.mode!r}")
    except design.NotHurwitzError as exc:
        run.log(f"design failed: {exc}")
        return EXIT_NUMERICAL
    except design.UnsupportedModeError as exc:
        raise ConfigError(str(exc)) from exc

    run.log(f"status: {res.status}  objective: {res.objective_value:.6g}  "
            f"iterations: {res.iterations}")
    if not res.solved:
        run.log(f"residuals: {res.feasibility_residuals}")
        return EXIT_NUMERICAL
    run.log("c = Pg = [" + ", ".join(f"{v:.5f}" for v in res.c) + "]")
    run.log(f"residuals: {res.feasibility_residuals}")
    data = np.column_stack([np.arange(6), res.P, res.c])
    run.emit(["row", *[f"P{j + 1}" for j in range(6)], "c"], data,
             status=res.status, objective=format(res.objective_value, ".17g"))
    return EXIT_OK


def cmd_roa(run: _Run) -> int:
    cfg = run.cfg
    pre = _certificate_matrix(run)
    r = cfg.roa
    opts = passivity.RoaOptions(n_samples=r.n_samples, n_restarts=r.n_restarts,
                                seed=cfg.run.seed, rel_tol=r.rel_tol, threads=run.threads)
    try:
        system = passivity.ClosedLoop.at(cfg.feedback.u_star, cfg.feedback.k, run.c, cfg.model)
        if r.rho > 0:
            est = passivity.check_level(pre.P, system, r.rho, options=opts, scale=pre.scale)
        else:
            est = passivity.estimate_roa_level(pre.P, system, options=opts, scale=pre.scale)
    except passivity.CertificateError as exc:
        run.log(f"roa failed: {exc}")
        return EXIT_NUMERICAL

    cex = est.counterexample if est.counterexample is not None else np.full(6, np.nan)
    data = np.array([[est.rho, est.radius, est.n_samples,
                      float(est.status == "falsification-free"), *cex]])
    run.emit(["rho", "radius", "n_samples", "falsification_free",
              *[f"cex_{n}" for n in STATE_NAMES]], data, status=est.status, scale=pre.scale)
    run.log(f"status: {est.status}  rho: {est.rho:.6g}  radius: {est.radius:.6g}  "
            f"samples: {est.n_samples}")
    if pre.radius is not None:
        run.log(f"quoted radius: {pre.radius:g}")
    return EXIT_OK if est.status == "falsification-free" else EXIT_NUMERICAL


COMMANDS = {
    "simulate": cmd_simulate,
    "equilibria": cmd_equilibria,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "design": cmd_design,
    "roa": cmd_roa,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="epilab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="key = value configuration file")
    ap.add_argument("--preset", help="built-in setup: " + ", ".join(sorted(PRESETS)))
    ap.add_argument("--out", help="output CSV path (default: stdout)")
    ap.add_argument("--seed", type=int, help="sampling seed (unsigned)")
    ap.add_argument("--threads", type=int, help="worker threads (default: EPILAB_THREADS)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key; repeatable")
    return ap


def resolve_config(args) -> RunConfig:
    text = Path(args.config).read_text() if args.config else ""
    probe = parse_config(text)
    preset_name = args.preset or probe.run.preset
    cfg = RunConfig()
    if preset_name:
        pre = get_preset(preset_name)
        cfg.run.preset = pre.name
        cfg.feedback.u_star, cfg.feedback.k = pre.u_star, pre.k
        cfg.output.c = tuple(float(v) for v in pre.c)
    # explicit settings win over the preset
    cfg = parse_config(text, cfg)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg.run.seed = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg.run.threads = args.threads
    return cfg


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        run = _Run(args.command, cfg, args.out)
        return COMMANDS[args.command](run)
    except (_Usage, ConfigError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"epilab: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
        print(f"epilab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
