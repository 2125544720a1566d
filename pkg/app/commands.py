# app/commands.py
"""`flask sim ...`: one subcommand per simulation or oracle workflow.

Exit codes: 0 success, 1 an acceptance check failed, 2 usage or config error,
3 budget exhausted with no usable output.
"""
import logging
import math
from pathlib import Path

import click
import numpy as np
from flask import current_app
from flask.cli import with_appcontext

from services.config_bridge import get_cfg, simulation_defaults
from services.config_service import RunConfig
from services.exceptions import (
    BudgetExceededError,
    ConfigValidationError,
    InvalidArgumentError,
    InvariantViolationError,
    NumericFailureError,
)
from services.helper import parse_float_list, run_id
from services.job_service import create_job, make_progress, update_job
from services.outputs import RunDirectory
from services.reaction.blocks import (
    BlockConfig,
    blocks_to_sites,
    estimate_critical_density,
    iterate_exit_measures,
    life_block_probe,
    op_cluster,
    op_simulate,
    survival_implies_exit,
    window_measure,
)
from services.reaction.core import BoxDomain, FiniteMeasure, Params
from services.reaction.dw_engine import EngineConfig
from services.reaction.loglaplace import (
    GridField,
    exit_nonzero_probability,
    killed_exit_potential,
    maximal_singular_solution,
    solve_elliptic_loglaplace,
    solve_parabolic_loglaplace,
    support_escape_bound,
    support_function,
)
from services.reaction.phase_scan import (
    SURVIVAL_STAGES,
    UNDECIDED,
    certain_death_trend,
    death_block_check,
    death_block_scan,
    decomposition_suite,
    estimate_psi,
    survival_probability,
)
from services.reaction.rng import RngStream, stream_id
from services.reaction.travelling_wave import NUTRIENT_ONE, ORIGIN, REAR, eigenvalues, minimal_speed, shoot
from services.reaction.trigger import (
    BRUTE_FORCE_LIMIT,
    brute_force_smallest_fixed_point,
    iterate_trace,
    load_instance,
    smallest_fixed_point,
    sorted_labels,
    two_stage,
)
from services.reaction.validation import (
    ValidationConfig,
    exit_probability_convergence,
    nutrient_compare,
    run_engine_suite,
)


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_BUDGET = 3

PHASE_COLUMNS = ["beta", "gamma", "survival", "ci_low", "ci_high", "replicas", "censored", "over_budget",
                 "stages", "censor_box", "censor_horizon", "verdict"]


class RunContext:
    """What a subcommand body needs: validated config, root stream, output directory, progress."""

    def __init__(self, cfg: RunConfig, rundir: RunDirectory, progress):
        self.cfg = cfg
        self.rundir = rundir
        self.progress = progress
        self.rng = RngStream(cfg.seed, stream_id(cfg.subcommand))

    @property
    def params(self) -> Params:
        return Params(self.cfg.beta, self.cfg.gamma, self.cfg.d)

    @property
    def engine(self) -> EngineConfig:
        cfg = self.cfg
        return EngineConfig(N=cfg.N, cell_size=cfg.cell_size, horizon=cfg.horizon, dt=cfg.dt,
                            placement=cfg.placement, max_particles=cfg.max_particles, max_steps=cfg.max_steps,
                            snapshot_count=int(get_cfg("snapshot_count", default=16)))


def run_options(fn):
    """Flags shared by every subcommand; given flags override the --config file."""
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="JSON run config (schema_version 1)."),
        click.option("--seed", type=int, default=None, help="Master seed (overrides the config)."),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory."),
        click.option("--replicas", type=int, default=None, help="Replicas per point."),
        click.option("--threads", type=int, default=None, help="Worker threads for replica chunks."),
        click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default=None, help="Table format."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _fail(code: int, message: str):
    click.echo(message, err=True)
    click.get_current_context().exit(code)


def _load(subcommand: str, config_path, seed, out, replicas, threads, fmt, **extra) -> RunConfig:
    defaults = simulation_defaults()
    cfg = RunConfig.load(config_path, subcommand, defaults)
    options = dict(cfg.options)
    options.update({k: v for k, v in extra.items() if v is not None})
    return cfg.override(seed=seed, out=out, replicas=replicas, threads=threads, format=fmt, options=options)


def _out_dir(cfg: RunConfig, given) -> Path:
    if given:
        return Path(given)
    root = Path(current_app.config.get("EXPORT_ROOT", "runs"))
    return root / run_id(cfg.subcommand)


def execute(subcommand: str, body, config_path=None, seed=None, out=None, replicas=None, threads=None,
            fmt=None, **extra):
    """Validate, register the run, call `body(ctx)` and write the manifest.

    `body` returns (exit code, summary dict). Errors before the run starts exit 2.
    """
    try:
        cfg = _load(subcommand, config_path, seed, out, replicas, threads, fmt, **extra)
    except (ConfigValidationError, InvalidArgumentError) as e:
        _fail(EXIT_USAGE, f"config error: {e.message}")
        return

    rundir = RunDirectory(_out_dir(cfg, out), cfg.format).start()
    db = current_app.extensions["db_manager"]
    job_id = run_id(subcommand)
    create_job(job_id, subcommand=subcommand, db=db)
    progress = make_progress(job_id, db=db)
    ctx = RunContext(cfg, rundir, progress)
    logger.info("%s: seed=%d out=%s", subcommand, cfg.seed, rundir.path)

    try:
        code, summary = body(ctx)
    except InvalidArgumentError as e:
        update_job(job_id, error=e.message, db=db)
        _fail(EXIT_USAGE, f"invalid argument: {e.message}")
        return
    except BudgetExceededError as e:
        update_job(job_id, error=e.message, result={"consumed": e.consumed}, db=db)
        _fail(EXIT_BUDGET, f"budget exhausted: {e.message}")
        return
    except NumericFailureError as e:
        update_job(job_id, error=e.message, db=db)
        _fail(EXIT_CHECK_FAILED, f"numeric failure: {e.message}")
        return
    except InvariantViolationError as e:
        logger.error("%s: internal invariant violated: %s", subcommand, e.message)
        update_job(job_id, error=e.message, db=db)
        _fail(EXIT_CHECK_FAILED, f"invariant violated: {e.message}")
        return

    status = "completed" if code == EXIT_OK else "check-failed"
    manifest = rundir.finish(cfg.as_dict(), status=status, extra={"summary": summary})
    update_job(job_id, pct=100, message=f"{subcommand} finished with exit code {code}",
               result={"run_dir": str(rundir.path), "manifest": str(manifest), "exit_code": code,
                       "outputs": rundir.outputs}, done=True, db=db)
    click.echo(f"{subcommand}: exit {code}, outputs in {rundir.path}")
    if code != EXIT_OK:
        click.get_current_context().exit(code)


def subcommand(name, *extra_options):
    """Register `fn(ctx)` as `sim <name>` with the shared run options."""
    def decorator(body):
        @sim.command(name, help=body.__doc__)
        @run_options
        @with_appcontext
        def command(**kwargs):
            execute(name, body, **kwargs)

        for option in reversed(extra_options):
            command = option(command)
        return command

    return decorator


@click.group("sim")
def sim():
    """Simulation and oracle workflows."""


# ---------------------------------------------------------------------------
# engine oracles
# ---------------------------------------------------------------------------

@subcommand("validate-engine")
def validate_engine(ctx: RunContext):
    """Extinction, moment and Laplace-functional checks of the particle engine."""
    cfg = ctx.cfg
    vcfg = ValidationConfig(N=cfg.N, cell_size=cfg.option("cell_size", 0.1), replicas=cfg.replicas, dt=cfg.dt,
                            chunk=cfg.option("chunk", 500))
    rows = run_engine_suite(vcfg, ctx.rng, threads=cfg.threads, progress=ctx.progress)
    ctx.rundir.write_table("checks", [r.as_row() for r in rows],
                           columns=["check", "estimate", "oracle", "se", "z", "passed"])
    failed = [r.check for r in rows if not r.passed]
    summary = {"checks": len(rows), "failed": failed}
    levels = parse_float_list(cfg.option("exit_levels"))
    if levels:
        exits = exit_probability_convergence([int(n) for n in levels], cfg.replicas,
                                             ctx.rng.child("exit-probability"), half_width=cfg.half_width,
                                             cell_size=vcfg.cell_size, chunk=vcfg.chunk, threads=cfg.threads)
        ctx.rundir.write_table("exit_probability", [r.as_row() for r in exits])
        summary["exit_probability_errors"] = [r.error for r in exits]
    code = EXIT_CHECK_FAILED if failed else EXIT_OK
    return code, summary


@subcommand("nutrient-compare", click.option("--levels", default=None, help="Comma separated N values."))
def nutrient_compare_cmd(ctx: RunContext):
    """Package approximation against the direct simulator on a d=1 box (KS on total exit mass)."""
    cfg = ctx.cfg
    levels = [int(n) for n in (parse_float_list(cfg.option("levels")) or [50, 100])]
    p = Params(cfg.beta, cfg.gamma, 1)
    rows = nutrient_compare(p, levels, cfg.replicas, ctx.rng, half_width=cfg.half_width, horizon=cfg.horizon,
                            level=cfg.option("level", 0.01), threads=cfg.threads)
    ctx.rundir.write_table("nutrient_compare", [r.as_row() for r in rows])
    failed = [r.N for r in rows if not r.ks.passes]
    return (EXIT_CHECK_FAILED if failed else EXIT_OK), {"failed_levels": failed}


@subcommand("decomposition-suite")
def decomposition_cmd(ctx: RunContext):
    """Two-stage decompositions against one-shot runs (Bonferroni corrected KS tests)."""
    cfg = ctx.cfg
    domain = BoxDomain.centered(cfg.half_width, cfg.d)
    checks = decomposition_suite(ctx.params, domain, cfg.replicas, ctx.engine, ctx.rng,
                                 level=cfg.option("level", 0.01), threads=cfg.threads)
    ctx.rundir.write_table("decomposition", [
        {"check": c.name, "quantity": c.quantity, "statistic": c.statistic, "pvalue": c.pvalue,
         "level": c.level, "one_sided": c.one_sided, "passed": c.passes} for c in checks])
    failed = sorted({c.name for c in checks if not c.passes})
    return (EXIT_CHECK_FAILED if failed else EXIT_OK), {"failed": failed}


# ---------------------------------------------------------------------------
# phase diagram
# ---------------------------------------------------------------------------

@subcommand("phase-scan",
            click.option("--betas", default=None, help="Comma separated beta grid."),
            click.option("--gammas", default=None, help="Comma separated gamma grid."))
def phase_scan_cmd(ctx: RunContext):
    """Survival verdict per (beta, gamma) grid point; writes phase.csv."""
    cfg = ctx.cfg
    betas = parse_float_list(cfg.option("betas")) or [cfg.beta]
    gammas = parse_float_list(cfg.option("gammas")) or [cfg.gamma]
    level = cfg.option("level", 0.05)
    stages = cfg.option("stages", get_cfg("survival_stages", default=SURVIVAL_STAGES))
    rows = []
    exhausted = 0
    total = len(betas) * len(gammas)
    for i, b in enumerate(betas):
        for j, g in enumerate(gammas):
            p = Params(b, g, cfg.d)
            try:
                point = survival_probability(p, None, cfg.half_width, cfg.horizon, cfg.replicas, ctx.engine,
                                             ctx.rng.child(b, g), level=level, threads=cfg.threads,
                                             stages=stages)
                rows.append(point.as_row())
            except BudgetExceededError as e:
                exhausted += 1
                ctx.rundir.add_budget(f"beta={b:g},gamma={g:g}", e.consumed)
                rows.append({"beta": b, "gamma": g, "survival": math.nan, "ci_low": 0.0, "ci_high": 1.0,
                             "replicas": cfg.replicas, "censored": e.consumed.get("censored", 0),
                             "over_budget": e.consumed.get("over_budget", cfg.replicas),
                             "stages": stages, "censor_box": cfg.half_width, "censor_horizon": cfg.horizon,
                             "verdict": UNDECIDED})
            ctx.progress(f"phase-scan beta={b:g} gamma={g:g}", int(100 * (i * len(gammas) + j + 1) / total))
    if exhausted == total:
        raise BudgetExceededError(f"every one of the {total} grid points ran out of budget",
                                  consumed=ctx.rundir.budgets)
    if exhausted:
        logger.warning("phase-scan: %d of %d grid points flagged undecided after budget exhaustion",
                       exhausted, total)
    ctx.rundir.write_table("phase", rows, columns=PHASE_COLUMNS)

    summary = {"points": total, "budget_exhausted": exhausted}
    horizons = parse_float_list(cfg.option("trend_horizons"))
    if horizons:
        trend = certain_death_trend(ctx.params, None, cfg.half_width, horizons, cfg.replicas, ctx.engine,
                                    ctx.rng.child("trend"), threads=cfg.threads)
        ctx.rundir.write_json("trend", trend)
        summary["trend_decreasing"] = trend["decreasing"]
    return EXIT_OK, summary


@subcommand("psi-bisect",
            click.option("--tol", type=float, default=None, help="Bracket width to stop at."),
            click.option("--budget", type=int, default=None, help="Maximum survival evaluations."))
def psi_bisect_cmd(ctx: RunContext):
    """Bisection bracket of the critical death rate at the configured beta."""
    cfg = ctx.cfg
    bracket = estimate_psi(cfg.beta, cfg.option("tol", 0.05), cfg.option("budget", 12), ctx.engine, ctx.rng,
                           d=cfg.d, L_box=cfg.half_width, horizon=cfg.horizon, reps=cfg.replicas,
                           level=cfg.option("level", 0.05), gamma_max=cfg.option("gamma_max"),
                           threads=cfg.threads,
                           stages=cfg.option("stages", get_cfg("survival_stages", default=SURVIVAL_STAGES)))
    ctx.rundir.write_table("psi_points", [pt.as_row() for pt in bracket.points], columns=PHASE_COLUMNS)
    ctx.rundir.write_json("psi", {"beta": bracket.beta, "gamma_low": bracket.gamma_low,
                                  "gamma_high": bracket.gamma_high, "undecided": bracket.undecided,
                                  "history": bracket.history})
    return EXIT_OK, {"gamma_low": bracket.gamma_low, "gamma_high": bracket.gamma_high,
                     "undecided": bracket.undecided}


@subcommand("death-block", click.option("--bs", default=None, help="Comma separated block scales b."))
def death_block_cmd(ctx: RunContext):
    """Death block certification: P[exit != 0] and E[exit]/M below 1/(4 3^d)."""
    cfg = ctx.cfg
    if cfg.option("L") is not None and cfg.option("M") is not None:
        reports = [death_block_check(ctx.params, float(cfg.option("L")), float(cfg.option("M")), cfg.replicas,
                                     ctx.engine, ctx.rng, threads=cfg.threads)]
        passing = reports[0].M if reports[0].passes else None
    else:
        bs = parse_float_list(cfg.option("bs"))
        if not bs and cfg.d == 3:
            bs = get_cfg("death_block_d3", "bs")
        bs = bs or [1.0, 2.0, 4.0, 8.0]
        passing, reports = death_block_scan(ctx.params, bs, cfg.replicas, ctx.engine, ctx.rng, threads=cfg.threads)
    ctx.rundir.write_table("death_block", [r.as_dict() for r in reports])
    return (EXIT_OK if passing is not None else EXIT_CHECK_FAILED), {"passing_b": passing}


@subcommand("life-block", click.option("--stages", type=int, default=None, help="Exit iteration stages."))
def life_block_cmd(ctx: RunContext):
    """Life block failure frequencies and, with --stages, the derived percolation sites."""
    cfg = ctx.cfg
    block = BlockConfig(cfg.option("L", 1.0), cfg.option("M", 1.0), cfg.d)
    report = life_block_probe(ctx.params, block, ctx.engine, cfg.replicas, ctx.rng,
                              initial_mass=cfg.option("initial_mass"))
    ctx.rundir.write_json("life_block", report.as_dict())
    summary = {"censored": report.censored}

    stages = int(cfg.option("stages", 0) or 0)
    if stages > 0:
        mu = window_measure(block.box(1), cfg.cell_size, block.L, report.initial_mass)
        seq = iterate_exit_measures(mu, ctx.params, block, stages, ctx.engine, ctx.rng.child("exits"))
        lattice = blocks_to_sites(seq)
        cluster = op_cluster(lattice)
        ctx.rundir.write_table("exit_totals", [{"stage": n + 1, "exit_total": t, "steps": s}
                                               for n, (t, s) in enumerate(zip(seq.totals(), seq.stage_steps))])
        ctx.rundir.write_json("sites", {"omega": lattice.omega.astype(int), "omega_tilde": lattice.omega_tilde.astype(int),
                                        "cluster_size": cluster.size, "reached": cluster.max_generation,
                                        "survival_implies_exit": survival_implies_exit(lattice, seq.exits)})
        summary["cluster_size"] = cluster.size
    return EXIT_OK, summary


@subcommand("op-sim", click.option("--densities", default=None, help="Comma separated densities to sweep."))
def op_sim_cmd(ctx: RunContext):
    """Oriented site percolation: one lattice, or a density sweep bracketing the critical density."""
    cfg = ctx.cfg
    generations = int(cfg.option("generations", 500))
    densities = parse_float_list(cfg.option("densities"))
    if densities:
        sweep = estimate_critical_density(densities, generations, cfg.replicas, ctx.rng,
                                          level=cfg.option("level", 0.1))
        lo, hi = sweep.intervals(), sweep.bracket
        ctx.rundir.write_table("density_sweep", [
            {"density": d, "survived": int(s), "fraction": f, "ci_low": c[0], "ci_high": c[1]}
            for d, s, f, c in zip(sweep.densities, sweep.survived, sweep.fractions, lo)])
        ctx.rundir.write_json("bracket", {"low": hi[0], "high": hi[1], "generations": generations,
                                          "replicas": cfg.replicas})
        return EXIT_OK, {"bracket": list(hi)}
    lattice = op_simulate(cfg.option("density", 0.8), int(cfg.option("k", 0)), generations, ctx.rng)
    cluster = op_cluster(lattice)
    G = lattice.generations
    rows = [{"j": int(j), "k": int(c - G), "omega": int(lattice.omega[j, c])}
            for j, c in zip(*np.nonzero(lattice.omega))]
    ctx.rundir.write_table("op_sites", rows, columns=["j", "k", "omega"])
    ctx.rundir.write_json("cluster", {"size": cluster.size, "survived": cluster.survived,
                                      "max_generation": cluster.max_generation,
                                      "provenance": lattice.provenance})
    return EXIT_OK, {"survived": cluster.survived}


# ---------------------------------------------------------------------------
# deterministic workflows
# ---------------------------------------------------------------------------

@subcommand("wave",
            click.option("--speed", "c", type=float, default=None, help="Wave speed c."),
            click.option("--delta", type=float, default=None, help="Launch offset."))
def wave_cmd(ctx: RunContext):
    """Shoot a travelling wave at speed c and classify the equilibria."""
    cfg = ctx.cfg
    gamma = cfg.gamma
    c = cfg.option("c", minimal_speed(gamma) or 1.0)
    result = shoot(float(c), gamma, delta=cfg.option("delta", 1e-6))
    frame_rows = [{"xi": x, "U": u, "V": v, "W": w} for x, (u, v, w) in zip(result.xi, result.trajectory.T)]
    ctx.rundir.write_table("wave", frame_rows, columns=["xi", "U", "V", "W"])
    eig = {}
    for at in (ORIGIN, REAR, NUTRIENT_ONE):
        pair = eigenvalues(at, float(c), gamma)
        eig[at] = {"roots": [[z.real, z.imag] for z in pair.roots], "classification": pair.classification}
    ctx.rundir.write_json("wave_summary", {
        "c": result.c, "gamma": gamma, "minimal_speed": minimal_speed(gamma), "admissible": result.admissible,
        "stays_positive": result.stays_positive, "terminal_distance": result.terminal_distance,
        "closest_distance": result.closest_distance, "diverged": result.diverged, "eigenvalues": eig,
        "notes": result.notes})
    return EXIT_OK, {"stays_positive": result.stays_positive, "terminal_distance": result.terminal_distance}


@sim.command("fixed-point")
@click.argument("instance_path", type=click.Path(dir_okay=False))
@click.option("--brute-force", is_flag=True, default=False, help="Verify by exhaustive search (|A| <= 20).")
@run_options
@with_appcontext
def fixed_point_cmd(instance_path, brute_force, **kwargs):
    """Smallest fixed point of the trigger map for an instance file, with its two-stage split."""
    try:
        inst, split = load_instance(instance_path)
    except InvalidArgumentError as e:
        _fail(EXIT_USAGE, f"cannot parse instance: {e.message}")
        return
    if brute_force and inst.size > BRUTE_FORCE_LIMIT:
        _fail(EXIT_USAGE, f"--brute-force refused: |A| = {inst.size} exceeds {BRUTE_FORCE_LIMIT} "
                          f"(2^{inst.size} subsets)")
        return

    def body(ctx: RunContext):
        S = smallest_fixed_point(inst)
        trace = iterate_trace(inst)
        click.echo("S = {" + ", ".join(str(a) for a in sorted_labels(S)) + "}")
        for n, step in enumerate(trace):
            click.echo(f"T^{n}(empty) = {{" + ", ".join(str(a) for a in sorted_labels(step)) + "}")
        out = {"S": sorted_labels(S), "trace": [sorted_labels(t) for t in trace]}
        code = EXIT_OK
        if brute_force:
            exhaustive = brute_force_smallest_fixed_point(inst)
            out["brute_force_agrees"] = exhaustive == S
            click.echo(f"brute force agrees: {exhaustive == S}")
            if exhaustive != S:
                code = EXIT_CHECK_FAILED
        if split is not None:
            res = two_stage(inst, split)
            click.echo("S- = {" + ", ".join(str(a) for a in sorted_labels(res.s_minus)) + "}")
            click.echo("S+ = {" + ", ".join(str(a) for a in sorted_labels(res.s_plus)) + "}")
            out["two_stage"] = {"s_minus": sorted_labels(res.s_minus), "s_plus": sorted_labels(res.s_plus),
                                "union_matches": res.union == S,
                                "disjoint": not (res.s_minus & res.s_plus)}
            if res.union != S:
                code = EXIT_CHECK_FAILED
        ctx.rundir.write_json("fixed_point", out)
        return code, {"size": len(S)}

    execute("fixed-point", body, **kwargs)


@subcommand("loglaplace-solve",
            click.option("--kind", type=click.Choice(["elliptic", "parabolic", "singular", "exit-probability",
                                                      "support"]), default=None))
def loglaplace_cmd(ctx: RunContext):
    """Solve the log-Laplace equation with constant data; writes a node-value table (x..., value).

    --kind singular writes the radial maximal solution and its mass constant; exit-probability and
    support write the exit and escape probabilities of a unit point mass at the origin.
    """
    cfg = ctx.cfg
    kind = cfg.option("kind", "elliptic")
    pitch = cfg.option("pitch", 0.05)
    eta = cfg.option("eta", cfg.gamma)
    if kind == "singular":
        return _singular_solution(ctx)
    if kind == "exit-probability":
        domain = BoxDomain.centered(cfg.half_width, cfg.d)
        mu = FiniteMeasure.dirac(domain, pitch, np.zeros(cfg.d), cfg.option("mass", 1.0))
        mean_exit = killed_exit_potential(domain, eta, pitch).integrate(mu)
        prob = exit_nonzero_probability(mu, domain, eta, pitch)
        out = {"mass": mu.total(), "gamma": eta, "mean_exit_mass": mean_exit, "exit_nonzero_probability": prob}
        ctx.rundir.write_json("exit_probability", out)
        return EXIT_OK, out
    if kind == "support":
        phi = support_function(cfg.option("radius", 1.0), cfg.option("forcing", 100.0), eta, cfg.horizon, cfg.d,
                               pitch, float(get_cfg("support_ramp_width", default=0.5)))
        mu = FiniteMeasure.dirac(phi.domain, pitch, np.zeros(cfg.d), cfg.option("mass", 1.0))
        escape = support_escape_bound(mu, phi)
        _write_nodes(ctx, phi)
        return EXIT_OK, {"escape_bound": escape}

    domain = BoxDomain.centered(cfg.half_width, cfg.d)
    h1 = GridField.constant(domain, pitch, cfg.option("h1", 0.0))
    h2 = GridField.constant(domain, pitch, cfg.option("h2", 1.0))
    if kind == "parabolic":
        phi = solve_parabolic_loglaplace(h1, cfg.option("source", 0.0), h2, eta, t=cfg.horizon)
    else:
        phi = solve_elliptic_loglaplace(h1, h2, eta, method=cfg.option("method", "newton"))
    _write_nodes(ctx, phi)
    centre = phi.value_at(np.zeros(cfg.d))
    return EXIT_OK, {"value_at_origin": centre}


def _write_nodes(ctx: RunContext, phi: GridField):
    names = [f"x{i + 1}" for i in range(phi.domain.d)]
    rows = [dict(zip(names + ["value"], list(x) + [v])) for x, v in zip(phi.nodes(), phi.values.ravel())]
    ctx.rundir.write_table("loglaplace", rows, columns=names + ["value"])


def _singular_solution(ctx: RunContext):
    settings = dict(get_cfg("singular_solution", default={}) or {})
    settings.update({k: ctx.cfg.option(k) for k in ("eps", "r_max", "rel_tol", "max_halvings")
                     if ctx.cfg.option(k) is not None})
    sol = maximal_singular_solution(**settings)
    ctx.rundir.write_table("singular", [{"r": r, "psi": p} for r, p in zip(sol.radii, sol.psi)],
                           columns=["r", "psi"])
    ctx.rundir.write_json("singular_summary", {"c0": sol.c0, "eps": sol.eps,
                                               "history": [list(h) for h in sol.history]})
    return EXIT_OK, {"c0": sol.c0, "eps": sol.eps}
