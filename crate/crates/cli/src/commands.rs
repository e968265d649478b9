use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Parser;
use prodplan_core::grid::MIN_NODES_PER_AXIS;
use prodplan_core::simulate::{DiscretizationMargin, PathExportError};
use prodplan_core::{
    build_grid, choose_constants, extract_policy, hjb_residual, monotone_iterate, simulate_cost_paired,
    transform_to_z, validate, verify_optimality, write_paths_csv, CertError, Challenger, IterationTrace,
    MonotoneSolution, PicardError, PicardOptions, PolicyField, ProblemInstance, Regime, SimConfig,
    SubSuperCertificate, ValueFields, VerificationReport,
};
use serde::Serialize;

use crate::error::{exit, CliError};
use crate::manifest::RunManifest;
use crate::{CertifyArgs, Cli, Command, SimArgs, SolveArgs, SolverArgs, SweepArgs, SweepParam, VerifyArgs};

/// Default nodes per axis for a dimension.
pub fn default_grid(n: usize) -> usize {
    match n {
        1 => 129,
        2 => 65,
        _ => 33,
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            code.clamp(0, 255) as u8
        }
    }
}

pub fn run(cli: Cli) -> u8 {
    let io = cli.command.io().clone();
    if let Err(e) = std::fs::create_dir_all(&io.out) {
        eprintln!("error: cannot create {}: {e}", io.out.display());
        return exit::FAILURE;
    }
    let mut manifest = RunManifest::start(cli.command.name(), &io.instance);
    let result = match &cli.command {
        Command::Certify(a) => certify(a, &mut manifest),
        Command::Solve(a) => solve(a, &mut manifest),
        Command::Verify(a) => verify(a, &mut manifest).map(|_| ()),
        Command::Sweep(a) => sweep(a, &mut manifest),
    };
    manifest.finish(&result);
    if let Err(e) = manifest.write(&io.out) {
        eprintln!("error: {e}");
    }
    match result {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Reads an instance and checks its standing assumptions.
pub fn load_instance(path: &Path) -> Result<ProblemInstance, CliError> {
    let inst = ProblemInstance::load(path)?;
    let report = validate(&inst);
    if !report.is_valid() {
        return Err(CliError::Invalid(report));
    }
    Ok(inst)
}

fn certify_instance(inst: &ProblemInstance) -> Result<SubSuperCertificate, CliError> {
    let cert = choose_constants(inst)?;
    if let Some(i) = cert.ineq_margins.iter().position(|m| m.is_nan() || *m < 0.0) {
        return Err(CertError::Uncertified {
            index: i + 1,
            value: cert.ineq_margins[i],
        }
        .into());
    }
    Ok(cert)
}

fn output(out: &Path, name: &str, manifest: &mut RunManifest) -> Result<(PathBuf, BufWriter<File>), CliError> {
    let path = out.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    manifest.outputs.push(name.to_string());
    Ok((path, BufWriter::new(file)))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T, manifest: &mut RunManifest) -> Result<(), CliError> {
    let (path, mut w) = output(out, name, manifest)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(std::io::Error::from)
        .and_then(|_| writeln!(w))
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

fn certify(args: &CertifyArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    let inst = load_instance(&args.io.instance)?;
    let cert = certify_instance(&inst)?;
    write_json(&args.io.out, "certificate.json", &cert, manifest)?;
    println!("K1 = {:.6e}, K2 = {:.6e} ({} doublings)", cert.k1, cert.k2, cert.doublings);
    println!("Lambda1 = {:.6e}, Lambda2 = {:.6e}", cert.lambda1, cert.lambda2);
    for (i, m) in cert.ineq_margins.iter().enumerate() {
        println!("inequality {}: margin {m:.6e}", i + 1);
    }
    println!("certified");
    Ok(())
}

/// A converged solve with everything derived from it.
pub struct Solved {
    pub cert: SubSuperCertificate,
    pub solution: MonotoneSolution,
    pub values: ValueFields,
    pub policy: PolicyField,
}

fn picard_options(args: &SolverArgs) -> PicardOptions {
    PicardOptions {
        tol: args.tol,
        max_iter: args.max_iter,
    }
}

fn solve_on(
    inst: &ProblemInstance,
    cert: &SubSuperCertificate,
    nodes: usize,
    opts: PicardOptions,
) -> Result<(MonotoneSolution, ValueFields), CliError> {
    let grid = Arc::new(build_grid(inst, nodes)?);
    let solution = monotone_iterate(inst, cert, &grid, opts)?;
    let values = transform_to_z(&solution.u[0], &solution.u[1], inst)?;
    Ok((solution, values))
}

pub fn solve_instance(inst: &ProblemInstance, nodes: usize, opts: PicardOptions) -> Result<Solved, CliError> {
    let cert = certify_instance(inst)?;
    let (solution, values) = solve_on(inst, &cert, nodes, opts)?;
    let policy = extract_policy(&values);
    Ok(Solved {
        cert,
        solution,
        values,
        policy,
    })
}

/// Richardson estimate of the grid error of `z_{ε₀}(y₀)` on `nodes`, from a
/// second solve on the grid with twice the spacing (or half, if that one
/// would be too coarse).
pub fn grid_error(inst: &ProblemInstance, solved: &Solved, nodes: usize, opts: PicardOptions) -> Result<f64, CliError> {
    let z = solved.values.value_at(inst.eps0, &inst.y0);
    let coarse = nodes.div_ceil(2);
    if coarse >= MIN_NODES_PER_AXIS {
        let (_, v) = solve_on(inst, &solved.cert, coarse, opts)?;
        Ok((v.value_at(inst.eps0, &inst.y0) - z).abs() / 3.0)
    } else {
        let (_, v) = solve_on(inst, &solved.cert, 2 * nodes - 1, opts)?;
        Ok((v.value_at(inst.eps0, &inst.y0) - z).abs() * 4.0 / 3.0)
    }
}

#[derive(Debug, Serialize)]
struct GridSummary {
    dim: usize,
    radius: f64,
    nodes_per_axis: usize,
    h: f64,
    interior_nodes: usize,
}

#[derive(Debug, Serialize)]
struct SolveSummary<'a> {
    converged: bool,
    iterations: usize,
    tol: f64,
    grid: GridSummary,
    certificate: &'a SubSuperCertificate,
    /// Radius of the ball the starting sub-solution was certified on.
    start_radius: f64,
    shifts: [f64; 2],
    residual: [f64; 2],
    scaled_residual: f64,
    hjb_residual: [f64; 2],
    min_ordering_slack: f64,
    min_sandwich_slack: f64,
    y0: &'a [f64],
    value_at_y0: [f64; 2],
}

fn write_trace(out: &Path, trace: &IterationTrace, manifest: &mut RunManifest) -> Result<(), CliError> {
    let (path, w) = output(out, "trace.csv", manifest)?;
    let mut csv = csv::Writer::from_writer(w);
    let result = trace
        .records
        .iter()
        .try_for_each(|r| csv.serialize(r))
        .and_then(|_| csv.flush().map_err(csv::Error::from));
    result.map_err(|e| CliError::io(path, e.into()))
}

fn write_fields(out: &Path, solved: &Solved, manifest: &mut RunManifest) -> Result<(), CliError> {
    let (path, w) = output(out, "field.csv", manifest)?;
    let grid = solved.values.grid();
    let mut csv = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=grid.dim()).map(|i| format!("x{i}")).collect();
    header.extend(["u1", "u2", "z1", "z2"].map(String::from));
    let mut result = csv.write_record(&header);
    for node in 0..grid.len() {
        if result.is_err() {
            break;
        }
        let mut row: Vec<String> = grid.coord(node).iter().map(|v| v.to_string()).collect();
        for r in Regime::BOTH {
            row.push(solved.solution.u(r).values[node].to_string());
        }
        for r in Regime::BOTH {
            row.push(solved.values.z(r).values[node].to_string());
        }
        result = csv.write_record(&row);
    }
    result
        .and_then(|_| csv.flush().map_err(csv::Error::from))
        .map_err(|e| CliError::io(path, e.into()))
}

fn write_policy(out: &Path, policy: &PolicyField, manifest: &mut RunManifest) -> Result<(), CliError> {
    let (path, mut w) = output(out, "policy.csv", manifest)?;
    policy
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

fn solve(args: &SolveArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    let inst = load_instance(&args.io.instance)?;
    let nodes = args.solver.grid.unwrap_or_else(|| default_grid(inst.n));
    let opts = picard_options(&args.solver);
    manifest.settings.grid = Some(nodes);
    manifest.settings.tol = Some(opts.tol);
    manifest.settings.max_iter = Some(opts.max_iter);
    let out = &args.io.out;

    let solved = match solve_instance(&inst, nodes, opts) {
        Ok(s) => s,
        Err(e) => {
            if let CliError::Solver(PicardError::MaxIterations { trace, .. }) = &e {
                write_trace(out, trace, manifest)?;
            }
            return Err(e);
        }
    };
    let sol = &solved.solution;
    let grid = solved.values.grid();
    let hjb = hjb_residual(&solved.values, &inst).map(|r| r.max_abs());
    let summary = SolveSummary {
        converged: true,
        iterations: sol.iterations(),
        tol: opts.tol,
        grid: GridSummary {
            dim: grid.dim(),
            radius: grid.radius(),
            nodes_per_axis: grid.nodes_per_axis(),
            h: grid.h(),
            interior_nodes: grid.len(),
        },
        certificate: &solved.cert,
        start_radius: sol.start_radius,
        shifts: sol.shifts,
        residual: sol.residual,
        scaled_residual: sol.scaled_residual(),
        hjb_residual: hjb,
        min_ordering_slack: sol.trace.min_ordering_slack(),
        min_sandwich_slack: sol.trace.min_sandwich_slack(),
        y0: &inst.y0,
        value_at_y0: Regime::BOTH.map(|r| solved.values.value_at(r, &inst.y0)),
    };
    write_fields(out, &solved, manifest)?;
    write_policy(out, &solved.policy, manifest)?;
    write_trace(out, &sol.trace, manifest)?;
    write_json(out, "solution.json", &summary, manifest)?;
    println!(
        "converged in {} iterations on {} nodes: z1(y0) = {:.9}, z2(y0) = {:.9}",
        summary.iterations, grid.len(), summary.value_at_y0[0], summary.value_at_y0[1]
    );
    Ok(())
}

fn sim_config(inst: &ProblemInstance, args: &SimArgs) -> SimConfig {
    let mut cfg = SimConfig::for_instance(inst).with_paths(args.paths).with_seed(args.seed);
    if let Some(dt) = args.dt {
        cfg = cfg.with_dt(dt);
    }
    cfg
}

fn record_sim(manifest: &mut RunManifest, nodes: usize, opts: PicardOptions, cfg: &SimConfig) {
    let s = &mut manifest.settings;
    s.grid = Some(nodes);
    s.tol = Some(opts.tol);
    s.max_iter = Some(opts.max_iter);
    s.dt = Some(cfg.dt);
    s.n_paths = Some(cfg.n_paths);
    s.seed = Some(cfg.seed);
    s.horizon_cap = Some(cfg.horizon_cap);
}

/// Runs the verification and writes its report; fails with
/// [`CliError::ChecksFailed`] when a check does not hold.
pub fn verify(args: &VerifyArgs, manifest: &mut RunManifest) -> Result<VerificationReport, CliError> {
    let inst = load_instance(&args.io.instance)?;
    let nodes = args.solver.grid.unwrap_or_else(|| default_grid(inst.n));
    let opts = picard_options(&args.solver);
    let cfg = sim_config(&inst, &args.sim);
    record_sim(manifest, nodes, opts, &cfg);
    cfg.check()?;
    let out = &args.io.out;

    let solved = solve_instance(&inst, nodes, opts)?;
    let grid_err = grid_error(&inst, &solved, nodes, opts)?;
    let report = verify_optimality(&inst, &solved.values, &solved.policy, &Challenger::defaults(), &cfg, grid_err)?;
    write_json(out, "verification.json", &report, manifest)?;
    let (path, mut w) = output(out, "paths.csv", manifest)?;
    write_paths_csv(&inst, &solved.policy, &cfg, args.export_paths, &mut w).map_err(|e| match e {
        PathExportError::Sim(s) => CliError::Simulation(s),
        PathExportError::Io(io) => CliError::io(&path, io),
    })?;
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let opt = &report.optimal;
    println!(
        "z{}(y0) = {:.6}, J(p*) = {:.6} ± {:.2e} (margin {:.2e}): {}",
        inst.eps0,
        report.reference_value,
        opt.mean,
        opt.stderr,
        report.disc_margin.total,
        pass(report.optimal_matches_value)
    );
    println!("dt halving: {}", pass(report.halving.consistent));
    for c in &report.challengers {
        println!(
            "{:<16} J = {:.6} ± {:.2e}, excess {:.1} se: {}",
            c.estimate.policy,
            c.estimate.mean,
            c.estimate.stderr,
            c.excess_in_stderr,
            pass(c.not_better)
        );
    }
    println!("{} challengers clearly worse", report.clearly_worse);
    if report.all_checks_pass {
        Ok(report)
    } else {
        Err(CliError::ChecksFailed)
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

/// One line of the sweep table. Empty cells mean the row stopped early.
#[derive(Debug, Default, Serialize)]
pub struct SweepRow {
    pub param: &'static str,
    pub value: f64,
    /// `ok`, `invalid` (instance rejected) or `failed` (a later stage).
    pub status: &'static str,
    pub z1_y0: Option<f64>,
    pub z2_y0: Option<f64>,
    pub j_opt: Option<f64>,
    pub stderr: Option<f64>,
    pub grid_term: Option<f64>,
    pub time_term: Option<f64>,
    pub disc_margin: Option<f64>,
    pub within_band: Option<bool>,
    pub min_ineq_margin: Option<f64>,
    pub iterations: Option<usize>,
    pub message: String,
}

fn apply(inst: &mut ProblemInstance, param: SweepParam, value: f64) {
    let p = &mut inst.regimes;
    match param {
        SweepParam::A1 => p.a1 = value,
        SweepParam::A2 => p.a2 = value,
        SweepParam::Alpha1 => p.alpha1 = value,
        SweepParam::Alpha2 => p.alpha2 = value,
        SweepParam::Sigma1 => p.sigma1 = value,
        SweepParam::Sigma2 => p.sigma2 = value,
        SweepParam::Radius => inst.radius = value,
    }
}

fn sweep_row(base: &ProblemInstance, args: &SweepArgs, value: f64) -> SweepRow {
    let mut row = SweepRow {
        param: args.param.label(),
        value,
        status: "failed",
        ..SweepRow::default()
    };
    let mut inst = base.clone();
    apply(&mut inst, args.param, value);
    let inst = inst.normalized();
    let report = validate(&inst);
    if !report.is_valid() {
        row.status = "invalid";
        row.message = report.to_string().replace('\n', "; ");
        return row;
    }
    if let Err(e) = sweep_stages(&inst, args, &mut row) {
        row.message = e.to_string();
        return row;
    }
    row.status = "ok";
    row
}

fn sweep_stages(inst: &ProblemInstance, args: &SweepArgs, row: &mut SweepRow) -> Result<(), CliError> {
    let nodes = args.solver.grid.unwrap_or_else(|| default_grid(inst.n));
    let opts = picard_options(&args.solver);
    let solved = solve_instance(inst, nodes, opts)?;
    row.min_ineq_margin = Some(solved.cert.ineq_margins.iter().copied().fold(f64::INFINITY, f64::min));
    row.iterations = Some(solved.solution.iterations());
    row.z1_y0 = Some(solved.values.value_at(Regime::One, &inst.y0));
    row.z2_y0 = Some(solved.values.value_at(Regime::Two, &inst.y0));
    let grid_term = grid_error(inst, &solved, nodes, opts)?;
    row.grid_term = Some(grid_term);

    let cfg = sim_config(inst, &args.sim);
    let paired = simulate_cost_paired(inst, &solved.policy, &cfg)?;
    let margin = DiscretizationMargin::new(&paired, grid_term);
    let z = solved.values.value_at(inst.eps0, &inst.y0);
    row.j_opt = Some(paired.coarse.mean);
    row.stderr = Some(paired.coarse.stderr);
    row.time_term = Some(margin.time_term);
    row.disc_margin = Some(margin.total);
    row.within_band = Some((paired.coarse.mean - z).abs() <= 3.0 * paired.coarse.stderr + margin.total);
    Ok(())
}

fn sweep(args: &SweepArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    let base = ProblemInstance::load(&args.io.instance)?;
    let opts = picard_options(&args.solver);
    let nodes = args.solver.grid.unwrap_or_else(|| default_grid(base.n));
    record_sim(manifest, nodes, opts, &sim_config(&base, &args.sim));
    // the step follows each row's instance unless given explicitly
    manifest.settings.dt = args.sim.dt;

    let (path, w) = output(&args.io.out, "sweep.csv", manifest)?;
    let mut csv = csv::Writer::from_writer(w);
    for &value in &args.values {
        let row = sweep_row(&base, args, value);
        println!("{} = {value}: {}{}", row.param, row.status, if row.message.is_empty() { String::new() } else { format!(" ({})", row.message) });
        csv.serialize(&row)
            .and_then(|_| csv.flush().map_err(csv::Error::from))
            .map_err(|e| CliError::io(&path, e.into()))?;
    }
    Ok(())
}
