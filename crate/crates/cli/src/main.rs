use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use sdae_margin::detector::DetectorConfig;
use sdae_margin::grid::{GridModel, RampSchedule};
use sdae_margin::integrator::{simulate_trajectory, IntegratorConfig};
use sdae_margin::io::{
    parse_case, parse_experiment, provenance_header, render_tables, results_table, sha256_hex,
    termination_code, trajectory_csv, write_sweep_outputs, write_trajectory_dumps, CaseDocument,
    CaseFormat, ResolvedExperiment, StructuredReport, REPORT_FILE,
};
use sdae_margin::normal_form::{
    classify_regime, estimate_exit_probability, estimate_exit_probability_weighted,
    exit_decay_slope, nf_escape_ensemble, ExitOptions, NormalFormParams, RunOptions,
};
use sdae_margin::ou::OuParams;
use sdae_margin::{run_experiment, OuState, RngStream};

#[derive(Parser, Debug)]
#[command(
    name = "sdae-margin",
    version,
    about = "Stochastic voltage-collapse margins for power grids"
)]
struct Cli {
    /// Worker threads for Monte Carlo runs (default: all cores).
    #[arg(long, global = true, env = "SDAE_MARGIN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Escape records and exit probabilities of the fold normal form.
    Normalform(NormalformArgs),
    /// One trajectory of the grid model, written as CSV.
    Simulate(SimulateArgs),
    /// Monte Carlo sweep over noise levels and ramp schedules.
    Sweep(SweepArgs),
    /// Re-render tables and histogram files from a prior sweep.
    Report(ReportArgs),
    /// Check case and experiment files.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct NormalformArgs {
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    #[arg(long, env = "SDAE_MARGIN_PATHS", default_value_t = 1000)]
    paths: usize,
    #[arg(long, env = "SDAE_MARGIN_SEED", default_value_t = 1)]
    seed: u64,
    /// Step size in slow time (default: epsilon / 100).
    #[arg(long, env = "SDAE_MARGIN_DT")]
    dt: Option<f64>,
    /// Initial slow variable; the fast variable starts on the stable branch.
    #[arg(long, default_value_t = -0.12, allow_hyphen_values = true)]
    y0: f64,
    /// Escape runs stop once y exceeds this value.
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    y_max: f64,
    /// End of the exit-probability window.
    #[arg(long, default_value_t = -0.1, allow_hyphen_values = true)]
    y_stop: f64,
    /// Layer widths h in units of sigma.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6,7,8")]
    h: Vec<f64>,
    /// Use the importance-sampled exit estimator.
    #[arg(long)]
    weighted: bool,
    #[arg(long, env = "SDAE_MARGIN_OUT", default_value = "out/normalform")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CaseSelect {
    #[arg(long, env = "SDAE_MARGIN_CASE", conflicts_with = "experiment")]
    case: Option<PathBuf>,
    #[arg(long, env = "SDAE_MARGIN_EXPERIMENT")]
    experiment: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    select: CaseSelect,
    /// Noise intensity (with --case).
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Seconds per ramp increment (with --case).
    #[arg(long, conflicts_with = "speed")]
    interval: Option<f64>,
    /// Ramp speed in MW/s (with --case).
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long, default_value_t = 0.02)]
    delta_lambda: f64,
    #[arg(long, default_value_t = 10.0)]
    lambda_max: f64,
    /// Sweep cell as `sigma_index,schedule_index` (with --experiment).
    #[arg(long, value_parser = parse_cell)]
    cell: Option<(usize, usize)>,
    /// Path index; with --experiment the stream matches the sweep's.
    #[arg(long, default_value_t = 0)]
    path: u32,
    #[arg(long, env = "SDAE_MARGIN_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "SDAE_MARGIN_DT")]
    dt: Option<f64>,
    #[arg(long, env = "SDAE_MARGIN_RCOND_THRESHOLD")]
    rcond_threshold: Option<f64>,
    /// Keep every n-th step.
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    /// Bus ids whose voltage is recorded (default: buses with loads).
    #[arg(long, value_delimiter = ',')]
    record_bus: Vec<usize>,
    #[arg(long, env = "SDAE_MARGIN_OUT", default_value = "out/simulate")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, env = "SDAE_MARGIN_EXPERIMENT")]
    experiment: PathBuf,
    #[arg(long, env = "SDAE_MARGIN_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "SDAE_MARGIN_PATHS")]
    paths: Option<usize>,
    #[arg(long, env = "SDAE_MARGIN_OUT")]
    out: Option<PathBuf>,
    /// Record full trajectories for the first N paths of each cell.
    #[arg(long, env = "SDAE_MARGIN_DUMP_TRAJECTORIES", default_value_t = 0)]
    dump_trajectories: usize,
    #[arg(long, env = "SDAE_MARGIN_RCOND_THRESHOLD")]
    rcond_threshold: Option<f64>,
    #[arg(long, env = "SDAE_MARGIN_DT")]
    dt: Option<f64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Sweep output directory holding results.struct.
    #[arg(long, env = "SDAE_MARGIN_OUT")]
    out: PathBuf,
    /// Render into this directory instead of `--out`.
    #[arg(long)]
    to: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, env = "SDAE_MARGIN_CASE", value_delimiter = ',')]
    case: Vec<PathBuf>,
    #[arg(long, env = "SDAE_MARGIN_EXPERIMENT", value_delimiter = ',')]
    experiment: Vec<PathBuf>,
}

fn parse_cell(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or("expected `sigma_index,schedule_index`")?;
    let idx = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((idx(a)?, idx(b)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Normalform(a) => normalform(a),
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a, cli.threads),
        Command::Report(a) => report(a),
        Command::Validate(a) => validate(a),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn resolve_experiment(path: &Path) -> Result<ResolvedExperiment> {
    let file = parse_experiment(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(file.resolve(base)?)
}

fn normalform(a: NormalformArgs) -> Result<()> {
    let dt = a.dt.unwrap_or(a.epsilon / 100.0);
    let params = NormalFormParams::on_branch(a.epsilon, a.sigma, a.y0);
    let settings = format!(
        "{params:?}|dt={dt:?}|y_max={:?}|y_stop={:?}|h={:?}|weighted={}|paths={}|seed={}",
        a.y_max, a.y_stop, a.h, a.weighted, a.paths, a.seed
    );
    let header = provenance_header(a.seed, &sha256_hex(settings.as_bytes()));
    info!("normalform: {settings}");
    info!(
        "regime: {:?} (sigma / sqrt(epsilon) = {:.3})",
        classify_regime(a.sigma, a.epsilon),
        a.sigma / a.epsilon.sqrt()
    );

    let recs = nf_escape_ensemble(&params, &RunOptions::new(dt, a.y_max), a.paths, a.seed)?;
    let mut esc = header.clone() + "path,escaped,y_at_escape,y_cross_zero\n";
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (i, r) in recs.iter().enumerate() {
        let _ = writeln!(
            esc,
            "{i},{},{},{}",
            r.escaped,
            fmt(r.y_at_escape),
            fmt(r.y_cross_zero)
        );
    }
    let escaped = recs.iter().filter(|r| r.escaped).count();
    info!("{escaped}/{} paths reached the escape level", recs.len());
    write(&a.out.join("escapes.csv"), &esc)?;

    let opts = ExitOptions {
        dt,
        y_stop: a.y_stop,
        n_paths: a.paths,
    };
    let mut table = header + "h,h_over_sigma,probability,lower,upper,hits,n_paths,method\n";
    let mut points = Vec::new();
    for k in &a.h {
        let h = k * a.sigma;
        let (p, lo, hi, hits) = if a.weighted {
            let e = estimate_exit_probability_weighted(&params, h, &opts, a.seed)?;
            (e.probability, e.lower, e.upper, e.hits)
        } else {
            let e = estimate_exit_probability(&params, h, &opts, a.seed)?;
            (e.probability, e.lower, e.upper, e.exits)
        };
        let method = if a.weighted { "weighted" } else { "plain" };
        let _ = writeln!(
            table,
            "{h},{k},{p:e},{lo:e},{hi:e},{hits},{},{method}",
            a.paths
        );
        points.push((h, p));
    }
    match exit_decay_slope(a.sigma, &points) {
        Some(s) => info!("slope of ln p against h^2/(2 sigma^2): {s:.3}"),
        None => warn!("fewer than two nonzero exit probabilities; no slope"),
    }
    write(&a.out.join("exit_probability.csv"), &table)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

/// Everything one trajectory needs.
struct Setup {
    case: CaseDocument,
    model: GridModel,
    ou: OuParams,
    schedule: RampSchedule,
    cfg: IntegratorConfig,
    det: DetectorConfig,
    seed: u64,
    cell: u32,
}

fn simulate_setup(a: &SimulateArgs) -> Result<Setup> {
    if let Some(path) = &a.select.experiment {
        let exp = resolve_experiment(path)?;
        let (si, ji) = a.cell.unwrap_or((0, 0));
        if si >= exp.spec.sigma_list.len() || ji >= exp.spec.schedules.len() {
            bail!("cell ({si}, {ji}) is outside the sweep grid");
        }
        return Ok(Setup {
            ou: exp.spec.ou.with_sigma(exp.spec.sigma_list[si]),
            schedule: exp.spec.schedules[ji],
            cfg: exp.spec.integrator.clone(),
            det: exp.spec.detector,
            seed: a.seed.unwrap_or(exp.spec.seed_base),
            cell: exp.spec.cell_id(si, ji),
            case: exp.case,
            model: exp.model,
        });
    }
    let Some(path) = &a.select.case else {
        bail!("one of --case or --experiment is required");
    };
    let case = parse_case(path, CaseFormat::from_path(path))?;
    let model = case.model()?;
    let schedule = match (a.interval, a.speed) {
        (Some(t), None) => RampSchedule::new(a.delta_lambda, t, a.lambda_max)?,
        (None, Some(s)) => {
            RampSchedule::from_speed(s, a.delta_lambda, model.ramped_p0_mw(), a.lambda_max)?
        }
        _ => bail!("--case needs one of --interval or --speed"),
    };
    Ok(Setup {
        ou: case.ou_params(a.sigma)?,
        schedule,
        cfg: IntegratorConfig::default(),
        det: DetectorConfig::default(),
        seed: a.seed.unwrap_or(1),
        cell: 0,
        case,
        model,
    })
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let Setup {
        case,
        model,
        ou,
        schedule,
        mut cfg,
        mut det,
        seed,
        cell,
    } = simulate_setup(&a)?;
    if let Some(dt) = a.dt {
        cfg.dt = dt;
    }
    if let Some(r) = a.rcond_threshold {
        det.rcond_threshold = r;
    }
    cfg.record_every = a.record_every.max(1);
    if !a.record_bus.is_empty() {
        cfg.record_buses = a.record_bus.clone();
    } else if cfg.record_buses.is_empty() {
        cfg.record_buses = model.loads.iter().map(|l| l.bus).collect();
        cfg.record_buses.dedup();
    }
    cfg.validate()?;
    det.validate()?;
    if cfg.is_coarse_for(&model) {
        warn!(
            "dt = {} exceeds a tenth of the fastest load recovery constant",
            cfg.dt
        );
    }
    let settings = format!(
        "{ou:?}|{schedule:?}|{cfg:?}|{det:?}|seed={seed}|cell={cell}|path={}",
        a.path
    );
    info!("simulate {}: {settings}", case.case.name);
    let case_text = std::fs::read(&case.provenance.source).unwrap_or_default();
    let mut hashed = settings.clone().into_bytes();
    hashed.push(0);
    hashed.extend_from_slice(&case_text);
    let header = provenance_header(seed, &sha256_hex(&hashed));

    let mut rng = RngStream::for_path(seed, cell, a.path);
    let rec = simulate_trajectory(&model, &ou, &schedule, &cfg, &det, &mut rng).map_err(|e| {
        anyhow::anyhow!(
            "trajectory failed (sigma = {}, schedule = {:?}, path = {}): {e}",
            ou.sigma,
            schedule,
            a.path
        )
    })?;
    let out = a.out.join("trajectory.csv");
    write(
        &out,
        &(header + &trajectory_csv(&model, &cfg.record_buses, &rec)),
    )?;
    match rec.margin_mw {
        Some(m) => info!(
            "{}: margin {m} MW at lambda {}, t = {:?}",
            termination_code(rec.termination),
            rec.lambda_last_stable,
            rec.t_at_detection
        ),
        None => info!(
            "horizon reached without detection after {} steps",
            rec.steps
        ),
    }
    info!("wrote {}", out.display());
    Ok(())
}

fn sweep(a: SweepArgs, threads: Option<usize>) -> Result<()> {
    let mut exp = resolve_experiment(&a.experiment)?;
    let spec = &mut exp.spec;
    if let Some(s) = a.seed {
        spec.seed_base = s;
    }
    if let Some(n) = a.paths {
        spec.n_paths = n;
    }
    if let Some(dt) = a.dt {
        spec.integrator.dt = dt;
    }
    if let Some(r) = a.rcond_threshold {
        spec.detector.rcond_threshold = r;
    }
    spec.dump_paths = a.dump_trajectories;
    if spec.dump_paths > 0 && spec.integrator.record_buses.is_empty() {
        spec.integrator.record_buses = exp.model.loads.iter().map(|l| l.bus).collect();
        spec.integrator.record_buses.dedup();
    }
    spec.validate(&exp.model)?;
    if spec.integrator.is_coarse_for(&exp.model) {
        warn!(
            "dt = {} exceeds a tenth of the fastest load recovery constant",
            spec.integrator.dt
        );
    }
    let out = a
        .out
        .or(exp.out.clone())
        .unwrap_or_else(|| PathBuf::from("out/sweep"));
    info!(
        "case {} ({})",
        exp.case.case.name,
        exp.case.provenance.source.display()
    );
    info!("resolved spec: {}", serde_json::to_string(&exp.spec)?);
    info!(
        "{} cells x {} paths, output {}",
        exp.spec.cell_list().len(),
        exp.spec.n_paths,
        out.display()
    );

    let result = run_experiment(&exp.model, &exp.spec, threads)?;
    let case_text = std::fs::read_to_string(&exp.case.provenance.source)
        .with_context(|| format!("reading {}", exp.case.provenance.source.display()))?;
    let report = StructuredReport::new(&exp.spec, &exp.case.case.name, &case_text, &result)?;
    write_sweep_outputs(&report, &out)?;
    if !result.dumps.is_empty() {
        write_trajectory_dumps(
            &exp.model,
            &exp.spec.integrator.record_buses,
            &result,
            &out,
            &report.header(),
        )?;
    }
    for c in &report.cells {
        info!(
            "sigma {} interval {} s: mean {:.2} MW (S_det {}, {:.2}%), var {:.2}, se {:.3}, censored {}",
            c.sigma, c.interval, c.mean_s, c.s_det, c.pct_diff_vs_det, c.var_s, c.bootstrap_se, c.n_censored
        );
    }
    info!(
        "config hash {}; wrote {}",
        report.config_hash,
        out.display()
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let report = StructuredReport::read(&a.out.join(REPORT_FILE))?;
    let to = a.to.unwrap_or_else(|| a.out.clone());
    info!(
        "report for {} (seed {}, config hash {}, version {})",
        report.case_name, report.seed, report.config_hash, report.version
    );
    let written = render_tables(&report, &to)?;
    print!("{}", results_table(&report));
    info!("wrote {} files to {}", written.len(), to.display());
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<()> {
    if a.case.is_empty() && a.experiment.is_empty() {
        bail!("nothing to validate; pass --case and/or --experiment");
    }
    for path in &a.case {
        let doc = parse_case(path, CaseFormat::from_path(path))?;
        let model = doc
            .model()
            .with_context(|| format!("building {}", path.display()))?;
        let st = model
            .initial_state(OuState::zeros(model.n_channels), &Default::default())
            .with_context(|| format!("{}: base case has no power-flow solution", path.display()))?;
        let vmin = st.v.iter().cloned().fold(f64::INFINITY, f64::min);
        info!(
            "{}: {} buses, {} branches, {} generators, {} loads, {} noise channels, ramped load {} MW, min V {:.4}, sha256 {}",
            path.display(),
            doc.case.buses.len(),
            doc.case.branches.len(),
            doc.case.generators.len(),
            doc.loads.len(),
            model.n_channels,
            model.ramped_p0_mw() + 0.0,
            vmin,
            doc.provenance.sha256
        );
    }
    for path in &a.experiment {
        let exp = resolve_experiment(path)?;
        info!(
            "{}: case {}, {} cells, {} paths, seed {}",
            path.display(),
            exp.case.case.name,
            exp.spec.cell_list().len(),
            exp.spec.n_paths,
            exp.spec.seed_base
        );
        for (j, s) in exp.spec.schedules.iter().enumerate() {
            info!(
                "  schedule {j}: delta_lambda {}, interval {} s, {:.3} MW/s",
                s.delta_lambda,
                s.interval,
                s.speed_mw_per_s(exp.model.ramped_p0_mw())
            );
        }
    }
    println!("ok");
    Ok(())
}
