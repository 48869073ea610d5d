//! Experiment runner: loads a JSON experiment config (or a bundled preset),
//! dispatches to the library modules and emits CSV, JSON or a simple binary
//! format. Identical inputs produce byte-identical outputs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 validation failure,
//! 3 numeric failure. Errors are reported as machine-readable JSON on
//! stderr.

use std::io::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use grbm::adjoint::{adjoint_residual_analytic, adjoint_residual_fd, GeneratorSpec};
use grbm::config::ExperimentConfig;
use grbm::density::{log_density_general, log_density_orthant, GammaLogLaw};
use grbm::domain::DomainKind;
use grbm::particles::{
    equilibrium_speed, simulate_particles, step_speed, ParticleConfig, PsiTable,
};
use grbm::pitman::{
    compose_word, longest_element_word, pitman_transform, s_chain_ensemble, y_sde_simulate,
    PathGrid, Word,
};
use grbm::presets::preset;
use grbm::sde::{beta_limit_compare, path_rng, simulate_grbm, PathEnsemble};
use grbm::stats::ks_statistic;
use grbm::Potential;

/// Numerical laboratory for generalised reflected Brownian motion.
///
/// Every command reads one JSON experiment config (schema "grbm-config/1")
/// given by --config or --preset. CSV columns per command:
/// simulate/particles: path,time,x1..xd; bar-check: x1..xd,residual_fd,
/// residual_analytic; density: x1..xd,log_density; beta-limit:
/// beta,sup_distance,ks_exponential; pitman (mode=chain): path,j1..jD.
/// Outputs ending in .bin use the "GRBM1" little-endian doubles format.
#[derive(Parser)]
#[command(name = "grbm", version)]
struct Cli {
    /// Path to a JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Name of a bundled preset (alternative to --config).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output path; stdout when omitted. ".bin" selects binary output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to the GRBM_THREADS env var).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check structural invariants and the skew-symmetry condition.
    Validate,
    /// Evaluate the closed-form log density at the points in options.points.
    Density,
    /// Certify the basic adjoint relation at density-weighted sample points.
    BarCheck,
    /// Euler-Maruyama simulation of the GRBM ensemble.
    Simulate,
    /// Simulate and compare per-coordinate stationary marginals (KS table).
    CompareStationary,
    /// Equilibrium and step speed of the particle interaction.
    Speed,
    /// Simulate the interacting particle system (options.nu).
    Particles,
    /// Path transforms: options.mode in {transform, word, ysim, chain}.
    Pitman,
    /// Sample the reciprocal exponential functional and test against Gamma.
    Dufresne,
    /// Compare soft reflection at several stiffnesses to the hard map.
    BetaLimit,
}

enum Failure {
    Config(String),
    Validation(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Validation(_) => "validation",
            Failure::Numeric(_) => "numeric",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Validation(m) | Failure::Numeric(m) => m,
        }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Config(e.to_string())
}

fn numeric_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Numeric(e.to_string())
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(output) => {
            if let Err(e) = emit(&cli.out, &output) {
                report_failure(&Failure::Config(format!("cannot write output: {e}")));
            }
        }
        Err(f) => report_failure(&f),
    }
}

fn report_failure(f: &Failure) -> ! {
    let doc = json!({"error": {"kind": f.kind(), "message": f.message()}});
    eprintln!("{doc}");
    std::process::exit(f.code());
}

enum Output {
    Text(String),
    Binary(Vec<u8>),
}

fn emit(out: &Option<PathBuf>, output: &Output) -> std::io::Result<()> {
    match (out, output) {
        (Some(path), Output::Text(s)) => std::fs::write(path, s),
        (Some(path), Output::Binary(b)) => std::fs::write(path, b),
        (None, Output::Text(s)) => std::io::stdout().write_all(s.as_bytes()),
        (None, Output::Binary(b)) => std::io::stdout().write_all(b),
    }
}

fn run(cli: &Cli) -> Result<Output, Failure> {
    if let Some(n) = cli.threads.or_else(|| {
        std::env::var("GRBM_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    }) {
        // ignore failure when a pool already exists (tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = load_config(cli)?;
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    let binary = cli
        .out
        .as_ref()
        .map(|p| p.extension().is_some_and(|e| e == "bin"))
        .unwrap_or(false);
    match cli.command {
        Command::Validate => cmd_validate(&cfg),
        Command::Density => cmd_density(&cfg),
        Command::BarCheck => cmd_bar_check(&cfg),
        Command::Simulate => {
            let ens = simulate_command(&cfg)?;
            Ok(render_ensemble(&ens, binary))
        }
        Command::CompareStationary => cmd_compare_stationary(&cfg),
        Command::Speed => cmd_speed(&cfg),
        Command::Particles => {
            let ens = particles_command(&cfg)?;
            Ok(render_ensemble(&ens, binary))
        }
        Command::Pitman => cmd_pitman(&cfg, binary),
        Command::Dufresne => cmd_dufresne(&cfg),
        Command::BetaLimit => cmd_beta_limit(&cfg),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    match (&cli.config, &cli.preset) {
        (Some(_), Some(_)) => Err(Failure::Config(
            "--config and --preset are mutually exclusive".to_string(),
        )),
        (Some(path), None) => ExperimentConfig::from_file(path).map_err(config_err),
        (None, Some(name)) => preset(name).map_err(config_err),
        (None, None) => Err(Failure::Config(
            "one of --config or --preset is required".to_string(),
        )),
    }
}

/// Checks validity and skew-symmetry; errors with exit code 2 when either
/// fails, so scripts can gate on the exit status.
fn cmd_validate(cfg: &ExperimentConfig) -> Result<Output, Failure> {
    let report = cfg.data.validate();
    let skew = cfg.data.skew_symmetry_defect();
    let doc = json!({
        "schema": cfg.schema,
        "valid": report.is_valid(),
        "violations": report.violations,
        "skew_symmetry": {
            "condition": format!("{:?}", skew.which_condition),
            "max_abs_defect": skew.max_abs_defect,
            "passed": skew.passed,
        },
    });
    if !report.is_valid() {
        return Err(Failure::Validation(format!(
            "invalid reflection data: {}",
            report.violations.join("; ")
        )));
    }
    if !skew.passed {
        return Err(Failure::Validation(format!(
            "skew-symmetry defect {} exceeds tolerance",
            skew.max_abs_defect
        )));
    }
    Ok(Output::Text(format!("{:#}\n", doc)))
}

fn require_valid(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let report = cfg.data.validate();
    if !report.is_valid() {
        return Err(Failure::Validation(format!(
            "invalid reflection data: {}",
            report.violations.join("; ")
        )));
    }
    Ok(())
}

fn log_density_at(cfg: &ExperimentConfig, u: &Potential, x: &[f64]) -> Result<f64, Failure> {
    match cfg.data.kind() {
        DomainKind::Orthant => log_density_orthant(&cfg.data, u, x).map_err(numeric_err),
        DomainKind::GeneralDomain => log_density_general(&cfg.data, u, x).map_err(numeric_err),
    }
}

fn cmd_density(cfg: &ExperimentConfig) -> Result<Output, Failure> {
    require_valid(cfg)?;
    let u = cfg.build_potential().map_err(config_err)?;
    let points = read_points(cfg)?;
    let d = cfg.data.dim();
    let mut out = csv_header(d, &["log_density"]);
    for x in &points {
        if x.len() != d {
            return Err(Failure::Config(format!(
                "point {:?} has dimension {}, expected {d}",
                x,
                x.len()
            )));
        }
        let ld = log_density_at(cfg, &u, x)?;
        push_csv_row(&mut out, x, &[ld]);
    }
    Ok(Output::Text(out))
}

fn read_points(cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>, Failure> {
    let raw = cfg
        .options
        .get("points")
        .ok_or_else(|| Failure::Config("options.points is required".to_string()))?;
    serde_json::from_value(raw.clone())
        .map_err(|e| Failure::Config(format!("options.points: {e}")))
}

/// Density-weighted sample points via a seeded random-walk Metropolis chain
/// on the closed-form log density.
fn density_weighted_points(
    cfg: &ExperimentConfig,
    u: &Potential,
    n_points: usize,
) -> Result<Vec<Vec<f64>>, Failure> {
    let d = cfg.data.dim();
    let mut rng = path_rng(cfg.sim.seed, 0);
    let mut x = cfg.sim.x0.clone();
    if x.len() != d {
        return Err(Failure::Config(format!(
            "sim.x0 has dimension {}, expected {d}",
            x.len()
        )));
    }
    let mut lp = log_density_at(cfg, u, &x)?;
    let step = 0.5;
    let mut points = Vec::with_capacity(n_points);
    let thin = 25;
    let burn = 500;
    let mut it = 0usize;
    while points.len() < n_points {
        let prop: Vec<f64> = x
            .iter()
            .map(|&xi| {
                let z: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                xi + step * z
            })
            .collect();
        let lp_new = log_density_at(cfg, u, &prop)?;
        let accept: f64 = rand_distr::Distribution::sample(
            &rand_distr::Uniform::new(0.0f64, 1.0f64),
            &mut rng,
        );
        if (lp_new - lp).exp() > accept {
            x = prop;
            lp = lp_new;
        }
        it += 1;
        if it > burn && it % thin == 0 {
            points.push(x.clone());
        }
    }
    Ok(points)
}

fn cmd_bar_check(cfg: &ExperimentConfig) -> Result<Output, Failure> {
    require_valid(cfg)?;
    let u = cfg.build_potential().map_err(config_err)?;
    let n_points = cfg.option_usize("n_points", 100).map_err(config_err)?;
    let h = cfg.option_f64("h", 1e-3).map_err(config_err)?;
    let points = density_weighted_points(cfg, &u, n_points)?;
    let spec = GeneratorSpec::new(cfg.data.clone(), u);
    let d = cfg.data.dim();
    let mut out = csv_header(d, &["residual_fd", "residual_analytic"]);
    for x in &points {
        let rfd = adjoint_residual_fd(&spec, x, h).map_err(numeric_err)?;
        let ran = adjoint_residual_analytic(&spec, x).map_err(numeric_err)?;
        if !rfd.is_finite() || !ran.is_finite() {
            return Err(Failure::Numeric(format!(
                "non-finite adjoint residual at {x:?}"
            )));
        }
        push_csv_row(&mut out, x, &[rfd, ran]);
    }
    Ok(Output::Text(out))
}

fn simulate_command(cfg: &ExperimentConfig) -> Result<PathEnsemble, Failure> {
    require_valid(cfg)?;
    let u = cfg.build_potential().map_err(config_err)?;
    let spec = GeneratorSpec::new(cfg.data.clone(), u);
    simulate_grbm(&spec, &cfg.sim).map_err(numeric_err)
}

/// Stationary marginal law of coordinate j under the exponential potential.
fn marginal_law(cfg: &ExperimentConfig, j: usize) -> Result<GammaLogLaw, Failure> {
    match cfg.data.kind() {
        DomainKind::Orthant => {
            let delta = cfg.data.delta_drift().map_err(numeric_err)?;
            let s = 2.0 / cfg.data.alpha();
            GammaLogLaw::new(s * delta[j], s).map_err(numeric_err)
        }
        DomainKind::GeneralDomain => {
            let theta = cfg.data.theta_parameters().map_err(numeric_err)?;
            GammaLogLaw::new(theta[j], 2.0).map_err(numeric_err)
        }
    }
}

fn cmd_compare_stationary(cfg: &ExperimentConfig) -> Result<Output, Failure> {
    if cfg.potential.name != "exponential" {
        return Err(Failure::Config(
            "compare-stationary requires the exponential potential".to_string(),
        ));
    }
    let ens = simulate_command(cfg)?;
    let d = cfg.data.dim();
    let normals = cfg.data.normals().clone();
    let offsets = cfg.data.offsets().clone();
    let mut rows = Vec::new();
    for j in 0..d {
        let law = marginal_law(cfg, j)?;
        // orthant coordinates are the gaps themselves; in a general domain
        // the product form is in the face coordinates n_j.x - b_j
        let series: Vec<f64> = match cfg.data.kind() {
            DomainKind::Orthant => ens.post_burn_in(|x| x[j], cfg.sim.burn_in),
            DomainKind::GeneralDomain => ens.post_burn_in(
                |x| {
                    normals
                        .row(j)
                        .iter()
                        .zip(x)
                        .map(|(n, xi)| n * xi)
                        .sum::<f64>()
                        - offsets[j]
                },
                cfg.sim.burn_in,
            ),
        };
        let ks = ks_statistic(&series, |x| law.cdf(x)).map_err(numeric_err)?;
        rows.push(json!({
            "coordinate": j + 1,
            "shape": law.shape,
            "scale": law.scale,
            "ks": ks.d,
            "p_value": ks.p_value,
            "n": series.len(),
        }));
    }
    Ok(Output::Text(format!("{:#}\n", json!({"marginals": rows}))))
}

fn cmd_speed(cfg: &ExperimentConfig) -> Result<Output, Failure> {
    let u = cfg.build_potential().map_err(config_err)?;
    let alpha = cfg.option_f64("alpha", 2.0).map_err(config_err)?;
    let psi = equilibrium_speed(&u, alpha).map_err(numeric_err)?;
    // step speed from a tabulated Psi around the requested alpha; the
    // table starts at 0.4 because the quadrature oracle needs a slope
    // bounded away from zero for its tail to decay on a fixed grid
    let grid: Vec<f64> = (8..140).map(|i| i as f64 * 0.05).collect();
    let table = PsiTable::from_potential(&u, &grid).map_err(numeric_err)?;
    let gamma = step_speed(&table, alpha).map_err(numeric_err)?;
    let doc = json!({
        "alpha": alpha,
        "equilibrium_speed": psi,
        "step_speed": gamma,
    });
    Ok(Output::Text(format!("{:#}\n", doc)))
}

fn particles_command(cfg: &ExperimentConfig) -> Result<PathEnsemble, Failure> {
    let nu = cfg
        .option_vec_f64("nu")
        .map_err(config_err)?
        .ok_or_else(|| Failure::Config("options.nu is required".to_string()))?;
    let u = cfg.build_potential().map_err(config_err)?;
    let pc = ParticleConfig::new(nu, u).map_err(config_err)?;
    // sim.x0 describes the gap process; particle positions come from
    // options.particle_x0
    let mut sim = cfg.sim.clone();
    sim.x0 = cfg
        .option_vec_f64("particle_x0")
        .map_err(config_err)?
        .ok_or_else(|| Failure::Config("options.particle_x0 is required".to_string()))?;
    simulate_particles(&pc, &sim).map_err(numeric_err)
}

fn build_word(cfg: &ExperimentConfig) -> Result<Word, Failure> {
    match cfg.option_str("word") {
        Some("a2-longest") => longest_element_word(3).map_err(numeric_err),
        Some("alternating") => {
            let len = cfg.option_usize("word_len", 2).map_err(config_err)?;
            let s = std::f64::consts::SQRT_2;
            Word::new(
                (0..len)
                    .map(|k| vec![if k % 2 == 0 { s } else { -s }])
                    .collect(),
            )
            .map_err(numeric_err)
        }
        Some(other) => Err(Failure::Config(format!("unknown word {other:?}"))),
        None => Err(Failure::Config("options.word is required".to_string())),
    }
}

fn ambient_mu(cfg: &ExperimentConfig) -> Result<Vec<f64>, Failure> {
    cfg.option_vec_f64("ambient_mu")
        .map_err(config_err)?
        .ok_or_else(|| Failure::Config("options.ambient_mu is required".to_string()))
}

fn cmd_pitman(cfg: &ExperimentConfig, binary: bool) -> Result<Output, Failure> {
    let n_steps = (cfg.sim.t_max / cfg.sim.dt).round() as usize;
    match cfg.option_str("mode") {
        Some("transform") => {
            let mu = ambient_mu(cfg)?;
            let alpha = cfg
                .option_vec_f64("alpha")
                .map_err(config_err)?
                .ok_or_else(|| Failure::Config("options.alpha is required".to_string()))?;
            let driver =
                PathGrid::brownian(&mu, cfg.sim.dt, n_steps, cfg.sim.seed, 0).map_err(numeric_err)?;
            let out = pitman_transform(&driver, &alpha).map_err(numeric_err)?;
            Ok(Output::Text(render_path_grid(&out)))
        }
        Some("word") => {
            let mu = ambient_mu(cfg)?;
            let w = build_word(cfg)?;
            let driver =
                PathGrid::brownian(&mu, cfg.sim.dt, n_steps, cfg.sim.seed, 0).map_err(numeric_err)?;
            let dec = compose_word(&driver, &w).map_err(numeric_err)?;
            let mut out = String::from("time");
            for j in 1..=dec.ys.len() {
                out.push_str(&format!(",y{j}"));
            }
            out.push('\n');
            let n = driver.n_steps();
            for k in 0..n {
                out.push_str(&format!("{}", (k + 1) as f64 * cfg.sim.dt));
                for y in &dec.ys {
                    out.push_str(&format!(",{}", y[k]));
                }
                out.push('\n');
            }
            Ok(Output::Text(out))
        }
        Some("ysim") => {
            let mu = ambient_mu(cfg)?;
            let w = build_word(cfg)?;
            let u = cfg.build_potential().map_err(config_err)?;
            let ens = y_sde_simulate(&w, &u, &mu, &cfg.sim).map_err(numeric_err)?;
            Ok(render_ensemble(&ens, binary))
        }
        Some("chain") => {
            let depth = cfg.option_usize("chain_depth", 2).map_err(config_err)?;
            let drift = cfg.option_f64("chain_drift", 1.0).map_err(config_err)?;
            let js = s_chain_ensemble(
                drift,
                cfg.sim.dt,
                n_steps,
                depth,
                cfg.sim.n_paths,
                cfg.sim.seed,
            )
            .map_err(numeric_err)?;
            let mut out = String::from("path");
            for k in 1..=depth {
                out.push_str(&format!(",j{k}"));
            }
            out.push('\n');
            for (p, row) in js.iter().enumerate() {
                out.push_str(&format!("{p}"));
                for j in row {
                    out.push_str(&format!(",{j}"));
                }
                out.push('\n');
            }
            Ok(Output::Text(out))
        }
        Some(other) => Err(Failure::Config(format!("unknown pitman mode {other:?}"))),
        None => Err(Failure::Config(
            "options.mode is required (transform, word, ysim or chain)".to_string(),
        )),
    }
}

fn cmd_dufresne(cfg: &ExperimentConfig) -> Result<Output, Failure> {
    if cfg.data.dim() != 1 {
        return Err(Failure::Config(
            "dufresne requires one-dimensional data".to_string(),
        ));
    }
    let mu = cfg.data.drift()[0];
    let t_inf = cfg.option_f64("t_inf", 20.0).map_err(config_err)?;
    let n = cfg.option_usize("n_samples", 10_000).map_err(config_err)?;
    let samples =
        grbm::dufresne::dufresne_sample(mu, t_inf, n, cfg.sim.seed).map_err(numeric_err)?;
    let ks = grbm::dufresne::ks_against_gamma(&samples, mu).map_err(numeric_err)?;
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let doc = json!({
        "mu": mu,
        "t_inf": t_inf,
        "n": n,
        "mean": mean,
        "ks": {"d": ks.d, "p_value": ks.p_value},
        "samples": samples,
    });
    Ok(Output::Text(format!("{:#}\n", doc)))
}

fn cmd_beta_limit(cfg: &ExperimentConfig) -> Result<Output, Failure> {
    require_valid(cfg)?;
    let betas = cfg
        .option_vec_f64("betas")
        .map_err(config_err)?
        .unwrap_or_else(|| vec![1.0, 4.0, 16.0]);
    let rows = beta_limit_compare(&cfg.data, &betas, &cfg.sim).map_err(numeric_err)?;
    let mut out = String::from("beta,sup_distance,ks_exponential\n");
    for r in &rows {
        out.push_str(&format!("{},{},{}\n", r.beta, r.sup_distance, r.ks_exponential));
    }
    Ok(Output::Text(out))
}

fn csv_header(d: usize, extra: &[&str]) -> String {
    let mut out = String::new();
    for j in 1..=d {
        if j > 1 {
            out.push(',');
        }
        out.push_str(&format!("x{j}"));
    }
    for e in extra {
        out.push(',');
        out.push_str(e);
    }
    out.push('\n');
    out
}

fn push_csv_row(out: &mut String, x: &[f64], extra: &[f64]) {
    for (j, xi) in x.iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        out.push_str(&format!("{xi}"));
    }
    for e in extra {
        out.push_str(&format!(",{e}"));
    }
    out.push('\n');
}

fn render_path_grid(g: &PathGrid) -> String {
    let mut out = String::from("time");
    for j in 1..=g.dim() {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for (k, v) in g.values.iter().enumerate() {
        out.push_str(&format!("{}", (k + 1) as f64 * g.dt));
        for xi in v {
            out.push_str(&format!(",{xi}"));
        }
        out.push('\n');
    }
    out
}

/// CSV rows path,time,x1..xd sorted by path id, or the "GRBM1" binary
/// layout: magic, then n_paths, n_stored, dim as little-endian u64, then
/// the stored times, then the path data in path-major order, all as
/// little-endian doubles.
fn render_ensemble(ens: &PathEnsemble, binary: bool) -> Output {
    if binary {
        let mut buf = Vec::with_capacity(8 * ens.data.len() + 64);
        buf.extend_from_slice(b"GRBM1");
        for v in [ens.n_paths as u64, ens.n_stored() as u64, ens.dim as u64] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for t in &ens.times {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        for x in &ens.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        return Output::Binary(buf);
    }
    let mut out = String::from("path,time");
    for j in 1..=ens.dim {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for p in 0..ens.n_paths {
        for (k, t) in ens.times.iter().enumerate() {
            out.push_str(&format!("{p},{t}"));
            for j in 0..ens.dim {
                out.push_str(&format!(",{}", ens.value(p, k, j)));
            }
            out.push('\n');
        }
    }
    Output::Text(out)
}
