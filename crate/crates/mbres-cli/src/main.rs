use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use mbres::acceptance::{self, Suite};
use mbres::config::{Resolved, RunConfig};
use mbres::dynamics::{field_energy, mean_inversion, System};
use mbres::ensemble::{sample_ensemble, Ensemble};
use mbres::kernels::{verify_constants, TWO_PI};
use mbres::params::{Branch, ReducedState};
use mbres::poincare::{poincare_analytic, poincare_numeric};
use mbres::spectrum::{assemble_blocks, log_grid, resonance_verdict, threshold_scan, verdict_flips, DVariant, Method};

/// Maxwell-Bloch parametric resonance laboratory.
#[derive(Parser)]
#[command(name = "mbres", version, about)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "MBRES_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Source {
    /// TOML run configuration.
    #[arg(long, required_unless_present = "paper_constants")]
    config: Option<PathBuf>,
    /// Use the ruby preset instead of a file.
    #[arg(long, conflicts_with = "config")]
    paper_constants: bool,
    /// Molecule count for the preset.
    #[arg(long, default_value_t = 1000, requires = "paper_constants")]
    n: usize,
    /// Overrides the ensemble seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the full system and stream (τ, a, ȧ, energy, inversion).
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 1)]
        periods: usize,
        /// Samples per pumping period.
        #[arg(long, default_value_t = 64)]
        samples: usize,
        /// Initial field amplitude a(0).
        #[arg(long, default_value_t = 0.0)]
        a0: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// One period of the Poincaré map from a perturbed ground state.
    Poincare {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value_t = MapMode::Both)]
        mode: MapMode,
        #[arg(long, default_value_t = 0.0)]
        a0: f64,
        #[arg(long, default_value_t = 0.0)]
        b0: f64,
        /// Size of the random perturbation of every zₙ.
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multipliers of the block differential and the resonance verdict.
    Spectrum {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long, value_enum)]
        d_variant: Option<DArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the ensemble; per-molecule couplings and the sum report.
    Ensemble {
        #[command(flatten)]
        source: Source,
        /// Output file; `.csv` writes the couplings, `.json` everything.
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form kernel constants against their quadrature definitions.
    VerifyIntegrals {
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        json: bool,
    },
    /// Resonance verdict over a geometric grid of pumping amplitudes.
    ThresholdScan {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        pump_min: f64,
        #[arg(long)]
        pump_max: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// The full acceptance suite.
    VerifyAll {
        #[command(flatten)]
        source: Source,
        /// Write the results as JSON as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MapMode {
    Numeric,
    Analytic,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Polynomial,
    Dense,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum DArg {
    Identity,
    Gamma,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Polynomial => Method::Polynomial,
            MethodArg::Dense => Method::Dense,
            MethodArg::Both => Method::Both,
        }
    }
}

impl From<DArg> for DVariant {
    fn from(d: DArg) -> Self {
        match d {
            DArg::Identity => DVariant::Identity,
            DArg::Gamma => DVariant::GammaCorrected,
        }
    }
}

fn resolve(src: &Source) -> anyhow::Result<Resolved> {
    let mut cfg = match (&src.config, src.paper_constants) {
        (_, true) => RunConfig::paper_constants(src.n, 0),
        (Some(p), false) => RunConfig::load(p)?,
        (None, false) => return Err(mbres::Error::Config("no configuration given".into()).into()),
    };
    if let Some(s) = src.seed {
        cfg.ensemble.seed = s;
    }
    Ok(cfg.resolve()?)
}

fn sample(r: &Resolved) -> anyhow::Result<Ensemble> {
    Ok(sample_ensemble(&r.spec, &r.scales)?)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn provenance(cmd: &str, r: &Resolved) -> String {
    format!("# mbres {cmd} seed={} config={}", r.spec.seed, serde_json::to_string(&r.config).unwrap_or_default())
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    seed: u64,
    kappa: f64,
    config: &'a RunConfig,
    result: T,
}

fn write_json<T: Serialize>(path: &Path, cmd: &str, r: &Resolved, result: T) -> anyhow::Result<()> {
    let rep = Report { command: cmd, seed: r.spec.seed, kappa: r.kappa, config: &r.config, result };
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &rep)?;
    writeln!(w)?;
    Ok(())
}

fn simulate(src: &Source, periods: usize, samples: usize, a0: f64, out: &Path) -> anyhow::Result<()> {
    if periods == 0 || samples == 0 {
        return Err(mbres::Error::Domain("periods and samples must be positive".into()).into());
    }
    let r = resolve(src)?;
    let ens = sample(&r)?;
    let sys = System::new(&ens.couplings, r.kappa)?;
    let mut s = ReducedState { a: a0, ..ReducedState::ground(ens.len()) }.lift(Branch::Upper)?;
    let mut w = create(out)?;
    writeln!(w, "{}", provenance("simulate", &r))?;
    writeln!(w, "tau,a,b,energy,mean_inversion")?;
    let dt = TWO_PI / samples as f64;
    let row = |w: &mut BufWriter<File>, t: f64, s: &mbres::params::FullState| {
        writeln!(w, "{t:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", s.a, s.b, field_energy(s), mean_inversion(s))
    };
    row(&mut w, 0.0, &s)?;
    for k in 0..periods * samples {
        let (t0, t1) = (k as f64 * dt, (k + 1) as f64 * dt);
        s = sys.evolve_full(&s, t0, t1, &r.ode)?.0;
        row(&mut w, t1, &s)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MapPoint {
    a: f64,
    b: f64,
    z: Vec<Complex64>,
}

impl From<&ReducedState> for MapPoint {
    fn from(s: &ReducedState) -> Self {
        Self { a: s.a, b: s.b, z: s.z.clone() }
    }
}

#[derive(Serialize)]
struct PoincareResult {
    initial: MapPoint,
    numeric: Option<MapPoint>,
    analytic: Option<MapPoint>,
    /// |numeric − analytic| per coordinate (a, ȧ, Re z₁, Im z₁, …)
    discrepancy: Option<Vec<f64>>,
    max_discrepancy: Option<f64>,
}

fn poincare(src: &Source, mode: MapMode, a0: f64, b0: f64, eps: f64, out: &Path) -> anyhow::Result<()> {
    let r = resolve(src)?;
    let ens = sample(&r)?;
    let c = &ens.couplings;
    let mut rng = ChaCha8Rng::seed_from_u64(r.spec.seed ^ 0x5eed);
    let z0: Vec<Complex64> = (0..c.len())
        .map(|_| Complex64::new(eps * rng.random_range(-1.0..1.0), eps * rng.random_range(-1.0..1.0)))
        .collect();
    let s0 = ReducedState { a: a0, b: b0, z: z0 };
    let numeric = match mode {
        MapMode::Analytic => None,
        _ => Some(poincare_numeric(&s0.lift(Branch::Upper)?, c, r.kappa, &r.ode)?),
    };
    let analytic = match mode {
        MapMode::Numeric => None,
        _ => Some(poincare_analytic(a0, b0, &s0.z, c, r.kappa)?),
    };
    let discrepancy = match (&numeric, &analytic) {
        (Some(n), Some(a)) => {
            Some(n.to_coords().iter().zip(a.to_coords()).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
        }
        _ => None,
    };
    let max_discrepancy = discrepancy.as_ref().map(|d| d.iter().copied().fold(0.0, f64::max));
    let res = PoincareResult {
        initial: (&s0).into(),
        numeric: numeric.as_ref().map(Into::into),
        analytic: analytic.as_ref().map(Into::into),
        discrepancy,
        max_discrepancy,
    };
    write_json(out, "poincare", &r, res)
}

fn spectrum(src: &Source, method: Option<MethodArg>, dv: Option<DArg>, out: &Path) -> anyhow::Result<()> {
    let r = resolve(src)?;
    let ens = sample(&r)?;
    let method = method.map(Method::from).unwrap_or(r.config.run.method);
    let dv = dv.map(DVariant::from).unwrap_or(r.config.run.d_variant);
    let bd = assemble_blocks(&ens.couplings, r.kappa, dv)?;
    let rep = resonance_verdict(&bd, method, r.config.run.resonance_tol)?;
    println!(
        "max|mu| = {:.12}  resonance = {}  trivial roots = {}",
        rep.max_abs_mu, rep.resonance, rep.trivial_roots
    );
    write_json(out, "spectrum", &r, rep)
}

#[derive(Serialize)]
struct EnsembleDump<'a> {
    sums: mbres::ensemble::SumReport,
    rescale_factor: f64,
    molecules: &'a [mbres::ensemble::Molecule],
}

fn ensemble(src: &Source, out: &Path) -> anyhow::Result<()> {
    let r = resolve(src)?;
    let ens = sample(&r)?;
    let sums = ens.sums();
    match out.extension().and_then(|e| e.to_str()) {
        Some("csv") => {
            let mut w = create(out)?;
            writeln!(w, "{}", provenance("ensemble", &r))?;
            let mut cw = csv::Writer::from_writer(w);
            cw.write_record(["index", "alpha", "beta", "gamma"])?;
            let c = &ens.couplings;
            for i in 0..c.len() {
                cw.write_record(&[
                    i.to_string(),
                    format!("{:.16e}", c.alpha[i]),
                    format!("{:.16e}", c.beta[i]),
                    format!("{:.16e}", c.gamma[i]),
                ])?;
            }
            cw.flush()?;
            println!("{}", serde_json::to_string_pretty(&sums)?);
            Ok(())
        }
        Some("json") => write_json(
            out,
            "ensemble",
            &r,
            EnsembleDump { sums, rescale_factor: ens.rescale_factor, molecules: &ens.molecules },
        ),
        _ => Err(mbres::Error::Config(format!("output {} must end in .csv or .json", out.display())).into()),
    }
}

fn verify_integrals(kappa: f64, json: bool) -> anyhow::Result<bool> {
    let rows = verify_constants(kappa, mbres::kernels::O_FACTOR)?;
    let ok = rows.iter().all(|r| r.pass);
    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        println!("{:<8} {:>26} {:>26} {:>10} {:>10}  ok", "name", "closed form", "oracle", "error", "bound");
        for r in &rows {
            let c = |z: Complex64| format!("{:+.6e}{:+.6e}i", z.re, z.im);
            println!(
                "{:<8} {:>26} {:>26} {:>10.2e} {:>10.2e}  {}",
                r.name,
                c(r.closed_form),
                c(r.oracle),
                r.error,
                r.bound,
                if r.pass { "pass" } else { "FAIL" }
            );
        }
    }
    Ok(ok)
}

fn scan(src: &Source, lo: f64, hi: f64, steps: usize, out: &Path) -> anyhow::Result<()> {
    let r = resolve(src)?;
    let ens = sample(&r)?;
    let grid = log_grid(lo, hi, steps)?;
    let run = &r.config.run;
    let rows = threshold_scan(&ens.couplings, r.pump_reference, &grid, r.kappa, run.d_variant, run.method, run.resonance_tol)?;
    let mut w = create(out)?;
    writeln!(w, "{}", provenance("threshold-scan", &r))?;
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(["a_p", "max_abs_mu", "verdict", "maxwell_component_min"])?;
    for row in &rows {
        cw.write_record(&[
            format!("{:.6e}", row.pump),
            format!("{:.15}", row.max_abs_mu),
            if row.resonance { "resonance" } else { "stable" }.to_string(),
            format!("{:.6e}", row.maxwell_component_min),
        ])?;
    }
    cw.flush()?;
    println!("{} verdict flips over {} grid points", verdict_flips(&rows).len(), rows.len());
    Ok(())
}

fn verify_all(src: &Source, out: Option<&Path>) -> anyhow::Result<bool> {
    let r = resolve(src)?;
    let suite = Suite { seed: r.spec.seed, kappa: r.kappa, ..Suite::default() };
    let mut results = Vec::new();
    for check in acceptance::run_all_lazy() {
        let res = check(&suite);
        println!("{}", res.line());
        results.push(res);
    }
    if let Some(p) = out {
        write_json(p, "verify-all", &r, &results)?;
    }
    Ok(results.iter().all(|x| x.pass))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().map_err(|e| anyhow!(e))?;
    }
    match cli.command {
        Command::Simulate { source, periods, samples, a0, out } => simulate(&source, periods, samples, a0, &out).map(|_| true),
        Command::Poincare { source, mode, a0, b0, eps, out } => poincare(&source, mode, a0, b0, eps, &out).map(|_| true),
        Command::Spectrum { source, method, d_variant, out } => spectrum(&source, method, d_variant, &out).map(|_| true),
        Command::Ensemble { source, out } => ensemble(&source, &out).map(|_| true),
        Command::VerifyIntegrals { kappa, json } => verify_integrals(kappa, json),
        Command::ThresholdScan { source, pump_min, pump_max, steps, out } => {
            scan(&source, pump_min, pump_max, steps, &out).map(|_| true)
        }
        Command::VerifyAll { source, out } => verify_all(&source, out.as_deref()),
    }
}

/// 2 for bad input, 3 for numeric failure or a failed check.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<mbres::Error>() {
        Some(m) if m.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
