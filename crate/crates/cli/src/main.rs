//! `gmc-lab`: seeded simulations, estimator reports and the oracle suite.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gmc_core::chaos::{exponentiate, Region, REACH_FACTOR};
use gmc_core::config::RunConfig;
use gmc_core::dump::GridDump;
use gmc_core::error::Error;
use gmc_core::estimators::{
    degeneracy_scan, dissipation_run, lognormality_report, moment_scaling, mrw_report, scale_invariance_test,
    write_degeneracy_csv, Provenance,
};
use gmc_core::field::{synthesize, FieldStream};
use gmc_core::oracles::{convex_comparison_check, run_suite, Budget, ConvexFunction, GaussianVectorSpec, Status, Verdict};

#[derive(Parser)]
#[command(name = "gmc-lab", version, about = "Gaussian multiplicative chaos simulations, estimators and oracle checks")]
struct Cli {
    /// Worker threads; affects wall time only.
    #[arg(long, env = "GMC_LAB_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write field and measure grids for each replica, plus a manifest.
    Simulate(RunArgs),
    /// Run an estimator and write its CSV and JSON report.
    Estimate {
        #[arg(value_enum)]
        kind: ReportKind,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the brute-force oracle suite.
    Oracles(OracleArgs),
    /// Re-run a simulate manifest and compare every file hash.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gauss–Hermite nodes per dimension.
    #[arg(long, default_value_t = gmc_core::oracles::MIN_ORDER)]
    order: usize,
    /// Paired Monte Carlo samples per supremum check; 0 disables them.
    #[arg(long, default_value_t = gmc_core::oracles::MIN_MC_SAMPLES)]
    mc_samples: u64,
    /// Randomized instances per comparison oracle.
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// Extra convex comparison on a user pair: `{"x": .., "y": .., "function": ..}`.
    #[arg(long)]
    pair: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    Zeta,
    ScaleInvariance,
    Degeneracy,
    Dissipation,
    Mrw,
}

impl ReportKind {
    fn name(self) -> &'static str {
        match self {
            Self::Zeta => "zeta",
            Self::ScaleInvariance => "scale-invariance",
            Self::Degeneracy => "degeneracy",
            Self::Dissipation => "dissipation",
            Self::Mrw => "mrw",
        }
    }
}

/// Command failure with its exit code class.
enum Failure {
    Validation(String),
    Acceptance(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Validation(_) => 2,
            Self::Acceptance(_) => 3,
            Self::Runtime(_) => 1,
        }
    }

    fn report(&self) {
        let (kind, message) = match self {
            Self::Validation(m) => ("validation", m),
            Self::Acceptance(m) => ("acceptance", m),
            Self::Runtime(m) => ("runtime", m),
        };
        let doc = serde_json::json!({ "error": { "kind": kind, "code": self.code(), "message": message } });
        eprintln!("{doc}");
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Invalid(_)
            | Error::NotPositiveDefinite(_)
            | Error::GridTooCoarse { .. }
            | Error::RegionOutsideInterior(_)
            | Error::LadderExhausted(_)
            | Error::Decode(_)
            | Error::Json(_) => Self::Validation(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::Validation(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            Failure::Validation("--threads must be positive".into()).report();
            return ExitCode::from(2);
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Simulate(args) => load(&args).and_then(|(c, out)| simulate(&c, &out).map(|_| ())),
        Command::Estimate { kind, run } => load(&run).and_then(|(c, out)| estimate(kind, &c, &out)),
        Command::Oracles(args) => oracles(&args),
        Command::Replay { manifest, out } => replay(&manifest, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report();
            ExitCode::from(f.code())
        }
    }
}

fn load(args: &RunArgs) -> Outcome<(RunConfig, PathBuf)> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", args.config.display())))?;
    let mut config = RunConfig::from_json(&text)?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(r) = args.replicas {
        if r == 0 {
            return Err(Failure::Validation("--replicas must be positive".into()));
        }
        config.replicas = r;
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("gmc-out"));
    Ok((config, out))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FileEntry {
    path: String,
    kind: String,
    replica: u32,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    command: String,
    config_digest: String,
    config: RunConfig,
    ladder_digest: String,
    epsilons: Vec<f64>,
    files: Vec<FileEntry>,
}

fn simulate(config: &RunConfig, out: &Path) -> Outcome<Manifest> {
    let digest = config.digest();
    let ladder = config.ladder()?;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut total = 0.0;
    for replica in 0..config.replicas {
        let stream = FieldStream {
            seed: config.seed,
            replica,
        };
        let sample = synthesize(&ladder, ladder.finest(), stream)?;
        let measure = exponentiate(&sample);
        total += measure.total_mass();
        for (kind, dump) in [
            ("field", GridDump::from_field(&sample, Some(digest.clone()))),
            ("mass", measure.to_dump(Some(digest.clone()))),
        ] {
            let name = format!("{kind}_{replica:04}.bin");
            let bytes = dump.to_bytes();
            fs::write(out.join(&name), &bytes)?;
            files.push(FileEntry {
                path: name,
                kind: kind.into(),
                replica,
                bytes: bytes.len(),
                sha256: sha256_hex(&bytes),
            });
        }
    }
    let manifest = Manifest {
        tool: "gmc-lab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "simulate".into(),
        config_digest: digest.clone(),
        config: config.clone(),
        ladder_digest: ladder.digest().to_string(),
        epsilons: ladder.epsilons.clone(),
        files,
    };
    fs::write(out.join("config.json"), config.to_json())?;
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let g = &ladder.grid;
    println!(
        "simulate: {} replicas on {}^{} grid, {} shells, finest eps {:.4e}, mean total mass {:.6}, config {} -> {}",
        config.replicas,
        g.n,
        g.dimension,
        ladder.epsilons.len(),
        ladder.epsilons[ladder.finest()],
        total / config.replicas as f64,
        &digest[..12],
        out.display()
    );
    Ok(manifest)
}

fn replay(path: &Path, out: &Path) -> Outcome<()> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
    let old: Manifest = serde_json::from_str(&text)?;
    if old.config.digest() != old.config_digest {
        return Err(Failure::Validation("manifest config does not match its digest".into()));
    }
    let new = simulate(&old.config, out)?;
    let mismatched: Vec<&str> = old
        .files
        .iter()
        .zip(&new.files)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.path.as_str())
        .collect();
    if old.files.len() != new.files.len() || !mismatched.is_empty() {
        return Err(Failure::Acceptance(format!("replay differs in {mismatched:?}")));
    }
    println!("replay: {} files identical", new.files.len());
    Ok(())
}

fn create(path: &Path) -> Outcome<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes `<name>.csv` (digest comment line first) and `<name>.json`.
fn write_report<T: Serialize>(
    out: &Path,
    name: &str,
    digest: &str,
    report: &T,
    csv: impl FnOnce(&mut dyn Write) -> gmc_core::Result<()>,
) -> Outcome<()> {
    fs::create_dir_all(out)?;
    let mut w = create(&out.join(format!("{name}.csv")))?;
    writeln!(w, "# config_digest: {digest}")?;
    csv(&mut w)?;
    w.flush()?;
    fs::write(out.join(format!("{name}.json")), serde_json::to_string_pretty(report)?)?;
    Ok(())
}

fn estimate(kind: ReportKind, config: &RunConfig, out: &Path) -> Outcome<()> {
    let digest = config.digest();
    let name = kind.name();
    let params = &config.estimate;
    let (seed, replicas) = (config.seed, config.replicas);
    let r = config.kernel.scale;
    let d = config.kernel.dimension;
    let tag = |mut p: Provenance| {
        p.config_digest = Some(digest.clone());
        p
    };
    match kind {
        ReportKind::Zeta => {
            let ladder = config.ladder()?;
            let scales = params
                .zeta
                .scales
                .clone()
                .unwrap_or_else(|| {
                    let floor = 8.0 * ladder.grid.step();
                    let mut s: Vec<f64> = (2..7).map(|k| r * 0.5f64.powi(k)).filter(|&c| c >= floor).collect();
                    s.reverse();
                    s
                });
            let mut rep = moment_scaling(&ladder, &params.zeta.p, &scales, replicas, seed)?;
            rep.provenance = tag(rep.provenance);
            write_report(out, name, &digest, &rep, |w| rep.write_csv(w))?;
            let fits: Vec<String> = rep
                .fits
                .iter()
                .map(|f| format!("p={} zeta_hat={:.4}+/-{:.4} analytic={:.4}", f.p, f.zeta_hat, f.se, f.zeta))
                .collect();
            println!("zeta: {}", fits.join("; "));
        }
        ReportKind::ScaleInvariance => {
            let ladder = config.ladder()?;
            let c = params.scale_invariance.c;
            let side = match params.scale_invariance.side {
                Some(s) => s,
                None => {
                    let coarse = ladder.epsilons[ladder.finest()] / c;
                    0.5 * (r - REACH_FACTOR * coarse) / (d as f64).sqrt()
                }
            };
            let mut rep = scale_invariance_test(&ladder, c, side, replicas, seed)?;
            rep.provenance = tag(rep.provenance);
            write_report(out, name, &digest, &rep, |w| rep.write_csv(w))?;
            println!(
                "scale-invariance: mean shift {:.4}+/-{:.4} (target {:.4}), variance gain {:.4}+/-{:.4} (target {:.4}), KS {:.4} vs {:.4}{}",
                rep.mean_shift,
                rep.mean_shift_se,
                rep.mean_shift_target,
                rep.variance_gain,
                rep.variance_gain_se,
                rep.variance_gain_target,
                rep.ks_statistic,
                rep.ks_critical,
                if rep.ks_rejected { " rejected" } else { "" }
            );
        }
        ReportKind::Degeneracy => {
            let region = params
                .degeneracy
                .region
                .clone()
                .unwrap_or_else(|| Region::cube(&vec![0.0; d], 1.0));
            let values = params.degeneracy.lambda2.clone().unwrap_or_else(|| vec![config.kernel.lambda2]);
            let mut rows = Vec::with_capacity(values.len());
            for l2 in values {
                let mut c = config.clone();
                c.kernel.lambda2 = l2;
                c.kernel()?;
                let ladder = c.ladder()?;
                let mut row = degeneracy_scan(&ladder, &region, params.degeneracy.alpha, replicas, seed)?;
                row.provenance = tag(row.provenance);
                rows.push(row);
            }
            write_report(out, name, &digest, &rows, |w| write_degeneracy_csv(&rows, w))?;
            let parts: Vec<String> = rows
                .iter()
                .map(|r| {
                    format!(
                        "lambda2={} exponent {:.4}+/-{:.4} (predicted {:.4}) {:?}",
                        r.provenance.lambda2, r.exponent, r.exponent_se, r.predicted, r.verdict
                    )
                })
                .collect();
            println!("degeneracy: {}", parts.join("; "));
        }
        ReportKind::Dissipation => {
            let ladder = config.ladder()?;
            let p = &params.dissipation;
            let radii = p.radii.clone().unwrap_or_else(|| (1..=4).map(|k| r * 0.5f64.powi(k)).collect());
            let samples = dissipation_run(&ladder, &radii, p.mean, p.per_axis, replicas, seed)?;
            let rep = lognormality_report(tag(Provenance::new(&ladder, seed, replicas)), &radii, &samples, p.mean)?;
            write_report(out, name, &digest, &rep, |w| rep.write_csv(w))?;
            println!(
                "dissipation: slope of Var(ln eps_l) vs ln(R/l) {:.4}+/-{:.4} (lambda2 {})",
                rep.slope, rep.slope_se, config.kernel.lambda2
            );
        }
        ReportKind::Mrw => {
            let ladder = config.ladder()?;
            let mut rep = mrw_report(&ladder, &params.mrw.times, params.mrw.substeps, replicas, seed)?;
            rep.provenance = tag(rep.provenance);
            write_report(out, name, &digest, &rep, |w| rep.write_csv(w))?;
            let parts: Vec<String> = rep
                .times
                .iter()
                .map(|t| format!("E[X({})^2]={:.4}+/-{:.4}", t.t, t.second_moment, t.se))
                .collect();
            println!(
                "mrw: {}; max quadratic variation error {:.4}",
                parts.join(", "),
                rep.max_qv_error.last().copied().unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairInput {
    x: GaussianVectorSpec,
    y: GaussianVectorSpec,
    #[serde(default = "square")]
    function: ConvexFunction,
}

fn square() -> ConvexFunction {
    ConvexFunction::Square
}

fn oracles(args: &OracleArgs) -> Outcome<()> {
    let budget = Budget {
        quadrature_order: args.order,
        mc_samples: args.mc_samples,
        instances: args.instances,
    };
    // Validate user input before spending time on the suite.
    let pair = match &args.pair {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
            let p: PairInput = serde_json::from_str(&text)?;
            p.x.validate()?;
            p.y.validate()?;
            Some(p)
        }
        None => None,
    };
    let mut report = run_suite(args.seed, budget)?;
    if let Some(p) = pair {
        let c = convex_comparison_check(&p.x, &p.y, p.function, args.order)?;
        report.verdicts.push(Verdict {
            oracle: "convex_comparison".into(),
            instance: "user pair".into(),
            status: c.status,
            margin: c.margin,
            budget: c.budget,
            detail: serde_json::to_value(&c)?,
        });
        match c.status {
            Status::Pass => report.passed += 1,
            Status::Fail => report.failed += 1,
            Status::Inconclusive => report.inconclusive += 1,
        }
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("gmc-out"));
    fs::create_dir_all(&out)?;
    fs::write(out.join("oracles.json"), serde_json::to_string_pretty(&report)?)?;
    let mut names: Vec<&str> = report.verdicts.iter().map(|v| v.oracle.as_str()).collect();
    names.dedup();
    for name in names {
        let vs: Vec<&Verdict> = report.of(name).collect();
        let count = |s: Status| vs.iter().filter(|v| v.status == s).count();
        println!(
            "oracle {name}: {} pass, {} fail, {} inconclusive",
            count(Status::Pass),
            count(Status::Fail),
            count(Status::Inconclusive)
        );
    }
    for v in report.verdicts.iter().filter(|v| v.status == Status::Inconclusive) {
        eprintln!("warning: {} {} inconclusive (margin {:e}, budget {:e})", v.oracle, v.instance, v.margin, v.budget);
    }
    if report.failed > 0 {
        let failed: Vec<String> = report
            .verdicts
            .iter()
            .filter(|v| v.status == Status::Fail)
            .map(|v| format!("{} {}", v.oracle, v.instance))
            .collect();
        return Err(Failure::Acceptance(format!("certified failures: {failed:?}")));
    }
    Ok(())
}
