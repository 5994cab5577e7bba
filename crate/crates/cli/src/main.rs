//! Command-line front end: scenario ingestion, seeded sweep execution, and
//! machine-readable emission of every report.
//!
//! Exit codes: 0 ok, 2 input error, 3 resource cap exceeded, 4 verification
//! failure (`verify` always, `sweep` only under --strict).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use immse::Scenario64;
use immse::identities::{
    IdentityReport, verify_derivative_identity, verify_gaussian, verify_sic_with,
};
use immse::model::ScenarioFile;
use immse::presets;
use immse::sweep::{SweepPoint, sweep_scenario};

const EXIT_INPUT: i32 = 2;
const EXIT_CAP: i32 = 3;
const EXIT_VERIFY: i32 = 4;

#[derive(Parser)]
#[command(
    name = "immse",
    version,
    about = "Mutual-information / MMSE identity sweeps for K-user Gaussian multiple-access channels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario over its snr grid and write sweep.csv + sweep.json.
    Sweep(RunArgs),
    /// Run the identity checks and print one line per identity per snr.
    Verify(RunArgs),
    /// Write a bundled starter scenario file.
    ScenarioInit {
        /// One of: k1-bpsk, k2-bpsk, k2-qpsk-mimo2, k3-bpsk, k2-gaussian-mimo2.
        name: String,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// Override the scenario's sample budget per grid point.
    #[arg(long)]
    samples: Option<u64>,
    /// Override the scenario's rng seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker pool size; never changes numeric output.
    #[arg(long)]
    threads: Option<usize>,
    /// Report information columns in bits instead of nats (CSV only;
    /// derivative, mmse and residual columns stay in nats).
    #[arg(long)]
    bits: bool,
    /// Exit 4 when an identity check fails.
    #[arg(long)]
    strict: bool,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Re-center and rescale explicit point constellations instead of
    /// rejecting invalid ones.
    #[arg(long)]
    normalize: bool,
}

/// Reproducibility header carried verbatim in every JSON report.
#[derive(Debug, Clone, Serialize)]
struct RunManifest {
    scenario_digest: String,
    seed: u64,
    tool_version: String,
    timestamp_unix: u64,
    command: String,
    args: Vec<String>,
}

#[derive(Serialize)]
struct SweepReportFile<'a> {
    manifest: &'a RunManifest,
    points: &'a [SweepPoint<f64>],
}

#[derive(Serialize)]
struct VerifyReportFile<'a> {
    manifest: &'a RunManifest,
    reports: &'a [IdentityReport<f64>],
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Sweep(args) => run_with_pool(args, cmd_sweep),
        Command::Verify(args) => run_with_pool(args, cmd_verify),
        Command::ScenarioInit { name, out } => cmd_scenario_init(&name, &out),
    };
    std::process::exit(code);
}

fn error_code(e: &immse::Error) -> i32 {
    match e {
        immse::Error::EnumerationCapExceeded { .. } => EXIT_CAP,
        _ => EXIT_INPUT,
    }
}

fn run_with_pool(args: RunArgs, body: fn(&RunArgs, Scenario64, RunManifest) -> i32) -> i32 {
    let (scenario, manifest) = match load_scenario(&args) {
        Ok(v) => v,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    match args.threads {
        Some(t) => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: cannot build worker pool: {e}");
                    return EXIT_INPUT;
                }
            };
            pool.install(|| body(&args, scenario, manifest))
        }
        None => body(&args, scenario, manifest),
    }
}

fn load_scenario(args: &RunArgs) -> Result<(Scenario64, RunManifest), (i32, String)> {
    let bytes = fs::read(&args.scenario).map_err(|e| {
        (
            EXIT_INPUT,
            format!("cannot read {}: {e}", args.scenario.display()),
        )
    })?;
    let digest = hex(&Sha256::digest(&bytes));
    let text = String::from_utf8(bytes).map_err(|e| {
        (
            EXIT_INPUT,
            format!("{}: not valid UTF-8: {e}", args.scenario.display()),
        )
    })?;
    let file =
        ScenarioFile::<f64>::from_json_str(&text).map_err(|e| (EXIT_INPUT, e.to_string()))?;
    let mut scenario = file
        .into_scenario(args.normalize)
        .map_err(|e| (error_code(&e), e.to_string()))?;
    if let Some(n) = args.samples {
        scenario.samples = n;
    }
    if let Some(s) = args.seed {
        scenario.seed = s;
    }
    let manifest = RunManifest {
        scenario_digest: digest,
        seed: scenario.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        command: std::env::args().nth(1).unwrap_or_default(),
        args: std::env::args().skip(2).collect(),
    };
    Ok((scenario, manifest))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn cmd_sweep(args: &RunArgs, scenario: Scenario64, manifest: RunManifest) -> i32 {
    let points = match sweep_scenario(&scenario) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return error_code(&e);
        }
    };
    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return EXIT_INPUT;
    }
    let csv = render_csv(&points, args.bits);
    let csv_path = args.out.join("sweep.csv");
    let json_path = args.out.join("sweep.json");
    let report = SweepReportFile {
        manifest: &manifest,
        points: &points,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serialization");
    if let Err(e) = fs::write(&csv_path, csv).and_then(|_| fs::write(&json_path, json)) {
        eprintln!("error: cannot write outputs: {e}");
        return EXIT_INPUT;
    }
    let passed = points.iter().filter(|p| p.pass).count();
    println!(
        "wrote {} and {} ({} grid points, {} pass)",
        csv_path.display(),
        json_path.display(),
        points.len(),
        passed
    );
    if args.strict && passed != points.len() {
        EXIT_VERIFY
    } else {
        0
    }
}

fn render_csv(points: &[SweepPoint<f64>], bits: bool) -> String {
    let k = points.first().map(|p| p.per_user.len()).unwrap_or(0);
    let mut header =
        "snr,I_joint,I_joint_se,mmse_total,psi,dIdsnr_fd,dIdsnr_fd_se,residual_thm1,pass"
            .to_string();
    for u in 1..=k {
        header.push_str(&format!(",mmse_{u},I_cond_{u},I_marg_{u},gap_{u}"));
    }
    let conv = if bits {
        std::f64::consts::LN_2.recip()
    } else {
        1.0
    };
    let mut out = header;
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}",
            p.snr,
            p.i_joint.value * conv,
            p.i_joint.std_error * conv,
            p.mmse_total,
            p.psi,
            p.didsnr_fd.value,
            p.didsnr_fd.std_error,
            p.residual_thm1,
            p.pass
        ));
        for u in &p.per_user {
            out.push_str(&format!(
                ",{},{},{},{}",
                u.mmse,
                u.i_cond * conv,
                u.i_marg * conv,
                u.gap * conv
            ));
        }
        out.push('\n');
    }
    out
}

fn cmd_verify(args: &RunArgs, scenario: Scenario64, manifest: RunManifest) -> i32 {
    let gaussian = scenario.system.all_gaussian();
    if !gaussian && !scenario.system.all_discrete() {
        eprintln!("error: mixed input laws unsupported");
        return EXIT_INPUT;
    }
    let mut reports: Vec<IdentityReport<f64>> = Vec::new();
    let last = scenario.snr_grid.len() - 1;
    for (i, &snr) in scenario.snr_grid.iter().enumerate() {
        let point = if gaussian {
            verify_gaussian(&scenario, snr)
        } else {
            verify_derivative_identity(&scenario, snr).and_then(|mut r| {
                // the gap integral is the expensive family; run it once, at
                // the top of the grid
                let sic = verify_sic_with(&scenario, snr, i == last)?;
                r.extend(sic);
                Ok(r)
            })
        };
        match point {
            Ok(r) => reports.extend(r),
            Err(e) => {
                eprintln!("error: {e}");
                return error_code(&e);
            }
        }
    }
    for r in &reports {
        println!(
            "{:<26} snr={:<10.5} lhs={:>13.6e} rhs={:>13.6e} resid={:>10.3e} sigma={:>9.3e} {}",
            r.id,
            r.snr,
            r.lhs,
            r.rhs,
            r.residual,
            r.std_error,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return EXIT_INPUT;
    }
    let json_path = args.out.join("verify.json");
    let file = VerifyReportFile {
        manifest: &manifest,
        reports: &reports,
    };
    if let Err(e) = fs::write(
        &json_path,
        serde_json::to_string_pretty(&file).expect("report"),
    ) {
        eprintln!("error: cannot write {}: {e}", json_path.display());
        return EXIT_INPUT;
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!(
        "{} identities checked, {} failed; report at {}",
        reports.len(),
        failed,
        json_path.display()
    );
    if failed > 0 { EXIT_VERIFY } else { 0 }
}

fn cmd_scenario_init(name: &str, out: &Path) -> i32 {
    let file = match presets::preset(name) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    if let Err(e) = fs::create_dir_all(out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return EXIT_INPUT;
    }
    let path = out.join(format!("{name}.json"));
    match fs::write(&path, file.to_json_string()) {
        Ok(()) => {
            println!("wrote {}", path.display());
            0
        }
        Err(e) => {
            eprintln!("error: cannot write {}: {e}", path.display());
            EXIT_INPUT
        }
    }
}
