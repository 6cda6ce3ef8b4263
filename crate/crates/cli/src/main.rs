//! `dvdflow`: runs experiment configs, convergence studies, tableau
//! certificate checks and the shrinking-circle benchmark.
//!
//! Exit codes: 0 success, 1 a check ran and failed, 2 config error,
//! 3 solver failure, 4 I/O error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dvdflow::grid::mass;
use dvdflow::harness::{
    convergence_study, parse_list, preset, radius_benchmark, run, write_csv, ExperimentConfig,
    HarnessError, PRESET_NAMES,
};
use dvdflow::tableau::{
    build_certificate, builtin_tableau, expand_matrix, find_partition_vector,
    reference_partition_vector, DvdTableau, StabilityCertificate, BUILTIN_SCHEMES,
};

#[derive(Parser)]
#[command(
    name = "dvdflow",
    version,
    about = "Energy-stable gradient-flow time stepping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Seed for random initial data.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the CSV and snapshots.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file or a preset (example1..example4).
    Run {
        config: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Step-halving study against the same scheme at h_min/32.
    Convergence {
        config: String,
        /// Comma-separated step sizes.
        #[arg(long)]
        h: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Search a PSD stability certificate for a builtin or file tableau.
    TableauCheck { tableau: String },
    /// Shrinking-circle run checked against the sharp-interface law.
    RadiusBench {
        config: String,
        #[command(flatten)]
        overrides: Overrides,
    },
}

enum Failure {
    Harness(HarnessError),
    Check(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Harness(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Harness(HarnessError::Io(e))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => cmd_run(&config, &overrides),
        Command::Convergence {
            config,
            h,
            overrides,
        } => cmd_convergence(&config, &h, &overrides),
        Command::TableauCheck { tableau } => cmd_tableau_check(&tableau),
        Command::RadiusBench { config, overrides } => cmd_radius_bench(&config, &overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Harness(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// A path, or a preset name when no such file exists.
fn load_config(arg: &str, o: &Overrides) -> Result<ExperimentConfig, HarnessError> {
    let path = Path::new(arg);
    let text = if path.exists() {
        fs::read_to_string(path)?
    } else if let Some(p) = preset(arg) {
        p.to_string()
    } else {
        return Err(HarnessError::Config(format!(
            "`{arg}` is neither a file nor a preset ({})",
            PRESET_NAMES.join(", ")
        )));
    };
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &o.out_dir {
        cfg.output.dir = Some(dir.clone());
    }
    Ok(cfg)
}

fn cmd_run(arg: &str, o: &Overrides) -> Result<(), Failure> {
    let cfg = load_config(arg, o)?;
    let out = run(&cfg)?;
    if cfg.output.dir.is_none() {
        write_csv(io::stdout().lock(), &out.rows)?;
        return Ok(());
    }
    let last = out
        .rows
        .last()
        .expect("a valid config has at least one step");
    eprintln!(
        "{} {} steps to t = {}: energy {:.10e}, mass drift {:.3e}",
        cfg.scheme.name(),
        out.rows.len(),
        last.time,
        last.energy,
        last.mass - mass(&out.initial)
    );
    for f in &out.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_convergence(arg: &str, h: &str, o: &Overrides) -> Result<(), Failure> {
    let cfg = load_config(arg, o)?;
    let hs = parse_list(h, "--h")?;
    let table = convergence_study(&cfg, &hs)?;
    let mut text = String::from("h,error,rate\n");
    for r in &table.rows {
        let rate = r.rate.map_or(String::new(), |x| format!("{x:.4}"));
        text.push_str(&format!("{:.6e},{:.6e},{rate}\n", r.h, r.error));
    }
    println!("# {} against h = {:e}", table.scheme, table.reference_h);
    print!("{text}");
    if let Some(dir) = &cfg.output.dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("convergence.csv"), text)?;
    }
    Ok(())
}

fn load_tableau(arg: &str) -> Result<DvdTableau, HarnessError> {
    if BUILTIN_SCHEMES.contains(&arg) {
        return builtin_tableau(arg).map_err(|e| HarnessError::Config(e.to_string()));
    }
    let text = fs::read_to_string(arg)?;
    let name = Path::new(arg)
        .file_stem()
        .map_or(arg.to_string(), |s| s.to_string_lossy().into_owned());
    DvdTableau::from_text(name, &text).map_err(|e| HarnessError::Config(e.to_string()))
}

fn certify(tab: &DvdTableau) -> Option<StabilityCertificate> {
    let a = expand_matrix(tab);
    reference_partition_vector(&tab.name)
        .and_then(|v| build_certificate(&a, &v).ok())
        .filter(StabilityCertificate::is_psd)
        .or_else(|| find_partition_vector(&a, tab.nu))
}

fn cmd_tableau_check(arg: &str) -> Result<(), Failure> {
    let tab = load_tableau(arg)?;
    let mut out = io::stdout().lock();
    writeln!(out, "{} (nu = {}, order {})", tab.name, tab.nu, tab.order)?;
    write!(out, "{}", tab.to_text())?;
    match certify(&tab) {
        Some(cert) => {
            let v: Vec<String> = cert.v.iter().map(ToString::to_string).collect();
            writeln!(out, "partition vector: [{}]", v.join(", "))?;
            writeln!(out, "B =")?;
            for row in &cert.b {
                let r: Vec<String> = row.iter().map(|x| format!("{x:>8}")).collect();
                writeln!(out, "  {}", r.join(" "))?;
            }
            writeln!(out, "min eigenvalue: {:.3e}", cert.min_eigenvalue)?;
            writeln!(out, "certified: energy stable for every G <= 0")?;
            Ok(())
        }
        None => Err(Failure::Check(format!(
            "{}: no partition vector with a PSD certificate found",
            tab.name
        ))),
    }
}

fn cmd_radius_bench(arg: &str, o: &Overrides) -> Result<(), Failure> {
    let cfg = load_config(arg, o)?;
    let out = run(&cfg)?;
    let v = radius_benchmark(&cfg, &out.rows)?;
    let mut w = io::stdout().lock();
    writeln!(w, "time,radius,law_radius,rel_error_r2")?;
    let stride = (out.rows.len() / 40).max(1);
    for row in out.rows.iter().filter(|r| r.step % stride == 0) {
        let r = row.radius.unwrap_or(f64::NAN);
        let law = v.law(row.time);
        writeln!(
            w,
            "{},{:.6},{:.6},{:.3e}",
            row.time,
            r,
            law.max(0.0).sqrt(),
            (r * r - law).abs() / (v.r0 * v.r0)
        )?;
    }
    writeln!(
        w,
        "# R0 = {}, k = {:.6}, monotone after t = {}: {}, max middle-half error {:.3e}",
        v.r0, v.k, v.relax_time, v.monotone, v.max_rel_error
    )?;
    if v.pass() {
        writeln!(w, "PASS")?;
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "FAIL: first non-decrease at t = {:?}, max error {:.3e}",
            v.first_violation, v.max_rel_error
        )))
    }
}
