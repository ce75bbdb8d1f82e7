//! Command-line surface: deterministic runs, stochastic ensembles, offline
//! diagnostics, profile comparison, and kernel validation.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 solver abort on the
//! escape threshold, 4 corrupt or missing trajectory data, 5 insufficient
//! window mass for profile work, 6 kernel validation failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coaglab::config::{ConfigError, RunConfigFile, ValidatedConfig};
use coaglab::diagnostics::SnapshotSource;
use coaglab::io::{
    sha256_hex, write_atomic, ReportRecord, TrajectoryDir, TrajectoryWriter,
};
use coaglab::kernel::{
    check_bounds, check_homogeneity, check_lower_product_bound, default_sample_pairs,
    KernelFamily, QForm,
};
use coaglab::lattice::Composition;
use coaglab::report::run_diagnostics;
use coaglab::selfsimilar::{compare_to_explicit, extract_profile, SelfSimilarError};
use coaglab::solver::{run_with, SolverError};
use coaglab::ssa::{ensemble_stats, ssa_run};

#[derive(Parser)]
#[command(
    name = "coaglab",
    version,
    about = "Numerical laboratory for multicomponent coagulation equations"
)]
struct Cli {
    /// Run configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `output`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; overrides COAGLAB_THREADS. Results do not depend on
    /// this setting.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Verbose progress on stderr.
    #[arg(long, global = true, default_value_t = false)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the deterministic system and run the enabled diagnostics.
    Run,
    /// Run the stochastic particle ensemble from the config's ssa block.
    Ssa,
    /// Recompute diagnostics offline from a stored trajectory directory.
    Diagnose { dir: PathBuf },
    /// Compare late-time extracted profiles against the explicit attractor.
    CompareProfile {
        dir: PathBuf,
        /// Direction window half-width (1-norm) for the extraction.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        bins: Option<usize>,
        /// Earliest snapshot time considered late.
        #[arg(long)]
        t_min: Option<f64>,
    },
    /// Check the configured kernel against its declared class bounds.
    ValidateKernel {
        /// Extra random lattice sample pairs beyond the default grid.
        #[arg(long, default_value_t = 0)]
        samples: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("COAGLAB_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
        .max(1);
    if cli.verbose {
        eprintln!("coaglab: thread budget {threads} (evaluation is sequential and thread-count independent)");
    }
    let code = match &cli.command {
        Command::Run => cmd_run(&cli),
        Command::Ssa => cmd_ssa(&cli),
        Command::Diagnose { dir } => cmd_diagnose(&cli, dir),
        Command::CompareProfile {
            dir,
            delta,
            bins,
            t_min,
        } => cmd_compare_profile(&cli, dir, *delta, *bins, *t_min),
        Command::ValidateKernel { samples } => cmd_validate_kernel(&cli, *samples),
    };
    match code {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("coaglab: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(2, e.to_string())
    }
}

impl From<coaglab::io::IoError> for CliError {
    fn from(e: coaglab::io::IoError) -> Self {
        CliError::new(4, e.to_string())
    }
}

fn load_config(cli: &Cli) -> Result<(Vec<u8>, RunConfigFile), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::new(2, "--config <FILE> is required for this command"))?;
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::new(2, format!("cannot read config {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::new(2, "config file is not valid UTF-8"))?;
    let file = RunConfigFile::from_json(&text)?;
    Ok((bytes, file))
}

fn out_dir(cli: &Cli, config: &RunConfigFile, default_name: &str) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(default_name))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    write_atomic(path, serde_json::to_string_pretty(value).unwrap().as_bytes())?;
    Ok(())
}

fn cmd_run(cli: &Cli) -> Result<(), CliError> {
    let (bytes, file) = load_config(cli)?;
    let config_sha = sha256_hex(&bytes);
    let kernel_sha = file.kernel_digest();
    let config_value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| CliError::new(2, e.to_string()))?;
    let validated: ValidatedConfig = file.validate(true)?;
    let dir = out_dir(cli, &validated.file, "coaglab_run");
    let mut writer = TrajectoryWriter::create(&dir)?;

    if cli.verbose {
        eprintln!("coaglab: integrating to t = {}", validated.solver.t_end);
    }
    let result = run_with(
        &validated.initial,
        &validated.kernel,
        &validated.solver,
        |_, state| {
            writer
                .write_snapshot(&state)
                .map_err(|e| SolverError::Sink(e.to_string()))
        },
    );
    match result {
        Ok(report) => {
            let record = ReportRecord {
                initial_mass: report.initial_mass.clone(),
                mass_defect: report.mass_defect.clone(),
                max_rel_mass_defect: report.max_rel_mass_defect,
                escaped_fraction: report.escaped_fraction,
                clipped_mass: report.clipped_mass.clone(),
                steps_accepted: report.stats.accepted,
                steps_rejected: report.stats.rejected,
                rhs_evals: report.stats.rhs_evals,
                final_time: report.final_time,
            };
            writer.finish(config_value, config_sha, kernel_sha, "complete", Some(record))?;
            if validated.file.diagnostics.enabled {
                write_diagnostics(&dir, &validated.file)?;
            }
            if cli.verbose {
                eprintln!(
                    "coaglab: complete; mass defect {:.3e}, escaped fraction {:.3e}",
                    report.max_rel_mass_defect, report.escaped_fraction
                );
            }
            Ok(())
        }
        Err(SolverError::EscapeThreshold {
            time,
            fraction,
            threshold,
        }) => {
            writer.finish(
                config_value,
                config_sha,
                kernel_sha,
                "aborted_escape_threshold",
                None,
            )?;
            Err(CliError::new(
                3,
                format!(
                    "escaped mass fraction {fraction:.3e} exceeded {threshold:.3e} at t = {time:.4e}; \
                     raise n_max or the escape_abort_fraction"
                ),
            ))
        }
        Err(e) => Err(CliError::new(1, e.to_string())),
    }
}

fn write_diagnostics(dir: &Path, file: &RunConfigFile) -> Result<(), CliError> {
    let mut source = TrajectoryDir::open(dir)?;
    let output = run_diagnostics(&mut source, file)
        .map_err(|e| CliError::new(1, format!("diagnostics failed: {e}")))?;
    write_atomic(&dir.join("diagnostics.jsonl"), output.jsonl.as_bytes())?;
    write_json(&dir.join("summary.json"), &output.summary)?;
    for (name, body) in &output.csv_mirrors {
        write_atomic(&dir.join(name), body.as_bytes())?;
    }
    Ok(())
}

fn cmd_ssa(cli: &Cli) -> Result<(), CliError> {
    let (bytes, file) = load_config(cli)?;
    let config_sha = sha256_hex(&bytes);
    let validated = file.validate(true)?;
    let ssa = validated
        .file
        .ssa
        .as_ref()
        .ok_or_else(|| CliError::new(2, "the config has no ssa block"))?;
    if ssa.record_times.is_empty() {
        return Err(CliError::new(2, "ssa.record_times must be non-empty"));
    }
    let t_end = *ssa.record_times.last().unwrap();

    // Integer particle counts with the initial composition distribution.
    let m0_count: f64 = validated
        .initial
        .concentrations
        .values()
        .copied()
        .sum();
    let mut counts: Vec<(Composition, u64)> = Vec::new();
    for (comp, &n) in &validated.initial.concentrations {
        let c = (ssa.n_particles as f64 * n / m0_count).round() as u64;
        if c > 0 {
            counts.push((comp.clone(), c));
        }
    }

    let dir = out_dir(cli, &validated.file, "coaglab_ssa");
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::new(1, format!("cannot create {}: {e}", dir.display())))?;

    let mut runs = Vec::new();
    let mut run_digests = Vec::new();
    for &seed in &ssa.seeds {
        if cli.verbose {
            eprintln!("coaglab: ssa seed {seed}");
        }
        let run = ssa_run(
            &counts,
            ssa.volume,
            &validated.kernel,
            seed,
            t_end,
            &ssa.record_times,
        )
        .map_err(|e| CliError::new(1, e.to_string()))?;
        let seed_dir = dir.join(format!("seed_{seed:04}"));
        std::fs::create_dir_all(&seed_dir)
            .map_err(|e| CliError::new(1, format!("cannot create {}: {e}", seed_dir.display())))?;
        let mut digest_input = String::new();
        for (i, state) in run.states.iter().enumerate() {
            let csv = coaglab::io::snapshot_to_csv(state);
            digest_input.push_str(&csv);
            write_atomic(&seed_dir.join(format!("rec_{i:03}.csv")), csv.as_bytes())?;
            let header = coaglab::io::snapshot_header(state);
            write_atomic(
                &seed_dir.join(format!("rec_{i:03}.json")),
                serde_json::to_string_pretty(&header).unwrap().as_bytes(),
            )?;
        }
        run_digests.push(serde_json::json!({
            "seed": seed,
            "sha256": sha256_hex(digest_input.as_bytes()),
            "events": run.events,
            "initial_particles": run.initial_particles,
            "final_particles": run.final_particles,
            "extinct_at": run.extinct_at,
        }));
        runs.push(run);
    }

    // Ensemble mean and standard error at each record time.
    let ensemble_dir = dir.join("ensemble");
    std::fs::create_dir_all(&ensemble_dir)
        .map_err(|e| CliError::new(1, format!("cannot create {}: {e}", ensemble_dir.display())))?;
    if runs.len() >= 2 {
        for i in 0..ssa.record_times.len() {
            let states: Vec<_> = runs.iter().map(|r| &r.states[i]).collect();
            let stats = ensemble_stats(&states).map_err(|e| CliError::new(1, e.to_string()))?;
            write_atomic(
                &ensemble_dir.join(format!("mean_{i:03}.csv")),
                coaglab::io::snapshot_to_csv(&stats.mean).as_bytes(),
            )?;
            let mut stderr_csv = String::new();
            for k in 1..=stats.mean.d() {
                stderr_csv.push_str(&format!("alpha_{k},"));
            }
            stderr_csv.push_str("stderr\n");
            for (comp, err) in &stats.stderr {
                for &a in comp.components() {
                    stderr_csv.push_str(&a.to_string());
                    stderr_csv.push(',');
                }
                stderr_csv.push_str(&format!("{err}\n"));
            }
            write_atomic(
                &ensemble_dir.join(format!("stderr_{i:03}.csv")),
                stderr_csv.as_bytes(),
            )?;
        }
    }

    let manifest = serde_json::json!({
        "format_version": 1,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config_sha256": config_sha,
        "kernel_sha256": validated.file.kernel_digest(),
        "n_particles": ssa.n_particles,
        "volume": ssa.volume,
        "record_times": ssa.record_times,
        "runs": run_digests,
    });
    write_json(&dir.join("ensemble_manifest.json"), &manifest)?;
    Ok(())
}

fn cmd_diagnose(cli: &Cli, dir: &Path) -> Result<(), CliError> {
    let mut source = TrajectoryDir::open(dir)?;
    // The manifest embeds the full config; an explicit --config overrides
    // the diagnostics section only.
    let mut file: RunConfigFile =
        serde_json::from_value(source.manifest.config.clone())
            .map_err(|e| CliError::new(4, format!("manifest config unreadable: {e}")))?;
    if cli.config.is_some() {
        let (_, override_file) = load_config(cli)?;
        file.diagnostics = override_file.diagnostics;
    }
    // Touch every snapshot so corruption surfaces before any output.
    for i in 0..source.len() {
        source
            .get(i)
            .map_err(|e| CliError::new(4, e.to_string()))?;
    }
    let out = cli.out.clone().unwrap_or_else(|| dir.to_path_buf());
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::new(1, format!("cannot create {}: {e}", out.display())))?;
    let output = run_diagnostics(&mut source, &file)
        .map_err(|e| CliError::new(1, format!("diagnostics failed: {e}")))?;
    write_atomic(&out.join("diagnostics.jsonl"), output.jsonl.as_bytes())?;
    write_json(&out.join("summary.json"), &output.summary)?;
    for (name, body) in &output.csv_mirrors {
        write_atomic(&out.join(name), body.as_bytes())?;
    }
    Ok(())
}

fn cmd_compare_profile(
    cli: &Cli,
    dir: &Path,
    delta: Option<f64>,
    bins: Option<usize>,
    t_min: Option<f64>,
) -> Result<(), CliError> {
    let mut source = TrajectoryDir::open(dir)?;
    let file: RunConfigFile = serde_json::from_value(source.manifest.config.clone())
        .map_err(|e| CliError::new(4, format!("manifest config unreadable: {e}")))?;
    let kernel = file.build_kernel()?;
    let d = file.d;
    let q = match &kernel.family {
        KernelFamily::RayConstant { q } => q.clone(),
        KernelFamily::Constant { value } => QForm::constant(*value, d),
        _ => {
            return Err(CliError::new(
                2,
                "profile comparison needs a ray-constant or constant kernel",
            ))
        }
    };
    let gamma = file.kernel.gamma;
    let delta = delta.unwrap_or(file.diagnostics.profile_delta);
    let bins = bins.unwrap_or(file.diagnostics.profile_bins);
    let t_min = t_min
        .or(file.diagnostics.profile_t_min)
        .unwrap_or(100.0);

    let (_, first) = source
        .get(0)
        .map_err(|e| CliError::new(4, e.to_string()))?;
    let m0: f64 = first.accounted_mass_vector().iter().sum();

    let extracted = match extract_profile(&mut source, gamma, delta, t_min, bins) {
        Ok(profiles) => profiles,
        Err(SelfSimilarError::OutOfSpan) => {
            return Err(CliError::new(
                5,
                format!("no snapshots at t >= {t_min}; the trajectory ends too early"),
            ))
        }
        Err(e) => return Err(CliError::new(1, e.to_string())),
    };
    let last = extracted.last().unwrap();
    let comparison = compare_to_explicit(last, &q, m0)
        .map_err(|e| CliError::new(1, e.to_string()))?;
    let report = serde_json::json!({
        "time": last.time,
        "delta": delta,
        "bins": bins,
        "window_mass_fraction": comparison.window_mass_fraction,
        "l1_error": comparison.l1_error,
        "linf_error": comparison.linf_error,
        "fitted_decay_rate": comparison.fitted_decay_rate,
        "expected_decay_rate": comparison.expected_decay_rate,
        "flagged_low_mass": last.flagged_low_mass,
    });
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| dir.join("profile_comparison.json"));
    write_json(&out, &report)?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    if last.flagged_low_mass {
        return Err(CliError::new(
            5,
            format!(
                "direction window captured only {:.1}% of the mass",
                100.0 * comparison.window_mass_fraction
            ),
        ));
    }
    Ok(())
}

fn cmd_validate_kernel(cli: &Cli, extra_samples: usize) -> Result<(), CliError> {
    let (_, file) = load_config(cli)?;
    // Field-level problems are configuration errors; violations of the
    // kernel class itself (bad parameters, Q escaping its bounds) are
    // validation failures.
    let (family, params) = file
        .build_kernel_parts()
        .map_err(|e| CliError::new(2, e.to_string()))?;
    let spec = coaglab::kernel::KernelSpec::new(family, params)
        .map_err(|e| CliError::new(6, format!("kernel validation failed: {e}")))?;

    let mut samples = default_sample_pairs::<f64>(file.d);
    if extra_samples > 0 {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0xC0A6);
        for _ in 0..extra_samples {
            let point = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<f64> {
                loop {
                    let p: Vec<f64> = (0..file.d)
                        .map(|_| (rng.random::<f64>() * 16.0).exp2().floor())
                        .collect();
                    if p.iter().sum::<f64>() > 0.0 {
                        return p;
                    }
                }
            };
            let x = point(&mut rng);
            let y = point(&mut rng);
            samples.push((x, y));
        }
    }

    let bounds = check_bounds(&spec, &samples).map_err(|e| CliError::new(1, e.to_string()))?;
    let homogeneity = check_homogeneity(&spec, &samples, &[1e-3, 1.0, 1e3], 1e-12)
        .map_err(|e| CliError::new(1, e.to_string()))?;
    let lower = check_lower_product_bound(&spec, &samples)
        .map_err(|e| CliError::new(1, e.to_string()))?;

    let report = serde_json::json!({
        "samples": samples.len(),
        "bounds": {
            "pass": bounds.pass,
            "worst_ratio_low": bounds.worst_ratio_low,
            "worst_ratio_high": bounds.worst_ratio_high,
            "worst_low_sample": bounds.worst_low_sample,
            "worst_high_sample": bounds.worst_high_sample,
        },
        "homogeneity": {
            "pass": homogeneity.pass,
            "worst_error": homogeneity.worst_error,
            "worst_sample": homogeneity.worst_sample,
        },
        "lower_product_bound": {
            "pass": lower.pass,
            "worst_error": lower.worst_error,
            "worst_sample": lower.worst_sample,
        },
    });
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    if let Some(out) = &cli.out {
        write_json(out, &report)?;
    }
    if !bounds.pass {
        return Err(CliError::new(
            6,
            format!(
                "kernel escapes its declared envelope: worst high ratio {} at sample {:?}",
                bounds.worst_ratio_high, bounds.worst_high_sample
            ),
        ));
    }
    if !homogeneity.pass {
        return Err(CliError::new(
            6,
            format!(
                "kernel is not homogeneous of the declared degree: worst error {} at {:?}",
                homogeneity.worst_error, homogeneity.worst_sample
            ),
        ));
    }
    if !lower.pass {
        return Err(CliError::new(
            6,
            format!(
                "kernel violates the product-form lower bound: worst error {} at {:?}",
                lower.worst_error, lower.worst_sample
            ),
        ));
    }
    Ok(())
}
