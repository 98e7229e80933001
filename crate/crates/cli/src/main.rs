use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use relsym_core::attention::dot_head_forward;
use relsym_core::harness::{
    compare_schemes, emit_comparison, emit_outputs, frame_robustness, run_experiment_threads, ExperimentConfig,
};
use relsym_core::linalg::random::{gaussian_matrix, rng_stream};
use relsym_core::linalg::{random_invertible, random_orthogonal};
use relsym_core::suite::{run_criterion, SuiteOptions, CRITERIA};
use relsym_core::symmetry::{act_qk, act_vo, canonicalize_qk, canonicalize_vo, composite_qk, composite_vo};
use relsym_core::{HeadParams, TokenMatrix};

#[derive(Parser)]
#[command(name = "relsym", version, about = "Symmetry-reduced attention experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write metrics.csv, summary.json and attention_final.csv.
    Run(RunArgs),
    /// Train the same configuration under all four schemes.
    Compare(RunArgs),
    /// Train the relational model on original and rotated data and compare the loss curves.
    FrameCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        frame_seed: u64,
    },
    /// Run the invariant suite and print pass/fail per property.
    Check {
        /// Run only these criteria.
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(CRITERIA))]
        only: Vec<String>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Show one head moved along its orbit.
    GaugeDemo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides output_dir from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Number of seeds trained in parallel.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        Ok(cfg)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6e}"))
}

fn run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = args.load()?;
    let result = run_experiment_threads(&cfg, args.threads)?;
    let files = emit_outputs(&result, &cfg.output_dir)?;
    let failures = result.failures();
    if !args.quiet {
        let stats = result.stats();
        println!(
            "{} seeds, scheme {}: mean final loss {}, variance {}",
            cfg.seeds.len(),
            cfg.optimizer.scheme.name(),
            fmt_opt(stats.mean),
            fmt_opt(stats.var)
        );
        for f in &failures {
            println!("seed {} failed at step {}: {}", f.seed, f.step, f.error);
        }
        println!("wrote {}", files.metrics.display());
        println!("wrote {}", files.summary.display());
        if let Some(a) = &files.attention {
            println!("wrote {}", a.display());
        }
    }
    Ok(if failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn compare(args: &RunArgs) -> Result<ExitCode> {
    let cfg = args.load()?;
    let cmp = compare_schemes(&cfg, args.threads)?;
    let path = emit_comparison(&cmp, &cfg.output_dir)?;
    if !args.quiet {
        println!("{:<18} {:>6} {:>14} {:>14}", "scheme", "seeds", "mean", "variance");
        for (scheme, s) in cmp.stats() {
            println!("{:<18} {:>6} {:>14} {:>14}", scheme.name(), s.count, fmt_opt(s.mean), fmt_opt(s.var));
        }
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn frame_check(config: Option<PathBuf>, seed: u64, frame_seed: u64) -> Result<ExitCode> {
    let cfg = match config {
        Some(p) => ExperimentConfig::load(&p)?,
        None => ExperimentConfig::default(),
    };
    let r = frame_robustness(&cfg, seed, frame_seed)?;
    let ok = r.max_abs_diff <= 1e-8;
    println!(
        "{} frame robustness: {} steps, max |loss - rotated loss| = {:.3e}",
        if ok { "PASS" } else { "FAIL" },
        r.losses.len().saturating_sub(1),
        r.max_abs_diff
    );
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn check(only: &[String], threads: Option<usize>) -> Result<ExitCode> {
    let scratch = tempfile::tempdir().context("creating scratch directory")?;
    let opts = SuiteOptions { scratch: Some(scratch.path().to_owned()), threads };
    let keys: Vec<&str> = if only.is_empty() { CRITERIA.to_vec() } else { only.iter().map(String::as_str).collect() };
    let mut failed = 0;
    for key in keys {
        let Some(report) = run_criterion(key, &opts) else { bail!("unknown criterion {key}") };
        failed += !report.passed() as usize;
        println!("{report}");
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn gauge_demo(seed: u64) -> Result<ExitCode> {
    let (n, d, d_h) = (8, 16, 4);
    let mut r = rng_stream(seed, 0);
    let x = TokenMatrix::new(gaussian_matrix(n, d, 1.0, &mut r))?;
    let p = HeadParams::random(d, d_h, 1.0 / (d as f64).sqrt(), &mut r);
    let rot = random_orthogonal(d_h, seed.wrapping_add(1));
    let m = random_invertible(d_h, seed.wrapping_add(2), 100.0);
    let q = act_vo(&act_qk(&p, &rot)?, &m)?;
    let y = dot_head_forward(&x, &p)?.0;
    let yq = dot_head_forward(&x, &q)?.0;
    let canon = canonicalize_vo(&canonicalize_qk(&q)?.params)?.params;
    let canon_p = canonicalize_vo(&canonicalize_qk(&p)?.params)?.params;

    println!("seed {seed}: n = {n}, d = {d}, d_h = {d_h}");
    println!("parameter change  max|theta' - theta|       = {:.3e}", q.max_abs_diff(&p));
    println!("output change     max|Y' - Y|               = {:.3e}", yq.matrix().max_abs_diff(y.matrix()));
    println!("composite change  max|G_QK' - G_QK|         = {:.3e}", composite_qk(&q).max_abs_diff(&composite_qk(&p)));
    println!("composite change  max|G_VO' - G_VO|         = {:.3e}", composite_vo(&q).max_abs_diff(&composite_vo(&p)));
    println!("canonical form    max|c(theta') - c(theta)| = {:.3e}", canon.max_abs_diff(&canon_p));
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(&a),
        Command::Compare(a) => compare(&a),
        Command::FrameCheck { config, seed, frame_seed } => frame_check(config, seed, frame_seed),
        Command::Check { only, threads } => check(&only, threads),
        Command::GaugeDemo { seed } => gauge_demo(seed),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
