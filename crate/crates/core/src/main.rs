use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use irskey::baseline::baseline_detail;
use irskey::config::{linear_to_db, ConfigFile, Point3};
use irskey::experiments::{emit_csv, emit_plot_script, random_solution, run_sweep, Method};
use irskey::net::{self, load_checkpoint, save_checkpoint, write_history_csv};
use irskey::skr::{skr_closed_form, skr_monte_carlo};
use irskey::{ChannelStatistics, Error, PkgSolution, Result, SystemConfig};

#[derive(Parser)]
#[command(name = "irskey", version, about = "Key-rate analysis and optimization for IRS-assisted key generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML file with [system], [train] and [sweep] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form key rate of one configuration at the configured UE location.
    Skr {
        #[command(flatten)]
        common: Common,
        /// baseline, random or pkg_net.
        #[arg(long, default_value = "baseline")]
        method: String,
        /// Trained network, required for pkg_net.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Water-filling baseline with equal IRS phases.
    Baseline {
        #[command(flatten)]
        common: Common,
    },
    /// Trains the network and writes a checkpoint and per-epoch losses.
    Train {
        #[command(flatten)]
        common: Common,
        /// Record wall-clock time per epoch (output is then not reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Runs the [sweep] section and writes a CSV and a plot script.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Compares the closed form with a Monte Carlo estimate.
    McCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "baseline")]
        method: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
    },
}

struct Context {
    file: ConfigFile,
    seed: u64,
    out: PathBuf,
}

fn context(common: &Common) -> Result<Context> {
    let mut file = match &common.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    if let Some(seed) = common.seed {
        file.train.seed = seed;
        if let Some(s) = file.sweep.as_mut() {
            s.seed = seed;
        }
    }
    let seed = common.seed.unwrap_or(file.train.seed);
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    Ok(Context {
        file,
        seed,
        out: common.out.clone(),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn solution_for(method: &str, checkpoint: Option<&Path>, cfg: &SystemConfig, stats: &ChannelStatistics, seed: u64) -> Result<PkgSolution> {
    match method.parse::<Method>()? {
        Method::Baseline => irskey::baseline::baseline_solution(cfg, stats),
        Method::Random => Ok(random_solution(cfg, &mut ChaCha8Rng::seed_from_u64(seed))),
        Method::PkgNet => {
            let path = checkpoint.ok_or(Error::MissingCheckpoint { m: cfg.m, l: cfg.l() })?;
            let (params, _) = load_checkpoint(path)?;
            if params.m != cfg.m || params.l != cfg.l() {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint is for M={}, L={} but the system has M={}, L={}",
                    params.m,
                    params.l,
                    cfg.m,
                    cfg.l()
                )));
            }
            net::infer(&params, &cfg.pos_ue, cfg)
        }
    }
}

fn point(p: &Point3) -> serde_json::Value {
    json!([p[0], p[1], p[2]])
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Skr { common, method, checkpoint } => {
            let ctx = context(&common)?;
            let cfg = &ctx.file.system;
            let stats = ChannelStatistics::new(cfg)?;
            let sol = solution_for(&method, checkpoint.as_deref(), cfg, &stats, ctx.seed)?;
            let report = skr_closed_form(&sol, &stats, cfg.p_b, cfg.noise_power)?;
            println!("{method}: {:.6} bits", report.skr_bits);
            write_json(
                &ctx.out.join("skr.json"),
                &json!({ "method": method, "ue": point(&cfg.pos_ue), "skr_bits": report.skr_bits }),
            )
        }
        Command::Baseline { common } => {
            let ctx = context(&common)?;
            let cfg = &ctx.file.system;
            let stats = ChannelStatistics::new(cfg)?;
            let (sol, wf) = baseline_detail(cfg, &stats)?;
            let report = skr_closed_form(&sol, &stats, cfg.p_b, cfg.noise_power)?;
            println!("baseline: {:.6} bits (water-filling objective {:.6})", report.skr_bits, wf.objective_bits);
            println!("mode powers: {:?}", wf.q);
            write_json(
                &ctx.out.join("baseline.json"),
                &json!({
                    "skr_bits": report.skr_bits,
                    "approx_bits": wf.objective_bits,
                    "mode_powers": wf.q,
                    "mode_eigenvalues": wf.p_b_eigs,
                    "multiplier": wf.mu,
                    "kkt_residual": wf.kkt_residual,
                    "constraint_residual": wf.constraint_residual(),
                }),
            )
        }
        Command::Train { common, timing } => {
            let ctx = context(&common)?;
            let outcome = net::train(&ctx.file.train, &ctx.file.system)?;
            let ckpt = ctx.out.join("pkgnet.json");
            save_checkpoint(&outcome.params, ctx.file.train.seed, &ckpt)?;
            write_history_csv(&outcome.history, &ctx.out.join("train_history.csv"), timing)?;
            if let Some(last) = outcome.history.last() {
                println!("epoch {}: mean loss {:.6} bits", last.epoch, last.mean_loss_bits);
            }
            println!("checkpoint written to {}", ckpt.display());
            Ok(())
        }
        Command::Sweep { common } => {
            let ctx = context(&common)?;
            let spec = ctx
                .file
                .sweep
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("config has no [sweep] section".into()))?;
            let result = run_sweep(spec, &ctx.file.system, &ctx.file.train)?;
            emit_csv(&result, &ctx.out.join("sweep.csv"))?;
            emit_plot_script(&result, &ctx.out.join("plot_sweep.py"))?;
            for r in &result.rows {
                println!("{}={} {}: {:.6} bits", r.variable, r.value, r.method, r.skr_bits);
            }
            Ok(())
        }
        Command::McCheck {
            common,
            method,
            checkpoint,
            samples,
        } => {
            let ctx = context(&common)?;
            let cfg = &ctx.file.system;
            let stats = ChannelStatistics::new(cfg)?;
            let sol = solution_for(&method, checkpoint.as_deref(), cfg, &stats, ctx.seed)?;
            let cf = skr_closed_form(&sol, &stats, cfg.p_b, cfg.noise_power)?;
            let mc = skr_monte_carlo(&sol, &stats, cfg.p_b, cfg.noise_power, samples, ctx.seed)?;
            let se = mc.mc_std_error.unwrap_or(f64::NAN);
            let z = (mc.skr_bits - cf.skr_bits) / se;
            println!(
                "closed form {:.6} bits, Monte Carlo {:.6} ± {:.6} bits (z = {z:.2}, P = {:.1} dBm)",
                cf.skr_bits,
                mc.skr_bits,
                se,
                linear_to_db(cfg.p_a)
            );
            write_json(
                &ctx.out.join("mc_check.json"),
                &json!({
                    "method": method,
                    "samples": samples,
                    "closed_form_bits": cf.skr_bits,
                    "monte_carlo_bits": mc.skr_bits,
                    "std_error": se,
                    "z_score": z,
                    "within_two_se": z.abs() <= 2.0,
                }),
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
