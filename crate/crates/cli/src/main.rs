use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qmt::hybrid::Label;
use qmt::hysteresis::Mode;
use qmt_cli::pipeline::{cmd_synth, load_artifacts};
use qmt_cli::runs::{cmd_certify, cmd_cutlocus, cmd_simulate};
use qmt_cli::sweep::cmd_sweep;
use qmt_cli::{Result, ScenarioConfig};

#[derive(Parser)]
#[command(name = "qmt", version, about = "Quasi-minimal-time hybrid feedback: synthesis, simulation and sweeps")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `corrected` or `strict-paper-sets`.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the time field, cut locus, escape patches and feedback manifest.
    Synth,
    /// One closed-loop run with its certificate.
    Simulate {
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        /// Initial label: `omega`, `p<i>`, or `nearest`.
        #[arg(long, default_value = "omega")]
        s0: String,
    },
    /// Grid sweep over the working box.
    Sweep,
    /// Dump the flagged cells.
    Cutlocus,
    /// Re-check the certificate of a stored arc.
    Certify {
        /// Arc written by `simulate`; defaults to `<out>/arc.json`.
        #[arg(long)]
        arc: Option<PathBuf>,
    },
}

fn config(c: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &c.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = c.mode {
        cfg.mode = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli.common)?;
    println!("config_hash = {}", cfg.hash());
    match cli.cmd {
        Command::Synth => {
            let (r, _) = cmd_synth(&cfg)?;
            println!("covered cells = {}", r.covered);
            println!("flagged cells = {} in {} components", r.flagged, r.components);
            println!("escape patches = {} (max overlap {})", r.patches, r.max_overlap);
            println!("epsilon = {}", r.epsilon);
            println!("optimal shell widths = {:?}", r.omega_widths);
            println!("artifacts in {}", cfg.out.display());
        }
        Command::Simulate { x0, s0 } => {
            let art = load_artifacts(&cfg)?;
            let s0 = if s0 == "nearest" {
                art.feedback.nearest_patch(&x0).unwrap_or(Label::Omega)
            } else {
                s0.parse().map_err(|e: qmt::Error| qmt_cli::CliError::Config(e.to_string()))?
            };
            let r = cmd_simulate(&cfg, &art, &x0, s0)?;
            let arc = &r.stored.arc;
            println!("outcome = {:?}", arc.outcome);
            if let Some(t) = r.t_hat {
                println!("t_hat = {t}");
            }
            for j in &arc.jumps {
                println!("jump t = {} j = {}: {} -> {} ({}/{})", j.t, j.j, j.from, j.to, j.chain_pos, j.chain_len);
            }
            println!("max |x - target| = {}", r.max_excursion);
            print!("{}", r.certificate);
        }
        Command::Sweep => {
            let art = load_artifacts(&cfg)?;
            let s = cmd_sweep(&cfg, &art, cli.common.threads)?;
            print!("{}", toml::to_string(&s).expect("summary serialises"));
        }
        Command::Cutlocus => {
            let art = load_artifacts(&cfg)?;
            let p = cmd_cutlocus(&cfg, &art)?;
            println!("{} flagged cells -> {}", art.model.flagged.len(), p.display());
        }
        Command::Certify { arc } => {
            let art = load_artifacts(&cfg)?;
            let path = arc.unwrap_or_else(|| cfg.out.join("arc.json"));
            let rep = cmd_certify(&cfg, &art, &path)?;
            print!("{rep}");
            if !rep.ok() {
                return Err(qmt_cli::CliError::Uncertified(rep.violations.len()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
