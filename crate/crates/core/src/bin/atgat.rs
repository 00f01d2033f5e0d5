use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use atgat::app::{self, AppConfig};

#[derive(Parser)]
#[command(name = "atgat", about = "Temporal graph attention fraud detection", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` config file; unset keys use defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant; writes checkpoint and history.
    Train,
    /// Score a checkpoint; writes the metrics table.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Repeated-seed ablation; writes the summary and effect-size report.
    Ablate,
    /// Write a synthetic dataset in the three-file format.
    Synth,
    /// Run the gradient-check suite.
    Gradcheck,
}

fn run(cli: Cli) -> atgat::Result<bool> {
    if let Command::Gradcheck = cli.command {
        let (entries, ok) = app::cmd_gradcheck()?;
        for e in &entries {
            println!("{:<28} {:.3e}", e.name, e.report.max_rel_error);
        }
        let max = atgat::diagnostics::suite_max_error(&entries);
        println!("max relative error {max:.3e} ({})", if ok { "ok" } else { "FAILED" });
        return Ok(ok);
    }
    let mut cfg = AppConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    match cli.command {
        Command::Train => {
            let s = app::cmd_train(&cfg)?;
            println!(
                "{}: selected epoch {}, validation AUC {:.4}; wrote {}",
                s.model.variant,
                s.history.selected_epoch,
                s.validation.auc,
                cfg.output_dir.display()
            );
        }
        Command::Eval { checkpoint } => {
            let m = app::cmd_eval(&cfg, checkpoint.as_deref())?;
            print!("{}", m.to_table());
        }
        Command::Ablate => print!("{}", app::cmd_ablate(&cfg)?.to_table()),
        Command::Synth => {
            let g = app::cmd_synth(&cfg)?;
            println!(
                "{} nodes, {} edges, {} illicit; wrote {}",
                g.num_nodes(),
                g.num_edges(),
                g.count_label(atgat::graph_data::Label::Illicit),
                cfg.output_dir.display()
            );
        }
        Command::Gradcheck => unreachable!(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
