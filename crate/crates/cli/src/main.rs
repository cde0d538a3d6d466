use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use memnet_cli::{checkpoint, config::FullConfig, dataset, evaluate, gradsuite, pnm, synth, trainer};

#[derive(Parser)]
#[command(name = "memnet", about = "Memory-augmented multi-stage image restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset.
    Synth {
        /// Degradation kind: shadow, rain or blur.
        #[arg(long, value_parser = parse_kind)]
        kind: synth::Kind,
        #[arg(long, default_value_t = 32)]
        count: usize,
        /// Square image extent in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-phase training over a paired dataset directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Optional held-out directory for periodic validation metrics.
        #[arg(long)]
        val_data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint over a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Directory holding `<id>_mask.pgm` files, if not alongside the data.
        #[arg(long)]
        mask_dir: Option<PathBuf>,
        /// Write the per-image CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the four memory/contrast switch combinations and compare.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full finite-difference gradient suite.
    Gradcheck,
    /// Dump stage-1 feature mosaics before and after the memory read.
    DumpFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<synth::Kind, String> {
    s.parse::<synth::Kind>().map_err(|e| e.to_string())
}

fn run(cli: Cli) -> memnet_cli::Result<()> {
    match cli.command {
        Command::Synth {
            kind,
            count,
            size,
            seed,
            out,
        } => {
            synth::generate_dataset(kind, count, size, size, seed, &out)?;
            println!("wrote {count} pairs to {}", out.display());
        }
        Command::Train {
            config,
            data,
            val_data,
            out,
        } => {
            let cfg = FullConfig::load(&config)?;
            let train_pairs = dataset::load_dir(&data)?;
            let val_pairs = match val_data {
                Some(dir) => dataset::load_dir(dir)?,
                None => Vec::new(),
            };
            let outcome = trainer::train(&cfg, &train_pairs, &val_pairs, Some(&out))?;
            let last = outcome.log.last();
            println!(
                "trained {} iterations, final loss {}",
                outcome.state.iteration,
                last.map(|r| format!("{:.6}", r.total)).unwrap_or_default()
            );
            println!("checkpoint and log.csv written to {}", out.display());
        }
        Command::Eval {
            checkpoint: ck_path,
            data,
            mask_dir,
            out,
        } => {
            let state = checkpoint::restore(&checkpoint::Checkpoint::load(&ck_path)?)?;
            let pairs = dataset::load_dir_with_masks(&data, mask_dir.as_deref())?;
            let report = evaluate::evaluate(&state.net, &pairs)?;
            let csv = evaluate::report_to_csv(&report);
            match out {
                Some(path) => std::fs::write(&path, csv)
                    .map_err(|e| memnet_cli::CliError::io(path, e))?,
                None => print!("{csv}"),
            }
        }
        Command::Ablate { config, data, out } => {
            let cfg = FullConfig::load(&config)?;
            let named = dataset::load_dir_named(&data)?;
            // hold out one quarter (at least one sample) for the comparison
            let holdout = (named.len() / 4).max(1);
            let (test, train) = named.split_at(holdout);
            let train_pairs: Vec<_> = train.iter().map(|(_, p)| p.clone()).collect();
            let rows = evaluate::ablate(&cfg, &train_pairs, test)?;
            let table = evaluate::ablation_table(&rows);
            std::fs::write(&out, &table).map_err(|e| memnet_cli::CliError::io(out, e))?;
            print!("{table}");
        }
        Command::Gradcheck => {
            let mut results = Vec::new();
            let ok = gradsuite::run(&mut results);
            for r in &results {
                println!(
                    "{} {:<28} max error {:.3e}",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.name,
                    r.error
                );
            }
            if !ok {
                return Err(memnet_cli::CliError::Usage(
                    "gradient checks failed".into(),
                ));
            }
            println!("all {} gradient checks passed", results.len());
        }
        Command::DumpFeatures {
            checkpoint: ck_path,
            image,
            out,
        } => {
            let state = checkpoint::restore(&checkpoint::Checkpoint::load(&ck_path)?)?;
            let img = pnm::load_pnm(&image)?;
            evaluate::dump_features(&state.net, &img, &out)?;
            println!("feature mosaics written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
