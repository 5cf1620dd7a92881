//! `readkit train | evaluate | infer`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use readkit_core::models::ModelKind;

use crate::config::RunConfig;
use crate::error::Result;
use crate::pipeline::{run_evaluate, run_infer, run_train};

#[derive(Debug, Parser)]
#[command(name = "readkit", version, about = "Train and run span-extraction reading comprehension models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on --train-file, select on --dev-file, write into --save-dir.
    Train(Flags),
    /// Print {"exact_match", "f1"} for --predictions, or for the model in
    /// --save-dir, against --dev-file.
    Evaluate(Flags),
    /// Write predictions for --dev-file with the model in --save-dir.
    Infer(Flags),
}

/// Every flag overrides the same-named key of the --config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train_file: Option<PathBuf>,
    #[arg(long)]
    pub dev_file: Option<PathBuf>,
    #[arg(long)]
    pub embedding_file: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub save_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub predictions_out: Option<PathBuf>,
    /// Predictions file to score (evaluate only).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub ema_decay: Option<f64>,
    #[arg(long)]
    pub patience: Option<u32>,
    /// Continue from last.ckpt in --save-dir when present.
    #[arg(long)]
    pub resume: bool,
}

impl Flags {
    /// The config file (or defaults) with flag values applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    c.$field = v.clone().into();
                }
            )*};
        }
        set!(train_file, dev_file, embedding_file, save_dir, predictions_out, predictions);
        set!(model, seed, epochs, batch_size, hidden_size, dropout, ema_decay, patience);
        c.resume |= self.resume;
        Ok(c)
    }
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Train(flags) => {
            let state = run_train(&flags.resolve()?)?;
            let best = state.best.map(|b| {
                serde_json::json!({ "epoch": b.epoch, "exact_match": b.exact_match, "f1": b.f1 })
            });
            println!(
                "{}",
                serde_json::json!({ "epochs": state.epoch, "steps": state.global_step, "best": best })
            );
        }
        Command::Evaluate(flags) => {
            let scores = run_evaluate(&flags.resolve()?)?;
            println!("{}", serde_json::to_string(&scores).expect("scores serialize"));
        }
        Command::Infer(flags) => {
            let out = run_infer(&flags.resolve()?)?;
            log::info!("wrote {}", out.display());
        }
    }
    Ok(())
}

/// Parses `args` and runs the subcommand. Returns the process exit code:
/// 0 success, 2 configuration or usage error, 3 data error, 4 numeric
/// abort.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "epochs = 7\nbatch_size = 3\nmodel = \"bidaf\"\n").unwrap();
        let cli = Cli::try_parse_from([
            "readkit",
            "train",
            "--config",
            path.to_str().unwrap(),
            "--epochs",
            "2",
            "--model",
            "drqa",
        ])
        .unwrap();
        let Command::Train(flags) = cli.command else { panic!() };
        let c = flags.resolve().unwrap();
        assert_eq!((c.epochs, c.batch_size, c.model), (2, 3, ModelKind::Drqa));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["readkit", "train", "--model", "bert"]), 2);
        assert_eq!(run(["readkit", "fly"]), 2);
        assert_eq!(run(["readkit", "train"]), 2);
    }
}
