//! The `ssmtl` command line.
//!
//! ```text
//! ssmtl synth    --out DIR [--config FILE] [--seed N]
//! ssmtl stats    --data DIR
//! ssmtl train    --data DIR [--config FILE] --out DIR
//! ssmtl evaluate --data DIR --checkpoint FILE [--split train|val]
//! ssmtl curves   --log FILE --out FILE
//! ```
//!
//! `train` writes `checkpoint.json` (best validation epoch), `epochs.jsonl`
//! (one record per epoch) and `config.txt` (the fully resolved run config,
//! which reproduces the run when fed back). Exit codes: 0 success, 1 usage or
//! invalid config, 2 data error, 3 divergence.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{SynthConfig, TrainConfig};
use crate::data::{parse_manifest, DatasetStats};
use crate::error::{Error, Result};
use crate::synth::{generate_synthetic, load_split, write_synthetic, Split};
use crate::trainer::{evaluate, run_training_with, EpochReport};
use crate::NUM_EXPRESSIONS;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOG_FILE: &str = "epochs.jsonl";
pub const CONFIG_FILE: &str = "config.txt";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ssmtl",
    version,
    about = "Semi-supervised multi-task facial affect training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/val dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print label statistics and class weights of both splits.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train and write checkpoint, epoch log and resolved config.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a split.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Val)]
        split: SplitArg,
    },
    /// Convert an epoch log to CSV.
    Curves {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        Error::Divergence { .. } | Error::NonFinite(_) => EXIT_DIVERGED,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Results go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_line(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

#[derive(Serialize)]
struct StatsRecord<'a> {
    split: &'a str,
    #[serde(flatten)]
    stats: &'a DatasetStats,
    exp_class_weights: [f64; NUM_EXPRESSIONS],
    au_pos_weights: [f64; crate::NUM_AUS],
}

fn stats_line(split: Split, stats: &DatasetStats) -> String {
    let record = StatsRecord {
        split: split.name(),
        stats,
        exp_class_weights: crate::data::expression_class_weights(stats),
        au_pos_weights: crate::data::au_positive_weights(stats),
    };
    serde_json::to_string(&record).expect("stats serialize")
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth {
            out: dir,
            config,
            seed,
        } => {
            let cfg = match config {
                Some(p) => SynthConfig::parse(&read_text(&p)?)?,
                None => SynthConfig::default(),
            };
            let data = generate_synthetic(&cfg, seed)?;
            write_synthetic(&dir, &data)?;
            write_line(out, &stats_line(Split::Train, &data.train.stats()))?;
            write_line(out, &stats_line(Split::Val, &data.val.stats()))
        }
        Command::Stats { data } => {
            for split in [Split::Train, Split::Val] {
                let path = data.join(format!("{}.csv", split.name()));
                let ds = parse_manifest(&read_text(&path)?)?;
                write_line(out, &stats_line(split, &crate::data::dataset_stats(&ds)))?;
            }
            Ok(())
        }
        Command::Train {
            data,
            config,
            out: dir,
        } => {
            let cfg = match config {
                Some(p) => TrainConfig::parse(&read_text(&p)?)?,
                None => TrainConfig::default(),
            };
            train(&data, &cfg, &dir, out)
        }
        Command::Evaluate {
            data,
            checkpoint,
            split,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let set = load_split(&data, split.into())?;
            let score = evaluate(&ck.params, &set)?;
            write_line(
                out,
                &serde_json::to_string(&score).expect("score serializes"),
            )
        }
        Command::Curves { log, out: csv } => {
            let reports = parse_log(&read_text(&log)?)?;
            fs::write(&csv, curves_csv(&reports)).map_err(|e| Error::io(&csv, e))
        }
    }
}

fn train(data: &Path, cfg: &TrainConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    let train_set = load_split(data, Split::Train)?;
    let val_set = load_split(data, Split::Val)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_kv()).map_err(|e| Error::io(&config_path, e))?;

    let log_path = dir.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let mut log_err = None;
    let outcome = run_training_with(&train_set, &val_set, cfg, |r| {
        let line = serde_json::to_string(r).expect("report serializes");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
    });
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e));
    }
    let outcome = outcome?;
    let ck_path = dir.join(CHECKPOINT_FILE);
    Checkpoint::new(outcome.best_params, outcome.best_epoch).save(&ck_path)?;
    let summary = serde_json::json!({
        "epochs": outcome.reports.len(),
        "best_epoch": outcome.best_epoch,
        "best_p_mtl": outcome.best_epoch.map(|e| outcome.reports[e - 1].val.p_mtl),
        "checkpoint": ck_path,
    });
    write_line(out, &summary.to_string())
}

/// Parses an epoch log; blank lines are skipped.
pub fn parse_log(text: &str) -> Result<Vec<EpochReport>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Log {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn curves_header() -> String {
    let mut cols: Vec<String> = [
        "epoch",
        "total",
        "l_exp",
        "l_exp_sup",
        "l_exp_unsup",
        "l_exp_cons",
        "l_au",
        "l_va",
        "confident_fraction",
        "p_va",
        "p_exp",
        "p_au",
        "p_mtl",
        "ccc_valence",
        "ccc_arousal",
    ]
    .map(String::from)
    .into();
    cols.extend((0..NUM_EXPRESSIONS).map(|c| format!("T{c}")));
    cols.join(",")
}

pub fn curves_csv(reports: &[EpochReport]) -> String {
    let mut s = curves_header();
    s.push('\n');
    for r in reports {
        let mut row = vec![r.epoch.to_string()];
        row.extend(
            [
                r.loss.total,
                r.loss.l_exp,
                r.loss.l_exp_sup,
                r.loss.l_exp_unsup,
                r.loss.l_exp_cons,
                r.loss.l_au,
                r.loss.l_va,
                r.confident_fraction,
                r.val.p_va,
                r.val.p_exp,
                r.val.p_au,
                r.val.p_mtl,
                r.val.ccc_valence,
                r.val.ccc_arousal,
            ]
            .iter()
            .chain(&r.thresholds)
            .map(f64::to_string),
        );
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(
            run(["ssmtl", "stats", "--bogus"], &mut o, &mut e),
            EXIT_USAGE
        );
        assert_eq!(run(["ssmtl"], &mut o, &mut e), EXIT_USAGE);
    }

    #[test]
    fn empty_log_gives_header_only() {
        let csv = curves_csv(&parse_log("\n").unwrap());
        assert_eq!(csv.lines().count(), 1);
        assert_eq!(csv.trim_end().split(',').count(), 15 + NUM_EXPRESSIONS);
    }

    #[test]
    fn corrupt_log_names_the_line() {
        match parse_log("\n{oops}\n") {
            Err(Error::Log { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
