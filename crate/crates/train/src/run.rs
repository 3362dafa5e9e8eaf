//! Drives a [`Trainer`] to completion, writing metrics, evaluations,
//! checkpoints and image strips to an output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::data::SegDataset;
use crate::error::Result;
use crate::trainer::{EvalReport, LossRecord, Trainer, CSV_HEADER};

pub const METRICS_CSV: &str = "metrics.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Save a checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_every: usize,
    /// Number of eval samples dumped as image strips at each evaluation.
    pub dump_images: usize,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            checkpoint_every: 0,
            dump_images: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub last: Option<LossRecord>,
    pub evals: Vec<EvalReport>,
}

impl RunSummary {
    pub fn final_eval(&self) -> Option<&EvalReport> {
        self.evals.last()
    }
}

fn eval_header(classes: usize) -> String {
    let mut h = "iter,model,miou".to_string();
    for c in 0..classes {
        h.push_str(&format!(",iou_{c}"));
    }
    h
}

fn eval_rows(report: &EvalReport) -> String {
    let mut out = String::new();
    for m in &report.models {
        out.push_str(&format!("{},{},{}", report.iter, m.name, m.miou));
        for v in &m.iou {
            match v {
                Some(v) => out.push_str(&format!(",{v}")),
                None => out.push_str(",nan"),
            }
        }
        out.push('\n');
    }
    out.push_str(&format!("{},best,{}", report.iter, report.best()));
    for _ in report.models.first().map(|m| m.iou.as_slice()).unwrap_or(&[]) {
        out.push_str(",nan");
    }
    out.push('\n');
    out
}

/// Keeps the header and rows whose leading iteration field is below `iter`.
fn truncate_csv(path: &Path, iter: usize, header: &str) -> Result<()> {
    let text = fs::read_to_string(path).unwrap_or_default();
    let mut out = format!("{header}\n");
    for line in text.lines().skip(1) {
        let first = line.split(',').next().unwrap_or_default();
        if first.parse::<usize>().map_or(false, |i| i < iter) {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn open_append(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(fs::OpenOptions::new().append(true).open(path)?))
}

/// Runs the remaining iterations. A trainer restored from a checkpoint
/// continues its numbering; rows at or past its iteration are dropped from
/// existing CSVs first.
pub fn run(trainer: &mut Trainer, train: &SegDataset, eval: &SegDataset, opts: &RunOptions) -> Result<RunSummary> {
    fs::create_dir_all(&opts.out_dir)?;
    let metrics_path = opts.out_dir.join(METRICS_CSV);
    let eval_path = opts.out_dir.join(EVAL_CSV);
    let start = trainer.iteration();
    truncate_csv(&metrics_path, start, CSV_HEADER)?;
    truncate_csv(&eval_path, start, &eval_header(eval.classes))?;
    trainer.dump_dir.get_or_insert_with(|| opts.out_dir.clone());

    let mut metrics = open_append(&metrics_path)?;
    let mut summary = RunSummary {
        last: None,
        evals: Vec::new(),
    };
    let total = trainer.config.iterations;
    let interval = trainer.config.eval_interval;
    while !trainer.is_done() {
        let rec = trainer.step(train)?;
        writeln!(metrics, "{}", rec.csv_row())?;
        summary.last = Some(rec);
        let done = trainer.iteration();
        if done % 100 == 0 {
            log::info!("iter {done}/{total} total loss {:.4}", rec.total);
        }
        if interval > 0 && done % interval == 0 && done < total {
            metrics.flush()?;
            evaluate_and_record(trainer, eval, opts, &eval_path, &mut summary)?;
        }
        if opts.checkpoint_every > 0 && done % opts.checkpoint_every == 0 && done < total {
            metrics.flush()?;
            checkpoint::save(trainer, &opts.out_dir.join(CHECKPOINT_DIR))?;
        }
    }
    metrics.flush()?;
    evaluate_and_record(trainer, eval, opts, &eval_path, &mut summary)?;
    checkpoint::save(trainer, &opts.out_dir.join(CHECKPOINT_DIR))?;
    Ok(summary)
}

fn evaluate_and_record(
    trainer: &mut Trainer,
    eval: &SegDataset,
    opts: &RunOptions,
    eval_path: &Path,
    summary: &mut RunSummary,
) -> Result<()> {
    let report = trainer.evaluate(eval)?;
    log::info!("iter {} eval\n{}", report.iter, report.render());
    let mut f = open_append(eval_path)?;
    f.write_all(eval_rows(&report).as_bytes())?;
    f.flush()?;
    if opts.dump_images > 0 {
        trainer.dump_predictions(&opts.out_dir.join("images"), eval, opts.dump_images)?;
    }
    summary.evals.push(report);
    Ok(())
}
