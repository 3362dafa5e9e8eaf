//! Mode comparison protocol: every mode trained from the same data on each
//! seed, scored on the held-out split.

use std::time::Instant;

use warpseg_train::{DataSpec, Mode, Result, SegDataset, TrainConfig, Trainer};

/// Warp seed of the fixed held-out consistency probe.
pub const PROBE_WARP_SEED: u64 = 0x5EED;

#[derive(Debug, Clone)]
pub struct Protocol {
    pub data: DataSpec,
    pub base: TrainConfig,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
}

/// Student lr used by the protocol; the toy students barely move in 5000
/// iterations at the default 2.5e-4.
pub const PROTOCOL_LR: f64 = 0.05;

impl Protocol {
    /// Training settings shared by every mode of the comparison.
    pub fn base_config() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.student_optimizer.lr = PROTOCOL_LR;
        cfg.losses.lambda1 = 1.0;
        cfg.losses.lambda3 = 1.0;
        cfg.rampup = 1000;
        cfg.eval_interval = 0;
        cfg
    }
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            data: DataSpec::default(),
            base: Protocol::base_config(),
            modes: vec![Mode::Supervised, Mode::DualStudent, Mode::Ads],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub mode: Mode,
    pub seed: u64,
    /// Mean over the mode's students of the final mIoU.
    pub miou: f64,
    /// Held-out consistency before the first and after the last iteration.
    pub consistency_start: f64,
    pub consistency_end: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ProtocolReport {
    pub runs: Vec<RunResult>,
    pub seconds: f64,
}

impl ProtocolReport {
    pub fn mean_miou(&self, mode: Mode) -> Option<f64> {
        let v: Vec<f64> = self.runs.iter().filter(|r| r.mode == mode).map(|r| r.miou).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean end/start ratio of held-out consistency for `mode`.
    pub fn consistency_ratio(&self, mode: Mode) -> Option<f64> {
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.consistency_end / r.consistency_start)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Trains one configuration to completion and scores it.
pub fn run_one(cfg: TrainConfig, train: &SegDataset, eval: &SegDataset) -> Result<RunResult> {
    let t0 = Instant::now();
    let (mode, seed) = (cfg.mode, cfg.seed);
    let mut t = Trainer::new(cfg, train)?;
    let consistency_start = t.held_out_consistency(eval, PROBE_WARP_SEED)?;
    while !t.is_done() {
        t.step(train)?;
    }
    let consistency_end = t.held_out_consistency(eval, PROBE_WARP_SEED)?;
    let report = t.evaluate(eval)?;
    let students = mode.students();
    let miou = report.models.iter().take(students).map(|m| m.miou).sum::<f64>() / students as f64;
    Ok(RunResult {
        mode,
        seed,
        miou,
        consistency_start,
        consistency_end,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Runs every (seed, mode) pair in order, reporting each result as it
/// finishes.
pub fn run(protocol: &Protocol, mut progress: impl FnMut(&RunResult)) -> Result<ProtocolReport> {
    let t0 = Instant::now();
    let (train, eval) = protocol.data.generate()?;
    let mut report = ProtocolReport::default();
    for &seed in &protocol.seeds {
        for &mode in &protocol.modes {
            let cfg = TrainConfig {
                mode,
                seed,
                ..protocol.base.clone()
            };
            let r = run_one(cfg, &train, &eval)?;
            progress(&r);
            report.runs.push(r);
        }
    }
    report.seconds = t0.elapsed().as_secs_f64();
    Ok(report)
}
