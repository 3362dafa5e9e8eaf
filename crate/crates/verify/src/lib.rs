//! Independent oracles for the warpseg stack and the experiment protocol
//! that compares training modes.

pub mod experiment;
pub mod gradients;
pub mod miou;
pub mod routing;
pub mod stabilization;
pub mod tps;

use std::fmt;

/// Outcome of one oracle: the worst observed error over `cases` random
/// instances against a fixed tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            cases: 0,
            worst: 0.0,
            tolerance,
        }
    }

    /// Records one instance. NaN errors count as failures.
    pub fn record(&mut self, err: f64) {
        self.cases += 1;
        if err.is_nan() || err > self.worst {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    /// A zero tolerance demands an exactly zero error.
    pub fn passed(&self) -> bool {
        self.cases > 0 && (self.worst < self.tolerance || (self.tolerance == 0.0 && self.worst == 0.0))
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<34} cases {:5}  worst {:.3e}  tol {:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance
        )
    }
}

/// Runs the oracle suites: gradients over `configs` random configurations
/// per target, ten times as many warp specs and stabilization instances,
/// routing and mIoU. `fault` corrupts one gradient target's backward pass.
pub fn run_oracles(configs: usize, seed: u64, fault: Option<gradients::Target>) -> Vec<Check> {
    let mut out = gradients::check_all(configs, seed, fault);
    out.extend(tps::check_all(configs * 10, seed));
    out.extend(stabilization::check_all(configs * 10, seed));
    out.extend(routing::check_all(seed));
    out.extend(miou::check_all(configs, seed));
    out
}
