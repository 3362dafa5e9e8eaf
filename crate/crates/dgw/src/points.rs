//! Control-point sampling in normalized `[0, 1]²` image space.
//!
//! Points are `[x, y]` with `x` along the width. Block centres of an `n × n`
//! partition are jittered by Gaussian offsets; the four image corners are
//! appended unchanged to both point sets.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DgwError, Result};

pub type Point = [f64; 2];

pub const CORNERS: [Point; 4] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplingMode {
    /// Grid centres with random source and destination offsets.
    GridRandSourceRandDest,
    /// Grid centres as sources, random destination offsets only.
    GridRandDest,
    /// Uniform random sources, random destination offsets.
    FullRandom,
}

impl SamplingMode {
    pub fn name(self) -> &'static str {
        match self {
            SamplingMode::GridRandSourceRandDest => "grid-rs-rd",
            SamplingMode::GridRandDest => "grid-rd",
            SamplingMode::FullRandom => "full-random",
        }
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = DgwError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid-rs-rd" => Ok(SamplingMode::GridRandSourceRandDest),
            "grid-rd" => Ok(SamplingMode::GridRandDest),
            "full-random" => Ok(SamplingMode::FullRandom),
            other => Err(DgwError::InvalidParams(format!(
                "unknown sampling mode {other:?} (expected grid-rs-rd, grid-rd or full-random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPoints {
    pub source: Vec<Point>,
    pub destination: Vec<Point>,
}

impl ControlPoints {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

/// Centres of an `n × n` block partition, row-major.
pub fn block_centers(n: usize) -> Vec<Point> {
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            out.push([(col as f64 + 0.5) / n as f64, (row as f64 + 0.5) / n as f64]);
        }
    }
    out
}

fn gaussian(sigma: f64) -> Result<Option<Normal<f64>>> {
    if sigma == 0.0 {
        return Ok(None);
    }
    Normal::new(0.0, sigma)
        .map(Some)
        .map_err(|e| DgwError::InvalidParams(format!("sigma {sigma}: {e}")))
}

fn draw<R: Rng + ?Sized>(dist: &Option<Normal<f64>>, rng: &mut R) -> f64 {
    dist.as_ref().map_or(0.0, |d| d.sample(rng))
}

/// Samples `n·n` jittered pairs plus the four fixed corners.
///
/// Offsets are drawn independently per point and per axis and are not
/// clamped.
pub fn sample_control_points<R: Rng + ?Sized>(
    n: usize,
    sigma_s: f64,
    sigma_d: f64,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<ControlPoints> {
    if n < 2 {
        return Err(DgwError::InvalidParams(format!("grid side n = {n}, need n ≥ 2")));
    }
    if !(sigma_s >= 0.0 && sigma_d >= 0.0 && sigma_s.is_finite() && sigma_d.is_finite()) {
        return Err(DgwError::InvalidParams(format!(
            "sigmas must be finite and ≥ 0 (got σ_s = {sigma_s}, σ_d = {sigma_d})"
        )));
    }
    let src_dist = gaussian(sigma_s)?;
    let dst_dist = gaussian(sigma_d)?;
    let mut source = Vec::with_capacity(n * n + 4);
    let mut destination = Vec::with_capacity(n * n + 4);
    for center in block_centers(n) {
        let s = match mode {
            SamplingMode::GridRandSourceRandDest => {
                [center[0] + draw(&src_dist, rng), center[1] + draw(&src_dist, rng)]
            }
            SamplingMode::GridRandDest => center,
            SamplingMode::FullRandom => [rng.random::<f64>(), rng.random::<f64>()],
        };
        let d = [s[0] + draw(&dst_dist, rng), s[1] + draw(&dst_dist, rng)];
        source.push(s);
        destination.push(d);
    }
    source.extend_from_slice(&CORNERS);
    destination.extend_from_slice(&CORNERS);
    Ok(ControlPoints { source, destination })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_configuration_has_thirteen_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cp = sample_control_points(3, 0.1, 0.2, SamplingMode::GridRandSourceRandDest, &mut rng).unwrap();
        assert_eq!(cp.len(), 13);
        assert_eq!(&cp.source[9..], &CORNERS);
        assert_eq!(&cp.destination[9..], &CORNERS);
    }

    #[test]
    fn zero_sigma_gives_block_centres() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cp = sample_control_points(3, 0.0, 0.0, SamplingMode::GridRandSourceRandDest, &mut rng).unwrap();
        assert_eq!(cp.source, cp.destination);
        assert_eq!(&cp.source[..9], block_centers(3).as_slice());
        assert!((cp.source[4][0] - 0.5).abs() < 1e-15 && (cp.source[4][1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_points() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_control_points(3, 0.1, 0.2, SamplingMode::GridRandSourceRandDest, &mut rng).unwrap()
        };
        let (a, b) = (draw(42), draw(42));
        let bits = |cp: &ControlPoints| -> Vec<u64> {
            cp.source
                .iter()
                .chain(&cp.destination)
                .flat_map(|p| [p[0].to_bits(), p[1].to_bits()])
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&draw(43)));
    }

    #[test]
    fn grid_rd_keeps_sources_on_centres() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cp = sample_control_points(4, 0.1, 0.2, SamplingMode::GridRandDest, &mut rng).unwrap();
        assert_eq!(&cp.source[..16], block_centers(4).as_slice());
        assert_ne!(cp.source, cp.destination);
    }

    #[test]
    fn full_random_sources_inside_unit_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cp = sample_control_points(3, 0.0, 0.2, SamplingMode::FullRandom, &mut rng).unwrap();
        assert!(cp.source[..9]
            .iter()
            .all(|p| (0.0..1.0).contains(&p[0]) && (0.0..1.0).contains(&p[1])));
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mode = SamplingMode::GridRandSourceRandDest;
        assert!(sample_control_points(1, 0.1, 0.2, mode, &mut rng).is_err());
        assert!(sample_control_points(3, -0.1, 0.2, mode, &mut rng).is_err());
        assert!(sample_control_points(3, 0.1, f64::NAN, mode, &mut rng).is_err());
    }
}
