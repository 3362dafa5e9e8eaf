use warpseg_core::Tensor;

use crate::error::{DgwError, Result};
use crate::spec::WarpSpec;

/// Bilinear footprint of one output pixel after clamp-to-edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Tap {
    /// Flat indices of the (y0,x0), (y0,x1), (y1,x0), (y1,x1) neighbours.
    pub idx: [u32; 4],
    pub weight: [f64; 4],
}

/// Per-output-pixel source coordinates `(row, col)` in continuous pixel
/// space, stored as a `[H, W, 2]` tensor.
///
/// Coordinates may leave the image; sampling clamps them to the edge.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    coords: Tensor<f64>,
    taps: Vec<Tap>,
}

impl SampleGrid {
    pub fn from_coords(coords: Tensor<f64>) -> Result<Self> {
        let (h, w) = match coords.shape() {
            &[h, w, 2] => (h, w),
            other => {
                return Err(DgwError::InvalidParams(format!(
                    "grid must be [H, W, 2], got {other:?}"
                )))
            }
        };
        coords.check_finite("sampling grid")?;
        let taps = coords
            .data()
            .chunks_exact(2)
            .map(|rc| tap(rc[0], rc[1], h, w))
            .collect();
        Ok(SampleGrid { coords, taps })
    }

    /// Every output pixel samples its own centre.
    pub fn identity(height: usize, width: usize) -> Self {
        let coords = Tensor::from_fn(&[height, width, 2], |i| {
            let (p, axis) = (i / 2, i % 2);
            if axis == 0 {
                (p / width) as f64
            } else {
                (p % width) as f64
            }
        });
        Self::from_coords(coords).expect("identity grid is finite")
    }

    /// Evaluates the fitted map at every output pixel centre.
    pub fn from_spec(spec: &WarpSpec, height: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(height * width * 2);
        for i in 0..height {
            for j in 0..width {
                let q = [(j as f64 + 0.5) / width as f64, (i as f64 + 0.5) / height as f64];
                let p = spec.map(q);
                data.push(p[1] * height as f64 - 0.5);
                data.push(p[0] * width as f64 - 0.5);
            }
        }
        let coords = Tensor::new(&[height, width, 2], data).expect("grid extent");
        Self::from_coords(coords).expect("TPS map of a finite fit is finite")
    }

    pub fn height(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.coords.shape()[1]
    }

    pub fn coords(&self) -> &Tensor<f64> {
        &self.coords
    }

    /// Source `(row, col)` of output pixel `(i, j)`.
    pub fn at(&self, i: usize, j: usize) -> (f64, f64) {
        let k = (i * self.width() + j) * 2;
        (self.coords.data()[k], self.coords.data()[k + 1])
    }

    pub(crate) fn taps(&self) -> &[Tap] {
        &self.taps
    }

    /// Largest displacement of any pixel from its own centre, in pixels.
    pub fn max_displacement(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.height() {
            for j in 0..self.width() {
                let (r, c) = self.at(i, j);
                best = best.max((r - i as f64).abs()).max((c - j as f64).abs());
            }
        }
        best
    }

    /// Largest absolute second difference of either coordinate along rows or
    /// columns, in pixels.
    pub fn max_second_difference(&self) -> f64 {
        let (h, w) = (self.height(), self.width());
        let v = |i: usize, j: usize, a: usize| self.coords.data()[(i * w + j) * 2 + a];
        let mut best = 0.0f64;
        for a in 0..2 {
            for i in 0..h {
                for j in 1..w.saturating_sub(1) {
                    best = best.max((v(i, j - 1, a) - 2.0 * v(i, j, a) + v(i, j + 1, a)).abs());
                }
            }
            for i in 1..h.saturating_sub(1) {
                for j in 0..w {
                    best = best.max((v(i - 1, j, a) - 2.0 * v(i, j, a) + v(i + 1, j, a)).abs());
                }
            }
        }
        best
    }

    /// Nearest source pixel `(row, col)` of output pixel `(i, j)`, clamped.
    pub fn nearest(&self, i: usize, j: usize) -> (usize, usize) {
        let (r, c) = self.at(i, j);
        let clamp = |v: f64, n: usize| v.round().clamp(0.0, (n - 1) as f64) as usize;
        (clamp(r, self.height()), clamp(c, self.width()))
    }
}

fn tap(row: f64, col: f64, h: usize, w: usize) -> Tap {
    let r = row.clamp(0.0, (h - 1) as f64);
    let c = col.clamp(0.0, (w - 1) as f64);
    let y0 = (r.floor() as usize).min(h - 1);
    let x0 = (c.floor() as usize).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = r - y0 as f64;
    let fx = c - x0 as f64;
    Tap {
        idx: [
            (y0 * w + x0) as u32,
            (y0 * w + x1) as u32,
            (y1 * w + x0) as u32,
            (y1 * w + x1) as u32,
        ],
        weight: [(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::WarpSpec;

    #[test]
    fn identity_spec_grid_is_pixel_centres() {
        let spec = WarpSpec::identity(3).unwrap();
        let g = spec.grid(16, 12);
        for i in 0..16 {
            for j in 0..12 {
                let (r, c) = g.at(i, j);
                assert!((r - i as f64).abs() < 1e-9 && (c - j as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn clamped_taps_sum_to_one() {
        let coords = Tensor::new(&[1, 3, 2], vec![-3.0, 0.5, 0.25, 7.9, 1.5, 1.5]).unwrap();
        let g = SampleGrid::from_coords(coords).unwrap();
        for t in g.taps() {
            assert!((t.weight.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_grid_is_rejected() {
        let coords = Tensor::new(&[1, 1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(SampleGrid::from_coords(coords).is_err());
    }
}
