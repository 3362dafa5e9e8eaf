//! Bilinear resampling of `[N, C, H, W]` tensors along a [`SampleGrid`].
//!
//! The forward pass is linear in the input; the backward pass scatters the
//! upstream gradient through the same four bilinear weights. Control points
//! are constants, so no gradient flows to the grid.

use rayon::prelude::*;
use warpseg_core::{Scalar, Tensor};

use crate::error::{DgwError, Result};
use crate::grid::SampleGrid;

fn check<T: Scalar>(t: &Tensor<T>, grid: &SampleGrid, op: &'static str) -> Result<[usize; 4]> {
    let dims = t.dims4(op)?;
    if (dims[2], dims[3]) != (grid.height(), grid.width()) {
        return Err(DgwError::GridMismatch {
            grid: (grid.height(), grid.width()),
            tensor: (dims[2], dims[3]),
        });
    }
    Ok(dims)
}

fn sample_plane<T: Scalar>(grid: &SampleGrid, src: &[T], dst: &mut [T]) {
    for (out, t) in dst.iter_mut().zip(grid.taps()) {
        let mut acc = T::zero();
        for k in 0..4 {
            acc = acc + T::from_f64_lossy(t.weight[k]) * src[t.idx[k] as usize];
        }
        *out = acc;
    }
}

fn scatter_plane<T: Scalar>(grid: &SampleGrid, upstream: &[T], dst: &mut [T]) {
    dst.iter_mut().for_each(|v| *v = T::zero());
    for (&g, t) in upstream.iter().zip(grid.taps()) {
        for k in 0..4 {
            let i = t.idx[k] as usize;
            dst[i] = dst[i] + T::from_f64_lossy(t.weight[k]) * g;
        }
    }
}

fn resolve<'g>(grids: &'g [SampleGrid], n: usize) -> Result<Vec<&'g SampleGrid>> {
    match grids.len() {
        1 => Ok(vec![&grids[0]; n]),
        len if len == n => Ok(grids.iter().collect()),
        len => Err(DgwError::InvalidParams(format!("{len} grids for a batch of {n}"))),
    }
}

/// Warps every sample of the batch with its own grid (or one shared grid).
pub fn warp_batch<T: Scalar>(input: &Tensor<T>, grids: &[SampleGrid]) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("warp")?;
    let per = resolve(grids, n)?;
    for g in &per {
        check(input, g, "warp")?;
    }
    let plane = h * w;
    let mut out = vec![T::zero(); input.numel()];
    out.par_chunks_mut(c * plane.max(1))
        .zip(input.data().par_chunks(c * plane.max(1)))
        .zip(per.par_iter())
        .for_each(|((dst, src), grid)| {
            for (d, s) in dst.chunks_mut(plane).zip(src.chunks(plane)) {
                sample_plane(grid, s, d);
            }
        });
    Ok(Tensor::new(&[n, c, h, w], out)?)
}

pub fn warp_batch_backward<T: Scalar>(grids: &[SampleGrid], upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = upstream.dims4("warp_backward")?;
    let per = resolve(grids, n)?;
    for g in &per {
        check(upstream, g, "warp_backward")?;
    }
    let plane = h * w;
    let mut dx = vec![T::zero(); upstream.numel()];
    dx.par_chunks_mut(c * plane.max(1))
        .zip(upstream.data().par_chunks(c * plane.max(1)))
        .zip(per.par_iter())
        .for_each(|((dst, g), grid)| {
            for (d, u) in dst.chunks_mut(plane).zip(g.chunks(plane)) {
                scatter_plane(grid, u, d);
            }
        });
    Ok(Tensor::new(&[n, c, h, w], dx)?)
}

pub fn warp<T: Scalar>(input: &Tensor<T>, grid: &SampleGrid) -> Result<Tensor<T>> {
    warp_batch(input, std::slice::from_ref(grid))
}

pub fn warp_backward<T: Scalar>(grid: &SampleGrid, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    warp_batch_backward(std::slice::from_ref(grid), upstream)
}

/// Nearest-neighbour warp of an integer label map (visualization only).
pub fn warp_labels(labels: &[u8], grid: &SampleGrid) -> Result<Vec<u8>> {
    let (h, w) = (grid.height(), grid.width());
    if labels.len() != h * w {
        return Err(DgwError::InvalidParams(format!(
            "label map has {} pixels, grid has {}",
            labels.len(),
            h * w
        )));
    }
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let (r, c) = grid.nearest(i, j);
            out.push(labels[r * w + c]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{WarpParams, WarpSpec};

    fn ramp(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i * 37) % 101) as f64 / 101.0)
    }

    #[test]
    fn identity_grid_is_exact() {
        let x = ramp(&[2, 3, 7, 5]);
        let y = warp(&x, &SampleGrid::identity(7, 5)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn constants_survive_any_grid() {
        let x = Tensor::<f64>::full(&[1, 2, 16, 16], 0.37);
        for seed in 0..5 {
            let grid = WarpSpec::sample(WarpParams::default(), seed).unwrap().grid(16, 16);
            let y = warp(&x, &grid).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        }
    }

    #[test]
    fn grid_size_mismatch_is_an_error() {
        let x = ramp(&[1, 1, 8, 8]);
        assert!(matches!(
            warp(&x, &SampleGrid::identity(8, 9)),
            Err(DgwError::GridMismatch { .. })
        ));
    }

    #[test]
    fn per_sample_grids() {
        let x = ramp(&[2, 1, 8, 8]);
        let spec = WarpSpec::sample(WarpParams::default(), 9).unwrap();
        let grids = vec![SampleGrid::identity(8, 8), spec.grid(8, 8)];
        let y = warp_batch(&x, &grids).unwrap();
        assert_eq!(y.slice_batch(0, 1).unwrap(), x.slice_batch(0, 1).unwrap());
        let second = warp(&x.slice_batch(1, 2).unwrap(), &grids[1]).unwrap();
        assert_eq!(y.slice_batch(1, 2).unwrap(), second);
        assert!(warp_batch(&x, &[grids[0].clone(), grids[0].clone(), grids[1].clone()]).is_err());
    }

    #[test]
    fn identity_label_warp() {
        let labels: Vec<u8> = (0..20).map(|i| (i % 4) as u8).collect();
        assert_eq!(warp_labels(&labels, &SampleGrid::identity(4, 5)).unwrap(), labels);
    }
}
