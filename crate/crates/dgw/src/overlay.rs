//! Image-level helpers for the warp demo: warp an RGB image and draw the
//! control points over it (sources red, destinations green).

use warpseg_core::pnm::RgbImage;
use warpseg_core::Tensor;

use crate::error::Result;
use crate::points::Point;
use crate::spec::WarpSpec;
use crate::warp::warp;

pub const SOURCE_COLOR: [u8; 3] = [255, 0, 0];
pub const DESTINATION_COLOR: [u8; 3] = [0, 255, 0];
const LINK_COLOR: [u8; 3] = [255, 255, 0];

pub fn warp_image(img: &RgbImage, spec: &WarpSpec) -> Result<RgbImage> {
    let (w, h) = (img.width, img.height);
    let x = Tensor::new(&[1, 3, h, w], img.to_planar())?;
    let y = warp(&x, &spec.grid(h, w))?;
    Ok(RgbImage::from_planar(w, h, y.data()))
}

fn to_pixel(p: Point, w: usize, h: usize) -> (f64, f64) {
    (p[0] * w as f64 - 0.5, p[1] * h as f64 - 0.5)
}

fn plot(img: &mut RgbImage, x: f64, y: f64, color: [u8; 3]) {
    let (xi, yi) = (x.round(), y.round());
    if xi >= 0.0 && yi >= 0.0 && (xi as usize) < img.width && (yi as usize) < img.height {
        img.put(xi as usize, yi as usize, color);
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: [u8; 3]) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        plot(img, a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), color);
    }
}

fn marker(img: &mut RgbImage, c: (f64, f64), radius: i64, color: [u8; 3]) {
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            plot(img, c.0 + dx as f64, c.1 + dy as f64, color);
        }
    }
}

/// Draws each source→destination link, then the source and destination
/// markers. Corner pairs coincide and show as destination markers.
pub fn draw_control_points(img: &RgbImage, spec: &WarpSpec) -> RgbImage {
    let mut out = img.clone();
    let (w, h) = (img.width, img.height);
    let radius = ((w.min(h) / 64) as i64).max(1);
    let pts = &spec.points;
    for (s, d) in pts.source.iter().zip(&pts.destination) {
        line(&mut out, to_pixel(*s, w, h), to_pixel(*d, w, h), LINK_COLOR);
    }
    for s in &pts.source {
        marker(&mut out, to_pixel(*s, w, h), radius, SOURCE_COLOR);
    }
    for d in &pts.destination {
        marker(&mut out, to_pixel(*d, w, h), radius, DESTINATION_COLOR);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{WarpParams, WarpSpec};

    fn checker(w: usize, h: usize) -> RgbImage {
        let mut img = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = if (x / 4 + y / 4) % 2 == 0 { 30 } else { 220 };
                img.put(x, y, [v, (x * 4) as u8, (y * 4) as u8]);
            }
        }
        img
    }

    #[test]
    fn zero_sigma_warp_is_a_pixel_copy() {
        let img = checker(40, 32);
        let params = WarpParams {
            sigma_s: 0.0,
            sigma_d: 0.0,
            ..WarpParams::default()
        };
        let spec = WarpSpec::sample(params, 5).unwrap();
        assert_eq!(warp_image(&img, &spec).unwrap(), img);
    }

    #[test]
    fn overlay_marks_both_point_sets() {
        let img = RgbImage::new(64, 64);
        let spec = WarpSpec::sample(WarpParams::default(), 1).unwrap();
        let out = draw_control_points(&img, &spec);
        let count = |c: [u8; 3]| out.pixels.chunks(3).filter(|p| *p == c).count();
        assert!(count(SOURCE_COLOR) > 0);
        assert!(count(DESTINATION_COLOR) > 0);
    }
}
