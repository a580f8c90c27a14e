//! Minimal raster plots: ROC curves and probability overlays on
//! mid-sagittal slices. Hand-drawn onto PNG buffers to keep the
//! dependency surface small; axes carry 0.1-step gridlines instead of
//! text labels.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::rocs::RocPoint;

const SIZE: u32 = 640;
const MARGIN: u32 = 48;

/// Probabilities below this are treated as background in overlays,
/// mirroring the visualization cutoff used for the prediction figures.
pub const OVERLAY_PROB_CUTOFF: f32 = 0.05;

fn to_canvas(p: &RocPoint) -> (i64, i64) {
    let span = (SIZE - 2 * MARGIN) as f64;
    let x = MARGIN as f64 + p.fpr.clamp(0.0, 1.0) * span;
    let y = (SIZE - MARGIN) as f64 - p.tpr.clamp(0.0, 1.0) * span;
    (x.round() as i64, y.round() as i64)
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), color: Rgb<u8>, thick: bool) {
    let (mut x0, mut y0) = a;
    let (x1, y1) = b;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, color);
        if thick {
            put(img, x0 + 1, y0, color);
            put(img, x0, y0 + 1, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn dot(img: &mut RgbImage, c: (i64, i64), r: i64, color: Rgb<u8>) {
    for dx in -r..=r {
        for dy in -r..=r {
            if dx * dx + dy * dy <= r * r {
                put(img, c.0 + dx, c.1 + dy, color);
            }
        }
    }
}

fn axes(img: &mut RgbImage) {
    let grid = Rgb([225u8, 225, 225]);
    for i in 1..10 {
        let t = MARGIN as i64 + ((SIZE - 2 * MARGIN) as f64 * i as f64 / 10.0).round() as i64;
        line(
            img,
            (t, MARGIN as i64),
            (t, (SIZE - MARGIN) as i64),
            grid,
            false,
        );
        line(
            img,
            (MARGIN as i64, t),
            ((SIZE - MARGIN) as i64, t),
            grid,
            false,
        );
    }
    let black = Rgb([0u8, 0, 0]);
    let m = MARGIN as i64;
    let s = (SIZE - MARGIN) as i64;
    line(img, (m, m), (m, s), black, false);
    line(img, (m, s), (s, s), black, false);
    line(img, (m, m), (s, m), black, false);
    line(img, (s, m), (s, s), black, false);
    // chance diagonal
    let gray = Rgb([170u8, 170, 170]);
    let mut t = 0.0;
    while t < 1.0 {
        let a = to_canvas(&RocPoint { fpr: t, tpr: t });
        let b = to_canvas(&RocPoint {
            fpr: (t + 0.02).min(1.0),
            tpr: (t + 0.02).min(1.0),
        });
        line(img, a, b, gray, false);
        t += 0.04;
    }
}

/// Render an ROC plot: the main curve (blue), an optional bootstrap mean
/// curve (light blue) and optional raw classifier points (red).
pub fn roc_plot(
    path: impl AsRef<Path>,
    curve: &[RocPoint],
    bootstrap_mean: Option<&[RocPoint]>,
    raw_points: Option<&[RocPoint]>,
) -> Result<()> {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    axes(&mut img);

    if let Some(mean) = bootstrap_mean {
        let light = Rgb([140u8, 180, 235]);
        for w in mean.windows(2) {
            line(&mut img, to_canvas(&w[0]), to_canvas(&w[1]), light, false);
        }
    }
    let blue = Rgb([25u8, 80, 190]);
    for w in curve.windows(2) {
        line(&mut img, to_canvas(&w[0]), to_canvas(&w[1]), blue, true);
    }
    for p in curve {
        dot(&mut img, to_canvas(p), 3, blue);
    }
    if let Some(points) = raw_points {
        let red = Rgb([200u8, 40, 40]);
        for p in points {
            dot(&mut img, to_canvas(p), 2, red);
        }
    }

    img.save(path.as_ref())
        .map_err(|e| Error::Format(format!("{}: {e}", path.as_ref().display())))
}

/// Render a mid-sagittal slice with the fracture probability overlaid in
/// red; probabilities below the cutoff are not drawn.
pub fn overlay_plot(
    path: impl AsRef<Path>,
    intensity: &Array2<f32>,
    fracture: &Array2<f32>,
) -> Result<()> {
    let (ny, nz) = intensity.dim();
    let scale = (512 / ny.max(nz).max(1)).max(1) as u32;
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in intensity.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = (hi - lo).max(1e-6);

    let mut img = RgbImage::new(ny as u32 * scale, nz as u32 * scale);
    for y in 0..ny {
        for z in 0..nz {
            let g = ((intensity[[y, z]] - lo) / range * 255.0).clamp(0.0, 255.0) as u8;
            let p = fracture[[y, z]];
            let color = if p >= OVERLAY_PROB_CUTOFF {
                let t = p.clamp(0.0, 1.0);
                let r = g as f32 + (255.0 - g as f32) * t;
                let gb = g as f32 * (1.0 - t);
                Rgb([r as u8, gb as u8, gb as u8])
            } else {
                Rgb([g, g, g])
            };
            // z runs bottom-up in image space
            for sy in 0..scale {
                for sz in 0..scale {
                    img.put_pixel(
                        y as u32 * scale + sy,
                        (nz - 1 - z) as u32 * scale + sz,
                        color,
                    );
                }
            }
        }
    }
    img.save(path.as_ref())
        .map_err(|e| Error::Format(format!("{}: {e}", path.as_ref().display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roc_plot_writes_a_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roc.png");
        let curve = vec![
            RocPoint { fpr: 0.0, tpr: 0.0 },
            RocPoint { fpr: 0.1, tpr: 0.9 },
            RocPoint { fpr: 1.0, tpr: 1.0 },
        ];
        roc_plot(&path, &curve, Some(&curve), Some(&curve)).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!(img.width(), SIZE);
    }

    #[test]
    fn overlay_plot_writes_a_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slice.png");
        let intensity = Array2::from_shape_fn((40, 60), |(y, z)| (y + z) as f32);
        let mut fracture = Array2::zeros((40, 60));
        fracture[[20, 30]] = 0.9;
        overlay_plot(&path, &intensity, &fracture).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        // the hot voxel is redder than its surroundings
        let hot = img.get_pixel(20 * 8, (60 - 1 - 30) * 8);
        assert!(hot[0] > hot[1]);
    }
}
