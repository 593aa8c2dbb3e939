//! Feature-map visualization: one grayscale grid image per tapped activation.

use std::path::{Path, PathBuf};

use crate::data::save_gray;
use crate::error::{Error, Result};
use crate::models::ModelGraph;
use crate::tensor::Tensor;

/// Gray level for channels whose minimum equals their maximum.
pub const FLAT_GRAY: u8 = 128;

/// Tile the channels of a `[1, C, H, W]` activation into a near-square grid,
/// row-major, each channel min-max scaled to 0..=255 on its own.
/// Returns `(width, height, pixels)`.
pub fn feature_grid(t: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let (n, c, h, w) = t.dims4()?;
    if n != 1 {
        return Err(Error::shape(format!("feature grid needs one image, got {n}")));
    }
    let cols = (c as f64).sqrt().ceil() as usize;
    let rows = c.div_ceil(cols);
    let (gw, gh) = (cols * w, rows * h);
    let mut px = vec![0u8; gw * gh];
    for ch in 0..c {
        let plane = &t.data()[ch * h * w..(ch + 1) * h * w];
        let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (r0, c0) = ((ch / cols) * h, (ch % cols) * w);
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x];
                px[(r0 + y) * gw + c0 + x] = if hi > lo {
                    (255.0 * (v - lo) / (hi - lo)).round() as u8
                } else {
                    FLAT_GRAY
                };
            }
        }
    }
    Ok((gw, gh, px))
}

/// Run `model` on `image` (`[3, H, W]`) and write `<tap>.png` for each of
/// `taps` (all taps when empty) into `out`.
pub fn dump_features(model: &ModelGraph, image: &Tensor, taps: &[String], out: &Path) -> Result<Vec<PathBuf>> {
    let names = if taps.is_empty() { model.tap_names() } else { taps.to_vec() };
    let x = image.clone().reshape(vec![1, image.shape()[0], image.shape()[1], image.shape()[2]])?;
    let (_, acts) = model.forward_with_taps(&x, &names)?;
    std::fs::create_dir_all(out)?;
    let mut paths = Vec::with_capacity(acts.len());
    for (name, t) in &acts {
        let (w, h, px) = feature_grid(t)?;
        let path = out.join(format!("{name}.png"));
        save_gray(&path, w, h, px)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_is_mid_gray() {
        let t = Tensor::zeros(vec![1, 3, 2, 2]);
        let (w, h, px) = feature_grid(&t).unwrap();
        assert_eq!((w, h), (4, 4));
        for y in 0..2 {
            for x in 0..4 {
                assert_eq!(px[y * 4 + x], FLAT_GRAY);
            }
        }
    }

    #[test]
    fn channel_is_min_max_scaled() {
        let t = Tensor::new(vec![1, 1, 1, 3], vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(feature_grid(&t).unwrap().2, vec![0, 128, 255]);
    }
}
