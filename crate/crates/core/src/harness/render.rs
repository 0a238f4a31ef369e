//! Side-by-side frame panels: input image, ground truth, thresholded
//! prediction, and ground truth with occluded cells tinted.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::loss::Visibility;
use crate::synth::{ClassKind, Sequence};
use crate::tensor::Tensor;

pub const EMPTY: [u8; 3] = [30, 30, 30];
pub const OCCLUDED: [u8; 3] = [200, 0, 200];
const GAP: u32 = 4;

/// Colour of every cell of a class map: classes painted in channel order,
/// later ones on top; cells with no class get [`EMPTY`].
pub fn paint_map(map: &Tensor<f32>, classes: &[ClassKind], threshold: f32) -> Vec<[u8; 3]> {
    let (rows, cols) = (map.shape()[1], map.shape()[2]);
    let n = rows * cols;
    (0..n)
        .map(|c| {
            classes
                .iter()
                .enumerate()
                .filter(|(k, _)| map.data()[k * n + c] >= threshold)
                .last()
                .map_or(EMPTY, |(_, cls)| cls.color())
        })
        .collect()
}

/// Half-way blend of a cell colour with [`OCCLUDED`] where not visible.
pub fn tint_occluded(colors: &[[u8; 3]], vis: &Visibility) -> Vec<[u8; 3]> {
    colors
        .iter()
        .zip(&vis.visible)
        .map(|(c, &v)| if v { *c } else { std::array::from_fn(|i| ((c[i] as u16 + OCCLUDED[i] as u16) / 2) as u8) })
        .collect()
}

/// Integer scale putting a `rows`-tall map about as tall as the image.
pub fn panel_scale(image_h: usize, rows: usize) -> usize {
    (image_h / rows).max(1)
}

/// Compose one frame's panels.
pub fn frame_panels(
    image: &Tensor<f32>,
    gt: &Tensor<f32>,
    probs: &Tensor<f32>,
    vis: &Visibility,
    classes: &[ClassKind],
) -> Result<RgbImage> {
    if gt.shape() != probs.shape() || gt.shape()[0] != classes.len() {
        return Err(Error::shape("render panels", probs.shape(), gt.shape()));
    }
    let (ih, iw) = (image.shape()[1], image.shape()[2]);
    let (rows, cols) = (gt.shape()[1], gt.shape()[2]);
    let s = panel_scale(ih, rows);
    let (ph, pw) = (rows * s, cols * s);
    let gt_c = paint_map(gt, classes, 0.5);
    let panels = [gt_c.clone(), paint_map(probs, classes, 0.5), tint_occluded(&gt_c, vis)];
    let width = iw as u32 + 3 * (pw as u32 + GAP);
    let mut out = RgbImage::from_pixel(width, ih.max(ph) as u32, Rgb([255, 255, 255]));
    for y in 0..ih {
        for x in 0..iw {
            let px = [0, 1, 2].map(|c| (image.data()[(c * ih + y) * iw + x] * 255.0).round().clamp(0.0, 255.0) as u8);
            out.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    for (k, colors) in panels.iter().enumerate() {
        let x0 = iw as u32 + GAP + k as u32 * (pw as u32 + GAP);
        for y in 0..ph {
            for x in 0..pw {
                out.put_pixel(x0 + x as u32, y as u32, Rgb(colors[(y / s) * cols + x / s]));
            }
        }
    }
    Ok(out)
}

/// Write `frame_XXX.png` for every frame of a sequence into `dir`.
pub fn render_maps(dir: &Path, seq: &Sequence, probs: &[Tensor<f32>]) -> Result<Vec<PathBuf>> {
    if probs.len() != seq.frames.len() {
        return Err(Error::shape("render_maps", &[probs.len()], &[seq.frames.len()]));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(probs.len());
    for (t, (f, p)) in seq.frames.iter().zip(probs).enumerate() {
        let img = frame_panels(&f.image, &f.gt, p, &f.visibility, &seq.classes)?;
        let path = dir.join(format!("frame_{t:03}.png"));
        img.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
        paths.push(path);
    }
    Ok(paths)
}
