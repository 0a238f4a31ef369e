//! Directory layout:
//!
//! ```text
//! manifest.txt              classes <names...>, then `<sequence> <frames>` lines
//! seq_0007/poses.txt        pose trace
//! seq_0007/frame_000.png    RGB image
//! seq_0007/frame_000_car.pgm  one binary map per class (0 / 255)
//! seq_0007/frame_000_vis.pgm  visibility (255 visible)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use image::{GrayImage, RgbImage};

use super::{ClassKind, FrameSample, Sequence};
use crate::error::{Error, Result};
use crate::loss::Visibility;
use crate::temporal;
use crate::tensor::Tensor;

fn save(img: impl FnOnce(&Path) -> image::ImageResult<()>, path: &Path) -> Result<()> {
    img(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn to_byte(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn write_dataset(dir: &Path, sequences: &[Sequence]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("classes");
    let classes = sequences.first().map(|s| s.classes.clone()).unwrap_or_default();
    for c in &classes {
        let _ = write!(manifest, " {}", c.name());
    }
    manifest.push('\n');
    for seq in sequences {
        if seq.classes != classes {
            return Err(Error::Format(format!("{} uses a different class list", seq.name)));
        }
        let sd = dir.join(&seq.name);
        std::fs::create_dir_all(&sd).map_err(|e| Error::io(&sd, e))?;
        let poses: Vec<_> = seq.frames.iter().map(|f| f.pose).collect();
        temporal::write_pose_trace(&sd.join("poses.txt"), &poses)?;
        for (t, f) in seq.frames.iter().enumerate() {
            let (h, w) = (f.image.shape()[1], f.image.shape()[2]);
            let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let p = y as usize * w + x as usize;
                image::Rgb([0, 1, 2].map(|c| to_byte(f.image.data()[c * h * w + p])))
            });
            save(|p| img.save(p), &sd.join(format!("frame_{t:03}.png")))?;
            let (zc, xc) = (f.gt.shape()[1], f.gt.shape()[2]);
            for (k, c) in seq.classes.iter().enumerate() {
                let m = GrayImage::from_fn(xc as u32, zc as u32, |x, y| {
                    image::Luma([to_byte(f.gt.at(&[k, y as usize, x as usize]))])
                });
                save(|p| m.save(p), &sd.join(format!("frame_{t:03}_{}.pgm", c.name())))?;
            }
            let v = GrayImage::from_fn(xc as u32, zc as u32, |x, y| {
                image::Luma([if f.visibility.is_visible(y as usize, x as usize) { 255 } else { 0 }])
            });
            save(|p| v.save(p), &sd.join(format!("frame_{t:03}_vis.pgm")))?;
        }
        let _ = writeln!(manifest, "{} {}", seq.name, seq.frames.len());
    }
    let mp = dir.join("manifest.txt");
    std::fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))
}

pub fn read_dataset(dir: &Path) -> Result<Vec<Sequence>> {
    let mp = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Format("empty manifest".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("classes") {
        return Err(Error::Format(format!("manifest header {header:?}")));
    }
    let classes = fields
        .map(|n| ClassKind::from_name(n).ok_or_else(|| Error::Format(format!("unknown class {n:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for line in lines {
        let (name, frames) = line
            .split_once(' ')
            .and_then(|(n, c)| Some((n, c.trim().parse::<usize>().ok()?)))
            .ok_or_else(|| Error::Format(format!("manifest line {line:?}")))?;
        let sd = dir.join(name);
        let poses = temporal::read_pose_trace(&sd.join("poses.txt"))?;
        if poses.len() != frames {
            return Err(Error::Format(format!("{name}: {} poses for {frames} frames", poses.len())));
        }
        let mut samples = Vec::with_capacity(frames);
        for (t, pose) in poses.into_iter().enumerate() {
            let img = open(&sd.join(format!("frame_{t:03}.png")))?.to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let image = super::rgb_to_tensor(img.as_raw(), h, w);
            let mut maps = Vec::new();
            let mut dims = None;
            for c in &classes {
                let m = open(&sd.join(format!("frame_{t:03}_{}.pgm", c.name())))?.to_luma8();
                dims.get_or_insert((m.height() as usize, m.width() as usize));
                maps.extend(m.as_raw().iter().map(|&b| if b >= 128 { 1.0f32 } else { 0.0 }));
            }
            let v = open(&sd.join(format!("frame_{t:03}_vis.pgm")))?.to_luma8();
            let (zc, xc) = dims.unwrap_or((v.height() as usize, v.width() as usize));
            let gt = Tensor::new(vec![classes.len(), zc, xc], maps)?;
            let visibility = Visibility::new(zc, xc, v.as_raw().iter().map(|&b| b >= 128).collect())?;
            samples.push(FrameSample {
                image,
                gt,
                visibility,
                pose,
            });
        }
        out.push(Sequence {
            name: name.to_string(),
            classes: classes.clone(),
            frames: samples,
        });
    }
    Ok(out)
}
