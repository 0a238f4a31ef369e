//! Camera and BEV grid geometry, the pyramid-level ↔ depth-range pairing,
//! and the polar → Cartesian feature resampling.
//!
//! Grid convention: BEV row 0 is the far edge (`z_max`), the last row touches
//! `z_min`; columns run left to right, symmetric about the optical axis. Cell
//! `(r, c)` is represented by its centre.

use std::ops::Range;
use std::sync::Arc;

use crate::autodiff::{Graph, SampleMap, Value};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Pinhole intrinsics restricted to what ground-plane resampling needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    /// Focal length in pixels.
    pub f: f64,
    /// Horizontal principal point in pixels.
    pub u0: f64,
    pub image_h: usize,
    pub image_w: usize,
}

impl CameraModel {
    pub fn new(f: f64, u0: f64, image_h: usize, image_w: usize) -> Result<Self> {
        if !(f > 0.0) || !(0.0..image_w as f64).contains(&u0) || image_h == 0 {
            return Err(Error::Config(format!(
                "camera f={f} u0={u0} image {image_h}x{image_w}"
            )));
        }
        Ok(Self {
            f,
            u0,
            image_h,
            image_w,
        })
    }

    /// Intrinsics of the `d`-times downsampled image.
    pub fn scaled(&self, d: usize) -> (f64, f64) {
        (self.f / d as f64, self.u0 / d as f64)
    }
}

/// Metric extent and resolution of the Cartesian BEV grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BevGridSpec {
    /// Cells along depth.
    pub depth_cells: usize,
    /// Cells across.
    pub lateral_cells: usize,
    pub cell_m: f64,
    /// Depth of the near edge in metres.
    pub z_min: f64,
}

impl BevGridSpec {
    pub fn new(depth_cells: usize, lateral_cells: usize, cell_m: f64, z_min: f64) -> Result<Self> {
        if depth_cells == 0 || lateral_cells == 0 || !(cell_m > 0.0) || !z_min.is_finite() {
            return Err(Error::Config(format!(
                "BEV grid {depth_cells}x{lateral_cells} at {cell_m} m from z={z_min}"
            )));
        }
        Ok(Self {
            depth_cells,
            lateral_cells,
            cell_m,
            z_min,
        })
    }

    pub fn z_max(&self) -> f64 {
        self.z_min + self.depth_cells as f64 * self.cell_m
    }

    pub fn half_width(&self) -> f64 {
        self.lateral_cells as f64 * self.cell_m / 2.0
    }

    pub fn row_z(&self, row: usize) -> f64 {
        self.z_max() - (row as f64 + 0.5) * self.cell_m
    }

    pub fn col_x(&self, col: usize) -> f64 {
        -self.half_width() + (col as f64 + 0.5) * self.cell_m
    }

    /// Continuous `(row, col)` index coordinates of a metric point.
    pub fn metric_to_index(&self, x: f64, z: f64) -> (f64, f64) {
        (
            (self.z_max() - z) / self.cell_m - 0.5,
            (x + self.half_width()) / self.cell_m - 0.5,
        )
    }

    /// Same extent at `factor` times the resolution.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            depth_cells: self.depth_cells * factor,
            lateral_cells: self.lateral_cells * factor,
            cell_m: self.cell_m / factor as f64,
            z_min: self.z_min,
        }
    }
}

/// One pyramid level and the contiguous block of BEV depth rows it produces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSpec {
    /// 1-based level index.
    pub level: usize,
    pub factor: usize,
    pub rows: Range<usize>,
}

impl LevelSpec {
    pub fn depth_rows(&self) -> usize {
        self.rows.len()
    }
}

/// Downsampling factor `2^(i+2)` of pyramid level `i ∈ 1..=5`.
pub fn level_downsample_factor(level: usize) -> Result<usize> {
    if !(1..=5).contains(&level) {
        return Err(Error::InvalidLevel(level));
    }
    Ok(1 << (level + 2))
}

/// Assign each level a contiguous block of depth rows, finest level farthest.
///
/// The boundary between levels `i` and `i+1` sits where a BEV cell spans one
/// level-`i` pixel on the optical axis, `z = f·cell/d_i`, clamped to the grid
/// and rounded to whole rows. Boundaries are then pushed apart so every level
/// keeps at least two rows when the grid has room (one otherwise): a level
/// with a single row gives its BEV→PV attention a single key, whose softmax
/// is constant and starves the key projection of gradient.
pub fn depth_partition(spec: &BevGridSpec, cam: &CameraModel, levels: usize) -> Result<Vec<LevelSpec>> {
    if !(1..=5).contains(&levels) {
        return Err(Error::InvalidLevel(levels));
    }
    let rows = spec.depth_cells;
    if rows < levels {
        return Err(Error::Partition { rows, levels });
    }
    let mut bounds = Vec::with_capacity(levels + 1);
    bounds.push(0usize);
    for i in 1..levels {
        let d = level_downsample_factor(i)? as f64;
        let z = (cam.f * spec.cell_m / d).clamp(spec.z_min, spec.z_max());
        bounds.push(((spec.z_max() - z) / spec.cell_m).round() as usize);
    }
    bounds.push(rows);
    let min_rows = if rows >= 2 * levels { 2 } else { 1 };
    for i in 1..levels {
        bounds[i] = bounds[i].max(bounds[i - 1] + min_rows);
    }
    for i in (1..levels).rev() {
        bounds[i] = bounds[i].min(bounds[i + 1] - min_rows);
    }
    (1..=levels)
        .map(|level| {
            Ok(LevelSpec {
                level,
                factor: level_downsample_factor(level)?,
                rows: bounds[level - 1]..bounds[level],
            })
        })
        .collect()
}

/// Image column of the ground point `(x, z)`: `u = f·x/z + u0`. Not clamped.
pub fn ground_point_to_column(cam: &CameraModel, x: f64, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::BehindCamera(z));
    }
    Ok(cam.f * x / z + cam.u0)
}

/// Sampling pattern that takes a level's polar grid (`depth rows × W_i`) to
/// its Cartesian slab (`depth rows × X`). Cells whose ray leaves the image
/// (level column outside `[0, W_i − 1]`) or lies behind the camera are zero.
pub fn polar_sample_map(cam: &CameraModel, spec: &BevGridSpec, level: &LevelSpec) -> SampleMap {
    let (fs, us) = cam.scaled(level.factor);
    let width = cam.image_w / level.factor;
    let rows = level.depth_rows();
    SampleMap::from_coords(rows, width, rows, spec.lateral_cells, |r, c| {
        let z = spec.row_z(level.rows.start + r);
        if z <= 0.0 {
            return None;
        }
        let u = fs * spec.col_x(c) / z + us;
        (u >= 0.0 && u <= (width - 1) as f64).then_some((r as f64, u))
    })
}

/// Resample polar features `[C, Z_i, W_i]` onto the Cartesian slab `[C, Z_i, X]`.
pub fn polar_to_cartesian<T: Scalar>(
    g: &mut Graph<T>,
    polar: Value,
    cam: &CameraModel,
    spec: &BevGridSpec,
    level: &LevelSpec,
) -> Result<Value> {
    polar_to_cartesian_with(g, polar, Arc::new(polar_sample_map(cam, spec, level)), level)
}

/// [`polar_to_cartesian`] with a prebuilt sampling pattern.
pub fn polar_to_cartesian_with<T: Scalar>(
    g: &mut Graph<T>,
    polar: Value,
    map: Arc<SampleMap>,
    level: &LevelSpec,
) -> Result<Value> {
    let s = g.shape(polar);
    if s.len() != 3 || s[1] != level.depth_rows() {
        return Err(Error::shape(
            "polar_to_cartesian",
            s,
            &[level.depth_rows(), map.input_dims().1],
        ));
    }
    g.bilinear_sample(polar, map)
}

/// Stack per-level Cartesian slabs along depth, far level first.
pub fn concat_depth<T: Scalar>(
    g: &mut Graph<T>,
    slabs: &[Value],
    levels: &[LevelSpec],
    spec: &BevGridSpec,
) -> Result<Value> {
    if slabs.len() != levels.len() || slabs.is_empty() {
        return Err(Error::shape("concat_depth", &[slabs.len()], &[levels.len()]));
    }
    let mut next = 0;
    for (slab, level) in slabs.iter().zip(levels) {
        let s = g.shape(*slab);
        if level.rows.start != next || s.len() != 3 || s[1] != level.depth_rows() || s[2] != spec.lateral_cells {
            return Err(Error::shape(
                "concat_depth",
                s,
                &[level.rows.start, level.rows.end, spec.lateral_cells],
            ));
        }
        next = level.rows.end;
    }
    if next != spec.depth_cells {
        return Err(Error::shape("concat_depth", &[next], &[spec.depth_cells]));
    }
    g.concat(slabs, 1)
}
