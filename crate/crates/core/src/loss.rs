//! Training objective and evaluation metrics over per-class BEV maps
//! `[N_c, Z, X]`.

use std::fmt::Write as _;

use crate::autodiff::{Graph, Value};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probability clamp applied before logarithms.
pub const EPS: f64 = 1e-7;

/// Per-cell visibility of a `Z × X` grid; `true` is visible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Visibility {
    pub rows: usize,
    pub cols: usize,
    pub visible: Vec<bool>,
}

impl Visibility {
    pub fn new(rows: usize, cols: usize, visible: Vec<bool>) -> Result<Self> {
        if visible.len() != rows * cols {
            return Err(Error::shape("visibility", &[rows, cols], &[visible.len()]));
        }
        Ok(Self { rows, cols, visible })
    }

    pub fn all_visible(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            visible: vec![true; rows * cols],
        }
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn occluded_count(&self) -> usize {
        self.visible.len() - self.visible_count()
    }

    pub fn is_visible(&self, r: usize, c: usize) -> bool {
        self.visible[r * self.cols + c]
    }
}

/// Cells a metric is restricted to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Region {
    #[default]
    All,
    Visible,
    Occluded,
}

impl Region {
    fn includes(self, vis: Option<&Visibility>, cell: usize) -> bool {
        match (self, vis) {
            (Region::All, _) | (_, None) => true,
            (Region::Visible, Some(v)) => v.visible[cell],
            (Region::Occluded, Some(v)) => !v.visible[cell],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the occluded-region uncertainty term.
    pub alpha: f64,
    /// Weight of the soft-IoU term.
    pub beta: f64,
    /// Per-class BCE weights.
    pub class_weights: Vec<f64>,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, class_weights: Vec<f64>) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0) || class_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config(format!(
                "loss weights alpha={alpha} beta={beta} class weights {class_weights:?}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            class_weights,
        })
    }

    pub fn with_defaults(classes: usize) -> Self {
        Self {
            alpha: 0.001,
            beta: 0.01,
            class_weights: vec![1.0; classes],
        }
    }
}

fn map_dims<T: Scalar>(g: &Graph<T>, op: &'static str, p: Value, y: Value) -> Result<(usize, usize, usize)> {
    let (sp, sy) = (g.shape(p), g.shape(y));
    if sp != sy || sp.len() != 3 {
        return Err(Error::shape(op, sp, sy));
    }
    Ok((sp[0], sp[1], sp[2]))
}

fn check_vis(op: &'static str, vis: &Visibility, z: usize, x: usize) -> Result<()> {
    if vis.rows != z || vis.cols != x {
        return Err(Error::shape(op, &[vis.rows, vis.cols], &[z, x]));
    }
    Ok(())
}

/// Smoothed soft IoU over every cell, visible or not:
/// `1 − mean_k (Σ p·y + 1) / (Σ (p + y − p·y) + 1)`.
pub fn iou_loss_oa<T: Scalar>(g: &mut Graph<T>, p: Value, y: Value) -> Result<Value> {
    let (n, z, x) = map_dims(g, "iou_loss_oa", p, y)?;
    let py = g.mul(p, y)?;
    let s = g.add(p, y)?;
    let union = g.sub(s, py)?;
    let flat = |g: &mut Graph<T>, v: Value| -> Result<Value> {
        let r = g.reshape(v, &[n, z * x])?;
        g.sum(r, 1)
    };
    let inter = flat(g, py)?;
    let union = flat(g, union)?;
    let num = g.affine(inter, 1.0, 1.0);
    let den = g.affine(union, 1.0, 1.0);
    let ratio = g.div(num, den)?;
    let m = g.mean_all(ratio);
    Ok(g.affine(m, -1.0, 1.0))
}

/// Scalar loss plus a flag for an empty domain.
pub struct Masked {
    pub value: Value,
    pub empty: bool,
}

/// `Σ_k,cells weight[k, cell] · (target·ln p + (1−target)·ln(1−p))`, negated,
/// with `p` clamped to `[ε, 1−ε]`.
fn weighted_log_likelihood<T: Scalar>(
    g: &mut Graph<T>,
    p: Value,
    target: Value,
    weight: Tensor<T>,
) -> Result<Value> {
    let pc = g.clamp(p, EPS, 1.0 - EPS);
    let lp = g.ln(pc);
    let q = g.affine(pc, -1.0, 1.0);
    let lq = g.ln(q);
    let one_minus_t = g.affine(target, -1.0, 1.0);
    let a = g.mul(target, lp)?;
    let b = g.mul(one_minus_t, lq)?;
    let ll = g.add(a, b)?;
    let w = g.constant(weight);
    let wll = g.mul(ll, w)?;
    let s = g.sum_all(wll);
    Ok(g.scale(s, -1.0))
}

/// Class-weighted binary cross-entropy averaged over visible cells and classes.
pub fn weighted_bce<T: Scalar>(
    g: &mut Graph<T>,
    p: Value,
    y: Value,
    vis: &Visibility,
    class_weights: &[f64],
) -> Result<Masked> {
    let (n, z, x) = map_dims(g, "weighted_bce", p, y)?;
    check_vis("weighted_bce", vis, z, x)?;
    if class_weights.len() != n {
        return Err(Error::shape("weighted_bce class weights", &[class_weights.len()], &[n]));
    }
    let count = vis.visible_count();
    if count == 0 {
        return Ok(Masked {
            value: g.constant(Tensor::scalar(T::zero())),
            empty: true,
        });
    }
    let norm = 1.0 / (n * count) as f64;
    let weight = Tensor::from_fn(&[n, z, x], |i| {
        let (k, cell) = (i / (z * x), i % (z * x));
        T::from_f64_lossy(if vis.visible[cell] { class_weights[k] * norm } else { 0.0 })
    });
    Ok(Masked {
        value: weighted_log_likelihood(g, p, y, weight)?,
        empty: false,
    })
}

/// Cross-entropy toward 0.5 averaged over occluded cells and classes.
pub fn uncert_loss<T: Scalar>(g: &mut Graph<T>, p: Value, vis: &Visibility) -> Result<Masked> {
    let s = g.shape(p).to_vec();
    if s.len() != 3 {
        return Err(Error::shape("uncert_loss", &s, &[vis.rows, vis.cols]));
    }
    let (n, z, x) = (s[0], s[1], s[2]);
    check_vis("uncert_loss", vis, z, x)?;
    let count = vis.occluded_count();
    if count == 0 {
        return Ok(Masked {
            value: g.constant(Tensor::scalar(T::zero())),
            empty: true,
        });
    }
    let norm = 1.0 / (n * count) as f64;
    let weight = Tensor::from_fn(&[n, z, x], |i| {
        T::from_f64_lossy(if vis.visible[i % (z * x)] { 0.0 } else { norm })
    });
    let half = g.constant(Tensor::full(&s, T::from_f64_lossy(0.5)));
    Ok(Masked {
        value: weighted_log_likelihood(g, p, half, weight)?,
        empty: false,
    })
}

/// The full objective and its parts.
pub struct LossTerms {
    pub total: Value,
    pub bce: Value,
    pub uncert: Value,
    pub iou: Value,
    pub no_visible: bool,
    pub no_occluded: bool,
}

/// `L_bce + α·L_uncert + β·L_iou`.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    p: Value,
    y: Value,
    vis: &Visibility,
    weights: &LossWeights,
) -> Result<LossTerms> {
    let bce = weighted_bce(g, p, y, vis, &weights.class_weights)?;
    let unc = uncert_loss(g, p, vis)?;
    let iou = iou_loss_oa(g, p, y)?;
    let a = g.scale(unc.value, weights.alpha);
    let b = g.scale(iou, weights.beta);
    let t = g.add(bce.value, a)?;
    let total = g.add(t, b)?;
    Ok(LossTerms {
        total,
        bce: bce.value,
        uncert: unc.value,
        iou,
        no_visible: bce.empty,
        no_occluded: unc.empty,
    })
}

/// Inverse square-root frequencies normalised to mean 1. Classes that never
/// occur get the largest weight seen among present classes.
pub fn class_weights_from_frequency(freq: &[f64]) -> Vec<f64> {
    let raw: Vec<Option<f64>> = freq
        .iter()
        .map(|&f| (f > 0.0).then(|| 1.0 / f.sqrt()))
        .collect();
    let fallback = raw.iter().flatten().copied().fold(0.0, f64::max);
    let fallback = if fallback > 0.0 { fallback } else { 1.0 };
    let w: Vec<f64> = raw.into_iter().map(|r| r.unwrap_or(fallback)).collect();
    let mean = w.iter().sum::<f64>() / w.len().max(1) as f64;
    w.into_iter().map(|v| v / mean).collect()
}

/// Fraction of positive cells per class over a set of binary maps.
pub fn class_frequencies<'a, T: Scalar>(maps: impl IntoIterator<Item = &'a Tensor<T>>) -> Vec<f64> {
    let mut pos: Vec<f64> = Vec::new();
    let mut cells = 0usize;
    for m in maps {
        let n = m.shape()[0];
        let per = m.numel() / n.max(1);
        pos.resize(n, 0.0);
        for (i, &v) in m.data().iter().enumerate() {
            if v > T::zero() {
                pos[i / per] += 1.0;
            }
        }
        cells += per;
    }
    pos.into_iter().map(|p| p / cells.max(1) as f64).collect()
}

/// Intersection and union counts per class, accumulated over any number of
/// maps.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            intersection: vec![0; classes],
            union: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.intersection.len()
    }

    /// Add one map pair; `pred` is binarised at `threshold` (`p ≥ threshold`),
    /// `truth` at 0.5.
    pub fn add<T: Scalar>(
        &mut self,
        pred: &Tensor<T>,
        truth: &Tensor<T>,
        threshold: f64,
        region: Region,
        vis: Option<&Visibility>,
    ) -> Result<()> {
        if pred.shape() != truth.shape() || pred.rank() != 3 || pred.shape()[0] != self.classes() {
            return Err(Error::shape("iou_metric", pred.shape(), truth.shape()));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
        }
        let per = pred.shape()[1] * pred.shape()[2];
        if let Some(v) = vis {
            check_vis("iou_metric", v, pred.shape()[1], pred.shape()[2])?;
        }
        let th = T::from_f64_lossy(threshold);
        let half = T::from_f64_lossy(0.5);
        for (i, (&p, &y)) in pred.data().iter().zip(truth.data()).enumerate() {
            if !region.includes(vis, i % per) {
                continue;
            }
            let (a, b) = (p >= th, y >= half);
            let k = i / per;
            self.intersection[k] += (a && b) as u64;
            self.union[k] += (a || b) as u64;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.intersection.iter_mut().zip(&other.intersection) {
            *a += b;
        }
        for (a, b) in self.union.iter_mut().zip(&other.union) {
            *a += b;
        }
    }

    /// Per-class IoU; an empty union counts as 1.
    pub fn iou(&self) -> Vec<f64> {
        self.intersection
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| if u == 0 { 1.0 } else { i as f64 / u as f64 })
            .collect()
    }

    pub fn miou(&self) -> f64 {
        mean(&self.iou())
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-class IoU of a single map pair at `threshold`.
pub fn iou_metric<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>, threshold: f64) -> Result<Vec<f64>> {
    let mut c = Confusion::new(pred.shape().first().copied().unwrap_or(0));
    c.add(pred, truth, threshold, Region::All, None)?;
    Ok(c.iou())
}

pub fn miou<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>, threshold: f64) -> Result<f64> {
    Ok(mean(&iou_metric(pred, truth, threshold)?))
}

/// Nearest-neighbour resize of every channel of `[C, H, W]` to `[C, h, w]`.
pub fn resize_nearest<T: Scalar>(t: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    if t.rank() != 3 || h == 0 || w == 0 {
        return Err(Error::shape("resize_nearest", t.shape(), &[h, w]));
    }
    let (c, sh, sw) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let src = |o: usize, n: usize, so: usize| ((2 * o + 1) * so / (2 * n)).min(so - 1);
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (ch, r, col) = (i / (h * w), (i / w) % h, i % w);
        t.data()[(ch * sh + src(r, h, sh)) * sw + src(col, w, sw)]
    }))
}

/// Nearest-neighbour resize of a visibility mask.
pub fn resize_visibility(v: &Visibility, h: usize, w: usize) -> Visibility {
    let src = |o: usize, n: usize, so: usize| ((2 * o + 1) * so / (2 * n)).min(so - 1);
    let visible = (0..h * w)
        .map(|i| v.visible[src(i / w, h, v.rows) * v.cols + src(i % w, w, v.cols)])
        .collect();
    Visibility { rows: h, cols: w, visible }
}

/// Evaluation output size used by the full-scale protocol.
pub const PROTOCOL_SIZE: (usize, usize) = (196, 200);

/// Per-class IoU table with layout/object group means.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub names: Vec<String>,
    pub is_static: Vec<bool>,
    pub iou: Vec<f64>,
}

impl MetricReport {
    pub fn new(names: Vec<String>, is_static: Vec<bool>, confusion: &Confusion) -> Result<Self> {
        if names.len() != confusion.classes() || is_static.len() != names.len() {
            return Err(Error::shape(
                "metric report",
                &[names.len(), is_static.len()],
                &[confusion.classes()],
            ));
        }
        Ok(Self {
            names,
            is_static,
            iou: confusion.iou(),
        })
    }

    fn group(&self, want: bool) -> f64 {
        let v: Vec<f64> = self
            .iou
            .iter()
            .zip(&self.is_static)
            .filter(|(_, &s)| s == want)
            .map(|(&i, _)| i)
            .collect();
        mean(&v)
    }

    pub fn miou(&self) -> f64 {
        mean(&self.iou)
    }

    pub fn layout_miou(&self) -> f64 {
        self.group(true)
    }

    pub fn object_miou(&self) -> f64 {
        self.group(false)
    }

    pub fn to_text(&self) -> String {
        let width = self.names.iter().map(|n| n.len()).max().unwrap_or(5).max(6);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>7}", "class", "IoU");
        for (n, v) in self.names.iter().zip(&self.iou) {
            let _ = writeln!(s, "{n:<width$}  {:>7.4}", v);
        }
        let _ = writeln!(s, "{:<width$}  {:>7.4}", "layout", self.layout_miou());
        let _ = writeln!(s, "{:<width$}  {:>7.4}", "object", self.object_miou());
        let _ = writeln!(s, "mIoU {:.4}", self.miou());
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,group,iou\n");
        for ((n, v), st) in self.names.iter().zip(&self.iou).zip(&self.is_static) {
            let _ = writeln!(s, "{n},{},{v}", if *st { "layout" } else { "object" });
        }
        let _ = writeln!(s, "layout,group,{}", self.layout_miou());
        let _ = writeln!(s, "object,group,{}", self.object_miou());
        let _ = writeln!(s, "mIoU,total,{}", self.miou());
        s
    }
}
