//! Ego-motion alignment of past BEV features, the memory bank that holds
//! them, and channel-concatenation fusion.
//!
//! Poses live on the ground plane: `(x, z)` in a fixed world frame and a yaw
//! `θ` such that a camera-frame point `p` sits at `R(θ)·p + (x, z)` with
//! `R(θ) = [[cos θ, −sin θ], [sin θ, cos θ]]`. Positive yaw turns left.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::autodiff::{Graph, SampleMap, Value};
use crate::error::{Error, Result};
use crate::geometry::BevGridSpec;
use crate::tensor::{Scalar, Tensor};

/// Wrap an angle into `(−π, π]`.
pub fn normalize_yaw(a: f64) -> f64 {
    let mut y = a.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

fn rotate(theta: f64, (x, z): (f64, f64)) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c * x - s * z, s * x + c * z)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoPose {
    pub t: usize,
    pub scene_id: u64,
    pub x: f64,
    pub z: f64,
    pub yaw: f64,
}

impl EgoPose {
    pub fn new(t: usize, scene_id: u64, x: f64, z: f64, yaw: f64) -> Self {
        Self {
            t,
            scene_id,
            x,
            z,
            yaw: normalize_yaw(yaw),
        }
    }

    /// Camera-frame point to world frame.
    pub fn to_world(&self, p: (f64, f64)) -> (f64, f64) {
        let (x, z) = rotate(self.yaw, p);
        (x + self.x, z + self.z)
    }

    /// World point to camera frame.
    pub fn from_world(&self, p: (f64, f64)) -> (f64, f64) {
        rotate(-self.yaw, (p.0 - self.x, p.1 - self.z))
    }
}

/// Rigid map `p ↦ R(r)·p + m` from one frame's BEV coordinates into another's.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionDelta {
    pub r: f64,
    pub m: (f64, f64),
}

impl MotionDelta {
    pub const IDENTITY: Self = Self { r: 0.0, m: (0.0, 0.0) };

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let (x, z) = rotate(self.r, p);
        (x + self.m.0, z + self.m.1)
    }

    pub fn inverse_apply(&self, p: (f64, f64)) -> (f64, f64) {
        rotate(-self.r, (p.0 - self.m.0, p.1 - self.m.1))
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &MotionDelta) -> MotionDelta {
        let (x, z) = rotate(next.r, self.m);
        MotionDelta {
            r: normalize_yaw(self.r + next.r),
            m: (x + next.m.0, z + next.m.1),
        }
    }
}

/// Transform taking `prev`'s BEV coordinates into `reference`'s.
pub fn relative_motion(prev: &EgoPose, reference: &EgoPose) -> MotionDelta {
    MotionDelta {
        r: normalize_yaw(prev.yaw - reference.yaw),
        m: rotate(-reference.yaw, (prev.x - reference.x, prev.z - reference.z)),
    }
}

/// Sampling pattern that resamples a past grid into the reference frame:
/// each destination cell centre is pulled back through the inverse motion.
pub fn alignment_map(delta: &MotionDelta, spec: &BevGridSpec) -> SampleMap {
    let (zc, xc) = (spec.depth_cells, spec.lateral_cells);
    SampleMap::from_coords(zc, xc, zc, xc, |r, c| {
        let p = delta.inverse_apply((spec.col_x(c), spec.row_z(r)));
        Some(spec.metric_to_index(p.0, p.1))
    })
}

/// Align a past feature grid `[C, Z, X]` to the reference frame. On a scene
/// change the reference features are returned instead.
pub fn align_history<T: Scalar>(
    g: &mut Graph<T>,
    prev: Value,
    delta: &MotionDelta,
    scene_match: bool,
    reference: Value,
    spec: &BevGridSpec,
) -> Result<Value> {
    let (sp, sr) = (g.shape(prev), g.shape(reference));
    if sp != sr || sp.len() != 3 || sp[1] != spec.depth_cells || sp[2] != spec.lateral_cells {
        return Err(Error::shape("align_history", sp, sr));
    }
    if !scene_match {
        return Ok(reference);
    }
    g.bilinear_sample(prev, Arc::new(alignment_map(delta, spec)))
}

/// Bounded FIFO of past calibrated BEV features. Entries are plain tensors,
/// so nothing read from the bank can carry gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank<T> {
    capacity: usize,
    entries: VecDeque<(Tensor<T>, EgoPose)>,
}

impl<T: Scalar> MemoryBank<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn push(&mut self, features: Tensor<T>, pose: EgoPose) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((features, pose));
    }

    /// Oldest first.
    pub fn read(&self) -> Vec<(Tensor<T>, EgoPose)> {
        self.entries.iter().cloned().collect()
    }

    /// Entries as constants of `g`, oldest first.
    pub fn read_into(&self, g: &mut Graph<T>) -> Vec<(Value, EgoPose)> {
        self.entries
            .iter()
            .map(|(t, p)| (g.constant(t.clone()), *p))
            .collect()
    }
}

/// Read the bank, align every entry to `pose`, and pad at the old end with
/// `reference` up to `n_his` grids.
pub fn gather_history<T: Scalar>(
    g: &mut Graph<T>,
    bank: &MemoryBank<T>,
    pose: &EgoPose,
    reference: Value,
    spec: &BevGridSpec,
    n_his: usize,
) -> Result<Vec<Value>> {
    let entries = bank.read_into(g);
    let skip = entries.len().saturating_sub(n_his);
    let mut aligned = Vec::with_capacity(n_his);
    for (v, p) in entries.into_iter().skip(skip) {
        let delta = relative_motion(&p, pose);
        aligned.push(align_history(g, v, &delta, p.scene_id == pose.scene_id, reference, spec)?);
    }
    Ok(pad_history(aligned, reference, n_his))
}

/// Fill missing (oldest) slots with `reference`.
pub fn pad_history(aligned: Vec<Value>, reference: Value, n_his: usize) -> Vec<Value> {
    let missing = n_his.saturating_sub(aligned.len());
    std::iter::repeat_n(reference, missing).chain(aligned).collect()
}

/// Concatenate `n_his` aligned grids (oldest first) and the reference along
/// channels, then mix back to `C` channels with the 1×1 convolution `φ`.
pub fn aggregate<T: Scalar>(
    g: &mut Graph<T>,
    aligned: &[Value],
    reference: Value,
    phi_w: Value,
    phi_b: Option<Value>,
) -> Result<Value> {
    let s = g.shape(reference).to_vec();
    for &a in aligned {
        if g.shape(a) != s {
            return Err(Error::shape("aggregate", g.shape(a), &s));
        }
    }
    let sw = g.shape(phi_w);
    if s.len() != 3 || sw.len() != 2 || sw[1] != s[0] * (aligned.len() + 1) {
        return Err(Error::shape("aggregate", sw, &[s[0], s[0] * (aligned.len() + 1)]));
    }
    let x = if aligned.is_empty() {
        reference
    } else {
        let mut parts = aligned.to_vec();
        parts.push(reference);
        g.concat(&parts, 0)?
    };
    g.conv1x1(x, phi_w, phi_b)
}

/// `φ` weights `[C, C(n_his+1)]` that pass the reference block through and
/// ignore history.
pub fn reference_passthrough<T: Scalar>(channels: usize, n_his: usize) -> Tensor<T> {
    let cin = channels * (n_his + 1);
    let off = channels * n_his;
    Tensor::from_fn(&[channels, cin], |i| {
        let (o, c) = (i / cin, i % cin);
        if c == off + o {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// One `t scene_id x z yaw` line per pose.
pub fn format_pose_trace(poses: &[EgoPose]) -> String {
    let mut s = String::new();
    for p in poses {
        let _ = writeln!(s, "{} {} {} {} {}", p.t, p.scene_id, p.x, p.z, p.yaw);
    }
    s
}

pub fn parse_pose_trace(text: &str) -> Result<Vec<EgoPose>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Format(format!("pose trace line {}: {line:?}", n + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
        out.push(EgoPose::new(
            f[0].parse().map_err(|_| bad())?,
            f[1].parse().map_err(|_| bad())?,
            num(f[2])?,
            num(f[3])?,
            num(f[4])?,
        ));
    }
    Ok(out)
}

pub fn write_pose_trace(path: &Path, poses: &[EgoPose]) -> Result<()> {
    std::fs::write(path, format_pose_trace(poses)).map_err(|e| Error::io(path, e))
}

pub fn read_pose_trace(path: &Path) -> Result<Vec<EgoPose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose_trace(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    /// Homogeneous camera→world matrix of a pose.
    fn pose_matrix(p: &EgoPose) -> [[f64; 3]; 3] {
        let (s, c) = p.yaw.sin_cos();
        [[c, -s, p.x], [s, c, p.z], [0.0, 0.0, 1.0]]
    }

    fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| (0..3).map(|j| m[i][j] * v[j]).sum())
    }

    fn invert_rigid(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let (c, s) = (m[0][0], m[1][0]);
        let (tx, tz) = (m[0][2], m[1][2]);
        [[c, s, -(c * tx + s * tz)], [-s, c, s * tx - c * tz], [0.0, 0.0, 1.0]]
    }

    /// Map a prev-frame point to the reference frame through the world.
    fn via_world(prev: &EgoPose, reference: &EgoPose, p: (f64, f64)) -> (f64, f64) {
        let w = mat_vec(&pose_matrix(prev), [p.0, p.1, 1.0]);
        let r = mat_vec(&invert_rigid(&pose_matrix(reference)), w);
        (r[0], r[1])
    }

    fn close(a: (f64, f64), b: (f64, f64), tol: f64) -> bool {
        (a.0 - b.0).abs() < tol && (a.1 - b.1).abs() < tol
    }

    #[test]
    fn yaw_wraps_into_half_open_interval() {
        assert_eq!(normalize_yaw(PI), PI);
        assert!((normalize_yaw(-PI) - PI).abs() < 1e-15);
        assert!((normalize_yaw(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
        assert_eq!(normalize_yaw(0.25), 0.25);
    }

    #[test]
    fn identical_poses_give_identity() {
        let p = EgoPose::new(0, 1, 3.0, -2.0, 0.7);
        let d = relative_motion(&p, &p);
        assert_eq!(d.r, 0.0);
        assert!(close(d.m, (0.0, 0.0), 1e-15));
    }

    #[test]
    fn forward_step_moves_content_backward() {
        let prev = EgoPose::new(0, 1, 0.0, 0.0, 0.0);
        let cur = EgoPose::new(1, 1, 0.0, 1.0, 0.0);
        let d = relative_motion(&prev, &cur);
        assert_eq!(d.r, 0.0);
        assert!(close(d.m, (0.0, -1.0), 1e-15));
        let p = (0.7, 5.0);
        assert!(close(d.apply(p), via_world(&prev, &cur, p), 1e-12));
    }

    #[test]
    fn left_turn_in_place() {
        let prev = EgoPose::new(0, 1, 2.0, 3.0, 0.0);
        let cur = EgoPose::new(1, 1, 2.0, 3.0, FRAC_PI_2);
        let d = relative_motion(&prev, &cur);
        assert!((d.r + FRAC_PI_2).abs() < 1e-15);
        // straight ahead before the turn is on the right afterwards
        assert!(close(d.apply((0.0, 4.0)), (4.0, 0.0), 1e-12));
        assert!(close(d.apply((0.0, 4.0)), via_world(&prev, &cur, (0.0, 4.0)), 1e-12));
    }

    #[test]
    fn random_poses_agree_with_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let mut pose = || {
                EgoPose::new(0, 0, rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-4.0..4.0))
            };
            let (a, b) = (pose(), pose());
            let d = relative_motion(&a, &b);
            let p = (3.0, 7.0);
            assert!(close(d.apply(p), via_world(&a, &b, p), 1e-9));
            assert!(close(d.inverse_apply(d.apply(p)), p, 1e-9));
        }
    }

    proptest! {
        #[test]
        fn composition_matches_direct(
            a in (-30.0f64..30.0, -30.0f64..30.0, -3.1f64..3.1),
            b in (-30.0f64..30.0, -30.0f64..30.0, -3.1f64..3.1),
            c in (-30.0f64..30.0, -30.0f64..30.0, -3.1f64..3.1),
        ) {
            let (pa, pb, pc) = (
                EgoPose::new(0, 0, a.0, a.1, a.2),
                EgoPose::new(1, 0, b.0, b.1, b.2),
                EgoPose::new(2, 0, c.0, c.1, c.2),
            );
            let composed = relative_motion(&pa, &pb).then(&relative_motion(&pb, &pc));
            let direct = relative_motion(&pa, &pc);
            let dr = normalize_yaw(composed.r - direct.r).abs();
            prop_assert!(dr < 1e-9 || (dr - 2.0 * PI).abs() < 1e-9);
            prop_assert!(close(composed.m, direct.m, 1e-9));
        }
    }

    fn field(spec: &BevGridSpec, channels: usize, f: impl Fn(usize, f64, f64) -> f64) -> Tensor<f64> {
        let (z, x) = (spec.depth_cells, spec.lateral_cells);
        Tensor::from_fn(&[channels, z, x], |i| {
            let (ch, r, c) = (i / (z * x), (i / x) % z, i % x);
            f(ch, spec.col_x(c), spec.row_z(r))
        })
    }

    #[test]
    fn identity_warp_is_exact() {
        let spec = BevGridSpec::new(24, 20, 0.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::from_fn(&[3, 24, 20], |_| rng.random_range(-1.0..1.0));
        let mut g = Graph::<f64>::new();
        let b = g.constant(t.clone());
        let out = align_history(&mut g, b, &MotionDelta::IDENTITY, true, b, &spec).unwrap();
        assert_eq!(g.data(out), &t);
        let mean = |t: &Tensor<f64>| t.sum() / t.numel() as f64;
        assert_eq!(mean(g.data(out)), mean(&t));
    }

    #[test]
    fn scene_change_returns_reference() {
        let spec = BevGridSpec::new(6, 4, 0.5, 1.0).unwrap();
        let mut g = Graph::<f64>::new();
        let prev = g.variable(Tensor::full(&[2, 6, 4], 5.0));
        let reference = g.variable(Tensor::from_fn(&[2, 6, 4], |i| i as f64));
        let d = MotionDelta { r: 0.3, m: (1.0, -2.0) };
        let out = align_history(&mut g, prev, &d, false, reference, &spec).unwrap();
        assert_eq!(out, reference);
        let s = g.sum_all(out);
        g.backward(s).unwrap();
        assert!(g.grad(prev).is_none());
        assert!(g.grad(reference).is_some());
        let bad = g.constant(Tensor::zeros(&[2, 6, 5]));
        assert!(align_history(&mut g, bad, &d, true, reference, &spec).is_err());
    }

    #[test]
    fn quarter_turns_are_index_permutations() {
        for n in [5usize, 6] {
            let half = n as f64 * 0.5 / 2.0;
            let spec = BevGridSpec::new(n, n, 0.5, -half).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let t = Tensor::from_fn(&[2, n, n], |_| rng.random_range(-1.0..1.0));
            for k in 1..4 {
                let d = MotionDelta { r: k as f64 * FRAC_PI_2, m: (0.0, 0.0) };
                let mut g = Graph::<f64>::new();
                let b = g.constant(t.clone());
                let v = align_history(&mut g, b, &d, true, b, &spec).unwrap();
                let out = g.data(v).clone();
                for ch in 0..2 {
                    for r in 0..n {
                        for c in 0..n {
                            // pre-image of the destination centre, by exact integer rotation
                            let (mut i, mut j) = (r, c);
                            for _ in 0..k {
                                // pre-image of (x, z) under a quarter turn is (z, −x)
                                (i, j) = (j, n - 1 - i);
                            }
                            let expect = t.at(&[ch, i, j]);
                            assert_eq!(out.at(&[ch, r, c]), expect, "n={n} k={k} ({r},{c})");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn two_warps_match_composed_warp_on_smooth_field() {
        let spec = BevGridSpec::new(24, 24, 0.5, 1.0).unwrap();
        let f = |_: usize, x: f64, z: f64| {
            0.5 * x - 0.3 * z + 0.002 * (x * x + z * z) + 0.05 * (0.2 * x).sin()
        };
        let t = field(&spec, 1, f);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let mut delta = || MotionDelta {
                r: rng.random_range(-0.2..0.2),
                m: (rng.random_range(-1.0..1.0), rng.random_range(-1.5..0.0)),
            };
            let (d1, d2) = (delta(), delta());
            let mut g = Graph::<f64>::new();
            let b = g.constant(t.clone());
            let once = align_history(&mut g, b, &d1, true, b, &spec).unwrap();
            let twice = align_history(&mut g, once, &d2, true, b, &spec).unwrap();
            let direct = align_history(&mut g, b, &d1.then(&d2), true, b, &spec).unwrap();
            let n = spec.depth_cells as f64;
            let inside = |p: (f64, f64), margin: f64| {
                let (i, j) = spec.metric_to_index(p.0, p.1);
                i >= margin && j >= margin && i <= n - 1.0 - margin && j <= n - 1.0 - margin
            };
            let mut checked = 0;
            for r in 0..spec.depth_cells {
                for c in 0..spec.lateral_cells {
                    let p = (spec.col_x(c), spec.row_z(r));
                    let mid = d2.inverse_apply(p);
                    let src = d1.inverse_apply(mid);
                    if inside(mid, 1.0) && inside(src, 2.0) {
                        let a = g.data(twice).at(&[0, r, c]);
                        let b = g.data(direct).at(&[0, r, c]);
                        assert!((a - b).abs() < 1e-3, "({r},{c}) {a} vs {b}");
                        checked += 1;
                    }
                }
            }
            assert!(checked > 100);
        }
    }

    #[test]
    fn bank_is_a_bounded_fifo() {
        let mut bank = MemoryBank::<f64>::new(2);
        assert!(bank.read().is_empty());
        for t in 0..3 {
            bank.push(Tensor::full(&[1, 1, 1], t as f64), EgoPose::new(t, 0, 0.0, 0.0, 0.0));
        }
        let r = bank.read();
        assert_eq!(r.len(), 2);
        assert_eq!(r.iter().map(|e| e.1.t).collect::<Vec<_>>(), [1, 2]);
        assert_eq!(bank.read(), r);
        let mut g = Graph::<f64>::new();
        assert!(bank.read_into(&mut g).iter().all(|(v, _)| !g.requires_grad(*v)));
        let mut none = MemoryBank::<f64>::new(0);
        none.push(Tensor::zeros(&[1]), EgoPose::new(0, 0, 0.0, 0.0, 0.0));
        assert!(none.is_empty());
    }

    #[test]
    fn empty_window_with_passthrough_returns_reference() {
        let mut g = Graph::<f64>::new();
        let b = g.constant(Tensor::from_fn(&[3, 2, 2], |i| i as f64 * 0.5));
        let phi = g.constant(reference_passthrough(3, 0));
        let out = aggregate(&mut g, &[], b, phi, None).unwrap();
        assert_eq!(g.data(out), g.data(b));
    }

    #[test]
    fn bank_entries_receive_no_gradient() {
        let spec = BevGridSpec::new(4, 4, 0.5, 1.0).unwrap();
        let mut bank = MemoryBank::<f64>::new(2);
        let mut g = Graph::<f64>::new();
        let stored = g.variable(Tensor::full(&[2, 4, 4], 1.5));
        bank.push(g.data(stored).clone(), EgoPose::new(0, 7, 0.0, 0.0, 0.0));
        let b_calib = g.variable(Tensor::full(&[2, 4, 4], 0.5));
        let pose = EgoPose::new(1, 7, 0.0, 0.5, 0.05);
        let hist = gather_history(&mut g, &bank, &pose, b_calib, &spec, 2).unwrap();
        assert_eq!(hist.len(), 2);
        assert_eq!(hist[0], b_calib);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = g.variable(Tensor::from_fn(&[2, 6], |_| rng.random_range(-1.0..1.0)));
        let out = aggregate(&mut g, &hist, b_calib, phi, None).unwrap();
        let s = g.sum_all(out);
        g.backward(s).unwrap();
        assert!(g.grad(stored).is_none());
        let hist_const = bank.read_into(&mut g)[0].0;
        assert!(g.grad(hist_const).is_none());
        assert!(g.grad(phi).unwrap().data().iter().any(|&v| v != 0.0));
        assert!(g.grad(b_calib).unwrap().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn aggregate_gradient_wrt_phi() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let grids: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::from_fn(&[4, 3, 5], |_| rng.random_range(-1.0..1.0))).collect();
        let phi = Tensor::from_fn(&[4, 12], |_| rng.random_range(-1.0..1.0));
        let weights = Tensor::from_fn(&[4, 3, 5], |_| rng.random_range(-1.0..1.0));
        let report = grad_check(
            |g: &mut Graph<f64>, v: &[Value]| {
                let h: Vec<Value> = grids[..2].iter().map(|t| g.constant(t.clone())).collect();
                let r = g.constant(grids[2].clone());
                let out = aggregate(g, &h, r, v[0], None)?;
                let w = g.constant(weights.clone());
                let m = g.mul(out, w)?;
                Ok(g.sum_all(m))
            },
            &[phi],
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed());
    }

    #[test]
    fn pose_trace_round_trip() {
        let poses = vec![
            EgoPose::new(0, 42, 0.1, -3.25, 0.3),
            EgoPose::new(1, 42, 1.0 / 3.0, 2.0e-7, -1.2),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        write_pose_trace(&path, &poses).unwrap();
        assert_eq!(read_pose_trace(&path).unwrap(), poses);
        assert!(parse_pose_trace("0 1 2 3").is_err());
        assert!(parse_pose_trace("0 1 x 3 4").is_err());
        assert!(read_pose_trace(&dir.path().join("missing.txt")).is_err());
    }
}
