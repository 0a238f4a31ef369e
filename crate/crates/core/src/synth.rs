//! Procedural flat-ground driving world: layout rectangles, box-shaped
//! agents, an analytic per-pixel renderer, BEV ground truth with ray-cast
//! visibility, ego trajectories, and a directory format for dumps.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{BevGridSpec, CameraModel};
use crate::loss::Visibility;
use crate::parallel::{self, Parallelism};
use crate::temporal::{self, EgoPose};
use crate::tensor::Tensor;

mod io;
pub use io::{read_dataset, write_dataset};

/// Semantic classes, in channel order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClassKind {
    Drivable,
    Crossing,
    Car,
    Pedestrian,
}

impl ClassKind {
    pub const ALL: [ClassKind; 4] = [
        ClassKind::Drivable,
        ClassKind::Crossing,
        ClassKind::Car,
        ClassKind::Pedestrian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassKind::Drivable => "drivable",
            ClassKind::Crossing => "crossing",
            ClassKind::Car => "car",
            ClassKind::Pedestrian => "pedestrian",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn is_static(self) -> bool {
        matches!(self, ClassKind::Drivable | ClassKind::Crossing)
    }

    pub fn color(self) -> [u8; 3] {
        match self {
            ClassKind::Drivable => [110, 110, 115],
            ClassKind::Crossing => [235, 235, 220],
            ClassKind::Car => [200, 40, 40],
            ClassKind::Pedestrian => [40, 60, 210],
        }
    }

    /// First `n` classes in channel order.
    pub fn first(n: usize) -> Result<Vec<ClassKind>> {
        if !(1..=4).contains(&n) {
            return Err(Error::Config(format!("{n} classes requested, 1..=4 available")));
        }
        Ok(Self::ALL[..n].to_vec())
    }
}

pub const SKY: [u8; 3] = [150, 195, 235];
pub const GROUND: [u8; 3] = [80, 115, 60];

/// Oriented rectangle on the ground plane. `half_w` runs along the local x
/// axis, `half_l` along local z; `angle` rotates local into world like a yaw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub cx: f64,
    pub cz: f64,
    pub half_w: f64,
    pub half_l: f64,
    pub angle: f64,
}

impl Rect {
    pub fn to_local(&self, x: f64, z: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dz) = (x - self.cx, z - self.cz);
        (c * dx + s * dz, -s * dx + c * dz)
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        let (lx, lz) = self.to_local(x, z);
        lx.abs() <= self.half_w && lz.abs() <= self.half_l
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_w * self.half_l
    }

    /// Parameter interval `[t0, t1]` over which `a + t(b − a)` lies inside.
    pub fn clip_segment(&self, a: (f64, f64), b: (f64, f64)) -> Option<(f64, f64)> {
        let la = self.to_local(a.0, a.1);
        let lb = self.to_local(b.0, b.1);
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for (o, d, h) in [(la.0, lb.0 - la.0, self.half_w), (la.1, lb.1 - la.1, self.half_l)] {
            if d.abs() < 1e-15 {
                if o.abs() > h {
                    return None;
                }
                continue;
            }
            let (u, v) = ((-h - o) / d, (h - o) / d);
            t0 = t0.max(u.min(v));
            t1 = t1.min(u.max(v));
        }
        (t0 <= t1).then_some((t0, t1))
    }

    /// Same rectangle expressed in a camera frame.
    pub fn in_frame(&self, pose: &EgoPose) -> Rect {
        let (cx, cz) = pose.from_world((self.cx, self.cz));
        Rect {
            cx,
            cz,
            angle: self.angle - pose.yaw,
            ..*self
        }
    }

    fn overlaps_with_margin(&self, other: &Rect, margin: f64) -> bool {
        let d = ((self.cx - other.cx).powi(2) + (self.cz - other.cz).powi(2)).sqrt();
        let r = |q: &Rect| q.half_w.hypot(q.half_l);
        d < r(self) + r(other) + margin
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Agent {
    pub class: ClassKind,
    /// Footprint at frame 0.
    pub footprint: Rect,
    pub height: f64,
    /// World displacement per frame.
    pub velocity: (f64, f64),
}

impl Agent {
    pub fn footprint_at(&self, t: usize) -> Rect {
        Rect {
            cx: self.footprint.cx + self.velocity.0 * t as f64,
            cz: self.footprint.cz + self.velocity.1 * t as f64,
            ..self.footprint
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldScene {
    pub id: u64,
    pub classes: Vec<ClassKind>,
    pub drivable: Vec<Rect>,
    pub crossings: Vec<Rect>,
    pub agents: Vec<Agent>,
}

impl WorldScene {
    /// Static classes present at a world point.
    pub fn ground_classes(&self, x: f64, z: f64) -> (bool, bool) {
        (
            self.drivable.iter().any(|r| r.contains(x, z)),
            self.crossings.iter().any(|r| r.contains(x, z)),
        )
    }

    /// Colour of the bare ground at a world point.
    pub fn ground_color(&self, x: f64, z: f64) -> [u8; 3] {
        match self.ground_classes(x, z) {
            (_, true) => ClassKind::Crossing.color(),
            (true, false) => ClassKind::Drivable.color(),
            _ => GROUND,
        }
    }
}

/// Inclusive integer range used by the generator.
pub type Count = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub classes: usize,
    pub road_width: (f64, f64),
    /// Road runs along world z over `[-20, length]`.
    pub length: f64,
    pub side_road_prob: f64,
    pub patches: Count,
    pub crossings: Count,
    pub cars: Count,
    pub pedestrians: Count,
    /// Maximum agent displacement per frame.
    pub car_speed: f64,
    pub pedestrian_speed: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            road_width: (6.0, 9.0),
            length: 90.0,
            side_road_prob: 0.5,
            patches: (0, 2),
            crossings: (1, 2),
            cars: (3, 8),
            pedestrians: (1, 4),
            car_speed: 0.6,
            pedestrian_speed: 0.2,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [self.patches, self.crossings, self.cars, self.pedestrians];
        if !(self.road_width.0 > 0.0 && self.road_width.0 <= self.road_width.1)
            || !(self.length > 20.0)
            || ranges.iter().any(|r| r.0 > r.1)
            || !(0.0..=1.0).contains(&self.side_road_prob)
            || self.car_speed < 0.0
            || self.pedestrian_speed < 0.0
        {
            return Err(Error::Scene(format!("{self:?}")));
        }
        ClassKind::first(self.classes).map(|_| ())
    }
}

fn count(rng: &mut ChaCha8Rng, (lo, hi): Count) -> usize {
    rng.random_range(lo..=hi)
}

/// Deterministic scene for a seed.
pub fn generate_scene(seed: u64, cfg: &WorldConfig) -> Result<WorldScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = rng.random_range(cfg.road_width.0..=cfg.road_width.1);
    let z0 = -20.0;
    let road = Rect {
        cx: 0.0,
        cz: (z0 + cfg.length) / 2.0,
        half_w: width / 2.0,
        half_l: (cfg.length - z0) / 2.0,
        angle: 0.0,
    };
    let mut drivable = vec![road];
    if rng.random_bool(cfg.side_road_prob) {
        drivable.push(Rect {
            cx: 0.0,
            cz: rng.random_range(8.0..cfg.length - 10.0),
            half_w: 40.0,
            half_l: rng.random_range(2.5..4.5),
            angle: rng.random_range(-0.3..0.3),
        });
    }
    for _ in 0..count(&mut rng, cfg.patches) {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let half_w = rng.random_range(1.5..4.0);
        drivable.push(Rect {
            cx: side * (width / 2.0 + half_w * 0.8),
            cz: rng.random_range(2.0..cfg.length - 5.0),
            half_w,
            half_l: rng.random_range(2.0..6.0),
            angle: rng.random_range(-0.5..0.5),
        });
    }
    let crossings = (0..count(&mut rng, cfg.crossings))
        .map(|_| Rect {
            cx: 0.0,
            cz: rng.random_range(5.0..cfg.length - 5.0),
            half_w: width / 2.0,
            half_l: rng.random_range(1.5..2.5),
            angle: 0.0,
        })
        .collect();

    let mut agents: Vec<Agent> = Vec::new();
    let mut place = |rng: &mut ChaCha8Rng, class: ClassKind| -> Result<()> {
        for _ in 0..1000 {
            let (half_w, half_l, height, speed) = match class {
                ClassKind::Car => (
                    rng.random_range(0.85..1.0),
                    rng.random_range(1.9..2.4),
                    rng.random_range(1.5..1.9),
                    cfg.car_speed,
                ),
                _ => (0.3, 0.3, rng.random_range(1.6..1.9), cfg.pedestrian_speed),
            };
            let lim = (width / 2.0 - half_w).max(0.0);
            let cx = rng.random_range(-lim..=lim);
            let cz = rng.random_range(3.0..cfg.length - 10.0);
            let angle = match class {
                ClassKind::Car => rng.random_range(-0.15..0.15) + if rng.random_bool(0.3) { std::f64::consts::PI } else { 0.0 },
                _ => rng.random_range(-3.1..3.1),
            };
            let footprint = Rect {
                cx,
                cz,
                half_w,
                half_l,
                angle,
            };
            if agents.iter().any(|a| a.footprint.overlaps_with_margin(&footprint, 0.5)) {
                continue;
            }
            let v = rng.random_range(0.0..=speed);
            let velocity = match class {
                // cars drive along their heading
                ClassKind::Car => (-v * angle.sin(), v * angle.cos()),
                _ => {
                    let dir: f64 = rng.random_range(-3.1..3.1);
                    (v * dir.cos(), v * dir.sin())
                }
            };
            agents.push(Agent {
                class,
                footprint,
                height,
                velocity,
            });
            return Ok(());
        }
        Err(Error::Scene(format!("could not place a {} without overlap", class.name())))
    };
    for _ in 0..count(&mut rng, cfg.cars) {
        place(&mut rng, ClassKind::Car)?;
    }
    for _ in 0..count(&mut rng, cfg.pedestrians) {
        place(&mut rng, ClassKind::Pedestrian)?;
    }
    Ok(WorldScene {
        id: seed,
        classes: ClassKind::first(cfg.classes)?,
        drivable,
        crossings,
        agents,
    })
}

/// Vertical camera placement used when rendering; the BEV geometry itself
/// only needs the horizontal intrinsics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderRig {
    pub camera: CameraModel,
    /// Image row of the horizon (vertical principal point).
    pub horizon_row: f64,
    pub camera_height: f64,
}

/// What a pixel's ray hits first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Surface {
    Sky,
    /// Camera-frame ground point.
    Ground { x: f64, z: f64 },
    /// Agent index and face: 0 front/back, 1 side, 2 top.
    Agent { index: usize, face: u8, depth: f64 },
}

/// Agents' camera-frame footprints at the pose's frame index.
fn agents_in_frame(scene: &WorldScene, pose: &EgoPose) -> Vec<(usize, Rect, f64)> {
    scene
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| (i, a.footprint_at(pose.t).in_frame(pose), a.height))
        .collect()
}

fn trace(agents: &[(usize, Rect, f64)], rig: &RenderRig, u: f64, v: f64) -> Surface {
    let cam = &rig.camera;
    // direction with unit forward component, y up
    let dx = (u - cam.u0) / cam.f;
    let dy = -(v - rig.horizon_row) / cam.f;
    let mut best: Option<(f64, usize, u8)> = None;
    for &(i, r, h) in agents {
        let (s, c) = r.angle.sin_cos();
        // ray origin (0, height, 0); local coordinates of origin and direction
        let (ox, oz) = (c * -r.cx + s * -r.cz, -s * -r.cx + c * -r.cz);
        let (lx, lz) = (c * dx + s, -s * dx + c);
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        let mut face = 0u8;
        let slabs = [(ox, lx, -r.half_w, r.half_w, 1u8), (oz, lz, -r.half_l, r.half_l, 0u8), (rig.camera_height, dy, 0.0, h, 2u8)];
        let mut hit = true;
        for (o, d, lo, hi, f) in slabs {
            if d.abs() < 1e-12 {
                if o < lo || o > hi {
                    hit = false;
                    break;
                }
                continue;
            }
            let (a, b) = ((lo - o) / d, (hi - o) / d);
            let (near, far) = (a.min(b), a.max(b));
            if near > t0 {
                t0 = near;
                face = f;
            }
            t1 = t1.min(far);
        }
        if hit && t0 <= t1 && t0 > 0.0 && best.is_none_or(|b| t0 < b.0) {
            best = Some((t0, i, face));
        }
    }
    let ground = (dy < 0.0).then(|| rig.camera_height / -dy);
    match (best, ground) {
        (Some((t, i, f)), g) if g.is_none_or(|g| t <= g) => Surface::Agent {
            index: i,
            face: f,
            depth: t,
        },
        (_, Some(t)) => Surface::Ground { x: dx * t, z: t },
        _ => Surface::Sky,
    }
}

/// Surface seen through the centre of pixel `(row, col)`.
pub fn trace_pixel(scene: &WorldScene, pose: &EgoPose, rig: &RenderRig, row: usize, col: usize) -> Surface {
    trace(&agents_in_frame(scene, pose), rig, col as f64 + 0.5, row as f64 + 0.5)
}

fn shade(c: [u8; 3], face: u8) -> [u8; 3] {
    let k = match face {
        1 => 0.75,
        2 => 1.15,
        _ => 1.0,
    };
    c.map(|v| (v as f64 * k).round().min(255.0) as u8)
}

/// RGB image as bytes, row-major `H × W × 3`.
pub fn render_rgb(scene: &WorldScene, pose: &EgoPose, rig: &RenderRig) -> Vec<u8> {
    let agents = agents_in_frame(scene, pose);
    let (h, w) = (rig.camera.image_h, rig.camera.image_w);
    let mut out = Vec::with_capacity(h * w * 3);
    for row in 0..h {
        for col in 0..w {
            let c = match trace(&agents, rig, col as f64 + 0.5, row as f64 + 0.5) {
                Surface::Sky => SKY,
                Surface::Ground { x, z } => {
                    let (wx, wz) = pose.to_world((x, z));
                    scene.ground_color(wx, wz)
                }
                Surface::Agent { index, face, .. } => shade(scene.agents[index].class.color(), face),
            };
            out.extend_from_slice(&c);
        }
    }
    out
}

/// Interleaved RGB bytes to a `[3, H, W]` tensor in `[0, 1]`.
pub fn rgb_to_tensor(bytes: &[u8], h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        bytes[p * 3 + c] as f32 / 255.0
    })
}

/// Perspective image `[3, H, W]` in `[0, 1]`.
pub fn render_pv(scene: &WorldScene, pose: &EgoPose, rig: &RenderRig) -> Tensor<f32> {
    rgb_to_tensor(&render_rgb(scene, pose, rig), rig.camera.image_h, rig.camera.image_w)
}

/// Binary per-class ground truth `[N_c, Z, X]` and visibility on `spec`.
pub fn make_gt(scene: &WorldScene, pose: &EgoPose, spec: &BevGridSpec) -> (Tensor<f32>, Visibility) {
    let (zc, xc) = (spec.depth_cells, spec.lateral_cells);
    let agents = agents_in_frame(scene, pose);
    let n = scene.classes.len();
    let mut gt = Tensor::zeros(&[n, zc, xc]);
    let mut visible = Vec::with_capacity(zc * xc);
    for r in 0..zc {
        for c in 0..xc {
            let p = (spec.col_x(c), spec.row_z(r));
            let (wx, wz) = pose.to_world(p);
            let (drive, cross) = scene.ground_classes(wx, wz);
            for (k, class) in scene.classes.iter().enumerate() {
                let on = match class {
                    ClassKind::Drivable => drive,
                    ClassKind::Crossing => cross,
                    kind => agents
                        .iter()
                        .any(|(i, f, _)| scene.agents[*i].class == *kind && f.contains(p.0, p.1)),
                };
                if on {
                    gt.set(&[k, r, c], 1.0);
                }
            }
            visible.push(cell_visible(&agents, p));
        }
    }
    (gt, Visibility::new(zc, xc, visible).expect("grid-sized mask"))
}

/// A cell is hidden when the segment from the camera to its centre passes
/// through an agent footprint it is not itself inside.
fn cell_visible(agents: &[(usize, Rect, f64)], p: (f64, f64)) -> bool {
    !agents.iter().any(|(_, f, _)| {
        !f.contains(p.0, p.1)
            && f
                .clip_segment((0.0, 0.0), p)
                .is_some_and(|(t0, t1)| t1 >= 0.0 && t0 < 1.0)
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MotionModel {
    /// Constant heading and step.
    Straight,
    /// Bounded random yaw changes and step lengths.
    Wander,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryConfig {
    pub model: MotionModel,
    /// Step length range in metres per frame.
    pub step: (f64, f64),
    pub max_yaw_rate: f64,
    /// Heading kept within this band around the road direction.
    pub max_heading: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            model: MotionModel::Wander,
            step: (0.5, 2.0),
            max_yaw_rate: 0.15,
            max_heading: 0.35,
        }
    }
}

pub fn simulate_trajectory(scene: &WorldScene, length: usize, cfg: &TrajectoryConfig, seed: u64) -> Vec<EgoPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6a65_6374_6f72);
    let step_of = |rng: &mut ChaCha8Rng| rng.random_range(cfg.step.0..=cfg.step.1);
    let mut x = rng.random_range(-1.0..1.0);
    let mut z = rng.random_range(-2.0..2.0);
    let mut yaw = rng.random_range(-0.1..0.1);
    let fixed_step = step_of(&mut rng);
    let mut poses = Vec::with_capacity(length);
    for t in 0..length {
        poses.push(EgoPose::new(t, scene.id, x, z, yaw));
        let step = match cfg.model {
            MotionModel::Straight => fixed_step,
            MotionModel::Wander => {
                let dyaw = rng.random_range(-cfg.max_yaw_rate..=cfg.max_yaw_rate);
                // steer back toward the road axis when drifting
                let pull = (-0.1 * x - 0.5 * yaw).clamp(-cfg.max_yaw_rate, cfg.max_yaw_rate);
                yaw = (yaw + 0.5 * (dyaw + pull)).clamp(-cfg.max_heading, cfg.max_heading);
                step_of(&mut rng)
            }
        };
        x -= step * yaw.sin();
        z += step * yaw.cos();
    }
    poses
}

/// One rendered, labelled frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSample {
    pub image: Tensor<f32>,
    pub gt: Tensor<f32>,
    pub visibility: Visibility,
    pub pose: EgoPose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub classes: Vec<ClassKind>,
    pub frames: Vec<FrameSample>,
}

/// Everything needed to turn a seed into a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub world: WorldConfig,
    pub trajectory: TrajectoryConfig,
    pub rig: RenderRig,
    /// Ground-truth grid.
    pub output: BevGridSpec,
    pub frames: usize,
}

pub fn generate_sequence(seed: u64, cfg: &SynthConfig) -> Result<Sequence> {
    if cfg.frames == 0 {
        return Err(Error::Config("sequences need at least one frame".into()));
    }
    let scene = generate_scene(seed, &cfg.world)?;
    let poses = simulate_trajectory(&scene, cfg.frames, &cfg.trajectory, seed);
    let frames = poses
        .into_iter()
        .map(|pose| {
            let (gt, visibility) = make_gt(&scene, &pose, &cfg.output);
            FrameSample {
                image: render_pv(&scene, &pose, &cfg.rig),
                gt,
                visibility,
                pose,
            }
        })
        .collect();
    Ok(Sequence {
        name: format!("seq_{seed:04}"),
        classes: scene.classes.clone(),
        frames,
    })
}

pub fn generate_dataset(seeds: Range<u64>, cfg: &SynthConfig, mode: Parallelism) -> Result<Vec<Sequence>> {
    let seeds: Vec<u64> = seeds.collect();
    parallel::try_map(mode, &seeds, |&s| generate_sequence(s, cfg))
}

/// Relative motion between consecutive frames, for trajectory checks.
pub fn step_motions(poses: &[EgoPose]) -> Vec<temporal::MotionDelta> {
    poses
        .windows(2)
        .map(|w| temporal::relative_motion(&w[0], &w[1]))
        .collect()
}

#[cfg(test)]
mod tests;
