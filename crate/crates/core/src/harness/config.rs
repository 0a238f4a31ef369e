//! Experiment configuration: every knob of a run in one flat struct, two
//! named presets, and a `key = value` text format (one per line, `#` starts
//! a comment).

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{BevGridSpec, CameraModel};
use crate::loss::LossWeights;
use crate::parallel::Parallelism;
use crate::synth::{MotionModel, RenderRig, SynthConfig, TrajectoryConfig, WorldConfig};
use crate::view::ViewConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub focal: f64,
    pub principal: f64,
    pub horizon_row: f64,
    pub camera_height: f64,

    pub channels: usize,
    pub levels: usize,
    pub n_dec: usize,
    pub heads: usize,
    pub n_his: usize,
    pub stem_channels: usize,
    pub stage_channels: usize,
    /// Inner width of the head's bottleneck blocks.
    pub head_channels: usize,

    /// Feature grid; predictions come out at twice this resolution.
    pub bev_depth: usize,
    pub bev_lateral: usize,
    pub cell_m: f64,
    pub z_min: f64,
    pub classes: usize,

    pub lr: f64,
    pub warmup: usize,
    pub steps: usize,
    pub batch: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Derive BCE class weights from training-set frequencies instead of 1.
    pub balance_classes: bool,

    pub seed: u64,
    pub data_seeds: Range<u64>,
    pub eval_seeds: Range<u64>,
    pub frames: usize,
    pub cars: (usize, usize),
    pub pedestrians: (usize, usize),
    pub static_agents: bool,
    pub motion: MotionModel,

    pub log_every: usize,
    pub checkpoint_every: usize,
    /// Stop once train-set mIoU reaches this value (checked every `eval_every` steps).
    pub target_miou: Option<f64>,
    pub eval_every: usize,
    pub parallel: bool,
}

impl ExperimentConfig {
    /// Small enough to train in minutes on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            image_h: 128,
            image_w: 128,
            focal: 48.0,
            principal: 64.0,
            horizon_row: 48.0,
            camera_height: 1.5,
            channels: 32,
            levels: 3,
            n_dec: 2,
            heads: 4,
            n_his: 2,
            stem_channels: 16,
            stage_channels: 32,
            head_channels: 16,
            bev_depth: 24,
            bev_lateral: 20,
            cell_m: 0.5,
            z_min: 1.0,
            classes: 4,
            lr: 2e-3,
            warmup: 150,
            steps: 2000,
            batch: 4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            alpha: 0.001,
            beta: 0.01,
            balance_classes: true,
            seed: 0,
            data_seeds: 0..2,
            eval_seeds: 1000..1002,
            frames: 5,
            cars: (3, 8),
            pedestrians: (1, 4),
            static_agents: false,
            motion: MotionModel::Wander,
            log_every: 50,
            checkpoint_every: 0,
            target_miou: None,
            eval_every: 50,
            parallel: true,
        }
    }

    /// Full-size settings. Encoded for completeness; far too slow for a CPU.
    pub fn paper() -> Self {
        Self {
            image_h: 1024,
            image_w: 1024,
            focal: 810.0,
            principal: 512.0,
            horizon_row: 512.0,
            camera_height: 1.5,
            channels: 512,
            levels: 5,
            n_dec: 2,
            heads: 4,
            n_his: 2,
            stem_channels: 64,
            stage_channels: 256,
            head_channels: 128,
            bev_depth: 98,
            bev_lateral: 100,
            cell_m: 0.5,
            z_min: 1.0,
            lr: 4e-4,
            warmup: 1500,
            steps: 40_000,
            batch: 64,
            weight_decay: 1e-2,
            balance_classes: true,
            frames: 20,
            data_seeds: 0..1000,
            eval_seeds: 10_000..10_100,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::Config(format!("unknown preset {name:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_h", self.image_h),
            ("image_w", self.image_w),
            ("channels", self.channels),
            ("levels", self.levels),
            ("heads", self.heads),
            ("stem_channels", self.stem_channels),
            ("stage_channels", self.stage_channels),
            ("head_channels", self.head_channels),
            ("bev_depth", self.bev_depth),
            ("bev_lateral", self.bev_lateral),
            ("classes", self.classes),
            ("steps", self.steps),
            ("batch", self.batch),
            ("frames", self.frames),
            ("eval_every", self.eval_every),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        let reals = [
            ("focal", self.focal),
            ("camera_height", self.camera_height),
            ("cell_m", self.cell_m),
            ("z_min", self.z_min),
        ];
        if let Some((k, _)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || self.warmup > self.steps {
            return Err(Error::Config(format!(
                "learning rate {} with warm-up {} of {} steps",
                self.lr, self.warmup, self.steps
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.weight_decay < 0.0 {
            return Err(Error::Config("optimizer moments must lie in [0, 1)".into()));
        }
        if self.data_seeds.is_empty() {
            return Err(Error::Config("data_seeds is empty".into()));
        }
        self.view().validate()?;
        self.grid()?;
        self.camera()?;
        self.loss_weights(None)?;
        self.world().validate()
    }

    pub fn camera(&self) -> Result<CameraModel> {
        CameraModel::new(self.focal, self.principal, self.image_h, self.image_w)
    }

    pub fn grid(&self) -> Result<BevGridSpec> {
        BevGridSpec::new(self.bev_depth, self.bev_lateral, self.cell_m, self.z_min)
    }

    /// Resolution of predictions and ground truth.
    pub fn output_grid(&self) -> Result<BevGridSpec> {
        Ok(self.grid()?.refined(2))
    }

    pub fn view(&self) -> ViewConfig {
        ViewConfig {
            channels: self.channels,
            heads: self.heads,
            layers: self.n_dec,
            levels: self.levels,
            stem_channels: self.stem_channels,
            stage_channels: self.stage_channels,
        }
    }

    pub fn rig(&self) -> Result<RenderRig> {
        Ok(RenderRig {
            camera: self.camera()?,
            horizon_row: self.horizon_row,
            camera_height: self.camera_height,
        })
    }

    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            classes: self.classes,
            cars: self.cars,
            pedestrians: self.pedestrians,
            car_speed: if self.static_agents { 0.0 } else { WorldConfig::default().car_speed },
            pedestrian_speed: if self.static_agents {
                0.0
            } else {
                WorldConfig::default().pedestrian_speed
            },
            ..WorldConfig::default()
        }
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            world: self.world(),
            trajectory: TrajectoryConfig {
                model: self.motion,
                ..TrajectoryConfig::default()
            },
            rig: self.rig()?,
            output: self.output_grid()?,
            frames: self.frames,
        })
    }

    /// Loss weights; class weights from `frequencies` when balancing is on.
    pub fn loss_weights(&self, frequencies: Option<&[f64]>) -> Result<LossWeights> {
        let cw = match (self.balance_classes, frequencies) {
            (true, Some(f)) => crate::loss::class_weights_from_frequency(f),
            _ => vec![1.0; self.classes],
        };
        LossWeights::new(self.alpha, self.beta, cw)
    }

    pub fn parallelism(&self) -> Parallelism {
        if self.parallel {
            Parallelism::Rayon
        } else {
            Parallelism::Sequential
        }
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn pair(key: &str, v: &str) -> Result<(usize, usize)> {
            let (a, b) = v
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("{key}: expected `min,max`, got {v:?}")))?;
            Ok((p(key, a.trim())?, p(key, b.trim())?))
        }
        let v = value;
        match key {
            "preset" => *self = Self::preset(v)?,
            "image_h" => self.image_h = p(key, v)?,
            "image_w" => self.image_w = p(key, v)?,
            "focal" => self.focal = p(key, v)?,
            "principal" => self.principal = p(key, v)?,
            "horizon_row" => self.horizon_row = p(key, v)?,
            "camera_height" => self.camera_height = p(key, v)?,
            "channels" => self.channels = p(key, v)?,
            "levels" => self.levels = p(key, v)?,
            "n_dec" => self.n_dec = p(key, v)?,
            "heads" => self.heads = p(key, v)?,
            "n_his" => self.n_his = p(key, v)?,
            "stem_channels" => self.stem_channels = p(key, v)?,
            "stage_channels" => self.stage_channels = p(key, v)?,
            "head_channels" => self.head_channels = p(key, v)?,
            "bev_depth" => self.bev_depth = p(key, v)?,
            "bev_lateral" => self.bev_lateral = p(key, v)?,
            "cell_m" => self.cell_m = p(key, v)?,
            "z_min" => self.z_min = p(key, v)?,
            "classes" => self.classes = p(key, v)?,
            "lr" => self.lr = p(key, v)?,
            "warmup" => self.warmup = p(key, v)?,
            "steps" => self.steps = p(key, v)?,
            "batch" => self.batch = p(key, v)?,
            "weight_decay" => self.weight_decay = p(key, v)?,
            "beta1" => self.beta1 = p(key, v)?,
            "beta2" => self.beta2 = p(key, v)?,
            "alpha" => self.alpha = p(key, v)?,
            "beta" => self.beta = p(key, v)?,
            "balance_classes" => self.balance_classes = p(key, v)?,
            "seed" => self.seed = p(key, v)?,
            "data_seeds" => self.data_seeds = parse_seed_range(v)?,
            "eval_seeds" => self.eval_seeds = parse_seed_range(v)?,
            "frames" => self.frames = p(key, v)?,
            "cars" => self.cars = pair(key, v)?,
            "pedestrians" => self.pedestrians = pair(key, v)?,
            "static_agents" => self.static_agents = p(key, v)?,
            "motion" => {
                self.motion = match v {
                    "straight" => MotionModel::Straight,
                    "wander" => MotionModel::Wander,
                    _ => return Err(Error::Config(format!("motion: unknown model {v:?}"))),
                }
            }
            "log_every" => self.log_every = p(key, v)?,
            "checkpoint_every" => self.checkpoint_every = p(key, v)?,
            "target_miou" => self.target_miou = if v == "none" { None } else { Some(p(key, v)?) },
            "eval_every" => self.eval_every = p(key, v)?,
            "parallel" => self.parallel = p(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parse a config file body on top of the desk preset. A `preset` line
    /// resets everything before it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::desk();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key, in a form [`ExperimentConfig::parse`] reads back exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let motion = match self.motion {
            MotionModel::Straight => "straight",
            MotionModel::Wander => "wander",
        };
        let target = self.target_miou.map_or("none".to_string(), |t| format!("{t:?}"));
        let rows: Vec<(&str, String)> = vec![
            ("image_h", self.image_h.to_string()),
            ("image_w", self.image_w.to_string()),
            ("focal", format!("{:?}", self.focal)),
            ("principal", format!("{:?}", self.principal)),
            ("horizon_row", format!("{:?}", self.horizon_row)),
            ("camera_height", format!("{:?}", self.camera_height)),
            ("channels", self.channels.to_string()),
            ("levels", self.levels.to_string()),
            ("n_dec", self.n_dec.to_string()),
            ("heads", self.heads.to_string()),
            ("n_his", self.n_his.to_string()),
            ("stem_channels", self.stem_channels.to_string()),
            ("stage_channels", self.stage_channels.to_string()),
            ("head_channels", self.head_channels.to_string()),
            ("bev_depth", self.bev_depth.to_string()),
            ("bev_lateral", self.bev_lateral.to_string()),
            ("cell_m", format!("{:?}", self.cell_m)),
            ("z_min", format!("{:?}", self.z_min)),
            ("classes", self.classes.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("warmup", self.warmup.to_string()),
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("beta1", format!("{:?}", self.beta1)),
            ("beta2", format!("{:?}", self.beta2)),
            ("alpha", format!("{:?}", self.alpha)),
            ("beta", format!("{:?}", self.beta)),
            ("balance_classes", self.balance_classes.to_string()),
            ("seed", self.seed.to_string()),
            ("data_seeds", format!("{}..{}", self.data_seeds.start, self.data_seeds.end)),
            ("eval_seeds", format!("{}..{}", self.eval_seeds.start, self.eval_seeds.end)),
            ("frames", self.frames.to_string()),
            ("cars", format!("{},{}", self.cars.0, self.cars.1)),
            ("pedestrians", format!("{},{}", self.pedestrians.0, self.pedestrians.1)),
            ("static_agents", self.static_agents.to_string()),
            ("motion", motion.to_string()),
            ("log_every", self.log_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("target_miou", target),
            ("eval_every", self.eval_every.to_string()),
            ("parallel", self.parallel.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// `a..b` (half-open) or a single seed `a`.
pub fn parse_seed_range(s: &str) -> Result<Range<u64>> {
    let bad = || Error::Config(format!("seed range {s:?}: expected `a..b`"));
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if a >= b {
                return Err(bad());
            }
            Ok(a..b)
        }
        None => {
            let a: u64 = s.trim().parse().map_err(|_| bad())?;
            Ok(a..a + 1)
        }
    }
}
