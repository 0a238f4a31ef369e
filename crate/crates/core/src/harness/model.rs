//! The assembled network: pyramid → cycle view transform → temporal fusion →
//! top-down head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::autodiff::{Graph, ParamId, ParamStore, Value};
use crate::error::{Error, Result};
use crate::temporal::{self, EgoPose, MemoryBank};
use crate::tensor::{Scalar, Tensor};
use crate::view::{self, CycleOptions, Init, ViewTransformer};

/// 1×1 reduce, 3×3, 1×1 expand, each followed by relu, plus an identity skip.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub reduce: (ParamId, ParamId),
    pub conv: (ParamId, ParamId),
    pub expand: (ParamId, ParamId),
}

impl Bottleneck {
    fn init<T: Scalar>(init: &mut Init<'_, T>, prefix: &str, channels: usize, inner: usize) -> Result<Self> {
        let mut pair = |name: &str, shape: &[usize], fan_in: usize| -> Result<(ParamId, ParamId)> {
            Ok((
                init.fan_in(format!("{prefix}.{name}.w"), shape, fan_in)?,
                init.constant(format!("{prefix}.{name}.b"), &[shape[0]], 0.0)?,
            ))
        };
        Ok(Self {
            reduce: pair("reduce", &[inner, channels], channels)?,
            conv: pair("conv", &[inner, inner, 3, 3], inner * 9)?,
            expand: pair("expand", &[channels, inner], inner)?,
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Value) -> Result<Value> {
        let mut p = |id| g.param(store, id);
        let (rw, rb, cw, cb, ew, eb) = (
            p(self.reduce.0),
            p(self.reduce.1),
            p(self.conv.0),
            p(self.conv.1),
            p(self.expand.0),
            p(self.expand.1),
        );
        let h = g.conv1x1(x, rw, Some(rb))?;
        let h = g.relu(h);
        let h = g.conv2d(h, cw, Some(cb), 1, 1)?;
        let h = g.relu(h);
        let h = g.conv1x1(h, ew, Some(eb))?;
        let y = g.add(h, x)?;
        Ok(g.relu(y))
    }
}

/// Two residual bottlenecks around a 2× upsample, then per-class logits.
#[derive(Clone, Debug)]
pub struct TopDownHead {
    pub blocks: [Bottleneck; 2],
    pub out: (ParamId, ParamId),
}

impl TopDownHead {
    pub(crate) fn init<T: Scalar>(init: &mut Init<'_, T>, channels: usize, inner: usize, classes: usize) -> Result<Self> {
        Ok(Self {
            blocks: [
                Bottleneck::init(init, "head.block0", channels, inner)?,
                Bottleneck::init(init, "head.block1", channels, inner)?,
            ],
            out: (
                init.fan_in("head.out.w".into(), &[classes, channels], channels)?,
                init.constant("head.out.b".into(), &[classes], 0.0)?,
            ),
        })
    }

    /// `[C, Z, X]` features → `[N_c, 2Z, 2X]` logits.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Value) -> Result<Value> {
        let x = self.blocks[0].forward(g, store, x)?;
        let x = g.upsample(x, 2)?;
        let x = self.blocks[1].forward(g, store, x)?;
        let (w, b) = (g.param(store, self.out.0), g.param(store, self.out.1));
        g.conv1x1(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct BevModel {
    pub view: ViewTransformer,
    pub n_his: usize,
    pub classes: usize,
    /// `φ`: `[C, C(n_his+1)]` weights and `[C]` bias.
    pub phi: (ParamId, ParamId),
    pub head: TopDownHead,
}

/// Values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Calibrated BEV features of this frame; what the memory bank stores.
    pub features: Value,
    pub fused: Value,
    pub logits: Value,
    pub probs: Value,
}

impl BevModel {
    /// Registers every parameter in `store`, drawing from a generator seeded
    /// by `cfg.seed`.
    pub fn init<T: Scalar>(cfg: &ExperimentConfig, store: &mut ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let view = ViewTransformer::init(cfg.view(), cfg.camera()?, cfg.grid()?, store, &mut rng)?;
        let c = cfg.channels;
        let phi_w = store.register("temporal.phi.w", temporal::reference_passthrough(c, cfg.n_his))?;
        let phi_b = store.register("temporal.phi.b", Tensor::zeros(&[c]))?;
        let mut init = Init { store, rng: &mut rng };
        let head = TopDownHead::init(&mut init, c, cfg.head_channels, cfg.classes)?;
        Ok(Self {
            view,
            n_his: cfg.n_his,
            classes: cfg.classes,
            phi: (phi_w, phi_b),
            head,
        })
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [3, self.view.camera.image_h, self.view.camera.image_w]
    }

    /// Calibrated BEV features of one image, `[C_T, Z, X]`.
    pub fn features<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        image: Value,
        opts: CycleOptions,
    ) -> Result<Value> {
        if g.shape(image) != self.image_shape() {
            return Err(Error::shape("model input", g.shape(image), &self.image_shape()));
        }
        let pyr = view::extract_pyramid(g, store, &self.view.pyramid, image)?;
        view::cycle_view_transform(g, store, &self.view, &pyr, opts)
    }

    /// Full forward pass for the frame at `pose`, fusing whatever the bank
    /// holds. Bank entries enter as constants.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        image: Value,
        bank: &MemoryBank<T>,
        pose: &EgoPose,
        opts: CycleOptions,
    ) -> Result<Forward> {
        let features = self.features(g, store, image, opts)?;
        let history = temporal::gather_history(g, bank, pose, features, &self.view.grid, self.n_his)?;
        let (w, b) = (g.param(store, self.phi.0), g.param(store, self.phi.1));
        let fused = temporal::aggregate(g, &history, features, w, Some(b))?;
        let logits = self.head.forward(g, store, fused)?;
        let probs = g.sigmoid(logits);
        Ok(Forward {
            features,
            fused,
            logits,
            probs,
        })
    }
}
