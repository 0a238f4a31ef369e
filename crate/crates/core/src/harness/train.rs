//! Training loop.
//!
//! A batch is `B` streams walking the training frames in order, each with its
//! own memory bank of detached features from the frames it just visited. A
//! stream clears its bank whenever it enters a new sequence. Per-sample graphs
//! run through [`parallel::map`]; gradients are summed in stream order, so the
//! result does not depend on how the samples were scheduled.

use log::info;

use super::config::ExperimentConfig;
use super::eval::{evaluate, EvalOutput};
use super::model::BevModel;
use super::optim::{AdamW, Schedule};
use crate::autodiff::{Gradients, Graph, ParamStore};
use crate::error::{Error, Result};
use crate::loss::{self, LossWeights};
use crate::parallel;
use crate::synth::{self, Sequence};
use crate::temporal::MemoryBank;
use crate::tensor::Tensor;
use crate::view::CycleOptions;

#[derive(Clone, Debug, PartialEq)]
pub struct Stream {
    /// Index into the flattened frame list.
    pub cursor: usize,
    pub bank: MemoryBank<f32>,
}

/// Loss components of one step, averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub bce: f64,
    pub uncert: f64,
    pub iou: f64,
}

impl StepLog {
    pub fn to_line(&self) -> String {
        format!(
            "step {} lr {:.6e} loss {:.6} bce {:.6} uncert {:.6} iou {:.6}",
            self.step, self.lr, self.total, self.bce, self.uncert, self.iou
        )
    }
}

/// Everything a run needs to continue exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: ExperimentConfig,
    /// Updates applied so far.
    pub step: usize,
    pub store: ParamStore<f32>,
    pub optimizer: AdamW,
    pub streams: Vec<Stream>,
}

/// Generate the training sequences a config names.
pub fn training_data(cfg: &ExperimentConfig) -> Result<Vec<Sequence>> {
    synth::generate_dataset(cfg.data_seeds.clone(), &cfg.synth()?, cfg.parallelism())
}

pub fn evaluation_data(cfg: &ExperimentConfig) -> Result<Vec<Sequence>> {
    synth::generate_dataset(cfg.eval_seeds.clone(), &cfg.synth()?, cfg.parallelism())
}

struct SampleResult {
    grads: Gradients<f32>,
    terms: [f64; 4],
    features: Tensor<f32>,
}

pub struct Trainer<'a> {
    pub model: BevModel,
    pub state: TrainState,
    pub weights: LossWeights,
    pub data: &'a [Sequence],
    frames: Vec<(usize, usize)>,
    schedule: Schedule,
    pub opts: CycleOptions,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &ExperimentConfig, data: &'a [Sequence]) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = BevModel::init(cfg, &mut store)?;
        let optimizer = AdamW::new(&store, cfg.beta1, cfg.beta2, cfg.weight_decay);
        let state = TrainState {
            config: cfg.clone(),
            step: 0,
            store,
            optimizer,
            streams: Vec::new(),
        };
        Self::resume_with(state, model, data)
    }

    /// Continue from a saved state. The data must be what the state was trained on.
    pub fn resume(state: TrainState, data: &'a [Sequence]) -> Result<Self> {
        let mut fresh = ParamStore::<f32>::new();
        let model = BevModel::init(&state.config, &mut fresh)?;
        let layout = |s: &ParamStore<f32>| s.iter().map(|(_, n, t)| (n.to_string(), t.shape().to_vec())).collect::<Vec<_>>();
        if layout(&fresh) != layout(&state.store) {
            return Err(Error::Checkpoint("parameter layout does not match the configuration".into()));
        }
        Self::resume_with(state, model, data)
    }

    fn resume_with(mut state: TrainState, model: BevModel, data: &'a [Sequence]) -> Result<Self> {
        let cfg = state.config.clone();
        let frames: Vec<(usize, usize)> = data
            .iter()
            .enumerate()
            .flat_map(|(s, seq)| (0..seq.frames.len()).map(move |f| (s, f)))
            .collect();
        if frames.is_empty() {
            return Err(Error::Config("no training frames".into()));
        }
        if let Some(seq) = data.iter().find(|s| s.classes.len() != cfg.classes) {
            return Err(Error::Config(format!(
                "{} has {} classes, the model predicts {}",
                seq.name,
                seq.classes.len(),
                cfg.classes
            )));
        }
        if state.streams.is_empty() {
            state.streams = (0..cfg.batch)
                .map(|b| Stream {
                    cursor: b * frames.len() / cfg.batch,
                    bank: MemoryBank::new(cfg.n_his),
                })
                .collect();
        }
        if state.streams.len() != cfg.batch || state.streams.iter().any(|s| s.cursor >= frames.len()) {
            return Err(Error::Checkpoint("stream state does not match the data".into()));
        }
        let freq = loss::class_frequencies(data.iter().flat_map(|s| s.frames.iter().map(|f| &f.gt)));
        let weights = cfg.loss_weights(Some(&freq))?;
        Ok(Self {
            model,
            state,
            weights,
            data,
            frames,
            schedule: Schedule {
                base: cfg.lr,
                warmup: cfg.warmup,
                total: cfg.steps,
            },
            opts: CycleOptions::default(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.state.config
    }

    pub fn done(&self) -> bool {
        self.state.step >= self.state.config.steps
    }

    fn sample(&self, stream: &Stream) -> Result<SampleResult> {
        let (s, f) = self.frames[stream.cursor];
        let frame = &self.data[s].frames[f];
        let store = &self.state.store;
        let mut g = Graph::new();
        let image = g.constant(frame.image.clone());
        let out = self
            .model
            .forward(&mut g, store, image, &stream.bank, &frame.pose, self.opts)?;
        let y = g.constant(frame.gt.clone());
        let terms = loss::total_loss(&mut g, out.probs, y, &frame.visibility, &self.weights)?;
        let vals = [terms.total, terms.bce, terms.uncert, terms.iou].map(|v| g.data(v).data()[0] as f64);
        g.backward(terms.total)?;
        Ok(SampleResult {
            grads: g.param_grads(store),
            terms: vals,
            features: g.data(out.features).clone(),
        })
    }

    /// Forward and backward over one batch without updating anything.
    pub fn batch_gradients(&self) -> Result<(Gradients<f32>, [f64; 4])> {
        let results = parallel::try_map(self.state.config.parallelism(), &self.prepared_streams(), |s| self.sample(s))?;
        let mut grads = Gradients::empty(self.state.store.len());
        let mut terms = [0.0; 4];
        for r in &results {
            grads.accumulate(&r.grads);
            for (t, v) in terms.iter_mut().zip(r.terms) {
                *t += v;
            }
        }
        let n = results.len() as f64;
        grads.scale((1.0 / n) as f32);
        Ok((grads, terms.map(|t| t / n)))
    }

    /// Streams as they will be when sampled: banks emptied at sequence starts.
    fn prepared_streams(&self) -> Vec<Stream> {
        self.state
            .streams
            .iter()
            .map(|s| {
                let mut s = s.clone();
                if self.frames[s.cursor].1 == 0 {
                    s.bank.clear();
                }
                s
            })
            .collect()
    }

    /// One optimizer update.
    pub fn step(&mut self) -> Result<StepLog> {
        let k = self.state.step + 1;
        let streams = self.prepared_streams();
        let results = parallel::try_map(self.state.config.parallelism(), &streams, |s| self.sample(s))?;
        let mut grads = Gradients::empty(self.state.store.len());
        let mut terms = [0.0; 4];
        for r in &results {
            for (name, v) in ["total", "bce", "uncert", "iou"].iter().zip(r.terms) {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("step {k}: {name} loss is {v}")));
                }
            }
            grads.accumulate(&r.grads);
            for (t, v) in terms.iter_mut().zip(r.terms) {
                *t += v;
            }
        }
        let n = results.len() as f64;
        grads.scale((1.0 / n) as f32);
        if let Some((_, name, _)) = self
            .state
            .store
            .iter()
            .find(|(id, _, _)| grads.get(*id).is_some_and(|g| !g.all_finite()))
        {
            return Err(Error::NonFinite(format!("step {k}: gradient of {name}")));
        }
        let lr = self.schedule.lr(k);
        self.state.optimizer.step(&mut self.state.store, &grads, lr)?;
        let count = self.frames.len();
        for ((stream, mut prepared), r) in self.state.streams.iter_mut().zip(streams).zip(results) {
            let (s, f) = self.frames[prepared.cursor];
            prepared.bank.push(r.features, self.data[s].frames[f].pose);
            prepared.cursor = (prepared.cursor + 1) % count;
            *stream = prepared;
        }
        self.state.step = k;
        let terms = terms.map(|t| t / n);
        Ok(StepLog {
            step: k,
            lr,
            total: terms[0],
            bce: terms[1],
            uncert: terms[2],
            iou: terms[3],
        })
    }

    /// Evaluate the current parameters on the training sequences.
    pub fn evaluate_train(&self) -> Result<EvalOutput> {
        evaluate(&self.model, &self.state.store, self.data, self.state.config.parallelism())
    }

    /// Train until the configured step count, or until the train-set mIoU
    /// target is met. `on_step` sees every step's log and the state after it;
    /// an error from it stops the run.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepLog, &TrainState) -> Result<()>) -> Result<RunSummary> {
        let cfg = self.state.config.clone();
        let mut reached = None;
        while !self.done() {
            let log = self.step()?;
            if cfg.log_every > 0 && log.step % cfg.log_every == 0 {
                info!("{}", log.to_line());
            }
            on_step(&log, &self.state)?;
            if let Some(target) = cfg.target_miou {
                if log.step % cfg.eval_every == 0 || self.done() {
                    let miou = self.evaluate_train()?.report.miou();
                    info!("step {} train mIoU {miou:.4}", log.step);
                    if miou >= target {
                        reached = Some((log.step, miou));
                        break;
                    }
                }
            }
        }
        Ok(RunSummary {
            steps: self.state.step,
            reached,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    /// Step and mIoU at which the target was met.
    pub reached: Option<(usize, f64)>,
}
