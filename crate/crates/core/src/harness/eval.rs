//! Inference over whole sequences and metric reports.
//!
//! Each sequence is replayed in order with a fresh memory bank; sequences are
//! independent and fan out over [`parallel::try_map`].

use super::model::BevModel;
use crate::autodiff::{Graph, ParamStore};
use crate::error::{Error, Result};
use crate::loss::{self, Confusion, MetricReport, Region, Visibility, PROTOCOL_SIZE};
use crate::parallel::{self, Parallelism};
use crate::synth::Sequence;
use crate::temporal::MemoryBank;
use crate::tensor::Tensor;
use crate::view::CycleOptions;

pub const THRESHOLD: f64 = 0.5;

/// Metric tables over all, visible and occluded cells.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub report: MetricReport,
    pub visible: MetricReport,
    pub occluded: MetricReport,
    pub confusion: [Confusion; 3],
}

impl EvalOutput {
    pub fn to_text(&self) -> String {
        format!(
            "{}\nvisible cells: layout {:.4} object {:.4} mIoU {:.4}\noccluded cells: layout {:.4} object {:.4} mIoU {:.4}\n",
            self.report.to_text(),
            self.visible.layout_miou(),
            self.visible.object_miou(),
            self.visible.miou(),
            self.occluded.layout_miou(),
            self.occluded.object_miou(),
            self.occluded.miou(),
        )
    }
}

/// Per-frame class probabilities, sequence by sequence.
pub fn predict(
    model: &BevModel,
    store: &ParamStore<f32>,
    sequences: &[Sequence],
    mode: Parallelism,
) -> Result<Vec<Vec<Tensor<f32>>>> {
    parallel::try_map(mode, sequences, |seq| {
        let mut bank = MemoryBank::new(model.n_his);
        let mut out = Vec::with_capacity(seq.frames.len());
        for frame in &seq.frames {
            let mut g = Graph::inference();
            let image = g.constant(frame.image.clone());
            let f = model.forward(&mut g, store, image, &bank, &frame.pose, CycleOptions::default())?;
            bank.push(g.data(f.features).clone(), frame.pose);
            out.push(g.data(f.probs).clone());
        }
        Ok(out)
    })
}

/// Score predictions against the sequences' ground truth. In protocol mode
/// both maps and the visibility mask are resized to the fixed evaluation size.
pub fn score(predictions: &[Vec<Tensor<f32>>], sequences: &[Sequence], protocol: bool) -> Result<EvalOutput> {
    let classes = sequences
        .first()
        .map(|s| s.classes.clone())
        .ok_or_else(|| Error::Config("nothing to evaluate".into()))?;
    if predictions.len() != sequences.len() {
        return Err(Error::shape("evaluate", &[predictions.len()], &[sequences.len()]));
    }
    let regions = [Region::All, Region::Visible, Region::Occluded];
    let mut conf = regions.map(|_| Confusion::new(classes.len()));
    for (preds, seq) in predictions.iter().zip(sequences) {
        if seq.classes != classes || preds.len() != seq.frames.len() {
            return Err(Error::Format(format!("{}: prediction/class mismatch", seq.name)));
        }
        for (p, frame) in preds.iter().zip(&seq.frames) {
            if p.shape().first() != Some(&classes.len()) {
                return Err(Error::shape("evaluate classes", p.shape(), frame.gt.shape()));
            }
            let (p, y, v): (Tensor<f32>, Tensor<f32>, Visibility) = if protocol {
                let (h, w) = PROTOCOL_SIZE;
                (
                    loss::resize_nearest(p, h, w)?,
                    loss::resize_nearest(&frame.gt, h, w)?,
                    loss::resize_visibility(&frame.visibility, h, w),
                )
            } else {
                (p.clone(), frame.gt.clone(), frame.visibility.clone())
            };
            for (c, r) in conf.iter_mut().zip(regions) {
                c.add(&p, &y, THRESHOLD, r, Some(&v))?;
            }
        }
    }
    let names: Vec<String> = classes.iter().map(|c| c.name().to_string()).collect();
    let st: Vec<bool> = classes.iter().map(|c| c.is_static()).collect();
    let rep = |c: &Confusion| MetricReport::new(names.clone(), st.clone(), c);
    Ok(EvalOutput {
        report: rep(&conf[0])?,
        visible: rep(&conf[1])?,
        occluded: rep(&conf[2])?,
        confusion: conf,
    })
}

pub fn evaluate(
    model: &BevModel,
    store: &ParamStore<f32>,
    sequences: &[Sequence],
    mode: Parallelism,
) -> Result<EvalOutput> {
    if let Some(s) = sequences.iter().find(|s| s.classes.len() != model.classes) {
        return Err(Error::Config(format!(
            "{} has {} classes, the checkpoint predicts {}",
            s.name,
            s.classes.len(),
            model.classes
        )));
    }
    score(&predict(model, store, sequences, mode)?, sequences, false)
}
