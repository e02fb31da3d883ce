//! Additive log-spectrum reconstruction from the three factors.
//!
//! Three subnetworks map q, s and e to log-power vectors which are summed.
//! Each branch output is snapped to a 2^-30 grid before the sum, so the
//! sum of three branches is exact in f64 and the effect of swapping one
//! factor does not depend on the other two.

mod export;

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use export::{read_matrix_text, write_matrix_text};

use crate::cascade::{factorize, Factors, TrainingLog};
use crate::dsp::{griffin_lim, FrameConfig, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::models::{input_statistics, STD_FLOOR};
use crate::nncore::{
    squared_error, Adam, Gradients, GradientModel, Layer, LayerSpec, Network, NetworkCheckpoint, Optimizer, Tensor,
};
use crate::seeds::{derive_seed, rng_for};

pub const KIND_RECON: &str = "recon";

/// Branch outputs are rounded to multiples of this step.
pub const OUTPUT_QUANTUM: f64 = 1.0 / (1u64 << 30) as f64;
/// Largest branch output magnitude for which the three-way sum stays exact.
pub const OUTPUT_LIMIT: f64 = (1u64 << 20) as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub spec_dim: usize,
    pub hidden_units: Vec<usize>,
    pub epochs: usize,
    pub batch_frames: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            spec_dim: 129,
            hidden_units: vec![256, 256],
            epochs: 10,
            batch_frames: 128,
            learning_rate: 1e-3,
            lr_decay: 0.85,
            seed: 0,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.spec_dim == 0 || self.hidden_units.contains(&0) {
            return Err(Error::config("reconstruction widths must be positive"));
        }
        if self.batch_frames == 0 || !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("reconstruction needs batch_frames > 0, lr > 0, lr_decay in (0, 1]"));
        }
        Ok(())
    }

    pub fn check_frame(&self, frame: &FrameConfig) -> Result<()> {
        if frame.n_bins() != self.spec_dim {
            return Err(Error::ConfigMismatch(format!(
                "spec_dim {} but the frame config yields {} bins",
                self.spec_dim,
                frame.n_bins()
            )));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch.saturating_sub(1) as i32)
    }
}

/// The three recovery subnetworks f(q), g(s), h(e).
#[derive(Debug, Clone, PartialEq)]
pub struct ReconModel {
    pub branches: [Network; 3],
}

const BRANCH_NAMES: [&str; 3] = ["q", "s", "e"];

fn branch_specs(in_dim: usize, hidden: &[usize], out: usize) -> Vec<LayerSpec> {
    let mut specs = vec![LayerSpec::Standardize { dim: in_dim }];
    let mut prev = in_dim;
    for &h in hidden {
        specs.push(LayerSpec::Dense { in_dim: prev, out_dim: h });
        specs.push(LayerSpec::Relu);
        prev = h;
    }
    specs.push(LayerSpec::Dense { in_dim: prev, out_dim: out });
    specs
}

fn input_dim(net: &Network) -> usize {
    match net.layers.first().map(|l| &l.spec) {
        Some(LayerSpec::Standardize { dim }) => *dim,
        _ => 0,
    }
}

fn output_dim(net: &Network) -> usize {
    match net.layers.last().map(|l| &l.spec) {
        Some(LayerSpec::Dense { out_dim, .. }) => *out_dim,
        _ => 0,
    }
}

fn quantize(x: f64) -> Result<f64> {
    if !(x.abs() < OUTPUT_LIMIT) {
        return Err(Error::Numeric(format!("branch output {x} outside the exact-sum range")));
    }
    Ok((x / OUTPUT_QUANTUM).round() * OUTPUT_QUANTUM)
}

impl ReconModel {
    pub fn new(cfg: &ReconConfig, dims: [usize; 3]) -> Result<Self> {
        cfg.validate()?;
        if dims.contains(&0) {
            return Err(Error::dim("factor widths must be positive"));
        }
        let build = |i: usize| {
            let mut rng = rng_for(derive_seed(cfg.seed, "recon-init"), BRANCH_NAMES[i]);
            Network::init(branch_specs(dims[i], &cfg.hidden_units, cfg.spec_dim), &mut rng)
        };
        Ok(ReconModel {
            branches: [build(0)?, build(1)?, build(2)?],
        })
    }

    /// Input widths of (q, s, e).
    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| input_dim(&self.branches[i]))
    }

    pub fn spec_dim(&self) -> usize {
        output_dim(&self.branches[0])
    }

    /// Loads per-dimension mean and std into a branch's standardization layer.
    pub fn set_standardization(&mut self, branch: usize, mean: &[f64], std: &[f64]) -> Result<()> {
        let layer = &mut self.branches[branch].layers[0];
        let n = mean.len();
        if n != layer.params.len() / 2 || std.len() != n {
            return Err(Error::dim("statistics width differs from the branch input"));
        }
        for i in 0..n {
            layer.params[i] = mean[i];
            layer.params[n + i] = 1.0 / std[i].max(STD_FLOOR);
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: [&Array2<f64>; 3]) -> Result<usize> {
        let n = inputs[0].nrows();
        for (i, (x, d)) in inputs.iter().zip(self.dims()).enumerate() {
            if x.ncols() != d {
                return Err(Error::dim(format!(
                    "{} factor has {} dims, model expects {d}",
                    BRANCH_NAMES[i],
                    x.ncols()
                )));
            }
            if x.nrows() != n {
                return Err(Error::Alignment("factor sequences differ in length".into()));
            }
        }
        Ok(n)
    }

    /// Raw (unquantized) output of each branch.
    pub fn branch_outputs(&self, q: &Array2<f64>, s: &Array2<f64>, e: &Array2<f64>) -> Result<[Array2<f64>; 3]> {
        let inputs = [q, s, e];
        self.check_inputs(inputs)?;
        let out = |i: usize| {
            self.branches[i]
                .forward(&Tensor::from_matrix(inputs[i]))
                .map(Tensor::into_matrix)
        };
        Ok([out(0)?, out(1)?, out(2)?])
    }

    /// `f(q) + g(s) + h(e)` per frame, with branch outputs snapped to the grid.
    pub fn reconstruct(&self, q: &Array2<f64>, s: &Array2<f64>, e: &Array2<f64>) -> Result<Array2<f64>> {
        let [a, b, c] = self.branch_outputs(q, s, e)?;
        let mut out = Array2::zeros(a.dim());
        for (((o, &x), &y), &z) in out.iter_mut().zip(&a).zip(&b).zip(&c) {
            *o = quantize(x)? + quantize(y)? + quantize(z)?;
        }
        Ok(out)
    }

    pub fn reconstruct_frame(&self, q: &[f64], s: &[f64], e: &[f64]) -> Result<Vec<f64>> {
        let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("one row");
        Ok(self.reconstruct(&row(q), &row(s), &row(e))?.into_raw_vec_and_offset().0)
    }

    pub fn to_checkpoint(&self) -> NetworkCheckpoint {
        let counts: Vec<String> = self.branches.iter().map(|b| b.len().to_string()).collect();
        let layers = self.branches.iter().flat_map(|b| b.layers.iter().cloned()).collect();
        NetworkCheckpoint::new(Network::from_layers(layers))
            .with_meta(crate::nncore::KEY_MODEL_KIND, KIND_RECON)
            .with_meta("branch_layers", counts.join(","))
            .with_meta("spec_dim", self.spec_dim())
    }

    pub fn from_checkpoint(ckpt: &NetworkCheckpoint) -> Result<Self> {
        ckpt.expect_kind(KIND_RECON)?;
        let counts: Vec<usize> = ckpt
            .meta("branch_layers")
            .unwrap_or("")
            .split(',')
            .map(|c| c.parse().map_err(|_| Error::config("malformed branch_layers")))
            .collect::<Result<_>>()?;
        if counts.len() != 3 || counts.iter().sum::<usize>() != ckpt.network.len() {
            return Err(Error::Format("branch layout does not match the stored layers".into()));
        }
        let mut layers = ckpt.network.layers.iter().cloned();
        let mut take = |n: usize| -> Vec<Layer> { layers.by_ref().take(n).collect() };
        let branches = [
            Network::from_layers(take(counts[0])),
            Network::from_layers(take(counts[1])),
            Network::from_layers(take(counts[2])),
        ];
        let model = ReconModel { branches };
        let spec = model.spec_dim();
        if model.dims().contains(&0) || spec == 0 || model.branches.iter().any(|b| output_dim(b) != spec) {
            return Err(Error::Format("reconstruction branches are malformed".into()));
        }
        Ok(model)
    }

    fn loss_and_grads(&self, batch: &Batch) -> Result<(f64, Gradients)> {
        let traces = (0..3)
            .map(|i| self.branches[i].forward_trace(batch.inputs[i].clone(), 0..self.branches[i].len()))
            .collect::<Result<Vec<_>>>()?;
        let mut sum = traces[0].last().expect("output").clone();
        for t in &traces[1..] {
            for (s, v) in sum.values_mut().iter_mut().zip(t.last().expect("output").values()) {
                *s += v;
            }
        }
        let (loss, g) = squared_error(&sum, &batch.target)?;
        let mut grads = Vec::new();
        for (net, acts) in self.branches.iter().zip(&traces) {
            let mut part = net.zero_grads();
            net.backward_trace(0..net.len(), acts, g.clone(), &mut part)?;
            for (gr, l) in part.iter_mut().zip(&net.layers) {
                if l.spec.is_frozen() {
                    gr.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            grads.extend(part);
        }
        Ok((loss, grads))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.branches.iter_mut().flat_map(|b| b.layers.iter_mut())
    }
}

/// Free-function form taking the stored checkpoint.
pub fn reconstruct_frame(q: &[f64], s: &[f64], e: &[f64], ckpt: &NetworkCheckpoint) -> Result<Vec<f64>> {
    ReconModel::from_checkpoint(ckpt)?.reconstruct_frame(q, s, e)
}

/// Factor frames paired one-to-one with the log-power frames they describe.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconSample {
    pub utt_id: String,
    pub q: Array2<f64>,
    pub s: Array2<f64>,
    pub e: Array2<f64>,
    pub target: Array2<f64>,
}

impl ReconSample {
    /// Pairs factors with rows `offset..offset+len` of the full utterance spectrum.
    pub fn new(utt_id: &str, factors: &Factors, spectrum: &Array2<f64>) -> Result<Self> {
        let n = factors.len();
        if factors.s.nrows() != n || factors.e.nrows() != n || factors.offset + n > spectrum.nrows() {
            return Err(Error::Alignment(format!(
                "{utt_id}: {n} factor frames at offset {} against {} spectrum frames",
                factors.offset,
                spectrum.nrows()
            )));
        }
        Ok(ReconSample {
            utt_id: utt_id.to_string(),
            q: factors.q.clone(),
            s: factors.s.clone(),
            e: factors.e.clone(),
            target: spectrum.slice(s![factors.offset..factors.offset + n, ..]).to_owned(),
        })
    }

    pub fn len(&self) -> usize {
        self.target.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.target.nrows() == 0
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        if [&self.q, &self.s, &self.e].iter().any(|m| m.nrows() != n) {
            return Err(Error::Alignment(format!("{}: factor and spectrum frames differ", self.utt_id)));
        }
        Ok(())
    }
}

struct Batch {
    inputs: [Tensor; 3],
    target: Tensor,
}

/// All frames of a sample set stacked row-wise.
struct Rows {
    parts: [Array2<f64>; 4],
}

impl Rows {
    fn stack(samples: &[ReconSample]) -> Result<Self> {
        for s in samples {
            s.check()?;
        }
        let cat = |f: fn(&ReconSample) -> &Array2<f64>| -> Result<Array2<f64>> {
            if samples.is_empty() {
                return Ok(Array2::zeros((0, 0)));
            }
            let views: Vec<_> = samples.iter().map(|s| f(s).view()).collect();
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::dim(e.to_string()))
        };
        Ok(Rows {
            parts: [cat(|s| &s.q)?, cat(|s| &s.s)?, cat(|s| &s.e)?, cat(|s| &s.target)?],
        })
    }

    fn len(&self) -> usize {
        self.parts[3].nrows()
    }

    fn batch(&self, idx: &[usize]) -> Batch {
        let pick = |m: &Array2<f64>| Tensor::from_matrix(&m.select(Axis(0), idx));
        Batch {
            inputs: [pick(&self.parts[0]), pick(&self.parts[1]), pick(&self.parts[2])],
            target: pick(&self.parts[3]),
        }
    }
}

/// A model bound to a fixed batch, for finite-difference checking.
#[derive(Clone)]
pub struct ReconObjective {
    pub model: ReconModel,
    batch_inputs: [Tensor; 3],
    target: Tensor,
}

impl ReconObjective {
    pub fn new(model: ReconModel, q: &Array2<f64>, s: &Array2<f64>, e: &Array2<f64>, target: &Array2<f64>) -> Result<Self> {
        model.check_inputs([q, s, e])?;
        if target.nrows() != q.nrows() || target.ncols() != model.spec_dim() {
            return Err(Error::dim("target does not match the model output"));
        }
        Ok(ReconObjective {
            model,
            batch_inputs: [q, s, e].map(Tensor::from_matrix),
            target: Tensor::from_matrix(target),
        })
    }

    fn batch(&self) -> Batch {
        Batch {
            inputs: self.batch_inputs.clone(),
            target: self.target.clone(),
        }
    }
}

impl GradientModel for ReconObjective {
    fn block_sizes(&self) -> Vec<usize> {
        self.model
            .branches
            .iter()
            .flat_map(|b| &b.layers)
            .map(|l| if l.spec.is_frozen() { 0 } else { l.params.len() })
            .collect()
    }

    fn param_mut(&mut self, block: usize, index: usize) -> &mut f64 {
        let layer = self.model.layers_mut().nth(block).expect("block in range");
        &mut layer.params[index]
    }

    fn loss(&self) -> Result<f64> {
        Ok(self.model.loss_and_grads(&self.batch())?.0)
    }

    fn gradients(&self) -> Result<Gradients> {
        let (_, mut grads) = self.model.loss_and_grads(&self.batch())?;
        for (g, size) in grads.iter_mut().zip(self.block_sizes()) {
            if size == 0 {
                g.clear();
            }
        }
        Ok(grads)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedRecon {
    pub model: ReconModel,
    pub log: TrainingLog,
}

impl TrainedRecon {
    pub fn checkpoint(&self) -> NetworkCheckpoint {
        self.model.to_checkpoint()
    }
}

fn mean_loss(model: &ReconModel, rows: &Rows) -> Result<f64> {
    let all: Vec<usize> = (0..rows.len()).collect();
    let mut total = 0.0;
    for block in all.chunks(4096) {
        let b = rows.batch(block);
        let y = model.reconstruct(
            &b.inputs[0].to_matrix(),
            &b.inputs[1].to_matrix(),
            &b.inputs[2].to_matrix(),
        )?;
        total += squared_error(&Tensor::from_matrix(&y), &b.target)?.0 * block.len() as f64;
    }
    Ok(total / rows.len().max(1) as f64)
}

/// Minimizes the mean frame squared error of `f(q)+g(s)+h(e)` against the
/// log-power spectrum. Logs full-pass train and validation loss at epoch 0
/// and after every epoch.
pub fn train_reconstructor(cfg: &ReconConfig, train: &[ReconSample], val: &[ReconSample]) -> Result<TrainedRecon> {
    cfg.validate()?;
    let first = train
        .iter()
        .find(|s| !s.is_empty())
        .ok_or_else(|| Error::NoData("no reconstruction training frames".into()))?;
    if first.target.ncols() != cfg.spec_dim {
        return Err(Error::ConfigMismatch(format!(
            "spectrum has {} bins, spec_dim is {}",
            first.target.ncols(),
            cfg.spec_dim
        )));
    }
    let train_rows = Rows::stack(train)?;
    let val_rows = Rows::stack(val)?;
    let dims = [0, 1, 2].map(|i| train_rows.parts[i].ncols());
    let mut model = ReconModel::new(cfg, dims)?;
    for i in 0..3 {
        let (mean, std) = input_statistics(std::iter::once(&train_rows.parts[i]))?;
        model.set_standardization(i, &mean, &std)?;
    }

    let mut log = TrainingLog::default();
    let record = |log: &mut TrainingLog, epoch: usize, model: &ReconModel| -> Result<f64> {
        let tl = mean_loss(model, &train_rows)?;
        if !tl.is_finite() {
            return Err(Error::Numeric(format!("reconstruction loss became {tl}")));
        }
        log.push(epoch, "train", tl, f64::NAN);
        if val_rows.len() > 0 {
            log.push(epoch, "val", mean_loss(model, &val_rows)?, f64::NAN);
        }
        Ok(tl)
    };
    record(&mut log, 0, &model)?;

    let layers: Vec<Layer> = model.layers_mut().map(|l| l.clone()).collect();
    let mut flat = Network::from_layers(layers);
    let mut opt = Adam::new(&flat, cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    for epoch in 1..=cfg.epochs {
        opt.set_learning_rate(cfg.lr_at(epoch));
        order.shuffle(&mut rng_for(cfg.seed, &format!("recon-epoch{epoch}")));
        for idx in order.chunks(cfg.batch_frames) {
            let (loss, grads) = model.loss_and_grads(&train_rows.batch(idx))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("reconstruction loss became {loss}")));
            }
            opt.step(&mut flat, &grads)?;
            for (dst, src) in model.layers_mut().zip(&flat.layers) {
                dst.params.copy_from_slice(&src.params);
            }
        }
        let tl = record(&mut log, epoch, &model)?;
        log::info!("recon epoch {epoch}: train loss {tl:.4}");
    }
    Ok(TrainedRecon { model, log })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UttReconError {
    pub n_frames: usize,
    pub mean_frame_square_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconEvaluation {
    pub mean_frame_square_error: f64,
    pub per_utterance: BTreeMap<String, UttReconError>,
}

fn summarize(per_utt: Vec<(String, usize, f64)>) -> Result<ReconEvaluation> {
    let mut per_utterance = BTreeMap::new();
    let mut sums = BTreeMap::new();
    for (id, n, sum) in per_utt {
        if n == 0 {
            continue;
        }
        per_utterance.insert(
            id.clone(),
            UttReconError {
                n_frames: n,
                mean_frame_square_error: sum / n as f64,
            },
        );
        if sums.insert(id.clone(), (n, sum)).is_some() {
            return Err(Error::Alignment(format!("utterance {id} appears twice")));
        }
    }
    let (frames, total) = sums.values().fold((0, 0.0), |(n, t), &(k, s)| (n + k, t + s));
    if frames == 0 {
        return Err(Error::NoData("no frames to evaluate".into()));
    }
    Ok(ReconEvaluation {
        mean_frame_square_error: total / frames as f64,
        per_utterance,
    })
}

fn square_error_sum(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Mean over frames of the squared log-domain error. Per-utterance sums are
/// accumulated in utterance-id order, so input order does not matter.
pub fn evaluate_reconstruction(model: &ReconModel, samples: &[ReconSample]) -> Result<ReconEvaluation> {
    let per_utt = samples
        .iter()
        .map(|smp| {
            smp.check()?;
            let y = model.reconstruct(&smp.q, &smp.s, &smp.e)?;
            if y.dim() != smp.target.dim() {
                return Err(Error::dim("prediction and target shapes differ"));
            }
            Ok((smp.utt_id.clone(), smp.len(), square_error_sum(&y, &smp.target)))
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(per_utt)
}

/// Predicts the training-set mean log spectrum for every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSpectrumBaseline {
    pub mean: Vec<f64>,
}

impl MeanSpectrumBaseline {
    pub fn fit(samples: &[ReconSample]) -> Result<Self> {
        let mut sorted: Vec<&ReconSample> = samples.iter().collect();
        sorted.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        let (mean, _) = input_statistics(sorted.iter().map(|s| &s.target).filter(|t| t.nrows() > 0))
            .map_err(|_| Error::NoData("no frames for the mean spectrum".into()))?;
        Ok(MeanSpectrumBaseline { mean })
    }

    pub fn evaluate(&self, samples: &[ReconSample]) -> Result<ReconEvaluation> {
        let per_utt = samples
            .iter()
            .map(|smp| {
                if smp.target.ncols() != self.mean.len() {
                    return Err(Error::dim("baseline and target widths differ"));
                }
                let sum = smp
                    .target
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().zip(&self.mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .sum();
                Ok((smp.utt_id.clone(), smp.len(), sum))
            })
            .collect::<Result<Vec<_>>>()?;
        summarize(per_utt)
    }
}

/// Original and reconstructed log spectra over the aligned frames, plus audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Resynthesis {
    pub waveform: Waveform,
    pub original: Array2<f64>,
    pub reconstructed: Array2<f64>,
    /// First input frame covered by the aligned region.
    pub offset: usize,
}

/// Factorizes an utterance, rebuilds its log spectrum and inverts it with Griffin-Lim.
#[allow(clippy::too_many_arguments)]
pub fn resynthesize(
    fbank: &Array2<f64>,
    spectrum: &Array2<f64>,
    cascade: [&NetworkCheckpoint; 3],
    model: &ReconModel,
    frame: &FrameConfig,
    iterations: usize,
    seed: u64,
) -> Result<Resynthesis> {
    if frame.n_bins() != model.spec_dim() {
        return Err(Error::ConfigMismatch("frame config and reconstructor disagree on bins".into()));
    }
    let factors = factorize(fbank, cascade[0], cascade[1], cascade[2])?;
    let sample = ReconSample::new("resynthesis", &factors, spectrum)?;
    let reconstructed = model.reconstruct(&sample.q, &sample.s, &sample.e)?;
    let waveform = griffin_lim(
        &Spectrogram {
            frames: reconstructed.clone(),
            config: frame.clone(),
        },
        iterations,
        seed,
    )?;
    Ok(Resynthesis {
        waveform,
        original: sample.target,
        reconstructed,
        offset: factors.offset,
    })
}
