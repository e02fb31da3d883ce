//! Stage training: minibatch Adam on frame-level cross-entropy.
//!
//! Phone and emotion nets splice their input once per utterance through the
//! leading time-delay layer and then train on shuffled rows. The speaker net
//! trains on chunks of consecutive frames so its convolutional and
//! time-delay context stays inside each chunk; rows whose context would leak
//! into a neighbouring chunk carry no label.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;

use super::{
    emotion_input, speaker_input, CorpusFeatures, ModelConfigs, Stage, StageConfig, TrainConfig, TrainingLog,
    Upstream, KEY_ALIGN_CONTEXT, KEY_CLASSES, KEY_CONDITIONING,
};
use crate::error::{Error, Result};
use crate::models::{
    build_aer_net, build_ctdnn, build_phone_net, ctdnn_windows, input_statistics, set_standardization, AerNetConfig,
    CtdnnConfig, CtdnnGeometry, PhoneNetConfig, KEY_OUTPUT_DIM,
};
use crate::nncore::layers::batch_cross_entropy;
use crate::nncore::{Adam, Gradients, Network, NetworkCheckpoint, Optimizer, Tensor};
use crate::seeds::{derive_seed, rng_for};
use crate::synthdata::Split;

#[derive(Debug, Clone)]
pub struct TrainedStage {
    pub checkpoint: NetworkCheckpoint,
    pub log: TrainingLog,
}

/// Trains one cascade stage on the corpus' train split, logging dev loss.
/// Corpus-dependent widths (input, class counts, conditional dims) override
/// the templates in `models`.
pub fn train_stage(
    cfg: &StageConfig,
    models: &ModelConfigs,
    corpus: &CorpusFeatures,
    upstream: &Upstream,
) -> Result<TrainedStage> {
    cfg.validate()?;
    if corpus.split(Split::Train).next().is_none() {
        return Err(Error::Label("no training utterances in the manifest".into()));
    }
    let phone = upstream.phone_for(cfg.conditioning)?;
    let speaker = upstream.speaker_for(cfg.conditioning)?;
    let fbank_dim = corpus.fbank_dim()?;
    let init_seed = derive_seed(cfg.train.seed, "init");
    let trained = match cfg.stage {
        Stage::Phone => {
            let pcfg = PhoneNetConfig {
                input_dim: fbank_dim,
                n_phones: corpus.n_phones(),
                ..models.phone.clone()
            };
            let ck = build_phone_net(&pcfg, init_seed)?;
            let utts = |split| corpus.split(split).map(|u| Ok((u.fbank.clone(), u.phone_labels.clone())));
            train_rows(ck, &cfg.train, utts(Split::Train), utts(Split::Dev))?
        }
        Stage::Speaker => {
            let classes = corpus.train_speakers();
            let ccfg = CtdnnConfig {
                fbank_dim,
                cond_dim: match phone {
                    Some(p) => p.meta_parse(KEY_OUTPUT_DIM)?,
                    None => 0,
                },
                n_speakers: classes.len(),
                ..models.ctdnn.clone()
            };
            let ck = build_ctdnn(&ccfg, init_seed)?.with_meta(KEY_CLASSES, classes.join(","));
            let collect = |split| -> Result<Vec<(Array2<f64>, usize)>> {
                corpus
                    .split(split)
                    .filter_map(|u| classes.binary_search(&u.speaker_id).ok().map(|c| (u, c)))
                    .map(|(u, c)| Ok((speaker_input(&u.fbank, phone)?, c)))
                    .collect()
            };
            train_speaker(ck, &cfg.train, collect(Split::Train)?, collect(Split::Dev)?)?
        }
        Stage::Emotion => {
            let context = match speaker {
                Some(s) => CtdnnGeometry::from_checkpoint(s)?.context_frames(),
                None => models.ctdnn.effective_context_frames,
            };
            let acfg = AerNetConfig {
                fbank_dim,
                ling_dim: match phone {
                    Some(p) => p.meta_parse(KEY_OUTPUT_DIM)?,
                    None => 0,
                },
                spk_dim: match speaker {
                    Some(s) => s.meta_parse("feature_dim")?,
                    None => 0,
                },
                n_emotions: corpus.n_emotions(),
                ..models.aer.clone()
            };
            let ck = build_aer_net(&acfg, init_seed)?.with_meta(KEY_ALIGN_CONTEXT, context);
            let cond = cfg.conditioning;
            let utts = |split| {
                corpus
                    .split(split)
                    .filter(|u| u.n_frames() >= context)
                    .map(move |u| {
                        let x = emotion_input(&u.fbank, cond, upstream, context)?;
                        let n = x.nrows();
                        Ok((x, vec![u.emotion; n]))
                    })
            };
            train_rows(ck, &cfg.train, utts(Split::Train), utts(Split::Dev))?
        }
    };
    let stage = match cfg.stage {
        Stage::Phone => "phone",
        Stage::Speaker => "speaker",
        Stage::Emotion => "emotion",
    };
    Ok(TrainedStage {
        checkpoint: trained
            .checkpoint
            .with_meta("stage", stage)
            .with_meta(KEY_CONDITIONING, cfg.conditioning),
        log: trained.log,
    })
}

struct BatchStats {
    loss: f64,
    correct: usize,
    count: usize,
    grads: Gradients,
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn count_correct(logits: &Tensor, labels: &[Option<usize>]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|(i, l)| matches!(l, Some(c) if argmax(logits.row(*i)) == *c))
        .count()
}

/// Loss, accuracy and gradients of `layers[first..logits]` on one batch.
fn batch_step(net: &Network, first: usize, x: Tensor, labels: &[Option<usize>]) -> Result<BatchStats> {
    let end = net.logits_end();
    let acts = net.forward_trace(x, first..end)?;
    let logits = acts.last().expect("trace includes input");
    let (loss, g, count) = batch_cross_entropy(logits, labels)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("training loss became {loss}")));
    }
    let correct = count_correct(logits, labels);
    let mut grads = net.zero_grads();
    net.backward_trace(first..end, &acts, g, &mut grads)?;
    Ok(BatchStats {
        loss,
        correct,
        count,
        grads,
    })
}

/// Shared epoch loop. `step` trains on a batch of item indices;
/// `evaluate(net, with_train)` returns full-pass `(split, loss, accuracy)`.
fn fit(
    net: &mut Network,
    train: &TrainConfig,
    n_items: usize,
    frames_per_item: usize,
    mut step: impl FnMut(&Network, &[usize]) -> Result<BatchStats>,
    mut evaluate: impl FnMut(&Network, bool) -> Result<Vec<(&'static str, f64, f64)>>,
) -> Result<TrainingLog> {
    if n_items == 0 {
        return Err(Error::NoData("stage has no usable training frames".into()));
    }
    let mut log = TrainingLog::default();
    for (split, loss, acc) in evaluate(net, true)? {
        log.push(0, split, loss, acc);
    }
    let per_batch = (train.batch_frames / frames_per_item).max(1);
    let cap = match train.max_frames_per_epoch {
        0 => n_items,
        m => (m / frames_per_item).clamp(1, n_items),
    };
    let mut opt = Adam::new(net, train.learning_rate);
    let mut order: Vec<usize> = (0..n_items).collect();
    for epoch in 1..=train.epochs {
        opt.set_learning_rate(train.lr_at(epoch));
        order.shuffle(&mut rng_for(train.seed, &format!("epoch{epoch}")));
        let (mut loss_sum, mut correct, mut count) = (0.0, 0usize, 0usize);
        for batch in order[..cap].chunks(per_batch) {
            let stats = step(net, batch)?;
            opt.step(net, &stats.grads)?;
            loss_sum += stats.loss * stats.count as f64;
            correct += stats.correct;
            count += stats.count;
        }
        let denom = count.max(1) as f64;
        log.push(epoch, "train", loss_sum / denom, correct as f64 / denom);
        for (split, loss, acc) in evaluate(net, false)? {
            log.push(epoch, split, loss, acc);
        }
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}",
            loss_sum / denom,
            correct as f64 / denom
        );
    }
    Ok(log)
}

/// Layers applied per utterance before rows are shuffled: standardization
/// and the leading time-delay splice.
const ROW_PREFIX: usize = 2;

/// Spliced rows `[n x dim]` with one label each.
struct RowSet {
    x: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
}

impl RowSet {
    fn build(net: &Network, utts: impl Iterator<Item = Result<(Array2<f64>, Vec<usize>)>>) -> Result<Self> {
        let mut set = RowSet {
            x: Vec::new(),
            dim: 0,
            labels: Vec::new(),
        };
        for item in utts {
            let (input, labels) = item?;
            if input.nrows() != labels.len() {
                return Err(Error::Alignment("frame and label counts differ".into()));
            }
            if labels.is_empty() {
                continue;
            }
            let spliced = net.forward_to(&Tensor::from_matrix(&input), 0..ROW_PREFIX)?;
            set.dim = spliced.row_len();
            set.x.extend_from_slice(spliced.values());
            set.labels.extend(labels);
        }
        Ok(set)
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn gather(&self, idx: &[usize]) -> Result<(Tensor, Vec<Option<usize>>)> {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            x.extend_from_slice(&self.x[i * self.dim..(i + 1) * self.dim]);
        }
        Ok((
            Tensor::new(vec![idx.len(), self.dim], x)?,
            idx.iter().map(|&i| Some(self.labels[i])).collect(),
        ))
    }

    fn evaluate(&self, net: &Network) -> Result<(f64, f64)> {
        if self.len() == 0 {
            return Ok((f64::NAN, f64::NAN));
        }
        let (mut loss, mut correct) = (0.0, 0);
        let all: Vec<usize> = (0..self.len()).collect();
        for block in all.chunks(2048) {
            let (x, labels) = self.gather(block)?;
            let logits = net.forward_to(&x, ROW_PREFIX..net.logits_end())?;
            loss += batch_cross_entropy(&logits, &labels)?.0 * block.len() as f64;
            correct += count_correct(&logits, &labels);
        }
        let n = self.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

fn train_rows(
    mut ckpt: NetworkCheckpoint,
    train: &TrainConfig,
    train_utts: impl Iterator<Item = Result<(Array2<f64>, Vec<usize>)>>,
    dev_utts: impl Iterator<Item = Result<(Array2<f64>, Vec<usize>)>>,
) -> Result<TrainedStage> {
    let train_utts: Vec<_> = train_utts.collect::<Result<_>>()?;
    let (mean, std) = input_statistics(train_utts.iter().map(|(x, _)| x))?;
    set_standardization(&mut ckpt, &mean, &std)?;
    let NetworkCheckpoint { mut network, metadata } = ckpt;
    let train_rows = RowSet::build(&network, train_utts.into_iter().map(Ok))?;
    let dev_rows = RowSet::build(&network, dev_utts)?;
    let log = fit(
        &mut network,
        train,
        train_rows.len(),
        1,
        |net, batch| {
            let (x, labels) = train_rows.gather(batch)?;
            batch_step(net, ROW_PREFIX, x, &labels)
        },
        |net, with_train| {
            let mut out = Vec::new();
            if with_train {
                let (l, a) = train_rows.evaluate(net)?;
                out.push(("train", l, a));
            }
            let (l, a) = dev_rows.evaluate(net)?;
            out.push(("dev", l, a));
            Ok(out)
        },
    )?;
    Ok(TrainedStage {
        checkpoint: NetworkCheckpoint { network, metadata },
        log,
    })
}

struct Chunk {
    utt: usize,
    start: usize,
    n_out: usize,
}

/// Windows and masked labels for consecutive speaker-net outputs of one utterance.
fn chunk_batch(
    geom: &CtdnnGeometry,
    inputs: &[(Array2<f64>, usize)],
    chunks: &[&Chunk],
) -> Result<(Tensor, Vec<Option<usize>>)> {
    let ctx = geom.context_frames();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n_windows = 0;
    for c in chunks {
        let (input, label) = &inputs[c.utt];
        let part = input.slice(s![c.start..c.start + c.n_out + ctx - 1, ..]).to_owned();
        let w = ctdnn_windows(&part, geom)?;
        n_windows += w.rows();
        values.extend_from_slice(w.values());
        labels.extend(std::iter::repeat(None).take(geom.left_reach));
        labels.extend(std::iter::repeat(Some(*label)).take(c.n_out));
        labels.extend(std::iter::repeat(None).take(geom.right_reach));
    }
    let x = Tensor::new(vec![n_windows, 1, geom.window_frames, geom.padded_dim], values)?;
    Ok((x, labels))
}

fn utterance_chunks(inputs: &[(Array2<f64>, usize)], ctx: usize, size: usize) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    for (utt, (x, _)) in inputs.iter().enumerate() {
        let total_out = (x.nrows() + 1).saturating_sub(ctx);
        let mut start = 0;
        while start < total_out {
            let n_out = size.min(total_out - start);
            chunks.push(Chunk { utt, start, n_out });
            start += n_out;
        }
    }
    chunks
}

fn train_speaker(
    mut ckpt: NetworkCheckpoint,
    train: &TrainConfig,
    train_inputs: Vec<(Array2<f64>, usize)>,
    dev_inputs: Vec<(Array2<f64>, usize)>,
) -> Result<TrainedStage> {
    let geom = CtdnnGeometry::from_checkpoint(&ckpt)?;
    let (mean, std) = input_statistics(train_inputs.iter().map(|(x, _)| x))?;
    set_standardization(&mut ckpt, &mean, &std)?;
    let NetworkCheckpoint { mut network, metadata } = ckpt;
    let ctx = geom.context_frames();
    let size = train.chunk_frames;
    let train_chunks = utterance_chunks(&train_inputs, ctx, size);
    let dev_chunks = utterance_chunks(&dev_inputs, ctx, usize::MAX);
    let full_train = utterance_chunks(&train_inputs, ctx, usize::MAX);

    let evaluate_chunks = |net: &Network, inputs: &[(Array2<f64>, usize)], chunks: &[Chunk]| -> Result<(f64, f64)> {
        let (mut loss, mut correct, mut count) = (0.0, 0, 0);
        for c in chunks {
            let (x, labels) = chunk_batch(&geom, inputs, &[c])?;
            let logits = net.forward_to(&x, 0..net.logits_end())?;
            let (l, _, n) = batch_cross_entropy(&logits, &labels)?;
            loss += l * n as f64;
            correct += count_correct(&logits, &labels);
            count += n;
        }
        if count == 0 {
            return Ok((f64::NAN, f64::NAN));
        }
        Ok((loss / count as f64, correct as f64 / count as f64))
    };

    let log = fit(
        &mut network,
        train,
        train_chunks.len(),
        size,
        |net, batch| {
            let picked: Vec<&Chunk> = batch.iter().map(|&i| &train_chunks[i]).collect();
            let (x, labels) = chunk_batch(&geom, &train_inputs, &picked)?;
            batch_step(net, 0, x, &labels)
        },
        |net, with_train| {
            let mut out = Vec::new();
            if with_train {
                let (l, a) = evaluate_chunks(net, &train_inputs, &full_train)?;
                out.push(("train", l, a));
            }
            let (l, a) = evaluate_chunks(net, &dev_inputs, &dev_chunks)?;
            out.push(("dev", l, a));
            Ok(out)
        },
    )?;
    Ok(TrainedStage {
        checkpoint: NetworkCheckpoint { network, metadata },
        log,
    })
}
