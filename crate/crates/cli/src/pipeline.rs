//! Subcommand implementations over a workspace directory.
//!
//! ```text
//! corpus/    manifest.tsv, wav/
//! features/  fbank.cdff, spectrum.cdff
//! models/    <name>.ckpt + <name>.log
//! factors/   q.cdff, s.cdff, e.cdff, index.tsv
//! results/   sre.tsv, aer.tsv, recon.tsv, recon_utterances.tsv
//! resynth/   <utt>.wav, <utt>.original.txt, <utt>.reconstructed.txt
//! manifests/ <subcommand>.txt   (sha256 of every output)
//! report.txt
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array2;
use sha2::{Digest, Sha256};

use cdf_core::cascade::{
    factorize, train_stage, Conditioning, CorpusFeatures, Stage, StageConfig, TrainingLog, Upstream,
};
use cdf_core::dsp::{read_archive, write_archive, write_wav};
use cdf_core::eval::{aer_reports, run_sre_experiment};
use cdf_core::nncore::NetworkCheckpoint;
use cdf_core::reconstruct::{
    evaluate_reconstruction, resynthesize, train_reconstructor, write_matrix_text, MeanSpectrumBaseline, ReconModel,
    ReconSample,
};
use cdf_core::cascade::Factors;
use cdf_core::seeds::derive_seed;
use cdf_core::synthdata::{generate_corpus, make_sre_protocol, CorpusManifest, Split};
use cdf_core::Error as CoreError;

use crate::config::{ExperimentConfig, VERSION};
use crate::results::{aer_text, recon_text, sre_text, AerRow, ReconSummary, SreRow, Stamp};

pub const KEY_CONFIG_HASH: &str = "config_hash";
pub const KEY_VERSION: &str = "version";

/// Speaker systems compared in the identification experiment.
pub const SPEAKER_SYSTEMS: [(&str, Conditioning); 2] = [("idf", Conditioning::NONE), ("cdf", Conditioning::LING)];

pub struct Run {
    pub cfg: ExperimentConfig,
    pub stamp: Stamp,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(cfg: ExperimentConfig) -> Self {
        let stamp = Stamp {
            config_hash: cfg.hash(),
            version: VERSION.to_string(),
        };
        Run {
            cfg,
            stamp,
            outputs: Vec::new(),
        }
    }

    pub fn ws(&self, rel: &str) -> PathBuf {
        self.cfg.workspace.join(rel)
    }

    fn dir(&self, rel: &str) -> Result<PathBuf> {
        let d = self.ws(rel);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    fn write(&mut self, path: PathBuf, bytes: impl AsRef<[u8]>) -> Result<()> {
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path);
        Ok(())
    }

    fn stamped(&mut self, path: PathBuf, body: &str) -> Result<()> {
        let text = format!("{}\n{body}", self.stamp.line());
        self.write(path, text)
    }

    /// Fails with a cascade-order error naming the subcommand that makes `rel`.
    fn require(&self, rel: &str, producer: &str) -> Result<PathBuf> {
        let p = self.ws(rel);
        if !p.exists() {
            return Err(CoreError::CascadeOrder(format!("{} is missing; run `cdf {producer}` first", p.display())).into());
        }
        Ok(p)
    }

    fn checkpoint(&self, name: &str, producer: &str) -> Result<NetworkCheckpoint> {
        let path = self.require(&format!("models/{name}.ckpt"), producer)?;
        Ok(NetworkCheckpoint::load(path)?)
    }

    fn save_model(&mut self, name: &str, ckpt: NetworkCheckpoint, log: &TrainingLog) -> Result<()> {
        let dir = self.dir("models")?;
        let ckpt = ckpt
            .with_meta(KEY_CONFIG_HASH, &self.stamp.config_hash)
            .with_meta(KEY_VERSION, &self.stamp.version);
        self.write(dir.join(format!("{name}.ckpt")), ckpt.to_bytes())?;
        self.stamped(dir.join(format!("{name}.log")), &log.to_text())
    }

    fn manifest(&self) -> Result<CorpusManifest> {
        let path = self.require("corpus/manifest.tsv", "synth-data")?;
        Ok(CorpusManifest::load(&path)?)
    }

    fn features(&self) -> Result<(CorpusManifest, CorpusFeatures)> {
        let m = self.manifest()?;
        self.require("features/fbank.cdff", "extract-features")?;
        let f = CorpusFeatures::load(&m, &self.ws("features"))?;
        Ok((m, f))
    }

    /// Writes `manifests/<sub>.txt` listing the sha256 of every output.
    pub fn finish(mut self, sub: &str) -> Result<()> {
        let dir = self.dir("manifests")?;
        let mut body = format!("{}\n", self.stamp.line());
        self.outputs.sort();
        for p in &self.outputs {
            let bytes = fs::read(p)?;
            let rel = p.strip_prefix(&self.cfg.workspace).unwrap_or(p);
            writeln!(body, "{}  {}", hex(&Sha256::digest(&bytes)), rel.display())?;
        }
        fs::write(dir.join(format!("{sub}.txt")), body)?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn synth_data(run: &mut Run) -> Result<()> {
    let dir = run.dir("corpus")?;
    let m = generate_corpus(&run.cfg.synth, &dir)?;
    log::info!("synthesized {} utterances", m.records.len());
    run.outputs.push(dir.join("manifest.tsv"));
    for r in &m.records {
        run.outputs.push(m.resolve(&dir, r));
    }
    Ok(())
}

pub fn extract_features(run: &mut Run) -> Result<()> {
    let m = run.manifest()?;
    let feats = CorpusFeatures::extract(&m, &run.ws("corpus"), &run.cfg.frame)?;
    let dir = run.dir("features")?;
    feats.save(&dir)?;
    run.outputs.push(dir.join(cdf_core::cascade::FBANK_ARCHIVE));
    run.outputs.push(dir.join(cdf_core::cascade::SPECTRUM_ARCHIVE));
    Ok(())
}

pub fn train_phone(run: &mut Run) -> Result<()> {
    let (_, feats) = run.features()?;
    let cfg = StageConfig {
        stage: Stage::Phone,
        conditioning: Conditioning::NONE,
        train: run.cfg.phone.clone(),
    };
    let trained = train_stage(&cfg, &run.cfg.models, &feats, &Upstream::default())?;
    run.save_model("phone", trained.checkpoint, &trained.log)
}

pub fn train_speaker(run: &mut Run, systems: &[&str]) -> Result<()> {
    let (_, feats) = run.features()?;
    for &(name, cond) in SPEAKER_SYSTEMS.iter().filter(|(n, _)| systems.contains(n)) {
        let phone = if cond.ling {
            Some(run.checkpoint("phone", "train-phone")?)
        } else {
            None
        };
        let cfg = StageConfig {
            stage: Stage::Speaker,
            conditioning: cond,
            train: run.cfg.speaker.clone(),
        };
        let up = Upstream {
            phone: phone.as_ref(),
            speaker: None,
        };
        log::info!("training speaker system {name}");
        let trained = train_stage(&cfg, &run.cfg.models, &feats, &up)?;
        run.save_model(&format!("speaker-{name}"), trained.checkpoint, &trained.log)?;
    }
    Ok(())
}

/// Upstream networks a conditioning needs. The emotion stage takes its
/// speaker factor from the CDF speaker net, which itself needs the phone net.
fn upstream_for(run: &Run, cond: Conditioning) -> Result<(Option<NetworkCheckpoint>, Option<NetworkCheckpoint>)> {
    let speaker = if cond.spk {
        Some(run.checkpoint("speaker-cdf", "train-speaker")?)
    } else {
        None
    };
    let phone = if cond.ling || cond.spk {
        Some(run.checkpoint("phone", "train-phone")?)
    } else {
        None
    };
    Ok((phone, speaker))
}

pub fn train_emotion(run: &mut Run, conditionings: &[Conditioning]) -> Result<()> {
    for &cond in conditionings {
        upstream_for(run, cond)?;
    }
    let (_, feats) = run.features()?;
    for &cond in conditionings {
        let (phone, speaker) = upstream_for(run, cond)?;
        let cfg = StageConfig {
            stage: Stage::Emotion,
            conditioning: cond,
            train: run.cfg.emotion.clone(),
        };
        let up = Upstream {
            phone: phone.as_ref(),
            speaker: speaker.as_ref(),
        };
        log::info!("training emotion system {cond}");
        let trained = train_stage(&cfg, &run.cfg.models, &feats, &up)?;
        run.save_model(&format!("emotion-{}", cond.slug()), trained.checkpoint, &trained.log)?;
    }
    Ok(())
}

const FACTOR_NAMES: [&str; 3] = ["q", "s", "e"];

pub fn factorize_corpus(run: &mut Run) -> Result<()> {
    let phone = run.checkpoint("phone", "train-phone")?;
    let speaker = run.checkpoint("speaker-cdf", "train-speaker")?;
    let aer = run.checkpoint(&format!("emotion-{}", Conditioning::BOTH.slug()), "train-emotion")?;
    let (_, feats) = run.features()?;
    let mut index = String::from("utt_id\toffset\tn_frames\n");
    let mut parts: [Vec<Array2<f64>>; 3] = Default::default();
    for u in &feats.utterances {
        let f = match factorize(&u.fbank, &phone, &speaker, &aer) {
            Err(CoreError::UtteranceTooShort { frames, needed }) => {
                log::warn!("skipping {}: {frames} frames, the cascade needs {needed}", u.utt_id);
                continue;
            }
            r => r.with_context(|| format!("factorizing {}", u.utt_id))?,
        };
        writeln!(index, "{}\t{}\t{}", u.utt_id, f.offset, f.len())?;
        parts[0].push(f.q);
        parts[1].push(f.s);
        parts[2].push(f.e);
    }
    let dir = run.dir("factors")?;
    for (name, mats) in FACTOR_NAMES.iter().zip(&parts) {
        let path = dir.join(format!("{name}.cdff"));
        let refs: Vec<&Array2<f64>> = mats.iter().collect();
        write_archive(&path, &refs)?;
        run.outputs.push(path);
    }
    run.stamped(dir.join("index.tsv"), &index)
}

/// Factor records paired with their spectra, in manifest order. Like the
/// emotion evaluation, this covers only speakers with training data; the
/// identification-only speakers are left out.
fn recon_samples(run: &Run, feats: &CorpusFeatures) -> Result<Vec<(Split, ReconSample)>> {
    let speakers = feats.train_speakers();
    run.require("factors/index.tsv", "factorize")?;
    let dir = run.ws("factors");
    let [q, s, e] = FACTOR_NAMES.map(|n| read_archive(dir.join(format!("{n}.cdff"))));
    let (q, s, e) = (q?, s?, e?);
    let index = fs::read_to_string(dir.join("index.tsv"))?;
    let rows: Vec<Vec<&str>> = index
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split('\t').collect())
        .collect();
    if rows.len() != q.len() || q.len() != s.len() || s.len() != e.len() {
        return Err(CoreError::Alignment("factor archives and index differ in length".into()).into());
    }
    let mut out = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let id = r.first().ok_or_else(|| anyhow!("empty factor index row"))?;
        let offset: usize = r.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| anyhow!("bad offset in {r:?}"))?;
        let u = feats
            .get(id)
            .ok_or_else(|| CoreError::Alignment(format!("factor record {id} is not in the corpus")))?;
        if speakers.binary_search(&u.speaker_id).is_err() {
            continue;
        }
        let f = Factors {
            q: q[i].clone(),
            s: s[i].clone(),
            e: e[i].clone(),
            offset,
        };
        out.push((u.split, ReconSample::new(id, &f, &u.spectrum)?));
    }
    Ok(out)
}

fn of_split(samples: &[(Split, ReconSample)], split: Split) -> Vec<ReconSample> {
    samples.iter().filter(|(s, _)| *s == split).map(|(_, x)| x.clone()).collect()
}

pub fn train_recon(run: &mut Run) -> Result<()> {
    let (_, feats) = run.features()?;
    let samples = recon_samples(run, &feats)?;
    let trained = train_reconstructor(&run.cfg.recon, &of_split(&samples, Split::Train), &of_split(&samples, Split::Dev))?;
    run.save_model("recon", trained.checkpoint(), &trained.log)
}

pub fn eval_sre(run: &mut Run) -> Result<()> {
    let phone = run.checkpoint("phone", "train-phone")?;
    let systems = SPEAKER_SYSTEMS
        .iter()
        .map(|(n, _)| Ok((*n, run.checkpoint(&format!("speaker-{n}"), "train-speaker")?)))
        .collect::<Result<Vec<_>>>()?;
    let (m, feats) = run.features()?;
    let p = &run.cfg.protocol;
    let protocol = make_sre_protocol(
        &m,
        p.enroll_seconds,
        &p.test_frames,
        run.cfg.frames_per_second(),
        p.max_trials_per_speaker,
    )?;
    let mut rows = Vec::new();
    for (name, ck) in &systems {
        for r in run_sre_experiment(&protocol, &feats, ck, Some(&phone), p.renormalize_dvectors)? {
            log::info!("{name} {}: IDR {:.2}%", r.condition, r.idr_percent);
            rows.push(SreRow {
                system: name.to_string(),
                condition: r.condition,
                n_trials: r.n_trials,
                n_correct: r.n_correct,
                idr_percent: r.idr_percent,
            });
        }
    }
    let dir = run.dir("results")?;
    let text = sre_text(&run.stamp, &rows);
    run.write(dir.join("sre.tsv"), text)
}

pub fn eval_aer(run: &mut Run) -> Result<()> {
    let nets = Conditioning::ALL
        .iter()
        .map(|c| Ok((*c, run.checkpoint(&format!("emotion-{}", c.slug()), "train-emotion")?)))
        .collect::<Result<Vec<_>>>()?;
    let (_, feats) = run.features()?;
    let mut rows = Vec::new();
    for (cond, ck) in &nets {
        let (phone, speaker) = upstream_for(run, *cond)?;
        let up = Upstream {
            phone: phone.as_ref(),
            speaker: speaker.as_ref(),
        };
        for split in [Split::Train, Split::Eval] {
            let (fr, utt) = aer_reports(&feats, split, ck, &up)?;
            for rep in [fr, utt] {
                rows.push(AerRow {
                    conditioning: cond.to_string(),
                    split: split.to_string(),
                    level: rep.level.to_string(),
                    acc_percent: rep.acc_percent,
                    map_percent: rep.map_percent,
                });
            }
        }
    }
    let dir = run.dir("results")?;
    let text = aer_text(&run.stamp, &rows);
    run.write(dir.join("aer.tsv"), text)
}

fn to_i16(samples: &[f64]) -> Vec<i16> {
    samples
        .iter()
        .map(|s| s.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
        .collect()
}

pub fn reconstruct(run: &mut Run) -> Result<()> {
    let recon_ck = run.checkpoint("recon", "train-recon")?;
    let log_path = run.require("models/recon.log", "train-recon")?;
    let log = TrainingLog::parse(&fs::read_to_string(log_path)?)?;
    let model = ReconModel::from_checkpoint(&recon_ck)?;
    let (_, feats) = run.features()?;
    let samples = recon_samples(run, &feats)?;
    let eval = of_split(&samples, Split::Eval);
    let ours = evaluate_reconstruction(&model, &eval)?;
    let baseline = MeanSpectrumBaseline::fit(&of_split(&samples, Split::Train))?;
    let base = baseline.evaluate(&eval)?;

    let mut per_utt = String::from("utt_id\tn_frames\trecon_mse\tbaseline_mse\n");
    let mut wins = 0;
    for (id, r) in &ours.per_utterance {
        let b = &base.per_utterance[id];
        if r.mean_frame_square_error < b.mean_frame_square_error {
            wins += 1;
        }
        writeln!(
            per_utt,
            "{id}\t{}\t{:.6}\t{:.6}",
            r.n_frames, r.mean_frame_square_error, b.mean_frame_square_error
        )?;
    }
    let val = |pick: fn(&TrainingLog, &str) -> Option<f64>| {
        pick(&log, "val").ok_or_else(|| anyhow!("reconstruction log has no validation loss"))
    };
    let summary = ReconSummary {
        val_loss_epoch0: val(|l, s| l.first(s).map(|e| e.loss))?,
        val_loss_final: val(|l, s| l.last(s).map(|e| e.loss))?,
        eval_loss: ours.mean_frame_square_error,
        baseline_eval_loss: base.mean_frame_square_error,
        eval_utterances: ours.per_utterance.len(),
        utterances_beating_baseline: wins,
    };
    let dir = run.dir("results")?;
    let text = recon_text(&run.stamp, &summary);
    run.write(dir.join("recon.tsv"), text)?;
    run.stamped(dir.join("recon_utterances.tsv"), &per_utt)?;

    let id = match run.cfg.resynthesis.utterance.as_str() {
        "" => eval.first().map(|x| x.utt_id.as_str()).ok_or_else(|| anyhow!("no eval utterance to resynthesize"))?,
        id => id,
    };
    let target = feats.get(id).ok_or_else(|| anyhow!("utterance {id} is not in the corpus"))?;
    let phone = run.checkpoint("phone", "train-phone")?;
    let speaker = run.checkpoint("speaker-cdf", "train-speaker")?;
    let aer = run.checkpoint(&format!("emotion-{}", Conditioning::BOTH.slug()), "train-emotion")?;
    let out = resynthesize(
        &target.fbank,
        &target.spectrum,
        [&phone, &speaker, &aer],
        &model,
        &run.cfg.frame,
        run.cfg.resynthesis.griffin_lim_iterations,
        derive_seed(run.cfg.seed, "griffin-lim"),
    )?;
    let dir = run.dir("resynth")?;
    let id = &target.utt_id;
    let wav = dir.join(format!("{id}.wav"));
    write_wav(&wav, &to_i16(&out.waveform.samples), out.waveform.sample_rate_hz)?;
    run.outputs.push(wav);
    for (name, m) in [("original", &out.original), ("reconstructed", &out.reconstructed)] {
        let path = dir.join(format!("{id}.{name}.txt"));
        write_matrix_text(&path, m)?;
        run.outputs.push(path);
    }
    log::info!(
        "eval reconstruction loss {:.3} (mean-spectrum baseline {:.3}); {wins}/{} utterances beat the baseline",
        summary.eval_loss,
        summary.baseline_eval_loss,
        summary.eval_utterances
    );
    Ok(())
}

/// Every stamp found under the workspace: result files and manifests.
fn stamps(ws: &Path) -> Result<Vec<(PathBuf, Stamp)>> {
    let mut out = Vec::new();
    for sub in ["results", "manifests"] {
        let dir = ws.join(sub);
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            let text = fs::read_to_string(&p)?;
            out.push((p.clone(), Stamp::parse(text.lines().next().unwrap_or(""))?));
        }
    }
    Ok(out)
}

pub fn report(run: &mut Run, force: bool) -> Result<String> {
    let ws = run.cfg.workspace.clone();
    let found = stamps(&ws)?;
    let foreign: Vec<String> = found
        .iter()
        .filter(|(_, s)| s.config_hash != run.stamp.config_hash)
        .map(|(p, s)| format!("{} ({})", p.display(), s.config_hash))
        .collect();
    if !foreign.is_empty() {
        if !force {
            bail!(
                "artifacts come from other configurations than {}: {}; rerun them or pass --force",
                run.stamp.config_hash,
                foreign.join(", ")
            );
        }
        log::warn!("mixing configurations: {}", foreign.join(", "));
    }
    let text = crate::report::render(&ws, &run.stamp)?;
    let path = ws.join("report.txt");
    run.write(path, &text)?;
    Ok(text)
}
