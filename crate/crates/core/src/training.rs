//! Training schedule and the four training stages: autoencoder pretraining,
//! classifier-1 pretraining, stage 1 (adversarial disentanglement with a λ
//! ramp) and stage 2 (residual generator against a WGAN-GP critic with a
//! speaker head). All randomness comes from one seeded stream whose position
//! is checkpointed, so a resumed run continues exactly where it stopped.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax_nll_values, Tape, Var};
use crate::corpus::{sample_segment, Dataset};
use crate::error::{Error, Result};
use crate::fingerprint;
use crate::losses::{penalty_at, LossReport};
use crate::model::{Checkpoint, CheckpointMeta, FeatureNorm, ModelConfig, Net, NetworkState, Networks};
use crate::nn::{Adam, AdamConfig, Mode};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub pretrain_ae_steps: u64,
    pub pretrain_cls1_steps: u64,
    pub stage1_steps: u64,
    pub stage2_steps: u64,
    pub lambda_ramp_steps: u64,
    pub lambda_max: f64,
    /// Adversary updates (classifier-1 or critic) per main update.
    pub critic_iters_per_gen: u64,
    pub batch_size: usize,
    pub segment_frames: usize,
    pub adam: AdamConfig,
    pub gp_coeff: f64,
    /// Weight of the classifier-2 term in the generator loss.
    pub cls2_g_weight: f64,
    pub seed: u64,
    /// Loss lines are written every `log_every` steps and at the last step.
    pub log_every: u64,
    /// Periodic checkpoint interval in steps; 0 disables.
    pub checkpoint_every: u64,
    /// In the stage-1 encoder objective, count each item's classifier-1 loss
    /// only up to chance level `ln N`. Items classifier-1 already gets wrong
    /// then pass no gradient, so the encoder is not rewarded for making the
    /// classifier confidently wrong (which keeps identity in the code under a
    /// different labeling). The logged `cls1` is the capped value.
    #[serde(default)]
    pub cap_cls1_at_chance: bool,
}

impl TrainSchedule {
    pub fn paper(seed: u64) -> Self {
        Self {
            pretrain_ae_steps: 8000,
            pretrain_cls1_steps: 20000,
            stage1_steps: 80000,
            stage2_steps: 50000,
            lambda_ramp_steps: 50000,
            lambda_max: 0.01,
            critic_iters_per_gen: 5,
            batch_size: 32,
            segment_frames: 128,
            adam: AdamConfig::default(),
            gp_coeff: crate::losses::DEFAULT_GP_COEFF,
            cls2_g_weight: 1.0,
            seed,
            log_every: 100,
            checkpoint_every: 5000,
            cap_cls1_at_chance: false,
        }
    }

    /// Reduced schedule for the synthetic toy corpus on a single CPU core.
    pub fn desk(seed: u64) -> Self {
        Self {
            pretrain_ae_steps: 2000,
            pretrain_cls1_steps: 2000,
            stage1_steps: 800,
            stage2_steps: 300,
            lambda_ramp_steps: 400,
            lambda_max: 0.03,
            batch_size: 8,
            adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            log_every: 10,
            checkpoint_every: 0,
            cap_cls1_at_chance: true,
            ..Self::paper(seed)
        }
    }

    /// Hard errors for unusable values; returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.batch_size == 0 || self.critic_iters_per_gen == 0 {
            return Err(Error::invalid("batch size and adversary iterations must be positive"));
        }
        if self.segment_frames == 0 || self.segment_frames % 8 != 0 {
            return Err(Error::invalid(format!("segment length {} not divisible by 8", self.segment_frames)));
        }
        if !(self.lambda_max >= 0.0) || !(self.gp_coeff >= 0.0) || !(self.cls2_g_weight >= 0.0) {
            return Err(Error::invalid("λ_max, gp_coeff and cls2_g_weight must be non-negative"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        let mut warnings = Vec::new();
        if self.lambda_ramp_steps > self.stage1_steps {
            warnings.push(format!(
                "λ ramp ({} steps) is longer than stage 1 ({} steps); λ_max is never reached",
                self.lambda_ramp_steps, self.stage1_steps
            ));
        }
        Ok(warnings)
    }

    pub fn steps(&self, stage: Stage) -> u64 {
        match stage {
            Stage::PretrainAe => self.pretrain_ae_steps,
            Stage::PretrainCls => self.pretrain_cls1_steps,
            Stage::Stage1 => self.stage1_steps,
            Stage::Stage2 => self.stage2_steps,
        }
    }

    pub fn fingerprint(&self) -> String {
        fingerprint::of(self)
    }
}

/// `λ_max · min(1, step / ramp)`; a zero-length ramp starts at `λ_max`.
pub fn lambda_at(step: u64, sched: &TrainSchedule) -> f64 {
    if sched.lambda_ramp_steps == 0 {
        return sched.lambda_max;
    }
    sched.lambda_max * (step as f64 / sched.lambda_ramp_steps as f64).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    PretrainAe,
    PretrainCls,
    Stage1,
    Stage2,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::PretrainAe, Stage::PretrainCls, Stage::Stage1, Stage::Stage2];

    pub fn name(self) -> &'static str {
        match self {
            Stage::PretrainAe => "pretrain-ae",
            Stage::PretrainCls => "pretrain-cls",
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }

    /// Stage whose checkpoint this stage starts from, if any.
    pub fn previous(self) -> Option<Stage> {
        match self {
            Stage::PretrainAe => None,
            Stage::PretrainCls => Some(Stage::PretrainAe),
            Stage::Stage1 => Some(Stage::PretrainCls),
            Stage::Stage2 => Some(Stage::Stage1),
        }
    }

    fn steps_key(self) -> String {
        format!("{}.steps", self.name())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage {s}")))
    }
}

/// Where a stage writes its side outputs.
#[derive(Default)]
pub struct StageIo {
    /// Receives `step<TAB>name<TAB>value` lines.
    pub log: Option<Box<dyn Write>>,
    /// Periodic checkpoints go here; a non-finite loss writes a diagnostic
    /// checkpoint next to it (extension `nonfinite.ckpt`).
    pub checkpoint_path: Option<PathBuf>,
    /// Keep every logged report in memory.
    pub collect: bool,
    pub reports: Vec<LossReport>,
    /// Called with the networks, the stage and the number of completed steps
    /// every `sample_every` steps (0 disables); used for sample conversions.
    pub sample_every: u64,
    pub on_sample: Option<SampleHook>,
}

pub type SampleHook = Box<dyn FnMut(&Networks, Stage, u64) -> Result<()>>;

impl StageIo {
    pub fn collecting() -> Self {
        Self { collect: true, ..Self::default() }
    }
}

/// All trainable state: networks, one Adam per network, update counters and
/// the random stream.
pub struct Trainer {
    pub nets: Networks,
    pub opts: Vec<Adam>,
    pub sched: TrainSchedule,
    pub counters: BTreeMap<String, u64>,
    /// Last completed stage, or `init`.
    pub stage: String,
    pub dsp_fingerprint: String,
    pub speakers: Vec<String>,
    pub rng: ChaCha8Rng,
}

struct Batch {
    x: Tensor<f32>,
    labels: Vec<usize>,
}

/// Zeroes the logit rows of items whose loss is already at or above `ln N`.
/// A zero row has loss exactly `ln N` and passes no gradient, so the batch
/// mean becomes `mean_i min(nll_i, ln N)`.
fn cap_at_chance(t: &mut Tape<f32>, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = t.shape(logits).to_vec();
    let n = shape[1];
    let chance = (n as f64).ln();
    let mask: Vec<f32> = t
        .value(logits)
        .data()
        .chunks_exact(n)
        .zip(labels)
        .flat_map(|(row, &l)| {
            let keep = if softmax_nll_values(row, n, &[l]).1.value() < chance { 1.0 } else { 0.0 };
            std::iter::repeat(keep).take(n)
        })
        .collect();
    let mask = t.constant(Tensor::new(&shape, mask)?);
    t.mul(logits, mask)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let mut out = [0u8; 32];
    if s.len() != 64 {
        return Err(Error::Format("bad RNG seed in checkpoint".into()));
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| Error::Format("bad RNG seed in checkpoint".into()))?;
    }
    Ok(out)
}

impl Trainer {
    /// Fresh networks initialized from `sched.seed`.
    pub fn new(model: &ModelConfig, sched: TrainSchedule, dsp_fingerprint: &str, speakers: Vec<String>) -> Result<Self> {
        sched.validate()?;
        if model.segment_frames != sched.segment_frames {
            return Err(Error::ConfigMismatch(format!(
                "model segment length {} vs schedule {}",
                model.segment_frames, sched.segment_frames
            )));
        }
        if speakers.len() != model.n_speakers {
            return Err(Error::ConfigMismatch(format!("{} speakers for a {}-speaker model", speakers.len(), model.n_speakers)));
        }
        let nets = Networks::new(model, sched.seed)?;
        let opts = Net::ALL.iter().map(|&n| Adam::new(sched.adam, nets.params(n))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
        rng.set_stream(1);
        Ok(Self {
            nets,
            opts,
            sched,
            counters: BTreeMap::new(),
            stage: "init".into(),
            dsp_fingerprint: dsp_fingerprint.into(),
            speakers,
            rng,
        })
    }

    /// Restores a checkpoint. The schedule may differ from the one the
    /// checkpoint was written with (e.g. a different λ for a later stage);
    /// the model configuration may not.
    pub fn from_checkpoint(ckpt: &Checkpoint, sched: TrainSchedule) -> Result<Self> {
        let meta = &ckpt.meta;
        if meta.model.fingerprint() != meta.model_fingerprint {
            return Err(Error::ConfigMismatch("checkpoint model fingerprint does not match its configuration".into()));
        }
        let mut t = Self::new(&meta.model, sched, &meta.dsp_fingerprint, meta.speakers.clone())?;
        for (k, net) in Net::ALL.into_iter().enumerate() {
            let st = ckpt.nets.get(&net).ok_or_else(|| Error::Format(format!("checkpoint lacks {}", net.name())))?;
            t.nets.params_mut(net).load_from(&st.params)?;
            t.opts[k] = st.adam.clone();
            t.opts[k].cfg = t.sched.adam;
        }
        t.nets.norm = meta.feature_norm.clone();
        t.counters = meta.counters.clone();
        t.stage = meta.stage.clone();
        t.rng = ChaCha8Rng::from_seed(unhex(&meta.rng_seed)?);
        t.rng.set_stream(meta.rng_stream);
        let pos: u128 = meta.rng_word_pos.parse().map_err(|_| Error::Format("bad RNG position in checkpoint".into()))?;
        t.rng.set_word_pos(pos);
        Ok(t)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let nets = Net::ALL
            .into_iter()
            .enumerate()
            .map(|(k, n)| (n, NetworkState { params: self.nets.params(n).clone(), adam: self.opts[k].clone() }))
            .collect();
        Checkpoint {
            meta: CheckpointMeta {
                model: self.nets.cfg.clone(),
                model_fingerprint: self.nets.cfg.fingerprint(),
                dsp_fingerprint: self.dsp_fingerprint.clone(),
                schedule_fingerprint: self.sched.fingerprint(),
                stage: self.stage.clone(),
                counters: self.counters.clone(),
                speakers: self.speakers.clone(),
                rng_seed: hex(&self.rng.get_seed()),
                rng_stream: self.rng.get_stream(),
                rng_word_pos: self.rng.get_word_pos().to_string(),
                feature_norm: self.nets.norm.clone(),
            },
            nets,
        }
    }

    pub fn counter(&self, key: &str) -> u64 {
        self.counters.get(key).copied().unwrap_or(0)
    }

    fn bump(&mut self, key: &str, by: u64) {
        *self.counters.entry(key.to_string()).or_insert(0) += by;
    }

    /// Steps of `stage` already completed.
    pub fn steps_done(&self, stage: Stage) -> u64 {
        self.counter(&stage.steps_key())
    }

    /// Runs `stage` until its scheduled step count is reached, continuing
    /// from any steps already done.
    pub fn run_stage(&mut self, stage: Stage, data: &Dataset, io: &mut StageIo) -> Result<()> {
        self.check_data(data)?;
        if self.nets.norm.is_none() {
            self.nets.norm = Some(FeatureNorm::fit(data.entries.iter().map(|u| &u.spec))?);
        }
        let total = self.sched.steps(stage);
        while self.steps_done(stage) < total {
            let step = self.steps_done(stage);
            let report = match stage {
                Stage::PretrainAe => self.pretrain_ae_step(data, step)?,
                Stage::PretrainCls => self.pretrain_cls_step(data, step)?,
                Stage::Stage1 => self.stage1_step(data, step)?,
                Stage::Stage2 => self.stage2_step(data, step)?,
            };
            if let Err(e) = report.check_finite() {
                if let Some(path) = &io.checkpoint_path {
                    self.to_checkpoint().save(&path.with_extension("nonfinite.ckpt"))?;
                }
                return Err(e);
            }
            self.bump(&stage.steps_key(), 1);
            let done = step + 1;
            if done % self.sched.log_every.max(1) == 0 || done == total {
                if let Some(w) = io.log.as_mut() {
                    report.write_lines(w)?;
                }
                if io.collect {
                    io.reports.push(report);
                }
            }
            if io.sample_every > 0 && done % io.sample_every == 0 {
                if let Some(hook) = io.on_sample.as_mut() {
                    hook(&self.nets, stage, done)?;
                }
            }
            if self.sched.checkpoint_every > 0 && done % self.sched.checkpoint_every == 0 && done < total {
                if let Some(path) = &io.checkpoint_path {
                    self.to_checkpoint().save(path)?;
                }
            }
        }
        if let Some(w) = io.log.as_mut() {
            w.flush()?;
        }
        self.stage = stage.name().into();
        Ok(())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.n_speakers != self.nets.cfg.n_speakers {
            return Err(Error::ConfigMismatch(format!(
                "dataset has {} speakers, model {}",
                data.n_speakers, self.nets.cfg.n_speakers
            )));
        }
        if let Some(fp) = data.fingerprint() {
            if fp != self.dsp_fingerprint {
                return Err(Error::ConfigMismatch(format!("features {fp} vs checkpoint {}", self.dsp_fingerprint)));
            }
        }
        if data.n_bins().is_some_and(|f| f != self.nets.cfg.feat_bins) {
            return Err(Error::ConfigMismatch("feature bins differ from the model".into()));
        }
        if !data.entries.iter().any(|u| u.spec.n_frames() >= self.sched.segment_frames) {
            return Err(Error::SegmentTooShort {
                frames: data.entries.iter().map(|u| u.spec.n_frames()).max().unwrap_or(0),
                needed: self.sched.segment_frames,
            });
        }
        Ok(())
    }

    /// Uniformly drawn utterances (long enough for a segment), each cut at a
    /// uniform offset.
    fn batch(&mut self, data: &Dataset) -> Result<Batch> {
        let len = self.sched.segment_frames;
        let f = self.nets.cfg.feat_bins;
        let mut x = Vec::with_capacity(self.sched.batch_size * f * len);
        let mut labels = Vec::with_capacity(self.sched.batch_size);
        while labels.len() < self.sched.batch_size {
            let u = &data.entries[self.rng.gen_range(0..data.len())];
            if u.spec.n_frames() < len {
                continue;
            }
            let seg = sample_segment(&u.spec, len, &mut self.rng)?;
            x.extend(self.nets.input(&seg)?.data());
            labels.push(u.speaker);
        }
        Ok(Batch { x: Tensor::new(&[self.sched.batch_size, f, len], x)?, labels })
    }

    /// Target speakers drawn uniformly from the whole speaker set.
    pub fn sample_targets(&mut self, n: usize) -> Vec<usize> {
        let k = self.nets.cfg.n_speakers;
        (0..n).map(|_| self.rng.gen_range(0..k)).collect()
    }

    fn update(&mut self, net: Net, grads: &[Option<Vec<f32>>]) {
        let k = net as usize;
        self.opts[k].update(&mut self.nets.params[k], grads);
    }

    fn pretrain_ae_step(&mut self, data: &Dataset, step: u64) -> Result<LossReport> {
        let b = self.batch(data)?;
        let mut t = Tape::<f32>::new();
        let pe = self.nets.params(Net::Encoder).bind(&mut t, true);
        let pd = self.nets.params(Net::Decoder).bind(&mut t, true);
        let x = t.constant(b.x);
        let z = self.nets.encoder.forward(&mut t, &pe, x, &mut Mode::train(&mut self.rng))?;
        let xr = self.nets.decoder.forward(&mut t, &pd, z, &b.labels)?;
        let rec = t.abs_diff_mean(x, xr)?;
        let mut g = t.backward(rec);
        let (ge, gd) = (pe.grads(&mut g), pd.grads(&mut g));
        self.update(Net::Encoder, &ge);
        self.update(Net::Decoder, &gd);
        self.bump("pretrain-ae.ae_updates", 1);
        let rec = t.value(rec).item();
        let mut r = LossReport::new(step);
        r.set("rec", rec).set("ae_total", rec);
        Ok(r)
    }

    /// One classifier-1 update on a fresh batch; returns its loss. The
    /// encoder is not updated here and runs in inference mode, so the
    /// classifier sees the latents that conversion and the probe see.
    fn cls1_update(&mut self, data: &Dataset) -> Result<f64> {
        let b = self.batch(data)?;
        let mut t = Tape::<f32>::new();
        let pe = self.nets.params(Net::Encoder).bind(&mut t, false);
        let pc = self.nets.params(Net::Classifier1).bind(&mut t, true);
        let x = t.constant(b.x);
        let z = self.nets.encoder.forward(&mut t, &pe, x, &mut Mode::eval())?;
        let logits = self.nets.classifier.forward(&mut t, &pc, z, &mut Mode::train(&mut self.rng))?;
        let nll = t.softmax_nll(logits, &b.labels)?;
        let mut g = t.backward(nll);
        let gc = pc.grads(&mut g);
        self.update(Net::Classifier1, &gc);
        Ok(t.value(nll).item())
    }

    fn pretrain_cls_step(&mut self, data: &Dataset, step: u64) -> Result<LossReport> {
        let cls1 = self.cls1_update(data)?;
        self.bump("pretrain-cls.cls1_updates", 1);
        let mut r = LossReport::new(step);
        r.set("cls1", cls1);
        Ok(r)
    }

    fn stage1_step(&mut self, data: &Dataset, step: u64) -> Result<LossReport> {
        for _ in 0..self.sched.critic_iters_per_gen {
            self.cls1_update(data)?;
            self.bump("stage1.cls1_updates", 1);
        }
        let lambda = lambda_at(step, &self.sched);
        let b = self.batch(data)?;
        let mut t = Tape::<f32>::new();
        let pe = self.nets.params(Net::Encoder).bind(&mut t, true);
        let pd = self.nets.params(Net::Decoder).bind(&mut t, true);
        let pc = self.nets.params(Net::Classifier1).bind(&mut t, false);
        let x = t.constant(b.x);
        let z = self.nets.encoder.forward(&mut t, &pe, x, &mut Mode::train(&mut self.rng))?;
        let xr = self.nets.decoder.forward(&mut t, &pd, z, &b.labels)?;
        let rec = t.abs_diff_mean(x, xr)?;
        // The adversarial term sees inference-mode codes: the ones classifier-1
        // is trained on and conversion uses.
        let z_eval = self.nets.encoder.forward(&mut t, &pe, x, &mut Mode::eval())?;
        let logits = self.nets.classifier.forward(&mut t, &pc, z_eval, &mut Mode::eval())?;
        let logits = if self.sched.cap_cls1_at_chance { cap_at_chance(&mut t, logits, &b.labels)? } else { logits };
        let cls1 = t.softmax_nll(logits, &b.labels)?;
        let adv = t.scale(cls1, -lambda);
        let total = t.add(rec, adv)?;
        let mut g = t.backward(total);
        let (ge, gd) = (pe.grads(&mut g), pd.grads(&mut g));
        self.update(Net::Encoder, &ge);
        self.update(Net::Decoder, &gd);
        self.bump("stage1.ae_updates", 1);
        let mut r = LossReport::new(step);
        r.set("rec", t.value(rec).item())
            .set("cls1", t.value(cls1).item())
            .set("ae_total", t.value(total).item())
            .set("lambda", lambda);
        Ok(r)
    }

    /// Frozen stage-1 path: latent codes and decoder output for `targets`.
    fn frozen_v1(&self, x: &Tensor<f32>, targets: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let z = self.nets.encode(x)?;
        let v1 = self.nets.decode(&z, targets)?;
        Ok((z, v1))
    }

    fn stage2_step(&mut self, data: &Dataset, step: u64) -> Result<LossReport> {
        let mut last = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..self.sched.critic_iters_per_gen {
            last = self.critic_update(data)?;
            self.bump("stage2.critic_updates", 1);
        }
        let (critic_adv, gp, cls2_d, dis_total) = last;

        let b = self.batch(data)?;
        let targets = self.sample_targets(b.labels.len());
        let (z, v1) = self.frozen_v1(&b.x, &targets)?;
        let mut t = Tape::<f32>::new();
        let pg = self.nets.params(Net::Generator).bind(&mut t, true);
        let pdis = self.nets.params(Net::Discriminator).bind(&mut t, false);
        let zv = t.constant(z);
        let v1 = t.constant(v1);
        let res = self.nets.generator.forward(&mut t, &pg, zv, &targets)?;
        let v2 = t.add(v1, res)?;
        let out = self.nets.discriminator.forward(&mut t, &pdis, v2)?;
        let mean_fake = t.mean(out.score);
        let gen_adv = t.scale(mean_fake, -1.0);
        let cls2_g = t.softmax_nll(out.logits, &targets)?;
        let weighted = t.scale(cls2_g, self.sched.cls2_g_weight);
        let total = t.add(gen_adv, weighted)?;
        let mut g = t.backward(total);
        let gg = pg.grads(&mut g);
        self.update(Net::Generator, &gg);
        self.bump("stage2.gen_updates", 1);

        let mut r = LossReport::new(step);
        r.set("critic_adv", critic_adv)
            .set("gp", gp)
            .set("cls2_d", cls2_d)
            .set("dis_total", dis_total)
            .set("gen_adv", t.value(gen_adv).item())
            .set("cls2_g", t.value(cls2_g).item())
            .set("gen_total", t.value(total).item());
        Ok(r)
    }

    /// One critic update: Wasserstein term on real segments vs. patched
    /// conversions to uniformly drawn targets, speaker loss on the real
    /// segments, plus the gradient penalty.
    fn critic_update(&mut self, data: &Dataset) -> Result<(f64, f64, f64, f64)> {
        let b = self.batch(data)?;
        let targets = self.sample_targets(b.labels.len());
        let (z, v1) = self.frozen_v1(&b.x, &targets)?;
        let res = self.nets.residual(&z, &targets)?;
        let fake_data: Vec<f32> = v1.data().iter().zip(res.data()).map(|(a, r)| a + r).collect();
        let fake = Tensor::new(v1.shape(), fake_data)?;
        let x_hat = crate::losses::interpolate(&b.x, &fake, &mut self.rng)?;

        let mut t = Tape::<f32>::new();
        let pdis = self.nets.params(Net::Discriminator).bind(&mut t, true);
        let real = t.constant(b.x);
        let fake = t.constant(fake);
        let out_real = self.nets.discriminator.forward(&mut t, &pdis, real)?;
        let out_fake = self.nets.discriminator.forward(&mut t, &pdis, fake)?;
        let mr = t.mean(out_real.score);
        let mf = t.mean(out_fake.score);
        let critic_adv = t.sub(mf, mr)?;
        let cls2_d = t.softmax_nll(out_real.logits, &b.labels)?;
        let loss = t.add(critic_adv, cls2_d)?;
        let mut g = t.backward(loss);
        let mut grads = pdis.grads(&mut g);

        let penalty = penalty_at(&self.nets.discriminator, self.nets.params(Net::Discriminator), &x_hat, true)?;
        let coeff = self.sched.gp_coeff as f32;
        for (acc, pg) in grads.iter_mut().zip(penalty.param_grads.unwrap_or_default()) {
            let Some(pg) = pg else { continue };
            match acc {
                Some(a) => a.iter_mut().zip(&pg).for_each(|(a, p)| *a += coeff * p),
                None => *acc = Some(pg.iter().map(|p| coeff * p).collect()),
            }
        }
        self.update(Net::Discriminator, &grads);
        let critic_adv = t.value(critic_adv).item();
        let cls2_d = t.value(cls2_d).item();
        let dis_total = crate::losses::stage2_discriminator_total(critic_adv, penalty.value, cls2_d, self.sched.gp_coeff);
        Ok((critic_adv, penalty.value, cls2_d, dis_total))
    }
}
