//! The CASD optimization paradigm: modality-random-missing corruption,
//! teacher pretraining, teacher/student co-training with the three-term
//! objective, and the plain cross-entropy baseline trainer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::encoder::{
    forward_nodes, register_constants, register_params, CasdModel, EncoderConfig, ForwardMode,
};
use crate::error::{CasdError, Result};
use crate::fusion::FusionMode;
use crate::losses::{js_logits_nodes, uncertainty_consistency_nodes, LossWeights};
use crate::rng::{stream, substream};
use crate::tape::{Gradients, NodeId, Tape};
use crate::tensor::Tensor;

/// Modality Random Missing corruption: one inter-modality availability mask
/// drawn uniformly per sample, then each frame of each available modality
/// dropped independently with probability `p_intra`. Missing features become
/// zero vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrmConfig {
    pub p_intra: f64,
    pub inter_patterns: Vec<[bool; 3]>,
}

/// Every non-empty subset of {L, A, V}; the all-missing case is excluded
/// from training by construction.
pub fn all_nonempty_patterns() -> Vec<[bool; 3]> {
    let mut out = Vec::new();
    for bits in 1u8..8 {
        out.push([bits & 1 != 0, bits & 2 != 0, bits & 4 != 0]);
    }
    out
}

impl Default for MrmConfig {
    fn default() -> Self {
        MrmConfig {
            p_intra: 0.2,
            inter_patterns: all_nonempty_patterns(),
        }
    }
}

impl MrmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_intra) {
            return Err(CasdError::Config(format!(
                "p_intra must lie in [0, 1], got {}",
                self.p_intra
            )));
        }
        if self.inter_patterns.is_empty() {
            return Err(CasdError::Config("no inter-modality patterns".into()));
        }
        if self.inter_patterns.iter().any(|p| p == &[false; 3]) {
            return Err(CasdError::Config(
                "the all-missing pattern is not allowed during training".into(),
            ));
        }
        Ok(())
    }
}

/// Corrupt one sample: draw a mask, zero unavailable modalities, then drop
/// frames of available modalities. Labels are never touched.
pub fn mrm_corrupt<R: Rng + ?Sized>(sample: &Sample, cfg: &MrmConfig, rng: &mut R) -> Sample {
    let mask = cfg.inter_patterns[rng.random_range(0..cfg.inter_patterns.len())];
    let x = std::array::from_fn(|m| {
        if !mask[m] {
            return Tensor::zeros(sample.x[m].shape().to_vec());
        }
        let mut t = sample.x[m].clone();
        let (rows, cols) = (t.rows(), t.cols());
        for r in 0..rows {
            if rng.random_range(0.0..1.0) < cfg.p_intra {
                for c in 0..cols {
                    t.data_mut()[r * cols + c] = 0.0;
                }
            }
        }
        t
    });
    Sample {
        x,
        label: sample.label,
    }
}

/// All training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_teacher: usize,
    pub epochs_cotrain: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub mrm: MrmConfig,
    /// Learning-rate multiplier for the pooled evidence heads (delta and
    /// alpha). Cross-entropy exerts a slow but persistent downward drift on
    /// the degrees of freedom through the fusion weights; at full rate the
    /// fused dof crosses the v = 3 pole of the uncertainty score and the
    /// distillation target blows up by the clamp factor.
    pub evidence_lr_scale: f64,
    /// Keep teacher parameters fixed during co-training (default); when
    /// false the teacher continues on cross-entropy over complete samples.
    pub freeze_teacher: bool,
    /// Sample the fused distribution during training; when false the fused
    /// location is used directly (ablation baseline).
    pub use_rrm: bool,
    pub fusion: FusionMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_teacher: 30,
            epochs_cotrain: 30,
            batch_size: 32,
            learning_rate: 1e-2,
            momentum: 0.9,
            clip_norm: 5.0,
            seed: 7,
            weights: LossWeights::default(),
            mrm: MrmConfig::default(),
            evidence_lr_scale: 0.1,
            freeze_teacher: true,
            use_rrm: true,
            fusion: FusionMode::Confidence { normalized: false },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CasdError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(CasdError::Config(format!(
                "learning_rate and clip_norm must be positive: lr={}, clip={}",
                self.learning_rate, self.clip_norm
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CasdError::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.evidence_lr_scale > 0.0) {
            return Err(CasdError::Config(format!(
                "evidence_lr_scale must be positive, got {}",
                self.evidence_lr_scale
            )));
        }
        self.weights.validate()?;
        self.mrm.validate()
    }
}

/// Teacher and student share the architecture but never parameters.
#[derive(Debug, Clone)]
pub struct TeacherStudentPair {
    pub teacher: CasdModel,
    pub student: CasdModel,
}

impl TeacherStudentPair {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        let teacher = CasdModel::init(cfg, &mut substream(seed, &[stream::TEACHER_INIT]))?;
        let student = CasdModel::init(cfg, &mut substream(seed, &[stream::STUDENT_INIT]))?;
        Ok(TeacherStudentPair { teacher, student })
    }
}

/// One logged training epoch. Student columns stay empty during teacher
/// pretraining.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub phase: String,
    pub epoch: usize,
    pub ce: f64,
    pub l_logits: f64,
    pub l_unc: f64,
    pub total: f64,
    pub u_teacher: f64,
    pub u_student: Option<f64>,
    pub u_gap: Option<f64>,
}

/// Stochastic gradient descent with momentum and a global gradient-norm
/// clip.
pub struct SgdMomentum {
    learning_rate: f64,
    momentum: f64,
    clip_norm: f64,
    lr_scale: Vec<f64>,
    velocity: Vec<Tensor>,
}

impl SgdMomentum {
    pub fn new(model: &CasdModel, cfg: &TrainConfig) -> Self {
        let evidence = [".head.w_delta", ".head.b_delta", ".head.w_alpha", ".head.b_alpha"];
        SgdMomentum {
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            clip_norm: cfg.clip_norm,
            lr_scale: model
                .names()
                .iter()
                .map(|n| {
                    if evidence.iter().any(|suffix| n.ends_with(suffix)) {
                        cfg.evidence_lr_scale
                    } else {
                        1.0
                    }
                })
                .collect(),
            velocity: model
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect(),
        }
    }

    pub fn step(&mut self, model: &mut CasdModel, grads: &[Tensor]) {
        let norm: f64 = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let scale = if norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };
        for (((param, vel), grad), lr_scale) in model
            .tensors_mut()
            .iter_mut()
            .zip(self.velocity.iter_mut())
            .zip(grads)
            .zip(&self.lr_scale)
        {
            let lr = self.learning_rate * lr_scale;
            for i in 0..param.numel() {
                let v = self.momentum * vel.data()[i] + scale * grad.data()[i];
                vel.data_mut()[i] = v;
                param.data_mut()[i] -= lr * v;
            }
        }
    }
}

fn dense_grads(tape: &Tape, grads: &Gradients, model: &CasdModel) -> Vec<Tensor> {
    tape.params()
        .iter()
        .map(|&(pid, node)| {
            grads
                .grad(node)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(model.tensors()[pid].shape().to_vec()))
        })
        .collect()
}

fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

fn elementwise_mean(t: &Tensor) -> f64 {
    t.data().iter().sum::<f64>() / t.numel() as f64
}

/// Teacher targets for one sample: deterministic forward on the complete
/// input, values only (no gradients, no randomness).
#[derive(Clone)]
struct TeacherTarget {
    logits: Tensor,
    u_score: Tensor,
}

fn teacher_targets(
    teacher: &CasdModel,
    batch: &[&Sample],
    fusion: FusionMode,
) -> Result<Vec<TeacherTarget>> {
    batch
        .iter()
        .map(|s| {
            let mut tape = Tape::new();
            let nodes = register_constants(&mut tape, teacher);
            let out = forward_nodes(
                &mut tape,
                &nodes,
                &teacher.cfg,
                [&s.x[0], &s.x[1], &s.x[2]],
                fusion,
                ForwardMode::Deterministic,
            )?;
            Ok(TeacherTarget {
                logits: tape.value(out.logits).clone(),
                u_score: tape.value(out.fusion.u_score).clone(),
            })
        })
        .collect()
}

/// Per-batch accumulated statistics (sums over samples).
#[derive(Debug, Default, Clone, Copy)]
struct BatchStats {
    n: usize,
    ce: f64,
    js: f64,
    unc: f64,
    total: f64,
    u_net: f64,
    u_other: f64,
    u_gap: f64,
}

impl BatchStats {
    fn merge(&mut self, other: BatchStats) {
        self.n += other.n;
        self.ce += other.ce;
        self.js += other.js;
        self.unc += other.unc;
        self.total += other.total;
        self.u_net += other.u_net;
        self.u_other += other.u_other;
        self.u_gap += other.u_gap;
    }
}

/// Build the batch objective for `model` on `inputs`, optionally distilling
/// from per-sample teacher targets, then take one optimizer step.
/// RNG consumption: one fused-draw per sample when sampling is on, in batch
/// order, and nothing else.
fn batch_step(
    model: &mut CasdModel,
    opt: &mut SgdMomentum,
    inputs: &[Sample],
    targets: Option<&[TeacherTarget]>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    context: &str,
) -> Result<BatchStats> {
    batch_step_inner(model, opt, inputs, targets, cfg, rng).map_err(|e| match e {
        CasdError::Numeric(msg) => CasdError::Numeric(format!("{msg} at {context}")),
        other => other,
    })
}

fn batch_step_inner(
    model: &mut CasdModel,
    opt: &mut SgdMomentum,
    inputs: &[Sample],
    targets: Option<&[TeacherTarget]>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BatchStats> {
    let n = inputs.len();
    let inv_n = 1.0 / n as f64;
    let mut tape = Tape::new();
    let nodes = register_params(&mut tape, model);

    let mut ce_sum: Option<NodeId> = None;
    let mut js_sum: Option<NodeId> = None;
    let mut unc_sum: Option<NodeId> = None;
    let mut stats = BatchStats {
        n,
        ..BatchStats::default()
    };
    let use_js = targets.is_some() && cfg.weights.alpha != 0.0;
    let use_unc = targets.is_some() && cfg.weights.beta != 0.0;

    for (i, sample) in inputs.iter().enumerate() {
        let mode = if cfg.use_rrm {
            ForwardMode::Sample(&mut *rng)
        } else {
            ForwardMode::Deterministic
        };
        let out = forward_nodes(
            &mut tape,
            &nodes,
            &model.cfg,
            [&sample.x[0], &sample.x[1], &sample.x[2]],
            cfg.fusion,
            mode,
        )?;
        let ce = tape.cross_entropy(out.logits, sample.label)?;
        ce_sum = Some(match ce_sum {
            Some(acc) => tape.add(acc, ce)?,
            None => ce,
        });
        stats.u_net += elementwise_mean(tape.value(out.fusion.u_score));

        if let Some(targets) = targets {
            let target = &targets[i];
            stats.u_other += elementwise_mean(&target.u_score);
            stats.u_gap += tape
                .value(out.fusion.u_score)
                .zip_map(&target.u_score, |a, b| (a - b).abs())?
                .data()
                .iter()
                .sum::<f64>()
                / target.u_score.numel() as f64;
            if use_js {
                let js = js_logits_nodes(
                    &mut tape,
                    out.logits,
                    &target.logits,
                    cfg.weights.temperature,
                )?;
                js_sum = Some(match js_sum {
                    Some(acc) => tape.add(acc, js)?,
                    None => js,
                });
            }
            if use_unc {
                let unc =
                    uncertainty_consistency_nodes(&mut tape, out.fusion.u_score, &target.u_score)?;
                unc_sum = Some(match unc_sum {
                    Some(acc) => tape.add(acc, unc)?,
                    None => unc,
                });
            }
        }
    }

    let ce_mean = tape.scale(ce_sum.expect("non-empty batch"), inv_n);
    let mut total = ce_mean;
    let mut js_value = 0.0;
    if let Some(js) = js_sum {
        let js_mean = tape.scale(js, inv_n);
        js_value = tape.scalar_value(js_mean);
        let weighted = tape.scale(js_mean, cfg.weights.alpha);
        total = tape.add(total, weighted)?;
    }
    let mut unc_value = 0.0;
    if let Some(unc) = unc_sum {
        let unc_mean = tape.scale(unc, inv_n);
        unc_value = tape.scalar_value(unc_mean);
        let weighted = tape.scale(unc_mean, cfg.weights.beta);
        total = tape.add(total, weighted)?;
    }

    let total_value = tape.scalar_value(total);
    if !total_value.is_finite() {
        return Err(CasdError::Numeric(
            "training diverged (non-finite loss)".into(),
        ));
    }
    stats.ce = tape.scalar_value(ce_mean) * n as f64;
    stats.js = js_value * n as f64;
    stats.unc = unc_value * n as f64;
    stats.total = total_value * n as f64;

    let grads = tape.backward(total)?;
    let dense = dense_grads(&tape, &grads, model);
    opt.step(model, &dense);
    Ok(stats)
}

fn epoch_log(phase: &str, epoch: usize, agg: BatchStats, with_student: bool) -> EpochLog {
    let n = agg.n as f64;
    EpochLog {
        phase: phase.to_string(),
        epoch,
        ce: agg.ce / n,
        l_logits: agg.js / n,
        l_unc: agg.unc / n,
        total: agg.total / n,
        u_teacher: if with_student {
            agg.u_other / n
        } else {
            agg.u_net / n
        },
        u_student: with_student.then_some(agg.u_net / n),
        u_gap: with_student.then_some(agg.u_gap / n),
    }
}

/// Train the teacher on complete-modality samples with cross-entropy only.
pub fn pretrain_teacher(
    pair: &mut TeacherStudentPair,
    train: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CasdError::Data("pretrain on an empty dataset".into()));
    }
    let mut rng = substream(cfg.seed, &[stream::TEACHER_TRAIN]);
    let mut opt = SgdMomentum::new(&pair.teacher, cfg);
    let mut logs = Vec::with_capacity(cfg.epochs_teacher);
    for epoch in 1..=cfg.epochs_teacher {
        let order = shuffled_indices(train.len(), &mut rng);
        let mut agg = BatchStats::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| train.samples[i].clone())
                .collect();
            let stats = batch_step(
                &mut pair.teacher,
                &mut opt,
                &batch,
                None,
                cfg,
                &mut rng,
                &format!("teacher epoch {epoch}"),
            )?;
            agg.merge(stats);
        }
        logs.push(epoch_log("teacher", epoch, agg, false));
    }
    Ok(logs)
}

/// Co-train the student against the (pretrained) teacher: the teacher sees
/// the complete sample, the student its corrupted version; the student
/// minimizes ce + alpha * js + beta * uncertainty-consistency. The teacher
/// is frozen unless `freeze_teacher` is off, in which case it continues on
/// cross-entropy over complete samples from its own RNG stream.
pub fn cotrain(
    pair: &mut TeacherStudentPair,
    train: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CasdError::Data("cotrain on an empty dataset".into()));
    }
    let mut rng = substream(cfg.seed, &[stream::COTRAIN]);
    let mut teacher_rng = substream(cfg.seed, &[stream::COTRAIN, 0xF1]);
    let mut opt = SgdMomentum::new(&pair.student, cfg);
    let mut teacher_opt = SgdMomentum::new(&pair.teacher, cfg);
    // A frozen teacher gives the same targets all run; compute them once.
    let cached_targets = if cfg.freeze_teacher {
        let all: Vec<&Sample> = train.samples.iter().collect();
        Some(teacher_targets(&pair.teacher, &all, cfg.fusion)?)
    } else {
        None
    };
    let mut logs = Vec::with_capacity(cfg.epochs_cotrain);
    for epoch in 1..=cfg.epochs_cotrain {
        let order = shuffled_indices(train.len(), &mut rng);
        let mut agg = BatchStats::default();
        for chunk in order.chunks(cfg.batch_size) {
            let complete: Vec<&Sample> = chunk.iter().map(|&i| &train.samples[i]).collect();
            let corrupted: Vec<Sample> = complete
                .iter()
                .map(|s| mrm_corrupt(s, &cfg.mrm, &mut rng))
                .collect();
            let targets = match &cached_targets {
                Some(cache) => chunk.iter().map(|&i| cache[i].clone()).collect(),
                None => teacher_targets(&pair.teacher, &complete, cfg.fusion)?,
            };
            let stats = batch_step(
                &mut pair.student,
                &mut opt,
                &corrupted,
                Some(&targets),
                cfg,
                &mut rng,
                &format!("cotrain epoch {epoch}"),
            )?;
            agg.merge(stats);
            if !cfg.freeze_teacher {
                let complete_owned: Vec<Sample> =
                    complete.iter().map(|&s| s.clone()).collect();
                batch_step(
                    &mut pair.teacher,
                    &mut teacher_opt,
                    &complete_owned,
                    None,
                    cfg,
                    &mut teacher_rng,
                    &format!("teacher update epoch {epoch}"),
                )?;
            }
        }
        logs.push(epoch_log("cotrain", epoch, agg, true));
    }
    Ok(logs)
}

/// Plain missing-modality cross-entropy trainer: the internal baseline.
/// Consumes the RNG stream exactly like [`cotrain`] (corruption then
/// per-sample draws), so with alpha = beta = 0 the two produce bit-identical
/// parameter trajectories.
pub fn train_ce_standalone(
    model: &mut CasdModel,
    train: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CasdError::Data("train on an empty dataset".into()));
    }
    let mut rng = substream(cfg.seed, &[stream::COTRAIN]);
    let mut opt = SgdMomentum::new(model, cfg);
    let mut logs = Vec::with_capacity(cfg.epochs_cotrain);
    for epoch in 1..=cfg.epochs_cotrain {
        let order = shuffled_indices(train.len(), &mut rng);
        let mut agg = BatchStats::default();
        for chunk in order.chunks(cfg.batch_size) {
            let corrupted: Vec<Sample> = chunk
                .iter()
                .map(|&i| mrm_corrupt(&train.samples[i], &cfg.mrm, &mut rng))
                .collect();
            let stats = batch_step(
                model,
                &mut opt,
                &corrupted,
                None,
                cfg,
                &mut rng,
                &format!("baseline epoch {epoch}"),
            )?;
            agg.merge(stats);
        }
        logs.push(epoch_log("baseline", epoch, agg, false));
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_classes: 2,
            n_train: 16,
            n_val: 4,
            n_test: 8,
            t_len: 4,
            d_in: [4, 3, 2],
            snr: [3.0, 1.5, 1.0],
            proto_scale: 1.0,
            seed: 3,
        }
    }

    fn tiny_enc() -> EncoderConfig {
        EncoderConfig {
            d_in: [4, 3, 2],
            d_model: 4,
            t_len: 4,
            n_classes: 2,
        }
    }

    fn tiny_train(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs_teacher: epochs,
            epochs_cotrain: epochs,
            batch_size: 8,
            ..TrainConfig::default()
        }
    }

    fn full_sample(t_len: usize) -> Sample {
        Sample {
            x: [
                Tensor::full(vec![t_len, 4], 1.0),
                Tensor::full(vec![t_len, 3], 1.0),
                Tensor::full(vec![t_len, 2], 1.0),
            ],
            label: 1,
        }
    }

    #[test]
    fn mrm_noop_configuration() {
        let cfg = MrmConfig {
            p_intra: 0.0,
            inter_patterns: vec![[true, true, true]],
        };
        let s = full_sample(4);
        let mut rng = substream(1, &[40]);
        let out = mrm_corrupt(&s, &cfg, &mut rng);
        for m in 0..3 {
            assert_eq!(out.x[m].data(), s.x[m].data());
        }
        assert_eq!(out.label, s.label);
    }

    #[test]
    fn mrm_certain_drop() {
        let cfg = MrmConfig {
            p_intra: 1.0,
            inter_patterns: vec![[true, true, true]],
        };
        let s = full_sample(4);
        let mut rng = substream(2, &[41]);
        let out = mrm_corrupt(&s, &cfg, &mut rng);
        for m in 0..3 {
            assert!(out.x[m].data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mrm_binomial_concentration() {
        let cfg = MrmConfig {
            p_intra: 0.5,
            inter_patterns: vec![[true, true, true]],
        };
        let s = Sample {
            x: [
                Tensor::full(vec![10_000, 1], 1.0),
                Tensor::full(vec![1, 1], 1.0),
                Tensor::full(vec![1, 1], 1.0),
            ],
            label: 0,
        };
        // The generator trips on unequal shapes only at forward time, so a
        // ragged sample is fine for a pure corruption test.
        let mut rng = substream(3, &[42]);
        let out = mrm_corrupt(&s, &cfg, &mut rng);
        let dropped = out.x[0].data().iter().filter(|&&v| v == 0.0).count();
        let frac = dropped as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&frac), "drop fraction {frac}");
    }

    #[test]
    fn mrm_masked_modalities_are_exactly_zero() {
        let cfg = MrmConfig {
            p_intra: 0.3,
            inter_patterns: vec![[true, false, false]],
        };
        let s = full_sample(6);
        let mut rng = substream(4, &[43]);
        let out = mrm_corrupt(&s, &cfg, &mut rng);
        assert!(out.x[1].data().iter().all(|&v| v == 0.0));
        assert!(out.x[2].data().iter().all(|&v| v == 0.0));
        assert_eq!(out.label, s.label);
    }

    #[test]
    fn mrm_deterministic_under_seed() {
        let cfg = MrmConfig::default();
        let s = full_sample(5);
        let a = mrm_corrupt(&s, &cfg, &mut substream(5, &[44]));
        let b = mrm_corrupt(&s, &cfg, &mut substream(5, &[44]));
        for m in 0..3 {
            assert_eq!(a.x[m].data(), b.x[m].data());
        }
    }

    #[test]
    fn mrm_config_validation() {
        assert!(MrmConfig::default().validate().is_ok());
        let bad = MrmConfig {
            p_intra: 1.5,
            ..MrmConfig::default()
        };
        assert!(bad.validate().is_err());
        let empty = MrmConfig {
            p_intra: 0.5,
            inter_patterns: vec![[false, false, false]],
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn zero_epochs_leaves_parameters_unchanged() {
        let (train, _, _) = generate(&tiny_spec()).unwrap();
        let mut pair = TeacherStudentPair::init(&tiny_enc(), 9).unwrap();
        let before: Vec<Vec<u64>> = pair
            .teacher
            .tensors()
            .iter()
            .map(|t| t.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        let logs = pretrain_teacher(&mut pair, &train, &tiny_train(0)).unwrap();
        assert!(logs.is_empty());
        for (t, want) in pair.teacher.tensors().iter().zip(&before) {
            let bits: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(&bits, want);
        }
    }

    #[test]
    fn teacher_is_frozen_during_cotrain() {
        let (train, _, _) = generate(&tiny_spec()).unwrap();
        let mut pair = TeacherStudentPair::init(&tiny_enc(), 10).unwrap();
        let cfg = tiny_train(2);
        pretrain_teacher(&mut pair, &train, &cfg).unwrap();
        let before: Vec<Vec<u64>> = pair
            .teacher
            .tensors()
            .iter()
            .map(|t| t.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        cotrain(&mut pair, &train, &cfg).unwrap();
        for (t, want) in pair.teacher.tensors().iter().zip(&before) {
            let bits: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(&bits, want);
        }
    }

    #[test]
    fn unfrozen_teacher_moves() {
        let (train, _, _) = generate(&tiny_spec()).unwrap();
        let mut pair = TeacherStudentPair::init(&tiny_enc(), 11).unwrap();
        let cfg = TrainConfig {
            freeze_teacher: false,
            ..tiny_train(1)
        };
        let before = pair.teacher.tensors()[0].data().to_vec();
        cotrain(&mut pair, &train, &cfg).unwrap();
        assert_ne!(pair.teacher.tensors()[0].data(), &before[..]);
    }

    #[test]
    fn zero_weight_cotrain_matches_standalone_ce_bitwise() {
        let (train, _, _) = generate(&tiny_spec()).unwrap();
        let cfg = TrainConfig {
            weights: LossWeights {
                alpha: 0.0,
                beta: 0.0,
                temperature: 1.0,
            },
            ..tiny_train(2)
        };
        let mut pair = TeacherStudentPair::init(&tiny_enc(), 12).unwrap();
        let mut standalone = pair.student.clone();
        let logs = cotrain(&mut pair, &train, &cfg).unwrap();
        train_ce_standalone(&mut standalone, &train, &cfg).unwrap();
        for (a, b) in pair.student.tensors().iter().zip(standalone.tensors()) {
            let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        // And the distillation columns log as exactly zero.
        assert!(logs.iter().all(|l| l.l_logits == 0.0 && l.l_unc == 0.0));
    }

    #[test]
    fn cotrain_is_reproducible() {
        let (train, _, _) = generate(&tiny_spec()).unwrap();
        let cfg = tiny_train(2);
        let run = || {
            let mut pair = TeacherStudentPair::init(&tiny_enc(), 13).unwrap();
            pretrain_teacher(&mut pair, &train, &cfg).unwrap();
            cotrain(&mut pair, &train, &cfg).unwrap();
            pair.student
                .tensors()
                .iter()
                .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn divergence_is_reported_with_context() {
        // The forward pass is saturation-safe, so force the non-finite
        // state directly through a poisoned input.
        let (mut train, _, _) = generate(&tiny_spec()).unwrap();
        train.samples[3].x[1].data_mut()[0] = f64::NAN;
        let mut pair = TeacherStudentPair::init(&tiny_enc(), 14).unwrap();
        let err = pretrain_teacher(&mut pair, &train, &tiny_train(2)).unwrap_err();
        match err {
            CasdError::Numeric(msg) => assert!(msg.contains("epoch"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn gradient_norm_clip_bounds_update() {
        let enc = tiny_enc();
        let mut model = CasdModel::init(&enc, &mut substream(15, &[45])).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1.0,
            momentum: 0.0,
            clip_norm: 1.0,
            evidence_lr_scale: 1.0,
            ..TrainConfig::default()
        };
        let before: Vec<f64> = model.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
        let mut opt = SgdMomentum::new(&model, &cfg);
        let grads: Vec<Tensor> = model
            .tensors()
            .iter()
            .map(|t| Tensor::full(t.shape().to_vec(), 100.0))
            .collect();
        opt.step(&mut model, &grads);
        let after: Vec<f64> = model.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
        let delta: f64 = before
            .iter()
            .zip(&after)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((delta - 1.0).abs() < 1e-9, "update norm {delta}");
    }
}
