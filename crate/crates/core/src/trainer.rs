//! Training loop with per-sample gradient surgery.
//!
//! For each sample the three branch losses are evaluated, their feature
//! gradients are rewritten by [`apply_surgery`], and the rewritten gradient
//! is pulled back through the adapter with a vector-Jacobian product. Heads
//! are trained on their own unmodified losses. Parameter gradients are
//! averaged over the batch in sample order before one optimizer step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::FeatureRecord;
use crate::encoders::{
    AdapterGrad, FrozenHead, LinearHead, LowRankAdapter, MlpEncoder, SemanticMap, StudentEncoder,
    TeacherEncoder,
};
use crate::error::{Error, Result};
use crate::grad::{
    apply_surgery, bce_with_logits, feature_grad, GradientTriple, Label, SurgeryMode, DEFAULT_EPS_NORM,
};
use crate::numerics::{dot, dot_slices, Rng, Vec64};

/// Stream ids for [`Rng::derive`] off the run seed.
pub const ADAPTER_INIT_STREAM: u64 = 0;
pub const SHUFFLE_STREAM: u64 = 1;
pub const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::field("optimizer", format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeryConfig {
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eps_norm: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub mode: SurgeryMode,
    pub seed: u64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_dropout: f64,
    pub teacher_head_steps: usize,
    pub teacher_head_lr: f64,
}

impl Default for SurgeryConfig {
    fn default() -> Self {
        SurgeryConfig {
            lambda: 0.2,
            lr: 1e-4,
            batch_size: 32,
            epochs: 1,
            eps_norm: DEFAULT_EPS_NORM,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            mode: SurgeryMode::Full,
            seed: 0,
            lora_rank: 6,
            lora_alpha: 6.0,
            lora_dropout: 0.8,
            teacher_head_steps: 500,
            teacher_head_lr: 0.1,
        }
    }
}

impl SurgeryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::field("lambda", "must be finite and non-negative"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::field("lr", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::field("batch_size", "must be at least 1"));
        }
        if !(self.eps_norm > 0.0) {
            return Err(Error::field("eps_norm", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::field("adam_beta", "betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::field("adam_eps", "must be positive"));
        }
        if self.lora_rank == 0 {
            return Err(Error::field("lora_rank", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.lora_dropout) {
            return Err(Error::field("lora_dropout", "must lie in [0, 1)"));
        }
        if !(self.teacher_head_lr > 0.0) {
            return Err(Error::field("teacher_head_lr", "must be positive"));
        }
        Ok(())
    }
}

/// First and second moments for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One Adam step with bias correction:
/// `param -= lr · m̂ / (sqrt(v̂) + eps)`.
pub fn adam_update(param: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, betas: (f64, f64), eps: f64) {
    assert_eq!(param.len(), grad.len());
    assert_eq!(param.len(), state.m.len());
    let (b1, b2) = betas;
    state.step += 1;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

pub fn sgd_update(param: &mut [f64], grad: &[f64], lr: f64) {
    for (p, g) in param.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    blocks: Vec<AdamState>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, models: &Models) -> Self {
        let a = models.student.adapter();
        let lens = [
            a.rank() * a.dim(),
            a.rank() * a.dim(),
            models.head_img.dim(),
            1,
            models.head_text.dim(),
            1,
        ];
        OptimizerState {
            kind,
            blocks: lens.iter().map(|&n| AdamState::new(n)).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.blocks[0].step
    }
}

/// All networks touched by training.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub student: StudentEncoder,
    pub teacher: TeacherEncoder,
    pub semantic: SemanticMap,
    pub head_img: LinearHead,
    pub head_text: LinearHead,
    pub head_teacher: FrozenHead,
}

impl Models {
    /// Student with a fresh adapter (`B = 0`), zero trainable heads, and the
    /// given frozen teacher head.
    pub fn init(
        base: MlpEncoder,
        semantic: SemanticMap,
        head_teacher: FrozenHead,
        semantic_dim: usize,
        config: &SurgeryConfig,
    ) -> Result<Self> {
        let mut rng = Rng::derive(config.seed, ADAPTER_INIT_STREAM);
        let dim = base.output_dim();
        let adapter = LowRankAdapter::init(&mut rng, dim, config.lora_rank, config.lora_alpha, config.lora_dropout)?;
        let student = StudentEncoder::new(base, adapter)?;
        let teacher = TeacherEncoder::from_student(&student);
        if head_teacher.head().dim() != dim {
            return Err(Error::DimMismatch {
                left: head_teacher.head().dim(),
                right: dim,
            });
        }
        Ok(Models {
            student,
            teacher,
            semantic,
            head_img: LinearHead::zeros(dim),
            head_text: LinearHead::zeros(semantic_dim),
            head_teacher,
        })
    }

    /// Fingerprint of everything that must stay frozen.
    pub fn frozen_fingerprint(&self) -> String {
        format!(
            "{}:{}:{}",
            self.teacher.base().fingerprint(),
            self.student.base().fingerprint(),
            self.head_teacher.head().fingerprint()
        )
    }

    pub fn student_features(&self, records: &[FeatureRecord]) -> Result<Vec<Vec64>> {
        let mut rng = Rng::new(0);
        records.iter().map(|r| self.student.forward(&r.x, false, &mut rng)).collect()
    }

    pub fn teacher_features(&self, records: &[FeatureRecord]) -> Result<Vec<Vec64>> {
        records.iter().map(|r| self.teacher.forward(&r.x)).collect()
    }

    /// Student logits in eval mode.
    pub fn logits(&self, records: &[FeatureRecord]) -> Result<Vec<f64>> {
        self.student_features(records)?
            .iter()
            .map(|f| self.head_img.logit(f))
            .collect()
    }
}

/// Full-batch gradient descent on the logistic loss from a zero head.
/// Returns the head and the loss before each step plus the final loss.
pub fn fit_logistic(features: &[Vec64], labels: &[Label], steps: usize, lr: f64) -> Result<(LinearHead, Vec<f64>)> {
    let Some(first) = features.first() else {
        return Err(Error::NoRecords);
    };
    if features.len() != labels.len() {
        return Err(Error::DimMismatch {
            left: features.len(),
            right: labels.len(),
        });
    }
    let fakes = labels.iter().filter(|l| l.is_fake()).count();
    if fakes == 0 || fakes == labels.len() {
        return Err(Error::SingleLabel("logistic fit needs both labels".into()));
    }
    let d = first.dim();
    let n = features.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut trace = Vec::with_capacity(steps + 1);
    for _ in 0..=steps {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        let mut loss = 0.0;
        for (f, &y) in features.iter().zip(labels) {
            crate::error::check_dims(f.dim(), d)?;
            let z = dot_slices(&w, f.as_slice()) + b;
            loss += bce_with_logits(z, y);
            let r = crate::grad::bce_with_logits_grad(z, y);
            for (g, x) in gw.iter_mut().zip(f.iter()) {
                *g += r * x;
            }
            gb += r;
        }
        trace.push(loss / n);
        if trace.len() > steps {
            break;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g / n;
        }
        b -= lr * gb / n;
    }
    Ok((LinearHead::new(Vec64::new(w)?, b)?, trace))
}

/// Fits the teacher's head on frozen teacher features and freezes it.
pub fn pretrain_teacher_head(
    teacher: &TeacherEncoder,
    train_set: &[FeatureRecord],
    steps: usize,
    lr: f64,
) -> Result<FrozenHead> {
    let feats = train_set
        .iter()
        .map(|r| teacher.forward(&r.x))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Label> = train_set.iter().map(|r| r.label).collect();
    let (head, _) = fit_logistic(&feats, &labels, steps, lr)?;
    Ok(FrozenHead::new(head))
}

/// A training record with its frozen semantic feature resolved.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub x: Vec64,
    pub t: Vec64,
    pub label: Label,
}

pub fn prepare_samples(models: &Models, records: &[FeatureRecord]) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            Ok(Sample {
                id: r.id.clone(),
                x: r.x.clone(),
                t: models.semantic.forward(Some(&r.t_sem), &r.id)?,
                label: r.label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub loss_img: f64,
    pub loss_text: f64,
    pub loss_teacher: f64,
    pub loss_align: f64,
    pub correct: usize,
    pub samples: usize,
    /// Samples whose mode projects.
    pub projections: usize,
    /// Of those, samples with a vanishing harmful direction.
    pub skipped: usize,
    /// Largest `|⟨g_tilde, g_harm⟩| / (‖g_task‖·‖g_harm‖)` in the batch.
    pub max_orthogonality_residual: f64,
    /// L2 norm of the parameter change applied by this step.
    pub update_norm: f64,
}

fn abort(id: &str, what: &str) -> Error {
    Error::NumericalAbort {
        id: id.to_string(),
        what: what.to_string(),
    }
}

fn check_finite(v: f64, id: &str, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(abort(id, what))
    }
}

/// Batch-averaged parameter gradients, before the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrads {
    pub adapter: AdapterGrad,
    pub head_img_w: Vec<f64>,
    pub head_img_b: f64,
    pub head_text_w: Vec<f64>,
    pub head_text_b: f64,
}

/// Per-sample surgery and gradient accumulation over `batch`, drawing one
/// dropout mask per sample from `rng`.
pub fn batch_gradients(
    models: &Models,
    batch: &[&Sample],
    config: &SurgeryConfig,
    rng: &mut Rng,
) -> Result<(BatchGrads, StepMetrics)> {
    if batch.is_empty() {
        return Err(Error::field("batch", "must not be empty"));
    }
    let mut grads = BatchGrads {
        adapter: AdapterGrad::zeros_like(models.student.adapter()),
        head_img_w: vec![0.0; models.head_img.dim()],
        head_img_b: 0.0,
        head_text_w: vec![0.0; models.head_text.dim()],
        head_text_b: 0.0,
    };
    let mut m = StepMetrics {
        loss_img: 0.0,
        loss_text: 0.0,
        loss_teacher: 0.0,
        loss_align: 0.0,
        correct: 0,
        samples: batch.len(),
        projections: 0,
        skipped: 0,
        max_orthogonality_residual: 0.0,
        update_norm: 0.0,
    };
    let teacher_head = models.head_teacher.head();

    for sample in batch {
        let id = sample.id.as_str();
        let pass = models.student.forward_cached(&sample.x, true, rng)?;
        let f = &pass.feature;
        let f_teacher = models.teacher.forward(&sample.x)?;

        let z_img = check_finite(models.head_img.logit(f)?, id, "image logit")?;
        let z_text = check_finite(models.head_text.logit(&sample.t)?, id, "semantic logit")?;
        let z_teacher = check_finite(teacher_head.logit(&f_teacher)?, id, "teacher logit")?;
        m.loss_img += check_finite(bce_with_logits(z_img, sample.label), id, "image loss")?;
        m.loss_text += check_finite(bce_with_logits(z_text, sample.label), id, "semantic loss")?;
        m.loss_teacher += check_finite(bce_with_logits(z_teacher, sample.label), id, "teacher loss")?;
        if (z_img > 0.0) == sample.label.is_fake() {
            m.correct += 1;
        }

        let triple = GradientTriple::new(
            feature_grad(&models.head_img, f, sample.label)?,
            feature_grad(&models.head_text, &sample.t, sample.label)?,
            feature_grad(teacher_head, &f_teacher, sample.label)?,
        )?;
        let out = apply_surgery(&triple, config.mode, config.lambda, config.eps_norm)?;
        if out.g_final.iter().any(|v| !v.is_finite()) {
            return Err(abort(id, "final feature gradient"));
        }
        m.loss_align += dot(f, &out.g_help)?;
        if config.mode.projects() {
            m.projections += 1;
            if out.projection_skipped {
                m.skipped += 1;
            } else {
                m.max_orthogonality_residual = m
                    .max_orthogonality_residual
                    .max(out.orthogonality_residual(&triple.g_task));
            }
        }

        models
            .student
            .vjp_accumulate(&pass, out.g_final.as_slice(), 1.0, &mut grads.adapter)?;
        let r_img = crate::grad::bce_with_logits_grad(z_img, sample.label);
        for (g, x) in grads.head_img_w.iter_mut().zip(f.iter()) {
            *g += r_img * x;
        }
        grads.head_img_b += r_img;
        let r_text = crate::grad::bce_with_logits_grad(z_text, sample.label);
        for (g, x) in grads.head_text_w.iter_mut().zip(sample.t.iter()) {
            *g += r_text * x;
        }
        grads.head_text_b += r_text;
    }

    let inv = 1.0 / batch.len() as f64;
    grads.adapter.scale(inv);
    grads.head_img_w.iter_mut().for_each(|g| *g *= inv);
    grads.head_img_b *= inv;
    grads.head_text_w.iter_mut().for_each(|g| *g *= inv);
    grads.head_text_b *= inv;
    m.loss_img *= inv;
    m.loss_text *= inv;
    m.loss_teacher *= inv;
    m.loss_align *= inv;
    Ok((grads, m))
}

/// Applies averaged gradients; returns the L2 norm of the parameter change.
pub fn apply_gradients(models: &mut Models, grads: &BatchGrads, config: &SurgeryConfig, state: &mut OptimizerState) -> f64 {
    let mut change = 0.0;
    let mut update = |block: usize, param: &mut [f64], grad: &[f64]| {
        let before = param.to_vec();
        match state.kind {
            OptimizerKind::Sgd => sgd_update(param, grad, config.lr),
            OptimizerKind::Adam => adam_update(
                param,
                grad,
                &mut state.blocks[block],
                config.lr,
                (config.adam_beta1, config.adam_beta2),
                config.adam_eps,
            ),
        }
        change += param.iter().zip(&before).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    };
    {
        let (a, b) = models.student.adapter_mut().params_mut();
        update(0, a, grads.adapter.a.as_slice());
        update(1, b, grads.adapter.b.as_slice());
    }
    {
        let (w, b) = models.head_img.params_mut();
        update(2, w, &grads.head_img_w);
        update(3, std::slice::from_mut(b), &[grads.head_img_b]);
    }
    {
        let (w, b) = models.head_text.params_mut();
        update(4, w, &grads.head_text_w);
        update(5, std::slice::from_mut(b), &[grads.head_text_b]);
    }
    change.sqrt()
}

/// One optimizer step on `batch`.
pub fn train_step(
    models: &mut Models,
    batch: &[&Sample],
    config: &SurgeryConfig,
    state: &mut OptimizerState,
    rng: &mut Rng,
) -> Result<StepMetrics> {
    let (grads, mut metrics) = batch_gradients(models, batch, config, rng)?;
    metrics.update_norm = apply_gradients(models, &grads, config, state);
    if !metrics.update_norm.is_finite() {
        return Err(abort(&batch[0].id, "parameter update"));
    }
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub loss_img: f64,
    pub loss_text: f64,
    pub loss_align: f64,
    pub train_accuracy: f64,
    pub projection_skip_rate: f64,
    pub max_orthogonality_residual: f64,
    pub mean_update_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    /// Every step in order, kept in memory only.
    pub steps: Vec<StepMetrics>,
}

impl RunHistory {
    /// One JSON object per epoch, newline terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }
}

fn summarize(epoch: usize, steps: &[StepMetrics]) -> EpochRecord {
    let n: usize = steps.iter().map(|s| s.samples).sum();
    let weighted = |f: fn(&StepMetrics) -> f64| steps.iter().map(|s| f(s) * s.samples as f64).sum::<f64>() / n as f64;
    let projections: usize = steps.iter().map(|s| s.projections).sum();
    let skipped: usize = steps.iter().map(|s| s.skipped).sum();
    EpochRecord {
        epoch,
        steps: steps.len(),
        loss_img: weighted(|s| s.loss_img),
        loss_text: weighted(|s| s.loss_text),
        loss_align: weighted(|s| s.loss_align),
        train_accuracy: steps.iter().map(|s| s.correct).sum::<usize>() as f64 / n as f64,
        projection_skip_rate: if projections == 0 { 0.0 } else { skipped as f64 / projections as f64 },
        max_orthogonality_residual: steps.iter().map(|s| s.max_orthogonality_residual).fold(0.0, f64::max),
        mean_update_norm: steps.iter().map(|s| s.update_norm).sum::<f64>() / steps.len() as f64,
    }
}

/// Trains `models` in place for `config.epochs` epochs over `train_set`.
pub fn train(config: &SurgeryConfig, models: &mut Models, train_set: &[FeatureRecord]) -> Result<RunHistory> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::NoRecords);
    }
    let samples = prepare_samples(models, train_set)?;
    let mut state = OptimizerState::new(config.optimizer, models);
    let mut shuffle = Rng::derive(config.seed, SHUFFLE_STREAM);
    let mut dropout = Rng::derive(config.seed, DROPOUT_STREAM);
    let mut history = RunHistory::default();
    for epoch in 0..config.epochs {
        let order = shuffle.permutation(samples.len());
        let mut epoch_steps = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            epoch_steps.push(train_step(models, &batch, config, &mut state, &mut dropout)?);
        }
        history.epochs.push(summarize(epoch, &epoch_steps));
        history.steps.extend(epoch_steps);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian_vec;

    #[test]
    fn adam_first_step_is_sign_sized() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![3.0, -0.2, 1e-3];
        let mut s = AdamState::new(3);
        adam_update(&mut p, &g, &mut s, 0.01, (0.9, 0.999), 1e-8);
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((p[1] - (-2.0 + 0.01)).abs() < 1e-9);
        assert!((p[2] - (0.5 - 0.01)).abs() < 1e-7);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![0.3, -0.7];
        let mut s = AdamState::new(2);
        for _ in 0..5 {
            adam_update(&mut p, &[0.0, 0.0], &mut s, 0.1, (0.9, 0.999), 1e-8);
        }
        assert_eq!(p, vec![0.3, -0.7]);
        assert_eq!(s.step, 5);
    }

    #[test]
    fn adam_matches_hand_table() {
        // Scalar, lr 0.1, betas (0.9, 0.999), eps 1e-8, grads 1, -2, 0.5.
        // t  m        v            m_hat       v_hat       param
        // 1  0.1      0.001        1           1           -0.099999999
        // 2  -0.11    0.004999     -0.5789474  2.5007504   -0.0633896465279
        // 3  -0.049   0.005244001  -0.1808118  1.7497495   -0.0497205803262
        let table = [-0.099_999_999_000_000_02, -0.063_389_646_527_925_18, -0.049_720_580_326_178_55];
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        for (g, want) in [1.0, -2.0, 0.5].iter().zip(table) {
            adam_update(&mut p, &[*g], &mut s, 0.1, (0.9, 0.999), 1e-8);
            assert!((p[0] - want).abs() <= 1e-12, "{} vs {want}", p[0]);
        }
        assert_eq!(s.step, 3);
    }

    #[test]
    fn logistic_fit_contracts() {
        let mut rng = Rng::new(1);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let label = if i % 2 == 0 { Label::Fake } else { Label::Real };
            let sign = if label.is_fake() { 1.0 } else { -1.0 };
            let mut f = gaussian_vec(&mut rng, 3, 0.0, 0.3).unwrap().into_inner();
            f[0] += 2.0 * sign;
            feats.push(Vec64::new(f).unwrap());
            labels.push(label);
        }
        let (head, trace) = fit_logistic(&feats, &labels, 500, 0.1).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let acc = feats
            .iter()
            .zip(&labels)
            .filter(|(f, l)| (head.logit(f).unwrap() > 0.0) == l.is_fake())
            .count() as f64
            / 200.0;
        assert!(acc >= 0.99);

        let (zero, trace) = fit_logistic(&feats, &labels, 0, 0.1).unwrap();
        assert_eq!(zero, LinearHead::zeros(3));
        assert!((trace[0] - std::f64::consts::LN_2).abs() < 1e-12);

        let (again, _) = fit_logistic(&feats, &labels, 500, 0.1).unwrap();
        assert_eq!(head, again);

        let only_fake = vec![Label::Fake; feats.len()];
        assert!(matches!(fit_logistic(&feats, &only_fake, 10, 0.1), Err(Error::SingleLabel(_))));
    }

    #[test]
    fn config_validation_names_field() {
        let bad = SurgeryConfig { lr: 0.0, ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("lr"));
        let bad = SurgeryConfig { lambda: -1.0, ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("lambda"));
        let bad = SurgeryConfig { batch_size: 0, ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("batch_size"));
        SurgeryConfig::default().validate().unwrap();
    }
}
