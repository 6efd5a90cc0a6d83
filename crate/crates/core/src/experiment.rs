//! End-to-end runs: data, frozen parts, training and evaluation.
//!
//! Configuration files are line-oriented `key = value` text. Blank lines and
//! lines starting with `#` are ignored; unknown keys are rejected. Keys:
//!
//! | key | default |
//! |-----|---------|
//! | `lambda` | 0.2 |
//! | `lr` | 1e-4 |
//! | `batch_size` | 32 |
//! | `epochs` | 1 |
//! | `eps_norm` | 1e-12 |
//! | `optimizer` | adam (`sgd`, `adam`) |
//! | `adam_beta1`, `adam_beta2`, `adam_eps` | 0.9, 0.999, 1e-8 |
//! | `mode` | full |
//! | `seed` | 0 (drives both data generation and training) |
//! | `lora_rank`, `lora_alpha`, `lora_dropout` | 6, 6, 0.8 |
//! | `teacher_head_steps`, `teacher_head_lr` | 500, 0.1 |
//! | `d_artifact`, `d_semantic`, `d_noise` | 4, 16, 12 |
//! | `corr_in`, `corr_out` | 0.6, 0.4 |
//! | `n_train`, `n_test_in`, `n_test_cross` | 4096, 2048, 2048 |
//! | `artifact_margin`, `semantic_margin` | 1.0, 1.0 |
//! | `prior_artifact_gain` | 0.5 |
//! | `knn_k`, `knn_samples` | 10, 512 |

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{generate_synthetic, DatasetSplit, FeatureRecord, SyntheticSpec};
use crate::encoders::{hex, MlpEncoder, SemanticMap, TeacherEncoder};
use crate::error::{Error, Result};
use crate::grad::SurgeryMode;
use crate::metrics::{evaluate, knn_overlap, prior_drift, text_only_probe, DriftReport, EvalReport};
use crate::trainer::{pretrain_teacher_head, train, Models, RunHistory, SurgeryConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub surgery: SurgeryConfig,
    pub data: SyntheticSpec,
    /// Gain of the frozen synthetic base on the artifact coordinates; every
    /// other coordinate passes through unchanged.
    pub prior_artifact_gain: f64,
    pub knn_k: usize,
    /// Held-out points used for the kNN overlap.
    pub knn_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            surgery: SurgeryConfig::default(),
            data: SyntheticSpec::default(),
            prior_artifact_gain: 0.5,
            knn_k: 10,
            knn_samples: 512,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "lambda",
    "lr",
    "batch_size",
    "epochs",
    "eps_norm",
    "optimizer",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "mode",
    "seed",
    "lora_rank",
    "lora_alpha",
    "lora_dropout",
    "teacher_head_steps",
    "teacher_head_lr",
    "d_artifact",
    "d_semantic",
    "d_noise",
    "corr_in",
    "corr_out",
    "n_train",
    "n_test_in",
    "n_test_cross",
    "artifact_margin",
    "semantic_margin",
    "prior_artifact_gain",
    "knn_k",
    "knn_samples",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::field(key, format!("cannot parse {value:?}")))
}

impl ExperimentConfig {
    /// Defaults with the learning rate raised to 1e-3, the setting used by
    /// the behavioural benchmark.
    pub fn benchmark() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.surgery.lr = 1e-3;
        cfg
    }

    pub fn seed(&self) -> u64 {
        self.surgery.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.set_seed(seed);
        self
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.surgery.seed = seed;
        self.data.seed = seed;
    }

    pub fn with_mode(mut self, mode: SurgeryMode) -> Self {
        self.surgery.mode = mode;
        self
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.surgery;
        let d = &mut self.data;
        match key {
            "lambda" => s.lambda = parse(key, value)?,
            "lr" => s.lr = parse(key, value)?,
            "batch_size" => s.batch_size = parse(key, value)?,
            "epochs" => s.epochs = parse(key, value)?,
            "eps_norm" => s.eps_norm = parse(key, value)?,
            "optimizer" => s.optimizer = value.parse()?,
            "adam_beta1" => s.adam_beta1 = parse(key, value)?,
            "adam_beta2" => s.adam_beta2 = parse(key, value)?,
            "adam_eps" => s.adam_eps = parse(key, value)?,
            "mode" => s.mode = value.parse()?,
            "seed" => {
                s.seed = parse(key, value)?;
                d.seed = s.seed;
            }
            "lora_rank" => s.lora_rank = parse(key, value)?,
            "lora_alpha" => s.lora_alpha = parse(key, value)?,
            "lora_dropout" => s.lora_dropout = parse(key, value)?,
            "teacher_head_steps" => s.teacher_head_steps = parse(key, value)?,
            "teacher_head_lr" => s.teacher_head_lr = parse(key, value)?,
            "d_artifact" => d.d_artifact = parse(key, value)?,
            "d_semantic" => d.d_semantic = parse(key, value)?,
            "d_noise" => d.d_noise = parse(key, value)?,
            "corr_in" => d.corr_in = parse(key, value)?,
            "corr_out" => d.corr_out = parse(key, value)?,
            "n_train" => d.n_train = parse(key, value)?,
            "n_test_in" => d.n_test_in = parse(key, value)?,
            "n_test_cross" => d.n_test_cross = parse(key, value)?,
            "artifact_margin" => d.artifact_margin = parse(key, value)?,
            "semantic_margin" => d.semantic_margin = parse(key, value)?,
            "prior_artifact_gain" => self.prior_artifact_gain = parse(key, value)?,
            "knn_k" => self.knn_k = parse(key, value)?,
            "knn_samples" => self.knn_samples = parse(key, value)?,
            other => return Err(Error::field(other, "unknown config key")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.surgery;
        let d = &self.data;
        Some(match key {
            "lambda" => format!("{:?}", s.lambda),
            "lr" => format!("{:?}", s.lr),
            "batch_size" => s.batch_size.to_string(),
            "epochs" => s.epochs.to_string(),
            "eps_norm" => format!("{:?}", s.eps_norm),
            "optimizer" => s.optimizer.to_string(),
            "adam_beta1" => format!("{:?}", s.adam_beta1),
            "adam_beta2" => format!("{:?}", s.adam_beta2),
            "adam_eps" => format!("{:?}", s.adam_eps),
            "mode" => s.mode.to_string(),
            "seed" => s.seed.to_string(),
            "lora_rank" => s.lora_rank.to_string(),
            "lora_alpha" => format!("{:?}", s.lora_alpha),
            "lora_dropout" => format!("{:?}", s.lora_dropout),
            "teacher_head_steps" => s.teacher_head_steps.to_string(),
            "teacher_head_lr" => format!("{:?}", s.teacher_head_lr),
            "d_artifact" => d.d_artifact.to_string(),
            "d_semantic" => d.d_semantic.to_string(),
            "d_noise" => d.d_noise.to_string(),
            "corr_in" => format!("{:?}", d.corr_in),
            "corr_out" => format!("{:?}", d.corr_out),
            "n_train" => d.n_train.to_string(),
            "n_test_in" => d.n_test_in.to_string(),
            "n_test_cross" => d.n_test_cross.to_string(),
            "artifact_margin" => format!("{:?}", d.artifact_margin),
            "semantic_margin" => format!("{:?}", d.semantic_margin),
            "prior_artifact_gain" => format!("{:?}", self.prior_artifact_gain),
            "knn_k" => self.knn_k.to_string(),
            "knn_samples" => self.knn_samples.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                reason: "expected `key = value`".into(),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Every key in schema order, parseable by [`ExperimentConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            writeln!(out, "{key} = {}", self.get(key).expect("schema key")).unwrap();
        }
        out
    }

    pub fn as_map(&self) -> BTreeMap<String, String> {
        CONFIG_KEYS
            .iter()
            .map(|k| (k.to_string(), self.get(k).expect("schema key")))
            .collect()
    }

    /// SHA-256 of [`ExperimentConfig::to_text`].
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.surgery.validate()?;
        self.data.validate()?;
        if !(self.prior_artifact_gain.is_finite() && self.prior_artifact_gain != 0.0) {
            return Err(Error::field("prior_artifact_gain", "must be finite and nonzero"));
        }
        if self.knn_k == 0 {
            return Err(Error::field("knn_k", "must be at least 1"));
        }
        if self.knn_samples <= self.knn_k {
            return Err(Error::field("knn_samples", "must exceed knn_k"));
        }
        Ok(())
    }
}

/// Where the records came from, which fixes the frozen maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// Records carry raw synthetic inputs.
    Synthetic,
    /// Records carry precomputed base features; the base is the identity.
    Ingested,
}

/// Frozen base encoder for the given data mode.
pub fn frozen_base(cfg: &ExperimentConfig, mode: DataMode, input_dim: usize) -> Result<MlpEncoder> {
    match mode {
        DataMode::Synthetic => {
            let mut gains = vec![1.0; input_dim];
            let artifact = cfg.data.artifact_range();
            if artifact.end > input_dim {
                return Err(Error::DimMismatch {
                    left: artifact.end,
                    right: input_dim,
                });
            }
            gains[artifact].iter_mut().for_each(|g| *g = cfg.prior_artifact_gain);
            MlpEncoder::diagonal(&gains)
        }
        DataMode::Ingested => Ok(MlpEncoder::identity(input_dim)),
    }
}

pub fn semantic_map(cfg: &ExperimentConfig, mode: DataMode, base: &MlpEncoder) -> SemanticMap {
    match mode {
        DataMode::Synthetic => SemanticMap::Embedded {
            base: base.clone(),
            offset: cfg.data.d_artifact,
        },
        DataMode::Ingested => SemanticMap::Identity,
    }
}

/// Frozen parts plus a fresh adapter and zero heads, with the teacher head
/// fit on the training split.
pub fn build_models(cfg: &ExperimentConfig, mode: DataMode, split: &DatasetSplit) -> Result<Models> {
    split.validate()?;
    let first = &split.train[0];
    let base = frozen_base(cfg, mode, first.x.dim())?;
    let semantic = semantic_map(cfg, mode, &base);
    let t_dim = semantic.forward(Some(&first.t_sem), &first.id)?.dim();
    if t_dim != base.output_dim() {
        return Err(Error::DimMismatch {
            left: t_dim,
            right: base.output_dim(),
        });
    }
    let teacher = TeacherEncoder::new(base.clone());
    let head = pretrain_teacher_head(
        &teacher,
        &split.train,
        cfg.surgery.teacher_head_steps,
        cfg.surgery.teacher_head_lr,
    )?;
    Models::init(base, semantic, head, t_dim, &cfg.surgery)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: SurgeryMode,
    pub seed: u64,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub train: EvalReport,
    pub test_in_domain: Option<EvalReport>,
    pub test_cross_domain: Option<EvalReport>,
    /// Drift measured on the held-out split used for evaluation.
    pub drift: DriftReport,
    pub drift_split: String,
    /// The frozen teacher's own accuracy on that split.
    pub teacher_accuracy: f64,
}

impl RunReport {
    /// Cross-domain accuracy, falling back to in-domain then train.
    pub fn headline_accuracy(&self) -> f64 {
        self.test_cross_domain
            .as_ref()
            .or(self.test_in_domain.as_ref())
            .unwrap_or(&self.train)
            .accuracy_overall
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub models: Models,
    pub history: RunHistory,
    pub report: RunReport,
}

fn eval_split(models: &Models, records: &[FeatureRecord]) -> Result<Option<EvalReport>> {
    if records.is_empty() {
        return Ok(None);
    }
    Ok(Some(evaluate(&models.logits(records)?, records)?))
}

/// Drift and kNN overlap on `records`, kNN restricted to the first
/// `knn_samples` of them.
pub fn measure_drift(cfg: &ExperimentConfig, models: &Models, records: &[FeatureRecord]) -> Result<DriftReport> {
    let student = models.student_features(records)?;
    let teacher = models.teacher_features(records)?;
    let n = cfg.knn_samples.min(student.len());
    Ok(DriftReport {
        mean_cosine_distance: prior_drift(&student, &teacher)?,
        knn_overlap: knn_overlap(&student[..n], &teacher[..n], cfg.knn_k)?,
        k: cfg.knn_k,
    })
}

/// The held-out records drift is measured on, and the split's name.
pub fn drift_records(split: &DatasetSplit) -> (&[FeatureRecord], &'static str) {
    if !split.test_cross_domain.is_empty() {
        (&split.test_cross_domain, "test_cross_domain")
    } else if !split.test_in_domain.is_empty() {
        (&split.test_in_domain, "test_in_domain")
    } else {
        (&split.train, "train")
    }
}

pub fn report_for(cfg: &ExperimentConfig, models: &Models, split: &DatasetSplit) -> Result<RunReport> {
    let (held_out, name) = drift_records(split);
    let teacher_logits = models
        .teacher_features(held_out)?
        .iter()
        .map(|f| models.head_teacher.head().logit(f))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<_> = held_out.iter().map(|r| r.label).collect();
    Ok(RunReport {
        mode: cfg.surgery.mode,
        seed: cfg.seed(),
        lambda: cfg.surgery.lambda,
        lr: cfg.surgery.lr,
        epochs: cfg.surgery.epochs,
        train: evaluate(&models.logits(&split.train)?, &split.train)?,
        test_in_domain: eval_split(models, &split.test_in_domain)?,
        test_cross_domain: eval_split(models, &split.test_cross_domain)?,
        drift: measure_drift(cfg, models, held_out)?,
        drift_split: name.to_string(),
        teacher_accuracy: crate::metrics::accuracy(&teacher_logits, &labels, 0.0)?.overall,
    })
}

/// Trains on `split.train` and evaluates every split.
pub fn run_on(cfg: &ExperimentConfig, mode: DataMode, split: &DatasetSplit) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut models = build_models(cfg, mode, split)?;
    let history = train(&cfg.surgery, &mut models, &split.train)?;
    let report = report_for(cfg, &models, split)?;
    Ok(RunOutcome { models, history, report })
}

/// Generates the synthetic benchmark for `cfg` and runs on it.
pub fn run_synthetic(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let split = generate_synthetic(&cfg.data)?;
    run_on(cfg, DataMode::Synthetic, &split)
}

/// Accuracy of a semantic-only probe trained on `train`, on each test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub in_domain: Option<f64>,
    pub cross_domain: Option<f64>,
}

pub fn semantic_probe(split: &DatasetSplit) -> Result<ProbeReport> {
    let probe = |test: &[FeatureRecord]| -> Result<Option<f64>> {
        if test.is_empty() {
            Ok(None)
        } else {
            text_only_probe(&split.train, test).map(Some)
        }
    };
    Ok(ProbeReport {
        in_domain: probe(&split.test_in_domain)?,
        cross_domain: probe(&split.test_cross_domain)?,
    })
}
