//! Synthetic shortcut benchmark and feature-record files.
//!
//! Each synthetic input is `x = [artifact | semantic | noise]`. The artifact
//! block follows the label in every domain. The semantic block follows a
//! shortcut bit that agrees with the label with probability `corr_in` in the
//! source domain and `corr_out` in the shifted domain, so a model that leans
//! on it transfers badly.
//!
//! Record files are UTF-8 JSON lines with exactly the fields `id`, `label`,
//! `domain`, `x` and `t_sem`.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Label;
use crate::numerics::{derive_seed, Rng, Vec64};

pub const SOURCE_DOMAIN: &str = "source";
pub const SHIFTED_DOMAIN: &str = "shifted";

/// Standard deviation of the noise separating `t_sem` from the semantic block.
pub const SEMANTIC_FEATURE_NOISE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecord {
    pub id: String,
    pub label: Label,
    pub domain: String,
    pub x: Vec64,
    pub t_sem: Vec64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub d_artifact: usize,
    pub d_semantic: usize,
    pub d_noise: usize,
    pub corr_in: f64,
    pub corr_out: f64,
    pub n_train: usize,
    pub n_test_in: usize,
    pub n_test_cross: usize,
    /// Mean offset of the artifact block, `±artifact_margin` by label.
    pub artifact_margin: f64,
    /// Mean offset of the semantic block, `±semantic_margin` by shortcut bit.
    pub semantic_margin: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            d_artifact: 4,
            d_semantic: 16,
            d_noise: 12,
            corr_in: 0.6,
            corr_out: 0.4,
            n_train: 4096,
            n_test_in: 2048,
            n_test_cross: 2048,
            artifact_margin: 1.0,
            semantic_margin: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn input_dim(&self) -> usize {
        self.d_artifact + self.d_semantic + self.d_noise
    }

    /// Input coordinates occupied by the semantic block.
    pub fn semantic_range(&self) -> std::ops::Range<usize> {
        self.d_artifact..self.d_artifact + self.d_semantic
    }

    pub fn artifact_range(&self) -> std::ops::Range<usize> {
        0..self.d_artifact
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [
            ("d_artifact", self.d_artifact),
            ("d_semantic", self.d_semantic),
            ("d_noise", self.d_noise),
        ] {
            if d == 0 {
                return Err(Error::field(name, "must be at least 1"));
            }
        }
        for (name, n) in [
            ("n_train", self.n_train),
            ("n_test_in", self.n_test_in),
            ("n_test_cross", self.n_test_cross),
        ] {
            if n < 2 {
                return Err(Error::field(name, "must be at least 2 so both labels appear"));
            }
        }
        for (name, c) in [("corr_in", self.corr_in), ("corr_out", self.corr_out)] {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::field(name, "must lie in [0, 1]"));
            }
        }
        for (name, m) in [
            ("artifact_margin", self.artifact_margin),
            ("semantic_margin", self.semantic_margin),
        ] {
            if !m.is_finite() {
                return Err(Error::field(name, "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<FeatureRecord>,
    pub test_in_domain: Vec<FeatureRecord>,
    pub test_cross_domain: Vec<FeatureRecord>,
}

impl DatasetSplit {
    pub fn all(&self) -> impl Iterator<Item = &FeatureRecord> {
        self.train
            .iter()
            .chain(&self.test_in_domain)
            .chain(&self.test_cross_domain)
    }

    /// Ids unique across partitions; `x` and `t_sem` dims constant.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut dims = None;
        for r in self.all() {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::field("id", format!("duplicate id {:?}", r.id)));
            }
            let d = (r.x.dim(), r.t_sem.dim());
            match dims {
                None => dims = Some(d),
                Some(expected) if expected != d => {
                    return Err(Error::field(
                        "x/t_sem",
                        format!("record {:?} has dims {d:?}, expected {expected:?}", r.id),
                    ))
                }
                _ => {}
            }
        }
        if self.train.is_empty() {
            return Err(Error::NoRecords);
        }
        Ok(())
    }
}

fn generate_partition(spec: &SyntheticSpec, stream: u64, n: usize, corr: f64, prefix: &str, domain: &str) -> Result<Vec<FeatureRecord>> {
    let partition_seed = derive_seed(spec.seed, stream);
    (0..n)
        .map(|i| {
            let mut rng = Rng::derive(partition_seed, i as u64);
            let label = if i % 2 == 1 { Label::Fake } else { Label::Real };
            let sign = if label.is_fake() { 1.0 } else { -1.0 };
            let agrees = rng.bernoulli(corr);
            let shortcut = if agrees { sign } else { -sign };

            let mut x = Vec::with_capacity(spec.input_dim());
            x.extend((0..spec.d_artifact).map(|_| rng.normal(sign * spec.artifact_margin, 1.0)));
            x.extend((0..spec.d_semantic).map(|_| rng.normal(shortcut * spec.semantic_margin, 1.0)));
            x.extend((0..spec.d_noise).map(|_| rng.normal(0.0, 1.0)));
            let t_sem = x[spec.semantic_range()]
                .iter()
                .map(|&s| s + rng.normal(0.0, SEMANTIC_FEATURE_NOISE))
                .collect();
            Ok(FeatureRecord {
                id: format!("{prefix}-{i:06}"),
                label,
                domain: domain.to_string(),
                x: Vec64::new(x)?,
                t_sem: Vec64::new(t_sem)?,
            })
        })
        .collect()
}

/// Draws the three partitions. Record `i` of a partition uses its own
/// derived stream, so generation order does not matter. Labels alternate,
/// giving exact balance up to one record.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    Ok(DatasetSplit {
        train: generate_partition(spec, 0, spec.n_train, spec.corr_in, "train", SOURCE_DOMAIN)?,
        test_in_domain: generate_partition(spec, 1, spec.n_test_in, spec.corr_in, "in", SOURCE_DOMAIN)?,
        test_cross_domain: generate_partition(spec, 2, spec.n_test_cross, spec.corr_out, "cross", SHIFTED_DOMAIN)?,
    })
}

pub fn write_records(records: &[FeatureRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a record file, validating every line and dimension consistency.
pub fn read_records(path: &Path) -> Result<Vec<FeatureRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records: Vec<FeatureRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: FeatureRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        if let Some(first) = records.first() {
            if first.x.dim() != record.x.dim() || first.t_sem.dim() != record.t_sem.dim() {
                return Err(Error::Parse {
                    line: lineno,
                    reason: format!(
                        "dims (x={}, t_sem={}) differ from first record (x={}, t_sem={})",
                        record.x.dim(),
                        record.t_sem.dim(),
                        first.x.dim(),
                        first.t_sem.dim()
                    ),
                });
            }
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok(records)
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_IN_FILE: &str = "test_in.jsonl";
pub const TEST_CROSS_FILE: &str = "test_cross.jsonl";

/// Writes the three partitions as `train.jsonl`, `test_in.jsonl` and
/// `test_cross.jsonl` under `dir`.
pub fn write_split(split: &DatasetSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_records(&split.train, &dir.join(TRAIN_FILE))?;
    write_records(&split.test_in_domain, &dir.join(TEST_IN_FILE))?;
    write_records(&split.test_cross_domain, &dir.join(TEST_CROSS_FILE))?;
    Ok(())
}

/// Loads a split. A directory is read as the three partition files (test
/// files optional); a single file is loaded entirely into `train`.
pub fn load_records(path: &Path) -> Result<DatasetSplit> {
    if !path.is_dir() {
        let split = DatasetSplit {
            train: read_records(path)?,
            ..Default::default()
        };
        split.validate()?;
        return Ok(split);
    }
    let optional = |name: &str| -> Result<Vec<FeatureRecord>> {
        let p = path.join(name);
        if p.exists() {
            read_records(&p)
        } else {
            Ok(Vec::new())
        }
    };
    let split = DatasetSplit {
        train: read_records(&path.join(TRAIN_FILE))?,
        test_in_domain: optional(TEST_IN_FILE)?,
        test_cross_domain: optional(TEST_CROSS_FILE)?,
    };
    split.validate()?;
    Ok(split)
}

/// Partition sizes for `n` items: `floor(n·f_i)` each, with the leftover
/// items handed one at a time to the largest fractional remainders (ties go
/// to the earlier fraction).
pub fn partition_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
        return Err(Error::field("fractions", "must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::field("fractions", format!("sum to {total}, expected 1")));
    }
    let exact: Vec<f64> = fractions.iter().map(|f| n as f64 * f).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Seeded partition of `records`. A single fraction returns the records in
/// their original order. Every partition must contain both labels.
pub fn split(records: &[FeatureRecord], fractions: &[f64], seed: u64) -> Result<Vec<Vec<FeatureRecord>>> {
    let sizes = partition_sizes(records.len(), fractions)?;
    let order: Vec<usize> = if fractions.len() == 1 {
        (0..records.len()).collect()
    } else {
        Rng::new(seed).permutation(records.len())
    };
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for (k, size) in sizes.into_iter().enumerate() {
        let part: Vec<FeatureRecord> = order[start..start + size].iter().map(|&i| records[i].clone()).collect();
        start += size;
        let fakes = part.iter().filter(|r| r.label.is_fake()).count();
        if fakes == 0 || fakes == part.len() {
            return Err(Error::SingleLabel(format!("partition {k} holds a single label")));
        }
        parts.push(part);
    }
    Ok(parts)
}
