//! Detection metrics, prior-preservation metrics and plot exports.
//!
//! Decisions use a logit threshold of 0; a logit exactly at the threshold
//! predicts real. Average precision breaks score ties by input order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::FeatureRecord;
use crate::error::{Error, Result};
use crate::grad::Label;
use crate::numerics::{dot_slices, norm_slice, Vec64};
use crate::trainer::fit_logistic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    /// R.Acc; NaN-free, 0 when no real samples.
    pub real: f64,
    /// F.Acc; 0 when no fake samples.
    pub fake: f64,
    pub overall: f64,
    pub n_real: usize,
    pub n_fake: usize,
}

pub fn accuracy(logits: &[f64], labels: &[Label], threshold: f64) -> Result<Accuracy> {
    if logits.is_empty() {
        return Err(Error::NoRecords);
    }
    crate::error::check_dims(logits.len(), labels.len())?;
    let (mut n_real, mut n_fake, mut ok_real, mut ok_fake) = (0, 0, 0, 0);
    for (&z, &y) in logits.iter().zip(labels) {
        let predicted_fake = z > threshold;
        if y.is_fake() {
            n_fake += 1;
            ok_fake += predicted_fake as usize;
        } else {
            n_real += 1;
            ok_real += (!predicted_fake) as usize;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Accuracy {
        real: ratio(ok_real, n_real),
        fake: ratio(ok_fake, n_fake),
        overall: ratio(ok_real + ok_fake, n_real + n_fake),
        n_real,
        n_fake,
    })
}

/// Sum over ranks of precision times recall increment, scores descending.
pub fn average_precision(scores: &[f64], labels: &[Label]) -> Result<f64> {
    crate::error::check_dims(scores.len(), labels.len())?;
    let positives = labels.iter().filter(|l| l.is_fake()).count();
    if positives == 0 {
        return Err(Error::field("labels", "average precision needs a positive sample"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps input order among equal scores.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i].is_fake() {
            hits += 1;
            ap += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(ap / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy_real: f64,
    pub accuracy_fake: f64,
    pub accuracy_overall: f64,
    pub average_precision: f64,
    /// Overall accuracy per domain tag.
    pub per_domain: BTreeMap<String, f64>,
    /// Unweighted mean of the per-domain accuracies.
    pub mean_domain_accuracy: f64,
    pub n: usize,
}

pub fn evaluate(logits: &[f64], records: &[FeatureRecord]) -> Result<EvalReport> {
    crate::error::check_dims(logits.len(), records.len())?;
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let acc = accuracy(logits, &labels, 0.0)?;
    let ap = average_precision(logits, &labels)?;
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<Label>)> = BTreeMap::new();
    for (z, r) in logits.iter().zip(records) {
        let g = groups.entry(r.domain.clone()).or_default();
        g.0.push(*z);
        g.1.push(r.label);
    }
    let mut per_domain = BTreeMap::new();
    for (domain, (z, y)) in &groups {
        per_domain.insert(domain.clone(), accuracy(z, y, 0.0)?.overall);
    }
    let mean_domain_accuracy = per_domain.values().sum::<f64>() / per_domain.len() as f64;
    Ok(EvalReport {
        accuracy_real: acc.real,
        accuracy_fake: acc.fake,
        accuracy_overall: acc.overall,
        average_precision: ap,
        per_domain,
        mean_domain_accuracy,
        n: records.len(),
    })
}

/// Mean of `1 - cos(f_i, f^T_i)`; a pair with a zero vector contributes 1.
pub fn prior_drift(student: &[Vec64], teacher: &[Vec64]) -> Result<f64> {
    crate::error::check_dims(student.len(), teacher.len())?;
    if student.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut total = 0.0;
    for (s, t) in student.iter().zip(teacher) {
        crate::error::check_dims(s.dim(), t.dim())?;
        let (ss, tt) = (dot_slices(s.as_slice(), s.as_slice()), dot_slices(t.as_slice(), t.as_slice()));
        total += if ss == 0.0 || tt == 0.0 {
            1.0
        } else {
            // sqrt(q * q) == q, so identical vectors give exactly zero.
            (1.0 - dot_slices(s.as_slice(), t.as_slice()) / (ss * tt).sqrt()).clamp(0.0, 2.0)
        };
    }
    Ok(total / student.len() as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest neighbours of every point, self excluded,
/// ties broken by lower index.
pub fn knn_indices(points: &[Vec64], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = points.len();
    if k == 0 || n <= k {
        return Err(Error::field("k", format!("need 1 <= k < n, got k={k}, n={n}")));
    }
    let mut out = Vec::with_capacity(n);
    let mut dist = vec![(0.0, 0usize); n - 1];
    for i in 0..n {
        let mut m = 0;
        for j in 0..n {
            if j != i {
                dist[m] = (sq_dist(points[i].as_slice(), points[j].as_slice()), j);
                m += 1;
            }
        }
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut nn: Vec<usize> = dist[..k].iter().map(|p| p.1).collect();
        nn.sort_unstable();
        out.push(nn);
    }
    Ok(out)
}

/// Mean fraction of shared k-nearest neighbours between the two spaces.
pub fn knn_overlap(student: &[Vec64], teacher: &[Vec64], k: usize) -> Result<f64> {
    crate::error::check_dims(student.len(), teacher.len())?;
    let a = knn_indices(student, k)?;
    let b = knn_indices(teacher, k)?;
    let mut total = 0usize;
    for (x, y) in a.iter().zip(&b) {
        // Both lists are sorted.
        let (mut i, mut j) = (0, 0);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    total += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    Ok(total as f64 / (k * student.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub mean_cosine_distance: f64,
    pub knn_overlap: f64,
    pub k: usize,
}

pub fn drift_report(student: &[Vec64], teacher: &[Vec64], k: usize) -> Result<DriftReport> {
    Ok(DriftReport {
        mean_cosine_distance: prior_drift(student, teacher)?,
        knn_overlap: knn_overlap(student, teacher, k)?,
        k,
    })
}

/// Steps and learning rate shared with the teacher-head fit.
pub const PROBE_STEPS: usize = 500;
pub const PROBE_LR: f64 = 0.1;

/// Accuracy on `test` of a logistic head fit on `t_sem` of `train` alone.
pub fn text_only_probe(train: &[FeatureRecord], test: &[FeatureRecord]) -> Result<f64> {
    let feats: Vec<Vec64> = train.iter().map(|r| r.t_sem.clone()).collect();
    let labels: Vec<Label> = train.iter().map(|r| r.label).collect();
    let (head, _) = fit_logistic(&feats, &labels, PROBE_STEPS, PROBE_LR)?;
    let logits = test.iter().map(|r| head.logit(&r.t_sem)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<Label> = test.iter().map(|r| r.label).collect();
    Ok(accuracy(&logits, &labels, 0.0)?.overall)
}

pub const POWER_TOLERANCE: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2d {
    /// `(pc1, pc2)` per point, after centering.
    pub coords: Vec<[f64; 2]>,
    pub components: [Vec<f64>; 2],
    /// Eigenvalues of the covariance for the two components.
    pub explained: [f64; 2],
    /// Trace of the covariance.
    pub total_variance: f64,
}

/// Top-2 principal components by power iteration with deflation. Each
/// iteration stops once successive unit vectors differ by at most
/// [`POWER_TOLERANCE`] up to sign.
pub fn principal_components_2d(feats: &[Vec64]) -> Result<Projection2d> {
    let n = feats.len();
    if n < 3 {
        return Err(Error::field("feats", format!("need at least 3 points, got {n}")));
    }
    let d = feats[0].dim();
    let mut mean = vec![0.0; d];
    for f in feats {
        crate::error::check_dims(f.dim(), d)?;
        for (m, v) in mean.iter_mut().zip(f.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = feats
        .iter()
        .map(|f| f.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for c in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += c[i] * c[j];
            }
        }
    }
    cov.iter_mut().for_each(|v| *v /= n as f64);
    let total_variance = (0..d).map(|i| cov[i * d + i]).sum();

    let mut components: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0; 2];
    for c in 0..2 {
        let (vec, val) = power_iteration(&cov, d, &components[..c], total_variance);
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= val * vec[i] * vec[j];
            }
        }
        components[c] = vec;
        explained[c] = val.max(0.0);
    }
    let coords = centered
        .iter()
        .map(|c| [dot_slices(c, &components[0]), dot_slices(c, &components[1])])
        .collect();
    Ok(Projection2d {
        coords,
        components,
        explained,
        total_variance,
    })
}

/// Two Gram-Schmidt passes; one is not enough once `v` is rounding noise.
fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for _ in 0..2 {
        for u in against {
            let c = dot_slices(v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
    }
}

/// Dominant eigenpair of the symmetric `m`, kept orthogonal to `against`.
/// Directions whose image is below `1e-12 · scale` count as eigenvalue 0.
fn power_iteration(m: &[f64], d: usize, against: &[Vec<f64>], scale: f64) -> (Vec<f64>, f64) {
    let negligible = 1e-12 * scale;
    // Deterministic start that is not orthogonal to typical data.
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + ((i + against.len()) % 7) as f64 * 0.1).collect();
    orthogonalize(&mut v, against);
    let norm = norm_slice(&v);
    if norm == 0.0 {
        return (v, 0.0);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    for _ in 0..POWER_MAX_ITERS {
        let mut w: Vec<f64> = (0..d).map(|i| dot_slices(&m[i * d..(i + 1) * d], &v)).collect();
        orthogonalize(&mut w, against);
        let norm = norm_slice(&w);
        if norm <= negligible {
            return (v, 0.0);
        }
        w.iter_mut().for_each(|x| *x /= norm);
        let sign = if dot_slices(&w, &v) < 0.0 { -1.0 } else { 1.0 };
        let delta = w.iter().zip(&v).map(|(a, b)| (a - sign * b).abs()).fold(0.0, f64::max);
        v = w;
        if delta <= POWER_TOLERANCE {
            break;
        }
    }
    let mv: Vec<f64> = (0..d).map(|i| dot_slices(&m[i * d..(i + 1) * d], &v)).collect();
    let val = dot_slices(&v, &mv);
    (v, val)
}

/// Writes `id,label,domain,pc1,pc2` rows for the projection of `feats`.
pub fn export_projection_2d(feats: &[Vec64], records: &[FeatureRecord], path: &Path) -> Result<Projection2d> {
    crate::error::check_dims(feats.len(), records.len())?;
    let proj = principal_components_2d(feats)?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "id,label,domain,pc1,pc2")?;
    for (r, c) in records.iter().zip(&proj.coords) {
        writeln!(w, "{},{},{},{},{}", r.id, i64::from(r.label), r.domain, c[0], c[1])?;
    }
    w.flush()?;
    Ok(proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_vec, Rng};

    fn labels(bits: &[u8]) -> Vec<Label> {
        bits.iter().map(|&b| if b == 1 { Label::Fake } else { Label::Real }).collect()
    }

    #[test]
    fn accuracy_examples() {
        let acc = accuracy(&[10.0; 4], &labels(&[1, 1, 1, 1]), 0.0).unwrap();
        assert_eq!(acc.fake, 1.0);
        assert_eq!(acc.overall, 1.0);
        let acc = accuracy(&[0.0, 0.0], &labels(&[0, 1]), 0.0).unwrap();
        assert_eq!((acc.real, acc.fake), (1.0, 0.0));
        assert!(accuracy(&[], &[], 0.0).is_err());
    }

    #[test]
    fn accuracy_matches_counting() {
        let mut rng = Rng::new(5);
        let z: Vec<f64> = (0..500).map(|_| rng.normal(0.0, 1.0)).collect();
        let y: Vec<Label> = (0..500).map(|_| if rng.bernoulli(0.4) { Label::Fake } else { Label::Real }).collect();
        let acc = accuracy(&z, &y, 0.0).unwrap();
        let correct = z.iter().zip(&y).filter(|(z, y)| (**z > 0.0) == y.is_fake()).count();
        assert_eq!(acc.overall, correct as f64 / 500.0);
        let fakes = y.iter().filter(|l| l.is_fake()).count();
        let fake_hits = z.iter().zip(&y).filter(|(z, y)| y.is_fake() && **z > 0.0).count();
        assert_eq!(acc.fake, fake_hits as f64 / fakes as f64);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[3.0, 2.0, 1.0], &labels(&[1, 1, 0])).unwrap(), 1.0);
        assert_eq!(average_precision(&[3.0, 2.0, 1.0], &labels(&[0, 1, 0])).unwrap(), 0.5);
        // Equal scores: stable order is the ranking.
        let ap = average_precision(&[1.0; 4], &labels(&[0, 1, 0, 1])).unwrap();
        assert!((ap - (0.5 + 0.5) / 2.0).abs() < 1e-15);
        assert!(average_precision(&[1.0, 2.0], &labels(&[0, 0])).is_err());
    }

    #[test]
    fn drift_examples() {
        let a = vec![Vec64::new(vec![1.0, 2.0]).unwrap(), Vec64::new(vec![-3.0, 0.5]).unwrap()];
        assert_eq!(prior_drift(&a, &a).unwrap(), 0.0);
        let neg: Vec<Vec64> = a.iter().map(|v| v.scaled(-1.0)).collect();
        assert!((prior_drift(&a, &neg).unwrap() - 2.0).abs() < 1e-15);
        let z = vec![Vec64::zeros(2), a[1].clone()];
        assert!((prior_drift(&z, &a).unwrap() - 0.5).abs() < 1e-15);
        assert!(prior_drift(&a, &a[..1]).is_err());
    }

    #[test]
    fn knn_identity_and_null_model() {
        let mut rng = Rng::new(3);
        let x: Vec<Vec64> = (0..200).map(|_| gaussian_vec(&mut rng, 4, 0.0, 1.0).unwrap()).collect();
        assert_eq!(knn_overlap(&x, &x, 10).unwrap(), 1.0);
        let y: Vec<Vec64> = (0..200).map(|_| gaussian_vec(&mut rng, 4, 0.0, 1.0).unwrap()).collect();
        let o = knn_overlap(&x, &y, 10).unwrap();
        assert!((o - 10.0 / 199.0).abs() <= 0.03, "{o}");
        assert!(knn_overlap(&x[..10], &y[..10], 10).is_err());
    }

    #[test]
    fn pca_line_and_errors() {
        let line: Vec<Vec64> = (0..20)
            .map(|i| Vec64::new(vec![i as f64, 2.0 * i as f64, -(i as f64)]).unwrap())
            .collect();
        let p = principal_components_2d(&line).unwrap();
        assert!(p.coords.iter().all(|c| c[1].abs() <= 1e-8), "{:?} {:?}", p.components, &p.coords[..3]);
        assert!(principal_components_2d(&line[..2]).is_err());
    }
}
