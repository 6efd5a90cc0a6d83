//! Central finite-difference checks of every analytic gradient.
//!
//! The error of one entry is `|analytic - numeric| / max(|analytic|,
//! |numeric|, GRADCHECK_FLOOR)`; the floor keeps entries that are zero
//! analytically from turning rounding noise into large ratios.

use serde::{Deserialize, Serialize};

use crate::encoders::{DropoutMask, LinearHead, LowRankAdapter, MlpEncoder, StudentEncoder};
use crate::error::Result;
use crate::grad::{bce_with_logits, bce_with_logits_grad, feature_grad, Label};
use crate::numerics::{dot, gaussian_vec, Mat64, Rng, Vec64};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_FLOOR: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckResult {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
}

impl GradcheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= GRADCHECK_TOLERANCE
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

pub fn central_difference(f: impl Fn(f64) -> f64, at: f64, h: f64) -> f64 {
    (f(at + h) - f(at - h)) / (2.0 * h)
}

#[derive(Default)]
struct Tally {
    entries: usize,
    max: f64,
}

impl Tally {
    fn add(&mut self, analytic: f64, numeric: f64) {
        self.entries += 1;
        self.max = self.max.max(rel_err(analytic, numeric));
    }

    fn finish(self, name: &str) -> GradcheckResult {
        GradcheckResult {
            name: name.to_string(),
            entries: self.entries,
            max_rel_err: self.max,
        }
    }
}

fn random_label(rng: &mut Rng) -> Label {
    if rng.bernoulli(0.5) {
        Label::Fake
    } else {
        Label::Real
    }
}

fn perturbed(v: &Vec64, j: usize, delta: f64) -> Vec64 {
    let mut out = v.clone().into_inner();
    out[j] += delta;
    Vec64::new(out).expect("finite perturbation")
}

fn check_bce(rng: &mut Rng, trials: usize) -> GradcheckResult {
    let mut t = Tally::default();
    for _ in 0..trials {
        let z = rng.normal(0.0, 3.0);
        let y = random_label(rng);
        t.add(bce_with_logits_grad(z, y), central_difference(|z| bce_with_logits(z, y), z, GRADCHECK_STEP));
    }
    t.finish("bce_with_logits_grad")
}

fn random_head(rng: &mut Rng, dim: usize) -> Result<LinearHead> {
    LinearHead::new(gaussian_vec(rng, dim, 0.0, 0.5)?, rng.normal(0.0, 0.5))
}

fn check_feature_grad(rng: &mut Rng, trials: usize, dim: usize) -> Result<GradcheckResult> {
    let mut t = Tally::default();
    for _ in 0..trials {
        let head = random_head(rng, dim)?;
        let f = gaussian_vec(rng, dim, 0.0, 1.0)?;
        let y = random_label(rng);
        let g = feature_grad(&head, &f, y)?;
        let loss = |f: &Vec64| bce_with_logits(head.logit(f).expect("dims"), y);
        for j in 0..dim {
            let h = GRADCHECK_STEP;
            let num = (loss(&perturbed(&f, j, h)) - loss(&perturbed(&f, j, -h))) / (2.0 * h);
            t.add(g[j], num);
        }
    }
    Ok(t.finish("feature_grad"))
}

fn check_head_grad(rng: &mut Rng, trials: usize, dim: usize) -> Result<GradcheckResult> {
    let mut t = Tally::default();
    for _ in 0..trials {
        let head = random_head(rng, dim)?;
        let f = gaussian_vec(rng, dim, 0.0, 1.0)?;
        let y = random_label(rng);
        let (gw, gb) = head.grad(&f, y)?;
        let loss = |w: &Vec64, b: f64| bce_with_logits(LinearHead::new(w.clone(), b).expect("finite").logit(&f).expect("dims"), y);
        let h = GRADCHECK_STEP;
        for j in 0..dim {
            let num = (loss(&perturbed(head.w(), j, h), head.b()) - loss(&perturbed(head.w(), j, -h), head.b())) / (2.0 * h);
            t.add(gw[j], num);
        }
        t.add(gb, central_difference(|b| loss(head.w(), b), head.b(), h));
    }
    Ok(t.finish("head_grad"))
}

/// Student on a two-layer tanh base with a nonzero `B`, so both adapter
/// blocks carry signal.
pub fn random_student(rng: &mut Rng, dims: &[usize], rank: usize, dropout: f64) -> Result<StudentEncoder> {
    let base = MlpEncoder::random(rng, dims)?;
    let d = base.output_dim();
    let a = Mat64::from_fn(rank, d, |_, _| rng.normal(0.0, 1.0 / (d as f64).sqrt()))?;
    let b = Mat64::from_fn(d, rank, |_, _| rng.normal(0.0, 0.5))?;
    StudentEncoder::new(base, LowRankAdapter::new(a, b, 2.0 * rank as f64, dropout)?)
}

fn check_vjp(rng: &mut Rng, trials: usize) -> Result<GradcheckResult> {
    let mut t = Tally::default();
    for _ in 0..trials {
        let student = random_student(rng, &[8, 12, 10], 3, 0.5)?;
        let d = student.feature_dim();
        let x = gaussian_vec(rng, 8, 0.0, 1.0)?;
        let v = gaussian_vec(rng, d, 0.0, 1.0)?;
        let mask = DropoutMask::draw(rng, d, 0.5);
        let grad = student.vjp_adapter(&x, &v, true, Some(&mask))?;
        let base = student.base().forward(&x)?;
        let ad = student.adapter();
        let objective = |a: &Mat64, b: &Mat64| -> f64 {
            let adapter = LowRankAdapter::new(a.clone(), b.clone(), ad.alpha(), ad.dropout_rate()).expect("finite");
            let s = StudentEncoder::new(student.base().clone(), adapter).expect("shapes");
            let pass = s.forward_from_base(base.clone(), Some(mask.clone())).expect("shapes");
            dot(&pass.feature, &v).expect("dims")
        };
        let h = GRADCHECK_STEP;
        let nudge = |m: &Mat64, i: usize, delta: f64| {
            let mut vals = m.as_slice().to_vec();
            vals[i] += delta;
            Mat64::new(m.rows(), m.cols(), vals).expect("finite")
        };
        for i in 0..ad.a().as_slice().len() {
            let num = (objective(&nudge(ad.a(), i, h), ad.b()) - objective(&nudge(ad.a(), i, -h), ad.b())) / (2.0 * h);
            t.add(grad.a.as_slice()[i], num);
        }
        for i in 0..ad.b().as_slice().len() {
            let num = (objective(ad.a(), &nudge(ad.b(), i, h)) - objective(ad.a(), &nudge(ad.b(), i, -h))) / (2.0 * h);
            t.add(grad.b.as_slice()[i], num);
        }
    }
    Ok(t.finish("vjp_adapter"))
}

/// Runs every check; dims stay at or below 16.
pub fn run_suite(seed: u64) -> Result<Vec<GradcheckResult>> {
    let mut rng = Rng::new(seed);
    Ok(vec![
        check_bce(&mut rng, 200),
        check_feature_grad(&mut rng, 50, 16)?,
        check_head_grad(&mut rng, 50, 16)?,
        check_vjp(&mut rng, 10)?,
    ])
}
