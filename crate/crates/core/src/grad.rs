//! Branch losses, feature gradients and the surgery that rewrites the
//! gradient reaching the student feature.
//!
//! The harmful direction is the positive half-space of the semantic-branch
//! gradient. The task gradient is projected onto its orthogonal complement.
//! The beneficial direction is the negative half-space of the frozen
//! teacher's gradient and is added back scaled by `lambda`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::LinearHead;
use crate::error::{check_dims, Error, Result};
use crate::numerics::{dot, dot_slices, l2_norm, softplus, stable_sigmoid, Vec64};

/// Binary label. `Fake` (1) is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }
}

impl TryFrom<i64> for Label {
    type Error = Error;

    fn try_from(v: i64) -> Result<Self> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(Error::InvalidLabel(other)),
        }
    }
}

impl From<Label> for i64 {
    fn from(l: Label) -> i64 {
        l as i64
    }
}

/// Binary cross-entropy on a logit: `softplus(z) - y·z`.
pub fn bce_with_logits(logit: f64, label: Label) -> f64 {
    softplus(logit) - label.as_f64() * logit
}

/// Derivative of [`bce_with_logits`] with respect to the logit: `σ(z) - y`.
pub fn bce_with_logits_grad(logit: f64, label: Label) -> f64 {
    stable_sigmoid(logit) - label.as_f64()
}

/// Gradient of the head's loss with respect to the feature it reads:
/// `(σ(w·f + b) - y) · w`.
pub fn feature_grad(head: &LinearHead, f: &Vec64, label: Label) -> Result<Vec64> {
    let logit = head.logit(f)?;
    Ok(head.w().scaled(bce_with_logits_grad(logit, label)))
}

/// `max(g_j, 0)` elementwise.
pub fn positive_part(g: &Vec64) -> Vec64 {
    Vec64::from_raw(g.iter().map(|&v| v.max(0.0)).collect())
}

/// `min(g_j, 0)` elementwise.
pub fn negative_part(g: &Vec64) -> Vec64 {
    Vec64::from_raw(g.iter().map(|&v| v.min(0.0)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpaceDecomposition {
    pub positive: Vec64,
    pub negative: Vec64,
}

impl HalfSpaceDecomposition {
    pub fn of(g: &Vec64) -> Self {
        HalfSpaceDecomposition {
            positive: positive_part(g),
            negative: negative_part(g),
        }
    }
}

/// Coordinates where a positive step raises the semantic-branch loss.
pub fn harmful_direction(g_text: &Vec64) -> Vec64 {
    positive_part(g_text)
}

/// Coordinates where a positive step lowers the teacher-branch loss.
pub fn beneficial_direction(g_img: &Vec64) -> Vec64 {
    negative_part(g_img)
}

pub const DEFAULT_EPS_NORM: f64 = 1e-12;

/// Minimum-deviation projection of `g_task` onto the hyperplane orthogonal
/// to `g_harm`: `g_task - (g_task·ĥ)ĥ` with `ĥ = g_harm / ‖g_harm‖`.
///
/// When `‖g_harm‖ <= eps` the constraint is vacuous; `g_task` is returned
/// unchanged and the second element is `true`.
pub fn orthogonal_suppress(g_task: &Vec64, g_harm: &Vec64, eps: f64) -> Result<(Vec64, bool)> {
    check_dims(g_task.dim(), g_harm.dim())?;
    let norm = l2_norm(g_harm);
    if norm <= eps {
        return Ok((g_task.clone(), true));
    }
    let unit: Vec<f64> = g_harm.iter().map(|v| v / norm).collect();
    let coef = dot_slices(g_task.as_slice(), &unit);
    let projected = g_task
        .iter()
        .zip(&unit)
        .map(|(g, u)| g - coef * u)
        .collect();
    Ok((Vec64::from_raw(projected), false))
}

/// Linear alignment term `⟨f, g_help⟩`. `g_help` is a constant here, so the
/// gradient with respect to `f` is `g_help` itself.
pub fn align_loss(f: &Vec64, g_help: &Vec64) -> Result<f64> {
    dot(f, g_help)
}

pub fn align_loss_grad(f: &Vec64, g_help: &Vec64) -> Result<Vec64> {
    check_dims(f.dim(), g_help.dim())?;
    Ok(g_help.clone())
}

/// `g_tilde + lambda · g_help`.
pub fn assemble_final_grad(g_tilde: &Vec64, g_help: &Vec64, lambda: f64) -> Result<Vec64> {
    check_dims(g_tilde.dim(), g_help.dim())?;
    if !(lambda >= 0.0) {
        return Err(Error::field("lambda", "must be non-negative"));
    }
    Ok(Vec64::from_raw(
        g_tilde
            .iter()
            .zip(g_help.iter())
            .map(|(t, h)| t + lambda * h)
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    pub fn of(v: f64) -> Sign {
        if v > 0.0 {
            Sign::Positive
        } else if v < 0.0 {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }
}

/// Default probe step `1e-4 · (1 + ‖u‖)`.
pub fn default_probe_step(u: &Vec64) -> f64 {
    1e-4 * (1.0 + l2_norm(u))
}

/// Sign of `loss(u + ε·e_j) - loss(u)`. A positive result marks coordinate
/// `j` as harmful at `u`.
pub fn directional_probe(loss: impl Fn(&Vec64) -> f64, u: &Vec64, j: usize, epsilon: f64) -> Sign {
    let mut shifted = u.clone().into_inner();
    shifted[j] += epsilon;
    let shifted = Vec64::from_raw(shifted);
    Sign::of(loss(&shifted) - loss(u))
}

/// Per-sample feature gradients of the three branches.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTriple {
    /// Student image branch, w.r.t. the student feature `f`.
    pub g_task: Vec64,
    /// Semantic branch, w.r.t. the semantic feature `t`.
    pub g_text: Vec64,
    /// Frozen teacher branch, w.r.t. the teacher feature.
    pub g_img: Vec64,
}

impl GradientTriple {
    pub fn new(g_task: Vec64, g_text: Vec64, g_img: Vec64) -> Result<Self> {
        check_dims(g_task.dim(), g_text.dim())?;
        check_dims(g_task.dim(), g_img.dim())?;
        Ok(GradientTriple { g_task, g_text, g_img })
    }

    pub fn dim(&self) -> usize {
        self.g_task.dim()
    }
}

/// How the feature gradient is rewritten before it reaches the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurgeryMode {
    /// Plain backprop of the image loss.
    Baseline,
    /// Projection only.
    SuppressOnly,
    /// Alignment injection only.
    AlignOnly,
    /// Projection and alignment.
    Full,
    /// Full, with the whole semantic gradient treated as harmful.
    FullTextGrad,
    /// Full, with the whole teacher gradient treated as beneficial.
    FullImgGrad,
}

impl SurgeryMode {
    pub const ALL: [SurgeryMode; 6] = [
        SurgeryMode::Baseline,
        SurgeryMode::SuppressOnly,
        SurgeryMode::AlignOnly,
        SurgeryMode::Full,
        SurgeryMode::FullTextGrad,
        SurgeryMode::FullImgGrad,
    ];

    pub fn projects(self) -> bool {
        !matches!(self, SurgeryMode::Baseline | SurgeryMode::AlignOnly)
    }

    pub fn aligns(self) -> bool {
        !matches!(self, SurgeryMode::Baseline | SurgeryMode::SuppressOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            SurgeryMode::Baseline => "baseline",
            SurgeryMode::SuppressOnly => "suppress_only",
            SurgeryMode::AlignOnly => "align_only",
            SurgeryMode::Full => "full",
            SurgeryMode::FullTextGrad => "full_text_grad",
            SurgeryMode::FullImgGrad => "full_img_grad",
        }
    }
}

impl fmt::Display for SurgeryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SurgeryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SurgeryMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::field("mode", format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurgeryOutput {
    pub g_tilde: Vec64,
    pub g_harm: Vec64,
    pub g_help: Vec64,
    pub g_final: Vec64,
    /// The mode projects but `‖g_harm‖` fell under the threshold.
    pub projection_skipped: bool,
}

impl SurgeryOutput {
    /// `|⟨g_tilde, g_harm⟩| / (‖g_task‖·‖g_harm‖)`, zero when either norm is.
    pub fn orthogonality_residual(&self, g_task: &Vec64) -> f64 {
        let scale = l2_norm(g_task) * l2_norm(&self.g_harm);
        if scale == 0.0 {
            return 0.0;
        }
        dot_slices(self.g_tilde.as_slice(), self.g_harm.as_slice()).abs() / scale
    }
}

/// Rewrites one sample's feature gradient according to `mode`.
pub fn apply_surgery(
    triple: &GradientTriple,
    mode: SurgeryMode,
    lambda: f64,
    eps: f64,
) -> Result<SurgeryOutput> {
    let g_harm = match mode {
        SurgeryMode::FullTextGrad => triple.g_text.clone(),
        _ => harmful_direction(&triple.g_text),
    };
    let g_help = match mode {
        SurgeryMode::FullImgGrad => triple.g_img.clone(),
        _ => beneficial_direction(&triple.g_img),
    };
    let (g_tilde, projection_skipped) = if mode.projects() {
        orthogonal_suppress(&triple.g_task, &g_harm, eps)?
    } else {
        (triple.g_task.clone(), false)
    };
    let g_final = if mode.aligns() {
        assemble_final_grad(&g_tilde, &g_help, lambda)?
    } else {
        g_tilde.clone()
    };
    Ok(SurgeryOutput {
        g_tilde,
        g_harm,
        g_help,
        g_final,
        projection_skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_vec, Rng};

    fn v(values: &[f64]) -> Vec64 {
        Vec64::new(values.to_vec()).unwrap()
    }

    #[test]
    fn bce_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_with_logits(0.0, Label::Fake) - ln2).abs() < 1e-15);
        assert!((bce_with_logits(0.0, Label::Real) - ln2).abs() < 1e-15);
        let saturated = bce_with_logits(100.0, Label::Fake);
        assert!(saturated >= 0.0 && saturated < 1e-43);
        assert!(bce_with_logits(-800.0, Label::Fake).is_finite());
        assert_eq!(bce_with_logits_grad(0.0, Label::Fake), -0.5);
        assert_eq!(bce_with_logits_grad(0.0, Label::Real), 0.5);
    }

    #[test]
    fn label_parsing() {
        assert_eq!(Label::try_from(1).unwrap(), Label::Fake);
        assert!(matches!(Label::try_from(2), Err(Error::InvalidLabel(2))));
        assert!(matches!(Label::try_from(-1), Err(Error::InvalidLabel(-1))));
    }

    #[test]
    fn bce_grad_matches_central_difference() {
        let mut rng = Rng::new(17);
        let h = 1e-5;
        for _ in 0..500 {
            let z = rng.normal(0.0, 4.0);
            for label in [Label::Real, Label::Fake] {
                let fd = (bce_with_logits(z + h, label) - bce_with_logits(z - h, label)) / (2.0 * h);
                assert!((fd - bce_with_logits_grad(z, label)).abs() <= 1e-7);
                assert!(bce_with_logits(z, label) >= 0.0);
                assert!(bce_with_logits_grad(z, label).abs() < 1.0);
            }
        }
    }

    #[test]
    fn feature_grad_on_orthogonal_feature() {
        let head = LinearHead::new(Vec64::basis(3, 0), 0.0).unwrap();
        let f = v(&[0.0, 1.0, -2.0]);
        assert_eq!(feature_grad(&head, &f, Label::Fake).unwrap(), v(&[-0.5, 0.0, 0.0]));
        let mismatch = feature_grad(&head, &v(&[1.0]), Label::Fake);
        assert!(matches!(mismatch, Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn feature_grad_never_vanishes_for_hard_labels() {
        let mut rng = Rng::new(4);
        let head = LinearHead::new(gaussian_vec(&mut rng, 6, 0.0, 1.0).unwrap(), 0.3).unwrap();
        for _ in 0..100 {
            let f = gaussian_vec(&mut rng, 6, 0.0, 3.0).unwrap();
            for label in [Label::Real, Label::Fake] {
                let logit = head.logit(&f).unwrap();
                assert!(bce_with_logits_grad(logit, label) != 0.0);
            }
        }
    }

    #[test]
    fn half_space_examples() {
        let g = v(&[0.5, -0.2, 0.0]);
        assert_eq!(positive_part(&g), v(&[0.5, 0.0, 0.0]));
        assert_eq!(negative_part(&g), v(&[0.0, -0.2, 0.0]));
        assert!(positive_part(&v(&[-1.0, -2.0])).is_zero());
        assert!(negative_part(&v(&[1.0, 2.0])).is_zero());
        assert_eq!(harmful_direction(&v(&[0.3, -0.1])), v(&[0.3, 0.0]));
        assert_eq!(beneficial_direction(&v(&[0.3, -0.1])), v(&[0.0, -0.1]));
        assert!(harmful_direction(&v(&[-0.3, -0.1])).is_zero());
        assert!(beneficial_direction(&v(&[0.3, 0.1])).is_zero());
    }

    #[test]
    fn directions_match_definitions() {
        let mut rng = Rng::new(8);
        for _ in 0..1000 {
            let g = gaussian_vec(&mut rng, 7, 0.0, 1.0).unwrap();
            assert_eq!(harmful_direction(&g), positive_part(&g));
            assert_eq!(beneficial_direction(&g), negative_part(&g));
            assert_eq!(negative_part(&g.scaled(-1.0)), positive_part(&g).scaled(-1.0));
        }
    }

    #[test]
    fn projection_examples() {
        let (r, skipped) = orthogonal_suppress(&v(&[3.0, 4.0]), &v(&[1.0, 0.0]), DEFAULT_EPS_NORM).unwrap();
        assert_eq!(r, v(&[0.0, 4.0]));
        assert!(!skipped);
        let (r, skipped) = orthogonal_suppress(&v(&[3.0, 4.0]), &v(&[0.0, 0.0]), DEFAULT_EPS_NORM).unwrap();
        assert_eq!(r, v(&[3.0, 4.0]));
        assert!(skipped);
        assert!(orthogonal_suppress(&v(&[1.0]), &v(&[1.0, 0.0]), 1e-12).is_err());
    }

    #[test]
    fn align_examples() {
        assert_eq!(align_loss(&v(&[1.0, 2.0]), &v(&[-0.5, 0.0])).unwrap(), -0.5);
        assert_eq!(align_loss(&v(&[7.0, -3.0]), &v(&[0.0, 0.0])).unwrap(), 0.0);
        let mut rng = Rng::new(12);
        let h = 1e-5;
        for _ in 0..50 {
            let f = gaussian_vec(&mut rng, 5, 0.0, 1.0).unwrap();
            let help = negative_part(&gaussian_vec(&mut rng, 5, 0.0, 1.0).unwrap());
            let grad = align_loss_grad(&f, &help).unwrap();
            assert_eq!(grad, help);
            for j in 0..5 {
                let mut up = f.clone().into_inner();
                let mut dn = f.clone().into_inner();
                up[j] += h;
                dn[j] -= h;
                let fd = (align_loss(&v(&up), &help).unwrap() - align_loss(&v(&dn), &help).unwrap()) / (2.0 * h);
                assert!((fd - grad[j]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn final_grad_examples() {
        let out = assemble_final_grad(&v(&[0.0, 4.0]), &v(&[-1.0, 0.0]), 0.2).unwrap();
        assert_eq!(out, v(&[-0.2, 4.0]));
        let same = assemble_final_grad(&v(&[1.5, -2.0]), &v(&[-1.0, 0.0]), 0.0).unwrap();
        assert_eq!(same, v(&[1.5, -2.0]));
        assert!(assemble_final_grad(&v(&[1.0]), &v(&[1.0]), -0.1).is_err());

        let mut rng = Rng::new(21);
        for _ in 0..200 {
            let t = gaussian_vec(&mut rng, 6, 0.0, 1.0).unwrap();
            let h = gaussian_vec(&mut rng, 6, 0.0, 1.0).unwrap();
            let lambda = rng.uniform();
            let out = assemble_final_grad(&t, &h, lambda).unwrap();
            for j in 0..6 {
                assert!(((out[j] - t[j]) - lambda * h[j]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn probe_on_quadratic() {
        let quad = |u: &Vec64| 0.5 * dot(u, u).unwrap();
        let u = v(&[2.0, -1.0, 0.0]);
        let eps = default_probe_step(&u);
        assert_eq!(directional_probe(quad, &u, 0, eps), Sign::Positive);
        assert_eq!(directional_probe(quad, &u, 1, eps), Sign::Negative);
        // Zero gradient: only the ε²/2 term survives.
        assert_eq!(directional_probe(quad, &u, 2, eps), Sign::Positive);
    }

    #[test]
    fn surgery_mode_table() {
        let triple = GradientTriple::new(v(&[3.0, 4.0]), v(&[1.0, -2.0]), v(&[-1.0, 0.5])).unwrap();
        let base = apply_surgery(&triple, SurgeryMode::Baseline, 0.2, 1e-12).unwrap();
        assert_eq!(base.g_final, triple.g_task);
        let sup = apply_surgery(&triple, SurgeryMode::SuppressOnly, 0.2, 1e-12).unwrap();
        assert_eq!(sup.g_final, v(&[0.0, 4.0]));
        let align = apply_surgery(&triple, SurgeryMode::AlignOnly, 0.2, 1e-12).unwrap();
        assert_eq!(align.g_final, v(&[3.0 - 0.2, 4.0]));
        let full = apply_surgery(&triple, SurgeryMode::Full, 0.2, 1e-12).unwrap();
        assert_eq!(full.g_final, v(&[-0.2, 4.0]));
        let text = apply_surgery(&triple, SurgeryMode::FullTextGrad, 0.0, 1e-12).unwrap();
        assert_eq!(text.g_harm, triple.g_text);
        let img = apply_surgery(&triple, SurgeryMode::FullImgGrad, 1.0, 1e-12).unwrap();
        assert_eq!(img.g_help, triple.g_img);
        assert_eq!(img.g_final, v(&[-1.0, 4.5]));
    }

    #[test]
    fn degenerate_composition_returns_task_gradient() {
        let triple = GradientTriple::new(v(&[0.7, -0.3]), v(&[-1.0, -2.0]), v(&[1.0, 0.5])).unwrap();
        let out = apply_surgery(&triple, SurgeryMode::Full, 0.2, 1e-12).unwrap();
        assert!(out.projection_skipped);
        assert!(out.g_help.is_zero());
        assert_eq!(out.g_final, triple.g_task);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in SurgeryMode::ALL {
            assert_eq!(m.name().parse::<SurgeryMode>().unwrap(), m);
        }
        assert!("nope".parse::<SurgeryMode>().is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn vecs(d: usize) -> impl Strategy<Value = Vec64> {
        proptest::collection::vec(-100.0..100.0f64, d).prop_map(|v| Vec64::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn decomposition_identity(g in vecs(12)) {
            let HalfSpaceDecomposition { positive, negative } = HalfSpaceDecomposition::of(&g);
            for j in 0..g.dim() {
                prop_assert!(positive[j] >= 0.0 && negative[j] <= 0.0);
                prop_assert_eq!(positive[j] + negative[j], g[j]);
                prop_assert_eq!(positive[j] * negative[j], 0.0);
            }
        }

        #[test]
        fn projection_properties(g in vecs(9), h in vecs(9)) {
            let (r, skipped) = orthogonal_suppress(&g, &h, DEFAULT_EPS_NORM).unwrap();
            prop_assume!(!skipped);
            let scale = l2_norm(&g) * l2_norm(&h);
            prop_assert!(dot(&r, &h).unwrap().abs() <= 1e-9 * scale);
            prop_assert!(l2_norm(&r) <= l2_norm(&g) + 1e-12);
            let (twice, _) = orthogonal_suppress(&r, &h, DEFAULT_EPS_NORM).unwrap();
            for j in 0..g.dim() {
                prop_assert!((twice[j] - r[j]).abs() <= 1e-12 * l2_norm(&g).max(1.0));
            }
        }
    }
}
