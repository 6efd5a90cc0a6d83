//! Student and teacher encoders, the frozen semantic map and the linear
//! heads read by the loss branches.
//!
//! The student is `f = base(x) + (alpha/r)·B·A·drop(base(x))`: a frozen
//! base map plus a trainable low-rank residual on the base feature. The
//! teacher is the same frozen base with no residual.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dims, Error, Result};
use crate::grad::{bce_with_logits_grad, Label};
use crate::numerics::{dot, Mat64, Rng, Vec64};

/// Linear classification head `w·f + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    w: Vec64,
    b: f64,
}

impl LinearHead {
    pub fn new(w: Vec64, b: f64) -> Result<Self> {
        if !b.is_finite() {
            return Err(Error::NonFinite { index: w.dim() });
        }
        Ok(LinearHead { w, b })
    }

    pub fn zeros(dim: usize) -> Self {
        LinearHead {
            w: Vec64::zeros(dim),
            b: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.dim()
    }

    pub fn w(&self) -> &Vec64 {
        &self.w
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn logit(&self, f: &Vec64) -> Result<f64> {
        Ok(dot(&self.w, f)? + self.b)
    }

    /// Gradient of the head's BCE loss with respect to `(w, b)`.
    pub fn grad(&self, f: &Vec64, label: Label) -> Result<(Vec64, f64)> {
        let r = bce_with_logits_grad(self.logit(f)?, label);
        Ok((f.scaled(r), r))
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut f64) {
        (self.w.as_mut_slice(), &mut self.b)
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        hash_f64s(&mut h, self.w.as_slice());
        hash_f64s(&mut h, &[self.b]);
        hex(&h.finalize())
    }
}

/// A head that the trainer may read but never update.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenHead(LinearHead);

impl FrozenHead {
    pub fn new(head: LinearHead) -> Self {
        FrozenHead(head)
    }

    pub fn head(&self) -> &LinearHead {
        &self.0
    }
}

/// Logit of `head` on `f`.
pub fn head_forward(head: &LinearHead, f: &Vec64) -> Result<f64> {
    head.logit(f)
}

/// `((σ(logit) - y)·f, σ(logit) - y)`.
pub fn head_grad(head: &LinearHead, f: &Vec64, label: Label) -> Result<(Vec64, f64)> {
    head.grad(f, label)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Mat64,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weight: Mat64, bias: Vec<f64>) -> Result<Self> {
        check_dims(weight.rows(), bias.len())?;
        if let Some(index) = bias.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(DenseLayer { weight, bias })
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.weight.matvec(x)?;
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        Ok(out)
    }
}

/// Stack of dense layers with `tanh` between consecutive layers. The last
/// layer is linear, so a single identity layer is the identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    layers: Vec<DenseLayer>,
}

impl MlpEncoder {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::field("layers", "encoder needs at least one layer"));
        }
        for pair in layers.windows(2) {
            check_dims(pair[0].weight.rows(), pair[1].weight.cols())?;
        }
        Ok(MlpEncoder { layers })
    }

    pub fn identity(dim: usize) -> Self {
        MlpEncoder {
            layers: vec![DenseLayer {
                weight: Mat64::identity(dim),
                bias: vec![0.0; dim],
            }],
        }
    }

    /// Single linear layer `diag(gains)`.
    pub fn diagonal(gains: &[f64]) -> Result<Self> {
        let n = gains.len();
        let weight = Mat64::from_fn(n, n, |i, j| if i == j { gains[i] } else { 0.0 })?;
        MlpEncoder::new(vec![DenseLayer::new(weight, vec![0.0; n])?])
    }

    /// Random encoder with layer widths `dims[0] -> dims[1] -> ...`,
    /// weights `N(0, 1/fan_in)` and biases `N(0, 0.01)`.
    pub fn random(rng: &mut Rng, dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::field("dims", "need input and output widths"));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let std = 1.0 / (w[0] as f64).sqrt();
                let weight = Mat64::from_fn(w[1], w[0], |_, _| rng.normal(0.0, std))?;
                let bias = (0..w[1]).map(|_| rng.normal(0.0, 0.1)).collect();
                DenseLayer::new(weight, bias)
            })
            .collect::<Result<Vec<_>>>()?;
        MlpEncoder::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    pub fn forward(&self, x: &Vec64) -> Result<Vec64> {
        check_dims(x.dim(), self.input_dim())?;
        let mut h = x.as_slice().to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h)?;
            if i < last {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        Vec64::new(h)
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for layer in &self.layers {
            h.update((layer.weight.rows() as u64).to_le_bytes());
            h.update((layer.weight.cols() as u64).to_le_bytes());
            hash_f64s(&mut h, layer.weight.as_slice());
            hash_f64s(&mut h, &layer.bias);
        }
        hex(&h.finalize())
    }
}

/// Inverted-dropout mask: entries are `0` or `1/(1-p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Vec<f64>);

impl DropoutMask {
    pub fn draw(rng: &mut Rng, dim: usize, rate: f64) -> Self {
        if rate == 0.0 {
            return DropoutMask(vec![1.0; dim]);
        }
        let keep = 1.0 / (1.0 - rate);
        DropoutMask((0..dim).map(|_| if rng.bernoulli(rate) { 0.0 } else { keep }).collect())
    }

    pub fn ones(dim: usize) -> Self {
        DropoutMask(vec![1.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Trainable residual `(alpha/r)·B·A` acting on the base feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankAdapter {
    a: Mat64,
    b: Mat64,
    alpha: f64,
    dropout_rate: f64,
}

impl LowRankAdapter {
    pub fn new(a: Mat64, b: Mat64, alpha: f64, dropout_rate: f64) -> Result<Self> {
        check_dims(a.rows(), b.cols())?;
        check_dims(a.cols(), b.rows())?;
        if !alpha.is_finite() {
            return Err(Error::field("lora_alpha", "must be finite"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::field("lora_dropout", "must lie in [0, 1)"));
        }
        Ok(LowRankAdapter {
            a,
            b,
            alpha,
            dropout_rate,
        })
    }

    /// `A ~ N(0, 1/d)`, `B = 0`.
    pub fn init(rng: &mut Rng, dim: usize, rank: usize, alpha: f64, dropout_rate: f64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::field("lora_rank", "must be at least 1"));
        }
        let std = 1.0 / (dim as f64).sqrt();
        let a = Mat64::from_fn(rank, dim, |_, _| rng.normal(0.0, std))?;
        LowRankAdapter::new(a, Mat64::zeros(dim, rank), alpha, dropout_rate)
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn dim(&self) -> usize {
        self.a.cols()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    pub fn a(&self) -> &Mat64 {
        &self.a
    }

    pub fn b(&self) -> &Mat64 {
        &self.b
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.a.as_mut_slice(), self.b.as_mut_slice())
    }
}

/// Gradients for the adapter matrices, same shapes as `A` and `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrad {
    pub a: Mat64,
    pub b: Mat64,
}

impl AdapterGrad {
    pub fn zeros_like(adapter: &LowRankAdapter) -> Self {
        AdapterGrad {
            a: Mat64::zeros(adapter.rank(), adapter.dim()),
            b: Mat64::zeros(adapter.dim(), adapter.rank()),
        }
    }

    pub fn accumulate(&mut self, other: &AdapterGrad) {
        for (x, y) in self.a.as_mut_slice().iter_mut().zip(other.a.as_slice()) {
            *x += y;
        }
        for (x, y) in self.b.as_mut_slice().iter_mut().zip(other.b.as_slice()) {
            *x += y;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.a.as_mut_slice().iter_mut().for_each(|x| *x *= c);
        self.b.as_mut_slice().iter_mut().for_each(|x| *x *= c);
    }
}

/// Cached intermediates of one student forward pass.
#[derive(Debug, Clone)]
pub struct StudentPass {
    pub feature: Vec64,
    pub base: Vec64,
    pub mask: Option<DropoutMask>,
    /// `A · drop(base)`.
    pub projected: Vec<f64>,
    dropped: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentEncoder {
    base: MlpEncoder,
    adapter: LowRankAdapter,
}

impl StudentEncoder {
    pub fn new(base: MlpEncoder, adapter: LowRankAdapter) -> Result<Self> {
        check_dims(base.output_dim(), adapter.dim())?;
        Ok(StudentEncoder { base, adapter })
    }

    pub fn base(&self) -> &MlpEncoder {
        &self.base
    }

    pub fn adapter(&self) -> &LowRankAdapter {
        &self.adapter
    }

    pub(crate) fn adapter_mut(&mut self) -> &mut LowRankAdapter {
        &mut self.adapter
    }

    pub fn input_dim(&self) -> usize {
        self.base.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.base.output_dim()
    }

    /// Forward pass. In train mode a fresh dropout mask is drawn from `rng`;
    /// eval mode is mask-free and consumes no randomness.
    pub fn forward(&self, x: &Vec64, train_mode: bool, rng: &mut Rng) -> Result<Vec64> {
        Ok(self.forward_cached(x, train_mode, rng)?.feature)
    }

    pub fn forward_cached(&self, x: &Vec64, train_mode: bool, rng: &mut Rng) -> Result<StudentPass> {
        let base = self.base.forward(x)?;
        let mask = train_mode.then(|| DropoutMask::draw(rng, base.dim(), self.adapter.dropout_rate));
        self.forward_from_base(base, mask)
    }

    /// Forward pass from an already computed base feature.
    pub fn forward_from_base(&self, base: Vec64, mask: Option<DropoutMask>) -> Result<StudentPass> {
        let dropped: Vec<f64> = match &mask {
            Some(m) => base.iter().zip(m.as_slice()).map(|(h, k)| h * k).collect(),
            None => base.as_slice().to_vec(),
        };
        let projected = self.adapter.a.matvec(&dropped)?;
        let residual = self.adapter.b.matvec(&projected)?;
        let s = self.adapter.scale();
        let feature = base
            .iter()
            .zip(&residual)
            .map(|(h, r)| h + s * r)
            .collect();
        Ok(StudentPass {
            feature: Vec64::new(feature)?,
            base,
            mask,
            projected,
            dropped,
        })
    }

    /// `∂⟨f(x; A, B), v⟩ / ∂(A, B)` for the dropout mask used in the paired
    /// forward pass.
    pub fn vjp_adapter(
        &self,
        x: &Vec64,
        v: &Vec64,
        train_mode: bool,
        mask: Option<&DropoutMask>,
    ) -> Result<AdapterGrad> {
        if train_mode && mask.is_none() {
            return Err(Error::MissingMask);
        }
        let base = self.base.forward(x)?;
        let mask = if train_mode { mask.cloned() } else { None };
        let pass = self.forward_from_base(base, mask)?;
        self.vjp_from_pass(&pass, v)
    }

    pub fn vjp_from_pass(&self, pass: &StudentPass, v: &Vec64) -> Result<AdapterGrad> {
        let mut grad = AdapterGrad::zeros_like(&self.adapter);
        self.vjp_accumulate(pass, v.as_slice(), 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Adds `weight · vjp(pass, v)` into `grad` without allocating.
    pub(crate) fn vjp_accumulate(
        &self,
        pass: &StudentPass,
        v: &[f64],
        weight: f64,
        grad: &mut AdapterGrad,
    ) -> Result<()> {
        check_dims(v.len(), self.adapter.dim())?;
        let s = self.adapter.scale() * weight;
        let r = self.adapter.rank();
        // grad_B = s · v ⊗ (A·h_drop)
        let gb = grad.b.as_mut_slice();
        for (i, &vi) in v.iter().enumerate() {
            let row = &mut gb[i * r..(i + 1) * r];
            for (g, &p) in row.iter_mut().zip(&pass.projected) {
                *g += s * vi * p;
            }
        }
        // grad_A = s · (Bᵀv) ⊗ h_drop
        let btv = self.adapter.b.matvec_t(v)?;
        let d = self.adapter.dim();
        let ga = grad.a.as_mut_slice();
        for (k, &c) in btv.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = &mut ga[k * d..(k + 1) * d];
            for (g, &h) in row.iter_mut().zip(&pass.dropped) {
                *g += s * c * h;
            }
        }
        Ok(())
    }
}

/// Frozen copy of the student's base map.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherEncoder {
    base: MlpEncoder,
}

impl TeacherEncoder {
    pub fn from_student(student: &StudentEncoder) -> Self {
        TeacherEncoder {
            base: student.base.clone(),
        }
    }

    pub fn new(base: MlpEncoder) -> Self {
        TeacherEncoder { base }
    }

    pub fn base(&self) -> &MlpEncoder {
        &self.base
    }

    pub fn forward(&self, x: &Vec64) -> Result<Vec64> {
        self.base.forward(x)
    }
}

/// Frozen map from a record's stored semantic feature into feature space.
#[derive(Debug, Clone, PartialEq)]
pub enum SemanticMap {
    /// The stored feature already lives in feature space.
    Identity,
    /// The stored feature is written into input coordinates
    /// `offset..offset + len` of a zero input and passed through `base`.
    Embedded { base: MlpEncoder, offset: usize },
}

impl SemanticMap {
    pub fn forward(&self, t_sem: Option<&Vec64>, id: &str) -> Result<Vec64> {
        let t = t_sem.ok_or_else(|| Error::MissingSemantic(id.to_string()))?;
        match self {
            SemanticMap::Identity => Ok(t.clone()),
            SemanticMap::Embedded { base, offset } => {
                let n = base.input_dim();
                if offset + t.dim() > n {
                    return Err(Error::DimMismatch {
                        left: offset + t.dim(),
                        right: n,
                    });
                }
                let mut input = vec![0.0; n];
                input[*offset..offset + t.dim()].copy_from_slice(t.as_slice());
                base.forward(&Vec64::new(input)?)
            }
        }
    }
}

/// `t = E_text(record)`; the semantic branch is never trained.
pub fn forward_text(map: &SemanticMap, t_sem: Option<&Vec64>, id: &str) -> Result<Vec64> {
    map.forward(t_sem, id)
}

fn hash_f64s(h: &mut Sha256, values: &[f64]) {
    for v in values {
        h.update(v.to_bits().to_le_bytes());
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian_vec;

    fn student(rng: &mut Rng, dims: &[usize], rank: usize, alpha: f64, p: f64) -> StudentEncoder {
        let base = MlpEncoder::random(rng, dims).unwrap();
        let d = base.output_dim();
        let mut adapter = LowRankAdapter::init(rng, d, rank, alpha, p).unwrap();
        for v in adapter.params_mut().1.iter_mut() {
            *v = rng.normal(0.0, 0.3);
        }
        StudentEncoder::new(base, adapter).unwrap()
    }

    #[test]
    fn identity_base_passes_input_through() {
        let teacher = TeacherEncoder::new(MlpEncoder::identity(4));
        let x = Vec64::new(vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(teacher.forward(&x).unwrap(), x);
        assert_eq!(teacher.forward(&x).unwrap(), teacher.forward(&x).unwrap());
        assert!(teacher.forward(&Vec64::zeros(3)).is_err());
    }

    #[test]
    fn teacher_matches_manual_matvec() {
        let mut rng = Rng::new(2);
        let base = MlpEncoder::random(&mut rng, &[5, 7, 4]).unwrap();
        let x = gaussian_vec(&mut rng, 5, 0.0, 1.0).unwrap();
        let [l1, l2] = base.layers() else { panic!() };
        let mut hidden = vec![0.0; 7];
        for i in 0..7 {
            let mut acc = l1.bias[i];
            for j in 0..5 {
                acc += l1.weight.get(i, j) * x[j];
            }
            hidden[i] = acc.tanh();
        }
        let out = TeacherEncoder::new(base.clone()).forward(&x).unwrap();
        for i in 0..4 {
            let mut acc = l2.bias[i];
            for j in 0..7 {
                acc += l2.weight.get(i, j) * hidden[j];
            }
            assert!((acc - out[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_b_student_equals_teacher() {
        let mut rng = Rng::new(3);
        let base = MlpEncoder::random(&mut rng, &[6, 8]).unwrap();
        let adapter = LowRankAdapter::init(&mut rng, 8, 3, 3.0, 0.5).unwrap();
        let s = StudentEncoder::new(base, adapter).unwrap();
        let t = TeacherEncoder::from_student(&s);
        for _ in 0..20 {
            let x = gaussian_vec(&mut rng, 6, 0.0, 1.0).unwrap();
            assert_eq!(s.forward(&x, false, &mut rng).unwrap(), t.forward(&x).unwrap());
            assert_eq!(s.forward(&x, true, &mut rng).unwrap(), t.forward(&x).unwrap());
        }
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let mut rng = Rng::new(4);
        let s = student(&mut rng, &[5, 6], 2, 2.0, 0.0);
        let x = gaussian_vec(&mut rng, 5, 0.0, 1.0).unwrap();
        let a = s.forward(&x, true, &mut rng).unwrap();
        let b = s.forward(&x, false, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn residual_matches_dense_product() {
        let mut rng = Rng::new(5);
        let s = student(&mut rng, &[4, 6], 3, 3.0, 0.0);
        let x = gaussian_vec(&mut rng, 4, 0.0, 1.0).unwrap();
        let h = s.base().forward(&x).unwrap();
        let (a, b) = (s.adapter().a(), s.adapter().b());
        // Dense BA, then apply.
        let mut ba = vec![0.0; 36];
        for i in 0..6 {
            for j in 0..6 {
                for k in 0..3 {
                    ba[i * 6 + j] += b.get(i, k) * a.get(k, j);
                }
            }
        }
        let f = s.forward(&x, false, &mut rng).unwrap();
        for i in 0..6 {
            let r: f64 = (0..6).map(|j| ba[i * 6 + j] * h[j]).sum();
            assert!((f[i] - h[i] - r).abs() <= 1e-12);
        }
    }

    #[test]
    fn inverted_dropout_scales_kept_units() {
        let mut rng = Rng::new(6);
        let m = DropoutMask::draw(&mut rng, 10_000, 0.8);
        assert!(m.as_slice().iter().all(|&v| v == 0.0 || (v - 5.0).abs() < 1e-12));
        let kept = m.as_slice().iter().filter(|&&v| v > 0.0).count() as f64 / 10_000.0;
        assert!((kept - 0.2).abs() < 0.02);
    }

    #[test]
    fn vjp_structural_cases() {
        let mut rng = Rng::new(7);
        let base = MlpEncoder::random(&mut rng, &[4, 5]).unwrap();
        let adapter = LowRankAdapter::init(&mut rng, 5, 2, 2.0, 0.0).unwrap();
        let s = StudentEncoder::new(base, adapter).unwrap();
        let x = gaussian_vec(&mut rng, 4, 0.0, 1.0).unwrap();
        let v = gaussian_vec(&mut rng, 5, 0.0, 1.0).unwrap();

        let zero = s.vjp_adapter(&x, &Vec64::zeros(5), false, None).unwrap();
        assert!(zero.a.is_zero() && zero.b.is_zero());

        let g = s.vjp_adapter(&x, &v, false, None).unwrap();
        assert!(g.a.is_zero());
        assert!(!g.b.is_zero());

        assert!(matches!(s.vjp_adapter(&x, &v, true, None), Err(Error::MissingMask)));
    }

    #[test]
    fn vjp_matches_central_differences() {
        let mut rng = Rng::new(8);
        let s = student(&mut rng, &[6, 8], 3, 6.0, 0.5);
        let x = gaussian_vec(&mut rng, 6, 0.0, 1.0).unwrap();
        let v = gaussian_vec(&mut rng, 8, 0.0, 1.0).unwrap();
        let pass = s.forward_cached(&x, true, &mut rng).unwrap();
        let mask = pass.mask.clone().unwrap();
        let grad = s.vjp_adapter(&x, &v, true, Some(&mask)).unwrap();

        let objective = |enc: &StudentEncoder| {
            let p = enc.forward_from_base(enc.base().forward(&x).unwrap(), Some(mask.clone())).unwrap();
            dot(&p.feature, &v).unwrap()
        };
        let h = 1e-5;
        for which in 0..2 {
            let n = if which == 0 { 3 * 8 } else { 8 * 3 };
            for idx in 0..n {
                let mut up = s.clone();
                let mut dn = s.clone();
                let (au, bu) = up.adapter_mut().params_mut();
                if which == 0 { au[idx] += h } else { bu[idx] += h }
                let (ad, bd) = dn.adapter_mut().params_mut();
                if which == 0 { ad[idx] -= h } else { bd[idx] -= h }
                let fd = (objective(&up) - objective(&dn)) / (2.0 * h);
                let an = if which == 0 { grad.a.as_slice()[idx] } else { grad.b.as_slice()[idx] };
                let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(rel <= 1e-6 || (fd - an).abs() <= 1e-9, "param {which}/{idx}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn head_examples() {
        let zero = LinearHead::zeros(3);
        let f = Vec64::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(head_forward(&zero, &f).unwrap(), 0.0);
        let head = LinearHead::new(Vec64::basis(3, 0), 1.0).unwrap();
        assert_eq!(head_forward(&head, &Vec64::new(vec![2.0, 5.0, -1.0]).unwrap()).unwrap(), 3.0);

        let (gw, gb) = head_grad(&head, &Vec64::zeros(3), Label::Real).unwrap();
        assert!(gw.is_zero());
        assert_eq!(gb, crate::numerics::stable_sigmoid(1.0));
        let (_, gb) = head_grad(&LinearHead::zeros(3), &Vec64::zeros(3), Label::Fake).unwrap();
        assert_eq!(gb, -0.5);
    }

    #[test]
    fn semantic_map_modes() {
        let t = Vec64::new(vec![0.5, -1.0]).unwrap();
        assert_eq!(forward_text(&SemanticMap::Identity, Some(&t), "a").unwrap(), t);
        let map = SemanticMap::Embedded {
            base: MlpEncoder::identity(5),
            offset: 1,
        };
        let out = forward_text(&map, Some(&t), "a").unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.5, -1.0, 0.0, 0.0]);
        assert_eq!(out, forward_text(&map, Some(&t), "a").unwrap());
        assert!(matches!(forward_text(&map, None, "r7"), Err(Error::MissingSemantic(id)) if id == "r7"));
    }

    #[test]
    fn fingerprints_track_values() {
        let mut rng = Rng::new(9);
        let base = MlpEncoder::random(&mut rng, &[3, 3]).unwrap();
        assert_eq!(base.fingerprint(), base.clone().fingerprint());
        assert_ne!(base.fingerprint(), MlpEncoder::identity(3).fingerprint());
    }
}
