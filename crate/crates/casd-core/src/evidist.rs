//! Evidential distribution algebra: Normal-Inverse-Gamma parameters,
//! aleatoric/epistemic uncertainty, the Student's-t predictive, and
//! standard-t sampling.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{CasdError, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Per-modality Normal-Inverse-Gamma evidential parameters.
///
/// `gamma` (location) and `beta` (scale evidence) are per-element maps over
/// the feature grid; `delta` and `alpha` are per-modality scalars, the
/// minimal structure the fusion rules consume.
#[derive(Debug, Clone)]
pub struct NigParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub delta: f64,
    pub alpha: f64,
}

impl NigParams {
    pub fn new(gamma: Tensor, beta: Tensor, delta: f64, alpha: f64) -> Result<Self> {
        if !gamma.same_shape(&beta) {
            return Err(CasdError::Dimension(format!(
                "nig: gamma {:?} vs beta {:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        if beta.data().iter().any(|&b| !(b > 0.0)) {
            return Err(CasdError::Numeric("nig: beta must be positive".into()));
        }
        if !(delta > 0.0) {
            return Err(CasdError::Numeric(format!(
                "nig: delta must be positive, got {delta}"
            )));
        }
        if !(alpha > 1.0) {
            return Err(CasdError::Numeric(format!(
                "nig: alpha must exceed 1, got {alpha}"
            )));
        }
        Ok(NigParams {
            gamma,
            beta,
            delta,
            alpha,
        })
    }
}

/// Element-wise location-scale Student's-t; `o` is a squared scale and `v`
/// the degrees of freedom shared across the feature grid.
#[derive(Debug, Clone)]
pub struct StudentT {
    pub u: Tensor,
    pub o: Tensor,
    pub v: f64,
}

impl StudentT {
    pub fn new(u: Tensor, o: Tensor, v: f64) -> Result<Self> {
        if !u.same_shape(&o) {
            return Err(CasdError::Dimension(format!(
                "student-t: u {:?} vs o {:?}",
                u.shape(),
                o.shape()
            )));
        }
        if o.data().iter().any(|&x| !(x > 0.0)) {
            return Err(CasdError::Numeric(
                "student-t: squared scale must be positive".into(),
            ));
        }
        if !(v > 0.0) {
            return Err(CasdError::Numeric(format!(
                "student-t: dof must be positive, got {v}"
            )));
        }
        Ok(StudentT { u, o, v })
    }
}

/// Graph nodes of a per-modality Student's-t predictive.
#[derive(Debug, Clone, Copy)]
pub struct StudentTNodes {
    pub u: NodeId,
    pub o: NodeId,
    /// 1x1 scalar node.
    pub v: NodeId,
}

/// Build the NIG -> Student's-t conversion on a tape:
/// u = gamma, o = beta (1 + delta) / (delta alpha), v = 2 alpha.
/// `delta` and `alpha` are 1x1 scalar nodes.
pub fn nig_to_student_nodes(
    tape: &mut Tape,
    gamma: NodeId,
    beta: NodeId,
    delta: NodeId,
    alpha: NodeId,
) -> Result<StudentTNodes> {
    let one_plus_delta = tape.add_const(delta, 1.0);
    let delta_alpha = tape.mul(delta, alpha)?;
    let ratio = tape.div(one_plus_delta, delta_alpha)?;
    let o = tape.scalar_mul(ratio, beta)?;
    let v = tape.scale(alpha, 2.0);
    Ok(StudentTNodes { u: gamma, o, v })
}

/// NIG -> Student's-t predictive. Runs the same graph the training loss
/// differentiates through, on a scratch tape.
pub fn nig_to_student(p: &NigParams) -> StudentT {
    let mut tape = Tape::new();
    let gamma = tape.leaf(p.gamma.clone());
    let beta = tape.leaf(p.beta.clone());
    let delta = tape.leaf(Tensor::scalar(p.delta));
    let alpha = tape.leaf(Tensor::scalar(p.alpha));
    let nodes = nig_to_student_nodes(&mut tape, gamma, beta, delta, alpha)
        .expect("nig_to_student graph on validated params");
    StudentT {
        u: tape.value(nodes.u).clone(),
        o: tape.value(nodes.o).clone(),
        v: tape.scalar_value(nodes.v),
    }
}

/// Aleatoric uncertainty beta / (alpha - 1), element-wise.
pub fn aleatoric(p: &NigParams) -> Tensor {
    let denom = p.alpha - 1.0;
    p.beta.map(|b| b / denom)
}

/// Epistemic uncertainty beta / (delta (alpha - 1)), element-wise.
pub fn epistemic(p: &NigParams) -> Tensor {
    let denom = p.delta * (p.alpha - 1.0);
    p.beta.map(|b| b / denom)
}

/// One draw from the standard Student's-t with `v` degrees of freedom:
/// z / sqrt(g / v) with z standard normal and g chi-square(v), the latter
/// via a gamma(v/2, scale 2) sampler (valid for any v > 0).
pub fn sample_standard_t<R: Rng + ?Sized>(v: f64, rng: &mut R) -> f64 {
    debug_assert!(v > 0.0, "dof must be positive");
    let z: f64 = StandardNormal.sample(rng);
    let chi2 = Gamma::new(v / 2.0, 2.0).expect("gamma shape/scale positive");
    let g: f64 = chi2.sample(rng);
    z / (g / v).sqrt()
}

/// Tensor of independent standard-t draws.
pub fn sample_standard_t_tensor<R: Rng + ?Sized>(
    shape: Vec<usize>,
    v: f64,
    rng: &mut R,
) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| sample_standard_t(v, rng)).collect();
    Tensor::new(shape, data).expect("sample tensor shape")
}

/// Element-wise log-density of the location-scale t with squared scale `o`.
pub fn student_logpdf(d: &StudentT, x: &Tensor) -> Result<Tensor> {
    if !d.u.same_shape(x) {
        return Err(CasdError::Dimension(format!(
            "student_logpdf: x {:?} vs distribution {:?}",
            x.shape(),
            d.u.shape()
        )));
    }
    let v = d.v;
    let norm = ln_gamma((v + 1.0) / 2.0)
        - ln_gamma(v / 2.0)
        - 0.5 * (v * std::f64::consts::PI).ln();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let u = d.u.data()[i];
        let o = d.o.data()[i];
        let z2 = (x.data()[i] - u).powi(2) / o;
        out.push(norm - 0.5 * o.ln() - (v + 1.0) / 2.0 * (z2 / v).ln_1p());
    }
    Tensor::new(x.shape().to_vec(), out)
}
