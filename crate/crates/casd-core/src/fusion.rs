//! Confidence-aware fusion of three per-modality Student's-t distributions,
//! uncertainty scoring, and reparameterized sampling.
//!
//! Modality order is fixed as (language, audio, vision) = (1, 2, 3);
//! modality 1 is the reference in the fused-scale correction factors.

use rand::Rng;

use crate::error::{CasdError, Result};
use crate::evidist::{sample_standard_t_tensor, StudentT, StudentTNodes};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Floor for the v - 3 denominator of the uncertainty score, which is
/// otherwise singular as the fused dof approaches 3.
pub const SCORE_DOF_FLOOR: f64 = 1e-3;

/// How the three modality distributions are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FusionMode {
    /// Confidence weights from the degrees of freedom. `normalized` divides
    /// the weights by their sum (they sum to more than one as printed).
    Confidence { normalized: bool },
    /// Plain average of the locations; ablation baseline.
    Mean,
}

/// Sampling behaviour of the reparameterization representation module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Infer,
}

/// Fused joint distribution with its confidence weights and uncertainty
/// score.
#[derive(Debug, Clone)]
pub struct FusedStudentT {
    pub u_f: Tensor,
    pub sigma_f: Tensor,
    pub v_f: f64,
    /// (C1, C2, C3) confidence weights.
    pub weights: (f64, f64, f64),
    pub u_score: Tensor,
}

/// Graph nodes of the fused distribution.
#[derive(Debug, Clone, Copy)]
pub struct FusionNodes {
    pub u_f: NodeId,
    pub sigma_f: NodeId,
    /// 1x1 scalar node.
    pub v_f: NodeId,
    pub u_score: NodeId,
    pub c1: NodeId,
    pub c2: NodeId,
    pub c3: NodeId,
}

/// Confidence weights from per-modality degrees of freedom:
/// C1 = v1/(v1+v2), C2 = v2/(v1+v2), C3 = v3/(v1+v2+v3). No renormalization;
/// the printed weights sum to 1 + C3.
pub fn confidence_weights(v1: f64, v2: f64, v3: f64) -> Result<(f64, f64, f64)> {
    if !(v1 > 0.0 && v2 > 0.0 && v3 > 0.0) {
        return Err(CasdError::Numeric(format!(
            "confidence_weights: dofs must be positive, got ({v1}, {v2}, {v3})"
        )));
    }
    let s12 = v1 + v2;
    Ok((v1 / s12, v2 / s12, v3 / (s12 + v3)))
}

/// Build the fusion rules on a tape. Inputs must share their grid shape and
/// all dof values must exceed 2 (the scale-correction factors are undefined
/// otherwise).
pub fn fuse_nodes(
    tape: &mut Tape,
    m: &[StudentTNodes; 3],
    mode: FusionMode,
) -> Result<FusionNodes> {
    let shape = tape.value(m[0].u).shape().to_vec();
    for (i, mi) in m.iter().enumerate() {
        if tape.value(mi.u).shape() != shape || tape.value(mi.o).shape() != shape {
            return Err(CasdError::Dimension(format!(
                "fuse: modality {} grid {:?}/{:?} vs {:?}",
                i + 1,
                tape.value(mi.u).shape(),
                tape.value(mi.o).shape(),
                shape
            )));
        }
        let v = tape.scalar_value(mi.v);
        if !(v > 2.0) {
            return Err(CasdError::Numeric(format!(
                "fuse: dof of modality {} must exceed 2, got {v}",
                i + 1
            )));
        }
    }
    let [m1, m2, m3] = m;

    // Confidence weights are computed in both modes; mean fusion only
    // replaces the location rule.
    let v12 = tape.add(m1.v, m2.v)?;
    let mut c1 = tape.div(m1.v, v12)?;
    let mut c2 = tape.div(m2.v, v12)?;
    let v123 = tape.add(v12, m3.v)?;
    let mut c3 = tape.div(m3.v, v123)?;
    if let FusionMode::Confidence { normalized: true } = mode {
        let s = tape.add(c1, c2)?;
        let s = tape.add(s, c3)?;
        c1 = tape.div(c1, s)?;
        c2 = tape.div(c2, s)?;
        c3 = tape.div(c3, s)?;
    }

    let u_f = match mode {
        FusionMode::Confidence { .. } => {
            let t1 = tape.scalar_mul(c1, m1.u)?;
            let t2 = tape.scalar_mul(c2, m2.u)?;
            let t3 = tape.scalar_mul(c3, m3.u)?;
            let s = tape.add(t1, t2)?;
            tape.add(s, t3)?
        }
        FusionMode::Mean => {
            let s = tape.add(m1.u, m2.u)?;
            let s = tape.add(s, m3.u)?;
            tape.scale(s, 1.0 / 3.0)
        }
    };

    // Sigma_F = (1/3)(S1 + [v2(v1-2)/(v1(v2-2))] S2 + [v3(v1-2)/(v1(v3-2))] S3)
    let v1m2 = tape.add_const(m1.v, -2.0);
    let mut corrected = m1.o;
    for other in [m2, m3] {
        let num = tape.mul(other.v, v1m2)?;
        let vm2 = tape.add_const(other.v, -2.0);
        let den = tape.mul(m1.v, vm2)?;
        let factor = tape.div(num, den)?;
        let term = tape.scalar_mul(factor, other.o)?;
        corrected = tape.add(corrected, term)?;
    }
    let sigma_f = tape.scale(corrected, 1.0 / 3.0);

    let v_min12 = tape.min2(m1.v, m2.v)?;
    let v_f = tape.min2(v_min12, m3.v)?;

    let u_score = uncertainty_score_nodes(tape, sigma_f, v_f)?;

    Ok(FusionNodes {
        u_f,
        sigma_f,
        v_f,
        u_score,
        c1,
        c2,
        c3,
    })
}

/// U_F = Sigma_F v_F / max(v_F - 3, 1e-3), element-wise.
pub fn uncertainty_score_nodes(tape: &mut Tape, sigma_f: NodeId, v_f: NodeId) -> Result<NodeId> {
    let vm3 = tape.add_const(v_f, -3.0);
    let denom = tape.clamp_min(vm3, SCORE_DOF_FLOOR);
    let ratio = tape.div(v_f, denom)?;
    tape.scalar_mul(ratio, sigma_f)
}

/// Training-time reparameterized draw s = u_F + sqrt(Sigma_F) * t with `t` a
/// stopped-gradient constant for the step.
pub fn rrm_sample_nodes(tape: &mut Tape, u_f: NodeId, sigma_f: NodeId, t: &Tensor) -> Result<NodeId> {
    if tape.value(sigma_f).shape() != t.shape() {
        return Err(CasdError::Dimension(format!(
            "rrm_sample: draw shape {:?} vs scale {:?}",
            t.shape(),
            tape.value(sigma_f).shape()
        )));
    }
    let t_node = tape.leaf(t.clone());
    let scale = tape.sqrt(sigma_f);
    let noise = tape.mul(scale, t_node)?;
    tape.add(u_f, noise)
}

/// Fuse three Student's-t distributions with the verbatim confidence
/// weights. See [`fuse_with_mode`] for the normalized and mean variants.
pub fn fuse(d1: &StudentT, d2: &StudentT, d3: &StudentT) -> Result<FusedStudentT> {
    fuse_with_mode(
        d1,
        d2,
        d3,
        FusionMode::Confidence { normalized: false },
    )
}

/// Fusion on plain values; runs the same graph the training path uses.
pub fn fuse_with_mode(
    d1: &StudentT,
    d2: &StudentT,
    d3: &StudentT,
    mode: FusionMode,
) -> Result<FusedStudentT> {
    let mut tape = Tape::new();
    let mut as_nodes = |d: &StudentT| -> StudentTNodes {
        StudentTNodes {
            u: tape.leaf(d.u.clone()),
            o: tape.leaf(d.o.clone()),
            v: tape.leaf(Tensor::scalar(d.v)),
        }
    };
    let m = [as_nodes(d1), as_nodes(d2), as_nodes(d3)];
    let f = fuse_nodes(&mut tape, &m, mode)?;
    Ok(FusedStudentT {
        u_f: tape.value(f.u_f).clone(),
        sigma_f: tape.value(f.sigma_f).clone(),
        v_f: tape.scalar_value(f.v_f),
        weights: (
            tape.scalar_value(f.c1),
            tape.scalar_value(f.c2),
            tape.scalar_value(f.c3),
        ),
        u_score: tape.value(f.u_score).clone(),
    })
}

/// Recompute the uncertainty score of a fused distribution.
pub fn uncertainty_score(f: &FusedStudentT) -> Tensor {
    let ratio = f.v_f / (f.v_f - 3.0).max(SCORE_DOF_FLOOR);
    f.sigma_f.map(|s| s * ratio)
}

/// Draw a representation from the fused distribution. `Train` samples one
/// independent standard-t per element; `Infer` returns the fused location
/// exactly and deterministically.
pub fn rrm_sample<R: Rng + ?Sized>(
    f: &FusedStudentT,
    rng: &mut R,
    mode: SampleMode,
) -> Tensor {
    match mode {
        SampleMode::Infer => f.u_f.clone(),
        SampleMode::Train => {
            let t = sample_standard_t_tensor(f.sigma_f.shape().to_vec(), f.v_f, rng);
            let mut out = f.u_f.clone();
            for i in 0..out.numel() {
                out.data_mut()[i] += f.sigma_f.data()[i].sqrt() * t.data()[i];
            }
            out
        }
    }
}
