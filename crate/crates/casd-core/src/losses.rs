//! Classification and distillation losses: cross-entropy, KL/JS divergence
//! over softened logits, and the uncertainty consistency term.

use crate::error::{CasdError, Result};
use crate::tape::{softmax_rows_value, NodeId, Tape};
use crate::tensor::Tensor;

/// Floor applied to the reference distribution inside KL.
pub const KL_FLOOR: f64 = 1e-12;

/// Weights of the distillation terms in the total objective
/// total = ce + alpha * logits + beta * uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 0.01,
            temperature: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(CasdError::Config(format!(
                "loss weights must be non-negative: alpha={}, beta={}",
                self.alpha, self.beta
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(CasdError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// -log softmax(logits)[label] for a single sample; callers batch-average.
pub fn ce_loss(logits: &Tensor, label: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.leaf(as_row(logits)?);
    let ce = tape.cross_entropy(l, label)?;
    Ok(tape.scalar_value(ce))
}

/// KL(p || q) = sum p log(p / q) with 0 log(0/q) = 0 and q floored at 1e-12.
/// Both inputs must be distributions (non-negative, summing to one within
/// 1e-9).
pub fn kl_div(p: &Tensor, q: &Tensor) -> Result<f64> {
    if !p.same_shape(q) {
        return Err(CasdError::Dimension(format!(
            "kl_div: {:?} vs {:?}",
            p.shape(),
            q.shape()
        )));
    }
    for (name, d) in [("p", p), ("q", q)] {
        if d.data().iter().any(|&x| x < 0.0) {
            return Err(CasdError::Numeric(format!("kl_div: {name} has negative mass")));
        }
        let s: f64 = d.data().iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(CasdError::Numeric(format!(
                "kl_div: {name} sums to {s}, expected 1"
            )));
        }
    }
    let mut acc = 0.0;
    for (&pi, &qi) in p.data().iter().zip(q.data()) {
        if pi > 0.0 {
            acc += pi * (pi / qi.max(KL_FLOOR)).ln();
        }
    }
    Ok(acc)
}

/// Jensen-Shannon divergence between temperature-softened logits:
/// with p = softmax(y_s / tau), q = softmax(y_t / tau), m = (p + q) / 2,
/// returns (KL(p||m) + KL(q||m)) / 2. Symmetric and bounded by log 2.
pub fn js_logits_loss(y_student: &Tensor, y_teacher: &Tensor, temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.leaf(as_row(y_student)?);
    let js = js_logits_nodes(&mut tape, s, &as_row(y_teacher)?, temperature)?;
    Ok(tape.scalar_value(js))
}

/// Graph form of the JS logits loss; the teacher logits enter as a
/// stopped-gradient constant.
pub fn js_logits_nodes(
    tape: &mut Tape,
    y_student: NodeId,
    y_teacher: &Tensor,
    temperature: f64,
) -> Result<NodeId> {
    if tape.value(y_student).shape() != y_teacher.shape() {
        return Err(CasdError::Dimension(format!(
            "js_logits: student {:?} vs teacher {:?}",
            tape.value(y_student).shape(),
            y_teacher.shape()
        )));
    }
    let p_student = tape.softmax_temp(y_student, temperature)?;
    let p_teacher = softmax_rows_value(&y_teacher.map(|v| v / temperature));
    let p_teacher_node = tape.leaf(p_teacher);

    let sum_pq = tape.add(p_student, p_teacher_node)?;
    let mixture = tape.scale(sum_pq, 0.5);
    let log_m = tape.log(mixture);

    // KL(p_student || m)
    let log_p = tape.log(p_student);
    let diff_s = tape.sub(log_p, log_m)?;
    let term_s = tape.mul(p_student, diff_s)?;
    let kl_s = tape.sum(term_s);

    // KL(p_teacher || m); only m carries gradient.
    let log_q = tape.log(p_teacher_node);
    let diff_t = tape.sub(log_q, log_m)?;
    let term_t = tape.mul(p_teacher_node, diff_t)?;
    let kl_t = tape.sum(term_t);

    let total = tape.add(kl_s, kl_t)?;
    Ok(tape.scale(total, 0.5))
}

/// Mean squared difference between student and teacher uncertainty grids,
/// averaged over elements; callers average over the batch.
pub fn uncertainty_consistency_loss(u_student: &Tensor, u_teacher: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.leaf(u_student.clone());
    let l = uncertainty_consistency_nodes(&mut tape, s, u_teacher)?;
    Ok(tape.scalar_value(l))
}

/// Graph form of the uncertainty consistency loss; teacher values are a
/// stopped-gradient constant.
pub fn uncertainty_consistency_nodes(
    tape: &mut Tape,
    u_student: NodeId,
    u_teacher: &Tensor,
) -> Result<NodeId> {
    if tape.value(u_student).shape() != u_teacher.shape() {
        return Err(CasdError::Dimension(format!(
            "uncertainty loss: student {:?} vs teacher {:?}",
            tape.value(u_student).shape(),
            u_teacher.shape()
        )));
    }
    let t = tape.leaf(u_teacher.clone());
    let diff = tape.sub(u_student, t)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}

/// total = ce + alpha * logits_loss + beta * uncertainty_loss.
pub fn total_loss(ce: f64, logits_loss: f64, unc_loss: f64, w: &LossWeights) -> f64 {
    ce + w.alpha * logits_loss + w.beta * unc_loss
}

fn as_row(t: &Tensor) -> Result<Tensor> {
    match t.shape() {
        [1, _] => Ok(t.clone()),
        [n] => Tensor::new(vec![1, *n], t.data().to_vec()),
        other => Err(CasdError::Dimension(format!(
            "expected a logit row, got shape {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        crate::rng::substream(seed, &[30])
    }

    fn random_logits(c: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::row((0..c).map(|_| rng.random_range(-4.0..4.0)).collect())
    }

    fn random_dist(c: usize, rng: &mut impl Rng) -> Tensor {
        let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        Tensor::row(raw.into_iter().map(|v| v / s).collect())
    }

    #[test]
    fn ce_uniform_logits() {
        let l = Tensor::row(vec![0.2; 4]);
        assert!((ce_loss(&l, 0).unwrap() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_large_margin_drives_loss_to_zero() {
        let l = Tensor::row(vec![60.0, 0.0, 0.0]);
        assert!(ce_loss(&l, 0).unwrap() < 1e-20);
    }

    #[test]
    fn ce_matches_log_sum_exp_oracle() {
        let mut r = rng(1);
        for _ in 0..50 {
            let l = random_logits(5, &mut r);
            let label = r.random_range(0..5);
            // Direct log-sum-exp evaluation.
            let m = l.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + l.data().iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            let want = lse - l.data()[label];
            assert!((ce_loss(&l, label).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_label_out_of_range() {
        let l = Tensor::row(vec![0.0, 1.0]);
        assert!(matches!(ce_loss(&l, 2), Err(CasdError::Data(_))));
    }

    #[test]
    fn kl_identity_and_analytic() {
        let p = Tensor::row(vec![0.3, 0.7]);
        assert!(kl_div(&p, &p).unwrap().abs() < 1e-15);
        let hard = Tensor::row(vec![1.0, 0.0]);
        let soft = Tensor::row(vec![0.5, 0.5]);
        assert!((kl_div(&hard, &soft).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_summation_oracle() {
        let mut r = rng(2);
        for _ in 0..50 {
            let p = random_dist(6, &mut r);
            let q = random_dist(6, &mut r);
            let want: f64 = p
                .data()
                .iter()
                .zip(q.data())
                .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 })
                .sum();
            assert!((kl_div(&p, &q).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_rejects_unnormalized() {
        let p = Tensor::row(vec![0.5, 0.6]);
        let q = Tensor::row(vec![0.5, 0.5]);
        assert!(matches!(kl_div(&p, &q), Err(CasdError::Numeric(_))));
        assert!(matches!(kl_div(&q, &p), Err(CasdError::Numeric(_))));
    }

    #[test]
    fn js_zero_on_identical_logits() {
        let y = Tensor::row(vec![1.0, -0.5, 2.0]);
        assert!(js_logits_loss(&y, &y, 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn js_symmetric_and_bounded() {
        let mut r = rng(3);
        for _ in 0..10_000 {
            let a = random_logits(4, &mut r);
            let b = random_logits(4, &mut r);
            let ab = js_logits_loss(&a, &b, 1.0).unwrap();
            let ba = js_logits_loss(&b, &a, 1.0).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            assert!(ab >= 0.0 && ab <= std::f64::consts::LN_2 + 1e-12, "js {ab}");
        }
    }

    #[test]
    fn unc_loss_values() {
        let a = Tensor::row(vec![1.0, 2.0]);
        assert!(uncertainty_consistency_loss(&a, &a).unwrap().abs() < 1e-15);
        let s = Tensor::scalar(3.0);
        let t = Tensor::scalar(1.0);
        assert!((uncertainty_consistency_loss(&s, &t).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn unc_loss_matches_sum_of_squares_oracle() {
        let mut r = rng(4);
        for _ in 0..20 {
            let n = r.random_range(1..10);
            let a = Tensor::row((0..n).map(|_| r.random_range(-3.0..3.0)).collect());
            let b = Tensor::row((0..n).map(|_| r.random_range(-3.0..3.0)).collect());
            let want: f64 = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / n as f64;
            assert!((uncertainty_consistency_loss(&a, &b).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn unc_loss_shape_mismatch() {
        let a = Tensor::row(vec![1.0, 2.0]);
        let b = Tensor::row(vec![1.0]);
        assert!(matches!(
            uncertainty_consistency_loss(&a, &b),
            Err(CasdError::Dimension(_))
        ));
    }

    #[test]
    fn total_loss_arithmetic() {
        let w0 = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            temperature: 1.0,
        };
        assert_eq!(total_loss(1.3, 9.0, 9.0, &w0), 1.3);
        let w = LossWeights {
            alpha: 1.0,
            beta: 0.1,
            temperature: 1.0,
        };
        assert!((total_loss(1.0, 0.5, 2.0, &w) - 1.7).abs() < 1e-15);
    }

    #[test]
    fn total_gradient_decomposes_additively() {
        // Gradient of ce + a*js + b*unc w.r.t. the logits equals the
        // weighted sum of per-term gradients.
        let mut r = rng(5);
        let logits = random_logits(3, &mut r);
        let teacher = random_logits(3, &mut r);
        let u_teacher = Tensor::row(vec![0.4, 0.9, 0.1]);
        let (alpha, beta) = (0.7, 0.3);

        let grad_of = |with_ce: bool, with_js: bool, with_unc: bool| -> Vec<f64> {
            let mut tape = Tape::new();
            let l = tape.param(0, logits.clone());
            let mut terms: Vec<NodeId> = Vec::new();
            if with_ce {
                terms.push(tape.cross_entropy(l, 1).unwrap());
            }
            if with_js {
                let js = js_logits_nodes(&mut tape, l, &teacher, 1.0).unwrap();
                terms.push(tape.scale(js, alpha));
            }
            if with_unc {
                // Reuse the logits as a stand-in uncertainty grid.
                let unc = uncertainty_consistency_nodes(&mut tape, l, &u_teacher).unwrap();
                terms.push(tape.scale(unc, beta));
            }
            let mut loss = terms[0];
            for &t in &terms[1..] {
                loss = tape.add(loss, t).unwrap();
            }
            let g = tape.backward(loss).unwrap();
            g.grad(l).unwrap().data().to_vec()
        };

        let total = grad_of(true, true, true);
        let ce = grad_of(true, false, false);
        let js = grad_of(false, true, false);
        let unc = grad_of(false, false, true);
        for i in 0..3 {
            let sum = ce[i] + js[i] + unc[i];
            assert!((total[i] - sum).abs() < 1e-12, "component {i}");
        }
    }

    #[test]
    fn loss_weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { alpha: -0.1, beta: 0.0, temperature: 1.0 }.validate().is_err());
        assert!(LossWeights { alpha: 0.0, beta: 0.0, temperature: 0.0 }.validate().is_err());
    }
}
