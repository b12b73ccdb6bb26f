//! Central finite-difference verification of the reverse-mode gradients.

use rand::Rng;

use crate::error::{CasdError, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// |a-b| / max(|a|, |b|, 1e-8).
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare reverse-mode gradients of a scalar-valued graph against central
/// finite differences over every parameter entry. `build` must construct the
/// same graph for any parameter values (sampling already frozen). Returns the
/// worst relative error.
pub fn grad_check<F>(params: &[Tensor], epsilon: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    grad_check_scaled(params, epsilon, 1.0, build)
}

/// As [`grad_check`], with the analytic gradients multiplied by
/// `analytic_scale` before comparison. A scale other than 1.0 simulates a
/// corrupted backward rule so the harness itself can be tested.
pub fn grad_check_scaled<F>(
    params: &[Tensor],
    epsilon: f64,
    analytic_scale: f64,
    build: F,
) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if !(epsilon > 0.0) {
        return Err(CasdError::Config(format!(
            "finite-difference epsilon must be positive, got {epsilon}"
        )));
    }
    let mut tape = Tape::new();
    let nodes: Vec<NodeId> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(i, p.clone()))
        .collect();
    let loss = build(&mut tape, &nodes)?;
    tape.value(loss).check_finite("grad_check loss")?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = nodes
        .iter()
        .zip(params.iter())
        .map(|(&n, p)| {
            grads
                .grad(n)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
        })
        .collect();

    let eval = |theta: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let ns: Vec<NodeId> = theta
            .iter()
            .enumerate()
            .map(|(i, p)| t.param(i, p.clone()))
            .collect();
        let l = build(&mut t, &ns)?;
        let v = t.scalar_value(l);
        if !v.is_finite() {
            return Err(CasdError::Numeric(
                "non-finite loss during finite-difference evaluation".into(),
            ));
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    let mut theta: Vec<Tensor> = params.to_vec();
    for pi in 0..params.len() {
        for j in 0..params[pi].numel() {
            let orig = theta[pi].data()[j];
            theta[pi].data_mut()[j] = orig + epsilon;
            let f_plus = eval(&theta)?;
            theta[pi].data_mut()[j] = orig - epsilon;
            let f_minus = eval(&theta)?;
            theta[pi].data_mut()[j] = orig;
            let fd = (f_plus - f_minus) / (2.0 * epsilon);
            let an = analytic[pi].data()[j] * analytic_scale;
            worst = worst.max(relative_error(an, fd));
        }
    }
    Ok(worst)
}

/// One named primitive-gradient check result.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
}

/// Step used for all central differences in this crate.
pub const FD_EPSILON: f64 = 1e-5;

/// Gradient tolerance every primitive and the end-to-end loss must meet.
pub const GRAD_TOLERANCE: f64 = 1e-4;

type Builder = Box<dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>>;

fn rand_dim(rng: &mut impl Rng) -> usize {
    rng.random_range(1..=8)
}

fn rand_tensor(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("random tensor shape")
}

/// Contract an op output against a fixed random probe so every check reduces
/// to a scalar loss without hiding gradient components.
fn probe_loss(tape: &mut Tape, out: NodeId, probe: &Tensor) -> Result<NodeId> {
    let p = tape.leaf(probe.clone());
    let prod = tape.mul(out, p)?;
    Ok(tape.sum(prod))
}

fn probed(probe: Tensor, f: impl Fn(&mut Tape, &[NodeId]) -> Result<NodeId> + 'static) -> Builder {
    Box::new(move |t, n| {
        let y = f(t, n)?;
        probe_loss(t, y, &probe)
    })
}

/// The list of per-primitive checks over randomized shapes (extents 1..=8).
fn primitive_cases(seed: u64) -> Vec<(String, Vec<Tensor>, Builder)> {
    let mut rng = crate::rng::substream(seed, &[0x6A7D]);
    let mut cases: Vec<(String, Vec<Tensor>, Builder)> = Vec::new();

    let (r, c) = (rand_dim(&mut rng), rand_dim(&mut rng));
    let probe = rand_tensor(vec![r, c], -1.0, 1.0, &mut rng);
    let a = rand_tensor(vec![r, c], -1.0, 1.0, &mut rng);
    let b = rand_tensor(vec![r, c], -1.0, 1.0, &mut rng);
    // Denominators and sqrt/log inputs live in [0.5, 1.5] to stay away from
    // the singularity at zero under the fd perturbation.
    let positive = rand_tensor(vec![r, c], 0.5, 1.5, &mut rng);
    let positive2 = rand_tensor(vec![r, c], 0.5, 1.5, &mut rng);

    cases.push((
        "add".into(),
        vec![a.clone(), b.clone()],
        probed(probe.clone(), |t, n| t.add(n[0], n[1])),
    ));
    cases.push((
        "sub".into(),
        vec![a.clone(), b.clone()],
        probed(probe.clone(), |t, n| t.sub(n[0], n[1])),
    ));
    cases.push((
        "mul".into(),
        vec![a.clone(), b.clone()],
        probed(probe.clone(), |t, n| t.mul(n[0], n[1])),
    ));
    cases.push((
        "div".into(),
        vec![a.clone(), positive.clone()],
        probed(probe.clone(), |t, n| t.div(n[0], n[1])),
    ));
    cases.push((
        "scale".into(),
        vec![a.clone()],
        probed(probe.clone(), |t, n| Ok(t.scale(n[0], -1.7))),
    ));
    cases.push((
        "add_const".into(),
        vec![a.clone()],
        probed(probe.clone(), |t, n| Ok(t.add_const(n[0], 0.3))),
    ));
    cases.push((
        "add_row".into(),
        vec![a.clone(), rand_tensor(vec![1, c], -1.0, 1.0, &mut rng)],
        probed(probe.clone(), |t, n| t.add_row(n[0], n[1])),
    ));

    let k = rand_dim(&mut rng);
    let ma = rand_tensor(vec![r, k], -1.0, 1.0, &mut rng);
    let mb = rand_tensor(vec![k, c], -1.0, 1.0, &mut rng);
    cases.push((
        "matmul".into(),
        vec![ma.clone(), mb],
        probed(probe.clone(), |t, n| t.matmul(n[0], n[1])),
    ));
    let mbt = rand_tensor(vec![c, k], -1.0, 1.0, &mut rng);
    cases.push((
        "matmul_nt".into(),
        vec![ma, mbt],
        probed(probe.clone(), |t, n| t.matmul_nt(n[0], n[1])),
    ));

    let d_in = rand_dim(&mut rng);
    let cx = rand_tensor(vec![r, d_in], -1.0, 1.0, &mut rng);
    let cw = rand_tensor(vec![3, d_in, c], -1.0, 1.0, &mut rng);
    let cb = rand_tensor(vec![1, c], -1.0, 1.0, &mut rng);
    cases.push((
        "conv1d_same".into(),
        vec![cx, cw, cb],
        probed(probe.clone(), |t, n| t.conv1d_same(n[0], n[1], n[2])),
    ));

    cases.push((
        "softplus".into(),
        vec![a.clone()],
        probed(probe.clone(), |t, n| Ok(t.softplus(n[0]))),
    ));
    cases.push((
        "log".into(),
        vec![positive.clone()],
        probed(probe.clone(), |t, n| Ok(t.log(n[0]))),
    ));
    cases.push((
        "sqrt".into(),
        vec![positive.clone()],
        probed(probe.clone(), |t, n| Ok(t.sqrt(n[0]))),
    ));
    cases.push((
        "softmax".into(),
        vec![a.clone()],
        probed(probe.clone(), |t, n| t.softmax_rows(n[0])),
    ));
    {
        let row_probe = rand_tensor(vec![1, c], -1.0, 1.0, &mut rng);
        cases.push((
            "mean_pool".into(),
            vec![a.clone()],
            probed(row_probe, |t, n| t.mean_rows(n[0])),
        ));
    }
    cases.push((
        "sum".into(),
        vec![a.clone()],
        Box::new(|t, n| Ok(t.sum(n[0]))),
    ));
    cases.push((
        "mean".into(),
        vec![a.clone()],
        Box::new(|t, n| Ok(t.mean(n[0]))),
    ));
    cases.push((
        "scalar_mul".into(),
        vec![Tensor::scalar(rng.random_range(0.5..1.5)), a.clone()],
        probed(probe.clone(), |t, n| t.scalar_mul(n[0], n[1])),
    ));
    // min2/clamp kinks: keep operands separated so the fd step cannot cross
    // the non-differentiable point.
    cases.push((
        "min2".into(),
        vec![positive.clone(), positive2.map(|v| v + 2.0)],
        probed(probe.clone(), |t, n| t.min2(n[0], n[1])),
    ));
    cases.push((
        "clamp_min".into(),
        vec![positive.map(|v| v + 1.0)],
        probed(probe.clone(), |t, n| Ok(t.clamp_min(n[0], 0.25))),
    ));

    let n_classes = rng.random_range(2..=8);
    let logits = rand_tensor(vec![1, n_classes], -2.0, 2.0, &mut rng);
    let label = rng.random_range(0..n_classes);
    cases.push((
        "cross_entropy".into(),
        vec![logits],
        Box::new(move |t, n| t.cross_entropy(n[0], label)),
    ));

    cases
}

/// Run finite-difference checks over every tape primitive on randomized
/// shapes. `analytic_scale != 1.0` injects a deliberate fault so the failure
/// path can be exercised.
pub fn check_primitives(seed: u64, analytic_scale: f64) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for (name, params, build) in primitive_cases(seed) {
        let max_rel_err = grad_check_scaled(&params, FD_EPSILON, analytic_scale, build)?;
        reports.push(CheckReport { name, max_rel_err });
    }
    Ok(reports)
}
