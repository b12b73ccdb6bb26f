//! Per-modality representation pipeline and the full model forward pass:
//! temporal convolution, single-head self-attention with a residual
//! connection, evidential NIG heads, confidence-aware fusion, and the final
//! linear classifier over the pooled sampled embedding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CasdError, Result};
use crate::evidist::{nig_to_student_nodes, sample_standard_t_tensor, StudentTNodes};
use crate::fusion::{fuse_nodes, rrm_sample_nodes, FusionMode, FusionNodes};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Positivity floors for the evidential head outputs. Alpha is offset by
/// one on top of its floor so the aleatoric denominator alpha - 1 never
/// vanishes.
pub const BETA_FLOOR: f64 = 1e-4;
pub const DELTA_FLOOR: f64 = 1e-3;
pub const ALPHA_FLOOR: f64 = 1e-3;

pub const MODALITY_NAMES: [&str; 3] = ["l", "a", "v"];

/// Shared shape contract: every modality maps to the same (T, d_model) grid
/// so fusion is element-wise well-defined.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub d_in: [usize; 3],
    pub d_model: usize,
    pub t_len: usize,
    pub n_classes: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_in.iter().any(|&d| d == 0)
            || self.d_model == 0
            || self.t_len == 0
        {
            return Err(CasdError::Config(format!(
                "encoder extents must be positive: {self:?}"
            )));
        }
        if self.n_classes < 2 {
            return Err(CasdError::Config(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        Ok(())
    }
}

/// Flat named-parameter store for one network (3 encoders + classifier).
#[derive(Debug, Clone)]
pub struct CasdModel {
    pub cfg: EncoderConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

fn xavier(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("xavier shape")
}

impl CasdModel {
    fn build(
        cfg: &EncoderConfig,
        mut weight: impl FnMut(Vec<usize>, usize, usize) -> Tensor,
    ) -> (Vec<String>, Vec<Tensor>) {
        let d = cfg.d_model;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: String, t: Tensor| {
            names.push(name);
            tensors.push(t);
        };
        for (m, &d_in) in MODALITY_NAMES.iter().zip(cfg.d_in.iter()) {
            push(
                format!("{m}.conv.w"),
                weight(vec![3, d_in, d], 3 * d_in, d),
            );
            push(format!("{m}.conv.b"), Tensor::zeros(vec![1, d]));
            for proj in ["wq", "wk", "wv", "wo"] {
                push(format!("{m}.attn.{proj}"), weight(vec![d, d], d, d));
            }
            push(format!("{m}.head.w_gamma"), weight(vec![d, d], d, d));
            push(format!("{m}.head.b_gamma"), Tensor::zeros(vec![1, d]));
            push(format!("{m}.head.w_beta"), weight(vec![d, d], d, d));
            push(format!("{m}.head.b_beta"), Tensor::zeros(vec![1, d]));
            // The pooled evidence maps start at zero: a random projection
            // here can pin delta against its positivity floor, where the
            // softplus gradient vanishes and the fused scale blows up by
            // the 1/delta factor with no way back.
            push(format!("{m}.head.w_delta"), Tensor::zeros(vec![d, 1]));
            push(format!("{m}.head.b_delta"), Tensor::zeros(vec![1, 1]));
            push(format!("{m}.head.w_alpha"), Tensor::zeros(vec![d, 1]));
            push(format!("{m}.head.b_alpha"), Tensor::zeros(vec![1, 1]));
        }
        push(
            "cls.w".to_string(),
            weight(vec![d, cfg.n_classes], d, cfg.n_classes),
        );
        push("cls.b".to_string(), Tensor::zeros(vec![1, cfg.n_classes]));
        (names, tensors)
    }

    /// Uniform Xavier weights, zero biases. Zero head biases keep the
    /// initial alpha near 1.69 so the fused dof starts above 3.
    pub fn init(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (names, tensors) =
            Self::build(cfg, |shape, fan_in, fan_out| xavier(shape, fan_in, fan_out, rng));
        Ok(CasdModel {
            cfg: cfg.clone(),
            names,
            tensors,
        })
    }

    /// All-zero shell with the right layout, for checkpoint loading.
    pub fn zeros(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let (names, tensors) = Self::build(cfg, |shape, _, _| Tensor::zeros(shape));
        Ok(CasdModel {
            cfg: cfg.clone(),
            names,
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replace all tensors, validating names and shapes against this model.
    pub fn load_tensors(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.names.len() {
            return Err(CasdError::Data(format!(
                "checkpoint has {} tensors, model expects {}",
                entries.len(),
                self.names.len()
            )));
        }
        let mut tensors = Vec::with_capacity(entries.len());
        for ((name, tensor), (want_name, want)) in entries
            .into_iter()
            .zip(self.names.iter().zip(self.tensors.iter()))
        {
            if &name != want_name {
                return Err(CasdError::Data(format!(
                    "checkpoint tensor {name:?} where {want_name:?} expected"
                )));
            }
            if tensor.shape() != want.shape() {
                return Err(CasdError::Data(format!(
                    "checkpoint tensor {name} has shape {:?}, config implies {:?}",
                    tensor.shape(),
                    want.shape()
                )));
            }
            tensors.push(tensor);
        }
        self.tensors = tensors;
        Ok(())
    }
}

/// Node ids of one modality encoder's parameters on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncoderNodes {
    pub conv_w: NodeId,
    pub conv_b: NodeId,
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
    pub w_gamma: NodeId,
    pub b_gamma: NodeId,
    pub w_beta: NodeId,
    pub b_beta: NodeId,
    pub w_delta: NodeId,
    pub b_delta: NodeId,
    pub w_alpha: NodeId,
    pub b_alpha: NodeId,
}

/// Node ids of a full network's parameters on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ModelNodes {
    pub enc: [EncoderNodes; 3],
    pub cls_w: NodeId,
    pub cls_b: NodeId,
}

const PARAMS_PER_ENCODER: usize = 14;

fn register_with(tape: &mut Tape, model: &CasdModel, mut put: impl FnMut(&mut Tape, usize, Tensor) -> NodeId) -> ModelNodes {
    let mut ids = Vec::with_capacity(model.tensors.len());
    for (i, t) in model.tensors.iter().enumerate() {
        ids.push(put(tape, i, t.clone()));
    }
    let enc = std::array::from_fn(|m| {
        let base = m * PARAMS_PER_ENCODER;
        EncoderNodes {
            conv_w: ids[base],
            conv_b: ids[base + 1],
            wq: ids[base + 2],
            wk: ids[base + 3],
            wv: ids[base + 4],
            wo: ids[base + 5],
            w_gamma: ids[base + 6],
            b_gamma: ids[base + 7],
            w_beta: ids[base + 8],
            b_beta: ids[base + 9],
            w_delta: ids[base + 10],
            b_delta: ids[base + 11],
            w_alpha: ids[base + 12],
            b_alpha: ids[base + 13],
        }
    });
    ModelNodes {
        enc,
        cls_w: ids[3 * PARAMS_PER_ENCODER],
        cls_b: ids[3 * PARAMS_PER_ENCODER + 1],
    }
}

/// Register the model as trainable parameters (ids follow model order).
pub fn register_params(tape: &mut Tape, model: &CasdModel) -> ModelNodes {
    register_with(tape, model, |t, i, v| t.param(i, v))
}

/// Register the model as stopped-gradient constants (teacher targets).
pub fn register_constants(tape: &mut Tape, model: &CasdModel) -> ModelNodes {
    register_with(tape, model, |t, _i, v| t.leaf(v))
}

/// Encoder forward: z = F + Attn(F) with F the length-3 temporal
/// convolution of the input and Attn single-head scaled dot-product
/// attention over time. Returns the representation and the attention
/// weights (each row sums to one).
pub struct EncodeNodes {
    pub z: NodeId,
    pub attn_weights: NodeId,
}

pub fn encode_nodes(
    tape: &mut Tape,
    enc: &EncoderNodes,
    x: &Tensor,
    d_model: usize,
) -> Result<EncodeNodes> {
    let x_node = tape.leaf(x.clone());
    let f = tape.conv1d_same(x_node, enc.conv_w, enc.conv_b)?;
    let q = tape.matmul(f, enc.wq)?;
    let k = tape.matmul(f, enc.wk)?;
    let v = tape.matmul(f, enc.wv)?;
    let scores = tape.matmul_nt(q, k)?;
    let scaled = tape.scale(scores, 1.0 / (d_model as f64).sqrt());
    let attn_weights = tape.softmax_rows(scaled)?;
    let mixed = tape.matmul(attn_weights, v)?;
    let projected = tape.matmul(mixed, enc.wo)?;
    let z = tape.add(f, projected)?;
    Ok(EncodeNodes { z, attn_weights })
}

/// Evidential head nodes: per-element (gamma, beta) maps plus pooled scalar
/// (delta, alpha) evidence.
#[derive(Debug, Clone, Copy)]
pub struct NigNodes {
    pub gamma: NodeId,
    pub beta: NodeId,
    pub delta: NodeId,
    pub alpha: NodeId,
}

pub fn evidential_head_nodes(
    tape: &mut Tape,
    enc: &EncoderNodes,
    feat: NodeId,
) -> Result<NigNodes> {
    let gamma_lin = tape.matmul(feat, enc.w_gamma)?;
    let gamma = tape.add_row(gamma_lin, enc.b_gamma)?;

    let beta_lin = tape.matmul(feat, enc.w_beta)?;
    let beta_raw = tape.add_row(beta_lin, enc.b_beta)?;
    let beta_sp = tape.softplus(beta_raw);
    let beta = tape.add_const(beta_sp, BETA_FLOOR);

    let pooled = tape.mean_rows(feat)?;
    let delta_lin = tape.matmul(pooled, enc.w_delta)?;
    let delta_raw = tape.add(delta_lin, enc.b_delta)?;
    let delta_sp = tape.softplus(delta_raw);
    let delta = tape.add_const(delta_sp, DELTA_FLOOR);

    let alpha_lin = tape.matmul(pooled, enc.w_alpha)?;
    let alpha_raw = tape.add(alpha_lin, enc.b_alpha)?;
    let alpha_sp = tape.softplus(alpha_raw);
    let alpha = tape.add_const(alpha_sp, 1.0 + ALPHA_FLOOR);

    Ok(NigNodes {
        gamma,
        beta,
        delta,
        alpha,
    })
}

/// logits = mean-pooled representation through the linear classifier.
pub fn classify_nodes(
    tape: &mut Tape,
    cls_w: NodeId,
    cls_b: NodeId,
    s: NodeId,
) -> Result<NodeId> {
    let pooled = tape.mean_rows(s)?;
    let lin = tape.matmul(pooled, cls_w)?;
    tape.add(lin, cls_b)
}

/// Representation selection after fusion.
pub enum ForwardMode<'a> {
    /// Use the fused location directly (inference, and training variants
    /// without reparameterized sampling).
    Deterministic,
    /// Draw one standard-t per element at the fused dof.
    Sample(&'a mut ChaCha8Rng),
    /// Use a caller-provided draw (frozen sampling for gradient checks).
    SampleFrozen(&'a Tensor),
}

/// Full forward pass output.
pub struct ForwardOutput {
    pub logits: NodeId,
    pub fusion: FusionNodes,
    pub modality_t: [StudentTNodes; 3],
    pub nig: [NigNodes; 3],
    /// Representation fed to the classifier.
    pub s: NodeId,
}

/// Compose encode -> evidential head -> Student's-t -> fusion -> sampling ->
/// classifier for one sample (three modality tensors, frames already
/// zero-filled for whatever is missing).
pub fn forward_nodes(
    tape: &mut Tape,
    nodes: &ModelNodes,
    cfg: &EncoderConfig,
    x: [&Tensor; 3],
    fusion_mode: FusionMode,
    mode: ForwardMode<'_>,
) -> Result<ForwardOutput> {
    for (m, xm) in x.iter().enumerate() {
        let want = [cfg.t_len, cfg.d_in[m]];
        if xm.shape() != want {
            return Err(CasdError::Dimension(format!(
                "modality {} input {:?}, config implies {:?}",
                MODALITY_NAMES[m],
                xm.shape(),
                want
            )));
        }
    }
    let mut modality_t = Vec::with_capacity(3);
    let mut nig = Vec::with_capacity(3);
    for m in 0..3 {
        let enc = &nodes.enc[m];
        let e = encode_nodes(tape, enc, x[m], cfg.d_model)?;
        let p = evidential_head_nodes(tape, enc, e.z)?;
        let st = nig_to_student_nodes(tape, p.gamma, p.beta, p.delta, p.alpha)?;
        nig.push(p);
        modality_t.push(st);
    }
    let modality_t: [StudentTNodes; 3] = [modality_t[0], modality_t[1], modality_t[2]];
    let nig: [NigNodes; 3] = [nig[0], nig[1], nig[2]];
    let fusion = fuse_nodes(tape, &modality_t, fusion_mode)?;

    let s = match mode {
        ForwardMode::Deterministic => fusion.u_f,
        ForwardMode::Sample(rng) => {
            let v_f = tape.scalar_value(fusion.v_f);
            let t = sample_standard_t_tensor(
                tape.value(fusion.sigma_f).shape().to_vec(),
                v_f,
                rng,
            );
            rrm_sample_nodes(tape, fusion.u_f, fusion.sigma_f, &t)?
        }
        ForwardMode::SampleFrozen(t) => {
            rrm_sample_nodes(tape, fusion.u_f, fusion.sigma_f, t)?
        }
    };
    let logits = classify_nodes(tape, nodes.cls_w, nodes.cls_b, s)?;
    Ok(ForwardOutput {
        logits,
        fusion,
        modality_t,
        nig,
        s,
    })
}

/// Deterministic inference logits for one sample on a scratch tape.
pub fn infer_logits(
    model: &CasdModel,
    x: [&Tensor; 3],
    fusion_mode: FusionMode,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let nodes = register_constants(&mut tape, model);
    let out = forward_nodes(
        &mut tape,
        &nodes,
        &model.cfg,
        x,
        fusion_mode,
        ForwardMode::Deterministic,
    )?;
    Ok(tape.value(out.logits).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::rng::substream;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            d_in: [4, 3, 2],
            d_model: 4,
            t_len: 3,
            n_classes: 2,
        }
    }

    fn model(seed: u64) -> CasdModel {
        CasdModel::init(&small_cfg(), &mut substream(seed, &[20])).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(small_cfg().validate().is_ok());
        let mut bad = small_cfg();
        bad.n_classes = 1;
        assert!(bad.validate().is_err());
        bad = small_cfg();
        bad.d_model = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_input_zero_biases_gives_zero_representation() {
        let m = model(1);
        let mut tape = Tape::new();
        let nodes = register_constants(&mut tape, &m);
        let x = Tensor::zeros(vec![3, 4]);
        let e = encode_nodes(&mut tape, &nodes.enc[0], &x, m.cfg.d_model).unwrap();
        assert!(tape.value(e.z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_position_attention_is_value_projection() {
        // T=1: the single attention weight is 1, so z = F + F wv wo.
        let cfg = EncoderConfig {
            d_in: [2, 2, 2],
            d_model: 3,
            t_len: 1,
            n_classes: 2,
        };
        let m = CasdModel::init(&cfg, &mut substream(2, &[21])).unwrap();
        let mut tape = Tape::new();
        let nodes = register_constants(&mut tape, &m);
        let x = Tensor::matrix(1, 2, vec![0.4, -1.2]).unwrap();
        let e = encode_nodes(&mut tape, &nodes.enc[0], &x, cfg.d_model).unwrap();
        assert_eq!(tape.value(e.attn_weights).data(), &[1.0]);

        let f = tape.leaf(Tensor::zeros(vec![1, 3]));
        let _ = f; // recompute expected value directly below
        let xn = tape.leaf(x);
        let f2 = tape
            .conv1d_same(xn, nodes.enc[0].conv_w, nodes.enc[0].conv_b)
            .unwrap();
        let fv = tape.matmul(f2, nodes.enc[0].wv).unwrap();
        let fvo = tape.matmul(fv, nodes.enc[0].wo).unwrap();
        let want = tape.add(f2, fvo).unwrap();
        for (a, b) in tape
            .value(e.z)
            .data()
            .iter()
            .zip(tape.value(want).data().iter())
        {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let m = model(3);
        let mut tape = Tape::new();
        let nodes = register_constants(&mut tape, &m);
        let mut rng = substream(4, &[22]);
        let x = Tensor::new(
            vec![3, 4],
            (0..12).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let e = encode_nodes(&mut tape, &nodes.enc[0], &x, m.cfg.d_model).unwrap();
        let w = tape.value(e.attn_weights);
        for r in 0..w.rows() {
            let s: f64 = (0..w.cols()).map(|c| w.at2(r, c)).sum();
            assert!((s - 1.0).abs() < 1e-12, "row {r} sums to {s}");
        }
    }

    #[test]
    fn encode_output_shape_contract() {
        let m = model(5);
        let mut rng = substream(6, &[23]);
        for modality in 0..3 {
            let d_in = m.cfg.d_in[modality];
            let x = Tensor::new(
                vec![m.cfg.t_len, d_in],
                (0..m.cfg.t_len * d_in)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap();
            let mut tape = Tape::new();
            let nodes = register_constants(&mut tape, &m);
            let e = encode_nodes(&mut tape, &nodes.enc[modality], &x, m.cfg.d_model).unwrap();
            assert_eq!(tape.value(e.z).shape(), &[m.cfg.t_len, m.cfg.d_model]);
        }
    }

    #[test]
    fn head_values_at_zero_preactivations() {
        // Zero input with zero biases drives every raw preactivation to 0.
        let m = model(7);
        let mut tape = Tape::new();
        let nodes = register_constants(&mut tape, &m);
        let zero_feat = tape.leaf(Tensor::zeros(vec![3, 4]));
        let p = evidential_head_nodes(&mut tape, &nodes.enc[0], zero_feat).unwrap();
        let ln2 = std::f64::consts::LN_2;
        for &b in tape.value(p.beta).data() {
            assert!((b - (ln2 + BETA_FLOOR)).abs() < 1e-14);
        }
        assert!((tape.scalar_value(p.delta) - (ln2 + DELTA_FLOOR)).abs() < 1e-14);
        assert!((tape.scalar_value(p.alpha) - (1.0 + ln2 + ALPHA_FLOOR)).abs() < 1e-14);
        assert!(tape.value(p.gamma).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn head_constraints_hold_for_random_parameters() {
        let mut rng = substream(8, &[24]);
        for trial in 0..20 {
            let m = model(100 + trial);
            let x = Tensor::new(
                vec![3, 4],
                (0..12).map(|_| rng.random_range(-3.0..3.0)).collect(),
            )
            .unwrap();
            let mut tape = Tape::new();
            let nodes = register_constants(&mut tape, &m);
            let e = encode_nodes(&mut tape, &nodes.enc[0], &x, 4).unwrap();
            let p = evidential_head_nodes(&mut tape, &nodes.enc[0], e.z).unwrap();
            assert!(tape.value(p.beta).data().iter().all(|&b| b > 0.0));
            assert!(tape.scalar_value(p.delta) > 0.0);
            let alpha = tape.scalar_value(p.alpha);
            assert!(alpha > 1.0 && 2.0 * alpha > 2.0);
        }
    }

    #[test]
    fn classifier_geometry() {
        let mut tape = Tape::new();
        // Zero representation, zero bias -> zero logits.
        let w = tape.leaf(Tensor::matrix(2, 2, vec![0.3, -0.2, 0.7, 0.5]).unwrap());
        let b = tape.leaf(Tensor::row(vec![0.0, 0.0]));
        let s = tape.leaf(Tensor::zeros(vec![3, 2]));
        let logits = classify_nodes(&mut tape, w, b, s).unwrap();
        assert!(tape.value(logits).data().iter().all(|&v| v == 0.0));

        // A class column orthogonal to the pooled feature leaves that logit
        // at its bias.
        let w2 = tape.leaf(Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 2.0]).unwrap());
        let b2 = tape.leaf(Tensor::row(vec![0.9, -0.4]));
        let s2 = tape.leaf(Tensor::matrix(1, 2, vec![3.0, 0.0]).unwrap());
        let logits2 = classify_nodes(&mut tape, w2, b2, s2).unwrap();
        assert!((tape.value(logits2).at2(0, 0) - 0.9).abs() < 1e-15);

        // Random case against an explicit dot-product oracle.
        let mut rng = substream(9, &[25]);
        let wt = Tensor::new(vec![3, 4], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let bt = Tensor::row((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
        let st = Tensor::new(vec![2, 3], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (nw, nb, ns) = (tape.leaf(wt.clone()), tape.leaf(bt.clone()), tape.leaf(st.clone()));
        let logits3 = classify_nodes(&mut tape, nw, nb, ns).unwrap();
        for c in 0..4 {
            let mut want = bt.data()[c];
            for j in 0..3 {
                let pooled = (st.at2(0, j) + st.at2(1, j)) / 2.0;
                want += pooled * wt.at2(j, c);
            }
            assert!((tape.value(logits3).at2(0, c) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let m = model(10);
        let mut rng = substream(11, &[26]);
        let x = Tensor::new(
            vec![3, 4],
            (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let probe = Tensor::new(
            vec![3, 4],
            (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let params: Vec<Tensor> = m.tensors().to_vec();
        let cfg = m.cfg.clone();
        let err = gradcheck::grad_check(&params, gradcheck::FD_EPSILON, move |tape, ids| {
            let nodes = rebuild_model_nodes(ids);
            let e = encode_nodes(tape, &nodes.enc[0], &x, cfg.d_model)?;
            let p = evidential_head_nodes(tape, &nodes.enc[0], e.z)?;
            let pr = tape.leaf(probe.clone());
            let g = tape.mul(p.gamma, pr)?;
            let sg = tape.sum(g);
            let sb = tape.sum(p.beta);
            let t1 = tape.add(sg, sb)?;
            let t2 = tape.add(p.delta, p.alpha)?;
            let t2s = tape.sum(t2);
            tape.add(t1, t2s)
        })
        .unwrap();
        assert!(err <= gradcheck::GRAD_TOLERANCE, "head fd err {err}");
    }

    #[test]
    fn end_to_end_loss_gradient_with_frozen_sampling() {
        let m = model(12);
        let mut rng = substream(13, &[27]);
        let mk = |t: usize, d: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            Tensor::new(vec![t, d], (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap()
        };
        let xs = [
            mk(3, 4, &mut rng),
            mk(3, 3, &mut rng),
            mk(3, 2, &mut rng),
        ];
        let t_draw = mk(3, 4, &mut rng);
        let params: Vec<Tensor> = m.tensors().to_vec();
        let cfg = m.cfg.clone();
        let err = gradcheck::grad_check(&params, gradcheck::FD_EPSILON, move |tape, ids| {
            let nodes = rebuild_model_nodes(ids);
            let out = forward_nodes(
                tape,
                &nodes,
                &cfg,
                [&xs[0], &xs[1], &xs[2]],
                FusionMode::Confidence { normalized: false },
                ForwardMode::SampleFrozen(&t_draw),
            )?;
            tape.cross_entropy(out.logits, 1)
        })
        .unwrap();
        assert!(err <= gradcheck::GRAD_TOLERANCE, "end-to-end fd err {err}");
    }

    /// Rebuild the node-id struct from the flat ordered param ids.
    fn rebuild_model_nodes(ids: &[NodeId]) -> ModelNodes {
        let enc = std::array::from_fn(|m| {
            let base = m * PARAMS_PER_ENCODER;
            EncoderNodes {
                conv_w: ids[base],
                conv_b: ids[base + 1],
                wq: ids[base + 2],
                wk: ids[base + 3],
                wv: ids[base + 4],
                wo: ids[base + 5],
                w_gamma: ids[base + 6],
                b_gamma: ids[base + 7],
                w_beta: ids[base + 8],
                b_beta: ids[base + 9],
                w_delta: ids[base + 10],
                b_delta: ids[base + 11],
                w_alpha: ids[base + 12],
                b_alpha: ids[base + 13],
            }
        });
        ModelNodes {
            enc,
            cls_w: ids[3 * PARAMS_PER_ENCODER],
            cls_b: ids[3 * PARAMS_PER_ENCODER + 1],
        }
    }
}
