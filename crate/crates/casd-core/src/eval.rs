//! Missing-modality evaluation: named test conditions and the deterministic
//! inference path (student only, fused location, no sampling).

use rand::Rng;

use crate::data::{Dataset, Sample};
use crate::encoder::{infer_logits, CasdModel};
use crate::error::{CasdError, Result};
use crate::fusion::FusionMode;
use crate::metrics::{classification_metrics, Metrics};
use crate::rng::{stream, substream};
use crate::tensor::Tensor;

/// A test-time corruption condition: which modalities are present, or a
/// frame-level drop ratio applied to every modality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Mask([bool; 3]),
    IntraDrop(f64),
}

/// The six partial-modality masks in reporting order, then the full mask.
pub const PARTIAL_MASKS: [[bool; 3]; 6] = [
    [true, false, false],
    [false, true, false],
    [false, false, true],
    [true, true, false],
    [true, false, true],
    [false, true, true],
];

pub const FULL_MASK: [bool; 3] = [true, true, true];

impl Condition {
    pub fn name(&self) -> String {
        match self {
            Condition::Mask(m) => {
                let parts: Vec<&str> = ["l", "a", "v"]
                    .iter()
                    .zip(m.iter())
                    .filter(|(_, &on)| on)
                    .map(|(&s, _)| s)
                    .collect();
                format!("{{{}}}", parts.join(","))
            }
            Condition::IntraDrop(p) => format!("p={p}"),
        }
    }

    /// Parse "{l,a}" style masks or "p=0.3" drop ratios.
    pub fn parse(s: &str) -> Result<Condition> {
        let valid = || {
            let mut names: Vec<String> = PARTIAL_MASKS
                .iter()
                .map(|m| Condition::Mask(*m).name())
                .collect();
            names.push(Condition::Mask(FULL_MASK).name());
            names.push("p=<ratio in [0,1]>".to_string());
            names.join(", ")
        };
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("p=") {
            let p: f64 = rest.parse().map_err(|_| {
                CasdError::Usage(format!("bad drop ratio {rest:?}; valid conditions: {}", valid()))
            })?;
            if !(0.0..=1.0).contains(&p) {
                return Err(CasdError::Usage(format!(
                    "drop ratio {p} outside [0, 1]"
                )));
            }
            return Ok(Condition::IntraDrop(p));
        }
        let inner = s
            .strip_prefix('{')
            .and_then(|t| t.strip_suffix('}'))
            .ok_or_else(|| {
                CasdError::Usage(format!("unknown condition {s:?}; valid conditions: {}", valid()))
            })?;
        let mut mask = [false; 3];
        for part in inner.split(',') {
            match part.trim() {
                "l" => mask[0] = true,
                "a" => mask[1] = true,
                "v" => mask[2] = true,
                other => {
                    return Err(CasdError::Usage(format!(
                        "unknown modality {other:?} in condition {s:?}; valid conditions: {}",
                        valid()
                    )))
                }
            }
        }
        if mask == [false; 3] {
            return Err(CasdError::Usage(format!("empty mask in condition {s:?}")));
        }
        Ok(Condition::Mask(mask))
    }
}

/// Apply a condition to one sample. Intra-modality drops are seeded from the
/// condition and sample index alone, so repeated evaluation is bit-identical.
pub fn apply_condition(sample: &Sample, condition: Condition, sample_idx: usize) -> Sample {
    match condition {
        Condition::Mask(mask) => {
            let x = std::array::from_fn(|m| {
                if mask[m] {
                    sample.x[m].clone()
                } else {
                    Tensor::zeros(sample.x[m].shape().to_vec())
                }
            });
            Sample {
                x,
                label: sample.label,
            }
        }
        Condition::IntraDrop(p) => {
            let mut rng = substream(
                0xE7A1_0000 ^ p.to_bits(),
                &[stream::EVAL, sample_idx as u64],
            );
            let x = std::array::from_fn(|m| {
                let mut t = sample.x[m].clone();
                let (rows, cols) = (t.rows(), t.cols());
                for r in 0..rows {
                    if rng.random_range(0.0..1.0) < p {
                        for c in 0..cols {
                            t.data_mut()[r * cols + c] = 0.0;
                        }
                    }
                }
                t
            });
            Sample {
                x,
                label: sample.label,
            }
        }
    }
}

/// Evaluate a model on a dataset under one condition. Inference runs the
/// deterministic path (fused location, no sampling).
pub fn evaluate(
    model: &CasdModel,
    data: &Dataset,
    condition: Condition,
    fusion_mode: FusionMode,
) -> Result<Metrics> {
    if data.is_empty() {
        return Err(CasdError::Data("evaluate on an empty dataset".into()));
    }
    let mut labels = Vec::with_capacity(data.len());
    let mut predictions = Vec::with_capacity(data.len());
    for (i, sample) in data.samples.iter().enumerate() {
        let corrupted = apply_condition(sample, condition, i);
        let logits = infer_logits(
            model,
            [&corrupted.x[0], &corrupted.x[1], &corrupted.x[2]],
            fusion_mode,
        )?;
        labels.push(sample.label);
        predictions.push(argmax(logits.data()));
    }
    classification_metrics(&labels, &predictions, model.cfg.n_classes)
}

/// Index of the largest logit; ties go to the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
