//! Synthetic three-modality sequence data with controllable per-modality
//! informativeness, JSONL ingestion/export, and seeded splitting.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CasdError, Result};
use crate::rng::{stream, substream};
use crate::tensor::Tensor;

/// Generator specification. Each class gets fixed random prototype vectors
/// per modality; a sample is the prototype broadcast over time plus
/// temporally smoothed noise scaled by 1/snr. snr = 0 omits the prototype
/// entirely, so that modality carries no label information by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub t_len: usize,
    pub d_in: [usize; 3],
    pub snr: [f64; 3],
    pub proto_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 2,
            n_train: 600,
            n_val: 100,
            n_test: 300,
            t_len: 16,
            d_in: [12, 8, 8],
            snr: [3.0, 1.5, 1.0],
            proto_scale: 1.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(CasdError::Config(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(CasdError::Config("every split must be non-empty".into()));
        }
        if self.t_len == 0 || self.d_in.iter().any(|&d| d == 0) {
            return Err(CasdError::Config(format!(
                "extents must be positive: t_len={}, d_in={:?}",
                self.t_len, self.d_in
            )));
        }
        if self.snr.iter().any(|&s| s < 0.0) || !(self.proto_scale > 0.0) {
            return Err(CasdError::Config(format!(
                "snr must be >= 0 and prototype scale positive: snr={:?}, scale={}",
                self.snr, self.proto_scale
            )));
        }
        Ok(())
    }
}

/// One multimodal sequence sample with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// (language, audio, vision) sequence tensors, each t_len x d_in[m].
    pub x: [Tensor; 3],
    pub label: usize,
}

/// Ordered, immutable collection of samples.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: String,
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Three-tap moving average over time with zero boundaries; frame dropping
/// then destroys information gradually instead of per-frame independently.
fn smooth_rows(noise: &mut [f64], t_len: usize, d: usize) {
    let orig = noise.to_vec();
    for t in 0..t_len {
        for j in 0..d {
            let mut acc = orig[t * d + j];
            if t > 0 {
                acc += orig[(t - 1) * d + j];
            }
            if t + 1 < t_len {
                acc += orig[(t + 1) * d + j];
            }
            noise[t * d + j] = acc / 3.0;
        }
    }
}

fn class_prototypes(spec: &SyntheticSpec) -> Vec<[Vec<f64>; 3]> {
    let mut rng = substream(spec.seed, &[stream::DATA, 0]);
    (0..spec.n_classes)
        .map(|_| {
            std::array::from_fn(|m| {
                (0..spec.d_in[m])
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * spec.proto_scale
                    })
                    .collect()
            })
        })
        .collect()
}

fn make_sample(
    spec: &SyntheticSpec,
    prototypes: &[[Vec<f64>; 3]],
    split_tag: u64,
    index: usize,
) -> Sample {
    let label = index % spec.n_classes;
    let mut rng = substream(spec.seed, &[stream::DATA, split_tag, index as u64 + 1]);
    let x = std::array::from_fn(|m| {
        let (t_len, d) = (spec.t_len, spec.d_in[m]);
        let mut noise: Vec<f64> = (0..t_len * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        smooth_rows(&mut noise, t_len, d);
        let snr = spec.snr[m];
        let mut data = vec![0.0; t_len * d];
        for t in 0..t_len {
            for j in 0..d {
                data[t * d + j] = if snr == 0.0 {
                    noise[t * d + j]
                } else {
                    prototypes[label][m][j] + noise[t * d + j] / snr
                };
            }
        }
        Tensor::new(vec![t_len, d], data).expect("sample shape")
    });
    Sample { x, label }
}

/// Generate disjoint, seed-reproducible train/val/test datasets.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let prototypes = class_prototypes(spec);
    let provenance = serde_json::to_string(spec).expect("spec serializes");
    let mut build = |name: &str, tag: u64, n: usize| Dataset {
        samples: (0..n)
            .map(|i| make_sample(spec, &prototypes, tag, i))
            .collect(),
        split: name.to_string(),
        provenance: provenance.clone(),
    };
    Ok((
        build("train", 1, spec.n_train),
        build("val", 2, spec.n_val),
        build("test", 3, spec.n_test),
    ))
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    label: i64,
    #[serde(rename = "L")]
    l: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
}

fn tensor_to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|r| (0..t.cols()).map(|c| t.at2(r, c)).collect())
        .collect()
}

/// Write one JSON record per line: {"label": int, "L": [[..]], "A": .., "V": ..}.
pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    for s in &dataset.samples {
        let rec = JsonRecord {
            label: s.label as i64,
            l: tensor_to_rows(&s.x[0]),
            a: tensor_to_rows(&s.x[1]),
            v: tensor_to_rows(&s.x[2]),
        };
        serde_json::to_writer(&mut out, &rec)
            .map_err(|e| CasdError::Data(format!("{}: {e}", path.display())))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn rows_to_tensor(
    rows: &[Vec<f64>],
    t_len: usize,
    d: usize,
    what: &str,
    line: usize,
) -> Result<Tensor> {
    let mut data = vec![0.0; t_len * d];
    for (t, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(CasdError::Data(format!(
                "line {line}: modality {what} row {t} has {} features, expected {d}",
                row.len()
            )));
        }
        if t >= t_len {
            break; // truncate to the configured length
        }
        data[t * d..(t + 1) * d].copy_from_slice(row);
    }
    Tensor::new(vec![t_len, d], data)
}

/// Load a JSONL dataset, aligning every sequence to `t_len` frames by
/// truncation or zero-padding and validating feature widths and labels.
pub fn load_jsonl(
    path: &Path,
    t_len: usize,
    d_in: [usize; 3],
    n_classes: usize,
) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| CasdError::Data(format!("{}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line)
            .map_err(|e| CasdError::Data(format!("line {line_no}: {e}")))?;
        if rec.label < 0 || rec.label as usize >= n_classes {
            return Err(CasdError::Data(format!(
                "line {line_no}: label {} outside [0, {n_classes})",
                rec.label
            )));
        }
        let x = [
            rows_to_tensor(&rec.l, t_len, d_in[0], "L", line_no)?,
            rows_to_tensor(&rec.a, t_len, d_in[1], "A", line_no)?,
            rows_to_tensor(&rec.v, t_len, d_in[2], "V", line_no)?,
        ];
        samples.push(Sample {
            x,
            label: rec.label as usize,
        });
    }
    if samples.is_empty() {
        return Err(CasdError::Data(format!(
            "{}: no records",
            path.display()
        )));
    }
    Ok(Dataset {
        samples,
        split: "loaded".to_string(),
        provenance: path.display().to_string(),
    })
}

/// Seeded shuffle followed by partition into three disjoint, exhaustive
/// splits with the given positive ratios (summing to one).
pub fn split(
    dataset: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (r1, r2, r3) = ratios;
    if r1 <= 0.0 || r2 <= 0.0 || r3 <= 0.0 {
        return Err(CasdError::Config(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    if (r1 + r2 + r3 - 1.0).abs() > 1e-9 {
        return Err(CasdError::Config(format!(
            "split ratios must sum to 1, got {}",
            r1 + r2 + r3
        )));
    }
    let n = dataset.len();
    let n1 = (n as f64 * r1).round() as usize;
    let n2 = (n as f64 * r2).round() as usize;
    if n1 == 0 || n2 == 0 || n1 + n2 >= n {
        return Err(CasdError::Config(format!(
            "split sizes ({n1}, {n2}, {}) leave an empty split",
            n.saturating_sub(n1 + n2)
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, &[stream::DATA, 17]);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let take = |range: std::ops::Range<usize>, name: &str| Dataset {
        samples: range
            .map(|k| dataset.samples[order[k]].clone())
            .collect(),
        split: name.to_string(),
        provenance: dataset.provenance.clone(),
    };
    Ok((
        take(0..n1, "train"),
        take(n1..n1 + n2, "val"),
        take(n1 + n2..n, "test"),
    ))
}
