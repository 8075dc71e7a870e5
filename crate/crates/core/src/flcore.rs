//! Federated learning math: weight vectors, synthetic regression data,
//! full-batch gradient descent on mean squared error, and FedAvg.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
    shape: Vec<usize>,
}

impl WeightVector {
    pub fn new(values: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Input(format!(
                "shape {shape:?} holds {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("weight {i} is not finite")));
        }
        Ok(Self { values, shape })
    }

    /// Rank-1 vector.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![n])
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            shape: vec![dim],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `u32le rank ‖ u64le dims… ‖ f64le values…`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * self.shape.len() + 8 * self.values.len());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("weight vector: {m}"));
        if bytes.len() < 4 {
            return Err(fmt("missing rank"));
        }
        let rank = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        let header = rank
            .checked_mul(8)
            .and_then(|n| n.checked_add(4))
            .filter(|&n| n <= bytes.len())
            .ok_or_else(|| fmt("truncated shape"))?;
        let shape: Vec<usize> = bytes[4..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
            .collect();
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| fmt("shape overflows"))?;
        let body = &bytes[header..];
        if count.checked_mul(8) != Some(body.len()) {
            return Err(fmt(&format!(
                "expected {count} values, found {} bytes",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::new(values, shape).map_err(|e| fmt(&e.to_string()))
    }
}

/// Row-major feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || labels.is_empty() {
            return Err(Error::Input("dataset needs at least one row and one column".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Input(format!(
                "{} features do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self { features, labels, dim })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Stacks datasets of equal width.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for p in parts {
            match dim {
                None => dim = Some(p.dim),
                Some(d) if d != p.dim => {
                    return Err(Error::Input("cannot pool datasets of different widths".into()))
                }
                _ => {}
            }
            features.extend_from_slice(&p.features);
            labels.extend_from_slice(&p.labels);
        }
        Dataset::new(features, labels, dim.unwrap_or(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearRegression,
}

/// What a model owner asks workers to do each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDescription {
    pub model_kind: ModelKind,
    pub learning_rate: f64,
    pub local_epochs: u32,
    pub rounds: u32,
    pub selection_fraction: f64,
    pub input_dim: usize,
}

impl TrainingDescription {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted: it is the null-training control.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Input(format!("learning_rate {} must be finite and >= 0", self.learning_rate)));
        }
        if self.local_epochs == 0 {
            return Err(Error::Input("local_epochs must be positive".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Input("rounds must be positive".into()));
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return Err(Error::Input(format!(
                "selection_fraction {} must be in (0, 1]",
                self.selection_fraction
            )));
        }
        if self.input_dim == 0 {
            return Err(Error::Input("input_dim must be positive".into()));
        }
        Ok(())
    }

    /// Canonical encoding used inside ledger payloads.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 8 + 4 + 4 + 8 + 8);
        out.push(match self.model_kind {
            ModelKind::LinearRegression => 0,
        });
        out.extend_from_slice(&self.learning_rate.to_be_bytes());
        out.extend_from_slice(&self.local_epochs.to_be_bytes());
        out.extend_from_slice(&self.rounds.to_be_bytes());
        out.extend_from_slice(&self.selection_fraction.to_be_bytes());
        out.extend_from_slice(&(self.input_dim as u64).to_be_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() != 33 {
            return Err(Error::Format(format!("training description is {} bytes, expected 33", b.len())));
        }
        let model_kind = match b[0] {
            0 => ModelKind::LinearRegression,
            k => return Err(Error::Format(format!("unknown model kind {k}"))),
        };
        Ok(Self {
            model_kind,
            learning_rate: f64::from_be_bytes(b[1..9].try_into().expect("8 bytes")),
            local_epochs: u32::from_be_bytes(b[9..13].try_into().expect("4 bytes")),
            rounds: u32::from_be_bytes(b[13..17].try_into().expect("4 bytes")),
            selection_fraction: f64::from_be_bytes(b[17..25].try_into().expect("8 bytes")),
            input_dim: u64::from_be_bytes(b[25..33].try_into().expect("8 bytes")) as usize,
        })
    }
}

/// Standard-normal features, labels `x·w + N(0, sigma²)`. Deterministic per seed.
pub fn synthesize_dataset(
    seed: u64,
    rows: usize,
    dim: usize,
    true_weights: &WeightVector,
    noise_sigma: f64,
) -> Result<Dataset> {
    if rows == 0 || dim == 0 {
        return Err(Error::Input("dataset dimensions must be positive".into()));
    }
    if true_weights.len() != dim {
        return Err(Error::Input(format!(
            "true weights have {} entries, dataset width is {dim}",
            true_weights.len()
        )));
    }
    let noise = Normal::new(0.0, noise_sigma)
        .map_err(|e| Error::Input(format!("noise_sigma {noise_sigma}: {e}")))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(rows * dim);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let start = features.len();
        for _ in 0..dim {
            features.push(StandardNormal.sample(&mut rng));
        }
        let y = dot(&features[start..], true_weights.values()) + noise.sample(&mut rng);
        labels.push(y);
    }
    Dataset::new(features, labels, dim)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_compatible(w: &WeightVector, data: &Dataset) -> Result<()> {
    if w.len() != data.dim() {
        return Err(Error::Input(format!(
            "weights have {} entries, data has width {}",
            w.len(),
            data.dim()
        )));
    }
    Ok(())
}

/// Mean squared error `(1/m) Σ (w·xᵢ − yᵢ)²`.
pub fn loss(w: &WeightVector, data: &Dataset) -> Result<f64> {
    check_compatible(w, data)?;
    let m = data.rows();
    let sse: f64 = (0..m)
        .map(|i| {
            let r = dot(data.row(i), w.values()) - data.labels()[i];
            r * r
        })
        .sum();
    Ok(sse / m as f64)
}

/// Gradient of [`loss`]: `(2/m) Xᵀ(Xw − y)`.
pub fn mse_gradient(w: &WeightVector, data: &Dataset) -> Result<Vec<f64>> {
    check_compatible(w, data)?;
    Ok(gradient(w.values(), data))
}

fn gradient(w: &[f64], data: &Dataset) -> Vec<f64> {
    let m = data.rows();
    let mut g = vec![0.0; data.dim()];
    for i in 0..m {
        let x = data.row(i);
        let r = dot(x, w) - data.labels()[i];
        for (gj, xj) in g.iter_mut().zip(x) {
            *gj += r * xj;
        }
    }
    let scale = 2.0 / m as f64;
    g.iter_mut().for_each(|v| *v *= scale);
    g
}

/// `local_epochs` full-batch gradient steps. The input is left untouched.
pub fn local_train(
    w: &WeightVector,
    data: &Dataset,
    plan: &TrainingDescription,
) -> Result<WeightVector> {
    plan.validate()?;
    check_compatible(w, data)?;
    let mut cur = w.values().to_vec();
    for epoch in 0..plan.local_epochs as usize {
        let g = gradient(&cur, data);
        for (c, gj) in cur.iter_mut().zip(&g) {
            *c -= plan.learning_rate * gj;
        }
        if let Some(j) = cur.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                epoch,
                detail: format!("weight {j} became {}", cur[j]),
            });
        }
    }
    WeightVector::new(cur, w.shape().to_vec())
}

/// Unweighted element-wise mean, summed left to right in input order.
pub fn aggregate(updates: &[WeightVector]) -> Result<WeightVector> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Input("nothing to aggregate".into()))?;
    if let Some(bad) = updates.iter().find(|u| u.shape() != first.shape()) {
        return Err(Error::Input(format!(
            "shape mismatch: {:?} vs {:?}",
            first.shape(),
            bad.shape()
        )));
    }
    let n = updates.len() as f64;
    let values = (0..first.len())
        .map(|j| {
            let mut sum = 0.0;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for u in updates {
                let v = u.values()[j];
                sum += v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            // Rounding can push sum/n a ulp outside the inputs' range.
            (sum / n).clamp(lo, hi)
        })
        .collect();
    WeightVector::new(values, first.shape().to_vec())
}
