use std::collections::HashMap;

use crate::datastream::ExampleId;
use crate::error::{Error, Result};

/// Allowed deviation of an embedding's Euclidean norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Unit-norm embeddings, row-major, with the source id of each row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    rows: Vec<f64>,
    dim: usize,
    source_ids: Vec<ExampleId>,
}

impl EmbeddingBatch {
    pub fn new(rows: Vec<f64>, dim: usize, source_ids: Vec<ExampleId>) -> Result<Self> {
        if dim == 0 || rows.len() != dim * source_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} embeddings of dim {dim}",
                rows.len(),
                source_ids.len()
            )));
        }
        for (index, row) in rows.chunks_exact(dim).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE || !norm.is_finite() {
                return Err(Error::NotNormalized { index, norm });
            }
        }
        Ok(Self { rows, dim, source_ids })
    }

    /// Widens projector outputs to f64 and renormalizes them there, removing
    /// the single-precision rounding left by the projector's own normalization.
    pub fn from_projected(rows: &[f32], dim: usize, source_ids: Vec<ExampleId>) -> Result<Self> {
        let mut wide: Vec<f64> = rows.iter().map(|&v| v as f64).collect();
        if dim > 0 {
            for row in wide.chunks_exact_mut(dim) {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Self::new(wide, dim, source_ids)
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    pub fn source_ids(&self) -> &[ExampleId] {
        &self.source_ids
    }
}

/// `P(i)`: the other indices sharing `i`'s source id.
pub fn positive_sets(source_ids: &[ExampleId]) -> Result<Vec<Vec<usize>>> {
    let mut groups: HashMap<ExampleId, Vec<usize>> = HashMap::new();
    for (i, id) in source_ids.iter().enumerate() {
        groups.entry(*id).or_default().push(i);
    }
    if let Some((id, _)) = groups.iter().find(|(_, members)| members.len() < 2) {
        return Err(Error::SingletonSource(id.0));
    }
    Ok(source_ids
        .iter()
        .enumerate()
        .map(|(i, id)| groups[id].iter().copied().filter(|&j| j != i).collect())
        .collect())
}

#[derive(Clone, Debug)]
pub struct LossAndGradient {
    pub loss: f64,
    /// `∂L/∂z`, row-major like the input.
    pub gradient: Vec<f64>,
}

/// Multi-view contrastive loss over a validated embedding batch.
///
/// `L = −Σ_i (1/|P(i)|) Σ_{p∈P(i)} log( exp(z_i·z_p/τ) / Σ_{a≠i} exp(z_i·z_a/τ) )`,
/// summed (not averaged) over anchors.
pub fn mvcont_loss(batch: &EmbeddingBatch, temperature: f64) -> Result<LossAndGradient> {
    mvcont_loss_unchecked(&batch.rows, batch.dim, &batch.source_ids, temperature)
}

/// The same expression on arbitrary vectors; no unit-norm check. Used for
/// finite-difference checks, where perturbed rows leave the sphere.
pub fn mvcont_loss_unchecked(
    rows: &[f64],
    dim: usize,
    source_ids: &[ExampleId],
    temperature: f64,
) -> Result<LossAndGradient> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::InvalidTemperature(temperature));
    }
    let n = source_ids.len();
    if rows.len() != n * dim {
        return Err(Error::ShapeMismatch(format!("{} values for {n} rows of dim {dim}", rows.len())));
    }
    let positives = positive_sets(source_ids)?;
    let row = |i: usize| &rows[i * dim..(i + 1) * dim];

    let mut logits = vec![0.0f64; n * n];
    for i in 0..n {
        let zi = row(i);
        for j in i + 1..n {
            let s = zi.iter().zip(row(j)).map(|(a, b)| a * b).sum::<f64>() / temperature;
            logits[i * n + j] = s;
            logits[j * n + i] = s;
        }
    }

    // coeffs[i][j] = ∂L/∂s_ij = softmax_i(j) − [j ∈ P(i)]/|P(i)|
    let mut coeffs = vec![0.0f64; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        let s = &logits[i * n..(i + 1) * n];
        let max = (0..n).filter(|&a| a != i).map(|a| s[a]).fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        let c = &mut coeffs[i * n..(i + 1) * n];
        for a in (0..n).filter(|&a| a != i) {
            let e = (s[a] - max).exp();
            c[a] = e;
            denom += e;
        }
        let log_denom = max + denom.ln();
        let weight = 1.0 / positives[i].len() as f64;
        let mut positive_mean = 0.0;
        for &p in &positives[i] {
            positive_mean += weight * s[p];
        }
        loss += log_denom - positive_mean;
        for a in (0..n).filter(|&a| a != i) {
            c[a] /= denom;
        }
        for &p in &positives[i] {
            c[p] -= weight;
        }
    }

    // s_ij = z_i·z_j/τ, so ∂L/∂z_k = (1/τ) Σ_j (c_kj + c_jk) z_j
    let mut gradient = vec![0.0f64; n * dim];
    for k in 0..n {
        let g = &mut gradient[k * dim..(k + 1) * dim];
        for j in 0..n {
            let w = (coeffs[k * n + j] + coeffs[j * n + k]) / temperature;
            if w != 0.0 {
                for (gd, zd) in g.iter_mut().zip(row(j)) {
                    *gd += w * zd;
                }
            }
        }
    }
    Ok(LossAndGradient { loss, gradient })
}
