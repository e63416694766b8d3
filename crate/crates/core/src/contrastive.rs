//! Projection head, NT-Xent loss over dropout views, and the
//! alignment / uniformity diagnostics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default temperature τ.
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// g(h) = W2 · relu(W1 · h), no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    /// `d_h × d_m`
    pub w1: Array2<f64>,
    /// `d_c × d_h`
    pub w2: Array2<f64>,
}

impl ProjectionHead {
    pub fn new(w1: Array2<f64>, w2: Array2<f64>) -> Result<Self> {
        if w2.ncols() != w1.nrows() {
            return Err(Error::contract(format!(
                "projection head: W2 has {} columns but W1 has {} rows",
                w2.ncols(),
                w1.nrows()
            )));
        }
        Ok(ProjectionHead { w1, w2 })
    }
}

pub fn project(h: ArrayView1<f64>, head: &ProjectionHead) -> Result<Array1<f64>> {
    if h.len() != head.w1.ncols() {
        return Err(Error::contract(format!(
            "projection input has length {}, W1 expects {}",
            h.len(),
            head.w1.ncols()
        )));
    }
    let hidden = head.w1.dot(&h).mapv(|x| x.max(0.0));
    Ok(head.w2.dot(&hidden))
}

/// Projections of `N_b` positive pairs, interleaved so that rows `2k` and
/// `2k + 1` are partners.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub projections: Array2<f64>,
    pub temperature: f64,
}

impl ContrastiveBatch {
    pub fn new(projections: Array2<f64>, temperature: f64) -> Result<Self> {
        let batch = ContrastiveBatch {
            projections,
            temperature,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        let rows = self.projections.nrows();
        if rows < 2 || rows % 2 != 0 {
            return Err(Error::contract(format!(
                "contrastive batch needs an even number (>= 2) of rows, got {rows}"
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::contract(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn pair_count(&self) -> usize {
        self.projections.nrows() / 2
    }
}

/// Index of the positive partner of row `i`.
pub fn partner(i: usize) -> usize {
    i ^ 1
}

fn normalized_rows(z: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut u = z.to_owned();
    let mut norms = Vec::with_capacity(z.nrows());
    for (i, mut row) in u.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical(format!(
                "projection row {i} has zero or non-finite norm; cosine similarity is undefined"
            )));
        }
        row.mapv_inplace(|x| x / norm);
        norms.push(norm);
    }
    Ok((u, norms))
}

/// Mean NT-Xent loss over all `2N_b` rows.
///
/// ℓ_i = −log( exp(sim(i, i′)/τ) / Σ_{j≠i} exp(sim(i, j)/τ) ), averaged with a
/// positive sign so the result is nonnegative.
pub fn nt_xent_loss(batch: &ContrastiveBatch) -> Result<f64> {
    nt_xent_loss_and_grad(batch).map(|(loss, _)| loss)
}

/// Loss and its gradient with respect to the projection rows.
pub fn nt_xent_loss_and_grad(batch: &ContrastiveBatch) -> Result<(f64, Array2<f64>)> {
    batch.validate()?;
    let z = batch.projections.view();
    let m = z.nrows();
    let tau = batch.temperature;
    let (u, norms) = normalized_rows(z)?;
    let sim = u.dot(&u.t()) / tau;

    // coef[i][j] = dL/ds_ij for j ≠ i, with s_ij = sim_ij / τ scaled already.
    let mut coef = Array2::<f64>::zeros((m, m));
    let mut loss = 0.0;
    for i in 0..m {
        let p = partner(i);
        let max = (0..m)
            .filter(|&j| j != i)
            .map(|j| sim[[i, j]])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..m)
            .filter(|&j| j != i)
            .map(|j| (sim[[i, j]] - max).exp())
            .sum();
        let log_denom = max + denom.ln();
        loss += log_denom - sim[[i, p]];
        for j in 0..m {
            if j != i {
                let prob = (sim[[i, j]] - log_denom).exp();
                coef[[i, j]] = prob - if j == p { 1.0 } else { 0.0 };
            }
        }
    }
    let scale = 1.0 / m as f64;
    loss *= scale;
    coef *= scale;

    // s_ij = u_i·u_j / τ appears in both ℓ_i and ℓ_j.
    let sym = &coef + &coef.t();
    let grad_u = sym.dot(&u) / tau;
    let mut grad = Array2::<f64>::zeros((m, z.ncols()));
    for i in 0..m {
        let ui = u.row(i);
        let gi = grad_u.row(i);
        let radial = ui.dot(&gi);
        let mut out = grad.row_mut(i);
        for c in 0..z.ncols() {
            out[c] = (gi[c] - radial * ui[c]) / norms[i];
        }
    }
    Ok((loss.max(0.0), grad))
}

fn unit(v: ArrayView1<f64>) -> Result<Array1<f64>> {
    let norm = v.dot(&v).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Numerical("cannot normalize a zero vector".into()));
    }
    Ok(v.mapv(|x| x / norm))
}

/// Mean of ‖u − v‖^exponent over L2-normalized pairs.
pub fn alignment_metric_with(pairs: &[(Array1<f64>, Array1<f64>)], exponent: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::contract("alignment needs at least one pair"));
    }
    let mut total = 0.0;
    for (a, b) in pairs {
        if a.len() != b.len() {
            return Err(Error::contract("alignment pair has mismatched lengths"));
        }
        let d = unit(a.view())? - unit(b.view())?;
        total += d.dot(&d).sqrt().powf(exponent);
    }
    Ok(total / pairs.len() as f64)
}

pub fn alignment_metric(pairs: &[(Array1<f64>, Array1<f64>)]) -> Result<f64> {
    alignment_metric_with(pairs, 2.0)
}

/// log of the mean of exp(−t‖u − v‖²) over unordered distinct pairs.
pub fn uniformity_metric_with(embeddings: &[Array1<f64>], t: f64) -> Result<f64> {
    if embeddings.len() < 2 {
        return Err(Error::contract("uniformity needs at least two embeddings"));
    }
    let units: Vec<Array1<f64>> = embeddings.iter().map(|e| unit(e.view())).collect::<Result<_>>()?;
    // Log-sum-exp over pairs keeps tiny kernels from underflowing.
    let mut exponents = Vec::with_capacity(units.len() * (units.len() - 1) / 2);
    for i in 0..units.len() {
        for j in i + 1..units.len() {
            let d = &units[i] - &units[j];
            exponents.push(-t * d.dot(&d));
        }
    }
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = exponents.iter().map(|e| (e - max).exp()).sum();
    Ok((max + sum.ln() - (exponents.len() as f64).ln()).min(0.0))
}

pub fn uniformity_metric(embeddings: &[Array1<f64>]) -> Result<f64> {
    uniformity_metric_with(embeddings, 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticExponents {
    pub alignment: f64,
    pub uniformity: f64,
}

impl Default for DiagnosticExponents {
    fn default() -> Self {
        DiagnosticExponents {
            alignment: 2.0,
            uniformity: 2.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn identity_head_passes_nonnegative_input() {
        let head = ProjectionHead::new(Array2::eye(3), Array2::eye(3)).unwrap();
        let h = array![0.5, 0.0, 2.0];
        assert_eq!(project(h.view(), &head).unwrap(), h);
        let neg = array![-1.0, -0.1, -3.0];
        assert_eq!(project(neg.view(), &head).unwrap(), Array1::<f64>::zeros(3));
    }

    #[test]
    fn projection_matches_hand_arithmetic() {
        let w1 = array![[1.0, -1.0, 0.0, 2.0], [0.5, 0.5, 0.5, 0.5], [-1.0, 0.0, 1.0, 0.0], [0.0, 3.0, 0.0, -1.0]];
        let w2 = array![[1.0, 0.0, 2.0, -1.0], [0.0, 1.0, 1.0, 1.0]];
        let h = array![1.0, 2.0, 3.0, -1.0];
        // W1 h = (-3, 2.5, 2, 7) → relu (0, 2.5, 2, 7)
        let head = ProjectionHead::new(w1, w2).unwrap();
        assert_eq!(project(h.view(), &head).unwrap(), array![0.0 + 0.0 + 4.0 - 7.0, 2.5 + 2.0 + 7.0]);
    }

    #[test]
    fn projection_dimension_mismatch() {
        let head = ProjectionHead::new(Array2::eye(3), Array2::eye(3)).unwrap();
        assert!(project(array![1.0, 2.0].view(), &head).is_err());
        assert!(ProjectionHead::new(Array2::eye(3), Array2::eye(2)).is_err());
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let b = ContrastiveBatch::new(array![[1.0, 2.0], [-3.0, 0.5]], 0.07).unwrap();
        assert_eq!(nt_xent_loss(&b).unwrap(), 0.0);
    }

    #[test]
    fn two_pair_example() {
        let b = ContrastiveBatch::new(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], 1.0).unwrap();
        let expected = (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((nt_xent_loss(&b).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_batches() {
        assert!(ContrastiveBatch::new(array![[1.0, 0.0]], 1.0).is_err());
        assert!(ContrastiveBatch::new(array![[1.0, 0.0], [1.0, 0.0]], 0.0).is_err());
        let zero = ContrastiveBatch::new(array![[0.0, 0.0], [1.0, 0.0]], 1.0).unwrap();
        assert!(nt_xent_loss(&zero).is_err());
    }

    #[test]
    fn alignment_geometry() {
        let e1 = array![1.0, 0.0];
        let e2 = array![0.0, 1.0];
        assert_eq!(alignment_metric(&[(e1.clone(), e1.clone())]).unwrap(), 0.0);
        assert!((alignment_metric(&[(e1.clone(), e2.clone())]).unwrap() - 2.0).abs() < 1e-12);
        assert!((alignment_metric(&[(e1.clone(), -&e1)]).unwrap() - 4.0).abs() < 1e-12);
        assert!(alignment_metric(&[]).is_err());
    }

    #[test]
    fn uniformity_geometry() {
        let u = array![0.6, 0.8];
        assert_eq!(uniformity_metric(&[u.clone(), u.clone(), u.clone()]).unwrap(), 0.0);
        assert!((uniformity_metric(&[u.clone(), -&u]).unwrap() + 8.0).abs() < 1e-12);
        assert!(uniformity_metric(&[u]).is_err());
    }
}
