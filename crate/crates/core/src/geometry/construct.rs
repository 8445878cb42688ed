//! Block-diagonal attention weights built from the subspace geometry.

use super::bounds::{noise_bounds, FusionBound};
use super::ensemble::{ClusteredBatch, SubspaceEnsemble};
use super::integrity::{rho_search, RhoSearch};
use crate::error::{Error, Result};
use crate::numerics::linalg::project_out;
use crate::numerics::{dot, norm, Matrix, Rng};

/// Weights `W` (m x n) with column `i` orthogonal to every subspace except
/// the one holding sample `i`, so that `A = (XW)(XW)ᵀ` is block diagonal on
/// noiseless data.
#[derive(Clone, Debug)]
pub struct Thm1Weights {
    pub w: Matrix,
    /// One unit direction per cluster, orthogonal to all other subspaces.
    pub directions: Vec<Vec<f64>>,
    /// Smallest projection of each cluster's clean samples onto its direction.
    pub margins: Vec<f64>,
    /// Cluster index per column of `w`.
    pub labels: Vec<usize>,
}

impl Thm1Weights {
    /// Smallest margin over clusters; the `rho` the in-block bound uses.
    pub fn rho_hat(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Query and key weights are the same matrix.
    pub fn query_key(&self) -> (&Matrix, &Matrix) {
        (&self.w, &self.w)
    }

    /// Square m x m form: column `c` holds `sqrt(nu_c) w_c`, remaining columns
    /// zero. Gives the same affinity as the m x n form and fits an m x m block.
    pub fn square(&self) -> Result<Matrix> {
        let m = self.w.rows();
        let k = self.directions.len();
        if k > m {
            return Err(Error::Config(format!(
                "{k} clusters do not fit in {m} columns"
            )));
        }
        let mut counts = vec![0usize; k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        Ok(Matrix::from_fn(m, m, |i, j| {
            if j < k {
                (counts[j] as f64).sqrt() * self.directions[j][i]
            } else {
                0.0
            }
        }))
    }
}

/// Builds the weights from the clean samples of `batch`.
pub fn construct_thm1_weights(
    ens: &SubspaceEnsemble,
    batch: &ClusteredBatch,
    cfg: &RhoSearch,
    rng: &mut Rng,
) -> Result<Thm1Weights> {
    let m = ens.ambient_dim();
    let search = RhoSearch {
        signed: true,
        ..cfg.clone()
    };
    let mut directions = Vec::new();
    let mut margins = Vec::new();
    for c in 0..ens.num_clusters() {
        let others = ens.others_basis(c);
        if others.cols() >= m {
            return Err(Error::Config(format!(
                "subspaces other than {c} span the ambient space; rank condition violated"
            )));
        }
        let rows = batch.rows_in_cluster(c);
        if rows.is_empty() {
            return Err(Error::degenerate(
                "construct_thm1_weights",
                format!("cluster {c} has no samples"),
            ));
        }
        let samples = batch.clean.select_rows(&rows);
        let est = rho_search(&others, &samples, &search, rng)?;
        let (dir, margin) = match mean_direction(&others, &samples) {
            Some((d, v)) if v >= est.rho => (d, v),
            _ => (est.witness, est.rho),
        };
        directions.push(dir);
        margins.push(margin);
    }
    let w = Matrix::from_fn(m, batch.len(), |i, j| directions[batch.labels[j]][i]);
    Ok(Thm1Weights {
        w,
        directions,
        margins,
        labels: batch.labels.clone(),
    })
}

/// Cluster mean projected off `others`, with its smallest sample projection.
fn mean_direction(others: &Matrix, samples: &Matrix) -> Option<(Vec<f64>, f64)> {
    let mean: Vec<f64> = (0..samples.cols())
        .map(|j| (0..samples.rows()).map(|i| samples.get(i, j)).sum())
        .collect();
    let d = project_out(&mean, others);
    let n = norm(&d);
    if n < 1e-12 {
        return None;
    }
    let d: Vec<f64> = d.into_iter().map(|v| v / n).collect();
    let margin = (0..samples.rows())
        .map(|i| dot(samples.row(i), &d))
        .fold(f64::INFINITY, f64::min);
    Some((d, margin))
}

/// `A = (XW)(XW)ᵀ`.
pub fn affinity(x: &Matrix, w: &Matrix) -> Result<Matrix> {
    let xw = x.matmul(w)?;
    xw.matmul_nt(&xw)
}

/// Worst-case comparison of an affinity matrix against the per-pair bounds.
#[derive(Clone, Debug)]
pub struct BoundCheck {
    pub rho: f64,
    pub delta: f64,
    pub big_delta: f64,
    /// Largest cross-cluster entry minus its `ln beta` bound (should be <= 0).
    pub beta_excess: f64,
    /// Smallest same-cluster entry minus its `ln alpha` bound.
    pub alpha_margin: f64,
    /// Smallest same-cluster entry minus `nu_i Delta^2 - (n - nu_i) delta^2`,
    /// which also accounts for cross-cluster columns of `XW`.
    pub strict_alpha_margin: f64,
}

/// Compares `A` with `ln alpha` / `ln beta` for noise level `eps` and the
/// construction's margin `rho`.
pub fn check_pair_bounds(
    a: &Matrix,
    batch: &ClusteredBatch,
    eps: f64,
    rho: f64,
) -> Result<BoundCheck> {
    let n = batch.len();
    if a.shape() != (n, n) {
        return Err(Error::shape("check_pair_bounds", a.shape(), (n, n)));
    }
    let nu = &batch.cluster_sizes;
    let (delta, big_delta) = noise_bounds(eps, rho);
    let mut beta_excess = f64::NEG_INFINITY;
    let mut alpha_margin = f64::INFINITY;
    let mut strict_alpha_margin = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let b = FusionBound::new(eps, rho, n, nu[i], nu[j]);
            let v = a.get(i, j);
            if batch.labels[i] == batch.labels[j] {
                alpha_margin = alpha_margin.min(v - b.ln_alpha);
                let strict = b.ln_alpha - (n - nu[i]) as f64 * delta * delta;
                strict_alpha_margin = strict_alpha_margin.min(v - strict);
            } else {
                beta_excess = beta_excess.max(v - b.ln_beta);
            }
        }
    }
    Ok(BoundCheck {
        rho,
        delta,
        big_delta,
        beta_excess,
        alpha_margin,
        strict_alpha_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ensemble::{cluster_sizes, generate_ensemble, sample_batch, EnsembleMode};
    use crate::geometry::sharpness::sharpness;

    #[test]
    fn axis_aligned_identity_case() {
        let e = |i: usize| Matrix::from_fn(3, 1, |r, _| if r == i { 1.0 } else { 0.0 });
        let ens = SubspaceEnsemble::from_bases(3, vec![e(0), e(1)]).unwrap();
        let x = Matrix::from_rows(&[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let labels = vec![0, 0, 1];
        let batch = ClusteredBatch {
            x: x.clone(),
            clean: x.clone(),
            cluster_sizes: cluster_sizes(&labels),
            labels,
            noise_level: 0.0,
        };
        let c =
            construct_thm1_weights(&ens, &batch, &RhoSearch::default(), &mut Rng::new(0)).unwrap();
        assert!(c.w.max_abs_diff(&x.transpose()).unwrap() < 1e-12);
        let a = affinity(&x, &c.w).unwrap();
        let want = Matrix::from_rows(&[[2.0, 2.0, 0.0], [2.0, 2.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert!(a.max_abs_diff(&want).unwrap() < 1e-12);
        assert!(a.get(0, 1) >= 2.0 * c.rho_hat().powi(2) - 1e-6);
        assert_eq!(sharpness(&a, &batch.labels).unwrap(), f64::INFINITY);
    }

    #[test]
    fn noiseless_random_blocks() {
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let ens = generate_ensemble(16, &[2, 2, 2], EnsembleMode::Random, &mut rng).unwrap();
            let batch = sample_batch(&ens, &[5, 5, 5], 0.0, &mut rng).unwrap();
            let c = construct_thm1_weights(&ens, &batch, &RhoSearch::default(), &mut rng).unwrap();
            let a = affinity(&batch.x, &c.w).unwrap();
            let rho = c.rho_hat();
            assert!(rho > 0.0);
            for i in 0..15 {
                for j in 0..15 {
                    if batch.labels[i] != batch.labels[j] {
                        assert!(a.get(i, j).abs() < 1e-9);
                    } else if i != j {
                        assert!(a.get(i, j) >= batch.cluster_sizes[i] as f64 * rho * rho - 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn square_form_matches_affinity() {
        let mut rng = Rng::new(3);
        let ens = generate_ensemble(8, &[1, 1, 1], EnsembleMode::Random, &mut rng).unwrap();
        let batch = sample_batch(&ens, &[2, 3, 4], 0.0, &mut rng).unwrap();
        let c = construct_thm1_weights(&ens, &batch, &RhoSearch::default(), &mut rng).unwrap();
        let a = affinity(&batch.x, &c.w).unwrap();
        let b = affinity(&batch.x, &c.square().unwrap()).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn noisy_pairs_respect_bounds() {
        for seed in 0..5 {
            let mut rng = Rng::new(100 + seed);
            let ens = generate_ensemble(16, &[1, 1, 1], EnsembleMode::Random, &mut rng).unwrap();
            let batch = sample_batch(&ens, &[6, 6, 6], 0.05, &mut rng).unwrap();
            let c = construct_thm1_weights(&ens, &batch, &RhoSearch::default(), &mut rng).unwrap();
            let a = affinity(&batch.x, &c.w).unwrap();
            let chk = check_pair_bounds(&a, &batch, 0.05, c.rho_hat()).unwrap();
            assert!(chk.beta_excess <= 1e-9, "{chk:?}");
            assert!(chk.strict_alpha_margin >= -1e-9, "{chk:?}");
            assert!(chk.alpha_margin >= -1e-9, "{chk:?}");
        }
    }
}
