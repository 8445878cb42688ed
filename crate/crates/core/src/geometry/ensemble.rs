use crate::error::{Error, Result};
use crate::numerics::linalg::{orthonormal_basis, project_onto};
use crate::numerics::{dot, norm, Matrix, Rng};

/// How subspace bases are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleMode {
    /// Orthonormalized Gaussian matrices.
    Random,
    /// Disjoint blocks of coordinate axes; cluster integrity is exactly 1.
    AxisAligned,
}

/// `K` subspaces of `R^m`, each given by an orthonormal basis `U_k` (m x r_k).
#[derive(Clone, Debug)]
pub struct SubspaceEnsemble {
    ambient_dim: usize,
    bases: Vec<Matrix>,
}

impl SubspaceEnsemble {
    /// Wraps caller-supplied bases after checking orthonormality and the
    /// independence condition `(K-1) * max r_k < m`.
    pub fn from_bases(ambient_dim: usize, bases: Vec<Matrix>) -> Result<Self> {
        let ranks: Vec<usize> = bases.iter().map(Matrix::cols).collect();
        check_rank_condition(ambient_dim, &ranks)?;
        for (k, b) in bases.iter().enumerate() {
            if b.rows() != ambient_dim {
                return Err(Error::Config(format!(
                    "basis {k} has {} rows, ambient dimension is {ambient_dim}",
                    b.rows()
                )));
            }
            let gram = b.matmul_tn(b)?;
            if gram.max_abs_diff(&Matrix::identity(b.cols()))? > 1e-10 {
                return Err(Error::Config(format!("basis {k} is not orthonormal")));
            }
        }
        Ok(Self { ambient_dim, bases })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn num_clusters(&self) -> usize {
        self.bases.len()
    }

    pub fn basis(&self, k: usize) -> &Matrix {
        &self.bases[k]
    }

    pub fn bases(&self) -> &[Matrix] {
        &self.bases
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.bases.iter().map(Matrix::cols).collect()
    }

    /// Orthonormal basis for the span of every subspace except `k`.
    pub fn others_basis(&self, k: usize) -> Matrix {
        let vectors: Vec<Vec<f64>> = self
            .bases
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .flat_map(|(_, b)| (0..b.cols()).map(move |c| b.col_vec(c)))
            .collect();
        orthonormal_basis(&vectors, self.ambient_dim, 1e-10)
    }

    /// Cosine between `x` and its projection onto subspace `k`.
    pub fn subspace_cosine(&self, x: &[f64], k: usize) -> f64 {
        let p = project_onto(x, &self.bases[k]);
        let (np, nx) = (norm(&p), norm(x));
        if np == 0.0 {
            0.0
        } else {
            dot(x, &p) / (np * nx)
        }
    }
}

pub fn check_rank_condition(m: usize, ranks: &[usize]) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::Config("at least one subspace is required".into()));
    }
    if ranks.iter().any(|&r| r == 0) {
        return Err(Error::Config("subspace ranks must be positive".into()));
    }
    let max_rank = *ranks.iter().max().unwrap();
    if (ranks.len() - 1) * max_rank >= m {
        return Err(Error::Config(format!(
            "rank condition violated: (K-1) * max rank = {} * {} must be < m = {}",
            ranks.len() - 1,
            max_rank,
            m
        )));
    }
    Ok(())
}

pub fn generate_ensemble(
    ambient_dim: usize,
    ranks: &[usize],
    mode: EnsembleMode,
    rng: &mut Rng,
) -> Result<SubspaceEnsemble> {
    check_rank_condition(ambient_dim, ranks)?;
    let bases =
        match mode {
            EnsembleMode::AxisAligned => {
                let total: usize = ranks.iter().sum();
                if total > ambient_dim {
                    return Err(Error::Config(format!(
                        "axis-aligned mode needs sum of ranks ({total}) <= m ({ambient_dim})"
                    )));
                }
                let mut offset = 0;
                ranks
                    .iter()
                    .map(|&r| {
                        let b = Matrix::from_fn(ambient_dim, r, |i, j| {
                            if i == offset + j {
                                1.0
                            } else {
                                0.0
                            }
                        });
                        offset += r;
                        b
                    })
                    .collect()
            }
            EnsembleMode::Random => ranks
                .iter()
                .map(|&r| loop {
                    let g: Vec<Vec<f64>> = (0..r)
                        .map(|_| (0..ambient_dim).map(|_| rng.normal()).collect())
                        .collect();
                    let b = orthonormal_basis(&g, ambient_dim, 1e-6);
                    if b.cols() == r {
                        break b;
                    }
                })
                .collect(),
        };
    Ok(SubspaceEnsemble { ambient_dim, bases })
}

/// Unit-norm samples near the subspaces of an ensemble.
#[derive(Clone, Debug)]
pub struct ClusteredBatch {
    /// Noisy samples, one unit-norm row each.
    pub x: Matrix,
    /// The noiseless samples the rows of `x` were perturbed from.
    pub clean: Matrix,
    /// Zero-based cluster index per row.
    pub labels: Vec<usize>,
    /// Size of each row's cluster within the batch.
    pub cluster_sizes: Vec<usize>,
    pub noise_level: f64,
}

impl ClusteredBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn rows_in_cluster(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == k).collect()
    }
}

/// Per-row count of same-label rows (including the row itself).
pub fn cluster_sizes(labels: &[usize]) -> Vec<usize> {
    let max = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; max];
    for &l in labels {
        counts[l] += 1;
    }
    labels.iter().map(|&l| counts[l]).collect()
}

/// Rotates unit vector `x` toward a random direction so the result has cosine
/// exactly `cos` with `x` (up to rounding), then renormalizes.
pub fn perturb(x: &[f64], cos: f64, rng: &mut Rng) -> Vec<f64> {
    if cos >= 1.0 {
        return x.to_vec();
    }
    let v = loop {
        let g = rng.unit_vector(x.len());
        let c = dot(&g, x);
        let r: Vec<f64> = g.iter().zip(x).map(|(a, b)| a - c * b).collect();
        let n = norm(&r);
        if n > 1e-8 {
            break r.into_iter().map(|a| a / n).collect::<Vec<f64>>();
        }
    };
    let s = (1.0 - cos * cos).max(0.0).sqrt();
    let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| cos * a + s * b).collect();
    let n = norm(&y);
    y.into_iter().map(|a| a / n).collect()
}

/// Draws `per_cluster[k]` samples from each subspace `k`, ordered by cluster.
///
/// Clean samples are unit vectors `U_k a` with `a` Gaussian and its first
/// coordinate made non-negative, so a cluster occupies one half of its
/// subspace. Each sample is then rotated to cosine `1 - e` with `e` uniform in
/// `[0, noise]`.
pub fn sample_batch(
    ens: &SubspaceEnsemble,
    per_cluster: &[usize],
    noise: f64,
    rng: &mut Rng,
) -> Result<ClusteredBatch> {
    if !(0.0..1.0).contains(&noise) {
        return Err(Error::Config(format!(
            "noise level must lie in [0, 1), got {noise}"
        )));
    }
    if per_cluster.len() != ens.num_clusters() {
        return Err(Error::Config(format!(
            "{} cluster counts given for {} subspaces",
            per_cluster.len(),
            ens.num_clusters()
        )));
    }
    if let Some(k) = per_cluster.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!("cluster {k} has no samples")));
    }
    let m = ens.ambient_dim();
    let mut clean_rows = Vec::new();
    let mut noisy_rows = Vec::new();
    let mut labels = Vec::new();
    for (k, &count) in per_cluster.iter().enumerate() {
        let basis = ens.basis(k);
        for _ in 0..count {
            let mut coef: Vec<f64> = loop {
                let c: Vec<f64> = (0..basis.cols()).map(|_| rng.normal()).collect();
                if norm(&c) > 1e-8 {
                    break c;
                }
            };
            if coef[0] < 0.0 {
                coef.iter_mut().for_each(|c| *c = -*c);
            }
            let x: Vec<f64> = (0..m)
                .map(|i| (0..basis.cols()).map(|j| basis.get(i, j) * coef[j]).sum())
                .collect();
            let n = norm(&x);
            let x: Vec<f64> = x.into_iter().map(|v| v / n).collect();
            let eps = rng.uniform() * noise;
            noisy_rows.push(perturb(&x, 1.0 - eps, rng));
            clean_rows.push(x);
            labels.push(k);
        }
    }
    Ok(ClusteredBatch {
        x: Matrix::from_rows(&noisy_rows)?,
        clean: Matrix::from_rows(&clean_rows)?,
        cluster_sizes: cluster_sizes(&labels),
        labels,
        noise_level: noise,
    })
}
