//! Cluster integrity: `rho_k = max_{u ⟂ U_k} min_{x ∉ k} |xᵀu|`.

use std::fmt::Write as _;

use super::ensemble::{ClusteredBatch, SubspaceEnsemble};
use crate::error::{Error, Result};
use crate::numerics::io::format_g17;
use crate::numerics::linalg::{complement_basis, project_out};
use crate::numerics::{dot, norm, Matrix, Rng};

/// Parameters of the greedy perpendicular-direction search.
#[derive(Clone, Debug)]
pub struct RhoSearch {
    /// Iteration cap `T` per restart.
    pub max_iter: usize,
    /// Step size `alpha` toward the worst sample.
    pub step: f64,
    /// Stop once the newest projection is within this of the best so far.
    pub tol: f64,
    /// Independent random initializations; the best result is kept.
    pub restarts: usize,
    /// Maximize the smallest signed projection instead of the absolute one.
    pub signed: bool,
}

impl Default for RhoSearch {
    fn default() -> Self {
        Self {
            max_iter: 500,
            step: 0.1,
            tol: 1e-6,
            restarts: 8,
            signed: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RhoEstimate {
    pub rho: f64,
    /// Unit vector orthogonal to the excluded subspace achieving `rho`.
    pub witness: Vec<f64>,
    /// Iterations used, summed over restarts.
    pub iterations: usize,
}

/// Greedy search for a unit vector orthogonal to the column span of
/// `excluded` (orthonormal, m x r) whose smallest projection onto `samples`
/// (rows) is as large as possible.
pub fn rho_search(
    excluded: &Matrix,
    samples: &Matrix,
    cfg: &RhoSearch,
    rng: &mut Rng,
) -> Result<RhoEstimate> {
    let m = excluded.rows();
    if samples.rows() == 0 {
        return Err(Error::degenerate("rho_search", "no samples to project"));
    }
    if samples.cols() != m {
        return Err(Error::shape(
            "rho_search",
            excluded.shape(),
            samples.shape(),
        ));
    }
    if cfg.max_iter == 0 || !(cfg.step > 0.0) {
        return Err(Error::Config(
            "rho search needs T >= 1 and alpha > 0".into(),
        ));
    }
    if excluded.cols() >= m || complement_basis(excluded).cols() == 0 {
        return Err(Error::degenerate(
            "rho_search",
            "excluded subspace spans the ambient space; no orthogonal direction exists",
        ));
    }
    let score = |p: f64| if cfg.signed { p } else { p.abs() };

    let mut best = RhoEstimate {
        rho: f64::NEG_INFINITY,
        witness: Vec::new(),
        iterations: 0,
    };
    // Each sample's own projected direction is scored as a candidate first.
    for i in 0..samples.rows() {
        let perp = project_out(samples.row(i), excluded);
        let n = norm(&perp);
        if n < 1e-12 {
            continue;
        }
        let perp: Vec<f64> = perp.into_iter().map(|v| v / n).collect();
        let value = (0..samples.rows())
            .map(|j| score(dot(samples.row(j), &perp)))
            .fold(f64::INFINITY, f64::min);
        if value > best.rho {
            best.rho = value;
            best.witness = perp;
        }
    }
    for _ in 0..cfg.restarts.max(1) {
        let mut u = rng.unit_vector(m);
        let mut rho = f64::NEG_INFINITY;
        for _ in 0..=cfg.max_iter {
            // Calibrate the perpendicular vector.
            let mut perp = project_out(&u, excluded);
            let mut n = norm(&perp);
            while n < 1e-12 {
                u = rng.unit_vector(m);
                perp = project_out(&u, excluded);
                n = norm(&perp);
            }
            perp.iter_mut().for_each(|v| *v /= n);

            // Find the minimum projection sample.
            let (worst, value) = (0..samples.rows())
                .map(|i| (i, score(dot(samples.row(i), &perp))))
                .fold(
                    (0, f64::INFINITY),
                    |acc, cur| if cur.1 < acc.1 { cur } else { acc },
                );
            best.iterations += 1;

            if (rho - value).abs() < cfg.tol {
                break;
            }
            if value > rho {
                rho = value;
                if value > best.rho {
                    best.rho = value;
                    best.witness = perp.clone();
                }
            }

            // Move toward this sample. In unsigned mode move toward its
            // sign-matched copy so the step increases |xᵀu|.
            let x = samples.row(worst);
            let sign = if !cfg.signed && dot(x, &perp) < 0.0 {
                -1.0
            } else {
                1.0
            };
            let next: Vec<f64> = perp
                .iter()
                .zip(x)
                .map(|(p, xi)| p + cfg.step * sign * xi)
                .collect();
            let nn = norm(&next);
            u = next.into_iter().map(|v| v / nn).collect();
        }
    }
    Ok(best)
}

/// `rho_k` for cluster `k`, searching against every sample whose label is not `k`.
pub fn rho_greedy(
    ens: &SubspaceEnsemble,
    samples: &Matrix,
    labels: &[usize],
    k: usize,
    cfg: &RhoSearch,
    rng: &mut Rng,
) -> Result<RhoEstimate> {
    let others: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != k).collect();
    if others.is_empty() {
        return Err(Error::degenerate(
            "rho_greedy",
            format!("no samples outside cluster {k}"),
        ));
    }
    rho_search(ens.basis(k), &samples.select_rows(&others), cfg, rng)
}

/// Cluster integrity of a batch over all clusters.
#[derive(Clone, Debug)]
pub struct IntegrityResult {
    pub rho: f64,
    pub per_cluster: Vec<f64>,
    pub witnesses: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
}

impl IntegrityResult {
    /// CSV with header `cluster,rho_k,iterations,u_0,...,u_{m-1}`.
    pub fn to_csv(&self) -> String {
        let m = self.witnesses.first().map_or(0, Vec::len);
        let mut out = String::from("cluster,rho_k,iterations");
        for j in 0..m {
            let _ = write!(out, ",u_{j}");
        }
        out.push('\n');
        for (k, (rho, (w, it))) in self
            .per_cluster
            .iter()
            .zip(self.witnesses.iter().zip(&self.iterations))
            .enumerate()
        {
            let _ = write!(out, "{k},{},{it}", format_g17(*rho));
            for v in w {
                let _ = write!(out, ",{}", format_g17(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn witness_matrix(&self) -> Result<Matrix> {
        Matrix::from_rows(&self.witnesses)
    }
}

/// Clean-sample cluster integrity (samples taken from `batch.clean`).
pub fn cluster_integrity(
    ens: &SubspaceEnsemble,
    batch: &ClusteredBatch,
    cfg: &RhoSearch,
    rng: &mut Rng,
) -> Result<IntegrityResult> {
    let mut per_cluster = Vec::new();
    let mut witnesses = Vec::new();
    let mut iterations = Vec::new();
    for k in 0..ens.num_clusters() {
        let est = rho_greedy(ens, &batch.clean, &batch.labels, k, cfg, rng)?;
        per_cluster.push(est.rho);
        witnesses.push(est.witness);
        iterations.push(est.iterations);
    }
    Ok(IntegrityResult {
        rho: per_cluster.iter().copied().fold(f64::INFINITY, f64::min),
        per_cluster,
        witnesses,
        iterations,
    })
}

/// Exhaustive oracle for `rho_k`: grid over the unit sphere of the orthogonal
/// complement of `U_k` (dimension at most 3), `grid_steps` divisions of pi
/// per angle. The result is within `pi / grid_steps` of the true maximum.
pub fn rho_brute(
    ens: &SubspaceEnsemble,
    samples: &Matrix,
    labels: &[usize],
    k: usize,
    grid_steps: usize,
) -> Result<f64> {
    let comp = complement_basis(ens.basis(k));
    let d = comp.cols();
    if d == 0 {
        return Err(Error::degenerate(
            "rho_brute",
            format!("cluster {k} spans the ambient space"),
        ));
    }
    if d > 3 {
        return Err(Error::Unsupported(format!(
            "brute-force integrity needs complement dimension <= 3, got {d}"
        )));
    }
    if grid_steps == 0 {
        return Err(Error::Config("grid resolution must be positive".into()));
    }
    let others: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != k).collect();
    if others.is_empty() {
        return Err(Error::degenerate(
            "rho_brute",
            format!("no samples outside cluster {k}"),
        ));
    }
    // Coordinates of each out-of-cluster sample in the complement basis.
    let coords = samples.select_rows(&others).matmul(&comp)?;
    let objective = |c: &[f64]| -> f64 {
        (0..coords.rows())
            .map(|i| dot(coords.row(i), c).abs())
            .fold(f64::INFINITY, f64::min)
    };
    let h = std::f64::consts::PI / grid_steps as f64;
    let best = match d {
        1 => objective(&[1.0]),
        2 => (0..grid_steps)
            .map(|i| {
                let t = i as f64 * h;
                objective(&[t.cos(), t.sin()])
            })
            .fold(f64::NEG_INFINITY, f64::max),
        _ => {
            let mut best = f64::NEG_INFINITY;
            // Polar angle over the upper hemisphere; |xᵀu| is symmetric under u -> -u.
            for i in 0..=grid_steps / 2 {
                let theta = i as f64 * h;
                let azimuths = if i == 0 { 1 } else { 2 * grid_steps };
                for j in 0..azimuths {
                    let phi = j as f64 * h;
                    let c = [
                        theta.sin() * phi.cos(),
                        theta.sin() * phi.sin(),
                        theta.cos(),
                    ];
                    best = best.max(objective(&c));
                }
            }
            best
        }
    };
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ensemble::{generate_ensemble, sample_batch, EnsembleMode};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn lines(m: usize, dirs: &[Vec<f64>]) -> SubspaceEnsemble {
        let bases = dirs
            .iter()
            .map(|d| {
                let n = norm(d);
                Matrix::from_fn(m, 1, |i, _| d[i] / n)
            })
            .collect();
        SubspaceEnsemble::from_bases(m, bases).unwrap()
    }

    #[test]
    fn orthogonal_lines_have_unit_integrity() {
        let ens = lines(2, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let est = rho_greedy(
            &ens,
            &x,
            &[0, 1],
            0,
            &RhoSearch::default(),
            &mut Rng::new(0),
        )
        .unwrap();
        assert!((est.rho - 1.0).abs() < 1e-12);
        assert!((est.witness[1].abs() - 1.0).abs() < 1e-12);
        assert_eq!(rho_brute(&ens, &x, &[0, 1], 0, 7).unwrap(), 1.0);
    }

    #[test]
    fn forty_five_degree_lines() {
        let d = vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0];
        let ens = lines(3, &[vec![1.0, 0.0, 0.0], d.clone()]);
        let x = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], d]).unwrap();
        let est = rho_greedy(
            &ens,
            &x,
            &[0, 1],
            0,
            &RhoSearch::default(),
            &mut Rng::new(1),
        )
        .unwrap();
        assert!((est.rho - FRAC_1_SQRT_2).abs() < 1e-3, "{}", est.rho);
        assert!(dot(&est.witness, &[1.0, 0.0, 0.0]).abs() < 1e-8);
        let brute = rho_brute(&ens, &x, &[0, 1], 0, 360).unwrap();
        assert!((brute - FRAC_1_SQRT_2).abs() < std::f64::consts::PI / 360.0);
    }

    #[test]
    fn three_axes_max_min() {
        let ens = lines(
            3,
            &[
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
        );
        let x = Matrix::identity(3);
        let brute = rho_brute(&ens, &x, &[0, 1, 2], 0, 8).unwrap();
        assert!((brute - FRAC_1_SQRT_2).abs() < 1e-12);
        let est = rho_greedy(
            &ens,
            &x,
            &[0, 1, 2],
            0,
            &RhoSearch::default(),
            &mut Rng::new(2),
        )
        .unwrap();
        assert!(
            est.rho <= brute + 1e-12 && est.rho > FRAC_1_SQRT_2 - 0.05,
            "{}",
            est.rho
        );
    }

    #[test]
    fn spanning_cluster_is_degenerate() {
        let b = Matrix::identity(2);
        let ens = SubspaceEnsemble::from_bases(2, vec![b]).unwrap();
        let x = Matrix::identity(2);
        let err =
            rho_search(ens.basis(0), &x, &RhoSearch::default(), &mut Rng::new(0)).unwrap_err();
        assert!(matches!(err, Error::Degenerate { .. }));
    }

    #[test]
    fn brute_refuses_large_complements() {
        let mut rng = Rng::new(4);
        let ens = generate_ensemble(8, &[2, 2], EnsembleMode::Random, &mut rng).unwrap();
        let batch = sample_batch(&ens, &[4, 4], 0.0, &mut rng).unwrap();
        assert!(matches!(
            rho_brute(&ens, &batch.x, &batch.labels, 0, 10),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn greedy_never_beats_brute_force() {
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let ens = generate_ensemble(5, &[2, 2], EnsembleMode::Random, &mut rng).unwrap();
            let batch = sample_batch(&ens, &[6, 6], 0.0, &mut rng).unwrap();
            let steps = 180;
            let brute = rho_brute(&ens, &batch.x, &batch.labels, 0, steps).unwrap();
            let est = rho_greedy(
                &ens,
                &batch.x,
                &batch.labels,
                0,
                &RhoSearch::default(),
                &mut rng,
            )
            .unwrap();
            assert!(
                est.rho <= brute + std::f64::consts::PI / steps as f64,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn integrity_csv_has_one_row_per_cluster() {
        let mut rng = Rng::new(5);
        let ens = generate_ensemble(6, &[1, 1, 1], EnsembleMode::Random, &mut rng).unwrap();
        let batch = sample_batch(&ens, &[3, 3, 3], 0.0, &mut rng).unwrap();
        let res = cluster_integrity(&ens, &batch, &RhoSearch::default(), &mut rng).unwrap();
        assert_eq!(
            res.rho,
            res.per_cluster
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        );
        let csv = res.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("cluster,rho_k,iterations,u_0,"));
        for (k, w) in res.witnesses.iter().enumerate() {
            assert!((norm(w) - 1.0).abs() < 1e-12);
            let b = ens.basis(k).col_vec(0);
            assert!(dot(w, &b).abs() < 1e-8);
        }
    }
}
