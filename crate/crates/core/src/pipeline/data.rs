use crate::error::{Error, Result};
use crate::geometry::{generate_ensemble, perturb, sample_batch};
use crate::numerics::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Matrix,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Matrix, labels: Vec<usize>, split: Split) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(Error::Config(format!(
                "{} samples but {} labels",
                samples.rows(),
                labels.len()
            )));
        }
        Ok(Self {
            samples,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            samples: self.samples.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
        }
    }

    /// Copy with every row scaled to unit norm; all-zero rows are left as is.
    pub fn normalized(&self) -> Dataset {
        let mut samples = self.samples.clone();
        for i in 0..samples.rows() {
            let n = crate::numerics::norm(samples.row(i));
            if n > 0.0 {
                samples.row_mut(i).iter_mut().for_each(|v| *v /= n);
            }
        }
        Dataset {
            samples,
            labels: self.labels.clone(),
            split: self.split,
        }
    }

    /// Up to `per_class` rows of each class, chosen at random, in class order.
    pub fn stratified(&self, per_class: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::new();
        for c in 0..self.num_classes() {
            let mut rows: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            rng.shuffle(&mut rows);
            rows.truncate(per_class);
            rows.sort_unstable();
            out.extend(rows);
        }
        out
    }
}

/// Two independent views of a unit-norm sample, each with cosine at least
/// `1 - noise` to the original.
pub fn augment(x: &[f64], noise: f64, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mut view = || {
        let eps = rng.uniform() * noise;
        perturb(x, 1.0 - eps, rng)
    };
    let a = view();
    let b = view();
    (a, b)
}

/// Train and test sets drawn from one random subspace ensemble.
pub fn synthetic_split(
    ambient_dim: usize,
    clusters: usize,
    rank: usize,
    per_cluster: usize,
    test_per_cluster: usize,
    noise: f64,
    mode: crate::geometry::EnsembleMode,
    rng: &mut Rng,
) -> Result<(Dataset, Dataset)> {
    let ens = generate_ensemble(ambient_dim, &vec![rank; clusters], mode, rng)?;
    let train = sample_batch(&ens, &vec![per_cluster; clusters], noise, rng)?;
    let test = sample_batch(&ens, &vec![test_per_cluster; clusters], noise, rng)?;
    Ok((
        Dataset::new(train.x, train.labels, Split::Train)?,
        Dataset::new(test.x, test.labels, Split::Test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dot;

    #[test]
    fn noiseless_views_equal_input() {
        let mut rng = Rng::new(0);
        let x = rng.unit_vector(6);
        let (a, b) = augment(&x, 0.0, &mut rng);
        assert_eq!(a, x);
        assert_eq!(b, x);
    }

    #[test]
    fn views_stay_close() {
        let mut rng = Rng::new(1);
        let mut worst = 1.0f64;
        for _ in 0..10_000 {
            let x = rng.unit_vector(8);
            let (a, b) = augment(&x, 0.1, &mut rng);
            worst = worst.min(dot(&a, &x)).min(dot(&b, &x));
        }
        assert!(worst >= 0.9 - 1e-10, "{worst}");
    }

    #[test]
    fn stratified_probe() {
        let mut rng = Rng::new(2);
        let (train, _) = synthetic_split(
            8,
            3,
            2,
            20,
            5,
            0.0,
            crate::geometry::EnsembleMode::Random,
            &mut rng,
        )
        .unwrap();
        let rows = train.stratified(8, &mut rng);
        let sub = train.subset(&rows);
        assert_eq!(sub.len(), 24);
        for c in 0..3 {
            assert_eq!(sub.labels.iter().filter(|&&l| l == c).count(), 8);
        }
    }
}
