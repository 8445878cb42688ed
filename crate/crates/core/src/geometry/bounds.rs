/// Noise-induced projection bounds `(delta, Delta)` for noise level `eps` and
/// cluster integrity `rho`.
///
/// `delta` bounds the projection of a noisy in-cluster sample onto a direction
/// orthogonal to its own subspace; `Delta` lower-bounds the projection of a
/// noisy sample onto a direction that sees its clean version with at least `rho`.
pub fn noise_bounds(eps: f64, rho: f64) -> (f64, f64) {
    let keep = 1.0 - eps;
    let spill = (1.0 - keep * keep).max(0.0);
    let delta = spill.sqrt();
    let big_delta = keep * rho - (spill * (1.0 - rho * rho).max(0.0)).sqrt();
    (delta, big_delta)
}

/// Per-pair affinity bounds for one fusion layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionBound {
    pub epsilon: f64,
    pub rho: f64,
    pub delta: f64,
    pub big_delta: f64,
    pub n: usize,
    pub nu_i: usize,
    pub nu_j: usize,
    /// Lower bound on a same-cluster affinity: `nu_i * Delta^2`.
    pub ln_alpha: f64,
    /// Upper bound on a cross-cluster affinity:
    /// `(nu_i + nu_j) delta + (n - nu_i - nu_j) delta^2`.
    pub ln_beta: f64,
    /// Asymptotic sharpness gain `(1/n) exp(n (delta^2 - Delta^2) + delta)`.
    pub gamma: f64,
}

impl FusionBound {
    pub fn new(epsilon: f64, rho: f64, n: usize, nu_i: usize, nu_j: usize) -> Self {
        let (delta, big_delta) = noise_bounds(epsilon, rho);
        let nf = n as f64;
        let (ni, nj) = (nu_i as f64, nu_j as f64);
        Self {
            epsilon,
            rho,
            delta,
            big_delta,
            n,
            nu_i,
            nu_j,
            ln_alpha: ni * big_delta * big_delta,
            ln_beta: (ni + nj) * delta + (nf - ni - nj) * delta * delta,
            gamma: (nf * (delta * delta - big_delta * big_delta) + delta).exp() / nf,
        }
    }

    /// Clusters are separable when `delta < Delta`.
    pub fn separable(&self) -> bool {
        self.delta < self.big_delta
    }

    /// Largest absolute deviation between stored and recomputed fields.
    pub fn recompute_error(&self) -> f64 {
        let fresh = FusionBound::new(self.epsilon, self.rho, self.n, self.nu_i, self.nu_j);
        [
            (self.delta, fresh.delta),
            (self.big_delta, fresh.big_delta),
            (self.ln_alpha, fresh.ln_alpha),
            (self.ln_beta, fresh.ln_beta),
            (self.gamma, fresh.gamma),
        ]
        .iter()
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_collapse() {
        assert_eq!(noise_bounds(0.0, 0.9), (0.0, 0.9));
        assert_eq!(noise_bounds(0.0, 1.0), (0.0, 1.0));
    }

    #[test]
    fn closed_form_values() {
        // Evaluated with mpmath at 50 digits.
        let (d, big) = noise_bounds(0.02, 0.9);
        assert!((d - 0.198_997_487_421_323_99).abs() < 1e-14);
        assert!((big - 0.795_259_006_231_194_24).abs() < 1e-14);
    }

    #[test]
    fn monotone_on_grid() {
        let grid: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        for &rho in &grid {
            for w in grid.windows(2) {
                let (a, b) = (w[0].min(0.999), w[1].min(0.999));
                assert!(noise_bounds(b, rho).0 >= noise_bounds(a, rho).0);
            }
        }
        for &eps in &grid {
            for w in grid.windows(2) {
                assert!(noise_bounds(eps, w[1]).1 >= noise_bounds(eps, w[0]).1 - 1e-15);
            }
        }
    }

    #[test]
    fn separable_flag_and_recompute() {
        let b = FusionBound::new(0.02, 0.9, 30, 10, 10);
        assert!(b.separable());
        assert!(b.recompute_error() < 1e-12);
        assert!(!FusionBound::new(0.5, 0.3, 30, 10, 10).separable());
    }
}
