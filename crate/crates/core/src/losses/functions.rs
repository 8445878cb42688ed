use super::target::TargetAffinity;
use crate::error::{Error, Result};
use crate::numerics::{finite_diff, max_relative_error, Matrix, Tape, Var, LOG_FLOOR};

/// Default temperature.
pub const DEFAULT_TAU: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    NtXent,
    Jsd,
    KlSoftmax,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::NtXent => "nt_xent",
            Self::Jsd => "jsd",
            Self::KlSoftmax => "kl_softmax",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nt_xent" => Ok(Self::NtXent),
            "jsd" => Ok(Self::Jsd),
            "kl_softmax" => Ok(Self::KlSoftmax),
            other => Err(Error::Usage(format!("unknown loss '{other}'"))),
        }
    }
}

/// Mixture used inside the divergence loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixture {
    /// `M = (P + Q) / 2`: twice the Jensen-Shannon divergence.
    #[default]
    Halved,
    /// `M = P + Q`, as some reference implementations compute it.
    Unhalved,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub tau: Option<f64>,
}

fn check_target(op: &'static str, n: usize, target: &TargetAffinity) -> Result<()> {
    if target.y.shape() != (n, n) {
        return Err(Error::shape(op, (n, n), target.y.shape()));
    }
    if n < 2 {
        return Err(Error::degenerate(op, "need at least 2 rows"));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )))
    }
}

/// Cosine-similarity matrix of the rows of `z`.
pub fn cosine_affinity_on<'t>(z: Var<'t>) -> Result<Var<'t>> {
    let zn = z.row_l2_normalize()?;
    zn.matmul(zn.t())
}

/// NT-Xent: mean over positive pairs `(i, j)` of
/// `log Σ_{k≠i} exp(s_ik / τ) - s_ij / τ`, with `s` the cosine similarity.
pub fn nt_xent_on<'t>(z: Var<'t>, target: &TargetAffinity, tau: f64) -> Result<Var<'t>> {
    check_tau(tau)?;
    check_target("nt_xent", z.shape().0, target)?;
    let pairs = target.y.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    let count = pairs.sum();
    if count == 0.0 {
        return Err(Error::degenerate("nt_xent", "no positive pairs"));
    }
    let s = cosine_affinity_on(z)?.scale(1.0 / tau);
    let lse = s.row_logsumexp(true)?;
    let log_prob = s.sub_col(lse)?;
    Ok(log_prob
        .mul(z.tape().constant(pairs))?
        .sum()
        .scale(-1.0 / count))
}

/// Square, zero the diagonal, add the floor, normalize rows.
pub fn g_normalize_on<'t>(a: Var<'t>) -> Result<Var<'t>> {
    a.square().zero_diag().add_scalar(LOG_FLOOR).row_normalize()
}

/// `KL(Q‖M) + KL(P‖M)` averaged over rows, where `P = g(A)` and `Q` is the
/// row-normalized target.
pub fn jsd_on<'t>(a: Var<'t>, target: &TargetAffinity, mixture: Mixture) -> Result<Var<'t>> {
    let n = a.shape().0;
    check_target("jsd_loss", n, target)?;
    let tape = a.tape();
    let q = target.normalized()?.y;
    let p = g_normalize_on(a)?;
    let qv = tape.constant(q.clone());
    let mix = p.add(qv)?;
    let m = match mixture {
        Mixture::Halved => mix.scale(0.5),
        Mixture::Unhalved => mix,
    };
    let log_m = m.log()?;
    let q_log_q: f64 = q
        .data()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum();
    let kl_q = qv.mul(log_m)?.sum().scale(-1.0).add_scalar(q_log_q);
    let kl_p = p.mul(p.log()?)?.sum().sub(p.mul(log_m)?.sum())?;
    Ok(kl_q.add(kl_p)?.scale(1.0 / n as f64))
}

/// `Σ_rows KL(Q‖P) / n` with `P` the off-diagonal row softmax of `A / τ`.
pub fn kl_softmax_on<'t>(a: Var<'t>, target: &TargetAffinity, tau: f64) -> Result<Var<'t>> {
    check_tau(tau)?;
    let n = a.shape().0;
    check_target("kl_softmax_loss", n, target)?;
    let q = target.normalized()?.y;
    let scaled = a.scale(1.0 / tau);
    let log_p = scaled.sub_col(scaled.row_logsumexp(true)?)?;
    let q_log_q: f64 = q
        .data()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum();
    Ok(a.tape()
        .constant(q)
        .mul(log_p)?
        .sum()
        .scale(-1.0)
        .add_scalar(q_log_q)
        .scale(1.0 / n as f64))
}

/// Loss of a batch of embeddings: NT-Xent directly, the divergence losses on
/// their cosine affinity. The target may be raw or row-normalized.
pub fn embedding_loss_on<'t>(
    kind: LossKind,
    z: Var<'t>,
    target: &TargetAffinity,
    tau: f64,
    mixture: Mixture,
) -> Result<Var<'t>> {
    match kind {
        LossKind::NtXent => nt_xent_on(z, target, tau),
        LossKind::Jsd => jsd_on(cosine_affinity_on(z)?, target, mixture),
        LossKind::KlSoftmax => kl_softmax_on(cosine_affinity_on(z)?, target, tau),
    }
}

/// Largest relative gap between the tape gradient of [`embedding_loss_on`]
/// with respect to `z` and central differences with step `h`.
pub fn loss_gradient_error(
    kind: LossKind,
    z: &Matrix,
    target: &TargetAffinity,
    tau: f64,
    mixture: Mixture,
    h: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let p = tape.param(z.clone());
    let loss = embedding_loss_on(kind, p, target, tau, mixture)?;
    let g = tape.grad(loss, &[p])?.remove(0);
    let numeric = finite_diff(
        |m| eval(|v| embedding_loss_on(kind, v, target, tau, mixture), m),
        z,
        h,
    )?;
    Ok(max_relative_error(&g, &numeric))
}

fn eval(f: impl for<'t> FnOnce(Var<'t>) -> Result<Var<'t>>, x: &Matrix) -> Result<f64> {
    let tape = Tape::new();
    f(tape.constant(x.clone()))?.value().item()
}

pub fn nt_xent(z: &Matrix, target: &TargetAffinity, tau: f64) -> Result<LossValue> {
    Ok(LossValue {
        value: eval(|v| nt_xent_on(v, target, tau), z)?,
        tau: Some(tau),
    })
}

pub fn g_normalize(a: &Matrix) -> Result<Matrix> {
    if a.rows() < 2 || a.rows() != a.cols() {
        return Err(Error::degenerate(
            "g_normalize",
            format!("needs a square matrix with n >= 2, got {:?}", a.shape()),
        ));
    }
    let tape = Tape::new();
    Ok((*g_normalize_on(tape.constant(a.clone()))?.value()).clone())
}

pub fn jsd_loss(a: &Matrix, target: &TargetAffinity, mixture: Mixture) -> Result<LossValue> {
    Ok(LossValue {
        value: eval(|v| jsd_on(v, target, mixture), a)?,
        tau: None,
    })
}

pub fn kl_softmax_loss(a: &Matrix, target: &TargetAffinity, tau: f64) -> Result<LossValue> {
    Ok(LossValue {
        value: eval(|v| kl_softmax_on(v, target, tau), a)?,
        tau: Some(tau),
    })
}

/// `KL(Q‖M) + KL(P‖M)` for two row-stochastic matrices, averaged over rows.
pub fn divergence_between(p: &Matrix, q: &Matrix, mixture: Mixture) -> Result<f64> {
    let m = p.add(q)?;
    let half = matches!(mixture, Mixture::Halved);
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &mm)| {
                let mm = if half { 0.5 * mm } else { mm };
                x * (x.ln() - mm.max(LOG_FLOOR).ln())
            })
            .sum()
    };
    let total: f64 = (0..p.rows())
        .map(|i| kl(q.row(i), m.row(i)) + kl(p.row(i), m.row(i)))
        .sum();
    Ok(total / p.rows() as f64)
}
