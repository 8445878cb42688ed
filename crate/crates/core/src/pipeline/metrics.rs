use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::io::format_g17;
use crate::numerics::{Matrix, Tape};

/// Share of nearest neighbours (Euclidean, ties to the lowest index) whose
/// label matches.
pub fn nearest_neighbor_accuracy(emb: &Matrix, labels: &[usize]) -> Result<f64> {
    let n = emb.rows();
    if n < 2 {
        return Err(Error::degenerate(
            "nearest_neighbor_accuracy",
            format!("need 2 samples, got {n}"),
        ));
    }
    if labels.len() != n {
        return Err(Error::shape(
            "nearest_neighbor_accuracy",
            emb.shape(),
            (labels.len(), emb.cols()),
        ));
    }
    let sq: Vec<f64> = (0..n)
        .map(|i| emb.row(i).iter().map(|v| v * v).sum())
        .collect();
    let gram = emb.matmul_nt(emb)?;
    let mut hits = 0usize;
    for i in 0..n {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = sq[i] + sq[j] - 2.0 * gram.get(i, j);
            if d < best.0 {
                best = (d, j);
            }
        }
        if labels[best.1] == labels[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Multinomial logistic regression on frozen features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub w: Matrix,
    pub b: Matrix,
}

pub const PROBE_STEPS: usize = 300;
pub const PROBE_RATE: f64 = 0.5;

impl LinearProbe {
    /// Full-batch gradient descent with momentum from zero weights.
    pub fn fit(x: &Matrix, labels: &[usize], classes: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 || classes == 0 {
            return Err(Error::degenerate("linear_probe", "no training data"));
        }
        let onehot = Matrix::from_fn(n, classes, |i, c| if labels[i] == c { 1.0 } else { 0.0 });
        let mut w = Matrix::zeros(d, classes);
        let mut b = Matrix::zeros(1, classes);
        let mut vw = Matrix::zeros(d, classes);
        let mut vb = Matrix::zeros(1, classes);
        for _ in 0..PROBE_STEPS {
            let tape = Tape::new();
            let (pw, pb) = (tape.param(w.clone()), tape.param(b.clone()));
            let logits = tape.constant(x.clone()).matmul(pw)?.add_row(pb)?;
            let picked = logits.mul(tape.constant(onehot.clone()))?.sum();
            let loss = logits
                .row_logsumexp(false)?
                .sum()
                .sub(picked)?
                .scale(1.0 / n as f64);
            let g = tape.grad(loss, &[pw, pb])?;
            vw = vw.scale(0.9).add(&g[0])?;
            vb = vb.scale(0.9).add(&g[1])?;
            w = w.sub(&vw.scale(PROBE_RATE))?;
            b = b.sub(&vb.scale(PROBE_RATE))?;
        }
        Ok(Self { w, b })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = x.matmul(&self.w)?;
        Ok((0..x.rows())
            .map(|i| {
                let row: Vec<f64> = logits
                    .row(i)
                    .iter()
                    .zip(self.b.row(0))
                    .map(|(a, b)| a + b)
                    .collect();
                (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

/// Mean over rows of the attention mass on same-label columns.
pub fn block_alignment(a: &Matrix, labels: &[usize]) -> f64 {
    let n = a.rows();
    let mut total = 0.0;
    for i in 0..n {
        total += (0..a.cols())
            .filter(|&j| labels[j] == labels[i])
            .map(|j| a.get(i, j))
            .sum::<f64>();
    }
    total / n as f64
}

/// ReLU then row normalization; rows with no positive mass become uniform.
pub fn to_row_stochastic(a: &Matrix) -> Matrix {
    let mut out = a.map(|v| v.max(0.0));
    let cols = out.cols();
    for i in 0..out.rows() {
        let s: f64 = out.row(i).iter().sum();
        let row = out.row_mut(i);
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / cols as f64);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub unsup_acc: f64,
    pub probe_acc: f64,
    /// Sharpness of the probe batch attention, one value per attention layer.
    pub sharpness: Vec<f64>,
    pub alignment: Vec<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub report: MetricsReport,
}

/// Header `epoch,loss,unsup_acc,probe_acc,sharpness_l1..,align_l1..`.
pub fn metrics_csv(history: &[EpochMetrics], layers: usize) -> String {
    let mut out = String::from("epoch,loss,unsup_acc,probe_acc");
    for l in 1..=layers {
        let _ = write!(out, ",sharpness_l{l}");
    }
    for l in 1..=layers {
        let _ = write!(out, ",align_l{l}");
    }
    out.push('\n');
    for h in history {
        let r = &h.report;
        let _ = write!(
            out,
            "{},{},{},{}",
            h.epoch,
            format_g17(h.loss),
            format_g17(r.unsup_acc),
            format_g17(r.probe_acc)
        );
        for v in r.sharpness.iter().chain(&r.alignment) {
            let _ = write!(out, ",{}", format_g17(*v));
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossLogEntry {
    pub step: usize,
    pub epoch: usize,
    pub loss_name: String,
    pub value: f64,
}

pub fn loss_log_csv(entries: &[LossLogEntry]) -> String {
    let mut out = String::from("step,epoch,loss_name,value\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.step,
            e.epoch,
            e.loss_name,
            format_g17(e.value)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn onehot(labels: &[usize], c: usize) -> Matrix {
        Matrix::from_fn(
            labels.len(),
            c,
            |i, j| if labels[i] == j { 1.0 } else { 0.0 },
        )
    }

    #[test]
    fn one_hot_embeddings_are_perfect() {
        let labels = [0, 1, 2, 0, 1, 2, 2];
        let x = onehot(&labels, 3);
        assert_eq!(nearest_neighbor_accuracy(&x, &labels).unwrap(), 1.0);
        let probe = LinearProbe::fit(&x, &labels, 3).unwrap();
        assert_eq!(probe.accuracy(&x, &labels).unwrap(), 1.0);
    }

    #[test]
    fn separable_probe() {
        let mut rng = Rng::new(4);
        let labels: Vec<usize> = (0..60).map(|i| i % 2).collect();
        let x = Matrix::from_fn(60, 2, |i, j| {
            if j == 0 {
                if labels[i] == 0 {
                    -1.0
                } else {
                    1.0
                }
            } else {
                rng.normal()
            }
        });
        let probe = LinearProbe::fit(&x, &labels, 2).unwrap();
        assert_eq!(probe.accuracy(&x, &labels).unwrap(), 1.0);
    }

    #[test]
    fn random_embeddings_near_chance() {
        let mut rng = Rng::new(8);
        let (n, c) = (600, 4);
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let acc = nearest_neighbor_accuracy(&rng.normal_matrix(n, 8), &labels).unwrap();
        let p = 1.0 / c as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((acc - p).abs() < 3.0 * sigma, "{acc}");
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [-1.0]]).unwrap();
        assert_eq!(
            nearest_neighbor_accuracy(&x, &[0, 0, 1]).unwrap(),
            2.0 / 3.0
        );
        assert!(nearest_neighbor_accuracy(&Matrix::zeros(1, 2), &[0]).is_err());
    }

    #[test]
    fn alignment_counting() {
        let labels = [0, 0, 1, 1];
        let ideal = Matrix::from_fn(4, 4, |i, j| if i / 2 == j / 2 { 0.5 } else { 0.0 });
        assert_eq!(block_alignment(&ideal, &labels), 1.0);
        let uniform = Matrix::filled(6, 6, 1.0 / 6.0);
        let v = block_alignment(&uniform, &[0, 0, 0, 1, 1, 1]);
        // Uniform mass over all n columns, diagonal included: nu / n.
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn csv_headers() {
        let h = vec![EpochMetrics {
            epoch: 1,
            loss: 0.5,
            report: MetricsReport {
                unsup_acc: 1.0,
                probe_acc: 0.75,
                sharpness: vec![f64::INFINITY, 2.0],
                alignment: vec![0.5, 0.25],
                wall_time_s: 3.0,
            },
        }];
        assert_eq!(
            metrics_csv(&h, 2),
            "epoch,loss,unsup_acc,probe_acc,sharpness_l1,sharpness_l2,align_l1,align_l2\n1,0.5,1,0.75,inf,2,0.5,0.25\n"
        );
        let log = [LossLogEntry {
            step: 0,
            epoch: 0,
            loss_name: "jsd".into(),
            value: 0.25,
        }];
        assert_eq!(
            loss_log_csv(&log),
            "step,epoch,loss_name,value\n0,0,jsd,0.25\n"
        );
    }
}
