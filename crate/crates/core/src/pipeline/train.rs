use std::time::Instant;

use super::config::{DataConfig, RunConfig};
use super::data::{augment, synthetic_split, Dataset, Split};
use super::encoder::{encode, Encoder};
use super::metrics::{
    block_alignment, nearest_neighbor_accuracy, to_row_stochastic, EpochMetrics, LinearProbe,
    LossLogEntry, MetricsReport,
};
use super::mnist::load_mnist;
use super::optim::{learning_rate, Sgd};
use crate::error::{Error, Result};
use crate::geometry::AffinityRecord;
use crate::heads::{head_forward, init_head, ProjectionHead, RecordPolicy};
use crate::losses::{build_target, embedding_loss_on, view_groups, LossKind, PairSource};
use crate::numerics::{Matrix, Rng, Tape, Var};

const DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const STEP_STREAM: u64 = 3;
const PROBE_STREAM: u64 = 4;
const FIT_STREAM: u64 = 5;

/// Loads or generates the train and test sets described by `data`.
pub fn load_data(data: &DataConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    match data {
        DataConfig::Synthetic {
            ambient_dim,
            clusters,
            rank,
            per_cluster,
            test_per_cluster,
            noise,
            ..
        } => synthetic_split(
            *ambient_dim,
            *clusters,
            *rank,
            *per_cluster,
            *test_per_cluster,
            *noise,
            data.ensemble_mode(),
            &mut Rng::new(seed).fork(DATA_STREAM),
        ),
        DataConfig::Mnist {
            images,
            labels,
            test_images,
            test_labels,
            limit,
            test_limit,
        } => Ok((
            load_mnist(images, labels, *limit, Split::Train)?.normalized(),
            load_mnist(test_images, test_labels, *test_limit, Split::Test)?.normalized(),
        )),
    }
}

/// The fixed, stratified test batch whose attention is logged.
pub fn probe_batch(cfg: &RunConfig, test: &Dataset) -> Dataset {
    test.subset(&test.stratified(
        cfg.probe_per_class,
        &mut Rng::new(cfg.seed).fork(PROBE_STREAM),
    ))
}

/// Where training stopped early because a loss or gradient went non-finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub epoch: usize,
    pub step: usize,
    pub detail: String,
}

impl From<Divergence> for Error {
    fn from(d: Divergence) -> Self {
        Error::Diverged {
            epoch: d.epoch,
            step: d.step,
            detail: d.detail,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub encoder: Encoder,
    pub head: ProjectionHead,
    pub train: Dataset,
    pub test: Dataset,
    /// Fixed batch of test samples whose attention is recorded every epoch.
    pub probe: Dataset,
    /// Epoch 0 is the untrained model.
    pub history: Vec<EpochMetrics>,
    pub loss_log: Vec<LossLogEntry>,
    /// Probe-batch attention per evaluated epoch, aligned with `history`.
    pub records: Vec<Vec<AffinityRecord>>,
    pub diverged: Option<Divergence>,
}

impl TrainOutcome {
    pub fn final_report(&self) -> &MetricsReport {
        &self
            .history
            .last()
            .expect("history holds the untrained model")
            .report
    }

    pub fn final_records(&self) -> &[AffinityRecord] {
        self.records.last().map_or(&[], Vec::as_slice)
    }
}

fn view_batch(train: &Dataset, rows: &[usize], noise: f64, rng: &mut Rng) -> Matrix {
    let mut out = Matrix::zeros(2 * rows.len(), train.dim());
    for (k, &i) in rows.iter().enumerate() {
        let (a, b) = augment(train.samples.row(i), noise, rng);
        out.row_mut(2 * k).copy_from_slice(&a);
        out.row_mut(2 * k + 1).copy_from_slice(&b);
    }
    out
}

/// Trains encoder and head with SGD. Deterministic for a given config.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train, test) = load_data(&cfg.data, cfg.seed)?;
    if train.len() < 2 || test.len() < 2 {
        return Err(Error::degenerate(
            "train",
            "need at least 2 train and test samples",
        ));
    }
    let master = Rng::new(cfg.seed);
    let mut init_rng = master.fork(INIT_STREAM);
    let mut encoder = Encoder::init(
        train.dim(),
        cfg.encoder.hidden,
        cfg.encoder.output,
        &mut init_rng,
    );
    let mut head = init_head(&cfg.head, &mut init_rng)?;
    let probe = probe_batch(cfg, &test);

    let shapes: Vec<(usize, usize)> = encoder
        .params()
        .iter()
        .chain(head.params().iter())
        .map(|p| p.shape())
        .collect();
    let o = &cfg.optimizer;
    let mut sgd = Sgd::new(o.momentum, o.weight_decay, &shapes);
    let per_step = o.batch_size / 2;
    let raw = build_target(&view_groups(per_step), PairSource::AugmentationPairs, false)?;
    let norm = raw.normalized()?;

    let start = Instant::now();
    let mut out = TrainOutcome {
        history: Vec::new(),
        loss_log: Vec::new(),
        records: Vec::new(),
        diverged: None,
        encoder: encoder.clone(),
        head: head.clone(),
        train,
        test,
        probe,
    };
    let (report, recs) = evaluate(
        &encoder, &head, &out.train, &out.test, &out.probe, cfg, start,
    )?;
    out.history.push(EpochMetrics {
        epoch: 0,
        loss: f64::NAN,
        report,
    });
    out.records.push(recs);

    let mut rng = master.fork(STEP_STREAM);
    let mut step = 0usize;
    'epochs: for epoch in 0..o.epochs {
        let lr = learning_rate(o, epoch, o.epochs);
        let mut order: Vec<usize> = (0..out.train.len()).collect();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for rows in order.chunks_exact(per_step) {
            let x = view_batch(&out.train, rows, cfg.augment_noise, &mut rng);
            let tape = Tape::new();
            let ps: Vec<Var> = encoder
                .params()
                .into_iter()
                .chain(head.params())
                .map(|p| tape.param(p.clone()))
                .collect();
            let (pe, ph) = ps.split_at(4);
            let outcome = (|| {
                let e = encoder.forward_on(pe, tape.constant(x))?;
                let z = head.forward_on(ph, e)?.z;
                let target = if cfg.loss.kind == LossKind::NtXent {
                    &raw
                } else {
                    &norm
                };
                let loss =
                    embedding_loss_on(cfg.loss.kind, z, target, cfg.loss.tau, cfg.loss.mixture)?;
                let value = loss.value().item()?;
                Ok::<_, Error>((value, tape.grad(loss, &ps)?))
            })();
            let (value, grads) = match outcome {
                Ok(v) => v,
                Err(e) => {
                    out.diverged = Some(Divergence {
                        epoch: epoch + 1,
                        step,
                        detail: e.to_string(),
                    });
                    break 'epochs;
                }
            };
            if !value.is_finite() || !grads.iter().all(Matrix::is_finite) {
                out.diverged = Some(Divergence {
                    epoch: epoch + 1,
                    step,
                    detail: format!("loss {value} or its gradient is not finite"),
                });
                break 'epochs;
            }
            let mut params = encoder.params_mut();
            params.extend(head.params_mut());
            sgd.step(&mut params, &grads, lr)?;
            out.loss_log.push(LossLogEntry {
                step,
                epoch: epoch + 1,
                loss_name: cfg.loss.kind.name().to_string(),
                value,
            });
            total += value;
            batches += 1;
            step += 1;
        }
        let (report, recs) = evaluate(
            &encoder, &head, &out.train, &out.test, &out.probe, cfg, start,
        )?;
        out.history.push(EpochMetrics {
            epoch: epoch + 1,
            loss: if batches > 0 {
                total / batches as f64
            } else {
                f64::NAN
            },
            report,
        });
        out.records.push(recs);
    }
    out.encoder = encoder;
    out.head = head;
    Ok(out)
}

/// Test-set 1-NN accuracy, linear-probe accuracy, and per-layer attention
/// statistics on the probe batch.
pub fn evaluate(
    encoder: &Encoder,
    head: &ProjectionHead,
    train: &Dataset,
    test: &Dataset,
    probe: &Dataset,
    cfg: &RunConfig,
    start: Instant,
) -> Result<(MetricsReport, Vec<AffinityRecord>)> {
    let test_z = encode(encoder, &test.samples)?;
    let unsup_acc = nearest_neighbor_accuracy(&test_z, &test.labels)?;

    let mut rows: Vec<usize> = (0..train.len()).collect();
    Rng::new(cfg.seed).fork(FIT_STREAM).shuffle(&mut rows);
    rows.truncate(((cfg.probe_fraction * train.len() as f64).ceil() as usize).max(1));
    let fit = train.subset(&rows);
    let classes = train.num_classes().max(test.num_classes());
    let linear = LinearProbe::fit(&encode(encoder, &fit.samples)?, &fit.labels, classes)?;
    let probe_acc = linear.accuracy(&test_z, &test.labels)?;

    let policy = if cfg.all_heads {
        RecordPolicy::AllHeads
    } else {
        RecordPolicy::FirstHead
    };
    let records = head_forward(
        head,
        &encode(encoder, &probe.samples)?,
        Some(&probe.labels),
        policy,
    )?
    .records;
    let layers = records.iter().map(|r| r.layer).max().unwrap_or(0);
    let mut sharpness = Vec::with_capacity(layers);
    let mut alignment = Vec::with_capacity(layers);
    for l in 1..=layers {
        let mine: Vec<&AffinityRecord> = records.iter().filter(|r| r.layer == l).collect();
        let k = mine.len() as f64;
        sharpness.push(mine.iter().map(|r| r.sharpness).sum::<f64>() / k);
        alignment.push(
            mine.iter()
                .map(|r| block_alignment(&to_row_stochastic(&r.a), &r.labels))
                .sum::<f64>()
                / k,
        );
    }
    Ok((
        MetricsReport {
            unsup_acc,
            probe_acc,
            sharpness,
            alignment,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        records,
    ))
}
