use fusion::heads::{HeadConfig, HeadKind};
use fusion::pipeline::{loss_log_csv, metrics_csv, train, DataConfig, RunConfig};

fn small(seed: u64, kind: HeadKind) -> RunConfig {
    let mut cfg = RunConfig::synthetic_default(seed);
    cfg.data = DataConfig::Synthetic {
        ambient_dim: 12,
        clusters: 3,
        rank: 2,
        per_cluster: 20,
        test_per_cluster: 10,
        noise: 0.0,
        axis_aligned: false,
    };
    cfg.encoder.hidden = 16;
    cfg.encoder.output = 8;
    cfg.head = HeadConfig {
        heads: 2,
        ..HeadConfig::new(kind, 8, 2)
    };
    cfg.optimizer.epochs = 3;
    cfg.optimizer.batch_size = 16;
    cfg.optimizer.learning_rate = 0.01;
    cfg
}

#[test]
fn repeated_runs_give_identical_csvs() {
    for kind in [HeadKind::Ffn, HeadKind::Transfusion, HeadKind::Transformer] {
        let a = train(&small(9, kind)).unwrap();
        let b = train(&small(9, kind)).unwrap();
        let depth = a.final_report().alignment.len();
        assert_eq!(
            metrics_csv(&a.history, depth),
            metrics_csv(&b.history, depth)
        );
        assert_eq!(loss_log_csv(&a.loss_log), loss_log_csv(&b.loss_log));
        let c = train(&small(10, kind)).unwrap();
        assert_ne!(loss_log_csv(&a.loss_log), loss_log_csv(&c.loss_log));
    }
}

#[test]
fn metrics_rows_cover_every_epoch() {
    let out = train(&small(1, HeadKind::Transfusion)).unwrap();
    let csv = metrics_csv(&out.history, 2);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "epoch,loss,unsup_acc,probe_acc,sharpness_l1,sharpness_l2,align_l1,align_l2"
    );
    assert_eq!(lines.len(), 1 + 4);
    for l in &lines[1..] {
        assert_eq!(l.split(',').count(), 8);
    }
    let r = out.final_report();
    assert!((0.0..=1.0).contains(&r.unsup_acc) && (0.0..=1.0).contains(&r.probe_acc));
    assert!(r.alignment.iter().all(|a| (0.0..=1.0 + 1e-12).contains(a)));
}
