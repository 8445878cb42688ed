use std::io::Write as _;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fusion::export::{export_attention, pgm_decode};
use fusion::geometry::{
    affinity, construct_thm1_weights, fusion_iterate, generate_ensemble, noise_bounds, rho_brute,
    rho_greedy, sample_batch, sharpness, Activation, AffinityRecord, EnsembleMode, FusionOptions,
    RhoSearch, SubspaceEnsemble,
};
use fusion::heads::{head_gradient_error, init_head, AttentionMode, HeadConfig, HeadKind};
use fusion::losses::{
    build_target, cosine_affinity_on, divergence_between, g_normalize, kl_softmax_loss,
    kl_softmax_on, loss_gradient_error, nt_xent, nt_xent_on, view_groups, LossKind, Mixture,
    PairSource,
};
use fusion::numerics::io::matrix_from_csv;
use fusion::pipeline::{load_mnist, metrics_csv, train, RunConfig, Split, TrainOutcome};
use fusion::{Matrix, Rng, Tape};

/// Written straight to stderr so the line shows up whether or not the
/// harness captures test output.
fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n} {name}: {verdict} ({detail})"
    );
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

#[test]
fn criterion_1_block_form() {
    let start = Instant::now();
    let (mut worst_cross, mut worst_gap, mut worst_def_gap) =
        (0.0f64, f64::INFINITY, f64::INFINITY);
    for seed in 0..10 {
        let mut rng = Rng::new(seed);
        let ens = generate_ensemble(16, &[2, 2, 2], EnsembleMode::Random, &mut rng).unwrap();
        let batch = sample_batch(&ens, &[10, 10, 10], 0.0, &mut rng).unwrap();
        let c = construct_thm1_weights(&ens, &batch, &RhoSearch::default(), &mut rng).unwrap();
        let a = affinity(&batch.x, &c.w).unwrap();
        let rho_hat = c.rho_hat();
        let rho_def = (0..3)
            .map(|k| {
                rho_greedy(
                    &ens,
                    &batch.clean,
                    &batch.labels,
                    k,
                    &RhoSearch::default(),
                    &mut rng,
                )
                .unwrap()
                .rho
            })
            .fold(f64::INFINITY, f64::min);
        for i in 0..batch.len() {
            for j in 0..batch.len() {
                let v = a.get(i, j);
                if batch.labels[i] != batch.labels[j] {
                    worst_cross = worst_cross.max(v.abs());
                } else {
                    let nu = batch.cluster_sizes[i] as f64;
                    worst_gap = worst_gap.min(v - nu * rho_hat * rho_hat);
                    worst_def_gap = worst_def_gap.min(v - nu * rho_def * rho_def);
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_cross < 1e-9 && worst_gap >= -1e-6 && elapsed < Duration::from_secs(10);
    report(
        1,
        "block_form",
        pass,
        &format!(
            "max cross |A| {worst_cross:.2e}, min in-block A - nu*rho_hat^2 {worst_gap:.3e}, \
             against one-subspace unsigned rho {worst_def_gap:.3e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn lines(m: usize, dirs: &[Vec<f64>]) -> SubspaceEnsemble {
    SubspaceEnsemble::from_bases(m, dirs.iter().map(|d| Matrix::column(d)).collect()).unwrap()
}

#[test]
fn criterion_2_rho_search() {
    let start = Instant::now();
    let steps = 180;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = Rng::new(seed);
        let (m, ranks) = if seed % 2 == 0 {
            (4, vec![2, 2])
        } else {
            (4, vec![1, 1, 1])
        };
        let ens = generate_ensemble(m, &ranks, EnsembleMode::Random, &mut rng).unwrap();
        let batch = sample_batch(&ens, &vec![6; ranks.len()], 0.0, &mut rng).unwrap();
        let brute = rho_brute(&ens, &batch.x, &batch.labels, 0, steps).unwrap();
        let greedy = rho_greedy(
            &ens,
            &batch.x,
            &batch.labels,
            0,
            &RhoSearch::default(),
            &mut rng,
        )
        .unwrap();
        worst = worst.max((greedy.rho - brute).abs());
    }
    let ortho = lines(2, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let ortho_rho = rho_greedy(
        &ortho,
        &Matrix::identity(2),
        &[0, 1],
        0,
        &RhoSearch::default(),
        &mut Rng::new(0),
    )
    .unwrap()
    .rho;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let diag = vec![h, h, 0.0];
    let pair = lines(3, &[vec![1.0, 0.0, 0.0], diag.clone()]);
    let x = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], diag]).unwrap();
    let pair_rho = rho_greedy(
        &pair,
        &x,
        &[0, 1],
        0,
        &RhoSearch::default(),
        &mut Rng::new(1),
    )
    .unwrap()
    .rho;
    let elapsed = start.elapsed();
    let pass = worst <= 0.05
        && (ortho_rho - 1.0).abs() < 1e-3
        && (pair_rho - h).abs() < 1e-3
        && elapsed < Duration::from_secs(30);
    report(
        2,
        "rho_search",
        pass,
        &format!(
            "max |greedy - brute| {worst:.4} over 20, orthogonal {ortho_rho:.6}, 45 degrees {pair_rho:.6}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_sharpness_amplification() {
    let start = Instant::now();
    let eps = 0.02;
    let (mut monotone, mut exp_monotone, mut exp_first_three, mut separable) = (0, 0, 0, 0);
    let mut trace = Vec::new();
    for seed in 0..10u64 {
        let mut rng = Rng::new(seed);
        let ens = generate_ensemble(16, &[1, 1, 1], EnsembleMode::Random, &mut rng).unwrap();
        let batch = sample_batch(&ens, &[10, 10, 10], eps, &mut rng).unwrap();
        let c = construct_thm1_weights(&ens, &batch, &RhoSearch::default(), &mut rng).unwrap();
        let (delta, big_delta) = noise_bounds(eps, c.rho_hat());
        separable += (delta < big_delta) as usize;
        let relu = fusion_iterate(&batch, &c.w, &FusionOptions::residual_free(4)).unwrap();
        let s: Vec<f64> = relu.iter().map(|r| r.sharpness).collect();
        monotone += s.windows(2).all(|w| w[1] >= w[0]) as usize;
        let opts = FusionOptions {
            activation: Activation::Exp,
            ..FusionOptions::residual_free(4)
        };
        let exp = fusion_iterate(&batch, &c.w, &opts).unwrap();
        let se: Vec<f64> = exp
            .iter()
            .map(|r| sharpness(&r.a.map(f64::exp), &r.labels).unwrap())
            .collect();
        exp_monotone += se.windows(2).all(|w| w[1] >= w[0]) as usize;
        exp_first_three += se[..3].windows(2).all(|w| w[1] >= w[0]) as usize;
        if seed == 0 {
            trace = s;
        }
    }
    let elapsed = start.elapsed();
    let pass = separable == 10 && monotone >= 9 && elapsed < Duration::from_secs(30);
    report(
        3,
        "sharpness_amplification",
        pass,
        &format!(
            "relu non-decreasing 1->4 on {monotone}/10 (need 9), separable {separable}/10, seed 0 {trace:.3?}; \
             exp-weight diagnostic 1->4 {exp_monotone}/10, 1->3 {exp_first_three}/10; {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_infonce_equivalence() {
    let start = Instant::now();
    let tau = 0.2;
    // Three views per sample, so the constant is -ln 2 rather than zero.
    let groups: Vec<usize> = (0..9).map(|i| i / 3).collect();
    let pairs = build_target(&groups, PairSource::AugmentationPairs, false).unwrap();
    let q = pairs.normalized().unwrap();
    let mut gaps = Vec::new();
    let mut worst_cos = 1.0f64;
    for seed in 0..20 {
        let z = Rng::new(seed).normal_matrix(9, 5);
        let zn = z.row_l2_normalize().unwrap();
        let a = zn.matmul_nt(&zn).unwrap();
        gaps.push(
            kl_softmax_loss(&a, &q, tau).unwrap().value - nt_xent(&z, &pairs, tau).unwrap().value,
        );

        let tape = Tape::new();
        let p = tape.param(z.clone());
        let kl = kl_softmax_on(cosine_affinity_on(p).unwrap(), &q, tau).unwrap();
        let g1 = tape.grad(kl, &[p]).unwrap().remove(0);
        let tape = Tape::new();
        let p = tape.param(z.clone());
        let nt = nt_xent_on(p, &pairs, tau).unwrap();
        let g2 = tape.grad(nt, &[p]).unwrap().remove(0);
        let cos = g1.hadamard(&g2).unwrap().sum() / (g1.frobenius_norm() * g2.frobenius_norm());
        worst_cos = worst_cos.min(cos);
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let std = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64).sqrt();
    let elapsed = start.elapsed();
    let pass = std < 1e-9 && worst_cos >= 0.999 && elapsed < Duration::from_secs(10);
    report(
        4,
        "infonce_equivalence",
        pass,
        &format!(
            "constant {mean:.12} (-ln 2 = {:.12}) with spread {std:.3e}, min gradient cosine {worst_cos:.12}",
            -std::f64::consts::LN_2
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_gradients() {
    let start = Instant::now();
    let mut worst: Vec<(String, f64)> = Vec::new();
    let losses = [
        (LossKind::NtXent, Mixture::Halved, "nt_xent"),
        (LossKind::Jsd, Mixture::Halved, "jsd"),
        (LossKind::Jsd, Mixture::Unhalved, "jsd_unhalved"),
        (LossKind::KlSoftmax, Mixture::Halved, "kl_softmax"),
    ];
    for (kind, mixture, name) in losses {
        let mut e = 0.0f64;
        for seed in 0..10 {
            let z = Rng::new(seed).normal_matrix(6, 4);
            let pairs = build_target(
                &view_groups(3),
                PairSource::AugmentationPairs,
                kind != LossKind::NtXent,
            )
            .unwrap();
            e = e.max(loss_gradient_error(kind, &z, &pairs, 0.5, mixture, 1e-5).unwrap());
        }
        worst.push((name.to_string(), e));
    }
    let mut heads = Vec::new();
    for mode in [AttentionMode::Equation, AttentionMode::CodeListing] {
        for residual in [true, false] {
            heads.push(HeadConfig {
                mode,
                residual,
                ..HeadConfig::new(HeadKind::Transfusion, 4, 2)
            });
        }
    }
    heads.push(HeadConfig {
        heads: 2,
        hidden: 6,
        ..HeadConfig::new(HeadKind::Transformer, 4, 2)
    });
    heads.push(HeadConfig {
        hidden: 5,
        ..HeadConfig::new(HeadKind::Ffn, 4, 3)
    });
    let mut redraws = 0;
    for cfg in heads {
        let mut e = 0.0f64;
        for seed in 0..10 {
            // Residual-free blocks can zero a row, which the next block cannot
            // normalize; such draws are replaced.
            let mut rng = Rng::new(1000 + seed);
            let err = loop {
                let head = init_head(&cfg, &mut rng).unwrap();
                let x = rng.normal_matrix(5, 4);
                let r = rng.normal_matrix(5, 4);
                match head_gradient_error(&head, &x, &r, 1e-5) {
                    Ok(v) => break v,
                    Err(fusion::Error::Degenerate { .. }) => redraws += 1,
                    Err(other) => panic!("{other}"),
                }
            };
            e = e.max(err);
        }
        let name = match cfg.kind {
            HeadKind::Transfusion => {
                format!("transfusion_{:?}_residual_{}", cfg.mode, cfg.residual)
            }
            k => k.name().to_string(),
        };
        worst.push((name, e));
    }
    let elapsed = start.elapsed();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let pass = max < 1e-4 && elapsed < Duration::from_secs(60);
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    report(
        5,
        "gradients",
        pass,
        &format!(
            "{}; {redraws} degenerate draws replaced; {:.1}s",
            detail.join(", "),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn random_stochastic(rng: &mut Rng, n: usize) -> Matrix {
    let m = rng.uniform_matrix(n, n, 0.0, 1.0);
    let sums = m.row_sums();
    Matrix::from_fn(n, n, |i, j| m.get(i, j) / sums[i])
}

#[test]
fn criterion_6_loss_properties() {
    let mut rng = Rng::new(6);
    let (mut asym, mut min_div, mut self_div, mut sign_exact) =
        (0.0f64, f64::INFINITY, 0.0f64, true);
    for _ in 0..50 {
        let p = random_stochastic(&mut rng, 6);
        let q = random_stochastic(&mut rng, 6);
        let pq = divergence_between(&p, &q, Mixture::Halved).unwrap();
        let qp = divergence_between(&q, &p, Mixture::Halved).unwrap();
        asym = asym.max((pq - qp).abs());
        min_div = min_div.min(pq);
        self_div = self_div.max(divergence_between(&p, &p, Mixture::Halved).unwrap().abs());
        let a = rng.normal_matrix(6, 6);
        sign_exact &= g_normalize(&a).unwrap() == g_normalize(&a.scale(-1.0)).unwrap();
    }
    let e = |i: usize| -> Vec<f64> { (0..2).map(|j| if i == j { 1.0 } else { 0.0 }).collect() };
    let pairs =
        |s: usize| build_target(&view_groups(s), PairSource::AugmentationPairs, false).unwrap();
    let two = nt_xent(&Matrix::from_rows(&[e(0), e(0)]).unwrap(), &pairs(1), 0.2)
        .unwrap()
        .value;
    let four = nt_xent(
        &Matrix::from_rows(&[e(0), e(0), e(1), e(1)]).unwrap(),
        &pairs(2),
        1.0,
    )
    .unwrap()
    .value;
    let four_want = 0.551_444_713_932_051_09;
    let pass = asym <= 1e-12
        && min_div >= 0.0
        && self_div <= 1e-9
        && sign_exact
        && two == 0.0
        && (four - four_want).abs() <= 1e-9;
    report(
        6,
        "loss_properties",
        pass,
        &format!(
            "asymmetry {asym:.1e}, min divergence {min_div:.3e}, self divergence {self_div:.1e}, \
             sign-insensitive {sign_exact}, two-sample {two}, four-sample {four:.15}"
        ),
    );
    assert!(pass);
}

struct SeedRun {
    out: TrainOutcome,
    params: usize,
}

/// The ten seeded TransFusion runs shared by the reproduction and the head
/// comparison, with their total wall time.
fn transfusion_runs() -> &'static (Vec<SeedRun>, Duration) {
    static RUNS: OnceLock<(Vec<SeedRun>, Duration)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let runs = (0..10)
            .map(|seed| {
                let out = train(&RunConfig::synthetic_default(seed)).unwrap();
                let params = out.head.num_parameters();
                SeedRun { out, params }
            })
            .collect();
        (runs, start.elapsed())
    })
}

#[test]
fn criterion_7_deep_fusion() {
    let cfg = RunConfig::synthetic_default(0);
    assert_eq!(cfg.head.kind, HeadKind::Transfusion);
    assert_eq!(cfg.head.depth, 4);
    assert_eq!(cfg.loss.kind, LossKind::NtXent);
    assert!(cfg.optimizer.epochs <= 300);
    let (runs, elapsed) = transfusion_runs();
    let mut wins = 0;
    let mut min_acc = f64::INFINITY;
    let mut cells = Vec::new();
    for r in runs {
        let rep = r.out.final_report();
        let (first, last) = (rep.alignment[0], rep.alignment[rep.alignment.len() - 1]);
        wins += (last > first) as usize;
        min_acc = min_acc.min(rep.unsup_acc);
        cells.push(format!("{first:.2}->{last:.2}"));
    }
    let pass = wins >= 8
        && min_acc >= 0.9
        && *elapsed < Duration::from_secs(600)
        && runs.iter().all(|r| r.out.diverged.is_none());
    report(
        7,
        "deep_fusion",
        pass,
        &format!(
            "alignment layer 4 > layer 1 on {wins}/10 [{}], min 1-NN accuracy {min_acc:.3}, {:.0}s",
            cells.join(" "),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_head_comparison() {
    let (runs, _) = transfusion_runs();
    let (mut ok, mut strict) = (0, 0);
    let mut ratio_ok = true;
    let mut cells = Vec::new();
    for (seed, tf) in runs.iter().enumerate() {
        let mut cfg = RunConfig::synthetic_default(seed as u64);
        cfg.head = HeadConfig {
            hidden: 64,
            ..HeadConfig::new(HeadKind::Ffn, 32, 4)
        };
        let ffn = train(&cfg).unwrap();
        let np = ffn.head.num_parameters();
        ratio_ok &= (np as f64 - tf.params as f64).abs() <= 0.1 * tf.params as f64;
        let (a, b) = (
            tf.out.final_report().unsup_acc,
            ffn.final_report().unsup_acc,
        );
        ok += (a >= b) as usize;
        strict += (a > b) as usize;
        cells.push(format!("{a:.3}/{b:.3}"));
    }
    let pass = ok >= 7 && ratio_ok;
    report(
        8,
        "head_comparison",
        pass,
        &format!(
            "transfusion >= ffn on {ok}/10 (strictly {strict}), parameters matched {ratio_ok}, accuracies [{}]",
            cells.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_determinism_and_formats() {
    let mut cfg = RunConfig::synthetic_default(17);
    cfg.optimizer.epochs = 3;
    let a = train(&cfg).unwrap();
    let b = train(&cfg).unwrap();
    let same_csv = metrics_csv(&a.history, 4) == metrics_csv(&b.history, 4);

    let set = load_mnist(
        &data("fixture-images-idx3-ubyte"),
        &data("fixture-labels-idx1-ubyte"),
        None,
        Split::Test,
    )
    .unwrap();
    let golden = Matrix::from_fn(3, 784, |k, p| {
        ((k * 31 + (p / 28) * 3 + (p % 28) * 5) % 256) as f64 / 255.0
    });
    let idx_ok = set.samples == golden && set.labels == vec![5, 0, 4];

    let dir = tempfile::tempdir().unwrap();
    let recs: Vec<AffinityRecord> = a.final_records().to_vec();
    export_attention(&recs, dir.path()).unwrap();
    let mut export_ok = true;
    for r in &recs {
        let csv =
            std::fs::read_to_string(dir.path().join(format!("layer_{}.csv", r.layer))).unwrap();
        export_ok &= matrix_from_csv(&csv).unwrap().max_abs_diff(&r.a).unwrap() <= 1e-15;
        let pgm =
            std::fs::read_to_string(dir.path().join(format!("layer_{}.pgm", r.layer))).unwrap();
        let (w, h, maxval, px) = pgm_decode(&pgm).unwrap();
        export_ok &= (h, w) == r.a.shape() && maxval == 255 && px.len() == w * h;
    }
    let pass = same_csv && idx_ok && export_ok;
    report(
        9,
        "determinism_and_formats",
        pass,
        &format!("identical metrics csv {same_csv}, idx fixture {idx_ok}, attention export round trip {export_ok}"),
    );
    assert!(pass);
}
