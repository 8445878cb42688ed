use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fusion::export::export_attention;
use fusion::geometry::{
    affinity, check_pair_bounds, cluster_integrity, construct_thm1_weights, fusion_iterate,
    generate_ensemble, records_from_csv, records_to_csv, sample_batch, sharpness, Activation,
    AffinityRecord, ClusteredBatch, EnsembleMode, FusionBound, FusionOptions, RhoSearch,
    SubspaceEnsemble,
};
use fusion::heads::{
    head_gradient_error, init_head, load_checkpoint, save_checkpoint, HeadConfig, HeadKind,
};
use fusion::losses::{
    build_target, loss_gradient_error, view_groups, LossKind, Mixture, PairSource,
};
use fusion::numerics::io::{format_g17, matrix_to_bytes};
use fusion::pipeline::{
    evaluate, load_data, loss_log_csv, metrics_csv, probe_batch, train, DataConfig, Encoder,
    MetricsReport, RunConfig,
};
use fusion::{Error, Matrix, Result, Rng};
use serde_json::json;

use crate::{
    ActivationArg, Command, EnsembleArg, GenDataArgs, GeometryArgs, GradcheckArgs, MapsArgs,
    RhoArgs, RunArgs, TrainArgs, Verdict, VerifyArgs, VerifyThm2Args,
};

const HEAD_CHECKPOINT: &str = "head";

pub fn dispatch(cmd: Command) -> Result<Verdict> {
    match cmd {
        Command::GenData(a) => gen_data(&a),
        Command::Rho(a) => rho(&a),
        Command::VerifyThm1(a) => verify_thm1(&a),
        Command::VerifyThm2(a) => verify_thm2(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::AttentionMaps(a) => attention_maps(&a),
    }
}

fn ensemble_mode(mode: EnsembleArg) -> EnsembleMode {
    match mode {
        EnsembleArg::Random => EnsembleMode::Random,
        EnsembleArg::AxisAligned => EnsembleMode::AxisAligned,
    }
}

fn draw(
    g: &GeometryArgs,
    seed: u64,
    mode: EnsembleMode,
) -> Result<(SubspaceEnsemble, ClusteredBatch, Rng)> {
    if g.k == 0 || g.rank == 0 {
        return Err(Error::Usage("--k and --rank must be positive".into()));
    }
    let mut rng = Rng::new(seed);
    let ens = generate_ensemble(g.m, &vec![g.rank; g.k], mode, &mut rng)?;
    let batch = sample_batch(&ens, &vec![g.per_cluster; g.k], g.eps, &mut rng)?;
    Ok((ens, batch, rng))
}

fn labels_csv(labels: &[usize]) -> String {
    let mut out = String::from("index,label\n");
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    out
}

fn gen_data(a: &GenDataArgs) -> Result<Verdict> {
    let (ens, batch, _) = draw(&a.geometry, a.geometry.seed, ensemble_mode(a.mode))?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("samples.bin"), matrix_to_bytes(&batch.x))?;
    fs::write(a.out.join("clean.bin"), matrix_to_bytes(&batch.clean))?;
    fs::write(a.out.join("labels.csv"), labels_csv(&batch.labels))?;
    let mut bases = Vec::new();
    for b in ens.bases() {
        bases.extend(matrix_to_bytes(b));
    }
    fs::write(a.out.join("bases.bin"), bases)?;
    println!(
        "wrote {} samples in {} clusters (m={}) to {}",
        batch.len(),
        ens.num_clusters(),
        ens.ambient_dim(),
        a.out.display()
    );
    Ok(Verdict::Ok)
}

fn rho(a: &RhoArgs) -> Result<Verdict> {
    let (ens, batch, mut rng) = draw(&a.geometry, a.geometry.seed, ensemble_mode(a.mode))?;
    let res = cluster_integrity(&ens, &batch, &RhoSearch::default(), &mut rng)?;
    for (k, r) in res.per_cluster.iter().enumerate() {
        println!("rho_{k}={r:.6}");
    }
    println!("rho={:.6}", res.rho);
    Ok(Verdict::Ok)
}

fn verify_thm1(a: &VerifyArgs) -> Result<Verdict> {
    let g = &a.geometry;
    let mut ok = true;
    for seed in a.geometry.seed..a.geometry.seed + a.seeds {
        let (ens, batch, mut rng) = draw(g, seed, EnsembleMode::Random)?;
        let c = construct_thm1_weights(&ens, &batch, &RhoSearch::default(), &mut rng)?;
        let aff = affinity(&batch.x, &c.w)?;
        let rho_hat = c.rho_hat();
        let pass = if g.eps == 0.0 {
            let (mut cross, mut gap) = (0.0f64, f64::INFINITY);
            for i in 0..batch.len() {
                for j in 0..batch.len() {
                    let v = aff.get(i, j);
                    if batch.labels[i] != batch.labels[j] {
                        cross = cross.max(v.abs());
                    } else {
                        gap = gap.min(v - batch.cluster_sizes[i] as f64 * rho_hat * rho_hat);
                    }
                }
            }
            let pass = cross < 1e-9 && gap >= -1e-6;
            println!(
                "seed {seed}: rho_hat={rho_hat:.6} off_block_max={cross:.3e} in_block_gap={gap:.6} {}",
                verdict(pass)
            );
            pass
        } else {
            let b = check_pair_bounds(&aff, &batch, g.eps, rho_hat)?;
            let pass = b.beta_excess <= 0.0 && b.strict_alpha_margin >= 0.0;
            println!(
                "seed {seed}: rho_hat={rho_hat:.6} delta={:.6} Delta={:.6} beta_excess={:.6} \
                 alpha_margin={:.6} strict_alpha_margin={:.6} {}",
                b.delta,
                b.big_delta,
                b.beta_excess,
                b.alpha_margin,
                b.strict_alpha_margin,
                verdict(pass)
            );
            pass
        };
        ok &= pass;
    }
    Ok(if ok { Verdict::Ok } else { Verdict::Violated })
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "ok"
    } else {
        "VIOLATED"
    }
}

fn verify_thm2(a: &VerifyThm2Args) -> Result<Verdict> {
    let g = &a.verify.geometry;
    let activation = match a.activation {
        ActivationArg::Relu => Activation::Relu,
        ActivationArg::Exp => Activation::Exp,
    };
    let opts = FusionOptions {
        layers: a.layers,
        activation,
        residual: a.residual.is_on(),
        w_v: None,
    };
    let mut ok = true;
    for seed in g.seed..g.seed + a.verify.seeds {
        let (ens, batch, mut rng) = draw(g, seed, EnsembleMode::Random)?;
        let c = construct_thm1_weights(&ens, &batch, &RhoSearch::default(), &mut rng)?;
        let bound = FusionBound::new(
            g.eps,
            c.rho_hat(),
            batch.len(),
            g.per_cluster,
            g.per_cluster,
        );
        if !bound.separable() {
            return Err(Error::Usage(format!(
                "seed {seed}: clusters not separable at eps={} (delta={:.6} >= Delta={:.6})",
                g.eps, bound.delta, bound.big_delta
            )));
        }
        let records = fusion_iterate(&batch, &c.w, &opts)?;
        let s = records
            .iter()
            .map(|r| match activation {
                Activation::Relu => Ok(r.sharpness),
                Activation::Exp => sharpness(&r.a.map(f64::exp), &r.labels),
            })
            .collect::<Result<Vec<f64>>>()?;
        let pass = s.windows(2).all(|w| w[1] >= w[0]);
        let trace: Vec<String> = s.iter().map(|v| format!("{v:.6}")).collect();
        println!(
            "seed {seed}: delta={:.6} Delta={:.6} gamma={:.6e} sharpness=[{}] {}",
            bound.delta,
            bound.big_delta,
            bound.gamma,
            trace.join(", "),
            verdict(pass)
        );
        ok &= pass;
    }
    Ok(if ok { Verdict::Ok } else { Verdict::Violated })
}

fn apply_overrides(cfg: &mut RunConfig, a: &TrainArgs) -> Result<()> {
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if a.m.is_some() || a.k.is_some() || a.rank.is_some() {
        match &mut cfg.data {
            DataConfig::Synthetic {
                ambient_dim,
                clusters,
                rank,
                ..
            } => {
                *ambient_dim = a.m.unwrap_or(*ambient_dim);
                *clusters = a.k.unwrap_or(*clusters);
                *rank = a.rank.unwrap_or(*rank);
            }
            DataConfig::Mnist { .. } => {
                return Err(Error::Usage(
                    "--m, --k and --rank apply to synthetic data only".into(),
                ));
            }
        }
    }
    if let Some(eps) = a.eps {
        cfg.augment_noise = eps;
    }
    if let Some(h) = a.head {
        let kind = HeadKind::from(h);
        cfg.head = HeadConfig {
            kind,
            heads: if kind == HeadKind::Transformer {
                cfg.head.heads.max(1)
            } else {
                1
            },
            ..cfg.head.clone()
        };
    }
    if let Some(layers) = a.layers {
        cfg.head.depth = layers;
    }
    if let Some(mode) = a.mode {
        cfg.head.mode = mode.into();
    }
    if let Some(r) = a.residual {
        cfg.head.residual = r.is_on();
    }
    if let Some(loss) = a.loss {
        cfg.loss.kind = loss.into();
    }
    if let Some(tau) = a.tau {
        cfg.loss.tau = tau;
    }
    if let Some(epochs) = a.epochs {
        cfg.optimizer.epochs = epochs;
    }
    if let Some(lr) = a.lr {
        cfg.optimizer.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.optimizer.batch_size = b;
    }
    cfg.validate()
}

fn attention_dir(run: &Path) -> PathBuf {
    run.join("attention")
}

fn first_head(records: &[AffinityRecord]) -> Vec<AffinityRecord> {
    records.iter().filter(|r| r.head == 0).cloned().collect()
}

fn train_cmd(a: &TrainArgs) -> Result<Verdict> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::synthetic_default(0),
    };
    apply_overrides(&mut cfg, a)?;
    let out = train(&cfg)?;

    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.json"), cfg.to_json())?;
    let manifest = json!({
        "config": serde_json::to_value(&cfg)?,
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "rng": "chacha8",
        "diverged": out.diverged.is_some(),
    });
    fs::write(
        a.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    let layers = out.final_report().sharpness.len();
    fs::write(a.out.join("metrics.csv"), metrics_csv(&out.history, layers))?;
    fs::write(a.out.join("loss_log.csv"), loss_log_csv(&out.loss_log))?;
    fs::write(a.out.join("encoder.bin"), out.encoder.to_bytes())?;
    save_checkpoint(&out.head, &a.out, HEAD_CHECKPOINT)?;
    let dir = attention_dir(&a.out);
    fs::create_dir_all(&dir)?;
    for (h, recs) in out.history.iter().zip(&out.records) {
        if !recs.is_empty() {
            fs::write(
                dir.join(format!("epoch_{}.csv", h.epoch)),
                records_to_csv(&first_head(recs)),
            )?;
        }
    }

    if let Some(d) = out.diverged {
        return Err(d.into());
    }
    print_report(out.final_report());
    println!("wrote run to {}", a.out.display());
    Ok(Verdict::Ok)
}

fn print_report(r: &MetricsReport) {
    println!("unsup_acc={}", format_g17(r.unsup_acc));
    println!("probe_acc={}", format_g17(r.probe_acc));
    for (l, (s, al)) in r.sharpness.iter().zip(&r.alignment).enumerate() {
        println!(
            "layer {}: sharpness={} alignment={}",
            l + 1,
            format_g17(*s),
            format_g17(*al)
        );
    }
}

fn eval(a: &RunArgs) -> Result<Verdict> {
    let start = Instant::now();
    let cfg = RunConfig::load(&a.run.join("config.json"))?;
    let encoder = Encoder::from_bytes(&fs::read(a.run.join("encoder.bin"))?)?;
    let head = load_checkpoint(&a.run, HEAD_CHECKPOINT)?;
    let (train_set, test_set) = load_data(&cfg.data, cfg.seed)?;
    let probe = probe_batch(&cfg, &test_set);
    let (report, _) = evaluate(&encoder, &head, &train_set, &test_set, &probe, &cfg, start)?;
    print_report(&report);
    Ok(Verdict::Ok)
}

fn gradcheck(a: &GradcheckArgs) -> Result<Verdict> {
    let losses = [
        (LossKind::NtXent, Mixture::Halved, "nt_xent"),
        (LossKind::Jsd, Mixture::Halved, "jsd"),
        (LossKind::KlSoftmax, Mixture::Halved, "kl_softmax"),
    ];
    let mut ok = true;
    for (kind, mixture, name) in losses {
        let target = build_target(
            &view_groups(3),
            PairSource::AugmentationPairs,
            kind != LossKind::NtXent,
        )?;
        let mut worst = 0.0f64;
        for seed in a.seed..a.seed + a.seeds {
            let z = Rng::new(seed).normal_matrix(6, 4);
            worst = worst.max(loss_gradient_error(kind, &z, &target, 0.5, mixture, 1e-5)?);
        }
        ok &= report_grad(name, worst, a.tolerance);
    }
    let heads = [
        ("ffn", HeadConfig::new(HeadKind::Ffn, 4, 3)),
        ("transfusion", HeadConfig::new(HeadKind::Transfusion, 4, 2)),
        (
            "transformer",
            HeadConfig {
                heads: 2,
                ..HeadConfig::new(HeadKind::Transformer, 4, 2)
            },
        ),
    ];
    for (name, cfg) in heads {
        let mut worst = 0.0f64;
        for seed in a.seed..a.seed + a.seeds {
            let mut rng = Rng::new(seed);
            let head = init_head(&cfg, &mut rng)?;
            let x = rng.normal_matrix(5, 4);
            let r = rng.normal_matrix(5, 4);
            worst = worst.max(head_gradient_error(&head, &x, &r, 1e-5)?);
        }
        ok &= report_grad(name, worst, a.tolerance);
    }
    Ok(if ok { Verdict::Ok } else { Verdict::Violated })
}

fn report_grad(name: &str, err: f64, tol: f64) -> bool {
    let pass = err < tol;
    println!("{name}: max_rel_err={err:.3e} {}", verdict(pass));
    pass
}

fn attention_maps(a: &MapsArgs) -> Result<Verdict> {
    let dir = attention_dir(&a.run);
    let epoch = if a.epoch == "last" {
        let mut last = None;
        for entry in fs::read_dir(&dir)? {
            let name = entry?.file_name();
            let e = name
                .to_str()
                .and_then(|s| s.strip_prefix("epoch_"))
                .and_then(|s| s.strip_suffix(".csv"))
                .and_then(|s| s.parse::<usize>().ok());
            last = last.max(e);
        }
        last.ok_or_else(|| Error::Usage(format!("no attention logs under {}", dir.display())))?
    } else {
        a.epoch.parse::<usize>().map_err(|_| {
            Error::Usage(format!(
                "--epoch must be a number or `last`, got {}",
                a.epoch
            ))
        })?
    };
    let path = dir.join(format!("epoch_{epoch}.csv"));
    if !path.exists() {
        return Err(Error::Usage(format!("no attention log for epoch {epoch}")));
    }
    let records: Vec<AffinityRecord> = records_from_csv(&fs::read_to_string(&path)?)?
        .into_iter()
        .map(|(layer, m): (usize, Matrix)| AffinityRecord::unlabeled(layer, m))
        .collect();
    let out = a.out.clone().unwrap_or_else(|| a.run.join("maps"));
    for p in export_attention(&records, &out)? {
        println!("{}", p.display());
    }
    Ok(Verdict::Ok)
}
