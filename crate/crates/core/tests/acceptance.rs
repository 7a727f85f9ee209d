//! Acceptance gate: runs criteria 1–10 and prints one PASS/FAIL line each.
//! Exits nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{max_abs_diff, mse_oracle, rank1_volume, rng, ssim_oracle, tucker_oracle, uniform};
use dpnn::checkpoint::Checkpoint;
use dpnn::data::{stratified_kfold, Class, Volume};
use dpnn::experiment::{run_protocol, ProtocolConfig, ProtocolReport, Variant};
use dpnn::losses::{mean_ssim, mse_half, pretrain_loss, LossVariant, SsimConfig};
use dpnn::metrics::{confusion, per_class_metrics, ConfusionMatrix};
use dpnn::model::{Dpnn, ModelConfig};
use dpnn::optim::{adam_update, make_groups, AdamConfig, AdamState, OptimConfig, Part, Stage};
use dpnn::tensor::{Tape, Tensor, Var};
use dpnn::tf::tucker_project;
use dpnn::train::TrainConfig;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scalar(p: &Tensor, g: &Tensor, f: impl Fn(&mut Tape, Var, Var) -> dpnn::Result<Var>) -> f64 {
    let mut t = Tape::new();
    let (pv, gv) = (t.leaf(p.clone()), t.leaf(g.clone()));
    let out = f(&mut t, pv, gv).expect("loss evaluates");
    t.value(out).item().expect("scalar loss")
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let reports = common::gradcheck_suite().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut worst = 0.0f64;
    for (name, r) in &reports {
        ensure(r.passed && r.checked > 0, || format!("{name}: {r}"))?;
        worst = worst.max(r.max_rel_error);
    }
    let names = [
        "conv2d", "conv1x1", "batch_norm", "relu", "sigmoid", "max_pool2d", "global_avg_pool", "softmax", "mse_half",
        "mean_ssim", "pretrain_loss", "cross_entropy",
    ];
    for n in names {
        ensure(reports.iter().any(|(name, _)| name.starts_with(n)), || format!("{n} not covered"))?;
    }
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{} checks, worst rel err {worst:.2e}, {elapsed:.2?}", reports.len()))
}

fn criterion_2() -> Check {
    let cfg = SsimConfig::default();
    ensure(cfg.c1 == 1e-4 && cfg.c2 == 9e-4, || format!("constants {cfg:?}"))?;
    let mut r = rng(0x5353_494D);
    let (mut id_err, mut sym_err, mut oracle_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let p = uniform(&mut r, &[1, 1, 64, 64], 0.0, 1.0);
        let g = uniform(&mut r, &[1, 1, 64, 64], 0.0, 1.0);
        let ssim = |a: &Tensor, b: &Tensor| scalar(a, b, |t, x, y| mean_ssim(t, x, y, &cfg));
        id_err = id_err.max((ssim(&p, &p) - 1.0).abs());
        let (pg, gp) = (ssim(&p, &g), ssim(&g, &p));
        sym_err = sym_err.max((pg - gp).abs());
        ensure((-1.0..=1.0).contains(&pg), || format!("SSIM {pg} outside [-1, 1]"))?;
        oracle_err = oracle_err.max((pg - ssim_oracle(p.data(), g.data(), 64, 64, &cfg)).abs());
    }
    ensure(id_err <= 1e-10, || format!("identity error {id_err:e}"))?;
    ensure(sym_err <= 1e-12, || format!("symmetry error {sym_err:e}"))?;
    ensure(oracle_err <= 1e-10, || format!("oracle error {oracle_err:e}"))?;
    Ok(format!("identity {id_err:.1e}, symmetry {sym_err:.1e}, oracle {oracle_err:.1e}"))
}

fn criterion_3() -> Check {
    let cfg = SsimConfig::default();
    let mut r = rng(0x4551_31);
    let p = uniform(&mut r, &[2, 1, 64, 64], 0.0, 1.0);
    let same = scalar(&p, &p, |t, a, b| pretrain_loss(t, a, b, &cfg, LossVariant::MseSsim));
    ensure((same + 1.0).abs() <= 1e-10, || format!("loss(P, P) = {same}"))?;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let p = uniform(&mut r, &[1, 1, 64, 64], 0.0, 1.0);
        let g = uniform(&mut r, &[1, 1, 64, 64], 0.0, 1.0);
        let mse = scalar(&p, &g, mse_half);
        let want = mse_oracle(p.data(), g.data());
        worst = worst.max((mse - want).abs() / want);
        let full = scalar(&p, &g, |t, a, b| pretrain_loss(t, a, b, &cfg, LossVariant::MseSsim));
        let ssim = ssim_oracle(p.data(), g.data(), 64, 64, &cfg);
        ensure((full - (want - ssim)).abs() <= 1e-10, || format!("loss {full} vs {}", want - ssim))?;
    }
    ensure(worst <= 1e-12, || format!("half-MSE relative error {worst:e}"))?;
    Ok(format!("loss(P,P)+1 = {:.1e}, half-MSE rel err {worst:.1e}", same + 1.0))
}

fn criterion_4() -> Check {
    let step = |theta: f64, grad: f64, lr: f64, wd: f64| {
        let cfg = AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        };
        let mut th = [theta];
        adam_update(&mut th, &[grad], &mut AdamState::new(1), &cfg, true);
        th[0] - theta
    };
    let cases = [
        (step(0.0, 1.0, 0.1, 0.0), -0.1 / (1.0 + 1e-8)),
        (step(0.0, 0.0, 0.1, 0.0), 0.0),
        (step(1.0, 0.0, 1.0, 1e-5), -1e-5 / (1e-5 + 1e-8)),
    ];
    for (i, (got, want)) in cases.iter().enumerate() {
        ensure((got - want).abs() <= 1e-12, || format!("hand example {i}: {got} vs {want}"))?;
    }
    let cfg = AdamConfig {
        lr: 1e-2,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut theta = [1.0];
    let mut state = AdamState::new(1);
    for _ in 0..2000 {
        let g = [2.0 * theta[0]];
        adam_update(&mut theta, &g, &mut state, &cfg, false);
    }
    ensure(theta[0].abs() < 1e-2, || format!("|theta| = {} after 2000 steps", theta[0].abs()))?;
    let net = Dpnn::new(&ModelConfig::default()).map_err(|e| e.to_string())?;
    let groups = make_groups(
        Stage::Finetune,
        &[(Part::Compression, net.compression.params()), (Part::Classification, net.classification.params())],
        &OptimConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let lrs: Vec<f64> = groups.iter().map(|g| g.config.lr).collect();
    ensure(groups.len() == 2, || format!("{} groups", groups.len()))?;
    ensure(lrs.contains(&1e-4) && lrs.contains(&1e-5), || format!("rates {lrs:?}"))?;
    Ok(format!("hand steps exact, |theta| = {:.1e} after 2000 steps, groups lr {lrs:?}", theta[0].abs()))
}

fn criterion_5() -> Check {
    let mut r = rng(0x5446);
    let mut rank1 = 0.0f64;
    for _ in 0..20 {
        let (h, w, d) = (r.random_range(4..20), r.random_range(4..20), r.random_range(2..16));
        let (v, want) = rank1_volume(&mut r, h, w, d);
        let got = tucker_project(&v).map_err(|e| e.to_string())?;
        rank1 = rank1.max(max_abs_diff(&got.map.values, &want));
    }
    ensure(rank1 <= 1e-6, || format!("rank-1 error {rank1:e}"))?;
    let mut power = 0.0f64;
    for d in 1..=8 {
        for _ in 0..3 {
            let voxels = (0..10 * 9 * d).map(|_| r.random_range(0.0..1.0)).collect();
            let v = Volume::new("p", 10, 9, d, voxels).map_err(|e| e.to_string())?;
            let got = tucker_project(&v).map_err(|e| e.to_string())?;
            power = power.max(max_abs_diff(&got.map.values, &tucker_oracle(&v)));
        }
    }
    ensure(power <= 1e-8, || format!("power-iteration disagreement {power:e}"))?;
    let voxels: Vec<f64> = (0..12 * 12 * 8).map(|_| r.random_range(0.0..1.0)).collect();
    let v = Volume::new("s", 12, 12, 8, voxels).map_err(|e| e.to_string())?;
    let base = tucker_project(&v).map_err(|e| e.to_string())?.map.values;
    for c in [0.125, 4.0, 4096.0] {
        let scaled = Volume {
            voxels: v.voxels.iter().map(|x| x * c).collect(),
            ..v.clone()
        };
        let got = tucker_project(&scaled).map_err(|e| e.to_string())?.map.values;
        ensure(got == base, || format!("scaling by {c} changed the map"))?;
    }
    Ok(format!("rank-1 err {rank1:.1e}, oracle err {power:.1e}, scale invariance exact"))
}

fn criterion_6() -> Check {
    let err = |e: dpnn::Error| e.to_string();
    let mut net = Dpnn::new(&ModelConfig::default()).map_err(err)?;
    net.xavier_init(3);
    let mut r = rng(0x4152);
    let batch = uniform(&mut r, &[2, 48, 64, 64], 0.0, 2.0);
    let (proj, probs) = net.predict(&batch).map_err(err)?;
    ensure(proj.dims() == [2, 1, 64, 64], || format!("projection dims {:?}", proj.dims()))?;
    ensure(proj.data().iter().all(|&v| v > 0.0 && v < 1.0), || "projection leaves (0, 1)".into())?;
    ensure(probs.dims() == [2, 3], || format!("probability dims {:?}", probs.dims()))?;
    for row in probs.data().chunks(3) {
        let s: f64 = row.iter().sum();
        ensure((s - 1.0).abs() <= 1e-10, || format!("probabilities sum to {s}"))?;
    }
    let trace = net.classification.spatial_trace();
    let sides: Vec<usize> = trace.iter().map(|t| t.0).collect();
    ensure(sides == [64, 32, 16, 8, 4, 2], || format!("spatial trace {sides:?}"))?;
    let bytes = net.to_checkpoint().to_bytes();
    let back = Dpnn::from_checkpoint(&Checkpoint::from_bytes(&bytes, Path::new("memory")).map_err(err)?).map_err(err)?;
    ensure(back.to_checkpoint().to_bytes() == bytes, || "checkpoint bytes changed".into())?;
    ensure(back == net, || "reloaded network differs".into())?;
    Ok(format!("trace {sides:?}, checkpoint {} bytes round-trips", bytes.len()))
}

fn criterion_7() -> Check {
    let cm = ConfusionMatrix {
        counts: [[8, 2, 0], [1, 7, 2], [0, 1, 9]],
    };
    let m = per_class_metrics(&cm).map_err(|e| e.to_string())?.per_class[0];
    let want = [80.0, 95.0, 800.0 / 9.0, 1900.0 / 21.0];
    for (got, w) in m.values().iter().zip(want) {
        let got = got.ok_or("undefined hand metric")?;
        ensure((got - w).abs() < 5e-5, || format!("{got} vs {w}"))?;
    }
    let labels = [Class::Msa, Class::Psp, Class::Pd, Class::Pd, Class::Msa];
    let perfect = per_class_metrics(&confusion(&labels, &labels).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(
        perfect.per_class.iter().all(|c| c.values().iter().all(|v| *v == Some(100.0))),
        || "perfect predictions are not 100 everywhere".into(),
    )?;
    let skewed = per_class_metrics(&confusion(&[Class::Psp; 5], &labels).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(
        skewed.per_class[Class::Msa.index()].ppv.is_none() && skewed.per_class[Class::Pd.index()].ppv.is_none(),
        || "undefined PPV not flagged".into(),
    )?;
    Ok(format!(
        "class 0: TPR {:.4} TNR {:.4} PPV {:.4} NPV {:.4}",
        m.tpr.unwrap(),
        m.tnr.unwrap(),
        m.ppv.unwrap(),
        m.npv.unwrap()
    ))
}

fn criterion_8() -> Check {
    let labels_of = |n: [usize; 3]| -> Vec<Class> {
        (0..3).flat_map(|c| std::iter::repeat_n(Class::ALL[c], n[c])).collect()
    };
    let labels = labels_of([136, 91, 30]);
    let split = stratified_kfold(&labels, 5, 0).map_err(|e| e.to_string())?;
    for f in &split.folds {
        let per: Vec<usize> = Class::ALL.iter().map(|&c| f.iter().filter(|&&i| labels[i] == c).count()).collect();
        ensure(
            (27..=28).contains(&per[0]) && (18..=19).contains(&per[1]) && per[2] == 6,
            || format!("fold counts {per:?}"),
        )?;
    }
    let mut r = rng(0x5354_5241);
    for case in 0..200 {
        let n = [r.random_range(5..80), r.random_range(5..80), r.random_range(5..80)];
        let k = r.random_range(2..=5);
        let mut labels = labels_of(n);
        // shuffle so classes are interleaved in the manifest
        for i in (1..labels.len()).rev() {
            labels.swap(i, r.random_range(0..=i));
        }
        let split = stratified_kfold(&labels, k, r.random()).map_err(|e| e.to_string())?;
        let mut seen = vec![0u8; labels.len()];
        for f in &split.folds {
            for &i in f {
                seen[i] += 1;
            }
        }
        ensure(seen.iter().all(|&s| s == 1), || format!("case {case}: folds overlap or miss samples"))?;
    }
    Ok("136/91/30 folds stratified; 200 random manifests partitioned".into())
}

/// The protocol used for criteria 9 and 10: 50 phantoms per class at
/// 64×64×48, 5 folds, 3 seeds. Epoch caps keep the single-core run inside
/// the time budget.
fn protocol() -> ProtocolConfig {
    ProtocolConfig {
        n_per_class: 50,
        unlabeled: 60,
        k: 5,
        seeds: vec![0, 1, 2],
        variants: Variant::ALL.to_vec(),
        pretrain: TrainConfig {
            max_epochs: 10,
            ..Default::default()
        },
        finetune: TrainConfig {
            max_epochs: 8,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn criterion_9(report: &dpnn::Result<ProtocolReport>, elapsed: Duration) -> Check {
    let report = report.as_ref().map_err(|e| e.to_string())?;
    let acc = |v| report.mean_accuracy(v).expect("variant was run");
    let (full, bl1, bl2) = (acc(Variant::Full), acc(Variant::Bl1), acc(Variant::Bl2));
    let per_seed: Vec<String> = report
        .runs
        .iter()
        .map(|r| format!("{}/{}={:.3}", r.variant, r.seed, r.result.report.mean_accuracy))
        .collect();
    let summary = format!(
        "full {full:.4}, bl1 {bl1:.4}, bl2 {bl2:.4}, {:.1} min [{}]",
        elapsed.as_secs_f64() / 60.0,
        per_seed.join(" ")
    );
    let worst_full = report
        .runs
        .iter()
        .filter(|r| r.variant == Variant::Full)
        .map(|r| r.result.report.mean_accuracy)
        .fold(f64::INFINITY, f64::min);
    ensure(worst_full >= 0.90, || format!("a full run is below 0.90 accuracy: {summary}"))?;
    ensure(full >= bl1 && bl1 >= bl2, || format!("ordering full >= bl1 >= bl2 violated: {summary}"))?;
    ensure(elapsed < Duration::from_secs(3600), || format!("over 60 minutes: {summary}"))?;
    Ok(summary)
}

fn criterion_10(first: &dpnn::Result<ProtocolReport>) -> Check {
    let first = first.as_ref().map_err(|e| e.to_string())?;
    let rerun_cfg = ProtocolConfig {
        seeds: vec![0],
        variants: vec![Variant::Full],
        ..protocol()
    };
    let second = run_protocol(&rerun_cfg).map_err(|e| e.to_string())?;
    let a = first
        .runs
        .iter()
        .find(|r| r.variant == Variant::Full && r.seed == 0)
        .ok_or("first run lacks full/seed 0")?;
    let b = &second.runs[0];
    let (ka, kb) = (a.result.report.to_kv(), b.result.report.to_kv());
    ensure(ka.as_bytes() == kb.as_bytes(), || "metric reports differ".into())?;
    let ta = a.result.report.to_table("full");
    ensure(ta.as_bytes() == b.result.report.to_table("full").as_bytes(), || "metric tables differ".into())?;
    let (ha, hb) = (a.pretrain.as_ref().map(|o| o.history.to_csv()), b.pretrain.as_ref().map(|o| o.history.to_csv()));
    ensure(ha == hb, || "pretraining histories differ".into())?;
    Ok(format!("full/seed 0 rerun: {} report bytes identical", ka.len()))
}

fn run(n: usize, what: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS criterion {n:>2} ({what}): {detail} [{secs:.1}s]");
            true
        }
        Err(detail) => {
            println!("FAIL criterion {n:>2} ({what}): {detail} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let mut ok = true;
    ok &= run(1, "gradient checks", criterion_1);
    ok &= run(2, "SSIM suite", criterion_2);
    ok &= run(3, "pretraining loss structure", criterion_3);
    ok &= run(4, "Adam", criterion_4);
    ok &= run(5, "tensor-factorization oracle", criterion_5);
    ok &= run(6, "architecture contracts", criterion_6);
    ok &= run(7, "metrics oracle", criterion_7);
    ok &= run(8, "stratification", criterion_8);
    let start = Instant::now();
    let report = catch_unwind(|| run_protocol(&protocol())).unwrap_or_else(|_| {
        Err(dpnn::Error::Degenerate("protocol run panicked".into()))
    });
    let elapsed = start.elapsed();
    ok &= run(9, "end-to-end synthetic protocol", || criterion_9(&report, elapsed));
    ok &= run(10, "determinism", || criterion_10(&report));
    if !ok {
        std::process::exit(1);
    }
}
