//! Model variants, k-fold cross-validation and the multi-seed comparison
//! protocol that ties pretraining and fine-tuning together.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{global_mean_normalize, stratified_kfold, synth_phantoms, synth_unlabeled, Class, PhantomConfig, Volume};
use crate::error::{Error, Result};
use crate::losses::{LossVariant, SsimConfig};
use crate::metrics::{confusion, per_class_metrics, FoldMetrics, MetricsReport};
use crate::model::{CompressionNet, Dpnn, ModelConfig};
use crate::optim::OptimConfig;
use crate::tf::{tucker_project, ProjectionTarget};
use crate::train::{derive_seed, finetune, predict_classes, pretrain, TrainConfig, TrainOutcome};

/// The three compared pipelines: full, MSE-only pretraining (BL-1) and no
/// pretraining (BL-2).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Bl1,
    Bl2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::Bl1, Variant::Bl2];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Bl1 => "bl1",
            Variant::Bl2 => "bl2",
        }
    }

    /// The pipeline switches this variant stands for.
    pub fn settings(self) -> PipelineConfig {
        match self {
            Variant::Full => PipelineConfig {
                loss_variant: LossVariant::MseSsim,
                pretrained: true,
            },
            Variant::Bl1 => PipelineConfig {
                loss_variant: LossVariant::MseOnly,
                pretrained: true,
            },
            Variant::Bl2 => PipelineConfig {
                loss_variant: LossVariant::MseSsim,
                pretrained: false,
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("variant", format!("unknown variant {s:?}, expected full, bl1 or bl2")))
    }
}

/// The only two switches that separate the variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub loss_variant: LossVariant,
    pub pretrained: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Variant::Full.settings()
    }
}

impl PipelineConfig {
    /// The named variant, if these switches match one.
    pub fn variant(&self) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.settings() == *self)
    }
}

/// Divides each volume by its nonzero-voxel mean.
pub fn normalize_all(volumes: &[Volume]) -> Result<Vec<Volume>> {
    volumes.iter().map(global_mean_normalize).collect()
}

/// Tucker-1 targets for every volume; degenerate inputs are logged.
pub fn make_targets(volumes: &[Volume]) -> Result<Vec<ProjectionTarget>> {
    let targets: Vec<ProjectionTarget> = volumes.par_iter().map(tucker_project).collect::<Result<_>>()?;
    for t in targets.iter().filter(|t| t.degenerate) {
        warn!("volume {} is degenerate; its target map is constant", t.source_id);
    }
    Ok(targets)
}

/// A Xavier-initialized network whose compression part is replaced by
/// `pretrained` when given.
pub fn init_dpnn(model: &ModelConfig, pretrained: Option<&CompressionNet>, seed: u64) -> Result<Dpnn> {
    let mut net = Dpnn::new(model)?;
    net.xavier_init(seed);
    match pretrained {
        Some(c) => {
            if c.depth() != net.compression.depth() || c.schedule() != net.compression.schedule() {
                return Err(Error::contract(format!(
                    "pretrained compression has depth {} and schedule {:?}, model expects {} and {:?}",
                    c.depth(),
                    c.schedule(),
                    net.compression.depth(),
                    net.compression.schedule()
                )));
            }
            net.compression = c.clone();
        }
        None => info!("compression part randomly initialized (Xavier, no pretraining)"),
    }
    Ok(net)
}

/// Trains a fresh compression network on `(volume, target)` pairs.
pub fn pretrain_compression(
    model: &ModelConfig,
    volumes: &[Volume],
    targets: &[ProjectionTarget],
    variant: LossVariant,
    train: &TrainConfig,
    optim: &OptimConfig,
    ssim: &SsimConfig,
) -> Result<(CompressionNet, TrainOutcome)> {
    model.validate()?;
    let mut net = CompressionNet::new(model.depth, &model.compression_schedule())?;
    net.xavier_init(derive_seed(train.seed, 0x5052_4554));
    let maps: Vec<_> = targets.iter().map(|t| t.map.clone()).collect();
    let outcome = pretrain(&mut net, volumes, &maps, variant, train, optim, ssim)?;
    Ok((net, outcome))
}

/// One held-out fold.
#[derive(Clone, Debug)]
pub struct FoldResult {
    pub outcome: TrainOutcome,
    pub test_ids: Vec<String>,
    pub labels: Vec<Class>,
    pub preds: Vec<Class>,
    pub metrics: FoldMetrics,
}

#[derive(Clone, Debug)]
pub struct CrossvalResult {
    pub folds: Vec<FoldResult>,
    pub report: MetricsReport,
}

/// Stratified `k`-fold cross-validation of the end-to-end network.
///
/// Every fold starts from the same `pretrained` compression part (or Xavier
/// weights when `None`), fine-tunes on the other folds with an inner
/// validation split and is scored on the held-out fold. Folds run in
/// parallel and are merged in fold order.
pub fn crossval(
    volumes: &[Volume],
    k: usize,
    split_seed: u64,
    model: &ModelConfig,
    train: &TrainConfig,
    optim: &OptimConfig,
    pretrained: Option<&CompressionNet>,
) -> Result<CrossvalResult> {
    let labels: Vec<Class> = volumes
        .iter()
        .map(|v| v.label.ok_or_else(|| Error::contract(format!("volume {} has no label", v.id))))
        .collect::<Result<_>>()?;
    let split = stratified_kfold(&labels, k, split_seed)?;
    let folds: Vec<FoldResult> = (0..k)
        .into_par_iter()
        .map(|i| {
            let fold_train: Vec<Volume> = split.train_indices(i).into_iter().map(|j| volumes[j].clone()).collect();
            let mut net = init_dpnn(model, pretrained, derive_seed(train.seed, 0x4D4F_0000 + i as u64))?;
            let cfg = TrainConfig {
                seed: derive_seed(train.seed, 0x464F_0000 + i as u64),
                ..train.clone()
            };
            let outcome = finetune(&mut net, &fold_train, &cfg, optim)?;
            let test: Vec<&Volume> = split.folds[i].iter().map(|&j| &volumes[j]).collect();
            let preds = predict_classes(&net, &test, train.batch_size)?;
            let truth: Vec<Class> = split.folds[i].iter().map(|&j| labels[j]).collect();
            let metrics = per_class_metrics(&confusion(&preds, &truth)?)?;
            info!("fold {}/{k}: accuracy {:.4}", i + 1, metrics.accuracy);
            Ok(FoldResult {
                outcome,
                test_ids: test.iter().map(|v| v.id.clone()).collect(),
                labels: truth,
                preds,
                metrics,
            })
        })
        .collect::<Result<_>>()?;
    let report = MetricsReport::from_folds(folds.iter().map(|f| f.metrics.clone()).collect())?;
    Ok(CrossvalResult { folds, report })
}

/// Synthetic comparison of the variants over several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub phantom: PhantomConfig,
    pub n_per_class: usize,
    /// Size of the separate unlabeled pretraining corpus.
    pub unlabeled: usize,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub optim: OptimConfig,
    pub ssim: SsimConfig,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            phantom: PhantomConfig::default(),
            n_per_class: 50,
            unlabeled: 60,
            model: ModelConfig::default(),
            pretrain: TrainConfig::default(),
            finetune: TrainConfig::default(),
            optim: OptimConfig::default(),
            ssim: SsimConfig::default(),
            k: 5,
            seeds: vec![0, 1, 2],
            variants: Variant::ALL.to_vec(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.model.validate()?;
        self.pretrain.validate("pretrain")?;
        self.finetune.validate("finetune")?;
        self.optim.validate()?;
        self.ssim.validate()?;
        let (p, m) = (&self.phantom, &self.model);
        if (p.height, p.width, p.depth) != (m.height, m.width, m.depth) {
            return Err(Error::config(
                "model",
                format!(
                    "model expects {}x{}x{} volumes, phantoms are {}x{}x{}",
                    m.height, m.width, m.depth, p.height, p.width, p.depth
                ),
            ));
        }
        if self.n_per_class < self.k {
            return Err(Error::config("n_per_class", format!("must be >= k = {}", self.k)));
        }
        if self.unlabeled < 2 {
            return Err(Error::config("unlabeled", "needs at least 2 volumes for a validation split"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants", "must not be empty"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub variant: Variant,
    pub seed: u64,
    pub pretrain: Option<TrainOutcome>,
    pub result: CrossvalResult,
}

#[derive(Clone, Debug)]
pub struct ProtocolReport {
    pub runs: Vec<VariantRun>,
}

impl ProtocolReport {
    /// Mean over seeds of the fold-mean accuracy of `variant`.
    pub fn mean_accuracy(&self, variant: Variant) -> Option<f64> {
        let accs: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.result.report.mean_accuracy)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    /// Summary lines followed by every run's key-value report.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in Variant::ALL {
            if let Some(acc) = self.mean_accuracy(v) {
                writeln!(out, "{v}.mean_accuracy={acc:.6}").expect("string write");
            }
        }
        for r in &self.runs {
            writeln!(out, "\n[{} seed={}]", r.variant, r.seed).expect("string write");
            out.push_str(&r.result.report.to_kv());
        }
        out
    }
}

/// Synthesizes data for each seed, pretrains once per needed loss variant
/// and cross-validates every requested variant on identical folds.
pub fn run_protocol(cfg: &ProtocolConfig) -> Result<ProtocolReport> {
    cfg.validate()?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let phantom = PhantomConfig {
            seed,
            ..cfg.phantom.clone()
        };
        let labeled = normalize_all(&synth_phantoms(&phantom, cfg.n_per_class)?)?;
        let mut pretrained: Vec<(LossVariant, CompressionNet, TrainOutcome)> = Vec::new();
        if cfg.variants.iter().any(|v| v.settings().pretrained) {
            let corpus = normalize_all(&synth_unlabeled(&phantom, cfg.unlabeled)?)?;
            let targets = make_targets(&corpus)?;
            for v in &cfg.variants {
                let s = v.settings();
                if !s.pretrained || pretrained.iter().any(|(l, ..)| *l == s.loss_variant) {
                    continue;
                }
                info!("seed {seed}: pretraining with {:?}", s.loss_variant);
                let train = TrainConfig {
                    seed,
                    ..cfg.pretrain.clone()
                };
                let (net, outcome) =
                    pretrain_compression(&cfg.model, &corpus, &targets, s.loss_variant, &train, &cfg.optim, &cfg.ssim)?;
                pretrained.push((s.loss_variant, net, outcome));
            }
        }
        for &v in &cfg.variants {
            let s = v.settings();
            let init = s
                .pretrained
                .then(|| pretrained.iter().find(|(l, ..)| *l == s.loss_variant).expect("pretrained above"));
            info!("seed {seed}: cross-validating {v}");
            let train = TrainConfig {
                seed,
                ..cfg.finetune.clone()
            };
            let result = crossval(&labeled, cfg.k, seed, &cfg.model, &train, &cfg.optim, init.map(|(_, n, _)| n))?;
            info!("seed {seed}: {v} mean accuracy {:.4}", result.report.mean_accuracy);
            runs.push(VariantRun {
                variant: v,
                seed,
                pretrain: init.map(|(_, _, o)| o.clone()),
                result,
            });
        }
    }
    Ok(ProtocolReport { runs })
}
