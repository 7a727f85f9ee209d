//! Pretraining of the compression part, end-to-end fine-tuning and early
//! stopping on validation loss.

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{holdout_split, stack_maps, stack_volumes, stratified_holdout, Class, ProjectionMap, Volume};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::losses::{cross_entropy, pretrain_loss, LossVariant, SsimConfig};
use crate::model::{CompressionNet, Dpnn, PassStats};
use crate::optim::{make_groups, Adam, OptimConfig, Part, Stage};
use crate::tensor::{Tape, Tensor};

/// SplitMix64 mix of a seed and a tag, for independent derived streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            patience: 10,
            min_delta: 1e-4,
            max_epochs: 200,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("{prefix}.{field}"), msg));
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience", "must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be >= 1".into());
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta", format!("must be >= 0, got {}", self.min_delta));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction", format!("must lie in (0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }
}

/// Patience-based stopping on a validation loss.
///
/// The first observation sets the baseline. A later loss counts as an
/// improvement only if it beats the best so far by more than `min_delta`;
/// otherwise the stale counter grows, and training stops once it reaches
/// `patience`. The best epoch tracks the strict minimum regardless of
/// `min_delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopState {
    pub best_val: f64,
    pub best_epoch: usize,
    pub stale_epochs: usize,
    patience: usize,
    min_delta: f64,
}

/// Outcome of one [`EarlyStopState::observe`] call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub new_best: bool,
    pub stop: bool,
}

impl EarlyStopState {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopState {
            best_val: f64::INFINITY,
            best_epoch: 0,
            stale_epochs: 0,
            patience,
            min_delta,
        }
    }

    pub fn observe(&mut self, epoch: usize, val: f64) -> Verdict {
        if self.best_val == f64::INFINITY {
            self.best_val = val;
            self.best_epoch = epoch;
            return Verdict {
                new_best: true,
                stop: false,
            };
        }
        if val < self.best_val - self.min_delta {
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
        }
        let new_best = val < self.best_val;
        if new_best {
            self.best_val = val;
            self.best_epoch = epoch;
        }
        Verdict {
            new_best,
            stop: self.stale_epochs >= self.patience,
        }
    }
}

/// Per-epoch mean training and validation losses (epochs count from 1).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
}

impl LossHistory {
    pub fn epochs(&self) -> usize {
        self.val.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for (i, (t, v)) in self.train.iter().zip(&self.val).enumerate() {
            writeln!(out, "{},{t:.10e},{v:.10e}", i + 1).expect("string write");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: LossHistory,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
}

fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

/// Generic epoch loop. `step` trains on one batch and returns its mean loss;
/// `validate` returns the mean validation loss; `snapshot`/`restore` keep the
/// best parameters.
fn run_epochs<M: Clone>(
    model: &mut M,
    train: &[usize],
    cfg: &TrainConfig,
    stage: &str,
    mut step: impl FnMut(&mut M, &[usize]) -> Result<f64>,
    mut validate: impl FnMut(&M) -> Result<f64>,
) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5348_5546));
    let mut stopper = EarlyStopState::new(cfg.patience, cfg.min_delta);
    let mut history = LossHistory::default();
    let mut best = model.clone();
    let mut order = train.to_vec();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            total += step(model, batch)? * batch.len() as f64;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = validate(model)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Degenerate(format!(
                "{stage}: non-finite loss at epoch {epoch} (train {train_loss}, val {val_loss})"
            )));
        }
        history.train.push(train_loss);
        history.val.push(val_loss);
        let verdict = stopper.observe(epoch, val_loss);
        debug!("{stage} epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        if verdict.new_best {
            best = model.clone();
        }
        if verdict.stop {
            stopped_early = true;
            break;
        }
    }
    *model = best;
    info!(
        "{stage}: {} epochs, best epoch {} (val {:.6})",
        history.epochs(),
        stopper.best_epoch,
        stopper.best_val
    );
    Ok(TrainOutcome {
        history,
        best_epoch: stopper.best_epoch,
        best_val: stopper.best_val,
        stopped_early,
    })
}

/// Mean over `items` of a per-batch mean loss, weighted by batch size.
fn mean_over_batches(items: &[usize], size: usize, mut f: impl FnMut(&[usize]) -> Result<f64>) -> Result<f64> {
    let mut total = 0.0;
    for batch in batches(items, size) {
        total += f(batch)? * batch.len() as f64;
    }
    Ok(total / items.len() as f64)
}

/// Trains the compression part to reproduce `targets` from `volumes`.
///
/// A random `val_fraction` of the pairs is held out for early stopping. On
/// return `net` holds the parameters of the best validation epoch.
pub fn pretrain(
    net: &mut CompressionNet,
    volumes: &[Volume],
    targets: &[ProjectionMap],
    variant: LossVariant,
    cfg: &TrainConfig,
    optim: &OptimConfig,
    ssim: &SsimConfig,
) -> Result<TrainOutcome> {
    cfg.validate("pretrain")?;
    if volumes.is_empty() {
        return Err(Error::contract("pretraining needs at least one volume"));
    }
    if volumes.len() != targets.len() {
        return Err(Error::contract(format!(
            "{} volumes but {} target maps",
            volumes.len(),
            targets.len()
        )));
    }
    let (train, val) = holdout_split(volumes.len(), cfg.val_fraction, derive_seed(cfg.seed, 0x5641_4C))?;
    let groups = make_groups(Stage::Pretrain, &[(Part::Compression, net.params())], optim)?;
    let mut adam = Adam::new(groups, &[net.params()]);
    let inputs = |idx: &[usize]| -> Result<(Tensor, Tensor)> {
        let vols: Vec<&Volume> = idx.iter().map(|&i| &volumes[i]).collect();
        let maps: Vec<&ProjectionMap> = idx.iter().map(|&i| &targets[i]).collect();
        Ok((stack_volumes(&vols)?, stack_maps(&maps)?))
    };
    let loss_of = |net: &CompressionNet, tape: &mut Tape, idx: &[usize], mode: Mode, stats: &mut PassStats| {
        let (x, g) = inputs(idx)?;
        let bound = match mode {
            Mode::Train => net.params().bind(tape),
            Mode::Infer => net.params().bind_frozen(tape),
        };
        let xv = tape.leaf(x);
        let gv = tape.leaf(g);
        let p = net.forward(tape, &bound, xv, mode, stats)?;
        Ok::<_, Error>((bound, pretrain_loss(tape, p, gv, ssim, variant)?))
    };
    run_epochs(
        net,
        &train,
        cfg,
        "pretrain",
        |net, batch| {
            let mut tape = Tape::new();
            let mut stats = PassStats::default();
            let (bound, loss) = loss_of(net, &mut tape, batch, Mode::Train, &mut stats)?;
            let value = tape.value(loss).item().expect("scalar loss");
            let mut grads = tape.backward(loss)?;
            let g = bound.collect_grads(&mut grads)?;
            adam.step(&mut [net.params_mut()], &[g])?;
            net.commit_stats(&stats.0)?;
            Ok(value)
        },
        |net| {
            mean_over_batches(&val, cfg.batch_size, |batch| {
                let mut tape = Tape::new();
                let (_, loss) = loss_of(net, &mut tape, batch, Mode::Infer, &mut PassStats::default())?;
                Ok(tape.value(loss).item().expect("scalar loss"))
            })
        },
    )
}

fn labels_of(volumes: &[Volume]) -> Result<Vec<Class>> {
    volumes
        .iter()
        .map(|v| v.label.ok_or_else(|| Error::contract(format!("volume {} has no label", v.id))))
        .collect()
}

/// Fine-tunes both parts end to end with cross-entropy.
///
/// A stratified `val_fraction` of `volumes` is held out for early stopping;
/// every class must appear in the remaining training split. On return `net`
/// holds the parameters of the best validation epoch.
pub fn finetune(net: &mut Dpnn, volumes: &[Volume], cfg: &TrainConfig, optim: &OptimConfig) -> Result<TrainOutcome> {
    cfg.validate("finetune")?;
    let labels = labels_of(volumes)?;
    let (train, val) = stratified_holdout(&labels, cfg.val_fraction, derive_seed(cfg.seed, 0x5641_4C))?;
    for c in Class::ALL {
        if !train.iter().any(|&i| labels[i] == c) {
            return Err(Error::contract(format!("class {c} is missing from the training split")));
        }
    }
    let groups = make_groups(
        Stage::Finetune,
        &[
            (Part::Compression, net.compression.params()),
            (Part::Classification, net.classification.params()),
        ],
        optim,
    )?;
    let mut adam = Adam::new(groups, &[net.compression.params(), net.classification.params()]);
    let batch_of = |idx: &[usize]| -> Result<(Tensor, Vec<usize>)> {
        let vols: Vec<&Volume> = idx.iter().map(|&i| &volumes[i]).collect();
        Ok((stack_volumes(&vols)?, idx.iter().map(|&i| labels[i].index()).collect()))
    };
    run_epochs(
        net,
        &train,
        cfg,
        "finetune",
        |net, batch| {
            let (x, y) = batch_of(batch)?;
            let mut tape = Tape::new();
            let cb = net.compression.params().bind(&mut tape);
            let kb = net.classification.params().bind(&mut tape);
            let xv = tape.leaf(x);
            let mut stats = Default::default();
            let out = net.forward(&mut tape, &cb, &kb, xv, Mode::Train, &mut stats)?;
            let loss = cross_entropy(&mut tape, out.probs, &y)?;
            let value = tape.value(loss).item().expect("scalar loss");
            let mut grads = tape.backward(loss)?;
            let gc = cb.collect_grads(&mut grads)?;
            let gk = kb.collect_grads(&mut grads)?;
            let Dpnn {
                compression,
                classification,
            } = net;
            adam.step(&mut [compression.params_mut(), classification.params_mut()], &[gc, gk])?;
            let (sc, sk): (PassStats, PassStats) = stats;
            compression.commit_stats(&sc.0)?;
            classification.commit_stats(&sk.0)?;
            Ok(value)
        },
        |net| {
            mean_over_batches(&val, cfg.batch_size, |batch| {
                let (x, y) = batch_of(batch)?;
                let (_, probs) = net.predict(&x)?;
                let mut tape = Tape::new();
                let p = tape.leaf(probs);
                let loss = cross_entropy(&mut tape, p, &y)?;
                Ok(tape.value(loss).item().expect("scalar loss"))
            })
        },
    )
}

/// Most probable class per row of an `[N, 3]` probability tensor; ties go
/// to the lower class index.
pub fn argmax_classes(probs: &Tensor) -> Vec<Class> {
    probs
        .data()
        .chunks(3)
        .map(|row| {
            let best = (0..3).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            Class::from_index(best).expect("three classes")
        })
        .collect()
}

/// Inference-mode predictions for `volumes`, in batches.
pub fn predict_classes(net: &Dpnn, volumes: &[&Volume], batch_size: usize) -> Result<Vec<Class>> {
    let mut out = Vec::with_capacity(volumes.len());
    for chunk in volumes.chunks(batch_size.max(1)) {
        let (_, probs) = net.predict(&stack_volumes(chunk)?)?;
        out.extend(argmax_classes(&probs));
    }
    Ok(out)
}
