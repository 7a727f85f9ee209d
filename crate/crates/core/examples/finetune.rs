//! Trains the full network end to end without pretraining on a small
//! phantom set and scores it on held-out phantoms.
//!
//!     cargo run --release --example finetune -- [epochs]

use dpnn::data::{synth_phantoms, PhantomConfig};
use dpnn::experiment::{init_dpnn, normalize_all};
use dpnn::metrics::{confusion, per_class_metrics, MetricsReport};
use dpnn::model::ModelConfig;
use dpnn::optim::OptimConfig;
use dpnn::train::{finetune, predict_classes, TrainConfig};

fn main() -> dpnn::Result<()> {
    let epochs = std::env::args().nth(1).map_or(40, |a| a.parse().expect("epochs"));
    let phantom = PhantomConfig { height: 32, width: 32, depth: 16, ..Default::default() };
    let model = ModelConfig { height: 32, width: 32, depth: 16, ..Default::default() };
    let train_set = normalize_all(&synth_phantoms(&phantom, 20)?)?;
    let test_set = normalize_all(&synth_phantoms(&PhantomConfig { seed: 99, ..phantom }, 10)?)?;

    let mut net = init_dpnn(&model, None, 5)?;
    let outcome = finetune(&mut net, &train_set, &TrainConfig { max_epochs: epochs, ..Default::default() }, &OptimConfig::default())?;
    print!("{}", outcome.history.to_csv());

    let preds = predict_classes(&net, &test_set.iter().collect::<Vec<_>>(), 10)?;
    let labels: Vec<_> = test_set.iter().map(|v| v.label.unwrap()).collect();
    let report = MetricsReport::from_folds(vec![per_class_metrics(&confusion(&preds, &labels)?)?])?;
    print!("{}", report.to_table("held-out phantoms"));
    Ok(())
}
