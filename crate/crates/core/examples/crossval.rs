//! Five-fold cross-validation of one variant on small phantoms, with the
//! compression part pretrained first unless the variant is bl2.
//!
//!     cargo run --release --example crossval -- [full|bl1|bl2] [epochs]

use dpnn::data::{synth_phantoms, synth_unlabeled, PhantomConfig};
use dpnn::experiment::{crossval, make_targets, normalize_all, pretrain_compression, Variant};
use dpnn::losses::SsimConfig;
use dpnn::model::ModelConfig;
use dpnn::optim::OptimConfig;
use dpnn::train::TrainConfig;

fn main() -> dpnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: Variant = args.next().as_deref().unwrap_or("full").parse()?;
    let epochs = args.next().map_or(40, |a| a.parse().expect("epochs"));
    let phantom = PhantomConfig { height: 32, width: 32, depth: 16, ..Default::default() };
    let model = ModelConfig { height: 32, width: 32, depth: 16, ..Default::default() };
    let optim = OptimConfig::default();
    let labeled = normalize_all(&synth_phantoms(&phantom, 30)?)?;

    let settings = variant.settings();
    let pretrained = if settings.pretrained {
        let corpus = normalize_all(&synth_unlabeled(&phantom, 30)?)?;
        let targets = make_targets(&corpus)?;
        let train = TrainConfig { max_epochs: 10, ..Default::default() };
        let (net, _) =
            pretrain_compression(&model, &corpus, &targets, settings.loss_variant, &train, &optim, &SsimConfig::default())?;
        Some(net)
    } else {
        None
    };
    let train = TrainConfig { max_epochs: epochs, ..Default::default() };
    let result = crossval(&labeled, 5, 0, &model, &train, &optim, pretrained.as_ref())?;
    print!("{}", result.report.to_table(&format!("5-fold cross-validation, variant {variant}")));
    Ok(())
}
