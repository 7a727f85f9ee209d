//! Pretrains the compression part on a small unlabeled corpus, then writes
//! target and learned projections side by side.
//!
//!     cargo run --release --example pretrain -- [epochs] [out_dir]

use std::path::PathBuf;

use dpnn::data::{save_map_pgm, synth_unlabeled, stack_volumes, PhantomConfig, ProjectionMap};
use dpnn::experiment::{make_targets, normalize_all, pretrain_compression};
use dpnn::losses::{LossVariant, SsimConfig};
use dpnn::model::ModelConfig;
use dpnn::optim::OptimConfig;
use dpnn::train::TrainConfig;

fn main() -> dpnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(15, |a| a.parse().expect("epochs"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "pretrain".into()));
    std::fs::create_dir_all(&out).expect("create output directory");

    let phantom = PhantomConfig { height: 32, width: 32, depth: 16, ..Default::default() };
    let model = ModelConfig { height: 32, width: 32, depth: 16, ..Default::default() };
    let corpus = normalize_all(&synth_unlabeled(&phantom, 30)?)?;
    let targets = make_targets(&corpus)?;
    let train = TrainConfig { max_epochs: epochs, ..Default::default() };
    let (net, outcome) = pretrain_compression(
        &model,
        &corpus,
        &targets,
        LossVariant::MseSsim,
        &train,
        &OptimConfig::default(),
        &SsimConfig::default(),
    )?;
    print!("{}", outcome.history.to_csv());
    println!("best epoch {} (val {:.5})", outcome.best_epoch, outcome.best_val);

    let maps = net.project(&stack_volumes(&corpus[..3].iter().collect::<Vec<_>>())?)?;
    for (i, learned) in maps.data().chunks(32 * 32).enumerate() {
        let id = &corpus[i].id;
        save_map_pgm(&targets[i].map, &out.join(format!("{id}_target.pgm")))?;
        save_map_pgm(&ProjectionMap::new(32, 32, learned.to_vec())?, &out.join(format!("{id}_learned.pgm")))?;
    }
    println!("wrote target/learned pairs to {}", out.display());
    Ok(())
}
