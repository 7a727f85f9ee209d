//! Runs the variant comparison (full, bl1, bl2) over several seeds.
//!
//! Without arguments a reduced configuration runs in a few minutes. Pass a
//! JSON file with `ProtocolConfig` fields to change it; omitted fields keep
//! their defaults (50 phantoms per class at 64×64×48, 5 folds, 3 seeds).
//!
//!     cargo run --release --example protocol -- [config.json]

use dpnn::data::PhantomConfig;
use dpnn::experiment::{run_protocol, ProtocolConfig};
use dpnn::model::ModelConfig;
use dpnn::train::TrainConfig;

fn main() -> dpnn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = match std::env::args().nth(1) {
        Some(path) => {
            let text = std::fs::read_to_string(&path).expect("read config");
            serde_json::from_str(&text).expect("parse config")
        }
        None => ProtocolConfig {
            phantom: PhantomConfig { height: 32, width: 32, depth: 16, ..Default::default() },
            model: ModelConfig { height: 32, width: 32, depth: 16, ..Default::default() },
            n_per_class: 20,
            unlabeled: 30,
            pretrain: TrainConfig { max_epochs: 8, ..Default::default() },
            finetune: TrainConfig { max_epochs: 10, ..Default::default() },
            seeds: vec![0, 1],
            ..Default::default()
        },
    };
    let report = run_protocol(&cfg)?;
    print!("{}", report.to_text());
    Ok(())
}
