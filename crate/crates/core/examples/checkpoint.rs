//! Saves a network checkpoint, lists its records and reloads it.

use dpnn::checkpoint::Checkpoint;
use dpnn::model::{Dpnn, ModelConfig};

fn main() -> dpnn::Result<()> {
    let mut net = Dpnn::new(&ModelConfig::default())?;
    net.xavier_init(0);
    let path = std::env::temp_dir().join("dpnn-example.ckpt");
    net.to_checkpoint().save(&path)?;

    let ck = Checkpoint::load(&path)?;
    for r in ck.records().iter().take(8) {
        println!("{:<44} {:?}", r.name, r.tensor.dims());
    }
    println!("... {} records, {} bytes", ck.len(), std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));
    let back = Dpnn::from_checkpoint(&ck)?;
    assert_eq!(back.to_checkpoint().to_bytes(), ck.to_bytes());
    println!("reloaded network is identical");
    Ok(())
}
