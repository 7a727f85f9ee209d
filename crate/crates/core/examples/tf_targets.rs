//! Computes tensor-factorization target maps for one phantom per class and
//! writes them as PGM images.
//!
//!     cargo run --release --example tf_targets -- [out_dir]

use std::path::PathBuf;

use dpnn::data::{save_map_pgm, synth_phantoms, PhantomConfig};
use dpnn::tf::{depth_weights, tucker_project};

fn main() -> dpnn::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "tf_targets".into()));
    std::fs::create_dir_all(&out).expect("create output directory");
    let volumes = synth_phantoms(&PhantomConfig::default(), 1)?;
    for v in &volumes {
        let u = depth_weights(v);
        let peak = (0..u.len()).max_by(|&a, &b| u[a].total_cmp(&u[b])).unwrap();
        let target = tucker_project(v)?;
        let path = out.join(format!("{}.pgm", v.id));
        save_map_pgm(&target.map, &path)?;
        println!("{}: heaviest slice z={peak} (weight {:.3}), wrote {}", v.id, u[peak], path.display());
    }
    Ok(())
}
