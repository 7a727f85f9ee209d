//! Generates labeled phantoms, prints per-class regional means and writes
//! the dataset with its manifest.
//!
//!     cargo run --release --example phantoms -- [out_dir]

use std::path::PathBuf;

use dpnn::data::{save_volume, synth_phantoms, Class, Manifest, ManifestEntry, PhantomConfig, Volume};

fn region_mean(v: &Volume, center: [f64; 3]) -> f64 {
    let (h, w, d) = v.dims();
    let c = [center[0] * (w - 1) as f64, center[1] * (h - 1) as f64, center[2] * (d - 1) as f64];
    let mut sum = 0.0;
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                let at = |a: usize, off: i64| (c[a].round() as i64 + off) as usize;
                sum += v.at(at(0, dx), at(1, dy), at(2, dz));
            }
        }
    }
    sum / 27.0
}

fn main() -> dpnn::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "phantoms".into()));
    std::fs::create_dir_all(&out).expect("create output directory");
    let cfg = PhantomConfig::default();
    let volumes = synth_phantoms(&cfg, 10)?;
    println!("{:<6}{:>12}{:>12}", "class", "striatum", "cerebellum");
    for c in Class::ALL {
        let of: Vec<&Volume> = volumes.iter().filter(|v| v.label == Some(c)).collect();
        let mean = |center| of.iter().map(|v| region_mean(v, center)).sum::<f64>() / of.len() as f64;
        println!("{:<6}{:>12.3}{:>12.3}", c.name(), mean(cfg.striatum[0].center), mean(cfg.cerebellum.center));
    }
    let mut entries = Vec::new();
    for v in &volumes {
        let path = out.join(format!("{}.dpnv", v.id));
        save_volume(v, &path)?;
        entries.push(ManifestEntry { id: v.id.clone(), path, label: v.label });
    }
    Manifest::new(entries, Some(cfg.seed))?.save(&out.join("manifest.tsv"))?;
    println!("wrote {} volumes to {}", volumes.len(), out.display());
    Ok(())
}
