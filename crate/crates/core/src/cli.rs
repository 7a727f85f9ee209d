//! Command-line driver for the whole pipeline.
//!
//! Every subcommand resolves a [`RunConfig`], creates its run directory,
//! writes the effective config there as `config.json` and then does its
//! work. Exit codes: 0 on success, 2 for configuration and precondition
//! errors, 3 for I/O and file-format errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, CONFIG_ECHO};
use crate::data::{
    load_map, load_volume, save_map, save_map_pgm, save_volume, synth_phantoms, synth_unlabeled, Manifest,
    ManifestEntry, ProjectionMap, Volume,
};
use crate::error::{Error, Result};
use crate::experiment::{crossval, init_dpnn, make_targets, normalize_all, pretrain_compression, Variant};
use crate::losses::LossVariant;
use crate::metrics::{confusion, per_class_metrics, MetricsReport};
use crate::model::{CompressionNet, Dpnn};
use crate::tf::ProjectionTarget;
use crate::train::{derive_seed, finetune, predict_classes};

/// Checkpoint meta record naming the pretraining loss: 0 = MSE + SSIM,
/// 1 = MSE only.
pub const PRETRAIN_VARIANT_META: &str = "meta.pretrain_variant";

#[derive(Debug, Parser)]
#[command(name = "dpnn", version, about = "Learned 3D-to-2D projection and classification of PET-like volumes")]
pub struct Cli {
    /// JSON config with flat dotted keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set finetune.max_epochs=40`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Model variant: full, bl1 (MSE-only pretraining) or bl2 (no pretraining).
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub pretrain_manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub targets: Option<PathBuf>,
    #[arg(long, global = true)]
    pub pretrain_checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write synthetic labeled (and unlabeled) phantoms plus manifests.
    Synth,
    /// Compute tensor-factorization target maps for the pretraining manifest
    /// (or the labeled one when no pretraining manifest is set).
    TfProject,
    /// Pretrain the compression part against target maps.
    Pretrain,
    /// Train the full network end to end on a labeled manifest.
    Finetune,
    /// Stratified k-fold cross-validation.
    Crossval,
    /// Score a trained checkpoint on a labeled manifest.
    Eval,
    /// Export learned projections as PGM images.
    Project,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::TfProject => "tf-project",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Crossval => "crossval",
            Command::Eval => "eval",
            Command::Project => "project",
        }
    }
}

impl Cli {
    /// Config file, then `--set`, then the dedicated flags.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(v) = self.variant {
            let s = v.settings();
            overrides.push(format!("pipeline.loss_variant={}", json(&s.loss_variant)));
            overrides.push(format!("pipeline.pretrained={}", s.pretrained));
        }
        for (key, value) in [
            ("paths.run_dir", &self.run_dir),
            ("paths.manifest", &self.manifest),
            ("paths.pretrain_manifest", &self.pretrain_manifest),
            ("paths.targets", &self.targets),
            ("paths.pretrain_checkpoint", &self.pretrain_checkpoint),
            ("paths.checkpoint", &self.checkpoint),
        ] {
            if let Some(p) = value {
                overrides.push(format!("{key}={}", json(p)));
            }
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("value serializes")
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(dir) => {
            info!("done; outputs in {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        3
    } else {
        2
    }
}

/// Runs one command and returns its run directory.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let cfg = cli.resolve_config()?;
    let ctx = Context::new(cfg, cli.command)?;
    match cli.command {
        Command::Synth => cmd_synth(&ctx),
        Command::TfProject => cmd_tf_project(&ctx),
        Command::Pretrain => cmd_pretrain(&ctx),
        Command::Finetune => cmd_finetune(&ctx),
        Command::Crossval => cmd_crossval(&ctx),
        Command::Eval => cmd_eval(&ctx),
        Command::Project => cmd_project(&ctx),
    }?;
    Ok(ctx.dir)
}

struct Context {
    cfg: RunConfig,
    dir: PathBuf,
}

impl Context {
    /// Checks referenced inputs, then creates the run directory and echoes
    /// the config into it.
    fn new(cfg: RunConfig, command: Command) -> Result<Self> {
        let p = &cfg.paths;
        let pretrained = cfg.pipeline.pretrained;
        let required: Vec<(&str, &Option<PathBuf>)> = match command {
            Command::Synth => vec![],
            Command::TfProject if p.pretrain_manifest.is_none() => vec![("paths.manifest", &p.manifest)],
            Command::TfProject => vec![("paths.pretrain_manifest", &p.pretrain_manifest)],
            Command::Pretrain => vec![("paths.pretrain_manifest", &p.pretrain_manifest), ("paths.targets", &p.targets)],
            Command::Finetune | Command::Crossval if pretrained => {
                vec![("paths.manifest", &p.manifest), ("paths.pretrain_checkpoint", &p.pretrain_checkpoint)]
            }
            Command::Finetune | Command::Crossval => vec![("paths.manifest", &p.manifest)],
            Command::Eval | Command::Project => vec![("paths.manifest", &p.manifest), ("paths.checkpoint", &p.checkpoint)],
        };
        for (field, path) in required {
            match path {
                None => return Err(Error::config(field, format!("required by `{}`", command.name()))),
                Some(path) if !path.exists() => {
                    return Err(Error::config(field, format!("{} does not exist", path.display())));
                }
                Some(_) => {}
            }
        }
        if command == Command::Pretrain && !pretrained {
            return Err(Error::config(
                "pipeline.pretrained",
                "variant bl2 has no pretraining stage; use full or bl1",
            ));
        }
        let dir = cfg.run_dir(command.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(&dir.join(CONFIG_ECHO), &cfg.to_json())?;
        info!("{}: run directory {}", command.name(), dir.display());
        Ok(Context { cfg, dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn required<'a>(path: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| Error::config(field, "not set"))
}

/// Volumes of a manifest, with manifest ids and labels.
fn load_manifest_volumes(path: &Path) -> Result<(Manifest, Vec<Volume>)> {
    let manifest = Manifest::load(path)?;
    if manifest.entries.is_empty() {
        return Err(Error::contract(format!("manifest {} lists no volumes", path.display())));
    }
    let volumes = manifest
        .entries
        .iter()
        .map(|e| {
            let mut v = load_volume(&e.path)?;
            v.id = e.id.clone();
            v.label = e.label;
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, volumes))
}

fn check_dims(cfg: &RunConfig, volumes: &[Volume]) -> Result<()> {
    let m = &cfg.model;
    for v in volumes {
        if v.dims() != (m.height, m.width, m.depth) {
            return Err(Error::shape(format!(
                "volume {} is {:?} (H, W, D), model expects ({}, {}, {})",
                v.id,
                v.dims(),
                m.height,
                m.width,
                m.depth
            )));
        }
    }
    Ok(())
}

fn labeled_dataset(cfg: &RunConfig) -> Result<Vec<Volume>> {
    let (manifest, volumes) = load_manifest_volumes(required(&cfg.paths.manifest, "paths.manifest")?)?;
    manifest.require_all_classes()?;
    check_dims(cfg, &volumes)?;
    normalize_all(&volumes)
}

fn meta_code(variant: LossVariant) -> f64 {
    match variant {
        LossVariant::MseSsim => 0.0,
        LossVariant::MseOnly => 1.0,
    }
}

/// The pretrained compression part required by the configured variant, or
/// `None` for BL-2.
fn load_pretrained(cfg: &RunConfig) -> Result<Option<CompressionNet>> {
    if !cfg.pipeline.pretrained {
        return Ok(None);
    }
    let path = required(&cfg.paths.pretrain_checkpoint, "paths.pretrain_checkpoint")?;
    let ck = Checkpoint::load(path)?;
    let want = cfg.pipeline.loss_variant;
    let found = ck.meta_usizes(PRETRAIN_VARIANT_META).map_err(|_| {
        Error::contract(format!("{} is not a pretraining checkpoint", path.display()))
    })?;
    if found.first().map(|&c| c as f64) != Some(meta_code(want)) {
        let name = |c: usize| if c == 0 { "mse-ssim" } else { "mse-only" };
        return Err(Error::contract(format!(
            "{} was pretrained with {}, but the variant needs {}",
            path.display(),
            found.first().map_or("unknown", |&c| name(c)),
            json(&want).trim_matches('"')
        )));
    }
    Ok(Some(CompressionNet::from_checkpoint(&ck)?))
}

fn cmd_synth(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let labeled = synth_phantoms(&cfg.phantom, cfg.synth.n_per_class)?;
    write_volumes(ctx, "labeled", &labeled)?;
    if cfg.synth.unlabeled > 0 {
        write_volumes(ctx, "unlabeled", &synth_unlabeled(&cfg.phantom, cfg.synth.unlabeled)?)?;
    }
    Ok(())
}

fn write_volumes(ctx: &Context, name: &str, volumes: &[Volume]) -> Result<()> {
    let dir = ctx.path(name);
    create_dir(&dir)?;
    let mut entries = Vec::with_capacity(volumes.len());
    for v in volumes {
        let path = dir.join(format!("{}.dpnv", v.id));
        save_volume(v, &path)?;
        entries.push(ManifestEntry {
            id: v.id.clone(),
            path,
            label: v.label,
        });
    }
    let manifest_path = ctx.path(&format!("{name}.tsv"));
    Manifest::new(entries, Some(ctx.cfg.phantom.seed))?.save(&manifest_path)?;
    info!("wrote {} volumes and {}", volumes.len(), manifest_path.display());
    Ok(())
}

fn cmd_tf_project(ctx: &Context) -> Result<()> {
    let paths = &ctx.cfg.paths;
    let source = paths.pretrain_manifest.as_ref().or(paths.manifest.as_ref());
    let (_, volumes) = load_manifest_volumes(required(&source.cloned(), "paths.pretrain_manifest")?)?;
    let targets = make_targets(&volumes)?;
    let dir = ctx.path("targets");
    create_dir(&dir)?;
    let mut entries = Vec::with_capacity(targets.len());
    for t in &targets {
        let path = dir.join(format!("{}.dpnv", t.source_id));
        save_map(&t.map, &path)?;
        entries.push(ManifestEntry {
            id: t.source_id.clone(),
            path,
            label: None,
        });
    }
    let flagged = targets.iter().filter(|t| t.degenerate).count();
    Manifest::new(entries, None)?.save(&ctx.path("targets.tsv"))?;
    info!("wrote {} target maps ({flagged} degenerate)", targets.len());
    Ok(())
}

fn cmd_pretrain(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let (_, volumes) = load_manifest_volumes(required(&cfg.paths.pretrain_manifest, "paths.pretrain_manifest")?)?;
    check_dims(cfg, &volumes)?;
    let volumes = normalize_all(&volumes)?;
    let target_manifest = Manifest::load(required(&cfg.paths.targets, "paths.targets")?)?;
    let targets = volumes
        .iter()
        .map(|v| {
            let entry = target_manifest
                .entries
                .iter()
                .find(|e| e.id == v.id)
                .ok_or_else(|| Error::contract(format!("no target map for volume {}", v.id)))?;
            let map = load_map(&entry.path)?;
            if (map.height, map.width) != (v.height, v.width) {
                return Err(Error::shape(format!(
                    "target map for {} is {}x{}, volume slices are {}x{}",
                    v.id, map.height, map.width, v.height, v.width
                )));
            }
            Ok(ProjectionTarget {
                map,
                source_id: v.id.clone(),
                degenerate: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let variant = cfg.pipeline.loss_variant;
    let (net, outcome) = pretrain_compression(&cfg.model, &volumes, &targets, variant, &cfg.pretrain, &cfg.optim, &cfg.ssim)?;
    let mut ck = Checkpoint::new();
    net.write_checkpoint(&mut ck);
    ck.insert_meta(PRETRAIN_VARIANT_META, &[meta_code(variant)]);
    ck.save(&ctx.path("pretrain.ckpt"))?;
    write(&ctx.path("pretrain_loss.csv"), &outcome.history.to_csv())
}

fn cmd_finetune(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let volumes = labeled_dataset(cfg)?;
    let pretrained = load_pretrained(cfg)?;
    let mut net = init_dpnn(&cfg.model, pretrained.as_ref(), derive_seed(cfg.finetune.seed, 0x4D4F_4445))?;
    let outcome = finetune(&mut net, &volumes, &cfg.finetune, &cfg.optim)?;
    net.to_checkpoint().save(&ctx.path("model.ckpt"))?;
    write(&ctx.path("finetune_loss.csv"), &outcome.history.to_csv())
}

fn title(cfg: &RunConfig, what: &str) -> String {
    let variant = cfg.pipeline.variant().map_or("custom", Variant::name);
    format!("{what} (variant {variant})")
}

fn cmd_crossval(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let volumes = labeled_dataset(cfg)?;
    let pretrained = load_pretrained(cfg)?;
    let result = crossval(
        &volumes,
        cfg.crossval.k,
        cfg.crossval.seed,
        &cfg.model,
        &cfg.finetune,
        &cfg.optim,
        pretrained.as_ref(),
    )?;
    let mut preds = String::from("fold\tid\tlabel\tpredicted\n");
    for (i, f) in result.folds.iter().enumerate() {
        write(&ctx.path(&format!("fold{i}_loss.csv")), &f.outcome.history.to_csv())?;
        for ((id, l), p) in f.test_ids.iter().zip(&f.labels).zip(&f.preds) {
            writeln!(preds, "{i}\t{id}\t{l}\t{p}").expect("string write");
        }
    }
    write(&ctx.path("predictions.tsv"), &preds)?;
    let what = format!("{}-fold cross-validation", cfg.crossval.k);
    write(&ctx.path("metrics.txt"), &result.report.to_table(&title(cfg, &what)))?;
    write(&ctx.path("metrics.kv"), &result.report.to_kv())
}

fn load_model(cfg: &RunConfig) -> Result<Dpnn> {
    let path = required(&cfg.paths.checkpoint, "paths.checkpoint")?;
    Dpnn::from_checkpoint(&Checkpoint::load(path)?)
}

fn cmd_eval(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let volumes = labeled_dataset(cfg)?;
    let net = load_model(cfg)?;
    let refs: Vec<&Volume> = volumes.iter().collect();
    let preds = predict_classes(&net, &refs, cfg.finetune.batch_size)?;
    let labels: Vec<_> = volumes.iter().map(|v| v.label.expect("labeled dataset")).collect();
    let report = MetricsReport::from_folds(vec![per_class_metrics(&confusion(&preds, &labels)?)?])?;
    let mut out = String::from("id\tlabel\tpredicted\n");
    for ((v, l), p) in volumes.iter().zip(&labels).zip(&preds) {
        writeln!(out, "{}\t{l}\t{p}", v.id).expect("string write");
    }
    write(&ctx.path("predictions.tsv"), &out)?;
    write(&ctx.path("metrics.txt"), &report.to_table("evaluation"))?;
    write(&ctx.path("metrics.kv"), &report.to_kv())
}

fn cmd_project(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let (_, volumes) = load_manifest_volumes(required(&cfg.paths.manifest, "paths.manifest")?)?;
    check_dims(cfg, &volumes)?;
    let volumes = normalize_all(&volumes)?;
    let path = required(&cfg.paths.checkpoint, "paths.checkpoint")?;
    let net = CompressionNet::from_checkpoint(&Checkpoint::load(path)?)?;
    if net.depth() != cfg.model.depth {
        warn!("checkpoint depth {} differs from model.depth {}", net.depth(), cfg.model.depth);
    }
    let dir = ctx.path("projections");
    create_dir(&dir)?;
    for chunk in volumes.chunks(cfg.finetune.batch_size) {
        let refs: Vec<&Volume> = chunk.iter().collect();
        let maps = net.project(&crate::data::stack_volumes(&refs)?)?;
        let hw = cfg.model.height * cfg.model.width;
        for (v, values) in chunk.iter().zip(maps.data().chunks(hw)) {
            let map = ProjectionMap::new(v.height, v.width, values.to_vec())?;
            save_map_pgm(&map, &dir.join(format!("{}.pgm", v.id)))?;
        }
    }
    info!("exported {} projections", volumes.len());
    Ok(())
}
