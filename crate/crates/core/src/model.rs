//! The two-part network: a compression stack that squeezes depth slices
//! into one projection map, and a pooled classification stack with a
//! global-average-pool and 1×1 convolution head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::layers::{Activation, BatchNorm, BatchStats, Conv2d, Mode};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub const NUM_CLASSES: usize = 3;

/// Xavier streams, so the two parts draw independent sequences from one seed.
const COMPRESSION_STREAM: u64 = 1;
const CLASSIFICATION_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub has_pool: bool,
    pub activation: Activation,
}

/// 3×3 same-padded convolution, batch norm, activation, optional 2×2 pool.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub spec: BlockSpec,
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl Block {
    fn new(store: &mut ParamStore, name: &str, spec: BlockSpec) -> Result<Self> {
        let conv = Conv2d::new(store, &format!("{name}.conv"), spec.in_channels, spec.out_channels, 3, 1, 1)?;
        let bn = BatchNorm::new(store, &format!("{name}.bn"), spec.out_channels)?;
        Ok(Block { spec, conv, bn })
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, mode: Mode) -> Result<(Var, Option<BatchStats>)> {
        let y = self.conv.forward(tape, bound, x)?;
        let (y, stats) = self.bn.forward(tape, bound, y, mode)?;
        let mut y = self.spec.activation.apply(tape, y);
        if self.spec.has_pool {
            y = tape.max_pool2d(y)?;
        }
        Ok((y, stats))
    }
}

/// Batch statistics gathered by a training-mode forward pass, one entry per
/// batch-norm layer in block order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PassStats(pub Vec<BatchStats>);

fn run_blocks(
    blocks: &[Block],
    tape: &mut Tape,
    bound: &Bound,
    mut x: Var,
    mode: Mode,
    stats: &mut PassStats,
) -> Result<Var> {
    for b in blocks {
        let (y, s) = b.forward(tape, bound, x, mode)?;
        stats.0.extend(s);
        x = y;
    }
    Ok(x)
}

fn commit_blocks(blocks: &mut [Block], stats: &[BatchStats]) -> Result<()> {
    if stats.len() != blocks.len() {
        return Err(Error::contract(format!(
            "{} batch statistics for {} batch-norm layers",
            stats.len(),
            blocks.len()
        )));
    }
    for (b, s) in blocks.iter_mut().zip(stats) {
        b.bn.update_running(s);
    }
    Ok(())
}

fn xavier_fill(store: &mut ParamStore, conv: &Conv2d, rng: &mut ChaCha8Rng) {
    let limit = (6.0 / (conv.fan_in() + conv.fan_out()) as f64).sqrt();
    for w in store.get_mut(conv.weight).value.data_mut() {
        *w = rng.random_range(-limit..=limit);
    }
    store.get_mut(conv.bias).value.data_mut().fill(0.0);
}

fn reset_block(store: &mut ParamStore, b: &mut Block, rng: &mut ChaCha8Rng) {
    xavier_fill(store, &b.conv, rng);
    store.get_mut(b.bn.gamma).value.data_mut().fill(1.0);
    store.get_mut(b.bn.beta).value.data_mut().fill(0.0);
    b.bn.running_mean.fill(0.0);
    b.bn.running_var.fill(1.0);
}

fn write_state(store: &ParamStore, blocks: &[Block], ck: &mut Checkpoint) {
    for p in store.iter() {
        ck.insert(p.name.clone(), p.value.clone());
    }
    for (i, b) in blocks.iter().enumerate() {
        let prefix = block_name(store_prefix(store), i);
        let c = b.bn.channels();
        ck.insert(
            format!("{prefix}.bn.running_mean"),
            Tensor::from_vec(b.bn.running_mean.clone(), [c]).expect("channels >= 1"),
        );
        ck.insert(
            format!("{prefix}.bn.running_var"),
            Tensor::from_vec(b.bn.running_var.clone(), [c]).expect("channels >= 1"),
        );
    }
}

fn read_state(store: &mut ParamStore, blocks: &mut [Block], ck: &Checkpoint) -> Result<()> {
    for p in store.iter_mut() {
        let t = ck.require(&p.name)?;
        if t.dims() != p.value.dims() {
            return Err(Error::shape(format!(
                "checkpoint record `{}` has shape {}, model expects {}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t.clone();
    }
    let prefix = store_prefix(store).to_owned();
    for (i, b) in blocks.iter_mut().enumerate() {
        let name = block_name(&prefix, i);
        for (field, dst) in [("running_mean", &mut b.bn.running_mean), ("running_var", &mut b.bn.running_var)] {
            let key = format!("{name}.bn.{field}");
            let t = ck.require(&key)?;
            if t.numel() != dst.len() {
                return Err(Error::shape(format!("checkpoint record `{key}` has {} values", t.numel())));
            }
            dst.copy_from_slice(t.data());
        }
    }
    Ok(())
}

fn block_name(prefix: &str, i: usize) -> String {
    format!("{prefix}.block{i}")
}

fn store_prefix(store: &ParamStore) -> &str {
    store
        .iter()
        .next()
        .and_then(|p| p.name.split('.').next())
        .unwrap_or("")
}

fn as_meta(values: &[usize]) -> Vec<f64> {
    values.iter().map(|&v| v as f64).collect()
}

/// Maps `[N, D, H, W]` volumes (depth slices as channels) to `[N, 1, H, W]`
/// projections in (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct CompressionNet {
    schedule: Vec<usize>,
    params: ParamStore,
    blocks: Vec<Block>,
}

impl CompressionNet {
    /// Builds one block per consecutive pair of `schedule`; the schedule must
    /// start at `depth` and end at 1. The last block uses a sigmoid.
    pub fn new(depth: usize, schedule: &[usize]) -> Result<Self> {
        if schedule.len() < 2 {
            return Err(Error::contract(format!(
                "compression schedule needs at least 2 entries, got {schedule:?}"
            )));
        }
        if schedule[0] != depth {
            return Err(Error::contract(format!(
                "compression schedule starts at {} but the volume depth is {depth}",
                schedule[0]
            )));
        }
        if *schedule.last().expect("nonempty") != 1 {
            return Err(Error::contract(format!("compression schedule {schedule:?} must end in 1")));
        }
        if schedule.contains(&0) {
            return Err(Error::contract(format!("compression schedule {schedule:?} has a zero entry")));
        }
        let mut params = ParamStore::new();
        let last = schedule.len() - 2;
        let blocks = schedule
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let spec = BlockSpec {
                    in_channels: w[0],
                    out_channels: w[1],
                    has_pool: false,
                    activation: if i == last { Activation::Sigmoid } else { Activation::Relu },
                };
                Block::new(&mut params, &block_name("compression", i), spec)
            })
            .collect::<Result<_>>()?;
        Ok(CompressionNet {
            schedule: schedule.to_vec(),
            params,
            blocks,
        })
    }

    pub fn depth(&self) -> usize {
        self.schedule[0]
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, mode: Mode, stats: &mut PassStats) -> Result<Var> {
        let [_, c, _, _] = tape.shape(x).nchw("compression input")?;
        if c != self.depth() {
            return Err(Error::shape(format!(
                "compression expects {} depth slices, input has {c}",
                self.depth()
            )));
        }
        run_blocks(&self.blocks, tape, bound, x, mode, stats)
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn commit_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        commit_blocks(&mut self.blocks, stats)
    }

    /// Xavier-uniform weights, zero biases, unit scales, fresh running stats.
    pub fn xavier_init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(COMPRESSION_STREAM);
        for b in &mut self.blocks {
            reset_block(&mut self.params, b, &mut rng);
        }
    }

    /// Inference-mode projections of a `[N, D, H, W]` batch.
    pub fn project(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let x = tape.leaf(batch.clone());
        let y = self.forward(&mut tape, &bound, x, Mode::Infer, &mut PassStats::default())?;
        Ok(tape.value(y).clone())
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) {
        ck.insert_meta("meta.compression.schedule", &as_meta(&self.schedule));
        write_state(&self.params, &self.blocks, ck);
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let schedule = ck.meta_usizes("meta.compression.schedule")?;
        let mut net = CompressionNet::new(schedule[0], &schedule)?;
        read_state(&mut net.params, &mut net.blocks, ck)?;
        Ok(net)
    }
}

/// Maps `[N, 1, H, W]` projections to `[N, 3]` class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationNet {
    channels: Vec<usize>,
    height: usize,
    width: usize,
    params: ParamStore,
    blocks: Vec<Block>,
    head: Conv2d,
}

impl ClassificationNet {
    /// One pooled block per consecutive pair of `channels` (which starts at
    /// 1), then global average pooling and a 1×1 convolution to three logits.
    pub fn new(height: usize, width: usize, channels: &[usize]) -> Result<Self> {
        if channels.len() < 2 || channels[0] != 1 || channels.contains(&0) {
            return Err(Error::contract(format!(
                "classification channels {channels:?} must start at 1 and list positive widths"
            )));
        }
        let pools = channels.len() - 1;
        let (mut h, mut w) = (height, width);
        for _ in 0..pools {
            h /= 2;
            w /= 2;
        }
        if h == 0 || w == 0 {
            return Err(Error::contract(format!(
                "{height}x{width} maps shrink to nothing after {pools} 2x2 poolings"
            )));
        }
        let mut params = ParamStore::new();
        let blocks = channels
            .windows(2)
            .enumerate()
            .map(|(i, c)| {
                let spec = BlockSpec {
                    in_channels: c[0],
                    out_channels: c[1],
                    has_pool: true,
                    activation: Activation::Relu,
                };
                Block::new(&mut params, &block_name("classification", i), spec)
            })
            .collect::<Result<_>>()?;
        let head = Conv2d::new(
            &mut params,
            "classification.head",
            *channels.last().expect("nonempty"),
            NUM_CLASSES,
            1,
            1,
            0,
        )?;
        Ok(ClassificationNet {
            channels: channels.to_vec(),
            height,
            width,
            params,
            blocks,
            head,
        })
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn input_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Spatial extents after each pooled block, starting with the input.
    pub fn spatial_trace(&self) -> Vec<(usize, usize)> {
        let mut trace = vec![(self.height, self.width)];
        for _ in &self.blocks {
            let &(h, w) = trace.last().expect("nonempty");
            trace.push((h / 2, w / 2));
        }
        trace
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn head(&self) -> &Conv2d {
        &self.head
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, mode: Mode, stats: &mut PassStats) -> Result<Var> {
        let [n, c, h, w] = tape.shape(x).nchw("classification input")?;
        if c != 1 || (h, w) != (self.height, self.width) {
            return Err(Error::shape(format!(
                "classification expects [N, 1, {}, {}], got [{n}, {c}, {h}, {w}]",
                self.height, self.width
            )));
        }
        let y = run_blocks(&self.blocks, tape, bound, x, mode, stats)?;
        let y = tape.global_avg_pool(y)?;
        let y = self.head.forward(tape, bound, y)?;
        let y = tape.reshape(y, [n, NUM_CLASSES])?;
        tape.softmax(y)
    }

    pub fn commit_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        commit_blocks(&mut self.blocks, stats)
    }

    pub fn xavier_init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(CLASSIFICATION_STREAM);
        for b in &mut self.blocks {
            reset_block(&mut self.params, b, &mut rng);
        }
        xavier_fill(&mut self.params, &self.head, &mut rng);
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) {
        ck.insert_meta("meta.classification.channels", &as_meta(&self.channels));
        ck.insert_meta("meta.classification.input", &as_meta(&[self.height, self.width]));
        write_state(&self.params, &self.blocks, ck);
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let channels = ck.meta_usizes("meta.classification.channels")?;
        let hw = ck.meta_usizes("meta.classification.input")?;
        if hw.len() != 2 {
            return Err(Error::contract("meta.classification.input must hold [H, W]"));
        }
        let mut net = ClassificationNet::new(hw[0], hw[1], &channels)?;
        read_state(&mut net.params, &mut net.blocks, ck)?;
        Ok(net)
    }
}

/// Architecture hyperparameters. Input volumes are `height × width × depth`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    /// Compression widths between the depth input and the single output map.
    pub compression_hidden: Vec<usize>,
    /// Classification block widths after the single input map.
    pub classification_channels: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 64,
            width: 64,
            depth: 48,
            compression_hidden: vec![32, 16, 8, 4],
            classification_channels: vec![16, 32, 64, 64, 64],
        }
    }
}

impl ModelConfig {
    pub fn compression_schedule(&self) -> Vec<usize> {
        let mut s = vec![self.depth];
        s.extend(&self.compression_hidden);
        s.push(1);
        s
    }

    pub fn classification_schedule(&self) -> Vec<usize> {
        let mut s = vec![1];
        s.extend(&self.classification_channels);
        s
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("model.height", self.height), ("model.width", self.width), ("model.depth", self.depth)] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.compression_hidden.contains(&0) {
            return Err(Error::config("model.compression_hidden", "widths must be positive"));
        }
        if self.classification_channels.is_empty() || self.classification_channels.contains(&0) {
            return Err(Error::config(
                "model.classification_channels",
                "needs at least one positive width",
            ));
        }
        let pools = self.classification_channels.len() as u32;
        if self.height >> pools == 0 || self.width >> pools == 0 {
            return Err(Error::config(
                "model.height",
                format!(
                    "{}x{} maps vanish after {pools} 2x2 poolings",
                    self.height, self.width
                ),
            ));
        }
        Ok(())
    }
}

/// Forward-pass outputs of the full network.
#[derive(Clone, Copy, Debug)]
pub struct DpnnOutput {
    pub projection: Var,
    pub probs: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dpnn {
    pub compression: CompressionNet,
    pub classification: ClassificationNet,
}

impl Dpnn {
    /// Builds both parts with zero weights; call [`Dpnn::xavier_init`] next.
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Dpnn {
            compression: CompressionNet::new(cfg.depth, &cfg.compression_schedule())?,
            classification: ClassificationNet::new(cfg.height, cfg.width, &cfg.classification_schedule())?,
        })
    }

    pub fn xavier_init(&mut self, seed: u64) {
        self.compression.xavier_init(seed);
        self.classification.xavier_init(seed);
    }

    /// Runs compression then classification. Statistics for the compression
    /// and classification batch norms land in `stats.0` and `stats.1`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        compression: &Bound,
        classification: &Bound,
        x: Var,
        mode: Mode,
        stats: &mut (PassStats, PassStats),
    ) -> Result<DpnnOutput> {
        let projection = self.compression.forward(tape, compression, x, mode, &mut stats.0)?;
        let probs = self.classification.forward(tape, classification, projection, mode, &mut stats.1)?;
        Ok(DpnnOutput { projection, probs })
    }

    /// Inference-mode `(projections [N,1,H,W], probabilities [N,3])`.
    pub fn predict(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let cb = self.compression.params().bind_frozen(&mut tape);
        let kb = self.classification.params().bind_frozen(&mut tape);
        let x = tape.leaf(batch.clone());
        let out = self.forward(&mut tape, &cb, &kb, x, Mode::Infer, &mut Default::default())?;
        Ok((tape.value(out.projection).clone(), tape.value(out.probs).clone()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        self.compression.write_checkpoint(&mut ck);
        self.classification.write_checkpoint(&mut ck);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let compression = CompressionNet::from_checkpoint(ck)?;
        let classification = ClassificationNet::from_checkpoint(ck)?;
        Ok(Dpnn {
            compression,
            classification,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::cross_entropy;
    use crate::tensor::finite_diff_check_coords;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            height: 32,
            width: 32,
            depth: 6,
            compression_hidden: vec![4, 2],
            classification_channels: vec![4, 4, 4, 4, 4],
        }
    }

    fn random_batch(dims: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        Tensor::from_vec((0..n).map(|_| rng.random_range(0.0..2.0)).collect(), dims).unwrap()
    }

    #[test]
    fn compression_schedule_contract() {
        assert!(CompressionNet::new(48, &[48, 32, 16, 8, 4, 2]).is_err());
        assert!(CompressionNet::new(40, &[48, 32, 16, 8, 4, 1]).is_err());
        let net = CompressionNet::new(48, &[48, 32, 16, 8, 4, 1]).unwrap();
        assert_eq!(net.blocks().len(), 5);
        assert_eq!(net.blocks()[4].spec.activation, Activation::Sigmoid);
        assert!(net.blocks()[..4].iter().all(|b| b.spec.activation == Activation::Relu));
    }

    #[test]
    fn compression_parameter_count_matches_tally() {
        let net = CompressionNet::new(48, &[48, 32, 16, 8, 4, 1]).unwrap();
        // 9·Cin·Cout + Cout + 2·Cout per block
        let tally = [(48, 32), (32, 16), (16, 8), (8, 4), (4, 1)]
            .iter()
            .map(|&(i, o)| 9 * i * o + 3 * o)
            .sum::<usize>();
        assert_eq!(tally, 13824 + 96 + 4608 + 48 + 1152 + 24 + 288 + 12 + 36 + 3);
        assert_eq!(net.params().scalar_count(), tally);
    }

    #[test]
    fn classification_spatial_traces() {
        let net = ClassificationNet::new(64, 64, &[1, 16, 32, 64, 64, 64]).unwrap();
        let hs: Vec<usize> = net.spatial_trace().iter().map(|t| t.0).collect();
        assert_eq!(hs, vec![64, 32, 16, 8, 4, 2]);
        let net = ClassificationNet::new(91, 109, &[1, 16, 32, 64, 64, 64]).unwrap();
        let hs: Vec<usize> = net.spatial_trace().iter().map(|t| t.0).collect();
        assert_eq!(hs, vec![91, 45, 22, 11, 5, 2]);
        assert!(ClassificationNet::new(16, 16, &[1, 16, 32, 64, 64, 64]).is_err());
    }

    #[test]
    fn xavier_init_is_seeded_and_bounded() {
        let mut a = Dpnn::new(&small_cfg()).unwrap();
        let mut b = a.clone();
        a.xavier_init(5);
        b.xavier_init(5);
        assert_eq!(a, b);
        b.xavier_init(6);
        assert_ne!(a, b);
        for block in a.compression.blocks() {
            let limit = (6.0 / (block.conv.fan_in() + block.conv.fan_out()) as f64).sqrt();
            let params = a.compression.params();
            assert!(params.get(block.conv.weight).value.data().iter().all(|w| w.abs() <= limit));
            assert!(params.get(block.conv.bias).value.data().iter().all(|&v| v == 0.0));
            assert!(params.get(block.bn.gamma).value.data().iter().all(|&v| v == 1.0));
            assert!(params.get(block.bn.beta).value.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn xavier_variance_sampling_check() {
        let mut total = Vec::new();
        for seed in 0..3 {
            let mut net = ClassificationNet::new(64, 64, &[1, 16, 32]).unwrap();
            net.xavier_init(seed);
            let w = net.blocks()[1].conv.weight;
            total.extend_from_slice(net.params().get(w).value.data());
        }
        assert!(total.len() >= 10_000);
        let mean = total.iter().sum::<f64>() / total.len() as f64;
        let var = total.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / total.len() as f64;
        let expected = 2.0 / (16.0 * 9.0 + 32.0 * 9.0);
        assert!((var / expected - 1.0).abs() < 0.2, "var {var} vs {expected}");
    }

    #[test]
    fn forward_contracts() {
        let cfg = small_cfg();
        let mut net = Dpnn::new(&cfg).unwrap();
        net.xavier_init(1);
        let batch = random_batch([3, 6, 32, 32], 2);
        let (proj, probs) = net.predict(&batch).unwrap();
        assert_eq!(proj.dims(), &[3, 1, 32, 32]);
        assert!(proj.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(probs.dims(), &[3, 3]);
        for row in probs.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        let wrong = random_batch([1, 5, 32, 32], 2);
        assert!(matches!(net.predict(&wrong).unwrap_err(), Error::Shape(_)));
    }

    #[test]
    fn inference_has_no_batch_coupling() {
        let cfg = small_cfg();
        let mut net = Dpnn::new(&cfg).unwrap();
        net.xavier_init(3);
        let one = random_batch([1, 6, 32, 32], 9);
        let other = random_batch([1, 6, 32, 32], 10);
        let mut both = one.data().to_vec();
        both.extend_from_slice(other.data());
        both.extend_from_slice(one.data());
        let batch = Tensor::from_vec(both, [3, 6, 32, 32]).unwrap();
        let (_, probs) = net.predict(&batch).unwrap();
        let p = probs.data();
        assert_eq!(p[0..3], p[6..9]);
        let (_, single) = net.predict(&other).unwrap();
        assert_eq!(&p[3..6], single.data());
    }

    #[test]
    fn checkpoint_round_trip_restores_the_network() {
        let mut net = Dpnn::new(&small_cfg()).unwrap();
        net.xavier_init(4);
        net.compression.blocks[0].bn.running_mean[1] = 0.25;
        let ck = net.to_checkpoint();
        let bytes = ck.to_bytes();
        let back = Dpnn::from_checkpoint(&Checkpoint::from_bytes(&bytes, "mem".as_ref()).unwrap()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    }

    #[test]
    fn end_to_end_gradient_check() {
        let cfg = ModelConfig {
            height: 16,
            width: 16,
            depth: 8,
            compression_hidden: vec![],
            classification_channels: vec![2],
        };
        let mut net = Dpnn::new(&cfg).unwrap();
        net.xavier_init(11);
        let x = random_batch([2, 8, 16, 16], 12);
        let labels = [0usize, 2];
        let w = net.compression.blocks()[0].conv.weight;
        let theta = net.compression.params().get(w).value.clone();
        let coords: Vec<usize> = (0..theta.numel()).step_by(7).collect();
        let report = finite_diff_check_coords(
            |tape, wv| {
                let mut cb = net.compression.params().bind(tape);
                let kb = net.classification.params().bind(tape);
                cb = cb.with_var(w, wv);
                let xv = tape.leaf(x.clone());
                let out = net.forward(tape, &cb, &kb, xv, Mode::Train, &mut Default::default())?;
                cross_entropy(tape, out.probs, &labels)
            },
            &theta,
            1e-3,
            1e-3,
            &coords,
        )
        .unwrap();
        assert!(report.passed, "{report}");
        assert!(report.checked > 0);
    }
}
