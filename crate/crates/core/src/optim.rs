//! Adam with coupled L2 weight decay and per-part learning-rate groups.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("{prefix}.{field}"), msg));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", format!("must lie in [0, 1), got {}", self.beta1));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", format!("must lie in [0, 1), got {}", self.beta2));
        }
        if !(self.eps > 0.0) {
            return bad("eps", format!("must be positive, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", format!("must be >= 0, got {}", self.weight_decay));
        }
        Ok(())
    }
}

/// Learning rates and shared moments for both training stages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub pretrain_lr: f64,
    pub compression_lr: f64,
    pub classification_lr: f64,
    pub weight_decay: f64,
    /// Apply `weight_decay` during pretraining as well.
    pub decay_in_pretrain: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            pretrain_lr: 1e-4,
            compression_lr: 1e-5,
            classification_lr: 1e-4,
            weight_decay: 1e-5,
            decay_in_pretrain: false,
        }
    }
}

impl OptimConfig {
    fn adam(&self, lr: f64, weight_decay: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam(self.pretrain_lr, self.weight_decay).validate("optim.pretrain")?;
        self.adam(self.compression_lr, self.weight_decay).validate("optim.compression")?;
        self.adam(self.classification_lr, self.weight_decay).validate("optim.classification")
    }
}

/// Network part a parameter store belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Part {
    Compression,
    Classification,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

/// Location of one parameter: store position in the slice handed to
/// [`make_groups`] and index within that store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamRef {
    pub store: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub name: &'static str,
    pub config: AdamConfig,
    pub members: Vec<ParamRef>,
}

/// Per-parameter moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `theta` in place.
///
/// With `decay` the gradient becomes `g + weight_decay · θ` before the
/// moment updates.
pub fn adam_update(theta: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig, decay: bool) {
    assert_eq!(theta.len(), grad.len());
    assert_eq!(theta.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let wd = if decay { cfg.weight_decay } else { 0.0 };
    for i in 0..theta.len() {
        let g = grad[i] + wd * theta[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Partitions parameters into learning-rate groups.
///
/// Pretraining yields one group over the compression part at the pretraining
/// rate. Fine-tuning yields a compression group and a classification group
/// at their own rates with weight decay. Every parameter must land in
/// exactly one group.
pub fn make_groups(stage: Stage, stores: &[(Part, &ParamStore)], cfg: &OptimConfig) -> Result<Vec<ParamGroup>> {
    let total: usize = stores.iter().map(|(_, s)| s.len()).sum();
    if total == 0 {
        return Err(Error::contract("no parameters to optimize"));
    }
    let members_of = |part: Part| -> Vec<ParamRef> {
        stores
            .iter()
            .enumerate()
            .filter(|(_, (p, _))| *p == part)
            .flat_map(|(si, (_, s))| (0..s.len()).map(move |index| ParamRef { store: si, index }))
            .collect()
    };
    let groups = match stage {
        Stage::Pretrain => {
            let decay = if cfg.decay_in_pretrain { cfg.weight_decay } else { 0.0 };
            vec![ParamGroup {
                name: "pretrain",
                config: cfg.adam(cfg.pretrain_lr, decay),
                members: members_of(Part::Compression),
            }]
        }
        Stage::Finetune => vec![
            ParamGroup {
                name: "compression",
                config: cfg.adam(cfg.compression_lr, cfg.weight_decay),
                members: members_of(Part::Compression),
            },
            ParamGroup {
                name: "classification",
                config: cfg.adam(cfg.classification_lr, cfg.weight_decay),
                members: members_of(Part::Classification),
            },
        ],
    };
    let assigned: usize = groups.iter().map(|g| g.members.len()).sum();
    if assigned != total {
        let stray = stores
            .iter()
            .find(|(p, s)| !s.is_empty() && (stage == Stage::Pretrain && *p == Part::Classification))
            .and_then(|(_, s)| s.iter().next())
            .map(|p| p.name.clone())
            .unwrap_or_default();
        return Err(Error::contract(format!(
            "{} of {total} parameters belong to no {stage:?} group (first: {stray})",
            total - assigned
        )));
    }
    for g in &groups {
        g.config.validate(g.name)?;
    }
    Ok(groups.into_iter().filter(|g| !g.members.is_empty()).collect())
}

/// Adam over a fixed set of parameter groups.
#[derive(Clone, Debug)]
pub struct Adam {
    groups: Vec<ParamGroup>,
    states: Vec<Vec<AdamState>>,
}

impl Adam {
    pub fn new(groups: Vec<ParamGroup>, stores: &[&ParamStore]) -> Self {
        let states = groups
            .iter()
            .map(|g| {
                g.members
                    .iter()
                    .map(|r| AdamState::new(stores[r.store].iter().nth(r.index).map_or(0, |p| p.value.numel())))
                    .collect()
            })
            .collect();
        Adam { groups, states }
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.states.iter().flatten().map(|s| s.t).max().unwrap_or(0)
    }

    /// Applies one update. `grads[s][i]` is the gradient of parameter `i` of
    /// store `s`, in the store order used by [`make_groups`].
    pub fn step(&mut self, stores: &mut [&mut ParamStore], grads: &[Vec<Vec<f64>>]) -> Result<()> {
        for (group, states) in self.groups.iter().zip(self.states.iter_mut()) {
            for (r, state) in group.members.iter().zip(states.iter_mut()) {
                let grad = grads
                    .get(r.store)
                    .and_then(|g| g.get(r.index))
                    .ok_or_else(|| Error::contract(format!("missing gradient for parameter {}/{}", r.store, r.index)))?;
                let store = stores
                    .get_mut(r.store)
                    .ok_or_else(|| Error::contract(format!("no parameter store {}", r.store)))?;
                let param = store
                    .iter_mut()
                    .nth(r.index)
                    .ok_or_else(|| Error::contract(format!("no parameter {} in store {}", r.index, r.store)))?;
                if grad.len() != param.value.numel() {
                    return Err(Error::contract(format!(
                        "gradient for {} has {} entries, parameter has {}",
                        param.name,
                        grad.len(),
                        param.value.numel()
                    )));
                }
                let decay = param.decay;
                adam_update(param.value.data_mut(), grad, state, &group.config, decay);
            }
        }
        Ok(())
    }
}
