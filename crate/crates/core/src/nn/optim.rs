use super::params::{Grads, Mat, ParamId, ParamStore};
use crate::kv::{FieldReader, KvFile};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    RmsProp,
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::InvalidArgument(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// RMSProp squared-gradient decay.
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Linear learning-rate warmup length in steps.
    pub warmup_steps: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::RmsProp,
            lr: 5e-4,
            rho: 0.99,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            warmup_steps: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn write_kv(&self, kv: &mut KvFile, prefix: &str) {
        kv.set(format!("{prefix}optimizer"), self.kind.to_string());
        kv.set(format!("{prefix}lr"), format!("{:?}", self.lr));
        kv.set(format!("{prefix}rho"), format!("{:?}", self.rho));
        kv.set(format!("{prefix}beta1"), format!("{:?}", self.beta1));
        kv.set(format!("{prefix}beta2"), format!("{:?}", self.beta2));
        kv.set(format!("{prefix}eps"), format!("{:?}", self.eps));
        kv.set(
            format!("{prefix}clip_norm"),
            format!("{:?}", self.clip_norm),
        );
        kv.set(
            format!("{prefix}warmup_steps"),
            self.warmup_steps.to_string(),
        );
    }

    pub(crate) fn read_kv(r: &mut FieldReader<'_>, prefix: &str) -> Self {
        let d = Self::default();
        let cfg = OptimizerConfig {
            kind: r.parse_or(&format!("{prefix}optimizer"), d.kind),
            lr: r.parse_or(&format!("{prefix}lr"), d.lr),
            rho: r.parse_or(&format!("{prefix}rho"), d.rho),
            beta1: r.parse_or(&format!("{prefix}beta1"), d.beta1),
            beta2: r.parse_or(&format!("{prefix}beta2"), d.beta2),
            eps: r.parse_or(&format!("{prefix}eps"), d.eps),
            clip_norm: r.parse_or(&format!("{prefix}clip_norm"), d.clip_norm),
            warmup_steps: r.parse_or(&format!("{prefix}warmup_steps"), d.warmup_steps),
        };
        if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
            r.issue(&format!("{prefix}lr"), "must be positive");
        }
        for (k, v) in [("rho", cfg.rho), ("beta1", cfg.beta1), ("beta2", cfg.beta2)] {
            if !(0.0..1.0).contains(&v) {
                r.issue(&format!("{prefix}{k}"), format!("{v} not in [0, 1)"));
            }
        }
        if !(cfg.eps > 0.0) {
            r.issue(&format!("{prefix}eps"), "must be positive");
        }
        if !(cfg.clip_norm >= 0.0) {
            r.issue(&format!("{prefix}clip_norm"), "must be non-negative");
        }
        cfg
    }
}

/// Adaptive optimizer; frozen parameters are skipped.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    steps: u64,
    first: Vec<Option<Mat>>,
    second: Vec<Option<Mat>>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, store: &ParamStore) -> Self {
        Optimizer {
            cfg,
            steps: 0,
            first: vec![None; store.len()],
            second: vec![None; store.len()],
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn current_lr(&self) -> f64 {
        if self.cfg.warmup_steps == 0 {
            self.cfg.lr
        } else {
            self.cfg.lr * ((self.steps + 1) as f64 / self.cfg.warmup_steps as f64).min(1.0)
        }
    }

    /// Applies one update and returns the pre-clipping gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> f64 {
        let norm = grads.global_norm();
        let clip = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        let lr = self.current_lr();
        self.steps += 1;
        let t = self.steps as i32;
        let c = &self.cfg;
        for id in store.ids().collect::<Vec<_>>() {
            if store.param(id).frozen {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let value = store.value_mut(id);
            match c.kind {
                OptimizerKind::RmsProp => {
                    let v = self.second[i].get_or_insert_with(|| Mat::zeros(g.raw_dim()));
                    ndarray::Zip::from(value)
                        .and(v)
                        .and(g)
                        .for_each(|p, v, &g| {
                            let g = g * clip;
                            *v = c.rho * *v + (1.0 - c.rho) * g * g;
                            *p -= lr * g / (v.sqrt() + c.eps);
                        });
                }
                OptimizerKind::Adam => {
                    let m = self.first[i].get_or_insert_with(|| Mat::zeros(g.raw_dim()));
                    let v = self.second[i].get_or_insert_with(|| Mat::zeros(g.raw_dim()));
                    let bc1 = 1.0 - c.beta1.powi(t);
                    let bc2 = 1.0 - c.beta2.powi(t);
                    ndarray::Zip::from(value)
                        .and(m)
                        .and(v)
                        .and(g)
                        .for_each(|p, m, v, &g| {
                            let g = g * clip;
                            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                        });
                }
            }
        }
        norm
    }

    /// Named state tensors, for checkpointing.
    pub fn state_tensors(&self, store: &ParamStore) -> Vec<(String, Mat)> {
        let mut out = Vec::new();
        for (id, p) in store.iter() {
            if let Some(m) = &self.first[id.index()] {
                out.push((format!("opt.m.{}", p.name), m.clone()));
            }
            if let Some(v) = &self.second[id.index()] {
                out.push((format!("opt.v.{}", p.name), v.clone()));
            }
        }
        out
    }

    pub fn restore(
        cfg: OptimizerConfig,
        store: &ParamStore,
        steps: u64,
        mut lookup: impl FnMut(&str) -> Option<Mat>,
    ) -> Result<Self> {
        let mut opt = Optimizer::new(cfg, store);
        opt.steps = steps;
        for (id, p) in store.iter() {
            for (slot, prefix) in [(&mut opt.first, "opt.m."), (&mut opt.second, "opt.v.")] {
                if let Some(m) = lookup(&format!("{prefix}{}", p.name)) {
                    if m.dim() != p.value.dim() {
                        return Err(Error::format(
                            "checkpoint",
                            format!("optimizer state shape for {}", p.name),
                        ));
                    }
                    slot[id.index()] = Some(m);
                }
            }
        }
        Ok(opt)
    }

    pub fn slot_count(&self) -> usize {
        self.first
            .iter()
            .chain(&self.second)
            .filter(|s| s.is_some())
            .count()
    }

    pub fn has_state(&self, id: ParamId) -> bool {
        self.first[id.index()].is_some() || self.second[id.index()].is_some()
    }
}
