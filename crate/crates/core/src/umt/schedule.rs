use crate::kv::{FieldReader, KvFile};
use crate::nn::OptimizerConfig;
use crate::{Error, Lang, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Dae,
    Bt,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Dae => "dae",
            Task::Bt => "bt",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dae" => Ok(Task::Dae),
            "bt" => Ok(Task::Bt),
            _ => Err(Error::InvalidArgument(format!("unknown task `{s}`"))),
        }
    }
}

/// `dae:bt` step ratio, written `1:1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskMix {
    pub dae: u32,
    pub bt: u32,
}

impl TaskMix {
    pub fn dae_only() -> Self {
        TaskMix { dae: 1, bt: 0 }
    }

    pub fn period(self) -> u32 {
        self.dae + self.bt
    }
}

impl std::fmt::Display for TaskMix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.dae, self.bt)
    }
}

impl std::str::FromStr for TaskMix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("task mix `{s}` is not `dae:bt`"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let mix = TaskMix {
            dae: a.trim().parse().map_err(|_| bad())?,
            bt: b.trim().parse().map_err(|_| bad())?,
        };
        if mix.period() == 0 {
            return Err(bad());
        }
        Ok(mix)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSchedule {
    pub steps: usize,
    pub batch_size: usize,
    pub mix: TaskMix,
    /// Leading fraction of steps that run denoising only.
    pub warmup_fraction: f64,
    pub optimizer: OptimizerConfig,
    /// Checkpoint every this many steps; 0 writes only the first and last.
    pub checkpoint_every: usize,
    pub first_lang: Lang,
    pub p_drop: f64,
    pub shuffle_k: usize,
    /// Beam used to generate back-translations; 1 is greedy.
    pub bt_beam: usize,
    pub seed: u64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            steps: 10_000,
            batch_size: 32,
            mix: TaskMix { dae: 1, bt: 1 },
            warmup_fraction: 0.1,
            optimizer: OptimizerConfig::default(),
            checkpoint_every: 1000,
            first_lang: Lang::L1,
            p_drop: super::noise::DEFAULT_P_DROP,
            shuffle_k: super::noise::DEFAULT_SHUFFLE_K,
            bt_beam: 1,
            seed: 1,
        }
    }
}

impl TrainingSchedule {
    pub fn warmup_steps(&self) -> usize {
        (self.steps as f64 * self.warmup_fraction).floor() as usize
    }

    /// Task and language of the step with zero-based index `step`. Warmup
    /// alternates languages every step; afterwards the mix pattern repeats
    /// and the language alternates once per pattern.
    pub fn task_at(&self, step: usize) -> (Task, Lang) {
        let lang = |k: usize| {
            if k.is_multiple_of(2) {
                self.first_lang
            } else {
                self.first_lang.other()
            }
        };
        let warm = self.warmup_steps();
        if step < warm || self.mix.bt == 0 {
            return (Task::Dae, lang(step));
        }
        let s = step - warm;
        let period = self.mix.period() as usize;
        let task = if s % period < self.mix.dae as usize {
            Task::Dae
        } else {
            Task::Bt
        };
        (task, lang(s / period))
    }

    pub fn write_kv(&self, kv: &mut KvFile, prefix: &str) {
        kv.set(format!("{prefix}steps"), self.steps.to_string());
        kv.set(format!("{prefix}batch_size"), self.batch_size.to_string());
        kv.set(format!("{prefix}task_mix"), self.mix.to_string());
        kv.set(
            format!("{prefix}warmup_fraction"),
            format!("{:?}", self.warmup_fraction),
        );
        kv.set(
            format!("{prefix}checkpoint_every"),
            self.checkpoint_every.to_string(),
        );
        kv.set(format!("{prefix}first_lang"), self.first_lang.to_string());
        kv.set(format!("{prefix}p_drop"), format!("{:?}", self.p_drop));
        kv.set(format!("{prefix}shuffle_k"), self.shuffle_k.to_string());
        kv.set(format!("{prefix}bt_beam"), self.bt_beam.to_string());
        kv.set(format!("{prefix}seed"), self.seed.to_string());
        self.optimizer.write_kv(kv, prefix);
    }

    pub(crate) fn read_kv(r: &mut FieldReader<'_>, prefix: &str) -> Self {
        let d = Self::default();
        let key = |k: &str| format!("{prefix}{k}");
        let s = TrainingSchedule {
            steps: r.parse_or(&key("steps"), d.steps),
            batch_size: r.parse_or(&key("batch_size"), d.batch_size),
            mix: r.parse_or(&key("task_mix"), d.mix),
            warmup_fraction: r.parse_or(&key("warmup_fraction"), d.warmup_fraction),
            checkpoint_every: r.parse_or(&key("checkpoint_every"), d.checkpoint_every),
            first_lang: r.parse_or(&key("first_lang"), d.first_lang),
            p_drop: r.parse_or(&key("p_drop"), d.p_drop),
            shuffle_k: r.parse_or(&key("shuffle_k"), d.shuffle_k),
            bt_beam: r.parse_or(&key("bt_beam"), d.bt_beam),
            seed: r.parse_or(&key("seed"), d.seed),
            optimizer: OptimizerConfig::read_kv(r, prefix),
        };
        if s.batch_size == 0 {
            r.issue(&key("batch_size"), "must be at least 1");
        }
        if !(0.0..=1.0).contains(&s.warmup_fraction) {
            r.issue(
                &key("warmup_fraction"),
                format!("{} not in [0, 1]", s.warmup_fraction),
            );
        }
        if !(0.0..1.0).contains(&s.p_drop) {
            r.issue(&key("p_drop"), format!("{} not in [0, 1)", s.p_drop));
        }
        if s.bt_beam == 0 {
            r.issue(&key("bt_beam"), "must be at least 1");
        }
        s
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        self.write_kv(&mut kv, "");
        kv
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut r = FieldReader::new(kv);
        let s = Self::read_kv(&mut r, "");
        r.finish()?;
        Ok(s)
    }
}
