//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `=` or `:` between key and value, `#` starts a
//! comment. Unknown and repeated keys are errors. Relative paths are
//! resolved against the config file's directory. The run hash is the
//! SHA-256 of the canonical dump: every key, sorted, as `key = value`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::{Dialect, IntervalModel};
use crate::error::{Error, Result};
use crate::forecaster::{AblationFlags, ModelConfig, Variant};
use crate::ksl_trainer::{GateScope, TrainConfig};
use crate::prompt_lm::ProviderSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Canonical trajectory store; `None` means generate synthetic data.
    pub data: Option<PathBuf>,
    pub dataset_name: String,
    pub dialect: Dialect,
    pub min_interval: i64,
    pub max_gap: i64,
    pub stride: usize,
    pub model: ModelConfig,
    pub lm_provider: ProviderSpec,
    pub train: TrainConfig,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub eval_batch: usize,
    /// Synthetic data used when `data` is unset.
    pub synth_count: usize,
    pub synth_len: usize,
    pub synth_noise: f64,
    pub synth_interval: IntervalModel,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            dataset_name: "synthetic".into(),
            dialect: Dialect::UsCoast,
            min_interval: 180,
            max_gap: 1800,
            stride: 1,
            model: ModelConfig::default(),
            lm_provider: ProviderSpec::Stub,
            train: TrainConfig::default(),
            train_fraction: 0.7,
            val_fraction: 0.1,
            eval_batch: 64,
            synth_count: 64,
            synth_len: 96,
            synth_noise: 1e-4,
            synth_interval: IntervalModel::Jittered { delta: 60, sigma: 15.0 },
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn interval_string(m: &IntervalModel) -> String {
    match *m {
        IntervalModel::Regular { delta } => format!("regular:{delta}"),
        IntervalModel::Jittered { delta, sigma } => format!("jittered:{delta}:{sigma}"),
        IntervalModel::Bursty { delta } => format!("bursty:{delta}"),
    }
}

fn dialect_string(d: Dialect) -> &'static str {
    match d {
        Dialect::UsCoast => "us_coast",
        Dialect::Danish => "danish",
    }
}

impl ExperimentConfig {
    /// Applies one setting. `variant` is accepted as shorthand for the five
    /// `use_*` flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "data" => self.data = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "dataset_name" => self.dataset_name = v.to_string(),
            "dialect" => self.dialect = v.parse()?,
            "min_interval" => self.min_interval = num(key, v)?,
            "max_gap" => self.max_gap = num(key, v)?,
            "stride" => self.stride = num(key, v)?,
            "h" => m.h = num(key, v)?,
            "p" => m.p = num(key, v)?,
            "patch_len" => m.patch_len = num(key, v)?,
            "patch_stride" => m.patch_stride = num(key, v)?,
            "d_model" => m.d_model = num(key, v)?,
            "enc_layers" => m.enc_layers = num(key, v)?,
            "enc_heads" => m.enc_heads = num(key, v)?,
            "hidden_dim" => m.hidden_dim = num(key, v)?,
            "prototypes" => m.prototypes = num(key, v)?,
            "dec_width" => m.dec_width = num(key, v)?,
            "dec_layers" => m.dec_layers = num(key, v)?,
            "dec_heads" => m.dec_heads = num(key, v)?,
            "mask_ratio" => m.mask_ratio = num(key, v)?,
            "use_llm" => m.flags.use_llm = flag(key, v)?,
            "use_prompt" => m.flags.use_prompt = flag(key, v)?,
            "use_fusion" => m.flags.use_fusion = flag(key, v)?,
            "use_decoder" => m.flags.use_decoder = flag(key, v)?,
            "use_ksl" => m.flags.use_ksl = flag(key, v)?,
            "variant" => m.flags = v.parse::<Variant>()?.flags(),
            "lm_provider" => self.lm_provider = ProviderSpec::parse(v)?,
            "seed" => t.seed = num(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "eval_batch" => self.eval_batch = num(key, v)?,
            "lr" => t.lr = num(key, v)?,
            "lambda0" => t.lambda0 = num(key, v)?,
            "growth" => t.growth = num(key, v)?,
            "alpha_vel" => t.alpha_vel = num(key, v)?,
            "beta_acc" => t.beta_acc = num(key, v)?,
            "gate_scope" => t.gate_scope = v.parse::<GateScope>()?,
            "train_fraction" => self.train_fraction = num(key, v)?,
            "val_fraction" => self.val_fraction = num(key, v)?,
            "synth_count" => self.synth_count = num(key, v)?,
            "synth_len" => self.synth_len = num(key, v)?,
            "synth_noise" => self.synth_noise = num(key, v)?,
            "synth_interval" => self.synth_interval = IntervalModel::parse(v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let split = line
                .find(['=', ':'])
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (key, value) = (line[..split].trim(), &line[split + 1..]);
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` set twice", i + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.data.as_mut().filter(|d| d.is_relative()) {
            *d = base.join(&*d);
        }
        if let ProviderSpec::Pretrained(d) = &mut cfg.lm_provider {
            if d.is_relative() {
                *d = base.join(&*d);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.model.flags.validate()?;
        self.train.validate()?;
        let (tr, va) = (self.train_fraction, self.val_fraction);
        if !(tr > 0.0 && va >= 0.0 && tr + va <= 1.0) {
            return Err(Error::Config(format!(
                "split fractions must satisfy train > 0, val ≥ 0, train + val ≤ 1 (got {tr}, {va})"
            )));
        }
        if self.stride == 0 || self.eval_batch == 0 {
            return Err(Error::Config("stride and eval_batch must be positive".into()));
        }
        if self.min_interval >= self.max_gap {
            return Err(Error::Config("min_interval must be smaller than max_gap".into()));
        }
        Ok(())
    }

    pub fn flags(&self) -> AblationFlags {
        self.model.flags
    }

    /// Every key with its current value.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let (m, t) = (&self.model, &self.train);
        let mut out = vec![
            ("data", self.data.as_ref().map(|d| d.display().to_string()).unwrap_or_default()),
            ("dataset_name", self.dataset_name.clone()),
            ("dialect", dialect_string(self.dialect).into()),
            ("min_interval", self.min_interval.to_string()),
            ("max_gap", self.max_gap.to_string()),
            ("stride", self.stride.to_string()),
            ("h", m.h.to_string()),
            ("p", m.p.to_string()),
            ("patch_len", m.patch_len.to_string()),
            ("patch_stride", m.patch_stride.to_string()),
            ("d_model", m.d_model.to_string()),
            ("enc_layers", m.enc_layers.to_string()),
            ("enc_heads", m.enc_heads.to_string()),
            ("hidden_dim", m.hidden_dim.to_string()),
            ("prototypes", m.prototypes.to_string()),
            ("dec_width", m.dec_width.to_string()),
            ("dec_layers", m.dec_layers.to_string()),
            ("dec_heads", m.dec_heads.to_string()),
            ("mask_ratio", m.mask_ratio.to_string()),
            ("use_llm", m.flags.use_llm.to_string()),
            ("use_prompt", m.flags.use_prompt.to_string()),
            ("use_fusion", m.flags.use_fusion.to_string()),
            ("use_decoder", m.flags.use_decoder.to_string()),
            ("use_ksl", m.flags.use_ksl.to_string()),
            ("lm_provider", self.lm_provider.to_string()),
            ("seed", t.seed.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("eval_batch", self.eval_batch.to_string()),
            ("lr", t.lr.to_string()),
            ("lambda0", t.lambda0.to_string()),
            ("growth", t.growth.to_string()),
            ("alpha_vel", t.alpha_vel.to_string()),
            ("beta_acc", t.beta_acc.to_string()),
            ("gate_scope", t.gate_scope.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("synth_count", self.synth_count.to_string()),
            ("synth_len", self.synth_len.to_string()),
            ("synth_noise", self.synth_noise.to_string()),
            ("synth_interval", interval_string(&self.synth_interval)),
        ];
        out.sort_by_key(|(k, _)| *k);
        out
    }

    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
