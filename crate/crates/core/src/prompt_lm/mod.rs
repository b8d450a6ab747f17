//! Sample-specific textual prompts and the frozen language-model providers
//! that tokenize and embed them.

mod gpt2;
mod stub;

use std::path::PathBuf;
use std::sync::Arc;

use crate::autograd::Mat;
use crate::data::TrajectorySample;
use crate::error::{Error, Result};
use crate::kinematics::{mean, pop_std};

pub use gpt2::Gpt2Provider;
pub use stub::StubProvider;

pub const TEMPLATE_VERSION: u32 = 1;
const TEMPLATE: &str = include_str!("../../resources/prompt_template_v1.txt");

/// Read-only language model used for tokenization and embedding.
pub trait FrozenLmProvider: Send + Sync {
    fn describe(&self) -> String;
    fn vocab_size(&self) -> usize;
    fn embed_width(&self) -> usize;
    fn context_limit(&self) -> usize;
    /// `vocab_size × embed_width` word-embedding table.
    fn word_embeddings(&self) -> &Mat;
    /// Tokenization without any length limit.
    fn encode_text(&self, text: &str) -> Vec<u32>;
    fn decode(&self, _ids: &[u32]) -> Option<String> {
        None
    }
    /// One row per token; ids are already validated.
    fn hidden_states(&self, ids: &[u32]) -> Mat;
    fn record_truncation(&self);
    fn truncation_warnings(&self) -> usize;
    /// Digest of every model parameter.
    fn checksum(&self) -> String;
}

/// Which provider to attach, as given by the `lm_provider` config key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Stub,
    Pretrained(PathBuf),
}

impl ProviderSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "stub" {
            Ok(Self::Stub)
        } else if let Some(dir) = s.strip_prefix("pretrained:") {
            Ok(Self::Pretrained(PathBuf::from(dir)))
        } else {
            Err(Error::Config(format!(
                "lm_provider must be `stub` or `pretrained:<model-dir>`, got `{s}`"
            )))
        }
    }

    pub fn load(&self) -> Result<Arc<dyn FrozenLmProvider>> {
        match self {
            Self::Stub => Ok(Arc::new(StubProvider::default())),
            Self::Pretrained(dir) => Ok(Arc::new(Gpt2Provider::load(dir)?)),
        }
    }
}

impl std::fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Stub => f.write_str("stub"),
            Self::Pretrained(p) => write!(f, "pretrained:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub text: String,
    pub token_ids: Vec<u32>,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Fill the versioned template with statistics of the sample's history.
pub fn build_prompt(sample: &TrajectorySample, dataset_name: &str) -> String {
    let lons: Vec<f64> = sample.history.iter().map(|r| r.lon).collect();
    let lats: Vec<f64> = sample.history.iter().map(|r| r.lat).collect();
    let sogs: Vec<f64> = sample.history.iter().map(|r| r.sog).collect();
    let cogs: Vec<f64> = sample.history.iter().map(|r| r.cog).collect();
    let intervals: Vec<f64> = sample
        .history
        .windows(2)
        .map(|w| (w[1].timestamp - w[0].timestamp) as f64)
        .collect();
    let (interval_mean, interval_std) = if intervals.is_empty() {
        (0.0, 0.0)
    } else {
        (mean(&intervals), pop_std(&intervals))
    };
    let (lon_min, lon_max) = min_max(&lons);
    let (lat_min, lat_max) = min_max(&lats);
    let positions = sample
        .history
        .iter()
        .map(|r| format!("{:.5} {:.5}", r.lon, r.lat))
        .collect::<Vec<_>>()
        .join(" | ");

    let deg = |x: f64| format!("{x:.5}");
    TEMPLATE
        .trim_end()
        .replace("{dataset}", dataset_name)
        .replace("{h}", &sample.h().to_string())
        .replace("{p}", &sample.p().to_string())
        .replace("{lon_min}", &deg(lon_min))
        .replace("{lon_max}", &deg(lon_max))
        .replace("{lon_median}", &deg(median(&lons)))
        .replace("{lat_min}", &deg(lat_min))
        .replace("{lat_max}", &deg(lat_max))
        .replace("{lat_median}", &deg(median(&lats)))
        .replace("{interval_mean}", &format!("{interval_mean:.1}"))
        .replace("{interval_std}", &format!("{interval_std:.1}"))
        .replace("{sog_mean}", &format!("{:.2}", mean(&sogs)))
        .replace("{cog_mean}", &format!("{:.2}", mean(&cogs)))
        .replace("{positions}", &positions)
}

/// Tokenize, truncating to the provider's context limit.
pub fn tokenize(text: &str, provider: &dyn FrozenLmProvider) -> Vec<u32> {
    let mut ids = provider.encode_text(text);
    if ids.len() > provider.context_limit() {
        ids.truncate(provider.context_limit());
        provider.record_truncation();
    }
    ids
}

pub fn prompt_for(
    sample: &TrajectorySample,
    dataset_name: &str,
    provider: &dyn FrozenLmProvider,
) -> PromptText {
    let text = build_prompt(sample, dataset_name);
    let token_ids = tokenize(&text, provider);
    PromptText { text, token_ids }
}

/// `H_L`: one row per token from the frozen provider.
pub fn embed_tokens(ids: &[u32], provider: &dyn FrozenLmProvider) -> Result<Mat> {
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= provider.vocab_size()) {
        return Err(Error::Input(format!(
            "token id {bad} outside vocabulary of {}",
            provider.vocab_size()
        )));
    }
    if ids.is_empty() {
        return Ok(Mat::zeros((0, provider.embed_width())));
    }
    Ok(provider.hidden_states(ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_trajectory, window_samples, IntervalModel, SynthKind};

    fn sample(delta: IntervalModel) -> TrajectorySample {
        let t = synth_trajectory(SynthKind::Mixed, 48, 1e-4, 4, delta).unwrap();
        window_samples(&t, 24, 24, 1).remove(0)
    }

    #[test]
    fn prompt_is_deterministic_and_reports_regular_spacing() {
        let s = sample(IntervalModel::Regular { delta: 60 });
        let a = build_prompt(&s, "US Coast");
        assert_eq!(a, build_prompt(&s, "US Coast"));
        assert!(a.contains("mean interval: 60.0 s, std: 0.0 s"), "{a}");
        assert!(a.contains("next 24 positions"));
        assert!(!a.contains('{'));
    }

    #[test]
    fn prompt_changes_are_local_to_slots() {
        let s = sample(IntervalModel::Jittered { delta: 60, sigma: 10.0 });
        let mut s2 = s.clone();
        s2.history[5].lat += 0.01;
        let (a, b) = (build_prompt(&s, "x"), build_prompt(&s2, "x"));
        assert_ne!(a, b);
        let ta: Vec<&str> = a.split_whitespace().collect();
        let tb: Vec<&str> = b.split_whitespace().collect();
        assert_eq!(ta.len(), tb.len());
        for (x, y) in ta.iter().zip(&tb) {
            if x != y {
                let num = |s: &str| s.trim_end_matches([',', ';', '.']).parse::<f64>().is_ok();
                assert!(num(x) && num(y), "non-slot token changed: {x} -> {y}");
            }
        }
    }

    #[test]
    fn provider_spec_parsing() {
        assert_eq!(ProviderSpec::parse("stub").unwrap(), ProviderSpec::Stub);
        assert_eq!(
            ProviderSpec::parse("pretrained:/m/gpt2").unwrap(),
            ProviderSpec::Pretrained("/m/gpt2".into())
        );
        assert!(ProviderSpec::parse("gpt2").unwrap_err().is_config());
    }

    #[test]
    fn truncation_is_counted() {
        let p = StubProvider::new(64, 8, 1, 4);
        let ids = tokenize("a b c d e f", &p);
        assert_eq!(ids.len(), 4);
        assert_eq!(p.truncation_warnings(), 1);
        assert_eq!(tokenize("a b", &p).len(), 2);
        assert_eq!(p.truncation_warnings(), 1);
    }

    #[test]
    fn out_of_vocab_rejected() {
        let p = StubProvider::new(64, 8, 1, 16);
        assert!(matches!(embed_tokens(&[3, 64], &p), Err(Error::Input(_))));
        assert_eq!(embed_tokens(&[], &p).unwrap().dim(), (0, 8));
    }
}
