use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_llm: bool,
    pub use_prompt: bool,
    pub use_fusion: bool,
    pub use_decoder: bool,
    pub use_ksl: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_llm: true,
            use_prompt: true,
            use_fusion: true,
            use_decoder: true,
            use_ksl: true,
        }
    }
}

impl AblationFlags {
    pub fn validate(&self) -> Result<()> {
        if self.use_fusion && !self.use_llm {
            return Err(Error::Config(
                "use_fusion requires use_llm: fusion attends over the language model's embeddings".into(),
            ));
        }
        Ok(())
    }
}

/// The full model and the five named ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoLlm,
    NoPrompt,
    NoFusion,
    NoDecoder,
    NoKsl,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoLlm,
        Variant::NoPrompt,
        Variant::NoFusion,
        Variant::NoDecoder,
        Variant::NoKsl,
    ];
    pub const ABLATIONS: [Variant; 5] = [
        Variant::NoLlm,
        Variant::NoPrompt,
        Variant::NoFusion,
        Variant::NoDecoder,
        Variant::NoKsl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "MAKER",
            Variant::NoLlm => "MAKER-LLM",
            Variant::NoPrompt => "MAKER-Prompt",
            Variant::NoFusion => "MAKER-MKT",
            Variant::NoDecoder => "MAKER-de",
            Variant::NoKsl => "MAKER-KSL",
        }
    }

    /// Removing the language model also removes fusion, which has nothing
    /// to attend over without it.
    pub fn flags(self) -> AblationFlags {
        let full = AblationFlags::default();
        match self {
            Variant::Full => full,
            Variant::NoLlm => AblationFlags {
                use_llm: false,
                use_fusion: false,
                ..full
            },
            Variant::NoPrompt => AblationFlags {
                use_prompt: false,
                ..full
            },
            Variant::NoFusion => AblationFlags {
                use_fusion: false,
                ..full
            },
            Variant::NoDecoder => AblationFlags {
                use_decoder: false,
                ..full
            },
            Variant::NoKsl => AblationFlags {
                use_ksl: false,
                ..full
            },
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let key = key.strip_prefix("maker-").unwrap_or(&key);
        Ok(match key {
            "maker" | "full" => Variant::Full,
            "llm" => Variant::NoLlm,
            "prompt" => Variant::NoPrompt,
            "mkt" => Variant::NoFusion,
            "de" => Variant::NoDecoder,
            "ksl" => Variant::NoKsl,
            _ => {
                return Err(Error::Config(format!(
                    "unknown variant `{s}` (expected one of MAKER, MAKER-LLM, MAKER-Prompt, MAKER-MKT, MAKER-de, MAKER-KSL)"
                )))
            }
        })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub h: usize,
    pub p: usize,
    /// Variates: lon, lat and the auxiliary features.
    pub channels: usize,
    pub patch_len: usize,
    pub patch_stride: usize,
    pub d_model: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    /// Width `D` of the fusion space.
    pub hidden_dim: usize,
    /// Vocabulary prototypes `V′`.
    pub prototypes: usize,
    pub dec_width: usize,
    pub dec_layers: usize,
    pub dec_heads: usize,
    pub mask_ratio: f64,
    pub flags: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            h: 24,
            p: 24,
            channels: crate::data::CHANNELS,
            patch_len: 16,
            patch_stride: 8,
            d_model: 16,
            enc_layers: 2,
            enc_heads: 4,
            hidden_dim: 500,
            prototypes: 100,
            dec_width: 64,
            dec_layers: 2,
            dec_heads: 4,
            mask_ratio: 0.5,
            flags: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.h < 2 || self.p < 3 {
            return bad(format!("need h ≥ 2 and p ≥ 3, got h={} p={}", self.h, self.p));
        }
        if self.channels < 2 {
            return bad("at least the lon and lat channels are required".into());
        }
        if self.patch_len == 0 || self.patch_stride == 0 || self.patch_len > self.h {
            return bad(format!(
                "patch length {} and stride {} must be positive with patch length ≤ h={}",
                self.patch_len, self.patch_stride, self.h
            ));
        }
        for (what, width, heads) in [
            ("encoder", self.d_model, self.enc_heads),
            ("decoder", self.dec_width, self.dec_heads),
        ] {
            if width == 0 || heads == 0 || width % heads != 0 {
                return bad(format!("{what} width {width} must be a positive multiple of {heads} heads"));
            }
        }
        if self.hidden_dim == 0 || self.prototypes == 0 {
            return bad("hidden_dim and prototypes must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad(format!("mask ratio {} outside [0, 1]", self.mask_ratio));
        }
        self.flags.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_parse_and_validate() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            v.flags().validate().unwrap();
        }
        assert_eq!("mkt".parse::<Variant>().unwrap(), Variant::NoFusion);
        assert!("MAKER-X".parse::<Variant>().unwrap_err().is_config());
        let bad = AblationFlags {
            use_llm: false,
            ..AblationFlags::default()
        };
        assert!(bad.validate().unwrap_err().is_config());
    }

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
        let c = ModelConfig {
            patch_len: 25,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
