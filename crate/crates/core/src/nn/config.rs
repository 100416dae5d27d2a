use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One branch of the multi-scale expansion stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Identity,
    Depthwise(usize),
}

impl Branch {
    /// Half-width of the branch's spatial support.
    pub fn radius(&self) -> usize {
        match self {
            Branch::Identity => 0,
            Branch::Depthwise(k) => k / 2,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Identity => f.write_str("id"),
            Branch::Depthwise(k) => write!(f, "{k}"),
        }
    }
}

impl Serialize for Branch {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Branch::Identity => s.serialize_str("id"),
            Branch::Depthwise(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Branch {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct BranchVisitor;
        impl Visitor<'_> for BranchVisitor {
            type Value = Branch;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"id\" or an odd kernel size")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Branch, E> {
                match v {
                    "id" | "identity" => Ok(Branch::Identity),
                    other => other
                        .parse::<usize>()
                        .map(Branch::Depthwise)
                        .map_err(|_| E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Branch, E> {
                Ok(Branch::Depthwise(v as usize))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Branch, E> {
                usize::try_from(v)
                    .map(Branch::Depthwise)
                    .map_err(|_| E::invalid_value(de::Unexpected::Signed(v), &self))
            }
        }
        d.deserialize_any(BranchVisitor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnKind {
    /// expand -> GELU -> compress
    Plain,
    /// two parallel expansions, GELU(a) * b, compress
    Gate,
    /// expand -> 3x3 depthwise -> GELU -> channel re-weighting -> compress
    ChannelAggregation,
}

/// Architecture hyperparameters. Defaults are the full-size ×2 model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub scale: usize,
    pub channels: usize,
    pub num_groups: usize,
    pub chbs_per_group: Vec<usize>,
    pub la_expansion: f64,
    pub la_group_size: usize,
    pub mrfe_kernels: Vec<Branch>,
    pub cofb_kernels: Vec<usize>,
    pub gcp_pool_factor: usize,
    pub lambda_init: f32,
    pub ffn_kind: FfnKind,
    pub ffn_expansion: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::echosr(2)
    }
}

impl ModelConfig {
    /// 4 groups of 5 blocks, 60 channels.
    pub fn echosr(scale: usize) -> Self {
        ModelConfig {
            scale,
            channels: 60,
            num_groups: 4,
            chbs_per_group: vec![5; 4],
            la_expansion: 1.5,
            la_group_size: 6,
            mrfe_kernels: vec![
                Branch::Identity,
                Branch::Depthwise(5),
                Branch::Depthwise(11),
                Branch::Depthwise(17),
            ],
            cofb_kernels: vec![7, 15],
            gcp_pool_factor: 8,
            lambda_init: 0.1,
            ffn_kind: FfnKind::ChannelAggregation,
            ffn_expansion: 1.5,
        }
    }

    /// 4 groups of [2, 3, 2, 3] blocks, 36 channels.
    pub fn echosr_lite(scale: usize) -> Self {
        ModelConfig {
            channels: 36,
            chbs_per_group: vec![2, 3, 2, 3],
            ..Self::echosr(scale)
        }
    }

    /// Single group with a single block; for tests and smoke runs.
    pub fn micro(scale: usize, channels: usize) -> Self {
        ModelConfig {
            channels,
            num_groups: 1,
            chbs_per_group: vec![1],
            ..Self::echosr(scale)
        }
    }

    pub fn preset(name: &str, scale: usize) -> Result<Self> {
        let cfg = match name {
            "echosr" => Self::echosr(scale),
            "echosr-lite" | "echosr_lite" | "lite" => Self::echosr_lite(scale),
            other => return Err(Error::Config(format!("unknown preset `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn la_hidden(&self) -> usize {
        (self.la_expansion * self.channels as f64).round() as usize
    }

    pub fn la_groups(&self) -> usize {
        self.la_hidden() / self.la_group_size.max(1)
    }

    pub fn ffn_hidden(&self) -> usize {
        (self.ffn_expansion * self.channels as f64).round() as usize
    }

    pub fn branch_channels(&self) -> usize {
        self.channels / self.mrfe_kernels.len().max(1)
    }

    pub fn total_chbs(&self) -> usize {
        self.chbs_per_group.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(2..=4).contains(&self.scale) {
            return fail(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        if self.chbs_per_group.len() != self.num_groups {
            return fail(format!(
                "chbs_per_group has {} entries but num_groups is {}",
                self.chbs_per_group.len(),
                self.num_groups
            ));
        }
        if self.mrfe_kernels.is_empty() || !self.channels.is_multiple_of(self.mrfe_kernels.len()) {
            return fail(format!(
                "{} channels cannot be split evenly into {} branches",
                self.channels,
                self.mrfe_kernels.len()
            ));
        }
        let hidden = self.la_hidden();
        if hidden == 0 || self.la_group_size == 0 || !hidden.is_multiple_of(self.la_group_size) {
            return fail(format!(
                "expanded width {hidden} is not divisible into groups of {}",
                self.la_group_size
            ));
        }
        for b in &self.mrfe_kernels {
            if let Branch::Depthwise(k) = b {
                if k % 2 == 0 {
                    return fail(format!("branch kernel {k} must be odd"));
                }
            }
        }
        if self.cofb_kernels.is_empty() || self.cofb_kernels.iter().any(|k| k % 2 == 0) {
            return fail(format!(
                "cascade kernels must be a non-empty list of odd sizes, got {:?}",
                self.cofb_kernels
            ));
        }
        if self.gcp_pool_factor == 0 {
            return fail("gcp_pool_factor must be positive".into());
        }
        if self.ffn_hidden() == 0 {
            return fail("ffn_expansion yields zero hidden channels".into());
        }
        if !self.lambda_init.is_finite() {
            return fail("lambda_init must be finite".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for s in 2..=4 {
            ModelConfig::echosr(s).validate().unwrap();
            ModelConfig::echosr_lite(s).validate().unwrap();
        }
        assert!(ModelConfig::echosr(5).validate().is_err());
    }

    #[test]
    fn la_widths() {
        let c = ModelConfig::echosr(2);
        assert_eq!((c.la_hidden(), c.la_groups()), (90, 15));
        let c = ModelConfig::echosr_lite(2);
        assert_eq!((c.la_hidden(), c.la_groups()), (54, 9));
    }

    #[test]
    fn indivisible_expansion_fails_loudly() {
        let c = ModelConfig {
            channels: 20,
            la_expansion: 1.4,
            ..ModelConfig::echosr(2)
        };
        // round(1.4 * 20) = 28 is not a multiple of 6
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn branch_json_round_trip() {
        let c = ModelConfig::echosr(3);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains(r#""mrfe_kernels":["id",5,11,17]"#));
        let back: ModelConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<ModelConfig, _> = serde_json::from_str(r#"{"chanels": 12}"#);
        assert!(r.is_err());
    }
}
