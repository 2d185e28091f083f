use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

const K: u32 = 1024;

/// A contiguous range of relative row locations whose BER is scaled up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkElevation {
    pub start: f64,
    pub end: f64,
    pub multiplier: f64,
}

/// Statistical shape of one DRAM module's read-disturbance vulnerability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTemplate {
    pub name: String,
    pub hcfirst_min: u32,
    pub hcfirst_avg: f64,
    pub hcfirst_max: u32,
    /// Mean BER at 128K hammers, as a fraction.
    pub ber_mean: f64,
    /// Coefficient of variation of BER across rows, in percent.
    pub ber_cv: f64,
    /// Period of the repeating BER pattern, as a fraction of the bank.
    pub ber_period: Option<f64>,
    pub chunk_elevation: Option<ChunkElevation>,
    /// HC_first multipliers for the 0.5us and 2us on-time buckets.
    pub taggon_reduction: [f64; 2],
}

impl ProfileTemplate {
    pub fn new(name: &str, min: u32, avg: f64, max: u32) -> Self {
        ProfileTemplate {
            name: name.to_string(),
            hcfirst_min: min,
            hcfirst_avg: avg,
            hcfirst_max: max,
            ber_mean: 0.01,
            ber_cv: 5.0,
            ber_period: None,
            chunk_elevation: None,
            taggon_reduction: [0.8, 0.6],
        }
    }

    /// Flat template: every row has the same HC_first.
    pub fn uniform(value: u32) -> Self {
        Self::new("uniform", value, value as f64, value)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Template(format!("{}: {m}", self.name)));
        if self.hcfirst_min == 0 {
            return err("hcfirst_min must be >= 1".into());
        }
        let (min, max) = (self.hcfirst_min as f64, self.hcfirst_max as f64);
        if !(min <= self.hcfirst_avg && self.hcfirst_avg <= max) {
            return err(format!("need min <= avg <= max, got {min} / {} / {max}", self.hcfirst_avg));
        }
        if self.hcfirst_min < self.hcfirst_max
            && !(min < self.hcfirst_avg && self.hcfirst_avg < max)
        {
            return err("avg must lie strictly inside (min, max)".into());
        }
        if !(self.ber_cv >= 0.0) {
            return err("ber_cv must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.ber_mean) {
            return err("ber_mean must be a fraction".into());
        }
        if let Some(p) = self.ber_period {
            if !(p > 0.0 && p <= 1.0) {
                return err("ber_period must be in (0, 1]".into());
            }
        }
        if let Some(c) = self.chunk_elevation {
            if !(0.0 <= c.start && c.start < c.end && c.end <= 1.0 && c.multiplier > 0.0) {
                return err("chunk_elevation range invalid".into());
            }
        }
        if self.taggon_reduction.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return err("taggon factors must be in (0, 1]".into());
        }
        if self.taggon_reduction[1] > self.taggon_reduction[0] {
            return err("taggon factors must not increase with on-time".into());
        }
        Ok(())
    }

    /// Named preset from the characterized DDR4 module table.
    ///
    /// BER mean and CV are only known for a few modules (M0 means around
    /// 1.7%, M1 CV 8.08%, S1 CV 5.77%); the rest use 1% / 5%.
    pub fn preset(name: &str) -> Option<Self> {
        let (min, avg, max) = match name {
            "H0" => (16, 46.2, 96),
            "H1" => (12, 54.0, 128),
            "H2" => (12, 55.4, 128),
            "H3" => (12, 57.8, 128),
            "H4" => (16, 38.1, 96),
            "M0" => (8, 24.5, 40),
            "M1" => (40, 64.5, 96),
            "M2" => (8, 28.6, 48),
            "M3" => (56, 90.0, 128),
            "M4" => (12, 42.2, 96),
            "S0" => (32, 57.0, 128),
            "S1" => (24, 59.8, 128),
            "S2" => (12, 42.7, 96),
            "S3" => (16, 59.2, 128),
            "S4" => (12, 55.4, 128),
            _ => return None,
        };
        let mut t = Self::new(name, min * K, avg * K as f64, max * K);
        match name {
            "M0" => {
                t.ber_mean = 0.0171;
                t.ber_cv = 2.0;
            }
            "M1" => {
                t.ber_cv = 8.08;
                t.chunk_elevation = Some(ChunkElevation { start: 0.03, end: 0.12, multiplier: 1.21 });
            }
            "S1" => t.ber_cv = 5.77,
            "S4" => t.ber_period = Some(0.25),
            _ => {}
        }
        Some(t)
    }

    /// The three module profiles used for system-level evaluation.
    pub fn evaluation_presets() -> [Self; 3] {
        ["S0", "M0", "H1"].map(|n| Self::preset(n).expect("known preset"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_module_table() {
        let s0 = ProfileTemplate::preset("S0").unwrap();
        assert_eq!((s0.hcfirst_min, s0.hcfirst_avg, s0.hcfirst_max), (32 * K, 57.0 * 1024.0, 128 * K));
        let m0 = ProfileTemplate::preset("M0").unwrap();
        assert_eq!((m0.hcfirst_min, m0.hcfirst_max), (8 * K, 40 * K));
        let h1 = ProfileTemplate::preset("H1").unwrap();
        assert_eq!((h1.hcfirst_min, h1.hcfirst_max), (12 * K, 128 * K));
        assert!(ProfileTemplate::preset("X9").is_none());
    }

    #[test]
    fn rejects_bad_templates() {
        let mut t = ProfileTemplate::new("bad", 10, 5.0, 20);
        assert!(t.validate().is_err());
        t.hcfirst_avg = 15.0;
        assert!(t.validate().is_ok());
        t.taggon_reduction = [0.5, 1.5];
        assert!(t.validate().is_err());
        assert!(ProfileTemplate::uniform(64).validate().is_ok());
    }
}
