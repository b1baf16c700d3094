//! TOML scenario configuration.

use capture_mse::scenario::{Probabilities, ScenarioConfig, StudyMethod};
use capture_mse::simgen::Distribution;
use serde::Deserialize;

/// Every key is optional; missing keys take the full-study defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub distributions: Option<Vec<String>>,
    pub sizes: Option<Vec<u64>>,
    pub regions: Option<Vec<usize>>,
    pub probabilities: Option<Vec<Probabilities>>,
    pub methods: Option<Vec<String>>,
    pub populations: Option<usize>,
    pub samples_per_population: Option<usize>,
    pub base_seed: Option<u64>,
    pub variances: Option<[f64; 3]>,
}

pub fn parse_methods<S: AsRef<str>>(names: &[S]) -> Result<Vec<StudyMethod>, String> {
    let mut out = Vec::new();
    for n in names {
        let n = n.as_ref().trim();
        let m = StudyMethod::parse(n).ok_or_else(|| format!("unknown method {n:?} (expected FixedLP, FixedChapman or Mixed)"))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn into_config(self) -> Result<ScenarioConfig, String> {
        let mut cfg = ScenarioConfig::default();
        if let Some(d) = self.distributions {
            cfg.distributions = d
                .iter()
                .map(|s| Distribution::parse(s).ok_or_else(|| format!("unknown distribution {s:?}")))
                .collect::<Result<_, _>>()?;
        }
        if let Some(v) = self.sizes {
            cfg.sizes = v;
        }
        if let Some(v) = self.regions {
            cfg.regions = v;
        }
        if let Some(v) = self.probabilities {
            cfg.probabilities = v;
        }
        if let Some(m) = self.methods {
            cfg.methods = parse_methods(&m)?;
        }
        if let Some(v) = self.populations {
            cfg.populations = v;
        }
        if let Some(v) = self.samples_per_population {
            cfg.samples_per_population = v;
        }
        if let Some(v) = self.base_seed {
            cfg.base_seed = v;
        }
        if let Some(v) = self.variances {
            cfg.variances = v;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_full_study() {
        let cfg = ConfigFile::parse("").unwrap().into_config().unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
    }

    #[test]
    fn keys_override_defaults() {
        let cfg = ConfigFile::parse(
            "distributions = [\"pareto\"]\nsizes = [500]\nprobabilities = [\"low\"]\nmethods = [\"chapman\", \"Mixed\"]\npopulations = 3\n",
        )
        .unwrap()
        .into_config()
        .unwrap();
        assert_eq!(cfg.distributions, [Distribution::Pareto]);
        assert_eq!(cfg.probabilities, [Probabilities::Low]);
        assert_eq!(cfg.methods, [StudyMethod::FixedChapman, StudyMethod::Mixed]);
        assert_eq!(cfg.populations, 3);
        assert_eq!(cfg.scenarios().len(), 6);
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(ConfigFile::parse("colour = 3").is_err());
        assert!(ConfigFile::parse("distributions = [\"cauchy\"]").unwrap().into_config().is_err());
        assert!(ConfigFile::parse("populations = 0").unwrap().into_config().is_err());
    }
}
