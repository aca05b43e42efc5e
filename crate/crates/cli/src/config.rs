use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use landau_dpp::landau::{LevelSet, MagneticModel, SpectralWindow};
use landau_dpp::testfn::TestFunction;
use landau_dpp::torus::TorusConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Predict,
    SampleFlat,
    TorusSpectrum,
    TorusEnsemble,
    Verify,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub output: Option<PathBuf>,
    pub model: Option<ModelBlock>,
    pub window: Option<WindowBlock>,
    pub flat: Option<FlatBlock>,
    pub torus: Option<TorusBlock>,
    pub stats: Option<StatsBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub n: usize,
    pub a: Vec<f64>,
    #[serde(default)]
    pub v: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowBlock {
    pub alpha: f64,
    pub beta: f64,
    pub margin: Option<f64>,
}

/// Box radius and grid step are in magnetic units `√p·Z`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatBlock {
    pub box_radius: f64,
    pub step: f64,
    pub p: Vec<u32>,
    #[serde(default = "default_max_nodes")]
    pub max_nodes: usize,
    #[serde(default = "default_true")]
    pub exact: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusBlock {
    pub m: usize,
    pub p: Vec<u32>,
    #[serde(default)]
    pub v: f64,
    pub cutoff: Option<f64>,
    #[serde(default = "default_width")]
    pub width: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsBlock {
    pub f: String,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub base_seed: u64,
}

fn default_max_nodes() -> usize {
    20_000
}

fn default_true() -> bool {
    true
}

fn default_width() -> f64 {
    0.05
}

fn default_samples() -> usize {
    1000
}

/// A parsed config together with the hash of its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.check()?;
        let sha256 = Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        Ok(Self { config, sha256 })
    }
}

impl ExperimentConfig {
    fn need<'a, T>(block: &'a Option<T>, name: &str, mode: Mode) -> Result<&'a T> {
        block
            .as_ref()
            .with_context(|| format!("mode {mode:?} needs a [{name}] block"))
    }

    pub fn model(&self) -> Result<MagneticModel> {
        let b = Self::need(&self.model, "model", self.mode)?;
        if b.a.len() != b.n {
            bail!("model.a has {} entries but model.n = {}", b.a.len(), b.n);
        }
        Ok(MagneticModel::new(b.a.clone(), b.v)?)
    }

    pub fn window(&self, max_a: f64) -> Result<SpectralWindow> {
        let b = Self::need(&self.window, "window", self.mode)?;
        let margin = b.margin.unwrap_or(1e-8 * max_a);
        Ok(SpectralWindow::new(b.alpha, b.beta, margin)?)
    }

    pub fn levels(&self) -> Result<(MagneticModel, LevelSet)> {
        let model = self.model()?;
        let max_a = model.a().iter().cloned().fold(0.0, f64::max);
        let window = self.window(max_a)?;
        let levels = model.validate_window(&window)?;
        if levels.is_empty() {
            bail!("the window contains no Landau level");
        }
        Ok((model, levels))
    }

    pub fn flat(&self) -> Result<&FlatBlock> {
        let b = Self::need(&self.flat, "flat", self.mode)?;
        if b.p.is_empty() || b.p.contains(&0) {
            bail!("flat.p must be a non-empty list of positive integers");
        }
        if !(b.box_radius > 0.0 && b.step > 0.0) {
            bail!("flat.box_radius and flat.step must be positive");
        }
        Ok(b)
    }

    pub fn torus(&self) -> Result<&TorusBlock> {
        let b = Self::need(&self.torus, "torus", self.mode)?;
        if b.p.is_empty() {
            bail!("torus.p must not be empty");
        }
        for &p in &b.p {
            TorusConfig::new(b.m, p)?;
        }
        Ok(b)
    }

    /// The torus window, defaulting to the lowest level `[0, 4π]`.
    pub fn torus_window(&self) -> Result<SpectralWindow> {
        let t = self.torus()?;
        match &self.window {
            Some(_) => self.window(2.0 * std::f64::consts::PI),
            None => Ok(SpectralWindow::new(t.v, t.v + 4.0 * std::f64::consts::PI, 1e-8)?),
        }
    }

    pub fn stats(&self) -> Result<&StatsBlock> {
        let b = Self::need(&self.stats, "stats", self.mode)?;
        if b.n_samples < 2 {
            bail!("stats.n_samples must be at least 2");
        }
        Ok(b)
    }

    pub fn test_function(&self, dim: usize) -> Result<TestFunction> {
        let s = self.stats()?;
        Ok(TestFunction::by_name(&s.f, dim, &s.params)?)
    }

    /// Re-checks every block the mode uses.
    pub fn check(&self) -> Result<()> {
        match self.mode {
            Mode::Predict => {
                let (model, _) = self.levels()?;
                self.flat()?;
                self.test_function(2 * model.n())?;
            }
            Mode::SampleFlat => {
                let (model, _) = self.levels()?;
                self.flat()?;
                self.test_function(2 * model.n())?;
            }
            Mode::TorusSpectrum => {
                self.torus()?;
                self.torus_window()?;
            }
            Mode::TorusEnsemble => {
                self.torus()?;
                self.torus_window()?;
                self.test_function(2)?;
            }
            Mode::Verify => {}
        }
        Ok(())
    }

    pub fn seed(&self, cli_seed: Option<u64>) -> u64 {
        cli_seed
            .or_else(|| self.stats.as_ref().map(|s| s.base_seed))
            .unwrap_or(landau_dpp::acceptance::DEFAULT_SEED)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PREDICT: &str = r#"
mode = "predict"

[model]
n = 1
a = [1.0]

[window]
alpha = 0.0
beta = 2.0

[flat]
box_radius = 8.0
step = 0.25
p = [16, 64]

[stats]
f = "cosine-bump"
params = [1.0, 1.0]
"#;

    #[test]
    fn parses_a_predict_config() {
        let c = LoadedConfig::parse(PREDICT).unwrap();
        assert_eq!(c.config.mode, Mode::Predict);
        assert_eq!(c.sha256.len(), 64);
        let (_, levels) = c.config.levels().unwrap();
        assert_eq!(levels.len(), 1);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = PREDICT.replace("step = 0.25", "step = 0.25\nstride = 2");
        let err = LoadedConfig::parse(&text).unwrap_err();
        assert!(format!("{err:#}").contains("stride"), "{err:#}");
    }

    #[test]
    fn rejects_missing_blocks() {
        let text = PREDICT.replace("[flat]\nbox_radius = 8.0\nstep = 0.25\np = [16, 64]\n", "");
        assert!(LoadedConfig::parse(&text).is_err());
    }

    #[test]
    fn rechecks_module_guards() {
        let text = PREDICT.replace("a = [1.0]", "a = [-1.0]");
        assert!(LoadedConfig::parse(&text).is_err());
        let torus = "mode = \"torus-spectrum\"\n[torus]\nm = 8\np = [9]\n";
        assert!(LoadedConfig::parse(torus).is_err());
    }

    #[test]
    fn cli_seed_overrides_config() {
        let c = LoadedConfig::parse(&PREDICT.replace("params = [1.0, 1.0]", "params = [1.0, 1.0]\nbase_seed = 5")).unwrap();
        assert_eq!(c.config.seed(None), 5);
        assert_eq!(c.config.seed(Some(9)), 9);
    }

    #[test]
    fn hash_tracks_the_source_text() {
        let a = LoadedConfig::parse(PREDICT).unwrap();
        let b = LoadedConfig::parse(&format!("{PREDICT}\n# comment\n")).unwrap();
        assert_ne!(a.sha256, b.sha256);
    }
}
