//! TOML run configuration and model construction.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{AnnealConfig, BruteForceConfig, OptimisationConfig};
use crate::error::{Error, Result};
use crate::gp::GpFitConfig;
use crate::models::gene::{GeneData, GeneModel, GeneOptions, INITIAL, TRUE_RATES};
use crate::models::rrm::{read_hydrology_csv, RrmModel, RrmOptions};
use crate::models::toy::ToyModel;
use crate::models::SimulatorModel;
use crate::rng::StreamKey;
use crate::smc::SmcConfig;
use crate::space::ParameterSpace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Run directory; relative paths resolve against the working directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub smc: SmcConfig,
    #[serde(default)]
    pub oracle: BruteForceConfig,
    #[serde(default)]
    pub rejection: SamplerConfig,
    #[serde(default)]
    pub adhoc: SamplerConfig,
    #[serde(default)]
    pub smc_opt: OptimisationConfig,
    #[serde(default)]
    pub bayes_smc: AnnealConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { samples: 5000, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Toy {},
    Hydrology(HydrologyConfig),
    Gene(GeneConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HydrologyConfig {
    /// `day,precip,pet,flow` file; synthetic data when absent.
    pub data: Option<PathBuf>,
    /// Days after burn-in for synthetic data.
    pub days: usize,
    pub burn_in: usize,
    pub substeps: usize,
    pub data_seed: u64,
}

impl Default for HydrologyConfig {
    fn default() -> Self {
        HydrologyConfig { data: None, days: 365, burn_in: 100, substeps: 1, data_seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneConfig {
    /// Observation file; synthetic data when absent.
    pub data: Option<PathBuf>,
    pub observations: usize,
    pub dt: f64,
    pub data_seed: u64,
    #[serde(flatten)]
    pub options: GeneOptions,
}

impl Default for GeneConfig {
    fn default() -> Self {
        GeneConfig { data: None, observations: 20, dt: 1.0, data_seed: 7, options: GeneOptions::default() }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.smc.validate().map_err(|e| Error::Config(format!("smc: {e}")))?;
        let o = &self.oracle;
        if !(o.alpha > 0.0 && o.alpha < 1.0) || o.training < 2 || o.points < o.training {
            return Err(Error::Config("oracle: need alpha in (0, 1) and 2 <= training <= points".into()));
        }
        if !(self.smc_opt.alpha > 0.0 && self.smc_opt.alpha < 1.0) || self.smc_opt.particles < 2 {
            return Err(Error::Config("smc_opt: need alpha in (0, 1) and at least 2 particles".into()));
        }
        match &self.model {
            ModelConfig::Toy {} => {}
            ModelConfig::Hydrology(h) => {
                if h.substeps == 0 || (h.data.is_none() && h.days == 0) {
                    return Err(Error::Config("model: substeps and days must be positive".into()));
                }
            }
            ModelConfig::Gene(g) => {
                if g.data.is_none() && (g.observations == 0 || !(g.dt > 0.0)) {
                    return Err(Error::Config("model: observations and dt must be positive".into()));
                }
                if g.options.particles < 2 || !(g.options.sigma > 0.0) || g.options.replicates == 0 {
                    return Err(Error::Config("model: need particles >= 2, sigma > 0, replicates >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Applies one seed to every section.
    pub fn set_seed(&mut self, seed: u64) {
        self.smc.seed = seed;
        self.oracle.seed = seed;
        self.rejection.seed = seed;
        self.adhoc.seed = seed;
        self.smc_opt.seed = seed;
        self.bayes_smc.seed = seed;
    }
}

/// A constructed simulator with its prior.
pub enum Model {
    Toy(ToyModel),
    Hydrology(Box<RrmModel>),
    Gene(Box<GeneModel>),
}

impl Model {
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        Ok(match cfg {
            ModelConfig::Toy {} => Model::Toy(ToyModel),
            ModelConfig::Hydrology(h) => {
                let options = RrmOptions { substeps: h.substeps, burn_in: h.burn_in, ..Default::default() };
                let model = match &h.data {
                    Some(path) => {
                        let (forcing, flow) = read_hydrology_csv(open(path)?)?;
                        let flow = flow.ok_or_else(|| Error::Config(format!("{}: no flow column", path.display())))?;
                        RrmModel::new(forcing, flow, options)?
                    }
                    None => RrmModel::synthetic(h.days, options, StreamKey::new(h.data_seed))?,
                };
                Model::Hydrology(Box::new(model))
            }
            ModelConfig::Gene(g) => {
                let data = match &g.data {
                    Some(path) => GeneData::read_csv(BufReader::new(open(path)?))?,
                    None => GeneData::generate(&TRUE_RATES, g.options.k, INITIAL, g.dt, g.observations, g.data_seed),
                };
                Model::Gene(Box::new(GeneModel::new(data, g.options.clone())?))
            }
        })
    }

    pub fn simulator(&self) -> &dyn SimulatorModel {
        match self {
            Model::Toy(m) => m,
            Model::Hydrology(m) => m.as_ref(),
            Model::Gene(m) => m.as_ref(),
        }
    }

    pub fn space(&self) -> ParameterSpace {
        match self {
            Model::Toy(_) => ToyModel::space(),
            Model::Hydrology(_) => crate::models::rrm::RrmParams::space(),
            Model::Gene(m) => m.space(),
        }
    }

    /// GP settings suited to the model's noise.
    pub fn gp_defaults(&self, base: &GpFitConfig) -> GpFitConfig {
        match self {
            Model::Gene(_) if base == &GpFitConfig::default() => GpFitConfig::stochastic(),
            _ => base.clone(),
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_and_defaults() {
        let c = RunConfig::from_toml("[model]\nkind = \"toy\"\n").unwrap();
        assert_eq!(c.smc, SmcConfig::default());
        let c = RunConfig::from_toml("[model]\nkind = \"gene\"\nparticles = 50\n[smc]\nparticles = 100\ntraining = 20\n").unwrap();
        match c.model {
            ModelConfig::Gene(g) => assert_eq!(g.options.particles, 50),
            _ => panic!(),
        }
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::from_toml("[smc]\nparticles = 10\n").unwrap_err().to_string();
        assert!(e.contains("model"), "{e}");
        let e = RunConfig::from_toml("[model]\nkind = \"toy\"\n[smc]\nparticle = 10\n").unwrap_err().to_string();
        assert!(e.contains("particle"), "{e}");
        let e = RunConfig::from_toml("[model]\nkind = \"toy\"\n[smc]\nalpha = 1.5\n").unwrap_err().to_string();
        assert!(e.contains("alpha"), "{e}");
        assert!(RunConfig::from_toml("[model]\nkind = \"toy\"\nextra = 1\n").is_err());
        assert!(RunConfig::from_toml("[model]\nkind = \"gene\"\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml("[model]\nkind = \"gene\"\nlimits = { species_cap = 5, bogus = 1 }\n").is_err());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::from_toml("[model]\nkind = \"hydrology\"\ndays = 30\n").unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }
}
