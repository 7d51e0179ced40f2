//! Self-describing model checkpoints: architecture config, player registry,
//! training-set hash and every parameter by name.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{BcModel, HbcConfig, HbcModel};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, RallyNet};
use crate::nn::{ParamStore, ParamValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Rallynet,
    Bc,
    Hbc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hbc: Option<HbcConfig>,
    pub dataset_hash: String,
    pub players: Vec<String>,
    pub params: BTreeMap<String, ParamValue>,
}

pub enum Model {
    RallyNet(RallyNet),
    Bc(BcModel),
    Hbc(HbcModel),
}

impl Checkpoint {
    pub fn of_rallynet(m: &RallyNet, dataset_hash: &str) -> Result<Self> {
        Self::build(ModelKind::Rallynet, &m.cfg, None, dataset_hash, m.registry.players(), &m.params)
    }

    pub fn of_bc(m: &BcModel, dataset_hash: &str) -> Result<Self> {
        Self::build(ModelKind::Bc, &m.cfg, None, dataset_hash, m.registry.players(), &m.params)
    }

    pub fn of_hbc(m: &HbcModel, dataset_hash: &str) -> Result<Self> {
        Self::build(ModelKind::Hbc, &m.cfg, Some(m.hbc), dataset_hash, m.registry.players(), &m.params)
    }

    fn build(
        kind: ModelKind,
        cfg: &ModelConfig,
        hbc: Option<HbcConfig>,
        dataset_hash: &str,
        players: &[String],
        params: &ParamStore,
    ) -> Result<Self> {
        Ok(Checkpoint {
            kind,
            config: cfg.clone(),
            hbc,
            dataset_hash: dataset_hash.to_string(),
            players: players.to_vec(),
            params: params.snapshot()?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a checkpoint, refusing one trained on a different dataset when
    /// `expected_hash` is given.
    pub fn load(path: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if let Some(h) = expected_hash {
            if h != ck.dataset_hash {
                return Err(Error::StaleArtifact { expected: h.to_string(), found: ck.dataset_hash });
            }
        }
        Ok(ck)
    }

    pub fn into_model(self) -> Result<Model> {
        Ok(match self.kind {
            ModelKind::Rallynet => {
                let mut m = RallyNet::new(&self.config, &self.players)?;
                m.params.load(&self.params)?;
                Model::RallyNet(m)
            }
            ModelKind::Bc => {
                let mut m = BcModel::new(&self.config, &self.players)?;
                m.params.load(&self.params)?;
                Model::Bc(m)
            }
            ModelKind::Hbc => {
                let hbc = self.hbc.ok_or_else(|| Error::Checkpoint("hbc checkpoint without option config".into()))?;
                let mut m = HbcModel::new(&self.config, &hbc, &self.players)?;
                m.params.load(&self.params)?;
                Model::Hbc(m)
            }
        })
    }

    pub fn into_rallynet(self) -> Result<RallyNet> {
        match self.into_model()? {
            Model::RallyNet(m) => Ok(m),
            _ => Err(Error::Checkpoint("not a rallynet checkpoint".into())),
        }
    }

    pub fn into_bc(self) -> Result<BcModel> {
        match self.into_model()? {
            Model::Bc(m) => Ok(m),
            _ => Err(Error::Checkpoint("not a bc checkpoint".into())),
        }
    }

    pub fn into_hbc(self) -> Result<HbcModel> {
        match self.into_model()? {
            Model::Hbc(m) => Ok(m),
            _ => Err(Error::Checkpoint("not an hbc checkpoint".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn players() -> Vec<String> {
        vec!["A".into(), "B".into()]
    }

    #[test]
    fn rallynet_round_trip_restores_every_parameter() {
        let cfg = ModelConfig { seed: 4, ..ModelConfig::desk() };
        let net = RallyNet::new(&cfg, &players()).unwrap();
        let ck = Checkpoint::of_rallynet(&net, "h").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path, Some("h")).unwrap();
        assert_eq!(back, ck);
        let restored = back.into_rallynet().unwrap();
        assert_eq!(restored.params.snapshot().unwrap(), net.params.snapshot().unwrap());
        assert!(matches!(Checkpoint::load(&path, Some("other")), Err(Error::StaleArtifact { .. })));
    }

    #[test]
    fn loaded_parameters_override_initialization() {
        let a = BcModel::new(&ModelConfig { seed: 1, ..ModelConfig::desk() }, &players()).unwrap();
        let mut ck = Checkpoint::of_bc(&a, "h").unwrap();
        ck.config.seed = 99;
        let b = ck.into_bc().unwrap();
        assert_eq!(b.params.snapshot().unwrap(), a.params.snapshot().unwrap());
    }

    #[test]
    fn kind_mismatch_and_missing_options_are_errors() {
        let cfg = ModelConfig::desk();
        let h = HbcModel::new(&cfg, &HbcConfig::default(), &players()).unwrap();
        let ck = Checkpoint::of_hbc(&h, "h").unwrap();
        assert!(ck.clone().into_bc().is_err());
        assert!(Checkpoint { hbc: None, ..ck.clone() }.into_model().is_err());
        assert!(ck.into_hbc().is_ok());
    }
}
