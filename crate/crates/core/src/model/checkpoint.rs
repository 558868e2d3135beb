use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Vocab};
use crate::error::{Error, Result};
use crate::expr::ConstantVocabulary;
use crate::tensor::{Mat, ParamStore};

pub const CHECKPOINT_FORMAT: &str = "mwp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A named tensor stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn from_mat(name: &str, m: &Mat) -> Self {
        Self { name: name.to_string(), shape: [m.nrows(), m.ncols()], data: m.iter().copied().collect() }
    }

    pub fn to_mat(&self) -> Result<Mat> {
        Mat::from_shape_vec((self.shape[0], self.shape[1]), self.data.clone())
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", self.name)))
    }
}

pub fn store_records(store: &ParamStore) -> Vec<TensorRecord> {
    store.iter().map(|(_, name, m)| TensorRecord::from_mat(name, m)).collect()
}

/// Overwrites every tensor of `store` from `records`, which must name each
/// tensor exactly once with a matching shape.
pub fn load_records(store: &mut ParamStore, records: &[TensorRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.name.as_str()) {
            return Err(Error::Checkpoint(format!("tensor {} appears twice", r.name)));
        }
        store.set(&r.name, r.to_mat()?)?;
    }
    if let Some((_, missing, _)) = store.iter().find(|(_, n, _)| !seen.contains(n)) {
        return Err(Error::Checkpoint(format!("tensor {missing} is missing")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub constants: ConstantVocabulary,
    pub tensors: Vec<TensorRecord>,
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            constants: self.constants.clone(),
            tensors: store_records(&self.store),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        let mut model = Model::new(c.config.clone(), c.vocab.clone(), c.constants.clone(), 0)?;
        load_records(&mut model.store, &c.tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let c: Checkpoint = serde_json::from_reader(f)?;
        Self::from_checkpoint(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model {
        let cfg = ModelConfig { hidden: 8, heads: 2, layers: 1, max_len: 16, ..ModelConfig::default() };
        Model::new(cfg, Vocab::specials(), ConstantVocabulary::new(), 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        for ((_, n1, a), (_, n2, b)) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(a, b);
        }
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = small();
        let mut c = m.to_checkpoint();
        let t = c.tensors.iter_mut().find(|t| t.name == "infer.out.w").unwrap();
        t.shape = [1, 8];
        assert!(matches!(Model::from_checkpoint(&c), Err(Error::Checkpoint(msg)) if msg.contains("infer.out.w")));
    }

    #[test]
    fn missing_tensor_is_rejected() {
        let m = small();
        let mut c = m.to_checkpoint();
        c.tensors.pop();
        assert!(Model::from_checkpoint(&c).is_err());
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let m = small();
        let mut c = m.to_checkpoint();
        c.config.hidden = 16;
        c.config.heads = 2;
        assert!(Model::from_checkpoint(&c).is_err());
    }
}
