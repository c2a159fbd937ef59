use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::generator_indices;
use crate::error::{Error, Result};
use crate::numerics::{
    read_tensors, write_tensors, AdamConfig, AdamState, DenseMatrix, NamedTensor, ParamSet,
};

pub const PARAMS_FILE: &str = "params.tns";
pub const MANIFEST_FILE: &str = "checkpoint.json";
const FORMAT_VERSION: u32 = 1;

/// Loop position and early-stopping bookkeeping.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs; also the index of the epoch in progress.
    pub epoch: usize,
    /// Batches of the epoch in progress already taken.
    pub batch_cursor: usize,
    /// Global step count; the next step has index `step + 1`.
    pub step: u64,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_since_best: usize,
    /// Monitored metric after every epoch.
    pub history: Vec<f64>,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamSet,
    pub adam: AdamState,
    pub ascent: Option<AdamState>,
    pub state: TrainState,
    /// Best-epoch parameters when they differ from `params`.
    pub best: Option<ParamSet>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerMeta {
    step: u64,
    config: AdamConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: BTreeMap<String, String>,
    state: TrainState,
    adam: OptimizerMeta,
    ascent: Option<OptimizerMeta>,
    has_best: bool,
    /// How random streams are derived.
    rng: String,
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::Snapshot {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

impl Checkpoint {
    /// Best-epoch parameters, falling back to the current ones.
    pub fn best_params(&self) -> &ParamSet {
        self.best.as_ref().unwrap_or(&self.params)
    }

    /// A checkpoint whose current parameters are its best ones.
    pub fn into_best(mut self) -> Checkpoint {
        if let Some(b) = self.best.take() {
            self.params = b;
        }
        self
    }

    /// Writes `params.tns` and `checkpoint.json` into `dir`, returning both paths.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tensors: Vec<NamedTensor> = self.params.iter().cloned().collect();
        let mut moments = |prefix: &str, st: &AdamState| {
            for (slot, &i) in st.params.iter().enumerate() {
                let name = &self.params.get(i).name;
                tensors.push(NamedTensor::new(
                    format!("{prefix}.m/{name}"),
                    st.m[slot].clone(),
                ));
                tensors.push(NamedTensor::new(
                    format!("{prefix}.v/{name}"),
                    st.v[slot].clone(),
                ));
            }
        };
        moments("adam", &self.adam);
        if let Some(a) = &self.ascent {
            moments("ascent", a);
        }
        if let Some(best) = &self.best {
            tensors.extend(
                best.iter()
                    .map(|t| NamedTensor::new(format!("best/{}", t.name), t.value.clone())),
            );
        }
        let tensor_path = dir.join(PARAMS_FILE);
        write_tensors(&tensor_path, &tensors)?;

        let meta = |st: &AdamState| OptimizerMeta {
            step: st.step,
            config: st.config,
        };
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config.to_map(),
            state: self.state.clone(),
            adam: meta(&self.adam),
            ascent: self.ascent.as_ref().map(meta),
            has_best: self.best.is_some(),
            rng: "derived streams (seed, tag, indices); no mutable generator state".into(),
        };
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(vec![tensor_path, manifest_path])
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| corrupt(&manifest_path, e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(corrupt(
                &manifest_path,
                format!("unsupported format version {}", manifest.format_version),
            ));
        }
        let mut config = TrainConfig::default();
        for (k, v) in &manifest.config {
            config.set(k, v)?;
        }

        let tensor_path = dir.join(PARAMS_FILE);
        let mut by_name: BTreeMap<String, DenseMatrix> = read_tensors(&tensor_path)?
            .into_iter()
            .map(|t| (t.name, t.value))
            .collect();
        let expected = super::init_params(&config, 0, 0);
        let mut take = |name: &str| {
            by_name
                .remove(name)
                .ok_or_else(|| corrupt(&tensor_path, format!("missing tensor `{name}`")))
        };
        let names: Vec<String> = expected.iter().map(|t| t.name.clone()).collect();
        let params = ParamSet::new(
            names
                .iter()
                .map(|n| Ok(NamedTensor::new(n.clone(), take(n)?)))
                .collect::<Result<Vec<_>>>()?,
        );
        let mut optimizer =
            |prefix: &str, meta: &OptimizerMeta, indices: Vec<usize>| -> Result<AdamState> {
                let mut st = AdamState::new(meta.config, &params, indices);
                st.step = meta.step;
                for (slot, &i) in st.params.clone().iter().enumerate() {
                    let name = &names[i];
                    let shape = params.get(i).value.shape();
                    for (which, dst) in [("m", &mut st.m[slot]), ("v", &mut st.v[slot])] {
                        let t = take(&format!("{prefix}.{which}/{name}"))?;
                        if t.shape() != shape {
                            return Err(corrupt(
                                &tensor_path,
                                format!("{prefix}.{which}/{name} has shape {:?}", t.shape()),
                            ));
                        }
                        *dst = t;
                    }
                }
                Ok(st)
            };
        let adam = optimizer("adam", &manifest.adam, (0..params.len()).collect())?;
        let ascent = match &manifest.ascent {
            Some(meta) => Some(optimizer("ascent", meta, generator_indices(&params))?),
            None => None,
        };
        let best = if manifest.has_best {
            Some(ParamSet::new(
                names
                    .iter()
                    .map(|n| Ok(NamedTensor::new(n.clone(), take(&format!("best/{n}"))?)))
                    .collect::<Result<Vec<_>>>()?,
            ))
        } else {
            None
        };
        if let Some(extra) = by_name.keys().next() {
            return Err(corrupt(
                &tensor_path,
                format!("unexpected tensor `{extra}`"),
            ));
        }
        Ok(Checkpoint {
            config,
            params,
            adam,
            ascent,
            state: manifest.state,
            best,
        })
    }
}
