//! The two trainable model kinds behind one type, and their checkpoints.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::lstm::{LstmConfig, LstmContext, LstmModel, LstmParams};
use super::modnn::{Modnn, ModnnConfig, ModnnContext, ModnnParams};
use super::window::{NormStats, PredictionWindow};
use super::DynamicsModel;
use crate::error::{Error, Result};
use crate::neural::{Checkpoint, Parameterized, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    Modnn,
    Lstm,
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelVariant::Modnn => "modnn",
            ModelVariant::Lstm => "lstm",
        })
    }
}

impl FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "modnn" => Ok(ModelVariant::Modnn),
            "lstm" => Ok(ModelVariant::Lstm),
            other => Err(format!("unknown model variant `{other}` (expected modnn or lstm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Modnn(Modnn),
    Lstm(LstmModel),
}

pub enum TrainedContext {
    Modnn(ModnnContext),
    Lstm(LstmContext),
}

impl TrainedModel {
    /// Freshly initialized model of the given kind.
    pub fn init(variant: ModelVariant, history: usize, horizon: usize, hidden: usize, flux: usize, norm: NormStats, seed: u64) -> Self {
        match variant {
            ModelVariant::Modnn => TrainedModel::Modnn(Modnn::new(
                ModnnConfig {
                    history,
                    horizon,
                    hidden,
                    flux,
                },
                norm,
                seed,
            )),
            ModelVariant::Lstm => TrainedModel::Lstm(LstmModel::new(
                LstmConfig {
                    history,
                    horizon,
                    hidden,
                },
                norm,
                seed,
            )),
        }
    }

    pub fn variant(&self) -> ModelVariant {
        match self {
            TrainedModel::Modnn(_) => ModelVariant::Modnn,
            TrainedModel::Lstm(_) => ModelVariant::Lstm,
        }
    }

    pub fn norm(&self) -> &NormStats {
        match self {
            TrainedModel::Modnn(m) => &m.norm,
            TrainedModel::Lstm(m) => &m.norm,
        }
    }

    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        windows: &[&PredictionWindow],
        trainable: bool,
    ) -> Result<(Var, Vec<(String, Var)>)> {
        match self {
            TrainedModel::Modnn(m) => m.loss_graph(tape, windows, trainable),
            TrainedModel::Lstm(m) => m.loss_graph(tape, windows, trainable),
        }
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        let meta = match self {
            TrainedModel::Modnn(m) => json!({
                "history": m.config.history,
                "horizon": m.config.horizon,
                "config": m.config,
                "norm": m.norm,
                "config_hash": config_hash,
            }),
            TrainedModel::Lstm(m) => json!({
                "history": m.config.history,
                "horizon": m.config.horizon,
                "config": m.config,
                "norm": m.norm,
                "config_hash": config_hash,
            }),
        };
        Checkpoint::capture(&self.variant().to_string(), meta, self)
    }

    /// Rebuilds a model from a verified checkpoint. With `expect`, the
    /// stored window lengths `(L, M)` must match.
    pub fn from_checkpoint(ckpt: &Checkpoint, expect: Option<(usize, usize)>) -> Result<Self> {
        ckpt.verify()?;
        let variant: ModelVariant = ckpt.variant.parse().map_err(Error::Integrity)?;
        let field = |name: &str| {
            ckpt.meta
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Integrity(format!("checkpoint meta lacks `{name}`")))
        };
        let bad = |e: serde_json::Error| Error::Integrity(format!("checkpoint meta: {e}"));
        let norm: NormStats = serde_json::from_value(field("norm")?).map_err(bad)?;
        let mut model = match variant {
            ModelVariant::Modnn => {
                let config: ModnnConfig = serde_json::from_value(field("config")?).map_err(bad)?;
                TrainedModel::Modnn(Modnn {
                    params: ModnnParams::new(&config, 0),
                    config,
                    norm,
                })
            }
            ModelVariant::Lstm => {
                let config: LstmConfig = serde_json::from_value(field("config")?).map_err(bad)?;
                TrainedModel::Lstm(LstmModel {
                    params: LstmParams::new(&config, 0),
                    config,
                    norm,
                })
            }
        };
        let stored = (model.history_len(), model.horizon());
        let declared: (usize, usize) = (
            serde_json::from_value(field("history")?).map_err(bad)?,
            serde_json::from_value(field("horizon")?).map_err(bad)?,
        );
        if declared != stored {
            return Err(Error::Integrity(format!(
                "checkpoint declares window lengths {declared:?} but its config has {stored:?}"
            )));
        }
        if let Some(want) = expect {
            if want != stored {
                return Err(Error::Integrity(format!(
                    "checkpoint was trained with (L, M) = {stored:?}, expected {want:?}"
                )));
            }
        }
        ckpt.restore_into(&mut model)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        self.to_checkpoint(config_hash).save(path)
    }

    pub fn load(path: &Path, expect: Option<(usize, usize)>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, expect)
    }
}

impl Parameterized for TrainedModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Array2<f64>)) {
        match self {
            TrainedModel::Modnn(m) => m.visit(prefix, f),
            TrainedModel::Lstm(m) => m.visit(prefix, f),
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        match self {
            TrainedModel::Modnn(m) => m.visit_mut(prefix, f),
            TrainedModel::Lstm(m) => m.visit_mut(prefix, f),
        }
    }
}

impl DynamicsModel for TrainedModel {
    type Context = TrainedContext;

    fn history_len(&self) -> usize {
        match self {
            TrainedModel::Modnn(m) => m.history_len(),
            TrainedModel::Lstm(m) => m.history_len(),
        }
    }

    fn horizon(&self) -> usize {
        match self {
            TrainedModel::Modnn(m) => m.horizon(),
            TrainedModel::Lstm(m) => m.horizon(),
        }
    }

    fn prepare(&self, window: &PredictionWindow) -> Result<TrainedContext> {
        Ok(match self {
            TrainedModel::Modnn(m) => TrainedContext::Modnn(m.prepare(window)?),
            TrainedModel::Lstm(m) => TrainedContext::Lstm(m.prepare(window)?),
        })
    }

    fn rollout(&self, tape: &mut Tape, ctx: &TrainedContext, u: Var) -> Result<Var> {
        match (self, ctx) {
            (TrainedModel::Modnn(m), TrainedContext::Modnn(c)) => m.rollout(tape, c, u),
            (TrainedModel::Lstm(m), TrainedContext::Lstm(c)) => m.rollout(tape, c, u),
            _ => Err(Error::Contract("context was prepared by a different model kind".into())),
        }
    }
}
