//! Conditional what-if queries: one scene scored under several candidate
//! ego plans.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::decoder::PredictionSet;
use crate::error::{Error, Result};
use crate::model::{Model, Prepared};
use crate::scene::EgoPlan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhatIfQuery {
    /// Futures and labels of the targets are not needed.
    pub instance: Instance,
    pub candidates: Vec<EgoPlan>,
}

impl WhatIfQuery {
    /// Checks that there is at least one candidate and that every one covers
    /// the model's prediction horizon at its own rate.
    pub fn validate(&self, t_pred: usize) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Invalid("what-if query needs at least one candidate plan".into()));
        }
        for (k, c) in self.candidates.iter().enumerate() {
            let expected = match c.rate() {
                5 => t_pred,
                _ => t_pred / 5,
            };
            if c.len() != expected {
                return Err(Error::Invalid(format!(
                    "candidate {k}: {} points at {} Hz, the {t_pred}-frame horizon needs {expected}",
                    c.len(),
                    c.rate()
                )));
            }
        }
        Ok(())
    }
}

/// Model inputs for each candidate; only the ego plan differs between them.
pub fn candidate_inputs(model: &Model, query: &WhatIfQuery) -> Result<Vec<Prepared>> {
    query.validate(model.config.horizon.t_pred)?;
    let base = model.prepare(&query.instance)?;
    query
        .candidates
        .iter()
        .map(|c| {
            let p = model.prepare(&query.instance.with_plan(c.clone()))?;
            debug_assert_eq!(p.targets, base.targets);
            Ok(p)
        })
        .collect()
}

/// One prediction set per candidate, in candidate order.
pub fn whatif(model: &Model, query: &WhatIfQuery) -> Result<Vec<PredictionSet>> {
    let inputs = candidate_inputs(model, query)?;
    inputs
        .par_iter()
        .map(|p| Ok(model.predict_prepared(&[p])?.remove(0)))
        .collect()
}
