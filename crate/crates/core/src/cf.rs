//! Neighbourhood CF: baseline plus the similarity-weighted average of the
//! neighbours' deviations from their own baselines.

use crate::baseline::BiasModel;
use crate::dataset::RatingsTable;
use crate::error::{Error, Result};
use crate::similarity::{Axis, NeighborStore};

/// Denominators smaller than this fall back to the baseline.
pub const MIN_WEIGHT_SUM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfPrediction {
    pub value: f64,
    /// True when no usable neighbour existed and the baseline was returned.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct CfPredictor<'a> {
    store: &'a NeighborStore,
    bias: &'a BiasModel,
    table: &'a RatingsTable,
}

impl<'a> CfPredictor<'a> {
    pub fn new(store: &'a NeighborStore, bias: &'a BiasModel, table: &'a RatingsTable) -> Result<Self> {
        let expected = match store.axis() {
            Axis::Item => table.num_items(),
            Axis::User => table.num_users(),
        };
        if store.num_entities() != expected {
            return Err(Error::Usage(format!(
                "neighbour store has {} entities, table axis has {expected}",
                store.num_entities()
            )));
        }
        Ok(Self { store, bias, table })
    }

    pub fn axis(&self) -> Axis {
        self.store.axis()
    }

    pub fn predict(&self, user: usize, item: usize) -> CfPrediction {
        let base = self.bias.predict(user, item);
        let mut num = 0.0;
        let mut den = 0.0;
        let mut used = 0usize;
        match self.store.axis() {
            Axis::Item => {
                for nb in self.store.neighbors(item) {
                    if let Some(r) = self.table.get(user, nb.index) {
                        num += nb.score * (r - self.bias.predict(user, nb.index));
                        den += nb.score;
                        used += 1;
                    }
                }
            }
            Axis::User => {
                let raters = self.table.item_ratings(item);
                for nb in self.store.neighbors(user) {
                    if let Ok(k) = raters.binary_search_by_key(&nb.index, |&(v, _)| v) {
                        num += nb.score * (raters[k].1 - self.bias.predict(nb.index, item));
                        den += nb.score;
                        used += 1;
                    }
                }
            }
        }
        if used == 0 || den.abs() < MIN_WEIGHT_SUM {
            CfPrediction { value: base, fallback: true }
        } else {
            CfPrediction {
                value: base + num / den,
                fallback: false,
            }
        }
    }
}

pub fn predict_cf(user: usize, item: usize, p: &CfPredictor<'_>) -> f64 {
    p.predict(user, item).value
}
