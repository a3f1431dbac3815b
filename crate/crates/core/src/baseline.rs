//! Global, per-user and per-item average statistics and the bias baseline
//! `b(u,i)` shared by every predictor.
//!
//! The baseline is `mean + (user_mean - mean) + (item_mean - mean)`. Summing
//! the three raw averages instead would count the global mean three times, so
//! that reading is kept only as an opt-in [`BaselineMode::LiteralSum`] for
//! comparison runs.

use serde::{Deserialize, Serialize};

use crate::dataset::RatingsTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    /// `mean + user_offset + item_offset`.
    #[default]
    Offsets,
    /// `mean + user_mean + item_mean`.
    LiteralSum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasModel {
    pub global_mean: f64,
    pub user_offset: Vec<f64>,
    pub item_offset: Vec<f64>,
    pub mode: BaselineMode,
}

impl BiasModel {
    /// Model from explicit per-entity means. Offsets are `mean - global_mean`.
    pub fn from_means(global_mean: f64, user_means: &[f64], item_means: &[f64]) -> Self {
        Self {
            global_mean,
            user_offset: user_means.iter().map(|m| m - global_mean).collect(),
            item_offset: item_means.iter().map(|m| m - global_mean).collect(),
            mode: BaselineMode::Offsets,
        }
    }

    pub fn with_mode(mut self, mode: BaselineMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn user_offset(&self, user: usize) -> f64 {
        self.user_offset.get(user).copied().unwrap_or(0.0)
    }

    pub fn item_offset(&self, item: usize) -> f64 {
        self.item_offset.get(item).copied().unwrap_or(0.0)
    }

    /// `global_mean + user_offset`; the global mean for unseen users.
    pub fn user_mean(&self, user: usize) -> f64 {
        self.global_mean + self.user_offset(user)
    }

    pub fn item_mean(&self, item: usize) -> f64 {
        self.global_mean + self.item_offset(item)
    }

    pub fn predict(&self, user: usize, item: usize) -> f64 {
        match self.mode {
            BaselineMode::Offsets => self.global_mean + self.user_offset(user) + self.item_offset(item),
            BaselineMode::LiteralSum => self.global_mean + self.user_mean(user) + self.item_mean(item),
        }
    }
}

pub fn fit_bias(table: &RatingsTable) -> Result<BiasModel> {
    let global_mean = table
        .mean_rating()
        .ok_or_else(|| Error::Config("cannot fit bias model on an empty table".into()))?;
    let offset = |list: &[(usize, f64)]| {
        if list.is_empty() {
            0.0
        } else {
            list.iter().map(|&(_, r)| r).sum::<f64>() / list.len() as f64 - global_mean
        }
    };
    let user_offset = (0..table.num_users()).map(|u| offset(table.user_ratings(u))).collect();
    let item_offset = (0..table.num_items()).map(|i| offset(table.item_ratings(i))).collect();
    Ok(BiasModel {
        global_mean,
        user_offset,
        item_offset,
        mode: BaselineMode::Offsets,
    })
}

pub fn predict_baseline(user: usize, item: usize, bias: &BiasModel) -> f64 {
    bias.predict(user, item)
}
