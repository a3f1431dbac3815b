//! Pieces shared by the iterative trainers: factor storage and
//! initialisation, the relative-change convergence rule and per-epoch trace
//! records.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Row-major `rows x k` factor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    rows: usize,
    k: usize,
    data: Vec<f64>,
}

impl Factors {
    pub fn zeros(rows: usize, k: usize) -> Self {
        Self::filled(rows, k, 0.0)
    }

    pub fn filled(rows: usize, k: usize, value: f64) -> Self {
        Self {
            rows,
            k,
            data: vec![value; rows * k],
        }
    }

    pub fn from_vec(rows: usize, k: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * k).then_some(Self { rows, k, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.k..(r + 1) * self.k]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.k..(r + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Initial factor values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FactorInit {
    /// Every entry `1/K`.
    #[default]
    Constant,
    /// Entries drawn from `uniform(0, 1/K)`, users first then items.
    Uniform { seed: u64 },
}

impl FactorInit {
    pub fn build(&self, users: usize, items: usize, k: usize) -> (Factors, Factors) {
        let v = 1.0 / k as f64;
        match *self {
            FactorInit::Constant => (Factors::filled(users, k, v), Factors::filled(items, k, v)),
            FactorInit::Uniform { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut draw = |rows: usize| {
                    let data = (0..rows * k).map(|_| rng.random::<f64>() * v).collect();
                    Factors { rows, k, data }
                };
                let p = draw(users);
                let q = draw(items);
                (p, q)
            }
        }
    }
}

/// Which epoch's parameters a trainer returns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectBy {
    /// The epoch with the lowest test MAE (first one on ties). Uses the test
    /// set for model selection.
    #[default]
    MinTestMae,
    /// The last epoch trained.
    Final,
}

impl std::str::FromStr for SelectBy {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "min-test-mae" => Ok(SelectBy::MinTestMae),
            "final" => Ok(SelectBy::Final),
            other => Err(crate::error::Error::Usage(format!("unknown selection rule `{other}`"))),
        }
    }
}

/// `|cur - prev| / prev`. Two zero objectives count as no change.
pub fn relative_change(prev: f64, cur: f64) -> f64 {
    if prev == 0.0 {
        if cur == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (cur - prev).abs() / prev
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub test_mae: Option<f64>,
}

/// Tracks the best epoch under a [`SelectBy`] rule.
pub(crate) struct Selector<M> {
    rule: SelectBy,
    best: Option<(usize, f64, M)>,
}

impl<M: Clone> Selector<M> {
    pub(crate) fn new(rule: SelectBy) -> Self {
        Self { rule, best: None }
    }

    pub(crate) fn offer(&mut self, epoch: usize, test_mae: Option<f64>, model: &M) {
        if self.rule != SelectBy::MinTestMae {
            return;
        }
        if let Some(mae) = test_mae {
            if self.best.as_ref().is_none_or(|(_, best, _)| mae < *best) {
                self.best = Some((epoch, mae, model.clone()));
            }
        }
    }

    /// The selected `(epoch, model)`, or the final one.
    pub(crate) fn finish(self, final_epoch: usize, final_model: M) -> (usize, M) {
        match self.best {
            Some((epoch, _, model)) => (epoch, model),
            None => (final_epoch, final_model),
        }
    }
}
