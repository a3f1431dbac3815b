//! Seeded synthetic rating data with a known generative structure.
//!
//! Each rating is `clamp(5 + wb·(bu + bi) + wf·(p_u · q_i) + wn·g(u, c(i)) + noise, 0, 10)`
//! where `g` is a per-user affinity for the item's cluster `c(i)` (the
//! signal neighbourhood methods pick up) and `(wb, wf, wn)` is the user's
//! mixture profile. The first item factor coordinate is fixed at 1, so the
//! factor signal keeps its rank after any constant shift.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{build_dataset, Dataset, RawRating, RATING_MAX, RATING_MIN};
use crate::error::{Error, Result};

const CENTER: f64 = 5.0;
const TRAIN_FRACTION: f64 = 0.9;
const ITEMS_PER_CLUSTER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mixture {
    PureBias,
    PureFactor,
    PureNeighbor,
    /// The same `[bias, factor, neighbour]` weights for every user.
    Fixed([f64; 3]),
    /// Weights drawn per user from a flat Dirichlet, scaled to sum to 3.
    PerUser,
}

impl std::str::FromStr for Mixture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pure-bias" => Ok(Mixture::PureBias),
            "pure-factor" => Ok(Mixture::PureFactor),
            "pure-neighbor" => Ok(Mixture::PureNeighbor),
            "per-user" => Ok(Mixture::PerUser),
            other => {
                let w: Vec<f64> = other
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Usage(format!("unknown mixture `{other}`")))?;
                match w.as_slice() {
                    [b, f, n] => Ok(Mixture::Fixed([*b, *f, *n])),
                    _ => Err(Error::Usage(format!("mixture weights need 3 values, got `{other}`"))),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub k_true: usize,
    pub density: f64,
    pub noise_sd: f64,
    pub mixture: Mixture,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub train_raw: Vec<RawRating>,
    pub test_raw: Vec<RawRating>,
    /// Per-user `[bias, factor, neighbour]` weights used by the generator.
    pub user_weights: Vec<[f64; 3]>,
    /// Ratings that hit the scale bounds.
    pub clamped: usize,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    Ok(generate_synthetic_detailed(spec)?.dataset)
}

pub fn generate_synthetic_detailed(spec: &SyntheticSpec) -> Result<Synthetic> {
    let &SyntheticSpec {
        users: m,
        items: n,
        k_true: k,
        density,
        noise_sd,
        mixture,
        seed,
    } = spec;
    if m == 0 || n == 0 {
        return Err(Error::Usage(format!("degenerate size {m}x{n}")));
    }
    if k == 0 {
        return Err(Error::Usage("k_true must be >= 1".into()));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Usage(format!("density must be in (0, 1], got {density}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::Usage(format!("noise_sd must be finite and >= 0, got {noise_sd}")));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|_| Error::Usage(format!("invalid noise_sd {noise_sd}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals = |count: usize, sd: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..count).map(|_| sd * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
    };
    let user_bias = normals(m, 1.0, &mut rng);
    let item_bias = normals(n, 1.0, &mut rng);
    let p = normals(m * k, 1.0 / (k as f64).sqrt(), &mut rng);
    let mut q = normals(n * k, 1.0, &mut rng);
    for i in 0..n {
        q[i * k] = 1.0;
    }
    let clusters = n.div_ceil(ITEMS_PER_CLUSTER).max(1);
    let affinity = normals(m * clusters, 1.0, &mut rng);
    let user_weights: Vec<[f64; 3]> = (0..m)
        .map(|_| match mixture {
            Mixture::PureBias => [1.0, 0.0, 0.0],
            Mixture::PureFactor => [0.0, 1.0, 0.0],
            Mixture::PureNeighbor => [0.0, 0.0, 1.0],
            Mixture::Fixed(w) => w,
            Mixture::PerUser => {
                let g: [f64; 3] = std::array::from_fn(|_| Exp1.sample(&mut rng));
                let s: f64 = g.iter().sum();
                g.map(|x| 3.0 * x / s)
            }
        })
        .collect();

    let mut cells = Vec::new();
    let mut clamped = 0;
    for u in 0..m {
        let [wb, wf, wn] = user_weights[u];
        for i in 0..n {
            if density < 1.0 && rng.random::<f64>() >= density {
                continue;
            }
            let factor: f64 = (0..k).map(|d| p[u * k + d] * q[i * k + d]).sum();
            let neighbor = affinity[u * clusters + i % clusters];
            let e = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let raw = CENTER + wb * (user_bias[u] + item_bias[i]) + wf * factor + wn * neighbor + e;
            let r = raw.clamp(RATING_MIN, RATING_MAX);
            if r != raw {
                clamped += 1;
            }
            cells.push((u, i, r));
        }
    }
    cells.shuffle(&mut rng);
    let n_train = ((cells.len() as f64) * TRAIN_FRACTION).ceil() as usize;
    let to_raw = |(pos, &(u, i, r)): (usize, &(usize, usize, f64))| RawRating::new(format!("u{u}"), format!("i{i}"), r, pos as i64);
    let train_raw: Vec<RawRating> = cells[..n_train].iter().enumerate().map(to_raw).collect();
    let test_raw: Vec<RawRating> = cells[n_train..].iter().enumerate().map(to_raw).collect();
    let dataset = build_dataset(&train_raw, &test_raw)?;
    Ok(Synthetic {
        dataset,
        train_raw,
        test_raw,
        user_weights,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mixture: Mixture) -> SyntheticSpec {
        SyntheticSpec {
            users: 30,
            items: 20,
            k_true: 2,
            density: 0.5,
            noise_sd: 0.3,
            mixture,
            seed: 11,
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_synthetic(&spec(Mixture::PerUser)).unwrap();
        let b = generate_synthetic(&spec(Mixture::PerUser)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 12, ..spec(Mixture::PerUser) }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_is_ninety_ten_and_pruned() {
        let s = generate_synthetic_detailed(&spec(Mixture::PerUser)).unwrap();
        let total = s.train_raw.len() + s.test_raw.len();
        assert_eq!(s.train_raw.len(), ((total as f64) * 0.9).ceil() as usize);
        assert!(s.dataset.test.len() <= s.test_raw.len());
        assert!(s.dataset.train.triples().iter().all(|t| (0.0..=10.0).contains(&t.value)));
    }

    #[test]
    fn per_user_weights_sum_to_three() {
        let s = generate_synthetic_detailed(&spec(Mixture::PerUser)).unwrap();
        for w in &s.user_weights {
            assert!((w.iter().sum::<f64>() - 3.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn degenerate_specs() {
        assert!(generate_synthetic(&SyntheticSpec { users: 0, ..spec(Mixture::PureBias) }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { k_true: 0, ..spec(Mixture::PureBias) }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { density: 0.0, ..spec(Mixture::PureBias) }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { density: 1.5, ..spec(Mixture::PureBias) }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { noise_sd: -1.0, ..spec(Mixture::PureBias) }).is_err());
    }

    #[test]
    fn mixture_parsing() {
        assert_eq!("per-user".parse::<Mixture>().unwrap(), Mixture::PerUser);
        assert_eq!("1,0.5,0".parse::<Mixture>().unwrap(), Mixture::Fixed([1.0, 0.5, 0.0]));
        assert!("1,2".parse::<Mixture>().is_err());
    }
}
