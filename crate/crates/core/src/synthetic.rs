//! Planted-factor statistics: counts whose PMI matrix has known low rank.
//!
//! Counts are `N_ij = N a_i b_j exp(L_ij)` with `L = X Yᵀ / √r` of rank `r`.
//! Whatever the scalings `a`, `b`, PMI is then `L_ij + u_i + v_j`, so its
//! rank is at most `r + 2`. The scalings are fitted by Sinkhorn iterations to
//! give Zipf-like marginals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::CoocStats;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedConfig {
    pub size: usize,
    /// Rank of the planted interaction `L`.
    pub rank: usize,
    /// Standard deviation of the entries of `L`.
    pub scale: f64,
    /// Total count `N`.
    pub total: f64,
    /// Marginals follow `(i + 1)^-zipf`.
    pub zipf: f64,
    /// Rescale every factor row to norm `√r`. The row and column terms `u`,
    /// `v` of PMI are then nearly constant, so PMI is close to `L` itself.
    pub equal_norms: bool,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            size: 100,
            rank: 4,
            scale: 1.0,
            total: 1e6,
            zipf: 0.5,
            equal_norms: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Planted {
    pub stats: CoocStats,
    /// The planted interaction `L`, row-major.
    pub interaction: Vec<f64>,
}

pub fn planted_stats(config: &PlantedConfig) -> Result<Planted> {
    let (v, r) = (config.size, config.rank);
    if v == 0 || r == 0 || r > v {
        return Err(Error::InvalidConfig(format!(
            "planted rank {} does not fit {} words",
            r, v
        )));
    }
    if !(config.total > 0.0) || !(config.scale >= 0.0) {
        return Err(Error::InvalidConfig("planted total and scale must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // uniform on [-√3, √3] has unit variance
    let a = 3f64.sqrt();
    let mut x: Vec<f64> = (0..v * r).map(|_| rng.gen_range(-a..a)).collect();
    let mut y: Vec<f64> = (0..v * r).map(|_| rng.gen_range(-a..a)).collect();
    if config.equal_norms {
        for row in x.chunks_mut(r).chain(y.chunks_mut(r)) {
            let n = row.iter().map(|t| t * t).sum::<f64>().sqrt();
            if n > 0.0 {
                let f = (r as f64).sqrt() / n;
                row.iter_mut().for_each(|t| *t *= f);
            }
        }
    }
    let norm = config.scale / (r as f64).sqrt();
    let mut l = vec![0.0; v * v];
    for i in 0..v {
        for j in 0..v {
            let s: f64 = (0..r).map(|k| x[i * r + k] * y[j * r + k]).sum();
            l[i * v + j] = s * norm;
        }
    }

    let target: Vec<f64> = (0..v).map(|i| ((i + 1) as f64).powf(-config.zipf)).collect();
    let z: f64 = target.iter().sum();
    let target: Vec<f64> = target.iter().map(|t| t / z).collect();
    let kernel: Vec<f64> = l.iter().map(|x| x.exp()).collect();
    let mut row_scale = vec![1.0; v];
    let mut col_scale = vec![1.0; v];
    for _ in 0..200 {
        for i in 0..v {
            let s: f64 = (0..v).map(|j| kernel[i * v + j] * col_scale[j]).sum();
            row_scale[i] = target[i] / s;
        }
        for j in 0..v {
            let s: f64 = (0..v).map(|i| kernel[i * v + j] * row_scale[i]).sum();
            col_scale[j] = target[j] / s;
        }
    }
    let mut counts = vec![0.0; v * v];
    for i in 0..v {
        for j in 0..v {
            counts[i * v + j] = config.total * row_scale[i] * kernel[i * v + j] * col_scale[j];
        }
    }
    Ok(Planted {
        stats: CoocStats::from_dense(v, &counts)?,
        interaction: l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svd::{jacobi_svd, DenseAssocMatrix};

    #[test]
    fn pmi_rank_is_bounded() {
        let cfg = PlantedConfig {
            size: 30,
            rank: 3,
            ..Default::default()
        };
        let p = planted_stats(&cfg).unwrap();
        let pmi: Vec<f64> = (0..30 * 30)
            .map(|k| crate::association::pmi(&p.stats, k / 30, k % 30).unwrap())
            .collect();
        let m = DenseAssocMatrix::from_rows(30, 30, pmi).unwrap();
        let (_, s, _) = jacobi_svd(&m.entries, 30, 30);
        assert!(s[5] < 1e-9 * s[0], "{:?}", &s[..6]);
        assert!(s[2] > 1e-3 * s[0]);
    }

    #[test]
    fn marginals_follow_target() {
        let p = planted_stats(&PlantedConfig::default()).unwrap();
        let n = p.stats.total();
        assert!((n - 1e6).abs() < 1e-3);
        assert!(p.stats.context_marginal(0) > p.stats.context_marginal(50));
    }
}
