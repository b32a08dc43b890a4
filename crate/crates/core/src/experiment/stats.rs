use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

/// One-sided Mann-Whitney U test of "x tends to exceed y".
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RankSum {
    /// U statistic of `x`.
    pub u: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Normal approximation with tie and continuity corrections.
pub fn rank_sum_greater(x: &[f64], y: &[f64]) -> RankSum {
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let mut all: Vec<(f64, bool)> = x.iter().map(|&v| (v, true)).chain(y.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let (mut rank_x, mut ties) = (0.0, 0.0);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        rank_x += all[i..=j].iter().filter(|e| e.1).count() as f64 * rank;
        i = j + 1;
    }
    let u = rank_x - nx * (nx + 1.0) / 2.0;
    let nf = n as f64;
    let mean = nx * ny / 2.0;
    let var = if n > 1 {
        nx * ny / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)))
    } else {
        0.0
    };
    if !(var > 0.0) {
        return RankSum { u, z: 0.0, p_value: 1.0 };
    }
    let z = (u - mean - 0.5) / var.sqrt();
    let p_value = Normal::new(0.0, 1.0).map_or(1.0, |d| d.sf(z));
    RankSum { u, z, p_value }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}
