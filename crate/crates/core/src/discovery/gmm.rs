use std::f64::consts::PI;

use super::{compact, kmeans, ClusterAssignment, ClusterError, ClusteringConfig};
use crate::embedding::EmbeddingMatrix;

const VAR_FLOOR: f64 = 1e-6;

struct Mixture {
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Responsibilities and total log-likelihood under `mix`.
fn e_step(rows: &[Vec<f64>], mix: &Mixture) -> (Vec<Vec<f64>>, f64) {
    let k = mix.means.len();
    // per-component constant: -0.5 Σ_d ln(2π σ²_d)
    let consts: Vec<f64> = mix
        .vars
        .iter()
        .map(|v| -0.5 * v.iter().map(|s| (2.0 * PI * s).ln()).sum::<f64>())
        .collect();
    let mut resp = Vec::with_capacity(rows.len());
    let mut ll = 0.0;
    let mut logp = vec![0.0; k];
    for x in rows {
        for c in 0..k {
            let quad: f64 = x
                .iter()
                .zip(&mix.means[c])
                .zip(&mix.vars[c])
                .map(|((xi, mu), s)| (xi - mu) * (xi - mu) / s)
                .sum();
            logp[c] = mix.log_weights[c] + consts[c] - 0.5 * quad;
        }
        let lse = log_sum_exp(&logp);
        ll += lse;
        resp.push(logp.iter().map(|lp| (lp - lse).exp()).collect());
    }
    (resp, ll)
}

fn m_step(rows: &[Vec<f64>], resp: &[Vec<f64>], prev: &Mixture) -> Mixture {
    let n = rows.len() as f64;
    let k = prev.means.len();
    let dim = prev.means[0].len();
    let mut mix = Mixture {
        log_weights: vec![f64::NEG_INFINITY; k],
        means: prev.means.clone(),
        vars: prev.vars.clone(),
    };
    for c in 0..k {
        let nk: f64 = resp.iter().map(|r| r[c]).sum();
        if nk.is_nan() || nk <= 0.0 {
            // a component with no mass contributes nothing; keep its shape
            continue;
        }
        mix.log_weights[c] = (nk / n).ln();
        let mut mu = vec![0.0; dim];
        for (x, r) in rows.iter().zip(resp) {
            for (m, xi) in mu.iter_mut().zip(x) {
                *m += r[c] * xi;
            }
        }
        mu.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; dim];
        for (x, r) in rows.iter().zip(resp) {
            for ((v, xi), m) in var.iter_mut().zip(x).zip(&mu) {
                *v += r[c] * (xi - m) * (xi - m);
            }
        }
        var.iter_mut().for_each(|v| *v = (*v / nk).max(VAR_FLOOR));
        mix.means[c] = mu;
        mix.vars[c] = var;
    }
    mix
}

/// Diagonal-covariance Gaussian mixture fit by EM, initialised from the
/// k-means solution for the same config. Points are hard-assigned to their
/// most responsible component; the objective is the final log-likelihood.
pub fn gmm_em(x: &EmbeddingMatrix, config: &ClusteringConfig) -> Result<ClusterAssignment, ClusterError> {
    config.fixed_k()?;
    let init = kmeans(x, config)?;
    let rows = x.rows();
    let n = rows.len() as f64;
    let dim = x.dim();

    let sizes = init.sizes();
    let mut vars = vec![vec![0.0; dim]; init.k_effective];
    for (r, &l) in rows.iter().zip(&init.labels) {
        for ((v, xi), m) in vars[l].iter_mut().zip(r).zip(&init.centroids[l]) {
            *v += (xi - m) * (xi - m);
        }
    }
    for (v, &s) in vars.iter_mut().zip(&sizes) {
        v.iter_mut().for_each(|x| *x = (*x / s as f64).max(VAR_FLOOR));
    }
    let mut mix = Mixture {
        log_weights: sizes.iter().map(|&s| (s as f64 / n).ln()).collect(),
        means: init.centroids.clone(),
        vars,
    };

    let (mut resp, mut ll) = e_step(rows, &mix);
    let mut trace = vec![ll];
    let mut iterations = 0;
    for it in 1..=config.max_iter {
        mix = m_step(rows, &resp, &mix);
        let (next_resp, next_ll) = e_step(rows, &mix);
        resp = next_resp;
        trace.push(next_ll);
        iterations = it;
        let gain = next_ll - ll;
        ll = next_ll;
        if gain < config.tol * ll.abs().max(1.0) {
            break;
        }
    }

    let hard: Vec<usize> = resp
        .iter()
        .map(|r| {
            let mut best = 0;
            for c in 1..r.len() {
                if r[c] > r[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    let (labels, kept) = compact(&hard, mix.means.len());
    Ok(ClusterAssignment {
        ids: x.ids().to_vec(),
        labels,
        k_effective: kept.len(),
        centroids: kept.iter().map(|&c| mix.means[c].clone()).collect(),
        objective: ll,
        iterations,
        seed_used: init.seed_used,
        trace,
    })
}
