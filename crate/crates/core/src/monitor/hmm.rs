//! Left-to-right hidden Markov model with diagonal Gaussian emissions,
//! fitted by Baum-Welch in log space.

use serde::{Deserialize, Serialize};

use crate::monitor::MonitorError;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn logsumexp(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmConfig {
    pub n_states: usize,
    pub max_iterations: usize,
    /// Stop when the total log-likelihood improves by less than this.
    pub tolerance: f64,
    /// Per-dimension standard-deviation floor.
    pub std_floor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHmm {
    #[serde(with = "log_prob")]
    pub log_start: Vec<f64>,
    /// Row-stochastic in log space; only self and next-state entries are finite.
    #[serde(with = "log_prob_rows")]
    pub log_trans: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl GaussianHmm {
    pub fn n_states(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn log_emission(&self, j: usize, x: &[f64]) -> f64 {
        self.log_emission_clipped(j, x, f64::INFINITY)
    }

    /// Emission log-density with every standardized residual clipped to
    /// `±z_clip`, which bounds the penalty any one channel can add.
    pub fn log_emission_clipped(&self, j: usize, x: &[f64], z_clip: f64) -> f64 {
        let mut s = 0.0;
        for d in 0..x.len() {
            let v = self.vars[j][d];
            let z = ((x[d] - self.means[j][d]) / v.sqrt()).abs().min(z_clip);
            s -= 0.5 * (z * z + LN_2PI + v.ln());
        }
        s
    }

    /// Uniform segmentation of each sequence into left-to-right states.
    pub fn initialize(seqs: &[Vec<Vec<f64>>], cfg: &HmmConfig) -> Result<Self, MonitorError> {
        let n = cfg.n_states;
        let dim = cfg.std_floor.len();
        if n == 0 || seqs.iter().any(|s| s.is_empty()) {
            return Err(MonitorError::InvalidData("sequences must be nonempty".into()));
        }
        if seqs.iter().flatten().any(|x| x.len() != dim || !x.iter().all(|v| v.is_finite())) {
            return Err(MonitorError::InvalidData(format!("observations must be finite with dimension {dim}")));
        }
        let mut sum = vec![vec![0.0; dim]; n];
        let mut sq = vec![vec![0.0; dim]; n];
        let mut count = vec![0.0f64; n];
        for s in seqs {
            for (t, x) in s.iter().enumerate() {
                let k = (t * n / s.len()).min(n - 1);
                count[k] += 1.0;
                for d in 0..dim {
                    sum[k][d] += x[d];
                    sq[k][d] += x[d] * x[d];
                }
            }
        }
        let mut means = vec![vec![0.0; dim]; n];
        let mut vars = vec![vec![0.0; dim]; n];
        for k in 0..n {
            // a state with no samples borrows its left neighbor
            let src = (0..=k).rev().find(|&i| count[i] > 0.0).unwrap_or(0);
            let c = count[src].max(1.0);
            for d in 0..dim {
                let m = sum[src][d] / c;
                means[k][d] = m;
                vars[k][d] = (sq[src][d] / c - m * m).max(cfg.std_floor[d].powi(2));
            }
        }
        let mean_len = seqs.iter().map(|s| s.len()).sum::<usize>() as f64 / seqs.len() as f64;
        let stay = (1.0 - n as f64 / mean_len).clamp(0.5, 0.99);
        let mut log_trans = vec![vec![f64::NEG_INFINITY; n]; n];
        for i in 0..n {
            if i + 1 < n {
                log_trans[i][i] = stay.ln();
                log_trans[i][i + 1] = (1.0 - stay).ln();
            } else {
                log_trans[i][i] = 0.0;
            }
        }
        let mut log_start = vec![f64::NEG_INFINITY; n];
        log_start[0] = 0.0;
        Ok(Self { log_start, log_trans, means, vars })
    }

    fn emissions(&self, seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
        seq.iter().map(|x| (0..self.n_states()).map(|j| self.log_emission(j, x)).collect()).collect()
    }

    fn forward(&self, b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.n_states();
        let mut alpha = vec![vec![f64::NEG_INFINITY; n]; b.len()];
        for j in 0..n {
            alpha[0][j] = self.log_start[j] + b[0][j];
        }
        for t in 1..b.len() {
            for j in 0..n {
                alpha[t][j] = logsumexp((0..n).map(|i| alpha[t - 1][i] + self.log_trans[i][j])) + b[t][j];
            }
        }
        alpha
    }

    fn backward(&self, b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.n_states();
        let len = b.len();
        let mut beta = vec![vec![0.0; n]; len];
        for t in (0..len - 1).rev() {
            for i in 0..n {
                beta[t][i] = logsumexp((0..n).map(|j| self.log_trans[i][j] + b[t + 1][j] + beta[t + 1][j]));
            }
        }
        beta
    }

    pub fn log_likelihood(&self, seq: &[Vec<f64>]) -> f64 {
        if seq.is_empty() {
            return 0.0;
        }
        let alpha = self.forward(&self.emissions(seq));
        logsumexp(alpha[alpha.len() - 1].iter().cloned())
    }

    /// Baum-Welch from the uniform segmentation.
    pub fn fit(seqs: &[Vec<Vec<f64>>], cfg: &HmmConfig) -> Result<(Self, FitReport), MonitorError> {
        let mut model = Self::initialize(seqs, cfg)?;
        let n = cfg.n_states;
        let dim = cfg.std_floor.len();
        let mut prev = f64::NEG_INFINITY;
        let mut report = FitReport { iterations: 0, log_likelihood: prev };
        for it in 1..=cfg.max_iterations {
            let mut start = vec![f64::NEG_INFINITY; n];
            let mut trans = vec![vec![f64::NEG_INFINITY; n]; n];
            let mut occ = vec![0.0; n];
            let mut sum = vec![vec![0.0; dim]; n];
            let mut sq = vec![vec![0.0; dim]; n];
            let mut total = 0.0;
            for s in seqs {
                let b = model.emissions(s);
                let alpha = model.forward(&b);
                let beta = model.backward(&b);
                let ll = logsumexp(alpha[s.len() - 1].iter().cloned());
                total += ll;
                for t in 0..s.len() {
                    for j in 0..n {
                        let g = (alpha[t][j] + beta[t][j] - ll).exp();
                        if t == 0 {
                            start[j] = logsumexp([start[j], alpha[0][j] + beta[0][j] - ll]);
                        }
                        occ[j] += g;
                        for d in 0..dim {
                            sum[j][d] += g * s[t][d];
                            sq[j][d] += g * s[t][d] * s[t][d];
                        }
                    }
                    if t + 1 < s.len() {
                        for i in 0..n {
                            for j in [i, i + 1] {
                                if j < n && model.log_trans[i][j].is_finite() {
                                    let xi = alpha[t][i] + model.log_trans[i][j] + b[t + 1][j] + beta[t + 1][j] - ll;
                                    trans[i][j] = logsumexp([trans[i][j], xi]);
                                }
                            }
                        }
                    }
                }
            }
            report = FitReport { iterations: it, log_likelihood: total };
            if total - prev < cfg.tolerance && it > 1 {
                break;
            }
            prev = total;

            let z = logsumexp(start.iter().cloned());
            model.log_start = start.iter().map(|s| s - z).collect();
            for i in 0..n {
                let z = logsumexp(trans[i].iter().cloned());
                if z.is_finite() {
                    for j in 0..n {
                        model.log_trans[i][j] = trans[i][j] - z;
                    }
                }
                if occ[i] > 1e-9 {
                    for d in 0..dim {
                        let m = sum[i][d] / occ[i];
                        model.means[i][d] = m;
                        model.vars[i][d] = (sq[i][d] / occ[i] - m * m).max(cfg.std_floor[d].powi(2));
                    }
                }
            }
        }
        Ok((model, report))
    }

    /// Log state distribution one step ahead of the filtered `alpha`, or
    /// the start distribution before the first observation.
    pub fn predict(&self, log_alpha: Option<&[f64]>) -> Vec<f64> {
        let n = self.n_states();
        match log_alpha {
            None => self.log_start.clone(),
            Some(a) => (0..n).map(|j| logsumexp((0..n).map(|i| a[i] + self.log_trans[i][j]))).collect(),
        }
    }

    /// One filtering step: returns the normalized posterior and the
    /// clipped predictive log-likelihood of `x`.
    pub fn filter_step(&self, log_alpha: Option<&[f64]>, x: &[f64], z_clip: f64) -> (Vec<f64>, f64) {
        let pred = self.predict(log_alpha);
        let joint: Vec<f64> = pred.iter().enumerate().map(|(j, p)| p + self.log_emission_clipped(j, x, z_clip)).collect();
        let ll = logsumexp(joint.iter().cloned());
        (joint.iter().map(|v| v - ll).collect(), ll)
    }
}

/// JSON has no infinities; impossible transitions are written as null.
mod log_prob {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn encode(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().map(|x| x.is_finite().then_some(*x)).collect()
    }

    pub fn decode(v: Vec<Option<f64>>) -> Vec<f64> {
        v.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect()
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        encode(v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(decode(Vec::deserialize(d)?))
    }
}

mod log_prob_rows {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|r| super::log_prob::encode(r)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        Ok(Vec::<Vec<Option<f64>>>::deserialize(d)?.into_iter().map(super::log_prob::decode).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> HmmConfig {
        HmmConfig { n_states: 3, max_iterations: 200, tolerance: 1e-4, std_floor: vec![0.05, 0.05] }
    }

    fn ramp(len: usize, phase: f64) -> Vec<Vec<f64>> {
        (0..len)
            .map(|t| {
                let level = if t < len / 3 { 0.0 } else if t < 2 * len / 3 { 1.0 } else { 3.0 };
                vec![level + 0.01 * (t as f64 + phase).sin(), t as f64 / len as f64]
            })
            .collect()
    }

    #[test]
    fn fitted_model_prefers_the_true_order() {
        let seqs: Vec<_> = (0..10).map(|_| ramp(30, 0.0)).collect();
        let (m, rep) = GaussianHmm::fit(&seqs, &cfg()).unwrap();
        assert!(rep.iterations >= 1 && rep.log_likelihood.is_finite());
        let mut permuted = seqs[0].clone();
        permuted.reverse();
        assert!(m.log_likelihood(&seqs[0]) > m.log_likelihood(&permuted));
    }

    #[test]
    fn training_is_deterministic() {
        let seqs: Vec<_> = (0..10).map(|k| ramp(30 + k, k as f64)).collect();
        let a = GaussianHmm::fit(&seqs, &cfg()).unwrap().0;
        let b = GaussianHmm::fit(&seqs, &cfg()).unwrap().0;
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn em_never_decreases_likelihood() {
        let seqs: Vec<_> = (0..10).map(|k| ramp(40 + 2 * k, k as f64)).collect();
        let mut last = f64::NEG_INFINITY;
        for iters in 1..8 {
            let c = HmmConfig { max_iterations: iters, tolerance: f64::NEG_INFINITY, ..cfg() };
            let (m, _) = GaussianHmm::fit(&seqs, &c).unwrap();
            let ll: f64 = seqs.iter().map(|s| m.log_likelihood(s)).sum();
            assert!(ll >= last - 1e-6, "{ll} < {last}");
            last = ll;
        }
    }

    #[test]
    fn variances_respect_the_floor() {
        let seqs: Vec<_> = (0..10).map(|_| vec![vec![1.0, 2.0]; 20]).collect();
        let (m, _) = GaussianHmm::fit(&seqs, &cfg()).unwrap();
        for v in m.vars.iter().flatten() {
            assert!(*v >= 0.05f64.powi(2) - 1e-18);
        }
    }

    #[test]
    fn clipping_bounds_the_penalty() {
        let seqs: Vec<_> = (0..10).map(|_| ramp(30, 0.0)).collect();
        let (m, _) = GaussianHmm::fit(&seqs, &cfg()).unwrap();
        let near = vec![m.means[1][0], m.means[1][1]];
        let far = vec![1e6, near[1]];
        let gap = m.log_emission_clipped(1, &near, 4.0) - m.log_emission_clipped(1, &far, 4.0);
        assert!(gap <= 8.0 + 1e-9);
    }

    #[test]
    fn filter_matches_forward_likelihood() {
        let seqs: Vec<_> = (0..10).map(|k| ramp(30, k as f64)).collect();
        let (m, _) = GaussianHmm::fit(&seqs, &cfg()).unwrap();
        let mut alpha: Option<Vec<f64>> = None;
        let mut total = 0.0;
        for x in &seqs[3] {
            let (a, ll) = m.filter_step(alpha.as_deref(), x, f64::INFINITY);
            total += ll;
            alpha = Some(a);
        }
        assert!((total - m.log_likelihood(&seqs[3])).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let seqs = vec![vec![vec![1.0]]; 10];
        assert!(matches!(GaussianHmm::fit(&seqs, &cfg()), Err(MonitorError::InvalidData(_))));
    }
}
