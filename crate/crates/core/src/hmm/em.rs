use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::gaussian::GaussianState;
use super::log_sum_exp;
use crate::error::{Error, Result};

/// Ergodic HMM with joint Gaussian emissions.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmParams {
    /// `transition[i][j]` = P(next = j | current = i).
    pub transition: Vec<Vec<f64>>,
    pub prior: Vec<f64>,
    pub states: Vec<GaussianState>,
}

impl HmmParams {
    pub fn n_states(&self) -> usize {
        self.prior.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub n_states: usize,
    pub max_iter: usize,
    /// Stop once the log-likelihood gain per frame drops below this.
    pub tol: f64,
    /// Added to every covariance diagonal.
    pub reg_floor: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            n_states: 8,
            max_iter: 200,
            tol: 1e-6,
            reg_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: HmmParams,
    /// Log-likelihood of the data under the parameters of each iteration.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

impl EmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        self.log_likelihoods.last().copied().unwrap_or(f64::NAN)
    }
}

/// Log forward and backward variables of one sequence plus its
/// log-likelihood. `log_b[t][i]` is the emission log density.
pub fn forward_backward(
    log_prior: &[f64],
    log_trans: &[Vec<f64>],
    log_b: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, f64) {
    let n = log_prior.len();
    let t_len = log_b.len();
    let mut alpha = vec![vec![f64::NEG_INFINITY; n]; t_len];
    let mut buf = vec![0.0; n];
    for i in 0..n {
        alpha[0][i] = log_prior[i] + log_b[0][i];
    }
    for t in 1..t_len {
        for i in 0..n {
            for j in 0..n {
                buf[j] = alpha[t - 1][j] + log_trans[j][i];
            }
            alpha[t][i] = log_sum_exp(&buf) + log_b[t][i];
        }
    }
    let ll = log_sum_exp(&alpha[t_len - 1]);
    let mut beta = vec![vec![0.0; n]; t_len];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for i in 0..n {
            for j in 0..n {
                buf[j] = log_trans[i][j] + log_b[t + 1][j] + beta[t + 1][j];
            }
            beta[t][i] = log_sum_exp(&buf);
        }
    }
    (alpha, beta, ll)
}

/// Log alpha, log beta, log-likelihood and log emissions of one sequence.
type Pass = (Vec<Vec<f64>>, Vec<Vec<f64>>, f64, Vec<Vec<f64>>);

fn ln_matrix(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.iter().map(|v| v.ln()).collect()).collect()
}

/// Weighted mean and floored covariance of the columns of `data`.
fn weighted_moments(data: &DMatrix<f64>, w: &[f64], floor: f64) -> (DVector<f64>, DMatrix<f64>) {
    let d = data.nrows();
    let total: f64 = w.iter().sum();
    let mut mean = DVector::zeros(d);
    for (c, wc) in data.column_iter().zip(w) {
        if *wc != 0.0 {
            mean.axpy(*wc, &c, 1.0);
        }
    }
    mean /= total;
    let mut centered = data.clone();
    for (mut c, wc) in centered.column_iter_mut().zip(w) {
        c -= &mean;
        c *= wc.sqrt();
    }
    let mut cov = &centered * centered.transpose() / total;
    cov = (&cov + cov.transpose()) * 0.5;
    for i in 0..d {
        cov[(i, i)] += floor;
    }
    (mean, cov)
}

/// Baum-Welch fit of an ergodic Gaussian HMM to several sequences of joint
/// feature vectors.
///
/// States start from a uniform temporal split of every sequence; states
/// whose starting means coincide are separated by a tiny seeded jitter.
/// Iteration stops when the per-frame log-likelihood gain falls below
/// `tol` or after `max_iter` iterations.
pub fn em_fit(sequences: &[Vec<Vec<f64>>], dx: usize, config: &EmConfig) -> Result<EmFit> {
    let n = config.n_states;
    if n == 0 {
        return Err(Error::Config("EM needs at least one state".into()));
    }
    if !(config.reg_floor > 0.0) || !(config.tol >= 0.0) {
        return Err(Error::Config(
            "EM floor must be positive and tol non-negative".into(),
        ));
    }
    let seqs: Vec<&Vec<Vec<f64>>> = sequences.iter().filter(|s| !s.is_empty()).collect();
    let total: usize = seqs.iter().map(|s| s.len()).sum();
    if total < n {
        return Err(Error::Data(format!(
            "EM with {n} states needs at least {n} frames, got {total}"
        )));
    }
    let d = seqs[0][0].len();
    if dx > d {
        return Err(Error::Data(format!("dx = {dx} exceeds feature dimension {d}")));
    }
    for f in seqs.iter().flat_map(|s| s.iter()) {
        if f.len() != d {
            return Err(Error::Data("EM frames differ in dimension".into()));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("EM frames contain non-finite values".into()));
        }
    }
    let data = DMatrix::from_iterator(d, total, seqs.iter().flat_map(|s| s.iter()).flatten().copied());
    let first = data.column(0).into_owned();
    if n > 1 && data.column_iter().all(|c| c == first) {
        return Err(Error::Singular {
            state: 1,
            msg: format!("all {total} frames are identical, so {n} states cannot be separated"),
        });
    }
    let offsets: Vec<usize> = seqs
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s.len();
            Some(o)
        })
        .collect();

    // uniform temporal bins
    let mut states = Vec::with_capacity(n);
    let (global_mean, global_cov) = weighted_moments(&data, &vec![1.0; total], config.reg_floor);
    for i in 0..n {
        let mut w = vec![0.0; total];
        for (s, off) in seqs.iter().zip(&offsets) {
            let len = s.len();
            for t in 0..len {
                if t * n / len == i {
                    w[off + t] = 1.0;
                }
            }
        }
        let (mean, cov) = if w.iter().any(|v| *v > 0.0) {
            weighted_moments(&data, &w, config.reg_floor)
        } else {
            (global_mean.clone(), global_cov.clone())
        };
        states.push(GaussianState { mean, cov, dx });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for i in 1..n {
        if (0..i).any(|k| states[k].mean == states[i].mean) {
            for c in 0..d {
                let scale = global_cov[(c, c)].sqrt();
                let z: f64 = StandardNormal.sample(&mut rng);
                states[i].mean[c] += 1e-6 * scale * z;
            }
        }
    }
    let mut params = HmmParams {
        transition: vec![vec![1.0 / n as f64; n]; n],
        prior: vec![1.0 / n as f64; n],
        states,
    };

    let mut lls: Vec<f64> = Vec::new();
    let mut converged = false;
    for iter in 0..config.max_iter.max(1) {
        // E-step
        let log_b_all: Vec<Vec<f64>> = params
            .states
            .par_iter()
            .enumerate()
            .map(|(i, s)| state_log_densities(s, &data, i))
            .collect::<Result<_>>()?;
        let log_pi: Vec<f64> = params.prior.iter().map(|p| p.ln()).collect();
        let log_a = ln_matrix(&params.transition);
        let passes: Vec<Pass> = seqs
            .par_iter()
            .zip(&offsets)
            .map(|(s, off)| {
                let log_b: Vec<Vec<f64>> = (0..s.len())
                    .map(|t| (0..n).map(|i| log_b_all[i][off + t]).collect())
                    .collect();
                let (a, b, ll) = forward_backward(&log_pi, &log_a, &log_b);
                (a, b, ll, log_b)
            })
            .collect();
        let ll: f64 = passes.iter().map(|p| p.2).sum();
        if !ll.is_finite() {
            return Err(Error::Singular {
                state: 0,
                msg: format!("log-likelihood became {ll} at iteration {iter}"),
            });
        }
        log::debug!("EM iteration {iter}: log-likelihood {ll}");
        if let Some(prev) = lls.last() {
            if ll - prev < config.tol * total as f64 {
                lls.push(ll);
                converged = true;
                break;
            }
        }
        lls.push(ll);
        if iter + 1 == config.max_iter {
            break;
        }

        // M-step
        let mut gamma = vec![vec![0.0; total]; n];
        let mut prior = vec![0.0; n];
        let mut xi = vec![vec![0.0; n]; n];
        let mut from = vec![0.0; n];
        for ((alpha, beta, ll_s, log_b), off) in passes.iter().zip(&offsets) {
            let len = alpha.len();
            for t in 0..len {
                for i in 0..n {
                    let g = (alpha[t][i] + beta[t][i] - ll_s).exp();
                    gamma[i][off + t] = g;
                    if t == 0 {
                        prior[i] += g / seqs.len() as f64;
                    }
                    if t + 1 < len {
                        from[i] += g;
                    }
                }
            }
            for t in 0..len.saturating_sub(1) {
                for i in 0..n {
                    for j in 0..n {
                        xi[i][j] +=
                            (alpha[t][i] + log_a[i][j] + log_b[t + 1][j] + beta[t + 1][j] - ll_s).exp();
                    }
                }
            }
        }
        let psum: f64 = prior.iter().sum();
        params.prior = prior.iter().map(|p| p / psum).collect();
        for i in 0..n {
            let row: f64 = xi[i].iter().sum();
            if from[i] > 0.0 && row > 0.0 {
                params.transition[i] = xi[i].iter().map(|v| v / row).collect();
            }
        }
        let updated: Vec<Option<GaussianState>> = gamma
            .par_iter()
            .map(|w| {
                let mass: f64 = w.iter().sum();
                if mass < 1e-300 {
                    return None;
                }
                let (mean, cov) = weighted_moments(&data, w, config.reg_floor);
                Some(GaussianState { mean, cov, dx })
            })
            .collect();
        for (s, u) in params.states.iter_mut().zip(updated) {
            if let Some(u) = u {
                *s = u;
            }
        }
    }
    Ok(EmFit {
        params,
        log_likelihoods: lls,
        converged,
    })
}

/// Log density of every column of `data` under `state`.
pub(crate) fn state_log_densities(
    state: &GaussianState,
    data: &DMatrix<f64>,
    index: usize,
) -> Result<Vec<f64>> {
    let d = state.dim();
    let chol = Cholesky::new(state.cov.clone()).ok_or_else(|| Error::Singular {
        state: index,
        msg: "covariance lost positive definiteness".into(),
    })?;
    let l = chol.l_dirty();
    let mut centered = data.clone();
    for mut c in centered.column_iter_mut() {
        c -= &state.mean;
    }
    let w = l
        .solve_lower_triangular(&centered)
        .ok_or_else(|| Error::Singular {
            state: index,
            msg: "zero pivot in covariance factor".into(),
        })?;
    let log_det: f64 = (0..d).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let c = log_det + d as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(w.column_iter()
        .map(|col| -0.5 * (col.norm_squared() + c))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::Normal;

    fn cfg(n: usize) -> EmConfig {
        EmConfig {
            n_states: n,
            ..EmConfig::default()
        }
    }

    #[test]
    fn one_state_is_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seq: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let fit = em_fit(std::slice::from_ref(&seq), 2, &cfg(1)).unwrap();
        let s = &fit.params.states[0];
        let n = seq.len() as f64;
        for c in 0..3 {
            let m: f64 = seq.iter().map(|f| f[c]).sum::<f64>() / n;
            assert!((s.mean[c] - m).abs() < 1e-12);
            for r in 0..3 {
                let mr: f64 = seq.iter().map(|f| f[r]).sum::<f64>() / n;
                let v: f64 = seq.iter().map(|f| (f[c] - m) * (f[r] - mr)).sum::<f64>() / n;
                let floor = if r == c { 1e-6 } else { 0.0 };
                assert!((s.cov[(c, r)] - v - floor).abs() < 1e-12);
            }
        }
        assert_eq!(fit.params.transition, vec![vec![1.0]]);
    }

    #[test]
    fn recovers_two_separated_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let truth = [[-2.0, 1.0], [3.0, -1.0]];
        let mut seqs = Vec::new();
        for _ in 0..5 {
            let mut state = 0;
            let mut seq = Vec::new();
            for _ in 0..60 {
                if rng.random_bool(0.1) {
                    state = 1 - state;
                }
                seq.push(truth[state].iter().map(|m| m + noise.sample(&mut rng)).collect());
            }
            seqs.push(seq);
        }
        let fit = em_fit(&seqs, 1, &cfg(2)).unwrap();
        let mut means: Vec<Vec<f64>> = fit
            .params
            .states
            .iter()
            .map(|s| s.mean.as_slice().to_vec())
            .collect();
        means.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        for (m, t) in means.iter().zip(truth) {
            for (a, b) in m.iter().zip(t) {
                assert!((a - b).abs() < 0.1, "{means:?}");
            }
        }
        for w in fit.log_likelihoods.windows(2) {
            assert!(w[1] - w[0] >= -1e-9);
        }
    }

    #[test]
    fn identical_frames_are_singular() {
        let seq = vec![vec![1.0, 2.0]; 10];
        match em_fit(std::slice::from_ref(&seq), 1, &cfg(3)) {
            Err(Error::Singular { state, .. }) => assert_eq!(state, 1),
            other => panic!("{other:?}"),
        }
        assert!(em_fit(&[seq], 1, &cfg(1)).is_ok());
    }

    #[test]
    fn too_few_frames_is_an_error() {
        assert!(em_fit(&[vec![vec![0.0]; 2]], 0, &cfg(3)).is_err());
        assert!(em_fit(&[vec![vec![0.0]; 2]], 0, &cfg(0)).is_err());
    }

    #[test]
    fn rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let seq: Vec<Vec<f64>> = (0..50)
            .map(|t| vec![(t as f64 * 0.3).sin() + rng.random_range(-0.1..0.1)])
            .collect();
        let fit = em_fit(&[seq], 0, &cfg(3)).unwrap();
        for row in &fit.params.transition {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((fit.params.prior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
