use super::hierarchy::{
    HierarchicalModel, CHAIN_NEXT, CHAIN_SELF, CHAIN_SKIP, PHASE_EXIT, PHASE_NEXT, PHASE_SELF,
};
use super::{log_add, log_sum_exp};
use crate::error::{Error, Result};

/// Normalized log forward variables over every frame state of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct LogForwardLattice {
    /// `ln a_t(i)`, normalized so the exponentials sum to one.
    pub log_alpha: Vec<f64>,
    /// Sum of the per-step normalizers: `ln p(y_1..y_t)`.
    pub log_likelihood: f64,
    /// Observations consumed.
    pub steps: usize,
    scratch: Vec<f64>,
    emission: Vec<f64>,
}

impl LogForwardLattice {
    pub fn posterior(&self) -> Vec<f64> {
        self.log_alpha.iter().map(|v| v.exp()).collect()
    }
}

/// Prior mass on the chain-initial states; the first observation is applied
/// by the first [`HierarchicalModel::forward_step`].
pub fn init_forward(model: &HierarchicalModel) -> LogForwardLattice {
    let n = model.n_states();
    LogForwardLattice {
        log_alpha: model.initial_distribution().iter().map(|p| p.ln()).collect(),
        log_likelihood: 0.0,
        steps: 0,
        scratch: vec![0.0; n],
        emission: vec![0.0; n],
    }
}

impl HierarchicalModel {
    /// Advances the lattice by one standardized sensor vector.
    ///
    /// Returns [`Error::TrackingLost`] when no state can explain the
    /// observation; the lattice is left untouched in that case.
    pub fn forward_step(&self, lattice: &mut LogForwardLattice, y: &[f64]) -> Result<()> {
        if y.len() != self.dy {
            return Err(Error::Data(format!(
                "sensor vector has {} channels, model expects {}",
                y.len(),
                self.dy
            )));
        }
        let n = self.n_states();
        let mut next = std::mem::take(&mut lattice.scratch);
        next.resize(n, 0.0);
        if lattice.steps == 0 {
            next.copy_from_slice(&lattice.log_alpha);
        } else {
            self.predict(&lattice.log_alpha, &mut next);
        }
        let mut emission = std::mem::take(&mut lattice.emission);
        emission.resize(n, 0.0);
        self.emission_log_densities_into(y, &mut emission);
        for (v, e) in next.iter_mut().zip(&emission) {
            *v += e;
        }
        lattice.emission = emission;
        let norm = log_sum_exp(&next);
        if !norm.is_finite() {
            lattice.scratch = next;
            return Err(Error::TrackingLost);
        }
        for v in next.iter_mut() {
            *v -= norm;
        }
        lattice.scratch = std::mem::replace(&mut lattice.log_alpha, next);
        lattice.log_likelihood += norm;
        lattice.steps += 1;
        Ok(())
    }

    /// Transition part of the recursion: `out[i] = ln sum_j a(j) a_ji`.
    fn predict(&self, alpha: &[f64], out: &mut [f64]) {
        let (ls, ln, lk) = (CHAIN_SELF.ln(), CHAIN_NEXT.ln(), CHAIN_SKIP.ln());
        let p_count = self.phases.len();
        let mut phase_leave = vec![f64::NEG_INFINITY; p_count];
        for (pi, phase) in self.phases.iter().enumerate() {
            for (ci, chain) in phase.chains.iter().enumerate() {
                let off = self.chain_offset(pi, ci);
                let len = chain.len();
                let a = &alpha[off..off + len];
                for k in 0..len {
                    let mut v = a[k] + ls;
                    if k >= 1 {
                        v = log_add(v, a[k - 1] + ln);
                    }
                    if k >= 2 {
                        v = log_add(v, a[k - 2] + lk);
                    }
                    out[off + k] = v;
                }
                // next and skip past the end leave; so does skip from the
                // second to last frame
                let mut leave = a[len - 1] + (CHAIN_NEXT + CHAIN_SKIP).ln();
                if len >= 2 {
                    leave = log_add(leave, a[len - 2] + lk);
                }
                phase_leave[pi] = log_add(phase_leave[pi], leave);
            }
        }
        let mut exit_pool = f64::NEG_INFINITY;
        for (pi, phase) in self.phases.iter().enumerate() {
            exit_pool = log_add(exit_pool, phase_leave[pi] + PHASE_EXIT.ln());
            if phase.successor.is_none() {
                exit_pool = log_add(exit_pool, phase_leave[pi] + PHASE_NEXT.ln());
            }
        }
        let exit_each = exit_pool - (p_count as f64).ln();
        for (pi, phase) in self.phases.iter().enumerate() {
            let mut entry = log_add(phase_leave[pi] + PHASE_SELF.ln(), exit_each);
            for &q in self.predecessors(pi) {
                entry = log_add(entry, phase_leave[q] + PHASE_NEXT.ln());
            }
            let per_chain = entry - (phase.chains.len() as f64).ln();
            for ci in 0..phase.chains.len() {
                let s = self.chain_offset(pi, ci);
                out[s] = log_add(out[s], per_chain);
            }
        }
    }
}

/// Posterior probability of every phase and the most probable one; ties go
/// to the earlier phase in model order.
pub fn recognize_phase(model: &HierarchicalModel, lattice: &LogForwardLattice) -> (usize, Vec<f64>) {
    let logs: Vec<f64> = (0..model.phases.len())
        .map(|p| {
            let (a, b) = model.phase_range(p);
            log_sum_exp(&lattice.log_alpha[a..b])
        })
        .collect();
    let total = log_sum_exp(&logs);
    let post: Vec<f64> = logs.iter().map(|l| (l - total).exp()).collect();
    let mut best = 0;
    for (i, p) in post.iter().enumerate() {
        if *p > post[best] {
            best = i;
        }
    }
    (best, post)
}
