//! Hidden Markov machinery: joint Gaussian states, Baum-Welch training, the
//! two-level phase/frame-chain model and its log-space forward pass.

pub mod em;
pub mod forward;
pub mod gaussian;
pub mod hierarchy;

pub use em::{em_fit, forward_backward, EmConfig, EmFit, HmmParams};
pub use forward::{init_forward, recognize_phase, LogForwardLattice};
pub use gaussian::{condition_on_sensor, Conditioner, GaussianState};
pub use hierarchy::{
    build_hierarchy, ChainRef, FrameChain, HierarchicalModel, PhaseGroup, PhaseModel, PhaseProfile, ZScore,
    CHAIN_NEXT, CHAIN_SELF, CHAIN_SKIP, PHASE_EXIT, PHASE_NEXT, PHASE_SELF,
};

/// `ln(sum(exp(v)))`, `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_nan() || max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln(exp(a) + exp(b))`.
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}
