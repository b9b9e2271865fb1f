//! Stage two of the alignment: a small 1D convolutional network with spatial
//! attention that turns the windowed beam powers from the coarse stage into a
//! probability profile over window slots, refining the angle estimate to an
//! off-grid value.
//!
//! Everything here is self-contained f64 arithmetic: forward pass, manual
//! reverse-mode gradients, Adam training with cosine-annealed learning rate
//! and early stopping, dataset synthesis through the coarse pipeline, and a
//! checksummed binary weight format.

mod io;
mod net;
mod tensor;
mod train;

pub use io::{load_weights, save_weights};
pub use net::{forward_eval, gradients, Architecture, NetworkParams};
pub use tensor::Tensor;
pub use train::{
    adam_step, generate_dataset, train, AdamState, DatasetReport, TrainConfig, TrainReport,
};

use num_complex::Complex64;

use crate::channel::{grid_angle, ArrayConfig};
use crate::coarse::CoarseResult;
use crate::numerics::{spread_half_width, SpreadParams};
use crate::{Error, Result};

/// One network input: the zero-padded window of normalized beam powers, the
/// validity mask, the grid angles of the window slots (zero in the padding),
/// and the label when known (position of the true beam within the window).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Vec<f64>,
    pub mask: Vec<f64>,
    pub angles: Vec<f64>,
    pub target_index: Option<usize>,
}

/// Fixed network input length for a configuration: the widest window the
/// coarse stage can produce, reached broadside at the minimum range.
pub fn max_input_len(cfg: &ArrayConfig, epsilon: f64) -> Result<usize> {
    let sp = SpreadParams::new(0.0, cfg.r_min_m, 0.0, cfg)?;
    Ok(2 * spread_half_width(sp.delta, epsilon)? + 1)
}

/// Assemble the network input from a measurement sweep and a coarse result:
/// squared magnitudes over the detected window in window order, normalized by
/// the window maximum, zero-padded to `input_len`.
pub fn build_input(
    y: &[Complex64],
    coarse: &CoarseResult,
    input_len: usize,
    cfg: &ArrayConfig,
) -> Result<TrainSample> {
    let valid = coarse.subspace.len();
    if valid > input_len {
        return Err(Error::Numerical(format!(
            "window of {valid} beams exceeds the network input length {input_len}; \
             the range estimate fell below the configured minimum"
        )));
    }
    let mut input = vec![0.0; input_len];
    let mut mask = vec![0.0; input_len];
    let mut angles = vec![0.0; input_len];
    let mut peak = 0.0f64;
    for (slot, &m) in coarse.subspace.iter().enumerate() {
        let p = y[m - 1].norm_sqr();
        input[slot] = p;
        mask[slot] = 1.0;
        angles[slot] = grid_angle(m, cfg);
        peak = peak.max(p);
    }
    if peak > 0.0 {
        for v in input.iter_mut().take(valid) {
            *v /= peak;
        }
    }
    Ok(TrainSample { input, mask, angles, target_index: None })
}

/// Probability-weighted angle readout over the window slots.
pub fn refine_angle(p_hat: &[f64], sample: &TrainSample) -> f64 {
    p_hat.iter().zip(&sample.angles).map(|(p, a)| p * a).sum()
}

/// Diagnostic hard readout: angle of the most probable slot.
pub fn argmax_angle(p_hat: &[f64], sample: &TrainSample) -> f64 {
    let mut best = 0usize;
    for (i, p) in p_hat.iter().enumerate() {
        if *p > p_hat[best] {
            best = i;
        }
    }
    sample.angles[best]
}

/// Cross-entropy against a one-hot target in base-10 logs:
/// `J = -log10(p_hat[target])`.
pub fn loss(p_hat: &[f64], target_index: usize) -> Result<f64> {
    let p = *p_hat
        .get(target_index)
        .ok_or_else(|| Error::Domain(format!("target index {target_index} out of range")))?;
    if p <= 0.0 {
        return Err(Error::Domain(format!(
            "target slot {target_index} carries zero probability (masked position)"
        )));
    }
    Ok(-p.log10())
}
