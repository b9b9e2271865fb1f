//! Training: Adam with cosine-annealed learning rate, early stopping on
//! validation loss, and dataset synthesis through the coarse pipeline.

use rayon::prelude::*;

use super::net::{
    backward_batch, batch_loss, draw_dropout, forward_batch, Architecture, BnMode, NetworkParams,
};
use super::{build_input, max_input_len, TrainSample};
use crate::channel::{channel, dbm_to_mw, measure, nearest_grid_index, DftMatrix, UePosition};
use crate::coarse::{coarse_align, default_gamma};
use crate::rng::{StreamTag, TrialRng};
use crate::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const BN_MOMENTUM: f64 = 0.1;

/// First/second moment accumulators for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: NetworkParams,
    v: NetworkParams,
    t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn step(&self) -> u64 {
        self.t
    }
}

/// One Adam update over every trainable tensor.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut AdamState,
    lr: f64,
) {
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    let mut p = params.trainable_mut();
    let g = grads.trainable();
    let mut m = state.m.trainable_mut();
    let mut v = state.v.trainable_mut();
    for idx in 0..p.len() {
        debug_assert_eq!(p[idx].0, g[idx].0);
        let (pt, gt) = (&mut p[idx].1, &g[idx].1);
        let (mt, vt) = (&mut m[idx].1, &mut v[idx].1);
        for e in 0..gt.len() {
            let grad = gt.data[e];
            mt.data[e] = ADAM_BETA1 * mt.data[e] + (1.0 - ADAM_BETA1) * grad;
            vt.data[e] = ADAM_BETA2 * vt.data[e] + (1.0 - ADAM_BETA2) * grad * grad;
            let m_hat = mt.data[e] / bc1;
            let v_hat = vt.data[e] / bc2;
            pt.data[e] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Hard cap on epochs (annealing horizon).
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate; cosine-annealed to zero over `epochs`.
    pub lr: f64,
    /// Early-stopping patience in epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
    /// Fraction of the dataset held out for validation.
    pub val_fraction: f64,
    /// Use the process-wide thread pool for batch work. Results are
    /// bit-identical at any worker count; off means a one-thread pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            patience: 10,
            seed: 1,
            val_fraction: 0.1,
            parallel: false,
        }
    }
}

/// Per-run training summary.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
}

fn cosine_lr(base: f64, epoch: usize, horizon: usize) -> f64 {
    let t = epoch as f64 / horizon.max(1) as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

fn update_running_stats(params: &mut NetworkParams, stats: &[(Vec<f64>, Vec<f64>)]) {
    let targets: [(&mut super::tensor::Tensor, &mut super::tensor::Tensor); 5] = {
        let [c1, c2, c3] = &mut params.conv;
        [
            (&mut c1.bn_mean, &mut c1.bn_var),
            (&mut c2.bn_mean, &mut c2.bn_var),
            (&mut c3.bn_mean, &mut c3.bn_var),
            (&mut params.fc1.bn_mean, &mut params.fc1.bn_var),
            (&mut params.fc2.bn_mean, &mut params.fc2.bn_var),
        ]
    };
    for ((mean_t, var_t), (mean_b, var_b)) in targets.into_iter().zip(stats) {
        for (r, b) in mean_t.data.iter_mut().zip(mean_b) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in var_t.data.iter_mut().zip(var_b) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

fn mean_eval_loss(params: &NetworkParams, set: &[&TrainSample]) -> Result<f64> {
    let mut acc = 0.0;
    for s in set {
        let cache = forward_batch(params, &[s], BnMode::Running, &None)?;
        acc += batch_loss(&cache, &[s])?;
    }
    Ok(acc / set.len() as f64)
}

/// Train a network on labeled samples. Deterministic for a fixed seed at any
/// worker count; returns the parameters that achieved the best validation
/// loss together with the loss history.
pub fn train(
    dataset: &[TrainSample],
    arch: Architecture,
    tc: &TrainConfig,
) -> Result<(NetworkParams, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Domain("training dataset is empty".into()));
    }
    for (i, s) in dataset.iter().enumerate() {
        if s.target_index.is_none() {
            return Err(Error::Domain(format!("sample {i} lacks a target")));
        }
        if s.input.len() != arch.input_len {
            return Err(Error::Domain(format!(
                "sample {i} length {} does not match input length {}",
                s.input.len(),
                arch.input_len
            )));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(if tc.parallel { crate::worker_count() } else { 1 })
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| train_inner(dataset, arch, tc))
}

fn train_inner(
    dataset: &[TrainSample],
    arch: Architecture,
    tc: &TrainConfig,
) -> Result<(NetworkParams, TrainReport)> {
    // Deterministic split: shuffle indices once, carve off the tail.
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffle_rng = TrialRng::new(tc.seed, 0, StreamTag::Shuffle);
    shuffle_rng.shuffle(&mut order);
    let n_val = ((dataset.len() as f64 * tc.val_fraction) as usize).min(dataset.len() - 1);
    let (train_idx, val_idx) = order.split_at(dataset.len() - n_val);
    let train_set: Vec<&TrainSample> = train_idx.iter().map(|&i| &dataset[i]).collect();
    let val_set: Vec<&TrainSample> = val_idx.iter().map(|&i| &dataset[i]).collect();

    let mut params = NetworkParams::init(arch, tc.seed);
    let mut adam = AdamState::new(&params);
    let features = arch.feature_dim();

    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut bad_epochs = 0usize;
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut step = 0u64;

    let mut epochs_run = 0usize;
    for epoch in 0..tc.epochs {
        epochs_run = epoch + 1;
        let lr = cosine_lr(tc.lr, epoch, tc.epochs);
        let mut idx: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = TrialRng::new(tc.seed, epoch as u64 + 1, StreamTag::Shuffle);
        rng.shuffle(&mut idx);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in idx.chunks(tc.batch_size.max(1)) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| train_set[i]).collect();
            let mut drop_rng = TrialRng::new(tc.seed, step, StreamTag::Dropout);
            let drop = draw_dropout(batch.len(), features, &mut drop_rng);
            let cache = forward_batch(&params, &batch, BnMode::Batch, &drop)?;
            let loss = batch_loss(&cache, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged: non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            let grads = backward_batch(&params, &cache, &batch, &drop)?;
            adam_step(&mut params, &grads, &mut adam, lr);
            update_running_stats(&mut params, &cache.batch_stats);
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        train_losses.push(epoch_loss / batches.max(1) as f64);

        let val_loss = if val_set.is_empty() {
            *train_losses.last().unwrap()
        } else {
            mean_eval_loss(&params, &val_set)?
        };
        val_losses.push(val_loss);
        if val_loss + 1e-12 < best_val {
            best_val = val_loss;
            best = params.clone();
            best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > tc.patience {
                break;
            }
        }
    }

    Ok((
        best,
        TrainReport {
            epochs_run,
            best_epoch,
            best_val_loss: best_val,
            train_losses,
            val_losses,
        },
    ))
}

/// Synthesis statistics for a generated dataset.
#[derive(Debug, Clone, Copy)]
pub struct DatasetReport {
    pub requested: usize,
    pub produced: usize,
    pub attempts: usize,
    /// Fraction of attempts whose detected window missed the true beam.
    pub discard_rate: f64,
}

/// Synthesize labeled samples by sweeping random sources through the
/// measurement and coarse-alignment pipeline. Attempts whose detected window
/// does not contain the true beam are discarded (the label would be
/// undefined). Deterministic per `(seed, attempt index)` and independent of
/// worker count.
#[allow(clippy::too_many_arguments)]
pub fn generate_dataset(
    cfg: &crate::channel::ArrayConfig,
    n_samples: usize,
    power_range_dbm: (f64, f64),
    phi_max_rad: f64,
    epsilon: f64,
    gamma_exponent: f64,
    seed: u64,
) -> Result<(Vec<TrainSample>, DatasetReport)> {
    let dft = DftMatrix::new(cfg);
    let u = max_input_len(cfg, epsilon)?;
    let sigma2 = cfg.noise_power_mw();

    let synth_one = |attempt: u64| -> Result<Option<TrainSample>> {
        let mut ue_rng = TrialRng::new(seed, attempt, StreamTag::UePosition);
        let phi = ue_rng.uniform_in(-phi_max_rad, phi_max_rad);
        let r = ue_rng.uniform_in(cfg.r_min_m, cfg.r_max_m);
        let p_dbm = ue_rng.uniform_in(power_range_dbm.0, power_range_dbm.1);
        let p_t = dbm_to_mw(p_dbm);
        let ue = UePosition::from_phi(phi, r)?;
        let h = channel(&ue, cfg);
        let mut meas_rng = TrialRng::new(seed, attempt, StreamTag::Measurement);
        let y = measure(&dft, &h, p_t, sigma2, &mut meas_rng)?;
        let coarse = coarse_align(&y, p_t, cfg, epsilon, default_gamma(p_t, gamma_exponent))?;
        let zeta = nearest_grid_index(ue.theta, cfg);
        let slot = coarse.subspace.iter().position(|&m| m == zeta);
        match slot {
            Some(pos) => {
                let mut sample = build_input(&y, &coarse, u, cfg)?;
                sample.target_index = Some(pos);
                Ok(Some(sample))
            }
            None => Ok(None),
        }
    };

    let mut produced: Vec<TrainSample> = Vec::with_capacity(n_samples);
    let mut attempts = 0usize;
    let mut discarded = 0usize;
    while produced.len() < n_samples {
        let want = n_samples - produced.len();
        // Generate a deterministic block of attempts in parallel, keep the
        // accepted ones in attempt order.
        let block = (want + want / 2 + 32).min(1 << 20);
        let results: Vec<Option<TrainSample>> = (attempts as u64..(attempts + block) as u64)
            .into_par_iter()
            .map(&synth_one)
            .collect::<Result<Vec<_>>>()?;
        attempts += block;
        for r in results {
            match r {
                Some(s) if produced.len() < n_samples => produced.push(s),
                Some(_) => {}
                None => discarded += 1,
            }
        }
        if attempts > 200 * n_samples.max(1) {
            return Err(Error::Numerical(format!(
                "dataset synthesis accepted only {} of {} requested samples after {} attempts",
                produced.len(),
                n_samples,
                attempts
            )));
        }
    }
    let report = DatasetReport {
        requested: n_samples,
        produced: produced.len(),
        attempts,
        discard_rate: discarded as f64 / attempts as f64,
    };
    Ok((produced, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ArrayConfig;

    fn tiny_dataset(n: usize, u: usize, seed: u64) -> Vec<TrainSample> {
        let mut rng = TrialRng::from_seed(seed);
        (0..n)
            .map(|_| {
                let valid = 3 + rng.index(u - 3);
                let mut input = vec![0.0; u];
                let mut mask = vec![0.0; u];
                let mut angles = vec![0.0; u];
                for i in 0..valid {
                    input[i] = rng.uniform();
                    mask[i] = 1.0;
                    angles[i] = -0.5 + i as f64 * 0.02;
                }
                TrainSample {
                    input,
                    mask,
                    angles,
                    target_index: Some(rng.index(valid)),
                }
            })
            .collect()
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        let arch = Architecture::miniature();
        let mut params = NetworkParams::init(arch, 3);
        let reference = params.clone();
        let mut grads = params.zeros_like();
        for (_, t) in grads.trainable_mut() {
            t.fill(0.5);
        }
        let mut state = AdamState::new(&params);
        let lr = 0.01;
        adam_step(&mut params, &grads, &mut state, lr);
        // With bias correction at t = 1: m_hat = g, v_hat = g^2, so the
        // update is -lr * g / (|g| + eps) = -lr * sign(g) (up to eps).
        let expect = lr * 0.5 / (0.5 + 1e-8);
        for ((_, after), (_, before)) in params.trainable().iter().zip(reference.trainable()) {
            for (a, b) in after.data.iter().zip(before.data.iter()) {
                assert!(((b - a) - expect).abs() < 1e-12, "step {} vs {expect}", b - a);
            }
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let arch = Architecture::miniature();
        let mut params = NetworkParams::init(arch, 4);
        let reference = params.clone();
        let mut grads = params.zeros_like();
        for (_, t) in grads.trainable_mut() {
            t.fill(1.0);
        }
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.0);
        assert_eq!(params, reference);
    }

    #[test]
    fn single_sample_overfit_reaches_tiny_loss() {
        let arch = Architecture::standard(49);
        let dataset = tiny_dataset(1, 49, 11);
        let sample = &dataset[0];
        let mut params = NetworkParams::init(arch, 11);
        let mut adam = AdamState::new(&params);
        let batch = vec![sample];
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            let cache = forward_batch(&params, &batch, BnMode::Batch, &None).unwrap();
            let loss = batch_loss(&cache, &batch).unwrap();
            last = loss;
            if loss < 1e-3 {
                break;
            }
            let grads = backward_batch(&params, &cache, &batch, &None).unwrap();
            // The smoke setting uses a hot learning rate; convergence takes
            // a few dozen steps.
            adam_step(&mut params, &grads, &mut adam, 1e-2);
        }
        assert!(last < 1e-3, "overfit loss stalled at {last}");
    }

    #[test]
    fn training_is_reproducible_and_mode_independent() {
        let arch = Architecture::miniature();
        let dataset = tiny_dataset(64, 9, 21);
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 16,
            patience: 10,
            seed: 9,
            parallel: false,
            ..TrainConfig::default()
        };
        let (w1, _) = train(&dataset, arch, &tc).unwrap();
        let (w2, _) = train(&dataset, arch, &tc).unwrap();
        assert_eq!(w1, w2, "same seed must give identical weights");
        let tc_par = TrainConfig { parallel: true, ..tc };
        let (w3, _) = train(&dataset, arch, &tc_par).unwrap();
        assert_eq!(w1, w3, "parallel batch mode must not change results");
    }

    #[test]
    fn training_rejects_bad_data_and_detects_divergence() {
        let arch = Architecture::miniature();
        let mut dataset = tiny_dataset(8, 9, 31);
        dataset[3].target_index = None;
        assert!(train(&dataset, arch, &TrainConfig::default()).is_err());

        let mut poisoned = tiny_dataset(8, 9, 32);
        poisoned[0].input[0] = f64::NAN;
        let err = train(&poisoned, arch, &TrainConfig { epochs: 1, ..TrainConfig::default() });
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    #[test]
    fn dataset_generation_is_deterministic_and_labeled() {
        let cfg = ArrayConfig::default_256();
        let (set1, rep1) =
            generate_dataset(&cfg, 40, (6.0, 14.0), std::f64::consts::PI / 3.0, 0.1, 1.5, 77)
                .unwrap();
        let (set2, _) =
            generate_dataset(&cfg, 40, (6.0, 14.0), std::f64::consts::PI / 3.0, 0.1, 1.5, 77)
                .unwrap();
        assert_eq!(set1, set2);
        assert_eq!(set1.len(), 40);
        assert!(rep1.discard_rate < 0.5, "discard rate {}", rep1.discard_rate);
        for s in &set1 {
            let t = s.target_index.unwrap();
            assert_eq!(s.mask[t], 1.0, "target must sit on a valid slot");
        }
    }

    #[test]
    fn zero_noise_dataset_targets_sit_at_window_center() {
        let mut cfg = ArrayConfig::default_256();
        cfg.noise_psd_dbm_per_hz = -1000.0;
        let (set, rep) =
            generate_dataset(&cfg, 10, (10.0, 10.0), std::f64::consts::PI / 3.0, 0.1, 1.5, 5)
                .unwrap();
        assert_eq!(rep.discard_rate, 0.0);
        for s in &set {
            let valid = s.mask.iter().filter(|&&m| m == 1.0).count();
            assert_eq!(s.target_index.unwrap(), (valid - 1) / 2);
        }
    }
}
