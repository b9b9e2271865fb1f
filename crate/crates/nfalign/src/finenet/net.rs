//! Network definition: three two-kernel convolution blocks with batch norm
//! and PReLU, a spatial-attention gate, global average pooling, two fully
//! connected blocks, and a masked-softmax output head. Forward and reverse
//! passes are hand-written over flat `f64` buffers.

use rayon::prelude::*;

use super::tensor::Tensor;
use super::TrainSample;
use crate::rng::{StreamTag, TrialRng};
use crate::{Error, Result};

const BN_EPS: f64 = 1e-5;
const LN10: f64 = std::f64::consts::LN_10;
/// Fixed negative-side slope of the convolution-block activations.
const CONV_SLOPE: f64 = 0.25;
const KERNEL_A: usize = 3;
const KERNEL_B: usize = 5;
const ATTN_KERNEL: usize = 7;

/// Network sizing: the input length and the channel scale. The channel plan
/// is `1 -> (b || b) -> (2b || 2b) -> (4b || 4b)`, giving `8b` features after
/// pooling; the production scale is `b = 16` (128 features).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub input_len: usize,
    pub base_channels: usize,
}

impl Architecture {
    pub fn standard(input_len: usize) -> Self {
        Architecture { input_len, base_channels: 16 }
    }

    /// Small configuration for gradient checking: length 9, channels
    /// 1 -> 4 -> 8 -> 16.
    pub fn miniature() -> Self {
        Architecture { input_len: 9, base_channels: 2 }
    }

    /// (c_in, c_out per kernel, concatenated c_out) of conv block `i` (0-based).
    pub fn conv_plan(&self, block: usize) -> (usize, usize, usize) {
        let b = self.base_channels;
        match block {
            0 => (1, b, 2 * b),
            1 => (2 * b, 2 * b, 4 * b),
            2 => (4 * b, 4 * b, 8 * b),
            _ => unreachable!("three convolution blocks"),
        }
    }

    pub fn feature_dim(&self) -> usize {
        8 * self.base_channels
    }

    /// Sequence lengths after each stride-2 block: `(U, L1, L2, L3)` with
    /// `L_{k} = floor((L_{k-1} + 1) / 2)`.
    pub fn lens(&self) -> (usize, usize, usize, usize) {
        let l0 = self.input_len;
        let l1 = l0.div_ceil(2);
        let l2 = l1.div_ceil(2);
        let l3 = l2.div_ceil(2);
        (l0, l1, l2, l3)
    }
}

/// One convolution block: parallel kernels of width 3 and 5 (each with bias),
/// concatenation, batch norm, and a shared-slope PReLU. The running mean and
/// variance are inference buffers; the activation slope is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub k3: Tensor,
    pub b3: Tensor,
    pub k5: Tensor,
    pub b5: Tensor,
    pub bn_scale: Tensor,
    pub bn_shift: Tensor,
    pub bn_mean: Tensor,
    pub bn_var: Tensor,
    pub prelu_slope: f64,
}

/// One fully connected block: affine map, batch norm, per-channel PReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct FcBlock {
    pub weight: Tensor,
    pub bias: Tensor,
    pub bn_scale: Tensor,
    pub bn_shift: Tensor,
    pub bn_mean: Tensor,
    pub bn_var: Tensor,
    pub prelu: Tensor,
}

/// All network tensors. Trainable parameters and inference buffers are kept
/// together; [`NetworkParams::trainable`] enumerates just the former.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub conv: [ConvBlock; 3],
    pub attn_kernel: Tensor,
    pub attn_bias: Tensor,
    pub fc1: FcBlock,
    pub fc2: FcBlock,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
}

fn he_fill(t: &mut Tensor, fan_in: usize, rng: &mut TrialRng) {
    let std = (2.0 / fan_in as f64).sqrt();
    let mut i = 0;
    while i < t.data.len() {
        let (a, b) = rng.gaussian_pair();
        t.data[i] = a * std;
        if i + 1 < t.data.len() {
            t.data[i + 1] = b * std;
        }
        i += 2;
    }
}

fn conv_block_init(arch: &Architecture, block: usize, rng: &mut TrialRng) -> ConvBlock {
    let (c_in, c_each, c_cat) = arch.conv_plan(block);
    let mut k3 = Tensor::zeros(&[c_each, c_in, KERNEL_A]);
    let mut k5 = Tensor::zeros(&[c_each, c_in, KERNEL_B]);
    he_fill(&mut k3, c_in * KERNEL_A, rng);
    he_fill(&mut k5, c_in * KERNEL_B, rng);
    let mut bn_scale = Tensor::zeros(&[c_cat]);
    bn_scale.fill(1.0);
    let mut bn_var = Tensor::zeros(&[c_cat]);
    bn_var.fill(1.0);
    ConvBlock {
        k3,
        b3: Tensor::zeros(&[c_each]),
        k5,
        b5: Tensor::zeros(&[c_each]),
        bn_scale,
        bn_shift: Tensor::zeros(&[c_cat]),
        bn_mean: Tensor::zeros(&[c_cat]),
        bn_var,
        prelu_slope: CONV_SLOPE,
    }
}

fn fc_block_init(f_in: usize, f_out: usize, rng: &mut TrialRng) -> FcBlock {
    let mut weight = Tensor::zeros(&[f_out, f_in]);
    he_fill(&mut weight, f_in, rng);
    let mut bn_scale = Tensor::zeros(&[f_out]);
    bn_scale.fill(1.0);
    let mut bn_var = Tensor::zeros(&[f_out]);
    bn_var.fill(1.0);
    let mut prelu = Tensor::zeros(&[f_out]);
    prelu.fill(0.25);
    FcBlock {
        weight,
        bias: Tensor::zeros(&[f_out]),
        bn_scale,
        bn_shift: Tensor::zeros(&[f_out]),
        bn_mean: Tensor::zeros(&[f_out]),
        bn_var,
        prelu,
    }
}

impl NetworkParams {
    /// Seeded He-normal initialization.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = TrialRng::new(seed, 0, StreamTag::WeightInit);
        let f = arch.feature_dim();
        let u = arch.input_len;
        let conv = [
            conv_block_init(&arch, 0, &mut rng),
            conv_block_init(&arch, 1, &mut rng),
            conv_block_init(&arch, 2, &mut rng),
        ];
        let mut attn_kernel = Tensor::zeros(&[1, 2, ATTN_KERNEL]);
        he_fill(&mut attn_kernel, 2 * ATTN_KERNEL, &mut rng);
        let fc1 = fc_block_init(f, f, &mut rng);
        let fc2 = fc_block_init(f, f, &mut rng);
        let mut out_weight = Tensor::zeros(&[u, f]);
        he_fill(&mut out_weight, f, &mut rng);
        NetworkParams {
            arch,
            conv,
            attn_kernel,
            attn_bias: Tensor::zeros(&[1]),
            fc1,
            fc2,
            out_weight,
            out_bias: Tensor::zeros(&[u]),
        }
    }

    /// Same structure with every tensor zeroed; used for gradients and
    /// optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.all_tensors_mut() {
            t.fill(0.0);
        }
        for blk in z.conv.iter_mut() {
            blk.prelu_slope = 0.0;
        }
        z
    }

    /// Trainable tensors in a fixed order (paired across params/grads/moments).
    pub fn trainable(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = Vec::with_capacity(32);
        let names: [[&'static str; 6]; 3] = [
            ["conv1.k3", "conv1.b3", "conv1.k5", "conv1.b5", "conv1.bn_scale", "conv1.bn_shift"],
            ["conv2.k3", "conv2.b3", "conv2.k5", "conv2.b5", "conv2.bn_scale", "conv2.bn_shift"],
            ["conv3.k3", "conv3.b3", "conv3.k5", "conv3.b5", "conv3.bn_scale", "conv3.bn_shift"],
        ];
        for (blk, n) in self.conv.iter().zip(names.iter()) {
            v.push((n[0], &blk.k3));
            v.push((n[1], &blk.b3));
            v.push((n[2], &blk.k5));
            v.push((n[3], &blk.b5));
            v.push((n[4], &blk.bn_scale));
            v.push((n[5], &blk.bn_shift));
        }
        v.push(("attn.kernel", &self.attn_kernel));
        v.push(("attn.bias", &self.attn_bias));
        for (blk, base) in [(&self.fc1, "fc1"), (&self.fc2, "fc2")] {
            v.push((fc_name(base, "weight"), &blk.weight));
            v.push((fc_name(base, "bias"), &blk.bias));
            v.push((fc_name(base, "bn_scale"), &blk.bn_scale));
            v.push((fc_name(base, "bn_shift"), &blk.bn_shift));
            v.push((fc_name(base, "prelu"), &blk.prelu));
        }
        v.push(("out.weight", &self.out_weight));
        v.push(("out.bias", &self.out_bias));
        v
    }

    pub fn trainable_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut v: Vec<(&'static str, &mut Tensor)> = Vec::with_capacity(32);
        let names: [[&'static str; 6]; 3] = [
            ["conv1.k3", "conv1.b3", "conv1.k5", "conv1.b5", "conv1.bn_scale", "conv1.bn_shift"],
            ["conv2.k3", "conv2.b3", "conv2.k5", "conv2.b5", "conv2.bn_scale", "conv2.bn_shift"],
            ["conv3.k3", "conv3.b3", "conv3.k5", "conv3.b5", "conv3.bn_scale", "conv3.bn_shift"],
        ];
        for (blk, n) in self.conv.iter_mut().zip(names.iter()) {
            v.push((n[0], &mut blk.k3));
            v.push((n[1], &mut blk.b3));
            v.push((n[2], &mut blk.k5));
            v.push((n[3], &mut blk.b5));
            v.push((n[4], &mut blk.bn_scale));
            v.push((n[5], &mut blk.bn_shift));
        }
        v.push(("attn.kernel", &mut self.attn_kernel));
        v.push(("attn.bias", &mut self.attn_bias));
        for (blk, base) in [(&mut self.fc1, "fc1"), (&mut self.fc2, "fc2")] {
            v.push((fc_name(base, "weight"), &mut blk.weight));
            v.push((fc_name(base, "bias"), &mut blk.bias));
            v.push((fc_name(base, "bn_scale"), &mut blk.bn_scale));
            v.push((fc_name(base, "bn_shift"), &mut blk.bn_shift));
            v.push((fc_name(base, "prelu"), &mut blk.prelu));
        }
        v.push(("out.weight", &mut self.out_weight));
        v.push(("out.bias", &mut self.out_bias));
        v
    }

    /// Every tensor, trainable and buffer alike, for serialization. The fixed
    /// conv activation slopes ride along as single-element tensors.
    pub fn all_tensors(&self) -> Vec<(String, Tensor)> {
        let mut v: Vec<(String, Tensor)> = self
            .trainable()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        for (i, blk) in self.conv.iter().enumerate() {
            v.push((format!("conv{}.bn_mean", i + 1), blk.bn_mean.clone()));
            v.push((format!("conv{}.bn_var", i + 1), blk.bn_var.clone()));
            v.push((
                format!("conv{}.prelu_slope", i + 1),
                Tensor::from_vec(&[1], vec![blk.prelu_slope]),
            ));
        }
        for (blk, base) in [(&self.fc1, "fc1"), (&self.fc2, "fc2")] {
            v.push((format!("{base}.bn_mean"), blk.bn_mean.clone()));
            v.push((format!("{base}.bn_var"), blk.bn_var.clone()));
        }
        v
    }

    fn all_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v: Vec<(String, &mut Tensor)> = Vec::new();
        for (i, blk) in self.conv.iter_mut().enumerate() {
            let p = format!("conv{}", i + 1);
            v.push((format!("{p}.k3"), &mut blk.k3));
            v.push((format!("{p}.b3"), &mut blk.b3));
            v.push((format!("{p}.k5"), &mut blk.k5));
            v.push((format!("{p}.b5"), &mut blk.b5));
            v.push((format!("{p}.bn_scale"), &mut blk.bn_scale));
            v.push((format!("{p}.bn_shift"), &mut blk.bn_shift));
            v.push((format!("{p}.bn_mean"), &mut blk.bn_mean));
            v.push((format!("{p}.bn_var"), &mut blk.bn_var));
        }
        v.push(("attn.kernel".into(), &mut self.attn_kernel));
        v.push(("attn.bias".into(), &mut self.attn_bias));
        for (blk, base) in [(&mut self.fc1, "fc1"), (&mut self.fc2, "fc2")] {
            v.push((format!("{base}.weight"), &mut blk.weight));
            v.push((format!("{base}.bias"), &mut blk.bias));
            v.push((format!("{base}.bn_scale"), &mut blk.bn_scale));
            v.push((format!("{base}.bn_shift"), &mut blk.bn_shift));
            v.push((format!("{base}.bn_mean"), &mut blk.bn_mean));
            v.push((format!("{base}.bn_var"), &mut blk.bn_var));
            v.push((format!("{base}.prelu"), &mut blk.prelu));
        }
        v.push(("out.weight".into(), &mut self.out_weight));
        v.push(("out.bias".into(), &mut self.out_bias));
        v
    }

    /// Write a named tensor; used when loading serialized weights.
    pub(crate) fn set_tensor(&mut self, name: &str, data: Tensor) -> Result<()> {
        if name.ends_with(".prelu_slope") {
            if data.len() != 1 {
                return Err(Error::Io(format!("{name} must hold one value")));
            }
            let idx = match &name[..5] {
                "conv1" => 0,
                "conv2" => 1,
                "conv3" => 2,
                other => return Err(Error::Io(format!("unknown slope owner {other}"))),
            };
            self.conv[idx].prelu_slope = data.data[0];
            return Ok(());
        }
        for (n, t) in self.all_tensors_mut() {
            if n == name {
                if t.shape != data.shape {
                    return Err(Error::Io(format!(
                        "tensor {name} has shape {:?}, file carries {:?}",
                        t.shape, data.shape
                    )));
                }
                *t = data;
                return Ok(());
            }
        }
        Err(Error::Io(format!("unknown tensor name {name}")))
    }

    /// Number of trainable parameters.
    pub fn param_count(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }
}

fn fc_name(base: &str, field: &str) -> &'static str {
    match (base, field) {
        ("fc1", "weight") => "fc1.weight",
        ("fc1", "bias") => "fc1.bias",
        ("fc1", "bn_scale") => "fc1.bn_scale",
        ("fc1", "bn_shift") => "fc1.bn_shift",
        ("fc1", "prelu") => "fc1.prelu",
        ("fc2", "weight") => "fc2.weight",
        ("fc2", "bias") => "fc2.bias",
        ("fc2", "bn_scale") => "fc2.bn_scale",
        ("fc2", "bn_shift") => "fc2.bn_shift",
        ("fc2", "prelu") => "fc2.prelu",
        _ => unreachable!(),
    }
}

// ---- activation buffers -----------------------------------------------------

/// Batch of channel-major sequences: index `(b, c, l)` flat as `(b*C + c)*L + l`.
#[derive(Debug, Clone)]
pub(crate) struct Feat {
    pub b: usize,
    pub c: usize,
    pub l: usize,
    pub data: Vec<f64>,
}

impl Feat {
    fn zeros(b: usize, c: usize, l: usize) -> Self {
        Feat { b, c, l, data: vec![0.0; b * c * l] }
    }

    #[inline]
    fn at(&self, bi: usize, ci: usize, li: usize) -> f64 {
        self.data[(bi * self.c + ci) * self.l + li]
    }

    #[inline]
    fn idx(&self, bi: usize, ci: usize, li: usize) -> usize {
        (bi * self.c + ci) * self.l + li
    }
}

/// Left-heavy zero padding that realizes `L_out = floor((L_in + 1)/2)` for the
/// stride-2 kernels (and same-length output for the stride-1 attention kernel).
fn pad_left(l_in: usize, l_out: usize, k: usize, stride: usize) -> usize {
    let needed = ((l_out - 1) * stride + k).saturating_sub(l_in);
    needed.div_ceil(2)
}

/// Batch samples are independent, so the pass runs per-sample in parallel;
/// results are bit-identical at any worker count.
fn conv1d_fwd(
    x: &Feat,
    w: &Tensor,
    bias: &Tensor,
    stride: usize,
    out: &mut Feat,
    c_offset: usize,
) {
    let c_out = w.shape[0];
    let c_in = w.shape[1];
    let k = w.shape[2];
    let pl = pad_left(x.l, out.l, k, stride) as i64;
    let (x_l, x_stride) = (x.l, x.c * x.l);
    let (out_l, out_stride) = (out.l, out.c * out.l);
    out.data
        .par_chunks_mut(out_stride)
        .zip(x.data.par_chunks(x_stride))
        .for_each(|(out_s, x_s)| {
            for co in 0..c_out {
                for o in 0..out_l {
                    let mut acc = bias.data[co];
                    for ci in 0..c_in {
                        let xrow = ci * x_l;
                        let wrow = (co * c_in + ci) * k;
                        for kk in 0..k {
                            let xi = (o * stride + kk) as i64 - pl;
                            if xi >= 0 && (xi as usize) < x_l {
                                acc += w.data[wrow + kk] * x_s[xrow + xi as usize];
                            }
                        }
                    }
                    out_s[(c_offset + co) * out_l + o] = acc;
                }
            }
        });
}

/// Per-sample weight-gradient partials are folded in batch order, so the
/// element-level accumulation order matches a sequential sweep exactly.
#[allow(clippy::too_many_arguments)]
fn conv1d_bwd(
    x: &Feat,
    w: &Tensor,
    stride: usize,
    dout: &Feat,
    c_offset: usize,
    dw: &mut Tensor,
    db: &mut Tensor,
    dx: &mut Feat,
) {
    let c_out = w.shape[0];
    let c_in = w.shape[1];
    let k = w.shape[2];
    let pl = pad_left(x.l, dout.l, k, stride) as i64;
    let (x_l, x_stride) = (x.l, x.c * x.l);
    let (d_l, d_stride) = (dout.l, dout.c * dout.l);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = dx
        .data
        .par_chunks_mut(x_stride)
        .zip(x.data.par_chunks(x_stride))
        .zip(dout.data.par_chunks(d_stride))
        .map(|((dx_s, x_s), dout_s)| {
            let mut dw_p = vec![0.0; w.data.len()];
            let mut db_p = vec![0.0; c_out];
            for co in 0..c_out {
                for o in 0..d_l {
                    let g = dout_s[(c_offset + co) * d_l + o];
                    if g == 0.0 {
                        continue;
                    }
                    db_p[co] += g;
                    for ci in 0..c_in {
                        let xrow = ci * x_l;
                        let wrow = (co * c_in + ci) * k;
                        for kk in 0..k {
                            let xi = (o * stride + kk) as i64 - pl;
                            if xi >= 0 && (xi as usize) < x_l {
                                dw_p[wrow + kk] += g * x_s[xrow + xi as usize];
                                dx_s[xrow + xi as usize] += g * w.data[wrow + kk];
                            }
                        }
                    }
                }
            }
            (dw_p, db_p)
        })
        .collect();
    for (dw_p, db_p) in partials {
        for (acc, p) in dw.data.iter_mut().zip(&dw_p) {
            *acc += p;
        }
        for (acc, p) in db.data.iter_mut().zip(&db_p) {
            *acc += p;
        }
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    mean: Vec<f64>,
    var: Vec<f64>,
    xhat: Vec<f64>,
}

/// Whether batch norm consumes batch statistics (training) or the stored
/// running statistics (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BnMode {
    Batch,
    Running,
}

/// Batch norm over grouped elements: `group_of(i)` names the channel of flat
/// index `i`. Returns the normalized output and a cache.
#[allow(clippy::too_many_arguments)]
fn bn_fwd(
    x: &[f64],
    scale: &Tensor,
    shift: &Tensor,
    run_mean: &Tensor,
    run_var: &Tensor,
    mode: BnMode,
    group_of: impl Fn(usize) -> usize,
    channels: usize,
) -> (Vec<f64>, BnCache) {
    let n = x.len();
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    match mode {
        BnMode::Batch => {
            let mut count = vec![0usize; channels];
            for (i, v) in x.iter().enumerate() {
                let c = group_of(i);
                mean[c] += v;
                count[c] += 1;
            }
            for c in 0..channels {
                mean[c] /= count[c] as f64;
            }
            for (i, v) in x.iter().enumerate() {
                let c = group_of(i);
                let d = v - mean[c];
                var[c] += d * d;
            }
            for c in 0..channels {
                var[c] /= count[c] as f64;
            }
        }
        BnMode::Running => {
            mean.copy_from_slice(&run_mean.data);
            var.copy_from_slice(&run_var.data);
        }
    }
    let mut xhat = vec![0.0; n];
    let mut y = vec![0.0; n];
    for i in 0..n {
        let c = group_of(i);
        let h = (x[i] - mean[c]) / (var[c] + BN_EPS).sqrt();
        xhat[i] = h;
        y[i] = scale.data[c] * h + shift.data[c];
    }
    (y, BnCache { mean, var, xhat })
}

/// Reverse of [`bn_fwd`] in batch mode (biased variance):
/// `dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))`.
#[allow(clippy::too_many_arguments)]
fn bn_bwd(
    dy: &[f64],
    cache: &BnCache,
    scale: &Tensor,
    dscale: &mut Tensor,
    dshift: &mut Tensor,
    group_of: impl Fn(usize) -> usize,
    channels: usize,
    mode: BnMode,
) -> Vec<f64> {
    let n = dy.len();
    let mut s1 = vec![0.0; channels];
    let mut s2 = vec![0.0; channels];
    let mut count = vec![0usize; channels];
    for (i, &g) in dy.iter().enumerate() {
        let c = group_of(i);
        let dxhat = g * scale.data[c];
        dscale.data[c] += g * cache.xhat[i];
        dshift.data[c] += g;
        s1[c] += dxhat;
        s2[c] += dxhat * cache.xhat[i];
        count[c] += 1;
    }
    let mut dx = vec![0.0; n];
    for i in 0..n {
        let c = group_of(i);
        let inv_std = 1.0 / (cache.var[c] + BN_EPS).sqrt();
        let dxhat = dy[i] * scale.data[c];
        dx[i] = match mode {
            BnMode::Batch => {
                let m = count[c] as f64;
                inv_std * (dxhat - s1[c] / m - cache.xhat[i] * s2[c] / m)
            }
            // Running statistics are constants with respect to the input.
            BnMode::Running => inv_std * dxhat,
        };
    }
    dx
}

#[derive(Debug, Clone)]
struct ConvCache {
    x: Feat,
    bn: BnCache,
    pre_act: Vec<f64>,
    out: Feat,
}

#[derive(Debug, Clone)]
struct AttnCache {
    feat: Feat,
    pooled: Feat,
    argmax: Vec<usize>,
    sig: Vec<f64>,
}

#[derive(Debug, Clone)]
struct FcCache {
    x: Vec<f64>,
    bn: BnCache,
    pre_act: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    conv: Vec<ConvCache>,
    attn: AttnCache,
    fc1: FcCache,
    fc2: FcCache,
    /// Post-dropout output of the second fully connected block (the input
    /// consumed by the output head).
    fc2_out: Vec<f64>,
    pub probs: Vec<f64>,
    mode: BnMode,
    /// Batch statistics per normalized layer, order conv1..3, fc1, fc2.
    pub batch_stats: Vec<(Vec<f64>, Vec<f64>)>,
}

fn conv_block_fwd(params: &ConvBlock, x: Feat, l_out: usize, mode: BnMode) -> ConvCache {
    let c_cat = params.bn_scale.len();
    let c_each = c_cat / 2;
    let mut pre_bn = Feat::zeros(x.b, c_cat, l_out);
    conv1d_fwd(&x, &params.k3, &params.b3, 2, &mut pre_bn, 0);
    conv1d_fwd(&x, &params.k5, &params.b5, 2, &mut pre_bn, c_each);
    let group = |i: usize| (i / l_out) % c_cat;
    let (pre_act, bn) = bn_fwd(
        &pre_bn.data,
        &params.bn_scale,
        &params.bn_shift,
        &params.bn_mean,
        &params.bn_var,
        mode,
        group,
        c_cat,
    );
    let slope = params.prelu_slope;
    let mut out = Feat::zeros(x.b, c_cat, l_out);
    for (o, &v) in out.data.iter_mut().zip(pre_act.iter()) {
        *o = if v > 0.0 { v } else { slope * v };
    }
    ConvCache { x, bn, pre_act, out }
}

fn conv_block_bwd(
    params: &ConvBlock,
    grads: &mut ConvBlock,
    cache: &ConvCache,
    dout: &Feat,
    mode: BnMode,
) -> Feat {
    let c_cat = params.bn_scale.len();
    let c_each = c_cat / 2;
    let l_out = cache.out.l;
    let slope = params.prelu_slope;
    // PReLU (fixed slope, no slope gradient).
    let dpre: Vec<f64> = dout
        .data
        .iter()
        .zip(cache.pre_act.iter())
        .map(|(g, &v)| if v > 0.0 { *g } else { slope * *g })
        .collect();
    let group = |i: usize| (i / l_out) % c_cat;
    let dprebn = bn_bwd(
        &dpre,
        &cache.bn,
        &params.bn_scale,
        &mut grads.bn_scale,
        &mut grads.bn_shift,
        group,
        c_cat,
        mode,
    );
    let dprebn = Feat { b: cache.x.b, c: c_cat, l: l_out, data: dprebn };
    let mut dx = Feat::zeros(cache.x.b, cache.x.c, cache.x.l);
    conv1d_bwd(&cache.x, &params.k3, 2, &dprebn, 0, &mut grads.k3, &mut grads.b3, &mut dx);
    conv1d_bwd(&cache.x, &params.k5, 2, &dprebn, c_each, &mut grads.k5, &mut grads.b5, &mut dx);
    dx
}

fn attention_fwd(params: &NetworkParams, feat: Feat) -> (Feat, AttnCache) {
    let (b, c, l) = (feat.b, feat.c, feat.l);
    let mut pooled = Feat::zeros(b, 2, l);
    let mut argmax = vec![0usize; b * l];
    for bi in 0..b {
        for li in 0..l {
            let mut sum = 0.0;
            let mut best = f64::NEG_INFINITY;
            let mut best_c = 0usize;
            for ci in 0..c {
                let v = feat.at(bi, ci, li);
                sum += v;
                if v > best {
                    best = v;
                    best_c = ci;
                }
            }
            let i_avg = pooled.idx(bi, 0, li);
            let i_max = pooled.idx(bi, 1, li);
            pooled.data[i_avg] = sum / c as f64;
            pooled.data[i_max] = best;
            argmax[bi * l + li] = best_c;
        }
    }
    let mut z = Feat::zeros(b, 1, l);
    conv1d_fwd(&pooled, &params.attn_kernel, &params.attn_bias, 1, &mut z, 0);
    let sig: Vec<f64> = z.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
    let mut out = Feat::zeros(b, c, l);
    for bi in 0..b {
        for ci in 0..c {
            for li in 0..l {
                let i = out.idx(bi, ci, li);
                out.data[i] = feat.at(bi, ci, li) * sig[bi * l + li];
            }
        }
    }
    (out, AttnCache { feat, pooled, argmax, sig })
}

fn attention_bwd(
    params: &NetworkParams,
    grads: &mut NetworkParams,
    cache: &AttnCache,
    dout: &Feat,
) -> Feat {
    let (b, c, l) = (cache.feat.b, cache.feat.c, cache.feat.l);
    let mut dfeat = Feat::zeros(b, c, l);
    let mut dsig = vec![0.0; b * l];
    for bi in 0..b {
        for ci in 0..c {
            for li in 0..l {
                let g = dout.at(bi, ci, li);
                let i = dfeat.idx(bi, ci, li);
                dfeat.data[i] += g * cache.sig[bi * l + li];
                dsig[bi * l + li] += g * cache.feat.at(bi, ci, li);
            }
        }
    }
    let dz: Vec<f64> = dsig
        .iter()
        .zip(cache.sig.iter())
        .map(|(g, &s)| g * s * (1.0 - s))
        .collect();
    let dz = Feat { b, c: 1, l, data: dz };
    let mut dpooled = Feat::zeros(b, 2, l);
    conv1d_bwd(
        &cache.pooled,
        &params.attn_kernel,
        1,
        &dz,
        0,
        &mut grads.attn_kernel,
        &mut grads.attn_bias,
        &mut dpooled,
    );
    for bi in 0..b {
        for li in 0..l {
            let davg = dpooled.at(bi, 0, li) / c as f64;
            for ci in 0..c {
                let i = dfeat.idx(bi, ci, li);
                dfeat.data[i] += davg;
            }
            let mc = cache.argmax[bi * l + li];
            let i = dfeat.idx(bi, mc, li);
            dfeat.data[i] += dpooled.at(bi, 1, li);
        }
    }
    dfeat
}

/// Fully connected block forward over a `[batch, features]` matrix, with an
/// optional multiplicative dropout mask applied after the activation.
#[allow(clippy::too_many_arguments)]
fn fc_block_fwd(
    params: &FcBlock,
    x: Vec<f64>,
    batch: usize,
    mode: BnMode,
    drop: Option<&[f64]>,
) -> (Vec<f64>, FcCache) {
    let f_out = params.bias.len();
    let f_in = params.weight.shape[1];
    let mut pre_bn = vec![0.0; batch * f_out];
    for bi in 0..batch {
        for o in 0..f_out {
            let mut acc = params.bias.data[o];
            let wrow = o * f_in;
            let xrow = bi * f_in;
            for i in 0..f_in {
                acc += params.weight.data[wrow + i] * x[xrow + i];
            }
            pre_bn[bi * f_out + o] = acc;
        }
    }
    let group = |i: usize| i % f_out;
    let (pre_act, bn) = bn_fwd(
        &pre_bn,
        &params.bn_scale,
        &params.bn_shift,
        &params.bn_mean,
        &params.bn_var,
        mode,
        group,
        f_out,
    );
    let mut act = vec![0.0; batch * f_out];
    for (i, &v) in pre_act.iter().enumerate() {
        let s = params.prelu.data[i % f_out];
        act[i] = if v > 0.0 { v } else { s * v };
    }
    let out = match drop {
        Some(mask) => act.iter().zip(mask).map(|(a, m)| a * m).collect(),
        None => act,
    };
    (out, FcCache { x, bn, pre_act })
}

#[allow(clippy::too_many_arguments)]
fn fc_block_bwd(
    params: &FcBlock,
    grads: &mut FcBlock,
    cache: &FcCache,
    dout: &[f64],
    batch: usize,
    mode: BnMode,
    drop: Option<&[f64]>,
) -> Vec<f64> {
    let f_out = params.bias.len();
    let f_in = params.weight.shape[1];
    let dact: Vec<f64> = match drop {
        Some(mask) => dout.iter().zip(mask).map(|(g, m)| g * m).collect(),
        None => dout.to_vec(),
    };
    let mut dpre = vec![0.0; batch * f_out];
    for (i, &g) in dact.iter().enumerate() {
        let o = i % f_out;
        let v = cache.pre_act[i];
        if v > 0.0 {
            dpre[i] = g;
        } else {
            dpre[i] = g * params.prelu.data[o];
            grads.prelu.data[o] += g * v;
        }
    }
    let group = |i: usize| i % f_out;
    let dprebn = bn_bwd(
        &dpre,
        &cache.bn,
        &params.bn_scale,
        &mut grads.bn_scale,
        &mut grads.bn_shift,
        group,
        f_out,
        mode,
    );
    let mut dx = vec![0.0; batch * f_in];
    for bi in 0..batch {
        for o in 0..f_out {
            let g = dprebn[bi * f_out + o];
            grads.bias.data[o] += g;
            let wrow = o * f_in;
            let xrow = bi * f_in;
            for i in 0..f_in {
                grads.weight.data[wrow + i] += g * cache.x[xrow + i];
                dx[xrow + i] += g * params.weight.data[wrow + i];
            }
        }
    }
    dx
}

/// Dropout masks for the two fully connected blocks (already scaled by the
/// keep probability), or `None` for identity.
pub(crate) type DropMasks = Option<(Vec<f64>, Vec<f64>)>;

/// Draw inverted-dropout masks with keep probability 0.5.
pub(crate) fn draw_dropout(batch: usize, features: usize, rng: &mut TrialRng) -> DropMasks {
    let draw = |rng: &mut TrialRng| {
        (0..batch * features)
            .map(|_| if rng.uniform() < 0.5 { 0.0 } else { 2.0 })
            .collect::<Vec<f64>>()
    };
    let m1 = draw(rng);
    let m2 = draw(rng);
    Some((m1, m2))
}

/// Full forward pass over a batch. Inputs are masked on entry so padded
/// slots cannot influence the result; logits at padded slots are pinned to
/// negative infinity before the softmax.
#[allow(clippy::needless_range_loop)]
pub(crate) fn forward_batch(
    params: &NetworkParams,
    batch: &[&TrainSample],
    mode: BnMode,
    drop: &DropMasks,
) -> Result<ForwardCache> {
    let arch = &params.arch;
    let u = arch.input_len;
    let b = batch.len();
    if b == 0 {
        return Err(Error::Domain("empty batch".into()));
    }
    for s in batch {
        if s.input.len() != u || s.mask.len() != u {
            return Err(Error::Domain(format!(
                "sample length {} does not match network input length {u}",
                s.input.len()
            )));
        }
    }
    let (_, l1, l2, l3) = arch.lens();
    let mut x = Feat::zeros(b, 1, u);
    for (bi, s) in batch.iter().enumerate() {
        for li in 0..u {
            x.data[(bi) * u + li] = s.input[li] * s.mask[li];
        }
    }
    let c1 = conv_block_fwd(&params.conv[0], x, l1, mode);
    let c2 = conv_block_fwd(&params.conv[1], c1.out.clone(), l2, mode);
    let c3 = conv_block_fwd(&params.conv[2], c2.out.clone(), l3, mode);
    let (attn_out, attn) = attention_fwd(params, c3.out.clone());

    let f = arch.feature_dim();
    let mut gap = vec![0.0; b * f];
    for bi in 0..b {
        for ci in 0..f {
            let mut acc = 0.0;
            for li in 0..l3 {
                acc += attn_out.at(bi, ci, li);
            }
            gap[bi * f + ci] = acc / l3 as f64;
        }
    }

    let (d1, d2) = match drop {
        Some((m1, m2)) => (Some(m1.as_slice()), Some(m2.as_slice())),
        None => (None, None),
    };
    let (fc1_out, fc1) = fc_block_fwd(&params.fc1, gap, b, mode, d1);
    let (fc2_out, fc2) = fc_block_fwd(&params.fc2, fc1_out, b, mode, d2);

    // Output head with masked softmax.
    let mut probs = vec![0.0; b * u];
    for bi in 0..b {
        let xrow = bi * f;
        let mut logits = vec![f64::NEG_INFINITY; u];
        let mut peak = f64::NEG_INFINITY;
        for o in 0..u {
            if batch[bi].mask[o] == 0.0 {
                continue;
            }
            let mut acc = params.out_bias.data[o];
            let wrow = o * f;
            for i in 0..f {
                acc += params.out_weight.data[wrow + i] * fc2_out[xrow + i];
            }
            logits[o] = acc;
            peak = peak.max(acc);
        }
        let mut z = 0.0;
        for o in 0..u {
            if logits[o].is_finite() {
                let e = (logits[o] - peak).exp();
                probs[bi * u + o] = e;
                z += e;
            }
        }
        for o in 0..u {
            probs[bi * u + o] /= z;
        }
    }

    let batch_stats = vec![
        (c1.bn.mean.clone(), c1.bn.var.clone()),
        (c2.bn.mean.clone(), c2.bn.var.clone()),
        (c3.bn.mean.clone(), c3.bn.var.clone()),
        (fc1.bn.mean.clone(), fc1.bn.var.clone()),
        (fc2.bn.mean.clone(), fc2.bn.var.clone()),
    ];
    Ok(ForwardCache {
        conv: vec![c1, c2, c3],
        attn,
        fc1,
        fc2,
        fc2_out,
        probs,
        mode,
        batch_stats,
    })
}

/// Mean cross-entropy of the cached forward pass against the batch targets.
pub(crate) fn batch_loss(cache: &ForwardCache, batch: &[&TrainSample]) -> Result<f64> {
    let u = cache.probs.len() / batch.len();
    let mut acc = 0.0;
    for (bi, s) in batch.iter().enumerate() {
        let t = s
            .target_index
            .ok_or_else(|| Error::Domain("batch sample lacks a target".into()))?;
        let p = cache.probs[bi * u + t];
        if !p.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite probability {p} at sample {bi}, slot {t}"
            )));
        }
        acc += -p.max(1e-300).log10();
    }
    Ok(acc / batch.len() as f64)
}

/// Reverse pass: gradients of the mean cross-entropy with respect to every
/// trainable tensor. The forward cache must come from the same batch.
pub(crate) fn backward_batch(
    params: &NetworkParams,
    cache: &ForwardCache,
    batch: &[&TrainSample],
    drop: &DropMasks,
) -> Result<NetworkParams> {
    let arch = &params.arch;
    let u = arch.input_len;
    let f = arch.feature_dim();
    let b = batch.len();
    let (_, _, _, l3) = arch.lens();
    let mut grads = params.zeros_like();
    let mode = cache.mode;

    // d(mean CE)/d(logit) = (p - onehot) / (B ln 10); exactly zero on masked
    // slots since both terms vanish there.
    let mut dfc2_out = vec![0.0; b * f];
    for (bi, s) in batch.iter().enumerate() {
        let t = s
            .target_index
            .ok_or_else(|| Error::Domain("batch sample lacks a target".into()))?;
        let xrow = bi * f;
        for o in 0..u {
            if s.mask[o] == 0.0 {
                continue;
            }
            let mut dlogit = cache.probs[bi * u + o];
            if o == t {
                dlogit -= 1.0;
            }
            dlogit /= b as f64 * LN10;
            grads.out_bias.data[o] += dlogit;
            let wrow = o * f;
            for i in 0..f {
                grads.out_weight.data[wrow + i] += dlogit * cache.fc2_out[xrow + i];
                dfc2_out[xrow + i] += dlogit * params.out_weight.data[wrow + i];
            }
        }
    }

    let (d1, d2) = match drop {
        Some((m1, m2)) => (Some(m1.as_slice()), Some(m2.as_slice())),
        None => (None, None),
    };
    let dfc1_out = fc_block_bwd(&params.fc2, &mut grads.fc2, &cache.fc2, &dfc2_out, b, mode, d2);
    let dgap = fc_block_bwd(&params.fc1, &mut grads.fc1, &cache.fc1, &dfc1_out, b, mode, d1);

    let mut dattn_out = Feat::zeros(b, f, l3);
    for bi in 0..b {
        for ci in 0..f {
            let g = dgap[bi * f + ci] / l3 as f64;
            for li in 0..l3 {
                let i = dattn_out.idx(bi, ci, li);
                dattn_out.data[i] = g;
            }
        }
    }
    let dconv3_out = attention_bwd(params, &mut grads, &cache.attn, &dattn_out);
    // Split borrows: conv caches and grads are indexed in lockstep.
    let dconv2_out = conv_block_bwd(
        &params.conv[2],
        &mut grads.conv[2],
        &cache.conv[2],
        &dconv3_out,
        mode,
    );
    let dconv1_out = conv_block_bwd(
        &params.conv[1],
        &mut grads.conv[1],
        &cache.conv[1],
        &dconv2_out,
        mode,
    );
    let _dinput = conv_block_bwd(
        &params.conv[0],
        &mut grads.conv[0],
        &cache.conv[0],
        &dconv1_out,
        mode,
    );
    Ok(grads)
}

/// Inference: probability profile over window slots for one sample, using
/// running statistics and no dropout.
pub fn forward_eval(params: &NetworkParams, sample: &TrainSample) -> Result<Vec<f64>> {
    let cache = forward_batch(params, &[sample], BnMode::Running, &None)?;
    Ok(cache.probs)
}

/// Mean loss and gradients for a batch in training mode (batch statistics)
/// with the given dropout masks.
pub fn gradients(
    params: &NetworkParams,
    batch: &[&TrainSample],
) -> Result<(f64, NetworkParams)> {
    let cache = forward_batch(params, batch, BnMode::Batch, &None)?;
    let loss = batch_loss(&cache, batch)?;
    let grads = backward_batch(params, &cache, batch, &None)?;
    Ok((loss, grads))
}
