//! Loss, analytic backpropagation through every stage, and a minimal
//! mini-batch SGD loop.
//!
//! Gradients are exact for the network as implemented: convolution
//! backward scatters into inputs and kernels, pooling routes through the
//! first-maximum position of each window, the ReLU subgradient at zero
//! is zero, and the combine stage follows `y = x5 * relu(z) + x1` with
//! `dx5 = dy * relu(z)`, `dz = dy * x5 * [z > 0]`, and the residual path
//! passing `dy` straight to the embedding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{forward, predict, GateCnnConfig, ModelWeights};
use crate::scalar::Real;
use crate::synth::MicroDopplerFrame;
use crate::tensor::{Tensor, Tensor4};

/// Per-parameter gradients; shape-congruent with the weights by
/// construction, so the container is reused.
pub type Gradients<T> = ModelWeights<T>;

/// SGD hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Step size. Zero is allowed and leaves the weights untouched,
    /// which keeps dry runs expressible.
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds both the weight initialization and the shuffle order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, epochs: 30, batch_size: 8, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One epoch of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch index.
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// History as line-delimited records with a header.
pub fn format_history(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,mean_loss,train_accuracy\n");
    for e in history {
        out.push_str(&format!("{},{:.6},{:.6}\n", e.epoch, e.mean_loss, e.train_accuracy));
    }
    out
}

/// Softmax cross-entropy, computed with max-subtraction so large logits
/// cannot overflow. Shifting all logits by a constant leaves it unchanged.
pub fn loss<T: Real>(logits: &Tensor<T>, label: usize) -> Result<T> {
    Ok(loss_and_dlogits(logits, label)?.0)
}

fn loss_and_dlogits<T: Real>(logits: &Tensor<T>, label: usize) -> Result<(T, Vec<T>)> {
    if logits.rank() != 1 {
        return Err(Error::shape("loss", format!("logits rank must be 1, got {}", logits.rank())));
    }
    let n = logits.len();
    if label >= n {
        return Err(Error::Config(format!("label {label} out of range for {n} classes")));
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let max = logits.data().iter().copied().fold(T::neg_infinity(), T::max);
    let mut exps: Vec<T> = logits.data().iter().map(|&x| (x - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.ln() - (logits.data()[label] - max);
    for e in exps.iter_mut() {
        *e /= sum;
    }
    exps[label] -= T::one();
    Ok((loss, exps))
}

/// Stride-1 `conv2d` backward: gradients w.r.t. input, kernel, and bias.
/// Shapes must already be consistent; the model guarantees this.
fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor4<T>,
    dout: &Tensor<T>,
    padding: (usize, usize),
) -> (Tensor<T>, Tensor4<T>, Vec<T>) {
    let (in_c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (out_c, _, kh, kw) = kernel.dims();
    let (ph, pw) = padding;
    debug_assert_eq!(dout.shape()[0], out_c);
    let (out_h, out_w) = (dout.shape()[1], dout.shape()[2]);

    let mut dinput = Tensor::zeros(input.shape().to_vec());
    let mut dkernel = Tensor4::zeros(out_c, in_c, kh, kw);
    let mut dbias = vec![T::zero(); out_c];
    for o in 0..out_c {
        for i in 0..out_h {
            for j in 0..out_w {
                let g = dout.at3(o, i, j);
                dbias[o] += g;
                for c in 0..in_c {
                    for u in 0..kh {
                        let hi = i + u;
                        if hi < ph || hi - ph >= h {
                            continue;
                        }
                        for v in 0..kw {
                            let wi = j + v;
                            if wi < pw || wi - pw >= w {
                                continue;
                            }
                            let x = input.at3(c, hi - ph, wi - pw);
                            dkernel.set(o, c, u, v, dkernel.at(o, c, u, v) + g * x);
                            let cur = dinput.at3(c, hi - ph, wi - pw);
                            dinput.set3(c, hi - ph, wi - pw, cur + g * kernel.at(o, c, u, v));
                        }
                    }
                }
            }
        }
    }
    (dinput, dkernel, dbias)
}

/// Same-padding time convolution backward over `(C, L)` maps.
fn conv1d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let (in_c, len) = (input.shape()[0], input.shape()[1]);
    let (out_c, _, taps) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    let half = taps / 2;

    let mut dinput = Tensor::zeros(input.shape().to_vec());
    let mut dkernel = Tensor::zeros(kernel.shape().to_vec());
    let mut dbias = vec![T::zero(); out_c];
    for o in 0..out_c {
        for t in 0..len {
            let g = dout.at2(o, t);
            dbias[o] += g;
            for c in 0..in_c {
                for u in 0..taps {
                    let ti = t + u;
                    if ti < half || ti - half >= len {
                        continue;
                    }
                    let x = input.at2(c, ti - half);
                    dkernel.set3(o, c, u, dkernel.at3(o, c, u) + g * x);
                    dinput.set2(c, ti - half, dinput.at2(c, ti - half) + g * kernel.at3(o, c, u));
                }
            }
        }
    }
    (dinput, dkernel, dbias)
}

/// Pooling backward: each output gradient flows to the first maximum of
/// its window, matching the forward's scan order.
fn maxpool2d_backward<T: Real>(
    input: &Tensor<T>,
    window: (usize, usize),
    stride: (usize, usize),
    dout: &Tensor<T>,
) -> Tensor<T> {
    let (c_n, _, _) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (wh, ww) = window;
    let (sh, sw) = stride;
    let (out_h, out_w) = (dout.shape()[1], dout.shape()[2]);

    let mut dinput = Tensor::zeros(input.shape().to_vec());
    for c in 0..c_n {
        for i in 0..out_h {
            for j in 0..out_w {
                let (mut bu, mut bv) = (0, 0);
                let mut best = input.at3(c, i * sh, j * sw);
                for u in 0..wh {
                    for v in 0..ww {
                        let x = input.at3(c, i * sh + u, j * sw + v);
                        if x > best {
                            best = x;
                            bu = u;
                            bv = v;
                        }
                    }
                }
                let (hi, wi) = (i * sh + bu, j * sw + bv);
                dinput.set3(c, hi, wi, dinput.at3(c, hi, wi) + dout.at3(c, i, j));
            }
        }
    }
    dinput
}

/// Zeroes gradient entries where the recorded activation is zero. Valid
/// because the stored maps are ReLU outputs: positive iff the
/// pre-activation was positive.
fn mask_relu<T: Real>(grad: &Tensor<T>, activation: &Tensor<T>) -> Tensor<T> {
    let data = grad
        .data()
        .iter()
        .zip(activation.data())
        .map(|(&g, &a)| if a > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(grad.shape().to_vec(), data).expect("congruent shapes")
}

/// Loss and exact gradients of one labeled sample.
pub fn backward<T: Real>(
    cfg: &GateCnnConfig,
    w: &ModelWeights<T>,
    x: &Tensor<T>,
    label: usize,
) -> Result<(T, Gradients<T>)> {
    let tr = forward(cfg, w, x)?;
    let (loss_v, dlogits) = loss_and_dlogits(&tr.logits, label)?;

    let d = cfg.embed_dim;
    let wp = cfg.w_prime();
    let mut g = Gradients::zeros(cfg)?;

    // Classifier: dW[k,t] = dl[k] v[t], db[k] = dl[k], dv[t] = sum_k W[k,t] dl[k].
    let mut dv = vec![T::zero(); wp];
    for k in 0..cfg.num_classes {
        let gk = dlogits[k];
        g.b_cls.data_mut()[k] = gk;
        for t in 0..wp {
            g.w_cls.set2(k, t, gk * tr.v.data()[t]);
            dv[t] += w.w_cls.at2(k, t) * gk;
        }
    }

    // Averaging head, a plain no-padding convolution over the combined map.
    let y3 = tr.y.reshaped(vec![1, d, wp])?;
    let dv3 = Tensor::new(vec![1, 1, wp], dv)?;
    let (dy3, dw_avg, db_avg) = conv2d_backward(&y3, &w.w_avg, &dv3, (0, 0));
    g.w_avg = dw_avg;
    g.b_avg = Tensor::new(vec![1], db_avg)?;
    let dy = dy3.reshaped(vec![d, wp])?;

    // Combine: y = x5 * relu(z) + x1.
    let mut dx5 = Tensor::zeros(vec![d, wp]);
    let mut dz = Tensor::zeros(vec![d, wp]);
    for idx in 0..d * wp {
        let gy = dy.data()[idx];
        let zv = tr.z.data()[idx];
        if zv > T::zero() {
            dx5.data_mut()[idx] = gy * zv;
            dz.data_mut()[idx] = gy * tr.x_conv5.data()[idx];
        }
    }

    // Cascade, in reverse, with ReLU masks between stages.
    let pad = cfg.cascade_padding();
    let dx5_3 = dx5.reshaped(vec![1, d, wp])?;
    let (dx4, dw_c4, db_c4) = conv2d_backward(&tr.x_conv4, &w.w_c4, &dx5_3, pad);
    g.w_c4 = dw_c4;
    g.b_c4 = Tensor::new(vec![1], db_c4)?;

    let dx4 = mask_relu(&dx4, &tr.x_conv4);
    let (dx3, dw_c3, db_c3) = conv2d_backward(&tr.x_conv3, &w.w_c3, &dx4, pad);
    g.w_c3 = dw_c3;
    g.b_c3 = Tensor::new(vec![cfg.content_channels], db_c3)?;

    let dx3 = mask_relu(&dx3, &tr.x_conv3);
    let c_in = tr.x_conv2.reshaped(vec![1, d, wp])?;
    let (dc_in, dw_c2, db_c2) = conv2d_backward(&c_in, &w.w_c2, &dx3, pad);
    g.w_c2 = dw_c2;
    g.b_c2 = Tensor::new(vec![cfg.content_channels], db_c2)?;
    let dx_conv2 = dc_in.reshaped(vec![d, wp])?;

    // Both time-convolution paths feed from the embedding.
    let (dx1_content, dw_p, db_p) = conv1d_backward(&tr.x_conv1, &w.w_p, &dx_conv2);
    g.w_p = dw_p;
    g.b_p = Tensor::new(vec![d], db_p)?;
    let (dx1_gate, dw_g, db_g) = conv1d_backward(&tr.x_conv1, &w.w_g, &dz);
    g.w_g = dw_g;
    g.b_g = Tensor::new(vec![d], db_g)?;

    // Embedding gradient: residual path plus both convolution paths.
    let mut dx_conv1 = dy;
    for ((t, &a), &b) in
        dx_conv1.data_mut().iter_mut().zip(dx1_content.data()).zip(dx1_gate.data())
    {
        *t += a + b;
    }

    let dxc1_3 = dx_conv1.reshaped(vec![d, 1, wp])?;
    let (dx_ds, dw_c1, db_c1) = conv2d_backward(&tr.x_ds, &w.w_c1, &dxc1_3, (0, 0));
    g.w_c1 = dw_c1;
    g.b_c1 = Tensor::new(vec![d], db_c1)?;

    let dx1_full = maxpool2d_backward(&tr.x1, cfg.pool, cfg.pool, &dx_ds);
    let (_dx, dw_c0, db_c0) = conv2d_backward(x, &w.w_c0, &dx1_full, cfg.fuse_padding());
    g.w_c0 = dw_c0;
    g.b_c0 = Tensor::new(vec![1], db_c0)?;

    for (_, _, data) in g.entries() {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("backward"));
        }
    }
    Ok((loss_v, g))
}

fn add_scaled<T: Real>(dst: &mut ModelWeights<T>, src: &ModelWeights<T>, s: T) {
    for (d, (_, _, src_data)) in dst.entries_mut().into_iter().zip(src.entries()) {
        for (dv, &sv) in d.iter_mut().zip(src_data) {
            *dv += s * sv;
        }
    }
}

/// Mini-batch SGD. Weights come from the seeded initializer; each epoch
/// shuffles with a stream derived from the same seed, so a (seed, data)
/// pair pins the entire run. Accuracy is measured over the training set
/// after each epoch.
pub fn train<T: Real>(
    cfg: &GateCnnConfig,
    frames: &[MicroDopplerFrame<T>],
    tc: &TrainConfig,
) -> Result<(ModelWeights<T>, Vec<EpochStats>)> {
    cfg.validate()?;
    tc.validate()?;
    if frames.is_empty() {
        return Err(Error::EmptyData("training frames"));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.label >= cfg.num_classes {
            return Err(Error::Config(format!(
                "frame {i} has label {}, config allows {} classes",
                f.label, cfg.num_classes
            )));
        }
    }

    let mut w = ModelWeights::init(cfg, tc.seed)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut history = Vec::with_capacity(tc.epochs);

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(tc.batch_size) {
            let mut acc = Gradients::zeros(cfg)?;
            for &idx in chunk {
                let (l, g) = backward(cfg, &w, &frames[idx].data, frames[idx].label)?;
                loss_sum += l.to_f64_lossy();
                add_scaled(&mut acc, &g, T::one());
            }
            let step = T::from_f64_lossy(-tc.learning_rate / chunk.len() as f64);
            add_scaled(&mut w, &acc, step);
        }
        let mut correct = 0usize;
        for f in frames {
            if predict(cfg, &w, &f.data)? == f.label {
                correct += 1;
            }
        }
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / frames.len() as f64,
            train_accuracy: correct as f64 / frames.len() as f64,
        });
    }
    Ok((w, history))
}
