//! Float inference: the full stage pipeline with every intermediate kept.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{conv1d_time_named, conv2d_named, maxpool2d, relu, Tensor};

use super::config::GateCnnConfig;
use super::weights::ModelWeights;

/// Every intermediate of one forward pass, named after its stage.
///
/// Shapes for a valid input:
/// - `x1` `(1, H, W)`: fuse convolution output
/// - `x_ds` `(1, H', W')`: pooled map
/// - `x_conv1` `(D, W')`: embedding, one column per time instant
/// - `z` `(D, W')`: gate path pre-activation
/// - `x_conv2` `(D, W')`: content path
/// - `x_conv3`, `x_conv4` `(F, D, W')`: cascade stages 1 and 2, post-ReLU
/// - `x_conv5` `(D, W')`: cascade stage 3, linear
/// - `y` `(D, W')`: gated combine output
/// - `v` `[W']`: averaged feature vector
/// - `logits` `[num_classes]`
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub x1: Tensor<T>,
    pub x_ds: Tensor<T>,
    pub x_conv1: Tensor<T>,
    pub z: Tensor<T>,
    pub x_conv2: Tensor<T>,
    pub x_conv3: Tensor<T>,
    pub x_conv4: Tensor<T>,
    pub x_conv5: Tensor<T>,
    pub y: Tensor<T>,
    pub v: Tensor<T>,
    pub logits: Tensor<T>,
}

/// Runs the full network on one `(in_channels, doppler_bins, time_steps)`
/// map and returns every intermediate. Errors carry the stage name.
pub fn forward<T: Real>(
    cfg: &GateCnnConfig,
    w: &ModelWeights<T>,
    x: &Tensor<T>,
) -> Result<ForwardTrace<T>> {
    w.validate(cfg)?;
    let expected = cfg.input_shape();
    if x.shape() != expected.as_slice() {
        return Err(Error::shape(
            "input",
            format!("expected {:?}, got {:?}", expected, x.shape()),
        ));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("input"));
    }

    let d = cfg.embed_dim;
    let w_prime = cfg.w_prime();

    // Fuse: collapse input channels, same padding keeps H x W.
    let x1 = conv2d_named("fuse", x, &w.w_c0, w.b_c0.data(), (1, 1), cfg.fuse_padding())?;

    // Pool: window and stride both `pool`, extents shrink to H' x W'.
    let x_ds = maxpool2d(&x1, cfg.pool, cfg.pool).map_err(|e| restage(e, "pool"))?;

    // Embed: kernel spans the whole Doppler column, no padding, so the
    // output is one value per (channel, time) pair.
    let emb = conv2d_named("embed", &x_ds, &w.w_c1, w.b_c1.data(), (1, 1), (0, 0))?;
    let x_conv1 = emb.reshaped(vec![d, w_prime]).map_err(|e| restage(e, "embed"))?;

    // Gate and content paths: time convolutions over the same embedding.
    let z = conv1d_time_named("gate", &x_conv1, &w.w_g, w.b_g.data())?;
    let x_conv2 = conv1d_time_named("content", &x_conv1, &w.w_p, w.b_p.data())?;

    // Cascade: treat the content map as a 1-channel D x W' image.
    let c_in = x_conv2.reshaped(vec![1, d, w_prime]).map_err(|e| restage(e, "cascade1"))?;
    let pad = cfg.cascade_padding();
    let x_conv3 = relu(&conv2d_named("cascade1", &c_in, &w.w_c2, w.b_c2.data(), (1, 1), pad)?);
    let x_conv4 = relu(&conv2d_named("cascade2", &x_conv3, &w.w_c3, w.b_c3.data(), (1, 1), pad)?);
    let c5 = conv2d_named("cascade3", &x_conv4, &w.w_c4, w.b_c4.data(), (1, 1), pad)?;
    let x_conv5 = c5.reshaped(vec![d, w_prime]).map_err(|e| restage(e, "cascade3"))?;

    // Combine: content modulated by the rectified gate, plus the embedding
    // as a residual. Per element: y = x5 * max(z, 0) + x1.
    let mut y = Tensor::zeros(vec![d, w_prime]);
    {
        let yd = y.data_mut();
        for (i, ((&x5, &zv), &r)) in
            x_conv5.data().iter().zip(z.data()).zip(x_conv1.data()).enumerate()
        {
            let gate = if zv > T::zero() { zv } else { T::zero() };
            yd[i] = x5 * gate + r;
        }
    }

    // Average: a (D, 1) column kernel collapses the channel axis.
    let y3 = y.reshaped(vec![1, d, w_prime]).map_err(|e| restage(e, "average"))?;
    let avg = conv2d_named("average", &y3, &w.w_avg, w.b_avg.data(), (1, 1), (0, 0))?;
    let v = avg.reshaped(vec![w_prime]).map_err(|e| restage(e, "average"))?;

    // Classify: dense layer over the feature vector.
    let n = cfg.num_classes;
    let mut logits = Tensor::zeros(vec![n]);
    for k in 0..n {
        let mut acc = w.b_cls.data()[k];
        for t in 0..w_prime {
            acc += w.w_cls.at2(k, t) * v.data()[t];
        }
        logits.data_mut()[k] = acc;
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("classify"));
    }

    Ok(ForwardTrace { x1, x_ds, x_conv1, z, x_conv2, x_conv3, x_conv4, x_conv5, y, v, logits })
}

/// Class index with the largest logit; ties break to the lowest index.
pub fn predict<T: Real>(cfg: &GateCnnConfig, w: &ModelWeights<T>, x: &Tensor<T>) -> Result<usize> {
    Ok(forward(cfg, w, x)?.logits.argmax())
}

fn restage(e: Error, stage: &'static str) -> Error {
    match e {
        Error::Shape { detail, .. } => Error::Shape { stage, detail },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_input(cfg: &GateCnnConfig, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = cfg.input_shape().to_vec();
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn trace_shapes_match_config() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 1).unwrap();
        let t = forward(&cfg, &w, &rand_input(&cfg, 2)).unwrap();
        assert_eq!(t.x1.shape(), &[1, 30, 28]);
        assert_eq!(t.x_ds.shape(), &[1, 15, 14]);
        assert_eq!(t.x_conv1.shape(), &[16, 14]);
        assert_eq!(t.z.shape(), &[16, 14]);
        assert_eq!(t.x_conv2.shape(), &[16, 14]);
        assert_eq!(t.x_conv3.shape(), &[8, 16, 14]);
        assert_eq!(t.x_conv4.shape(), &[8, 16, 14]);
        assert_eq!(t.x_conv5.shape(), &[16, 14]);
        assert_eq!(t.y.shape(), &[16, 14]);
        assert_eq!(t.v.shape(), &[14]);
        assert_eq!(t.logits.shape(), &[6]);
    }

    #[test]
    fn combine_recomputes_exactly() {
        // y must equal x5 * relu(z) + x1 elementwise, reproduced with the
        // same operation order, so equality is exact.
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 5).unwrap();
        let t = forward(&cfg, &w, &rand_input(&cfg, 6)).unwrap();
        for ((&y, &x5), (&z, &x1)) in t
            .y
            .data()
            .iter()
            .zip(t.x_conv5.data())
            .zip(t.z.data().iter().zip(t.x_conv1.data()))
        {
            let gate = if z > 0.0 { z } else { 0.0 };
            assert_eq!(y, x5 * gate + x1);
        }
    }

    #[test]
    fn zero_cascade_tail_reduces_to_residual() {
        // With w_c4 and b_c4 zero the content path contributes nothing,
        // so y == x_conv1 exactly.
        let cfg = GateCnnConfig::default();
        let mut w = ModelWeights::<f64>::init(&cfg, 9).unwrap();
        w.w_c4.data_mut().fill(0.0);
        w.b_c4.data_mut().fill(0.0);
        let t = forward(&cfg, &w, &rand_input(&cfg, 10)).unwrap();
        assert_eq!(t.y, t.x_conv1);
    }

    #[test]
    fn negative_gate_suppresses_content() {
        // Forcing z < 0 everywhere (large negative gate bias) zeroes the
        // gated term.
        let cfg = GateCnnConfig::default();
        let mut w = ModelWeights::<f64>::init(&cfg, 12).unwrap();
        w.b_g.data_mut().fill(-1e6);
        let t = forward(&cfg, &w, &rand_input(&cfg, 13)).unwrap();
        assert!(t.z.data().iter().all(|&z| z < 0.0));
        assert_eq!(t.y, t.x_conv1);
    }

    #[test]
    fn rejects_wrong_input_shape_and_nan() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 1).unwrap();
        let bad = Tensor::<f64>::zeros(vec![1, 30, 27]);
        let err = forward(&cfg, &w, &bad).unwrap_err();
        assert!(err.to_string().contains("input"), "{err}");

        let mut x = rand_input(&cfg, 2);
        x.data_mut()[0] = f64::NAN;
        assert!(forward(&cfg, &w, &x).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 21).unwrap();
        let x = rand_input(&cfg, 22);
        let a = forward(&cfg, &w, &x).unwrap();
        let b = forward(&cfg, &w, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predict_breaks_ties_low() {
        // Zero classifier weights and equal biases give equal logits.
        let cfg = GateCnnConfig::default();
        let mut w = ModelWeights::<f64>::init(&cfg, 30).unwrap();
        w.w_cls.data_mut().fill(0.0);
        w.b_cls.data_mut().fill(0.25);
        assert_eq!(predict(&cfg, &w, &rand_input(&cfg, 31)).unwrap(), 0);
    }

    #[test]
    fn f32_and_f64_agree_loosely() {
        let cfg = GateCnnConfig::default();
        let w64 = ModelWeights::<f64>::init(&cfg, 40).unwrap();
        let w32 = ModelWeights::<f32>::init(&cfg, 40).unwrap();
        let x64 = rand_input(&cfg, 41);
        let x32 = Tensor::<f32>::new(
            x64.shape().to_vec(),
            x64.data().iter().map(|&v| v as f32).collect(),
        )
        .unwrap();
        let t64 = forward(&cfg, &w64, &x64).unwrap();
        let t32 = forward(&cfg, &w32, &x32).unwrap();
        for (&a, &b) in t64.logits.data().iter().zip(t32.logits.data()) {
            assert!((a - b as f64).abs() < 1e-3, "{a} vs {b}");
        }
    }
}
