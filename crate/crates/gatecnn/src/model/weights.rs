//! Parameter container, initialization, and uniform entry access.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Tensor, Tensor4};

use super::config::GateCnnConfig;

/// All learnable tensors of one network, in forward order.
///
/// Shapes are fixed by the owning config:
/// - `w_c0` `(1, C0, fh, fw)`, `b_c0` `[1]`: fuse convolution
/// - `w_c1` `(D, 1, H', 1)`, `b_c1` `[D]`: embed convolution
/// - `w_g` `(D, D, k_t)`, `b_g` `[D]`: gate time convolution
/// - `w_p` `(D, D, k_t)`, `b_p` `[D]`: content time convolution
/// - `w_c2` `(F, 1, ch, cw)`, `b_c2` `[F]`: cascade 1
/// - `w_c3` `(F, F, ch, cw)`, `b_c3` `[F]`: cascade 2
/// - `w_c4` `(1, F, ch, cw)`, `b_c4` `[1]`: cascade 3
/// - `w_avg` `(1, 1, D, 1)`, `b_avg` `[1]`: averaging head
/// - `w_cls` `(N, W')`, `b_cls` `[N]`: dense classifier
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub w_c0: Tensor4<T>,
    pub b_c0: Tensor<T>,
    pub w_c1: Tensor4<T>,
    pub b_c1: Tensor<T>,
    pub w_g: Tensor<T>,
    pub b_g: Tensor<T>,
    pub w_p: Tensor<T>,
    pub b_p: Tensor<T>,
    pub w_c2: Tensor4<T>,
    pub b_c2: Tensor<T>,
    pub w_c3: Tensor4<T>,
    pub b_c3: Tensor<T>,
    pub w_c4: Tensor4<T>,
    pub b_c4: Tensor<T>,
    pub w_avg: Tensor4<T>,
    pub b_avg: Tensor<T>,
    pub w_cls: Tensor<T>,
    pub b_cls: Tensor<T>,
}

/// Serialization order of the weight entries. Formats that walk the
/// tensors (weight files, quantization, ROM export) follow this order.
pub const WEIGHT_NAMES: [&str; 18] = [
    "w_c0", "b_c0", "w_c1", "b_c1", "w_g", "b_g", "w_p", "b_p", "w_c2", "b_c2", "w_c3", "b_c3",
    "w_c4", "b_c4", "w_avg", "b_avg", "w_cls", "b_cls",
];

/// Expected extents of every weight entry, in `WEIGHT_NAMES` order.
pub fn expected_extents(cfg: &GateCnnConfig) -> Vec<(&'static str, Vec<usize>)> {
    let d = cfg.embed_dim;
    let f = cfg.content_channels;
    let (fh, fw) = cfg.fuse_kernel;
    let (ch, cw) = cfg.cascade_kernel;
    vec![
        ("w_c0", vec![1, cfg.in_channels, fh, fw]),
        ("b_c0", vec![1]),
        ("w_c1", vec![d, 1, cfg.h_prime(), 1]),
        ("b_c1", vec![d]),
        ("w_g", vec![d, d, cfg.gate_taps]),
        ("b_g", vec![d]),
        ("w_p", vec![d, d, cfg.gate_taps]),
        ("b_p", vec![d]),
        ("w_c2", vec![f, 1, ch, cw]),
        ("b_c2", vec![f]),
        ("w_c3", vec![f, f, ch, cw]),
        ("b_c3", vec![f]),
        ("w_c4", vec![1, f, ch, cw]),
        ("b_c4", vec![1]),
        ("w_avg", vec![1, 1, d, 1]),
        ("b_avg", vec![1]),
        ("w_cls", vec![cfg.num_classes, cfg.w_prime()]),
        ("b_cls", vec![cfg.num_classes]),
    ]
}

impl<T: Real> ModelWeights<T> {
    /// All tensors zero. Used as the gradient accumulator shape.
    pub fn zeros(cfg: &GateCnnConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let f = cfg.content_channels;
        let (fh, fw) = cfg.fuse_kernel;
        let (ch, cw) = cfg.cascade_kernel;
        Ok(Self {
            w_c0: Tensor4::zeros(1, cfg.in_channels, fh, fw),
            b_c0: Tensor::zeros(vec![1]),
            w_c1: Tensor4::zeros(d, 1, cfg.h_prime(), 1),
            b_c1: Tensor::zeros(vec![d]),
            w_g: Tensor::zeros(vec![d, d, cfg.gate_taps]),
            b_g: Tensor::zeros(vec![d]),
            w_p: Tensor::zeros(vec![d, d, cfg.gate_taps]),
            b_p: Tensor::zeros(vec![d]),
            w_c2: Tensor4::zeros(f, 1, ch, cw),
            b_c2: Tensor::zeros(vec![f]),
            w_c3: Tensor4::zeros(f, f, ch, cw),
            b_c3: Tensor::zeros(vec![f]),
            w_c4: Tensor4::zeros(1, f, ch, cw),
            b_c4: Tensor::zeros(vec![1]),
            w_avg: Tensor4::zeros(1, 1, d, 1),
            b_avg: Tensor::zeros(vec![1]),
            w_cls: Tensor::zeros(vec![cfg.num_classes, cfg.w_prime()]),
            b_cls: Tensor::zeros(vec![cfg.num_classes]),
        })
    }

    /// Seeded random initialization.
    ///
    /// Every tensor except the averaging head draws i.i.d. uniform values
    /// from `[-sqrt(1/fan_in), +sqrt(1/fan_in)]`, where `fan_in` is the
    /// number of inputs feeding one output element. The averaging head is
    /// deterministic: `w_avg` holds `1/D` everywhere and `b_avg` is zero,
    /// so the untrained head starts as a plain column mean. Tensors are
    /// drawn in `WEIGHT_NAMES` order, each row-major, weights before
    /// bias, so a seed pins the full parameter vector.
    pub fn init(cfg: &GateCnnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut w = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let d = cfg.embed_dim;
        let f = cfg.content_channels;
        let (fh, fw) = cfg.fuse_kernel;
        let (ch, cw) = cfg.cascade_kernel;

        let fuse_fan = cfg.in_channels * fh * fw;
        fill_uniform(&mut rng, w.w_c0.data_mut(), fuse_fan);
        fill_uniform(&mut rng, w.b_c0.data_mut(), fuse_fan);
        let embed_fan = cfg.h_prime();
        fill_uniform(&mut rng, w.w_c1.data_mut(), embed_fan);
        fill_uniform(&mut rng, w.b_c1.data_mut(), embed_fan);
        let time_fan = d * cfg.gate_taps;
        fill_uniform(&mut rng, w.w_g.data_mut(), time_fan);
        fill_uniform(&mut rng, w.b_g.data_mut(), time_fan);
        fill_uniform(&mut rng, w.w_p.data_mut(), time_fan);
        fill_uniform(&mut rng, w.b_p.data_mut(), time_fan);
        let c2_fan = ch * cw;
        fill_uniform(&mut rng, w.w_c2.data_mut(), c2_fan);
        fill_uniform(&mut rng, w.b_c2.data_mut(), c2_fan);
        let c3_fan = f * ch * cw;
        fill_uniform(&mut rng, w.w_c3.data_mut(), c3_fan);
        fill_uniform(&mut rng, w.b_c3.data_mut(), c3_fan);
        fill_uniform(&mut rng, w.w_c4.data_mut(), c3_fan);
        fill_uniform(&mut rng, w.b_c4.data_mut(), c3_fan);

        let inv_d = T::from_f64_lossy(1.0 / d as f64);
        for x in w.w_avg.data_mut() {
            *x = inv_d;
        }
        // b_avg stays zero.

        let cls_fan = cfg.w_prime();
        fill_uniform(&mut rng, w.w_cls.data_mut(), cls_fan);
        fill_uniform(&mut rng, w.b_cls.data_mut(), cls_fan);
        Ok(w)
    }

    /// Checks shapes against `cfg` and that every value is finite.
    pub fn validate(&self, cfg: &GateCnnConfig) -> Result<()> {
        cfg.validate()?;
        for ((name, extents, data), (exp_name, exp_extents)) in
            self.entries().iter().zip(expected_extents(cfg))
        {
            debug_assert_eq!(*name, exp_name);
            if *extents != exp_extents {
                return Err(Error::shape(
                    "weights",
                    format!("{name} has extents {extents:?}, config expects {exp_extents:?}"),
                ));
            }
            if !data.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("weights"));
            }
        }
        Ok(())
    }

    /// Entries as `(name, extents, flat data)` in serialization order.
    pub fn entries(&self) -> Vec<(&'static str, Vec<usize>, &[T])> {
        vec![
            ("w_c0", self.w_c0.extents(), self.w_c0.data()),
            ("b_c0", self.b_c0.shape().to_vec(), self.b_c0.data()),
            ("w_c1", self.w_c1.extents(), self.w_c1.data()),
            ("b_c1", self.b_c1.shape().to_vec(), self.b_c1.data()),
            ("w_g", self.w_g.shape().to_vec(), self.w_g.data()),
            ("b_g", self.b_g.shape().to_vec(), self.b_g.data()),
            ("w_p", self.w_p.shape().to_vec(), self.w_p.data()),
            ("b_p", self.b_p.shape().to_vec(), self.b_p.data()),
            ("w_c2", self.w_c2.extents(), self.w_c2.data()),
            ("b_c2", self.b_c2.shape().to_vec(), self.b_c2.data()),
            ("w_c3", self.w_c3.extents(), self.w_c3.data()),
            ("b_c3", self.b_c3.shape().to_vec(), self.b_c3.data()),
            ("w_c4", self.w_c4.extents(), self.w_c4.data()),
            ("b_c4", self.b_c4.shape().to_vec(), self.b_c4.data()),
            ("w_avg", self.w_avg.extents(), self.w_avg.data()),
            ("b_avg", self.b_avg.shape().to_vec(), self.b_avg.data()),
            ("w_cls", self.w_cls.shape().to_vec(), self.w_cls.data()),
            ("b_cls", self.b_cls.shape().to_vec(), self.b_cls.data()),
        ]
    }

    /// Mutable flat views in the same order as `entries`.
    pub fn entries_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.w_c0.data_mut(),
            self.b_c0.data_mut(),
            self.w_c1.data_mut(),
            self.b_c1.data_mut(),
            self.w_g.data_mut(),
            self.b_g.data_mut(),
            self.w_p.data_mut(),
            self.b_p.data_mut(),
            self.w_c2.data_mut(),
            self.b_c2.data_mut(),
            self.w_c3.data_mut(),
            self.b_c3.data_mut(),
            self.w_c4.data_mut(),
            self.b_c4.data_mut(),
            self.w_avg.data_mut(),
            self.b_avg.data_mut(),
            self.w_cls.data_mut(),
            self.b_cls.data_mut(),
        ]
    }

    /// Number of stored scalars, summed by enumerating the tensors.
    pub fn total_params(&self) -> u64 {
        self.entries().iter().map(|(_, _, data)| data.len() as u64).sum()
    }
}

fn fill_uniform<T: Real, R: Rng>(rng: &mut R, data: &mut [T], fan_in: usize) {
    let bound = (1.0 / fan_in as f64).sqrt();
    for x in data {
        *x = T::from_f64_lossy(rng.gen_range(-bound..=bound));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = GateCnnConfig::default();
        let a = ModelWeights::<f64>::init(&cfg, 7).unwrap();
        let b = ModelWeights::<f64>::init(&cfg, 7).unwrap();
        let c = ModelWeights::<f64>::init(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 3).unwrap();
        let fuse_bound = (1.0 / 9.0f64).sqrt();
        assert!(w.w_c0.data().iter().all(|x| x.abs() <= fuse_bound));
        let cls_bound = (1.0 / 14.0f64).sqrt();
        assert!(w.w_cls.data().iter().all(|x| x.abs() <= cls_bound));
    }

    #[test]
    fn averaging_head_starts_as_column_mean() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 11).unwrap();
        assert!(w.w_avg.data().iter().all(|&x| x == 1.0 / 16.0));
        assert_eq!(w.b_avg.data(), &[0.0]);
    }

    #[test]
    fn entries_match_expected_extents() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::zeros(&cfg).unwrap();
        let entries = w.entries();
        let expected = expected_extents(&cfg);
        assert_eq!(entries.len(), 18);
        for ((name, extents, data), (exp_name, exp_extents)) in entries.iter().zip(&expected) {
            assert_eq!(name, exp_name);
            assert_eq!(extents, exp_extents);
            assert_eq!(data.len(), exp_extents.iter().product::<usize>());
        }
        w.validate(&cfg).unwrap();
    }

    #[test]
    fn validate_rejects_non_finite() {
        let cfg = GateCnnConfig::default();
        let mut w = ModelWeights::<f64>::zeros(&cfg).unwrap();
        w.w_c3.data_mut()[0] = f64::NAN;
        assert!(w.validate(&cfg).is_err());
    }
}
