//! Deterministic 32-bit fixed-point scalar with saturation.
//!
//! A [`FixedScalar`] is an `i32` code interpreted as `code * 2^-frac_bits`
//! under a [`FixedPointSpec`]. Dot products accumulate exactly in an
//! [`i128`] at `2 * frac_bits` scale and are rounded back once per output
//! element ([`WideAcc::renormalize`]). The 128-bit accumulator leaves
//! headroom for far more than 2^60 product terms, orders of magnitude
//! beyond the few thousand summands any layer here produces, so
//! accumulator overflow is impossible by construction.

use crate::error::{Error, Result};

/// Rounding applied when dropping fraction bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Rounding {
    /// Round to nearest; ties go to the even code.
    NearestEven,
    /// Drop bits, rounding toward negative infinity like a hardware
    /// two's-complement truncation.
    Truncate,
}

/// Behavior when a value exceeds the representable range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Overflow {
    Saturate,
    Wrap,
}

/// Q-format contract: 32 total bits, `frac_bits` of fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FixedPointSpec {
    pub total_bits: u32,
    pub frac_bits: u32,
    pub rounding: Rounding,
    pub overflow: Overflow,
}

impl Default for FixedPointSpec {
    /// Q16.16, nearest-even, saturating. 16 integer bits cover the
    /// activation ranges observed by the range audit with ample margin.
    fn default() -> Self {
        Self { total_bits: 32, frac_bits: 16, rounding: Rounding::NearestEven, overflow: Overflow::Saturate }
    }
}

impl FixedPointSpec {
    pub fn new(frac_bits: u32, rounding: Rounding, overflow: Overflow) -> Result<Self> {
        let spec = Self { total_bits: 32, frac_bits, rounding, overflow };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_bits != 32 {
            return Err(Error::Config(format!("total_bits must be 32, got {}", self.total_bits)));
        }
        if !(1..=30).contains(&self.frac_bits) {
            return Err(Error::Config(format!("frac_bits must be in 1..=30, got {}", self.frac_bits)));
        }
        Ok(())
    }

    /// Size of one code step, `2^-frac_bits`.
    pub fn resolution(&self) -> f64 {
        (self.frac_bits as f64).exp2().recip()
    }

    /// Largest representable value, `2^(31 - frac) - 2^-frac`.
    pub fn max_value(&self) -> f64 {
        i32::MAX as f64 * self.resolution()
    }

    /// Smallest representable value, `-2^(31 - frac)`.
    pub fn min_value(&self) -> f64 {
        i32::MIN as f64 * self.resolution()
    }

    /// Short Q-format label such as `Q16.16`.
    pub fn format_label(&self) -> String {
        format!("Q{}.{}", self.total_bits - self.frac_bits, self.frac_bits)
    }
}

/// One 32-bit fixed-point value; meaningful only together with its spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FixedScalar {
    pub code: i32,
}

impl FixedScalar {
    pub const ZERO: FixedScalar = FixedScalar { code: 0 };

    pub fn value(self, spec: &FixedPointSpec) -> f64 {
        dequantize(self, spec)
    }
}

/// Nearest representable code for `x`; out-of-range inputs saturate or
/// wrap per the spec. Total: NaN maps to code 0.
pub fn quantize(x: f64, spec: &FixedPointSpec) -> FixedScalar {
    if x.is_nan() {
        return FixedScalar::ZERO;
    }
    let scaled = x * (spec.frac_bits as f64).exp2();
    let rounded = match spec.rounding {
        Rounding::NearestEven => scaled.round_ties_even(),
        Rounding::Truncate => scaled.floor(),
    };
    let code = match spec.overflow {
        Overflow::Saturate => {
            if rounded >= i32::MAX as f64 {
                i32::MAX
            } else if rounded <= i32::MIN as f64 {
                i32::MIN
            } else {
                rounded as i32
            }
        }
        Overflow::Wrap => {
            // Infinities have no finite code to wrap; clamp them.
            if rounded.is_infinite() {
                if rounded > 0.0 {
                    i32::MAX
                } else {
                    i32::MIN
                }
            } else {
                (rounded as i128) as i32
            }
        }
    };
    FixedScalar { code }
}

/// Exact value of a code: `code * 2^-frac_bits`.
pub fn dequantize(q: FixedScalar, spec: &FixedPointSpec) -> f64 {
    q.code as f64 * spec.resolution()
}

/// True when `x` would saturate under `spec` (used for audit reporting).
pub fn saturates(x: f64, spec: &FixedPointSpec) -> bool {
    if x.is_nan() {
        return false;
    }
    let scaled = x * (spec.frac_bits as f64).exp2();
    let rounded = match spec.rounding {
        Rounding::NearestEven => scaled.round_ties_even(),
        Rounding::Truncate => scaled.floor(),
    };
    rounded > i32::MAX as f64 || rounded < i32::MIN as f64
}

/// Double-width accumulator at `2 * frac_bits` scale.
#[derive(Debug, Clone, Copy, Default)]
pub struct WideAcc {
    acc: i128,
}

impl WideAcc {
    pub fn zero() -> Self {
        Self { acc: 0 }
    }

    /// Start from a bias already expressed at `frac_bits` scale.
    pub fn from_bias(bias: FixedScalar, spec: &FixedPointSpec) -> Self {
        Self { acc: (bias.code as i128) << spec.frac_bits }
    }

    /// Accumulate one product, exact in 128 bits.
    #[inline]
    pub fn mac(&mut self, a: FixedScalar, b: FixedScalar) {
        self.acc += a.code as i128 * b.code as i128;
    }

    pub fn raw(&self) -> i128 {
        self.acc
    }

    /// Round from `2 * frac_bits` back to `frac_bits` scale and narrow to
    /// 32 bits under the spec's rounding and overflow rules.
    pub fn renormalize(self, spec: &FixedPointSpec) -> FixedScalar {
        let shifted = round_shift(self.acc, spec.frac_bits, spec.rounding);
        FixedScalar { code: narrow(shifted, spec.overflow) }
    }
}

/// Drop `shift` low bits of `acc` with the requested rounding.
fn round_shift(acc: i128, shift: u32, rounding: Rounding) -> i128 {
    if shift == 0 {
        return acc;
    }
    let floor = acc >> shift;
    match rounding {
        Rounding::Truncate => floor,
        Rounding::NearestEven => {
            let rem = acc - (floor << shift);
            let half = 1i128 << (shift - 1);
            if rem > half || (rem == half && floor & 1 == 1) {
                floor + 1
            } else {
                floor
            }
        }
    }
}

fn narrow(v: i128, overflow: Overflow) -> i32 {
    match overflow {
        Overflow::Saturate => {
            if v > i32::MAX as i128 {
                i32::MAX
            } else if v < i32::MIN as i128 {
                i32::MIN
            } else {
                v as i32
            }
        }
        Overflow::Wrap => v as i32,
    }
}

/// Saturating (or wrapping) sum of two codes in the same spec.
pub fn fixed_add(a: FixedScalar, b: FixedScalar, spec: &FixedPointSpec) -> FixedScalar {
    FixedScalar { code: narrow(a.code as i128 + b.code as i128, spec.overflow) }
}

/// Product of two codes, rounded back to `frac_bits` scale.
pub fn fixed_mul(a: FixedScalar, b: FixedScalar, spec: &FixedPointSpec) -> FixedScalar {
    let mut acc = WideAcc::zero();
    acc.mac(a, b);
    acc.renormalize(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q16() -> FixedPointSpec {
        FixedPointSpec::default()
    }

    #[test]
    fn quantize_exact_codes() {
        assert_eq!(quantize(0.0, &q16()).code, 0);
        assert_eq!(quantize(1.0, &q16()).code, 65536);
        assert_eq!(quantize(-1.0, &q16()).code, -65536);
        assert_eq!(quantize(0.5, &q16()).code, 32768);
    }

    #[test]
    fn quantize_point_one_rounds_to_nearest() {
        // 0.1 * 2^16 = 6553.6, and 6554 is the nearer neighbor.
        let q = quantize(0.1, &q16());
        assert_eq!(q.code, 6554);
        let below = (6553.0f64) / 65536.0;
        let above = (6554.0f64) / 65536.0;
        assert!((above - 0.1).abs() < (0.1 - below).abs());
    }

    #[test]
    fn quantize_tie_goes_to_even() {
        // 2^-17 scales to exactly 0.5: the even neighbor is 0.
        assert_eq!(quantize(2f64.powi(-17), &q16()).code, 0);
        // 3 * 2^-17 scales to 1.5: the even neighbor is 2.
        assert_eq!(quantize(3.0 * 2f64.powi(-17), &q16()).code, 2);
    }

    #[test]
    fn quantize_saturates_out_of_range() {
        assert_eq!(quantize(1e9, &q16()).code, i32::MAX);
        assert_eq!(quantize(-1e9, &q16()).code, i32::MIN);
        assert_eq!(quantize(f64::INFINITY, &q16()).code, i32::MAX);
        assert_eq!(quantize(f64::NAN, &q16()).code, 0);
    }

    #[test]
    fn truncate_rounds_toward_negative_infinity() {
        let spec = FixedPointSpec::new(16, Rounding::Truncate, Overflow::Saturate).unwrap();
        assert_eq!(quantize(0.1, &spec).code, 6553);
        assert_eq!(quantize(-0.1, &spec).code, -6554);
    }

    #[test]
    fn roundtrip_is_identity_on_codes() {
        let spec = q16();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let code: i32 = rng.gen();
            let q = FixedScalar { code };
            assert_eq!(quantize(dequantize(q, &spec), &spec), q);
        }
    }

    #[test]
    fn roundtrip_error_within_half_step() {
        let spec = q16();
        let half = spec.resolution() / 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10_000 {
            let x: f64 = rng.gen_range(spec.min_value()..spec.max_value());
            let err = dequantize(quantize(x, &spec), &spec) - x;
            assert!(err.abs() <= half, "x={x} err={err}");
        }
    }

    #[test]
    fn mac_exact_cases() {
        let spec = q16();
        let one = quantize(1.0, &spec);
        let half = quantize(0.5, &spec);

        let mut acc = WideAcc::zero();
        acc.mac(one, one);
        assert_eq!(dequantize(acc.renormalize(&spec), &spec), 1.0);

        let mut acc = WideAcc::zero();
        acc.mac(half, half);
        assert_eq!(dequantize(acc.renormalize(&spec), &spec), 0.25);
    }

    #[test]
    fn dot_product_tracks_float_within_bound() {
        let spec = q16();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let n = 16;
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let mut acc = WideAcc::zero();
            for i in 0..n {
                acc.mac(quantize(a[i], &spec), quantize(b[i], &spec));
            }
            let fixed: f64 = dequantize(acc.renormalize(&spec), &spec);
            let float: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let bound = spec.resolution() * n as f64;
            assert!((fixed - float).abs() <= bound, "fixed={fixed} float={float} bound={bound}");
        }
    }

    #[test]
    fn saturating_ops_stay_in_range() {
        let spec = q16();
        let max = FixedScalar { code: i32::MAX };
        assert_eq!(fixed_add(max, max, &spec).code, i32::MAX);
        assert_eq!(fixed_mul(max, max, &spec).code, i32::MAX);
        let min = FixedScalar { code: i32::MIN };
        assert_eq!(fixed_add(min, min, &spec).code, i32::MIN);
    }

    #[test]
    fn wrap_mode_wraps() {
        let spec = FixedPointSpec::new(16, Rounding::NearestEven, Overflow::Wrap).unwrap();
        let max = FixedScalar { code: i32::MAX };
        let one_code = FixedScalar { code: 1 };
        assert_eq!(fixed_add(max, one_code, &spec).code, i32::MIN);
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quantize_monotone_under_saturation(x in -1e6f64..1e6, y in -1e6f64..1e6) {
                let spec = q16();
                let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
                prop_assert!(quantize(lo, &spec).code <= quantize(hi, &spec).code);
            }

            #[test]
            fn roundtrip_identity_any_code(code in any::<i32>(), frac in 1u32..=30) {
                let spec = FixedPointSpec::new(frac, Rounding::NearestEven, Overflow::Saturate).unwrap();
                let q = FixedScalar { code };
                prop_assert_eq!(quantize(dequantize(q, &spec), &spec), q);
            }
        }
    }
}
