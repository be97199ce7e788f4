//! Minimal dense tensors and the convolution/pooling primitives the
//! network is assembled from.
//!
//! # Layout
//!
//! * [`Tensor`]: rank 1 to 3, row-major. Rank 3 is `(channel, height, width)`
//!   and index `(c, h, w)` maps to `data[(c * H + h) * W + w]`.
//! * [`Tensor4`]: convolution kernels `(out_channels, in_channels, kh, kw)`.
//!
//! All ops are pure functions over immutable inputs. Convolutions
//! accumulate one output element at a time in a fixed loop order
//! (channel, then kernel row, then kernel column) starting from the bias,
//! so results are reproducible bit for bit.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major tensor of rank 1 to 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    /// Build a tensor from a shape and flat row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Zero-filled tensor. Panics on an invalid shape; use [`Tensor::new`]
    /// when the shape comes from untrusted input.
    pub fn zeros(shape: Vec<usize>) -> Self {
        validate_shape(&shape).expect("valid tensor shape");
        let len = shape.iter().product();
        Self { shape, data: vec![T::zero(); len] }
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Same data under a new shape of equal element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    #[inline]
    pub fn at3(&self, c: usize, h: usize, w: usize) -> T {
        debug_assert_eq!(self.rank(), 3);
        self.data[(c * self.shape[1] + h) * self.shape[2] + w]
    }

    #[inline]
    pub fn set3(&mut self, c: usize, h: usize, w: usize, v: T) {
        debug_assert_eq!(self.rank(), 3);
        let idx = (c * self.shape[1] + h) * self.shape[2] + w;
        self.data[idx] = v;
    }

    #[inline]
    pub fn at2(&self, h: usize, w: usize) -> T {
        debug_assert_eq!(self.rank(), 2);
        self.data[h * self.shape[1] + w]
    }

    #[inline]
    pub fn set2(&mut self, h: usize, w: usize, v: T) {
        debug_assert_eq!(self.rank(), 2);
        let idx = h * self.shape[1] + w;
        self.data[idx] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Index of the largest element; ties break to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate().skip(1) {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(Error::shape("tensor", format!("rank must be 1..=3, got {}", shape.len())));
    }
    if shape.iter().any(|&e| e == 0) {
        return Err(Error::shape("tensor", format!("all extents must be >= 1, got {shape:?}")));
    }
    Ok(())
}

/// Convolution kernel `(out_channels, in_channels, kh, kw)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    out_c: usize,
    in_c: usize,
    kh: usize,
    kw: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(out_c: usize, in_c: usize, kh: usize, kw: usize, data: Vec<T>) -> Result<Self> {
        if out_c == 0 || in_c == 0 || kh == 0 || kw == 0 {
            return Err(Error::shape("kernel", "all kernel extents must be >= 1".to_string()));
        }
        if data.len() != out_c * in_c * kh * kw {
            return Err(Error::shape(
                "kernel",
                format!(
                    "kernel ({out_c},{in_c},{kh},{kw}) needs {} elements, got {}",
                    out_c * in_c * kh * kw,
                    data.len()
                ),
            ));
        }
        Ok(Self { out_c, in_c, kh, kw, data })
    }

    pub fn zeros(out_c: usize, in_c: usize, kh: usize, kw: usize) -> Self {
        Self::new(out_c, in_c, kh, kw, vec![T::zero(); out_c * in_c * kh * kw]).expect("nonzero extents")
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.out_c, self.in_c, self.kh, self.kw)
    }

    /// Extents as a vector, for uniform treatment alongside [`Tensor`].
    pub fn extents(&self) -> Vec<usize> {
        vec![self.out_c, self.in_c, self.kh, self.kw]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, o: usize, c: usize, u: usize, v: usize) -> T {
        self.data[((o * self.in_c + c) * self.kh + u) * self.kw + v]
    }

    #[inline]
    pub fn set(&mut self, o: usize, c: usize, u: usize, v: usize, val: T) {
        let idx = ((o * self.in_c + c) * self.kh + u) * self.kw + v;
        self.data[idx] = val;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// 2D cross-correlation with zero padding.
///
/// `input` is `(C, H, W)`, `kernel` is `(O, C, kh, kw)`, `bias` has length
/// `O`. Output extents are `floor((H + 2*ph - kh) / sh) + 1` and likewise
/// for width. Out-of-range taps read as zero and are skipped.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor4<T>,
    bias: &[T],
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<T>> {
    conv2d_named("conv2d", input, kernel, bias, stride, padding)
}

/// `conv2d` with a caller-supplied stage name for error reporting.
pub(crate) fn conv2d_named<T: Real>(
    stage: &'static str,
    input: &Tensor<T>,
    kernel: &Tensor4<T>,
    bias: &[T],
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<T>> {
    if input.rank() != 3 {
        return Err(Error::shape(stage, format!("input rank must be 3, got {}", input.rank())));
    }
    let (in_c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (out_c, k_in_c, kh, kw) = kernel.dims();
    let (sh, sw) = stride;
    let (ph, pw) = padding;
    if sh == 0 || sw == 0 {
        return Err(Error::Config(format!("{stage}: stride must be >= 1")));
    }
    if k_in_c != in_c {
        return Err(Error::shape(
            stage,
            format!("channel axis: input has {in_c} channels, kernel expects {k_in_c}"),
        ));
    }
    if h + 2 * ph < kh {
        return Err(Error::shape(
            stage,
            format!("height axis: padded extent {} < kernel extent {kh}", h + 2 * ph),
        ));
    }
    if w + 2 * pw < kw {
        return Err(Error::shape(
            stage,
            format!("width axis: padded extent {} < kernel extent {kw}", w + 2 * pw),
        ));
    }
    if bias.len() != out_c {
        return Err(Error::shape(
            stage,
            format!("bias axis: kernel has {out_c} output channels, bias has {}", bias.len()),
        ));
    }

    let out_h = (h + 2 * ph - kh) / sh + 1;
    let out_w = (w + 2 * pw - kw) / sw + 1;
    let mut out = Tensor::zeros(vec![out_c, out_h, out_w]);
    for o in 0..out_c {
        for i in 0..out_h {
            for j in 0..out_w {
                let mut acc = bias[o];
                for c in 0..in_c {
                    for u in 0..kh {
                        let hi = i * sh + u;
                        if hi < ph || hi - ph >= h {
                            continue;
                        }
                        for v in 0..kw {
                            let wi = j * sw + v;
                            if wi < pw || wi - pw >= w {
                                continue;
                            }
                            acc += kernel.at(o, c, u, v) * input.at3(c, hi - ph, wi - pw);
                        }
                    }
                }
                out.set3(o, i, j, acc);
            }
        }
    }
    Ok(out)
}

/// 1D cross-correlation along the time axis with same-length zero padding.
///
/// `input` is `(C, L)`, `kernel` is `(O, C, k)` with `k` odd, `bias` has
/// length `O`; the output is `(O, L)`. Even tap counts are rejected since
/// same-padding would be asymmetric.
pub fn conv1d_time<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>> {
    conv1d_time_named("conv1d_time", input, kernel, bias)
}

pub(crate) fn conv1d_time_named<T: Real>(
    stage: &'static str,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>> {
    if input.rank() != 2 {
        return Err(Error::shape(stage, format!("input rank must be 2, got {}", input.rank())));
    }
    if kernel.rank() != 3 {
        return Err(Error::shape(stage, format!("kernel rank must be 3, got {}", kernel.rank())));
    }
    let (in_c, len) = (input.shape()[0], input.shape()[1]);
    let (out_c, k_in_c, taps) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if taps % 2 == 0 {
        return Err(Error::shape(
            stage,
            format!("tap axis: kernel width {taps} is even, same-padding needs an odd width"),
        ));
    }
    if k_in_c != in_c {
        return Err(Error::shape(
            stage,
            format!("channel axis: input has {in_c} channels, kernel expects {k_in_c}"),
        ));
    }
    if bias.len() != out_c {
        return Err(Error::shape(
            stage,
            format!("bias axis: kernel has {out_c} output channels, bias has {}", bias.len()),
        ));
    }

    let half = taps / 2;
    let mut out = Tensor::zeros(vec![out_c, len]);
    for o in 0..out_c {
        for t in 0..len {
            let mut acc = bias[o];
            for c in 0..in_c {
                for u in 0..taps {
                    let ti = t + u;
                    if ti < half || ti - half >= len {
                        continue;
                    }
                    acc += kernel.at3(o, c, u) * input.at2(c, ti - half);
                }
            }
            out.set2(o, t, acc);
        }
    }
    Ok(out)
}

/// Max pooling over `(C, H, W)` with floor semantics on the output extents.
pub fn maxpool2d<T: Real>(
    input: &Tensor<T>,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor<T>> {
    if input.rank() != 3 {
        return Err(Error::shape("maxpool2d", format!("input rank must be 3, got {}", input.rank())));
    }
    let (c_n, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (wh, ww) = window;
    let (sh, sw) = stride;
    if wh == 0 || ww == 0 || sh == 0 || sw == 0 {
        return Err(Error::Config("maxpool2d: window and stride must be >= 1".to_string()));
    }
    if wh > h {
        return Err(Error::shape("maxpool2d", format!("height axis: window {wh} > input {h}")));
    }
    if ww > w {
        return Err(Error::shape("maxpool2d", format!("width axis: window {ww} > input {w}")));
    }

    let out_h = (h - wh) / sh + 1;
    let out_w = (w - ww) / sw + 1;
    let mut out = Tensor::zeros(vec![c_n, out_h, out_w]);
    for c in 0..c_n {
        for i in 0..out_h {
            for j in 0..out_w {
                let mut best = input.at3(c, i * sh, j * sw);
                for u in 0..wh {
                    for v in 0..ww {
                        let x = input.at3(c, i * sh + u, j * sw + v);
                        if x > best {
                            best = x;
                        }
                    }
                }
                out.set3(c, i, j, best);
            }
        }
    }
    Ok(out)
}

/// Elementwise `max(0, x)`. Shape-preserving and idempotent.
pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Elementwise product of two tensors of identical shape.
pub fn hadamard<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "hadamard",
            format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Elementwise sum of two tensors of identical shape.
pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    /// Direct six-loop sum, written from the index formula.
    fn conv2d_oracle(
        input: &Tensor<f64>,
        kernel: &Tensor4<f64>,
        bias: &[f64],
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Tensor<f64> {
        let (in_c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (out_c, _, kh, kw) = kernel.dims();
        let out_h = (h + 2 * padding.0 - kh) / stride.0 + 1;
        let out_w = (w + 2 * padding.1 - kw) / stride.1 + 1;
        let mut out = Tensor::zeros(vec![out_c, out_h, out_w]);
        for o in 0..out_c {
            for i in 0..out_h {
                for j in 0..out_w {
                    let mut acc = bias[o];
                    for c in 0..in_c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let hi = (i * stride.0 + u) as isize - padding.0 as isize;
                                let wi = (j * stride.1 + v) as isize - padding.1 as isize;
                                if hi >= 0 && (hi as usize) < h && wi >= 0 && (wi as usize) < w {
                                    acc += kernel.at(o, c, u, v) * input.at3(c, hi as usize, wi as usize);
                                }
                            }
                        }
                    }
                    out.set3(o, i, j, acc);
                }
            }
        }
        out
    }

    fn conv1d_oracle(input: &Tensor<f64>, kernel: &Tensor<f64>, bias: &[f64]) -> Tensor<f64> {
        let (in_c, len) = (input.shape()[0], input.shape()[1]);
        let (out_c, _, taps) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
        let half = (taps / 2) as isize;
        let mut out = Tensor::zeros(vec![out_c, len]);
        for o in 0..out_c {
            for t in 0..len {
                let mut acc = bias[o];
                for c in 0..in_c {
                    for u in 0..taps {
                        let ti = t as isize + u as isize - half;
                        if ti >= 0 && (ti as usize) < len {
                            acc += kernel.at3(o, c, u) * input.at2(c, ti as usize);
                        }
                    }
                }
                out.set2(o, t, acc);
            }
        }
        out
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::new(vec![2, 3, 4], (0..24).map(|i| i as f64).collect()).unwrap();
        assert_eq!(t.at3(1, 2, 3), ((1 * 3 + 2) * 4 + 3) as f64);
        assert_eq!(t.at3(0, 0, 0), 0.0);
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(Tensor::<f64>::new(vec![], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![1, 2, 3, 4], vec![0.0; 24]).is_err());
    }

    #[test]
    fn conv2d_ones_3x3_counts_taps() {
        // All-ones input and kernel with same padding: each output counts
        // the in-bounds taps, 9 in the center and 4 in the corners.
        let input = Tensor::filled(vec![1, 3, 3], 1.0);
        let kernel = Tensor4::new(1, 1, 3, 3, vec![1.0; 9]).unwrap();
        let out = conv2d(&input, &kernel, &[0.0], (1, 1), (1, 1)).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert_eq!(out.at3(0, 1, 1), 9.0);
        assert_eq!(out.at3(0, 0, 0), 4.0);
        assert_eq!(out.at3(0, 2, 2), 4.0);
        assert_eq!(out.at3(0, 0, 1), 6.0);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = rand_tensor(&mut rng, vec![2, 4, 5]);
        let mut kernel = Tensor4::zeros(2, 2, 1, 1);
        kernel.set(0, 0, 0, 0, 1.0);
        kernel.set(1, 1, 0, 0, 1.0);
        let out = conv2d(&input, &kernel, &[0.0, 0.0], (1, 1), (0, 0)).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv2d_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let in_c = rng.gen_range(1..=4);
            let h = rng.gen_range(1..=8);
            let w = rng.gen_range(1..=8);
            let out_c = rng.gen_range(1..=3);
            let kh = rng.gen_range(1..=h.min(3));
            let kw = rng.gen_range(1..=w.min(3));
            let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
            let padding = (rng.gen_range(0..=1), rng.gen_range(0..=1));
            let input = rand_tensor(&mut rng, vec![in_c, h, w]);
            let kernel = Tensor4::new(
                out_c,
                in_c,
                kh,
                kw,
                (0..out_c * in_c * kh * kw).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let bias: Vec<f64> = (0..out_c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = conv2d(&input, &kernel, &bias, stride, padding).unwrap();
            let want = conv2d_oracle(&input, &kernel, &bias, stride, padding);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn conv2d_shape_errors_name_the_axis() {
        let input = Tensor::<f64>::zeros(vec![2, 4, 4]);
        let kernel = Tensor4::<f64>::zeros(1, 3, 3, 3);
        let err = conv2d(&input, &kernel, &[0.0], (1, 1), (0, 0)).unwrap_err();
        assert!(err.to_string().contains("channel axis"), "{err}");

        let kernel = Tensor4::<f64>::zeros(1, 2, 5, 3);
        let err = conv2d(&input, &kernel, &[0.0], (1, 1), (0, 0)).unwrap_err();
        assert!(err.to_string().contains("height axis"), "{err}");
    }

    #[test]
    fn conv1d_center_tap_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = rand_tensor(&mut rng, vec![3, 7]);
        // Center tap one on the matching channel, zero elsewhere.
        let mut kernel = Tensor::zeros(vec![3, 3, 3]);
        for d in 0..3 {
            kernel.set3(d, d, 1, 1.0);
        }
        let out = conv1d_time(&input, &kernel, &[0.0; 3]).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv1d_box_kernel_hand_sum() {
        let input = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let kernel = Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let out = conv1d_time(&input, &kernel, &[0.0]).unwrap();
        assert_eq!(out.data(), &[3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn conv1d_rejects_even_taps() {
        let input = Tensor::<f64>::zeros(vec![1, 4]);
        let kernel = Tensor::<f64>::zeros(vec![1, 1, 2]);
        let err = conv1d_time(&input, &kernel, &[0.0]).unwrap_err();
        assert!(err.to_string().contains("even"), "{err}");
    }

    #[test]
    fn conv1d_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let in_c = rng.gen_range(1..=4);
            let out_c = rng.gen_range(1..=4);
            let len = rng.gen_range(1..=10);
            let taps = [1, 3, 5][rng.gen_range(0..3)];
            let input = rand_tensor(&mut rng, vec![in_c, len]);
            let kernel = rand_tensor(&mut rng, vec![out_c, in_c, taps]);
            let bias: Vec<f64> = (0..out_c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = conv1d_time(&input, &kernel, &bias).unwrap();
            let want = conv1d_oracle(&input, &kernel, &bias);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn maxpool_2x2_examples() {
        let input = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = maxpool2d(&input, (2, 2), (2, 2)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);

        let constant = Tensor::filled(vec![2, 4, 4], 0.5);
        let out = maxpool2d(&constant, (2, 2), (2, 2)).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn maxpool_30x28_gives_15x14() {
        let input = Tensor::<f64>::zeros(vec![1, 30, 28]);
        let out = maxpool2d(&input, (2, 2), (2, 2)).unwrap();
        assert_eq!(out.shape(), &[1, 15, 14]);
    }

    #[test]
    fn maxpool_window_too_large() {
        let input = Tensor::<f64>::zeros(vec![1, 2, 2]);
        assert!(maxpool2d(&input, (3, 2), (1, 1)).is_err());
    }

    #[test]
    fn maxpool_matches_loop_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let c = rng.gen_range(1..=4);
            let h = rng.gen_range(2..=8);
            let w = rng.gen_range(2..=8);
            let wh = rng.gen_range(1..=h);
            let ww = rng.gen_range(1..=w);
            let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
            let input = rand_tensor(&mut rng, vec![c, h, w]);
            let out = maxpool2d(&input, (wh, ww), stride).unwrap();
            for ci in 0..c {
                for i in 0..out.shape()[1] {
                    for j in 0..out.shape()[2] {
                        let mut best = f64::NEG_INFINITY;
                        for u in 0..wh {
                            for v in 0..ww {
                                best = best.max(input.at3(ci, i * stride.0 + u, j * stride.1 + v));
                            }
                        }
                        assert_eq!(out.at3(ci, i, j), best);
                    }
                }
            }
        }
    }

    #[test]
    fn relu_basics() {
        let t = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        let r = relu(&t);
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&r), r);

        let all_neg = Tensor::filled(vec![2, 2], -3.0);
        assert!(relu(&all_neg).data().iter().all(|&x| x == 0.0));
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn conv2d_linear_in_input(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = rand_tensor(&mut rng, vec![2, 5, 5]);
                let y = rand_tensor(&mut rng, vec![2, 5, 5]);
                let kernel = Tensor4::new(2, 2, 3, 3,
                    (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
                let zero_bias = [0.0, 0.0];
                let combo = Tensor::new(
                    vec![2, 5, 5],
                    x.data().iter().zip(y.data()).map(|(&u, &v)| a * u + b * v).collect(),
                ).unwrap();
                let lhs = conv2d(&combo, &kernel, &zero_bias, (1, 1), (1, 1)).unwrap();
                let cx = conv2d(&x, &kernel, &zero_bias, (1, 1), (1, 1)).unwrap();
                let cy = conv2d(&y, &kernel, &zero_bias, (1, 1), (1, 1)).unwrap();
                for ((&l, &u), &v) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
                    let rhs = a * u + b * v;
                    prop_assert!((l - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
                }
            }

            #[test]
            fn relu_idempotent_and_nonnegative(seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let t = rand_tensor(&mut rng, vec![3, 4, 5]);
                let r = relu(&t);
                prop_assert!(r.data().iter().all(|&x| x >= 0.0));
                prop_assert_eq!(relu(&r), r);
            }
        }
    }
}
