//! Post-training quantization: weight code tables, the full fixed-point
//! inference path, activation range auditing, ROM-style constant table
//! export, and the quantized model file format.
//!
//! The fixed path mirrors the float forward stage for stage. Every dot
//! product accumulates exactly in double width starting from the bias
//! and renormalizes once per output element; elementwise stages use the
//! saturating scalar ops. Given the same codes the result is bit-exact
//! across runs and platforms.
//!
//! # Quantized file layout
//!
//! Magic `b"GCNQ"`, `u16` version (1), `u32` frac_bits, `u8` rounding,
//! `u8` overflow, `u64` saturation count, the 13 `u32` config fields in
//! weight-file order, then per tensor (fixed order) a `u32` length and
//! that many little-endian `i32` codes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fixed::{
    fixed_add, fixed_mul, quantize, saturates, FixedPointSpec, FixedScalar, Overflow, Rounding,
    WideAcc,
};
use crate::model::{expected_extents, forward, GateCnnConfig, ModelWeights, WEIGHT_NAMES};
use crate::scalar::Real;
use crate::synth::MicroDopplerFrame;
use crate::tensor::Tensor;

/// A model converted to fixed-point codes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub spec: FixedPointSpec,
    pub cfg: GateCnnConfig,
    /// Row-major codes of every weight tensor, in `WEIGHT_NAMES` order.
    pub tensors: Vec<Vec<i32>>,
    /// Weights that fell outside the representable range and clamped.
    pub saturations: u64,
}

impl QuantizedModel {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.cfg.validate()?;
        let expected = expected_extents(&self.cfg);
        if self.tensors.len() != expected.len() {
            return Err(Error::Format(format!(
                "quantized model holds {} tensors, expected {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, extents), codes) in expected.iter().zip(&self.tensors) {
            let want: usize = extents.iter().product();
            if codes.len() != want {
                return Err(Error::Format(format!(
                    "tensor {name} holds {} codes, extents {extents:?} imply {want}",
                    codes.len()
                )));
            }
        }
        Ok(())
    }

    /// Codes of one tensor by its weight name.
    pub fn codes(&self, name: &str) -> &[i32] {
        let pos = WEIGHT_NAMES.iter().position(|&n| n == name).expect("known weight name");
        &self.tensors[pos]
    }

    pub fn entries(&self) -> Vec<(&'static str, Vec<usize>, &[i32])> {
        expected_extents(&self.cfg)
            .into_iter()
            .zip(&self.tensors)
            .map(|((name, extents), codes)| (name, extents, codes.as_slice()))
            .collect()
    }

    pub fn total_params(&self) -> u64 {
        self.tensors.iter().map(|t| t.len() as u64).sum()
    }

    /// Bytes of weight storage: one 32-bit word per parameter.
    pub fn storage_bytes(&self) -> u64 {
        self.total_params() * 4
    }
}

/// Elementwise weight quantization. Saturating clamps are counted, not
/// errors: a report consumer decides whether they matter.
pub fn quantize_model<T: Real>(
    cfg: &GateCnnConfig,
    w: &ModelWeights<T>,
    spec: &FixedPointSpec,
) -> Result<QuantizedModel> {
    spec.validate()?;
    w.validate(cfg)?;
    let mut tensors = Vec::with_capacity(18);
    let mut saturations = 0u64;
    for (_, _, data) in w.entries() {
        let mut codes = Vec::with_capacity(data.len());
        for x in data {
            let v = x.to_f64_lossy();
            if saturates(v, spec) {
                saturations += 1;
            }
            codes.push(quantize(v, spec).code);
        }
        tensors.push(codes);
    }
    Ok(QuantizedModel { spec: *spec, cfg: cfg.clone(), tensors, saturations })
}

/// Shaped view over flat codes, private to the fixed pipeline.
struct CodeMap {
    shape: Vec<usize>,
    codes: Vec<i32>,
}

impl CodeMap {
    fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, codes: vec![0; len] }
    }

    #[inline]
    fn at3(&self, c: usize, h: usize, w: usize) -> i32 {
        self.codes[(c * self.shape[1] + h) * self.shape[2] + w]
    }

    #[inline]
    fn at2(&self, h: usize, w: usize) -> i32 {
        self.codes[h * self.shape[1] + w]
    }
}

/// Stride-1 fixed-point convolution with the same in-bounds tap walk and
/// accumulation order as the float kernel.
fn conv2d_fixed(
    input: &CodeMap,
    kernel: &[i32],
    kdims: (usize, usize, usize, usize),
    bias: &[i32],
    padding: (usize, usize),
    spec: &FixedPointSpec,
) -> CodeMap {
    let (in_c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (out_c, k_in_c, kh, kw) = kdims;
    debug_assert_eq!(k_in_c, in_c);
    let (ph, pw) = padding;
    let out_h = h + 2 * ph - kh + 1;
    let out_w = w + 2 * pw - kw + 1;

    let mut out = CodeMap::zeros(vec![out_c, out_h, out_w]);
    for o in 0..out_c {
        for i in 0..out_h {
            for j in 0..out_w {
                let mut acc = WideAcc::from_bias(FixedScalar { code: bias[o] }, spec);
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
                            let kc = kernel[((o * in_c + c) * kh + u) * kw + v];
                            acc.mac(
                                FixedScalar { code: kc },
                                FixedScalar { code: input.at3(c, hi - ph, wi - pw) },
                            );
                        }
                    }
                }
                out.codes[(o * out_h + i) * out_w + j] = acc.renormalize(spec).code;
            }
        }
    }
    out
}

/// Same-padding fixed-point time convolution over `(C, L)` code maps.
fn conv1d_fixed(
    input: &CodeMap,
    kernel: &[i32],
    kdims: (usize, usize, usize),
    bias: &[i32],
    spec: &FixedPointSpec,
) -> CodeMap {
    let (in_c, len) = (input.shape[0], input.shape[1]);
    let (out_c, _, taps) = kdims;
    let half = taps / 2;
    let mut out = CodeMap::zeros(vec![out_c, len]);
    for o in 0..out_c {
        for t in 0..len {
            let mut acc = WideAcc::from_bias(FixedScalar { code: bias[o] }, spec);
            for c in 0..in_c {
                for u in 0..taps {
                    let ti = t + u;
                    if ti < half || ti - half >= len {
                        continue;
                    }
                    let kc = kernel[(o * in_c + c) * taps + u];
                    acc.mac(FixedScalar { code: kc }, FixedScalar { code: input.at2(c, ti - half) });
                }
            }
            out.codes[o * len + t] = acc.renormalize(spec).code;
        }
    }
    out
}

fn maxpool_fixed(input: &CodeMap, window: (usize, usize), stride: (usize, usize)) -> CodeMap {
    let (c_n, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (wh, ww) = window;
    let (sh, sw) = stride;
    let out_h = (h - wh) / sh + 1;
    let out_w = (w - ww) / sw + 1;
    let mut out = CodeMap::zeros(vec![c_n, out_h, out_w]);
    for c in 0..c_n {
        for i in 0..out_h {
            for j in 0..out_w {
                let mut best = input.at3(c, i * sh, j * sw);
                for u in 0..wh {
                    for v in 0..ww {
                        best = best.max(input.at3(c, i * sh + u, j * sw + v));
                    }
                }
                out.codes[(c * out_h + i) * out_w + j] = best;
            }
        }
    }
    out
}

/// Full fixed-point inference: quantizes the input under the model's
/// spec and runs every stage on codes. Returns the fixed logits.
pub fn forward_fixed<T: Real>(qm: &QuantizedModel, x: &Tensor<T>) -> Result<Vec<FixedScalar>> {
    qm.validate()?;
    let cfg = &qm.cfg;
    let expected = cfg.input_shape();
    if x.shape() != expected.as_slice() {
        return Err(Error::shape(
            "input",
            format!("expected {:?}, got {:?}", expected, x.shape()),
        ));
    }
    let spec = &qm.spec;
    let d = cfg.embed_dim;
    let f = cfg.content_channels;
    let wp = cfg.w_prime();
    let (fh, fw) = cfg.fuse_kernel;
    let (ch, cw) = cfg.cascade_kernel;

    let input = CodeMap {
        shape: x.shape().to_vec(),
        codes: x.data().iter().map(|v| quantize(v.to_f64_lossy(), spec).code).collect(),
    };

    let x1 = conv2d_fixed(
        &input,
        qm.codes("w_c0"),
        (1, cfg.in_channels, fh, fw),
        qm.codes("b_c0"),
        cfg.fuse_padding(),
        spec,
    );
    let x_ds = maxpool_fixed(&x1, cfg.pool, cfg.pool);
    let emb = conv2d_fixed(
        &x_ds,
        qm.codes("w_c1"),
        (d, 1, cfg.h_prime(), 1),
        qm.codes("b_c1"),
        (0, 0),
        spec,
    );
    let x_conv1 = CodeMap { shape: vec![d, wp], codes: emb.codes };

    let kt = cfg.gate_taps;
    let z = conv1d_fixed(&x_conv1, qm.codes("w_g"), (d, d, kt), qm.codes("b_g"), spec);
    let x_conv2 = conv1d_fixed(&x_conv1, qm.codes("w_p"), (d, d, kt), qm.codes("b_p"), spec);

    let pad = cfg.cascade_padding();
    let c_in = CodeMap { shape: vec![1, d, wp], codes: x_conv2.codes };
    let mut x3 = conv2d_fixed(&c_in, qm.codes("w_c2"), (f, 1, ch, cw), qm.codes("b_c2"), pad, spec);
    for c in x3.codes.iter_mut() {
        *c = (*c).max(0);
    }
    let mut x4 = conv2d_fixed(&x3, qm.codes("w_c3"), (f, f, ch, cw), qm.codes("b_c3"), pad, spec);
    for c in x4.codes.iter_mut() {
        *c = (*c).max(0);
    }
    let x5 = conv2d_fixed(&x4, qm.codes("w_c4"), (1, f, ch, cw), qm.codes("b_c4"), pad, spec);

    // Combine on codes: y = sat(x5 * relu(z)) + x1, renormalized once
    // inside the multiply like the hardware datapath.
    let mut y = CodeMap::zeros(vec![1, d, wp]);
    for idx in 0..d * wp {
        let zc = z.codes[idx].max(0);
        let prod = fixed_mul(FixedScalar { code: x5.codes[idx] }, FixedScalar { code: zc }, spec);
        let sum = fixed_add(prod, FixedScalar { code: x_conv1.codes[idx] }, spec);
        y.codes[idx] = sum.code;
    }

    let v = conv2d_fixed(&y, qm.codes("w_avg"), (1, 1, d, 1), qm.codes("b_avg"), (0, 0), spec);

    let n = cfg.num_classes;
    let w_cls = qm.codes("w_cls");
    let b_cls = qm.codes("b_cls");
    let mut logits = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = WideAcc::from_bias(FixedScalar { code: b_cls[k] }, spec);
        for t in 0..wp {
            acc.mac(FixedScalar { code: w_cls[k * wp + t] }, FixedScalar { code: v.codes[t] });
        }
        logits.push(acc.renormalize(spec));
    }
    Ok(logits)
}

/// Argmax over fixed logits; ties break to the lowest class index.
pub fn predict_fixed<T: Real>(qm: &QuantizedModel, x: &Tensor<T>) -> Result<usize> {
    let logits = forward_fixed(qm, x)?;
    let mut best = 0;
    for (k, l) in logits.iter().enumerate().skip(1) {
        if l.code > logits[best].code {
            best = k;
        }
    }
    Ok(best)
}

/// Observed extrema of one stage over a calibration set.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRange {
    pub name: &'static str,
    pub min: f64,
    pub max: f64,
    /// Magnitude bits needed to hold the extrema, including one guard
    /// bit; the sign bit is accounted separately.
    pub required_int_bits: u32,
}

/// Per-stage activation ranges of the float model on calibration frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeAudit {
    pub stages: Vec<StageRange>,
}

impl RangeAudit {
    pub fn max_required_int_bits(&self) -> u32 {
        self.stages.iter().map(|s| s.required_int_bits).max().unwrap_or(1)
    }

    /// Whether the magnitude bits of `spec` cover every observed stage:
    /// a 32-bit word offers `31 - frac_bits` of them beside the sign.
    pub fn fits(&self, spec: &FixedPointSpec) -> bool {
        self.max_required_int_bits() <= spec.total_bits - 1 - spec.frac_bits
    }

    /// Line-delimited stage records.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.stages {
            out.push_str(&format!(
                "stage={} min={:.9} max={:.9} int_bits={}\n",
                s.name, s.min, s.max, s.required_int_bits
            ));
        }
        out.push_str(&format!("max_int_bits={}\n", self.max_required_int_bits()));
        out
    }
}

/// Magnitude bits covering `[min, max]` with one guard bit.
pub fn required_int_bits(min: f64, max: f64) -> u32 {
    let m = min.abs().max(max.abs());
    if m == 0.0 {
        return 1;
    }
    let bits = m.log2().ceil().max(0.0) as u32;
    bits + 1
}

/// Runs the float model over the calibration frames and records
/// per-stage extrema, input included.
pub fn audit_ranges<T: Real>(
    cfg: &GateCnnConfig,
    w: &ModelWeights<T>,
    calibration: &[MicroDopplerFrame<T>],
) -> Result<RangeAudit> {
    if calibration.is_empty() {
        return Err(Error::EmptyData("calibration frames"));
    }
    const STAGES: [&str; 12] = [
        "input", "fuse", "pool", "embed", "gate", "content", "cascade1", "cascade2", "cascade3",
        "combine", "average", "classify",
    ];
    let mut mins = [f64::INFINITY; 12];
    let mut maxs = [f64::NEG_INFINITY; 12];
    let mut track = |slot: usize, data: &[T]| {
        for x in data {
            let v = x.to_f64_lossy();
            if v < mins[slot] {
                mins[slot] = v;
            }
            if v > maxs[slot] {
                maxs[slot] = v;
            }
        }
    };
    for frame in calibration {
        let tr = forward(cfg, w, &frame.data)?;
        track(0, frame.data.data());
        track(1, tr.x1.data());
        track(2, tr.x_ds.data());
        track(3, tr.x_conv1.data());
        track(4, tr.z.data());
        track(5, tr.x_conv2.data());
        track(6, tr.x_conv3.data());
        track(7, tr.x_conv4.data());
        track(8, tr.x_conv5.data());
        track(9, tr.y.data());
        track(10, tr.v.data());
        track(11, tr.logits.data());
    }
    let stages = STAGES
        .iter()
        .enumerate()
        .map(|(i, &name)| StageRange {
            name,
            min: mins[i],
            max: maxs[i],
            required_int_bits: required_int_bits(mins[i], maxs[i]),
        })
        .collect();
    Ok(RangeAudit { stages })
}

fn rounding_label(r: Rounding) -> &'static str {
    match r {
        Rounding::NearestEven => "nearest-even",
        Rounding::Truncate => "truncate",
    }
}

fn overflow_label(o: Overflow) -> &'static str {
    match o {
        Overflow::Saturate => "saturate",
        Overflow::Wrap => "wrap",
    }
}

/// Emits the weights as C-style constant tables with a header stating
/// the format, parameter count, and storage size. [`parse_rom`] inverts
/// this exactly.
pub fn export_rom(qm: &QuantizedModel) -> String {
    let cfg = &qm.cfg;
    let mut out = String::new();
    out.push_str("// gatecnn weight rom\n");
    out.push_str(&format!("// format: {}\n", qm.spec.format_label()));
    out.push_str(&format!("// rounding: {}\n", rounding_label(qm.spec.rounding)));
    out.push_str(&format!("// overflow: {}\n", overflow_label(qm.spec.overflow)));
    out.push_str(&format!("// parameters: {}\n", qm.total_params()));
    out.push_str(&format!("// storage_bytes: {}\n", qm.storage_bytes()));
    out.push_str(&format!("// saturations: {}\n", qm.saturations));
    out.push_str(&format!(
        "// config: in_channels={} doppler_bins={} time_steps={} fuse_kernel={}x{} pool={}x{} \
         embed_dim={} gate_taps={} content_channels={} cascade_kernel={}x{} num_classes={}\n",
        cfg.in_channels,
        cfg.doppler_bins,
        cfg.time_steps,
        cfg.fuse_kernel.0,
        cfg.fuse_kernel.1,
        cfg.pool.0,
        cfg.pool.1,
        cfg.embed_dim,
        cfg.gate_taps,
        cfg.content_channels,
        cfg.cascade_kernel.0,
        cfg.cascade_kernel.1,
        cfg.num_classes
    ));
    for (name, _, codes) in qm.entries() {
        out.push('\n');
        out.push_str(&format!(
            "static const int32_t {}[{}] = {{\n",
            name.to_uppercase(),
            codes.len()
        ));
        for chunk in codes.chunks(12) {
            let line: Vec<String> = chunk.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!("    {},\n", line.join(", ")));
        }
        out.push_str("};\n");
    }
    out
}

/// Parses a [`export_rom`] artifact back into a bit-identical model.
pub fn parse_rom(text: &str) -> Result<QuantizedModel> {
    let mut frac_bits = None;
    let mut rounding = None;
    let mut overflow = None;
    let mut saturations = 0u64;
    let mut cfg = None;
    let mut tables: Vec<(String, Vec<i32>)> = Vec::new();
    let mut current: Option<(String, usize, Vec<i32>)> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let ctx = |msg: String| Error::Format(format!("rom line {}: {msg}", lineno + 1));
        if let Some(rest) = line.strip_prefix("//") {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("format:") {
                let label = v.trim();
                let body = label
                    .strip_prefix('Q')
                    .ok_or_else(|| ctx(format!("bad format label {label:?}")))?;
                let (int_s, frac_s) = body
                    .split_once('.')
                    .ok_or_else(|| ctx(format!("bad format label {label:?}")))?;
                let int: u32 = int_s.parse().map_err(|_| ctx(format!("bad format label {label:?}")))?;
                let frac: u32 =
                    frac_s.parse().map_err(|_| ctx(format!("bad format label {label:?}")))?;
                if int + frac != 32 {
                    return Err(ctx(format!("format {label} is not 32-bit")));
                }
                frac_bits = Some(frac);
            } else if let Some(v) = rest.strip_prefix("rounding:") {
                rounding = Some(match v.trim() {
                    "nearest-even" => Rounding::NearestEven,
                    "truncate" => Rounding::Truncate,
                    other => return Err(ctx(format!("unknown rounding {other:?}"))),
                });
            } else if let Some(v) = rest.strip_prefix("overflow:") {
                overflow = Some(match v.trim() {
                    "saturate" => Overflow::Saturate,
                    "wrap" => Overflow::Wrap,
                    other => return Err(ctx(format!("unknown overflow {other:?}"))),
                });
            } else if let Some(v) = rest.strip_prefix("saturations:") {
                saturations =
                    v.trim().parse().map_err(|_| ctx(format!("bad saturation count {v:?}")))?;
            } else if let Some(v) = rest.strip_prefix("config:") {
                cfg = Some(parse_rom_config(v.trim()).map_err(|e| ctx(e.to_string()))?);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("static const int32_t ") {
            let (name, rest) = rest
                .split_once('[')
                .ok_or_else(|| ctx("malformed table declaration".into()))?;
            let (len_s, _) =
                rest.split_once(']').ok_or_else(|| ctx("malformed table declaration".into()))?;
            let len: usize =
                len_s.parse().map_err(|_| ctx(format!("bad table length {len_s:?}")))?;
            if current.is_some() {
                return Err(ctx("table starts before the previous one closed".into()));
            }
            current = Some((name.trim().to_lowercase(), len, Vec::with_capacity(len)));
            continue;
        }
        if line.starts_with("};") {
            let (name, len, codes) =
                current.take().ok_or_else(|| ctx("stray table terminator".into()))?;
            if codes.len() != len {
                return Err(ctx(format!(
                    "table {name} declared {len} values but holds {}",
                    codes.len()
                )));
            }
            tables.push((name, codes));
            continue;
        }
        if let Some((_, _, codes)) = current.as_mut() {
            for tok in line.trim_end_matches(',').split(',') {
                let tok = tok.trim();
                if tok.is_empty() {
                    continue;
                }
                codes.push(tok.parse().map_err(|_| ctx(format!("bad code literal {tok:?}")))?);
            }
            continue;
        }
        return Err(ctx(format!("unexpected content {line:?}")));
    }
    if current.is_some() {
        return Err(Error::Format("rom ends inside a table".into()));
    }

    let frac = frac_bits.ok_or_else(|| Error::Format("rom missing format header".into()))?;
    let rounding = rounding.ok_or_else(|| Error::Format("rom missing rounding header".into()))?;
    let overflow = overflow.ok_or_else(|| Error::Format("rom missing overflow header".into()))?;
    let cfg = cfg.ok_or_else(|| Error::Format("rom missing config header".into()))?;
    let spec = FixedPointSpec::new(frac, rounding, overflow)?;

    if tables.len() != WEIGHT_NAMES.len() {
        return Err(Error::Format(format!(
            "rom holds {} tables, expected {}",
            tables.len(),
            WEIGHT_NAMES.len()
        )));
    }
    let mut tensors = Vec::with_capacity(WEIGHT_NAMES.len());
    for ((name, codes), expected) in tables.into_iter().zip(WEIGHT_NAMES) {
        if name != expected {
            return Err(Error::Format(format!("table {name:?} out of order, expected {expected:?}")));
        }
        tensors.push(codes);
    }
    let qm = QuantizedModel { spec, cfg, tensors, saturations };
    qm.validate()?;
    Ok(qm)
}

fn parse_rom_config(s: &str) -> Result<GateCnnConfig> {
    let mut cfg = GateCnnConfig::default();
    let pair_err = |k: &str, v: &str| Error::Format(format!("bad config pair {k}={v}"));
    let parse_xy = |k: &str, v: &str| -> Result<(usize, usize)> {
        let (a, b) = v.split_once('x').ok_or_else(|| pair_err(k, v))?;
        Ok((a.parse().map_err(|_| pair_err(k, v))?, b.parse().map_err(|_| pair_err(k, v))?))
    };
    for pair in s.split_whitespace() {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad config pair {pair:?}")))?;
        match k {
            "in_channels" => cfg.in_channels = v.parse().map_err(|_| pair_err(k, v))?,
            "doppler_bins" => cfg.doppler_bins = v.parse().map_err(|_| pair_err(k, v))?,
            "time_steps" => cfg.time_steps = v.parse().map_err(|_| pair_err(k, v))?,
            "fuse_kernel" => cfg.fuse_kernel = parse_xy(k, v)?,
            "pool" => cfg.pool = parse_xy(k, v)?,
            "embed_dim" => cfg.embed_dim = v.parse().map_err(|_| pair_err(k, v))?,
            "gate_taps" => cfg.gate_taps = v.parse().map_err(|_| pair_err(k, v))?,
            "content_channels" => cfg.content_channels = v.parse().map_err(|_| pair_err(k, v))?,
            "cascade_kernel" => cfg.cascade_kernel = parse_xy(k, v)?,
            "num_classes" => cfg.num_classes = v.parse().map_err(|_| pair_err(k, v))?,
            other => return Err(Error::Format(format!("unknown config key {other:?}"))),
        }
    }
    cfg.validate().map_err(|e| Error::Format(format!("rom config invalid: {e}")))?;
    Ok(cfg)
}

const MAGIC: &[u8; 4] = b"GCNQ";
const VERSION: u16 = 1;

pub fn quantized_to_bytes(qm: &QuantizedModel) -> Result<Vec<u8>> {
    qm.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&qm.spec.frac_bits.to_le_bytes());
    out.push(match qm.spec.rounding {
        Rounding::NearestEven => 0,
        Rounding::Truncate => 1,
    });
    out.push(match qm.spec.overflow {
        Overflow::Saturate => 0,
        Overflow::Wrap => 1,
    });
    out.extend_from_slice(&qm.saturations.to_le_bytes());
    let c = &qm.cfg;
    for field in [
        c.in_channels,
        c.doppler_bins,
        c.time_steps,
        c.fuse_kernel.0,
        c.fuse_kernel.1,
        c.pool.0,
        c.pool.1,
        c.embed_dim,
        c.gate_taps,
        c.content_channels,
        c.cascade_kernel.0,
        c.cascade_kernel.1,
        c.num_classes,
    ] {
        let v = u32::try_from(field)
            .map_err(|_| Error::Format(format!("config field {field} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for codes in &qm.tensors {
        out.extend_from_slice(&(codes.len() as u32).to_le_bytes());
        for code in codes {
            out.extend_from_slice(&code.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn quantized_from_bytes(bytes: &[u8]) -> Result<QuantizedModel> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Format(format!("truncated file: needed {n} bytes at offset {pos}")));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let magic = take(&mut pos, 4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported quantized file version {version}")));
    }
    let frac_bits = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let rounding = match take(&mut pos, 1)?[0] {
        0 => Rounding::NearestEven,
        1 => Rounding::Truncate,
        other => return Err(Error::Format(format!("unknown rounding byte {other}"))),
    };
    let overflow = match take(&mut pos, 1)?[0] {
        0 => Overflow::Saturate,
        1 => Overflow::Wrap,
        other => return Err(Error::Format(format!("unknown overflow byte {other}"))),
    };
    let saturations = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    let mut fields = [0usize; 13];
    for f in &mut fields {
        *f = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    }
    let cfg = GateCnnConfig {
        in_channels: fields[0],
        doppler_bins: fields[1],
        time_steps: fields[2],
        fuse_kernel: (fields[3], fields[4]),
        pool: (fields[5], fields[6]),
        embed_dim: fields[7],
        gate_taps: fields[8],
        content_channels: fields[9],
        cascade_kernel: (fields[10], fields[11]),
        num_classes: fields[12],
    };
    let spec = FixedPointSpec::new(frac_bits, rounding, overflow)
        .map_err(|e| Error::Format(format!("stored spec invalid: {e}")))?;
    cfg.validate().map_err(|e| Error::Format(format!("stored config invalid: {e}")))?;

    let mut tensors = Vec::with_capacity(WEIGHT_NAMES.len());
    for _ in 0..WEIGHT_NAMES.len() {
        let len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut codes = Vec::with_capacity(len);
        for _ in 0..len {
            codes.push(i32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()));
        }
        tensors.push(codes);
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - pos)));
    }
    let qm = QuantizedModel { spec, cfg, tensors, saturations };
    qm.validate()?;
    Ok(qm)
}

pub fn save_quantized(path: &Path, qm: &QuantizedModel) -> Result<()> {
    fs::write(path, quantized_to_bytes(qm)?)?;
    Ok(())
}

pub fn load_quantized(path: &Path) -> Result<QuantizedModel> {
    quantized_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::dequantize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_input(cfg: &GateCnnConfig, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = cfg.input_shape().to_vec();
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_quantize_to_zero_codes() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::zeros(&cfg).unwrap();
        let qm = quantize_model(&cfg, &w, &FixedPointSpec::default()).unwrap();
        assert_eq!(qm.saturations, 0);
        assert!(qm.tensors.iter().all(|t| t.iter().all(|&c| c == 0)));
        assert_eq!(qm.total_params(), 2678);
        assert_eq!(qm.storage_bytes(), 2678 * 4);
    }

    #[test]
    fn unit_weight_gets_the_unit_code() {
        let cfg = GateCnnConfig::default();
        let mut w = ModelWeights::<f64>::zeros(&cfg).unwrap();
        w.w_c0.data_mut()[0] = 1.0;
        let qm = quantize_model(&cfg, &w, &FixedPointSpec::default()).unwrap();
        assert_eq!(qm.codes("w_c0")[0], 65536);
    }

    #[test]
    fn dequantization_error_within_half_step() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 3).unwrap();
        let spec = FixedPointSpec::default();
        let qm = quantize_model(&cfg, &w, &spec).unwrap();
        assert_eq!(qm.saturations, 0);
        let bound = 2f64.powi(-17);
        for ((_, _, float), codes) in w.entries().iter().zip(&qm.tensors) {
            for (&x, &c) in float.iter().zip(codes) {
                let err = (dequantize(FixedScalar { code: c }, &spec) - x).abs();
                assert!(err <= bound, "x={x} code={c} err={err}");
            }
        }
    }

    #[test]
    fn quantize_model_is_monotone_per_element() {
        let cfg = GateCnnConfig::default();
        let spec = FixedPointSpec::default();
        let a = ModelWeights::<f64>::init(&cfg, 10).unwrap();
        let mut b = a.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for slot in b.entries_mut() {
            for x in slot.iter_mut() {
                *x += rng.gen_range(0.0..0.5);
            }
        }
        let qa = quantize_model(&cfg, &a, &spec).unwrap();
        let qb = quantize_model(&cfg, &b, &spec).unwrap();
        for (ta, tb) in qa.tensors.iter().zip(&qb.tensors) {
            for (&ca, &cb) in ta.iter().zip(tb) {
                assert!(ca <= cb);
            }
        }
    }

    #[test]
    fn saturation_is_counted() {
        let cfg = GateCnnConfig::default();
        let mut w = ModelWeights::<f64>::zeros(&cfg).unwrap();
        w.w_cls.data_mut()[0] = 1e9;
        w.w_cls.data_mut()[1] = -1e9;
        let qm = quantize_model(&cfg, &w, &FixedPointSpec::default()).unwrap();
        assert_eq!(qm.saturations, 2);
        assert_eq!(qm.codes("w_cls")[0], i32::MAX);
        assert_eq!(qm.codes("w_cls")[1], i32::MIN);
    }

    #[test]
    fn fixed_forward_is_deterministic() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 21).unwrap();
        let qm = quantize_model(&cfg, &w, &FixedPointSpec::default()).unwrap();
        let x = rand_input(&cfg, 22);
        let a = forward_fixed(&qm, &x).unwrap();
        let b = forward_fixed(&qm, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_model_zero_input_gives_zero_logits() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::zeros(&cfg).unwrap();
        let qm = quantize_model(&cfg, &w, &FixedPointSpec::default()).unwrap();
        let x = Tensor::<f64>::zeros(cfg.input_shape().to_vec());
        let logits = forward_fixed(&qm, &x).unwrap();
        assert!(logits.iter().all(|l| l.code == 0));
    }

    #[test]
    fn fixed_logits_track_float_logits() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 31).unwrap();
        let qm = quantize_model(&cfg, &w, &FixedPointSpec::default()).unwrap();
        let spec = qm.spec;
        let mut agree = 0usize;
        let total = 50usize;
        for i in 0..total {
            let x = rand_input(&cfg, 1000 + i as u64);
            let tr = forward(&cfg, &w, &x).unwrap();
            let fixed = forward_fixed(&qm, &x).unwrap();
            for (k, fl) in fixed.iter().enumerate() {
                let diff = (dequantize(*fl, &spec) - tr.logits.data()[k]).abs();
                assert!(diff < 0.01, "frame {i} class {k}: fixed-float gap {diff}");
            }
            if predict_fixed(&qm, &x).unwrap() == tr.logits.argmax() {
                agree += 1;
            }
        }
        assert!(agree * 10 >= total * 9, "argmax agreement {agree}/{total}");
    }

    #[test]
    fn audit_zero_frame() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::zeros(&cfg).unwrap();
        let frame = MicroDopplerFrame {
            data: Tensor::<f64>::zeros(cfg.input_shape().to_vec()),
            label: 0,
            meta: None,
        };
        let audit = audit_ranges(&cfg, &w, &[frame]).unwrap();
        for s in &audit.stages {
            assert_eq!(s.min, 0.0, "{}", s.name);
            assert_eq!(s.max, 0.0, "{}", s.name);
            assert_eq!(s.required_int_bits, 1, "{}", s.name);
        }
        assert!(audit.fits(&FixedPointSpec::default()));
        assert!(audit.to_text().contains("stage=combine"));
    }

    #[test]
    fn required_bits_hand_cases() {
        assert_eq!(required_int_bits(0.0, 0.0), 1);
        assert_eq!(required_int_bits(0.0, 7.3), 4);
        assert_eq!(required_int_bits(-7.3, 0.0), 4);
        assert_eq!(required_int_bits(-0.4, 0.4), 1);
        assert_eq!(required_int_bits(0.0, 1.0), 1);
        assert_eq!(required_int_bits(0.0, 8.0), 4);
    }

    #[test]
    fn audit_requires_frames_and_orders_extrema() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 40).unwrap();
        assert!(audit_ranges::<f64>(&cfg, &w, &[]).is_err());

        let frames: Vec<_> = (0..5)
            .map(|i| MicroDopplerFrame { data: rand_input(&cfg, 50 + i), label: 0, meta: None })
            .collect();
        let audit = audit_ranges(&cfg, &w, &frames).unwrap();
        for s in &audit.stages {
            assert!(s.min <= s.max, "{}", s.name);
        }
        assert!(audit.fits(&FixedPointSpec::default()), "{}", audit.to_text());
    }

    #[test]
    fn rom_round_trips_bitwise() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 60).unwrap();
        let qm = quantize_model(&cfg, &w, &FixedPointSpec::default()).unwrap();
        let text = export_rom(&qm);
        assert!(text.contains("// parameters: 2678"));
        assert!(text.contains("// storage_bytes: 10712"));
        assert!(text.contains("static const int32_t W_C0[9]"));
        let back = parse_rom(&text).unwrap();
        assert_eq!(qm, back);
        assert_eq!(export_rom(&back), text);
    }

    #[test]
    fn rom_shows_unit_code_literal() {
        let cfg = GateCnnConfig::default();
        let mut w = ModelWeights::<f64>::zeros(&cfg).unwrap();
        w.w_c0.data_mut()[0] = 1.0;
        let qm = quantize_model(&cfg, &w, &FixedPointSpec::default()).unwrap();
        assert!(export_rom(&qm).contains("65536"));
    }

    #[test]
    fn rom_parse_rejects_corruption() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 61).unwrap();
        let qm = quantize_model(&cfg, &w, &FixedPointSpec::default()).unwrap();
        let text = export_rom(&qm);
        assert!(parse_rom(&text.replace("// format: Q16.16\n", "")).is_err());
        assert!(parse_rom(&text.replace("W_C0[9]", "W_C0[8]")).is_err());
        assert!(parse_rom(text.rsplit_once("};").unwrap().0).is_err());
    }

    #[test]
    fn quantized_bytes_round_trip() {
        let cfg = GateCnnConfig::default();
        let w = ModelWeights::<f64>::init(&cfg, 70).unwrap();
        let qm = quantize_model(&cfg, &w, &FixedPointSpec::default()).unwrap();
        let bytes = quantized_to_bytes(&qm).unwrap();
        let back = quantized_from_bytes(&bytes).unwrap();
        assert_eq!(qm, back);
        assert_eq!(quantized_to_bytes(&back).unwrap(), bytes);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(quantized_from_bytes(&bad).is_err());
        assert!(quantized_from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }
}
