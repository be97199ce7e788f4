//! Built-in oracle and invariant suite behind the `selftest` command.
//!
//! Every check re-derives its expected answer independently (naive
//! loops, finite differences, closed-form arithmetic) so a pass means
//! the shipped kernels agree with something other than themselves.
//! The suite finishes in seconds; the heavyweight statistical checks
//! live in the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fixed::{dequantize, quantize, FixedPointSpec, FixedScalar};
use crate::model::{
    forward, mac_count, param_count, stage_ops, weights_from_bytes, weights_to_bytes,
    GateCnnConfig, ModelWeights,
};
use crate::pipeline::{
    cycles_to_seconds, estimate, pipelined_throughput, PipelineParams, REFERENCE_LATENCY_CYCLES,
};
use crate::quant::{
    export_rom, forward_fixed, parse_rom, predict_fixed, quantize_model, quantized_from_bytes,
    quantized_to_bytes,
};
use crate::synth::{frames_from_bytes, frames_to_bytes, generate, SynthSpec};
use crate::tensor::{conv1d_time, conv2d, maxpool2d, Tensor, Tensor4};
use crate::train::backward;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Results of the whole suite.
#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "ok  " } else { "FAIL" };
            out.push_str(&format!("{tag} {}: {}\n", c.name, c.detail));
        }
        let verdict = if self.all_passed() { "selftest passed" } else { "selftest FAILED" };
        out.push_str(&format!("{verdict} ({}/{} checks)\n", self.checks.iter().filter(|c| c.passed).count(), self.checks.len()));
        out
    }
}

type Check = std::result::Result<String, String>;

fn tiny_cfg() -> GateCnnConfig {
    GateCnnConfig {
        in_channels: 1,
        doppler_bins: 6,
        time_steps: 8,
        fuse_kernel: (3, 3),
        pool: (2, 2),
        embed_dim: 4,
        gate_taps: 3,
        content_channels: 2,
        cascade_kernel: (3, 3),
        num_classes: 3,
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn conv_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..10 {
        let (c, h, w) = (1 + case % 3, 3 + case % 5, 3 + case % 4);
        let (o, kh, kw) = (1 + case % 2, 1 + case % 3, 1 + case % 3);
        let pad = (case % 2, (case + 1) % 2);
        let input = rand_tensor(&mut rng, vec![c, h, w]);
        let kernel = Tensor4::new(
            o,
            c,
            kh,
            kw,
            (0..o * c * kh * kw).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let bias: Vec<f64> = (0..o).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = conv2d(&input, &kernel, &bias, (1, 1), pad)
            .map_err(|e| format!("conv2d case {case}: {e}"))?;

        let out_h = h + 2 * pad.0 - kh + 1;
        let out_w = w + 2 * pad.1 - kw + 1;
        for oc in 0..o {
            for i in 0..out_h {
                for j in 0..out_w {
                    let mut want = bias[oc];
                    for ic in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let (hi, wi) = (i + u, j + v);
                                if hi >= pad.0 && hi - pad.0 < h && wi >= pad.1 && wi - pad.1 < w {
                                    want += kernel.at(oc, ic, u, v)
                                        * input.at3(ic, hi - pad.0, wi - pad.1);
                                }
                            }
                        }
                    }
                    if got.at3(oc, i, j) != want {
                        return Err(format!("conv2d case {case} mismatch at ({oc},{i},{j})"));
                    }
                }
            }
        }
    }

    let input = rand_tensor(&mut rng, vec![2, 7]);
    let kernel = rand_tensor(&mut rng, vec![3, 2, 3]);
    let bias: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let got = conv1d_time(&input, &kernel, &bias).map_err(|e| format!("conv1d_time: {e}"))?;
    for o in 0..3 {
        for t in 0..7i64 {
            let mut want = bias[o];
            for c in 0..2 {
                for u in 0..3i64 {
                    let ti = t + u - 1;
                    if (0..7).contains(&ti) {
                        want += kernel.at3(o, c, u as usize) * input.at2(c, ti as usize);
                    }
                }
            }
            if got.at2(o, t as usize) != want {
                return Err(format!("conv1d_time mismatch at ({o},{t})"));
            }
        }
    }

    let input = rand_tensor(&mut rng, vec![2, 6, 6]);
    let got = maxpool2d(&input, (2, 2), (2, 2)).map_err(|e| format!("maxpool2d: {e}"))?;
    for c in 0..2 {
        for i in 0..3 {
            for j in 0..3 {
                let want = (0..2)
                    .flat_map(|u| (0..2).map(move |v| (u, v)))
                    .map(|(u, v)| input.at3(c, 2 * i + u, 2 * j + v))
                    .fold(f64::NEG_INFINITY, f64::max);
                if got.at3(c, i, j) != want {
                    return Err(format!("maxpool2d mismatch at ({c},{i},{j})"));
                }
            }
        }
    }
    Ok("conv2d, conv1d_time, maxpool2d match naive loops exactly".into())
}

fn fixed_point_arithmetic() -> Check {
    let spec = FixedPointSpec::default();
    if quantize(1.0, &spec).code != 65536 {
        return Err("unit value does not map to code 65536".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let code = rng.gen_range(i32::MIN / 2..i32::MAX / 2);
        let back = quantize(dequantize(FixedScalar { code }, &spec), &spec);
        if back.code != code {
            return Err(format!("code {code} fails the round trip"));
        }
    }
    for _ in 0..50 {
        let n = rng.gen_range(1..64usize);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let exact: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let mut acc = crate::fixed::WideAcc::from_bias(FixedScalar::ZERO, &spec);
        for (x, y) in a.iter().zip(&b) {
            acc.mac(quantize(*x, &spec), quantize(*y, &spec));
        }
        let got = dequantize(acc.renormalize(&spec), &spec);
        let bound = spec.resolution() * (n as f64 + 1.0) * 4.0;
        if (got - exact).abs() > bound {
            return Err(format!("dot product error {} beyond {bound}", (got - exact).abs()));
        }
    }
    Ok("code round trips and accumulator error bounds hold".into())
}

fn gating_algebra() -> Check {
    let cfg = GateCnnConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for seed in 0..5u64 {
        let w = ModelWeights::<f64>::init(&cfg, 100 + seed).map_err(|e| e.to_string())?;
        let x = rand_tensor(&mut rng, cfg.input_shape().to_vec());
        let tr = forward(&cfg, &w, &x).map_err(|e| e.to_string())?;
        for i in 0..tr.y.len() {
            let y = tr.y.data()[i];
            let x1 = tr.x_conv1.data()[i];
            let x5 = tr.x_conv5.data()[i];
            let z = tr.z.data()[i];
            if y != x5 * z.max(0.0) + x1 {
                return Err(format!("combine identity broken at {i} (seed {seed})"));
            }
        }
        let mut gated_off = w.clone();
        for v in gated_off.w_c4.data_mut().iter_mut() {
            *v = 0.0;
        }
        for v in gated_off.b_c4.data_mut().iter_mut() {
            *v = 0.0;
        }
        let tr = forward(&cfg, &gated_off, &x).map_err(|e| e.to_string())?;
        if tr.y.data() != tr.x_conv1.data() {
            return Err(format!("zeroed gate path does not pass the residual (seed {seed})"));
        }
    }
    Ok("combine identity and residual passthrough hold exactly".into())
}

fn operation_counts() -> Check {
    for cfg in [GateCnnConfig::default(), tiny_cfg()] {
        let w = ModelWeights::<f64>::zeros(&cfg).map_err(|e| e.to_string())?;
        if param_count(&cfg) != w.total_params() {
            return Err(format!("param_count disagrees with enumeration for {cfg:?}"));
        }
        let stage_total: u64 = stage_ops(&cfg).iter().map(|s| s.macs).sum();
        if stage_total != mac_count(&cfg) {
            return Err(format!("stage MACs disagree with mac_count for {cfg:?}"));
        }
    }
    if param_count(&GateCnnConfig::default()) != 2678 {
        return Err("default configuration parameter count moved".into());
    }
    Ok("parameter and MAC counts agree with enumeration".into())
}

fn gradient_spot_check() -> Check {
    let cfg = tiny_cfg();
    let w = ModelWeights::<f64>::init(&cfg, 17).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let shape = cfg.input_shape().to_vec();
    let len: usize = shape.iter().product();
    let x = Tensor::new(shape, (0..len).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let label = 1usize;
    let (_, grads) = backward(&cfg, &w, &x, label).map_err(|e| e.to_string())?;

    let eps = 1e-5;
    let num_slots = w.entries().len();
    for _ in 0..12 {
        let slot = rng.gen_range(0..num_slots);
        let mut probe = w.clone();
        let idx = {
            let slots = probe.entries_mut();
            rng.gen_range(0..slots[slot].len())
        };
        let analytic = {
            let mut g = grads.clone();
            g.entries_mut()[slot][idx]
        };
        let plus = {
            probe.entries_mut()[slot][idx] += eps;
            let tr = forward(&cfg, &probe, &x).map_err(|e| e.to_string())?;
            crate::train::loss(&tr.logits, label).map_err(|e| e.to_string())?
        };
        let minus = {
            probe.entries_mut()[slot][idx] -= 2.0 * eps;
            let tr = forward(&cfg, &probe, &x).map_err(|e| e.to_string())?;
            crate::train::loss(&tr.logits, label).map_err(|e| e.to_string())?
        };
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        if (analytic - numeric).abs() / denom > 1e-4 {
            return Err(format!(
                "gradient slot {slot} index {idx}: analytic {analytic} vs numeric {numeric}"
            ));
        }
    }
    Ok("analytic gradients match central differences on sampled parameters".into())
}

fn pipeline_arithmetic() -> Check {
    if cycles_to_seconds(REFERENCE_LATENCY_CYCLES, 100_000_000) != 107.5e-6 {
        return Err("reference cycles do not convert to 107.5 us".into());
    }
    if pipelined_throughput(REFERENCE_LATENCY_CYCLES, 100_000_000).floor() != 9302.0 {
        return Err("reference interval does not yield 9302 inf/s".into());
    }
    let report = estimate(&GateCnnConfig::default(), &PipelineParams::default())
        .map_err(|e| e.to_string())?;
    if !report.realtime_ok {
        return Err(format!(
            "default model misses the real-time budget: {} cycles",
            report.total_latency_cycles
        ));
    }
    Ok("latency/throughput arithmetic and real-time verdict hold".into())
}

fn format_round_trips() -> Check {
    let cfg = tiny_cfg();
    let w = ModelWeights::<f64>::init(&cfg, 23).map_err(|e| e.to_string())?;

    let bytes = weights_to_bytes(&cfg, &w).map_err(|e| e.to_string())?;
    let (cfg2, w2) = weights_from_bytes::<f64>(&bytes).map_err(|e| e.to_string())?;
    let bytes2 = weights_to_bytes(&cfg2, &w2).map_err(|e| e.to_string())?;
    if bytes != bytes2 {
        return Err("weight bytes change across a round trip".into());
    }

    let qm = quantize_model(&cfg, &w, &FixedPointSpec::default()).map_err(|e| e.to_string())?;
    let qb = quantized_to_bytes(&qm).map_err(|e| e.to_string())?;
    if quantized_from_bytes(&qb).map_err(|e| e.to_string())? != qm {
        return Err("quantized bytes change across a round trip".into());
    }
    let rom = export_rom(&qm);
    if parse_rom(&rom).map_err(|e| e.to_string())? != qm {
        return Err("rom text changes across a round trip".into());
    }

    let spec = SynthSpec { samples_per_class: 2, ..SynthSpec::default() };
    let frames = generate::<f64>(&spec).map_err(|e| e.to_string())?;
    let fb = frames_to_bytes(&frames).map_err(|e| e.to_string())?;
    let back = frames_from_bytes::<f64>(&fb).map_err(|e| e.to_string())?;
    if frames_to_bytes(&back).map_err(|e| e.to_string())? != fb {
        return Err("frame bytes change across a round trip".into());
    }
    Ok("weights, quantized, rom, and frame formats round trip".into())
}

fn fixed_tracks_float() -> Check {
    let cfg = GateCnnConfig::default();
    let w = ModelWeights::<f64>::init(&cfg, 29).map_err(|e| e.to_string())?;
    let qm = quantize_model(&cfg, &w, &FixedPointSpec::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut agree = 0usize;
    let total = 20usize;
    for i in 0..total {
        let shape = cfg.input_shape().to_vec();
        let len: usize = shape.iter().product();
        let x =
            Tensor::new(shape, (0..len).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let tr = forward(&cfg, &w, &x).map_err(|e| e.to_string())?;
        let fl = forward_fixed(&qm, &x).map_err(|e| e.to_string())?;
        for (k, code) in fl.iter().enumerate() {
            let gap = (dequantize(*code, &qm.spec) - tr.logits.data()[k]).abs();
            if gap > 0.01 {
                return Err(format!("frame {i} class {k}: fixed-float gap {gap}"));
            }
        }
        if predict_fixed(&qm, &x).map_err(|e| e.to_string())? == tr.logits.argmax() {
            agree += 1;
        }
    }
    if agree * 10 < total * 9 {
        return Err(format!("fixed/float argmax agreement {agree}/{total}"));
    }
    Ok(format!("fixed logits track float; argmax agreement {agree}/{total}"))
}

/// Runs every check and collects the outcomes.
pub fn run_selftest() -> SelftestReport {
    let checks: Vec<(&'static str, fn() -> Check)> = vec![
        ("conv-oracles", conv_oracles),
        ("fixed-point-arithmetic", fixed_point_arithmetic),
        ("gating-algebra", gating_algebra),
        ("operation-counts", operation_counts),
        ("gradient-spot-check", gradient_spot_check),
        ("pipeline-arithmetic", pipeline_arithmetic),
        ("format-round-trips", format_round_trips),
        ("fixed-tracks-float", fixed_tracks_float),
    ];
    let checks = checks
        .into_iter()
        .map(|(name, f)| match f() {
            Ok(detail) => CheckResult { name, passed: true, detail },
            Err(detail) => CheckResult { name, passed: false, detail },
        })
        .collect();
    SelftestReport { checks }
}
