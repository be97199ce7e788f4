//! Parameter and operation accounting, derived from the config alone.
//!
//! Multiply-accumulate counts follow the in-bounds convention: taps that
//! fall on zero padding are skipped by the kernels and are not counted.
//! One MAC is two floating-point operations (multiply and add). ReLU and
//! the combine stage count one operation per produced element; bias terms
//! initialize accumulators and add nothing. Pooling performs comparisons
//! only, which stay out of the FLOP total but are reported per stage for
//! the latency model.

use super::config::GateCnnConfig;

/// Operation counts of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOps {
    pub name: &'static str,
    /// Multiply-accumulates, in-bounds taps only.
    pub macs: u64,
    /// Elementwise arithmetic: ReLU, combine multiply, combine add.
    pub elementwise: u64,
    /// Pooling comparisons. Latency-relevant, not FLOPs.
    pub comparisons: u64,
}

/// In-bounds taps summed over all outputs of one convolution axis with
/// extent `n`, kernel `k`, zero padding `p`, and stride `s`.
pub fn axis_taps(n: usize, k: usize, p: usize, s: usize) -> u64 {
    assert!(s >= 1 && n + 2 * p >= k, "degenerate convolution axis");
    let out = (n + 2 * p - k) / s + 1;
    let mut total = 0u64;
    for i in 0..out {
        for u in 0..k {
            let pos = i * s + u;
            if pos >= p && pos - p < n {
                total += 1;
            }
        }
    }
    total
}

/// Per-stage operation counts in forward order.
pub fn stage_ops(cfg: &GateCnnConfig) -> Vec<StageOps> {
    let d = cfg.embed_dim as u64;
    let f = cfg.content_channels as u64;
    let h_p = cfg.h_prime();
    let w_p = cfg.w_prime();
    let plane = (d as usize * w_p) as u64;

    let fuse_taps = axis_taps(cfg.doppler_bins, cfg.fuse_kernel.0, cfg.fuse_padding().0, 1)
        * axis_taps(cfg.time_steps, cfg.fuse_kernel.1, cfg.fuse_padding().1, 1);
    let pool_cmp =
        (h_p * w_p) as u64 * (cfg.pool.0 as u64 * cfg.pool.1 as u64 - 1);
    let time_taps = axis_taps(w_p, cfg.gate_taps, cfg.gate_taps / 2, 1);
    let casc_taps = axis_taps(d as usize, cfg.cascade_kernel.0, cfg.cascade_padding().0, 1)
        * axis_taps(w_p, cfg.cascade_kernel.1, cfg.cascade_padding().1, 1);

    vec![
        StageOps {
            name: "fuse",
            macs: cfg.in_channels as u64 * fuse_taps,
            elementwise: 0,
            comparisons: 0,
        },
        StageOps { name: "pool", macs: 0, elementwise: 0, comparisons: pool_cmp },
        StageOps {
            name: "embed",
            macs: d * (h_p * w_p) as u64,
            elementwise: 0,
            comparisons: 0,
        },
        StageOps { name: "gate", macs: d * d * time_taps, elementwise: 0, comparisons: 0 },
        StageOps { name: "content", macs: d * d * time_taps, elementwise: 0, comparisons: 0 },
        StageOps { name: "cascade1", macs: f * casc_taps, elementwise: f * plane, comparisons: 0 },
        StageOps {
            name: "cascade2",
            macs: f * f * casc_taps,
            elementwise: f * plane,
            comparisons: 0,
        },
        StageOps { name: "cascade3", macs: f * casc_taps, elementwise: 0, comparisons: 0 },
        // Combine: gate ReLU, multiply, add, one each per element.
        StageOps { name: "combine", macs: 0, elementwise: 3 * plane, comparisons: 0 },
        StageOps { name: "average", macs: plane, elementwise: 0, comparisons: 0 },
        StageOps {
            name: "classify",
            macs: cfg.num_classes as u64 * w_p as u64,
            elementwise: 0,
            comparisons: 0,
        },
    ]
}

/// Total learnable scalars, from the per-tensor closed forms.
pub fn param_count(cfg: &GateCnnConfig) -> u64 {
    let d = cfg.embed_dim as u64;
    let f = cfg.content_channels as u64;
    let k_t = cfg.gate_taps as u64;
    let fuse = cfg.in_channels as u64 * cfg.fuse_kernel.0 as u64 * cfg.fuse_kernel.1 as u64 + 1;
    let embed = d * cfg.h_prime() as u64 + d;
    let time = d * d * k_t + d;
    let casc = cfg.cascade_kernel.0 as u64 * cfg.cascade_kernel.1 as u64;
    let cascade = (f * casc + f) + (f * f * casc + f) + (f * casc + 1);
    let avg = d + 1;
    let cls = cfg.num_classes as u64 * cfg.w_prime() as u64 + cfg.num_classes as u64;
    fuse + embed + 2 * time + cascade + avg + cls
}

/// Total multiply-accumulates of one inference.
pub fn mac_count(cfg: &GateCnnConfig) -> u64 {
    stage_ops(cfg).iter().map(|s| s.macs).sum()
}

/// Total floating-point operations of one inference: two per MAC plus
/// the elementwise terms. Pooling comparisons are excluded.
pub fn flop_count(cfg: &GateCnnConfig) -> u64 {
    stage_ops(cfg).iter().map(|s| 2 * s.macs + s.elementwise).sum()
}
