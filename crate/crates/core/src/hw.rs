//! Analytic latency and resource models.
//!
//! The FPGA model follows an IP-based accelerator template: each bundle is
//! executed as a five-stage pipeline (load, 3x3 depthwise engine, 1x1
//! engine, pooling, write-back) over row tiles of its input. With
//! double-buffering the stages overlap and a bundle costs its slowest stage;
//! without it the stages run back to back. The detection head runs as one
//! more pipeline pass.
//!
//! All constants are configuration. Numbers produced here are model outputs
//! for comparing candidates, not measurements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{FeatureShape, LayerKind, LayerSpec, NetworkSpec};
use crate::quant::QuantScheme;
use crate::scoring::BoundingBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpgaTarget {
    pub dsp_total: u64,
    pub bram_bytes: u64,
    pub frequency_mhz: f64,
    /// Native multiplier operand widths `(weight side, feature-map side)`.
    pub dsp_mult_width: (u32, u32),
    /// Extra effective bits each signed operand costs on the multiplier.
    pub operand_guard_bits: u32,
    pub dram_bandwidth_bytes_per_cycle: f64,
    /// Parallel multipliers in the 3x3 depthwise engine.
    pub conv3_multipliers: u64,
    /// Parallel multipliers in the 1x1 engine (also runs the head).
    pub conv1_multipliers: u64,
    /// Elements compared per cycle by the pooling engine.
    pub pool_lanes: u64,
    /// Row tiles each bundle's input is split into (capped by its height).
    pub row_tiles: usize,
    /// Overlap load/write-back with compute.
    pub double_buffer: bool,
}

impl Default for FpgaTarget {
    /// Profile in the spirit of a small embedded FPGA board: 360 DSPs at
    /// 200 MHz (144 GOPS peak), 216 x 36 Kb block RAM, one 128-bit memory port.
    fn default() -> Self {
        Self {
            dsp_total: 360,
            bram_bytes: 216 * 4608,
            frequency_mhz: 200.0,
            dsp_mult_width: (18, 27),
            operand_guard_bits: 4,
            dram_bandwidth_bytes_per_cycle: 16.0,
            conv3_multipliers: 32,
            conv1_multipliers: 128,
            pool_lanes: 16,
            row_tiles: 16,
            double_buffer: true,
        }
    }
}

impl FpgaTarget {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dsp_total > 0
            && self.bram_bytes > 0
            && self.frequency_mhz > 0.0
            && self.frequency_mhz.is_finite()
            && self.dsp_mult_width.0 > 0
            && self.dsp_mult_width.1 > 0
            && self.dram_bandwidth_bytes_per_cycle > 0.0
            && self.dram_bandwidth_bytes_per_cycle.is_finite()
            && self.conv3_multipliers > 0
            && self.conv1_multipliers > 0
            && self.pool_lanes > 0
            && self.row_tiles > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("FPGA target fields must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuTarget {
    pub peak_gflops: f64,
    /// Achieved fraction of peak, in `(0, 1]`.
    pub efficiency: f64,
    /// Latency multiplier from the measuring device to the deployment device.
    pub scale_factor: f64,
}

impl Default for GpuTarget {
    /// Embedded GPU at 665 GFLOPS peak.
    fn default() -> Self {
        Self {
            peak_gflops: 665.0,
            efficiency: 0.3,
            scale_factor: 1.0,
        }
    }
}

impl GpuTarget {
    pub fn validate(&self) -> Result<()> {
        if self.peak_gflops > 0.0 && self.efficiency > 0.0 && self.efficiency <= 1.0 && self.scale_factor > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad GPU target {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bottleneck {
    Compute,
    Bandwidth,
    Memory,
}

impl std::fmt::Display for Bottleneck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Bottleneck::Compute => "compute",
            Bottleneck::Bandwidth => "bandwidth",
            Bottleneck::Memory => "memory",
        })
    }
}

/// Cycle counts of the five pipeline stages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCycles {
    pub load: u64,
    pub conv3: u64,
    pub conv1: u64,
    pub pool: u64,
    pub writeback: u64,
}

impl StageCycles {
    fn add(&mut self, o: &StageCycles) {
        self.load += o.load;
        self.conv3 += o.conv3;
        self.conv1 += o.conv1;
        self.pool += o.pool;
        self.writeback += o.writeback;
    }

    /// Cycles of one pipeline pass with or without stage overlap.
    pub fn latency(&self, overlap: bool) -> u64 {
        let all = [self.load, self.conv3, self.conv1, self.pool, self.writeback];
        if overlap {
            all.into_iter().max().unwrap_or(0)
        } else {
            all.into_iter().sum()
        }
    }

    /// Slowest stage; ties go to compute.
    pub fn bottleneck(&self) -> Bottleneck {
        let compute = self.conv3.max(self.conv1).max(self.pool);
        if self.load.max(self.writeback) > compute {
            Bottleneck::Bandwidth
        } else {
            Bottleneck::Compute
        }
    }
}

/// Per-layer row of the estimate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub index: usize,
    pub kind: String,
    /// 1-based bundle, or `None` for the head.
    pub bundle: Option<usize>,
    pub macs: u64,
    pub cycles: StageCycles,
    pub bottleneck: Bottleneck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwEstimate {
    /// Latency of one (stitched) inference pass.
    pub latency_ms: f64,
    /// `latency_ms` divided by the images per pass.
    pub latency_per_image_ms: f64,
    pub cycles: u64,
    pub dsp_used: u64,
    pub bram_bytes_used: u64,
    pub bottleneck: Bottleneck,
    pub feasible: bool,
    /// Weight bytes fetched from external memory per image.
    pub weight_bytes_per_image: f64,
    pub layers: Vec<LayerCost>,
}

/// Several images stitched into one larger input on a square grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingPlan {
    /// `(rows, cols)`.
    pub tile_grid: (usize, usize),
    pub tile_shape: FeatureShape,
    pub stitched_shape: FeatureShape,
    pub batch: usize,
}

impl TilingPlan {
    /// Identity plan for a single image.
    pub fn single(input: FeatureShape) -> Self {
        Self {
            tile_grid: (1, 1),
            tile_shape: input,
            stitched_shape: input,
            batch: 1,
        }
    }

    /// `(row, col)` of image `index` in the grid (row-major).
    pub fn tile_position(&self, index: usize) -> Result<(usize, usize)> {
        if index >= self.batch {
            return Err(Error::InvalidArgument(format!("tile {index} outside batch {}", self.batch)));
        }
        Ok((index / self.tile_grid.1, index % self.tile_grid.1))
    }

    /// Maps a box in tile `index`'s normalized coordinates to stitched coordinates.
    pub fn to_stitched(&self, index: usize, b: &BoundingBox) -> Result<BoundingBox> {
        let (r, c) = self.tile_position(index)?;
        let (rows, cols) = (self.tile_grid.0 as f64, self.tile_grid.1 as f64);
        let fx = |x: f64| (c as f64 + x) / cols;
        let fy = |y: f64| (r as f64 + y) / rows;
        Ok(BoundingBox { x_min: fx(b.x_min), y_min: fy(b.y_min), x_max: fx(b.x_max), y_max: fy(b.y_max) })
    }

    /// Inverse of [`TilingPlan::to_stitched`]; demultiplexes a detection.
    pub fn to_tile(&self, index: usize, b: &BoundingBox) -> Result<BoundingBox> {
        let (r, c) = self.tile_position(index)?;
        let (rows, cols) = (self.tile_grid.0 as f64, self.tile_grid.1 as f64);
        let fx = |x: f64| x * cols - c as f64;
        let fy = |y: f64| y * rows - r as f64;
        Ok(BoundingBox { x_min: fx(b.x_min), y_min: fy(b.y_min), x_max: fx(b.x_max), y_max: fy(b.y_max) })
    }
}

pub fn make_tiling_plan(input: FeatureShape, batch: usize) -> Result<TilingPlan> {
    let side = (batch as f64).sqrt().round() as usize;
    if batch == 0 || side * side != batch {
        return Err(Error::InvalidArgument(format!("tiling batch {batch} is not a perfect square")));
    }
    Ok(TilingPlan {
        tile_grid: (side, side),
        tile_shape: input,
        stitched_shape: FeatureShape::new(input.c, input.h * side, input.w * side),
        batch,
    })
}

fn effective_bits(bits: u32, t: &FpgaTarget) -> u32 {
    bits + t.operand_guard_bits
}

/// Native multiplies needed per MAC after operand splitting.
pub fn dsp_cost_per_mac(q: &QuantScheme, t: &FpgaTarget) -> u64 {
    let (a, b) = t.dsp_mult_width;
    let w = effective_bits(q.w_bits, t);
    let fm = effective_bits(q.fm_bits, t);
    (w.div_ceil(a) * fm.div_ceil(b)) as u64
}

fn fm_bytes(s: &FeatureShape, rows: usize, bits: u32) -> u64 {
    ((s.c * rows * s.w) as u64 * bits as u64).div_ceil(8)
}

fn weight_bytes(l: &LayerSpec, bits: u32) -> u64 {
    (l.weight_count() as u64 * bits as u64).div_ceil(8)
}

fn scaled(spec: &NetworkSpec, plan: &TilingPlan) -> Result<NetworkSpec> {
    if (spec.input.c, spec.input.h, spec.input.w) != (plan.tile_shape.c, plan.tile_shape.h, plan.tile_shape.w) {
        return Err(Error::shape("tiling plan tile vs spec input", plan.tile_shape, spec.input));
    }
    let (r, c) = plan.tile_grid;
    let up = |s: FeatureShape| FeatureShape::new(s.c, s.h * r, s.w * c);
    Ok(NetworkSpec {
        input: up(spec.input),
        layers: spec
            .layers
            .iter()
            .map(|l| LayerSpec { input: up(l.input), output: up(l.output), ..*l })
            .collect(),
        depth: spec.depth,
    })
}

/// Consecutive layer ranges executed as one pipeline pass.
fn passes(spec: &NetworkSpec) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = Vec::new();
    for (i, l) in spec.layers.iter().enumerate() {
        match out.last_mut() {
            Some(r) if spec.layers[r.start].bundle == l.bundle => r.end = i + 1,
            _ => out.push(i..i + 1),
        }
    }
    out
}

fn invocations(rows: usize, t: &FpgaTarget) -> usize {
    t.row_tiles.min(rows).max(1)
}

/// On-chip buffer bytes: a ping-pong pair sized to the largest feature-map
/// tile plus a buffer for the largest layer's weights.
pub fn estimate_bram(spec: &NetworkSpec, q: &QuantScheme, plan: &TilingPlan, t: &FpgaTarget) -> Result<u64> {
    let s = scaled(spec, plan)?;
    let mut max_fm = fm_bytes(&s.input, s.input.h.div_ceil(invocations(s.input.h, t)), q.fm_bits);
    let mut max_w = 0;
    for r in passes(&s) {
        let first = &s.layers[r.start];
        let inv = invocations(first.input.h, t);
        for l in &s.layers[r] {
            // rows per tile scale with this layer's own height
            let rows_in = l.input.h.div_ceil(inv);
            let rows_out = l.output.h.div_ceil(inv);
            max_fm = max_fm.max(fm_bytes(&l.input, rows_in, q.fm_bits));
            max_fm = max_fm.max(fm_bytes(&l.output, rows_out, q.fm_bits));
            max_w = max_w.max(weight_bytes(l, q.w_bits));
        }
    }
    Ok(2 * max_fm + max_w)
}

fn kind_name(k: &LayerKind) -> &'static str {
    match k {
        LayerKind::DwConv3 { .. } => "dwconv3",
        LayerKind::PwConv1 { .. } => "pwconv1",
        LayerKind::BatchNorm => "bn",
        LayerKind::Relu => "relu",
        LayerKind::Relu6 => "relu6",
        LayerKind::MaxPool2 => "maxpool2",
        LayerKind::BypassTap => "bypass_tap",
        LayerKind::BypassMerge { .. } => "bypass_merge",
        LayerKind::Head => "head",
    }
}

fn transfer_cycles(bytes: u64, t: &FpgaTarget) -> u64 {
    (bytes as f64 / t.dram_bandwidth_bytes_per_cycle).ceil() as u64
}

pub fn estimate_fpga(spec: &NetworkSpec, q: &QuantScheme, plan: &TilingPlan, t: &FpgaTarget) -> Result<HwEstimate> {
    q.validate()?;
    t.validate()?;
    let s = scaled(spec, plan)?;
    let mut layers = Vec::with_capacity(s.layers.len());
    let mut total_cycles = 0u64;
    let mut totals = StageCycles::default();
    let mut total_weight_bytes = 0u64;

    for r in passes(&s) {
        let mut pass = StageCycles::default();
        let last = r.end - 1;
        for i in r.clone() {
            let l = &s.layers[i];
            let macs = l.macs();
            let wb = weight_bytes(l, q.w_bits);
            total_weight_bytes += wb;
            // Weights stream in with the pass; feature maps enter at its
            // first layer (the merge brings in the bypass tensor) and leave
            // at its last.
            let mut c = StageCycles { load: transfer_cycles(wb, t), ..Default::default() };
            if i == r.start {
                c.load += transfer_cycles(fm_bytes(&l.input, l.input.h, q.fm_bits), t);
            }
            if let LayerKind::BypassMerge { .. } = l.kind {
                let extra = FeatureShape::new(l.output.c - l.input.c, l.output.h, l.output.w);
                c.load += transfer_cycles(fm_bytes(&extra, extra.h, q.fm_bits), t);
            }
            if i == last {
                c.writeback = transfer_cycles(fm_bytes(&l.output, l.output.h, q.fm_bits), t);
            }
            match l.kind {
                LayerKind::DwConv3 { .. } => c.conv3 = macs.div_ceil(t.conv3_multipliers),
                LayerKind::PwConv1 { .. } | LayerKind::Head => c.conv1 = macs.div_ceil(t.conv1_multipliers),
                LayerKind::MaxPool2 => {
                    c.pool = ((l.input.c * l.input.h * l.input.w) as u64).div_ceil(t.pool_lanes)
                }
                _ => {}
            }
            pass.add(&c);
            layers.push(LayerCost {
                index: i,
                kind: kind_name(&l.kind).to_string(),
                bundle: l.bundle.map(|b| b + 1),
                macs,
                cycles: c,
                bottleneck: c.bottleneck(),
            });
        }
        total_cycles += pass.latency(t.double_buffer);
        totals.add(&pass);
    }

    let cost = dsp_cost_per_mac(q, t);
    let dsp_used = (t.conv3_multipliers + t.conv1_multipliers) * cost;
    let bram = estimate_bram(spec, q, plan, t)?;
    let bram_ok = bram <= t.bram_bytes;
    let feasible = bram_ok && dsp_used <= t.dsp_total;
    let bottleneck = if bram_ok { totals.bottleneck() } else { Bottleneck::Memory };
    let latency_ms = total_cycles as f64 / (t.frequency_mhz * 1e3);
    Ok(HwEstimate {
        latency_ms,
        latency_per_image_ms: latency_ms / plan.batch as f64,
        cycles: total_cycles,
        dsp_used,
        bram_bytes_used: bram,
        bottleneck,
        feasible,
        weight_bytes_per_image: total_weight_bytes as f64 / plan.batch as f64,
        layers,
    })
}

pub fn estimate_gpu(spec: &NetworkSpec, t: &GpuTarget) -> Result<HwEstimate> {
    t.validate()?;
    let macs = crate::genome::macs_count(spec);
    let latency_ms = macs as f64 * 2.0 / (t.peak_gflops * 1e9 * t.efficiency) * t.scale_factor * 1e3;
    let layers = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerCost {
            index: i,
            kind: kind_name(&l.kind).to_string(),
            bundle: l.bundle.map(|b| b + 1),
            macs: l.macs(),
            cycles: StageCycles::default(),
            bottleneck: Bottleneck::Compute,
        })
        .collect();
    Ok(HwEstimate {
        latency_ms,
        latency_per_image_ms: latency_ms,
        cycles: 0,
        dsp_used: 0,
        bram_bytes_used: 0,
        bottleneck: Bottleneck::Compute,
        feasible: true,
        weight_bytes_per_image: 0.0,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{instantiate, reference_genome, Activation, ReferenceVariant};

    fn ref_c() -> NetworkSpec {
        instantiate(&reference_genome(ReferenceVariant::C, Activation::Relu6), FeatureShape::default()).unwrap()
    }

    fn head_only(cin: usize, h: usize, w: usize) -> NetworkSpec {
        let input = FeatureShape::new(cin, h, w);
        NetworkSpec {
            input,
            layers: vec![LayerSpec {
                kind: LayerKind::Head,
                input,
                output: FeatureShape::new(10, h, w),
                bundle: None,
            }],
            depth: 0,
        }
    }

    #[test]
    fn dsp_cost_examples() {
        let t = FpgaTarget::default();
        let q = |fm, w| QuantScheme { fm_bits: fm, w_bits: w };
        assert_eq!(dsp_cost_per_mac(&q(16, 14), &t), 1);
        assert_eq!(dsp_cost_per_mac(&q(16, 15), &t), 2);
        assert_eq!(dsp_cost_per_mac(&q(8, 8), &t), 1);
    }

    #[test]
    fn single_layer_compute_bound() {
        let spec = head_only(64, 8, 8);
        let t = FpgaTarget { dram_bandwidth_bytes_per_cycle: 1e9, ..Default::default() };
        let q = QuantScheme { fm_bits: 8, w_bits: 8 };
        let est = estimate_fpga(&spec, &q, &TilingPlan::single(spec.input), &t).unwrap();
        let m = 64 * 10 * 64u64;
        assert_eq!(est.cycles, m.div_ceil(128));
        assert_eq!(est.latency_ms, m.div_ceil(128) as f64 / (200.0 * 1e3));
        assert_eq!(est.bottleneck, Bottleneck::Compute);
    }

    #[test]
    fn frequency_scaling_is_exact() {
        let spec = ref_c();
        let q = QuantScheme::default();
        let plan = TilingPlan::single(spec.input);
        let a = estimate_fpga(&spec, &q, &plan, &FpgaTarget::default()).unwrap();
        let b = estimate_fpga(&spec, &q, &plan, &FpgaTarget { frequency_mhz: 100.0, ..Default::default() }).unwrap();
        assert_eq!(b.latency_ms, 2.0 * a.latency_ms);
    }

    #[test]
    fn overlap_never_hurts() {
        let spec = ref_c();
        let q = QuantScheme::default();
        let plan = TilingPlan::single(spec.input);
        let on = estimate_fpga(&spec, &q, &plan, &FpgaTarget::default()).unwrap();
        let off = estimate_fpga(&spec, &q, &plan, &FpgaTarget { double_buffer: false, ..Default::default() }).unwrap();
        assert!(on.latency_ms <= off.latency_ms);
        let per_layer: u64 = off.layers.iter().map(|l| l.cycles.latency(false)).sum();
        assert_eq!(per_layer, off.cycles);
    }

    #[test]
    fn bram_monotone_in_fm_bits() {
        let spec = ref_c();
        let plan = TilingPlan::single(spec.input);
        let t = FpgaTarget::default();
        let mut prev = 0;
        for fm in 12..=16 {
            let b = estimate_bram(&spec, &QuantScheme { fm_bits: fm, w_bits: 11 }, &plan, &t).unwrap();
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn bram_empty_spec_is_input_tile() {
        let input = FeatureShape::new(3, 16, 32);
        let spec = NetworkSpec { input, layers: vec![], depth: 0 };
        let q = QuantScheme { fm_bits: 8, w_bits: 8 };
        let t = FpgaTarget::default();
        let b = estimate_bram(&spec, &q, &TilingPlan::single(input), &t).unwrap();
        assert_eq!(b, 2 * 3 * 32);
    }

    #[test]
    fn tiling_plans() {
        let p = make_tiling_plan(FeatureShape::new(3, 160, 320), 4).unwrap();
        assert_eq!(p.tile_grid, (2, 2));
        assert_eq!((p.stitched_shape.h, p.stitched_shape.w), (320, 640));
        let p9 = make_tiling_plan(FeatureShape::new(3, 160, 320), 9).unwrap();
        assert_eq!((p9.stitched_shape.h, p9.stitched_shape.w), (480, 960));
        assert_eq!(make_tiling_plan(FeatureShape::new(3, 8, 8), 1).unwrap(), TilingPlan::single(FeatureShape::new(3, 8, 8)));
        assert!(make_tiling_plan(FeatureShape::new(3, 8, 8), 3).is_err());
        let b = BoundingBox::new(0.1, 0.2, 0.3, 0.4).unwrap();
        let s = p.to_stitched(3, &b).unwrap();
        assert_eq!(s, BoundingBox { x_min: 0.55, y_min: 0.6, x_max: 0.65, y_max: 0.7 });
        let back = p.to_tile(3, &s).unwrap();
        assert!((back.x_min - 0.1).abs() < 1e-12 && (back.y_max - 0.4).abs() < 1e-12);
    }

    #[test]
    fn batching_cuts_weight_traffic() {
        let spec = ref_c();
        let q = QuantScheme::default();
        let t = FpgaTarget::default();
        let one = estimate_fpga(&spec, &q, &TilingPlan::single(spec.input), &t).unwrap();
        let four = estimate_fpga(&spec, &q, &make_tiling_plan(spec.input, 4).unwrap(), &t).unwrap();
        assert_eq!(one.weight_bytes_per_image, 4.0 * four.weight_bytes_per_image);
        let macs1: u64 = one.layers.iter().map(|l| l.macs).sum();
        let macs4: u64 = four.layers.iter().map(|l| l.macs).sum();
        assert_eq!(macs4, 4 * macs1);
    }

    #[test]
    fn gpu_formula() {
        // 1 GMAC: 100k input channels x 10 outputs x 1000 pixels
        let spec = head_only(100_000, 1000, 1);
        assert_eq!(crate::genome::macs_count(&spec), 1_000_000_000);
        let est = estimate_gpu(&spec, &GpuTarget::default()).unwrap();
        assert!((est.latency_ms - 2000.0 / 199.5).abs() < 1e-9);
        let twice = estimate_gpu(&spec, &GpuTarget { scale_factor: 2.0, ..Default::default() }).unwrap();
        assert_eq!(twice.latency_ms, 2.0 * est.latency_ms);
        let empty = NetworkSpec { input: FeatureShape::new(3, 4, 4), layers: vec![], depth: 0 };
        assert_eq!(estimate_gpu(&empty, &GpuTarget::default()).unwrap().latency_ms, 0.0);
    }
}
