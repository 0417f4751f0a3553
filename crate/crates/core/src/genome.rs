//! Bundles, network genomes and their instantiation into resolved layer lists.
//!
//! A genome stacks `depth` copies of one bundle. `fv1[k]` is the output
//! width of bundle `k` and `fv2[k]` says whether a 2x2 max pool follows it.
//! An optional bypass taps the output of bundle `source` (1-based) and
//! concatenates it, reordered once per crossed pool, onto the input of
//! bundle `dest`.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::HEAD_CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerOp {
    DWConv3,
    PWConv1,
    BN,
    ReLU,
    ReLU6,
    MaxPool2,
}

impl LayerOp {
    pub fn is_conv(self) -> bool {
        matches!(self, LayerOp::DWConv3 | LayerOp::PWConv1)
    }

    pub fn is_activation(self) -> bool {
        matches!(self, LayerOp::ReLU | LayerOp::ReLU6)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bundle {
    pub id: u32,
    pub ops: Vec<LayerOp>,
}

impl Bundle {
    pub fn new(id: u32, ops: Vec<LayerOp>) -> Result<Self> {
        let b = Self { id, ops };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ops.is_empty() {
            return Err(Error::InvalidBundle(format!("bundle {} is empty", self.id)));
        }
        if self.ops.iter().filter(|o| **o == LayerOp::MaxPool2).count() > 1 {
            return Err(Error::InvalidBundle(format!("bundle {} has more than one pool", self.id)));
        }
        for (i, op) in self.ops.iter().enumerate() {
            if *op == LayerOp::BN && (i == 0 || !self.ops[i - 1].is_conv()) {
                return Err(Error::InvalidBundle(format!(
                    "bundle {}: BN at position {i} does not follow a conv",
                    self.id
                )));
            }
        }
        if !self.ops.contains(&LayerOp::PWConv1) {
            return Err(Error::InvalidBundle(format!(
                "bundle {} has no pointwise conv to set its width",
                self.id
            )));
        }
        Ok(())
    }

    /// The candidate bundles explored by the search. Activation slots are
    /// written as `ReLU`; the genome's activation decides the actual kernel.
    pub fn library() -> Vec<Bundle> {
        use LayerOp::*;
        vec![
            Bundle { id: 0, ops: vec![DWConv3, BN, ReLU, PWConv1, BN, ReLU] },
            Bundle { id: 1, ops: vec![PWConv1, BN, ReLU, DWConv3, BN, ReLU] },
            Bundle { id: 2, ops: vec![DWConv3, PWConv1, BN, ReLU] },
            Bundle { id: 3, ops: vec![PWConv1, BN, ReLU] },
            Bundle { id: 4, ops: vec![DWConv3, BN, ReLU, DWConv3, BN, ReLU, PWConv1, BN, ReLU] },
        ]
    }

    pub fn by_id(id: u32) -> Result<Bundle> {
        Self::library()
            .into_iter()
            .find(|b| b.id == id)
            .ok_or_else(|| Error::InvalidBundle(format!("unknown bundle id {id}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    Relu6,
}

/// Skip connection between bundles, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bypass {
    pub source: usize,
    pub dest: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkGenome {
    pub bundle_id: u32,
    /// Output width of each bundle.
    pub fv1: Vec<usize>,
    /// `fv2[k]`: pool after bundle `k + 1`.
    pub fv2: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bypass: Option<Bypass>,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkGenome {
    pub fn depth(&self) -> usize {
        self.fv1.len()
    }

    pub fn pool_count(&self) -> usize {
        self.fv2.iter().filter(|&&p| p).count()
    }

    /// 1-based positions of pools.
    pub fn pool_positions(&self) -> Vec<usize> {
        self.fv2.iter().enumerate().filter(|(_, &p)| p).map(|(i, _)| i + 1).collect()
    }

    /// Structural checks that do not depend on the input size.
    pub fn validate_structure(&self) -> Result<()> {
        Bundle::by_id(self.bundle_id)?;
        let depth = self.depth();
        if depth == 0 {
            return Err(Error::InvalidGenome("depth must be >= 1".into()));
        }
        if self.fv2.len() != depth {
            return Err(Error::InvalidGenome(format!(
                "fv1 has {} entries but fv2 has {}",
                depth,
                self.fv2.len()
            )));
        }
        if let Some(&w) = self.fv1.iter().find(|&&w| w == 0) {
            return Err(Error::InvalidGenome(format!("channel width {w} must be positive")));
        }
        if let Some(bp) = self.bypass {
            if bp.source == 0 || bp.source >= bp.dest || bp.dest > depth {
                return Err(Error::InvalidGenome(format!(
                    "bypass {}->{} must satisfy 1 <= source < dest <= {depth}",
                    bp.source, bp.dest
                )));
            }
        }
        Ok(())
    }

    /// Validates against search bounds and the input shape.
    pub fn validate(&self, bounds: &GenomeBounds) -> Result<()> {
        self.validate_structure()?;
        if !(bounds.depth_min..=bounds.depth_max).contains(&self.depth()) {
            return Err(Error::InvalidGenome(format!(
                "depth {} outside [{}, {}]",
                self.depth(),
                bounds.depth_min,
                bounds.depth_max
            )));
        }
        if let Some(w) = self.fv1.iter().find(|w| bounds.widths.index_of(**w).is_none()) {
            return Err(Error::InvalidGenome(format!("width {w} not in the width alphabet")));
        }
        if self.pool_count() > bounds.max_pools(self.depth()) {
            return Err(Error::InvalidGenome(format!(
                "{} pools exceed the bound {}",
                self.pool_count(),
                bounds.max_pools(self.depth())
            )));
        }
        if self.pool_count() < bounds.min_pools {
            return Err(Error::InvalidGenome(format!(
                "{} pools below the minimum {}",
                self.pool_count(),
                bounds.min_pools
            )));
        }
        instantiate(self, bounds.input).map(|_| ())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let g: Self = toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        g.validate_structure()?;
        Ok(g)
    }
}

/// The three reference backbones: A without bypass, B and C with a bypass
/// from bundle 3 to bundle 6; C widens the last bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceVariant {
    A,
    B,
    C,
}

pub fn reference_genome(variant: ReferenceVariant, activation: Activation) -> NetworkGenome {
    let last = if variant == ReferenceVariant::C { 96 } else { 48 };
    NetworkGenome {
        bundle_id: 0,
        fv1: vec![48, 96, 192, 384, 512, last],
        fv2: vec![true, true, true, false, false, false],
        bypass: (variant != ReferenceVariant::A).then_some(Bypass { source: 3, dest: 6 }),
        activation,
    }
}

/// Sorted, distinct set of allowed channel widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct WidthAlphabet(Vec<usize>);

impl WidthAlphabet {
    pub fn new(mut widths: Vec<usize>) -> Result<Self> {
        widths.sort_unstable();
        widths.dedup();
        if widths.is_empty() || widths[0] == 0 {
            return Err(Error::InvalidConfig("width alphabet must be non-empty and positive".into()));
        }
        Ok(Self(widths))
    }

    pub fn widths(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, w: usize) -> Option<usize> {
        self.0.binary_search(&w).ok()
    }

    /// Width at `index`, clamped to the alphabet ends.
    pub fn clamped(&self, index: isize) -> usize {
        self.0[index.clamp(0, self.0.len() as isize - 1) as usize]
    }
}

impl Default for WidthAlphabet {
    fn default() -> Self {
        Self(vec![24, 48, 96, 192, 384, 512])
    }
}

impl TryFrom<Vec<usize>> for WidthAlphabet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WidthAlphabet> for Vec<usize> {
    fn from(a: WidthAlphabet) -> Self {
        a.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl FeatureShape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn elements(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl Default for FeatureShape {
    fn default() -> Self {
        Self::new(3, 160, 320)
    }
}

/// Bounds of the genome search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenomeBounds {
    pub depth_min: usize,
    pub depth_max: usize,
    #[serde(default)]
    pub widths: WidthAlphabet,
    #[serde(default)]
    pub min_pools: usize,
    /// Upper bound on pools; further limited by depth and input divisibility.
    pub max_pools: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub input: FeatureShape,
}

impl Default for GenomeBounds {
    fn default() -> Self {
        Self {
            depth_min: 6,
            depth_max: 6,
            widths: WidthAlphabet::default(),
            min_pools: 1,
            max_pools: 4,
            activation: Activation::Relu6,
            input: FeatureShape::default(),
        }
    }
}

/// How many successive 2x2 pools keep both dims even.
pub fn max_pools_for(h: usize, w: usize) -> usize {
    let (mut h, mut w, mut k) = (h, w, 0);
    while h >= 2 && w >= 2 && h % 2 == 0 && w % 2 == 0 {
        h /= 2;
        w /= 2;
        k += 1;
    }
    k
}

impl GenomeBounds {
    pub fn max_pools(&self, depth: usize) -> usize {
        self.max_pools
            .min(depth)
            .min(max_pools_for(self.input.h, self.input.w))
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth_min == 0 || self.depth_min > self.depth_max {
            return Err(Error::InvalidConfig(format!(
                "depth range [{}, {}] is empty or zero",
                self.depth_min, self.depth_max
            )));
        }
        if self.min_pools > self.max_pools(self.depth_max) {
            return Err(Error::InvalidConfig(format!(
                "min_pools {} unsatisfiable (at most {} pools fit)",
                self.min_pools,
                self.max_pools(self.depth_max)
            )));
        }
        Ok(())
    }
}

/// Samples a genome uniformly over depth, widths and pool positions.
pub fn random_genome(rng: &mut impl Rng, bounds: &GenomeBounds, bundle_id: u32) -> Result<NetworkGenome> {
    bounds.validate()?;
    Bundle::by_id(bundle_id)?;
    let lo = bounds.depth_min.max(bounds.min_pools);
    if lo > bounds.depth_max {
        return Err(Error::InvalidConfig("no depth can hold min_pools pools".into()));
    }
    let depth = rng.random_range(lo..=bounds.depth_max);
    let fv1 = (0..depth)
        .map(|_| *bounds.widths.widths().choose(rng).expect("non-empty alphabet"))
        .collect();
    let pools = rng.random_range(bounds.min_pools..=bounds.max_pools(depth));
    let mut fv2 = vec![false; depth];
    for p in rand::seq::index::sample(rng, depth, pools) {
        fv2[p] = true;
    }
    let g = NetworkGenome {
        bundle_id,
        fv1,
        fv2,
        bypass: None,
        activation: bounds.activation,
    };
    g.validate(bounds)?;
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    DwConv3 { bias: bool },
    PwConv1 { bias: bool },
    BatchNorm,
    Relu,
    Relu6,
    MaxPool2,
    /// Marks the tensor carried by the bypass.
    BypassTap,
    /// Concatenates the main path with the tapped tensor after `reorders`
    /// space-to-depth steps.
    BypassMerge { reorders: usize },
    /// Final pointwise conv (with bias) to the detection channels.
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input: FeatureShape,
    pub output: FeatureShape,
    /// 0-based bundle this layer belongs to; pools count toward the bundle
    /// they follow. `None` for the head.
    pub bundle: Option<usize>,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::DwConv3 { bias } => 9 * self.input.c + if bias { self.input.c } else { 0 },
            LayerKind::PwConv1 { bias } => self.input.c * self.output.c + if bias { self.output.c } else { 0 },
            LayerKind::Head => self.input.c * self.output.c + self.output.c,
            LayerKind::BatchNorm => 2 * self.input.c,
            _ => 0,
        }
    }

    pub fn macs(&self) -> u64 {
        let hw = (self.input.h * self.input.w) as u64;
        match self.kind {
            LayerKind::DwConv3 { .. } => 9 * self.input.c as u64 * hw,
            LayerKind::PwConv1 { .. } | LayerKind::Head => (self.input.c * self.output.c) as u64 * hw,
            _ => 0,
        }
    }

    /// Weight scalars (excluding biases and BN), used for buffer sizing.
    pub fn weight_count(&self) -> usize {
        match self.kind {
            LayerKind::DwConv3 { .. } => 9 * self.input.c,
            LayerKind::PwConv1 { .. } | LayerKind::Head => self.input.c * self.output.c,
            _ => 0,
        }
    }
}

/// A fully resolved layer chain ending in one detection head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: FeatureShape,
    pub layers: Vec<LayerSpec>,
    pub depth: usize,
}

impl NetworkSpec {
    pub fn output(&self) -> FeatureShape {
        self.layers.last().map_or(self.input, |l| l.output)
    }

    /// Detection grid `(rows, cols)`.
    pub fn grid(&self) -> (usize, usize) {
        let o = self.output();
        (o.h, o.w)
    }

    /// Checks that layer shapes compose; bypass merges take their extra
    /// channels from the matching tap.
    pub fn check_chain(&self) -> Result<()> {
        let mut cur = self.input;
        let mut heads = 0;
        for (i, l) in self.layers.iter().enumerate() {
            let same_spatial = l.input.h == cur.h && l.input.w == cur.w;
            if !same_spatial || (l.input.c != cur.c) {
                return Err(Error::ShapeChain {
                    position: format!("layer {i}"),
                    reason: format!("expects {:?}, got {:?}", l.input, cur),
                });
            }
            if l.kind == LayerKind::Head {
                heads += 1;
            }
            cur = l.output;
        }
        if heads != 1 || self.layers.last().map(|l| l.kind) != Some(LayerKind::Head) {
            return Err(Error::ShapeChain {
                position: "head".into(),
                reason: "network must end in exactly one detection head".into(),
            });
        }
        Ok(())
    }
}

/// Resolves a genome into its layer chain for `input`.
pub fn instantiate(g: &NetworkGenome, input: FeatureShape) -> Result<NetworkSpec> {
    g.validate_structure()?;
    let bundle = Bundle::by_id(g.bundle_id)?;
    let mut layers = Vec::new();
    let mut cur = input;
    let mut tap: Option<FeatureShape> = None;

    let act = match g.activation {
        Activation::Relu => LayerKind::Relu,
        Activation::Relu6 => LayerKind::Relu6,
    };

    let pool = |cur: FeatureShape, position: String| -> Result<FeatureShape> {
        if !cur.h.is_multiple_of(2) || !cur.w.is_multiple_of(2) || cur.h < 2 || cur.w < 2 {
            return Err(Error::ShapeChain {
                position,
                reason: format!("cannot pool odd or unit spatial dims {}x{}", cur.h, cur.w),
            });
        }
        Ok(FeatureShape::new(cur.c, cur.h / 2, cur.w / 2))
    };

    for k in 0..g.depth() {
        let width = g.fv1[k];
        if let (Some(bp), Some(t)) = (g.bypass, tap) {
            if bp.dest == k + 1 {
                let reorders = g.fv2[bp.source - 1..bp.dest - 1].iter().filter(|&&p| p).count();
                let mut shape = t;
                for r in 0..reorders {
                    shape = pool(shape, format!("bypass {}->{} reorder {}", bp.source, bp.dest, r + 1))?;
                    // space-to-depth: half resolution, four times the channels
                    shape.c *= 4;
                }
                if (shape.h, shape.w) != (cur.h, cur.w) {
                    return Err(Error::ShapeChain {
                        position: format!("bundle {} bypass merge", k + 1),
                        reason: format!("tap {shape:?} vs main {cur:?}"),
                    });
                }
                let out = FeatureShape::new(cur.c + shape.c, cur.h, cur.w);
                layers.push(LayerSpec {
                    kind: LayerKind::BypassMerge { reorders },
                    input: cur,
                    output: out,
                    bundle: Some(k),
                });
                cur = out;
            }
        }
        for (i, op) in bundle.ops.iter().enumerate() {
            let next_is_bn = bundle.ops.get(i + 1) == Some(&LayerOp::BN);
            let (kind, out) = match op {
                LayerOp::DWConv3 => (LayerKind::DwConv3 { bias: !next_is_bn }, cur),
                LayerOp::PWConv1 => (
                    LayerKind::PwConv1 { bias: !next_is_bn },
                    FeatureShape::new(width, cur.h, cur.w),
                ),
                LayerOp::BN => (LayerKind::BatchNorm, cur),
                LayerOp::ReLU | LayerOp::ReLU6 => (act, cur),
                LayerOp::MaxPool2 => (LayerKind::MaxPool2, pool(cur, format!("bundle {} inner pool", k + 1))?),
            };
            layers.push(LayerSpec { kind, input: cur, output: out, bundle: Some(k) });
            cur = out;
        }
        if g.bypass.is_some_and(|bp| bp.source == k + 1) {
            layers.push(LayerSpec { kind: LayerKind::BypassTap, input: cur, output: cur, bundle: Some(k) });
            tap = Some(cur);
        }
        if g.fv2[k] {
            let out = pool(cur, format!("pool after bundle {}", k + 1))?;
            layers.push(LayerSpec { kind: LayerKind::MaxPool2, input: cur, output: out, bundle: Some(k) });
            cur = out;
        }
    }
    layers.push(LayerSpec {
        kind: LayerKind::Head,
        input: cur,
        output: FeatureShape::new(HEAD_CHANNELS, cur.h, cur.w),
        bundle: None,
    });
    let spec = NetworkSpec { input, layers, depth: g.depth() };
    spec.check_chain()?;
    Ok(spec)
}

/// Trainable scalars: conv weights and biases plus BN gamma/beta.
pub fn param_count(spec: &NetworkSpec) -> usize {
    spec.layers.iter().map(LayerSpec::param_count).sum()
}

pub fn macs_count(spec: &NetworkSpec) -> u64 {
    spec.layers.iter().map(LayerSpec::macs).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundle_invariants() {
        use LayerOp::*;
        assert!(Bundle::new(9, vec![]).is_err());
        assert!(Bundle::new(9, vec![BN, PWConv1]).is_err());
        assert!(Bundle::new(9, vec![PWConv1, ReLU, BN]).is_err());
        assert!(Bundle::new(9, vec![PWConv1, MaxPool2, MaxPool2]).is_err());
        for b in Bundle::library() {
            b.validate().unwrap();
        }
    }

    #[test]
    fn reference_c_concat_width() {
        let g = reference_genome(ReferenceVariant::C, Activation::Relu6);
        let spec = instantiate(&g, FeatureShape::new(3, 160, 320)).unwrap();
        let merge = spec
            .layers
            .iter()
            .find(|l| matches!(l.kind, LayerKind::BypassMerge { .. }))
            .unwrap();
        assert_eq!(merge.kind, LayerKind::BypassMerge { reorders: 1 });
        assert_eq!(merge.output, FeatureShape::new(512 + 768, 20, 40));
        assert_eq!(spec.grid(), (20, 40));
    }

    #[test]
    fn depth_one_keeps_spatial() {
        let g = NetworkGenome {
            bundle_id: 0,
            fv1: vec![24],
            fv2: vec![false],
            bypass: None,
            activation: Activation::Relu,
        };
        let spec = instantiate(&g, FeatureShape::new(3, 16, 32)).unwrap();
        assert_eq!(spec.grid(), (16, 32));
        // dw 27 + bn 6 + pw 72 + bn 48 + head 240 + 10
        assert_eq!(param_count(&spec), 27 + 6 + 72 + 48 + 24 * 10 + 10);
    }

    #[test]
    fn pool_budget_on_160x320() {
        let make = |pools: usize| NetworkGenome {
            bundle_id: 3,
            fv1: vec![24; 8],
            fv2: (0..8).map(|i| i < pools).collect(),
            bypass: None,
            activation: Activation::Relu6,
        };
        let input = FeatureShape::new(3, 160, 320);
        assert_eq!(instantiate(&make(5), input).unwrap().grid(), (5, 10));
        assert!(matches!(instantiate(&make(6), input), Err(Error::ShapeChain { .. })));
        let err = instantiate(&make(8), input).unwrap_err().to_string();
        assert!(err.contains("pool after bundle 6"), "{err}");
    }

    #[test]
    fn genome_toml_round_trip() {
        let g = reference_genome(ReferenceVariant::B, Activation::Relu);
        let text = g.to_toml().unwrap();
        assert_eq!(NetworkGenome::from_toml(&text).unwrap(), g);
        assert!(text.contains("bundle_id = 0"));
    }

    #[test]
    fn random_genome_deterministic_and_bounded() {
        let bounds = GenomeBounds::default();
        let a = random_genome(&mut ChaCha8Rng::seed_from_u64(5), &bounds, 0).unwrap();
        let b = random_genome(&mut ChaCha8Rng::seed_from_u64(5), &bounds, 0).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let g = random_genome(&mut rng, &bounds, 0).unwrap();
            assert_eq!(g.fv1.len(), 6);
            g.validate(&bounds).unwrap();
        }
    }

    #[test]
    fn unsatisfiable_bounds_error() {
        let bounds = GenomeBounds { depth_min: 2, depth_max: 2, min_pools: 3, ..Default::default() };
        assert!(random_genome(&mut ChaCha8Rng::seed_from_u64(0), &bounds, 0).is_err());
    }

    #[test]
    fn invalid_structures() {
        let mut g = reference_genome(ReferenceVariant::C, Activation::Relu6);
        g.fv2.pop();
        assert!(g.validate_structure().is_err());
        let mut g = reference_genome(ReferenceVariant::C, Activation::Relu6);
        g.bypass = Some(Bypass { source: 6, dest: 3 });
        assert!(g.validate_structure().is_err());
        let g = NetworkGenome { bundle_id: 0, fv1: vec![], fv2: vec![], bypass: None, activation: Activation::Relu };
        assert!(g.validate_structure().is_err());
    }
}
