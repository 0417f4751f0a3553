mod support;

use bundlenas_core::genome::reference_genome;
use bundlenas_core::{instantiate, param_count, Activation, FeatureShape, ReferenceVariant};

#[test]
fn reference_parameter_counts_match_hand_walk() {
    let input = FeatureShape::new(3, 160, 320);
    for v in [ReferenceVariant::A, ReferenceVariant::B, ReferenceVariant::C] {
        let g = reference_genome(v, Activation::Relu6);
        let walked = support::walk_bundle0_params(&g.fv1, &g.fv2, g.bypass.map(|b| (b.source, b.dest)));
        assert_eq!(param_count(&instantiate(&g, input).unwrap()), walked, "{v:?}");
    }
}

#[test]
fn reference_c_is_about_0_44_million_parameters() {
    let g = reference_genome(ReferenceVariant::C, Activation::Relu6);
    let n = param_count(&instantiate(&g, FeatureShape::new(3, 160, 320)).unwrap());
    assert_eq!(n, 273 + 5328 + 19872 + 76608 + 201856 + 137152 + 970);
    assert!((n as f64 - 440_000.0).abs() / 440_000.0 < 0.02);
}

#[test]
fn parameter_count_is_independent_of_input_size() {
    let g = reference_genome(ReferenceVariant::B, Activation::Relu);
    let a = param_count(&instantiate(&g, FeatureShape::new(3, 160, 320)).unwrap());
    let b = param_count(&instantiate(&g, FeatureShape::new(3, 32, 64)).unwrap());
    assert_eq!(a, b);
}
