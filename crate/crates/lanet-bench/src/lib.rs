//! Benchmark-only crate; shared fixtures for the criterion benches.

use lanet_core::model::{LaNetModel, ModelConfig};
use lanet_core::scene::{synthesize_scene, Scene, SynthSpec};

/// A default-config scene/model pair at the standard desk scale.
pub fn default_fixture() -> (LaNetModel, Scene) {
    let spec = SynthSpec::default();
    let scene = synthesize_scene(17, &spec).expect("fixture scene");
    let model = LaNetModel::new(ModelConfig::default(), spec.problem, 17).expect("fixture model");
    (model, scene)
}
