//! Shared fixtures for the criterion benchmarks.

use osrcal_core::synth::{synth_generate, SynthConfig, SynthData};

/// Default synthetic configuration at the given class size.
pub fn fixture(per_class: usize) -> SynthData {
    synth_generate(&SynthConfig {
        per_class,
        seed: 17,
        ..Default::default()
    })
    .expect("default synthetic config is valid")
}
