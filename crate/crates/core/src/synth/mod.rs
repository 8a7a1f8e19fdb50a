//! Random SCMs and datasets with full ground truth.

mod generate;
mod graphs;
mod mechanisms;
mod spec;

pub use generate::{
    generate_dataset, heteroscedasticity, make_metadataset, max_abs_correlation, sample_scm,
    standard_scm_of, SampledScm, ScmDescription,
};
pub use graphs::{ErDensity, GraphFamily};
pub use mechanisms::{MechanismFamily, MechanismFn, NoiseFamily, NoiseScale, SynthMechanism};
pub use spec::{Preset, ScmDistributionSpec, PRESET_NAMES};
