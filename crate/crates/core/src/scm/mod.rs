//! DAGs, orderings, standard and fixed-point SCMs, interventions and
//! counterfactuals.

mod dag;
mod fixed_point;
mod intervention;
mod noise;
pub mod oracle;
mod perm;
mod standard;
mod structured;

pub use dag::Dag;
pub use fixed_point::{
    causal_graph_of, default_probes, sample_observational, solve_fixed_point, FixedPointScm,
};
pub use intervention::{counterfactual, intervene, FnTriangular, InterventionMap, TriangularMap};
pub use noise::{EmpiricalQuantile, NoiseDist, NoiseModel};
pub use perm::{all_permutations, Permutation};
pub use standard::{reparameterize_standard, LinearMechanism, Mechanism, StandardScm};
pub use structured::{
    check_mask, finite_difference_jacobians, gaussian_probes, jacobians, worst_forbidden_entry,
    FnStructured, Jacobians, LinearAnm, MaskLevel, MaskTolerance, StructuredFn,
};
