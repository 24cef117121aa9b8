//! Cycle catalogs, weight laws, and sampled environments on a torus.

pub mod catalog;
pub mod environment;
pub mod law;
pub mod report;
pub mod shape;

pub use catalog::{validate_catalog, CatalogEntry, CatalogSpec, CycleCatalog, EntrySpec, Preset};
pub use environment::{check_env_invariants, local_drift, sample_environment, shift_environment, EnvSpec, EnvironmentTorus};
pub use law::WeightLaw;
pub use report::{Check, ValidationReport};
pub use shape::CycleShape;
