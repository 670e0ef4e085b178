//! Reference implementations that check gridspin from the outside: an
//! exhaustive search for compute placement, a fine price grid for the
//! market, and paired-sample statistics for comparing ensembles that share
//! traces.

pub mod placement;
pub mod pricing;
pub mod stats;
