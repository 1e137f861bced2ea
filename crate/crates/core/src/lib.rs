//! Floodplain DEM construction toolkit: assimilate heterogeneous sparse
//! elevation sources (soundings, depth curves, time-stamped coastlines,
//! channel geometry) into a base raster, check the result with morphometric
//! analysis, and verify it with a hydrograph-driven shallow-water flood
//! simulation, iterating corrections until simulated and observed flood
//! extents agree.

pub mod assimilate;
pub mod error;
pub mod features;
pub mod grid;
pub mod hydrosim;
pub mod morpho;
pub mod pgm;
pub mod pipeline;
pub mod resample;
pub mod verify;

pub use assimilate::{
    burn_channel, check_constraint_consistency, constraints_from_depth_curve,
    constraints_from_isoline, constraints_from_points, relax, with_exterior_anchors,
    ChannelSection, Constraint, ConstraintSet, ConstraintSource, RelaxOutcome, SolverParams,
};
pub use error::{DemError, Result};
pub use features::{FeatureKind, VectorFeature, Vertex};
pub use grid::{read_grid, write_grid, BoolGrid, DerivativeField, ElevationGrid};
pub use hydrosim::{
    run as run_simulation, step as sim_step, wet_mask, Boundaries, BoundaryKind, FlowState,
    Hydrograph, SimParams, SimRun,
};
pub use morpho::{check_connectivity, detect_spikes, morpho_fields, ArtifactReport, MorphoFields};
pub use pipeline::{describe, read_config, run_pipeline, PipelineConfig, PipelineReport};
pub use resample::{refine, RefineOutcome, ResampleParams};
pub use verify::{compare_masks, coastline_spread, propose_corrections, MaskComparison, SpreadEntry};
