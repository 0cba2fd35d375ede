//! Layout pattern clustering.
//!
//! Markers on a design layer are partitioned into as few clusters as possible
//! such that every member pattern satisfies a cosine-similarity or an
//! edge-displacement constraint against its cluster representative. Candidate
//! pairs are pre-screened by cheap signatures, clustered coarsely with a
//! surprisal-weighted lazy-greedy set cover, then refined by analytical optimal
//! alignment and strictly verified; failures are re-injected as orphans.

pub mod align;
pub mod bench;
pub mod geometry;
pub mod graph;
pub mod layout_io;
pub mod pipeline;
pub mod prescreen;
pub mod raster;
pub mod scp;

pub use geometry::{Coord, Marker, Pattern, Point, Polygon, Rect};
pub use layout_io::{ClusterReport, Constraint, ConstraintKind, LayoutDocument};
pub use pipeline::{run, PipelineConfig, RunOutcome};
