//! Geometry, fields, wind generation and the analytic scenario ingredients.

mod fields;
mod grid;
mod wind;

pub use fields::{gaussian_blob, region_indicator, BlobSpec, QoiSpec, RegionRect, ScalarField};
pub use grid::{build_grid, Grid, GridSpec};
pub use wind::{potential_flow_wind, InflowSide, WindField};
