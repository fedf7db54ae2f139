//! Mean-field charging control for plug-in electric vehicle fleets.
//!
//! The crate discretizes the transport dynamics of a large homogeneous fleet
//! over (state of charge, charging mode), solves the resulting convex
//! optimal-control problem with a first-order primal-dual method, and deploys
//! the optimal transfer intensities onto a finite population of simulated
//! vehicles.
//!
//! Pipeline: [`scenario`] builds the problem data, [`solver`] computes the
//! optimal occupancy/flux pair and extracts the control, [`fleet`] simulates
//! a finite fleet under that control, and [`report`] turns run artifacts into
//! plot-ready CSV files.

pub mod costs;
pub mod dynamics;
pub mod fleet;
pub mod grid;
pub mod report;
pub mod scenario;
pub mod solver;

pub use grid::{build_grid, discretize_initial, total_mass, DensityField, FlowField, Grid, Mode, ModeSet};
