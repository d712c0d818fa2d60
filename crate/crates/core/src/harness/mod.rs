//! Experiment driver: JSON configuration, Monte Carlo sweeps over paired
//! scenes, and CSV output for results, beampatterns and CRB curves.

mod config;
mod emit;
mod experiment;

pub use config::{ConfigDoc, ExperimentDoc, SweepKind};
pub use emit::{angle_grid_deg, beampattern_rows, crb_rows, emit_beampattern, emit_crb_sweep, write_angle_rows, AngleRow};
pub use experiment::{
    aggregate, run_experiment, summary_path, write_aggregates, write_results, AggregateRow, ExperimentSpec,
    ResultRow, Sweep,
};
