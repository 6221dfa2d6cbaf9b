//! Experiment orchestration for the `latepoints` binary: configuration digests,
//! typed experiments, artifact writers and the figure emitter.

pub mod artifacts;
pub mod commands;
pub mod experiments;
pub mod svg;
