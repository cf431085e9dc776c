pub mod geometry;
pub mod skeleton;
pub mod fusion;
pub mod metrics;
pub mod quality;
pub mod lifter;
pub mod synth;
pub mod pipeline;
pub mod toy;
