pub mod java;
pub mod miner;
pub mod prcs;
pub mod dataset;
pub mod model;
pub mod trainer;
pub mod synth;
pub mod localizer;
pub mod agreement;
