pub mod dataset;
pub mod features;
pub mod img;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod store;
pub mod study;
pub mod synth;
pub mod train;
pub mod types;
