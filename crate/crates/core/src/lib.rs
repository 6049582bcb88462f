pub mod cli;
pub mod dataset;
pub mod graph;
pub mod mesh;
pub mod nn;
pub mod tensor;
pub mod train;
