pub mod autodiff;
pub mod cluster;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod meta_model;
pub mod noise;
pub mod similarity;
pub mod trainer;
pub mod verify;
