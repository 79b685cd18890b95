pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod train;
pub mod rng;
pub mod tape;
pub mod tensor;
