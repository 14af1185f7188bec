pub mod config;
pub mod dsp;
pub mod eval;
pub mod exper;
pub mod training;
pub mod model;
pub mod tape;
pub mod tensor;
