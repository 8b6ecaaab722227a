pub mod elementwise;
pub mod nn;
pub mod shape;
