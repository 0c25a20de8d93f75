pub mod diffusion;
pub mod error;
pub mod harness;
pub mod nn;
pub mod pgpe;
pub mod tasks;
pub mod tdca;
