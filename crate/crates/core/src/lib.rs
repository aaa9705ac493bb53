pub mod baselines;
pub mod error;
pub mod fedsim;
pub mod graphcraft;
pub mod gst;
pub mod harness;
pub mod manipulator;
pub mod mathcore;
pub mod sentinel;
pub mod vgae;
