pub mod error;
pub mod iop;
pub mod linalg;
pub mod plant;
pub mod rng;
pub mod behavior;
pub mod registry;
pub mod robust;
pub mod experiment;
