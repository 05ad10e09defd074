pub mod autodiff;
pub mod codec;
pub mod controllers;
pub mod dataset;
pub mod env;
pub mod skills;
pub mod agent;
pub mod harness;
