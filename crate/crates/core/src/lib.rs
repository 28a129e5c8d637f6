pub mod attacks;
pub mod data;
pub mod defenses;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod protocol;
pub mod seed;
