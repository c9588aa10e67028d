pub mod cli;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod losses;
pub mod models;
pub mod nn;
pub mod seeding;
pub mod trainer;
