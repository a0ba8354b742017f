pub mod annotate;
pub mod autorater;
pub mod backend;
pub mod classify;
pub mod cli;
pub mod corpus;
pub mod metrics;
pub mod pool;
pub mod prompt;
pub mod revise;
