pub mod agents;
pub mod gateway;
pub mod graph;
pub mod novelty;
pub mod path;
pub mod prompts;
pub mod proposal;
pub mod testkit;
