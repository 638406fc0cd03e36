pub mod agents;
pub mod annotation;
pub mod clock;
pub mod grounding;
pub mod ids;
pub mod prompts;
pub mod provider;
pub mod store;
pub mod engine;
pub mod replay;
pub mod api;
