pub mod cli;
pub mod corpus;
pub mod entity_codec;
pub mod inference;
pub mod intent_chain;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod tags;
pub mod target_parser;
