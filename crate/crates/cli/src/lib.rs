pub mod config;
pub mod error;
pub mod experiment;
pub mod images;
pub mod pipeline;
pub mod table;
