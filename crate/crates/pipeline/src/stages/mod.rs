pub mod classify;
pub mod cluster;
pub mod explain;
pub mod preprocess;
