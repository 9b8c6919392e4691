pub mod advisor;
pub mod backend;
pub mod catalog;
pub mod error;
pub mod explorer;
pub mod irfeat;
pub mod results;
