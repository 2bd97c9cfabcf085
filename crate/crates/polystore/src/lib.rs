pub mod bench;
pub mod cluster;
pub mod datamodels;
pub mod hashring;
pub mod replication;
pub mod storage;
pub mod versioning;
