pub mod consensus;
pub mod crypto;
pub mod feeds;
pub mod ledger;
pub mod lifecycle;
pub mod lmsr;
pub mod script;
pub mod sim;
pub mod tx;
pub mod units;
