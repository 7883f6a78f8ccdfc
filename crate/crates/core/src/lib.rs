pub mod identity;
pub mod metrics;
pub mod routing;
pub mod scenario;
pub mod underlay;
