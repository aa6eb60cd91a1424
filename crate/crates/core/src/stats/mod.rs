//! Random streams, distributions and elementary sample statistics.

pub mod dist;
pub mod moments;
pub mod seed;

pub use dist::{DistSpec, Family, Sampler};
pub use moments::{empirical_quantile, mean, nearest_rank_index, summarize, Summary};
pub use seed::{SeedSpec, StreamRng};
