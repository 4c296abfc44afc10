//! Intraday ID3 quantile forecasting from per-product orderbook trades.
//!
//! Pipeline: [`market_data`] loads trades, [`target`] computes ID3, [`features`]
//! extracts the 384 window statistics, [`selector`] ranks them with an L1 quantile
//! regression, [`models`] and [`search`] fit the four quantile families, and
//! [`transfer`] compares markets. [`synth`] generates reproducible test markets.

pub mod dataset;
pub mod features;
pub mod market_data;
pub mod metrics;
pub mod numeric;
pub mod selector;
pub mod target;
pub mod models;
pub mod search;
pub mod synth;
pub mod transfer;

pub use features::{extract_features, Extraction, FeatureKey, FEATURE_COUNT};
pub use market_data::{ProductSpec, Side, Trade};
pub use models::{ModelConfig, ModelFamily, QuantileRegressor};
pub use selector::{FeatureSet, SelectorConfig};
