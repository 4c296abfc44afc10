//! Shared fixtures for the benchmarks.

use chrono::{Duration, TimeZone, Utc};
use obq_core::dataset::SplitData;
use obq_core::market_data::{Interval, Market, ProductSpec, ProductType, SplitBoundaries};
use obq_core::synth::{generate, synth_split, SynthConfig, SynthDataset};

pub fn spec() -> ProductSpec {
    ProductSpec::new(Market::De, ProductType::Hourly)
}

/// `days` of hourly products starting 2024-01-01, split 1/2, 1/4, 1/4.
pub fn horizon(days: i64) -> (Interval, SplitBoundaries) {
    let s = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let b = SplitBoundaries::new(s + Duration::days(days / 2), s + Duration::days(days * 3 / 4), s + Duration::days(days))
        .expect("ordered boundaries");
    (Interval::new(s, s + Duration::days(days)), b)
}

pub fn market(liquidity: f64, days: i64) -> SynthDataset {
    let cfg = SynthConfig { liquidity, ..SynthConfig::default() };
    generate(&cfg, &spec(), horizon(days).0).expect("valid synth config")
}

pub fn split(liquidity: f64, days: i64) -> SplitData {
    let cfg = SynthConfig { liquidity, ..SynthConfig::default() };
    let (h, b) = horizon(days);
    synth_split(&cfg, &spec(), h, b).expect("valid synth config")
}
