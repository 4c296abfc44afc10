//! Trade-based orderbook features.
//!
//! Twenty statistic families are computed per market side over six look-back
//! windows ending at the forecast time. The two percentile families expand to
//! seven levels each, giving 32 values per (side, window) and 384 in total.
//!
//! Windows are left-open and right-closed, `(t_f - w, t_f]`; the unbounded
//! window is `(-inf, t_f]`. An empty window takes the statistics of the next
//! longer non-empty window. A sample whose unbounded window is empty on either
//! side is discarded.
//!
//! Canonical names are `family|side|window` or `family|side|window|level`,
//! e.g. `max_price|sell|60` and `price_pctl|buy|inf|10`. The enumeration
//! order is family, then side (buy first), then window ascending, then
//! percentile level ascending.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{Side, Timestamp, Trade};
use crate::numeric::{self, percentile_sorted, CompensatedSum};

pub const PERCENTILE_LEVELS: [u8; 7] = [10, 25, 45, 50, 55, 75, 90];
pub const FEATURES_PER_SIDE_WINDOW: usize = 32;
pub const FEATURE_COUNT: usize = FEATURES_PER_SIDE_WINDOW * 2 * 6;

/// Below this absolute VWAP the momentum ratio is reported as zero.
pub const MOMENTUM_VWAP_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("family `{0}` takes no percentile level")]
    UnexpectedPercentile(&'static str),
    #[error("family `{0}` requires a percentile level")]
    MissingPercentile(&'static str),
    #[error("percentile level {0} is not one of 10, 25, 45, 50, 55, 75, 90")]
    UnknownPercentile(u8),
    #[error("unrecognised feature name `{0}`")]
    UnknownName(String),
    #[error("feature vector must have {FEATURE_COUNT} values, got {0}")]
    WrongLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    PricePercentile,
    MinPrice,
    MaxPrice,
    FirstPrice,
    LastPrice,
    MeanPrice,
    PriceVolatility,
    DeltaPrice,
    VolumePercentile,
    MinVolume,
    MaxVolume,
    FirstVolume,
    LastVolume,
    MeanVolume,
    VolumeVolatility,
    DeltaVolume,
    SumVolume,
    TradeCount,
    Vwap,
    Momentum,
}

impl Family {
    pub const ALL: [Family; 20] = [
        Family::PricePercentile,
        Family::MinPrice,
        Family::MaxPrice,
        Family::FirstPrice,
        Family::LastPrice,
        Family::MeanPrice,
        Family::PriceVolatility,
        Family::DeltaPrice,
        Family::VolumePercentile,
        Family::MinVolume,
        Family::MaxVolume,
        Family::FirstVolume,
        Family::LastVolume,
        Family::MeanVolume,
        Family::VolumeVolatility,
        Family::DeltaVolume,
        Family::SumVolume,
        Family::TradeCount,
        Family::Vwap,
        Family::Momentum,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Family::PricePercentile => "price_pctl",
            Family::MinPrice => "min_price",
            Family::MaxPrice => "max_price",
            Family::FirstPrice => "first_price",
            Family::LastPrice => "last_price",
            Family::MeanPrice => "mean_price",
            Family::PriceVolatility => "price_volatility",
            Family::DeltaPrice => "delta_price",
            Family::VolumePercentile => "volume_pctl",
            Family::MinVolume => "min_volume",
            Family::MaxVolume => "max_volume",
            Family::FirstVolume => "first_volume",
            Family::LastVolume => "last_volume",
            Family::MeanVolume => "mean_volume",
            Family::VolumeVolatility => "volume_volatility",
            Family::DeltaVolume => "delta_volume",
            Family::SumVolume => "sum_volume",
            Family::TradeCount => "trade_count",
            Family::Vwap => "vwap",
            Family::Momentum => "momentum",
        }
    }

    pub fn is_percentile(self) -> bool {
        matches!(self, Family::PricePercentile | Family::VolumePercentile)
    }

    /// Number of values this family contributes per (side, window).
    pub fn width(self) -> usize {
        if self.is_percentile() {
            PERCENTILE_LEVELS.len()
        } else {
            1
        }
    }

    fn position(self) -> usize {
        Family::ALL.iter().position(|f| *f == self).expect("family in ALL")
    }

    fn from_label(label: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.label() == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Window {
    Min1,
    Min5,
    Min15,
    Min60,
    Min180,
    Full,
}

impl Window {
    /// Ascending.
    pub const ALL: [Window; 6] = [Window::Min1, Window::Min5, Window::Min15, Window::Min60, Window::Min180, Window::Full];

    pub fn minutes(self) -> Option<i64> {
        match self {
            Window::Min1 => Some(1),
            Window::Min5 => Some(5),
            Window::Min15 => Some(15),
            Window::Min60 => Some(60),
            Window::Min180 => Some(180),
            Window::Full => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Window::Min1 => "1",
            Window::Min5 => "5",
            Window::Min15 => "15",
            Window::Min60 => "60",
            Window::Min180 => "180",
            Window::Full => "inf",
        }
    }

    fn position(self) -> usize {
        Window::ALL.iter().position(|w| *w == self).expect("window in ALL")
    }

    fn from_label(label: &str) -> Option<Window> {
        Window::ALL.into_iter().find(|w| w.label() == label)
    }
}

fn side_position(side: Side) -> usize {
    match side {
        Side::Buy => 0,
        Side::Sell => 1,
    }
}

fn side_from_label(label: &str) -> Option<Side> {
    match label {
        "buy" => Some(Side::Buy),
        "sell" => Some(Side::Sell),
        _ => None,
    }
}

/// Identifies one of the 384 features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureKey {
    pub family: Family,
    pub side: Side,
    pub window: Window,
    pub percentile: Option<u8>,
}

impl FeatureKey {
    pub fn new(family: Family, side: Side, window: Window, percentile: Option<u8>) -> Result<Self, FeatureError> {
        match (family.is_percentile(), percentile) {
            (false, Some(_)) => Err(FeatureError::UnexpectedPercentile(family.label())),
            (true, None) => Err(FeatureError::MissingPercentile(family.label())),
            (true, Some(p)) if !PERCENTILE_LEVELS.contains(&p) => Err(FeatureError::UnknownPercentile(p)),
            _ => Ok(Self { family, side, window, percentile }),
        }
    }

    pub fn name(&self) -> String {
        match self.percentile {
            Some(p) => format!("{}|{}|{}|{}", self.family.label(), self.side.label(), self.window.label(), p),
            None => format!("{}|{}|{}", self.family.label(), self.side.label(), self.window.label()),
        }
    }

    /// Position in the canonical enumeration.
    pub fn index(&self) -> usize {
        let offset: usize = Family::ALL[..self.family.position()].iter().map(|f| f.width() * 12).sum();
        let cell = side_position(self.side) * Window::ALL.len() + self.window.position();
        let level = self
            .percentile
            .map(|p| PERCENTILE_LEVELS.iter().position(|l| *l == p).expect("validated level"))
            .unwrap_or(0);
        offset + cell * self.family.width() + level
    }

    /// All keys in canonical order.
    pub fn all() -> impl Iterator<Item = FeatureKey> {
        Family::ALL.into_iter().flat_map(|family| {
            Side::BOTH.into_iter().flat_map(move |side| {
                Window::ALL.into_iter().flat_map(move |window| {
                    let levels: Vec<Option<u8>> = if family.is_percentile() {
                        PERCENTILE_LEVELS.iter().map(|p| Some(*p)).collect()
                    } else {
                        vec![None]
                    };
                    levels.into_iter().map(move |percentile| FeatureKey { family, side, window, percentile })
                })
            })
        })
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for FeatureKey {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || FeatureError::UnknownName(s.to_string());
        let parts: Vec<&str> = s.split('|').collect();
        if parts.len() < 3 || parts.len() > 4 {
            return Err(unknown());
        }
        let family = Family::from_label(parts[0]).ok_or_else(unknown)?;
        let side = side_from_label(parts[1]).ok_or_else(unknown)?;
        let window = Window::from_label(parts[2]).ok_or_else(unknown)?;
        let percentile = match parts.get(3) {
            Some(p) => Some(p.parse::<u8>().map_err(|_| unknown())?),
            None => None,
        };
        FeatureKey::new(family, side, window, percentile)
    }
}

/// Canonical name for one feature; rejects invalid family/percentile combinations.
pub fn feature_name(family: Family, side: Side, window: Window, percentile: Option<u8>) -> Result<String, FeatureError> {
    FeatureKey::new(family, side, window, percentile).map(|k| k.name())
}

/// The 384 canonical names in enumeration order.
pub fn feature_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| FeatureKey::all().map(|k| k.name()).collect())
}

/// Statistics for one (side, window).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideWindowStats {
    pub price_percentiles: [f64; 7],
    pub min_price: f64,
    pub max_price: f64,
    pub first_price: f64,
    pub last_price: f64,
    pub mean_price: f64,
    pub price_volatility: f64,
    pub delta_price: f64,
    pub volume_percentiles: [f64; 7],
    pub min_volume: f64,
    pub max_volume: f64,
    pub first_volume: f64,
    pub last_volume: f64,
    pub mean_volume: f64,
    pub volume_volatility: f64,
    pub delta_volume: f64,
    pub sum_volume: f64,
    pub trade_count: usize,
    pub vwap: f64,
    pub momentum: f64,
}

impl SideWindowStats {
    /// Value for `family`; `level` indexes `PERCENTILE_LEVELS` for percentile families.
    pub fn value(&self, family: Family, level: usize) -> f64 {
        match family {
            Family::PricePercentile => self.price_percentiles[level],
            Family::MinPrice => self.min_price,
            Family::MaxPrice => self.max_price,
            Family::FirstPrice => self.first_price,
            Family::LastPrice => self.last_price,
            Family::MeanPrice => self.mean_price,
            Family::PriceVolatility => self.price_volatility,
            Family::DeltaPrice => self.delta_price,
            Family::VolumePercentile => self.volume_percentiles[level],
            Family::MinVolume => self.min_volume,
            Family::MaxVolume => self.max_volume,
            Family::FirstVolume => self.first_volume,
            Family::LastVolume => self.last_volume,
            Family::MeanVolume => self.mean_volume,
            Family::VolumeVolatility => self.volume_volatility,
            Family::DeltaVolume => self.delta_volume,
            Family::SumVolume => self.sum_volume,
            Family::TradeCount => self.trade_count as f64,
            Family::Vwap => self.vwap,
            Family::Momentum => self.momentum,
        }
    }
}

/// Trades of one side inside the window ending at `t_f`.
///
/// `trades_side` must be sorted by `(exec_time, seq)`.
pub fn window_trades(trades_side: &[Trade], t_f: Timestamp, window: Window) -> &[Trade] {
    let end = trades_side.partition_point(|t| t.exec_time <= t_f);
    let start = match window.minutes() {
        Some(m) => {
            let lo = t_f - Duration::minutes(m);
            trades_side[..end].partition_point(|t| t.exec_time <= lo)
        }
        None => 0,
    };
    &trades_side[start..end]
}

fn sorted_copy(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v
}

fn percentiles(sorted: &[f64]) -> [f64; 7] {
    let mut out = [0.0; 7];
    for (o, p) in out.iter_mut().zip(PERCENTILE_LEVELS) {
        *o = percentile_sorted(sorted, f64::from(p) / 100.0);
    }
    out
}

fn volatility(values: impl Iterator<Item = f64> + Clone, mean: f64, n: usize) -> f64 {
    let ss: CompensatedSum = values.map(|v| (v - mean) * (v - mean)).collect();
    (ss.value() / n as f64).max(0.0).sqrt()
}

/// Statistics over a non-empty window in `(exec_time, seq)` order.
pub fn compute_stats(window: &[Trade]) -> SideWindowStats {
    assert!(!window.is_empty(), "compute_stats requires a non-empty window");
    let n = window.len();
    let prices = sorted_copy(window.iter().map(|t| t.price));
    let volumes = sorted_copy(window.iter().map(|t| t.volume));
    let first = &window[0];
    let last = &window[n - 1];

    let price_sum: CompensatedSum = window.iter().map(|t| t.price).collect();
    let volume_sum: CompensatedSum = window.iter().map(|t| t.volume).collect();
    let mean_price = price_sum.value() / n as f64;
    let sum_volume = volume_sum.value();
    let mean_volume = sum_volume / n as f64;
    let (vwap, _) = numeric::vwap(window.iter().map(|t| (t.price, t.volume))).expect("window is nonempty");
    let momentum = if vwap.abs() < MOMENTUM_VWAP_EPSILON { 0.0 } else { (last.price - vwap) / vwap };

    SideWindowStats {
        price_percentiles: percentiles(&prices),
        min_price: prices[0],
        max_price: prices[n - 1],
        first_price: first.price,
        last_price: last.price,
        mean_price,
        price_volatility: volatility(window.iter().map(|t| t.price), mean_price, n),
        delta_price: last.price - first.price,
        volume_percentiles: percentiles(&volumes),
        min_volume: volumes[0],
        max_volume: volumes[n - 1],
        first_volume: first.volume,
        last_volume: last.volume,
        mean_volume,
        volume_volatility: volatility(window.iter().map(|t| t.volume), mean_volume, n),
        delta_volume: last.volume - first.volume,
        sum_volume,
        trade_count: n,
        vwap,
        momentum,
    }
}

/// The 384 values of one sample in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn from_values(values: Vec<f64>) -> Result<Self, FeatureError> {
        if values.len() != FEATURE_COUNT {
            return Err(FeatureError::WrongLength(values.len()));
        }
        Ok(Self { values })
    }

    /// Assembles the vector from resolved statistics indexed `[side][window]`.
    pub fn from_stats(stats: &[[SideWindowStats; 6]; 2]) -> Self {
        let values = FeatureKey::all()
            .map(|k| {
                let level = k
                    .percentile
                    .map(|p| PERCENTILE_LEVELS.iter().position(|l| *l == p).expect("level"))
                    .unwrap_or(0);
                stats[side_position(k.side)][k.window.position()].value(k.family, level)
            })
            .collect();
        Self { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, key: &FeatureKey) -> f64 {
        self.values[key.index()]
    }

    pub fn get_by_name(&self, name: &str) -> Option<f64> {
        name.parse::<FeatureKey>().ok().map(|k| self.get(&k))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        feature_names().iter().map(String::as_str).zip(self.values.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Extraction {
    Features(FeatureVector),
    Discard { empty_side: Side },
}

impl Extraction {
    pub fn into_features(self) -> Option<FeatureVector> {
        match self {
            Extraction::Features(f) => Some(f),
            Extraction::Discard { .. } => None,
        }
    }
}

/// Per-window statistics for one side after fallback, `None` if the side has no history.
pub fn resolve_side(trades_side: &[Trade], t_f: Timestamp) -> Option<[SideWindowStats; 6]> {
    let full = window_trades(trades_side, t_f, Window::Full);
    if full.is_empty() {
        return None;
    }
    let mut resolved = [compute_stats(full); 6];
    for w in Window::ALL.iter().rev().skip(1) {
        let i = w.position();
        let slice = window_trades(trades_side, t_f, *w);
        resolved[i] = if slice.is_empty() { resolved[i + 1] } else { compute_stats(slice) };
    }
    Some(resolved)
}

/// Extracts the feature vector at forecast time `t_f` from one product's sorted trades.
pub fn extract_features(trades: &[Trade], t_f: Timestamp) -> Extraction {
    let mut buy = Vec::new();
    let mut sell = Vec::new();
    for t in trades.iter().filter(|t| t.exec_time <= t_f) {
        match t.side {
            Side::Buy => buy.push(t.clone()),
            Side::Sell => sell.push(t.clone()),
        }
    }
    let Some(buy_stats) = resolve_side(&buy, t_f) else {
        return Extraction::Discard { empty_side: Side::Buy };
    };
    let Some(sell_stats) = resolve_side(&sell, t_f) else {
        return Extraction::Discard { empty_side: Side::Sell };
    };
    Extraction::Features(FeatureVector::from_stats(&[buy_stats, sell_stats]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use std::collections::HashSet;

    fn t_f() -> Timestamp {
        Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap()
    }

    fn trade(side: Side, secs_before: i64, price: f64, volume: f64, seq: u64) -> Trade {
        Trade {
            product_start: t_f() + Duration::minutes(180),
            side,
            exec_time: t_f() - Duration::seconds(secs_before),
            price,
            volume,
            seq,
        }
    }

    #[test]
    fn cardinality_is_384_unique_names() {
        let names = feature_names();
        assert_eq!(names.len(), FEATURE_COUNT);
        assert_eq!(names.iter().collect::<HashSet<_>>().len(), 384);
        let per_family: usize = Family::ALL.iter().map(|f| f.width()).sum();
        assert_eq!(per_family, FEATURES_PER_SIDE_WINDOW);
        for (i, k) in FeatureKey::all().enumerate() {
            assert_eq!(k.index(), i);
            assert_eq!(k.name().parse::<FeatureKey>().unwrap(), k);
        }
    }

    #[test]
    fn naming_examples() {
        assert_eq!(feature_name(Family::MaxPrice, Side::Sell, Window::Min60, None).unwrap(), "max_price|sell|60");
        assert_eq!(
            feature_name(Family::PricePercentile, Side::Buy, Window::Full, Some(10)).unwrap(),
            "price_pctl|buy|inf|10"
        );
        assert_eq!(feature_name(Family::Vwap, Side::Buy, Window::Min1, Some(50)), Err(FeatureError::UnexpectedPercentile("vwap")));
        assert!(feature_name(Family::PricePercentile, Side::Buy, Window::Min1, None).is_err());
        assert!(feature_name(Family::PricePercentile, Side::Buy, Window::Min1, Some(33)).is_err());
        assert_eq!(feature_names()[0], "price_pctl|buy|1|10");
        assert_eq!(feature_names()[383], "momentum|sell|inf");
    }

    #[test]
    fn window_membership() {
        let trades = vec![trade(Side::Buy, 90, 1.0, 1.0, 0), trade(Side::Buy, 30, 2.0, 1.0, 1), trade(Side::Buy, 0, 3.0, 1.0, 2)];
        let w1 = window_trades(&trades, t_f(), Window::Min1);
        assert_eq!(w1.iter().map(|t| t.seq).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(window_trades(&trades, t_f(), Window::Full).len(), 3);
        // Left end is open.
        let at_edge = vec![trade(Side::Buy, 60, 1.0, 1.0, 0)];
        assert!(window_trades(&at_edge, t_f(), Window::Min1).is_empty());
    }

    #[test]
    fn stats_two_trades() {
        let s = compute_stats(&[trade(Side::Buy, 20, 10.0, 2.0, 0), trade(Side::Buy, 10, 20.0, 2.0, 1)]);
        assert_eq!(s.vwap, 15.0);
        assert!((s.momentum - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.delta_price, 10.0);
        assert_eq!(s.price_volatility, 5.0);
        assert_eq!(s.sum_volume, 4.0);
        assert_eq!(s.trade_count, 2);
        assert_eq!(s.price_percentiles[3], 15.0);
    }

    #[test]
    fn stats_single_trade() {
        let s = compute_stats(&[trade(Side::Sell, 5, 10.0, 2.0, 0)]);
        for v in s.price_percentiles {
            assert_eq!(v, 10.0);
        }
        assert_eq!((s.min_price, s.max_price, s.first_price, s.last_price, s.mean_price), (10.0, 10.0, 10.0, 10.0, 10.0));
        assert_eq!(s.price_volatility, 0.0);
        assert_eq!(s.delta_price, 0.0);
        assert_eq!(s.momentum, 0.0);
        assert_eq!(s.trade_count, 1);
    }

    #[test]
    fn zero_vwap_momentum_guard() {
        let s = compute_stats(&[trade(Side::Buy, 20, -5.0, 1.0, 0), trade(Side::Buy, 10, 5.0, 1.0, 1)]);
        assert_eq!(s.vwap, 0.0);
        assert_eq!(s.momentum, 0.0);
    }

    #[test]
    fn fallback_copies_next_longer_window() {
        let trades = vec![
            trade(Side::Buy, 200, 40.0, 1.0, 0),
            trade(Side::Buy, 120, 41.0, 2.0, 1),
            trade(Side::Sell, 30, 39.0, 1.0, 2),
            trade(Side::Sell, 20_000, 38.0, 1.0, 3),
        ];
        let mut sorted = trades.clone();
        crate::market_data::sort_trades(&mut sorted);
        let v = extract_features(&sorted, t_f()).into_features().unwrap();
        assert_eq!(v.len(), 384);
        for family in Family::ALL {
            for level in 0..family.width() {
                let p = family.is_percentile().then(|| PERCENTILE_LEVELS[level]);
                let w1 = FeatureKey::new(family, Side::Buy, Window::Min1, p).unwrap();
                let w5 = FeatureKey::new(family, Side::Buy, Window::Min5, p).unwrap();
                assert_eq!(v.get(&w1), v.get(&w5), "{}", w1);
            }
        }
        assert_eq!(v.get_by_name("trade_count|buy|1"), Some(2.0));
        assert_eq!(v.get_by_name("trade_count|sell|1"), Some(1.0));
        assert_eq!(v.get_by_name("trade_count|sell|180"), Some(1.0));
        assert_eq!(v.get_by_name("trade_count|sell|inf"), Some(2.0));
        assert!(v.as_slice().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn one_sided_history_is_discarded() {
        let trades = vec![trade(Side::Buy, 100, 40.0, 1.0, 0)];
        assert_eq!(extract_features(&trades, t_f()), Extraction::Discard { empty_side: Side::Sell });
        // Trades after t_f do not count as history.
        let trades = vec![trade(Side::Buy, 100, 40.0, 1.0, 0), trade(Side::Sell, -10, 40.0, 1.0, 1)];
        assert_eq!(extract_features(&trades, t_f()), Extraction::Discard { empty_side: Side::Sell });
    }
}
