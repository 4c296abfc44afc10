//! Trade ingestion, delivery products, sample assembly and chronological splits.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDateTime, SecondsFormat, TimeZone, Utc};
use chrono_tz::Tz;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{extract_features, feature_names, Extraction, FeatureVector, FEATURE_COUNT};
use crate::target::compute_id3_in_window;

pub type Timestamp = DateTime<Utc>;

/// Header of the canonical trade CSV.
pub const TRADE_CSV_HEADER: [&str; 5] = ["product_start", "side", "exec_time", "price", "volume"];

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("missing or unexpected header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("split boundaries must be strictly increasing")]
    UnorderedBoundaries,
    #[error("invalid product spec: {0}")]
    InvalidSpec(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "buy")]
    Buy,
    #[serde(rename = "sell")]
    Sell,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Buy, Side::Sell];

    pub fn label(self) -> &'static str {
        match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Side::Buy => "+",
            Side::Sell => "-",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "+" | "buy" => Ok(Side::Buy),
            "-" | "\u{2212}" | "sell" => Ok(Side::Sell),
            other => Err(format!("unknown side `{other}`")),
        }
    }
}

/// One executed transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub product_start: Timestamp,
    pub side: Side,
    pub exec_time: Timestamp,
    pub price: f64,
    pub volume: f64,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Market {
    #[serde(rename = "DE")]
    De,
    #[serde(rename = "AT")]
    At,
    #[serde(rename = "custom")]
    Custom,
}

impl FromStr for Market {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DE" => Ok(Market::De),
            "AT" => Ok(Market::At),
            "CUSTOM" => Ok(Market::Custom),
            other => Err(format!("unknown market `{other}` (expected DE, AT or custom)")),
        }
    }
}

impl fmt::Display for Market {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Market::De => "DE",
            Market::At => "AT",
            Market::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProductType {
    #[serde(rename = "60-min")]
    Hourly,
    #[serde(rename = "15-min")]
    QuarterHourly,
}

impl ProductType {
    pub fn duration(self) -> Duration {
        match self {
            ProductType::Hourly => Duration::minutes(60),
            ProductType::QuarterHourly => Duration::minutes(15),
        }
    }
}

impl FromStr for ProductType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "60-min" | "60" | "60min" | "hourly" => Ok(ProductType::Hourly),
            "15-min" | "15" | "15min" | "quarter-hourly" => Ok(ProductType::QuarterHourly),
            other => Err(format!("unknown product type `{other}` (expected 60-min or 15-min)")),
        }
    }
}

impl fmt::Display for ProductType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProductType::Hourly => "60-min",
            ProductType::QuarterHourly => "15-min",
        })
    }
}

/// Lead time between forecast and delivery for the ID3 index.
pub const ID3_LEAD_TIME_MINUTES: i64 = 180;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductSpec {
    pub market: Market,
    pub product_type: ProductType,
    /// Gate offset before delivery at which the ID3 window closes.
    #[serde(with = "duration_minutes")]
    pub delta_m: Duration,
    #[serde(with = "duration_minutes")]
    pub lead_time: Duration,
}

impl ProductSpec {
    /// Spec with the exchange's gate offset for `market` (30 min DE, 0 min AT).
    pub fn new(market: Market, product_type: ProductType) -> Self {
        let delta = match market {
            Market::De => 30,
            Market::At | Market::Custom => 0,
        };
        Self {
            market,
            product_type,
            delta_m: Duration::minutes(delta),
            lead_time: Duration::minutes(ID3_LEAD_TIME_MINUTES),
        }
    }

    pub fn custom(product_type: ProductType, delta_m: Duration) -> Result<Self, MarketDataError> {
        let spec = Self {
            market: Market::Custom,
            product_type,
            delta_m,
            lead_time: Duration::minutes(ID3_LEAD_TIME_MINUTES),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MarketDataError> {
        if self.delta_m < Duration::zero() {
            return Err(MarketDataError::InvalidSpec("delta_m must be >= 0".into()));
        }
        if self.lead_time <= self.delta_m {
            return Err(MarketDataError::InvalidSpec("lead_time must exceed delta_m".into()));
        }
        Ok(())
    }

    pub fn forecast_time(&self, delivery: Timestamp) -> Timestamp {
        delivery - self.lead_time
    }

    /// Closed ID3 trading window `[t_d - lead, t_d - delta_m]`.
    pub fn id3_window(&self, delivery: Timestamp) -> (Timestamp, Timestamp) {
        (delivery - self.lead_time, delivery - self.delta_m)
    }
}

mod duration_minutes {
    use chrono::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(d.num_minutes())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::minutes(i64::deserialize(d)?))
    }
}

/// Half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Interval {
    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.start && t < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

// ---------------------------------------------------------------------------
// Timestamps
// ---------------------------------------------------------------------------

pub fn format_timestamp(t: Timestamp) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Parses an RFC 3339 timestamp, or a naive local timestamp interpreted in `tz`.
pub fn parse_timestamp(s: &str, tz: Tz) -> Result<Timestamp, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    const NAIVE: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
    for fmt in NAIVE {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return tz
                .from_local_datetime(&naive)
                .earliest()
                .map(|t| t.with_timezone(&Utc))
                .ok_or_else(|| format!("local time `{s}` does not exist in {tz}"));
        }
    }
    if let Ok(date) = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        let naive = date.and_hms_opt(0, 0, 0).expect("midnight");
        return tz
            .from_local_datetime(&naive)
            .earliest()
            .map(|t| t.with_timezone(&Utc))
            .ok_or_else(|| format!("local time `{s}` does not exist in {tz}"));
    }
    Err(format!("unparseable timestamp `{s}`"))
}

// ---------------------------------------------------------------------------
// Trade CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedTrades {
    pub trades: Vec<Trade>,
    pub rejected: Vec<RejectedRow>,
}

/// Parses the canonical trade CSV. Lines starting with `#` are ignored.
///
/// Structurally broken rows abort with their line number; rows that parse but
/// violate a trade invariant are collected in `rejected`.
pub fn parse_trades<R: Read>(source: R, tz: Tz) -> Result<ParsedTrades, MarketDataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != TRADE_CSV_HEADER {
        return Err(MarketDataError::Header {
            expected: TRADE_CSV_HEADER.join(","),
            found: found.join(","),
        });
    }

    let mut out = ParsedTrades::default();
    let mut seq = 0u64;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |message: String| MarketDataError::Malformed { line, message };
        if record.len() != TRADE_CSV_HEADER.len() {
            return Err(malformed(format!("expected 5 fields, found {}", record.len())));
        }
        let product_start = parse_timestamp(&record[0], tz).map_err(malformed)?;
        let side: Side = record[1].parse().map_err(malformed)?;
        let exec_time = parse_timestamp(&record[2], tz).map_err(malformed)?;
        let price: f64 = record[3]
            .parse()
            .map_err(|_| malformed(format!("invalid price `{}`", &record[3])))?;
        let volume: f64 = record[4]
            .parse()
            .map_err(|_| malformed(format!("invalid volume `{}`", &record[4])))?;
        if !price.is_finite() || !volume.is_finite() {
            return Err(malformed("non-finite price or volume".into()));
        }
        if volume <= 0.0 {
            out.rejected.push(RejectedRow { line, reason: format!("volume {volume} is not positive") });
            continue;
        }
        if exec_time >= product_start {
            out.rejected.push(RejectedRow {
                line,
                reason: "exec_time is not before product_start".into(),
            });
            continue;
        }
        out.trades.push(Trade { product_start, side, exec_time, price, volume, seq });
        seq += 1;
    }
    sort_trades(&mut out.trades);
    Ok(out)
}

/// Sorts by `(exec_time, seq)`.
pub fn sort_trades(trades: &mut [Trade]) {
    trades.sort_by(|a, b| a.exec_time.cmp(&b.exec_time).then(a.seq.cmp(&b.seq)));
}

/// Writes trades in canonical CSV form (UTC, shortest round-trip decimals).
pub fn write_trades<W: Write>(sink: W, trades: &[Trade]) -> Result<(), MarketDataError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(TRADE_CSV_HEADER)?;
    for t in trades {
        writer.write_record([
            format_timestamp(t.product_start),
            t.side.symbol().to_string(),
            format_timestamp(t.exec_time),
            t.price.to_string(),
            t.volume.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Products and samples
// ---------------------------------------------------------------------------

/// Delivery start times inside `horizon`, aligned to multiples of the product duration.
pub fn enumerate_products(spec: &ProductSpec, horizon: Interval) -> Vec<Timestamp> {
    let step = spec.product_type.duration().num_seconds();
    let start = horizon.start.timestamp();
    let first = start.div_euclid(step) * step + if start.rem_euclid(step) == 0 { 0 } else { step };
    let end = horizon.end.timestamp();
    let mut out = Vec::new();
    let mut t = first;
    while t < end {
        out.push(Utc.timestamp_opt(t, 0).single().expect("valid timestamp"));
        t += step;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub delivery_time: Timestamp,
    pub forecast_time: Timestamp,
    pub features: FeatureVector,
    pub target_id3: Option<f64>,
    /// Trades on both sides inside the ID3 window.
    pub matched_trade_count: usize,
}

impl Sample {
    pub fn is_supervised(&self) -> bool {
        self.target_id3.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DroppedSample {
    pub delivery_time: Timestamp,
    /// Side whose full trading history before the forecast time is empty.
    pub empty_side: Side,
    pub has_target: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub dropped: Vec<DroppedSample>,
}

impl SampleSet {
    pub fn supervised(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.is_supervised())
    }
}

/// Groups sorted trades by delivery product, preserving order.
pub fn group_by_product(trades: &[Trade]) -> BTreeMap<Timestamp, Vec<Trade>> {
    let mut groups: BTreeMap<Timestamp, Vec<Trade>> = BTreeMap::new();
    for t in trades {
        groups.entry(t.product_start).or_default().push(t.clone());
    }
    groups
}

/// Builds one sample per delivery product in `horizon`.
pub fn build_samples(trades: &[Trade], spec: &ProductSpec, horizon: Interval) -> SampleSet {
    let groups = group_by_product(trades);
    let deliveries = enumerate_products(spec, horizon);
    let empty: Vec<Trade> = Vec::new();
    let results: Vec<Result<Sample, DroppedSample>> = deliveries
        .par_iter()
        .map(|&t_d| {
            let product_trades = groups.get(&t_d).unwrap_or(&empty);
            build_one(product_trades, spec, t_d)
        })
        .collect();

    let mut set = SampleSet::default();
    for r in results {
        match r {
            Ok(s) => set.samples.push(s),
            Err(d) => set.dropped.push(d),
        }
    }
    set
}

fn build_one(trades: &[Trade], spec: &ProductSpec, t_d: Timestamp) -> Result<Sample, DroppedSample> {
    let t_f = spec.forecast_time(t_d);
    let (lo, hi) = spec.id3_window(t_d);
    let id3 = compute_id3_in_window(trades, lo, hi);
    match extract_features(trades, t_f) {
        Extraction::Features(features) => Ok(Sample {
            delivery_time: t_d,
            forecast_time: t_f,
            features,
            target_id3: id3.value,
            matched_trade_count: id3.trades_used,
        }),
        Extraction::Discard { empty_side } => Err(DroppedSample {
            delivery_time: t_d,
            empty_side,
            has_target: id3.value.is_some(),
        }),
    }
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Right-open split ends: train `(-inf, train_end)`, validation
/// `[train_end, val_end)`, test `[val_end, test_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBoundaries {
    pub train_end: Timestamp,
    pub val_end: Timestamp,
    pub test_end: Timestamp,
}

impl SplitBoundaries {
    pub fn new(train_end: Timestamp, val_end: Timestamp, test_end: Timestamp) -> Result<Self, MarketDataError> {
        if !(train_end < val_end && val_end < test_end) {
            return Err(MarketDataError::UnorderedBoundaries);
        }
        Ok(Self { train_end, val_end, test_end })
    }

    /// 2022-01-01, 2024-01-01, 2024-07-01, 2025-01-01 calendar used for EPEX studies.
    pub fn standard() -> Self {
        let d = |y, m| Utc.with_ymd_and_hms(y, m, 1, 0, 0, 0).single().expect("valid date");
        Self { train_end: d(2024, 1), val_end: d(2024, 7), test_end: d(2025, 1) }
    }

    pub fn assign(&self, t: Timestamp) -> Option<SplitPart> {
        if t < self.train_end {
            Some(SplitPart::Train)
        } else if t < self.val_end {
            Some(SplitPart::Validation)
        } else if t < self.test_end {
            Some(SplitPart::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub boundaries: SplitBoundaries,
    /// Samples without an ID3 target.
    pub unlabeled: usize,
    /// Labelled samples at or after `test_end`.
    pub beyond_test: usize,
    pub warnings: Vec<String>,
}

impl DatasetSplit {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Assigns labelled samples to splits by delivery time.
pub fn split_dataset(samples: Vec<Sample>, boundaries: SplitBoundaries) -> DatasetSplit {
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        boundaries,
        unlabeled: 0,
        beyond_test: 0,
        warnings: Vec::new(),
    };
    for s in samples {
        if !s.is_supervised() {
            split.unlabeled += 1;
            continue;
        }
        match boundaries.assign(s.delivery_time) {
            Some(SplitPart::Train) => split.train.push(s),
            Some(SplitPart::Validation) => split.val.push(s),
            Some(SplitPart::Test) => split.test.push(s),
            None => split.beyond_test += 1,
        }
    }
    for (name, part) in [("train", &split.train), ("validation", &split.val), ("test", &split.test)] {
        if part.is_empty() {
            let msg = format!("{name} split is empty");
            log::warn!("{msg}");
            split.warnings.push(msg);
        }
    }
    split
}

// ---------------------------------------------------------------------------
// Sample CSV
// ---------------------------------------------------------------------------

pub fn write_samples<W: Write>(sink: W, samples: &[Sample]) -> Result<(), MarketDataError> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec![
        "delivery_time".to_string(),
        "forecast_time".to_string(),
        "target".to_string(),
        "matched_trade_count".to_string(),
    ];
    header.extend(feature_names().iter().cloned());
    writer.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for s in samples {
        row.clear();
        row.push(format_timestamp(s.delivery_time));
        row.push(format_timestamp(s.forecast_time));
        row.push(s.target_id3.map(|v| v.to_string()).unwrap_or_default());
        row.push(s.matched_trade_count.to_string());
        row.extend(s.features.as_slice().iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_samples<R: Read>(source: R) -> Result<Vec<Sample>, MarketDataError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(source);
    let headers = reader.headers()?.clone();
    let names = feature_names();
    let ok = headers.len() == 4 + FEATURE_COUNT
        && headers.iter().skip(4).zip(names.iter()).all(|(a, b)| a == b)
        && &headers[0] == "delivery_time";
    if !ok {
        return Err(MarketDataError::Header {
            expected: "delivery_time,forecast_time,target,matched_trade_count,<384 feature names>".into(),
            found: headers.iter().take(6).collect::<Vec<_>>().join(","),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |message: String| MarketDataError::Malformed { line, message };
        let delivery_time = parse_timestamp(&record[0], Tz::UTC).map_err(malformed)?;
        let forecast_time = parse_timestamp(&record[1], Tz::UTC).map_err(malformed)?;
        let target_id3 = if record[2].is_empty() {
            None
        } else {
            Some(record[2].parse::<f64>().map_err(|e| malformed(e.to_string()))?)
        };
        let matched_trade_count = record[3].parse::<usize>().map_err(|e| malformed(e.to_string()))?;
        let values = record
            .iter()
            .skip(4)
            .map(|v| v.parse::<f64>().map_err(|e| malformed(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(Sample {
            delivery_time,
            forecast_time,
            features: FeatureVector::from_values(values).map_err(|e| malformed(e.to_string()))?,
            target_id3,
            matched_trade_count,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> Timestamp {
        parse_timestamp(s, Tz::UTC).unwrap()
    }

    #[test]
    fn parses_single_row() {
        let csv = "product_start,side,exec_time,price,volume\n2024-01-01T12:00:00Z,+,2024-01-01T09:30:00Z,50.5,5\n";
        let parsed = parse_trades(csv.as_bytes(), Tz::UTC).unwrap();
        assert_eq!(parsed.trades.len(), 1);
        let t = &parsed.trades[0];
        assert_eq!(t.seq, 0);
        assert_eq!(t.side, Side::Buy);
        assert_eq!(t.volume, 5.0);
        assert!(parsed.rejected.is_empty());
    }

    #[test]
    fn rejects_negative_volume_with_line() {
        let csv = "product_start,side,exec_time,price,volume\n\
                   2024-01-01T12:00:00Z,+,2024-01-01T09:30:00Z,50,1\n\
                   2024-01-01T12:00:00Z,-,2024-01-01T09:31:00Z,50,-1\n";
        let parsed = parse_trades(csv.as_bytes(), Tz::UTC).unwrap();
        assert_eq!(parsed.trades.len(), 1);
        assert_eq!(parsed.rejected.len(), 1);
        assert_eq!(parsed.rejected[0].line, 3);
    }

    #[test]
    fn rejects_trade_after_delivery_start() {
        let csv = "product_start,side,exec_time,price,volume\n2024-01-01T12:00:00Z,+,2024-01-01T12:00:00Z,50,1\n";
        let parsed = parse_trades(csv.as_bytes(), Tz::UTC).unwrap();
        assert!(parsed.trades.is_empty());
        assert_eq!(parsed.rejected[0].line, 2);
    }

    #[test]
    fn malformed_row_is_fatal_with_line() {
        let csv = "product_start,side,exec_time,price,volume\n\
                   2024-01-01T12:00:00Z,+,2024-01-01T09:30:00Z,50,1\n\
                   2024-01-01T12:00:00Z,+,2024-01-01T09:30:00Z,abc,1\n";
        match parse_trades(csv.as_bytes(), Tz::UTC) {
            Err(MarketDataError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn equal_exec_times_keep_input_order() {
        let csv = "product_start,side,exec_time,price,volume\n\
                   2024-01-01T12:00:00Z,+,2024-01-01T09:30:00Z,51,1\n\
                   2024-01-01T12:00:00Z,-,2024-01-01T09:30:00Z,49,2\n";
        let parsed = parse_trades(csv.as_bytes(), Tz::UTC).unwrap();
        assert_eq!(parsed.trades[0].seq, 0);
        assert_eq!(parsed.trades[0].price, 51.0);
        assert_eq!(parsed.trades[1].seq, 1);
        assert_eq!(parsed.trades[1].price, 49.0);
    }

    #[test]
    fn local_timestamps_convert_using_tz() {
        let csv = "product_start,side,exec_time,price,volume\n2024-07-01 12:00:00,+,2024-07-01 09:00:00,50,1\n";
        let parsed = parse_trades(csv.as_bytes(), chrono_tz::Europe::Berlin).unwrap();
        assert_eq!(parsed.trades[0].product_start, ts("2024-07-01T10:00:00Z"));
    }

    #[test]
    fn products_follow_cadence() {
        let day = Interval::new(ts("2024-03-01T00:00:00Z"), ts("2024-03-02T00:00:00Z"));
        assert_eq!(enumerate_products(&ProductSpec::new(Market::De, ProductType::Hourly), day).len(), 24);
        assert_eq!(enumerate_products(&ProductSpec::new(Market::De, ProductType::QuarterHourly), day).len(), 96);
        let hour = Interval::new(ts("2024-03-01T12:00:00Z"), ts("2024-03-01T13:00:00Z"));
        let got = enumerate_products(&ProductSpec::new(Market::At, ProductType::QuarterHourly), hour);
        let want: Vec<_> = ["12:00", "12:15", "12:30", "12:45"]
            .iter()
            .map(|h| ts(&format!("2024-03-01T{h}:00Z")))
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn unaligned_horizon_starts_at_next_boundary() {
        let h = Interval::new(ts("2024-03-01T12:07:00Z"), ts("2024-03-01T13:00:00Z"));
        let got = enumerate_products(&ProductSpec::new(Market::At, ProductType::QuarterHourly), h);
        assert_eq!(got.first().copied(), Some(ts("2024-03-01T12:15:00Z")));
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn id3_windows_per_market() {
        let t_d = ts("2024-03-01T12:00:00Z");
        let de = ProductSpec::new(Market::De, ProductType::Hourly);
        assert_eq!(de.forecast_time(t_d), ts("2024-03-01T09:00:00Z"));
        assert_eq!(de.id3_window(t_d), (ts("2024-03-01T09:00:00Z"), ts("2024-03-01T11:30:00Z")));
        let at = ProductSpec::new(Market::At, ProductType::Hourly);
        assert_eq!(at.id3_window(t_d), (ts("2024-03-01T09:00:00Z"), ts("2024-03-01T12:00:00Z")));
    }

    #[test]
    fn spec_validation() {
        assert!(ProductSpec::custom(ProductType::Hourly, Duration::minutes(-1)).is_err());
        assert!(ProductSpec::custom(ProductType::Hourly, Duration::minutes(180)).is_err());
        assert!(ProductSpec::custom(ProductType::Hourly, Duration::minutes(5)).is_ok());
    }

    #[test]
    fn boundary_assignment_is_left_closed() {
        let b = SplitBoundaries::standard();
        assert_eq!(b.assign(ts("2023-06-01T00:00:00Z")), Some(SplitPart::Train));
        assert_eq!(b.assign(ts("2024-01-01T00:00:00Z")), Some(SplitPart::Validation));
        assert_eq!(b.assign(ts("2024-07-01T00:00:00Z")), Some(SplitPart::Test));
        assert_eq!(b.assign(ts("2025-01-01T00:00:00Z")), None);
        assert!(SplitBoundaries::new(b.val_end, b.train_end, b.test_end).is_err());
    }

    #[test]
    fn timestamp_format_roundtrip() {
        for s in ["2024-01-01T12:00:00Z", "2024-01-01T12:00:00.250Z"] {
            assert_eq!(format_timestamp(ts(s)), s);
        }
    }
}
