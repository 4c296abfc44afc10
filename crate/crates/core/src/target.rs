//! ID3 price index: volume-weighted average price over the final trading window.

use chrono::Duration;
use serde::Serialize;

use crate::market_data::{Timestamp, Trade, ID3_LEAD_TIME_MINUTES};
use crate::numeric::vwap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Id3Result {
    /// `None` when no trade falls inside the window.
    pub value: Option<f64>,
    pub trades_used: usize,
    pub volume_sum: f64,
}

/// ID3 for the product delivered at `t_d` with gate offset `delta_m`.
///
/// Window is the closed interval `[t_d - 180 min, t_d - delta_m]`, both sides pooled.
pub fn compute_id3(trades: &[Trade], t_d: Timestamp, delta_m: Duration) -> Id3Result {
    compute_id3_in_window(trades, t_d - Duration::minutes(ID3_LEAD_TIME_MINUTES), t_d - delta_m)
}

/// VWAP over trades with `start <= exec_time <= end`.
pub fn compute_id3_in_window(trades: &[Trade], start: Timestamp, end: Timestamp) -> Id3Result {
    let inside = trades.iter().filter(|t| t.exec_time >= start && t.exec_time <= end);
    let used = inside.clone().count();
    match vwap(inside.map(|t| (t.price, t.volume))) {
        Some((value, volume_sum)) => Id3Result { value: Some(value), trades_used: used, volume_sum },
        None => Id3Result { value: None, trades_used: 0, volume_sum: 0.0 },
    }
}
