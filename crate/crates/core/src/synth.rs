//! Seeded synthetic continuous-intraday trade generator.
//!
//! Each product has a latent mid price that performs a Gaussian random walk on
//! a one-minute grid from the session open, starting at `base_price`. Trade
//! arrivals follow an inhomogeneous Poisson process whose intensity grows as
//! `(time_to_delivery + arrival_offset)^(-arrival_ramp)`. Buy trades print above
//! the mid and sell trades below, by a uniform amount up to `half_spread`.

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SplitData;
use crate::market_data::{
    build_samples, enumerate_products, sort_trades, split_dataset, Interval, ProductSpec, Side, SplitBoundaries, Timestamp, Trade,
};
use crate::selector::{FeatureSet, SelectorConfig};
use crate::transfer::Domain;
use crate::numeric::mix_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("price-process parameters differ between the paired configs: {0}")]
    Unpaired(&'static str),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Transfer(#[from] crate::transfer::TransferError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Expected trades per product per hour of trading.
    pub liquidity: f64,
    /// Std of the latent walk per square-root hour, in price units.
    pub volatility: f64,
    pub base_price: f64,
    /// Trading opens this many minutes before delivery.
    pub session_minutes: i64,
    pub volume_log_mean: f64,
    pub volume_log_sd: f64,
    /// Probability that a trade is on the buy side.
    pub side_balance: f64,
    pub arrival_ramp: f64,
    /// Minutes added to the time to delivery inside the intensity.
    pub arrival_offset_minutes: f64,
    pub half_spread: f64,
    /// Log-sd of a per-product, mean-one volatility multiplier.
    pub volatility_dispersion: f64,
    /// Log-sd of a per-product, mean-one liquidity multiplier.
    pub liquidity_dispersion: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            liquidity: 100.0,
            volatility: 5.0,
            base_price: 80.0,
            session_minutes: 480,
            volume_log_mean: 1.0,
            volume_log_sd: 0.8,
            side_balance: 0.5,
            arrival_ramp: 0.5,
            arrival_offset_minutes: 15.0,
            half_spread: 0.5,
            volatility_dispersion: 0.0,
            liquidity_dispersion: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, spec: &ProductSpec) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if !(self.liquidity > 0.0 && self.liquidity.is_finite()) {
            return bad("liquidity must be positive");
        }
        if !(self.volatility >= 0.0 && self.volatility.is_finite()) {
            return bad("volatility must be non-negative");
        }
        if !(self.side_balance > 0.0 && self.side_balance < 1.0) {
            return bad("side_balance must lie in (0, 1)");
        }
        if !(self.arrival_ramp >= 0.0) || !(self.arrival_offset_minutes > 0.0) {
            return bad("arrival_ramp must be >= 0 and arrival_offset_minutes > 0");
        }
        if !(self.half_spread >= 0.0) || !(self.volume_log_sd >= 0.0) {
            return bad("half_spread and volume_log_sd must be non-negative");
        }
        if !(self.volatility_dispersion >= 0.0) || !(self.liquidity_dispersion >= 0.0) {
            return bad("dispersions must be non-negative");
        }
        if !self.base_price.is_finite() || !self.volume_log_mean.is_finite() {
            return bad("base_price and volume_log_mean must be finite");
        }
        if Duration::minutes(self.session_minutes) <= spec.delta_m {
            return bad("session must open before the gate closes");
        }
        Ok(())
    }

    /// Hours between session open and gate closure.
    pub fn session_hours(&self, spec: &ProductSpec) -> f64 {
        (self.session_minutes - spec.delta_m.num_minutes()) as f64 / 60.0
    }
}

/// Latent mid price on a one-minute grid starting at the session open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPath {
    pub start: Timestamp,
    pub values: Vec<f64>,
}

impl LatentPath {
    /// Linear interpolation between grid minutes; clamps outside the grid.
    pub fn at(&self, t: Timestamp) -> f64 {
        let minutes = (t - self.start).num_milliseconds() as f64 / 60_000.0;
        if minutes <= 0.0 {
            return self.values[0];
        }
        let i = minutes.floor() as usize;
        if i + 1 >= self.values.len() {
            return *self.values.last().expect("nonempty path");
        }
        let f = minutes - i as f64;
        self.values[i] + f * (self.values[i + 1] - self.values[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProduct {
    pub delivery: Timestamp,
    pub trades: Vec<Trade>,
    pub path: LatentPath,
    pub liquidity_multiplier: f64,
    pub volatility_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub spec: ProductSpec,
    pub products: Vec<SynthProduct>,
}

impl SynthDataset {
    /// All trades by execution time (ties keep product order), renumbered in that order.
    pub fn trades(&self) -> Vec<Trade> {
        let mut all: Vec<Trade> = self.products.iter().flat_map(|p| p.trades.iter().cloned()).collect();
        sort_trades(&mut all);
        for (i, t) in all.iter_mut().enumerate() {
            t.seq = i as u64;
        }
        all
    }
}

fn mean_one_lognormal(sd: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sd == 0.0 {
        return 1.0;
    }
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    (sd * z - 0.5 * sd * sd).exp()
}

/// Minutes before delivery for one arrival, by inverse CDF of the ramp density on `[lo, hi]`.
fn sample_time_to_delivery(lo: f64, hi: f64, ramp: f64, offset: f64, rng: &mut ChaCha8Rng) -> f64 {
    let (a, b) = (lo + offset, hi + offset);
    let u: f64 = rng.gen();
    let x = if ramp == 0.0 {
        a + u * (b - a)
    } else if (ramp - 1.0).abs() < 1e-12 {
        (a.ln() + u * (b.ln() - a.ln())).exp()
    } else {
        let e = 1.0 - ramp;
        (a.powf(e) + u * (b.powf(e) - a.powf(e))).powf(1.0 / e)
    };
    (x - offset).clamp(lo, hi)
}

fn round_to(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

fn product_stream(seed: u64, delivery: Timestamp) -> u64 {
    mix_seed(seed, delivery.timestamp() as u64)
}

/// Latent walk for one product, from its own stream so it does not depend on liquidity.
fn latent_path(cfg: &SynthConfig, open: Timestamp, minutes: usize, sigma: f64, rng: &mut ChaCha8Rng) -> LatentPath {
    let step_sd = sigma / 60f64.sqrt();
    let mut values = Vec::with_capacity(minutes + 1);
    let mut p = cfg.base_price;
    values.push(p);
    for _ in 0..minutes {
        if step_sd > 0.0 {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            p += step_sd * z;
        }
        values.push(p);
    }
    LatentPath { start: open, values }
}

fn generate_product(cfg: &SynthConfig, spec: &ProductSpec, delivery: Timestamp) -> SynthProduct {
    let base = product_stream(cfg.seed, delivery);
    let mut mult_rng = ChaCha8Rng::seed_from_u64(mix_seed(base, 0));
    let mut path_rng = ChaCha8Rng::seed_from_u64(mix_seed(base, 1));
    let mut trade_rng = ChaCha8Rng::seed_from_u64(mix_seed(base, 2));

    let volatility_multiplier = mean_one_lognormal(cfg.volatility_dispersion, &mut mult_rng);
    let liquidity_multiplier = mean_one_lognormal(cfg.liquidity_dispersion, &mut mult_rng);

    let open = delivery - Duration::minutes(cfg.session_minutes);
    let close = delivery - spec.delta_m;
    let grid_minutes = (close - open).num_minutes().max(0) as usize;
    let path = latent_path(cfg, open, grid_minutes, cfg.volatility * volatility_multiplier, &mut path_rng);

    let mean_count = cfg.liquidity * liquidity_multiplier * cfg.session_hours(spec);
    let count = Poisson::new(mean_count).map(|d| d.sample(&mut trade_rng) as usize).unwrap_or(0);
    let volume = LogNormal::new(cfg.volume_log_mean, cfg.volume_log_sd).expect("validated volume law");
    let lo = spec.delta_m.num_milliseconds() as f64 / 60_000.0;
    let hi = cfg.session_minutes as f64;
    let mut trades = Vec::with_capacity(count);
    for _ in 0..count {
        let ttd = sample_time_to_delivery(lo, hi, cfg.arrival_ramp, cfg.arrival_offset_minutes, &mut trade_rng);
        let mut exec = delivery - Duration::milliseconds((ttd * 60_000.0).round() as i64);
        if exec >= close {
            exec = close - Duration::milliseconds(1);
        }
        if exec <= open {
            exec = open + Duration::milliseconds(1);
        }
        let side = if trade_rng.gen::<f64>() < cfg.side_balance { Side::Buy } else { Side::Sell };
        let noise = if cfg.half_spread > 0.0 { trade_rng.gen_range(0.0..cfg.half_spread) } else { 0.0 };
        let mid = path.at(exec);
        let price = match side {
            Side::Buy => mid + noise,
            Side::Sell => mid - noise,
        };
        let v = round_to(volume.sample(&mut trade_rng), 0.1).max(0.1);
        trades.push(Trade { product_start: delivery, side, exec_time: exec, price: round_to(price, 0.01), volume: v, seq: 0 });
    }
    sort_trades(&mut trades);
    SynthProduct { delivery, trades, path, liquidity_multiplier, volatility_multiplier }
}

/// Generates every product delivering inside `horizon`. Products are independent, so
/// parallel and sequential generation agree.
pub fn generate(cfg: &SynthConfig, spec: &ProductSpec, horizon: Interval) -> Result<SynthDataset, SynthError> {
    cfg.validate(spec)?;
    spec.validate().map_err(|e| SynthError::Config(e.to_string()))?;
    let deliveries = enumerate_products(spec, horizon);
    let products = deliveries.par_iter().map(|d| generate_product(cfg, spec, *d)).collect();
    Ok(SynthDataset { config: cfg.clone(), spec: *spec, products })
}

/// Generates, extracts and splits in one step.
pub fn synth_split(cfg: &SynthConfig, spec: &ProductSpec, horizon: Interval, bounds: SplitBoundaries) -> Result<SplitData, SynthError> {
    let data = generate(cfg, spec, horizon)?;
    let samples = build_samples(&data.trades(), spec, horizon);
    Ok(SplitData::from_split(&split_dataset(samples.samples, bounds))?)
}

/// Two domains with a shared price process and different liquidity, each with
/// its own selected features. The first is built from `high`.
pub fn make_domain_pair(
    high: &SynthConfig,
    low: &SynthConfig,
    spec: &ProductSpec,
    horizon: Interval,
    bounds: SplitBoundaries,
    selector: &SelectorConfig,
    set: FeatureSet,
) -> Result<(Domain, Domain), SynthError> {
    let same = |a: f64, b: f64| a == b;
    let checks = [
        ("volatility", same(high.volatility, low.volatility)),
        ("base_price", same(high.base_price, low.base_price)),
        ("half_spread", same(high.half_spread, low.half_spread)),
        ("volatility_dispersion", same(high.volatility_dispersion, low.volatility_dispersion)),
        ("session_minutes", high.session_minutes == low.session_minutes),
    ];
    if let Some((name, _)) = checks.iter().find(|c| !c.1) {
        return Err(SynthError::Unpaired(name));
    }
    let build = |name: &str, cfg: &SynthConfig| -> Result<Domain, SynthError> {
        Ok(Domain::select(name, synth_split(cfg, spec, horizon, bounds)?, selector, set)?)
    };
    let (a, b) = rayon::join(|| build("high", high), || build("low", low));
    Ok((a?, b?))
}

/// Monte Carlo draws of a product's ID3 conditional on the latent mid at the forecast time.
///
/// The walk and the arrivals after the forecast time are resimulated; history before it
/// does not affect the index window.
pub fn conditional_id3_draws(
    cfg: &SynthConfig,
    spec: &ProductSpec,
    latent_at_forecast: f64,
    volatility_multiplier: f64,
    liquidity_multiplier: f64,
    draws: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lead = spec.lead_time.num_minutes() as f64;
    let lo = spec.delta_m.num_minutes() as f64;
    let hi = cfg.session_minutes as f64;
    let sigma = cfg.volatility * volatility_multiplier / 60f64.sqrt();
    let total = cfg.liquidity * liquidity_multiplier * cfg.session_hours(spec);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let volume = LogNormal::new(cfg.volume_log_mean, cfg.volume_log_sd).expect("validated volume law");
    let mut out = Vec::with_capacity(draws);
    while out.len() < draws {
        // Minute grid from the forecast time (lead) down to the gate (lo).
        let steps = (lead - lo).round() as usize;
        let mut path = Vec::with_capacity(steps + 1);
        let mut p = latent_at_forecast;
        path.push(p);
        for _ in 0..steps {
            p += sigma * normal.sample(&mut rng);
            path.push(p);
        }
        let n = Poisson::new(total).map(|d| d.sample(&mut rng) as usize).unwrap_or(0);
        let (mut pv, mut v_sum) = (0.0, 0.0);
        for _ in 0..n {
            let ttd = sample_time_to_delivery(lo.max(0.0), hi, cfg.arrival_ramp, cfg.arrival_offset_minutes, &mut rng);
            let side_buy = rng.gen::<f64>() < cfg.side_balance;
            let noise = if cfg.half_spread > 0.0 { rng.gen_range(0.0..cfg.half_spread) } else { 0.0 };
            let v = round_to(volume.sample(&mut rng), 0.1).max(0.1);
            if ttd > lead {
                continue;
            }
            let pos = (lead - ttd).clamp(0.0, steps as f64);
            let i = (pos.floor() as usize).min(steps.saturating_sub(1));
            let f = pos - i as f64;
            let mid = if steps == 0 { path[0] } else { path[i] + f * (path[i + 1] - path[i]) };
            let price = round_to(if side_buy { mid + noise } else { mid - noise }, 0.01);
            pv += price * v;
            v_sum += v;
        }
        if v_sum > 0.0 {
            out.push(pv / v_sum);
        }
    }
    out
}
