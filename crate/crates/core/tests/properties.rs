use chrono::{Duration, TimeZone, Utc};
use chrono_tz::Tz;
use ndarray::{Array1, Array2};
use obq_core::features::{extract_features, Extraction, Family, FeatureKey, FeatureVector, Window};
use obq_core::market_data::{parse_trades, sort_trades, write_trades, Interval, Market, ProductSpec, ProductType, Side, Timestamp, Trade};
use obq_core::metrics::{aqcr, aql, mae, r2, rmse};
use obq_core::search::{ParamRange, ParamValue, SearchSpace};
use obq_core::models::ModelFamily;
use obq_core::selector::{fit_l1_lqr, l1_quantile_objective, SolverConfig};
use obq_core::synth::{generate, SynthConfig};
use obq_core::target::compute_id3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t_f() -> Timestamp {
    Utc.with_ymd_and_hms(2024, 5, 6, 9, 0, 0).unwrap()
}

/// (seconds relative to t_f, buy?, cents, tenths)
fn raw_trades() -> impl Strategy<Value = Vec<(i64, bool, i64, i64)>> {
    prop::collection::vec((-20_000i64..=10_800, any::<bool>(), -20_000i64..=20_000, 1i64..=300), 2..60)
}

fn build(raw: &[(i64, bool, i64, i64)], price: impl Fn(f64) -> f64, volume: impl Fn(f64) -> f64) -> Vec<Trade> {
    let t_d = t_f() + Duration::minutes(180);
    let mut v: Vec<Trade> = raw
        .iter()
        .enumerate()
        .map(|(i, &(s, buy, c, q))| Trade {
            product_start: t_d,
            side: if buy { Side::Buy } else { Side::Sell },
            exec_time: t_f() + Duration::seconds(s),
            price: price(c as f64 / 100.0),
            volume: volume(q as f64 / 10.0),
            seq: i as u64,
        })
        .collect();
    sort_trades(&mut v);
    v
}

fn features(trades: &[Trade]) -> Option<FeatureVector> {
    match extract_features(trades, t_f()) {
        Extraction::Features(v) => Some(v),
        Extraction::Discard { .. } => None,
    }
}

fn key(f: Family, s: Side, w: Window) -> FeatureKey {
    FeatureKey::new(f, s, w, None).unwrap()
}

fn near(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * scale.max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn id3_scales_with_price_and_ignores_volume_scale(raw in raw_trades(), c in 0.1f64..20.0) {
        let spec = ProductSpec::new(Market::De, ProductType::Hourly);
        let t_d = t_f() + Duration::minutes(180);
        let base = compute_id3(&build(&raw, |p| p, |v| v), t_d, spec.delta_m);
        let priced = compute_id3(&build(&raw, |p| p * c, |v| v), t_d, spec.delta_m);
        let sized = compute_id3(&build(&raw, |p| p, |v| v * c), t_d, spec.delta_m);
        prop_assert_eq!(base.trades_used, priced.trades_used);
        if let Some(b) = base.value {
            prop_assert!(near(priced.value.unwrap(), b * c, (b * c).abs()));
            prop_assert!(near(sized.value.unwrap(), b, b.abs()));
        } else {
            prop_assert!(priced.value.is_none() && sized.value.is_none());
        }
    }

    #[test]
    fn id3_lies_between_window_extremes(raw in raw_trades()) {
        let spec = ProductSpec::new(Market::At, ProductType::Hourly);
        let t_d = t_f() + Duration::minutes(180);
        let trades = build(&raw, |p| p, |v| v);
        if let Some(v) = compute_id3(&trades, t_d, spec.delta_m).value {
            let inside: Vec<f64> = trades.iter().filter(|t| t.exec_time >= t_f() && t.exec_time <= t_d - spec.delta_m).map(|t| t.price).collect();
            let lo = inside.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = inside.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn price_shift_moves_levels_and_keeps_spreads(raw in raw_trades(), cents in -5_000i64..5_000) {
        let c = cents as f64 / 100.0;
        let trades = build(&raw, |p| p, |v| v);
        let (Some(a), Some(b)) = (features(&trades), features(&build(&raw, |p| p + c, |v| v))) else {
            return Ok(());
        };
        for side in Side::BOTH {
            for w in Window::ALL {
                for f in Family::ALL {
                    if f == Family::Momentum {
                        continue;
                    }
                    let levels: Vec<Option<u8>> = if f.is_percentile() {
                        obq_core::features::PERCENTILE_LEVELS.iter().map(|p| Some(*p)).collect()
                    } else {
                        vec![None]
                    };
                    let shifts = matches!(f, Family::PricePercentile | Family::MinPrice | Family::MaxPrice | Family::FirstPrice
                        | Family::LastPrice | Family::MeanPrice | Family::Vwap);
                    for l in levels {
                        let k = FeatureKey::new(f, side, w, l).unwrap();
                        let expect = a.get(&k) + if shifts { c } else { 0.0 };
                        prop_assert!(near(b.get(&k), expect, 300.0), "{}: {} vs {}", k.name(), b.get(&k), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn nested_windows_are_monotone(raw in raw_trades()) {
        let Some(v) = features(&build(&raw, |p| p, |v| v)) else { return Ok(()) };
        for side in Side::BOTH {
            for pair in Window::ALL.windows(2) {
                let (short, long) = (pair[0], pair[1]);
                prop_assert!(v.get(&key(Family::MinPrice, side, short)) >= v.get(&key(Family::MinPrice, side, long)));
                prop_assert!(v.get(&key(Family::MaxPrice, side, short)) <= v.get(&key(Family::MaxPrice, side, long)));
                prop_assert!(v.get(&key(Family::TradeCount, side, short)) <= v.get(&key(Family::TradeCount, side, long)));
                prop_assert!(v.get(&key(Family::SumVolume, side, short)) <= v.get(&key(Family::SumVolume, side, long)) + 1e-9);
            }
            for w in Window::ALL {
                let lo = v.get(&key(Family::MinPrice, side, w));
                let hi = v.get(&key(Family::MaxPrice, side, w));
                for p in obq_core::features::PERCENTILE_LEVELS {
                    let q = v.get(&FeatureKey::new(Family::PricePercentile, side, w, Some(p)).unwrap());
                    prop_assert!(q >= lo - 1e-9 && q <= hi + 1e-9);
                }
                prop_assert!(v.get(&key(Family::TradeCount, side, w)) >= 1.0);
                prop_assert!(v.get(&key(Family::PriceVolatility, side, w)) >= 0.0);
                prop_assert!(v.get(&key(Family::SumVolume, side, w)) > 0.0);
            }
        }
    }

    #[test]
    fn metrics_respect_their_inequalities(
        rows in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0, 0.0f64..20.0, 0.0f64..20.0), 2..80),
        shift in -50.0f64..50.0,
    ) {
        let q = [0.1, 0.5, 0.9];
        let y = Array1::from_iter(rows.iter().map(|r| r.0));
        let pred = Array2::from_shape_fn((rows.len(), 3), |(i, j)| match j {
            0 => rows[i].1 - rows[i].2,
            1 => rows[i].1,
            _ => rows[i].1 + rows[i].3 - 10.0,
        });
        let med = pred.column(1).to_owned();
        let a = aql(y.view(), pred.view(), &q).unwrap();
        prop_assert!(a >= 0.0);
        let c = aqcr(pred.view(), &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!(rmse(y.view(), med.view()).unwrap() >= mae(y.view(), med.view()).unwrap() - 1e-12);
        prop_assert!(r2(y.view(), med.view()).unwrap() <= 1.0);

        // Reversing the sample order changes nothing.
        let yr = Array1::from_iter(y.iter().rev().cloned());
        let pr = Array2::from_shape_fn(pred.dim(), |(i, j)| pred[[rows.len() - 1 - i, j]]);
        prop_assert!(near(aql(yr.view(), pr.view(), &q).unwrap(), a, a));
        prop_assert_eq!(aqcr(pr.view(), &q).unwrap(), c);

        let ys = y.mapv(|v| v + shift);
        let ps = pred.mapv(|v| v + shift);
        let ms = ps.column(1).to_owned();
        prop_assert!((aql(ys.view(), ps.view(), &q).unwrap() - a).abs() <= 1e-9 * a.max(1.0));
        prop_assert!((mae(ys.view(), ms.view()).unwrap() - mae(y.view(), med.view()).unwrap()).abs() <= 1e-9 * 100.0);
        prop_assert!((rmse(ys.view(), ms.view()).unwrap() - rmse(y.view(), med.view()).unwrap()).abs() <= 1e-9 * 100.0);
    }

    #[test]
    fn solver_beats_intercept_only_and_reports_its_objective(seed in 0u64..1000, tau in 0.05f64..0.95, alpha in 1e-4f64..0.5) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (40, 4);
        let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0));
        let y = Array1::from_iter((0..n).map(|i| x[[i, 0]] - 0.5 * x[[i, 2]] + rng.gen_range(-1.0..1.0)));
        let fit = fit_l1_lqr(x.view(), y.view(), tau, alpha, &SolverConfig::default()).unwrap();
        let recomputed = l1_quantile_objective(x.view(), y.view(), &fit.beta, fit.intercept, tau, alpha);
        prop_assert!(near(fit.objective, recomputed, recomputed.abs()));
        let mut ys = y.to_vec();
        let b0 = obq_core::numeric::pinball_minimizer(&mut ys, tau);
        let zero = l1_quantile_objective(x.view(), y.view(), &vec![0.0; d], b0, tau, alpha);
        prop_assert!(fit.objective <= zero + 1e-12);
        let (ls_beta, ls_b) = least_squares(&x, &y);
        let ls = l1_quantile_objective(x.view(), y.view(), &ls_beta, ls_b, tau, alpha);
        prop_assert!(fit.objective <= ls + 1e-12, "{} vs least squares {}", fit.objective, ls);
        prop_assert_eq!(fit.beta.len(), d);
    }
}

/// Normal equations with an intercept column, by Gaussian elimination.
fn least_squares(x: &Array2<f64>, y: &Array1<f64>) -> (Vec<f64>, f64) {
    let (n, d) = x.dim();
    let col = |i: usize, j: usize| if j < d { x[[i, j]] } else { 1.0 };
    let m = d + 1;
    let mut a = vec![vec![0.0; m + 1]; m];
    for r in 0..m {
        for c in 0..m {
            a[r][c] = (0..n).map(|i| col(i, r) * col(i, c)).sum();
        }
        a[r][m] = (0..n).map(|i| col(i, r) * y[i]).sum();
    }
    for k in 0..m {
        let p = (k..m).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        for r in 0..m {
            if r != k {
                let f = a[r][k] / a[k][k];
                for c in k..=m {
                    a[r][c] -= f * a[k][c];
                }
            }
        }
    }
    let sol: Vec<f64> = (0..m).map(|k| a[k][m] / a[k][k]).collect();
    (sol[..d].to_vec(), sol[d])
}

#[test]
fn sampler_stays_inside_every_declared_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for family in ModelFamily::ALL {
        let space = SearchSpace::table(family);
        for (name, range) in &space.params {
            for _ in 0..10_000 {
                let v = range.sample(&mut rng);
                let ok = match (range, &v) {
                    (ParamRange::Int { lo, hi }, ParamValue::Int(x)) => lo <= x && x <= hi,
                    (ParamRange::Uniform { lo, hi } | ParamRange::LogUniform { lo, hi }, ParamValue::Float(x)) => lo <= x && x <= hi,
                    (ParamRange::Choice { options }, ParamValue::Choice(s)) => options.contains(s),
                    _ => false,
                };
                assert!(ok, "{name}: {v:?} outside {range:?}");
            }
        }
    }
}

#[test]
fn synthetic_trades_survive_a_csv_round_trip() {
    let spec = ProductSpec::new(Market::De, ProductType::Hourly);
    let s = Utc.with_ymd_and_hms(2024, 3, 30, 0, 0, 0).unwrap();
    let d = generate(&SynthConfig { seed: 5, liquidity: 40.0, ..SynthConfig::default() }, &spec, Interval::new(s, s + Duration::days(2)))
        .unwrap();
    let trades = d.trades();
    let mut buf = Vec::new();
    write_trades(&mut buf, &trades).unwrap();
    let parsed = parse_trades(buf.as_slice(), Tz::UTC).unwrap();
    assert!(parsed.rejected.is_empty(), "{:?}", &parsed.rejected[..parsed.rejected.len().min(3)]);
    assert_eq!(parsed.trades, trades);
}

#[test]
fn arrival_counts_match_the_poisson_mean() {
    let spec = ProductSpec::new(Market::De, ProductType::Hourly);
    let cfg = SynthConfig { seed: 8, liquidity: 12.0, ..SynthConfig::default() };
    let s = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    // 1,008 hourly products.
    let d = generate(&cfg, &spec, Interval::new(s, s + Duration::days(42))).unwrap();
    let n = d.products.len() as f64;
    assert!(n >= 1000.0);
    let mean_count = cfg.liquidity * cfg.session_hours(&spec);
    let observed = d.products.iter().map(|p| p.trades.len()).sum::<usize>() as f64 / n;
    let se = (mean_count / n).sqrt();
    assert!((observed - mean_count).abs() <= 3.0 * se, "mean {observed} vs {mean_count} (se {se})");
}

#[test]
fn flat_noiseless_market_prices_everything_at_base() {
    let spec = ProductSpec::new(Market::De, ProductType::Hourly);
    let cfg = SynthConfig { seed: 3, liquidity: 30.0, volatility: 0.0, half_spread: 0.0, base_price: 73.25, ..SynthConfig::default() };
    let s = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let d = generate(&cfg, &spec, Interval::new(s, s + Duration::days(1))).unwrap();
    let mut checked = 0;
    for p in &d.products {
        let t_f = p.delivery - Duration::minutes(180);
        if let Some(v) = compute_id3(&p.trades, p.delivery, spec.delta_m).value {
            assert_eq!(v, cfg.base_price);
        }
        if let Extraction::Features(f) = extract_features(&p.trades, t_f) {
            for side in Side::BOTH {
                for w in Window::ALL {
                    for fam in [Family::MinPrice, Family::MaxPrice, Family::FirstPrice, Family::LastPrice, Family::MeanPrice, Family::Vwap] {
                        assert_eq!(f.get(&key(fam, side, w)), cfg.base_price, "{fam:?}");
                    }
                    assert_eq!(f.get(&key(Family::PriceVolatility, side, w)), 0.0);
                    assert_eq!(f.get(&key(Family::DeltaPrice, side, w)), 0.0);
                }
            }
            checked += 1;
        }
    }
    assert!(checked > 10);
}
