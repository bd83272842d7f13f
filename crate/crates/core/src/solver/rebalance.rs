//! Bandwidth split that minimises the summed completion time for fixed
//! offload decisions.
//!
//! Each user's completion time `g_k(y)` is convex and non-increasing in its
//! share, so the optimum equalises marginal gains: for a price `λ` every user
//! takes the share where its right-derivative first reaches `-λ`, and `λ` is
//! bisected until the shares fill the band.

use crate::latency::UserLoad;
use crate::workload::{ChannelSpec, UserSpec, MIN_BANDWIDTH_FRACTION};

use super::rate_at;

/// Absolute tolerance on each user's share.
const SHARE_TOL: f64 = 1e-10;
/// Relative tolerance on the price.
const PRICE_TOL: f64 = 1e-10;

/// Optimal shares for the given per-user loads. Shares lie in
/// `[ε, 1-ε]` and sum to one (up to rounding).
pub(crate) fn rebalance_shares(users: &[UserSpec], loads: &[UserLoad], ch: &ChannelSpec) -> Vec<f64> {
    let k = users.len();
    let lo_share = MIN_BANDWIDTH_FRACTION;
    let hi_share = 1.0 - MIN_BANDWIDTH_FRACTION;
    if k == 1 {
        return vec![hi_share];
    }
    let share_at_price = |price: f64| -> Vec<f64> {
        users
            .iter()
            .zip(loads)
            .map(|(u, load)| {
                let slope = |y: f64| right_slope(load, y, ch, u);
                if slope(lo_share) >= -price {
                    return lo_share;
                }
                if slope(hi_share) < -price {
                    return hi_share;
                }
                let (mut a, mut b) = (lo_share, hi_share);
                while b - a > SHARE_TOL {
                    let mid = 0.5 * (a + b);
                    if slope(mid) >= -price {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                b
            })
            .collect()
    };
    let total = |y: &[f64]| y.iter().sum::<f64>();

    // Bracket the price: at a high price everyone wants little bandwidth.
    let mut price_hi = 1.0;
    while total(&share_at_price(price_hi)) > 1.0 && price_hi < 1e300 {
        price_hi *= 1e3;
    }
    let mut price_lo = price_hi * 1e-3;
    while total(&share_at_price(price_lo)) <= 1.0 && price_lo > 1e-300 {
        price_hi = price_lo;
        price_lo *= 1e-3;
    }
    // Geometric bisection: prices span many decades.
    while price_hi - price_lo > PRICE_TOL * price_hi {
        let mid = (price_lo * price_hi).sqrt();
        if total(&share_at_price(mid)) > 1.0 {
            price_lo = mid;
        } else {
            price_hi = mid;
        }
    }
    let mut y = share_at_price(price_hi);
    // Hand leftover band to whoever has the steepest marginal gain.
    let slack = 1.0 - total(&y);
    if slack > 0.0 {
        let steepest = (0..k)
            .min_by(|&a, &b| {
                right_slope(&loads[a], y[a], ch, &users[a]).total_cmp(&right_slope(&loads[b], y[b], ch, &users[b]))
            })
            .expect("k >= 2");
        y[steepest] = (y[steepest] + slack).min(hi_share);
    }
    y
}

/// Right-derivative of the completion time with respect to the share.
fn right_slope(load: &UserLoad, y: f64, ch: &ChannelSpec, u: &UserSpec) -> f64 {
    let rate = rate_at(y, ch, u);
    let drate = rate_slope(y, ch, u);
    let local = load.local_completion(rate);
    let edge = load.edge_completion(rate);
    let d_local = -load.result_bits * drate / (rate * rate);
    let d_edge = -load.upload_bits * drate / (rate * rate);
    // At a tie the larger one-sided slope wins going right.
    if local > edge {
        d_local
    } else if edge > local {
        d_edge
    } else {
        d_local.max(d_edge)
    }
}

/// `d r / d y` for `r(y) = yB log2(1 + S / (yB N0))`.
fn rate_slope(y: f64, ch: &ChannelSpec, u: &UserSpec) -> f64 {
    let b = ch.uplink_bandwidth_hz;
    let s = u.tx_power_w * u.channel_gain / (y * b * ch.noise_psd_w_per_hz);
    b * (s.ln_1p() - s / (1.0 + s)) / std::f64::consts::LN_2
}
