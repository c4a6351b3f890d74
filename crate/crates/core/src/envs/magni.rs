//! Asymmetric blood-glucose risk used as the glucose plants' reward.

pub const SAFE_LOW: f64 = 10.0;
pub const SAFE_HIGH: f64 = 1000.0;
pub const PENALTY: f64 = -1e5;

const SCALE: f64 = 3.35506;
const EXPONENT: f64 = 0.8353;
const OFFSET: f64 = 3.7932;

/// Glucose level (mg/dL) at which the risk vanishes.
pub fn risk_root() -> f64 {
    OFFSET.powf(1.0 / EXPONENT).exp()
}

/// Reward for a blood-glucose reading: negated Magni risk inside the safe
/// band, a flat penalty outside it (bounds inclusive).
pub fn magni_risk(g: f64) -> f64 {
    if (SAFE_LOW..=SAFE_HIGH).contains(&g) {
        in_band(g)
    } else {
        PENALTY
    }
}

/// The in-band expression, evaluated without the penalty branch.
pub fn in_band(g: f64) -> f64 {
    let u = SCALE * (g.ln().powf(EXPONENT) - OFFSET);
    -u * u
}

/// Smooth surrogate of `in_band` for optimization, extended below `g_floor`
/// by holding the value flat. Returns `(value, d value / d g)`.
pub fn in_band_with_slope(g: f64) -> (f64, f64) {
    let (u, du) = risk_residual(g);
    (-u * u, -2.0 * u * du)
}

/// The residual `U` with `in_band = -U^2` and its slope `dU/dg`, held flat
/// below a small floor where the logarithm degenerates.
pub fn risk_residual(g: f64) -> (f64, f64) {
    const G_FLOOR: f64 = 1.5;
    let g = g.max(G_FLOOR);
    let lg = g.ln();
    let u = SCALE * (lg.powf(EXPONENT) - OFFSET);
    if g <= G_FLOOR {
        return (u, 0.0);
    }
    (u, SCALE * EXPONENT * lg.powf(EXPONENT - 1.0) / g)
}
