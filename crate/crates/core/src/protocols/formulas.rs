//! Closed-form success probabilities, used as comparison values.

use super::{EntanglementParams, PolarizationParams};

/// Per-round probabilities `P_k` and their running totals.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub p: Vec<f64>,
    pub totals: Vec<f64>,
}

impl SeriesTable {
    pub fn total(&self) -> f64 {
        self.totals.last().copied().unwrap_or(0.0)
    }
}

fn log_add(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return y;
    }
    if y == f64::NEG_INFINITY {
        return x;
    }
    let (hi, lo) = if x > y { (x, y) } else { (y, x) };
    hi + (lo - hi).exp().ln_1p()
}

/// `P_k = 2|αβ|^(2^k) η / Π_{j=2..k} (|α|^(2^j) + |β|^(2^j))`, evaluated in
/// the log domain.
pub fn series(e: &EntanglementParams, eta_p: f64, max_k: usize) -> SeriesTable {
    let (la, lb) = (e.alpha_sq().ln(), e.beta_sq().ln());
    let mut p = Vec::with_capacity(max_k);
    let mut totals = Vec::with_capacity(max_k);
    let mut log_den = 0.0;
    let mut total = 0.0;
    for k in 1..=max_k {
        let half_power = 2f64.powi(k as i32 - 1);
        if k >= 2 {
            log_den += log_add(half_power * la, half_power * lb);
        }
        let value = if eta_p == 0.0 || la == f64::NEG_INFINITY || lb == f64::NEG_INFINITY {
            0.0
        } else {
            (std::f64::consts::LN_2 + half_power * (la + lb) + eta_p.ln() - log_den).exp()
        };
        total += value;
        p.push(value);
        totals.push(total);
    }
    SeriesTable { p, totals }
}

/// `|αβ|²(1 + |δ|²)`: the V-arm success probability at `t = |α|²`.
pub fn branch_plus(e: &EntanglementParams, p: &PolarizationParams) -> f64 {
    e.alpha_sq() * e.beta_sq() * (1.0 + p.delta_sq())
}

/// `|αβ|²(1 + |γ|²)`: the H-arm success probability at `t = |α|²`.
pub fn branch_minus(e: &EntanglementParams, p: &PolarizationParams) -> f64 {
    e.alpha_sq() * e.beta_sq() * (1.0 + p.gamma_sq())
}

/// The stated ECP1 total `2|αβ|²`.
pub fn claimed_total(e: &EntanglementParams) -> f64 {
    2.0 * e.alpha_sq() * e.beta_sq()
}

/// `|α|²(1 − t) + |β|²|δ|² t`: odd-class probability of the first V-arm QND.
pub fn qnd_selection(e: &EntanglementParams, p: &PolarizationParams, t: f64) -> f64 {
    e.alpha_sq() * (1.0 - t) + e.beta_sq() * p.delta_sq() * t
}

/// Success probability of one coherent run through both arms with VBS
/// transmissions `t1` (V arm) and `t2` (H arm).
pub fn joint_success(e: &EntanglementParams, p: &PolarizationParams, t1: f64, t2: f64) -> f64 {
    e.alpha_sq() * (1.0 - t1) * (1.0 - t2)
        + e.beta_sq() * p.delta_sq() * t1 * (1.0 - t2)
        + e.beta_sq() * p.gamma_sq() * (1.0 - t1) * t2
}

/// `2|α|²|β|⁴`: [`joint_success`] at `t1 = t2 = |α|²`.
pub fn joint_hand_prediction(e: &EntanglementParams) -> f64 {
    2.0 * e.alpha_sq() * e.beta_sq() * e.beta_sq()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(a2: f64) -> EntanglementParams {
        EntanglementParams::from_alpha_sq(a2).unwrap()
    }

    /// Direct product form, no logs.
    fn naive(a2: f64, eta: f64, k: usize) -> f64 {
        let b2 = 1.0 - a2;
        let num = 2.0 * (a2 * b2).powi(1 << (k - 1)) * eta;
        let den: f64 = (2..=k).map(|j| a2.powi(1 << (j - 1)) + b2.powi(1 << (j - 1))).product();
        num / den
    }

    #[test]
    fn series_examples() {
        let s = series(&e(0.5), 1.0, 2);
        assert!((s.p[0] - 0.5).abs() < 1e-15);
        assert!((s.p[1] - 0.25).abs() < 1e-15);
        assert!((series(&e(0.5), 0.8, 1).total() - 0.4).abs() < 1e-15);
        assert!(series(&e(0.3), 0.0, 5).p.iter().all(|&x| x == 0.0));

        let s = series(&e(0.6), 1.0, 3);
        assert!((s.p[0] - 0.48).abs() < 1e-12);
        assert!((s.p[1] - 0.2215385).abs() < 1e-7);
        assert!((s.p[2] - 0.0822205).abs() < 1e-7);
    }

    #[test]
    fn series_matches_product_form() {
        for i in 1..10 {
            let a2 = i as f64 / 10.0;
            let s = series(&e(a2), 0.8, 5);
            for k in 1..=5 {
                let x = naive(a2, 0.8, k);
                assert!((s.p[k - 1] - x).abs() <= 1e-13 * x.max(1e-300), "{a2} {k}");
            }
        }
    }

    #[test]
    fn series_deep_rounds_finite() {
        let s = series(&e(0.2), 1.0, 30);
        assert!(s.p.iter().all(|x| x.is_finite() && *x >= 0.0));
        assert!(s.totals.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn branch_values() {
        let p = PolarizationParams::from_gamma_sq(0.5).unwrap();
        assert!((branch_plus(&e(0.6), &p) - 0.36).abs() < 1e-15);
        assert!((branch_minus(&e(0.6), &p) - 0.36).abs() < 1e-15);
        assert!((claimed_total(&e(0.6)) - 0.48).abs() < 1e-15);
        let a = e(0.6);
        assert!((joint_success(&a, &p, 0.6, 0.6) - joint_hand_prediction(&a)).abs() < 1e-15);
        assert!((qnd_selection(&a, &p, 0.6) - 0.36).abs() < 1e-15);
    }
}
