//! Cox–Ross–Rubinstein binomial tree for the American put.

use crate::error::{argument, Result};

/// American put value on an `n_steps` CRR tree.
pub fn binomial_american_put(spot: f64, strike: f64, rate: f64, vol: f64, horizon: f64, n_steps: usize) -> Result<f64> {
    if !(spot > 0.0 && vol > 0.0 && horizon > 0.0 && n_steps > 0) {
        return argument("binomial tree needs positive spot, volatility, horizon and steps");
    }
    let dt = horizon / n_steps as f64;
    let up = (vol * dt.sqrt()).exp();
    let down = 1.0 / up;
    let growth = (rate * dt).exp();
    let prob = (growth - down) / (up - down);
    if !(0.0..=1.0).contains(&prob) {
        return argument(format!("binomial tree is not arbitrage-free (p = {prob})"));
    }
    let disc = 1.0 / growth;
    let payoff = |j: usize, n: usize| (strike - spot * up.powi(2 * j as i32 - n as i32)).max(0.0);
    let mut v: Vec<f64> = (0..=n_steps).map(|j| payoff(j, n_steps)).collect();
    for n in (0..n_steps).rev() {
        for j in 0..=n {
            let cont = disc * (prob * v[j + 1] + (1.0 - prob) * v[j]);
            v[j] = cont.max(payoff(j, n));
        }
    }
    Ok(v[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_value() {
        let v = binomial_american_put(1.0, 1.0, 0.05, 0.2, 1.0, 2000).unwrap();
        assert!((v - 0.0609).abs() < 1e-4, "{v}");
    }

    #[test]
    fn deep_in_the_money_is_exercised() {
        let v = binomial_american_put(0.2, 1.0, 0.05, 0.2, 1.0, 500).unwrap();
        assert!((v - 0.8).abs() < 1e-12);
    }
}
