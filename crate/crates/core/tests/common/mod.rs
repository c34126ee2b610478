//! Reference values shared by the integration tests.

#![allow(dead_code)]

/// American put on a log-space trinomial tree with `n` steps.
pub fn trinomial_put(spot: f64, strike: f64, r: f64, vol: f64, t: f64, n: usize) -> f64 {
    let dt = t / n as f64;
    let dx = vol * (3.0 * dt).sqrt();
    let nu = r - 0.5 * vol * vol;
    let a = (vol * vol * dt + nu * nu * dt * dt) / (dx * dx);
    let b = nu * dt / dx;
    let (pu, pd) = (0.5 * (a + b), 0.5 * (a - b));
    let pm = 1.0 - a;
    let disc = (-r * dt).exp();
    let payoff = |j: i64| (strike - spot * (j as f64 * dx).exp()).max(0.0);
    let mut v: Vec<f64> = (-(n as i64)..=n as i64).map(payoff).collect();
    for step in (0..n).rev() {
        let half = step as i64;
        v = (-half..=half)
            .map(|j| {
                let k = (j + half + 1) as usize;
                let cont = disc * (pu * v[k + 1] + pm * v[k] + pd * v[k - 1]);
                cont.max(payoff(j))
            })
            .collect();
    }
    v[0]
}
