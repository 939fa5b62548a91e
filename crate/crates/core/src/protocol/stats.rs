//! Small statistics helpers for multi-seed comparisons.

/// One-sided sign test: `P(X ≥ wins)` for `X ~ Binomial(trials, 1/2)`.
pub fn sign_test(wins: usize, trials: usize) -> f64 {
    if wins > trials {
        return 0.0;
    }
    // exact sum of binomial coefficients in f64; trials stay small
    let mut coeff = 1.0f64;
    let mut tail = 0.0;
    for k in 0..=trials {
        if k >= wins {
            tail += coeff;
        }
        coeff = coeff * (trials - k) as f64 / (k + 1) as f64;
    }
    tail / 2f64.powi(trials as i32)
}

/// Sign test over paired values: wins where `a[i] < b[i]`, ties dropped.
pub fn paired_sign_test(a: &[f64], b: &[f64]) -> (usize, usize, f64) {
    let (mut wins, mut trials) = (0, 0);
    for (x, y) in a.iter().zip(b) {
        if x != y {
            trials += 1;
            if x < y {
                wins += 1;
            }
        }
    }
    (wins, trials, sign_test(wins, trials))
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
