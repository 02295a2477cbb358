use serde::{Deserialize, Serialize};

/// One-sided sign test of "a beats b" over matched pairs; ties are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
}

impl SignTest {
    pub fn from_outcomes(wins: usize, losses: usize, ties: usize) -> Self {
        SignTest { wins, losses, ties, p_value: upper_tail(wins, wins + losses) }
    }

    /// Compares matched pairs `(a, b)`, counting `a > b` as a win.
    pub fn greater<I: IntoIterator<Item = (f64, f64)>>(pairs: I) -> Self {
        let (mut w, mut l, mut t) = (0, 0, 0);
        for (a, b) in pairs {
            match a.partial_cmp(&b) {
                Some(std::cmp::Ordering::Greater) => w += 1,
                Some(std::cmp::Ordering::Less) => l += 1,
                _ => t += 1,
            }
        }
        Self::from_outcomes(w, l, t)
    }

    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
pub fn upper_tail(k: usize, n: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let ln2 = std::f64::consts::LN_2;
    // ln C(n, j), built up from j = 0.
    let mut ln_c = 0.0;
    let mut total = 0.0;
    for j in 0..=n {
        if j > 0 {
            ln_c += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        if j >= k {
            total += (ln_c - n as f64 * ln2).exp();
        }
    }
    total.min(1.0)
}
