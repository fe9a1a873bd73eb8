//! Summary statistics and the 3-standard-error pass rules.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub stderr: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let count = xs.len();
        if count == 0 {
            return Summary { count, mean: f64::NAN, variance: f64::NAN, stderr: f64::NAN, min: f64::NAN, max: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / count as f64;
        let variance = if count > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        Summary {
            count,
            mean,
            variance,
            stderr: (variance / count as f64).sqrt(),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// `mean - 3 stderr <= bound`.
    pub fn mean_within(&self, bound: f64) -> bool {
        self.mean - 3.0 * self.stderr <= bound
    }
}

/// Observed frequency of successes and its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Frequency {
    pub hits: usize,
    pub count: usize,
    pub rate: f64,
    pub stderr: f64,
}

impl Frequency {
    pub fn of(flags: impl IntoIterator<Item = bool>) -> Self {
        let (mut hits, mut count) = (0, 0);
        for f in flags {
            hits += f as usize;
            count += 1;
        }
        let rate = if count > 0 { hits as f64 / count as f64 } else { f64::NAN };
        Frequency { hits, count, rate, stderr: (rate * (1.0 - rate) / count.max(1) as f64).sqrt() }
    }

    /// `rate + 3 stderr >= target`.
    pub fn at_least(&self, target: f64) -> bool {
        self.rate + 3.0 * self.stderr >= target
    }

    /// `rate - 3 stderr <= target`.
    pub fn at_most(&self, target: f64) -> bool {
        self.rate - 3.0 * self.stderr <= target
    }
}

/// Least-squares line `y = a + b x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub residual_sd: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let dof = (xs.len() as f64 - 2.0).max(1.0);
    LinearFit { intercept, slope, residual_sd: (ss / dof).sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_by_hand() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-12);
        assert!((s.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert_eq!((s.min, s.max), (1.0, 4.0));
    }

    #[test]
    fn frequency_rules() {
        let f = Frequency::of([true, true, true, false]);
        assert_eq!(f.rate, 0.75);
        assert!(f.at_least(0.9));
        assert!(!Frequency::of(vec![false; 1000]).at_least(0.1));
    }

    #[test]
    fn exact_line() {
        let fit = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]);
        assert!((fit.slope - 2.0).abs() < 1e-12 && (fit.intercept - 1.0).abs() < 1e-12);
        assert!(fit.residual_sd < 1e-9);
    }
}
