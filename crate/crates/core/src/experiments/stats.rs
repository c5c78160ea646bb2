//! Mean and Student-t 95 % confidence intervals over repeated trials.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Description stored in reports next to every interval.
pub const CI_METHOD: &str = "95% two-sided Student-t interval, R-1 degrees of freedom, half-width t*s/sqrt(R)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; `None` for fewer than two values.
    pub std_dev: Option<f64>,
    /// Half-width of the 95 % interval; `None` for fewer than two values.
    pub ci95: Option<f64>,
}

impl Summary {
    pub fn interval(&self) -> Option<(f64, f64)> {
        self.ci95.map(|h| (self.mean - h, self.mean + h))
    }
}

/// 0.975 quantile of Student's t with `dof` degrees of freedom.
pub fn t_critical_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// Summary of `values`; the mean is the plain left-to-right sum divided by the count.
pub fn summarize(values: &[f64]) -> Summary {
    let r = values.len();
    let mean = if r == 0 {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / r as f64
    };
    if r < 2 {
        return Summary {
            count: r,
            mean,
            std_dev: None,
            ci95: None,
        };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1) as f64;
    let sd = var.sqrt();
    Summary {
        count: r,
        mean,
        std_dev: Some(sd),
        ci95: Some(t_critical_975(r - 1) * sd / (r as f64).sqrt()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    /// Intervals intersect: no significant difference at this level.
    Overlapping,
    /// Intervals are disjoint.
    Disjoint,
    /// At least one interval is undefined.
    Undefined,
}

impl Overlap {
    pub fn verdict(self) -> &'static str {
        match self {
            Overlap::Overlapping => "CIs overlap: no statistically significant difference",
            Overlap::Disjoint => "CIs are disjoint: statistically significant difference",
            Overlap::Undefined => "CI undefined (fewer than 2 repetitions): no verdict",
        }
    }
}

pub fn ci_overlap(a: &Summary, b: &Summary) -> Overlap {
    match (a.interval(), b.interval()) {
        (Some((alo, ahi)), Some((blo, bhi))) => {
            if alo <= bhi && blo <= ahi {
                Overlap::Overlapping
            } else {
                Overlap::Disjoint
            }
        }
        _ => Overlap::Undefined,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn known_t_quantiles() {
        assert!((t_critical_975(9) - 2.262157162740992).abs() < 1e-9);
        assert!((t_critical_975(1) - 12.706204736174705).abs() < 1e-8);
        assert!((t_critical_975(4) - 2.7764451051977934).abs() < 1e-9);
    }

    #[test]
    fn hand_computed_interval() {
        let s = summarize(&[0.9, 0.92, 0.94]);
        assert!((s.mean - 0.92).abs() < 1e-15);
        let sd = 0.02_f64;
        assert!((s.std_dev.unwrap() - sd).abs() < 1e-12);
        let expect = 4.302652729749464 * sd / 3f64.sqrt();
        assert!((s.ci95.unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn single_value_has_no_interval() {
        let s = summarize(&[0.5]);
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.ci95, None);
        assert_eq!(ci_overlap(&s, &summarize(&[0.4, 0.6])), Overlap::Undefined);
    }

    #[test]
    fn constant_values_have_zero_width() {
        let s = summarize(&[0.8125; 10]);
        assert_eq!(s.mean, 0.8125);
        assert_eq!(s.ci95, Some(0.0));
    }

    #[test]
    fn overlap_verdicts() {
        let a = summarize(&[0.90, 0.91, 0.92]);
        let b = summarize(&[0.915, 0.925, 0.935]);
        let c = summarize(&[0.50, 0.51, 0.52]);
        assert_eq!(ci_overlap(&a, &b), Overlap::Overlapping);
        assert_eq!(ci_overlap(&a, &c), Overlap::Disjoint);
        assert_eq!(ci_overlap(&c, &a), Overlap::Disjoint);
    }

    #[test]
    fn width_shrinks_with_repetitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let dist = Normal::new(0.9, 0.01).unwrap();
        let mean_width = |r: usize, rng: &mut ChaCha8Rng| {
            (0..200)
                .map(|_| {
                    let xs: Vec<f64> = (0..r).map(|_| dist.sample(rng)).collect();
                    summarize(&xs).ci95.unwrap()
                })
                .sum::<f64>()
                / 200.0
        };
        let widths: Vec<f64> = [3, 5, 10, 20, 40].iter().map(|&r| mean_width(r, &mut rng)).collect();
        assert!(widths.windows(2).all(|w| w[1] < w[0]), "{widths:?}");
    }

    proptest! {
        #[test]
        fn mean_is_arithmetic_mean(xs in prop::collection::vec(0.0f64..1.0, 1..20)) {
            let s = summarize(&xs);
            let mut acc = 0.0;
            for x in &xs {
                acc += x;
            }
            prop_assert_eq!(s.mean.to_bits(), (acc / xs.len() as f64).to_bits());
            prop_assert_eq!(s.count, xs.len());
        }
    }
}
