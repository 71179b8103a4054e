//! Globally adaptive Gauss–Kronrod (7/15) integration over a list of panels.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// Kronrod 15-point abscissae (positive half) and weights, Gauss 7-point weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            rel_tol: 1e-4,
            abs_tol: 0.0,
            max_intervals: 20_000,
        }
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(&WGK).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        // odd Kronrod nodes are the Gauss nodes
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Interval {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Interval {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Interval {}
impl PartialOrd for Interval {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Interval {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Integrates `f` over `[breaks[0], breaks[last]]`, starting from the panels
/// delimited by `breaks` and bisecting the worst panel until the summed
/// error estimate satisfies `max(abs_tol, rel_tol·|value|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, breaks: &[f64], opts: QuadOptions) -> Result<QuadResult> {
    if breaks.len() < 2 {
        return Err(Error::Numerical("need at least one integration panel".into()));
    }
    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for w in breaks.windows(2) {
        let (value, error) = gk15(&f, w[0], w[1]);
        evaluations += 15;
        heap.push(Interval {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }
    loop {
        let value: f64 = heap.iter().map(|i| i.value).sum();
        let error: f64 = heap.iter().map(|i| i.error).sum();
        if !value.is_finite() || !error.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite integrand over [{}, {}] after {evaluations} evaluations",
                breaks[0],
                breaks[breaks.len() - 1]
            )));
        }
        if error <= opts.abs_tol.max(opts.rel_tol * value.abs()) {
            return Ok(QuadResult {
                value,
                error,
                evaluations,
                intervals: heap.len(),
            });
        }
        if heap.len() >= opts.max_intervals {
            return Err(Error::Numerical(format!(
                "quadrature did not converge: value {value:e}, error estimate {error:e}, \
                 {} intervals, {evaluations} evaluations",
                heap.len()
            )));
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(Error::Numerical(format!(
                "interval [{}, {}] cannot be bisected further (error {:e})",
                worst.a, worst.b, worst.error
            )));
        }
        for (a, b) in [(worst.a, mid), (mid, worst.b)] {
            let (value, error) = gk15(&f, a, b);
            evaluations += 15;
            heap.push(Interval { a, b, value, error });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| 3.0 * x * x + 1.0, &[0.0, 2.0], QuadOptions::default()).unwrap();
        assert!((r.value - 10.0).abs() < 1e-13);
    }

    #[test]
    fn endpoint_singularity() {
        let opts = QuadOptions {
            rel_tol: 1e-8,
            ..Default::default()
        };
        let r = integrate(|x: f64| x.powf(-1.0 / 3.0), &[0.0, 1.0], opts).unwrap();
        assert!((r.value - 1.5).abs() < 1e-7);
    }

    #[test]
    fn oscillatory_panels() {
        let breaks: Vec<f64> = (0..=40).map(|k| k as f64 * PI / 2.0).collect();
        let opts = QuadOptions {
            rel_tol: 1e-10,
            ..Default::default()
        };
        let r = integrate(|x: f64| x.sin().powi(2), &breaks, opts).unwrap();
        assert!((r.value - 10.0 * PI).abs() < 1e-8);
    }

    #[test]
    fn reports_non_convergence() {
        let opts = QuadOptions {
            rel_tol: 1e-14,
            abs_tol: 0.0,
            max_intervals: 4,
        };
        let err = integrate(|x: f64| x.abs().sqrt().recip(), &[-1.0, 1.0], opts).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }
}
