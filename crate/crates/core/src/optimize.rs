//! Box-constrained Nelder–Mead with adaptive coefficients.
//!
//! Trial points are projected onto the box. Coefficients follow the
//! dimension-adaptive choice of Gao and Han, which keeps the simplex from
//! collapsing in 5+ dimensions.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// ... and every vertex is within this of the best one (per coordinate).
    pub x_tol: f64,
    /// Initial simplex edge as a fraction of each coordinate's box width.
    pub initial_step: f64,
    /// Give up after this many iterations without a relative improvement of
    /// the best value above 1e-12. Flat directions otherwise never satisfy
    /// `x_tol`. The run counts as converged if the simplex values have
    /// collapsed to within `f_tol` (relative to the best value) by then.
    pub stall_iter: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iter: 20_000,
            f_tol: 1e-14,
            x_tol: 1e-10,
            initial_step: 0.05,
            stall_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn eval<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> f64 {
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum {
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n, "bounds dimension mismatch");
    let mut start = x0.to_vec();
    project(&mut start, lower, upper);
    if n == 0 {
        let f0 = eval(&f, &start);
        return Minimum {
            x: start,
            f: f0,
            iterations: 0,
            converged: true,
        };
    }

    let dim = n as f64;
    let (alpha, beta, gamma, delta) = if n >= 2 {
        (1.0, 1.0 + 2.0 / dim, 0.75 - 1.0 / (2.0 * dim), 1.0 - 1.0 / dim)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };

    let mut simplex: Vec<Vec<f64>> = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        let width = upper[i] - lower[i];
        let step = if width.is_finite() && width > 0.0 {
            opts.initial_step * width
        } else {
            opts.initial_step * start[i].abs().max(1.0)
        };
        // step away from whichever bound is closer
        v[i] = if v[i] + step <= upper[i] { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(&f, x)).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut record = f64::INFINITY;
    let mut last_gain = 0;
    while iterations < opts.max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let f_spread = values[n] - values[0];
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_spread.abs() <= opts.f_tol && x_spread <= opts.x_tol {
            converged = true;
            break;
        }
        if values[0] < record - 1e-12 * record.abs() {
            record = values[0];
            last_gain = iterations;
        } else if opts.stall_iter > 0 && iterations - last_gain >= opts.stall_iter {
            converged = f_spread.abs() <= opts.f_tol.max(1e-10 * values[0].abs());
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / dim;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut p, lower, upper);
            p
        };

        let reflected = along(alpha);
        let f_r = eval(&f, &reflected);
        if f_r < values[0] {
            let expanded = along(alpha * beta);
            let f_e = eval(&f, &expanded);
            if f_e < f_r {
                simplex[n] = expanded;
                values[n] = f_e;
            } else {
                simplex[n] = reflected;
                values[n] = f_r;
            }
            continue;
        }
        if f_r < values[n - 1] {
            simplex[n] = reflected;
            values[n] = f_r;
            continue;
        }
        let (contracted, f_c) = if f_r < values[n] {
            let p = along(alpha * gamma);
            let fp = eval(&f, &p);
            (p, fp)
        } else {
            let p = along(-gamma);
            let fp = eval(&f, &p);
            (p, fp)
        };
        if f_c < values[n].min(f_r) {
            simplex[n] = contracted;
            values[n] = f_c;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            let mut p: Vec<f64> = best
                .iter()
                .zip(&simplex[i])
                .map(|(b, x)| b + delta * (x - b))
                .collect();
            project(&mut p, lower, upper);
            values[i] = eval(&f, &p);
            simplex[i] = p;
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("non-empty simplex");
    Minimum {
        x: simplex[best].clone(),
        f: values[best],
        iterations,
        converged,
    }
}

/// Repeats Nelder–Mead from its own optimum until the value stops improving,
/// which recovers from premature simplex collapse.
pub fn nelder_mead_restarted<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
    max_restarts: usize,
) -> Minimum {
    let mut best = nelder_mead(&f, x0, lower, upper, opts);
    let mut total = best.iterations;
    for _ in 0..max_restarts {
        let next = nelder_mead(&f, &best.x, lower, upper, opts);
        total += next.iterations;
        let improved = next.f < best.f - opts.f_tol.max(1e-12 * best.f.abs());
        if next.f <= best.f {
            best = Minimum {
                iterations: total,
                ..next
            };
        }
        if !improved {
            break;
        }
    }
    best.iterations = total;
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let m = nelder_mead_restarted(
            rosenbrock,
            &[-1.2, 1.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            &NelderMeadOptions::default(),
            5,
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn respects_bounds() {
        let m = nelder_mead(
            |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 2.0).powi(2),
            &[0.0, 0.0],
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &NelderMeadOptions::default(),
        );
        assert!((m.x[0] - 1.0).abs() < 1e-8 && (m.x[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn quadratic_in_six_dimensions() {
        let target = [0.5, -1.0, 2.0, 0.0, 1.5, -0.25];
        let f = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .enumerate()
                .map(|(i, (a, b))| (i + 1) as f64 * (a - b).powi(2))
                .sum::<f64>()
        };
        let m = nelder_mead_restarted(
            f,
            &[0.0; 6],
            &[-3.0; 6],
            &[3.0; 6],
            &NelderMeadOptions::default(),
            5,
        );
        for (a, b) in m.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let m = nelder_mead(
            rosenbrock,
            &[-1.2, 1.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            &NelderMeadOptions {
                max_iter: 3,
                ..Default::default()
            },
        );
        assert!(!m.converged);
        assert_eq!(m.iterations, 3);
    }

    #[test]
    fn flat_direction_stops_early() {
        // second coordinate does not affect the value
        let m = nelder_mead(
            |x: &[f64]| (x[0] - 0.5).powi(2) + 1.0,
            &[0.0, 0.0],
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &NelderMeadOptions::default(),
        );
        assert!(m.iterations < 2000, "{}", m.iterations);
        assert!(m.converged);
        assert!((m.x[0] - 0.5).abs() < 1e-5);
    }
}
