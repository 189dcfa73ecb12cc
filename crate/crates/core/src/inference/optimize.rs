//! Derivative-free simplex minimization.

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder-Mead with the standard coefficients (reflect 1, expand 2, contract 1/2, shrink 1/2).
///
/// Stops when the spread of function values across the simplex drops to
/// `tolerance` (absolute) or after `max_evaluations`. Non-finite values are
/// treated as +inf, so infeasible points are simply never accepted.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: &[f64], tolerance: f64, max_evaluations: usize) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64], count: &mut usize| {
        *count += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let value = eval(x0, &mut evaluations);
        return Minimum {
            x: vec![],
            value,
            evaluations,
            converged: value.is_finite(),
        };
    }

    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evaluations)).collect();
    let mut converged = false;

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let (best, worst) = (values[0], values[n]);
        if best.is_finite() && worst - best <= tolerance {
            converged = true;
            break;
        }
        if evaluations >= max_evaluations {
            break;
        }

        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let toward = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect()
        };

        let xr = toward(-1.0);
        let fr = eval(&xr, &mut evaluations);
        if fr < values[0] {
            let xe = toward(-2.0);
            let fe = eval(&xe, &mut evaluations);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = toward(-0.5);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        } else {
            let xc = toward(0.5);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let shrunk: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, v)| b + 0.5 * (v - b)).collect();
            values[i] = eval(&shrunk, &mut evaluations);
            simplex[i] = shrunk;
        }
    }

    Minimum {
        x: simplex.swap_remove(0),
        value: values[0],
        evaluations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let m = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 0.5 * x[0] * x[1],
            &[0.0, 0.0],
            &[1.0, 1.0],
            1e-12,
            2000,
        );
        assert!(m.converged);
        // Stationary point of the quadratic.
        let det = 2.0 * 6.0 - 0.25;
        let want = [(6.0 * 2.0 - 0.5 * -12.0) / det, (2.0 * -12.0 - 0.5 * 2.0) / det];
        assert!((m.x[0] - want[0]).abs() < 1e-4 && (m.x[1] - want[1]).abs() < 1e-4);
    }

    #[test]
    fn rosenbrock() {
        let m = nelder_mead(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            1e-14,
            5000,
        );
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let m = nelder_mead(
            |x| if x[0] < 0.5 { f64::INFINITY } else { (x[0] - 0.2).powi(2) },
            &[2.0],
            &[1.0],
            1e-10,
            500,
        );
        assert!(m.x[0] >= 0.5 && m.x[0] < 0.51);
    }

    #[test]
    fn budget_is_respected() {
        let m = nelder_mead(|x| x.iter().map(|v| v.abs().sqrt()).sum(), &[3.0; 4], &[1.0; 4], 0.0, 50);
        assert!(!m.converged);
        assert!(m.evaluations <= 50 + 5);
    }
}
