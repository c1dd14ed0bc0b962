//! Derivative-free Nelder-Mead simplex minimization.

/// Settings for [`nelder_mead`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_iter: usize,
    /// Converged once every vertex lies within this sup-norm distance of the best vertex.
    pub size_tol: f64,
    /// Also converged once the objective spread across vertices falls below
    /// this. Stops drift on flat plateaus where size never shrinks.
    pub f_tol: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            size_tol: 1e-8,
            f_tol: 1e-10,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn nan_to_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn simplex_size(points: &[Vec<f64>]) -> f64 {
    let best = &points[0];
    points[1..]
        .iter()
        .flat_map(|p| p.iter().zip(best).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

fn converged(points: &[Vec<f64>], values: &[f64], opts: &SimplexOptions) -> bool {
    if simplex_size(points) < opts.size_tol {
        return true;
    }
    let spread = values[values.len() - 1] - values[0];
    values[0].is_finite() && spread.is_finite() && spread <= opts.f_tol
}

fn sort_simplex(points: &mut Vec<Vec<f64>>, values: &mut Vec<f64>) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    // stable sort keeps ties in insertion order, so runs are deterministic
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    *points = order.iter().map(|&i| points[i].clone()).collect();
    *values = order.iter().map(|&i| values[i]).collect();
}

/// Minimize `f` starting from `x0`. NaN objective values are treated as +inf.
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &SimplexOptions) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let eval = |x: &[f64]| nan_to_inf(f(x));
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    points.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += opts.initial_step;
        points.push(p);
    }
    let mut values: Vec<f64> = points.iter().map(|p| eval(p)).collect();
    sort_simplex(&mut points, &mut values);

    let mut iterations = 0;
    while iterations < opts.max_iter {
        if converged(&points, &values, opts) {
            return SimplexResult {
                x: points[0].clone(),
                fx: values[0],
                iterations,
                converged: true,
            };
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for p in &points[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let worst = points[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(REFLECT);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(EXPAND);
            let fe = eval(&xe);
            if fe < fr {
                points[n] = xe;
                values[n] = fe;
            } else {
                points[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            points[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(CONTRACT);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-CONTRACT);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc <= values[n].min(fr) {
                points[n] = xc;
                values[n] = fc;
            } else {
                let best = points[0].clone();
                for i in 1..=n {
                    for (p, b) in points[i].iter_mut().zip(&best) {
                        *p = b + SHRINK * (*p - b);
                    }
                    values[i] = eval(&points[i]);
                }
            }
        }
        sort_simplex(&mut points, &mut values);
    }
    let converged = converged(&points, &values, opts);
    SimplexResult {
        x: points[0].clone(),
        fx: values[0],
        iterations,
        converged,
    }
}
