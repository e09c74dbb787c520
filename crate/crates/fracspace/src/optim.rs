//! Derivative-free and quasi-Newton minimizers.
//!
//! Two in-house workhorses shared by the ARMA approximation fits and the
//! likelihood gradient stage. Both operate on unconstrained coordinates;
//! callers handle constraints through smooth reparametrizations and may
//! return `f64::INFINITY` to reject a point outright.

use nalgebra::{DMatrix, DVector};

/// Outcome of a minimization run.
#[derive(Debug, Clone)]
pub struct OptimResult {
    /// Best point found.
    pub x: Vec<f64>,
    /// Objective at `x`.
    pub f: f64,
    /// Iterations consumed.
    pub iterations: usize,
    /// Whether the convergence test was met before the iteration cap.
    pub converged: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Nelder–Mead simplex search with standard reflection/expansion/contraction
/// coefficients and shrink fallback.
#[derive(Debug, Clone)]
pub struct NelderMead {
    /// Iteration cap (one reflection cycle per iteration).
    pub max_iter: usize,
    /// Convergence threshold on the absolute spread of simplex values.
    pub f_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            max_iter: 2000,
            f_tol: 1e-12,
        }
    }
}

impl NelderMead {
    /// Minimizes `f` from `x0`; the initial simplex offsets vertex `i+1` by
    /// `steps[i]` along coordinate `i`.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(
        &self,
        mut f: F,
        x0: &[f64],
        steps: &[f64],
    ) -> OptimResult {
        let dim = x0.len();
        assert_eq!(steps.len(), dim, "one simplex step per coordinate");
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
        simplex.push(x0.to_vec());
        for i in 0..dim {
            let mut v = x0.to_vec();
            v[i] += steps[i];
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| sanitize(f(v))).collect();

        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.max_iter {
            iterations += 1;
            // Order the simplex by objective value.
            let mut order: Vec<usize> = (0..=dim).collect();
            order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
            let best = order[0];
            let worst = order[dim];
            let second_worst = order[dim.saturating_sub(1)];

            if values[worst].is_finite() && values[worst] - values[best] < self.f_tol {
                converged = true;
                break;
            }

            // Centroid of all vertices except the worst.
            let mut centroid = vec![0.0; dim];
            for (idx, v) in simplex.iter().enumerate() {
                if idx != worst {
                    for (c, vi) in centroid.iter_mut().zip(v) {
                        *c += vi / dim as f64;
                    }
                }
            }

            let blend = |a: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[worst])
                    .map(|(c, w)| c + a * (c - w))
                    .collect()
            };

            let reflected = blend(1.0);
            let f_r = sanitize(f(&reflected));
            if f_r < values[best] {
                let expanded = blend(2.0);
                let f_e = sanitize(f(&expanded));
                if f_e < f_r {
                    simplex[worst] = expanded;
                    values[worst] = f_e;
                } else {
                    simplex[worst] = reflected;
                    values[worst] = f_r;
                }
            } else if f_r < values[second_worst] {
                simplex[worst] = reflected;
                values[worst] = f_r;
            } else {
                let contracted = if f_r < values[worst] {
                    blend(0.5)
                } else {
                    blend(-0.5)
                };
                let f_c = sanitize(f(&contracted));
                if f_c < values[worst].min(f_r) {
                    simplex[worst] = contracted;
                    values[worst] = f_c;
                } else {
                    // Shrink toward the best vertex.
                    let anchor = simplex[best].clone();
                    for (idx, v) in simplex.iter_mut().enumerate() {
                        if idx != best {
                            for (vi, ai) in v.iter_mut().zip(&anchor) {
                                *vi = ai + 0.5 * (*vi - ai);
                            }
                            values[idx] = sanitize(f(v));
                        }
                    }
                }
            }
        }

        let (mut bi, mut bf) = (0, values[0]);
        for (i, &v) in values.iter().enumerate() {
            if v < bf {
                bi = i;
                bf = v;
            }
        }
        OptimResult {
            x: simplex.swap_remove(bi),
            f: bf,
            iterations,
            converged,
        }
    }
}

/// BFGS with backtracking Armijo line search.
///
/// The gradient is supplied separately from the objective because in the
/// likelihood setting a gradient costs an extra smoothing pass while the
/// line search needs only filter evaluations.
#[derive(Debug, Clone)]
pub struct Bfgs {
    /// Iteration cap.
    pub max_iter: usize,
    /// Convergence threshold on the gradient infinity norm.
    pub g_tol: f64,
    /// Secondary stop: absolute objective improvement below this twice in a
    /// row ends the run (flat valley).
    pub f_tol: f64,
}

impl Default for Bfgs {
    fn default() -> Self {
        Bfgs {
            max_iter: 200,
            g_tol: 1e-5,
            f_tol: 1e-12,
        }
    }
}

impl Bfgs {
    /// Minimizes `f` from `x0` using gradients from `grad`.
    pub fn minimize<F, G>(&self, mut f: F, mut grad: G, x0: &[f64]) -> OptimResult
    where
        F: FnMut(&[f64]) -> f64,
        G: FnMut(&[f64]) -> Vec<f64>,
    {
        let dim = x0.len();
        let mut x = DVector::from_column_slice(x0);
        let mut fx = sanitize(f(x.as_slice()));
        let mut g = DVector::from_vec(grad(x.as_slice()));
        let mut h_inv = DMatrix::<f64>::identity(dim, dim);

        let mut iterations = 0;
        let mut converged = false;
        let mut flat_count = 0;
        while iterations < self.max_iter {
            iterations += 1;
            if g.amax() < self.g_tol {
                converged = true;
                break;
            }

            let mut dir = -(&h_inv * &g);
            if dir.dot(&g) >= 0.0 {
                // Stale curvature turned the step uphill; restart from steepest descent.
                h_inv = DMatrix::identity(dim, dim);
                dir = -g.clone();
            }

            // Backtracking Armijo search.
            let g_dot_d = g.dot(&dir);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..50 {
                let cand = &x + step * &dir;
                let fc = sanitize(f(cand.as_slice()));
                if fc <= fx + 1e-4 * step * g_dot_d {
                    accepted = Some((cand, fc));
                    break;
                }
                step *= 0.5;
            }
            let Some((x_new, f_new)) = accepted else {
                // No descent along this direction at any tried step.
                break;
            };

            let g_new = DVector::from_vec(grad(x_new.as_slice()));
            let s = &x_new - &x;
            let y = &g_new - &g;
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() {
                // Sherman–Morrison BFGS update of the inverse Hessian.
                let rho = 1.0 / sy;
                let hy = &h_inv * &y;
                let yhy = y.dot(&hy);
                let s_hy = &s * hy.transpose();
                h_inv = &h_inv - (&s_hy + s_hy.transpose()) * rho
                    + (&s * s.transpose()) * (rho * rho * yhy + rho);
            }

            let improvement = fx - f_new;
            x = x_new;
            fx = f_new;
            g = g_new;
            if improvement.abs() < self.f_tol {
                flat_count += 1;
                if flat_count >= 2 {
                    converged = g.amax() < self.g_tol * 100.0;
                    break;
                }
            } else {
                flat_count = 0;
            }
        }
        if !converged && g.amax() < self.g_tol {
            converged = true;
        }

        OptimResult {
            x: x.as_slice().to_vec(),
            f: fx,
            iterations,
            converged,
        }
    }
}

/// Central finite-difference gradient with per-coordinate relative steps.
pub fn central_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], rel_step: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut work = x.to_vec();
    for i in 0..x.len() {
        let h = rel_step * (1.0 + x[i].abs());
        work[i] = x[i] + h;
        let hi = f(&work);
        work[i] = x[i] - h;
        let lo = f(&work);
        work[i] = x[i];
        g[i] = (hi - lo) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    fn rosenbrock_grad(x: &[f64]) -> Vec<f64> {
        vec![
            -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
            200.0 * (x[1] - x[0] * x[0]),
        ]
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let nm = NelderMead {
            max_iter: 5000,
            f_tol: 1e-14,
        };
        let res = nm.minimize(rosenbrock, &[-1.2, 1.0], &[0.5, 0.5]);
        assert!(res.converged);
        assert_abs_diff_eq!(res.x[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(res.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn bfgs_rosenbrock_analytic() {
        let bfgs = Bfgs {
            max_iter: 500,
            g_tol: 1e-8,
            f_tol: 1e-16,
        };
        let res = bfgs.minimize(rosenbrock, rosenbrock_grad, &[-1.2, 1.0]);
        assert!(res.converged);
        assert_abs_diff_eq!(res.x[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(res.x[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn bfgs_quadratic_numeric_gradient() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum::<f64>();
        let bfgs = Bfgs::default();
        let res = bfgs.minimize(f, |x| central_gradient(f, x, 1e-6), &[3.0, -2.0, 1.0]);
        for v in res.x {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn rejected_region_is_avoided() {
        // Objective is infinite left of x = 0.5; minimum sits at the boundary
        // of the admissible region from the start point's side.
        let f = |x: &[f64]| {
            if x[0] < 0.5 {
                f64::INFINITY
            } else {
                (x[0] - 0.2).powi(2)
            }
        };
        let nm = NelderMead::default();
        let res = nm.minimize(f, &[2.0], &[0.3]);
        assert!(res.f.is_finite());
        assert!(res.x[0] >= 0.5 - 1e-9);
    }
}
