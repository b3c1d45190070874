//! Quasi-Newton minimizer used by the CFA and nested logit estimators.
//!
//! BFGS with backtracking Armijo line search, working in an unconstrained
//! search space. Box-bounded coordinates (inclusive-value parameters, error
//! variances) are mapped through a logistic transform so the search itself
//! stays unconstrained while iterates never leave the box.

use nalgebra::{DMatrix, DVector};

/// Per-coordinate mapping between natural and search space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Identity,
    /// Natural value constrained to the open interval `(lo, hi)`.
    Logistic {
        lo: f64,
        hi: f64,
    },
}

impl Transform {
    /// Natural value for search-space coordinate `u`.
    pub fn natural(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity => u,
            Transform::Logistic { lo, hi } => lo + (hi - lo) * sigmoid(u),
        }
    }

    /// Search-space coordinate whose natural value is `x` (clamped into the box).
    pub fn search(&self, x: f64) -> f64 {
        match *self {
            Transform::Identity => x,
            Transform::Logistic { lo, hi } => {
                let t = ((x - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12);
                (t / (1.0 - t)).ln()
            }
        }
    }

    /// d natural / d search at `u`.
    pub fn jacobian(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity => 1.0,
            Transform::Logistic { lo, hi } => {
                let s = sigmoid(u);
                (hi - lo) * s * (1.0 - s)
            }
        }
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the euclidean norm of the search-space gradient.
    pub gradient_tol: f64,
    pub max_line_search_steps: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iterations: 500,
            gradient_tol: 1e-6,
            max_line_search_steps: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTol,
    MaxIterations,
    LineSearchFailed,
    StalledObjective,
    NonFiniteObjective,
}

/// Result of one minimization run. `x` is in natural space.
#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Objective value at the start point and after each accepted step.
    pub f_history: Vec<f64>,
}

/// Minimizes `f` with analytic gradient over the transformed coordinates.
///
/// The objective receives and returns natural-space quantities; the chain rule
/// through the transforms is applied here. Evaluation order is deterministic.
pub fn minimize<F>(
    mut objective: F,
    transforms: &[Transform],
    x0: &[f64],
    options: &BfgsOptions,
) -> BfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    assert_eq!(transforms.len(), n, "one transform per coordinate");
    let mut u: DVector<f64> =
        DVector::from_iterator(n, x0.iter().zip(transforms).map(|(&x, t)| t.search(x)));

    let eval = |obj: &mut F, u: &DVector<f64>| -> (f64, Vec<f64>, DVector<f64>) {
        let x: Vec<f64> = u
            .iter()
            .zip(transforms)
            .map(|(&ui, t)| t.natural(ui))
            .collect();
        let (f, gx) = obj(&x);
        let gu = DVector::from_iterator(
            n,
            gx.iter()
                .zip(u.iter())
                .zip(transforms)
                .map(|((&g, &ui), t)| g * t.jacobian(ui)),
        );
        (f, x, gu)
    };

    let (mut f, mut x, mut g) = eval(&mut objective, &u);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    let mut stalled = 0usize;
    let mut f_history = vec![f];

    if !f.is_finite() {
        return BfgsOutcome {
            x,
            f,
            gradient_norm: g.norm(),
            iterations: 0,
            converged: false,
            stop: StopReason::NonFiniteObjective,
            f_history,
        };
    }

    for iter in 0..options.max_iterations {
        iterations = iter + 1;
        if g.norm() < options.gradient_tol {
            stop = StopReason::GradientTol;
            break;
        }

        let direction = -(&h * &g);
        let mut slope = direction.dot(&g);
        let direction = if slope >= 0.0 {
            // Curvature information went bad; restart from steepest descent.
            h = DMatrix::identity(n, n);
            slope = -g.dot(&g);
            -g.clone()
        } else {
            direction
        };

        // Backtracking Armijo: accepted steps never increase the objective.
        let mut alpha = 1.0f64;
        let mut accepted = None;
        for _ in 0..options.max_line_search_steps {
            let u_new = &u + alpha * &direction;
            let (f_new, x_new, g_new) = eval(&mut objective, &u_new);
            if f_new.is_finite() && f_new <= f + 1e-4 * alpha * slope {
                accepted = Some((u_new, f_new, x_new, g_new));
                break;
            }
            alpha *= 0.5;
        }
        let Some((u_new, f_new, x_new, g_new)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };

        let s = &u_new - &u;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-10 * s.norm() * y.norm() {
            // BFGS inverse-Hessian update.
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h = &h + (sy + yhy) * rho * rho * (&s * s.transpose())
                - rho * (&hy * s.transpose() + &s * hy.transpose());
        }

        let f_drop = f - f_new;
        u = u_new;
        x = x_new;
        g = g_new;
        f = f_new;
        f_history.push(f);

        // Near an optimum of a large-magnitude objective the per-step
        // improvement drops below f64 granularity while the gradient can
        // still be polished, so the stall stop is patient.
        if f_drop <= 1e-14 * (1.0 + f.abs()) {
            stalled += 1;
            if stalled >= 20 {
                stop = StopReason::StalledObjective;
                break;
            }
        } else {
            stalled = 0;
        }
    }

    let gradient_norm = g.norm();
    if gradient_norm < options.gradient_tol {
        stop = StopReason::GradientTol;
    }
    BfgsOutcome {
        x,
        f,
        gradient_norm,
        iterations,
        converged: matches!(stop, StopReason::GradientTol),
        stop,
        f_history,
    }
}

/// Central-difference Hessian of a scalar function from its gradient.
///
/// Column `i` is `(g(x + h e_i) - g(x - h e_i)) / 2h`; the result is
/// symmetrized. Steps scale with coordinate magnitude.
pub fn central_hessian<G>(mut gradient: G, x: &[f64], base_step: f64) -> DMatrix<f64>
where
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut point = x.to_vec();
    for i in 0..n {
        let step = base_step * x[i].abs().max(1.0);
        point[i] = x[i] + step;
        let g_plus = gradient(&point);
        point[i] = x[i] - step;
        let g_minus = gradient(&point);
        point[i] = x[i];
        for j in 0..n {
            h[(j, i)] = (g_plus[j] - g_minus[j]) / (2.0 * step);
        }
    }
    // Symmetrize: the differencing error need not be.
    let ht = h.transpose();
    (h + ht) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn minimizes_a_quadratic_exactly() {
        let outcome = minimize(
            |x| {
                let f = (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2);
                (f, vec![2.0 * (x[0] - 3.0), 4.0 * (x[1] + 1.0)])
            },
            &[Transform::Identity, Transform::Identity],
            &[0.0, 0.0],
            &BfgsOptions::default(),
        );
        assert!(outcome.converged);
        assert_abs_diff_eq!(outcome.x[0], 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(outcome.x[1], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn respects_logistic_box() {
        // Unconstrained minimum at x = 2, box (0, 1): iterates stay inside,
        // solution pushes toward the boundary.
        let outcome = minimize(
            |x| ((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)]),
            &[Transform::Logistic { lo: 0.0, hi: 1.0 }],
            &[0.5],
            &BfgsOptions {
                max_iterations: 200,
                ..Default::default()
            },
        );
        assert!(outcome.x[0] > 0.0 && outcome.x[0] < 1.0);
        assert!(outcome.x[0] > 0.99, "x = {}", outcome.x[0]);
    }

    #[test]
    fn rosenbrock_converges() {
        let outcome = minimize(
            |x| {
                let (a, b) = (1.0, 100.0);
                let f = (a - x[0]).powi(2) + b * (x[1] - x[0].powi(2)).powi(2);
                let g = vec![
                    -2.0 * (a - x[0]) - 4.0 * b * (x[1] - x[0].powi(2)) * x[0],
                    2.0 * b * (x[1] - x[0].powi(2)),
                ];
                (f, g)
            },
            &[Transform::Identity, Transform::Identity],
            &[-1.2, 1.0],
            &BfgsOptions {
                max_iterations: 500,
                gradient_tol: 1e-8,
                ..Default::default()
            },
        );
        assert!(outcome.converged, "stop = {:?}", outcome.stop);
        assert_abs_diff_eq!(outcome.x[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(outcome.x[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn central_hessian_recovers_quadratic_matrix() {
        // f = x' A x / 2 with A = [[2, 0.5], [0.5, 3]].
        let grad = |x: &[f64]| vec![2.0 * x[0] + 0.5 * x[1], 0.5 * x[0] + 3.0 * x[1]];
        let h = central_hessian(grad, &[0.3, -0.7], 1e-5);
        assert_abs_diff_eq!(h[(0, 0)], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(h[(0, 1)], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(h[(1, 1)], 3.0, epsilon = 1e-8);
    }

    #[test]
    fn transform_round_trip() {
        let t = Transform::Logistic { lo: 0.01, hi: 1.5 };
        for x in [0.02, 0.3, 0.8, 1.2, 1.49] {
            assert_abs_diff_eq!(t.natural(t.search(x)), x, epsilon = 1e-10);
        }
    }
}
