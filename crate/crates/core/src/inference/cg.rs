//! Nonlinear conjugate gradient (Polak–Ribière+, periodic restart) over a
//! small fixed-size parameter vector, with a strong-Wolfe line search that
//! respects box bounds and infeasible regions.

/// Objective callback: `Some((value, gradient))` for feasible points, `None`
/// outside the feasible region.
pub trait Objective<const N: usize> {
    fn evaluate(&mut self, x: &[f64; N]) -> Option<(f64, [f64; N])>;
}

impl<const N: usize, F> Objective<N> for F
where
    F: FnMut(&[f64; N]) -> Option<(f64, [f64; N])>,
{
    fn evaluate(&mut self, x: &[f64; N]) -> Option<(f64, [f64; N])> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Stop once a step improves the value by less than this, relative to `1 + |f|`.
    pub value_tolerance: f64,
    /// Reset to steepest descent every this many iterations.
    pub restart_interval: usize,
    /// Sufficient-decrease constant of the Wolfe conditions.
    pub armijo: f64,
    /// Curvature constant of the strong Wolfe conditions.
    pub curvature: f64,
    /// Function evaluations allowed per line search.
    pub max_line_steps: usize,
}

impl Default for CgSettings {
    fn default() -> Self {
        CgSettings {
            max_iterations: 60,
            gradient_tolerance: 1e-10,
            value_tolerance: 1e-13,
            restart_interval: 8,
            armijo: 1e-4,
            curvature: 0.1,
            max_line_steps: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome<const N: usize> {
    pub point: [f64; N],
    pub value: f64,
    pub gradient: [f64; N],
    pub iterations: usize,
    pub evaluations: usize,
}

fn dot<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `objective` from `start` without bounds.
pub fn minimize<const N: usize, O: Objective<N>>(
    objective: &mut O,
    start: [f64; N],
    settings: &CgSettings,
) -> Option<CgOutcome<N>> {
    minimize_bounded(objective, start, &[f64::NEG_INFINITY; N], &[f64::INFINITY; N], settings)
}

struct LinePoint<const N: usize> {
    alpha: f64,
    value: f64,
    slope: f64,
    point: [f64; N],
    gradient: [f64; N],
}

/// Evaluates `x + alpha d`, snapping coordinates that reach a bound at
/// `alpha_max` exactly onto it.
struct Line<'a, const N: usize, O: Objective<N>> {
    objective: &'a mut O,
    x: [f64; N],
    d: [f64; N],
    lower: &'a [f64; N],
    upper: &'a [f64; N],
    evaluations: usize,
}

impl<const N: usize, O: Objective<N>> Line<'_, N, O> {
    fn at(&mut self, alpha: f64) -> Option<LinePoint<N>> {
        let point: [f64; N] = core::array::from_fn(|i| (self.x[i] + alpha * self.d[i]).clamp(self.lower[i], self.upper[i]));
        self.evaluations += 1;
        let (value, gradient) = self.objective.evaluate(&point)?;
        if !value.is_finite() {
            return None;
        }
        Some(LinePoint {
            alpha,
            value,
            slope: dot(&gradient, &self.d),
            point,
            gradient,
        })
    }
}

/// Minimizer of the quadratic through `(lo, f_lo, slope_lo)` and `(hi, f_hi)`,
/// kept inside the middle 80% of the bracket.
fn interpolate<const N: usize>(lo: &LinePoint<N>, hi_alpha: f64, hi_value: f64) -> f64 {
    let width = hi_alpha - lo.alpha;
    let curvature = hi_value - lo.value - lo.slope * width;
    let guess = if curvature > 0.0 {
        lo.alpha - lo.slope * width * width / (2.0 * curvature)
    } else {
        lo.alpha + 0.5 * width
    };
    let (a, b) = if width > 0.0 {
        (lo.alpha + 0.1 * width, hi_alpha - 0.1 * width)
    } else {
        (hi_alpha - 0.1 * width, lo.alpha + 0.1 * width)
    };
    if guess.is_finite() {
        guess.clamp(a.min(b), a.max(b))
    } else {
        lo.alpha + 0.5 * width
    }
}

/// Strong-Wolfe search on `(0, alpha_max]`. Returns a point strictly below
/// `f0`, or `None` if none was found.
fn line_search<const N: usize, O: Objective<N>>(
    line: &mut Line<'_, N, O>,
    f0: f64,
    slope0: f64,
    initial: f64,
    alpha_max: f64,
    settings: &CgSettings,
) -> Option<LinePoint<N>> {
    let sufficient = |p: &LinePoint<N>| p.value <= f0 + settings.armijo * p.alpha * slope0 && p.value < f0;
    let curvature_ok = |p: &LinePoint<N>| libm::fabs(p.slope) <= -settings.curvature * slope0;
    let origin = LinePoint {
        alpha: 0.0,
        value: f0,
        slope: slope0,
        point: line.x,
        gradient: [0.0; N],
    };

    // Bracketing phase.
    let mut prev = origin;
    let mut alpha = initial.min(alpha_max);
    let mut budget = settings.max_line_steps;
    let (mut lo, mut hi_alpha, mut hi_value);
    loop {
        if budget == 0 {
            return (prev.alpha > 0.0).then_some(prev);
        }
        budget -= 1;
        let Some(p) = line.at(alpha) else {
            // Infeasible: the minimizer lies before `alpha`.
            lo = prev;
            hi_alpha = alpha;
            hi_value = f64::INFINITY;
            break;
        };
        if !sufficient(&p) || (prev.alpha > 0.0 && p.value >= prev.value) {
            lo = prev;
            hi_alpha = p.alpha;
            hi_value = p.value;
            break;
        }
        if curvature_ok(&p) {
            return Some(p);
        }
        if p.slope >= 0.0 {
            hi_alpha = prev.alpha;
            hi_value = prev.value;
            lo = p;
            break;
        }
        if p.alpha >= alpha_max {
            return Some(p);
        }
        alpha = (2.0 * p.alpha).min(alpha_max);
        prev = p;
    }

    // Zoom phase: `lo` satisfies sufficient decrease (or is the origin).
    while budget > 0 {
        budget -= 1;
        let a = if hi_value.is_finite() {
            interpolate(&lo, hi_alpha, hi_value)
        } else {
            lo.alpha + 0.5 * (hi_alpha - lo.alpha)
        };
        if a == lo.alpha || a == hi_alpha {
            break;
        }
        let Some(p) = line.at(a) else {
            hi_alpha = a;
            hi_value = f64::INFINITY;
            continue;
        };
        if !sufficient(&p) || p.value >= lo.value {
            hi_alpha = p.alpha;
            hi_value = p.value;
        } else {
            if curvature_ok(&p) {
                return Some(p);
            }
            if p.slope * (hi_alpha - lo.alpha) >= 0.0 {
                hi_alpha = lo.alpha;
                hi_value = lo.value;
            }
            lo = p;
        }
    }
    (lo.alpha > 0.0).then_some(lo)
}

/// Minimizes `objective` over the box `lower ≤ x ≤ upper`. Direction
/// components pushing against an active bound are dropped and each line
/// search stops at the box. Returns `None` if `start` is infeasible. Every
/// accepted step strictly decreases the value, so the result is never worse
/// than the start.
pub fn minimize_bounded<const N: usize, O: Objective<N>>(
    objective: &mut O,
    start: [f64; N],
    lower: &[f64; N],
    upper: &[f64; N],
    settings: &CgSettings,
) -> Option<CgOutcome<N>> {
    if (0..N).any(|i| !(start[i] >= lower[i] && start[i] <= upper[i])) {
        return None;
    }
    let (mut fx, mut g) = objective.evaluate(&start)?;
    let mut x = start;
    let mut evaluations = 1;
    let mut d = g.map(|v| -v);
    let mut step = 1.0 / libm::sqrt(dot(&g, &g)).max(1e-12);
    let mut iterations = 0;
    let mut since_restart = 0;

    while iterations < settings.max_iterations {
        let blocked = |i: usize, v: f64| (x[i] <= lower[i] && v < 0.0) || (x[i] >= upper[i] && v > 0.0);
        let free_grad: [f64; N] = core::array::from_fn(|i| if blocked(i, -g[i]) { 0.0 } else { g[i] });
        let gnorm = libm::sqrt(dot(&free_grad, &free_grad));
        if gnorm <= settings.gradient_tolerance {
            break;
        }
        for (i, di) in d.iter_mut().enumerate() {
            if blocked(i, *di) {
                *di = 0.0;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = free_grad.map(|v| -v);
            slope = -gnorm * gnorm;
            since_restart = 0;
        }
        let alpha_max = (0..N)
            .filter(|&i| d[i] != 0.0)
            .map(|i| if d[i] > 0.0 { (upper[i] - x[i]) / d[i] } else { (lower[i] - x[i]) / d[i] })
            .fold(f64::INFINITY, f64::min);

        let mut line = Line {
            objective: &mut *objective,
            x,
            d,
            lower,
            upper,
            evaluations: 0,
        };
        let found = line_search(&mut line, fx, slope, step, alpha_max, settings);
        evaluations += line.evaluations;
        let Some(next) = found else {
            if since_restart == 0 {
                break;
            }
            // A stale conjugate direction; retry along the gradient.
            d = free_grad.map(|v| -v);
            since_restart = 0;
            step = 1.0 / gnorm.max(1e-12);
            continue;
        };

        iterations += 1;
        since_restart += 1;
        let improvement = fx - next.value;
        let g_new = next.gradient;
        let gg = dot(&g, &g);
        let mut beta = (dot(&g_new, &g_new) - dot(&g_new, &g)) / gg.max(f64::MIN_POSITIVE);
        if !(beta > 0.0) || since_restart >= settings.restart_interval {
            beta = 0.0;
            since_restart = 0;
        }
        let d_new: [f64; N] = core::array::from_fn(|i| -g_new[i] + beta * d[i]);
        let slope_new = dot(&g_new, &d_new);
        step = if slope_new < 0.0 {
            (next.alpha * slope / slope_new).clamp(1e-300, 1e300)
        } else {
            next.alpha
        };
        x = next.point;
        fx = next.value;
        g = g_new;
        d = d_new;
        if improvement <= settings.value_tolerance * (1.0 + libm::fabs(fx)) {
            break;
        }
    }

    Some(CgOutcome {
        point: x,
        value: fx,
        gradient: g,
        iterations,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_ill_conditioned_quadratic() {
        let mut f = |x: &[f64; 4]| {
            let w = [1.0, 10.0, 100.0, 1000.0];
            let c = [1.0, -2.0, 0.5, 3.0];
            let v: f64 = (0..4).map(|i| 0.5 * w[i] * (x[i] - c[i]).powi(2)).sum();
            Some((v, core::array::from_fn(|i| w[i] * (x[i] - c[i]))))
        };
        let settings = CgSettings {
            max_iterations: 200,
            ..Default::default()
        };
        let out = minimize(&mut f, [0.0; 4], &settings).unwrap();
        for (got, want) in out.point.iter().zip([1.0, -2.0, 0.5, 3.0]) {
            assert!((got - want).abs() < 1e-5, "{:?}", out.point);
        }
    }

    #[test]
    fn rosenbrock() {
        let mut f = |p: &[f64; 2]| {
            let (x, y) = (p[0], p[1]);
            let v = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
            let gx = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
            let gy = 200.0 * (y - x * x);
            Some((v, [gx, gy]))
        };
        let settings = CgSettings {
            max_iterations: 2000,
            value_tolerance: 0.0,
            ..Default::default()
        };
        let out = minimize(&mut f, [-1.2, 1.0], &settings).unwrap();
        assert!((out.point[0] - 1.0).abs() < 1e-3 && (out.point[1] - 1.0).abs() < 1e-3, "{:?}", out.point);
    }

    #[test]
    fn respects_feasible_region() {
        // Minimum at x = -1 but only x >= 0 is feasible.
        let mut f = |x: &[f64; 1]| {
            if x[0] < 0.0 {
                None
            } else {
                Some(((x[0] + 1.0).powi(2), [2.0 * (x[0] + 1.0)]))
            }
        };
        let out = minimize(&mut f, [3.0], &CgSettings::default()).unwrap();
        assert!(out.point[0] >= 0.0 && out.point[0] < 1e-6);
        assert!(minimize(&mut f, [-1.0], &CgSettings::default()).is_none());
    }

    #[test]
    fn box_bounds_are_respected() {
        let mut f = |x: &[f64; 2]| Some(((x[0] - 5.0).powi(2) + (x[1] + 1.0).powi(2), [2.0 * (x[0] - 5.0), 2.0 * (x[1] + 1.0)]));
        let out = minimize_bounded(&mut f, [0.0, 0.0], &[-1.0, -0.5], &[2.0, 1.0], &CgSettings::default()).unwrap();
        assert!((out.point[0] - 2.0).abs() < 1e-9);
        assert!((out.point[1] + 0.5).abs() < 1e-9);
        assert!(minimize_bounded(&mut f, [3.0, 0.0], &[-1.0, -0.5], &[2.0, 1.0], &CgSettings::default()).is_none());
    }

    #[test]
    fn never_increases_value() {
        let mut f = |x: &[f64; 2]| Some((x[0].abs() + x[1] * x[1], [x[0].signum(), 2.0 * x[1]]));
        let start = [0.7, -0.3];
        let f0 = 0.7 + 0.09;
        let out = minimize(&mut f, start, &CgSettings::default()).unwrap();
        assert!(out.value <= f0);
    }
}
