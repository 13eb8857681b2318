//! Small numerical kernels shared by the solvers.

use std::f64::consts::PI;

/// `expm1(x) / x`, continuous at zero.
pub fn phi1(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + 0.5 * x
    } else {
        x.exp_m1() / x
    }
}

/// Integral of `exp(-r t)` over `[0, t_end]`.
pub fn exp_integral(rate: f64, t_end: f64) -> f64 {
    t_end * phi1(-rate * t_end)
}

/// Integral over `[0, t]` of `exp(-beta (t - tau)) exp(-r tau)` d tau.
pub fn exp_convolution(beta: f64, rate: f64, t: f64) -> f64 {
    let d = beta - rate;
    if d >= 0.0 {
        // e^{-r t} (1 - e^{-d t}) / d
        t * (-rate * t).exp() * phi1(-d * t)
    } else {
        t * (-beta * t).exp() * phi1(d * t)
    }
}

/// Integral over `t in [0, t_end]` of [`exp_convolution`]`(beta, rate, t)`.
pub fn exp_convolution_integral(beta: f64, rate: f64, t_end: f64) -> f64 {
    let d = beta - rate;
    if (d * t_end).abs() < 1e-5 {
        // divided difference of exp_integral -> integral of t e^{-r t}
        let r = 0.5 * (beta + rate);
        let rt = r * t_end;
        if rt < 1e-6 {
            return 0.5 * t_end * t_end;
        }
        // (1 - (1 + rt) e^{-rt}) / r^2
        let val = (-(-rt).exp_m1() - rt * (-rt).exp()) / (r * r);
        return val;
    }
    (exp_integral(rate, t_end) - exp_integral(beta, t_end)) / d
}

/// Integral over `[0, t_end]` of `(1 - exp(-beta t)) / beta`.
pub fn step_response_integral(beta: f64, t_end: f64) -> f64 {
    let x = beta * t_end;
    if x < 1e-6 {
        0.5 * t_end * t_end
    } else {
        (t_end - exp_integral(beta, t_end)) / beta
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { p0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Composite Gauss-Legendre rule on `[a, b]`: `panels` panels of `order` points.
#[derive(Debug, Clone)]
pub struct CompositeGauss {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeGauss {
    pub fn new(a: f64, b: f64, panels: usize, order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let h = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let lo = a + p as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(lo + 0.5 * h * (xi + 1.0));
                weights.push(0.5 * h * wi);
            }
        }
        Self { nodes, weights }
    }

    /// Rule with `points` total nodes split into 16-point panels.
    pub fn with_points(a: f64, b: f64, points: usize) -> Self {
        let order = 16.min(points.max(1));
        let panels = points.div_ceil(order).max(1);
        Self::new(a, b, panels, order)
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Bisection on a sign-changing bracket followed by safeguarded Newton polish.
///
/// Returns `None` when the bracket has no sign change or fails to close.
pub fn bracketed_root(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    bisect_tol: f64,
    max_iter: usize,
) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    let scale = lo.abs().max(hi.abs()).max(1.0);
    let mut iter = 0;
    while (hi - lo) > bisect_tol * scale {
        if iter >= max_iter {
            return None;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        iter += 1;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..5 {
        let d = df(x);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let next = x - f(x) / d;
        if !(next > lo && next < hi) {
            break;
        }
        if next == x {
            break;
        }
        x = next;
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn composite_rule_integrates_oscillatory_sine() {
        let l = 2.5e-3;
        let lam = 60.0 * PI / l;
        let q = CompositeGauss::with_points(0.0, l, 128);
        let v = q.integrate(|y| (lam * y).sin().powi(2));
        assert!((v - l / 2.0).abs() < 1e-15);
    }

    #[test]
    fn convolution_closed_forms_match_quadrature() {
        let q = CompositeGauss::new(0.0, 0.7, 64, 16);
        for &(beta, rate) in &[(3.0, 1.0), (1.0, 3.0), (2.0, 2.0 + 1e-9), (50.0, 0.01)] {
            let t = 0.7;
            let direct = q.integrate(|tau| (-beta * (t - tau)).exp() * (-rate * tau).exp());
            assert!((exp_convolution(beta, rate, t) - direct).abs() < 1e-12);
            let qq = CompositeGauss::new(0.0, t, 64, 16);
            let int = qq.integrate(|s| exp_convolution(beta, rate, s));
            assert!((exp_convolution_integral(beta, rate, t) - int).abs() < 1e-10 * int.abs().max(1.0));
        }
        let int = q.integrate(|s| (1.0 - (-4.0 * s).exp()) / 4.0);
        assert!((step_response_integral(4.0, 0.7) - int).abs() < 1e-13);
    }
}
