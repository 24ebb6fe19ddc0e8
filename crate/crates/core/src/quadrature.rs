//! Fixed quadrature rules on [-1, 1] and their affine images.

/// Gauss–Legendre nodes and weights on [-1, 1], nodes increasing.
///
/// Newton iteration on the three-term recurrence, started from the
/// Tricomi approximation of the roots.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    (
        x.iter().map(|t| c + h * t).collect(),
        w.iter().map(|v| h * v).collect(),
    )
}

/// Composite trapezoid rule with `n` equispaced nodes including both ends.
pub fn trapezoid_on(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (b - a) / (n - 1) as f64;
    let nodes = (0..n)
        .map(|i| if i == n - 1 { b } else { a + h * i as f64 })
        .collect();
    let weights = (0..n)
        .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
        .collect();
    (nodes, weights)
}
