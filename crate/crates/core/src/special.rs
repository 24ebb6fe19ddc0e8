//! Airy function Ai and Bessel function J_nu of real argument, with derivatives.
//!
//! Power series near the origin, Poincaré asymptotics far out. The switch
//! points keep the absolute error near 1e-11 or better.

use std::f64::consts::{FRAC_PI_4, PI};

const AI0: f64 = 0.355_028_053_887_817_24;
const DAI0: f64 = 0.258_819_403_792_806_8;

/// (Ai(x), Ai'(x)).
pub fn airy_ai(x: f64) -> (f64, f64) {
    if x > 6.0 {
        airy_asymptotic_pos(x)
    } else if x < -7.0 {
        airy_asymptotic_neg(-x)
    } else {
        airy_series(x)
    }
}

fn airy_series(x: f64) -> (f64, f64) {
    let x3 = x * x * x;
    // f = sum a_k x^{3k}, g = sum b_k x^{3k+1}
    let (mut f, mut g) = (0.0, 0.0);
    let (mut df, mut dg) = (0.0, 0.0);
    let mut tf = 1.0; // a_k x^{3k}
    let mut tg = x; // b_k x^{3k+1}
    let mut tdf = 0.0; // 3k a_k x^{3k-1}
    let mut tdg = 1.0; // (3k+1) b_k x^{3k}
    for k in 0..200 {
        let kf = k as f64;
        f += tf;
        g += tg;
        df += tdf;
        dg += tdg;
        let rf = x3 / ((3.0 * kf + 2.0) * (3.0 * kf + 3.0));
        let rg = x3 / ((3.0 * kf + 3.0) * (3.0 * kf + 4.0));
        tdf = tf * (3.0 * kf + 3.0) * x * x / ((3.0 * kf + 2.0) * (3.0 * kf + 3.0));
        tdg = tg * (3.0 * kf + 4.0) * x * x / ((3.0 * kf + 3.0) * (3.0 * kf + 4.0));
        tf *= rf;
        tg *= rg;
        let scale = f.abs() + g.abs() + df.abs() + dg.abs();
        if tf.abs() + tg.abs() + tdf.abs() + tdg.abs() < 1e-18 * scale.max(1e-300) {
            break;
        }
    }
    (AI0 * f - DAI0 * g, AI0 * df - DAI0 * dg)
}

fn airy_u_coeffs(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![1.0];
    let mut v = vec![1.0];
    for k in 1..n {
        let kf = k as f64;
        let next = u[k - 1] * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0) / ((2.0 * kf - 1.0) * 216.0 * kf);
        u.push(next);
        v.push(-(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * next);
    }
    (u, v)
}

fn truncated_alternating(c: &[f64], zeta: f64) -> f64 {
    // sum (-1)^k c_k / zeta^k, stopped at the smallest term
    let mut s = 0.0;
    let mut p = 1.0;
    let mut last = f64::INFINITY;
    for (k, ck) in c.iter().enumerate() {
        let t = ck * p;
        if t.abs() > last {
            break;
        }
        s += if k % 2 == 0 { t } else { -t };
        last = t.abs();
        if last < 1e-17 * s.abs() {
            break;
        }
        p /= zeta;
    }
    s
}

fn airy_asymptotic_pos(x: f64) -> (f64, f64) {
    let zeta = 2.0 / 3.0 * x.powf(1.5);
    let (u, v) = airy_u_coeffs(40);
    let e = (-zeta).exp() / (2.0 * PI.sqrt());
    let q = x.powf(0.25);
    (e / q * truncated_alternating(&u, zeta), -e * q * truncated_alternating(&v, zeta))
}

fn airy_asymptotic_neg(z: f64) -> (f64, f64) {
    let zeta = 2.0 / 3.0 * z.powf(1.5);
    let (u, v) = airy_u_coeffs(60);
    let split = |c: &[f64]| {
        // even and odd parts: sum (-1)^k c_{2k}/zeta^{2k}, sum (-1)^k c_{2k+1}/zeta^{2k+1}
        let (mut even, mut odd) = (0.0, 0.0);
        let mut last = f64::INFINITY;
        let mut p = 1.0;
        for (k, ck) in c.iter().enumerate() {
            let t = ck * p;
            if t.abs() > last {
                break;
            }
            last = t.abs();
            let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            if k % 2 == 0 {
                even += sign * t;
            } else {
                odd += sign * t;
            }
            p /= zeta;
        }
        (even, odd)
    };
    let (ue, uo) = split(&u);
    let (ve, vo) = split(&v);
    let (s, c) = (zeta - FRAC_PI_4).sin_cos();
    let q = z.powf(0.25);
    let ai = (c * ue + s * uo) / (PI.sqrt() * q);
    let dai = q / PI.sqrt() * (s * ve - c * vo);
    (ai, dai)
}

/// (J_nu(x), J_nu'(x)) for nu > -1 and x > 0.
pub fn bessel_j(nu: f64, x: f64) -> (f64, f64) {
    if x > hankel_switch(nu) {
        let j = bessel_hankel(nu, x);
        let jm = bessel_hankel(nu - 1.0, x);
        (j, jm - nu / x * j)
    } else {
        bessel_series(nu, x)
    }
}

fn hankel_switch(nu: f64) -> f64 {
    (12.0f64).max(nu * nu)
}

fn bessel_series(nu: f64, x: f64) -> (f64, f64) {
    let h = 0.5 * x;
    let h2 = h * h;
    let mut t = h.powf(nu) / statrs::function::gamma::gamma(nu + 1.0);
    let (mut j, mut dj) = (0.0, 0.0);
    for k in 0..400 {
        let kf = k as f64;
        j += t;
        dj += t * (2.0 * kf + nu) / x;
        t *= -h2 / ((kf + 1.0) * (kf + nu + 1.0));
        if t.abs() < 1e-18 * j.abs().max(1e-300) && kf > h {
            break;
        }
    }
    (j, dj)
}

fn bessel_hankel(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let w = x - nu * PI / 2.0 - FRAC_PI_4;
    let (mut p, mut q) = (0.0, 0.0);
    let mut a = 1.0;
    let mut last = f64::INFINITY;
    for k in 0..80 {
        if k > 0 {
            let kf = k as f64;
            a *= (mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * x);
        }
        if a.abs() > last {
            break;
        }
        last = a.abs();
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            p += sign * a;
        } else {
            q += sign * a;
        }
        if last < 1e-17 {
            break;
        }
    }
    (2.0 / (PI * x)).sqrt() * (p * w.cos() - q * w.sin())
}
