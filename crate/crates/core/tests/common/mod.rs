//! Reference oracles for the integration suites.
//!
//! Everything here recomputes results from first principles and shares no
//! code path with the library: Fourier transforms are direct O(n^2) sums,
//! the stationary solver is a plain preconditioned fixed point checked by
//! dense residual, and trajectories come from fixed-step RK4. Agreement
//! between the library and these oracles is therefore evidence, not
//! tautology.

#![allow(dead_code)]

use num_complex::Complex64;

/// Unnormalized forward transform hat_k = sum_j u_j exp(-2 pi i j k / n),
/// matching the library's forward convention.
pub fn dft_forward(u: &[Complex64]) -> Vec<Complex64> {
    let n = u.len();
    let mut out = vec![Complex64::default(); n];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for (j, &v) in u.iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * (j as f64) * (k as f64) / (n as f64);
            acc += v * Complex64::from_polar(1.0, phase);
        }
        *slot = acc;
    }
    out
}

/// Inverse transform with the 1/n factor, matching the library convention.
pub fn dft_inverse(hat: &[Complex64]) -> Vec<Complex64> {
    let n = hat.len();
    let mut out = vec![Complex64::default(); n];
    for (j, slot) in out.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for (k, &v) in hat.iter().enumerate() {
            let phase = 2.0 * std::f64::consts::PI * (j as f64) * (k as f64) / (n as f64);
            acc += v * Complex64::from_polar(1.0, phase);
        }
        *slot = acc / (n as f64);
    }
    out
}

/// Physical wavenumber of Fourier bin k on n points over [0, box_length):
/// 2 pi f / box_length with f the signed frequency index.
pub fn wavenumbers(n: usize, box_length: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let f = if k < n / 2 { k as i64 } else { k as i64 - n as i64 };
            2.0 * std::f64::consts::PI * (f as f64) / box_length
        })
        .collect()
}

/// Spectral Laplacian by direct summation: multiply by -k^2 in frequency.
pub fn dense_laplacian(u: &[Complex64], box_length: f64) -> Vec<Complex64> {
    let ks = wavenumbers(u.len(), box_length);
    let mut hat = dft_forward(u);
    for (h, k) in hat.iter_mut().zip(&ks) {
        *h *= -k * k;
    }
    dft_inverse(&hat)
}

/// Independent evaluation of g(z) = |z|^(m-1) z with g(0) = 0.
pub fn g_point(m: f64, z: Complex64) -> Complex64 {
    let r = z.norm();
    if r == 0.0 {
        Complex64::default()
    } else {
        z * r.powf(m - 1.0)
    }
}

/// Grid L^2 norm sqrt(h * sum |u_j|^2) on a uniform 1D mesh.
pub fn l2_norm(u: &[Complex64], h: f64) -> f64 {
    (u.iter().map(|z| z.norm_sqr()).sum::<f64>() * h).sqrt()
}

/// Grid L^2 distance between two 1D samples.
pub fn l2_dist(u: &[Complex64], v: &[Complex64], h: f64) -> f64 {
    assert_eq!(u.len(), v.len());
    let s: f64 = u.iter().zip(v).map(|(a, b)| (a - b).norm_sqr()).sum();
    (s * h).sqrt()
}

/// Dense residual of -lambda*lap(u) - a*lambda*g(u) - i*b0*u = f in L^2.
pub fn dense_resolvent_residual(
    lambda: f64,
    b0: f64,
    a: Complex64,
    m: f64,
    u: &[Complex64],
    f: &[Complex64],
    box_length: f64,
) -> f64 {
    let lap = dense_laplacian(u, box_length);
    let h = box_length / u.len() as f64;
    let mut s = 0.0;
    for j in 0..u.len() {
        let lhs = -lambda * lap[j] - a * lambda * g_point(m, u[j]) - Complex64::i() * b0 * u[j];
        s += (lhs - f[j]).norm_sqr();
    }
    (s * h).sqrt()
}

/// Stationary solve by the plain preconditioned fixed point
/// u <- Linv(f + a*lambda*g(u)), Linv diagonal in frequency with symbol
/// 1/(lambda*k^2 - i*b0), all transforms dense. Converges for small
/// lambda*|a|/b0; returns None if the dense residual never reaches
/// tol * max(1, ||f||).
pub fn dense_resolvent_fixed_point(
    lambda: f64,
    b0: f64,
    a: Complex64,
    m: f64,
    f: &[Complex64],
    box_length: f64,
    tol: f64,
    max_iter: usize,
) -> Option<Vec<Complex64>> {
    let n = f.len();
    let h = box_length / n as f64;
    let ks = wavenumbers(n, box_length);
    let symbol: Vec<Complex64> = ks
        .iter()
        .map(|&k| Complex64::new(lambda * k * k, -b0))
        .collect();
    let target = tol * l2_norm(f, h).max(1.0);
    let mut u = vec![Complex64::default(); n];
    for _ in 0..max_iter {
        let mut rhs: Vec<Complex64> = (0..n)
            .map(|j| f[j] + a * lambda * g_point(m, u[j]))
            .collect();
        let mut hat = dft_forward(&rhs);
        for (v, s) in hat.iter_mut().zip(&symbol) {
            *v /= s;
        }
        rhs = dft_inverse(&hat);
        u = rhs;
        if dense_resolvent_residual(lambda, b0, a, m, &u, f, box_length) <= target {
            return Some(u);
        }
    }
    None
}

/// Fixed-step classical RK4 for the unforced evolution written as
/// u' = i*(lap(u) + a*g(u)), dense Laplacian. Valid as a reference only
/// while |u| stays away from zero, where g is smooth.
pub fn rk4_evolve(
    m: f64,
    a: Complex64,
    u0: &[Complex64],
    box_length: f64,
    dt: f64,
    steps: usize,
) -> Vec<Complex64> {
    let n = u0.len();
    let rhs = |u: &[Complex64]| -> Vec<Complex64> {
        let lap = dense_laplacian(u, box_length);
        (0..n)
            .map(|j| Complex64::i() * (lap[j] + a * g_point(m, u[j])))
            .collect()
    };
    let mut u = u0.to_vec();
    for _ in 0..steps {
        let k1 = rhs(&u);
        let u2: Vec<Complex64> = (0..n).map(|j| u[j] + 0.5 * dt * k1[j]).collect();
        let k2 = rhs(&u2);
        let u3: Vec<Complex64> = (0..n).map(|j| u[j] + 0.5 * dt * k2[j]).collect();
        let k3 = rhs(&u3);
        let u4: Vec<Complex64> = (0..n).map(|j| u[j] + dt * k3[j]).collect();
        let k4 = rhs(&u4);
        for j in 0..n {
            u[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    u
}

/// Modulus of the zero-dispersion flow i*u_t + a*g(u) = 0 started from
/// modulus r0: the radial part solves r' = -Im(a) * r^m in closed form.
pub fn zero_dispersion_modulus(r0: f64, m: f64, beta: f64, t: f64) -> f64 {
    let core = r0.powf(1.0 - m) - (1.0 - m) * beta * t;
    if core <= 0.0 {
        0.0
    } else {
        core.powf(1.0 / (1.0 - m))
    }
}

/// Time at which the zero-dispersion modulus reaches exactly zero.
pub fn zero_dispersion_extinction_time(r0: f64, m: f64, beta: f64) -> f64 {
    r0.powf(1.0 - m) / ((1.0 - m) * beta)
}
