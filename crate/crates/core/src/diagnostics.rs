//! Quantitative verification layer: the decay exponent arithmetic, the
//! ordinary-differential-equation comparison bound for the extinction time,
//! extinction detection, decay-rate fitting, the discrete mass-balance
//! residual, and the Gagliardo-Nirenberg ratio.
//!
//! The central quantity is y(t) = ||u(t)||^2_{L^2}. Along solutions with an
//! admissible coefficient the mass identity
//!
//! ```text
//! (1/2) y'(t) + Im(a) * ||u(t)||^{m+1}_{L^{m+1}} = Im \int f conj(u)
//! ```
//!
//! holds, and interpolation between L^{m+1} and the Sobolev space H^ell
//! turns it (for f = 0) into the differential inequality y' + C y^delta <= 0
//! with
//!
//! ```text
//! delta = ((2*ell + N) + m*(2*ell - N)) / (4*ell).
//! ```
//!
//! When delta < 1 (low dimension, N < 2*ell) the comparison equation
//! y' = -C y^delta hits zero at the finite time y(0)^{1-delta}/((1-delta)C),
//! which bounds the extinction time of the solution itself. When delta = 1
//! the comparison gives exponential decay, and for delta > 1 an algebraic
//! rate; both appear in the shipped decay scenarios as fits rather than
//! extinction times.


use crate::cone::ConeParams;
use crate::domain::{lp_norm, sobolev_norm, Field};
use crate::error::{Error, Result};

/// Recorded trajectory diagnostics, one entry per record time.
#[derive(Debug, Clone, Default)]
pub struct DiagnosticsSeries {
    times: Vec<f64>,
    mass: Vec<f64>,
    lmp1: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    source_work: Vec<f64>,
    tail_mass: Vec<f64>,
}

impl DiagnosticsSeries {
    pub fn new() -> DiagnosticsSeries {
        DiagnosticsSeries::default()
    }

    /// Appends a record; times must increase strictly and every entry but
    /// the (signed) source work must be finite and nonnegative.
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        t: f64,
        mass: f64,
        lmp1: f64,
        h1: f64,
        h2: f64,
        source_work: f64,
        tail_mass: f64,
    ) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::domain(format!(
                    "record times must increase strictly: {t} after {last}"
                )));
            }
        }
        for (name, v) in [
            ("time", t),
            ("mass", mass),
            ("lmp1", lmp1),
            ("h1", h1),
            ("h2", h2),
            ("tail_mass", tail_mass),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain(format!(
                    "diagnostics entry {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !source_work.is_finite() {
            return Err(Error::domain(format!(
                "source work must be finite, got {source_work}"
            )));
        }
        self.times.push(t);
        self.mass.push(mass);
        self.lmp1.push(lmp1);
        self.h1.push(h1);
        self.h2.push(h2);
        self.source_work.push(source_work);
        self.tail_mass.push(tail_mass);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn lmp1(&self) -> &[f64] {
        &self.lmp1
    }

    pub fn h1(&self) -> &[f64] {
        &self.h1
    }

    pub fn h2(&self) -> &[f64] {
        &self.h2
    }

    pub fn source_work(&self) -> &[f64] {
        &self.source_work
    }

    pub fn tail_mass(&self) -> &[f64] {
        &self.tail_mass
    }
}

/// Everything the extinction theorems predict about one trajectory.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ExtinctionReport {
    /// Detected extinction time, if the sustained threshold crossing
    /// happened within the run.
    pub t_num: Option<f64>,
    pub delta: f64,
    pub c_emp: f64,
    pub t_star_bound: f64,
    /// T_num <= T_star_bound (false when no extinction was detected).
    pub satisfied: bool,
}

/// The exponent pair of the comparison argument.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DeltaExponents {
    pub delta: f64,
    /// (2*delta - 1)/(1 - delta); infinite when delta >= 1.
    pub source_exponent: f64,
}

/// delta = ((2*ell + N) + m*(2*ell - N)) / (4*ell) and the matching
/// borderline source exponent. Requires N >= 1, ell in {1, 2}, m in (0, 1).
/// delta < 1 exactly when N < 2*ell; the source exponent is infinite
/// otherwise.
pub fn delta_exponent(n_dim: usize, ell: usize, m: f64) -> Result<DeltaExponents> {
    if n_dim == 0 {
        return Err(Error::domain("spatial dimension must be at least 1".to_string()));
    }
    if !(ell == 1 || ell == 2) {
        return Err(Error::domain(format!(
            "Sobolev order ell must be 1 or 2, got {ell}"
        )));
    }
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::domain(format!(
            "exponent m must lie in (0, 1), got {m}"
        )));
    }
    let n = n_dim as f64;
    let l = ell as f64;
    let delta = ((2.0 * l + n) + m * (2.0 * l - n)) / (4.0 * l);
    let source_exponent = if delta < 1.0 {
        (2.0 * delta - 1.0) / (1.0 - delta)
    } else {
        f64::INFINITY
    };
    Ok(DeltaExponents {
        delta,
        source_exponent,
    })
}

/// Zero-crossing time of the exact solution of y' = -C y^delta, y(0) = y0:
/// y0^{1-delta} / ((1-delta) C) for delta < 1; infinity for delta >= 1
/// (exponential respectively algebraic decay never reach zero).
pub fn ode_comparator_bound(y0: f64, c: f64, delta: f64) -> Result<f64> {
    if !(y0 >= 0.0) || !y0.is_finite() {
        return Err(Error::domain(format!(
            "initial value must be finite and nonnegative, got {y0}"
        )));
    }
    if !(c > 0.0) {
        return Err(Error::domain(format!("decay constant must be positive, got {c}")));
    }
    if !(delta > 0.0) {
        return Err(Error::domain(format!("exponent must be positive, got {delta}")));
    }
    if y0 == 0.0 {
        return Ok(0.0);
    }
    if delta >= 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(y0.powf(1.0 - delta) / ((1.0 - delta) * c))
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ExtinctionFit {
    pub c_emp: f64,
    pub t_star_bound: f64,
}

/// Fits the sharpest constant making y' + C y^delta <= 0 hold along the
/// recorded trajectory: C_emp = min over records of
/// 2*Im(a)*lmp1(t)/mass(t)^delta, restricted to records at or after
/// `from_time` whose mass exceeds 1e-12 times the mass at `from_time`
/// (near-extinct records carry no information about the constant). The
/// bound is then from_time + mass(from_time)^{1-delta}/((1-delta)*C_emp).
pub fn fit_extinction_constant(
    series: &DiagnosticsSeries,
    delta: f64,
    params: ConeParams,
    from_time: f64,
) -> Result<ExtinctionFit> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::domain(format!("exponent must be positive, got {delta}")));
    }
    let start = series
        .times
        .iter()
        .position(|&t| t >= from_time)
        .ok_or_else(|| {
            Error::InsufficientData(format!("no records at or after t = {from_time}"))
        })?;
    let y_from = series.mass[start];
    let floor = 1e-12 * y_from;
    let beta = params.a().im;
    let mut c_emp = f64::INFINITY;
    let mut used = 0usize;
    for i in start..series.len() {
        let y = series.mass[i];
        if y <= floor || y == 0.0 {
            continue;
        }
        used += 1;
        let ratio = 2.0 * beta * series.lmp1[i] / y.powf(delta);
        if ratio < c_emp {
            c_emp = ratio;
        }
    }
    if used < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 records with positive mass after t = {from_time}, found {used}"
        )));
    }
    let t_star_bound = if c_emp <= 0.0 || delta >= 1.0 {
        f64::INFINITY
    } else {
        from_time + y_from.powf(1.0 - delta) / ((1.0 - delta) * c_emp)
    };
    Ok(ExtinctionFit {
        c_emp: c_emp.max(0.0),
        t_star_bound,
    })
}

/// Earliest recorded time at which mass <= rel_threshold * mass(first
/// record) and stays there for every later record; none if the crossing
/// never sustains.
pub fn detect_extinction(series: &DiagnosticsSeries, rel_threshold: f64) -> Option<f64> {
    if series.is_empty() || !(rel_threshold > 0.0) {
        return None;
    }
    let cut = rel_threshold * series.mass[0];
    // Last record above the threshold; everything after it is sustained.
    let last_above = series.mass.iter().rposition(|&y| y > cut);
    match last_above {
        None => Some(series.times[0]),
        Some(i) if i + 1 < series.len() => Some(series.times[i + 1]),
        Some(_) => None,
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DecayFit {
    pub rate_or_exponent: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayKind {
    Exponential,
    Power,
}

/// Least-squares decay fit of the mass series on a time window.
///
/// Exponential: log(mass) against t, returning |slope|. Power: log(mass)
/// against log(1 + t - T0) with T0 the window start, returning |slope|.
/// Requires at least 5 in-window records with positive mass.
pub fn fit_decay(
    series: &DiagnosticsSeries,
    kind: DecayKind,
    window: (f64, f64),
) -> Result<DecayFit> {
    let (w0, w1) = window;
    if !(w1 > w0) {
        return Err(Error::domain(format!(
            "fit window must have positive length, got [{w0}, {w1}]"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..series.len() {
        let t = series.times[i];
        let y = series.mass[i];
        if t < w0 || t > w1 || !(y > 0.0) {
            continue;
        }
        let x = match kind {
            DecayKind::Exponential => t,
            DecayKind::Power => (1.0 + t - w0).ln(),
        };
        xs.push(x);
        ys.push(y.ln());
    }
    if xs.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "need at least 5 records with positive mass in [{w0}, {w1}], found {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "fit window abscissa is degenerate".to_string(),
        ));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(DecayFit {
        rate_or_exponent: slope.abs(),
        r2,
    })
}

/// Per-interval residual of the trapezoidal discretization of the mass
/// identity over each record interval:
///
/// ```text
/// r_i = (y_{i+1} - y_i)/2 + Im(a) * dt_i * (l_i + l_{i+1})/2
///                         - dt_i * (w_i + w_{i+1})/2,
/// ```
///
/// where l is the L^{m+1} term and w the source work. For an exact solution
/// sampled exactly the residual is pure quadrature error; for a scheme it
/// measures the discrete mass-balance defect of that interval.
pub fn mass_balance_residual(series: &DiagnosticsSeries, params: ConeParams) -> Vec<f64> {
    let beta = params.a().im;
    let n = series.len();
    if n < 2 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let dt = series.times[i + 1] - series.times[i];
        let dy = 0.5 * (series.mass[i + 1] - series.mass[i]);
        let damp = beta * 0.5 * (series.lmp1[i] + series.lmp1[i + 1]) * dt;
        let work = 0.5 * (series.source_work[i] + series.source_work[i + 1]) * dt;
        out.push(dy + damp - work);
    }
    out
}

/// Gagliardo-Nirenberg ratio
///
/// ```text
/// ||u||_{L^2}^{((2*ell+N) + m*(2*ell-N))/(2*ell)}
/// ----------------------------------------------------
/// ||u||_{H^ell}^{N(1-m)/(2*ell)} * ||u||_{L^{m+1}}^{m+1}
/// ```
///
/// The numerator exponent equals 4*ell*delta/(2*ell) = 2*delta, and both
/// sides have the same scaling degree, so the ratio is invariant under
/// u -> c*u. Its ensemble maximum is the empirical interpolation constant.
pub fn gn_ratio(u: &Field, ell: usize, m: f64) -> Result<f64> {
    if !(ell == 1 || ell == 2) {
        return Err(Error::domain(format!(
            "Sobolev order ell must be 1 or 2, got {ell}"
        )));
    }
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::domain(format!(
            "exponent m must lie in (0, 1), got {m}"
        )));
    }
    let n = u.grid().dims() as f64;
    let l = ell as f64;
    let l2 = lp_norm(u, 2.0)?;
    let hl = sobolev_norm(u, ell as u32)?;
    let lmp1 = lp_norm(u, m + 1.0)?;
    let denom = hl.powf(n * (1.0 - m) / (2.0 * l)) * lmp1.powf(m + 1.0);
    if !(denom > f64::MIN_POSITIVE) || l2 == 0.0 {
        return Err(Error::domain(
            "Gagliardo-Nirenberg ratio is undefined for a (near-)zero field".to_string(),
        ));
    }
    let num = l2.powf(((2.0 * l + n) + m * (2.0 * l - n)) / (2.0 * l));
    Ok(num / denom)
}

/// Discrete monotonicity pairing for two fields, with its natural scale.
#[derive(Debug, Clone, Copy)]
pub struct MonotonePairing {
    /// Re(-i * a * h^N * sum (g(u)-g(v)) * conj(u-v)); nonnegative for
    /// cone-admissible a, up to roundoff.
    pub value: f64,
    /// |a| * h^N * sum |g(u)-g(v)| * |u-v|, the relative-tolerance scale.
    pub scale: f64,
}

/// Evaluates the pairing Re(-i*a \int (g(u)-g(v)) conj(u-v) dx) on the grid.
/// Pointwise each term w = (g(u)-g(v))*conj(u-v) satisfies Re(w) >= 0 and
/// 2*sqrt(m)*|Im(w)| <= (1-m)*Re(w), so the cone inequality on a makes the
/// whole sum nonnegative: the damping term is dissipative for differences,
/// not just for solutions themselves.
pub fn monotone_pairing(params: ConeParams, u: &Field, v: &Field) -> Result<MonotonePairing> {
    if !u.grid().same_grid(v.grid()) {
        return Err(Error::GridMismatch);
    }
    let m = params.m();
    let a = params.a();
    let mut sum = num_complex::Complex64::default();
    let mut scale = 0.0f64;
    for (&x, &y) in u.values().iter().zip(v.values()) {
        let w = (crate::cone::g_apply(m, x) - crate::cone::g_apply(m, y)) * (x - y).conj();
        sum += w;
        scale += w.norm();
    }
    let h = u.grid().cell_volume();
    let minus_i_a = num_complex::Complex64::new(0.0, -1.0) * a;
    Ok(MonotonePairing {
        value: (minus_i_a * sum * h).re,
        scale: a.norm() * scale * h,
    })
}

/// Assembles the full extinction report for a trajectory in dimension
/// `n_dim` with Sobolev order `ell`.
pub fn extinction_report(
    series: &DiagnosticsSeries,
    n_dim: usize,
    ell: usize,
    params: ConeParams,
    from_time: f64,
    rel_threshold: f64,
) -> Result<ExtinctionReport> {
    let exps = delta_exponent(n_dim, ell, params.m())?;
    let fit = fit_extinction_constant(series, exps.delta, params, from_time)?;
    let t_num = detect_extinction(series, rel_threshold);
    let satisfied = match t_num {
        Some(t) => t <= fit.t_star_bound,
        None => false,
    };
    Ok(ExtinctionReport {
        t_num,
        delta: exps.delta,
        c_emp: fit.c_emp,
        t_star_bound: fit.t_star_bound,
        satisfied,
    })
}
