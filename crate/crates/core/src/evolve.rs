//! Time integration by backward Euler (through the resolvent) and Strang
//! splitting (through two exactly solvable sub-flows), plus source terms.
//!
//! Backward Euler advances (I + dt*A)u^{n+1} = u^n - i*dt*f^{n+1} for the
//! monotone operator A u = -i*lap(u) - i*a*g(u); rearranged this is exactly
//! the resolvent equation with lambda = dt, b0 = 1, F = -i*u^n - dt*f^{n+1},
//! so every step inherits the L^2 contraction and, with f = 0, dissipates
//! mass unconditionally.
//!
//! Strang splitting composes the two pieces of the equation, each solved in
//! closed form: the damping flow i*u_t + a*g(u) = 0 decouples into scalar
//! radial/phase equations at every grid point, and the free flow
//! i*u_t + lap(u) = 0 is a Fourier multiplier. The source enters by a
//! midpoint kick. Both sub-flows being exact makes the zero-dispersion
//! configuration an oracle: disabling the Laplacian must reproduce the
//! pointwise closed form to solver tolerance.

use num_complex::Complex64;

use crate::cone::ConeParams;
use crate::diagnostics::DiagnosticsSeries;
use crate::domain::{inner, lp_norm, sobolev_norm, Field, PeriodicGrid};
use crate::error::{Error, Result};
use crate::resolvent::{
    pointwise_resolve, solve_resolvent_with_guess, ResolventProblem, SolveOptions,
};

/// Magnitudes below this are flushed to exact zero after every step: the
/// exact damping flow genuinely reaches zero, and denormals only slow the
/// FFT down without carrying information.
pub const ZERO_FLUSH: f64 = 1e-300;
/// Run aborts when the L^2 norm exceeds this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
/// Extinction stop requires the mass threshold crossing to be sustained
/// for this many consecutive records.
pub const EXTINCTION_SUSTAIN: usize = 3;
/// Retry cap for halving dt when an implicit solve fails to converge.
pub const DT_HALVING_CAP: u32 = 8;

/// Forcing term f(t, x).
#[derive(Debug, Clone)]
pub enum SourceTerm {
    Zero,
    /// f(t, x) = envelope(t) * spatial(x), cut off for t > support_end.
    Separable {
        spatial: Field,
        envelope: Envelope,
        support_end: f64,
    },
    /// ||f(t)||_{L^2}^2 = eps_star * (t0 - t)_+^{source_exponent} exactly:
    /// the spatial profile is normalized at construction and scaled by
    /// sqrt(eps_star) * (t0 - t)_+^{source_exponent/2}.
    VanishingProfile {
        spatial: Field,
        t0: f64,
        eps_star: f64,
        source_exponent: f64,
    },
}

/// Named temporal envelopes for separable sources.
#[derive(Debug, Clone, Copy)]
pub enum Envelope {
    Constant(f64),
    /// amplitude * exp(-rate * t), rate >= 0.
    ExpDecay { amplitude: f64, rate: f64 },
}

impl Envelope {
    fn eval(&self, t: f64) -> f64 {
        match *self {
            Envelope::Constant(c) => c,
            Envelope::ExpDecay { amplitude, rate } => amplitude * (-rate * t).exp(),
        }
    }
}

impl SourceTerm {
    pub fn zero() -> SourceTerm {
        SourceTerm::Zero
    }

    pub fn separable(spatial: Field, envelope: Envelope, support_end: f64) -> Result<SourceTerm> {
        if !(support_end >= 0.0) {
            return Err(Error::domain(format!(
                "source support end must be nonnegative, got {support_end}"
            )));
        }
        Ok(SourceTerm::Separable {
            spatial,
            envelope,
            support_end,
        })
    }

    /// Normalizes `spatial` to unit L^2 norm so the stated norm identity is
    /// exact by construction.
    pub fn vanishing_profile(
        spatial: Field,
        t0: f64,
        eps_star: f64,
        source_exponent: f64,
    ) -> Result<SourceTerm> {
        if !(t0 >= 0.0) || !t0.is_finite() {
            return Err(Error::domain(format!(
                "support end time must be finite and nonnegative, got {t0}"
            )));
        }
        if !(eps_star > 0.0) || !eps_star.is_finite() {
            return Err(Error::domain(format!(
                "eps_star must be positive and finite, got {eps_star}"
            )));
        }
        if !(source_exponent > 0.0) || !source_exponent.is_finite() {
            return Err(Error::domain(format!(
                "source exponent must be positive and finite, got {source_exponent}"
            )));
        }
        let norm = lp_norm(&spatial, 2.0)?;
        if norm == 0.0 {
            return Err(Error::domain(
                "vanishing-profile source needs a nonzero spatial shape".to_string(),
            ));
        }
        let mut spatial = spatial;
        for v in spatial.values_mut() {
            *v /= norm;
        }
        Ok(SourceTerm::VanishingProfile {
            spatial,
            t0,
            eps_star,
            source_exponent,
        })
    }

    pub fn is_zero_kind(&self) -> bool {
        matches!(self, SourceTerm::Zero)
    }
}

/// Evaluates the source at time `t` on `grid`.
pub fn source_eval(source: &SourceTerm, t: f64, grid: &PeriodicGrid) -> Result<Field> {
    match source {
        SourceTerm::Zero => Ok(Field::zeros(grid)),
        SourceTerm::Separable {
            spatial,
            envelope,
            support_end,
        } => {
            if !spatial.grid().same_grid(grid) {
                return Err(Error::GridMismatch);
            }
            if t > *support_end {
                return Ok(Field::zeros(grid));
            }
            let s = envelope.eval(t);
            let mut out = spatial.clone();
            for v in out.values_mut() {
                *v *= s;
            }
            Ok(out)
        }
        SourceTerm::VanishingProfile {
            spatial,
            t0,
            eps_star,
            source_exponent,
        } => {
            if !spatial.grid().same_grid(grid) {
                return Err(Error::GridMismatch);
            }
            let gap = t0 - t;
            if gap <= 0.0 {
                return Ok(Field::zeros(grid));
            }
            let scale = eps_star.sqrt() * gap.powf(0.5 * source_exponent);
            let mut out = spatial.clone();
            for v in out.values_mut() {
                *v *= scale;
            }
            Ok(out)
        }
    }
}

/// Exact pointwise solution of i*u_t + a*g(u) = 0 over a step of length dt.
/// In polar form r' = -Im(a)*r^m and theta' = Re(a)*r^{m-1}, giving
///
/// ```text
/// r(dt)     = (r0^{1-m} - (1-m)*Im(a)*dt)_+^{1/(1-m)},
/// theta(dt) = theta0 + (Re(a)/Im(a)) * ln(r0/r(dt)),
/// ```
///
/// with exact zero once r0^{1-m} <= (1-m)*Im(a)*dt.
pub fn nonlinear_flow_exact(params: ConeParams, u: &Field, dt: f64) -> Field {
    let m = params.m();
    let a = params.a();
    let beta = a.im;
    let alpha = a.re;
    let one_m = 1.0 - m;
    let mut out = u.clone();
    for v in out.values_mut() {
        let r0 = v.norm();
        if r0 == 0.0 {
            continue;
        }
        let s = r0.powf(one_m) - one_m * beta * dt;
        if s <= 0.0 {
            *v = Complex64::default();
            continue;
        }
        let r = s.powf(1.0 / one_m);
        let mut scale = Complex64::new(r / r0, 0.0);
        if alpha != 0.0 {
            let dtheta = (alpha / beta) * (r0 / r).ln();
            scale *= Complex64::from_polar(1.0, dtheta);
        }
        *v *= scale;
    }
    out
}

/// Exact free flow of i*u_t + lap(u) = 0: the Fourier multiplier
/// exp(-i*|k|^2*dt). Unitary, hence mass-preserving.
pub fn linear_flow_exact(u: &Field, dt: f64) -> Field {
    let grid = u.grid().clone();
    let mut data = u.values().to_vec();
    grid.fft_forward(&mut data);
    for (v, &ks) in data.iter_mut().zip(grid.k_squared()) {
        *v *= Complex64::from_polar(1.0, -ks * dt);
    }
    grid.fft_inverse(&mut data);
    Field::from_values(&grid, data).expect("length preserved")
}

/// One backward Euler step: solves (I + dt*A)u^{n+1} = u^n - i*dt*f^{n+1},
/// i.e. the resolvent problem with lambda = dt, b0 = 1 and right-hand side
/// F = -i*u^n - dt*f^{n+1}, warm-started from u^n.
pub fn step_backward_euler(
    u_n: &Field,
    dt: f64,
    f_next: &Field,
    params: ConeParams,
    opts: &SolveOptions,
) -> Result<Field> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::domain(format!(
            "time step must be positive and finite, got {dt}"
        )));
    }
    if !u_n.grid().same_grid(f_next.grid()) {
        return Err(Error::GridMismatch);
    }
    let mut rhs = Field::zeros(u_n.grid());
    let minus_i = Complex64::new(0.0, -1.0);
    for ((r, &uv), &fv) in rhs
        .values_mut()
        .iter_mut()
        .zip(u_n.values())
        .zip(f_next.values())
    {
        *r = minus_i * uv - dt * fv;
    }
    let problem = ResolventProblem::new(dt, 1.0, params, rhs)?;
    let sol = solve_resolvent_with_guess(&problem, opts, u_n)?;
    Ok(sol.u)
}

/// One Strang step over [t_n, t_n + dt]: half damping flow, full free flow,
/// midpoint source kick -i*dt*f(t_n + dt/2), half damping flow.
pub fn step_strang(
    u_n: &Field,
    t_n: f64,
    dt: f64,
    source: &SourceTerm,
    params: ConeParams,
) -> Result<Field> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::domain(format!(
            "time step must be positive and finite, got {dt}"
        )));
    }
    let mut u = nonlinear_flow_exact(params, u_n, 0.5 * dt);
    u = linear_flow_exact(&u, dt);
    apply_source_kick(&mut u, source, t_n + 0.5 * dt, dt)?;
    Ok(nonlinear_flow_exact(params, &u, 0.5 * dt))
}

fn apply_source_kick(u: &mut Field, source: &SourceTerm, t: f64, dt: f64) -> Result<()> {
    if source.is_zero_kind() {
        return Ok(());
    }
    let f = source_eval(source, t, u.grid())?;
    let minus_i_dt = Complex64::new(0.0, -dt);
    for (v, &fv) in u.values_mut().iter_mut().zip(f.values()) {
        *v += minus_i_dt * fv;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    BackwardEuler,
    Strang,
}

/// Full description of one evolution run.
#[derive(Debug, Clone)]
pub struct EvolveConfig {
    pub params: ConeParams,
    pub u0: Field,
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    pub source: SourceTerm,
    pub solve: SolveOptions,
    /// Diagnostics are recorded every `cadence` steps (plus the initial and
    /// final states).
    pub cadence: usize,
    /// Extinction threshold relative to the initial mass.
    pub extinction_threshold: f64,
    /// Requested snapshot times; each is emitted at the first step boundary
    /// at or past the requested time.
    pub snapshot_times: Vec<f64>,
    /// Test hook: false turns the equation into the pointwise damping ODE,
    /// for which the exact solution is known.
    pub laplacian_enabled: bool,
    /// Track max_n ||u^{n+1} - u^n|| / dt across the run. For unforced runs
    /// this discrete difference quotient is bounded by ||lap(u0) + a*g(u0)||,
    /// the time-derivative bound at t = 0.
    pub track_quotient: bool,
}

impl EvolveConfig {
    pub fn new(params: ConeParams, u0: Field, scheme: Scheme, dt: f64, t_end: f64) -> EvolveConfig {
        EvolveConfig {
            params,
            u0,
            scheme,
            dt,
            t_end,
            source: SourceTerm::Zero,
            solve: SolveOptions::default(),
            cadence: 1,
            extinction_threshold: 1e-12,
            snapshot_times: Vec::new(),
            laplacian_enabled: true,
            track_quotient: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::validation(format!(
                "time step must be positive and finite, got {}",
                self.dt
            )));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::validation(format!(
                "end time must be positive and finite, got {}",
                self.t_end
            )));
        }
        if self.cadence == 0 {
            return Err(Error::validation("record cadence must be at least 1".to_string()));
        }
        if !(self.extinction_threshold > 0.0) {
            return Err(Error::validation(format!(
                "extinction threshold must be positive, got {}",
                self.extinction_threshold
            )));
        }
        match &self.source {
            SourceTerm::Separable { spatial, .. } | SourceTerm::VanishingProfile { spatial, .. } => {
                if !spatial.grid().same_grid(self.u0.grid()) {
                    return Err(Error::GridMismatch);
                }
            }
            SourceTerm::Zero => {}
        }
        Ok(())
    }
}

/// Trajectory output: the diagnostics series plus any requested snapshots.
#[derive(Debug, Clone)]
pub struct EvolveResult {
    pub series: DiagnosticsSeries,
    pub snapshots: Vec<(f64, Field)>,
    /// Largest ||u^{n+1} - u^n|| / dt seen, when tracking was requested.
    pub max_step_quotient: Option<f64>,
}

/// L^2 distance (h^N * sum |u - v|^2)^{1/2} between two fields on one grid.
pub(crate) fn l2_distance(u: &Field, v: &Field) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in u.values().iter().zip(v.values()) {
        acc += (a - b).norm_sqr();
    }
    (u.grid().cell_volume() * acc).sqrt()
}

/// Advances one step of length dt, halving on implicit-solve failure up to
/// [`DT_HALVING_CAP`] times (each half advances recursively).
pub(crate) fn advance_step(
    u: &Field,
    t: f64,
    dt: f64,
    config: &EvolveConfig,
    depth: u32,
) -> Result<Field> {
    let attempt = match config.scheme {
        Scheme::BackwardEuler => {
            if config.laplacian_enabled {
                let f_next = source_eval(&config.source, t + dt, u.grid())?;
                step_backward_euler(u, dt, &f_next, config.params, &config.solve)
            } else {
                pointwise_backward_euler(u, t, dt, config)
            }
        }
        Scheme::Strang => {
            if config.laplacian_enabled {
                step_strang(u, t, dt, &config.source, config.params)
            } else {
                // Same composition with the free flow replaced by identity.
                let mut v = nonlinear_flow_exact(config.params, u, 0.5 * dt);
                apply_source_kick(&mut v, &config.source, t + 0.5 * dt, dt)?;
                Ok(nonlinear_flow_exact(config.params, &v, 0.5 * dt))
            }
        }
    };
    match attempt {
        Ok(next) => Ok(next),
        Err(Error::NonConvergence { .. }) if depth < DT_HALVING_CAP => {
            let half = advance_step(u, t, 0.5 * dt, config, depth + 1)?;
            advance_step(&half, t + 0.5 * dt, 0.5 * dt, config, depth + 1)
        }
        Err(e) => Err(e),
    }
}

/// Zero-dispersion backward Euler: with the Laplacian off the implicit step
/// decouples pointwise into c1*w - i*a*q*g(w) = rhs with c1 = 1, q = dt,
/// rhs = i*F = u^n - i*dt*f^{n+1}.
fn pointwise_backward_euler(u: &Field, t: f64, dt: f64, config: &EvolveConfig) -> Result<Field> {
    let f_next = source_eval(&config.source, t + dt, u.grid())?;
    let m = config.params.m();
    let a = config.params.a();
    let mut out = u.clone();
    let minus_i_dt = Complex64::new(0.0, -dt);
    for (v, &fv) in out.values_mut().iter_mut().zip(f_next.values()) {
        let rhs = *v + minus_i_dt * fv;
        *v = pointwise_resolve(1.0, a, dt, m, rhs);
    }
    Ok(out)
}

pub(crate) fn flush_zeros(u: &mut Field) {
    for v in u.values_mut() {
        if v.norm_sqr() < ZERO_FLUSH * ZERO_FLUSH {
            *v = Complex64::default();
        }
    }
}

/// Mask of points in the outer 10% of the box: sup-norm distance from the
/// box center above 0.45*L (a band of width 0.05*L at each face).
fn tail_mask(grid: &PeriodicGrid) -> Vec<bool> {
    let n = grid.n();
    let dims = grid.dims();
    let half = grid.box_length() / 2.0;
    let cut = 0.45 * grid.box_length();
    let h = grid.spacing();
    (0..grid.len())
        .map(|idx| {
            let mut rest = idx;
            for _ in 0..dims {
                let x = (rest % n) as f64 * h;
                if (x - half).abs() > cut {
                    return true;
                }
                rest /= n;
            }
            false
        })
        .collect()
}

fn record(
    series: &mut DiagnosticsSeries,
    t: f64,
    u: &Field,
    source: &SourceTerm,
    params: ConeParams,
    mask: &[bool],
) -> Result<f64> {
    let m = params.m();
    let l2 = lp_norm(u, 2.0)?;
    let mass = l2 * l2;
    let lmp1 = lp_norm(u, m + 1.0)?.powf(m + 1.0);
    let h1 = sobolev_norm(u, 1)?;
    let h2 = sobolev_norm(u, 2)?;
    let source_work = if source.is_zero_kind() {
        0.0
    } else {
        let f = source_eval(source, t, u.grid())?;
        inner(&f, u)?.im
    };
    let tail_mass = if mass > 0.0 {
        let h = u.grid().cell_volume();
        let outer: f64 = u
            .values()
            .iter()
            .zip(mask)
            .filter(|(_, &in_tail)| in_tail)
            .map(|(v, _)| v.norm_sqr())
            .sum();
        outer * h / mass
    } else {
        0.0
    };
    series.push(t, mass, lmp1, h1, h2, source_work, tail_mass)?;
    Ok(mass)
}

/// Runs the configured evolution from t = 0, recording diagnostics, stopping
/// early on sustained extinction, and aborting on numerical divergence.
pub fn evolve(config: &EvolveConfig) -> Result<EvolveResult> {
    config.validate()?;
    let grid = config.u0.grid().clone();
    let mask = tail_mask(&grid);
    let mut series = DiagnosticsSeries::new();
    let mut snapshots = Vec::new();

    let n_steps = (config.t_end / config.dt).round().max(1.0) as usize;
    let mut u = config.u0.clone();
    flush_zeros(&mut u);

    let initial_mass = record(&mut series, 0.0, &u, &config.source, config.params, &mask)?;
    let mut snap_iter = config.snapshot_times.iter().copied().peekable();
    while let Some(&ts) = snap_iter.peek() {
        if ts <= 0.0 {
            snapshots.push((0.0, u.clone()));
            snap_iter.next();
        } else {
            break;
        }
    }
    let divergence_cap = (DIVERGENCE_FACTOR * DIVERGENCE_FACTOR) * initial_mass.max(f64::MIN_POSITIVE);
    let mut sustained = usize::from(initial_mass <= config.extinction_threshold * initial_mass);
    let mut max_quotient: Option<f64> = None;

    for step in 1..=n_steps {
        let t_prev = (step - 1) as f64 * config.dt;
        let t_now = step as f64 * config.dt;
        let u_prev = if config.track_quotient { Some(u.clone()) } else { None };
        u = advance_step(&u, t_prev, config.dt, config, 0)?;
        flush_zeros(&mut u);
        if let Some(prev) = u_prev {
            let q = l2_distance(&u, &prev) / config.dt;
            max_quotient = Some(max_quotient.map_or(q, |cur| cur.max(q)));
        }

        while let Some(&ts) = snap_iter.peek() {
            // First boundary at or after the request; the fuzz only absorbs
            // roundoff in t_now = step*dt, never a whole step.
            if ts <= t_now + 1e-9 * config.dt {
                snapshots.push((t_now, u.clone()));
                snap_iter.next();
            } else {
                break;
            }
        }

        let is_record = step % config.cadence == 0 || step == n_steps;
        if !is_record {
            continue;
        }
        let mass = record(&mut series, t_now, &u, &config.source, config.params, &mask)?;
        if !mass.is_finite() || mass > divergence_cap {
            return Err(Error::Divergence {
                t: t_now,
                message: format!(
                    "L2 norm {:.3e} exceeded {DIVERGENCE_FACTOR:.0e} times its initial value",
                    mass.sqrt()
                ),
            });
        }
        if mass <= config.extinction_threshold * initial_mass {
            sustained += 1;
            if sustained >= EXTINCTION_SUSTAIN {
                break;
            }
        } else {
            sustained = 0;
        }
    }
    Ok(EvolveResult {
        series,
        snapshots,
        max_step_quotient: max_quotient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_grid;

    fn params_i(m: f64) -> ConeParams {
        ConeParams::new(m, Complex64::i()).unwrap()
    }

    fn constant_field(grid: &PeriodicGrid, c: Complex64) -> Field {
        Field::from_fn(grid, |_| c)
    }

    #[test]
    fn nonlinear_flow_closed_form_values() {
        let grid = make_grid(1, 8, 1.0).unwrap();
        let u = constant_field(&grid, Complex64::new(1.0, 0.0));
        // a = i, m = 1/2: pointwise extinction exactly at t = 2.
        let at2 = nonlinear_flow_exact(params_i(0.5), &u, 2.0);
        assert!(at2.values().iter().all(|v| v.norm() == 0.0));
        let at1 = nonlinear_flow_exact(params_i(0.5), &u, 1.0);
        for v in at1.values() {
            assert!((v - Complex64::new(0.25, 0.0)).norm() < 1e-14);
        }
        // a = 1 + i: same modulus, phase shift (Re/Im)*ln(r0/r) = ln 4.
        let p = ConeParams::new(0.5, Complex64::new(1.0, 1.0)).unwrap();
        let rot = nonlinear_flow_exact(p, &u, 1.0);
        let expect = Complex64::from_polar(0.25, 4.0f64.ln());
        for v in rot.values() {
            assert!((v - expect).norm() < 1e-14);
        }
        // dt = 0 is the identity.
        let id = nonlinear_flow_exact(params_i(0.5), &u, 0.0);
        for (v, w) in id.values().iter().zip(u.values()) {
            assert_eq!(v, w);
        }
    }

    #[test]
    fn nonlinear_flow_matches_radial_integration() {
        // RK4 on r' = -Im(a) r^m from r0 = 1.3, m = 0.3, dt = 0.7.
        let m = 0.3;
        let beta = 0.8;
        let mut r = 1.3f64;
        let steps = 20000;
        let h = 0.7 / steps as f64;
        for _ in 0..steps {
            let f = |x: f64| -beta * x.max(0.0).powf(m);
            let k1 = f(r);
            let k2 = f(r + 0.5 * h * k1);
            let k3 = f(r + 0.5 * h * k2);
            let k4 = f(r + h * k3);
            r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let grid = make_grid(1, 8, 1.0).unwrap();
        let u = constant_field(&grid, Complex64::new(1.3, 0.0));
        let p = ConeParams::new(m, Complex64::new(0.0, beta)).unwrap();
        let out = nonlinear_flow_exact(p, &u, 0.7);
        assert!((out.values()[0].re - r).abs() < 1e-9, "{} vs {r}", out.values()[0].re);
    }

    #[test]
    fn linear_flow_single_mode_and_unitarity() {
        let grid = make_grid(1, 64, 2.0 * std::f64::consts::PI).unwrap();
        let u = Field::from_fn(&grid, |x| Complex64::from_polar(1.0, x[0]));
        // k = 1: phase e^{-i*pi} = -1 after dt = pi.
        let moved = linear_flow_exact(&u, std::f64::consts::PI);
        for (mv, uv) in moved.values().iter().zip(u.values()) {
            assert!((mv + uv).norm() < 1e-12);
        }
        let c = constant_field(&grid, Complex64::new(0.3, -0.4));
        let cm = linear_flow_exact(&c, 1.7);
        for (a, b) in cm.values().iter().zip(c.values()) {
            assert!((a - b).norm() < 1e-14);
        }
        let r = crate::domain::band_limited_random(&grid, 10, 2.0, 3).unwrap();
        let rm = linear_flow_exact(&r, 0.37);
        let n0 = lp_norm(&r, 2.0).unwrap();
        let n1 = lp_norm(&rm, 2.0).unwrap();
        assert!((n1 - n0).abs() < 1e-13 * n0);
    }

    #[test]
    fn backward_euler_zero_stays_zero_and_mass_decreases() {
        let grid = make_grid(1, 64, 20.0).unwrap();
        let zero = Field::zeros(&grid);
        let opts = SolveOptions::default();
        let z1 = step_backward_euler(&zero, 0.01, &zero, params_i(0.5), &opts).unwrap();
        assert!(z1.values().iter().all(|v| v.norm() == 0.0));

        let u = crate::domain::band_limited_random(&grid, 6, 1.5, 11).unwrap();
        let next = step_backward_euler(&u, 0.01, &zero, params_i(0.5), &opts).unwrap();
        assert!(lp_norm(&next, 2.0).unwrap() <= lp_norm(&u, 2.0).unwrap());
    }

    #[test]
    fn source_eval_vanishing_profile_norms() {
        let grid = make_grid(1, 64, 20.0).unwrap();
        let shape = Field::from_fn(&grid, |x| Complex64::new((x[0] - 10.0).cos(), 0.3));
        let eps = 0.02;
        let t0 = 1.0;
        let src = SourceTerm::vanishing_profile(shape, t0, eps, 6.0).unwrap();
        let at0 = source_eval(&src, 0.0, &grid).unwrap();
        assert!((lp_norm(&at0, 2.0).unwrap() - eps.sqrt()).abs() < 1e-12);
        let at_t0 = source_eval(&src, t0, &grid).unwrap();
        assert!(at_t0.values().iter().all(|v| v.norm() == 0.0));
        let at_half = source_eval(&src, 0.5 * t0, &grid).unwrap();
        let n2 = lp_norm(&at_half, 2.0).unwrap().powi(2);
        assert!((n2 - eps * 0.5f64.powi(6)).abs() < 1e-14);
        let after = source_eval(&src, 2.0, &grid).unwrap();
        assert!(after.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn source_eval_separable_cutoff() {
        let grid = make_grid(1, 32, 10.0).unwrap();
        let shape = constant_field(&grid, Complex64::new(1.0, 0.0));
        let src = SourceTerm::separable(shape, Envelope::Constant(2.0), 1.5).unwrap();
        let f = source_eval(&src, 1.0, &grid).unwrap();
        assert!((f.values()[0].re - 2.0).abs() < 1e-15);
        let g = source_eval(&src, 1.6, &grid).unwrap();
        assert!(g.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn zero_dispersion_strang_tracks_closed_form() {
        let grid = make_grid(1, 32, 10.0).unwrap();
        let u0 = Field::from_fn(&grid, |x| Complex64::from_polar(0.5 + (x[0] / 10.0), x[0]));
        let params = ConeParams::new(0.5, Complex64::new(0.5, 1.0)).unwrap();
        let mut config = EvolveConfig::new(params, u0.clone(), Scheme::Strang, 0.01, 1.0);
        config.laplacian_enabled = false;
        let out = evolve(&config).unwrap();
        // Composition of exact sub-flows with no dispersion is itself exact:
        // compare the mass series against the closed form at each record.
        for (i, &t) in out.series.times().iter().enumerate() {
            let exact = nonlinear_flow_exact(params, &u0, t);
            let l2 = lp_norm(&exact, 2.0).unwrap();
            let mass = out.series.mass()[i];
            assert!(
                (mass - l2 * l2).abs() <= 1e-10 * l2.max(1.0) * l2.max(1.0),
                "t = {t}: {mass} vs {}",
                l2 * l2
            );
        }
    }

    #[test]
    fn zero_dispersion_backward_euler_reaches_zero() {
        let grid = make_grid(1, 16, 4.0).unwrap();
        let u0 = constant_field(&grid, Complex64::new(1.0, 0.0));
        let mut config = EvolveConfig::new(params_i(0.5), u0, Scheme::BackwardEuler, 0.01, 3.0);
        config.laplacian_enabled = false;
        let out = evolve(&config).unwrap();
        let t_ext = crate::diagnostics::detect_extinction(&out.series, 1e-12).unwrap();
        assert!((t_ext - 2.0).abs() <= 0.05, "extinction at {t_ext}");
    }

    #[test]
    fn evolve_zero_initial_is_identically_zero() {
        let grid = make_grid(1, 16, 4.0).unwrap();
        let config = EvolveConfig::new(
            params_i(0.5),
            Field::zeros(&grid),
            Scheme::Strang,
            0.1,
            1.0,
        );
        let out = evolve(&config).unwrap();
        assert!(out.series.mass().iter().all(|&y| y == 0.0));
    }

    #[test]
    fn evolve_gaussian_mass_strictly_decreasing() {
        let grid = make_grid(1, 128, 20.0).unwrap();
        let u0 = Field::from_fn(&grid, |x| {
            Complex64::new((-(x[0] - 10.0f64).powi(2) / 2.0).exp(), 0.0)
        });
        let mut config = EvolveConfig::new(params_i(0.5), u0, Scheme::BackwardEuler, 0.01, 0.3);
        config.cadence = 5;
        let out = evolve(&config).unwrap();
        let mass = out.series.mass();
        assert!(mass.len() >= 6);
        for w in mass.windows(2) {
            assert!(w[1] < w[0], "mass not strictly decreasing: {w:?}");
        }
    }

    #[test]
    fn evolve_detects_divergence_from_pumping_source() {
        let grid = make_grid(1, 16, 4.0).unwrap();
        let u0 = constant_field(&grid, Complex64::new(1e-3, 0.0));
        let shape = constant_field(&grid, Complex64::new(1.0, 0.0));
        let src = SourceTerm::separable(shape, Envelope::Constant(1e9), f64::INFINITY).unwrap();
        let mut config = EvolveConfig::new(params_i(0.5), u0, Scheme::Strang, 0.1, 5.0);
        config.source = src;
        match evolve(&config) {
            Err(Error::Divergence { t, .. }) => assert!(t > 0.0),
            other => panic!("expected divergence abort, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn evolve_snapshot_times_are_honored() {
        let grid = make_grid(1, 16, 4.0).unwrap();
        let u0 = constant_field(&grid, Complex64::new(0.5, 0.0));
        let mut config = EvolveConfig::new(params_i(0.5), u0, Scheme::Strang, 0.1, 1.0);
        config.snapshot_times = vec![0.0, 0.35, 1.0];
        let out = evolve(&config).unwrap();
        let times: Vec<f64> = out.snapshots.iter().map(|(t, _)| *t).collect();
        assert_eq!(times.len(), 3);
        assert_eq!(times[0], 0.0);
        assert!((times[1] - 0.4).abs() < 1e-12);
        assert!((times[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn difference_quotient_bounded_by_initial_generator_norm() {
        let grid = make_grid(1, 64, 20.0).unwrap();
        let params = ConeParams::new(0.5, Complex64::new(0.3, 1.0)).unwrap();
        let u0 = Field::from_fn(&grid, |x| {
            let d = x[0] - 10.0;
            Complex64::new((-0.5 * d * d).exp(), 0.0)
        });
        // For the unforced backward Euler chain the resolvent is nonexpansive,
        // so every quotient ||u^{n+1}-u^n||/dt is bounded by the first, which
        // in turn is bounded by ||lap(u0) + a*g(u0)||.
        let lap = crate::domain::laplacian(&u0);
        let mut gen = Field::zeros(&grid);
        for ((gv, &lv), &uv) in gen
            .values_mut()
            .iter_mut()
            .zip(lap.values())
            .zip(u0.values())
        {
            *gv = lv + params.a() * crate::cone::g_apply(params.m(), uv);
        }
        let bound = lp_norm(&gen, 2.0).unwrap();
        let mut config = EvolveConfig::new(params, u0, Scheme::BackwardEuler, 1e-2, 0.5);
        config.track_quotient = true;
        let out = evolve(&config).unwrap();
        let q = out.max_step_quotient.unwrap();
        assert!(q > 0.0);
        assert!(q <= bound * 1.05, "quotient {q} above generator bound {bound}");
    }

    #[test]
    fn strang_mass_identity_residual_shrinks_quadratically() {
        // Aggregated trapezoid residual of the mass identity at cadence 1
        // should quarter when dt halves for the second-order scheme.
        let grid = make_grid(1, 64, 20.0).unwrap();
        let u0 = Field::from_fn(&grid, |x| {
            Complex64::new(
                (-(x[0] - 10.0f64).powi(2) / 2.0).exp() * 1.5,
                0.4 * (x[0] * 0.6).sin(),
            )
        });
        let params = ConeParams::new(0.5, Complex64::new(0.4, 1.0)).unwrap();
        let mut totals = Vec::new();
        for &dt in &[2e-3, 1e-3] {
            let config = EvolveConfig::new(params, u0.clone(), Scheme::Strang, dt, 0.25);
            let out = evolve(&config).unwrap();
            let res = crate::diagnostics::mass_balance_residual(&out.series, params);
            totals.push(res.iter().sum::<f64>().abs());
        }
        let ratio = totals[1] / totals[0];
        assert!((ratio - 0.25).abs() < 0.05, "ratio {ratio}");
    }
}
