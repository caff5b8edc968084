//! Configuration, persistence, the shipped experiment catalog, and the
//! randomized verification suites.
//!
//! A run is described by a line-oriented `key = value` text with `[section]`
//! headers. [`parse_config`] turns that text into a fully validated
//! [`RunConfig`]; [`run_scenario`] executes it, writes `series.csv`,
//! `summary.txt`, optional snapshot binaries and a plot script into the run
//! directory, and returns a [`RunSummary`] whose flags record every assertion
//! the config declared. [`sweep`] re-runs one config with a single key varied
//! over a list of values, in parallel. [`verify_suite`] runs seeded property
//! suites over the mathematical layers and reports worst margins instead of
//! panicking.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cone::{cone_contains, g_apply, lp_check, rotate, ConeParams};
use crate::diagnostics::{
    delta_exponent, detect_extinction, extinction_report, fit_decay, mass_balance_residual,
    monotone_pairing, DecayFit, DecayKind, DiagnosticsSeries, ExtinctionReport,
};
use crate::domain::{
    band_limited_random, laplacian, lp_norm, make_grid, write_field, Field, PeriodicGrid,
};
use crate::error::{Error, Result};
use crate::evolve::{
    advance_step, evolve, flush_zeros, l2_distance, linear_flow_exact, nonlinear_flow_exact,
    Envelope, EvolveConfig, EvolveResult, Scheme, SourceTerm,
};
use crate::resolvent::{residual_floor, solve_resolvent, ResolventProblem, SolveMode, SolveOptions};

/// Initial data shapes constructible from config text.
#[derive(Debug, Clone)]
pub enum InitialSpec {
    /// amplitude * exp(-|x - center|^2 / (2 width^2)), centered in the box.
    Gaussian { amplitude: f64, width: f64 },
    /// Seeded random field supported on |k_axis| <= kmax with L^2 norm
    /// `amplitude`.
    BandLimited { kmax: usize, amplitude: f64 },
    Constant { value: Complex64 },
    Zero,
}

/// Source terms constructible from config text. Spatial profiles are
/// Gaussians centered in the box.
#[derive(Debug, Clone)]
pub enum SourceSpec {
    Zero,
    /// f(t,x) = amplitude * exp(-rate t) * gaussian(x), zero past
    /// support_end. rate = 0 gives a constant envelope.
    Separable {
        amplitude: f64,
        rate: f64,
        support_end: f64,
        width: f64,
    },
    /// ||f(t)||^2 = eps_star * (t0 - t)_+^sigma with sigma determined by
    /// (dims, ell, m); requires delta < 1.
    VanishingProfile { t0: f64, eps_star: f64, width: f64 },
}

/// What the report section asked the run to check and fit.
#[derive(Debug, Clone)]
pub struct ReportSpec {
    /// Sobolev order used for the extinction exponent delta.
    pub ell: usize,
    /// Relative mass threshold treated as extinction.
    pub extinction_threshold: f64,
    /// Records before this time are excluded from the extinction-constant fit.
    pub fit_from: f64,
    /// Assert extinction happened and T_num <= T_star_bound.
    pub require_extinction: bool,
    pub decay_kind: Option<DecayKind>,
    /// Fit window for the decay fit.
    pub window: Option<(f64, f64)>,
    pub require_r2: f64,
    /// Predicted decay exponent of the L^2 norm; the mass series decays with
    /// twice this exponent, which is what the fitted value is compared to.
    pub expected_exponent: Option<f64>,
    pub exponent_tol: f64,
    /// Assert final mass <= this fraction of the initial mass.
    pub final_mass_ratio: Option<f64>,
    /// Run a second perturbed trajectory and record the worst ratio
    /// ||u - v||(t) / ||u0 - v0||.
    pub check_contraction: bool,
    /// L^2 norm of the seeded band-limited perturbation.
    pub perturbation: f64,
    pub perturbation_kmax: usize,
}

/// A fully validated run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub name: String,
    pub m: f64,
    pub a: Complex64,
    pub laplacian_enabled: bool,
    pub dims: usize,
    pub n: usize,
    pub box_length: f64,
    pub initial: InitialSpec,
    pub seed: u64,
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    pub cadence: usize,
    pub source: SourceSpec,
    pub solve: SolveOptions,
    pub report: ReportSpec,
    pub snapshot_times: Vec<f64>,
    pub output_dir: PathBuf,
    /// FNV-1a hash of the config text this was parsed from.
    pub config_hash: u64,
}

/// One named pass/fail assertion outcome.
#[derive(Debug, Clone)]
pub struct Flag {
    pub name: &'static str,
    pub pass: bool,
}

/// Everything a run reports back, mirrored into `summary.txt`.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub scenario: String,
    pub config_hash: u64,
    pub wall_clock_s: f64,
    pub extinction: ExtinctionReport,
    pub decay: Option<DecayFit>,
    /// Largest |per-interval mass-balance residual| over the run.
    pub max_mass_residual: f64,
    /// Largest discrete difference quotient ||u^{n+1}-u^n||/dt (unforced runs).
    pub max_step_quotient: Option<f64>,
    /// ||lap(u0) + a g(u0)||, the theoretical bound for the quotient.
    pub ut_bound_rhs: Option<f64>,
    pub worst_contraction_ratio: Option<f64>,
    /// Final recorded mass over initial mass.
    pub final_mass_ratio: f64,
    pub flags: Vec<Flag>,
}

impl RunSummary {
    pub fn all_pass(&self) -> bool {
        self.flags.iter().all(|f| f.pass)
    }
}

/// 64-bit FNV-1a of the raw config text; stable across platforms.
pub fn config_hash(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

/// Raw typed value with the line it came from, for error reporting.
struct RawValue {
    line: usize,
    text: String,
}

struct RawConfig {
    entries: Vec<(String, RawValue)>,
}

impl RawConfig {
    fn take(&mut self, key: &str) -> Option<RawValue> {
        let pos = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(pos).1)
    }
}

fn split_raw(text: &str) -> Result<RawConfig> {
    let mut entries: Vec<(String, RawValue)> = Vec::new();
    let mut problems: Vec<(usize, String)> = Vec::new();
    let mut section = String::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            match inner.strip_suffix(']') {
                Some(name) if !name.trim().is_empty() => {
                    section = name.trim().to_string();
                }
                _ => problems.push((line_no, format!("malformed section header `{line}`"))),
            }
            continue;
        }
        let Some(eq) = line.find('=') else {
            problems.push((line_no, format!("expected `key = value`, got `{line}`")));
            continue;
        };
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        if key.is_empty() {
            problems.push((line_no, "empty key before `=`".to_string()));
            continue;
        }
        if section.is_empty() {
            problems.push((line_no, format!("key `{key}` appears before any [section]")));
            continue;
        }
        let full = format!("{section}.{key}");
        if entries.iter().any(|(k, _)| *k == full) {
            problems.push((line_no, format!("duplicate key `{full}`")));
            continue;
        }
        entries.push((
            full,
            RawValue {
                line: line_no,
                text: value.to_string(),
            },
        ));
    }
    if let Some((line, _)) = problems.first() {
        let message = problems
            .iter()
            .map(|(l, m)| format!("line {l}: {m}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::ConfigParse {
            line: *line,
            message,
        });
    }
    Ok(RawConfig { entries })
}

struct TypedReader<'a> {
    raw: &'a mut RawConfig,
    problems: Vec<(usize, String)>,
}

impl<'a> TypedReader<'a> {
    fn value<T, F>(&mut self, key: &str, parse: F) -> Option<T>
    where
        F: FnOnce(&str) -> std::result::Result<T, String>,
    {
        let rv = self.raw.take(key)?;
        match parse(&rv.text) {
            Ok(v) => Some(v),
            Err(msg) => {
                self.problems
                    .push((rv.line, format!("key `{key}`: {msg}")));
                None
            }
        }
    }

    fn f64(&mut self, key: &str) -> Option<f64> {
        self.value(key, |s| {
            s.parse::<f64>().map_err(|_| format!("`{s}` is not a number"))
        })
    }

    fn usize(&mut self, key: &str) -> Option<usize> {
        self.value(key, |s| {
            s.parse::<usize>()
                .map_err(|_| format!("`{s}` is not a nonnegative integer"))
        })
    }

    fn u64(&mut self, key: &str) -> Option<u64> {
        self.value(key, |s| {
            s.parse::<u64>()
                .map_err(|_| format!("`{s}` is not a nonnegative integer"))
        })
    }

    fn bool(&mut self, key: &str) -> Option<bool> {
        self.value(key, |s| match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("`{s}` is not `true` or `false`")),
        })
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.value(key, |s| Ok(s.to_string()))
    }

    fn complex(&mut self, key: &str) -> Option<Complex64> {
        self.value(key, parse_complex_pair)
    }

    fn f64_list(&mut self, key: &str) -> Option<Vec<f64>> {
        self.value(key, |s| {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| format!("`{}` is not a number", p.trim()))
                })
                .collect()
        })
    }
}

fn parse_complex_pair(s: &str) -> std::result::Result<Complex64, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("`{s}` is not a `re,im` pair"));
    }
    let re = parts[0]
        .parse::<f64>()
        .map_err(|_| format!("`{}` is not a number", parts[0]))?;
    let im = parts[1]
        .parse::<f64>()
        .map_err(|_| format!("`{}` is not a number", parts[1]))?;
    Ok(Complex64::new(re, im))
}

/// Parses and fully validates a config text.
///
/// Syntax problems and unknown keys are reported as a parse error naming
/// every offending line; a config that parses but breaks an invariant gets a
/// validation error listing every violation at once.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let hash = config_hash(text);
    let mut raw = split_raw(text)?;
    let mut r = TypedReader {
        raw: &mut raw,
        problems: Vec::new(),
    };

    let name = r.string("scenario.name");

    let m = r.f64("problem.m");
    let a = r.complex("problem.a");
    let laplacian_enabled = r.bool("problem.laplacian").unwrap_or(true);

    let dims = r.usize("grid.dims");
    let n = r.usize("grid.n");
    let box_length = r.f64("grid.box_length");

    let initial_kind = r.string("initial.kind");
    let initial_amplitude = r.f64("initial.amplitude");
    let initial_width = r.f64("initial.width");
    let initial_kmax = r.usize("initial.kmax");
    let initial_value = r.complex("initial.value");
    let seed = r.u64("initial.seed").unwrap_or(0);

    let scheme = r.value("time.scheme", |s| match s {
        "backward_euler" => Ok(Scheme::BackwardEuler),
        "strang" => Ok(Scheme::Strang),
        _ => Err(format!("`{s}` is not `backward_euler` or `strang`")),
    });
    let dt = r.f64("time.dt");
    let t_end = r.f64("time.t_end");
    let cadence = r.usize("time.cadence").unwrap_or(1);

    let source_kind = r.string("source.kind").unwrap_or_else(|| "zero".into());
    let source_amplitude = r.f64("source.amplitude");
    let source_rate = r.f64("source.rate").unwrap_or(0.0);
    let source_support_end = r.f64("source.support_end");
    let source_width = r.f64("source.width").unwrap_or(1.0);
    let source_t0 = r.f64("source.t0");
    let source_eps = r.f64("source.eps_star");

    let mut solve = SolveOptions::default();
    if let Some(tol) = r.f64("solve.tol") {
        solve.tol = tol;
    }
    if let Some(mi) = r.usize("solve.max_iter") {
        solve.max_iter = mi;
    }
    if let Some(mode) = r.value("solve.mode", |s| match s {
        "picard" => Ok(SolveMode::Picard),
        "newton" => Ok(SolveMode::Newton),
        _ => Err(format!("`{s}` is not `picard` or `newton`")),
    }) {
        solve.mode = mode;
    }

    let ell = r.usize("report.ell");
    let extinction_threshold = r.f64("report.extinction_threshold").unwrap_or(1e-12);
    let fit_from = r.f64("report.fit_from").unwrap_or(0.0);
    let require_extinction = r.bool("report.require_extinction").unwrap_or(false);
    let decay_kind = r.value("report.decay_kind", |s| match s {
        "none" => Ok(None),
        "exp" => Ok(Some(DecayKind::Exponential)),
        "power" => Ok(Some(DecayKind::Power)),
        _ => Err(format!("`{s}` is not `none`, `exp` or `power`")),
    });
    let window = r.value("report.window", |s| {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(format!("`{s}` is not a `start,end` pair"));
        }
        let w0 = parts[0]
            .parse::<f64>()
            .map_err(|_| format!("`{}` is not a number", parts[0]))?;
        let w1 = parts[1]
            .parse::<f64>()
            .map_err(|_| format!("`{}` is not a number", parts[1]))?;
        Ok((w0, w1))
    });
    let require_r2 = r.f64("report.require_r2").unwrap_or(0.99);
    let expected_exponent = r.f64("report.expected_exponent");
    let exponent_tol = r.f64("report.exponent_tol").unwrap_or(0.25);
    let final_mass_ratio = r.f64("report.final_mass_ratio");
    let check_contraction = r.bool("report.check_contraction").unwrap_or(false);
    let perturbation = r.f64("report.perturbation").unwrap_or(0.3);
    let perturbation_kmax = r.usize("report.perturbation_kmax").unwrap_or(4);

    let output_dir = r.string("output.directory");
    let snapshot_times = r.f64_list("output.snapshots").unwrap_or_default();

    // Everything still left in the raw table is an unknown key.
    let mut problems = r.problems;
    for (key, rv) in &raw.entries {
        problems.push((rv.line, format!("unknown key `{key}`")));
    }
    problems.sort_by_key(|(l, _)| *l);
    if let Some((line, _)) = problems.first() {
        let message = problems
            .iter()
            .map(|(l, m)| format!("line {l}: {m}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::ConfigParse {
            line: *line,
            message,
        });
    }

    // Validation: collect every violation, then report them all at once.
    let mut violations: Vec<String> = Vec::new();
    let mut need = |field: &str, present: bool| {
        if !present {
            violations.push(format!("missing required key `{field}`"));
        }
    };
    need("scenario.name", name.is_some());
    need("problem.m", m.is_some());
    need("problem.a", a.is_some());
    need("grid.dims", dims.is_some());
    need("grid.n", n.is_some());
    need("grid.box_length", box_length.is_some());
    need("initial.kind", initial_kind.is_some());
    need("time.scheme", scheme.is_some());
    need("time.dt", dt.is_some());
    need("time.t_end", t_end.is_some());
    need("report.ell", ell.is_some());

    let name = name.unwrap_or_default();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        violations.push(format!(
            "scenario name `{name}` must be nonempty and use only [A-Za-z0-9_]"
        ));
    }

    let m = m.unwrap_or(0.5);
    if !(m > 0.0 && m < 1.0) {
        violations.push(format!("m must lie in (0, 1), got {m}"));
    }
    let a = a.unwrap_or(Complex64::new(0.0, 1.0));
    if (m > 0.0 && m < 1.0) && !cone_contains(m, a) {
        violations.push(format!(
            "coefficient a = {a} is not admissible for m = {m}: require Im a > 0 and \
             2*sqrt(m)*Im a >= (1-m)*|Re a|, strictly when Re a >= 0"
        ));
    }

    let dims = dims.unwrap_or(1);
    let n = n.unwrap_or(2);
    let box_length = box_length.unwrap_or(1.0);
    let grid = match make_grid(dims, n, box_length) {
        Ok(g) => Some(g),
        Err(e) => {
            violations.push(e.to_string());
            None
        }
    };

    let initial = match initial_kind.as_deref() {
        Some("gaussian") => {
            let amplitude = initial_amplitude.unwrap_or(1.0);
            let width = initial_width.unwrap_or(1.0);
            if !(amplitude.is_finite() && amplitude >= 0.0) {
                violations.push(format!(
                    "initial amplitude must be finite and nonnegative, got {amplitude}"
                ));
            }
            if !(width > 0.0) || !width.is_finite() {
                violations.push(format!(
                    "initial width must be positive and finite, got {width}"
                ));
            }
            InitialSpec::Gaussian { amplitude, width }
        }
        Some("band_limited") => {
            let amplitude = initial_amplitude.unwrap_or(1.0);
            let kmax = initial_kmax.unwrap_or(1);
            if !(amplitude.is_finite() && amplitude >= 0.0) {
                violations.push(format!(
                    "initial amplitude must be finite and nonnegative, got {amplitude}"
                ));
            }
            if kmax == 0 || kmax >= n / 2 {
                violations.push(format!(
                    "band limit kmax must satisfy 1 <= kmax < n/2 = {}, got {kmax}",
                    n / 2
                ));
            }
            InitialSpec::BandLimited { kmax, amplitude }
        }
        Some("constant") => InitialSpec::Constant {
            value: initial_value.unwrap_or(Complex64::new(1.0, 0.0)),
        },
        Some("zero") => InitialSpec::Zero,
        Some(other) => {
            violations.push(format!(
                "initial kind must be gaussian, band_limited, constant or zero, got `{other}`"
            ));
            InitialSpec::Zero
        }
        None => InitialSpec::Zero,
    };

    let dt = dt.unwrap_or(1.0);
    if !(dt > 0.0) || !dt.is_finite() {
        violations.push(format!("time step must be positive and finite, got {dt}"));
    }
    let t_end = t_end.unwrap_or(1.0);
    if !(t_end > 0.0) || !t_end.is_finite() {
        violations.push(format!("end time must be positive and finite, got {t_end}"));
    }
    if cadence == 0 {
        violations.push("record cadence must be at least 1".to_string());
    }
    let ell = ell.unwrap_or(1);
    if !(ell == 1 || ell == 2) {
        violations.push(format!("Sobolev order ell must be 1 or 2, got {ell}"));
    }

    let source = match source_kind.as_str() {
        "zero" => SourceSpec::Zero,
        "separable" => {
            let amplitude = source_amplitude.unwrap_or(0.0);
            let support_end = source_support_end.unwrap_or(t_end);
            if !amplitude.is_finite() {
                violations.push(format!("source amplitude must be finite, got {amplitude}"));
            }
            if !(source_rate >= 0.0) || !source_rate.is_finite() {
                violations.push(format!(
                    "source rate must be finite and nonnegative, got {source_rate}"
                ));
            }
            if !(support_end >= 0.0) {
                violations.push(format!(
                    "source support end must be nonnegative, got {support_end}"
                ));
            }
            if !(source_width > 0.0) || !source_width.is_finite() {
                violations.push(format!(
                    "source width must be positive and finite, got {source_width}"
                ));
            }
            SourceSpec::Separable {
                amplitude,
                rate: source_rate,
                support_end,
                width: source_width,
            }
        }
        "vanishing_profile" => {
            let t0 = source_t0.unwrap_or(1.0);
            let eps_star = source_eps.unwrap_or(1e-3);
            if !(t0 > 0.0) || !t0.is_finite() {
                violations.push(format!(
                    "source t0 must be positive and finite, got {t0}"
                ));
            }
            if !(eps_star > 0.0) || !eps_star.is_finite() {
                violations.push(format!(
                    "source eps_star must be positive and finite, got {eps_star}"
                ));
            }
            if !(source_width > 0.0) || !source_width.is_finite() {
                violations.push(format!(
                    "source width must be positive and finite, got {source_width}"
                ));
            }
            if (ell == 1 || ell == 2) && (m > 0.0 && m < 1.0) {
                match delta_exponent(dims.max(1), ell, m) {
                    Ok(exps) if exps.delta >= 1.0 => violations.push(format!(
                        "vanishing-profile source needs delta < 1 (N < 2*ell), but \
                         delta = {} for N = {dims}, ell = {ell}",
                        exps.delta
                    )),
                    Ok(_) => {}
                    Err(e) => violations.push(e.to_string()),
                }
            }
            SourceSpec::VanishingProfile {
                t0,
                eps_star,
                width: source_width,
            }
        }
        other => {
            violations.push(format!(
                "source kind must be zero, separable or vanishing_profile, got `{other}`"
            ));
            SourceSpec::Zero
        }
    };

    if !(solve.tol > 0.0) || !solve.tol.is_finite() {
        violations.push(format!(
            "solver tolerance must be positive and finite, got {}",
            solve.tol
        ));
    }
    if solve.max_iter == 0 {
        violations.push("solver iteration cap must be at least 1".to_string());
    }

    if !(extinction_threshold > 0.0) || !extinction_threshold.is_finite() {
        violations.push(format!(
            "extinction threshold must be positive and finite, got {extinction_threshold}"
        ));
    }
    if !(fit_from >= 0.0) || !fit_from.is_finite() {
        violations.push(format!(
            "fit start time must be finite and nonnegative, got {fit_from}"
        ));
    }
    let decay_kind = decay_kind.flatten();
    if decay_kind.is_some() {
        match window {
            Some((w0, w1)) => {
                if !(w1 > w0) || !(w0 >= 0.0) {
                    violations.push(format!(
                        "decay window must satisfy 0 <= start < end, got [{w0}, {w1}]"
                    ));
                }
            }
            None => violations
                .push("report.window is required when decay_kind is not `none`".to_string()),
        }
    }
    if !(require_r2 > 0.0 && require_r2 <= 1.0) {
        violations.push(format!(
            "required r^2 must lie in (0, 1], got {require_r2}"
        ));
    }
    if let Some(e) = expected_exponent {
        if !(e > 0.0) || !e.is_finite() {
            violations.push(format!(
                "expected decay exponent must be positive and finite, got {e}"
            ));
        }
    }
    if !(exponent_tol > 0.0) || !exponent_tol.is_finite() {
        violations.push(format!(
            "exponent tolerance must be positive and finite, got {exponent_tol}"
        ));
    }
    if let Some(ratio) = final_mass_ratio {
        if !(ratio > 0.0) || !ratio.is_finite() {
            violations.push(format!(
                "final mass ratio must be positive and finite, got {ratio}"
            ));
        }
    }
    if check_contraction {
        if !(perturbation > 0.0) || !perturbation.is_finite() {
            violations.push(format!(
                "perturbation norm must be positive and finite, got {perturbation}"
            ));
        }
        if perturbation_kmax == 0 || perturbation_kmax >= n / 2 {
            violations.push(format!(
                "perturbation band limit must satisfy 1 <= kmax < n/2 = {}, got {perturbation_kmax}",
                n / 2
            ));
        }
    }

    let mut snapshot_times = snapshot_times;
    snapshot_times.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    snapshot_times.dedup();
    if snapshot_times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        violations.push("snapshot times must be finite and nonnegative".to_string());
    }

    if !violations.is_empty() {
        return Err(Error::ConfigValidation(violations.join("; ")));
    }
    drop(grid);

    Ok(RunConfig {
        output_dir: output_dir
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs").join(&name)),
        name,
        m,
        a,
        laplacian_enabled,
        dims,
        n,
        box_length,
        initial,
        seed,
        scheme: scheme.unwrap_or(Scheme::BackwardEuler),
        dt,
        t_end,
        cadence,
        source,
        solve,
        report: ReportSpec {
            ell,
            extinction_threshold,
            fit_from,
            require_extinction,
            decay_kind,
            window,
            require_r2,
            expected_exponent,
            exponent_tol,
            final_mass_ratio,
            check_contraction,
            perturbation,
            perturbation_kmax,
        },
        snapshot_times,
        config_hash: hash,
    })
}

// ---------------------------------------------------------------------------
// Realization of config pieces on a grid
// ---------------------------------------------------------------------------

fn centered_gaussian(grid: &PeriodicGrid, amplitude: f64, width: f64) -> Field {
    let c = 0.5 * grid.box_length();
    let dims = grid.dims();
    let inv = 1.0 / (2.0 * width * width);
    Field::from_fn(grid, |x| {
        let mut d2 = 0.0;
        for xc in x.iter().take(dims) {
            let d = xc - c;
            d2 += d * d;
        }
        Complex64::new(amplitude * (-d2 * inv).exp(), 0.0)
    })
}

fn build_initial(grid: &PeriodicGrid, spec: &InitialSpec, seed: u64) -> Result<Field> {
    match spec {
        InitialSpec::Gaussian { amplitude, width } => {
            Ok(centered_gaussian(grid, *amplitude, *width))
        }
        InitialSpec::BandLimited { kmax, amplitude } => {
            band_limited_random(grid, *kmax, *amplitude, seed)
        }
        InitialSpec::Constant { value } => Ok(Field::from_fn(grid, |_| *value)),
        InitialSpec::Zero => Ok(Field::zeros(grid)),
    }
}

fn build_source(
    grid: &PeriodicGrid,
    spec: &SourceSpec,
    dims: usize,
    ell: usize,
    m: f64,
) -> Result<SourceTerm> {
    match spec {
        SourceSpec::Zero => Ok(SourceTerm::zero()),
        SourceSpec::Separable {
            amplitude,
            rate,
            support_end,
            width,
        } => {
            let spatial = centered_gaussian(grid, 1.0, *width);
            let envelope = if *rate == 0.0 {
                Envelope::Constant(*amplitude)
            } else {
                Envelope::ExpDecay {
                    amplitude: *amplitude,
                    rate: *rate,
                }
            };
            SourceTerm::separable(spatial, envelope, *support_end)
        }
        SourceSpec::VanishingProfile {
            t0,
            eps_star,
            width,
        } => {
            let exps = delta_exponent(dims, ell, m)?;
            let spatial = centered_gaussian(grid, 1.0, *width);
            SourceTerm::vanishing_profile(spatial, *t0, *eps_star, exps.source_exponent)
        }
    }
}

// ---------------------------------------------------------------------------
// %.17g formatting and series persistence
// ---------------------------------------------------------------------------

/// C-style `%.17g`: 17 significant digits, fixed or scientific by exponent,
/// trailing zeros stripped. 17 digits make the decimal round-trip exact.
fn fmt_g17(value: f64) -> String {
    if value.is_nan() {
        return "nan".to_string();
    }
    if value.is_infinite() {
        return if value > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if value == 0.0 {
        return if value.is_sign_negative() { "-0" } else { "0" }.to_string();
    }
    let sci = format!("{:.16e}", value);
    let epos = sci.rfind('e').expect("exponential format");
    let exp10: i32 = sci[epos + 1..].parse().expect("exponent digits");
    if !(-4..17).contains(&exp10) {
        let mantissa = strip_zeros(&sci[..epos]);
        format!("{mantissa}e{}{:02}", if exp10 < 0 { "-" } else { "+" }, exp10.abs())
    } else {
        let decimals = (16 - exp10).max(0) as usize;
        strip_zeros(&format!("{value:.decimals$}"))
    }
}

fn strip_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').unwrap_or(s).to_string()
}

const SERIES_HEADER: &str = "t, mass, lmp1, h1, h2, source_work, tail_mass";

fn write_series_csv(path: &Path, series: &DiagnosticsSeries) -> Result<()> {
    let mut out = String::with_capacity(64 * (series.len() + 1));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for i in 0..series.len() {
        let _ = writeln!(
            out,
            "{}, {}, {}, {}, {}, {}, {}",
            fmt_g17(series.times()[i]),
            fmt_g17(series.mass()[i]),
            fmt_g17(series.lmp1()[i]),
            fmt_g17(series.h1()[i]),
            fmt_g17(series.h2()[i]),
            fmt_g17(series.source_work()[i]),
            fmt_g17(series.tail_mass()[i]),
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a `series.csv` produced by [`run_scenario`] back into a series.
pub fn read_series_csv(path: &Path) -> Result<DiagnosticsSeries> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let normalize = |s: &str| {
        s.split(',')
            .map(str::trim)
            .collect::<Vec<_>>()
            .join(", ")
    };
    if normalize(header) != SERIES_HEADER {
        return Err(Error::MalformedFile {
            path: display,
            message: format!("expected header `{SERIES_HEADER}`, got `{header}`"),
        });
    }
    let mut series = DiagnosticsSeries::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 7 {
            return Err(Error::MalformedFile {
                path: display,
                message: format!("row {} has {} columns, expected 7", idx + 2, cols.len()),
            });
        }
        let mut vals = [0.0f64; 7];
        for (slot, col) in vals.iter_mut().zip(&cols) {
            *slot = col.parse::<f64>().map_err(|_| Error::MalformedFile {
                path: display.clone(),
                message: format!("row {}: `{col}` is not a number", idx + 2),
            })?;
        }
        series
            .push(vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], vals[6])
            .map_err(|e| Error::MalformedFile {
                path: display.clone(),
                message: e.to_string(),
            })?;
    }
    Ok(series)
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plots the series.csv sitting next to this script (written by `run`)."""
import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "series.csv")) as fh:
    rows = list(csv.reader(fh))
cols = [c.strip() for c in rows[0]]
data = {c: [float(r[i]) for r in rows[1:]] for i, c in enumerate(cols)}
t = data["t"]

fig, axes = plt.subplots(2, 2, figsize=(11, 8))
floor = 1e-300
axes[0][0].semilogy(t, [max(v, floor) for v in data["mass"]])
axes[0][0].set_title("mass $\\|u\\|_{L^2}^2$")
axes[0][1].semilogy(t, [max(v, floor) for v in data["lmp1"]])
axes[0][1].set_title("$\\|u\\|_{L^{m+1}}^{m+1}$")
axes[1][0].semilogy(t, [max(v, floor) for v in data["h1"]])
axes[1][0].semilogy(t, [max(v, floor) for v in data["h2"]])
axes[1][0].set_title("$H^1$, $H^2$ norms")
axes[1][1].plot(t, data["tail_mass"])
axes[1][1].set_title("tail mass fraction")
for row in axes:
    for ax in row:
        ax.set_xlabel("t")
        ax.grid(True, alpha=0.3)
fig.tight_layout()
fig.savefig(os.path.join(here, "series.png"), dpi=130)
print(os.path.join(here, "series.png"))
"#;

fn write_summary_text(path: &Path, s: &RunSummary, snapshot_times: &[f64]) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), fmt_g17);
    let mut out = String::new();
    let _ = writeln!(out, "scenario = {}", s.scenario);
    let _ = writeln!(out, "config_hash = {:016x}", s.config_hash);
    let _ = writeln!(out, "wall_clock_s = {}", fmt_g17(s.wall_clock_s));
    let _ = writeln!(out, "t_extinction = {}", opt(s.extinction.t_num));
    let _ = writeln!(out, "t_star_bound = {}", fmt_g17(s.extinction.t_star_bound));
    let _ = writeln!(out, "delta = {}", fmt_g17(s.extinction.delta));
    let _ = writeln!(out, "c_emp = {}", fmt_g17(s.extinction.c_emp));
    let _ = writeln!(out, "decay_rate = {}", opt(s.decay.map(|d| d.rate_or_exponent)));
    let _ = writeln!(out, "r2 = {}", opt(s.decay.map(|d| d.r2)));
    let _ = writeln!(out, "max_mass_residual = {}", fmt_g17(s.max_mass_residual));
    let _ = writeln!(out, "max_step_quotient = {}", opt(s.max_step_quotient));
    let _ = writeln!(out, "ut_bound_rhs = {}", opt(s.ut_bound_rhs));
    let _ = writeln!(
        out,
        "worst_contraction_ratio = {}",
        opt(s.worst_contraction_ratio)
    );
    let _ = writeln!(out, "final_mass_ratio = {}", fmt_g17(s.final_mass_ratio));
    let snaps = snapshot_times
        .iter()
        .map(|t| fmt_g17(*t))
        .collect::<Vec<_>>()
        .join(",");
    let _ = writeln!(
        out,
        "snapshot_times = {}",
        if snaps.is_empty() { "none" } else { &snaps }
    );
    let flags = s
        .flags
        .iter()
        .map(|f| format!("{}:{}", f.name, if f.pass { "pass" } else { "fail" }))
        .collect::<Vec<_>>()
        .join(",");
    let _ = writeln!(out, "flags = {}", if flags.is_empty() { "none" } else { &flags });
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Running one scenario
// ---------------------------------------------------------------------------

fn generator_norm(u0: &Field, params: ConeParams, laplacian_enabled: bool) -> f64 {
    let lap = laplacian(u0);
    let mut gen = Field::zeros(u0.grid());
    for ((gv, &lv), &uv) in gen
        .values_mut()
        .iter_mut()
        .zip(lap.values())
        .zip(u0.values())
    {
        let l = if laplacian_enabled { lv } else { Complex64::default() };
        *gv = l + params.a() * g_apply(params.m(), uv);
    }
    lp_norm(&gen, 2.0).unwrap_or(f64::NAN)
}

/// Runs a second trajectory from a seeded perturbed initial state through the
/// same stepper and returns the worst ratio ||u - v||(t) / ||u0 - v0|| over
/// the record times. The resolvent theory puts this at <= 1 exactly.
fn contraction_pair(config: &RunConfig, ev: &EvolveConfig) -> Result<f64> {
    let grid = ev.u0.grid().clone();
    let pert = band_limited_random(
        &grid,
        config.report.perturbation_kmax,
        config.report.perturbation,
        config.seed.wrapping_add(0x9e37_79b9),
    )?;
    let mut v = ev.u0.clone();
    for (vv, &pv) in v.values_mut().iter_mut().zip(pert.values()) {
        *vv += pv;
    }
    let scale0 = l2_distance(&ev.u0, &v);
    if scale0 == 0.0 {
        return Err(Error::domain(
            "contraction check needs a nonzero perturbation".to_string(),
        ));
    }
    let mut u = ev.u0.clone();
    flush_zeros(&mut u);
    flush_zeros(&mut v);
    let n_steps = (ev.t_end / ev.dt).round().max(1.0) as usize;
    let mut worst = 0.0f64;
    for step in 1..=n_steps {
        let t_prev = (step - 1) as f64 * ev.dt;
        u = advance_step(&u, t_prev, ev.dt, ev, 0)?;
        v = advance_step(&v, t_prev, ev.dt, ev, 0)?;
        flush_zeros(&mut u);
        flush_zeros(&mut v);
        if step % ev.cadence == 0 || step == n_steps {
            worst = worst.max(l2_distance(&u, &v) / scale0);
        }
    }
    Ok(worst)
}

/// Executes a validated config: evolves, runs the diagnostics, writes
/// `series.csv`, `summary.txt`, `plot.py` and any snapshots into the run
/// directory, and returns the summary with one flag per declared assertion.
pub fn run_scenario(config: &RunConfig) -> Result<RunSummary> {
    let start = Instant::now();
    let grid = make_grid(config.dims, config.n, config.box_length)?;
    let params = ConeParams::new(config.m, config.a)?;
    let u0 = build_initial(&grid, &config.initial, config.seed)?;
    let source = build_source(&grid, &config.source, config.dims, config.report.ell, config.m)?;

    let mut ev = EvolveConfig::new(params, u0, config.scheme, config.dt, config.t_end);
    ev.source = source;
    ev.solve = config.solve;
    ev.cadence = config.cadence;
    ev.extinction_threshold = config.report.extinction_threshold;
    ev.snapshot_times = config.snapshot_times.clone();
    ev.laplacian_enabled = config.laplacian_enabled;
    ev.track_quotient = matches!(config.source, SourceSpec::Zero);
    let ut_bound_rhs = if ev.track_quotient {
        Some(generator_norm(&ev.u0, params, config.laplacian_enabled))
    } else {
        None
    };

    let EvolveResult {
        series,
        snapshots,
        max_step_quotient,
    } = evolve(&ev)?;

    let extinction = extinction_report(
        &series,
        config.dims,
        config.report.ell,
        params,
        config.report.fit_from,
        config.report.extinction_threshold,
    )?;
    let decay = match (config.report.decay_kind, config.report.window) {
        (Some(kind), Some(window)) => Some(fit_decay(&series, kind, window)?),
        _ => None,
    };
    let worst_contraction_ratio = if config.report.check_contraction {
        Some(contraction_pair(config, &ev)?)
    } else {
        None
    };
    let max_mass_residual = mass_balance_residual(&series, params)
        .iter()
        .fold(0.0f64, |acc, r| acc.max(r.abs()));

    let mass = series.mass();
    let initial_mass = mass[0];
    let final_mass_ratio = if initial_mass > 0.0 {
        mass[mass.len() - 1] / initial_mass
    } else {
        0.0
    };

    let mut flags = Vec::new();
    if matches!(config.source, SourceSpec::Zero) && initial_mass > 0.0 {
        let tol = 1e-10 * initial_mass;
        let monotone = mass.windows(2).all(|w| w[1] <= w[0] + tol);
        flags.push(Flag {
            name: "mass_monotone",
            pass: monotone,
        });

        // Gradient seminorm from the recorded norms: |grad u|^2 = h1^2 - mass.
        let grad: Vec<f64> = series
            .h1()
            .iter()
            .zip(mass)
            .map(|(&h, &y)| (h * h - y).max(0.0).sqrt())
            .collect();
        let g0 = grad[0];
        if g0 > 0.0 {
            let tol = 1e-8 * g0;
            let floor = 1e-8 * g0;
            let mut ok = true;
            for w in grad.windows(2) {
                if w[0] <= floor {
                    break;
                }
                if w[1] > w[0] + tol {
                    ok = false;
                    break;
                }
            }
            flags.push(Flag {
                name: "gradient_bound",
                pass: ok,
            });
        }

        if let (Some(q), Some(rhs)) = (max_step_quotient, ut_bound_rhs) {
            flags.push(Flag {
                name: "ut_bound",
                pass: q <= 1.1 * rhs,
            });
        }
    }
    if config.report.require_extinction {
        flags.push(Flag {
            name: "extinction",
            pass: extinction.satisfied,
        });
    }
    if let SourceSpec::VanishingProfile { t0, .. } = config.source {
        let spacing = config.cadence as f64 * config.dt;
        flags.push(Flag {
            name: "forced_by_t0",
            pass: extinction
                .t_num
                .is_some_and(|t| t <= t0 + spacing * (1.0 + 1e-9)),
        });
    }
    if let Some(fit) = decay {
        let mut pass = fit.r2 >= config.report.require_r2;
        if let Some(expected) = config.report.expected_exponent {
            // The fit is on the mass = norm^2 series, so the fitted exponent
            // is twice the norm exponent the theory predicts.
            let norm_exponent = 0.5 * fit.rate_or_exponent;
            pass = pass
                && (norm_exponent - expected).abs() <= config.report.exponent_tol * expected;
        }
        flags.push(Flag {
            name: "decay_fit",
            pass,
        });
    }
    if let Some(ratio) = config.report.final_mass_ratio {
        flags.push(Flag {
            name: "final_mass",
            pass: final_mass_ratio <= ratio,
        });
    }
    if let Some(worst) = worst_contraction_ratio {
        flags.push(Flag {
            name: "contraction",
            pass: worst <= 1.0 + 1e-8,
        });
    }

    let summary = RunSummary {
        scenario: config.name.clone(),
        config_hash: config.config_hash,
        wall_clock_s: start.elapsed().as_secs_f64(),
        extinction,
        decay,
        max_mass_residual,
        max_step_quotient,
        ut_bound_rhs,
        worst_contraction_ratio,
        final_mass_ratio,
        flags,
    };

    fs::create_dir_all(&config.output_dir)?;
    write_series_csv(&config.output_dir.join("series.csv"), &series)?;
    let snap_times: Vec<f64> = snapshots.iter().map(|(t, _)| *t).collect();
    for (i, (_, field)) in snapshots.iter().enumerate() {
        write_field(config.output_dir.join(format!("snapshot_{i}.bin")), field)?;
    }
    write_summary_text(&config.output_dir.join("summary.txt"), &summary, &snap_times)?;
    fs::write(config.output_dir.join("plot.py"), PLOT_SCRIPT)?;

    Ok(summary)
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Replaces (or inserts) `section.key` in config text, preserving the rest
/// verbatim, so swept configs revalidate through the one parser.
pub fn override_key(text: &str, full_key: &str, value: &str) -> Result<String> {
    let (section, key) = full_key.split_once('.').ok_or_else(|| {
        Error::domain(format!("vary key must look like `section.key`, got `{full_key}`"))
    })?;
    let mut out: Vec<String> = Vec::new();
    let mut in_section = false;
    let mut replaced = false;
    let mut insert_at: Option<usize> = None;
    for raw_line in text.lines() {
        let stripped = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if let Some(name) = stripped
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
        {
            in_section = name.trim() == section;
            out.push(raw_line.to_string());
            if in_section {
                insert_at = Some(out.len());
            }
            continue;
        }
        if in_section && !replaced {
            if let Some(eq) = stripped.find('=') {
                if stripped[..eq].trim() == key {
                    out.push(format!("{key} = {value}"));
                    replaced = true;
                    continue;
                }
            }
        }
        out.push(raw_line.to_string());
    }
    if !replaced {
        match insert_at {
            Some(pos) => out.insert(pos, format!("{key} = {value}")),
            None => {
                out.push(format!("[{section}]"));
                out.push(format!("{key} = {value}"));
            }
        }
    }
    Ok(out.join("\n") + "\n")
}

/// Outcome of one run inside a sweep.
pub struct SweepEntry {
    pub value: String,
    pub outcome: Result<RunSummary>,
}

fn thread_budget(jobs: usize) -> usize {
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var("EXTINGUISH_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(hw);
    cap.min(jobs).max(1)
}

/// Runs one config repeatedly with `section.key` set to each value, each run
/// in its own subdirectory `<output>/<key>=<value>`. Runs execute in
/// parallel; `EXTINGUISH_THREADS` caps the worker count.
pub fn sweep(text: &str, full_key: &str, values: &[String]) -> Result<Vec<SweepEntry>> {
    let base = parse_config(text)?;
    if values.is_empty() {
        return Err(Error::domain("sweep needs at least one value".to_string()));
    }
    let mut configs = Vec::with_capacity(values.len());
    for value in values {
        let varied = override_key(text, full_key, value)?;
        let dir_value = format!("{full_key}={value}");
        let varied = override_key(
            &varied,
            "output.directory",
            &base.output_dir.join(dir_value).display().to_string(),
        )?;
        configs.push(parse_config(&varied)?);
    }

    let workers = thread_budget(configs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= configs.len() {
                    break;
                }
                let outcome = run_scenario(&configs[idx]);
                results.lock().expect("sweep worker poisoned")[idx] = Some(outcome);
            });
        }
    });
    let results = results.into_inner().expect("sweep results poisoned");
    Ok(values
        .iter()
        .zip(results)
        .map(|(value, outcome)| SweepEntry {
            value: value.clone(),
            outcome: outcome.expect("every sweep slot filled"),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Shipped catalog
// ---------------------------------------------------------------------------

/// The shipped experiment catalog: (name, config text). The texts are the
/// files in `configs/`, embedded so the library and the files cannot drift.
pub fn catalog() -> &'static [(&'static str, &'static str)] {
    &[
        (
            "extinction_1d",
            include_str!("../../../configs/extinction_1d.cfg"),
        ),
        (
            "extinction_2d",
            include_str!("../../../configs/extinction_2d.cfg"),
        ),
        (
            "extinction_3d",
            include_str!("../../../configs/extinction_3d.cfg"),
        ),
        (
            "forced_extinction_1d",
            include_str!("../../../configs/forced_extinction_1d.cfg"),
        ),
        (
            "weak_limit_1d",
            include_str!("../../../configs/weak_limit_1d.cfg"),
        ),
        (
            "contraction_1d",
            include_str!("../../../configs/contraction_1d.cfg"),
        ),
        ("decay_4d", include_str!("../../../configs/decay_4d.cfg")),
        (
            "decay_4d_power",
            include_str!("../../../configs/decay_4d_power.cfg"),
        ),
        ("decay_5d", include_str!("../../../configs/decay_5d.cfg")),
    ]
}

/// Parses a catalog entry by name.
pub fn catalog_config(name: &str) -> Result<RunConfig> {
    for (entry, text) in catalog() {
        if *entry == name {
            return parse_config(text);
        }
    }
    Err(Error::domain(format!(
        "no catalog scenario named `{name}`; known: {}",
        catalog()
            .iter()
            .map(|(n, _)| *n)
            .collect::<Vec<_>>()
            .join(", ")
    )))
}

// ---------------------------------------------------------------------------
// Verification suites
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifySuite {
    Cone,
    Resolvent,
    Evolve,
    Diagnostics,
    All,
}

impl std::str::FromStr for VerifySuite {
    type Err = Error;
    fn from_str(s: &str) -> Result<VerifySuite> {
        match s {
            "cone" => Ok(VerifySuite::Cone),
            "resolvent" => Ok(VerifySuite::Resolvent),
            "evolve" => Ok(VerifySuite::Evolve),
            "diagnostics" => Ok(VerifySuite::Diagnostics),
            "all" => Ok(VerifySuite::All),
            _ => Err(Error::domain(format!(
                "unknown suite `{s}`; expected cone, resolvent, evolve, diagnostics or all"
            ))),
        }
    }
}

/// One property's outcome: worst observed margin and a counterexample dump
/// when it failed. Margins are oriented so that negative means violation.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PropertyReport {
    pub name: &'static str,
    pub trials: u64,
    pub failures: u64,
    /// Worst (most adverse) value of the property-specific margin.
    pub worst: f64,
    pub passed: bool,
    pub counterexample: Option<String>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub seed: u64,
    pub trials: u64,
    pub properties: Vec<PropertyReport>,
    pub all_passed: bool,
}

fn property_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ config_hash(name))
}

fn sample_m(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(1e-3..0.999)
}

fn sample_complex(rng: &mut ChaCha8Rng, scale: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * scale, im * scale)
}

fn sample_scale(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-6.0f64..6.0).exp()
}

/// Random coefficient strictly inside the cone for the given m, spanning
/// both signs of Re(a), magnitudes over several decades, and near-boundary
/// cases.
fn sample_cone_coeff(rng: &mut ChaCha8Rng, m: f64) -> Complex64 {
    let scale = sample_scale(rng);
    let alpha_raw: f64 = rng.sample(StandardNormal);
    let alpha = alpha_raw * scale;
    let boundary = (1.0 - m) / (2.0 * m.sqrt()) * alpha.abs();
    let slack = rng.gen_range(-8.0f64..1.5).exp();
    let beta = boundary * (1.0 + slack) + scale * rng.gen_range(-3.0f64..2.0).exp() * 1e-3;
    Complex64::new(alpha, beta)
}

/// Samples (m, a) with a strictly inside the admissible cone, m over its
/// whole open interval.
fn sample_cone(rng: &mut ChaCha8Rng) -> (f64, Complex64) {
    let m = sample_m(rng);
    (m, sample_cone_coeff(rng, m))
}

/// Cone sample for properties that drive the implicit solver: m is kept
/// away from its endpoints (at m -> 0 the nonlinearity's derivative blows
/// up like |z|^(m-1) near zeros of the field, which makes the fixed-point
/// iteration arbitrarily slow without changing any of the mathematics being
/// checked), and a is rescaled to |a| <= cap so lambda*|a| stays inside the
/// iteration's contraction regime. Positive real scaling preserves cone
/// membership and strictness.
fn sample_cone_solver(rng: &mut ChaCha8Rng, cap: f64) -> (f64, Complex64) {
    let m = rng.gen_range(0.05f64..0.95);
    let a = sample_cone_coeff(rng, m);
    let norm = a.norm();
    if norm > cap {
        (m, a * (cap / norm))
    } else {
        (m, a)
    }
}

struct PropertyRun {
    name: &'static str,
    trials: u64,
    failures: u64,
    worst: f64,
    counterexample: Option<String>,
}

impl PropertyRun {
    fn new(name: &'static str) -> PropertyRun {
        PropertyRun {
            name,
            trials: 0,
            failures: 0,
            worst: f64::INFINITY,
            counterexample: None,
        }
    }

    /// Records one trial with its margin (negative = violated) and a lazy
    /// counterexample description.
    fn observe(&mut self, margin: f64, describe: impl FnOnce() -> String) {
        self.trials += 1;
        if margin < self.worst {
            self.worst = margin;
        }
        if !(margin >= 0.0) {
            self.failures += 1;
            if self.counterexample.is_none() {
                self.counterexample = Some(describe());
            }
        }
    }

    fn finish(self) -> PropertyReport {
        PropertyReport {
            name: self.name,
            trials: self.trials,
            failures: self.failures,
            worst: if self.worst == f64::INFINITY { 0.0 } else { self.worst },
            passed: self.failures == 0,
            counterexample: self.counterexample,
        }
    }
}

fn cone_properties(seed: u64, trials: u64, out: &mut Vec<PropertyReport>) {
    // Pointwise monotonicity inequality for the nonlinearity differences.
    let mut p = PropertyRun::new("pointwise_monotonicity_inequality");
    let mut rng = property_rng(seed, p.name);
    for _ in 0..trials {
        let m = sample_m(&mut rng);
        let s1 = sample_scale(&mut rng);
        let s2 = sample_scale(&mut rng);
        let z1 = sample_complex(&mut rng, s1);
        let z2 = sample_complex(&mut rng, s2);
        let chk = lp_check(m, z1, z2);
        let margin = (chk.rhs - chk.lhs) + 1e-12 * chk.rhs.max(1.0);
        p.observe(margin, || format!("m={m:e} z1={z1:e} z2={z2:e} lhs={} rhs={}", chk.lhs, chk.rhs));
    }
    out.push(p.finish());

    // Rotation witness: unit modulus, right sign quadrant, rotated
    // coefficient strictly inside the cone.
    let mut p = PropertyRun::new("rotation_witness");
    let mut rng = property_rng(seed, p.name);
    for _ in 0..trials {
        let (m, a) = sample_cone(&mut rng);
        let rot = match rotate(m, a) {
            Ok(r) => r,
            Err(e) => {
                p.observe(-1.0, || format!("m={m:e} a={a:e}: {e}"));
                continue;
            }
        };
        let b = rot.b;
        let tol = 1e-12;
        let unit = tol - (b.norm() - 1.0).abs();
        let quadrant = b.re.min(-b.im);
        let prod = a * b;
        let cone_margin =
            2.0 * m.sqrt() * prod.im - (1.0 - m) * prod.re.abs() + tol * a.norm();
        let margin = unit.min(quadrant).min(cone_margin).min(prod.im);
        p.observe(margin, || {
            format!("m={m:e} a={a:e} b={b:e} ab={prod:e} |b|-1={:e}", b.norm() - 1.0)
        });
    }
    out.push(p.finish());

    // Grid-level pairing: the damping term is monotone in the L^2 pairing.
    let mut p = PropertyRun::new("field_pairing_monotonicity");
    let mut rng = property_rng(seed, p.name);
    let grid = make_grid(1, 64, 12.0).expect("verify grid");
    for trial in 0..trials.min(200) {
        let (m, a) = sample_cone(&mut rng);
        let params = match ConeParams::new(m, a) {
            Ok(p) => p,
            Err(e) => {
                p.observe(-1.0, || format!("sample rejected: {e}"));
                continue;
            }
        };
        let base = seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(trial * 2);
        let u = band_limited_random(&grid, 10, 2.0, base).expect("field");
        let v = band_limited_random(&grid, 10, 1.0, base + 1).expect("field");
        let pairing = monotone_pairing(params, &u, &v).expect("same grid");
        let margin = pairing.value + 1e-10 * pairing.scale;
        p.observe(margin, || {
            format!(
                "m={m:e} a={a:e} seed={base} value={:e} scale={:e}",
                pairing.value, pairing.scale
            )
        });
    }
    out.push(p.finish());
}

fn resolvent_properties(seed: u64, trials: u64, out: &mut Vec<PropertyReport>) {
    let grid = make_grid(1, 32, 10.0).expect("verify grid");
    let lambdas = [1e-3, 1e-2, 1e-1];
    let b0s = [0.5, 1.0, 2.0];

    // Contraction: ||u - v|| <= (1/b0) ||F - G||, checked as a ratio.
    let mut p = PropertyRun::new("resolvent_contraction");
    let mut rng = property_rng(seed, p.name);
    for trial in 0..trials.min(300) {
        let (m, a) = sample_cone_solver(&mut rng, 4.0);
        let params = match ConeParams::new(m, a) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let lambda = lambdas[(trial % 3) as usize];
        let b0 = b0s[((trial / 3) % 3) as usize];
        let amp = rng.gen_range(-1.0f64..1.5).exp();
        let base = seed.wrapping_add(0x51ed_2701).wrapping_add(trial * 2);
        let f = band_limited_random(&grid, 8, amp, base).expect("field");
        let g = band_limited_random(&grid, 8, 0.7 * amp, base + 1).expect("field");
        let opts = SolveOptions {
            tol: 3e-12,
            max_iter: 4000,
            ..SolveOptions::default()
        };
        // A not-quite-converged iterate whose residual is still ~1000x below
        // the contraction tolerance perturbs the ratio negligibly; rejecting
        // it would test iteration speed, not the inequality.
        let slop = 2e-11 * amp.max(1.0);
        let accept = |r: crate::error::Result<crate::resolvent::ResolventSolution>| match r {
            Ok(sol) => Ok(sol.u),
            Err(Error::NonConvergence { residual, best, .. })
                if residual <= slop.max(8.0 * residual_floor(&params, lambda, &best)) =>
            {
                Ok(*best)
            }
            Err(e) => Err(e),
        };
        let pf = ResolventProblem::new(lambda, b0, params, f.clone()).expect("problem");
        let pg = ResolventProblem::new(lambda, b0, params, g.clone()).expect("problem");
        let (su, sv) = match (accept(solve_resolvent(&pf, &opts)), accept(solve_resolvent(&pg, &opts))) {
            (Ok(u), Ok(v)) => (u, v),
            (Err(e), _) | (_, Err(e)) => {
                p.observe(-1.0, || format!("solve failed: m={m:e} a={a:e} lambda={lambda} b0={b0}: {e}"));
                continue;
            }
        };
        let mut diff_rhs = f;
        for (dv, &gv) in diff_rhs.values_mut().iter_mut().zip(g.values()) {
            *dv -= gv;
        }
        let rhs_gap = lp_norm(&diff_rhs, 2.0).expect("norm");
        if rhs_gap == 0.0 {
            continue;
        }
        let ratio = b0 * l2_distance(&su, &sv) / rhs_gap;
        p.observe(1.0 + 1e-8 - ratio, || {
            format!("m={m:e} a={a:e} lambda={lambda} b0={b0} ratio={ratio:.12}")
        });
    }
    out.push(p.finish());

    // Residual postcondition: the reported solution really solves the
    // equation to the advertised tolerance (relative to max(1, ||F||)).
    let mut p = PropertyRun::new("resolvent_residual_postcondition");
    let mut rng = property_rng(seed, p.name);
    for trial in 0..trials.min(60) {
        let (m, a) = sample_cone_solver(&mut rng, 4.0);
        let params = match ConeParams::new(m, a) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let lambda = lambdas[(trial % 3) as usize];
        let b0 = b0s[((trial / 3) % 3) as usize];
        let amp = rng.gen_range(-1.0f64..1.5).exp();
        let f = band_limited_random(&grid, 8, amp, seed.wrapping_add(0xabc0 + trial))
            .expect("field");
        let scale = amp.max(1.0);
        let opts = SolveOptions {
            tol: 1e-11,
            max_iter: 4000,
            ..SolveOptions::default()
        };
        let problem = ResolventProblem::new(lambda, b0, params, f).expect("problem");
        match solve_resolvent(&problem, &opts) {
            Ok(sol) => {
                // The bar allows the evaluation floor of the returned field:
                // below it the residual of any f64 field is rounding noise
                // amplified by the Hoelder nonlinearity.
                let bar = (10.0 * opts.tol * scale).max(8.0 * residual_floor(&params, lambda, &sol.u));
                let margin = bar - sol.residual;
                p.observe(margin, || {
                    format!(
                        "m={m:e} a={a:e} lambda={lambda} b0={b0} residual={:e}",
                        sol.residual
                    )
                });
            }
            Err(e) => p.observe(-1.0, || format!("solve failed: {e}")),
        }
    }
    out.push(p.finish());
}

fn evolve_properties(seed: u64, trials: u64, out: &mut Vec<PropertyReport>) {
    // Zero-dispersion runs land on the closed-form damping solution.
    let mut p = PropertyRun::new("zero_dispersion_closed_form");
    let mut rng = property_rng(seed, p.name);
    let grid = make_grid(1, 16, 4.0).expect("verify grid");
    for _ in 0..trials.min(20) {
        let (m, a) = sample_cone(&mut rng);
        let params = match ConeParams::new(m, a) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let r0 = rng.gen_range(-0.5f64..1.0).exp();
        let t_ext = r0.powf(1.0 - m) / ((1.0 - m) * a.im);
        let dt = t_ext / 64.0;
        let u0 = Field::from_fn(&grid, |_| Complex64::new(r0, 0.0));
        let mut config = EvolveConfig::new(params, u0, Scheme::Strang, dt, 0.5 * t_ext);
        config.laplacian_enabled = false;
        config.cadence = 64;
        match evolve(&config) {
            Ok(res) => {
                let t = *res.series.times().last().expect("records");
                let r_exact = (r0.powf(1.0 - m) - (1.0 - m) * a.im * t).max(0.0)
                    .powf(1.0 / (1.0 - m));
                let mass_exact = r_exact * r_exact * grid.box_length();
                let got = *res.series.mass().last().expect("records");
                let err = (got - mass_exact).abs();
                p.observe(1e-9 * mass_exact - err, || {
                    format!("m={m:e} a={a:e} r0={r0:e} mass={got:e} exact={mass_exact:e}")
                });
            }
            Err(e) => p.observe(-1.0, || format!("evolve failed: {e}")),
        }
    }
    out.push(p.finish());

    // Unforced mass dissipation for random band-limited data.
    let mut p = PropertyRun::new("unforced_mass_monotone");
    let mut rng = property_rng(seed, p.name);
    let grid = make_grid(1, 64, 15.0).expect("verify grid");
    for trial in 0..trials.min(10) {
        let (m, a) = sample_cone_solver(&mut rng, 4.0);
        let params = match ConeParams::new(m, a) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let u0 = band_limited_random(&grid, 6, 1.5, seed.wrapping_add(0xe0 + trial))
            .expect("field");
        let scheme = if trial % 2 == 0 {
            Scheme::BackwardEuler
        } else {
            Scheme::Strang
        };
        let mut config = EvolveConfig::new(params, u0, scheme, 5e-3, 0.2);
        // Tight residuals keep per-step mass perturbations well under the
        // monotonicity tolerance; the iteration cap buys the slow cases.
        config.solve.tol = 1e-11;
        config.solve.max_iter = 3000;
        match evolve(&config) {
            Ok(res) => {
                let mass = res.series.mass();
                let tol = 1e-10 * mass[0];
                let worst = mass
                    .windows(2)
                    .map(|w| w[0] + tol - w[1])
                    .fold(f64::INFINITY, f64::min);
                p.observe(worst, || format!("m={m:e} a={a:e} scheme={scheme:?}"));
            }
            Err(e) => p.observe(-1.0, || format!("evolve failed: {e}")),
        }
    }
    out.push(p.finish());

    // The free flow is unitary on the grid.
    let mut p = PropertyRun::new("linear_flow_unitary");
    let mut rng = property_rng(seed, p.name);
    let grid = make_grid(2, 16, 7.0).expect("verify grid");
    for trial in 0..trials.min(50) {
        let dt = rng.gen_range(-4.0f64..1.0).exp();
        let u = band_limited_random(&grid, 5, 2.0, seed.wrapping_add(0x11f + trial))
            .expect("field");
        let before = lp_norm(&u, 2.0).expect("norm");
        let after = lp_norm(&linear_flow_exact(&u, dt), 2.0).expect("norm");
        p.observe(1e-12 * before - (after - before).abs(), || {
            format!("dt={dt:e} before={before:e} after={after:e}")
        });
    }
    out.push(p.finish());

    // The exact damping flow never increases pointwise modulus.
    let mut p = PropertyRun::new("damping_flow_pointwise_contraction");
    let mut rng = property_rng(seed, p.name);
    let grid = make_grid(1, 32, 6.0).expect("verify grid");
    for trial in 0..trials.min(50) {
        let (m, a) = sample_cone(&mut rng);
        let params = match ConeParams::new(m, a) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let dt = rng.gen_range(-3.0f64..0.5).exp();
        let u = band_limited_random(&grid, 9, 1.0, seed.wrapping_add(0x2222 + trial))
            .expect("field");
        let v = nonlinear_flow_exact(params, &u, dt);
        let worst = u
            .values()
            .iter()
            .zip(v.values())
            .map(|(&before, &after)| before.norm() * (1.0 + 1e-14) - after.norm())
            .fold(f64::INFINITY, f64::min);
        p.observe(worst, || format!("m={m:e} a={a:e} dt={dt:e}"));
    }
    out.push(p.finish());
}

fn diagnostics_properties(seed: u64, trials: u64, out: &mut Vec<PropertyReport>) {
    // The (N, ell) exponent table against its closed forms, and the (2,2)
    // coincidence with (1,1).
    let mut p = PropertyRun::new("exponent_closed_forms");
    let mut rng = property_rng(seed, p.name);
    for _ in 0..trials.min(500) {
        let m = sample_m(&mut rng);
        let cases: [(usize, usize, f64); 3] = [
            (1, 1, 2.0 * (1.0 + m) / (1.0 - m)),
            (1, 2, 2.0 * (1.0 + 3.0 * m) / (3.0 * (1.0 - m))),
            (3, 2, 2.0 * (3.0 + m) / (1.0 - m)),
        ];
        let mut margin = f64::INFINITY;
        for (n_dim, ell, expected) in cases {
            let got = delta_exponent(n_dim, ell, m).expect("valid").source_exponent;
            margin = margin.min(1e-11 * expected - (got - expected).abs());
        }
        let d11 = delta_exponent(1, 1, m).expect("valid");
        let d22 = delta_exponent(2, 2, m).expect("valid");
        margin = margin.min(
            1e-11 * d11.source_exponent
                - (d22.source_exponent - d11.source_exponent).abs(),
        );
        p.observe(margin, || format!("m={m:e}"));
    }
    out.push(p.finish());

    // Comparator bound equals the exact extinction time of y' = -c y^delta.
    let mut p = PropertyRun::new("comparator_extinction_time");
    let mut rng = property_rng(seed, p.name);
    for _ in 0..trials.min(200) {
        let y0 = rng.gen_range(-2.0f64..2.0).exp();
        let c = rng.gen_range(-1.0f64..1.0).exp();
        let delta = rng.gen_range(0.2f64..0.95);
        let bound = crate::diagnostics::ode_comparator_bound(y0, c, delta).expect("valid");
        // Just before the bound the exact solution is still positive; just
        // after, its 1-delta power has crossed zero.
        let shape = |t: f64| y0.powf(1.0 - delta) - (1.0 - delta) * c * t;
        let before = shape(bound * (1.0 - 1e-9));
        let after = shape(bound * (1.0 + 1e-9));
        p.observe(before.min(-after), || {
            format!("y0={y0:e} c={c:e} delta={delta:e} bound={bound:e}")
        });
    }
    out.push(p.finish());

    // Decay fits recover exact synthetic laws.
    let mut p = PropertyRun::new("decay_fit_recovery");
    let mut rng = property_rng(seed, p.name);
    for _ in 0..trials.min(100) {
        let rate = rng.gen_range(-1.0f64..1.5).exp();
        let y0 = rng.gen_range(-1.0f64..1.0).exp();
        let mut series = DiagnosticsSeries::new();
        let mut ok = true;
        for i in 0..40 {
            let t = i as f64 * 0.1;
            let y = y0 * (-rate * t).exp();
            if series.push(t, y, 0.0, 0.0, 0.0, 0.0, 0.0).is_err() {
                ok = false;
                break;
            }
        }
        if !ok {
            p.observe(-1.0, || "series construction failed".to_string());
            continue;
        }
        match fit_decay(&series, DecayKind::Exponential, (0.0, 4.0)) {
            Ok(fit) => {
                let margin = (1e-8 * rate - (fit.rate_or_exponent - rate).abs())
                    .min(fit.r2 - (1.0 - 1e-12));
                p.observe(margin, || {
                    format!("rate={rate:e} got={:e} r2={}", fit.rate_or_exponent, fit.r2)
                });
            }
            Err(e) => p.observe(-1.0, || format!("fit failed: {e}")),
        }
    }
    out.push(p.finish());

    // Extinction detection on the documented example pattern.
    let mut p = PropertyRun::new("extinction_detection_cases");
    let mut series = DiagnosticsSeries::new();
    for (i, y) in [1.0, 0.5, 1e-13, 1e-14, 1e-15].iter().enumerate() {
        series
            .push(i as f64, *y, 0.0, 0.0, 0.0, 0.0, 0.0)
            .expect("fixed series");
    }
    let got = detect_extinction(&series, 1e-12);
    p.observe(
        if got == Some(2.0) { 1.0 } else { -1.0 },
        || format!("detected {got:?}, expected Some(2.0)"),
    );
    out.push(p.finish());

    // Gagliardo-Nirenberg ratio is scale invariant.
    let mut p = PropertyRun::new("gn_ratio_scale_invariance");
    let mut rng = property_rng(seed, p.name);
    let grid = make_grid(1, 64, 9.0).expect("verify grid");
    for trial in 0..trials.min(100) {
        let m = sample_m(&mut rng);
        let ell = 1 + (trial % 2) as usize;
        let u = band_limited_random(&grid, 7, 1.0, seed.wrapping_add(0x31 + trial))
            .expect("field");
        let c = rng.gen_range(-3.0f64..3.0).exp();
        let mut cu = u.clone();
        for v in cu.values_mut() {
            *v *= c;
        }
        let r1 = crate::diagnostics::gn_ratio(&u, ell, m).expect("ratio");
        let r2 = crate::diagnostics::gn_ratio(&cu, ell, m).expect("ratio");
        p.observe(1e-10 * r1 - (r1 - r2).abs(), || {
            format!("m={m:e} ell={ell} c={c:e} r1={r1:e} r2={r2:e}")
        });
    }
    out.push(p.finish());
}

/// Runs the requested property suite with `trials` base samples (individual
/// properties cap their own counts where a trial is a whole PDE solve).
/// Failures are reported in the result, never panicked or returned as Err.
pub fn verify_suite(suite: VerifySuite, seed: u64, trials: u64) -> VerifyReport {
    let mut properties = Vec::new();
    let trials = trials.max(1);
    match suite {
        VerifySuite::Cone => cone_properties(seed, trials, &mut properties),
        VerifySuite::Resolvent => resolvent_properties(seed, trials, &mut properties),
        VerifySuite::Evolve => evolve_properties(seed, trials, &mut properties),
        VerifySuite::Diagnostics => diagnostics_properties(seed, trials, &mut properties),
        VerifySuite::All => {
            cone_properties(seed, trials, &mut properties);
            resolvent_properties(seed, trials, &mut properties);
            evolve_properties(seed, trials, &mut properties);
            diagnostics_properties(seed, trials, &mut properties);
        }
    }
    let all_passed = properties.iter().all(|p| p.passed);
    VerifyReport {
        suite: match suite {
            VerifySuite::Cone => "cone",
            VerifySuite::Resolvent => "resolvent",
            VerifySuite::Evolve => "evolve",
            VerifySuite::Diagnostics => "diagnostics",
            VerifySuite::All => "all",
        }
        .to_string(),
        seed,
        trials,
        properties,
        all_passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config(name: &str) -> String {
        format!(
            "[scenario]\nname = {name}\n\n[problem]\nm = 0.5\na = 0,1\n\n[grid]\ndims = 1\nn = 32\nbox_length = 12\n\n[initial]\nkind = gaussian\namplitude = 1\nwidth = 1\n\n[time]\nscheme = strang\ndt = 0.01\nt_end = 0.05\n\n[report]\nell = 1\n"
        )
    }

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "extinguish_scen_{tag}_{}",
            std::process::id()
        ));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(&minimal_config("mini")).unwrap();
        assert_eq!(cfg.name, "mini");
        assert_eq!(cfg.cadence, 1);
        assert_eq!(cfg.seed, 0);
        assert!(cfg.laplacian_enabled);
        assert!(matches!(cfg.source, SourceSpec::Zero));
        assert!(cfg.report.decay_kind.is_none());
        assert_eq!(cfg.report.extinction_threshold, 1e-12);
        assert_eq!(cfg.output_dir, PathBuf::from("runs").join("mini"));
        assert_eq!(cfg.config_hash, config_hash(&minimal_config("mini")));
    }

    #[test]
    fn invalid_m_is_a_validation_error() {
        let text = minimal_config("bad").replace("m = 0.5", "m = 1.5");
        match parse_config(&text) {
            Err(Error::ConfigValidation(msg)) => {
                assert!(msg.contains("m must lie in (0, 1)"), "{msg}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn real_coefficient_is_rejected_with_cone_citation() {
        let text = minimal_config("bad").replace("a = 0,1", "a = 1,0");
        match parse_config(&text) {
            Err(Error::ConfigValidation(msg)) => {
                assert!(msg.contains("2*sqrt(m)*Im a >= (1-m)*|Re a|"), "{msg}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_syntax_report_line_numbers() {
        let text = "[scenario]\nname = x\nbogus_key = 1\n";
        match parse_config(text) {
            Err(Error::ConfigParse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("unknown key `scenario.bogus_key`"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_config("[scenario]\nname x\n") {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn validation_lists_every_violation() {
        let text = minimal_config("multi")
            .replace("m = 0.5", "m = 2.0")
            .replace("dt = 0.01", "dt = -1");
        match parse_config(&text) {
            Err(Error::ConfigValidation(msg)) => {
                assert!(msg.contains("m must lie in (0, 1)"), "{msg}");
                assert!(msg.contains("time step must be positive"), "{msg}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn g17_round_trips_and_matches_known_strings() {
        assert_eq!(fmt_g17(0.0), "0");
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(0.001), "0.001");
        assert_eq!(fmt_g17(-2.5), "-2.5");
        assert_eq!(fmt_g17(f64::INFINITY), "inf");
        assert_eq!(fmt_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(fmt_g17(1e17), "1e+17");
        assert_eq!(fmt_g17(1234567890.0), "1234567890");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let x: f64 = rng.gen_range(-1.0f64..1.0) * rng.gen_range(-300.0f64..300.0).exp2();
            let s = fmt_g17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn series_csv_round_trips() {
        let mut series = DiagnosticsSeries::new();
        series.push(0.0, 1.0, 0.9, 1.1, 1.2, 0.0, 0.01).unwrap();
        series.push(0.1, 0.8, 0.7, 1.0, 1.1, -0.2, 0.02).unwrap();
        let dir = temp_dir("csv");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("series.csv");
        write_series_csv(&path, &series).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t, mass, lmp1, h1, h2, source_work, tail_mass\n"));
        let back = read_series_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.mass()[1], 0.8);
        assert_eq!(back.source_work()[1], -0.2);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn malformed_csv_is_rejected() {
        let dir = temp_dir("badcsv");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("series.csv");
        fs::write(&path, "wrong, header\n1, 2\n").unwrap();
        assert!(matches!(
            read_series_csv(&path),
            Err(Error::MalformedFile { .. })
        ));
        fs::write(
            &path,
            "t, mass, lmp1, h1, h2, source_work, tail_mass\n0, 1, 1\n",
        )
        .unwrap();
        assert!(matches!(
            read_series_csv(&path),
            Err(Error::MalformedFile { .. })
        ));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn override_key_replaces_and_inserts() {
        let text = minimal_config("ov");
        let replaced = override_key(&text, "time.dt", "0.5").unwrap();
        assert!(replaced.contains("dt = 0.5"));
        assert!(!replaced.contains("dt = 0.01"));
        let inserted = override_key(&text, "time.cadence", "4").unwrap();
        assert!(inserted.contains("cadence = 4"));
        let new_section = override_key(&text, "output.directory", "runs/x").unwrap();
        assert!(new_section.contains("[output]"));
        assert!(new_section.contains("directory = runs/x"));
        parse_config(&new_section).unwrap();
    }

    #[test]
    fn run_scenario_writes_artifacts_and_is_deterministic() {
        let dir_a = temp_dir("runa");
        let dir_b = temp_dir("runb");
        let text = format!(
            "{}\n[output]\ndirectory = {}\nsnapshots = 0.02\n",
            minimal_config("tiny"),
            dir_a.display()
        );
        let cfg = parse_config(&text).unwrap();
        let summary = run_scenario(&cfg).unwrap();
        assert_eq!(summary.scenario, "tiny");
        assert!(summary.flags.iter().any(|f| f.name == "mass_monotone"));
        assert!(summary.all_pass(), "flags: {:?}", summary.flags);
        assert!(dir_a.join("series.csv").is_file());
        assert!(dir_a.join("summary.txt").is_file());
        assert!(dir_a.join("plot.py").is_file());
        assert!(dir_a.join("snapshot_0.bin").is_file());
        let summary_text = fs::read_to_string(dir_a.join("summary.txt")).unwrap();
        for key in [
            "scenario = ",
            "config_hash = ",
            "t_extinction = ",
            "t_star_bound = ",
            "delta = ",
            "c_emp = ",
            "decay_rate = ",
            "r2 = ",
            "flags = ",
        ] {
            assert!(summary_text.contains(key), "missing `{key}` in {summary_text}");
        }

        let text_b = override_key(&text, "output.directory", &dir_b.display().to_string())
            .unwrap();
        run_scenario(&parse_config(&text_b).unwrap()).unwrap();
        let a = fs::read(dir_a.join("series.csv")).unwrap();
        let b = fs::read(dir_b.join("series.csv")).unwrap();
        assert_eq!(a, b, "series.csv must be bitwise deterministic");
        fs::remove_dir_all(&dir_a).unwrap();
        fs::remove_dir_all(&dir_b).unwrap();
    }

    #[test]
    fn sweep_runs_all_values_in_subdirectories() {
        let dir = temp_dir("sweep");
        let text = format!(
            "{}\n[output]\ndirectory = {}\n",
            minimal_config("swept"),
            dir.display()
        );
        let entries = sweep(&text, "time.dt", &["0.01".into(), "0.005".into()]).unwrap();
        assert_eq!(entries.len(), 2);
        for entry in &entries {
            let summary = entry.outcome.as_ref().unwrap();
            assert!(summary.all_pass());
            let sub = dir.join(format!("time.dt={}", entry.value));
            assert!(sub.join("series.csv").is_file(), "{sub:?}");
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn catalog_entries_parse_and_validate() {
        for (name, text) in catalog() {
            let cfg = parse_config(text)
                .unwrap_or_else(|e| panic!("catalog `{name}` failed: {e}"));
            assert_eq!(cfg.name, *name);
        }
        assert!(catalog_config("extinction_1d").is_ok());
        assert!(catalog_config("nope").is_err());
    }

    #[test]
    fn verify_cone_suite_passes_quickly() {
        let report = verify_suite(VerifySuite::Cone, 1, 500);
        assert!(report.all_passed, "{report:?}");
        assert_eq!(report.properties.len(), 3);
        for p in &report.properties {
            assert!(p.trials > 0);
            assert!(p.counterexample.is_none());
        }
    }

    #[test]
    fn verify_diagnostics_suite_passes() {
        let report = verify_suite(VerifySuite::Diagnostics, 3, 50);
        assert!(report.all_passed, "{report:?}");
    }
}
