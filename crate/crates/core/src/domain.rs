//! Periodic grids, complex fields, and spectral calculus.
//!
//! All computations live on the torus [0, L)^N, N in {1,...,5}, sampled on a
//! uniform n^N lattice with n a power of two. The discrete Fourier transform
//! uses the wavenumber ordering {0, 1, ..., n/2-1, -n/2, ..., -1} * 2*pi/L
//! per axis, an unnormalized forward transform, and a 1/n^N inverse, so the
//! discrete Parseval identity reads
//!
//! ```text
//! h^N * sum |u_i|^2 = (h^N / n^N) * sum |u_hat_k|^2,   h = L/n.
//! ```
//!
//! Norms are quadrature norms: lp_norm(u, p) = (h^N * sum |u_i|^p)^(1/p),
//! and Sobolev norms are Parseval sums weighted by (1 + |k|^2)^ell. For
//! rapidly decaying smooth data these coincide with their continuum values
//! to spectral accuracy.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Default cap on n^dims. 2^24 points keep a single field under 300 MiB.
pub const DEFAULT_POINT_BUDGET: u64 = 1 << 24;

struct GridInner {
    dims: usize,
    n: usize,
    box_length: f64,
    total: usize,
    /// Quadrature weight h^dims.
    cell_volume: f64,
    /// Parseval weight h^dims / n^dims.
    parseval_weight: f64,
    /// Per-axis wavenumbers in FFT bin order.
    k_axis: Vec<f64>,
    /// |k|^2 per flattened index.
    k_squared: Vec<f64>,
    fft_forward: Arc<dyn Fft<f64>>,
    fft_inverse: Arc<dyn Fft<f64>>,
}

/// Uniform periodic grid on [0, L)^dims. Cheap to clone (shared interior).
#[derive(Clone)]
pub struct PeriodicGrid {
    inner: Arc<GridInner>,
}

impl std::fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeriodicGrid")
            .field("dims", &self.inner.dims)
            .field("n", &self.inner.n)
            .field("box_length", &self.inner.box_length)
            .finish()
    }
}

/// Builds a grid with the default point budget.
pub fn make_grid(dims: usize, n: usize, box_length: f64) -> Result<PeriodicGrid> {
    make_grid_with_budget(dims, n, box_length, DEFAULT_POINT_BUDGET)
}

/// Builds a grid, rejecting point counts above `budget`.
pub fn make_grid_with_budget(
    dims: usize,
    n: usize,
    box_length: f64,
    budget: u64,
) -> Result<PeriodicGrid> {
    if !(1..=5).contains(&dims) {
        return Err(Error::domain(format!(
            "grid dimension must lie in 1..=5, got {dims}"
        )));
    }
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::domain(format!(
            "points per axis must be a power of two >= 2, got {n}"
        )));
    }
    if !(box_length > 0.0) || !box_length.is_finite() {
        return Err(Error::domain(format!(
            "box length must be positive and finite, got {box_length}"
        )));
    }
    let requested = (n as u128).pow(dims as u32);
    if requested > budget as u128 {
        return Err(Error::MemoryBudget { requested, budget });
    }
    let total = requested as usize;
    let h = box_length / n as f64;
    let cell_volume = h.powi(dims as i32);

    let two_pi = 2.0 * std::f64::consts::PI;
    let k_axis: Vec<f64> = (0..n)
        .map(|q| {
            let f = if q < n / 2 { q as i64 } else { q as i64 - n as i64 };
            two_pi * f as f64 / box_length
        })
        .collect();

    let mut k_squared = vec![0.0f64; total];
    for axis in 0..dims {
        let stride = n.pow((dims - 1 - axis) as u32);
        for (idx, ks) in k_squared.iter_mut().enumerate() {
            let digit = (idx / stride) % n;
            *ks += k_axis[digit] * k_axis[digit];
        }
    }

    let mut planner = FftPlanner::new();
    let fft_forward = planner.plan_fft_forward(n);
    let fft_inverse = planner.plan_fft_inverse(n);

    Ok(PeriodicGrid {
        inner: Arc::new(GridInner {
            dims,
            n,
            box_length,
            total,
            cell_volume,
            parseval_weight: cell_volume / total as f64,
            k_axis,
            k_squared,
            fft_forward,
            fft_inverse,
        }),
    })
}

impl PeriodicGrid {
    pub fn dims(&self) -> usize {
        self.inner.dims
    }

    pub fn n(&self) -> usize {
        self.inner.n
    }

    pub fn box_length(&self) -> f64 {
        self.inner.box_length
    }

    /// Total point count n^dims.
    pub fn len(&self) -> usize {
        self.inner.total
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing h = L/n.
    pub fn spacing(&self) -> f64 {
        self.inner.box_length / self.inner.n as f64
    }

    /// Quadrature weight h^dims.
    pub fn cell_volume(&self) -> f64 {
        self.inner.cell_volume
    }

    /// |k|^2 for every flattened index, in transform layout.
    pub fn k_squared(&self) -> &[f64] {
        &self.inner.k_squared
    }

    /// Signed wavenumbers along one axis in transform order:
    /// {0, 1, ..., n/2-1, -n/2, ..., -1} scaled by 2*pi/L.
    pub fn wavenumber_axis(&self) -> &[f64] {
        &self.inner.k_axis
    }

    /// Largest |k|^2 on the grid (Nyquist corner).
    pub fn k_squared_max(&self) -> f64 {
        let ny = std::f64::consts::PI / self.spacing();
        ny * ny * self.inner.dims as f64
    }

    /// Parseval weight for spectral sums.
    pub fn parseval_weight(&self) -> f64 {
        self.inner.parseval_weight
    }

    /// Structural compatibility: same shape and box.
    pub fn same_grid(&self, other: &PeriodicGrid) -> bool {
        self.inner.dims == other.inner.dims
            && self.inner.n == other.inner.n
            && self.inner.box_length == other.inner.box_length
    }

    /// Physical coordinates of flattened index, written into `out[..dims]`.
    fn coords(&self, idx: usize, out: &mut [f64; 5]) {
        let n = self.inner.n;
        let h = self.spacing();
        let mut rest = idx;
        for axis in (0..self.inner.dims).rev() {
            out[axis] = (rest % n) as f64 * h;
            rest /= n;
        }
    }

    /// In-place unnormalized forward transform along every axis.
    pub(crate) fn fft_forward(&self, data: &mut [Complex64]) {
        self.fft_axes(data, true);
    }

    /// In-place inverse transform (includes the 1/n^dims factor).
    pub(crate) fn fft_inverse(&self, data: &mut [Complex64]) {
        self.fft_axes(data, false);
        let scale = 1.0 / self.inner.total as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    fn fft_axes(&self, data: &mut [Complex64], forward: bool) {
        debug_assert_eq!(data.len(), self.inner.total);
        let n = self.inner.n;
        let dims = self.inner.dims;
        let fft = if forward {
            &self.inner.fft_forward
        } else {
            &self.inner.fft_inverse
        };
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        let mut line = vec![Complex64::default(); n];
        for axis in 0..dims {
            let stride = n.pow((dims - 1 - axis) as u32);
            let block = stride * n;
            let mut base = 0;
            while base < self.inner.total {
                if stride == 1 {
                    fft.process_with_scratch(&mut data[base..base + n], &mut scratch);
                } else {
                    for off in 0..stride {
                        for (j, slot) in line.iter_mut().enumerate() {
                            *slot = data[base + off + j * stride];
                        }
                        fft.process_with_scratch(&mut line, &mut scratch);
                        for (j, value) in line.iter().enumerate() {
                            data[base + off + j * stride] = *value;
                        }
                    }
                }
                base += block;
            }
        }
    }
}

/// Complex field sampled on a [`PeriodicGrid`], flattened row-major (last
/// axis fastest).
#[derive(Debug, Clone)]
pub struct Field {
    grid: PeriodicGrid,
    values: Vec<Complex64>,
}

impl Field {
    pub fn zeros(grid: &PeriodicGrid) -> Field {
        Field {
            grid: grid.clone(),
            values: vec![Complex64::default(); grid.len()],
        }
    }

    /// Samples `f` at every grid point; `f` receives the physical coordinates.
    pub fn from_fn(grid: &PeriodicGrid, mut f: impl FnMut(&[f64]) -> Complex64) -> Field {
        let mut values = vec![Complex64::default(); grid.len()];
        let mut xs = [0.0f64; 5];
        for (idx, v) in values.iter_mut().enumerate() {
            grid.coords(idx, &mut xs);
            *v = f(&xs[..grid.dims()]);
        }
        Field {
            grid: grid.clone(),
            values,
        }
    }

    /// Wraps raw values; length must match the grid.
    pub fn from_values(grid: &PeriodicGrid, values: Vec<Complex64>) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(Error::domain(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// True when every sample is finite.
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

fn require_same_grid(u: &Field, v: &Field) -> Result<()> {
    if u.grid.same_grid(&v.grid) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Spectral Laplacian: inverse transform of -|k|^2 times the transform.
pub fn laplacian(u: &Field) -> Field {
    let grid = u.grid.clone();
    let mut data = u.values.clone();
    grid.fft_forward(&mut data);
    for (v, ks) in data.iter_mut().zip(grid.k_squared()) {
        *v *= -ks;
    }
    grid.fft_inverse(&mut data);
    Field { grid, values: data }
}

/// Quadrature Lebesgue norm (h^N * sum |u|^p)^(1/p). Quasi-norms 0 < p < 1
/// are allowed; they appear as L^{2m} quantities in the a-priori estimates.
pub fn lp_norm(u: &Field, p: f64) -> Result<f64> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::domain(format!("lp_norm requires p > 0, got {p}")));
    }
    let h = u.grid.cell_volume();
    if p == 2.0 {
        let sum: f64 = u.values.iter().map(|v| v.norm_sqr()).sum();
        return Ok((h * sum).sqrt());
    }
    let sum: f64 = u.values.iter().map(|v| v.norm().powf(p)).sum();
    Ok((h * sum).powf(1.0 / p))
}

/// Parseval Sobolev norm with weight (1 + |k|^2)^ell, ell in {0, 1, 2}.
/// ell = 0 reproduces lp_norm(u, 2) up to rounding.
pub fn sobolev_norm(u: &Field, ell: u32) -> Result<f64> {
    if ell > 2 {
        return Err(Error::domain(format!(
            "sobolev_norm supports ell in {{0, 1, 2}}, got {ell}"
        )));
    }
    let grid = &u.grid;
    let mut data = u.values.clone();
    grid.fft_forward(&mut data);
    let w = grid.parseval_weight();
    let sum: f64 = data
        .iter()
        .zip(grid.k_squared())
        .map(|(v, ks)| (1.0 + ks).powi(ell as i32) * v.norm_sqr())
        .sum();
    Ok((w * sum).sqrt())
}

/// The split form (||u||^2 + ||laplacian u||^2)^(1/2), an equivalent H^2
/// norm (weight 1 + |k|^4 instead of (1 + |k|^2)^2).
pub fn sobolev_norm_split(u: &Field) -> f64 {
    let grid = &u.grid;
    let mut data = u.values.clone();
    grid.fft_forward(&mut data);
    let w = grid.parseval_weight();
    let sum: f64 = data
        .iter()
        .zip(grid.k_squared())
        .map(|(v, ks)| (1.0 + ks * ks) * v.norm_sqr())
        .sum();
    (w * sum).sqrt()
}

/// L^2 pairing h^N * sum u * conj(v).
pub fn inner(u: &Field, v: &Field) -> Result<Complex64> {
    require_same_grid(u, v)?;
    let h = u.grid.cell_volume();
    let sum = u
        .values
        .iter()
        .zip(&v.values)
        .fold(Complex64::default(), |acc, (a, b)| acc + a * b.conj());
    Ok(sum * h)
}

/// Random field with independent standard complex Gaussian coefficients on
/// the modes with |k_axis| <= kmax on every axis, zero elsewhere, rescaled
/// so lp_norm(result, 2) equals `amplitude`. Deterministic in `seed`:
/// coefficients are drawn in flattened bin order.
pub fn band_limited_random(
    grid: &PeriodicGrid,
    kmax: usize,
    amplitude: f64,
    seed: u64,
) -> Result<Field> {
    if kmax >= grid.n() / 2 {
        return Err(Error::domain(format!(
            "kmax must stay below the Nyquist index n/2 = {}, got {kmax}",
            grid.n() / 2
        )));
    }
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::domain(format!(
            "amplitude must be finite and nonnegative, got {amplitude}"
        )));
    }
    let n = grid.n();
    let dims = grid.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut data = vec![Complex64::default(); grid.len()];
    'bins: for (idx, slot) in data.iter_mut().enumerate() {
        let mut rest = idx;
        for _ in 0..dims {
            let q = rest % n;
            let f = if q < n / 2 { q as i64 } else { q as i64 - n as i64 };
            if f.unsigned_abs() as usize > kmax {
                continue 'bins;
            }
            rest /= n;
        }
        let re: f64 = normal.sample(&mut rng);
        let im: f64 = normal.sample(&mut rng);
        *slot = Complex64::new(re, im);
    }
    grid.fft_inverse(&mut data);
    let mut field = Field {
        grid: grid.clone(),
        values: data,
    };
    let norm = lp_norm(&field, 2.0)?;
    if norm == 0.0 {
        if amplitude == 0.0 {
            return Ok(field);
        }
        return Err(Error::domain(
            "degenerate zero draw cannot be scaled to a positive amplitude".to_string(),
        ));
    }
    let scale = amplitude / norm;
    for v in field.values.iter_mut() {
        *v *= scale;
    }
    Ok(field)
}

/// Snapshot layout: dims and n as little-endian u64, box length as a
/// little-endian f64, then n^dims (re, im) f64 pairs in row-major order.
pub fn write_field(path: impl AsRef<Path>, field: &Field) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&(field.grid.dims() as u64).to_le_bytes())?;
    w.write_all(&(field.grid.n() as u64).to_le_bytes())?;
    w.write_all(&field.grid.box_length().to_le_bytes())?;
    for v in &field.values {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a snapshot written by [`write_field`], validating the header and
/// finiteness of every sample.
pub fn read_field(path: impl AsRef<Path>) -> Result<Field> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let malformed = |message: &str| Error::MalformedFile {
        path: display.clone(),
        message: message.to_string(),
    };
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(|_| malformed("truncated header"))?;
    let dims = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf).map_err(|_| malformed("truncated header"))?;
    let n = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf).map_err(|_| malformed("truncated header"))?;
    let box_length = f64::from_le_bytes(u64buf);
    if dims == 0 || dims > 5 {
        return Err(malformed(&format!("dims {dims} outside 1..=5")));
    }
    let grid = make_grid(dims as usize, n as usize, box_length)?;
    let mut values = vec![Complex64::default(); grid.len()];
    let mut pair = [0u8; 16];
    for v in values.iter_mut() {
        r.read_exact(&mut pair).map_err(|_| malformed("truncated payload"))?;
        let re = f64::from_le_bytes(pair[..8].try_into().unwrap());
        let im = f64::from_le_bytes(pair[8..].try_into().unwrap());
        if !re.is_finite() || !im.is_finite() {
            return Err(malformed("non-finite sample"));
        }
        *v = Complex64::new(re, im);
    }
    if r.read(&mut u64buf)? != 0 {
        return Err(malformed("trailing bytes after payload"));
    }
    Ok(Field { grid, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_1d(grid: &PeriodicGrid) -> Field {
        let c = grid.box_length() / 2.0;
        Field::from_fn(grid, |x| Complex64::new((-(x[0] - c).powi(2) / 2.0).exp(), 0.0))
    }

    #[test]
    fn make_grid_validation() {
        assert!(make_grid(1, 64, 10.0).is_ok());
        assert!(make_grid(0, 64, 10.0).is_err());
        assert!(make_grid(6, 4, 10.0).is_err());
        assert!(make_grid(1, 48, 10.0).is_err());
        assert!(make_grid(1, 64, 0.0).is_err());
        assert!(make_grid(1, 64, -3.0).is_err());
        match make_grid_with_budget(3, 256, 10.0, 1 << 20) {
            Err(Error::MemoryBudget { requested, budget }) => {
                assert_eq!(requested, 1 << 24);
                assert_eq!(budget, 1 << 20);
            }
            other => panic!("expected memory budget error, got {other:?}"),
        }
    }

    #[test]
    fn wavenumber_ordering() {
        let grid = make_grid(1, 8, 2.0 * std::f64::consts::PI).unwrap();
        let k: Vec<f64> = grid.wavenumber_axis().to_vec();
        assert_eq!(k, vec![0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0]);
    }

    #[test]
    fn fft_round_trip() {
        let grid = make_grid(2, 16, 5.0).unwrap();
        let u = Field::from_fn(&grid, |x| {
            Complex64::new((x[0] * 1.3).sin(), (x[1] * 0.7).cos())
        });
        let mut data = u.values.clone();
        grid.fft_forward(&mut data);
        grid.fft_inverse(&mut data);
        for (a, b) in data.iter().zip(u.values()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn parseval_identity() {
        let grid = make_grid(2, 32, 7.0).unwrap();
        let u = band_limited_random(&grid, 5, 2.0, 42).unwrap();
        let phys = lp_norm(&u, 2.0).unwrap();
        let spec = sobolev_norm(&u, 0).unwrap();
        assert!((phys - spec).abs() < 1e-12 * phys);
        assert!((phys - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_l2_norm_matches_quadrature() {
        // ||exp(-x^2/2)||_2 = pi^(1/4); trapezoid is spectrally exact here.
        let grid = make_grid(1, 512, 40.0).unwrap();
        let u = gaussian_1d(&grid);
        let norm = lp_norm(&u, 2.0).unwrap();
        assert!((norm - std::f64::consts::PI.powf(0.25)).abs() < 1e-13);
    }

    #[test]
    fn constant_field_lp_norm() {
        let grid = make_grid(2, 16, 3.0).unwrap();
        let u = Field::from_fn(&grid, |_| Complex64::new(0.0, -2.0));
        // |c| * L^(N/p)
        let n1 = lp_norm(&u, 1.0).unwrap();
        assert!((n1 - 2.0 * 9.0).abs() < 1e-12);
        let n15 = lp_norm(&u, 1.5).unwrap();
        assert!((n15 - 2.0 * 9.0f64.powf(1.0 / 1.5)).abs() < 1e-12);
    }

    #[test]
    fn lp_norm_rejects_bad_p() {
        let grid = make_grid(1, 8, 1.0).unwrap();
        let u = Field::zeros(&grid);
        assert!(lp_norm(&u, 0.0).is_err());
        assert!(lp_norm(&u, -1.0).is_err());
    }

    #[test]
    fn laplacian_of_gaussian() {
        let grid = make_grid(1, 512, 40.0).unwrap();
        let u = gaussian_1d(&grid);
        let lap = laplacian(&u);
        let c = grid.box_length() / 2.0;
        let mut worst = 0.0f64;
        let mut xs = [0.0f64; 5];
        for (idx, v) in lap.values().iter().enumerate() {
            grid.coords(idx, &mut xs);
            let x = xs[0] - c;
            let expect = (x * x - 1.0) * (-x * x / 2.0).exp();
            worst = worst.max((v.re - expect).abs().max(v.im.abs()));
        }
        assert!(worst < 1e-10, "max deviation {worst}");
    }

    #[test]
    fn single_mode_sobolev_norm() {
        // u = exp(i*k*x), k = 2*pi*3/L: H^1 norm squared is (1 + k^2) * L.
        let grid = make_grid(1, 64, 10.0).unwrap();
        let k = 2.0 * std::f64::consts::PI * 3.0 / 10.0;
        let u = Field::from_fn(&grid, |x| Complex64::from_polar(1.0, k * x[0]));
        let h1 = sobolev_norm(&u, 1).unwrap();
        assert!((h1 * h1 - (1.0 + k * k) * 10.0).abs() < 1e-10);
        let h2 = sobolev_norm(&u, 2).unwrap();
        assert!((h2 * h2 - (1.0 + k * k).powi(2) * 10.0).abs() < 1e-9);
        let split = sobolev_norm_split(&u);
        assert!((split * split - (1.0 + k.powi(4)) * 10.0).abs() < 1e-9);
        assert!(sobolev_norm(&u, 3).is_err());
    }

    #[test]
    fn sobolev_zero_order_matches_l2() {
        let grid = make_grid(3, 8, 4.0).unwrap();
        let u = band_limited_random(&grid, 3, 1.7, 9).unwrap();
        let a = sobolev_norm(&u, 0).unwrap();
        let b = lp_norm(&u, 2.0).unwrap();
        assert!((a - b).abs() < 1e-13 * b);
    }

    #[test]
    fn inner_product_conjugate_symmetry() {
        let grid = make_grid(1, 32, 6.0).unwrap();
        let u = band_limited_random(&grid, 4, 1.0, 1).unwrap();
        let v = band_limited_random(&grid, 4, 1.0, 2).unwrap();
        let uv = inner(&u, &v).unwrap();
        let vu = inner(&v, &u).unwrap();
        assert!((uv - vu.conj()).norm() < 1e-14);
        let uu = inner(&u, &u).unwrap();
        assert!(uu.im.abs() < 1e-14);
        let l2 = lp_norm(&u, 2.0).unwrap();
        assert!((uu.re - l2 * l2).abs() < 1e-12);
    }

    #[test]
    fn inner_rejects_grid_mismatch() {
        let g1 = make_grid(1, 32, 6.0).unwrap();
        let g2 = make_grid(1, 64, 6.0).unwrap();
        let u = Field::zeros(&g1);
        let v = Field::zeros(&g2);
        assert!(matches!(inner(&u, &v), Err(Error::GridMismatch)));
    }

    #[test]
    fn integration_by_parts() {
        // <lap u, v> == <u, lap v> for periodic fields.
        let grid = make_grid(2, 16, 5.0).unwrap();
        let u = band_limited_random(&grid, 3, 1.0, 5).unwrap();
        let v = band_limited_random(&grid, 3, 1.0, 6).unwrap();
        let a = inner(&laplacian(&u), &v).unwrap();
        let b = inner(&u, &laplacian(&v)).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn band_limited_determinism_and_scaling() {
        let grid = make_grid(2, 32, 8.0).unwrap();
        let u = band_limited_random(&grid, 4, 3.0, 77).unwrap();
        let v = band_limited_random(&grid, 4, 3.0, 77).unwrap();
        for (a, b) in u.values().iter().zip(v.values()) {
            assert_eq!(a, b);
        }
        let w = band_limited_random(&grid, 4, 3.0, 78).unwrap();
        assert!(u.values().iter().zip(w.values()).any(|(a, b)| a != b));
        assert!((lp_norm(&u, 2.0).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn band_limited_is_band_limited() {
        let grid = make_grid(1, 64, 10.0).unwrap();
        let u = band_limited_random(&grid, 5, 1.0, 3).unwrap();
        let mut spec = u.values().to_vec();
        grid.fft_forward(&mut spec);
        for (q, v) in spec.iter().enumerate() {
            let f = if q < 32 { q as i64 } else { q as i64 - 64 };
            if f.unsigned_abs() > 5 {
                assert!(v.norm() < 1e-10, "mode {f} should vanish, has {}", v.norm());
            }
        }
    }

    #[test]
    fn band_limited_dc_only() {
        let grid = make_grid(1, 16, 4.0).unwrap();
        let u = band_limited_random(&grid, 0, 1.5, 11).unwrap();
        let first = u.values()[0];
        for v in u.values() {
            assert!((v - first).norm() < 1e-13);
        }
        assert!((lp_norm(&u, 2.0).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn band_limited_rejects_nyquist() {
        let grid = make_grid(1, 16, 4.0).unwrap();
        assert!(band_limited_random(&grid, 8, 1.0, 0).is_err());
        assert!(band_limited_random(&grid, 7, 1.0, 0).is_ok());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = std::env::temp_dir().join("extinguish-domain-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.bin");
        let grid = make_grid(2, 16, 3.5).unwrap();
        let u = band_limited_random(&grid, 3, 1.0, 21).unwrap();
        write_field(&path, &u).unwrap();
        let v = read_field(&path).unwrap();
        assert!(v.grid().same_grid(&grid));
        for (a, b) in u.values().iter().zip(v.values()) {
            assert_eq!(a, b);
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn snapshot_rejects_truncation() {
        let dir = std::env::temp_dir().join("extinguish-domain-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("short.bin");
        let grid = make_grid(1, 8, 1.0).unwrap();
        let u = Field::zeros(&grid);
        write_field(&path, &u).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 3]).unwrap();
        assert!(matches!(read_field(&path), Err(Error::MalformedFile { .. })));
        std::fs::remove_file(&path).unwrap();
    }
}
