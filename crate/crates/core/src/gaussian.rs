//! Gaussian driving noise: covariance models, exact grid sampling, signature
//! lifts, and two-parameter covariance diagnostics.
//!
//! The driver is a centered Gaussian process W with covariance R(s, t) and
//! i.i.d. coordinates. Everything downstream consumes either raw grid samples
//! ([`GridPathSample`]) or their signature lifts ([`LiftedPath`]), whose cell
//! increments are group-like by construction.
//!
//! Diagnostics quantify the hypotheses the solvers rely on:
//!
//! * [`nondeterminism_exponent`]: decay exponent of the conditional variance
//!   of an increment given the increments outside it, via exact Gaussian
//!   conditioning (Schur complement), no Monte Carlo.
//! * [`covariance_diagnostics`]: mixed (1, rho)-variation lower bound, its
//!   scaling in the interval length, and the rectangular-increment sign
//!   pattern (disjoint nonpositive, nested nonnegative).
//! * [`young_2d_integral`]: discrete Young integral against the rectangular
//!   increments of R, the building block for Cameron-Martin pairings and
//!   Malliavin covariances.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{self, purpose};
use crate::tensor::GroupElement;

/// Fractional Brownian covariance (t^{2H} + s^{2H} - |t-s|^{2H}) / 2.
///
/// Valid for any Hurst parameter in (0, 1); H = 1/2 reduces to min(s, t).
pub fn fbm_covariance(s: f64, t: f64, hurst: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&hurst) || hurst == 0.0 {
        return Err(Error::Domain(format!(
            "fbm covariance needs hurst in (0, 1), got {hurst}"
        )));
    }
    let h2 = 2.0 * hurst;
    Ok(0.5 * (t.abs().powf(h2) + s.abs().powf(h2) - (t - s).abs().powf(h2)))
}

// ---------------------------------------------------------------------------
// CovarianceModel
// ---------------------------------------------------------------------------

/// Covariance model of the scalar driving noise on [0, horizon].
#[derive(Clone)]
pub struct CovarianceModel {
    label: String,
    horizon: f64,
    hurst: Option<f64>,
    eval: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for CovarianceModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CovarianceModel")
            .field("label", &self.label)
            .field("horizon", &self.horizon)
            .field("hurst", &self.hurst)
            .finish()
    }
}

impl CovarianceModel {
    /// Fractional Brownian model. The laboratory regime is hurst in
    /// (1/4, 1/2]: rough enough to need level-2/3 lifts, correlation signs
    /// as assumed by the diagnostics.
    pub fn fbm(hurst: f64, horizon: f64) -> Result<Self> {
        if !(hurst > 0.25 && hurst <= 0.5) {
            return Err(Error::Domain(format!(
                "fbm model needs hurst in (1/4, 1/2], got {hurst}"
            )));
        }
        if horizon <= 0.0 {
            return Err(Error::Domain("horizon must be positive".into()));
        }
        Ok(Self {
            label: format!("fbm(H={hurst})"),
            horizon,
            hurst: Some(hurst),
            eval: Arc::new(move |s, t| {
                fbm_covariance(s, t, hurst).expect("hurst validated")
            }),
        })
    }

    /// Custom covariance evaluator; the caller vouches for symmetry and
    /// positive semi-definiteness (violations surface in the sampler and the
    /// diagnostics).
    pub fn custom(
        label: impl Into<String>,
        horizon: f64,
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if horizon <= 0.0 {
            return Err(Error::Domain("horizon must be positive".into()));
        }
        Ok(Self { label: label.into(), horizon, hurst: None, eval: Arc::new(eval) })
    }

    /// Covariance R(s, t).
    pub fn r(&self, s: f64, t: f64) -> f64 {
        (self.eval)(s, t)
    }

    /// Rectangular increment R(v1, v2) - R(v1, u2) - R(u1, v2) + R(u1, u2)
    /// over [u1, v1] x [u2, v2]; equals E[(W_v1 - W_u1)(W_v2 - W_u2)].
    pub fn rect(&self, u1: f64, v1: f64, u2: f64, v2: f64) -> f64 {
        self.r(v1, v2) - self.r(v1, u2) - self.r(u1, v2) + self.r(u1, u2)
    }

    /// Time horizon T.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Hurst parameter when the model is fractional Brownian.
    pub fn hurst(&self) -> Option<f64> {
        self.hurst
    }

    /// Human-readable label used in reports.
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Variation exponent rho of the covariance: 1/(2H) for fbm, 1 otherwise.
    pub fn rho(&self) -> f64 {
        self.hurst.map_or(1.0, |h| 1.0 / (2.0 * h))
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// One sampled path of the driver on a uniform grid. Coordinates are i.i.d.
#[derive(Debug, Clone, Serialize)]
pub struct GridPathSample {
    /// Uniform grid 0 = t_0 < ... < t_M = horizon.
    pub times: Vec<f64>,
    /// `values[c][i]` is coordinate c at node i; `values[c][0] == 0`.
    pub values: Vec<Vec<f64>>,
    /// Base seed the sample was drawn from (0 for injected paths).
    pub seed: u64,
    /// Sample index within its batch (0 for injected paths).
    pub index: u64,
}

impl GridPathSample {
    /// Number of coordinates.
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Number of grid cells M.
    pub fn cells(&self) -> usize {
        self.times.len() - 1
    }

    /// Builds a deterministic path from a function of time (pinned to start
    /// at 0 by subtracting f(0)).
    pub fn from_fn(
        horizon: f64,
        cells: usize,
        dim: usize,
        f: impl Fn(f64, usize) -> f64,
    ) -> Result<Self> {
        if cells == 0 || dim == 0 || horizon <= 0.0 {
            return Err(Error::Domain(
                "injected path needs positive horizon, cells, dim".into(),
            ));
        }
        let times: Vec<f64> =
            (0..=cells).map(|i| horizon * i as f64 / cells as f64).collect();
        let values = (0..dim)
            .map(|c| {
                let base = f(0.0, c);
                times.iter().map(|&t| f(t, c) - base).collect()
            })
            .collect();
        Ok(Self { times, values, seed: 0, index: 0 })
    }

    /// CSV rendering with one row per node: t, coordinate values. Floats at
    /// 12 significant digits so identical runs produce identical bytes.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t");
        for c in 0..self.dim() {
            out.push_str(&format!(",dim{c}"));
        }
        out.push('\n');
        for (i, &t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:.11e}"));
            for c in 0..self.dim() {
                out.push_str(&format!(",{:.11e}", self.values[c][i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Exact Gaussian sampler on a uniform grid, factorized once per batch.
///
/// The Cholesky factor of [R(t_i, t_j)]_{i,j>=1} is computed at construction.
/// If the factorization fails, a diagonal jitter of 1e-12 tr(C)/M is added
/// and recorded; if it still fails the constructor reports the smallest
/// eigenvalue of the covariance matrix.
pub struct GridSampler {
    times: Vec<f64>,
    chol: DMatrix<f64>,
    dim: usize,
    /// Diagonal jitter added to achieve positive definiteness (0 when none).
    pub jitter: f64,
}

impl GridSampler {
    /// Factorizes the grid covariance of `model` for paths with `dim`
    /// i.i.d. coordinates on `cells` uniform cells.
    pub fn new(model: &CovarianceModel, dim: usize, cells: usize) -> Result<Self> {
        if cells == 0 || dim == 0 {
            return Err(Error::Domain("sampler needs cells >= 1, dim >= 1".into()));
        }
        let horizon = model.horizon();
        let times: Vec<f64> =
            (0..=cells).map(|i| horizon * i as f64 / cells as f64).collect();
        let m = cells;
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = model.r(times[i + 1], times[j + 1]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        match Cholesky::new(cov.clone()) {
            Some(ch) => Ok(Self { times, chol: ch.unpack(), dim, jitter: 0.0 }),
            None => {
                let jitter = 1e-12 * cov.trace() / m as f64;
                let mut bumped = cov.clone();
                for i in 0..m {
                    bumped[(i, i)] += jitter;
                }
                match Cholesky::new(bumped) {
                    Some(ch) => Ok(Self { times, chol: ch.unpack(), dim, jitter }),
                    None => {
                        let min_eig = cov
                            .symmetric_eigen()
                            .eigenvalues
                            .iter()
                            .cloned()
                            .fold(f64::INFINITY, f64::min);
                        Err(Error::Degenerate {
                            context: format!(
                                "grid covariance of {} not positive semi-definite",
                                model.label()
                            ),
                            witness: min_eig,
                        })
                    }
                }
            }
        }
    }

    /// Grid nodes.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Draws sample `index` of the stream rooted at `seed`. Deterministic in
    /// (seed, index) and independent of batch size or thread count.
    pub fn sample(&self, seed: u64, index: u64) -> GridPathSample {
        let m = self.times.len() - 1;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(exec::stream_seed(
            seed,
            index,
            purpose::PATH_SAMPLE,
        ));
        let values = (0..self.dim)
            .map(|_| {
                let z = DVector::from_iterator(
                    m,
                    (0..m).map(|_| StandardNormal.sample(&mut rng)),
                );
                let w = &self.chol * z;
                let mut coord = Vec::with_capacity(m + 1);
                coord.push(0.0);
                coord.extend(w.iter());
                coord
            })
            .collect();
        GridPathSample { times: self.times.clone(), values, seed, index }
    }

    /// Draws `n` samples in parallel (deterministically, see [`Self::sample`]).
    pub fn sample_batch(&self, seed: u64, n: usize) -> Vec<GridPathSample> {
        exec::par_map(n, |i| self.sample(seed, i as u64))
    }
}

/// One-shot convenience: factorize and draw a single sample.
pub fn sample_fbm_grid(
    model: &CovarianceModel,
    dim: usize,
    cells: usize,
    seed: u64,
    index: u64,
) -> Result<GridPathSample> {
    Ok(GridSampler::new(model, dim, cells)?.sample(seed, index))
}

// ---------------------------------------------------------------------------
// Circulant sampling for long grids
// ---------------------------------------------------------------------------

/// FFT-based exact sampler for fractional Brownian motion on long uniform
/// grids (circulant embedding of the stationary increment covariance).
///
/// Cholesky sampling is O(M^3) setup and O(M^2) per draw; this sampler is
/// O(M log M) per draw and makes grids of 10^5 .. 10^6 nodes practical, which
/// the high-frequency regularization experiments need because they must
/// resolve decorrelation scales of order 2^{-j/H}. Restricted to fBm models:
/// the embedding relies on stationary increments.
pub struct CirculantSampler {
    times: Vec<f64>,
    dim: usize,
    /// sqrt of the circulant eigenvalues, length 2 * cells.
    sqrt_eigs: Vec<f64>,
    fft: Arc<dyn rustfft::Fft<f64>>,
    /// Most negative raw eigenvalue clamped to zero (0 when the embedding is
    /// exactly nonnegative definite).
    pub clipped: f64,
}

impl CirculantSampler {
    /// Builds the embedding for `model` (must be fBm) on `cells` uniform
    /// cells; errors if the circulant eigenvalues are materially negative.
    pub fn new(model: &CovarianceModel, dim: usize, cells: usize) -> Result<Self> {
        let hurst = model.hurst().ok_or_else(|| {
            Error::Domain(format!(
                "circulant sampling needs an fBm model, got {}",
                model.label()
            ))
        })?;
        if cells < 2 || dim == 0 {
            return Err(Error::Domain("circulant sampler needs cells >= 2, dim >= 1".into()));
        }
        let horizon = model.horizon();
        let dt = horizon / cells as f64;
        let h2 = 2.0 * hurst;
        // Autocovariance of unit-lag increments at step dt.
        let gamma = |k: usize| -> f64 {
            let k = k as f64;
            0.5 * dt.powf(h2)
                * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
        };
        let l = 2 * cells;
        let mut c: Vec<rustfft::num_complex::Complex<f64>> =
            Vec::with_capacity(l);
        for k in 0..=cells {
            c.push(rustfft::num_complex::Complex::new(gamma(k), 0.0));
        }
        for k in (1..cells).rev() {
            c.push(rustfft::num_complex::Complex::new(gamma(k), 0.0));
        }
        let mut planner = rustfft::FftPlanner::new();
        let fft = planner.plan_fft_forward(l);
        fft.process(&mut c);
        let max_eig = c.iter().map(|z| z.re).fold(0.0f64, f64::max);
        let min_eig = c.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if min_eig < -1e-9 * max_eig {
            return Err(Error::Degenerate {
                context: "circulant embedding not nonnegative definite".into(),
                witness: min_eig,
            });
        }
        let sqrt_eigs = c.iter().map(|z| z.re.max(0.0).sqrt()).collect();
        let times = (0..=cells).map(|i| horizon * i as f64 / cells as f64).collect();
        Ok(Self {
            times,
            dim,
            sqrt_eigs,
            fft,
            clipped: min_eig.min(0.0),
        })
    }

    /// Grid nodes.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Draws sample `index` of the stream rooted at `seed`; deterministic in
    /// (seed, index) exactly like [`GridSampler::sample`].
    pub fn sample(&self, seed: u64, index: u64) -> GridPathSample {
        use rustfft::num_complex::Complex;
        let m = self.times.len() - 1;
        let l = 2 * m;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(exec::stream_seed(
            seed,
            index,
            purpose::PATH_SAMPLE,
        ));
        let scale = 1.0 / (l as f64).sqrt();
        let values = (0..self.dim)
            .map(|_| {
                // Hermitian spectral noise: real at frequencies 0 and m,
                // conjugate pairs elsewhere, variance given by the circulant
                // eigenvalues.
                let mut v = vec![Complex::new(0.0, 0.0); l];
                let a0: f64 = StandardNormal.sample(&mut rng);
                v[0] = Complex::new(self.sqrt_eigs[0] * a0, 0.0);
                let am: f64 = StandardNormal.sample(&mut rng);
                v[m] = Complex::new(self.sqrt_eigs[m] * am, 0.0);
                for k in 1..m {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    let amp = self.sqrt_eigs[k] * std::f64::consts::FRAC_1_SQRT_2;
                    v[k] = Complex::new(amp * a, amp * b);
                    v[l - k] = v[k].conj();
                }
                self.fft.process(&mut v);
                let mut coord = Vec::with_capacity(m + 1);
                coord.push(0.0);
                let mut acc = 0.0;
                for z in v.iter().take(m) {
                    acc += z.re * scale;
                    coord.push(acc);
                }
                coord
            })
            .collect();
        GridPathSample { times: self.times.clone(), values, seed, index }
    }
}

// ---------------------------------------------------------------------------
// Signature lift
// ---------------------------------------------------------------------------

/// Signature lift of a sampled path: one group-like increment per cell of the
/// coarse grid, each computed as the piecewise-linear signature over the
/// refinement sub-grid it covers.
#[derive(Debug, Clone, Serialize)]
pub struct LiftedPath {
    /// Coarse grid nodes.
    pub times: Vec<f64>,
    /// Group-like increment of each coarse cell.
    pub cells: Vec<GroupElement>,
    /// Truncation degree of the lift.
    pub degree: usize,
    /// Refinement factor used below each coarse cell.
    pub refinement: usize,
    /// Seed and index of the originating sample.
    pub seed: u64,
    /// See `seed`.
    pub index: u64,
}

impl LiftedPath {
    /// Path dimension.
    pub fn dim(&self) -> usize {
        self.cells[0].dim()
    }

    /// Number of coarse cells.
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Group-like increment over cells i..j (Chen product); i < j required.
    pub fn increment(&self, i: usize, j: usize) -> Result<GroupElement> {
        if i >= j || j > self.cells.len() {
            return Err(Error::Domain(format!(
                "increment needs cell range i < j <= {}, got ({i}, {j})",
                self.cells.len()
            )));
        }
        let mut acc = self.cells[i].clone();
        for cell in &self.cells[i + 1..j] {
            acc = acc.mul(cell)?;
        }
        Ok(acc)
    }

    /// JSON rendering (levels stored as flat arrays per cell).
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("lift serializes")
    }
}

/// Lifts a sampled path to degree-`degree` signatures on the coarse grid with
/// `sample.cells() / refinement` cells. `refinement` must divide the sample's
/// cell count; refinement 1 lifts the sample grid itself.
pub fn lift_path(
    sample: &GridPathSample,
    degree: usize,
    refinement: usize,
) -> Result<LiftedPath> {
    let total = sample.cells();
    if refinement == 0 || total % refinement != 0 {
        return Err(Error::Domain(format!(
            "refinement {refinement} must divide the sample cell count {total}"
        )));
    }
    let coarse = total / refinement;
    let dim = sample.dim();
    let cells = exec::par_map(coarse, |c| {
        let lo = c * refinement;
        let points: Vec<Vec<f64>> = (lo..=lo + refinement)
            .map(|i| (0..dim).map(|d| sample.values[d][i]).collect())
            .collect();
        crate::tensor::pl_signature(&points, degree).expect("validated points")
    });
    let times = (0..=coarse).map(|c| sample.times[c * refinement]).collect();
    Ok(LiftedPath {
        times,
        cells,
        degree,
        refinement,
        seed: sample.seed,
        index: sample.index,
    })
}

/// Lifts the deterministic linear path t (one coordinate, unit slope); handy
/// as the smooth reference driver in convergence tests.
pub fn lift_smooth_path(
    horizon: f64,
    cells: usize,
    degree: usize,
    f: impl Fn(f64) -> f64,
) -> Result<LiftedPath> {
    let sample = GridPathSample::from_fn(horizon, cells, 1, |t, _| f(t))?;
    lift_path(&sample, degree, 1)
}

// ---------------------------------------------------------------------------
// Non-determinism exponent
// ---------------------------------------------------------------------------

/// Report of the conditional-variance scaling experiment.
#[derive(Debug, Clone, Serialize)]
pub struct NondetReport {
    /// Interval lengths probed (time units).
    pub lengths: Vec<f64>,
    /// Conditional variance of the increment over each centered interval,
    /// given all grid increments outside it.
    pub variances: Vec<f64>,
    /// Fitted exponent alpha of variance ~ c length^alpha.
    pub alpha: f64,
    /// Estimated lower constant: min over probes of variance / length^alpha.
    pub c_w: f64,
    /// Jitter added to make the conditioning block factorizable (usually 0).
    pub jitter: f64,
    /// False when some conditional variance collapses to numerical zero,
    /// i.e. the process fails two-sided non-determinism.
    pub compliant: bool,
}

/// Least-squares slope and intercept of y against x.
pub(crate) fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Exact two-sided conditional-variance scaling on an M-cell grid.
///
/// For each dyadic length, the variance of the centered increment W_t - W_s
/// conditional on every grid increment outside (s, t) is computed by a Schur
/// complement on the increment covariance matrix: no Monte Carlo enters. The
/// exponent is fitted across lengths M/4, M/8, ..., down to 4 cells.
pub fn nondeterminism_exponent(
    model: &CovarianceModel,
    cells: usize,
) -> Result<NondetReport> {
    if cells < 16 {
        return Err(Error::Domain(format!(
            "nondeterminism probe needs at least 16 cells, got {cells}"
        )));
    }
    let horizon = model.horizon();
    let times: Vec<f64> =
        (0..=cells).map(|i| horizon * i as f64 / cells as f64).collect();
    let mut cov = DMatrix::zeros(cells, cells);
    for i in 0..cells {
        for j in 0..=i {
            let v = model.rect(times[i], times[i + 1], times[j], times[j + 1]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let mut lengths = Vec::new();
    let mut variances = Vec::new();
    let mut jitter_used = 0.0f64;
    let mut compliant = true;
    let mut block = cells / 4;
    while block >= 4 {
        let start = (cells - block) / 2;
        let inside: Vec<usize> = (start..start + block).collect();
        let outside: Vec<usize> =
            (0..cells).filter(|i| !(start..start + block).contains(i)).collect();

        // Unconditional variance of the block increment.
        let mut v0 = 0.0;
        for &i in &inside {
            for &j in &inside {
                v0 += cov[(i, j)];
            }
        }
        // Cross-covariance with the outside increments.
        let w = DVector::from_iterator(
            outside.len(),
            outside.iter().map(|&o| inside.iter().map(|&i| cov[(o, i)]).sum::<f64>()),
        );
        let mut coo = DMatrix::zeros(outside.len(), outside.len());
        for (a, &oa) in outside.iter().enumerate() {
            for (b, &ob) in outside.iter().enumerate() {
                coo[(a, b)] = cov[(oa, ob)];
            }
        }
        let solved = match Cholesky::new(coo.clone()) {
            Some(ch) => ch.solve(&w),
            None => {
                let jitter = 1e-12 * coo.trace() / outside.len() as f64;
                jitter_used = jitter_used.max(jitter);
                for a in 0..outside.len() {
                    coo[(a, a)] += jitter;
                }
                Cholesky::new(coo)
                    .ok_or_else(|| Error::Degenerate {
                        context: "conditioning block not factorizable".into(),
                        witness: jitter,
                    })?
                    .solve(&w)
            }
        };
        let cond_var = v0 - w.dot(&solved);
        let length = block as f64 * horizon / cells as f64;
        if cond_var < 1e-13 * v0.max(1e-300) {
            compliant = false;
        }
        lengths.push(length);
        variances.push(cond_var.max(0.0));
        block /= 2;
    }

    let (alpha, _) = if compliant {
        let lx: Vec<f64> = lengths.iter().map(|l| l.ln()).collect();
        let ly: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
        linear_fit(&lx, &ly)
    } else {
        (f64::NAN, 0.0)
    };
    let c_w = if compliant {
        lengths
            .iter()
            .zip(&variances)
            .map(|(l, v)| v / l.powf(alpha))
            .fold(f64::INFINITY, f64::min)
    } else {
        0.0
    };
    Ok(NondetReport { lengths, variances, alpha, c_w, jitter: jitter_used, compliant })
}

// ---------------------------------------------------------------------------
// Covariance diagnostics
// ---------------------------------------------------------------------------

/// Summary of the two-parameter covariance structure over [0, horizon].
#[derive(Debug, Clone, Serialize)]
pub struct CovarianceDiagnostics {
    /// Square root of the (1, rho)-variation lower bound over [0, T]^2.
    pub kappa: f64,
    /// Dyadic partition level achieving the variation bound.
    pub kappa_level: usize,
    /// Increment variance over the full interval, E(W_T - W_0)^2.
    pub sigma2: f64,
    /// Fitted exponent of kappa([a, b]) against (b - a); compare 1/(2 rho).
    pub kappa_scaling: f64,
    /// True when the fitted exponent is within 0.1 of 1/(2 rho).
    pub kappa_scaling_ok: bool,
    /// Violations of nonpositivity over disjoint rectangles (of `quadruples`).
    pub disjoint_violations: usize,
    /// Violations of nonnegativity over nested rectangles (of `quadruples`).
    pub nested_violations: usize,
    /// Number of random quadruples tested for each sign pattern.
    pub quadruples: usize,
    /// Conditional-variance fit (exponent, constant) at a coarse resolution.
    pub nondet_alpha: f64,
    /// See `nondet_alpha`.
    pub nondet_c: f64,
}

/// Mixed (1, rho)-variation of R over [a, b]^2, evaluated on the uniform
/// partition with 2^level pieces per axis: a greedy lower bound.
fn variation_level(model: &CovarianceModel, a: f64, b: f64, rho: f64, level: usize) -> f64 {
    let n = 1usize << level;
    let h = (b - a) / n as f64;
    let node = |i: usize| a + h * i as f64;
    let mut outer = 0.0;
    for j in 0..n {
        let mut inner = 0.0;
        for i in 0..n {
            inner += model
                .rect(node(i), node(i + 1), node(j), node(j + 1))
                .abs();
        }
        outer += inner.powf(rho);
    }
    outer.powf(1.0 / rho)
}

/// Greedy dyadic estimate of ||R||_{(1,rho)-var; [a,b]^2}: max over partition
/// levels 0..=max_level, together with the level achieving it.
fn variation_bound(
    model: &CovarianceModel,
    a: f64,
    b: f64,
    rho: f64,
    max_level: usize,
) -> (f64, usize) {
    let mut best = 0.0;
    let mut best_level = 0;
    for level in 0..=max_level {
        let v = variation_level(model, a, b, rho, level);
        if v > best {
            best = v;
            best_level = level;
        }
    }
    (best, best_level)
}

/// Runs the full covariance diagnostic suite.
///
/// Sign checks draw `quadruples` random time quadruples t1 < t2 < t3 < t4
/// from the given seed; a violation is counted when the disjoint-rectangle
/// increment exceeds +tol or the nested one falls below -tol, with tol scaled
/// to the covariance magnitude. Violations are reported, never raised.
pub fn covariance_diagnostics(
    model: &CovarianceModel,
    quadruples: usize,
    seed: u64,
) -> Result<CovarianceDiagnostics> {
    let horizon = model.horizon();
    let rho = model.rho();
    let max_level = 6;
    let (kappa2, kappa_level) = variation_bound(model, 0.0, horizon, rho, max_level);
    let kappa = kappa2.sqrt();
    let sigma2 = model.rect(0.0, horizon, 0.0, horizon);

    // Scaling of kappa in the interval length, on centered subintervals.
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for m in 0..4 {
        let len = horizon / (1 << m) as f64;
        let a = (horizon - len) / 2.0;
        let (k2, _) = variation_bound(model, a, a + len, rho, 5);
        lx.push(len.ln());
        ly.push(k2.sqrt().ln());
    }
    let (kappa_scaling, _) = linear_fit(&lx, &ly);
    let kappa_scaling_ok = (kappa_scaling - 1.0 / (2.0 * rho)).abs() <= 0.1;

    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(exec::stream_seed(
        seed,
        0,
        purpose::DIAGNOSTIC,
    ));
    let tol = 1e-12 * sigma2.abs().max(1.0);
    let mut disjoint_violations = 0;
    let mut nested_violations = 0;
    for _ in 0..quadruples {
        let mut ts: Vec<f64> = (0..4)
            .map(|_| {
                let u: f64 = rand::Rng::gen(&mut rng);
                u * horizon
            })
            .collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (t1, t2, t3, t4) = (ts[0], ts[1], ts[2], ts[3]);
        if model.rect(t1, t2, t3, t4) > tol {
            disjoint_violations += 1;
        }
        if model.rect(t2, t3, t1, t4) < -tol {
            nested_violations += 1;
        }
    }

    let nondet = nondeterminism_exponent(model, 128)?;
    Ok(CovarianceDiagnostics {
        kappa,
        kappa_level,
        sigma2,
        kappa_scaling,
        kappa_scaling_ok,
        disjoint_violations,
        nested_violations,
        quadruples,
        nondet_alpha: nondet.alpha,
        nondet_c: nondet.c_w,
    })
}

// ---------------------------------------------------------------------------
// 2D Young integral
// ---------------------------------------------------------------------------

/// Result of a discrete 2D Young integral with a refinement error estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Young2d {
    /// Left-point Riemann-Stieltjes sum on the full grid.
    pub value: f64,
    /// |full-grid sum - half-grid sum|, a Richardson-style error proxy.
    pub error_estimate: f64,
}

/// Integral of f(u) g(v) against the rectangular increments of R over
/// [0, horizon]^2 with `cells` uniform cells per axis (cells must be even for
/// the half-grid error estimate).
pub fn young_2d_integral(
    model: &CovarianceModel,
    cells: usize,
    f: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
) -> Result<Young2d> {
    if cells < 2 || cells % 2 != 0 {
        return Err(Error::Domain(format!(
            "2D Young integral needs an even cell count >= 2, got {cells}"
        )));
    }
    let horizon = model.horizon();
    let sum_on = |n: usize| -> f64 {
        let h = horizon / n as f64;
        let node = |i: usize| h * i as f64;
        let fv: Vec<f64> = (0..n).map(|i| f(node(i))).collect();
        let gv: Vec<f64> = (0..n).map(|j| g(node(j))).collect();
        let mut acc = 0.0;
        for i in 0..n {
            if fv[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                if gv[j] == 0.0 {
                    continue;
                }
                acc += fv[i]
                    * gv[j]
                    * model.rect(node(i), node(i + 1), node(j), node(j + 1));
            }
        }
        acc
    };
    let full = sum_on(cells);
    let half = sum_on(cells / 2);
    Ok(Young2d { value: full, error_estimate: (full - half).abs() })
}
