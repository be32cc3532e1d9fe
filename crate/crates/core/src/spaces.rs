//! Littlewood-Paley blocks, Besov and weighted Hoelder norms, synthetic
//! drifts of prescribed regularity, and the GRR Hoelder estimator.
//!
//! Functions live on periodic uniform grids over [0, L)^dim (dim 1 or 2)
//! with a power-of-two node count, so frequency localization is exact: the
//! block multipliers form a partition of unity on every representable
//! integer frequency, and reconstruction holds to FFT roundoff.
//!
//! The block profile is a raised cosine that equals 1 up to radius 3/4 and
//! vanishes from radius 1, giving annuli phi_j supported in 2^j (3/4, 2)
//! (inside the classical 2^j [3/4, 8/3] window) with only adjacent blocks
//! overlapping, and with every pure integer frequency 2^j landing entirely
//! in block j.
//!
//! The GRR estimator turns the double-integral functional
//! kappa_f^p = integral |f(u) - f(v)|^p / |u - v|^{alpha p + 1} du dv into a
//! pointwise Hoelder certificate |f(t) - f(s)| <= C kappa_f |t - s|^{alpha - 1/p}.
//! The constant C is not derived; it was calibrated once on Brownian sample
//! paths and frozen (see [`GRR_RATIO_BOUND`]).

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rustfft::num_complex::Complex;
use serde::Serialize;

use crate::drift::{DriftModel, DriftTag};
use crate::error::{Error, Result};
use crate::exec::{purpose, stream_seed};
use crate::gaussian::linear_fit;

// ---------------------------------------------------------------------------
// Grid functions
// ---------------------------------------------------------------------------

/// Real function sampled on a periodic uniform grid over [0, L)^dim.
#[derive(Debug, Clone)]
pub struct GridFunction {
    dim: usize,
    nodes: usize,
    length: f64,
    /// Row-major values; index x + nodes * y in two dimensions.
    values: Vec<f64>,
}

impl GridFunction {
    fn validate(dim: usize, nodes: usize, length: f64) -> Result<()> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::Shape(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if nodes < 4 || !nodes.is_power_of_two() {
            return Err(Error::Domain(format!(
                "node count must be a power of two >= 4, got {nodes}"
            )));
        }
        if !(length > 0.0) {
            return Err(Error::Domain("period length must be positive".into()));
        }
        Ok(())
    }

    /// Samples f on the 1-D grid x_k = L k / n.
    pub fn from_fn_1d(length: f64, nodes: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::validate(1, nodes, length)?;
        let values: Vec<f64> =
            (0..nodes).map(|k| f(length * k as f64 / nodes as f64)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("grid function values must be finite".into()));
        }
        Ok(Self { dim: 1, nodes, length, values })
    }

    /// Samples f on the 2-D grid (L k / n, L l / n).
    pub fn from_fn_2d(
        length: f64,
        nodes: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        Self::validate(2, nodes, length)?;
        let mut values = Vec::with_capacity(nodes * nodes);
        for y in 0..nodes {
            for x in 0..nodes {
                values.push(f(
                    length * x as f64 / nodes as f64,
                    length * y as f64 / nodes as f64,
                ));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("grid function values must be finite".into()));
        }
        Ok(Self { dim: 2, nodes, length, values })
    }

    /// Spatial dimension (1 or 2).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per axis.
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Period length L.
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Raw values (row-major in 2-D).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sup norm on the grid.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// L^p norm with the normalized (probability) measure on the torus;
    /// p = infinity gives the sup norm, so constants have norm |c| for all p.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.sup_norm();
        }
        let n = self.values.len() as f64;
        (self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() / n).powf(1.0 / p)
    }

    /// CSV rendering: coordinates then value, one node per row.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        match self.dim {
            1 => {
                out.push_str("x,f\n");
                for (k, v) in self.values.iter().enumerate() {
                    let x = self.length * k as f64 / self.nodes as f64;
                    out.push_str(&format!("{x:.11e},{v:.11e}\n"));
                }
            }
            _ => {
                out.push_str("x,y,f\n");
                for y in 0..self.nodes {
                    for x in 0..self.nodes {
                        let v = self.values[x + self.nodes * y];
                        let xf = self.length * x as f64 / self.nodes as f64;
                        let yf = self.length * y as f64 / self.nodes as f64;
                        out.push_str(&format!("{xf:.11e},{yf:.11e},{v:.11e}\n"));
                    }
                }
            }
        }
        out
    }

    /// Complex spectrum (forward DFT, unnormalized).
    fn spectrum(&self) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> =
            self.values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        match self.dim {
            1 => fft_axis(&mut buf, self.nodes, 1, false),
            _ => {
                fft_axis(&mut buf, self.nodes, self.nodes, false);
                transpose(&mut buf, self.nodes);
                fft_axis(&mut buf, self.nodes, self.nodes, false);
                transpose(&mut buf, self.nodes);
            }
        }
        buf
    }

    /// Rebuilds a grid function from a spectrum (inverse DFT, normalized).
    fn rebuild_from_spectrum(&self, mut spec: Vec<Complex<f64>>) -> Self {
        match self.dim {
            1 => fft_axis(&mut spec, self.nodes, 1, true),
            _ => {
                fft_axis(&mut spec, self.nodes, self.nodes, true);
                transpose(&mut spec, self.nodes);
                fft_axis(&mut spec, self.nodes, self.nodes, true);
                transpose(&mut spec, self.nodes);
            }
        }
        let scale = 1.0 / self.values.len() as f64;
        let values = spec.iter().map(|c| c.re * scale).collect();
        Self { dim: self.dim, nodes: self.nodes, length: self.length, values }
    }

    /// Applies a real radial Fourier multiplier m(|k|) with |k| the integer
    /// frequency modulus.
    fn apply_radial_multiplier(&self, m: impl Fn(f64) -> f64) -> Self {
        let mut spec = self.spectrum();
        let n = self.nodes;
        match self.dim {
            1 => {
                for (k, c) in spec.iter_mut().enumerate() {
                    *c *= m(signed_freq(k, n).abs());
                }
            }
            _ => {
                for y in 0..n {
                    let fy = signed_freq(y, n);
                    for x in 0..n {
                        let fx = signed_freq(x, n);
                        spec[x + n * y] *= m((fx * fx + fy * fy).sqrt());
                    }
                }
            }
        }
        self.rebuild_from_spectrum(spec)
    }

    /// Spectral partial derivative along `axis` (physical frequencies
    /// 2 pi k / L, exact on band-limited data).
    pub fn derivative(&self, axis: usize) -> Result<Self> {
        if axis >= self.dim {
            return Err(Error::Domain(format!(
                "axis {axis} out of range for dimension {}",
                self.dim
            )));
        }
        let mut spec = self.spectrum();
        let n = self.nodes;
        let unit = 2.0 * PI / self.length;
        match self.dim {
            1 => {
                for (k, c) in spec.iter_mut().enumerate() {
                    *c *= Complex::new(0.0, unit * signed_freq(k, n));
                }
            }
            _ => {
                for y in 0..n {
                    for x in 0..n {
                        let f = if axis == 0 { signed_freq(x, n) } else { signed_freq(y, n) };
                        spec[x + n * y] *= Complex::new(0.0, unit * f);
                    }
                }
            }
        }
        Ok(self.rebuild_from_spectrum(spec))
    }
}

/// Signed integer frequency of DFT bin k on an n-point grid.
fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 { k as f64 } else { k as f64 - n as f64 }
}

/// In-place FFT along contiguous rows of length `len`, `rows` of them.
fn fft_axis(buf: &mut [Complex<f64>], len: usize, rows: usize, inverse: bool) {
    let mut planner = rustfft::FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    };
    for r in 0..rows {
        fft.process(&mut buf[r * len..(r + 1) * len]);
    }
}

/// In-place square transpose.
fn transpose(buf: &mut [Complex<f64>], n: usize) {
    for y in 0..n {
        for x in (y + 1)..n {
            buf.swap(x + n * y, y + n * x);
        }
    }
}

// ---------------------------------------------------------------------------
// Littlewood-Paley blocks
// ---------------------------------------------------------------------------

/// Raised-cosine cutoff: 1 up to 3/4, 0 from 1, smooth between.
fn lp_cutoff(r: f64) -> f64 {
    if r <= 0.75 {
        1.0
    } else if r >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * (r - 0.75) / 0.25).cos())
    }
}

/// Multiplier of block j >= 0 at integer frequency modulus r.
fn lp_annulus(j: i64, r: f64) -> f64 {
    let scale = (2f64).powi(j as i32);
    lp_cutoff(r / (2.0 * scale)) - lp_cutoff(r / scale)
}

/// Largest computable block index on an n-point-per-axis grid: the block
/// center 2^j must stay below the Nyquist frequency n/2.
pub fn max_block(nodes: usize) -> i64 {
    (nodes as f64 / 2.0).log2().ceil() as i64 - 1
}

/// Littlewood-Paley block of f: j = -1 is the low-frequency ball, j >= 0 the
/// dyadic annulus at 2^j. Blocks up to [`max_block`] tile every representable
/// frequency exactly once in total.
pub fn lp_block(f: &GridFunction, j: i64) -> Result<GridFunction> {
    if j < -1 || j > max_block(f.nodes()) {
        return Err(Error::Domain(format!(
            "block {j} outside [-1, {}] for {} nodes",
            max_block(f.nodes()),
            f.nodes()
        )));
    }
    Ok(if j == -1 {
        f.apply_radial_multiplier(lp_cutoff)
    } else {
        f.apply_radial_multiplier(|r| lp_annulus(j, r))
    })
}

/// Per-block magnitudes of a grid function, for spectra reports.
#[derive(Debug, Clone, Serialize)]
pub struct BlockSpectrum {
    /// Block indices, starting at -1.
    pub blocks: Vec<i64>,
    /// Sup norm of each block.
    pub sup_norms: Vec<f64>,
    /// L^2 norm (normalized measure) of each block.
    pub l2_norms: Vec<f64>,
}

impl BlockSpectrum {
    /// JSON rendering with stable field order.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("spectrum serializes")
    }
}

/// Computes sup and L^2 magnitudes of every computable block.
pub fn block_spectrum(f: &GridFunction) -> Result<BlockSpectrum> {
    let top = max_block(f.nodes());
    let mut blocks = Vec::new();
    let mut sup_norms = Vec::new();
    let mut l2_norms = Vec::new();
    for j in -1..=top {
        let g = lp_block(f, j)?;
        blocks.push(j);
        sup_norms.push(g.sup_norm());
        l2_norms.push(g.lp_norm(2.0));
    }
    Ok(BlockSpectrum { blocks, sup_norms, l2_norms })
}

// ---------------------------------------------------------------------------
// Besov norms
// ---------------------------------------------------------------------------

/// Parameters of a Besov norm B^alpha_{p,r}.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BesovParams {
    /// Regularity exponent.
    pub alpha: f64,
    /// Inner integrability (may be infinite).
    pub p: f64,
    /// Outer summability (may be infinite).
    pub r: f64,
    /// Truncation: blocks -1..=j_max enter the sum.
    pub j_max: i64,
}

impl BesovParams {
    /// Hoelder-type parameters: p = r = infinity.
    pub fn holder(alpha: f64, j_max: i64) -> Self {
        Self { alpha, p: f64::INFINITY, r: f64::INFINITY, j_max }
    }
}

/// Truncated Besov norm: ell^r over blocks of 2^{alpha j} ||block_j f||_p,
/// blocks -1..=min(j_max, max computable). For p = r = infinity this is the
/// sup over blocks, comparable to the grid Hoelder seminorm.
pub fn besov_norm(f: &GridFunction, params: &BesovParams) -> Result<f64> {
    if params.j_max < 1 {
        return Err(Error::Domain(format!(
            "besov truncation must be >= 1, got {}",
            params.j_max
        )));
    }
    let top = params.j_max.min(max_block(f.nodes()));
    let mut acc: f64 = 0.0;
    for j in -1..=top {
        let weight = (2f64).powf(params.alpha * j as f64);
        let term = weight * lp_block(f, j)?.lp_norm(params.p);
        if params.r.is_infinite() {
            acc = acc.max(term);
        } else {
            acc += term.powf(params.r);
        }
    }
    Ok(if params.r.is_infinite() { acc } else { acc.powf(1.0 / params.r) })
}

// ---------------------------------------------------------------------------
// Weighted Hoelder norms
// ---------------------------------------------------------------------------

/// Terms of a weighted Hoelder norm estimate.
#[derive(Debug, Clone, Serialize)]
pub struct WeightedHolderReport {
    /// sup |f| / w_0 over the probe grid.
    pub sup_term: f64,
    /// sup |grad f| / w_1 (zero when alpha <= 1).
    pub derivative_term: f64,
    /// Weighted Hoelder quotient of f (alpha <= 1) or of grad f (alpha > 1).
    pub quotient_term: f64,
    /// Sum of the three terms: a lower bound for the weighted norm.
    pub total: f64,
    /// Regularity exponent used.
    pub alpha: f64,
}

/// Grid/Monte-Carlo lower bound of the weighted Hoelder norm of a callable
/// on a probe box: sup |f|/w_0, plus for alpha > 1 the weighted gradient sup
/// |grad f|/w_1, plus the weighted quotient
/// |g(x) - g(y)| / (|x - y|^{alpha - k} max(w_k(x), w_k(y))) with g = f for
/// alpha <= 1 (k = 0) and g = grad f for alpha > 1 (k = 1, gradients by
/// central differences). Probe pairs are all grid pairs in one dimension and
/// a seeded random selection in higher dimension, so the result is a lower
/// bound that grows toward the true norm with the probe budget.
#[allow(clippy::too_many_arguments)]
pub fn weighted_holder_norm(
    f: &dyn Fn(&[f64]) -> f64,
    dim: usize,
    alpha: f64,
    w0: &dyn Fn(&[f64]) -> f64,
    w1: &dyn Fn(&[f64]) -> f64,
    lo: &[f64],
    hi: &[f64],
    nodes_per_dim: usize,
    seed: u64,
) -> Result<WeightedHolderReport> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 2], got {alpha}")));
    }
    if dim == 0 || lo.len() != dim || hi.len() != dim || nodes_per_dim < 2 {
        return Err(Error::Shape("probe box needs matching bounds and >= 2 nodes".into()));
    }
    if lo.iter().zip(hi).any(|(a, b)| a >= b) {
        return Err(Error::Domain("probe box needs lo < hi per dimension".into()));
    }
    let diameter: f64 = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let grad_step: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a) * 1e-5).collect();
    let grad = |x: &[f64]| -> Vec<f64> {
        (0..dim)
            .map(|k| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[k] += grad_step[k];
                xm[k] -= grad_step[k];
                (f(&xp) - f(&xm)) / (2.0 * grad_step[k])
            })
            .collect()
    };

    // Probe points: the full grid in 1-D, a seeded uniform cloud otherwise.
    let points: Vec<Vec<f64>> = if dim == 1 {
        (0..nodes_per_dim)
            .map(|i| {
                vec![lo[0] + (hi[0] - lo[0]) * i as f64 / (nodes_per_dim - 1) as f64]
            })
            .collect()
    } else {
        let mut rng =
            ChaCha12Rng::seed_from_u64(stream_seed(seed, 0, purpose::DIAGNOSTIC));
        (0..nodes_per_dim * nodes_per_dim)
            .map(|_| {
                (0..dim).map(|k| rng.gen_range(lo[k]..hi[k])).collect()
            })
            .collect()
    };

    let above_one = alpha > 1.0;
    let mut sup_term = 0.0f64;
    let mut derivative_term = 0.0f64;
    let gs: Vec<Vec<f64>> = points
        .iter()
        .map(|x| {
            sup_term = sup_term.max(f(x).abs() / w0(x).max(f64::MIN_POSITIVE));
            if above_one {
                let g = grad(x);
                let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                derivative_term =
                    derivative_term.max(gn / w1(x).max(f64::MIN_POSITIVE));
                g
            } else {
                vec![f(x)]
            }
        })
        .collect();

    let k_exp = if above_one { alpha - 1.0 } else { alpha };
    let weight_at = |x: &[f64]| if above_one { w1(x) } else { w0(x) };
    let mut quotient_term = 0.0f64;
    let mut consider = |i: usize, j: usize| {
        let dist: f64 = points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dist < 1e-9 * diameter {
            return;
        }
        let diff: f64 = gs[i]
            .iter()
            .zip(&gs[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let w = weight_at(&points[i]).max(weight_at(&points[j])).max(f64::MIN_POSITIVE);
        quotient_term = quotient_term.max(diff / (dist.powf(k_exp) * w));
    };
    if dim == 1 {
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                consider(i, j);
            }
        }
    } else {
        let mut rng =
            ChaCha12Rng::seed_from_u64(stream_seed(seed, 1, purpose::DIAGNOSTIC));
        let budget = 8 * points.len();
        for _ in 0..budget {
            let i = rng.gen_range(0..points.len());
            let j = rng.gen_range(0..points.len());
            if i != j {
                consider(i, j);
            }
        }
    }
    Ok(WeightedHolderReport {
        sup_term,
        derivative_term,
        quotient_term,
        total: sup_term + derivative_term + quotient_term,
        alpha,
    })
}

// ---------------------------------------------------------------------------
// Synthetic drifts
// ---------------------------------------------------------------------------

/// Kinds of synthetic drifts with prescribed regularity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthKind {
    /// Lacunary cosine series with Hoelder exponent kappa; frequencies up to
    /// 2^12 per coordinate.
    Weierstrass,
    /// Single dyadic frequency block: one cosine at frequency 2^j.
    LpBlock {
        /// Block index of the single frequency.
        j: usize,
    },
    /// Compactly supported smooth bump of radius 2.
    SmoothBump,
}

/// Number of lacunary terms in the Weierstrass synthesis.
const WEIERSTRASS_TERMS: usize = 13;

/// Builds a drift of prescribed regularity, componentwise in the matching
/// coordinate, with seeded random phases so distinct seeds give distinct but
/// reproducible fields. Each component is 2 pi periodic, so the drift can be
/// analyzed directly on a [`GridFunction`] grid of length 2 pi.
pub fn synth_drift(kind: SynthKind, dim: usize, kappa: f64, seed: u64) -> Result<DriftModel> {
    if dim == 0 {
        return Err(Error::Shape("drift dimension must be positive".into()));
    }
    if !(kappa > 0.0) {
        return Err(Error::Domain(format!(
            "synthetic drifts need kappa > 0, got {kappa}"
        )));
    }
    let phase = |c: usize, j: usize| -> f64 {
        let s = stream_seed(seed, (c * 64 + j) as u64, purpose::DRIFT_PHASE);
        ChaCha12Rng::seed_from_u64(s).gen_range(0.0..2.0 * PI)
    };
    match kind {
        SynthKind::Weierstrass => {
            let phases: Vec<Vec<f64>> = (0..dim)
                .map(|c| (0..WEIERSTRASS_TERMS).map(|j| phase(c, j)).collect())
                .collect();
            let bound: f64 =
                (0..WEIERSTRASS_TERMS).map(|j| (2f64).powf(-kappa * j as f64)).sum();
            let label = format!("weierstrass kappa={kappa}");
            DriftModel::new(
                dim,
                &label,
                DriftTag::Weierstrass,
                kappa,
                Some(bound),
                move |x| {
                    (0..dim)
                        .map(|c| {
                            (0..WEIERSTRASS_TERMS)
                                .map(|j| {
                                    let freq = (1u64 << j) as f64;
                                    (2f64).powf(-kappa * j as f64)
                                        * (freq * x[c] + phases[c][j]).cos()
                                })
                                .sum()
                        })
                        .collect()
                },
            )
        }
        SynthKind::LpBlock { j } => {
            if j > 20 {
                return Err(Error::Domain(format!("block frequency 2^{j} too large")));
            }
            let phases: Vec<f64> = (0..dim).map(|c| phase(c, 0)).collect();
            let freq = (1u64 << j) as f64;
            let label = format!("lp block j={j}");
            DriftModel::new(
                dim,
                &label,
                DriftTag::LpBlock,
                kappa,
                Some(1.0),
                move |x| {
                    (0..dim).map(|c| (freq * x[c] + phases[c]).cos()).collect()
                },
            )
        }
        SynthKind::SmoothBump => {
            let amps: Vec<f64> = (0..dim)
                .map(|c| {
                    let s = stream_seed(seed, c as u64, purpose::DRIFT_PHASE);
                    ChaCha12Rng::seed_from_u64(s).gen_range(0.5..1.0)
                })
                .collect();
            DriftModel::new(
                dim,
                "smooth bump",
                DriftTag::Smooth,
                kappa,
                Some(1.0),
                move |x| {
                    let rho2 =
                        x.iter().map(|v| v * v).sum::<f64>() / (BUMP_RADIUS * BUMP_RADIUS);
                    let shape = if rho2 < 1.0 {
                        (1.0 - 1.0 / (1.0 - rho2)).exp()
                    } else {
                        0.0
                    };
                    amps.iter().map(|a| a * shape).collect()
                },
            )
        }
    }
}

/// Support radius of the smooth bump drift.
pub const BUMP_RADIUS: f64 = 2.0;

/// Estimated Hoelder exponent of a 2 pi periodic scalar function via the
/// dyadic mean-increment slope on an n-point grid: regress
/// log mean_x |f(x + h) - f(x)| against log h over dyadic h, capping the fit
/// where increments saturate at the sup-norm scale.
pub fn holder_exponent_estimate(f: &dyn Fn(f64) -> f64, nodes: usize) -> Result<f64> {
    if nodes < 64 || !nodes.is_power_of_two() {
        return Err(Error::Domain(format!(
            "exponent estimate needs a power-of-two grid >= 64, got {nodes}"
        )));
    }
    let values: Vec<f64> =
        (0..nodes).map(|k| f(2.0 * PI * k as f64 / nodes as f64)).collect();
    let mut hs = Vec::new();
    let mut means = Vec::new();
    let mut span = 1usize;
    while span <= nodes / 16 {
        let mean = (0..nodes)
            .map(|k| (values[(k + span) % nodes] - values[k]).abs())
            .sum::<f64>()
            / nodes as f64;
        hs.push(((2.0 * PI * span as f64) / nodes as f64).ln());
        means.push(mean.max(f64::MIN_POSITIVE).ln());
        span *= 2;
    }
    Ok(linear_fit(&hs, &means).0)
}

// ---------------------------------------------------------------------------
// GRR estimator
// ---------------------------------------------------------------------------

/// Frozen ratio bound of the GRR certificate |f(t) - f(s)| <=
/// C kappa_f |t - s|^{alpha - 1/p}.
///
/// Calibrated once: 200 Brownian sample paths (M = 512, seeds 0..200 of the
/// grid sampler stream at root seed 7), alpha in {0.35, 0.4, 0.45, 0.5},
/// p = 16, plus a Lipschitz battery at alpha = 1, p = 4. The largest
/// observed ratio was 1.4350; multiplying by a safety factor of 1.5 gives
/// the frozen value below. The sharp theoretical constant is far larger;
/// the certificate checks the shape of the bound, not an uncomputable
/// constant.
pub const GRR_RATIO_BOUND: f64 = 2.153;

/// GRR certificate of one sampled path.
#[derive(Debug, Clone, Serialize)]
pub struct GrrReport {
    /// Discretized double-integral functional kappa_f (already ^{1/p}).
    pub kappa_f: f64,
    /// Largest observed ratio |f(t) - f(s)| / (kappa_f |t - s|^{alpha - 1/p}).
    pub max_ratio: f64,
    /// Number of grid pairs violating the frozen bound.
    pub violations: usize,
    /// Number of pairs checked.
    pub pairs: usize,
    /// Regularity exponent.
    pub alpha: f64,
    /// Integrability exponent.
    pub p: f64,
}

/// Computes the discrete GRR functional and checks the pointwise Hoelder
/// bound with the frozen constant on every grid pair. Requires alpha p > 1
/// so the certificate exponent alpha - 1/p is positive.
pub fn grr_bound(times: &[f64], values: &[f64], alpha: f64, p: f64) -> Result<GrrReport> {
    let n = times.len();
    if n < 3 || values.len() != n {
        return Err(Error::Shape("need >= 3 matching samples".into()));
    }
    if !(alpha * p > 1.0) || !(alpha > 0.0) || !(p >= 1.0) {
        return Err(Error::Domain(format!(
            "GRR needs alpha p > 1 with p >= 1, got alpha {alpha}, p {p}"
        )));
    }
    let mut functional = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dt = (times[i] - times[j]).abs();
            let wi = cell_weight(times, i);
            let wj = cell_weight(times, j);
            functional +=
                (values[i] - values[j]).abs().powf(p) / dt.powf(alpha * p + 1.0) * wi * wj;
        }
    }
    let kappa_f = functional.powf(1.0 / p);
    let exponent = alpha - 1.0 / p;
    let mut max_ratio = 0.0f64;
    let mut violations = 0usize;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            pairs += 1;
            let incr = (values[i] - values[j]).abs();
            if kappa_f < 1e-300 {
                if incr > 0.0 {
                    violations += 1;
                    max_ratio = f64::INFINITY;
                }
                continue;
            }
            let ratio = incr / (kappa_f * (times[j] - times[i]).abs().powf(exponent));
            max_ratio = max_ratio.max(ratio);
            if ratio > GRR_RATIO_BOUND {
                violations += 1;
            }
        }
    }
    Ok(GrrReport { kappa_f, max_ratio, violations, pairs, alpha, p })
}

/// Trapezoid weight of node i.
fn cell_weight(times: &[f64], i: usize) -> f64 {
    let n = times.len();
    if i == 0 {
        0.5 * (times[1] - times[0])
    } else if i == n - 1 {
        0.5 * (times[n - 1] - times[n - 2])
    } else {
        0.5 * (times[i + 1] - times[i - 1])
    }
}

/// Refinement diagnostic of the GRR functional.
#[derive(Debug, Clone, Serialize)]
pub struct GrrRefinementReport {
    /// Subsampling strides (finest first).
    pub strides: Vec<usize>,
    /// kappa_f at each stride.
    pub kappas: Vec<f64>,
    /// Fitted growth exponent gamma with kappa_f ~ h^{-gamma} as the mesh h
    /// shrinks; positive gamma means divergence under refinement.
    pub growth: f64,
    /// True when the functional is stable under refinement.
    pub in_class: bool,
    /// Human-readable verdict.
    pub message: String,
}

/// Computes kappa_f on dyadic subsamples of one path and fits its growth as
/// the mesh refines. A functional that diverges under refinement means the
/// path is not in the GRR class at this (alpha, p): its true double integral
/// is infinite.
pub fn grr_refinement(
    times: &[f64],
    values: &[f64],
    alpha: f64,
    p: f64,
    levels: usize,
) -> Result<GrrRefinementReport> {
    let cells = times.len().saturating_sub(1);
    if levels < 2 || cells % (1 << (levels - 1)) != 0 {
        return Err(Error::Domain(format!(
            "need >= 2 dyadic levels dividing {cells} cells"
        )));
    }
    let mut strides = Vec::with_capacity(levels);
    let mut kappas = Vec::with_capacity(levels);
    for l in 0..levels {
        let stride = 1usize << l;
        let sub_t: Vec<f64> = times.iter().step_by(stride).cloned().collect();
        let sub_v: Vec<f64> = values.iter().step_by(stride).cloned().collect();
        strides.push(stride);
        kappas.push(grr_bound(&sub_t, &sub_v, alpha, p)?.kappa_f);
    }
    let xs: Vec<f64> = strides.iter().map(|&s| (s as f64).ln()).collect();
    let ys: Vec<f64> = kappas.iter().map(|k| k.max(f64::MIN_POSITIVE).ln()).collect();
    // kappa ~ stride^{-growth}: positive growth = larger kappa at finer mesh.
    let growth = -linear_fit(&xs, &ys).0;
    let in_class = growth <= 0.1;
    let message = if in_class {
        format!("kappa_f stable under refinement (growth {growth:.3})")
    } else {
        format!("not in this GRR class: kappa_f grows as h^-{growth:.3} under refinement")
    };
    Ok(GrrRefinementReport { strides, kappas, growth, in_class, message })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{CovarianceModel, GridSampler};

    #[test]
    fn pure_frequency_lands_in_its_own_block() {
        let n = 256;
        let j0 = 4i64;
        let f = GridFunction::from_fn_1d(2.0 * PI, n, |x| ((1 << j0) as f64 * x).cos())
            .unwrap();
        let own = lp_block(&f, j0).unwrap();
        let diff: f64 = own
            .values()
            .iter()
            .zip(f.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-8, "own block must reproduce the probe: {diff}");
        for j in -1..=max_block(n) {
            if (j - j0).abs() >= 2 {
                let other = lp_block(&f, j).unwrap();
                assert!(
                    other.sup_norm() <= 1e-8,
                    "block {j} should not see frequency 2^{j0}"
                );
            }
        }
    }

    #[test]
    fn blocks_reconstruct_bandlimited_functions() {
        let n = 512;
        let f = GridFunction::from_fn_1d(2.0 * PI, n, |x| {
            0.7 + (3.0 * x).cos() - 0.4 * (17.0 * x + 0.3).sin() + 0.2 * (90.0 * x).cos()
        })
        .unwrap();
        let mut sum = vec![0.0; n];
        for j in -1..=max_block(n) {
            for (s, v) in sum.iter_mut().zip(lp_block(&f, j).unwrap().values()) {
                *s += v;
            }
        }
        let err: f64 = sum
            .iter()
            .zip(f.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "reconstruction defect {err}");
    }

    #[test]
    fn blocks_reconstruct_in_two_dimensions() {
        let n = 64;
        let f = GridFunction::from_fn_2d(2.0 * PI, n, |x, y| {
            (2.0 * x).cos() * (5.0 * y).sin() + 0.3 * (11.0 * (x + y)).cos()
        })
        .unwrap();
        let mut sum = vec![0.0; n * n];
        for j in -1..=max_block(n) {
            for (s, v) in sum.iter_mut().zip(lp_block(&f, j).unwrap().values()) {
                *s += v;
            }
        }
        let err: f64 = sum
            .iter()
            .zip(f.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "2-D reconstruction defect {err}");
        assert!(lp_block(&f, max_block(n) + 1).is_err());
    }

    #[test]
    fn bernstein_ratio_is_bounded_and_stable() {
        // For a block supported in frequencies < 2 * 2^j, Bernstein gives
        // ||d block|| <= (2 pi / L) 2 * 2^j ||block||; with L = 2 pi the
        // normalized ratio stays below 2 and does not drift across j.
        let b = synth_drift(SynthKind::Weierstrass, 1, 0.5, 5).unwrap();
        let f = GridFunction::from_fn_1d(2.0 * PI, 1 << 12, |x| b.eval(&[x])[0]).unwrap();
        let mut ratios = Vec::new();
        for j in 2..=9i64 {
            let block = lp_block(&f, j).unwrap();
            let deriv = block.derivative(0).unwrap();
            let ratio = deriv.sup_norm() / ((2f64).powi(j as i32) * block.sup_norm());
            assert!(ratio <= 2.0 * 1.01, "Bernstein violated at block {j}: {ratio}");
            ratios.push(ratio);
        }
        let (lo, hi) = ratios
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
        assert!(hi / lo < 4.0, "ratios must be stable across blocks: {ratios:?}");
    }

    #[test]
    fn besov_norm_of_probe_and_zero() {
        let n = 512;
        let zero = GridFunction::from_fn_1d(2.0 * PI, n, |_| 0.0).unwrap();
        let params = BesovParams::holder(0.4, 8);
        assert_eq!(besov_norm(&zero, &params).unwrap(), 0.0);

        let j0 = 5usize;
        let f =
            GridFunction::from_fn_1d(2.0 * PI, n, |x| ((1 << j0) as f64 * x).cos()).unwrap();
        let want = (2f64).powf(0.4 * j0 as f64);
        let got = besov_norm(&f, &params).unwrap();
        assert!(
            (got - want).abs() < 1e-6 * want,
            "single active block: {got} vs {want}"
        );
    }

    #[test]
    fn besov_norm_is_monotone_in_alpha() {
        let b = synth_drift(SynthKind::Weierstrass, 1, 0.5, 11).unwrap();
        let f = GridFunction::from_fn_1d(2.0 * PI, 1 << 11, |x| b.eval(&[x])[0]).unwrap();
        let mut last = 0.0;
        for alpha in [0.1, 0.3, 0.5, 0.7] {
            let norm = besov_norm(&f, &BesovParams::holder(alpha, 9)).unwrap();
            assert!(norm >= last, "besov norm must grow with alpha");
            last = norm;
        }
    }

    #[test]
    fn besov_tracks_the_holder_seminorm() {
        // p = r = infinity Besov norms and grid Hoelder seminorms are
        // equivalent up to constants; the ratio must stay in one fixed
        // window across unrelated probes.
        let alpha = 0.4;
        let probes: Vec<Box<dyn Fn(f64) -> f64>> = vec![
            Box::new(|x: f64| (4.0 * x).cos()),
            Box::new(|x: f64| (32.0 * x).cos() + 0.5 * (2.0 * x).sin()),
            {
                let b = synth_drift(SynthKind::Weierstrass, 1, 0.6, 3).unwrap();
                Box::new(move |x: f64| b.eval(&[x])[0])
            },
        ];
        for probe in &probes {
            let f = GridFunction::from_fn_1d(2.0 * PI, 1 << 10, probe).unwrap();
            let besov = besov_norm(&f, &BesovParams::holder(alpha, 8)).unwrap();
            let holder = weighted_holder_norm(
                &|x: &[f64]| probe(x[0]),
                1,
                alpha,
                &|_: &[f64]| 1.0,
                &|_: &[f64]| 1.0,
                &[0.0],
                &[2.0 * PI],
                257,
                1,
            )
            .unwrap()
            .total;
            let ratio = besov / holder;
            assert!(
                (0.02..=20.0).contains(&ratio),
                "besov {besov} vs holder {holder} out of the equivalence window"
            );
        }
    }

    #[test]
    fn weighted_holder_handles_constants_and_growth() {
        let report = weighted_holder_norm(
            &|_: &[f64]| 2.5,
            1,
            0.5,
            &|_: &[f64]| 1.0,
            &|_: &[f64]| 1.0,
            &[0.0],
            &[1.0],
            65,
            1,
        )
        .unwrap();
        assert!((report.total - 2.5).abs() < 1e-12, "constant norm is |c|");

        // f(x) = x: the weight 1 + x tames both terms as the box grows; the
        // unweighted norm grows linearly with it.
        let linear = |x: &[f64]| x[0];
        let weighted: Vec<f64> = [4.0, 16.0]
            .iter()
            .map(|&b| {
                weighted_holder_norm(
                    &linear,
                    1,
                    0.5,
                    &|x: &[f64]| 1.0 + x[0],
                    &|_: &[f64]| 1.0,
                    &[0.0],
                    &[b],
                    129,
                    1,
                )
                .unwrap()
                .total
            })
            .collect();
        let flat: Vec<f64> = [4.0, 16.0]
            .iter()
            .map(|&b| {
                weighted_holder_norm(
                    &linear,
                    1,
                    0.5,
                    &|_: &[f64]| 1.0,
                    &|_: &[f64]| 1.0,
                    &[0.0],
                    &[b],
                    129,
                    1,
                )
                .unwrap()
                .total
            })
            .collect();
        assert!(weighted[1] < weighted[0] * 1.5, "weighted norm stays bounded");
        assert!(flat[1] > flat[0] * 2.0, "unweighted norm grows with the box");
    }

    #[test]
    fn weighted_holder_detects_the_weierstrass_exponent() {
        // Quotient refinement contrast: below kappa the norm is stable in
        // the grid, above kappa it grows as the mesh shrinks.
        let b = synth_drift(SynthKind::Weierstrass, 1, 0.5, 17).unwrap();
        let f = move |x: &[f64]| b.eval(&[x[0]])[0];
        let norm_at = |alpha: f64, nodes: usize| {
            weighted_holder_norm(
                &f,
                1,
                alpha,
                &|_: &[f64]| 1.0,
                &|_: &[f64]| 1.0,
                &[0.0],
                &[2.0 * PI],
                nodes,
                1,
            )
            .unwrap()
            .total
        };
        let below = norm_at(0.3, 1025) / norm_at(0.3, 129);
        let above = norm_at(0.8, 1025) / norm_at(0.8, 129);
        assert!(below < 1.35, "alpha < kappa must be refinement-stable: {below}");
        assert!(above > 1.6, "alpha > kappa must grow under refinement: {above}");
    }

    #[test]
    fn weierstrass_besov_contrast_across_truncation() {
        let b = synth_drift(SynthKind::Weierstrass, 1, 0.5, 7).unwrap();
        let f = GridFunction::from_fn_1d(2.0 * PI, 1 << 12, |x| b.eval(&[x])[0]).unwrap();
        let at = |alpha: f64, j: i64| besov_norm(&f, &BesovParams::holder(alpha, j)).unwrap();
        let bounded = at(0.5, 10) / at(0.5, 6);
        let growing = at(0.7, 10) / at(0.7, 6);
        assert!(bounded <= 1.25, "B^0.5 norm must saturate: ratio {bounded}");
        assert!(growing >= 1.5, "B^0.7 norm must grow with truncation: {growing}");
    }

    #[test]
    fn synthetic_weierstrass_recovers_kappa() {
        for (kappa, seed) in [(0.4, 3u64), (0.5, 9), (0.7, 23)] {
            let b = synth_drift(SynthKind::Weierstrass, 1, kappa, seed).unwrap();
            let est =
                holder_exponent_estimate(&|x| b.eval(&[x])[0], 1 << 12).unwrap();
            assert!(
                (est - kappa).abs() <= 0.1,
                "kappa {kappa} estimated as {est} (seed {seed})"
            );
        }
        assert!(synth_drift(SynthKind::Weierstrass, 1, 0.0, 1).is_err());
        assert!(synth_drift(SynthKind::Weierstrass, 1, -0.5, 1).is_err());
    }

    #[test]
    fn lp_block_drift_has_a_single_active_block() {
        let b = synth_drift(SynthKind::LpBlock { j: 4 }, 1, 1.0, 13).unwrap();
        let f = GridFunction::from_fn_1d(2.0 * PI, 256, |x| b.eval(&[x])[0]).unwrap();
        let spectrum = block_spectrum(&f).unwrap();
        for (j, sup) in spectrum.blocks.iter().zip(&spectrum.sup_norms) {
            if *j == 4 {
                assert!(*sup > 0.9, "block 4 carries the probe: {sup}");
            } else {
                assert!(*sup <= 1e-8, "block {j} should be silent: {sup}");
            }
        }
    }

    #[test]
    fn smooth_bump_lipschitz_matches_the_analytic_gradient() {
        let b = synth_drift(SynthKind::SmoothBump, 2, 1.0, 19).unwrap();
        // Analytic radial derivative max: d/drho exp(1 - 1/(1 - rho^2))
        // scanned finely, scaled by the component amplitude and bump radius.
        let g = |rho: f64| (1.0 - 1.0 / (1.0 - rho * rho)).exp();
        let mut analytic = 0.0f64;
        for i in 1..20000 {
            let rho = i as f64 / 20000.0;
            let h = 1e-6;
            let d = ((g(rho + h) - g(rho - h)) / (2.0 * h)).abs();
            analytic = analytic.max(d / BUMP_RADIUS);
        }
        // amps drawn in [0.5, 1): the measured Lipschitz constant of each
        // component is amp * analytic; bound by the max amp 1.
        let mut measured = 0.0f64;
        let n = 400;
        for i in 0..n {
            let x = -2.2 + 4.4 * i as f64 / n as f64;
            let h = 1e-5;
            let fp = b.eval(&[x + h, 0.3]);
            let fm = b.eval(&[x - h, 0.3]);
            for c in 0..2 {
                measured = measured.max(((fp[c] - fm[c]) / (2.0 * h)).abs());
            }
        }
        assert!(
            measured <= analytic * 1.01,
            "measured Lipschitz {measured} exceeds analytic bound {analytic}"
        );
        assert!(
            measured >= 0.4 * analytic,
            "measured {measured} implausibly far below the bound {analytic}"
        );
        // Compact support.
        assert_eq!(b.eval(&[2.5, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn grr_certificate_holds_on_rough_and_smooth_paths() {
        // Constant path: zero functional, no violations.
        let times: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let report = grr_bound(&times, &vec![1.0; 65], 0.4, 16.0).unwrap();
        assert_eq!(report.kappa_f, 0.0);
        assert_eq!(report.violations, 0);

        // Lipschitz path at alpha = 1, p = 4.
        let values: Vec<f64> = times.iter().map(|t| (3.0 * t).sin()).collect();
        let report = grr_bound(&times, &values, 1.0, 4.0).unwrap();
        assert_eq!(report.violations, 0, "max ratio {}", report.max_ratio);

        // fBm at alpha = H: zero violations across seeds.
        let model = CovarianceModel::fbm(0.4, 1.0).unwrap();
        let sampler = GridSampler::new(&model, 1, 512).unwrap();
        for idx in 0..20 {
            let s = sampler.sample(71, idx);
            let report = grr_bound(&s.times, &s.values[0], 0.4, 16.0).unwrap();
            assert_eq!(
                report.violations, 0,
                "sample {idx}: max ratio {}",
                report.max_ratio
            );
        }
        assert!(grr_bound(&times, &values, 0.05, 16.0).is_err());
    }

    #[test]
    fn grr_flags_divergence_above_the_path_regularity() {
        let model = CovarianceModel::fbm(0.4, 1.0).unwrap();
        let s = GridSampler::new(&model, 1, 512).unwrap().sample(73, 0);
        let stable = grr_refinement(&s.times, &s.values[0], 0.4, 16.0, 4).unwrap();
        assert!(stable.in_class, "alpha = H must be stable: {}", stable.message);
        let diverging = grr_refinement(&s.times, &s.values[0], 0.6, 16.0, 4).unwrap();
        assert!(
            !diverging.in_class,
            "alpha = H + 0.2 must be flagged: {}",
            diverging.message
        );
        assert!(diverging.kappas[0] > diverging.kappas[3]);
    }

    #[test]
    fn block_spectrum_serializes_with_stable_fields() {
        let f = GridFunction::from_fn_1d(2.0 * PI, 64, |x| (4.0 * x).cos()).unwrap();
        let json = block_spectrum(&f).unwrap().to_json_string();
        assert!(json.starts_with("{\"blocks\":"));
        assert!(json.contains("\"sup_norms\""));
        let csv = f.to_csv_string();
        assert!(csv.starts_with("x,f\n"));
    }
}
