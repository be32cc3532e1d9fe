//! Driving vector fields sigma and their derivative tensors.
//!
//! A [`VectorField`] supplies the d columns sigma_1, ..., sigma_d of the
//! diffusion matrix together with analytic derivative tensors up to third
//! order; the flow solver consumes them to build iterated fields sigma_I and
//! their Jacobians without any internal differencing. A finite-difference
//! defect functional cross-checks supplied derivatives at test time.
//!
//! Derivative tensor layout for order m: entry
//! `[((a * d + i) * d^m) + (j_1 d^{m-1} + ... + j_m)]` holds
//! `partial_{j_1} ... partial_{j_m} sigma_i^a(x)`; symmetric in the j's.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Diffusion columns with analytic derivatives, smooth and bounded unless
/// documented otherwise.
pub trait VectorField: Send + Sync {
    /// State-space dimension d (also the number of columns).
    fn dim(&self) -> usize;

    /// Matrix sigma(x); column i is the field sigma_i.
    fn sigma(&self, x: &[f64]) -> DMatrix<f64>;

    /// Derivative tensor of order `order` in the module's flat layout.
    fn d_sigma(&self, x: &[f64], order: usize) -> Vec<f64>;

    /// Highest derivative order supplied by `d_sigma`.
    fn max_order(&self) -> usize {
        3
    }

    /// Uniform ellipticity lower bound: |sigma(x) z|^2 >= bound |z|^2, when
    /// one is known.
    fn ellipticity(&self) -> Option<f64> {
        None
    }

    /// True when sigma does not depend on x. Constant fields make the flow a
    /// translation with identity-derivative, which several experiments
    /// exploit as an exact fast path.
    fn is_constant(&self) -> bool {
        false
    }

    /// Short name used in reports.
    fn label(&self) -> String;
}

// ---------------------------------------------------------------------------
// Identity field
// ---------------------------------------------------------------------------

/// Constant identity diffusion: additive noise, all derivatives vanish.
#[derive(Debug, Clone)]
pub struct IdentityField {
    dim: usize,
}

impl IdentityField {
    /// Identity field on R^dim.
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl VectorField for IdentityField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sigma(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim)
    }

    fn d_sigma(&self, _x: &[f64], order: usize) -> Vec<f64> {
        vec![0.0; self.dim * self.dim * self.dim.pow(order as u32)]
    }

    fn ellipticity(&self) -> Option<f64> {
        Some(1.0)
    }

    fn is_constant(&self) -> bool {
        true
    }

    fn label(&self) -> String {
        format!("identity(d={})", self.dim)
    }
}

// ---------------------------------------------------------------------------
// Scalar linear field
// ---------------------------------------------------------------------------

/// One-dimensional linear field sigma(x) = x, the closed-form benchmark:
/// the driftless solution started at x_0 is x_0 exp(w_t - w_0). Unbounded,
/// so meant for convergence tests rather than the bounded-field theory.
#[derive(Debug, Clone)]
pub struct ScalarLinearField;

impl VectorField for ScalarLinearField {
    fn dim(&self) -> usize {
        1
    }

    fn sigma(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x[0])
    }

    fn d_sigma(&self, _x: &[f64], order: usize) -> Vec<f64> {
        if order == 1 {
            vec![1.0]
        } else {
            vec![0.0]
        }
    }

    fn label(&self) -> String {
        "scalar_linear".into()
    }
}

// ---------------------------------------------------------------------------
// Smooth elliptic field
// ---------------------------------------------------------------------------

/// Smooth bounded perturbation of a constant multiple of the identity:
/// sigma_i^a(x) = base delta_{ai} + amp sin(<k_{ai}, x> + theta_{ai}).
///
/// Entry frequencies and phases follow a fixed deterministic pattern, so two
/// fields with equal parameters are identical. Requires base > dim * amp,
/// which gives the ellipticity bound (base - dim * amp)^2.
#[derive(Debug, Clone)]
pub struct SmoothEllipticField {
    dim: usize,
    base: f64,
    amp: f64,
    freqs: Vec<Vec<f64>>,
    phases: Vec<f64>,
}

impl SmoothEllipticField {
    /// Builds the field; errors unless base > dim * amp > 0 or amp == 0.
    pub fn new(dim: usize, base: f64, amp: f64) -> Result<Self> {
        Self::with_frequency_scale(dim, base, amp, 1.0)
    }

    /// Same field with all spatial frequencies multiplied by `scale`, which
    /// tunes the size of higher derivatives (each order picks up one factor
    /// of `scale`) without touching the ellipticity bound.
    pub fn with_frequency_scale(dim: usize, base: f64, amp: f64, scale: f64) -> Result<Self> {
        if dim == 0 || base <= 0.0 || amp < 0.0 || base <= dim as f64 * amp {
            return Err(Error::Domain(format!(
                "smooth elliptic field needs base > dim * amp >= 0, got \
                 base {base}, amp {amp}, dim {dim}"
            )));
        }
        if !(scale > 0.0) {
            return Err(Error::Domain(format!(
                "frequency scale must be positive, got {scale}"
            )));
        }
        let mut freqs = Vec::with_capacity(dim * dim);
        let mut phases = Vec::with_capacity(dim * dim);
        for a in 0..dim {
            for i in 0..dim {
                let entry = a * dim + i;
                // Small integer frequencies, entry-dependent; phase on the
                // golden-angle sequence. Both fixed, no RNG.
                let k: Vec<f64> = (0..dim)
                    .map(|j| {
                        scale
                            * (1 + (entry + 2 * j) % 3) as f64
                            * if (entry + j) % 2 == 0 { 1.0 } else { -1.0 }
                    })
                    .collect();
                freqs.push(k);
                phases.push(0.618_033_988_749_894_9 * (entry as f64 + 1.0) * std::f64::consts::TAU % std::f64::consts::TAU);
            }
        }
        Ok(Self { dim, base, amp, freqs, phases })
    }

    fn angle(&self, entry: usize, x: &[f64]) -> f64 {
        self.freqs[entry].iter().zip(x).map(|(k, xi)| k * xi).sum::<f64>() + self.phases[entry]
    }
}

impl VectorField for SmoothEllipticField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sigma(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |a, i| {
            let diag = if a == i { self.base } else { 0.0 };
            diag + self.amp * self.angle(a * d + i, x).sin()
        })
    }

    fn d_sigma(&self, x: &[f64], order: usize) -> Vec<f64> {
        let d = self.dim;
        let block = d.pow(order as u32);
        let mut out = vec![0.0; d * d * block];
        for a in 0..d {
            for i in 0..d {
                let entry = a * d + i;
                let theta = self.angle(entry, x);
                // m-th derivative of sin is sin(theta + m pi/2).
                let factor = self.amp * (theta + order as f64 * std::f64::consts::FRAC_PI_2).sin();
                let k = &self.freqs[entry];
                for flat in 0..block {
                    let mut prod = 1.0;
                    let mut rest = flat;
                    for _ in 0..order {
                        prod *= k[rest % d];
                        rest /= d;
                    }
                    out[(a * d + i) * block + flat] = factor * prod;
                }
            }
        }
        out
    }

    fn ellipticity(&self) -> Option<f64> {
        let slack = self.base - self.dim as f64 * self.amp;
        Some(slack * slack)
    }

    fn label(&self) -> String {
        format!("smooth_elliptic(d={}, base={}, amp={})", self.dim, self.base, self.amp)
    }
}

// ---------------------------------------------------------------------------
// Finite-difference cross-check
// ---------------------------------------------------------------------------

/// Max deviation between the analytic order-`order` derivative tensor and a
/// central finite difference of the order-(order-1) tensor at `x`.
///
/// Smooth fields with O(1) derivatives should score below 1e-5.
pub fn fd_defect(field: &dyn VectorField, x: &[f64], order: usize) -> Result<f64> {
    if order == 0 || order > field.max_order() {
        return Err(Error::Domain(format!(
            "finite-difference check needs order in 1..={}, got {order}",
            field.max_order()
        )));
    }
    let d = field.dim();
    let h = 1e-5;
    let lower = |y: &[f64]| -> Vec<f64> {
        if order == 1 {
            let m = field.sigma(y);
            // Rearrange the matrix into the flat [a][i] layout.
            let mut flat = vec![0.0; d * d];
            for a in 0..d {
                for i in 0..d {
                    flat[a * d + i] = m[(a, i)];
                }
            }
            flat
        } else {
            field.d_sigma(y, order - 1)
        }
    };
    let analytic = field.d_sigma(x, order);
    let block = d.pow(order as u32);
    let sub_block = block / d;
    let mut worst = 0.0f64;
    for j_last in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j_last] += h;
        xm[j_last] -= h;
        let fp = lower(&xp);
        let fm = lower(&xm);
        for a in 0..d {
            for i in 0..d {
                for rest in 0..sub_block {
                    // The new differentiation index is appended as the last
                    // (fastest-varying) slot; symmetry of the tensor makes
                    // the slot choice immaterial.
                    let fd = (fp[(a * d + i) * sub_block + rest]
                        - fm[(a * d + i) * sub_block + rest])
                        / (2.0 * h);
                    let exact = analytic[(a * d + i) * block + rest * d + j_last];
                    worst = worst.max((fd - exact).abs());
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_elliptic_derivatives_match_finite_differences() {
        let field = SmoothEllipticField::new(2, 1.0, 0.15).unwrap();
        let x = [0.3, -0.7];
        for order in 1..=3 {
            let defect = fd_defect(&field, &x, order).unwrap();
            assert!(defect < 1e-5, "order {order} defect {defect}");
        }
        let field3 = SmoothEllipticField::new(3, 1.0, 0.1).unwrap();
        let y = [0.1, 0.5, -0.2];
        for order in 1..=3 {
            let defect = fd_defect(&field3, &y, order).unwrap();
            assert!(defect < 1e-5, "order {order} defect {defect}");
        }
    }

    #[test]
    fn linear_and_identity_fields_are_exact() {
        let lin = ScalarLinearField;
        assert!(fd_defect(&lin, &[0.4], 1).unwrap() < 1e-9);
        assert_eq!(lin.sigma(&[2.5])[(0, 0)], 2.5);
        let id = IdentityField::new(3);
        assert!(fd_defect(&id, &[0.1, 0.2, 0.3], 2).unwrap() < 1e-9);
        assert_eq!(id.ellipticity(), Some(1.0));
    }

    #[test]
    fn ellipticity_bound_holds_pointwise() {
        let field = SmoothEllipticField::new(2, 1.0, 0.2).unwrap();
        let bound = field.ellipticity().unwrap();
        for &x in &[[0.0, 0.0], [1.3, -2.1], [0.5, 0.25], [-3.0, 7.0]] {
            let s = field.sigma(&x);
            // Smallest singular value squared dominates the bound.
            let sv = s.svd(false, false).singular_values;
            let min_sv = sv.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min_sv * min_sv >= bound - 1e-12);
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(SmoothEllipticField::new(2, 0.3, 0.2).is_err());
        assert!(SmoothEllipticField::new(0, 1.0, 0.1).is_err());
        let field = SmoothEllipticField::new(2, 1.0, 0.1).unwrap();
        assert!(fd_defect(&field, &[0.0, 0.0], 0).is_err());
        assert!(fd_defect(&field, &[0.0, 0.0], 4).is_err());
    }
}
