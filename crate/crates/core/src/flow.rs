//! Driftless rough-flow solver of Davie type.
//!
//! One explicit scheme does all the work: the step-N Euler update
//!
//! ```text
//! x_{i+1} = x_i + sum_{k=1..N} sum_{|I|=k} g_i^{k,I} sigma_I(x_i)
//! ```
//!
//! where g_i is the group-like increment of cell i and sigma_I the iterated
//! fields sigma_{(i,J)} = D(sigma_J) sigma_i. Refining the grid is the only
//! accuracy knob.
//!
//! Jacobians propagate through the exact derivative of the discrete step,
//! J_{i+1} = (Id + sum g^{k,I} D sigma_I(x_i)) J_i, and the stored inverse
//! accumulates the exact per-step matrix inverses so that J K = Id holds to
//! machine precision along the solution. Two further routes to the inverse
//! Jacobian exist for cross-validation: the Davie discretization of the
//! linear equation dK = -K Dsigma_k(X) dW^k, and the derivative of the
//! discrete backward flow evaluated at the forward state; all three must
//! agree within the scheme's accuracy.
//!
//! The backward flow applies inverted cell increments in reverse order,
//! giving psi_{t_i, T} with phi_{t_i, T}(psi_{t_i, T}(y)) = y up to the
//! accumulated one-cell inversion defect.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::fields::VectorField;
use crate::gaussian::LiftedPath;
use crate::tensor::{GroupElement, MAX_DEGREE};

/// Default trust-region radius for state norms; beyond it a solve aborts
/// with a divergence error.
pub const DEFAULT_TRUST_RADIUS: f64 = 1e6;

/// Determinant floor below which one-step transfer matrices count as
/// degenerate.
pub const DET_FLOOR: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Iterated fields
// ---------------------------------------------------------------------------

/// Value, Jacobian, and Hessian of one iterated field sigma_I at a point.
#[derive(Debug, Clone)]
struct WordJet {
    /// sigma_I(x), length d.
    value: Vec<f64>,
    /// [a d + b] = partial_b sigma_I^a(x); present when requested.
    jac: Option<Vec<f64>>,
    /// [(a d + b) d + c] = partial_b partial_c sigma_I^a(x); only kept on
    /// words that still get extended.
    hess: Option<Vec<f64>>,
}

/// Jets of every word of length 1..=degree at one point, in signature-level
/// index order (word (i_1..i_k) at flat index i_1 d^{k-1} + ... + i_k).
struct Jets {
    levels: Vec<Vec<WordJet>>,
}

impl Jets {
    /// Base derivative order required: values of length-N words consume
    /// order N-1; their Jacobians consume order N.
    fn required_order(degree: usize, with_jac: bool) -> usize {
        if with_jac {
            degree
        } else {
            degree.saturating_sub(1).max(1)
        }
    }

    fn compute(
        field: &dyn VectorField,
        x: &[f64],
        degree: usize,
        with_jac: bool,
    ) -> Result<Self> {
        let d = field.dim();
        if x.len() != d {
            return Err(Error::Shape(format!(
                "state has dimension {}, field expects {d}",
                x.len()
            )));
        }
        if degree == 0 || degree > MAX_DEGREE {
            return Err(Error::Domain(format!(
                "iterated fields need degree in 1..={MAX_DEGREE}, got {degree}"
            )));
        }
        let need = Self::required_order(degree, with_jac);
        if field.max_order() < need {
            return Err(Error::Domain(format!(
                "field {} supplies derivatives to order {}, degree {degree} \
                 needs {need}",
                field.label(),
                field.max_order(),
            )));
        }

        let sigma = field.sigma(x);
        let ds1 = field.d_sigma(x, 1);
        let ds2 = if need >= 2 { field.d_sigma(x, 2) } else { Vec::new() };
        let ds3 = if need >= 3 { field.d_sigma(x, 3) } else { Vec::new() };

        // Which derivative levels each word length must carry so that all
        // extensions and, if requested, all Jacobians exist.
        let want_jac = |len: usize| with_jac || len < degree;
        let want_hess = |len: usize| {
            (with_jac && len < degree && len <= 2) || len + 2 <= degree
        };

        let mut levels: Vec<Vec<WordJet>> = Vec::with_capacity(degree);
        let base: Vec<WordJet> = (0..d)
            .map(|i| {
                let value = (0..d).map(|a| sigma[(a, i)]).collect();
                let jac = want_jac(1).then(|| {
                    (0..d * d)
                        .map(|ab| ds1[(ab / d * d + i) * d + ab % d])
                        .collect()
                });
                let hess = want_hess(1).then(|| {
                    (0..d * d * d)
                        .map(|flat| {
                            let a = flat / (d * d);
                            ds2[(a * d + i) * d * d + flat % (d * d)]
                        })
                        .collect()
                });
                WordJet { value, jac, hess }
            })
            .collect();
        levels.push(base);

        for len in 2..=degree {
            let prev = &levels[len - 2];
            let block = d.pow((len - 1) as u32);
            let mut next = Vec::with_capacity(d * block);
            for i in 0..d {
                let sig_i: Vec<f64> = (0..d).map(|a| sigma[(a, i)]).collect();
                let jac_i = |b: usize, e: usize| ds1[(b * d + i) * d + e];
                let hess_i =
                    |b: usize, c: usize, e: usize| ds2[(b * d + i) * d * d + c * d + e];
                for tail in 0..block {
                    let jet_j = &prev[tail];
                    let jac_j = jet_j.jac.as_ref().expect("jac kept below top level");
                    let mut value = vec![0.0; d];
                    for a in 0..d {
                        value[a] =
                            (0..d).map(|b| jac_j[a * d + b] * sig_i[b]).sum();
                    }
                    let jac = want_jac(len).then(|| {
                        let hess_j =
                            jet_j.hess.as_ref().expect("hess kept for extension");
                        let mut out = vec![0.0; d * d];
                        for a in 0..d {
                            for c in 0..d {
                                let mut acc = 0.0;
                                for b in 0..d {
                                    acc += hess_j[(a * d + b) * d + c] * sig_i[b]
                                        + jac_j[a * d + b] * jac_i(b, c);
                                }
                                out[a * d + c] = acc;
                            }
                        }
                        out
                    });
                    let hess = want_hess(len).then(|| {
                        // Only reachable for len == 2, where the tail is a
                        // single letter j with third derivatives available.
                        let j = tail;
                        let third_j = |a: usize, b: usize, c: usize, e: usize| {
                            ds3[(a * d + j) * d * d * d + b * d * d + c * d + e]
                        };
                        let hess_j = jet_j.hess.as_ref().expect("base hess");
                        let mut out = vec![0.0; d * d * d];
                        for a in 0..d {
                            for c in 0..d {
                                for e in 0..d {
                                    let mut acc = 0.0;
                                    for b in 0..d {
                                        acc += third_j(a, b, c, e) * sig_i[b]
                                            + hess_j[(a * d + b) * d + c] * jac_i(b, e)
                                            + hess_j[(a * d + b) * d + e] * jac_i(b, c)
                                            + jac_j[a * d + b] * hess_i(b, c, e);
                                    }
                                    out[(a * d + c) * d + e] = acc;
                                }
                            }
                        }
                        out
                    });
                    next.push(WordJet { value, jac, hess });
                }
            }
            levels.push(next);
        }
        Ok(Self { levels })
    }
}

/// Iterated field sigma_I(x) for a word of letters below the field dimension;
/// words longer than the supported degree are a configuration error.
pub fn sigma_word(field: &dyn VectorField, x: &[f64], word: &[usize]) -> Result<Vec<f64>> {
    if word.is_empty() || word.len() > MAX_DEGREE {
        return Err(Error::Domain(format!(
            "sigma word length must lie in 1..={MAX_DEGREE}, got {}",
            word.len()
        )));
    }
    let d = field.dim();
    if word.iter().any(|&l| l >= d) {
        return Err(Error::Domain(format!(
            "sigma word letters must be below dim {d}, got {word:?}"
        )));
    }
    let jets = Jets::compute(field, x, word.len(), false)?;
    let flat = word.iter().fold(0, |acc, &l| acc * d + l);
    Ok(jets.levels[word.len() - 1][flat].value.clone())
}

// ---------------------------------------------------------------------------
// One-cell updates
// ---------------------------------------------------------------------------

fn check_increment(field: &dyn VectorField, g: &GroupElement) -> Result<()> {
    if g.dim() != field.dim() {
        return Err(Error::Shape(format!(
            "increment dimension {} does not match field dimension {}",
            g.dim(),
            field.dim()
        )));
    }
    Ok(())
}

/// Step-N Euler update x + sum_{k,I} g^{k,I} sigma_I(x). The identity
/// increment returns x unchanged.
pub fn davie_step(field: &dyn VectorField, x: &[f64], g: &GroupElement) -> Result<Vec<f64>> {
    check_increment(field, g)?;
    let jets = Jets::compute(field, x, g.degree(), false)?;
    let mut out = x.to_vec();
    for k in 1..=g.degree() {
        let coeffs = g.level(k);
        for (jet, &c) in jets.levels[k - 1].iter().zip(coeffs) {
            if c == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&jet.value) {
                *o += c * v;
            }
        }
    }
    Ok(out)
}

/// Exact derivative of the one-cell update map:
/// Id + sum_{k,I} g^{k,I} D sigma_I(x).
fn step_jacobian_factor(
    field: &dyn VectorField,
    x: &[f64],
    g: &GroupElement,
) -> Result<DMatrix<f64>> {
    check_increment(field, g)?;
    let d = field.dim();
    let jets = Jets::compute(field, x, g.degree(), true)?;
    let mut m = DMatrix::identity(d, d);
    for k in 1..=g.degree() {
        let coeffs = g.level(k);
        for (jet, &c) in jets.levels[k - 1].iter().zip(coeffs) {
            if c == 0.0 {
                continue;
            }
            let jac = jet.jac.as_ref().expect("jacobian requested");
            for a in 0..d {
                for b in 0..d {
                    m[(a, b)] += c * jac[a * d + b];
                }
            }
        }
    }
    Ok(m)
}

/// Right factors S_I of the Davie step for the inverse-Jacobian equation
/// dK = -K Dsigma_k(X) dW^k on the coupled system (x, K):
/// K_{i+1} = K_i (Id + sum_{k,I} g^{k,I} S_I(x_i)).
///
/// Derived by the same prepend recursion as sigma_I, on the product space:
/// S_(j) = -A_j,
/// S_(i,j) = A_i A_j - B_j[sigma_i],
/// S_(h,i,j) = B_i[sigma_h] A_j + A_i B_j[sigma_h] - C_j[sigma_i, sigma_h]
///             - B_j[A_i sigma_h] - A_h (A_i A_j - B_j[sigma_i]),
/// with A_j = Dsigma_j, B_j[v] = (D^2 sigma_j)[., ., v],
/// C_j[u, v] = (D^3 sigma_j)[., ., u, v].
fn inverse_step_factor(
    field: &dyn VectorField,
    x: &[f64],
    g: &GroupElement,
) -> Result<DMatrix<f64>> {
    check_increment(field, g)?;
    let d = field.dim();
    let n = g.degree();
    if field.max_order() < n {
        return Err(Error::Domain(format!(
            "inverse-Jacobian factors at degree {n} need sigma derivatives to \
             order {n}, field {} supplies {}",
            field.label(),
            field.max_order()
        )));
    }
    let sigma = field.sigma(x);
    let ds1 = field.d_sigma(x, 1);
    let ds2 = if n >= 2 { field.d_sigma(x, 2) } else { Vec::new() };
    let ds3 = if n >= 3 { field.d_sigma(x, 3) } else { Vec::new() };
    let a_mat = |j: usize| -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |aa, bb| ds1[(aa * d + j) * d + bb])
    };
    let b_vec = |j: usize, v: &[f64]| -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |aa, bb| {
            (0..d).map(|c| ds2[(aa * d + j) * d * d + bb * d + c] * v[c]).sum()
        })
    };
    let c_vec2 = |j: usize, u: &[f64], v: &[f64]| -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |aa, bb| {
            let mut acc = 0.0;
            for c in 0..d {
                for e in 0..d {
                    acc += ds3[(aa * d + j) * d * d * d + bb * d * d + c * d + e]
                        * u[c]
                        * v[e];
                }
            }
            acc
        })
    };
    let col = |i: usize| -> Vec<f64> { (0..d).map(|aa| sigma[(aa, i)]).collect() };

    let mut r = DMatrix::identity(d, d);
    for j in 0..d {
        let c = g.level(1)[j];
        if c != 0.0 {
            r -= a_mat(j).scale(c);
        }
    }
    if n >= 2 {
        for i in 0..d {
            for j in 0..d {
                let c = g.level(2)[i * d + j];
                if c == 0.0 {
                    continue;
                }
                let s = a_mat(i) * a_mat(j) - b_vec(j, &col(i));
                r += s.scale(c);
            }
        }
    }
    if n >= 3 {
        for h in 0..d {
            let sig_h = col(h);
            for i in 0..d {
                for j in 0..d {
                    let c = g.level(3)[(h * d + i) * d + j];
                    if c == 0.0 {
                        continue;
                    }
                    let ai = a_mat(i);
                    let aj = a_mat(j);
                    let ai_sig_h: Vec<f64> = (0..d)
                        .map(|aa| (0..d).map(|bb| ai[(aa, bb)] * sig_h[bb]).sum())
                        .collect();
                    let s = b_vec(i, &sig_h) * &aj + &ai * b_vec(j, &sig_h)
                        - c_vec2(j, &col(i), &sig_h)
                        - b_vec(j, &ai_sig_h)
                        - a_mat(h) * (&ai * &aj - b_vec(j, &col(i)));
                    r += s.scale(c);
                }
            }
        }
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// Flow solutions
// ---------------------------------------------------------------------------

/// Trajectory of one start point across a cell range, with optional exact
/// scheme Jacobians and their accumulated inverses.
#[derive(Debug, Clone)]
pub struct PointFlow {
    /// States at the nodes of the solved range (range length + 1 entries).
    pub states: Vec<Vec<f64>>,
    /// Derivative of the discrete flow map with respect to the start.
    pub jacobians: Option<Vec<DMatrix<f64>>>,
    /// Accumulated inverses of the one-step factors; jacobians[i] *
    /// inverse_jacobians[i] = Id to machine precision.
    pub inverse_jacobians: Option<Vec<DMatrix<f64>>>,
}

/// Direction tag for solved flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlowDirection {
    /// States indexed by node i hold phi_{t_lo, t_i}(start).
    Forward,
    /// States indexed by node i hold psi_{t_i, T}(start).
    Backward,
}

/// Flow of a set of start points along one lifted path.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    /// Grid nodes of the underlying lift.
    pub times: Vec<f64>,
    /// Start points, one per trajectory.
    pub starts: Vec<Vec<f64>>,
    /// Per-start trajectories aligned with `starts`.
    pub flows: Vec<PointFlow>,
    /// Forward or backward semantics of the node indexing.
    pub direction: FlowDirection,
}

impl FlowSolution {
    /// Final state of trajectory `s` (node T for forward flows, node 0 for
    /// backward flows).
    pub fn terminal(&self, s: usize) -> &[f64] {
        match self.direction {
            FlowDirection::Forward => self.flows[s].states.last().unwrap(),
            FlowDirection::Backward => &self.flows[s].states[0],
        }
    }

    /// CSV rendering: start index, node time, state coordinates.
    pub fn to_csv_string(&self) -> String {
        let dim = self.starts[0].len();
        let mut out = String::from("start,t");
        for c in 0..dim {
            out.push_str(&format!(",x{c}"));
        }
        out.push('\n');
        for (s, flow) in self.flows.iter().enumerate() {
            for (i, state) in flow.states.iter().enumerate() {
                out.push_str(&format!("{s},{:.11e}", self.times[i]));
                for v in state {
                    out.push_str(&format!(",{v:.11e}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Propagates one start point across cells lo..hi of the lift (hi exclusive).
///
/// With `with_jacobian`, the exact one-step factors are accumulated into
/// Jacobians and, through their matrix inverses, into inverse Jacobians; a
/// one-step factor with |det| below [`DET_FLOOR`] raises a degeneracy error.
/// States leaving the `trust` ball raise a divergence error with the step
/// index.
pub fn propagate(
    field: &dyn VectorField,
    path: &LiftedPath,
    lo: usize,
    hi: usize,
    start: &[f64],
    with_jacobian: bool,
    trust: f64,
) -> Result<PointFlow> {
    if lo >= hi || hi > path.num_cells() {
        return Err(Error::Domain(format!(
            "cell range ({lo}, {hi}) invalid for a lift with {} cells",
            path.num_cells()
        )));
    }
    let d = field.dim();
    if start.len() != d || path.dim() != d {
        return Err(Error::Shape(format!(
            "start dim {}, path dim {}, field dim {d} must agree",
            start.len(),
            path.dim()
        )));
    }
    let steps = hi - lo;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(start.to_vec());
    let mut jacobians = with_jacobian.then(|| {
        let mut v = Vec::with_capacity(steps + 1);
        v.push(DMatrix::identity(d, d));
        v
    });
    let mut inverses = with_jacobian.then(|| {
        let mut v = Vec::with_capacity(steps + 1);
        v.push(DMatrix::identity(d, d));
        v
    });

    let mut x = start.to_vec();
    for (step, cell) in (lo..hi).enumerate() {
        let g = &path.cells[cell];
        if with_jacobian {
            let m = step_jacobian_factor(field, &x, g)?;
            let det = m.determinant();
            if det.abs() < DET_FLOOR {
                return Err(Error::Degenerate {
                    context: format!("one-step flow factor at cell {cell}"),
                    witness: det,
                });
            }
            let m_inv = m.clone().try_inverse().ok_or(Error::Degenerate {
                context: format!("one-step flow factor at cell {cell}"),
                witness: det,
            })?;
            let jac = jacobians.as_mut().unwrap();
            let inv = inverses.as_mut().unwrap();
            jac.push(&m * jac.last().unwrap());
            inv.push(inv.last().unwrap() * m_inv);
        }
        x = davie_step(field, &x, g)?;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > trust {
            return Err(Error::Divergence { step: cell, norm, limit: trust });
        }
        states.push(x.clone());
        let _ = step;
    }
    Ok(PointFlow { states, jacobians, inverse_jacobians: inverses })
}

/// Solves the driftless flow from every start across the whole lift.
pub fn solve_flow(
    field: &dyn VectorField,
    path: &LiftedPath,
    starts: &[Vec<f64>],
    with_jacobian: bool,
) -> Result<FlowSolution> {
    let flows: Result<Vec<PointFlow>> = exec::par_map(starts.len(), |s| {
        propagate(
            field,
            path,
            0,
            path.num_cells(),
            &starts[s],
            with_jacobian,
            DEFAULT_TRUST_RADIUS,
        )
    })
    .into_iter()
    .collect();
    Ok(FlowSolution {
        times: path.times.clone(),
        starts: starts.to_vec(),
        flows: flows?,
        direction: FlowDirection::Forward,
    })
}

/// Solves the backward flow: inverted cell increments applied in reverse.
///
/// `states[s][i]` holds psi_{t_i, T}(start), so index 0 carries the full
/// backward transport psi_{0, T}(start).
pub fn backward_flow(
    field: &dyn VectorField,
    path: &LiftedPath,
    starts: &[Vec<f64>],
) -> Result<FlowSolution> {
    let m = path.num_cells();
    let flows: Result<Vec<PointFlow>> = exec::par_map(starts.len(), |s| {
        let mut states = vec![Vec::new(); m + 1];
        states[m] = starts[s].clone();
        let mut y = starts[s].clone();
        for cell in (0..m).rev() {
            let v = path.cells[cell].inverse();
            y = davie_step(field, &y, &v)?;
            let norm = y.iter().map(|w| w * w).sum::<f64>().sqrt();
            if !norm.is_finite() || norm > DEFAULT_TRUST_RADIUS {
                return Err(Error::Divergence {
                    step: cell,
                    norm,
                    limit: DEFAULT_TRUST_RADIUS,
                });
            }
            states[cell] = y.clone();
        }
        Ok(PointFlow { states, jacobians: None, inverse_jacobians: None })
    })
    .into_iter()
    .collect();
    Ok(FlowSolution {
        times: path.times.clone(),
        starts: starts.to_vec(),
        flows: flows?,
        direction: FlowDirection::Backward,
    })
}

// ---------------------------------------------------------------------------
// Inverse-Jacobian routes
// ---------------------------------------------------------------------------

/// Computation route for (D phi_{0,t}(x))^{-1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InverseJacobianRoute {
    /// Davie steps of the linear equation dK = -K Dsigma_k(X) dW^k along the
    /// forward trajectory.
    DirectRde,
    /// Derivative of the discrete backward flow, evaluated at the forward
    /// state: D psi_{0,t}(phi_{0,t}(x)).
    ViaPsi,
    /// Numerical inversion of the accumulated forward Jacobian.
    MatrixInverse,
}

/// Inverse Jacobians at the requested nodes (ascending, node > 0) for one
/// start, by the chosen route.
pub fn inverse_jacobian(
    field: &dyn VectorField,
    path: &LiftedPath,
    start: &[f64],
    nodes: &[usize],
    route: InverseJacobianRoute,
) -> Result<Vec<DMatrix<f64>>> {
    let m = path.num_cells();
    if nodes.is_empty() || nodes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("nodes must be ascending and non-empty".into()));
    }
    if nodes[0] == 0 || *nodes.last().unwrap() > m {
        return Err(Error::Domain(format!(
            "nodes must lie in 1..={m}, got {nodes:?}"
        )));
    }
    let with_jac = route == InverseJacobianRoute::MatrixInverse;
    let forward = propagate(field, path, 0, m, start, with_jac, DEFAULT_TRUST_RADIUS)?;

    match route {
        InverseJacobianRoute::MatrixInverse => {
            let jacs = forward.jacobians.as_ref().unwrap();
            nodes
                .iter()
                .map(|&i| {
                    let j = &jacs[i];
                    let det = j.determinant();
                    if det.abs() < DET_FLOOR {
                        return Err(Error::Degenerate {
                            context: format!("forward Jacobian at node {i}"),
                            witness: det,
                        });
                    }
                    j.clone().try_inverse().ok_or(Error::Degenerate {
                        context: format!("forward Jacobian at node {i}"),
                        witness: det,
                    })
                })
                .collect()
        }
        InverseJacobianRoute::DirectRde => {
            let d = field.dim();
            let mut k_mat = DMatrix::identity(d, d);
            let mut out = Vec::with_capacity(nodes.len());
            let mut want = nodes.iter().peekable();
            for cell in 0..m {
                let r = inverse_step_factor(field, &forward.states[cell], &path.cells[cell])?;
                k_mat *= r;
                if want.peek() == Some(&&(cell + 1)) {
                    out.push(k_mat.clone());
                    want.next();
                }
                if want.peek().is_none() {
                    break;
                }
            }
            Ok(out)
        }
        InverseJacobianRoute::ViaPsi => nodes
            .iter()
            .map(|&i| {
                // Backward sweep from the forward state at node i; chain rule
                // left-multiplies each new step derivative.
                let mut w = forward.states[i].clone();
                let d = field.dim();
                let mut acc = DMatrix::identity(d, d);
                for cell in (0..i).rev() {
                    let v = path.cells[cell].inverse();
                    let factor = step_jacobian_factor(field, &w, &v)?;
                    acc = factor * acc;
                    w = davie_step(field, &w, &v)?;
                }
                Ok(acc)
            })
            .collect(),
    }
}

/// Pairwise relative sup-norm gaps between the three inverse-Jacobian
/// routes, maxed over the requested nodes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RouteGaps {
    /// max over nodes of ||K_direct - K_psi|| / max(||K_direct||, ||K_psi||).
    pub direct_vs_psi: f64,
    /// Same for the direct and matrix-inverse routes.
    pub direct_vs_inverse: f64,
    /// Same for the backward-derivative and matrix-inverse routes.
    pub psi_vs_inverse: f64,
}

impl RouteGaps {
    /// Largest of the three pairwise gaps.
    pub fn worst(&self) -> f64 {
        self.direct_vs_psi.max(self.direct_vs_inverse).max(self.psi_vs_inverse)
    }
}

fn relative_sup_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let sup = |m: &DMatrix<f64>| m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    sup(&(a - b)) / sup(a).max(sup(b)).max(f64::MIN_POSITIVE)
}

/// Computes all three routes and their pairwise gaps.
pub fn inverse_jacobian_route_gaps(
    field: &dyn VectorField,
    path: &LiftedPath,
    start: &[f64],
    nodes: &[usize],
) -> Result<RouteGaps> {
    let direct = inverse_jacobian(field, path, start, nodes, InverseJacobianRoute::DirectRde)?;
    let psi = inverse_jacobian(field, path, start, nodes, InverseJacobianRoute::ViaPsi)?;
    let inv =
        inverse_jacobian(field, path, start, nodes, InverseJacobianRoute::MatrixInverse)?;
    let mut gaps = RouteGaps { direct_vs_psi: 0.0, direct_vs_inverse: 0.0, psi_vs_inverse: 0.0 };
    for i in 0..nodes.len() {
        gaps.direct_vs_psi =
            gaps.direct_vs_psi.max(relative_sup_diff(&direct[i], &psi[i]));
        gaps.direct_vs_inverse =
            gaps.direct_vs_inverse.max(relative_sup_diff(&direct[i], &inv[i]));
        gaps.psi_vs_inverse =
            gaps.psi_vs_inverse.max(relative_sup_diff(&psi[i], &inv[i]));
    }
    Ok(gaps)
}

// ---------------------------------------------------------------------------
// Residual order
// ---------------------------------------------------------------------------

/// Fit of the expansion residual |x_t - x_s - sum g^{k,I} sigma_I(x_s)|
/// against |t - s| over dyadic spans.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualOrderReport {
    /// Span lengths in time units.
    pub lengths: Vec<f64>,
    /// Max residual over anchors at each span length.
    pub residuals: Vec<f64>,
    /// Fitted log-log slope; +infinity when every residual sits at the
    /// numerical floor (exact schemes, e.g. additive noise).
    pub order: f64,
}

/// Measures the Davie expansion residual of the solved trajectory over
/// dyadic spans of 2, 4, ..., M/8 cells and fits its decay order.
///
/// Every span length is measured from the same anchor set (multiples of the
/// largest span), so the max over anchors compares equally many windows at
/// every scale; growing window counts at small scales would otherwise bias
/// the fitted slope downward through max statistics.
pub fn residual_order(
    field: &dyn VectorField,
    path: &LiftedPath,
    start: &[f64],
) -> Result<ResidualOrderReport> {
    let m = path.num_cells();
    if m < 16 {
        return Err(Error::Domain(format!(
            "residual fit needs at least 16 cells, got {m}"
        )));
    }
    let flow = propagate(field, path, 0, m, start, false, DEFAULT_TRUST_RADIUS)?;
    let scale = flow
        .states
        .iter()
        .flat_map(|s| s.iter().map(|v| v.abs()))
        .fold(1.0f64, f64::max);

    let max_span = (m / 8).max(2);
    let mut lengths = Vec::new();
    let mut residuals = Vec::new();
    let mut span = 2usize;
    while span <= max_span {
        let mut worst = 0.0f64;
        let mut anchor = 0usize;
        while anchor + max_span <= m {
            let g = path.increment(anchor, anchor + span)?;
            let predicted = davie_step(field, &flow.states[anchor], &g)?;
            let actual = &flow.states[anchor + span];
            let res = predicted
                .iter()
                .zip(actual.iter())
                .map(|(p, a)| (p - a) * (p - a))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(res);
            anchor += max_span;
        }
        lengths.push(path.times[span] - path.times[0]);
        residuals.push(worst);
        span *= 2;
    }

    let floor = 1e-13 * scale;
    let order = if residuals.iter().all(|&r| r < floor) {
        f64::INFINITY
    } else {
        let lx: Vec<f64> = lengths.iter().map(|l| l.ln()).collect();
        let ly: Vec<f64> = residuals.iter().map(|r| r.max(floor).ln()).collect();
        crate::gaussian::linear_fit(&lx, &ly).0
    };
    Ok(ResidualOrderReport { lengths, residuals, order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{IdentityField, ScalarLinearField, SmoothEllipticField};
    use crate::gaussian::{lift_path, lift_smooth_path, CovarianceModel, GridSampler};

    fn fbm_lift(h: f64, dim: usize, cells: usize, degree: usize, seed: u64) -> LiftedPath {
        let model = CovarianceModel::fbm(h, 1.0).unwrap();
        let sample = GridSampler::new(&model, dim, cells).unwrap().sample(seed, 0);
        lift_path(&sample, degree, 1).unwrap()
    }

    #[test]
    fn identity_field_translates_by_the_path() {
        let model = CovarianceModel::fbm(0.4, 1.0).unwrap();
        let sample = GridSampler::new(&model, 2, 64).unwrap().sample(3, 0);
        let lift = lift_path(&sample, 2, 1).unwrap();
        let field = IdentityField::new(2);
        let sol = solve_flow(&field, &lift, &[vec![0.3, -0.8]], true).unwrap();
        for i in 0..=64 {
            for c in 0..2 {
                let expect = sol.starts[0][c] + sample.values[c][i];
                assert!((sol.flows[0].states[i][c] - expect).abs() < 1e-12);
            }
            let jac = &sol.flows[0].jacobians.as_ref().unwrap()[i];
            assert!((jac - DMatrix::identity(2, 2)).norm() < 1e-13);
        }
    }

    #[test]
    fn scalar_linear_flow_matches_exponential() {
        let driver = |t: f64| 0.8 * (1.7 * t).sin();
        let mut errors = Vec::new();
        let mut hs = Vec::new();
        for cells in [32usize, 64, 128, 256] {
            let lift = lift_smooth_path(1.0, cells, 2, driver).unwrap();
            let sol = solve_flow(&ScalarLinearField, &lift, &[vec![1.0]], false).unwrap();
            let err = (sol.terminal(0)[0] - driver(1.0).exp()).abs();
            errors.push(err.ln());
            hs.push((1.0 / cells as f64).ln());
        }
        let (order, _) = crate::gaussian::linear_fit(&hs, &errors);
        assert!(
            (1.7..=2.3).contains(&order),
            "fitted order {order}, errors {errors:?}"
        );
        // Absolute accuracy at the finest grid.
        assert!(errors.last().unwrap().exp() < 1e-4);
    }

    #[test]
    fn flow_property_holds_at_the_midpoint() {
        let lift = fbm_lift(0.4, 2, 128, 2, 11);
        let field = SmoothEllipticField::new(2, 1.0, 0.15).unwrap();
        let start = vec![0.2, -0.4];
        let full = propagate(&field, &lift, 0, 128, &start, false, 1e6).unwrap();
        let first = propagate(&field, &lift, 0, 64, &start, false, 1e6).unwrap();
        let second =
            propagate(&field, &lift, 64, 128, first.states.last().unwrap(), false, 1e6)
                .unwrap();
        for c in 0..2 {
            assert!(
                (full.states[128][c] - second.states[64][c]).abs() < 1e-12,
                "midpoint composition must be exact for the discrete scheme"
            );
        }
    }

    #[test]
    fn jacobian_matches_finite_difference_of_the_flow() {
        let lift = fbm_lift(0.4, 2, 64, 2, 7);
        let field = SmoothEllipticField::new(2, 1.0, 0.15).unwrap();
        let x0 = vec![0.1, 0.3];
        let sol = propagate(&field, &lift, 0, 64, &x0, true, 1e6).unwrap();
        let jac = &sol.jacobians.as_ref().unwrap()[64];
        let h = 1e-4;
        for col in 0..2 {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[col] += h;
            xm[col] -= h;
            let fp = propagate(&field, &lift, 0, 64, &xp, false, 1e6).unwrap();
            let fm = propagate(&field, &lift, 0, 64, &xm, false, 1e6).unwrap();
            for row in 0..2 {
                let fd =
                    (fp.states[64][row] - fm.states[64][row]) / (2.0 * h);
                assert!(
                    (jac[(row, col)] - fd).abs() < 1e-6,
                    "J[{row},{col}] = {} vs fd {fd}",
                    jac[(row, col)]
                );
            }
        }
    }

    #[test]
    fn stored_inverse_jacobian_is_exact() {
        let lift = fbm_lift(0.35, 2, 128, 2, 19);
        let field = SmoothEllipticField::new(2, 1.0, 0.2).unwrap();
        let sol = propagate(&field, &lift, 0, 128, &[0.0, 0.0], true, 1e6).unwrap();
        let jacs = sol.jacobians.as_ref().unwrap();
        let invs = sol.inverse_jacobians.as_ref().unwrap();
        for i in (0..=128).step_by(16) {
            let prod = &jacs[i] * &invs[i];
            assert!((prod - DMatrix::identity(2, 2)).norm() < 1e-10);
        }
    }

    #[test]
    fn backward_flow_inverts_forward_flow() {
        let lift = fbm_lift(0.4, 2, 256, 2, 23);
        let field = SmoothEllipticField::with_frequency_scale(2, 1.0, 0.1, 0.5).unwrap();
        let probes = vec![vec![0.0, 0.0], vec![0.5, -0.3], vec![-0.8, 0.4]];
        let forward = solve_flow(&field, &lift, &probes, false).unwrap();
        // phi(psi(y)) = y: transport terminal states backward, then forward.
        let terminals: Vec<Vec<f64>> =
            (0..probes.len()).map(|s| forward.terminal(s).to_vec()).collect();
        let backward = backward_flow(&field, &lift, &terminals).unwrap();
        for s in 0..probes.len() {
            let recovered = backward.terminal(s);
            let err: f64 = recovered
                .iter()
                .zip(&probes[s])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-2, "probe {s} backward defect {err}");
        }
    }

    #[test]
    fn inverse_jacobian_routes_agree() {
        let lift = fbm_lift(0.4, 2, 256, 2, 29);
        let field = SmoothEllipticField::with_frequency_scale(2, 1.0, 0.1, 0.5).unwrap();
        let nodes = [32, 64, 128, 192, 256];
        let gaps =
            inverse_jacobian_route_gaps(&field, &lift, &[0.1, -0.2], &nodes).unwrap();
        assert!(gaps.worst() < 1e-2, "route gaps {gaps:?}");
    }

    #[test]
    fn residual_order_is_infinite_for_additive_noise() {
        let lift = fbm_lift(0.4, 2, 128, 2, 31);
        let field = IdentityField::new(2);
        let report = residual_order(&field, &lift, &[0.0, 0.0]).unwrap();
        assert!(report.order.is_infinite());
    }

    #[test]
    fn residual_order_matches_roughness() {
        // Rough driver: remainder exponent (floor(p) + 1)/p, about 1.2 at
        // H = 0.4 with degree 2.
        let lift = fbm_lift(0.4, 2, 1024, 2, 37);
        let field = SmoothEllipticField::new(2, 1.0, 0.2).unwrap();
        let report = residual_order(&field, &lift, &[0.2, 0.1]).unwrap();
        assert!(
            report.order >= 1.05,
            "rough residual order {} (residuals {:?})",
            report.order,
            report.residuals
        );
        // Smooth driver: residual of a degree-2 scheme decays at third order.
        let smooth = lift_smooth_path(1.0, 256, 2, |t| 0.7 * (2.1 * t).sin()).unwrap();
        let report = residual_order(&ScalarLinearField, &smooth, &[1.0]).unwrap();
        assert!(report.order >= 2.5, "smooth residual order {}", report.order);
    }

    #[test]
    fn sigma_words_follow_the_prepend_recursion() {
        // Scalar linear field: every iterated field equals x itself.
        let lin = ScalarLinearField;
        for word in [vec![0usize], vec![0, 0], vec![0, 0, 0]] {
            let v = sigma_word(&lin, &[1.7], &word).unwrap();
            assert!((v[0] - 1.7).abs() < 1e-14);
        }
        // Identity field: words of length >= 2 vanish.
        let id = IdentityField::new(2);
        assert_eq!(sigma_word(&id, &[0.3, 0.4], &[1]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(sigma_word(&id, &[0.3, 0.4], &[0, 1]).unwrap(), vec![0.0, 0.0]);
        // Smooth field: sigma_(i,j) = Dsigma_j sigma_i via finite differences.
        let field = SmoothEllipticField::new(2, 1.0, 0.2).unwrap();
        let x = [0.25, -0.5];
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..2 {
                let got = sigma_word(&field, &x, &[i, j]).unwrap();
                let si = sigma_word(&field, &x, &[i]).unwrap();
                let mut fd = [0.0; 2];
                for b in 0..2 {
                    let mut xp = x.to_vec();
                    let mut xm = x.to_vec();
                    xp[b] += h;
                    xm[b] -= h;
                    let sp = sigma_word(&field, &xp, &[j]).unwrap();
                    let sm = sigma_word(&field, &xm, &[j]).unwrap();
                    for a in 0..2 {
                        fd[a] += (sp[a] - sm[a]) / (2.0 * h) * si[b];
                    }
                }
                for a in 0..2 {
                    assert!((got[a] - fd[a]).abs() < 1e-8);
                }
            }
        }
        // Configuration errors.
        assert!(sigma_word(&lin, &[1.0], &[0, 0, 0, 0]).is_err());
        assert!(sigma_word(&id, &[0.0, 0.0], &[2]).is_err());
    }

    #[test]
    fn davie_step_fixes_identity_increment() {
        let field = SmoothEllipticField::new(2, 1.0, 0.2).unwrap();
        let g = GroupElement::identity(2, 3).unwrap();
        let x = vec![0.4, -0.9];
        assert_eq!(davie_step(&field, &x, &g).unwrap(), x);
    }

    #[test]
    fn divergence_is_detected() {
        let lift = lift_smooth_path(1.0, 32, 2, |t| 3.0 * t).unwrap();
        match propagate(&ScalarLinearField, &lift, 0, 32, &[20.0], false, 10.0) {
            Err(Error::Divergence { limit, .. }) => assert_eq!(limit, 10.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn degree_three_jets_are_consistent() {
        // Degree-3 solve against degree-2 on the same smooth path: both
        // converge to the same exponential, degree 3 at least as accurately.
        let driver = |t: f64| 0.6 * (1.3 * t).sin();
        let lift3 = lift_smooth_path(1.0, 64, 3, driver).unwrap();
        let lift2 = lift_smooth_path(1.0, 64, 2, driver).unwrap();
        let target = driver(1.0).exp();
        let e3 = (solve_flow(&ScalarLinearField, &lift3, &[vec![1.0]], false)
            .unwrap()
            .terminal(0)[0]
            - target)
            .abs();
        let e2 = (solve_flow(&ScalarLinearField, &lift2, &[vec![1.0]], false)
            .unwrap()
            .terminal(0)[0]
            - target)
            .abs();
        assert!(e3 <= e2);
        assert!(e3 < 1e-6);
    }
}
