//! Backward HJB solver with pointwise Hamiltonian maximisation.
//!
//! Internally the value is held in a maximisation frame V = σv (σ = −1 for
//! minimisation problems). Each backward step freezes the policy, solves the
//! linear implicit Euler system (I − ΔsQ(u))V^m = V^{m+1} + Δs·r(u), then
//! recomputes the policy from the new gradient, up to `max_sweeps` times.

use crate::alm::my_subgradient;
use crate::error::{Error, Result};
use crate::generator::{assemble, Closure, Discretization, NodeCoefficients};
use crate::grid::{Field, TensorMesh, TimeGrid};
use crate::linalg;
use crate::model::{BoxSet, ControlBounds, ControlProblem, MAX_DIM};
use crate::par;

/// Ψ(z, q) = u*·(z − q) for the bang-bang maximiser u* of u·(z − q).
pub fn psi(z: f64, q: f64, bounds: &ControlBounds) -> f64 {
    let s = z - q;
    if s > 0.0 {
        bounds.p_max * s
    } else if s < 0.0 {
        bounds.p_min * s
    } else {
        0.0
    }
}

/// Bang-bang selector for a switching value `c` multiplying u. Ties go to 0
/// when it is admissible, P_max otherwise.
pub fn bang_bang(c: f64, bounds: &ControlBounds) -> f64 {
    if c > 0.0 {
        bounds.p_max
    } else if c < 0.0 {
        bounds.p_min
    } else if bounds.admits_zero() {
        0.0
    } else {
        bounds.p_max
    }
}

const GRID_SEARCH_POINTS: usize = 201;

/// Optimal control at (s, y) given the gradient of the native value
/// function: maximises b·∇v + f (or minimises it for minimisation problems).
pub fn hamiltonian_argmax<P: ControlProblem + ?Sized>(problem: &P, s: f64, y: &[f64], grad: &[f64]) -> f64 {
    if let Some(u) = problem.closed_form_control(s, y, grad) {
        return u;
    }
    let bounds = problem.control_bounds();
    let sign = problem.sense().sign();
    let n = problem.dim();
    let h = |u: f64| {
        let mut b = [0.0; MAX_DIM];
        problem.drift(s, y, u, &mut b[..n]);
        sign * ((0..n).map(|k| b[k] * grad[k]).sum::<f64>() + problem.running_cost(s, y, u))
    };
    if problem.affine_in_control() {
        let hi = h(bounds.p_max);
        let lo = h(bounds.p_min);
        let scale = hi.abs().max(lo.abs()).max(1.0);
        let c = hi - lo;
        return bang_bang(if c.abs() <= 1e-13 * scale { 0.0 } else { c }, &bounds);
    }
    let step = bounds.width() / (GRID_SEARCH_POINTS - 1) as f64;
    let mut best = (bounds.p_min, h(bounds.p_min));
    for k in 1..GRID_SEARCH_POINTS {
        let u = bounds.p_min + k as f64 * step;
        let val = h(u);
        if val > best.1 {
            best = (u, val);
        }
    }
    // Golden-section refinement in the bracketing cells.
    let (mut a, mut b) = (bounds.clamp(best.0 - step), bounds.clamp(best.0 + step));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..40 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if h(c) >= h(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let u = 0.5 * (a + b);
    if h(u) > best.1 {
        u
    } else {
        best.0
    }
}

/// Centred differences in the interior, one-sided on the boundary.
pub fn value_gradient(v: &[f64], mesh: &TensorMesh) -> Vec<[f64; MAX_DIM]> {
    let n = mesh.dim();
    let counts = mesh.counts();
    let strides = mesh.strides();
    let h = mesh.spacing();
    par::map_range(mesh.len(), |i| {
        let mi = mesh.multi_index(i);
        let mut g = [0.0; MAX_DIM];
        for a in 0..n {
            let st = strides[a];
            g[a] = if mi[a] == 0 {
                (v[i + st] - v[i]) / h[a]
            } else if mi[a] + 1 == counts[a] {
                (v[i] - v[i - st]) / h[a]
            } else {
                (v[i + st] - v[i - st]) / (2.0 * h[a])
            };
        }
        g
    })
}

/// Constraint forcing c_m = (∂χ_A)_λ(E_m + λμ_m) per time level; the HJB
/// running reward receives −c_m·y.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintForcing {
    pub coefficients: Vec<Vec<f64>>,
}

impl ConstraintForcing {
    pub fn zero(levels: usize, dim: usize) -> Self {
        Self { coefficients: vec![vec![0.0; dim]; levels] }
    }

    pub fn new(expectations: &[Vec<f64>], mu: &[Vec<f64>], lambda: f64, set: &BoxSet) -> Result<Self> {
        if expectations.len() != mu.len() {
            return Err(Error::invalid("expectation and multiplier trajectories differ in length"));
        }
        let coefficients = expectations
            .iter()
            .zip(mu)
            .map(|(e, m)| {
                let shifted: Vec<f64> = e.iter().zip(m).map(|(e, m)| e + lambda * m).collect();
                my_subgradient(&shifted, lambda, set)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { coefficients })
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(|c| c.iter().all(|v| *v == 0.0))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HjbOptions {
    pub max_sweeps: usize,
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Default for HjbOptions {
    fn default() -> Self {
        Self { max_sweeps: 5, solver_tol: 1e-10, max_iter: 2000 }
    }
}

#[derive(Clone, Debug)]
pub struct HjbSolution {
    /// Value function in the problem's own sense.
    pub value: Field,
    /// Feedback control; slice m is applied on [s_m, s_{m+1}).
    pub control: Field,
    /// Policy sweeps used per backward step (index m).
    pub sweeps: Vec<usize>,
    /// Steps whose policy had not settled after the last sweep.
    pub warnings: usize,
}

/// Solves backward from v(T) = g. `forcing`, when present, must have one
/// entry per time level; level m+1 enters step m.
pub fn hjb_solve<P: ControlProblem + ?Sized>(
    problem: &P,
    disc: &Discretization,
    grid: &TimeGrid,
    forcing: Option<&ConstraintForcing>,
    opts: &HjbOptions,
) -> Result<HjbSolution> {
    let mesh = disc.mesh.clone();
    let n = mesh.dim();
    if n != problem.dim() {
        return Err(Error::invalid("mesh and problem dimensions differ"));
    }
    if let Some(f) = forcing {
        if f.coefficients.len() != grid.len() || f.coefficients.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("constraint forcing does not match the time grid"));
        }
    }
    let sign = problem.sense().sign();
    let bounds = problem.control_bounds();
    let continuous = !problem.affine_in_control();
    let nodes: Vec<[f64; MAX_DIM]> = (0..mesh.len())
        .map(|i| {
            let mut y = [0.0; MAX_DIM];
            mesh.node(i, &mut y);
            y
        })
        .collect();
    let mut value = Field::zeros(mesh.clone(), *grid, "EUR");
    let mut control = Field::zeros(mesh.clone(), *grid, "MW");
    let terminal: Vec<f64> = nodes.iter().map(|y| problem.terminal_cost(&y[..n])).collect();
    value.slice_mut(grid.steps).copy_from_slice(&terminal);
    let grad_t = value_gradient(&terminal, &mesh);
    let t_end = grid.time(grid.steps);
    par::fill(control.slice_mut(grid.steps), |i| hamiltonian_argmax(problem, t_end, &nodes[i][..n], &grad_t[i][..n]));

    let mut sweeps = vec![0; grid.steps];
    let mut warnings = 0;
    // Internal (maximisation-frame) copy of V^{m+1}.
    let mut upper: Vec<f64> = terminal.iter().map(|g| sign * g).collect();
    let mut current = upper.clone();
    let mut rhs = vec![0.0; mesh.len()];
    for m in (0..grid.steps).rev() {
        let s = grid.midpoint(m);
        let c = forcing.map(|f| &f.coefficients[m + 1]);
        let native: Vec<f64> = upper.iter().map(|v| sign * v).collect();
        let mut grad = value_gradient(&native, &mesh);
        let mut u: Vec<f64> = par::map_range(mesh.len(), |i| hamiltonian_argmax(problem, s, &nodes[i][..n], &grad[i][..n]));
        let mut settled = false;
        let mut k = 0;
        while k < opts.max_sweeps {
            k += 1;
            let coeffs = NodeCoefficients::evaluate(problem, &mesh, s, &u);
            let g = assemble(disc, &coeffs, Closure::Extrapolate);
            let a = g.matrix.identity_minus(grid.dt);
            par::fill(&mut rhs, |i| {
                let y = &nodes[i][..n];
                let mut r = sign * problem.running_cost(s, y, u[i]);
                if let Some(c) = c {
                    r -= (0..n).map(|k| c[k] * y[k]).sum::<f64>();
                }
                upper[i] + grid.dt * r
            });
            let mut outflow = vec![0.0; mesh.len()];
            g.apply_lagged(&upper, &mut outflow);
            rhs.iter_mut().zip(&outflow).for_each(|(r, o)| *r += grid.dt * o);
            linalg::solve(&a, &rhs, &mut current, opts.solver_tol, opts.max_iter)
                .map_err(|e| Error::LinearSolve { step: m, reason: e.to_string() })?;
            let native: Vec<f64> = current.iter().map(|v| sign * v).collect();
            grad = value_gradient(&native, &mesh);
            let next: Vec<f64> = par::map_range(mesh.len(), |i| hamiltonian_argmax(problem, s, &nodes[i][..n], &grad[i][..n]));
            let change = next.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let unchanged = if continuous { change <= 1e-10 * bounds.width() } else { change == 0.0 };
            if unchanged {
                settled = true;
                break;
            }
            if k == opts.max_sweeps {
                break;
            }
            u = next;
        }
        if !settled {
            warnings += 1;
        }
        sweeps[m] = k;
        control.slice_mut(m).copy_from_slice(&u);
        for (dst, v) in value.slice_mut(m).iter_mut().zip(&current) {
            *dst = sign * v;
        }
        std::mem::swap(&mut upper, &mut current);
        current.copy_from_slice(&upper);
    }
    Ok(HjbSolution { value, control, sweeps, warnings })
}
