//! Forward Fokker–Planck solver.
//!
//! The density is advanced in mass coordinates p_i = w_i·φ_i (w the
//! trapezoid weights), where the no-flux transpose of the generator has zero
//! column sums and the implicit Euler step (I − ΔsQᵀ)p^{m+1} = p^m preserves
//! Σp exactly.

use crate::error::{Error, Result};
use crate::generator::{assemble, Closure, Discretization, NodeCoefficients};
use crate::grid::{Field, TensorMesh, TimeGrid};
use crate::linalg::{self, StencilMatrix};
use crate::model::{ControlProblem, InitialDistribution, MAX_DIM};

#[derive(Clone, Copy, Debug)]
pub struct FpOptions {
    pub mass_tol: f64,
    pub neg_tol: f64,
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Default for FpOptions {
    fn default() -> Self {
        Self { mass_tol: 1e-6, neg_tol: 1e-10, solver_tol: 1e-10, max_iter: 2000 }
    }
}

#[derive(Clone, Debug)]
pub struct FpSolution {
    /// Nodal density φ.
    pub density: Field,
    /// ∫φ per time level.
    pub mass: Vec<f64>,
    /// Total mass removed by clipping over the run.
    pub clipped_mass: f64,
    /// Most negative nodal value seen before clipping.
    pub min_value: f64,
    pub solver_iterations: usize,
    /// Node-steps at which cross diffusion forced a clamped axial rate.
    pub clamped_rates: usize,
}

impl FpSolution {
    /// E[y_axis] at time level m.
    pub fn mean(&self, m: usize, axis: usize) -> f64 {
        self.density.mesh.moment(self.density.slice(m), axis)
    }

    /// Rows (s, E[y₁], E[y₂], E[y₃], mass); missing axes are NaN.
    pub fn moment_table(&self) -> Vec<[f64; 5]> {
        let n = self.density.mesh.dim();
        (0..self.density.grid.len())
            .map(|m| {
                let mut row = [f64::NAN; 5];
                row[0] = self.density.grid.time(m);
                for a in 0..n {
                    row[1 + a] = self.mean(m, a);
                }
                row[4] = self.mass[m];
                row
            })
            .collect()
    }
}

/// Evaluates the initial normal density at the nodes and renormalises it to
/// unit discrete mass.
pub fn project_initial(mesh: &TensorMesh, init: &InitialDistribution) -> Result<Vec<f64>> {
    if init.dim() != mesh.dim() {
        return Err(Error::invalid(format!(
            "initial distribution has dimension {} but the mesh has {}",
            init.dim(),
            mesh.dim()
        )));
    }
    let inside = init.mass_inside(mesh.lower(), mesh.upper());
    if inside < 0.999 {
        return Err(Error::invalid(format!(
            "initial distribution keeps only {inside:.5} of its mass inside the domain (need ≥ 0.999)"
        )));
    }
    let mut y = [0.0; MAX_DIM];
    let mut phi: Vec<f64> = (0..mesh.len())
        .map(|i| {
            mesh.node(i, &mut y);
            init.density(&y[..mesh.dim()])
        })
        .collect();
    let total = mesh.integrate(&phi);
    if !(total > 0.0) {
        return Err(Error::invalid("initial density vanishes on the mesh; refine it"));
    }
    phi.iter_mut().for_each(|v| *v /= total);
    Ok(phi)
}

/// Forward operator Qᵀ for one step, evaluated at time `s` under the given
/// control slice, with the no-flux closure.
pub fn fp_step_operator<P: ControlProblem + ?Sized>(
    problem: &P,
    disc: &Discretization,
    s: f64,
    control: &[f64],
) -> (StencilMatrix, usize) {
    let coeffs = NodeCoefficients::evaluate(problem, &disc.mesh, s, control);
    let g = assemble(disc, &coeffs, Closure::NoFlux);
    (g.matrix.transpose(), g.clamped_nodes)
}

pub fn fp_solve<P: ControlProblem + ?Sized>(
    problem: &P,
    disc: &Discretization,
    grid: &TimeGrid,
    policy: &Field,
    phi0: &[f64],
    opts: &FpOptions,
) -> Result<FpSolution> {
    let mesh = disc.mesh.clone();
    let bounds = problem.control_bounds();
    let slack = 1e-9 * bounds.width();
    if policy.nodes() != mesh.len() || policy.grid.len() != grid.len() {
        return Err(Error::invalid("policy field does not match the discretization"));
    }
    if policy.values().iter().any(|u| !(*u >= bounds.p_min - slack && *u <= bounds.p_max + slack)) {
        return Err(Error::invalid("policy values must lie within [P_min, P_max]"));
    }
    if phi0.len() != mesh.len() {
        return Err(Error::invalid("initial density does not match the mesh"));
    }
    let w = mesh.weights();
    let mut density = Field::zeros(mesh.clone(), *grid, "1/state-volume");
    density.slice_mut(0).copy_from_slice(phi0);
    let mut p: Vec<f64> = phi0.iter().zip(w).map(|(f, w)| f * w).collect();
    let initial_mass: f64 = p.iter().sum();
    let mut mass = vec![initial_mass; grid.len()];
    let mut next = p.clone();
    let mut clipped_mass = 0.0;
    let mut min_value = phi0.iter().copied().fold(f64::INFINITY, f64::min);
    let mut iterations = 0;
    let mut clamped = 0;
    for m in 0..grid.steps {
        let (qt, c) = fp_step_operator(problem, disc, grid.midpoint(m), policy.slice(m));
        clamped += c;
        let a = qt.identity_minus(grid.dt);
        let stats = linalg::solve(&a, &p, &mut next, opts.solver_tol, opts.max_iter)
            .map_err(|e| Error::LinearSolve { step: m + 1, reason: e.to_string() })?;
        iterations += stats.iterations;
        let step_mass: f64 = next.iter().sum();
        let drift = (step_mass - initial_mass).abs();
        if drift > 10.0 * opts.mass_tol {
            return Err(Error::MassDrift { step: m + 1, drift });
        }
        let lowest = next.iter().zip(w).map(|(p, w)| p / w).fold(f64::INFINITY, f64::min);
        min_value = min_value.min(lowest);
        if lowest < -opts.neg_tol {
            let removed: f64 = next.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
            clipped_mass += removed;
            next.iter_mut().for_each(|v| *v = v.max(0.0));
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v *= step_mass / total);
        }
        std::mem::swap(&mut p, &mut next);
        mass[m + 1] = p.iter().sum();
        for ((d, p), w) in density.slice_mut(m + 1).iter_mut().zip(&p).zip(w) {
            *d = p / w;
        }
    }
    Ok(FpSolution { density, mass, clipped_mass, min_value, solver_iterations: iterations, clamped_rates: clamped })
}
