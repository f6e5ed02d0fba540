//! State decomposition into a controlled block and control-free blocks.
//!
//! The control-free blocks are advanced once, a priori, by their own FP
//! equations. The controlled block then solves a lower-dimensional problem
//! whose running and terminal costs are averaged against the precomputed
//! marginals.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alm::{run_alm, AlmOutcome, AlmParams};
use crate::error::{Error, Result};
use crate::fp::{fp_solve, project_initial, FpOptions, FpSolution};
use crate::generator::Discretization;
use crate::grid::{Field, TensorMesh, TimeGrid};
use crate::hjb::HjbOptions;
use crate::model::{BoxSet, ControlBounds, ControlProblem, InitialDistribution, Mat, Sense, MAX_DIM};
use crate::par;

const PROBE_SAMPLES: usize = 32;
const PROBE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub controlled: Vec<usize>,
    pub blocks: Vec<Vec<usize>>,
}

impl Partition {
    /// Checks that the groups cover 0..n exactly once.
    pub fn new(n: usize, controlled: Vec<usize>, blocks: Vec<Vec<usize>>) -> Result<Self> {
        if controlled.is_empty() {
            return Err(Error::invalid("the controlled block must not be empty"));
        }
        let mut seen = vec![false; n];
        for &d in controlled.iter().chain(blocks.iter().flatten()) {
            if d >= n {
                return Err(Error::invalid(format!("partition names dimension {d} of a {n}-dimensional state")));
            }
            if seen[d] {
                return Err(Error::invalid(format!("dimension {d} appears in two blocks")));
            }
            seen[d] = true;
        }
        if let Some(d) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("dimension {d} is not covered by the partition")));
        }
        if blocks.iter().any(|b| b.is_empty()) {
            return Err(Error::invalid("uncontrolled blocks must not be empty"));
        }
        Ok(Self { controlled, blocks })
    }

    pub fn dim(&self) -> usize {
        self.controlled.len() + self.blocks.iter().map(|b| b.len()).sum::<usize>()
    }

    fn groups(&self) -> impl Iterator<Item = (&[usize], bool)> {
        std::iter::once((self.controlled.as_slice(), true)).chain(self.blocks.iter().map(|b| (b.as_slice(), false)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub condition: String,
    pub passed: bool,
    pub detail: Option<String>,
}

/// Partition plus the outcome of every separability check.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub partition: Partition,
    pub checks: Vec<Check>,
}

impl Decomposition {
    pub fn is_valid(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn require_valid(self) -> Result<Self> {
        match self.first_failure() {
            None => Ok(self),
            Some(c) => Err(Error::invalid(format!(
                "decomposition rejected: {} ({})",
                c.condition,
                c.detail.as_deref().unwrap_or("no detail")
            ))),
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= PROBE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Randomised probing of the structural assumptions: each group's drift and
/// diffusion rows depend only on its own coordinates (and, for control-free
/// blocks, not on u), and Σ has no entries coupling different groups.
pub fn validate_decomposition<P: ControlProblem + ?Sized>(
    problem: &P,
    partition: &Partition,
    probe_box: &[(f64, f64)],
    seed: u64,
) -> Result<Decomposition> {
    let n = problem.dim();
    if partition.dim() != n || probe_box.len() != n {
        return Err(Error::invalid("partition and probe box must match the state dimension"));
    }
    let (t0, t1) = problem.horizon();
    let bounds = problem.control_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut group_of = vec![0; n];
    for (g, (dims, _)) in partition.groups().enumerate() {
        for &d in dims {
            group_of[d] = g;
        }
    }
    for (g, (dims, controlled)) in partition.groups().enumerate() {
        let mut drift_fail = None;
        let mut sigma_dep_fail = None;
        let mut coupling_fail = None;
        for _ in 0..PROBE_SAMPLES {
            let s = rng.random_range(t0..=t1);
            let mut y = [0.0; MAX_DIM];
            for a in 0..n {
                y[a] = rng.random_range(probe_box[a].0..=probe_box[a].1);
            }
            let u = rng.random_range(bounds.p_min..=bounds.p_max);
            let mut y2 = y;
            for a in 0..n {
                if group_of[a] != g {
                    y2[a] = rng.random_range(probe_box[a].0..=probe_box[a].1);
                }
            }
            let u2 = if controlled { u } else { rng.random_range(bounds.p_min..=bounds.p_max) };
            let (mut b1, mut b2) = ([0.0; MAX_DIM], [0.0; MAX_DIM]);
            problem.drift(s, &y[..n], u, &mut b1[..n]);
            problem.drift(s, &y2[..n], u2, &mut b2[..n]);
            let (mut s1, mut s2): (Mat, Mat) = Default::default();
            problem.diffusion(s, &y[..n], &mut s1);
            problem.diffusion(s, &y2[..n], &mut s2);
            for &a in dims {
                if drift_fail.is_none() && !close(b1[a], b2[a]) {
                    drift_fail = Some(format!("drift component {a} changed from {} to {} at s = {s:.3}", b1[a], b2[a]));
                }
                for k in 0..n {
                    if group_of[k] != g && (s1[a][k] != 0.0 || s2[a][k] != 0.0) && coupling_fail.is_none() {
                        coupling_fail = Some(format!("Σ[{a}][{k}] = {} couples dimension {a} to dimension {k}", s1[a][k]));
                    }
                    if sigma_dep_fail.is_none() && !close(s1[a][k], s2[a][k]) {
                        sigma_dep_fail = Some(format!("Σ[{a}][{k}] depends on coordinates outside its block"));
                    }
                }
            }
        }
        let name = if controlled { "controlled block".to_string() } else { format!("uncontrolled block {dims:?}") };
        let drift_condition = if controlled {
            format!("{name}: drift depends only on (s, {dims:?}, u)")
        } else {
            format!("{name}: drift depends only on (s, {dims:?})")
        };
        for (condition, fail) in [
            (drift_condition, drift_fail),
            (format!("{name}: diffusion rows depend only on own coordinates"), sigma_dep_fail),
            (format!("{name}: diffusion is block-diagonal"), coupling_fail),
        ] {
            checks.push(Check { condition, passed: fail.is_none(), detail: fail });
        }
    }
    Ok(Decomposition { partition: partition.clone(), checks })
}

/// The dynamics of one control-free block, with foreign coordinates frozen.
struct BlockProblem<'a, P: ?Sized> {
    full: &'a P,
    dims: &'a [usize],
    reference: [f64; MAX_DIM],
    set: BoxSet,
}

impl<P: ControlProblem + ?Sized> BlockProblem<'_, P> {
    fn lift(&self, y: &[f64]) -> [f64; MAX_DIM] {
        let mut full = self.reference;
        for (k, &d) in self.dims.iter().enumerate() {
            full[d] = y[k];
        }
        full
    }
}

impl<P: ControlProblem + ?Sized> ControlProblem for BlockProblem<'_, P> {
    fn dim(&self) -> usize {
        self.dims.len()
    }
    fn horizon(&self) -> (f64, f64) {
        self.full.horizon()
    }
    fn drift(&self, s: f64, y: &[f64], _u: f64, out: &mut [f64]) {
        let n = self.full.dim();
        let full = self.lift(y);
        let mut b = [0.0; MAX_DIM];
        self.full.drift(s, &full[..n], 0.0, &mut b[..n]);
        for (k, &d) in self.dims.iter().enumerate() {
            out[k] = b[d];
        }
    }
    fn diffusion(&self, s: f64, y: &[f64], out: &mut Mat) {
        let n = self.full.dim();
        let full = self.lift(y);
        let mut sig = Mat::default();
        self.full.diffusion(s, &full[..n], &mut sig);
        *out = Mat::default();
        for (k, &a) in self.dims.iter().enumerate() {
            for (l, &c) in self.dims.iter().enumerate() {
                out[k][l] = sig[a][c];
            }
        }
    }
    fn running_cost(&self, _s: f64, _y: &[f64], _u: f64) -> f64 {
        0.0
    }
    fn terminal_cost(&self, _y: &[f64]) -> f64 {
        0.0
    }
    fn control_bounds(&self) -> ControlBounds {
        self.full.control_bounds()
    }
    fn constraint(&self) -> &BoxSet {
        &self.set
    }
}

/// Control-free marginal of one block.
#[derive(Clone, Debug)]
pub struct Marginal {
    pub dims: Vec<usize>,
    pub solution: FpSolution,
}

impl Marginal {
    pub fn density(&self) -> &Field {
        &self.solution.density
    }

    /// Density at time s, linear in time between stored levels.
    fn density_at(&self, s: f64) -> Vec<f64> {
        let field = self.density();
        let grid = &field.grid;
        let x = ((s - grid.t0) / grid.dt).clamp(0.0, grid.steps as f64);
        let m = (x.floor() as usize).min(grid.steps.saturating_sub(1));
        let frac = x - m as f64;
        if frac <= 0.0 {
            return field.slice(m).to_vec();
        }
        field.slice(m).iter().zip(field.slice(m + 1)).map(|(a, b)| (1.0 - frac) * a + frac * b).collect()
    }
}

#[derive(Clone, Debug)]
pub struct MarginalBank {
    pub marginals: Vec<Marginal>,
}

impl MarginalBank {
    /// Mean of state dimension `dim` at level m, if it belongs to a block.
    pub fn mean(&self, dim: usize, m: usize) -> Option<f64> {
        self.marginals.iter().find_map(|mg| {
            mg.dims.iter().position(|&d| d == dim).map(|k| mg.solution.mean(m, k))
        })
    }
}

/// Runs the control-free FP solve of every uncontrolled block (concurrently).
/// `meshes[i]` discretises `partition.blocks[i]`.
pub fn precompute_marginals<P: ControlProblem + ?Sized>(
    problem: &P,
    decomposition: &Decomposition,
    init: &InitialDistribution,
    meshes: &[Arc<TensorMesh>],
    grid: &TimeGrid,
    opts: &FpOptions,
) -> Result<MarginalBank> {
    if !decomposition.is_valid() {
        return Err(Error::invalid("cannot precompute marginals for an invalid decomposition"));
    }
    let blocks = &decomposition.partition.blocks;
    if meshes.len() != blocks.len() {
        return Err(Error::invalid("one mesh per uncontrolled block is required"));
    }
    let n = problem.dim();
    let mut reference = [0.0; MAX_DIM];
    reference[..n].copy_from_slice(&init.mean[..n]);
    let results = par::map_range(blocks.len(), |i| -> Result<Marginal> {
        let dims = &blocks[i];
        let mesh = meshes[i].clone();
        if mesh.dim() != dims.len() {
            return Err(Error::invalid(format!("mesh for block {dims:?} has the wrong dimension")));
        }
        let block = BlockProblem { full: problem, dims, reference, set: BoxSet::unbounded(dims.len()) };
        let phi0 = project_initial(&mesh, &init.marginal(dims))?;
        let disc = Discretization::new(mesh.clone());
        let policy = Field::zeros(mesh, *grid, "MW");
        let solution = fp_solve(&block, &disc, grid, &policy, &phi0, opts)?;
        Ok(Marginal { dims: dims.clone(), solution })
    });
    Ok(MarginalBank { marginals: results.into_iter().collect::<Result<Vec<_>>>()? })
}

type Tables = (Vec<f64>, Vec<f64>);

/// Problem on the controlled coordinates with marginal-averaged costs.
///
/// Running costs are tabulated on the reduced mesh as f̄(s, y₁, u) =
/// f̄₀(s, y₁) + u·f̄₁(s, y₁), which requires the full problem to be affine in
/// the control. Off-node queries interpolate the tables.
pub struct ReducedProblem {
    full: Arc<dyn ControlProblem>,
    controlled: Vec<usize>,
    mesh: Arc<TensorMesh>,
    bank: Arc<MarginalBank>,
    reference: [f64; MAX_DIM],
    constraint: BoxSet,
    terminal: Vec<f64>,
    cache: Mutex<HashMap<u64, Arc<Tables>>>,
}

impl std::fmt::Debug for ReducedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReducedProblem").field("controlled", &self.controlled).finish_non_exhaustive()
    }
}

impl ReducedProblem {
    pub fn new(
        full: Arc<dyn ControlProblem>,
        partition: &Partition,
        mesh: Arc<TensorMesh>,
        bank: Arc<MarginalBank>,
    ) -> Result<Self> {
        let n = full.dim();
        if mesh.dim() != partition.controlled.len() {
            return Err(Error::invalid("reduced mesh dimension differs from the controlled block"));
        }
        if !full.affine_in_control() {
            return Err(Error::invalid("reduction requires a running cost affine in the control"));
        }
        let set = full.constraint();
        for d in 0..n {
            if !partition.controlled.contains(&d) && (set.lower[d].is_finite() || set.upper[d].is_finite()) {
                return Err(Error::invalid(format!(
                    "the constraint bounds uncontrolled dimension {d}; its expectation is not a decision"
                )));
            }
        }
        let mut reference = [0.0; MAX_DIM];
        for mg in &bank.marginals {
            for (k, &d) in mg.dims.iter().enumerate() {
                reference[d] = mg.solution.mean(0, k);
            }
        }
        let mut reduced = Self {
            constraint: set.restrict(&partition.controlled),
            full,
            controlled: partition.controlled.clone(),
            mesh,
            bank,
            reference,
            terminal: Vec::new(),
            cache: Mutex::new(HashMap::new()),
        };
        reduced.terminal = reduced.average(reduced.full.horizon().1, |p, y| (p.terminal_cost(y), 0.0)).0;
        Ok(reduced)
    }

    pub fn mesh(&self) -> &Arc<TensorMesh> {
        &self.mesh
    }

    pub fn controlled(&self) -> &[usize] {
        &self.controlled
    }

    pub fn bank(&self) -> &MarginalBank {
        &self.bank
    }

    /// Quadrature nodes (weight·density, foreign coordinates) of the product
    /// of the block marginals at time s.
    fn foreign_nodes(&self, s: f64) -> Vec<(f64, [f64; MAX_DIM])> {
        let mut nodes = vec![(1.0, self.reference)];
        for mg in &self.bank.marginals {
            let mesh = &mg.density().mesh;
            let phi = mg.density_at(s);
            let w = mesh.weights();
            let mut next = Vec::new();
            for i in 0..mesh.len() {
                let q = w[i] * phi[i];
                if q == 0.0 {
                    continue;
                }
                let mut y = [0.0; MAX_DIM];
                mesh.node(i, &mut y);
                for (wt, base) in &nodes {
                    let mut full = *base;
                    for (k, &d) in mg.dims.iter().enumerate() {
                        full[d] = y[k];
                    }
                    next.push((wt * q, full));
                }
            }
            nodes = next;
        }
        let total: f64 = nodes.iter().map(|(w, _)| w).sum();
        nodes.iter_mut().for_each(|(w, _)| *w /= total);
        nodes
    }

    fn average<F>(&self, s: f64, f: F) -> Tables
    where
        F: Fn(&dyn ControlProblem, &[f64]) -> (f64, f64) + Sync,
    {
        let n = self.full.dim();
        let nodes = self.foreign_nodes(s);
        let pairs = par::map_range(self.mesh.len(), |i| {
            let mut y1 = [0.0; MAX_DIM];
            self.mesh.node(i, &mut y1);
            let (mut a, mut b) = (0.0, 0.0);
            for (w, base) in &nodes {
                let mut y = *base;
                for (k, &d) in self.controlled.iter().enumerate() {
                    y[d] = y1[k];
                }
                let (fa, fb) = f(&*self.full, &y[..n]);
                a += w * fa;
                b += w * fb;
            }
            (a, b)
        });
        pairs.into_iter().unzip()
    }

    fn tables(&self, s: f64) -> Arc<Tables> {
        let key = s.to_bits();
        if let Some(t) = self.cache.lock().expect("cache lock").get(&key) {
            return t.clone();
        }
        let t = Arc::new(self.average(s, |p, y| {
            let f0 = p.running_cost(s, y, 0.0);
            (f0, p.running_cost(s, y, 1.0) - f0)
        }));
        self.cache.lock().expect("cache lock").insert(key, t.clone());
        t
    }

    fn lookup(&self, values: &[f64], y: &[f64]) -> f64 {
        match self.mesh.locate_node(y) {
            Some(i) => values[i],
            None => self.mesh.interpolate(values, y),
        }
    }

    fn lift(&self, y1: &[f64]) -> [f64; MAX_DIM] {
        let mut y = self.reference;
        for (k, &d) in self.controlled.iter().enumerate() {
            y[d] = y1[k];
        }
        y
    }

    /// Product density φ₁·Πφ₂ᵢ at level m, evaluated at the nodes of a
    /// full-dimensional mesh.
    pub fn joint_density(&self, phi1: &[f64], m: usize, full_mesh: &TensorMesh) -> Vec<f64> {
        let n = self.full.dim();
        (0..full_mesh.len())
            .map(|i| {
                let mut y = [0.0; MAX_DIM];
                full_mesh.node(i, &mut y);
                let y1: Vec<f64> = self.controlled.iter().map(|&d| y[d]).collect();
                let mut value = self.mesh.interpolate(phi1, &y1);
                for mg in &self.bank.marginals {
                    let y2: Vec<f64> = mg.dims.iter().map(|&d| y[d]).collect();
                    value *= mg.density().mesh.interpolate(mg.density().slice(m), &y2);
                }
                debug_assert!(n == full_mesh.dim());
                value
            })
            .collect()
    }
}

impl ControlProblem for ReducedProblem {
    fn dim(&self) -> usize {
        self.controlled.len()
    }

    fn horizon(&self) -> (f64, f64) {
        self.full.horizon()
    }

    fn drift(&self, s: f64, y: &[f64], u: f64, out: &mut [f64]) {
        let n = self.full.dim();
        let full = self.lift(y);
        let mut b = [0.0; MAX_DIM];
        self.full.drift(s, &full[..n], u, &mut b[..n]);
        for (k, &d) in self.controlled.iter().enumerate() {
            out[k] = b[d];
        }
    }

    fn diffusion(&self, s: f64, y: &[f64], out: &mut Mat) {
        let n = self.full.dim();
        let full = self.lift(y);
        let mut sig = Mat::default();
        self.full.diffusion(s, &full[..n], &mut sig);
        *out = Mat::default();
        for (k, &a) in self.controlled.iter().enumerate() {
            for (l, &c) in self.controlled.iter().enumerate() {
                out[k][l] = sig[a][c];
            }
        }
    }

    fn running_cost(&self, s: f64, y: &[f64], u: f64) -> f64 {
        let t = self.tables(s);
        self.lookup(&t.0, y) + u * self.lookup(&t.1, y)
    }

    fn terminal_cost(&self, y: &[f64]) -> f64 {
        self.lookup(&self.terminal, y)
    }

    fn control_bounds(&self) -> ControlBounds {
        self.full.control_bounds()
    }

    fn constraint(&self) -> &BoxSet {
        &self.constraint
    }

    fn sense(&self) -> Sense {
        self.full.sense()
    }

    fn affine_in_control(&self) -> bool {
        true
    }
}

/// Per-axis (lower, upper, nodes).
pub type AxisSpec = (f64, f64, usize);

pub struct ReducedSolution {
    pub decomposition: Decomposition,
    pub problem: Arc<ReducedProblem>,
    pub outcome: AlmOutcome,
}

pub struct ReducedSetup {
    pub decomposition: Decomposition,
    pub problem: Arc<ReducedProblem>,
    pub discretization: Discretization,
    pub phi0: Vec<f64>,
}

/// Validates the partition, precomputes the marginals and builds the
/// reduced problem on the controlled axes of `axes`.
pub fn prepare_reduced(
    full: Arc<dyn ControlProblem>,
    partition: &Partition,
    init: &InitialDistribution,
    axes: &[AxisSpec],
    grid: &TimeGrid,
    fp_opts: &FpOptions,
    seed: u64,
) -> Result<ReducedSetup> {
    let n = full.dim();
    if axes.len() != n {
        return Err(Error::invalid("one axis specification per state dimension is required"));
    }
    let probe: Vec<(f64, f64)> = axes.iter().map(|a| (a.0, a.1)).collect();
    let decomposition = validate_decomposition(&*full, partition, &probe, seed)?.require_valid()?;
    let mesh_for = |dims: &[usize]| -> Result<Arc<TensorMesh>> {
        let bounds: Vec<_> = dims.iter().map(|&d| (axes[d].0, axes[d].1)).collect();
        let counts: Vec<_> = dims.iter().map(|&d| axes[d].2).collect();
        Ok(Arc::new(TensorMesh::new(&bounds, &counts)?))
    };
    let meshes = partition.blocks.iter().map(|b| mesh_for(b)).collect::<Result<Vec<_>>>()?;
    let bank = precompute_marginals(&*full, &decomposition, init, &meshes, grid, fp_opts)?;
    let mesh = mesh_for(&partition.controlled)?;
    let phi0 = project_initial(&mesh, &init.marginal(&partition.controlled))?;
    let problem = Arc::new(ReducedProblem::new(full, partition, mesh.clone(), Arc::new(bank))?);
    Ok(ReducedSetup { decomposition, problem, discretization: Discretization::new(mesh), phi0 })
}

#[allow(clippy::too_many_arguments)]
pub fn solve_reduced(
    full: Arc<dyn ControlProblem>,
    partition: &Partition,
    init: &InitialDistribution,
    axes: &[AxisSpec],
    grid: &TimeGrid,
    params: &AlmParams,
    fp_opts: &FpOptions,
    hjb_opts: &HjbOptions,
) -> Result<ReducedSolution> {
    let setup = prepare_reduced(full, partition, init, axes, grid, fp_opts, 0)?;
    let outcome = run_alm(&*setup.problem, &setup.discretization, grid, &setup.phi0, params, fp_opts, hjb_opts)?;
    Ok(ReducedSolution { decomposition: setup.decomposition, problem: setup.problem, outcome })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PvProblem, SdeParams};

    fn pv(sigma_pz: f64) -> PvProblem {
        let mut p = PvProblem::default_scenario();
        p.sde = SdeParams { sigma_pz, ..p.sde };
        p
    }

    fn probe() -> Vec<(f64, f64)> {
        vec![(-5.0, 5.0), (-40.0, 220.0), (-30.0, 40.0)]
    }

    #[test]
    fn pv_decompositions() {
        let energy = Partition::new(3, vec![2], vec![vec![0], vec![1]]).unwrap();
        let price = Partition::new(3, vec![1, 2], vec![vec![0]]).unwrap();
        assert!(validate_decomposition(&pv(0.0), &energy, &probe(), 1).unwrap().is_valid());
        assert!(validate_decomposition(&pv(0.0), &price, &probe(), 1).unwrap().is_valid());
        let d = validate_decomposition(&pv(0.05), &price, &probe(), 1).unwrap();
        assert!(!d.is_valid());
        let detail = d.first_failure().unwrap().detail.clone().unwrap();
        assert!(detail.contains("Σ[1][0]"), "{detail}");
    }

    #[test]
    fn partition_rejects_overlap_and_gaps() {
        assert!(Partition::new(3, vec![2], vec![vec![0, 2], vec![1]]).is_err());
        assert!(Partition::new(3, vec![2], vec![vec![0]]).is_err());
    }

    #[test]
    fn price_switching_coefficient_is_expected_price() {
        let full: Arc<dyn ControlProblem> = Arc::new(PvProblem::default_scenario());
        let partition = Partition::new(3, vec![2], vec![vec![0], vec![1]]).unwrap();
        let init = InitialDistribution::pv_default(&PvProblem::default_scenario());
        let axes = [(-5.0, 5.0, 21), (-40.0, 220.0, 66), (-30.0, 40.0, 71)];
        let grid = TimeGrid::new(0.0, 24.0, 0.5).unwrap();
        let setup = prepare_reduced(full, &partition, &init, &axes, &grid, &FpOptions::default(), 0).unwrap();
        let r = &setup.problem;
        for m in [4usize, 20, 40] {
            let s = grid.time(m);
            let slope = r.running_cost(s, &[2.0], 1.0) - r.running_cost(s, &[2.0], 0.0);
            let mean_price = r.bank().mean(1, m).unwrap();
            assert!((slope - mean_price).abs() < 1e-9 * mean_price.abs(), "{slope} vs {mean_price}");
        }
    }

    #[test]
    fn near_delta_marginal_sifts_the_cost() {
        // Z and Π frozen (no drift, no noise) at known values: the averaged
        // cost must equal the cost evaluated there.
        let mut p = PvProblem::default_scenario();
        p.sde.kappa_z = 1e-12;
        p.sde.kappa_pi = 1e-12;
        p.sde.theta_pi = crate::curve::TimeCurve::Constant(0.0);
        p.sde.sigma_zz = 0.0;
        p.sde.sigma_pp = 0.0;
        let full: Arc<dyn ControlProblem> = Arc::new(p.clone());
        let partition = Partition::new(3, vec![2], vec![vec![0], vec![1]]).unwrap();
        let init = InitialDistribution::new(vec![0.5, 80.0, 2.0], vec![1e-4, 1e-2, 0.01]).unwrap();
        let axes = [(0.0, 1.0, 201), (70.0, 90.0, 201), (-30.0, 40.0, 71)];
        let grid = TimeGrid::new(0.0, 24.0, 0.5).unwrap();
        let setup = prepare_reduced(full, &partition, &init, &axes, &grid, &FpOptions::default(), 0).unwrap();
        let s = 12.0;
        let exact = p.running_cost(s, &[0.5, 80.0, 2.0], -1.0);
        let reduced = setup.problem.running_cost(s, &[2.0], -1.0);
        assert!((reduced - exact).abs() < 1e-3 * exact.abs(), "{reduced} vs {exact}");
    }
}
