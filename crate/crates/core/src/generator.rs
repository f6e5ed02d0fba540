//! Discrete generator of the controlled diffusion on a tensor mesh.
//!
//! Each node carries jump rates to its axial (and, with cross diffusion,
//! diagonal) neighbours. Drift uses centred rates where they stay
//! nonnegative (|b|·h ≤ 2D) and full upwinding elsewhere. The rows of the
//! generator Q sum to zero, so the forward operator Qᵀ conserves mass
//! exactly and I − ΔsQ is an M-matrix.

use std::sync::{Arc, OnceLock};

use crate::grid::TensorMesh;
use crate::linalg::{Stencil, StencilMatrix};
use crate::model::{ControlProblem, Mat, MAX_DIM};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Closure {
    /// Jumps that would leave the domain are suppressed (zero total flux).
    NoFlux,
    /// Zero second normal derivative at the boundary: no normal diffusion and
    /// a one-sided inward difference for the normal drift. Outward normal
    /// drift is returned in [`Generator::lagged`] instead of the matrix.
    Extrapolate,
}

/// Mesh plus lazily built stencils.
#[derive(Debug)]
pub struct Discretization {
    pub mesh: Arc<TensorMesh>,
    axial: OnceLock<Arc<Stencil>>,
    full: OnceLock<Arc<Stencil>>,
}

impl Discretization {
    pub fn new(mesh: Arc<TensorMesh>) -> Self {
        Self { mesh, axial: OnceLock::new(), full: OnceLock::new() }
    }

    pub fn stencil(&self, with_diagonals: bool) -> Arc<Stencil> {
        if with_diagonals && self.mesh.dim() > 1 {
            self.full.get_or_init(|| Arc::new(Stencil::new(&self.mesh, true))).clone()
        } else {
            self.axial.get_or_init(|| Arc::new(Stencil::new(&self.mesh, false))).clone()
        }
    }
}

/// Drift and D = ½ΣΣᵀ at every node.
#[derive(Clone, Debug)]
pub struct NodeCoefficients {
    pub drift: Vec<[f64; MAX_DIM]>,
    pub diffusion: Vec<Mat>,
}

impl NodeCoefficients {
    pub fn evaluate<P: ControlProblem + ?Sized>(problem: &P, mesh: &TensorMesh, s: f64, control: &[f64]) -> Self {
        let n = mesh.dim();
        let pairs = par::map_range(mesh.len(), |i| {
            let mut y = [0.0; MAX_DIM];
            mesh.node(i, &mut y);
            let mut b = [0.0; MAX_DIM];
            problem.drift(s, &y[..n], control[i], &mut b[..n]);
            let mut sig = [[0.0; MAX_DIM]; MAX_DIM];
            problem.diffusion(s, &y[..n], &mut sig);
            (b, half_outer(&sig, n))
        });
        let (drift, diffusion) = pairs.into_iter().unzip();
        Self { drift, diffusion }
    }

    pub fn has_cross_terms(&self) -> bool {
        self.diffusion.iter().any(|d| {
            (0..MAX_DIM).any(|a| (0..MAX_DIM).any(|c| a != c && d[a][c] != 0.0))
        })
    }
}

/// ½ΣΣᵀ restricted to the leading n×n block.
pub fn half_outer(sig: &Mat, n: usize) -> Mat {
    let mut d = [[0.0; MAX_DIM]; MAX_DIM];
    for a in 0..n {
        for c in 0..n {
            d[a][c] = 0.5 * (0..n).map(|k| sig[a][k] * sig[c][k]).sum::<f64>();
        }
    }
    d
}

/// Assembled generator with the number of nodes where the axial diffusion
/// rate had to be clamped at zero (cross diffusion too strong for the mesh).
pub struct Generator {
    pub matrix: StencilMatrix,
    pub clamped_nodes: usize,
    /// (row, column, rate) boundary terms with a negative rate, which would
    /// break the M-matrix property of I − ΔsQ; callers apply them explicitly.
    pub lagged: Vec<(usize, usize, f64)>,
}

impl Generator {
    /// out_i += Σ rate·(v_j − v_i) over the lagged terms.
    pub fn apply_lagged(&self, v: &[f64], out: &mut [f64]) {
        for &(i, j, rate) in &self.lagged {
            out[i] += rate * (v[j] - v[i]);
        }
    }
}

pub fn assemble(disc: &Discretization, coeffs: &NodeCoefficients, closure: Closure) -> Generator {
    let mesh = &*disc.mesh;
    let n = mesh.dim();
    let st = disc.stencil(coeffs.has_cross_terms());
    let w = st.width;
    let h = mesh.spacing();
    let counts = mesh.counts();
    let axial_pos: Vec<[usize; 2]> = (0..n)
        .map(|a| {
            let mut lo = [0i64; MAX_DIM];
            lo[a] = -1;
            let mut hi = [0i64; MAX_DIM];
            hi[a] = 1;
            [st.position(lo).unwrap(), st.position(hi).unwrap()]
        })
        .collect();
    let mut values = vec![0.0; mesh.len() * w];
    let mut lagged = Vec::new();
    let clamped: Vec<bool> = {
        let mut flags = vec![false; mesh.len()];
        type Row = (Vec<f64>, bool, Vec<(usize, f64)>);
        let rows: Vec<Row> = par::map_range(mesh.len(), |i| {
            let mut row = vec![0.0; w];
            let mut outward = Vec::new();
            let mi = mesh.multi_index(i);
            let b = &coeffs.drift[i];
            let d = &coeffs.diffusion[i];
            let mut reduction = [0.0; MAX_DIM];
            if w > 1 + 2 * n {
                for a in 0..n {
                    for c in a + 1..n {
                        let dac = d[a][c];
                        if dac == 0.0 {
                            continue;
                        }
                        let rate = dac.abs() / (h[a] * h[c]);
                        let sc = if dac > 0.0 { 1 } else { -1 };
                        let mut o1 = [0i64; MAX_DIM];
                        o1[a] = 1;
                        o1[c] = sc;
                        let o2 = [-o1[0], -o1[1], -o1[2]];
                        let (k1, k2) = (st.position(o1).unwrap(), st.position(o2).unwrap());
                        if st.col(i, k1).is_some() && st.col(i, k2).is_some() {
                            row[k1] += rate;
                            row[k2] += rate;
                            reduction[a] += rate;
                            reduction[c] += rate;
                        }
                    }
                }
            }
            let mut clamped = false;
            for a in 0..n {
                let lo = mi[a] == 0;
                let hi = mi[a] + 1 == counts[a];
                let [km, kp] = axial_pos[a];
                if closure == Closure::Extrapolate && (lo || hi) {
                    let (k, rate) = if lo { (kp, b[a] / h[a]) } else { (km, -b[a] / h[a]) };
                    if rate >= 0.0 {
                        row[k] += rate;
                    } else if let Some(j) = st.col(i, k) {
                        outward.push((j, rate));
                    }
                    continue;
                }
                let mut dr = d[a][a] / (h[a] * h[a]) - reduction[a];
                if dr < 0.0 {
                    clamped = true;
                    dr = 0.0;
                }
                let (mut rm, mut rp) = if b[a].abs() <= 2.0 * dr * h[a] {
                    (dr - 0.5 * b[a] / h[a], dr + 0.5 * b[a] / h[a])
                } else {
                    (dr + (-b[a]).max(0.0) / h[a], dr + b[a].max(0.0) / h[a])
                };
                if lo {
                    rm = 0.0;
                }
                if hi {
                    rp = 0.0;
                }
                row[km] += rm;
                row[kp] += rp;
            }
            row[0] = -row[1..].iter().sum::<f64>();
            (row, clamped, outward)
        });
        for (i, (row, c, outward)) in rows.into_iter().enumerate() {
            values[i * w..(i + 1) * w].copy_from_slice(&row);
            flags[i] = c;
            lagged.extend(outward.into_iter().map(|(j, rate)| (i, j, rate)));
        }
        flags
    };
    Generator {
        matrix: StencilMatrix { stencil: st, values },
        clamped_nodes: clamped.iter().filter(|c| **c).count(),
        lagged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn disc(bounds: &[(f64, f64)], counts: &[usize]) -> Discretization {
        Discretization::new(Arc::new(TensorMesh::new(bounds, counts).unwrap()))
    }

    #[test]
    fn zero_coefficients_give_zero_operator() {
        let d = disc(&[(0.0, 1.0), (0.0, 2.0)], &[5, 6]);
        let c = NodeCoefficients { drift: vec![[0.0; 3]; 30], diffusion: vec![[[0.0; 3]; 3]; 30] };
        let g = assemble(&d, &c, Closure::NoFlux);
        assert!(g.matrix.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pure_diffusion_is_second_difference_stencil() {
        let d = disc(&[(0.0, 1.0)], &[11]);
        let mut diff = [[0.0; 3]; 3];
        diff[0][0] = 0.3;
        let c = NodeCoefficients { drift: vec![[0.0; 3]; 11], diffusion: vec![diff; 11] };
        let g = assemble(&d, &c, Closure::NoFlux);
        let h2 = 0.01;
        for i in 1..10 {
            let r = g.matrix.row(i);
            assert!((r[0] + 2.0 * 0.3 / h2).abs() < 1e-9);
            assert!((r[1] - 0.3 / h2).abs() < 1e-9);
            assert!((r[2] - 0.3 / h2).abs() < 1e-9);
        }
    }

    #[test]
    fn extrapolation_preserves_linear_functions() {
        let d = disc(&[(0.0, 4.0), (-1.0, 1.0)], &[9, 7]);
        let mesh = d.mesh.clone();
        let mut coeffs = NodeCoefficients { drift: vec![[0.0; 3]; mesh.len()], diffusion: vec![[[0.0; 3]; 3]; mesh.len()] };
        let mut y = [0.0; 3];
        for i in 0..mesh.len() {
            mesh.node(i, &mut y);
            coeffs.drift[i] = [1.0 - y[0], 0.5 * y[1], 0.0];
            coeffs.diffusion[i][0][0] = 0.2 + y[0];
            coeffs.diffusion[i][1][1] = 0.1;
        }
        let g = assemble(&d, &coeffs, Closure::Extrapolate);
        let v: Vec<f64> = (0..mesh.len())
            .map(|i| {
                mesh.node(i, &mut y);
                3.0 * y[0] - 2.0 * y[1] + 1.0
            })
            .collect();
        let mut qv = vec![0.0; mesh.len()];
        g.matrix.matvec(&v, &mut qv);
        assert!(!g.lagged.is_empty());
        g.apply_lagged(&v, &mut qv);
        for i in 0..mesh.len() {
            mesh.node(i, &mut y);
            let exact = 3.0 * (1.0 - y[0]) - 2.0 * 0.5 * y[1];
            assert!((qv[i] - exact).abs() < 1e-10, "node {i}: {} vs {exact}", qv[i]);
        }
    }

    proptest! {
        #[test]
        fn rows_sum_to_zero_and_rates_nonnegative(seed in 0u64..1000, cross in proptest::bool::ANY) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = disc(&[(0.0, 1.0), (-2.0, 2.0), (0.0, 3.0)], &[4, 5, 6]);
            let len = d.mesh.len();
            let mut c = NodeCoefficients { drift: vec![[0.0; 3]; len], diffusion: vec![[[0.0; 3]; 3]; len] };
            for i in 0..len {
                let mut sig = [[0.0; 3]; 3];
                for a in 0..3 {
                    c.drift[i][a] = rng.random_range(-3.0..3.0);
                    sig[a][a] = rng.random_range(0.0..2.0);
                }
                if cross {
                    sig[1][0] = rng.random_range(-0.3..0.3);
                }
                c.diffusion[i] = half_outer(&sig, 3);
            }
            for closure in [Closure::NoFlux, Closure::Extrapolate] {
                let g = assemble(&d, &c, closure);
                for s in g.matrix.row_sums() {
                    prop_assert!(s.abs() <= 1e-12 * 1e3);
                }
                for i in 0..len {
                    for k in 1..g.matrix.stencil.width {
                        prop_assert!(g.matrix.row(i)[k] >= 0.0);
                    }
                }
                if closure == Closure::NoFlux {
                    prop_assert!(g.lagged.is_empty());
                    // Forward operator Qᵀ: columns sum to zero.
                    for s in g.matrix.transpose().col_sums() {
                        prop_assert!(s.abs() <= 1e-12 * 1e3);
                    }
                }
            }
        }
    }
}
