//! Area adjacency graph and the ICAR/BYM2 structural quantities derived
//! from it.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{CholeskyFactor, SymMatrix, SymPattern, SymbolicCholesky};

/// Components up to this size are scaled by dense eigendecomposition.
pub const DENSE_SCALING_LIMIT: usize = 3000;

#[derive(Debug, Clone)]
pub struct AreaGraph {
    neighbors: Vec<Vec<usize>>,
    canton_of: Vec<usize>,
    components: Vec<Vec<usize>>,
    component_of: Vec<usize>,
}

impl AreaGraph {
    /// Validates an undirected edge list over dense area ids `0..n`.
    /// Duplicate and reversed edges are merged.
    pub fn build(n: usize, edges: &[(usize, usize)], canton_of: Vec<usize>) -> Result<Self> {
        if canton_of.len() != n {
            return Err(Error::input(format!(
                "canton map covers {} areas, graph has {n}",
                canton_of.len()
            )));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::input(format!(
                    "edge ({a}, {b}) references an unknown area (n = {n})"
                )));
            }
            if a == b {
                return Err(Error::input(format!("self-loop on area {a}")));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
            nb.dedup();
        }

        let mut component_of = vec![usize::MAX; n];
        let mut components = Vec::new();
        for start in 0..n {
            if component_of[start] != usize::MAX {
                continue;
            }
            let id = components.len();
            let mut members = vec![start];
            component_of[start] = id;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in &neighbors[v] {
                    if component_of[w] == usize::MAX {
                        component_of[w] = id;
                        members.push(w);
                        queue.push_back(w);
                    }
                }
            }
            members.sort_unstable();
            components.push(members);
        }

        Ok(Self {
            neighbors,
            canton_of,
            components,
            component_of,
        })
    }

    pub fn n_areas(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, area: usize) -> &[usize] {
        &self.neighbors[area]
    }

    pub fn degree(&self, area: usize) -> usize {
        self.neighbors[area].len()
    }

    pub fn canton_of(&self) -> &[usize] {
        &self.canton_of
    }

    pub fn n_cantons(&self) -> usize {
        self.canton_of.iter().map(|c| c + 1).max().unwrap_or(0)
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn component_of(&self, area: usize) -> usize {
        self.component_of[area]
    }

    /// Each undirected edge once, as (low, high).
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, nb) in self.neighbors.iter().enumerate() {
            for &b in nb {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// ICAR structure matrix: degree on the diagonal, -1 per edge.
    pub fn icar_structure(&self) -> SymMatrix {
        let pattern = Arc::new(SymPattern::from_entries(self.n_areas(), self.edges()));
        let mut q = SymMatrix::zeros(pattern);
        for a in 0..self.n_areas() {
            q.add(a, a, self.degree(a) as f64);
        }
        for (a, b) in self.edges() {
            q.add(a, b, -1.0);
        }
        q
    }
}

/// Queen-contiguity edges on an `nx` by `ny` lattice with area id `y * nx + x`.
pub fn queen_lattice(nx: usize, ny: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for y in 0..ny {
        for x in 0..nx {
            let a = y * nx + x;
            for (dx, dy) in [(1i64, 0i64), (-1, 1), (0, 1), (1, 1)] {
                let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                if xx >= 0 && (xx as usize) < nx && (yy as usize) < ny {
                    edges.push((a, yy as usize * nx + xx as usize));
                }
            }
        }
    }
    edges
}

/// Per-component BYM2 scaling of the ICAR structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentScaling {
    pub size: usize,
    /// Geometric mean of the constrained generalized-inverse diagonal;
    /// `None` for singletons.
    pub kappa: Option<f64>,
    pub method: ScalingMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMethod {
    Singleton,
    DenseEigen,
    SparseSelectedInverse,
}

/// ICAR structure with BYM2 scaling, shared read-only by models and samplers.
#[derive(Debug)]
pub struct ScaledStructure {
    graph: Arc<AreaGraph>,
    scaling: Vec<ComponentScaling>,
    /// Scaling factor per area (1 for singletons).
    kappa_of: Vec<f64>,
    /// Eigenvalues of the scaled generalized inverse, when computed densely.
    eigenvalues: Vec<Option<Vec<f64>>>,
    /// Cholesky factor of each grounded component Laplacian (last member
    /// removed), used for exact constrained sampling.
    grounded: Vec<Option<GroundedFactor>>,
}

#[derive(Debug)]
struct GroundedFactor {
    factor: CholeskyFactor,
}

impl ScaledStructure {
    pub fn new(graph: Arc<AreaGraph>) -> Result<Self> {
        Self::with_dense_limit(graph, DENSE_SCALING_LIMIT)
    }

    pub fn with_dense_limit(graph: Arc<AreaGraph>, dense_limit: usize) -> Result<Self> {
        let n = graph.n_areas();
        let mut kappa_of = vec![1.0; n];
        let mut scaling = Vec::new();
        let mut eigenvalues = Vec::new();
        let mut grounded = Vec::new();
        for members in graph.components() {
            let size = members.len();
            if size == 1 {
                scaling.push(ComponentScaling {
                    size,
                    kappa: None,
                    method: ScalingMethod::Singleton,
                });
                eigenvalues.push(None);
                grounded.push(None);
                continue;
            }
            let factor = grounded_factor(&graph, members)?;
            let (kappa, eig, method) = if size <= dense_limit {
                let (kappa, gen_eig) = dense_scaling(&graph, members)?;
                (
                    kappa,
                    Some(gen_eig.iter().map(|g| g / kappa).collect()),
                    ScalingMethod::DenseEigen,
                )
            } else {
                (
                    sparse_scaling(&factor, size),
                    None,
                    ScalingMethod::SparseSelectedInverse,
                )
            };
            for &a in members {
                kappa_of[a] = kappa;
            }
            scaling.push(ComponentScaling {
                size,
                kappa: Some(kappa),
                method,
            });
            eigenvalues.push(eig);
            grounded.push(Some(GroundedFactor { factor }));
        }
        Ok(Self {
            graph,
            scaling,
            kappa_of,
            eigenvalues,
            grounded,
        })
    }

    pub fn graph(&self) -> &Arc<AreaGraph> {
        &self.graph
    }

    pub fn n_areas(&self) -> usize {
        self.graph.n_areas()
    }

    pub fn scaling(&self) -> &[ComponentScaling] {
        &self.scaling
    }

    pub fn kappa_of(&self, area: usize) -> f64 {
        self.kappa_of[area]
    }

    pub fn is_singleton(&self, area: usize) -> bool {
        self.graph.components()[self.graph.component_of(area)].len() == 1
    }

    /// Number of non-singleton components (each contributes one ICAR null direction).
    pub fn n_icar_components(&self) -> usize {
        self.scaling.iter().filter(|s| s.kappa.is_some()).count()
    }

    /// Scaled ICAR precision entries: (i, j, value) with i >= j, including diagonal.
    pub fn scaled_entries(&self) -> Vec<(usize, usize, f64)> {
        let g = &self.graph;
        let mut out = Vec::new();
        for a in 0..g.n_areas() {
            if !self.is_singleton(a) {
                out.push((a, a, self.kappa_of[a] * g.degree(a) as f64));
            }
        }
        for (a, b) in g.edges() {
            out.push((b, a, -self.kappa_of[a]));
        }
        out
    }

    /// Spectrum used by the mixing-parameter PC prior: eigenvalues of the
    /// scaled generalized inverse over all areas. Each ICAR component
    /// contributes one zero for its null direction; singletons contribute 1
    /// since their field is purely unstructured.
    pub fn mixing_spectrum(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_areas());
        for (c, members) in self.graph.components().iter().enumerate() {
            match (&self.scaling[c].kappa, &self.eigenvalues[c]) {
                (None, _) => out.push(1.0),
                (Some(_), Some(eig)) => out.extend_from_slice(eig),
                (Some(kappa), None) => {
                    let (_, gen_eig) = dense_scaling(&self.graph, members)?;
                    out.extend(gen_eig.iter().map(|g| g / kappa));
                }
            }
        }
        Ok(out)
    }

    /// Sum of log nonzero eigenvalues of the scaled ICAR precision
    /// (generalized log-determinant), over all non-singleton components.
    pub fn scaled_log_gdet(&self) -> Result<f64> {
        let spectrum = self.mixing_spectrum()?;
        let mut acc = 0.0;
        let mut idx = 0;
        for (c, members) in self.graph.components().iter().enumerate() {
            let len = members.len();
            if self.scaling[c].kappa.is_some() {
                for &g in &spectrum[idx..idx + len] {
                    if g > 0.0 {
                        acc -= g.ln();
                    }
                }
            }
            idx += len;
        }
        Ok(acc)
    }

    /// Draws a sum-to-zero ICAR field scaled to unit generalized variance
    /// (zero on singletons).
    pub fn sample_scaled_icar<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut u = vec![0.0; self.n_areas()];
        for (c, members) in self.graph.components().iter().enumerate() {
            let Some(gf) = &self.grounded[c] else {
                continue;
            };
            let m = members.len();
            let z: Vec<f64> = (0..m - 1).map(|_| rng.sample(StandardNormal)).collect();
            let w = gf.factor.sample_from_standard(&z);
            let mean = w.iter().sum::<f64>() / m as f64;
            let scale = 1.0 / self.kappa_of[members[0]].sqrt();
            for (k, &a) in members.iter().enumerate() {
                let wk = if k < m - 1 { w[k] } else { 0.0 };
                u[a] = (wk - mean) * scale;
            }
        }
        u
    }
}

/// Draws a BYM2 field `sigma * (sqrt(1 - phi) v + sqrt(phi) u)`.
pub fn sample_bym2<R: Rng + ?Sized>(
    sigma: f64,
    phi: f64,
    structure: &ScaledStructure,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::input(format!("mixing parameter {phi} outside [0, 1]")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::input(format!("field standard deviation {sigma} is negative")));
    }
    let n = structure.n_areas();
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let u = structure.sample_scaled_icar(rng);
    Ok((0..n)
        .map(|a| {
            if structure.is_singleton(a) {
                sigma * v[a]
            } else {
                sigma * ((1.0 - phi).sqrt() * v[a] + phi.sqrt() * u[a])
            }
        })
        .collect())
}

fn component_laplacian(graph: &AreaGraph, members: &[usize]) -> DMatrix<f64> {
    let m = members.len();
    let mut local = vec![usize::MAX; graph.n_areas()];
    for (k, &a) in members.iter().enumerate() {
        local[a] = k;
    }
    let mut q = DMatrix::zeros(m, m);
    for (k, &a) in members.iter().enumerate() {
        q[(k, k)] = graph.degree(a) as f64;
        for &b in graph.neighbors(a) {
            q[(k, local[b])] = -1.0;
        }
    }
    q
}

/// Dense route: returns kappa and the nonzero-padded eigenvalues of the
/// unscaled generalized inverse (one zero for the null direction).
fn dense_scaling(graph: &AreaGraph, members: &[usize]) -> Result<(f64, Vec<f64>)> {
    let q = component_laplacian(graph, members);
    let m = members.len();
    let eig = SymmetricEigen::new(q);
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = max_ev * 1e-10 * m as f64;
    let mut null_count = 0;
    let mut diag = vec![0.0; m];
    let mut gen_eig = Vec::with_capacity(m);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= tol {
            null_count += 1;
            gen_eig.push(0.0);
            continue;
        }
        gen_eig.push(1.0 / lam);
        let v = eig.eigenvectors.column(k);
        for i in 0..m {
            diag[i] += v[i] * v[i] / lam;
        }
    }
    if null_count != 1 {
        return Err(Error::numeric(format!(
            "connected component has {null_count} null eigenvalues"
        )));
    }
    let kappa = (diag.iter().map(|d| d.ln()).sum::<f64>() / m as f64).exp();
    Ok((kappa, gen_eig))
}

fn grounded_factor(graph: &AreaGraph, members: &[usize]) -> Result<CholeskyFactor> {
    let m = members.len();
    let mut local = vec![usize::MAX; graph.n_areas()];
    for (k, &a) in members[..m - 1].iter().enumerate() {
        local[a] = k;
    }
    let mut entries = Vec::new();
    for &a in &members[..m - 1] {
        for &b in graph.neighbors(a) {
            if local[b] != usize::MAX && local[a] > local[b] {
                entries.push((local[a], local[b]));
            }
        }
    }
    let pattern = Arc::new(SymPattern::from_entries(m - 1, entries.iter().copied()));
    let mut q = SymMatrix::zeros(Arc::clone(&pattern));
    for &a in &members[..m - 1] {
        q.add(local[a], local[a], graph.degree(a) as f64);
    }
    for &(i, j) in &entries {
        q.add(i, j, -1.0);
    }
    let sym = Arc::new(SymbolicCholesky::analyze(&pattern)?);
    CholeskyFactor::factor(&sym, &q)
}

/// Sparse route: with G the inverse of the grounded Laplacian padded by a
/// zero row/column, the constrained generalized inverse is P G P with
/// P = I - 11ᵀ/m, whose diagonal is G_ii - 2 (G1)_i / m + 1ᵀG1 / m².
fn sparse_scaling(factor: &CholeskyFactor, m: usize) -> f64 {
    let g_diag = factor.inverse_diag();
    let g1 = factor.solve(&vec![1.0; m - 1]);
    let total: f64 = g1.iter().sum();
    let mf = m as f64;
    let mut log_sum = 0.0;
    for i in 0..m {
        let (gii, gi1) = if i < m - 1 { (g_diag[i], g1[i]) } else { (0.0, 0.0) };
        log_sum += (gii - 2.0 * gi1 / mf + total / (mf * mf)).ln();
    }
    (log_sum / mf).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path3() -> Arc<AreaGraph> {
        Arc::new(AreaGraph::build(3, &[(0, 1), (1, 2)], vec![0; 3]).unwrap())
    }

    /// Moore-Penrose inverse by dense eigendecomposition, independent of
    /// the scaling code path.
    fn pinv_diag(q: &DMatrix<f64>) -> Vec<f64> {
        let n = q.nrows();
        let j = DMatrix::from_element(n, n, 1.0 / n as f64);
        let inv = (q + &j).try_inverse().unwrap() - j;
        (0..n).map(|i| inv[(i, i)]).collect()
    }

    #[test]
    fn build_validates() {
        assert!(AreaGraph::build(2, &[(0, 0)], vec![0, 0]).is_err());
        assert!(AreaGraph::build(2, &[(0, 2)], vec![0, 0]).is_err());
        assert!(AreaGraph::build(2, &[(0, 1)], vec![0]).is_err());
        let g = AreaGraph::build(2, &[(0, 1), (1, 0)], vec![0, 0]).unwrap();
        assert_eq!(g.components().len(), 1);
        assert_eq!(g.degree(0), 1);
    }

    #[test]
    fn lattice_queen_degrees() {
        let g = AreaGraph::build(9, &queen_lattice(3, 3), vec![0; 9]).unwrap();
        assert_eq!(g.degree(0), 3);
        assert_eq!(g.degree(4), 8);
        let k4 = AreaGraph::build(4, &queen_lattice(2, 2), vec![0; 4]).unwrap();
        assert!((0..4).all(|a| k4.degree(a) == 3));
    }

    #[test]
    fn two_components() {
        let g = AreaGraph::build(4, &[(0, 1), (2, 3)], vec![0; 4]).unwrap();
        assert_eq!(g.components(), &[vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn icar_structure_entries() {
        let q = path3().icar_structure().to_dense();
        assert_eq!(q[(0, 0)], 1.0);
        assert_eq!(q[(1, 1)], 2.0);
        assert_eq!(q[(0, 1)], -1.0);
        assert_eq!(q[(0, 2)], 0.0);
        let iso = AreaGraph::build(3, &[(0, 1)], vec![0; 3]).unwrap();
        let q = iso.icar_structure().to_dense();
        assert!((0..3).all(|i| q[(2, i)] == 0.0));
        for r in 0..3 {
            assert_eq!(q.row(r).sum(), 0.0);
        }
    }

    #[test]
    fn path3_scaling_matches_pseudo_inverse() {
        let g = path3();
        let s = ScaledStructure::new(Arc::clone(&g)).unwrap();
        let d = pinv_diag(&g.icar_structure().to_dense());
        let kappa = s.kappa_of(0);
        let gm = (d.iter().map(|v| (v / kappa).ln()).sum::<f64>() / 3.0).exp();
        assert!((gm - 1.0).abs() < 1e-10);
    }

    #[test]
    fn k3_scaled_variances_all_one() {
        let g = Arc::new(AreaGraph::build(3, &[(0, 1), (1, 2), (0, 2)], vec![0; 3]).unwrap());
        let s = ScaledStructure::new(Arc::clone(&g)).unwrap();
        for v in pinv_diag(&g.icar_structure().to_dense()) {
            assert!((v / s.kappa_of(0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_copies_share_kappa() {
        let g = Arc::new(AreaGraph::build(6, &[(0, 1), (1, 2), (3, 4), (4, 5)], vec![0; 6]).unwrap());
        let s = ScaledStructure::new(g).unwrap();
        assert!((s.kappa_of(0) - s.kappa_of(3)).abs() < 1e-14);
        assert_eq!(s.n_icar_components(), 2);
    }

    #[test]
    fn sparse_and_dense_scaling_agree() {
        let g = Arc::new(AreaGraph::build(30, &queen_lattice(6, 5), vec![0; 30]).unwrap());
        let dense = ScaledStructure::new(Arc::clone(&g)).unwrap();
        let sparse = ScaledStructure::with_dense_limit(g, 10).unwrap();
        assert_eq!(sparse.scaling()[0].method, ScalingMethod::SparseSelectedInverse);
        assert!((dense.kappa_of(0) - sparse.kappa_of(0)).abs() < 1e-10);
    }

    #[test]
    fn bym2_degenerate_cases() {
        let s = ScaledStructure::new(path3()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_bym2(0.0, 0.5, &s, &mut rng).unwrap(), vec![0.0; 3]);
        assert!(sample_bym2(1.0, 1.5, &s, &mut rng).is_err());
        assert!(sample_bym2(1.0, -0.1, &s, &mut rng).is_err());
    }

    #[test]
    fn scaled_icar_draws_sum_to_zero() {
        let g = Arc::new(AreaGraph::build(9, &queen_lattice(3, 3), vec![0; 9]).unwrap());
        let s = ScaledStructure::new(g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let u = s.sample_scaled_icar(&mut rng);
            assert!(u.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn bym2_iid_variance() {
        let s = ScaledStructure::new(path3()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sigma = 0.7;
        let draws = 100_000;
        let mut ss = [0.0; 3];
        for _ in 0..draws {
            let f = sample_bym2(sigma, 0.0, &s, &mut rng).unwrap();
            for i in 0..3 {
                ss[i] += f[i] * f[i];
            }
        }
        for v in ss {
            let var = v / draws as f64;
            assert!((var / (sigma * sigma) - 1.0).abs() < 0.02, "{var}");
        }
    }

    #[test]
    fn bym2_structured_variance_matches_pseudo_inverse() {
        let g = path3();
        let s = ScaledStructure::new(Arc::clone(&g)).unwrap();
        let d = pinv_diag(&g.icar_structure().to_dense());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigma = 1.3;
        let draws = 100_000;
        let mut ss = [0.0; 3];
        for _ in 0..draws {
            let f = sample_bym2(sigma, 1.0, &s, &mut rng).unwrap();
            for i in 0..3 {
                ss[i] += f[i] * f[i];
            }
        }
        for i in 0..3 {
            let expect = sigma * sigma * d[i] / s.kappa_of(0);
            let var = ss[i] / draws as f64;
            assert!((var / expect - 1.0).abs() < 0.02, "node {i}: {var} vs {expect}");
        }
    }

    #[test]
    fn singleton_is_unstructured() {
        let g = Arc::new(AreaGraph::build(3, &[(0, 1)], vec![0; 3]).unwrap());
        let s = ScaledStructure::new(g).unwrap();
        assert!(s.is_singleton(2));
        let spectrum = s.mixing_spectrum().unwrap();
        assert_eq!(spectrum.len(), 3);
        assert_eq!(spectrum[2], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 50_000;
        let mut ss = 0.0;
        for _ in 0..n {
            let f = sample_bym2(1.0, 0.9, &s, &mut rng).unwrap();
            ss += f[2] * f[2];
        }
        assert!((ss / n as f64 - 1.0).abs() < 0.03);
    }
}
