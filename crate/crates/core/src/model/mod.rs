//! Latent Gaussian models: block layout, sparse prior precision, linear
//! constraints, observation model and hyperparameters.

pub mod design;
pub mod heat;
pub mod hyper;
pub mod likelihood;

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ScaledStructure;
use crate::sparse::{SymMatrix, SymPattern, SymbolicCholesky};

pub use design::{Design, DesignBuilder};
pub use hyper::{HyperKind, HyperSpec, PcMixing, PcPair};
pub use likelihood::{Likelihood, LikelihoodEval, Noise};

/// Diagonal jitter on intrinsic blocks so that the unconstrained precision
/// is positive definite; the constrained directions absorb it.
pub const INTRINSIC_JITTER: f64 = 1e-6;

/// Largest mixing parameter used numerically (phi = 1 makes the field
/// deterministic given u).
const PHI_MAX: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Named, contiguous blocks of the latent vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    blocks: Vec<Block>,
    dim: usize,
}

impl Layout {
    pub fn push(&mut self, name: impl Into<String>, len: usize) -> usize {
        let offset = self.dim;
        self.blocks.push(Block {
            name: name.into(),
            offset,
            len,
        });
        self.dim += len;
        offset
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// One `name[i]` label per latent coordinate.
    pub fn labels(&self) -> Vec<String> {
        self.blocks
            .iter()
            .flat_map(|b| (0..b.len).map(move |i| format!("{}[{i}]", b.name)))
            .collect()
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.block(name).map(Block::range)
    }
}

/// Gaussian prior on a block of the latent vector.
#[derive(Debug, Clone)]
pub enum PriorBlock {
    /// Independent N(0, 1/precision) coordinates.
    Fixed {
        offset: usize,
        len: usize,
        precision: f64,
    },
    /// Independent N(0, sigma²) with sigma a hyperparameter.
    Iid {
        offset: usize,
        len: usize,
        sigma: usize,
    },
    /// BYM2 field in the augmented parameterization: `field` holds
    /// `sigma (sqrt(1 - phi) v + sqrt(phi) u)` and `u` the scaled ICAR
    /// component, constrained to sum to zero per connected component.
    Bym2 {
        field: usize,
        u: usize,
        structure: Arc<ScaledStructure>,
        sigma: usize,
        phi: usize,
    },
    /// Second-order random walk with sum-to-zero and zero-linear-trend
    /// constraints.
    Rw2 {
        offset: usize,
        len: usize,
        sigma: usize,
    },
}

#[derive(Debug, Clone, Copy)]
enum Scale {
    Const,
    /// 1 / sigma²
    Tau(usize),
    BymFieldField { sigma: usize, phi: usize },
    BymFieldU { sigma: usize, phi: usize },
    BymUU { phi: usize },
}

impl Scale {
    fn eval(&self, nat: &[f64]) -> f64 {
        match *self {
            Scale::Const => 1.0,
            Scale::Tau(s) => 1.0 / (nat[s] * nat[s]),
            Scale::BymFieldField { sigma, phi } => {
                let p = nat[phi].min(PHI_MAX);
                1.0 / (nat[sigma] * nat[sigma] * (1.0 - p))
            }
            Scale::BymFieldU { sigma, phi } => {
                let p = nat[phi].min(PHI_MAX);
                -p.sqrt() / (nat[sigma] * (1.0 - p))
            }
            Scale::BymUU { phi } => {
                let p = nat[phi].min(PHI_MAX);
                p / (1.0 - p)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PriorTerm {
    pos: usize,
    base: f64,
    scale: Scale,
    jitter: bool,
}

/// Second-difference penalty `DᵀD` for a walk of length `len`, as
/// lower-triangle entries.
pub fn rw2_structure(len: usize) -> Vec<(usize, usize, f64)> {
    let mut dense = vec![0.0; len * len];
    for i in 0..len.saturating_sub(2) {
        let c = [1.0, -2.0, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                dense[(i + a) * len + i + b] += c[a] * c[b];
            }
        }
    }
    let mut out = Vec::new();
    for j in 0..len {
        for i in j..len.min(j + 3) {
            if dense[i * len + j] != 0.0 {
                out.push((i, j, dense[i * len + j]));
            }
        }
    }
    out
}

/// Sum of log nonzero eigenvalues of the RW2 structure matrix.
fn rw2_log_gdet(len: usize) -> f64 {
    let mut m = DMatrix::zeros(len, len);
    for (i, j, v) in rw2_structure(len) {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    let mut eig: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig.iter().take(len - 2).map(|v| v.ln()).sum()
}

/// Homogeneous linear constraints `A x = 0`, stored as sparse rows.
#[derive(Debug, Clone)]
pub struct Constraints {
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
    gram: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    log_det_gram: f64,
}

impl Constraints {
    pub fn new(dim: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let k = rows.len();
        let mut gram = DMatrix::zeros(k, k);
        let mut dense_rows = vec![0.0; dim];
        for a in 0..k {
            for &(i, v) in &rows[a] {
                if i >= dim {
                    return Err(Error::input(format!("constraint index {i} out of range")));
                }
                dense_rows[i] += v;
            }
            for b in 0..=a {
                let g: f64 = rows[b].iter().map(|&(i, v)| v * dense_rows[i]).sum();
                gram[(a, b)] = g;
                gram[(b, a)] = g;
            }
            for &(i, _) in &rows[a] {
                dense_rows[i] = 0.0;
            }
        }
        let (gram, log_det_gram) = if k == 0 {
            (None, 0.0)
        } else {
            let chol = nalgebra::Cholesky::new(gram)
                .ok_or_else(|| Error::input("constraints are linearly dependent"))?;
            let ld = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            (Some(chol), ld)
        };
        Ok(Self {
            dim,
            rows,
            gram,
            log_det_gram,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// `A x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(i, v)| v * x[i]).sum())
            .collect()
    }

    /// `x += Aᵀ lambda * scale`
    pub fn add_transpose(&self, lambda: &[f64], scale: f64, x: &mut [f64]) {
        for (r, &l) in self.rows.iter().zip(lambda) {
            for &(i, v) in r {
                x[i] += scale * v * l;
            }
        }
    }

    /// Column `c` of `Aᵀ` as a dense vector.
    pub fn dense_row(&self, c: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.rows[c] {
            out[i] += v;
        }
        out
    }

    /// Orthogonal projection onto the null space of `A`.
    pub fn project(&self, g: &[f64]) -> Vec<f64> {
        let mut out = g.to_vec();
        if let Some(chol) = &self.gram {
            let ag = DVector::from_vec(self.apply(g));
            let lam = chol.solve(&ag);
            self.add_transpose(lam.as_slice(), -1.0, &mut out);
        }
        out
    }

    /// `ln det(A Aᵀ)`
    pub fn log_det_gram(&self) -> f64 {
        self.log_det_gram
    }

    /// Largest absolute constraint residual.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        self.apply(x).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Immutable latent Gaussian model.
#[derive(Debug, Clone)]
pub struct LatentModel {
    layout: Layout,
    design: Design,
    offsets: Vec<f64>,
    likelihood: Likelihood,
    priors: Vec<PriorBlock>,
    hypers: Vec<HyperSpec>,
    constraints: Constraints,
    pattern: Arc<SymPattern>,
    symbolic: Arc<SymbolicCholesky>,
    terms: Vec<PriorTerm>,
    block_log_gdet: Vec<f64>,
}

impl LatentModel {
    pub fn new(
        layout: Layout,
        design: Design,
        offsets: Vec<f64>,
        likelihood: Likelihood,
        priors: Vec<PriorBlock>,
        hypers: Vec<HyperSpec>,
    ) -> Result<Self> {
        let dim = layout.dim();
        if design.n_cols() != dim {
            return Err(Error::input(format!(
                "design has {} columns but layout dimension is {dim}",
                design.n_cols()
            )));
        }
        if design.n_rows() != offsets.len() || design.n_rows() != likelihood.n_records() {
            return Err(Error::input("design, offsets and observations differ in length"));
        }
        if let Some(o) = offsets.iter().find(|o| !o.is_finite()) {
            return Err(Error::input(format!("non-finite offset {o}")));
        }
        if let Likelihood::Gaussian {
            noise: Noise::Hyper(i),
            ..
        } = likelihood
        {
            if !hypers.get(i).is_some_and(HyperSpec::is_sigma) {
                return Err(Error::input("Gaussian noise must refer to a sigma hyperparameter"));
            }
        }
        let mut covered = vec![false; dim];
        let mut raw: Vec<(usize, usize, f64, Scale, bool)> = Vec::new();
        let mut con_rows: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut block_log_gdet = Vec::with_capacity(priors.len());
        let check_sigma = |i: usize| -> Result<()> {
            match hypers.get(i) {
                Some(h) if h.is_sigma() => Ok(()),
                _ => Err(Error::input(format!("hyperparameter {i} is not a sigma"))),
            }
        };
        let mut cover = |r: Range<usize>| -> Result<()> {
            if r.end > dim {
                return Err(Error::input("prior block exceeds the latent dimension"));
            }
            for i in r {
                if std::mem::replace(&mut covered[i], true) {
                    return Err(Error::input(format!("latent coordinate {i} has two priors")));
                }
            }
            Ok(())
        };
        for p in &priors {
            match p {
                PriorBlock::Fixed {
                    offset,
                    len,
                    precision,
                } => {
                    cover(*offset..offset + len)?;
                    if !(*precision > 0.0) {
                        return Err(Error::input("fixed-effect precision must be positive"));
                    }
                    for i in *offset..offset + len {
                        raw.push((i, i, *precision, Scale::Const, false));
                    }
                    block_log_gdet.push(0.0);
                }
                PriorBlock::Iid { offset, len, sigma } => {
                    cover(*offset..offset + len)?;
                    check_sigma(*sigma)?;
                    for i in *offset..offset + len {
                        raw.push((i, i, 1.0, Scale::Tau(*sigma), false));
                    }
                    block_log_gdet.push(0.0);
                }
                PriorBlock::Bym2 {
                    field,
                    u,
                    structure,
                    sigma,
                    phi,
                } => {
                    let n = structure.n_areas();
                    cover(*field..field + n)?;
                    cover(*u..u + n)?;
                    check_sigma(*sigma)?;
                    if !matches!(hypers.get(*phi).map(|h| &h.kind), Some(HyperKind::Mixing(_))) {
                        return Err(Error::input(format!("hyperparameter {phi} is not a mixing parameter")));
                    }
                    let (s, ph) = (*sigma, *phi);
                    for a in 0..n {
                        let (x, ua) = (field + a, u + a);
                        if structure.is_singleton(a) {
                            raw.push((x, x, 1.0, Scale::Tau(s), false));
                            raw.push((ua, ua, 1.0, Scale::Const, false));
                            con_rows.push(vec![(ua, 1.0)]);
                        } else {
                            raw.push((x, x, 1.0, Scale::BymFieldField { sigma: s, phi: ph }, false));
                            raw.push((ua, x, 1.0, Scale::BymFieldU { sigma: s, phi: ph }, false));
                            raw.push((ua, ua, 1.0, Scale::BymUU { phi: ph }, false));
                            raw.push((ua, ua, INTRINSIC_JITTER, Scale::Const, true));
                        }
                    }
                    for (i, j, v) in structure.scaled_entries() {
                        raw.push((u + i, u + j, v, Scale::Const, false));
                    }
                    for members in structure.graph().components() {
                        if members.len() > 1 {
                            con_rows.push(members.iter().map(|&a| (u + a, 1.0)).collect());
                        }
                    }
                    block_log_gdet.push(structure.scaled_log_gdet()?);
                }
                PriorBlock::Rw2 { offset, len, sigma } => {
                    if *len < 3 {
                        return Err(Error::input("RW2 block needs at least 3 coordinates"));
                    }
                    cover(*offset..offset + len)?;
                    check_sigma(*sigma)?;
                    for (i, j, v) in rw2_structure(*len) {
                        raw.push((offset + i, offset + j, v, Scale::Tau(*sigma), false));
                    }
                    for i in 0..*len {
                        raw.push((offset + i, offset + i, INTRINSIC_JITTER, Scale::Const, true));
                    }
                    let mid = (*len as f64 - 1.0) / 2.0;
                    con_rows.push((0..*len).map(|i| (offset + i, 1.0)).collect());
                    con_rows.push((0..*len).map(|i| (offset + i, i as f64 - mid)).collect());
                    block_log_gdet.push(rw2_log_gdet(*len));
                }
            }
        }
        if let Some(i) = covered.iter().position(|c| !c) {
            return Err(Error::input(format!("latent coordinate {i} has no prior")));
        }
        let mut cols = design.gram_columns();
        for &(i, j, ..) in &raw {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            cols[c].push(r as u32);
        }
        let pattern = Arc::new(SymPattern::from_columns(cols));
        let terms = raw
            .into_iter()
            .map(|(i, j, base, scale, jitter)| PriorTerm {
                pos: pattern.find(i, j).expect("prior entry in pattern"),
                base,
                scale,
                jitter,
            })
            .collect();
        let symbolic = Arc::new(SymbolicCholesky::analyze(&pattern)?);
        let constraints = Constraints::new(dim, con_rows)?;
        Ok(Self {
            layout,
            design,
            offsets,
            likelihood,
            priors,
            hypers,
            constraints,
            pattern,
            symbolic,
            terms,
            block_log_gdet,
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.likelihood
    }

    pub fn priors(&self) -> &[PriorBlock] {
        &self.priors
    }

    pub fn hypers(&self) -> &[HyperSpec] {
        &self.hypers
    }

    pub fn n_hypers(&self) -> usize {
        self.hypers.len()
    }

    pub fn hyper_index(&self, name: &str) -> Option<usize> {
        self.hypers.iter().position(|h| h.name == name)
    }

    pub fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    pub fn pattern(&self) -> &Arc<SymPattern> {
        &self.pattern
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn to_natural(&self, internal: &[f64]) -> Vec<f64> {
        self.hypers
            .iter()
            .zip(internal)
            .map(|(h, &t)| h.to_natural(t))
            .collect()
    }

    pub fn to_internal(&self, natural: &[f64]) -> Result<Vec<f64>> {
        self.check_hyper_len(natural.len())?;
        self.hypers
            .iter()
            .zip(natural)
            .map(|(h, &v)| h.to_internal(v))
            .collect()
    }

    fn check_hyper_len(&self, len: usize) -> Result<()> {
        if len != self.hypers.len() {
            return Err(Error::input(format!(
                "expected {} hyperparameters, got {len}",
                self.hypers.len()
            )));
        }
        Ok(())
    }

    fn check_natural(&self, natural: &[f64]) -> Result<()> {
        self.check_hyper_len(natural.len())?;
        for (h, &v) in self.hypers.iter().zip(natural) {
            let ok = match h.kind {
                HyperKind::Sigma(_) => v > 0.0 && v.is_finite(),
                HyperKind::Mixing(_) => (0.0..=1.0).contains(&v),
            };
            if !ok {
                return Err(Error::input(format!("inadmissible {} = {v}", h.name)));
            }
        }
        Ok(())
    }

    /// Hyperprior log density on the internal scale, Jacobians included.
    pub fn log_hyperprior(&self, internal: &[f64]) -> f64 {
        self.hypers
            .iter()
            .zip(internal)
            .map(|(h, &t)| h.log_prior_internal(t))
            .sum()
    }

    /// Joint prior precision at natural-scale hyperparameters over the full
    /// model pattern (likelihood entries are zero). With `jitter`, intrinsic
    /// blocks get [`INTRINSIC_JITTER`] on the diagonal.
    pub fn prior_precision(&self, natural: &[f64], jitter: bool) -> Result<SymMatrix> {
        self.check_natural(natural)?;
        let mut q = SymMatrix::zeros(self.pattern.clone());
        let values = q.values_mut();
        for t in &self.terms {
            if t.jitter && !jitter {
                continue;
            }
            values[t.pos] += t.base * t.scale.eval(natural);
        }
        Ok(q)
    }

    /// Prior log density of `x` on the constrained subspace, normalized.
    pub fn log_prior_density(&self, x: &[f64], natural: &[f64]) -> f64 {
        let ln2pi = (2.0 * PI).ln();
        let mut acc = 0.0;
        for (p, gdet) in self.priors.iter().zip(&self.block_log_gdet) {
            match p {
                PriorBlock::Fixed {
                    offset,
                    len,
                    precision,
                } => {
                    for &v in &x[*offset..offset + len] {
                        acc += 0.5 * (precision.ln() - ln2pi) - 0.5 * precision * v * v;
                    }
                }
                PriorBlock::Iid { offset, len, sigma } => {
                    let s = natural[*sigma];
                    for &v in &x[*offset..offset + len] {
                        acc += -s.ln() - 0.5 * ln2pi - 0.5 * v * v / (s * s);
                    }
                }
                PriorBlock::Bym2 {
                    field,
                    u,
                    structure,
                    sigma,
                    phi,
                } => {
                    let s = natural[*sigma];
                    let ph = natural[*phi].min(PHI_MAX);
                    let n = structure.n_areas();
                    let mut rank = 0usize;
                    for a in 0..n {
                        let xa = x[field + a];
                        if structure.is_singleton(a) {
                            acc += -s.ln() - 0.5 * ln2pi - 0.5 * xa * xa / (s * s);
                        } else {
                            let var = s * s * (1.0 - ph);
                            let r = xa - s * ph.sqrt() * x[u + a];
                            acc += -0.5 * (ln2pi + var.ln()) - 0.5 * r * r / var;
                            rank += 1;
                        }
                    }
                    rank -= structure.n_icar_components();
                    let mut quad = 0.0;
                    for (a, b) in structure.graph().edges() {
                        let d = x[u + a] - x[u + b];
                        quad += structure.kappa_of(a) * d * d;
                    }
                    acc += 0.5 * gdet - 0.5 * rank as f64 * ln2pi - 0.5 * quad;
                }
                PriorBlock::Rw2 { offset, len, sigma } => {
                    let tau = 1.0 / (natural[*sigma] * natural[*sigma]);
                    let w = &x[*offset..offset + len];
                    let quad: f64 = w.windows(3).map(|t| (t[0] - 2.0 * t[1] + t[2]).powi(2)).sum();
                    acc += 0.5 * (*len as f64 - 2.0) * (tau.ln() - ln2pi) + 0.5 * gdet - 0.5 * tau * quad;
                }
            }
        }
        acc
    }

    /// `D x` (without offsets).
    pub fn linear_predictor(&self, x: &[f64]) -> Vec<f64> {
        self.design.mul(x)
    }

    pub fn loglik(&self, x: &[f64], natural: &[f64]) -> f64 {
        let eta = self.design.mul(x);
        self.likelihood.value(&self.offsets, &eta, natural)
    }

    /// Unnormalized log joint of latent field and internal-scale
    /// hyperparameters.
    pub fn log_joint(&self, x: &[f64], internal: &[f64]) -> f64 {
        let nat = self.to_natural(internal);
        self.loglik(x, &nat) + self.log_prior_density(x, &nat) + self.log_hyperprior(internal)
    }
}
