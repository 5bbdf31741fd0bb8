//! Design spaces, design measures, agents and information matrices.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::criteria::CriterionKind;
use crate::error::{Error, Result};
use crate::linalg;

/// Candidate experiment conditions together with the partition into agents.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpace {
    points: Vec<DVector<f64>>,
    groups: Vec<Vec<usize>>,
    owner: Vec<usize>,
    dim: usize,
}

impl DesignSpace {
    pub fn new(points: Vec<Vec<f64>>, groups: Vec<Vec<usize>>) -> Result<Self> {
        let vecs = points.into_iter().map(DVector::from_vec).collect();
        Self::from_vectors(vecs, groups)
    }

    pub fn from_vectors(points: Vec<DVector<f64>>, groups: Vec<Vec<usize>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Validation("design space has no points".into()));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::Validation("points have dimension 0".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Validation(format!(
                    "point {i} has dimension {} but point 0 has dimension {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("point {i} has a non-finite entry")));
            }
            if p.iter().all(|&v| v == 0.0) {
                return Err(Error::Validation(format!("point {i} is the zero vector")));
            }
        }
        if groups.is_empty() {
            return Err(Error::Validation("no agent groups given".into()));
        }
        let mut owner = vec![usize::MAX; n];
        for (k, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::Validation(format!("group {k} is empty")));
            }
            for &i in g {
                if i >= n {
                    return Err(Error::Validation(format!(
                        "group {k} refers to point {i} but there are only {n} points"
                    )));
                }
                if owner[i] != usize::MAX {
                    return Err(Error::Validation(format!("point {i} belongs to groups {} and {k}", owner[i])));
                }
                owner[i] = k;
            }
        }
        if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::Validation(format!("point {i} belongs to no group")));
        }
        let space = DesignSpace { points, groups, owner, dim };
        let span = linalg::orthonormal_columns(&space.stacked(&(0..n).collect::<Vec<_>>())).ncols();
        if span < dim {
            return Err(Error::Validation(format!(
                "points span a subspace of dimension {span}, need the full dimension {dim}"
            )));
        }
        Ok(space)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn n_agents(&self) -> usize {
        self.groups.len()
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn group(&self, k: usize) -> &[usize] {
        &self.groups[k]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Agent owning point `i`.
    pub fn owner(&self, i: usize) -> usize {
        self.owner[i]
    }

    /// Points of `idx` as the columns of a d×|idx| matrix.
    pub fn stacked(&self, idx: &[usize]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, idx.len());
        for (c, &i) in idx.iter().enumerate() {
            m.set_column(c, &self.points[i]);
        }
        m
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.iter().copied().collect()).collect()
    }
}

/// Nonnegative weights over the design points (expected sample counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DesignMeasure(Vec<f64>);

impl DesignMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!("weight {i} = {} is negative or not finite", weights[i])));
        }
        Ok(DesignMeasure(weights))
    }

    pub fn zeros(n: usize) -> Self {
        DesignMeasure(vec![0.0; n])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn mass(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl Deref for DesignMeasure {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for DesignMeasure {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        DesignMeasure::new(v)
    }
}

impl From<DesignMeasure> for Vec<f64> {
    fn from(w: DesignMeasure) -> Vec<f64> {
        w.0
    }
}

/// Symmetric PSD matrix with its numerical rank.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfoMatrix {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
}

impl InfoMatrix {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let rank = linalg::numerical_rank(&matrix);
        InfoMatrix { matrix, rank }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// One agent: its points, cost per sample, criterion and subspace basis.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentProfile {
    index: usize,
    group: Vec<usize>,
    cost: f64,
    criterion: CriterionKind,
    basis: DMatrix<f64>,
}

impl AgentProfile {
    pub fn new(space: &DesignSpace, k: usize, cost: f64, criterion: CriterionKind) -> Result<Self> {
        if k >= space.n_agents() {
            return Err(Error::Validation(format!("agent {k} does not exist ({} groups)", space.n_agents())));
        }
        if !(cost.is_finite() && cost >= 0.0) {
            return Err(Error::Validation(format!("cost of agent {k} must be finite and nonnegative")));
        }
        let group = space.group(k).to_vec();
        if let CriterionKind::V(Some(p)) = &criterion {
            check_probability(p, group.len(), &format!("V weights of agent {k}"))?;
        }
        let basis = orthonormal_basis(space, &group);
        Ok(AgentProfile { index: k, group, cost, criterion, basis })
    }

    /// All agents of a space with the given costs and criteria.
    pub fn all(space: &DesignSpace, costs: &[f64], criteria: &[CriterionKind]) -> Result<Vec<Self>> {
        let k = space.n_agents();
        if costs.len() != k {
            return Err(Error::Validation(format!("{} costs given for {k} agents", costs.len())));
        }
        if criteria.len() != k {
            return Err(Error::Validation(format!("{} criteria given for {k} agents", criteria.len())));
        }
        (0..k).map(|j| AgentProfile::new(space, j, costs[j], criteria[j].clone())).collect()
    }

    /// Agents with the D criterion.
    pub fn all_d(space: &DesignSpace, costs: &[f64]) -> Result<Vec<Self>> {
        AgentProfile::all(space, costs, &vec![CriterionKind::D; space.n_agents()])
    }

    /// Same agent with basis `A·T` for a nonsingular r×r matrix `T`.
    ///
    /// The result no longer has orthonormal columns; it describes the same
    /// subspace in different coordinates.
    pub fn reparameterized(&self, t: &DMatrix<f64>) -> Result<Self> {
        let r = self.rank();
        if t.nrows() != r || t.ncols() != r {
            return Err(Error::DimensionMismatch { expected: r, got: t.nrows() });
        }
        if t.clone().lu().determinant().abs() < 1e-12 {
            return Err(Error::Validation("reparameterization is singular".into()));
        }
        let mut out = self.clone();
        out.basis = &self.basis * t;
        Ok(out)
    }

    pub fn with_cost(&self, cost: f64) -> Self {
        let mut out = self.clone();
        out.cost = cost;
        out
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn group(&self) -> &[usize] {
        &self.group
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn criterion(&self) -> &CriterionKind {
        &self.criterion
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.group.contains(&i)
    }

    /// Own points expressed in basis coordinates.
    pub fn projected_points(&self, space: &DesignSpace) -> Vec<DVector<f64>> {
        let at = self.basis.transpose();
        self.group.iter().map(|&i| &at * space.point(i)).collect()
    }

    /// Total weight on the agent's group.
    pub fn block_mass(&self, w: &[f64]) -> f64 {
        self.group.iter().map(|&i| w[i]).sum()
    }
}

pub(crate) fn check_probability(p: &[f64], len: usize, what: &str) -> Result<()> {
    if p.len() != len {
        return Err(Error::Validation(format!("{what}: expected {len} entries, got {}", p.len())));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Validation(format!("{what}: entries must be nonnegative")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("{what}: entries sum to {s}, not 1")));
    }
    Ok(())
}

fn check_len(space: &DesignSpace, w: &[f64]) -> Result<()> {
    if w.len() != space.n_points() {
        return Err(Error::DimensionMismatch { expected: space.n_points(), got: w.len() });
    }
    Ok(())
}

/// Σ wᵢ xᵢ xᵢᵀ without validation.
pub(crate) fn info_sum(space: &DesignSpace, w: &[f64]) -> DMatrix<f64> {
    let d = space.dim();
    let mut m = DMatrix::zeros(d, d);
    for (x, &wi) in space.points().iter().zip(w) {
        if wi != 0.0 {
            m.ger(wi, x, x, 1.0);
        }
    }
    linalg::symmetrize(&m)
}

pub fn information_matrix(space: &DesignSpace, w: &[f64]) -> Result<InfoMatrix> {
    check_len(space, w)?;
    Ok(InfoMatrix::from_matrix(info_sum(space, w)))
}

pub fn pseudo_inverse(m: &InfoMatrix) -> InfoMatrix {
    let (p, rank) = linalg::pinv_sym(&m.matrix);
    InfoMatrix { matrix: p, rank }
}

pub fn orthonormal_basis(space: &DesignSpace, group: &[usize]) -> DMatrix<f64> {
    linalg::orthonormal_columns(&space.stacked(group))
}

pub fn normalize(w: &[f64]) -> Result<(Vec<f64>, f64)> {
    let mass: f64 = w.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok((w.iter().map(|v| v / mass).collect(), mass))
}

/// Pooled information M(w) with its pseudo-inverse and range.
pub(crate) struct Pooled {
    pub m: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
    pub range: DMatrix<f64>,
}

impl Pooled {
    pub fn new(space: &DesignSpace, w: &[f64]) -> Self {
        let m = info_sum(space, w);
        let (pinv, _) = linalg::pinv_sym(&m);
        let range = linalg::range_basis(&m);
        Pooled { m, pinv, range }
    }

    /// Whether the span of `basis` lies in the range of M(w).
    pub fn identifies(&self, basis: &DMatrix<f64>) -> bool {
        if basis.ncols() == 0 {
            return true;
        }
        let resid = basis - &self.range * (self.range.transpose() * basis);
        linalg::max_abs(&resid) <= 1e-8 * linalg::max_abs(basis).max(1.0)
    }

    /// (Aᵀ M⁺ A)⁻¹ for the agent basis `a`, `None` when singular.
    pub fn local(&self, a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        if !self.identifies(a) {
            return None;
        }
        let b = a.transpose() * &self.pinv * a;
        linalg::spd_inverse(&b)
    }
}

pub fn local_information_matrix(space: &DesignSpace, w: &[f64], agent: &AgentProfile) -> Result<InfoMatrix> {
    check_len(space, w)?;
    let pooled = Pooled::new(space, w);
    let local = pooled.local(agent.basis()).ok_or(Error::Singular(agent.index()))?;
    Ok(InfoMatrix { rank: agent.rank(), matrix: local })
}
