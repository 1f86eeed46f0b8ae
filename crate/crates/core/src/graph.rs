//! Formation topology, desired geometry, edge errors and the stacked
//! formation gradient.
//!
//! Agents and edges are zero-based in this API. An edge `(tail, head)`
//! carries the relative position `z_k = x_tail - x_head`, so that the
//! stacked relative positions satisfy `z = (B ⊗ I_m)ᵀ x` exactly.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::GraphError;
use crate::linalg::{max_eigenvalue, min_eigenvalue};

/// Singular values below this are treated as zero in the rigidity rank test.
pub const RIGIDITY_SV_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
}

impl Edge {
    pub fn new(tail: usize, head: usize) -> Self {
        Self { tail, head }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    Displacement,
    Distance,
}

/// Per-edge reference geometry.
#[derive(Debug, Clone, PartialEq)]
pub enum DesiredGeometry {
    /// Desired relative vectors `z*_k`.
    Displacement(Vec<DVector<f64>>),
    /// Desired squared distances `‖z*_k‖²`.
    SquaredDistance(Vec<f64>),
}

impl DesiredGeometry {
    pub fn flavor(&self) -> Flavor {
        match self {
            DesiredGeometry::Displacement(_) => Flavor::Displacement,
            DesiredGeometry::SquaredDistance(_) => Flavor::Distance,
        }
    }

    fn len(&self) -> usize {
        match self {
            DesiredGeometry::Displacement(v) => v.len(),
            DesiredGeometry::SquaredDistance(v) => v.len(),
        }
    }
}

/// Stacked edge errors. Distance flavor stores one scalar per edge,
/// displacement flavor one `m`-vector per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeErrors {
    per_edge: usize,
    values: DVector<f64>,
}

impl EdgeErrors {
    pub fn per_edge(&self) -> usize {
        self.per_edge
    }

    pub fn num_edges(&self) -> usize {
        self.values.len() / self.per_edge
    }

    pub fn edge(&self, k: usize) -> DVectorView<'_, f64> {
        self.values.rows(k * self.per_edge, self.per_edge)
    }

    pub fn stacked(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_stacked(self) -> DVector<f64> {
        self.values
    }

    /// Per-edge magnitude: `|e_k|` or `‖e_k‖`.
    pub fn edge_norms(&self) -> Vec<f64> {
        (0..self.num_edges()).map(|k| self.edge(k).norm()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.edge_norms().into_iter().fold(0.0, f64::max)
    }
}

/// Extremal eigenvalues of the rigidity Gramians over a sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigiditySpectra {
    /// max over samples of `λ_max(GᵀG)` with `G` the gradient map (`4 D_zᵀB̄ᵀB̄D_z` for distance).
    pub lambda1: f64,
    /// min over samples of `λ_min(GᵀG) / 4` (`λ_min(D_zᵀB̄ᵀB̄D_z)` for distance).
    pub gram_min: f64,
    /// max over samples of `λ_max(GᵀG) / 4` (`λ_max(D_zᵀB̄ᵀB̄D_z)` for distance).
    pub lambda3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormationGraph {
    num_agents: usize,
    dim: usize,
    edges: Vec<Edge>,
    desired: DesiredGeometry,
}

impl FormationGraph {
    pub fn new(
        num_agents: usize,
        dim: usize,
        edges: Vec<Edge>,
        desired: DesiredGeometry,
    ) -> Result<Self, GraphError> {
        if num_agents < 2 {
            return Err(GraphError::TooFewAgents(num_agents));
        }
        if dim != 2 && dim != 3 {
            return Err(GraphError::UnsupportedDimension(dim));
        }
        if edges.is_empty() {
            return Err(GraphError::NoEdges);
        }
        for (k, e) in edges.iter().enumerate() {
            for agent in [e.tail, e.head] {
                if agent >= num_agents {
                    return Err(GraphError::AgentOutOfRange {
                        edge: k,
                        agent,
                        num_agents,
                    });
                }
            }
            if e.tail == e.head {
                return Err(GraphError::SelfLoop { edge: k });
            }
            for (l, f) in edges[..k].iter().enumerate() {
                let same = (f.tail == e.tail && f.head == e.head)
                    || (f.tail == e.head && f.head == e.tail);
                if same {
                    return Err(GraphError::DuplicateEdge { first: l, second: k });
                }
            }
        }
        if desired.len() != edges.len() {
            return Err(GraphError::DesiredCount {
                edges: edges.len(),
                desired: desired.len(),
            });
        }
        match &desired {
            DesiredGeometry::Displacement(z) => {
                for (k, zk) in z.iter().enumerate() {
                    if zk.len() != dim {
                        return Err(GraphError::Dimension {
                            what: format!("desired displacement of edge {k}"),
                            expected: dim,
                            got: zk.len(),
                        });
                    }
                }
            }
            DesiredGeometry::SquaredDistance(d) => {
                for (k, dk) in d.iter().enumerate() {
                    if !(dk.is_finite() && *dk > 0.0) {
                        return Err(GraphError::NonPositiveDistance { edge: k });
                    }
                }
                let needed = rigid_rank(num_agents, dim);
                if edges.len() < needed {
                    return Err(GraphError::TooFewEdges {
                        needed,
                        got: edges.len(),
                    });
                }
            }
        }
        let graph = Self {
            num_agents,
            dim,
            edges,
            desired,
        };
        if !graph.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(graph)
    }

    /// Builds a graph whose desired geometry is read off a reference configuration.
    pub fn from_reference(
        num_agents: usize,
        dim: usize,
        edges: Vec<Edge>,
        flavor: Flavor,
        reference: &DVector<f64>,
    ) -> Result<Self, GraphError> {
        if reference.len() != num_agents * dim {
            return Err(GraphError::Dimension {
                what: "reference configuration".into(),
                expected: num_agents * dim,
                got: reference.len(),
            });
        }
        // Validate indices before touching the reference.
        for (k, e) in edges.iter().enumerate() {
            for agent in [e.tail, e.head] {
                if agent >= num_agents {
                    return Err(GraphError::AgentOutOfRange {
                        edge: k,
                        agent,
                        num_agents,
                    });
                }
            }
        }
        let z: Vec<DVector<f64>> = edges
            .iter()
            .map(|e| {
                reference.rows(e.tail * dim, dim) - reference.rows(e.head * dim, dim)
            })
            .collect();
        let desired = match flavor {
            Flavor::Displacement => DesiredGeometry::Displacement(z),
            Flavor::Distance => {
                DesiredGeometry::SquaredDistance(z.iter().map(|v| v.norm_squared()).collect())
            }
        };
        Self::new(num_agents, dim, edges, desired)
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn flavor(&self) -> Flavor {
        self.desired.flavor()
    }

    pub fn desired(&self) -> &DesiredGeometry {
        &self.desired
    }

    /// Scalar components per edge error (`1` for distance, `m` for displacement).
    pub fn error_dim(&self) -> usize {
        match self.flavor() {
            Flavor::Distance => 1,
            Flavor::Displacement => self.dim,
        }
    }

    /// Edges incident to `agent`, paired with the neighbor index.
    pub fn neighbors(&self, agent: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().enumerate().filter_map(move |(k, e)| {
            if e.tail == agent {
                Some((k, e.head))
            } else if e.head == agent {
                Some((k, e.tail))
            } else {
                None
            }
        })
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.num_agents];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for (_, j) in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// `N × |ℰ|` incidence matrix: `+1` at the tail, `-1` at the head.
    pub fn incidence_matrix(&self) -> DMatrix<i32> {
        let mut b = DMatrix::zeros(self.num_agents, self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            b[(e.tail, k)] = 1;
            b[(e.head, k)] = -1;
        }
        b
    }

    /// `B̄ = B ⊗ I_m`.
    pub fn kron_incidence(&self) -> DMatrix<f64> {
        let b = self.incidence_matrix().map(f64::from);
        b.kronecker(&DMatrix::identity(self.dim, self.dim))
    }

    fn check_config(&self, x: &DVector<f64>) -> Result<(), GraphError> {
        let expected = self.num_agents * self.dim;
        if x.len() != expected {
            return Err(GraphError::Dimension {
                what: "stacked end-effector positions".into(),
                expected,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn position<'a>(&self, x: &'a DVector<f64>, agent: usize) -> DVectorView<'a, f64> {
        x.rows(agent * self.dim, self.dim)
    }

    /// Relative positions `z_k = x_tail - x_head`.
    pub fn relative_positions(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>, GraphError> {
        self.check_config(x)?;
        Ok(self
            .edges
            .iter()
            .map(|e| self.position(x, e.tail) - self.position(x, e.head))
            .collect())
    }

    fn errors_from_relative(&self, z: &[DVector<f64>]) -> EdgeErrors {
        match &self.desired {
            DesiredGeometry::SquaredDistance(d2) => EdgeErrors {
                per_edge: 1,
                values: DVector::from_iterator(
                    z.len(),
                    z.iter().zip(d2).map(|(zk, d)| zk.norm_squared() - d),
                ),
            },
            DesiredGeometry::Displacement(zs) => {
                let mut values = DVector::zeros(z.len() * self.dim);
                for (k, (zk, zsk)) in z.iter().zip(zs).enumerate() {
                    values.rows_mut(k * self.dim, self.dim).copy_from(&(zk - zsk));
                }
                EdgeErrors {
                    per_edge: self.dim,
                    values,
                }
            }
        }
    }

    pub fn edge_errors(&self, x: &DVector<f64>) -> Result<EdgeErrors, GraphError> {
        let z = self.relative_positions(x)?;
        Ok(self.errors_from_relative(&z))
    }

    /// Stacked `ê = ∇_x V` with `V = ½ Σ ‖e_k‖²`.
    pub fn formation_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, GraphError> {
        let z = self.relative_positions(x)?;
        let e = self.errors_from_relative(&z);
        let m = self.dim;
        let mut grad = DVector::zeros(self.num_agents * m);
        for (k, edge) in self.edges.iter().enumerate() {
            let contribution = match self.flavor() {
                Flavor::Distance => &z[k] * (2.0 * e.edge(k)[0]),
                Flavor::Displacement => e.edge(k).into_owned(),
            };
            let mut tail = grad.rows_mut(edge.tail * m, m);
            tail += &contribution;
            let mut head = grad.rows_mut(edge.head * m, m);
            head -= &contribution;
        }
        Ok(grad)
    }

    /// Potential `V(x) = ½ Σ_k ‖e_k(x)‖²`.
    pub fn potential(&self, x: &DVector<f64>) -> Result<f64, GraphError> {
        Ok(0.5 * self.edge_errors(x)?.stacked().norm_squared())
    }

    /// `D_z = blockdiag(z_1, …, z_|ℰ|)`, of size `m|ℰ| × |ℰ|`.
    pub fn block_diag_relative(&self, z: &[DVector<f64>]) -> DMatrix<f64> {
        let m = self.dim;
        let mut d = DMatrix::zeros(m * z.len(), z.len());
        for (k, zk) in z.iter().enumerate() {
            d.view_mut((k * m, k), (m, 1)).copy_from(zk);
        }
        d
    }

    /// Linear map `G` with `ê = G e` and `ė = Gᵀ ẋ`: `2 B̄ D_z` for distance, `B̄` for displacement.
    pub fn gradient_map(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, GraphError> {
        let z = self.relative_positions(x)?;
        Ok(self.gradient_map_from_relative(&z))
    }

    pub fn gradient_map_from_relative(&self, z: &[DVector<f64>]) -> DMatrix<f64> {
        let bbar = self.kron_incidence();
        match self.flavor() {
            Flavor::Distance => bbar * self.block_diag_relative(z) * 2.0,
            Flavor::Displacement => bbar,
        }
    }

    /// Rigidity matrix `D_zᵀ B̄ᵀ`, one row per edge.
    pub fn rigidity_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, GraphError> {
        let z = self.relative_positions(x)?;
        Ok(self.block_diag_relative(&z).transpose() * self.kron_incidence().transpose())
    }

    pub fn rigidity_rank(&self, x: &DVector<f64>) -> Result<usize, GraphError> {
        let r = self.rigidity_matrix(x)?;
        Ok(r.singular_values()
            .iter()
            .filter(|s| **s > RIGIDITY_SV_THRESHOLD)
            .count())
    }

    /// Infinitesimal rigidity at `x`; minimal rigidity additionally requires
    /// every edge to be independent.
    pub fn check_rigidity(&self, x: &DVector<f64>) -> Result<(), GraphError> {
        let needed = rigid_rank(self.num_agents, self.dim);
        let rank = self.rigidity_rank(x)?;
        if rank < needed {
            return Err(GraphError::NotRigid { rank, needed });
        }
        Ok(())
    }

    pub fn is_minimally_rigid_count(&self) -> bool {
        self.edges.len() == rigid_rank(self.num_agents, self.dim)
    }

    pub fn rigidity_spectra(&self, samples: &[DVector<f64>]) -> Result<RigiditySpectra, GraphError> {
        if samples.is_empty() {
            return Err(GraphError::EmptySamples);
        }
        let mut out = RigiditySpectra {
            lambda1: 0.0,
            gram_min: f64::INFINITY,
            lambda3: 0.0,
        };
        for x in samples {
            let g = self.gradient_map(x)?;
            let gram = g.transpose() * &g;
            let hi = max_eigenvalue(&gram);
            let lo = min_eigenvalue(&gram);
            out.lambda1 = out.lambda1.max(hi);
            out.lambda3 = out.lambda3.max(hi / 4.0);
            out.gram_min = out.gram_min.min(lo / 4.0);
        }
        Ok(out)
    }
}

/// Rank of the rigidity matrix of a generic rigid framework of `n` points in ℝ^m.
pub fn rigid_rank(n: usize, m: usize) -> usize {
    if n <= m + 1 {
        n * (n - 1) / 2
    } else {
        m * n - m * (m + 1) / 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_graph() -> FormationGraph {
        let edges = vec![
            Edge::new(0, 1),
            Edge::new(1, 2),
            Edge::new(2, 3),
            Edge::new(3, 0),
            Edge::new(0, 2),
        ];
        let reference = DVector::from_vec(vec![0.0, 0.0, 0.4, 0.0, 0.4, 0.4, 0.0, 0.4]);
        FormationGraph::from_reference(4, 2, edges, Flavor::Distance, &reference).unwrap()
    }

    #[test]
    fn square_incidence_matches_published_matrix() {
        let b = square_graph().incidence_matrix();
        let expected = DMatrix::from_row_slice(
            4,
            5,
            &[1, 0, 0, -1, 1, -1, 1, 0, 0, 0, 0, -1, 1, 0, -1, 0, 0, -1, 1, 0],
        );
        assert_eq!(b, expected);
        let ones = DVector::from_element(4, 1);
        assert_eq!(b.transpose() * ones, DVector::zeros(5));
    }

    #[test]
    fn single_edge_incidence() {
        let g = FormationGraph::new(
            2,
            2,
            vec![Edge::new(0, 1)],
            DesiredGeometry::SquaredDistance(vec![1.0]),
        )
        .unwrap();
        assert_eq!(g.incidence_matrix(), DMatrix::from_row_slice(2, 1, &[1, -1]));
    }

    #[test]
    fn distance_error_arithmetic() {
        let g = FormationGraph::new(
            2,
            2,
            vec![Edge::new(0, 1)],
            DesiredGeometry::SquaredDistance(vec![0.16]),
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.8, 0.0, 0.0, 0.0]);
        let e = g.edge_errors(&x).unwrap();
        assert!((e.edge(0)[0] - 0.48).abs() < 1e-15);
    }

    #[test]
    fn displacement_error_arithmetic() {
        let g = FormationGraph::new(
            2,
            2,
            vec![Edge::new(0, 1)],
            DesiredGeometry::Displacement(vec![DVector::from_vec(vec![0.0, 1.0])]),
        )
        .unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let e = g.edge_errors(&x).unwrap();
        assert_eq!(e.edge(0).into_owned(), DVector::from_vec(vec![1.0, -1.0]));
    }

    #[test]
    fn gradient_vanishes_on_shape() {
        let g = square_graph();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.4, 0.0, 0.4, 0.4, 0.0, 0.4]);
        assert!(g.edge_errors(&x).unwrap().max_abs() < 1e-15);
        assert!(g.formation_gradient(&x).unwrap().norm() < 1e-15);

        let single = FormationGraph::new(
            2,
            2,
            vec![Edge::new(0, 1)],
            DesiredGeometry::SquaredDistance(vec![1.0]),
        )
        .unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(single.formation_gradient(&x).unwrap(), DVector::zeros(4));
    }

    #[test]
    fn gradient_map_reproduces_gradient() {
        let g = square_graph();
        let x = DVector::from_vec(vec![0.1, -0.2, 0.7, 0.1, 0.5, 0.9, -0.2, 0.3]);
        let e = g.edge_errors(&x).unwrap();
        let via_map = g.gradient_map(&x).unwrap() * e.stacked();
        assert!((via_map - g.formation_gradient(&x).unwrap()).norm() < 1e-14);
    }

    #[test]
    fn rejects_invalid_edges() {
        let d = DesiredGeometry::SquaredDistance(vec![1.0; 3]);
        let err = FormationGraph::new(3, 2, vec![Edge::new(0, 1), Edge::new(1, 1), Edge::new(0, 2)], d.clone());
        assert!(matches!(err, Err(GraphError::SelfLoop { edge: 1 })));
        let err = FormationGraph::new(3, 2, vec![Edge::new(0, 1), Edge::new(1, 0), Edge::new(0, 2)], d.clone());
        assert!(matches!(err, Err(GraphError::DuplicateEdge { first: 0, second: 1 })));
        let err = FormationGraph::new(3, 2, vec![Edge::new(0, 1), Edge::new(1, 4), Edge::new(0, 2)], d);
        assert!(matches!(err, Err(GraphError::AgentOutOfRange { edge: 1, agent: 4, .. })));
    }

    #[test]
    fn distance_flavor_needs_enough_edges() {
        let err = FormationGraph::new(
            4,
            2,
            vec![Edge::new(0, 1), Edge::new(1, 2), Edge::new(2, 3), Edge::new(3, 0)],
            DesiredGeometry::SquaredDistance(vec![1.0; 4]),
        );
        assert!(matches!(err, Err(GraphError::TooFewEdges { needed: 5, got: 4 })));
    }

    #[test]
    fn square_is_minimally_rigid() {
        let g = square_graph();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.4, 0.0, 0.4, 0.4, 0.0, 0.4]);
        assert!(g.is_minimally_rigid_count());
        g.check_rigidity(&x).unwrap();
        let spectra = g.rigidity_spectra(&[x]).unwrap();
        assert!(spectra.gram_min > 0.0);
    }

    #[test]
    fn collinear_configuration_loses_rigidity() {
        let g = square_graph();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.4, 0.0, 0.9, 0.0, 1.3, 0.0]);
        let spectra = g.rigidity_spectra(std::slice::from_ref(&x)).unwrap();
        assert!(spectra.gram_min.abs() < 1e-12);
        assert!(g.check_rigidity(&x).is_err());
    }

    #[test]
    fn zero_relative_positions_give_zero_lambda1() {
        let g = square_graph();
        let spectra = g.rigidity_spectra(&[DVector::zeros(8)]).unwrap();
        assert_eq!(spectra.lambda1, 0.0);
        assert!(g.rigidity_spectra(&[]).is_err());
    }
}
