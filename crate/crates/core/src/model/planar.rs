use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ArmModel, GravityMode, STANDARD_GRAVITY};
use crate::error::ModelError;

/// Physical parameters of a planar two-link arm with revolute joints.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarParams {
    /// Link masses, kg.
    pub mass: [f64; 2],
    /// Link inertias about their centres of mass, kg·m².
    pub inertia: [f64; 2],
    /// Link lengths, m. These are the kinematic parameters `a`.
    pub length: [f64; 2],
    /// Distance from each joint to its link's centre of mass, m.
    pub com: [f64; 2],
    pub gravity: GravityMode,
    pub g: f64,
}

impl PlanarParams {
    /// Two uniform 1.5 m rods of 1.2 kg and 1.0 kg, horizontal plane.
    pub fn table_one() -> Self {
        Self {
            mass: [1.2, 1.0],
            inertia: [0.225, 0.1875],
            length: [1.5, 1.5],
            com: [0.75, 0.75],
            gravity: GravityMode::Horizontal,
            g: STANDARD_GRAVITY,
        }
    }

    pub fn with_gravity(mut self, gravity: GravityMode) -> Self {
        self.gravity = gravity;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = self
            .mass
            .iter()
            .chain(&self.inertia)
            .chain(&self.length)
            .chain(&self.com);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(ModelError::Parameter("non-finite planar parameter".into()));
        }
        if self.mass.iter().chain(&self.length).any(|&v| v <= 0.0) {
            return Err(ModelError::Parameter(
                "link masses and lengths must be positive".into(),
            ));
        }
        if self.inertia.iter().chain(&self.com).any(|&v| v < 0.0) {
            return Err(ModelError::Parameter(
                "link inertias and centre-of-mass offsets must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Planar two-link arm. Joint 1 is at the base, joint 2 at the elbow;
/// `q₂` is measured relative to link 1.
#[derive(Debug, Clone)]
pub struct PlanarTwoLink {
    params: PlanarParams,
}

impl PlanarTwoLink {
    pub fn new(params: PlanarParams) -> Self {
        Self { params }
    }

    pub fn try_new(params: PlanarParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &PlanarParams {
        &self.params
    }

    /// Constant and `cos q₂` coefficients of `H`: `(h11, h11c, h12, h12c, h22)`.
    fn inertia_coefficients(&self) -> (f64, f64, f64, f64, f64) {
        let p = &self.params;
        let [m1, m2] = p.mass;
        let [i1, i2] = p.inertia;
        let l1 = p.length[0];
        let [lc1, lc2] = p.com;
        let h22 = m2 * lc2 * lc2 + i2;
        let h11 = m1 * lc1 * lc1 + i1 + m2 * l1 * l1 + h22;
        let cross = m2 * l1 * lc2;
        (h11, 2.0 * cross, h22, cross, h22)
    }
}

impl ArmModel for PlanarTwoLink {
    fn dof(&self) -> usize {
        2
    }

    fn task_dim(&self) -> usize {
        2
    }

    fn kinematic_params(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.params.length)
    }

    fn gravity_mode(&self) -> GravityMode {
        self.params.gravity
    }

    fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let (h11, h11c, h12, h12c, h22) = self.inertia_coefficients();
        let c2 = q[1].cos();
        let off = h12 + h12c * c2;
        DMatrix::from_row_slice(2, 2, &[h11 + h11c * c2, off, off, h22])
    }

    fn inertia_partials(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let (_, h11c, _, h12c, _) = self.inertia_coefficients();
        let s2 = q[1].sin();
        let d12 = -h12c * s2;
        vec![
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[-h11c * s2, d12, d12, 0.0]),
        ]
    }

    fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        match self.params.gravity {
            GravityMode::Horizontal => DVector::zeros(2),
            GravityMode::Vertical => {
                let p = &self.params;
                let [m1, m2] = p.mass;
                let [lc1, lc2] = p.com;
                let c1 = q[0].cos();
                let c12 = (q[0] + q[1]).cos();
                let g2 = m2 * lc2 * c12;
                DVector::from_vec(vec![
                    p.g * (m1 * lc1 * c1 + m2 * p.length[0] * c1 + g2),
                    p.g * g2,
                ])
            }
        }
    }

    fn forward_kinematics(&self, q: &DVector<f64>) -> DVector<f64> {
        let [l1, l2] = self.params.length;
        let q12 = q[0] + q[1];
        DVector::from_vec(vec![
            l1 * q[0].cos() + l2 * q12.cos(),
            l1 * q[0].sin() + l2 * q12.sin(),
        ])
    }

    fn jacobian(&self, q: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
        let (l1, l2) = (a[0], a[1]);
        let (s1, c1) = q[0].sin_cos();
        let (s12, c12) = (q[0] + q[1]).sin_cos();
        DMatrix::from_row_slice(
            2,
            2,
            &[
                -l1 * s1 - l2 * s12,
                -l2 * s12,
                l1 * c1 + l2 * c12,
                l2 * c12,
            ],
        )
    }

    fn regressor(&self, q: &DVector<f64>, zeta: &DVector<f64>) -> DMatrix<f64> {
        let (s1, c1) = q[0].sin_cos();
        let (s12, c12) = (q[0] + q[1]).sin_cos();
        let w1 = -s1 * zeta[0] + c1 * zeta[1];
        let w12 = -s12 * zeta[0] + c12 * zeta[1];
        DMatrix::from_row_slice(2, 2, &[w1, w12, 0.0, w12])
    }

    fn with_mass_scale(&self, scale: f64) -> Option<Arc<dyn ArmModel>> {
        let mut params = self.params.clone();
        for k in 0..2 {
            params.mass[k] *= scale;
            params.inertia[k] *= scale;
        }
        Some(Arc::new(PlanarTwoLink::new(params)))
    }
}
