use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ArmModel, GravityMode, STANDARD_GRAVITY};
use crate::error::ModelError;

/// Physical parameters of a three-joint elbow arm (base yaw, shoulder pitch,
/// elbow pitch) whose end-effector moves in 3-D.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialParams {
    /// Height of the shoulder joint above the base, m.
    pub shoulder_height: f64,
    /// Upper-arm and forearm lengths, m. These are the kinematic parameters `a`.
    pub length: [f64; 2],
    /// Joint-to-centre-of-mass distances, m.
    pub com: [f64; 2],
    pub mass: [f64; 2],
    /// Transverse link inertias about the centres of mass, kg·m².
    pub inertia: [f64; 2],
    /// Inertia of the rotating base about the yaw axis, kg·m².
    pub base_inertia: f64,
    pub gravity: GravityMode,
    pub g: f64,
}

impl SpatialParams {
    /// Two uniform 0.5 m rods on a 0.3 m pedestal, with gravity.
    pub fn compact() -> Self {
        let mass = [1.0, 0.8];
        let length = [0.5, 0.5];
        Self {
            shoulder_height: 0.3,
            length,
            com: [0.25, 0.25],
            mass,
            inertia: [
                mass[0] * length[0] * length[0] / 12.0,
                mass[1] * length[1] * length[1] / 12.0,
            ],
            base_inertia: 0.05,
            gravity: GravityMode::Vertical,
            g: STANDARD_GRAVITY,
        }
    }

    pub fn with_gravity(mut self, gravity: GravityMode) -> Self {
        self.gravity = gravity;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let vals = [
            self.shoulder_height,
            self.length[0],
            self.length[1],
            self.com[0],
            self.com[1],
            self.mass[0],
            self.mass[1],
            self.inertia[0],
            self.inertia[1],
            self.base_inertia,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Parameter("non-finite spatial parameter".into()));
        }
        if self.mass.iter().chain(&self.length).any(|&v| v <= 0.0) {
            return Err(ModelError::Parameter(
                "link masses and lengths must be positive".into(),
            ));
        }
        if self.base_inertia <= 0.0 {
            // Keeps H positive definite when the whole arm points straight up.
            return Err(ModelError::Parameter("base inertia must be positive".into()));
        }
        if self.inertia.iter().chain(&self.com).any(|&v| v < 0.0) {
            return Err(ModelError::Parameter(
                "link inertias and centre-of-mass offsets must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Yaw–pitch–pitch arm. `q₂` is the shoulder elevation above the horizontal
/// plane and `q₃` the elbow angle relative to the upper arm.
#[derive(Debug, Clone)]
pub struct SpatialElbow {
    params: SpatialParams,
}

/// Horizontal reach `r`, height `h` and their partials in `(q₂, q₃)` for a
/// point at distances `d1` along link 1 and `d2` along link 2.
struct Planar {
    r: f64,
    h: f64,
    dr: [f64; 2],
    dh: [f64; 2],
}

fn planar_point(q: &DVector<f64>, d1: f64, d2: f64) -> Planar {
    let (s2, c2) = q[1].sin_cos();
    let (s23, c23) = (q[1] + q[2]).sin_cos();
    Planar {
        r: d1 * c2 + d2 * c23,
        h: d1 * s2 + d2 * s23,
        dr: [-d1 * s2 - d2 * s23, -d2 * s23],
        dh: [d1 * c2 + d2 * c23, d2 * c23],
    }
}

/// 3×3 Jacobian of a point on the arm described by [`Planar`].
fn point_jacobian(q: &DVector<f64>, p: &Planar) -> DMatrix<f64> {
    let (s1, c1) = q[0].sin_cos();
    DMatrix::from_row_slice(
        3,
        3,
        &[
            -p.r * s1,
            p.dr[0] * c1,
            p.dr[1] * c1,
            p.r * c1,
            p.dr[0] * s1,
            p.dr[1] * s1,
            0.0,
            p.dh[0],
            p.dh[1],
        ],
    )
}

impl SpatialElbow {
    pub fn new(params: SpatialParams) -> Self {
        Self { params }
    }

    pub fn try_new(params: SpatialParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &SpatialParams {
        &self.params
    }
}

impl ArmModel for SpatialElbow {
    fn dof(&self) -> usize {
        3
    }

    fn task_dim(&self) -> usize {
        3
    }

    fn kinematic_params(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.params.length)
    }

    fn gravity_mode(&self) -> GravityMode {
        self.params.gravity
    }

    fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let p = &self.params;
        let j1 = point_jacobian(q, &planar_point(q, p.com[0], 0.0));
        let j2 = point_jacobian(q, &planar_point(q, p.length[0], p.com[1]));
        let mut h = j1.transpose() * &j1 * p.mass[0] + j2.transpose() * &j2 * p.mass[1];
        let c2 = q[1].cos();
        let c23 = (q[1] + q[2]).cos();
        // Rotational terms: yaw rate projects onto each rod's transverse axis
        // through cos of its elevation, pitch rates act directly.
        h[(0, 0)] += p.base_inertia + p.inertia[0] * c2 * c2 + p.inertia[1] * c23 * c23;
        h[(1, 1)] += p.inertia[0] + p.inertia[1];
        h[(1, 2)] += p.inertia[1];
        h[(2, 1)] += p.inertia[1];
        h[(2, 2)] += p.inertia[1];
        h
    }

    fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        match self.params.gravity {
            GravityMode::Horizontal => DVector::zeros(3),
            GravityMode::Vertical => {
                let p = &self.params;
                let c1 = planar_point(q, p.com[0], 0.0);
                let c2 = planar_point(q, p.length[0], p.com[1]);
                DVector::from_vec(vec![
                    0.0,
                    p.g * (p.mass[0] * c1.dh[0] + p.mass[1] * c2.dh[0]),
                    p.g * p.mass[1] * c2.dh[1],
                ])
            }
        }
    }

    fn forward_kinematics(&self, q: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let pt = planar_point(q, p.length[0], p.length[1]);
        let (s1, c1) = q[0].sin_cos();
        DVector::from_vec(vec![pt.r * c1, pt.r * s1, p.shoulder_height + pt.h])
    }

    fn jacobian(&self, q: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
        point_jacobian(q, &planar_point(q, a[0], a[1]))
    }

    fn with_mass_scale(&self, scale: f64) -> Option<Arc<dyn ArmModel>> {
        let mut params = self.params.clone();
        for k in 0..2 {
            params.mass[k] *= scale;
            params.inertia[k] *= scale;
        }
        params.base_inertia *= scale;
        Some(Arc::new(SpatialElbow::new(params)))
    }
}
