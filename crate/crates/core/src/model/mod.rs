//! Per-agent plant models.
//!
//! [`ArmModel`] is the extension point: an arm supplies its inertia,
//! gravity torque, forward kinematics and Jacobian in its own base frame.
//! Coriolis and the kinematic regressor have default implementations that
//! are exact for any arm whose Jacobian is linear in the kinematic
//! parameters. [`ManipulatorModel`] attaches a base pose and maps
//! everything into the global frame.

mod custom;
mod planar;
mod spatial;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use custom::CustomArm;
pub use planar::{PlanarParams, PlanarTwoLink};
pub use spatial::{SpatialElbow, SpatialParams};

use crate::error::ModelError;
use crate::linalg::min_singular_value;

/// Default floor on `σ_min(J)` below which a singularity warning is raised.
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GravityMode {
    /// Arm moves in a horizontal plane, `G ≡ 0`.
    Horizontal,
    /// Gravity acts along the negative last axis of the base frame.
    Vertical,
}

/// Joint position and velocity of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Self {
        Self { q, qdot }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qdot: DVector::zeros(n),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }
}

/// Inertia, Coriolis and gravity terms at one joint state.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    pub inertia: DMatrix<f64>,
    pub coriolis: DMatrix<f64>,
    pub gravity: DVector<f64>,
}

/// Rigid arm expressed in its own base frame.
pub trait ArmModel: Send + Sync + fmt::Debug {
    fn dof(&self) -> usize;
    fn task_dim(&self) -> usize;
    /// True kinematic parameter vector `a`.
    fn kinematic_params(&self) -> DVector<f64>;
    fn gravity_mode(&self) -> GravityMode;

    fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64>;
    fn gravity(&self, q: &DVector<f64>) -> DVector<f64>;
    /// End-effector position in the base frame, evaluated with the true parameters.
    fn forward_kinematics(&self, q: &DVector<f64>) -> DVector<f64>;
    /// Base-frame Jacobian evaluated with the supplied kinematic parameters.
    fn jacobian(&self, q: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64>;

    fn num_kinematic_params(&self) -> usize {
        self.kinematic_params().len()
    }

    /// `∂H/∂q_j` for every joint. Central differences unless overridden.
    fn inertia_partials(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        const STEP: f64 = 1e-5;
        (0..self.dof())
            .map(|j| {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[j] += STEP;
                qm[j] -= STEP;
                (self.inertia(&qp) - self.inertia(&qm)) / (2.0 * STEP)
            })
            .collect()
    }

    /// Coriolis matrix from the Christoffel symbols of `H`, so that
    /// `Ḣ = C + Cᵀ` holds identically.
    fn coriolis(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64> {
        christoffel_coriolis(&self.inertia_partials(q), qdot)
    }

    /// `Z(q, ζ)` with `J(q, a)ᵀ ζ = Z(q, ζ) a`. The default reads the columns off
    /// `J(q, e_k)ᵀ ζ`, which is exact whenever `J` is linear in `a`.
    fn regressor(&self, q: &DVector<f64>, zeta: &DVector<f64>) -> DMatrix<f64> {
        let p = self.num_kinematic_params();
        let mut z = DMatrix::zeros(self.dof(), p);
        for k in 0..p {
            let mut unit = DVector::zeros(p);
            unit[k] = 1.0;
            z.set_column(k, &(self.jacobian(q, &unit).transpose() * zeta));
        }
        z
    }

    /// Same arm with every link mass (and link inertia) scaled, used as a
    /// deliberately wrong nominal model. `None` if the arm cannot rescale.
    fn with_mass_scale(&self, _scale: f64) -> Option<Arc<dyn ArmModel>> {
        None
    }
}

/// `C_kj = Σ_i ½(∂H_kj/∂q_i + ∂H_ki/∂q_j − ∂H_ij/∂q_k) q̇_i`.
pub fn christoffel_coriolis(partials: &[DMatrix<f64>], qdot: &DVector<f64>) -> DMatrix<f64> {
    let n = qdot.len();
    let mut c = DMatrix::zeros(n, n);
    for k in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += 0.5
                    * (partials[i][(k, j)] + partials[j][(k, i)] - partials[k][(i, j)])
                    * qdot[i];
            }
            c[(k, j)] = acc;
        }
    }
    c
}

/// An arm mounted at a base pose in the global frame.
#[derive(Debug, Clone)]
pub struct ManipulatorModel {
    arm: Arc<dyn ArmModel>,
    base_position: DVector<f64>,
    base_rotation: DMatrix<f64>,
}

impl ManipulatorModel {
    pub fn new(
        arm: Arc<dyn ArmModel>,
        base_position: DVector<f64>,
        base_rotation: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let m = arm.task_dim();
        if base_position.len() != m {
            return Err(ModelError::Dimension {
                what: "base position".into(),
                expected: m,
                got: base_position.len(),
            });
        }
        if base_rotation.shape() != (m, m) {
            return Err(ModelError::Dimension {
                what: "base rotation".into(),
                expected: m,
                got: base_rotation.nrows(),
            });
        }
        let defect = (base_rotation.transpose() * &base_rotation - DMatrix::identity(m, m)).norm();
        if defect > 1e-12 || base_rotation.determinant() < 0.0 {
            return Err(ModelError::NotOrthonormal(defect));
        }
        Ok(Self {
            arm,
            base_position,
            base_rotation,
        })
    }

    /// Base at the origin with identity rotation.
    pub fn at_origin(arm: Arc<dyn ArmModel>) -> Self {
        let m = arm.task_dim();
        Self {
            arm,
            base_position: DVector::zeros(m),
            base_rotation: DMatrix::identity(m, m),
        }
    }

    pub fn arm(&self) -> &Arc<dyn ArmModel> {
        &self.arm
    }

    pub fn dof(&self) -> usize {
        self.arm.dof()
    }

    pub fn task_dim(&self) -> usize {
        self.arm.task_dim()
    }

    pub fn num_kinematic_params(&self) -> usize {
        self.arm.num_kinematic_params()
    }

    pub fn kinematic_params(&self) -> DVector<f64> {
        self.arm.kinematic_params()
    }

    pub fn base_position(&self) -> &DVector<f64> {
        &self.base_position
    }

    pub fn base_rotation(&self) -> &DMatrix<f64> {
        &self.base_rotation
    }

    pub fn has_identity_rotation(&self) -> bool {
        let m = self.task_dim();
        (&self.base_rotation - DMatrix::<f64>::identity(m, m)).norm() < 1e-15
    }

    /// Same arm, different base pose.
    pub fn with_base(&self, position: DVector<f64>, rotation: DMatrix<f64>) -> Result<Self, ModelError> {
        Self::new(self.arm.clone(), position, rotation)
    }

    pub fn dynamics_terms(&self, state: &JointState) -> DynamicsTerms {
        DynamicsTerms {
            inertia: self.arm.inertia(&state.q),
            coriolis: self.arm.coriolis(&state.q, &state.qdot),
            gravity: self.arm.gravity(&state.q),
        }
    }

    pub fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.arm.inertia(q)
    }

    pub fn coriolis(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64> {
        self.arm.coriolis(q, qdot)
    }

    pub fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        self.arm.gravity(q)
    }

    /// Global end-effector position `R h(q) + x₀`.
    pub fn forward_kinematics(&self, q: &DVector<f64>) -> DVector<f64> {
        &self.base_rotation * self.arm.forward_kinematics(q) + &self.base_position
    }

    /// End-effector position in the base frame.
    pub fn local_forward_kinematics(&self, q: &DVector<f64>) -> DVector<f64> {
        self.arm.forward_kinematics(q)
    }

    /// Global-frame Jacobian `R J_local(q, a_used)`.
    pub fn jacobian(&self, q: &DVector<f64>, a_used: &DVector<f64>) -> DMatrix<f64> {
        &self.base_rotation * self.arm.jacobian(q, a_used)
    }

    pub fn local_jacobian(&self, q: &DVector<f64>, a_used: &DVector<f64>) -> DMatrix<f64> {
        self.arm.jacobian(q, a_used)
    }

    /// Jacobian with the true kinematic parameters.
    pub fn true_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.jacobian(q, &self.arm.kinematic_params())
    }

    /// Global-frame regressor: `J(q, a)ᵀ ζ = Z(q, ζ) a` with `ζ` in the global frame.
    pub fn kinematic_regressor(&self, q: &DVector<f64>, zeta: &DVector<f64>) -> DMatrix<f64> {
        self.arm.regressor(q, &self.to_local_frame(zeta))
    }

    /// `σ_min(J(q, a))`, zero exactly at kinematic singularities.
    pub fn singularity_distance(&self, q: &DVector<f64>) -> f64 {
        min_singular_value(&self.arm.jacobian(q, &self.arm.kinematic_params()))
    }

    /// Rotates a free vector from the global frame into the base frame.
    pub fn to_local_frame(&self, v: &DVector<f64>) -> DVector<f64> {
        self.base_rotation.transpose() * v
    }

    /// Rotates a free vector from the base frame into the global frame.
    pub fn from_local_frame(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.base_rotation * v
    }

    /// Expresses a global point in the base frame.
    pub fn point_to_local(&self, x: &DVector<f64>) -> DVector<f64> {
        self.base_rotation.transpose() * (x - &self.base_position)
    }

    pub fn point_from_local(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.base_rotation * x + &self.base_position
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rotation_matrix;

    fn planar_at(base: [f64; 2], angle: f64) -> ManipulatorModel {
        ManipulatorModel::new(
            Arc::new(PlanarTwoLink::new(PlanarParams::table_one())),
            DVector::from_vec(base.to_vec()),
            rotation_matrix(2, &[angle]),
        )
        .unwrap()
    }

    #[test]
    fn identity_rotation_is_identity_map() {
        let model = planar_at([0.0, 0.0], 0.0);
        let v = DVector::from_vec(vec![0.3, -1.2]);
        assert_eq!(model.to_local_frame(&v), v);
        assert_eq!(model.from_local_frame(&v), v);
    }

    #[test]
    fn frame_round_trip() {
        let model = planar_at([1.0, 2.0], 0.7);
        let v = DVector::from_vec(vec![0.3, -1.2]);
        assert!((model.from_local_frame(&model.to_local_frame(&v)) - &v).norm() < 1e-12);
        assert!((model.point_from_local(&model.point_to_local(&v)) - &v).norm() < 1e-12);
        let r = model.base_rotation();
        assert!((r.transpose() * r - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn rotation_thirty_degrees() {
        let model = planar_at([0.0, 0.0], 30f64.to_radians());
        let v = model.from_local_frame(&DVector::from_vec(vec![1.0, 0.0]));
        assert!((v[0] - 30f64.to_radians().cos()).abs() < 1e-15);
        assert!((v[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn base_shift_is_additive() {
        let q = DVector::from_vec(vec![0.4, 1.1]);
        let a = planar_at([0.0, 0.0], 0.0).forward_kinematics(&q);
        let b = planar_at([6.0, 0.0], 0.0).forward_kinematics(&q);
        assert_eq!(b - a, DVector::from_vec(vec![6.0, 0.0]));
    }

    #[test]
    fn rejects_bad_rotation() {
        let arm: Arc<dyn ArmModel> = Arc::new(PlanarTwoLink::new(PlanarParams::table_one()));
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(
            ManipulatorModel::new(arm.clone(), DVector::zeros(2), r),
            Err(ModelError::NotOrthonormal(_))
        ));
        let reflection = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(ManipulatorModel::new(arm, DVector::zeros(2), reflection).is_err());
    }

    #[test]
    fn global_regressor_matches_rotated_jacobian() {
        let model = planar_at([2.0, -1.0], -0.5);
        let q = DVector::from_vec(vec![0.3, 1.2]);
        let zeta = DVector::from_vec(vec![0.7, -0.4]);
        let a = DVector::from_vec(vec![1.9, 2.3]);
        let lhs = model.jacobian(&q, &a).transpose() * &zeta;
        let rhs = model.kinematic_regressor(&q, &zeta) * &a;
        assert!((lhs - rhs).norm() < 1e-12);
    }
}
