use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ArmModel, GravityMode};

type MatFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type VecFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type PairMatFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Arm assembled from user-supplied callables.
///
/// Only `H`, `G`, `h` and `J(q, a)` are mandatory. Coriolis falls back to
/// the Christoffel construction and the regressor to the linear-in-`a`
/// reading of `J`; override them with [`CustomArm::with_coriolis`] and
/// [`CustomArm::with_regressor`] when closed forms are available.
#[derive(Clone)]
pub struct CustomArm {
    dof: usize,
    task_dim: usize,
    params: DVector<f64>,
    gravity_mode: GravityMode,
    inertia: MatFn,
    gravity: VecFn,
    fk: VecFn,
    jacobian: PairMatFn,
    coriolis: Option<PairMatFn>,
    regressor: Option<PairMatFn>,
}

impl fmt::Debug for CustomArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomArm")
            .field("dof", &self.dof)
            .field("task_dim", &self.task_dim)
            .field("params", &self.params.as_slice())
            .finish_non_exhaustive()
    }
}

impl CustomArm {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dof: usize,
        task_dim: usize,
        params: DVector<f64>,
        gravity_mode: GravityMode,
        inertia: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        gravity: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        fk: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dof,
            task_dim,
            params,
            gravity_mode,
            inertia: Arc::new(inertia),
            gravity: Arc::new(gravity),
            fk: Arc::new(fk),
            jacobian: Arc::new(jacobian),
            coriolis: None,
            regressor: None,
        }
    }

    /// `C(q, q̇)`. The caller is responsible for `Ḣ − 2C` being skew.
    pub fn with_coriolis(
        mut self,
        c: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.coriolis = Some(Arc::new(c));
        self
    }

    /// `Z(q, ζ)` in the base frame.
    pub fn with_regressor(
        mut self,
        z: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.regressor = Some(Arc::new(z));
        self
    }
}

impl ArmModel for CustomArm {
    fn dof(&self) -> usize {
        self.dof
    }

    fn task_dim(&self) -> usize {
        self.task_dim
    }

    fn kinematic_params(&self) -> DVector<f64> {
        self.params.clone()
    }

    fn gravity_mode(&self) -> GravityMode {
        self.gravity_mode
    }

    fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.inertia)(q)
    }

    fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.gravity)(q)
    }

    fn forward_kinematics(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.fk)(q)
    }

    fn jacobian(&self, q: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(q, a)
    }

    fn coriolis(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64> {
        match &self.coriolis {
            Some(c) => c(q, qdot),
            None => super::christoffel_coriolis(&self.inertia_partials(q), qdot),
        }
    }

    fn regressor(&self, q: &DVector<f64>, zeta: &DVector<f64>) -> DMatrix<f64> {
        match &self.regressor {
            Some(z) => z(q, zeta),
            None => {
                let p = self.params.len();
                let mut out = DMatrix::zeros(self.dof, p);
                for k in 0..p {
                    let mut unit = DVector::zeros(p);
                    unit[k] = 1.0;
                    out.set_column(k, &(self.jacobian(q, &unit).transpose() * zeta));
                }
                out
            }
        }
    }
}
