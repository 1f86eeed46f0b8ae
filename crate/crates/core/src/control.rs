//! Distributed control laws.
//!
//! Every law consumes only what agent `i` can measure: its own joint state,
//! its own compensator/estimator state, and the gradient block `ê_i`, which
//! is a function of the relative positions to its neighbours.

use nalgebra::DVector;

use crate::error::ControlError;
use crate::graph::{DesiredGeometry, FormationGraph};
use crate::model::{JointState, ManipulatorModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerVariant {
    /// True kinematic and dynamic parameters, exact gravity compensation.
    Exact,
    /// Fixed nominal Jacobian plus integral compensator.
    Approx,
    /// Adaptive Jacobian plus integral compensator.
    Adaptive,
    /// Nominal Jacobian with gravity compensation from a nominal model and
    /// no compensator. Diagnostic only.
    Naive,
}

impl ControllerVariant {
    pub fn name(self) -> &'static str {
        match self {
            ControllerVariant::Exact => "exact",
            ControllerVariant::Approx => "approx",
            ControllerVariant::Adaptive => "adaptive",
            ControllerVariant::Naive => "naive",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "exact" => Some(ControllerVariant::Exact),
            "approx" => Some(ControllerVariant::Approx),
            "adaptive" => Some(ControllerVariant::Adaptive),
            "naive" => Some(ControllerVariant::Naive),
            _ => None,
        }
    }

    pub fn uses_compensator(self) -> bool {
        matches!(self, ControllerVariant::Approx | ControllerVariant::Adaptive)
    }

    pub fn uses_estimate(self) -> bool {
        self == ControllerVariant::Adaptive
    }
}

/// Scalar gains shared by all agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
    pub alpha: f64,
}

impl Gains {
    pub fn new(kp: f64, kd: f64, ki: f64, alpha: f64) -> Self {
        Self { kp, kd, ki, alpha }
    }

    pub fn validate(&self, variant: ControllerVariant) -> Result<(), ControlError> {
        let finite = [self.kp, self.kd, self.ki, self.alpha]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(ControlError::Gain("gains must be finite".into()));
        }
        if self.kp <= 0.0 {
            return Err(ControlError::Gain(format!("K_P must be positive, got {}", self.kp)));
        }
        if self.kd <= 0.0 {
            return Err(ControlError::Gain(format!("K_D must be positive, got {}", self.kd)));
        }
        if self.ki < 0.0 {
            return Err(ControlError::Gain(format!("K_I must be non-negative, got {}", self.ki)));
        }
        if variant == ControllerVariant::Adaptive && self.alpha <= 0.0 {
            return Err(ControlError::Gain(format!(
                "alpha must be positive for the adaptive law, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// `Λ = K_D⁻¹K_P` of the PID reading.
    pub fn lambda(&self) -> f64 {
        self.kp / self.kd
    }

    /// Integral gain `K_I K_D` of the PID reading.
    pub fn pid_integral_gain(&self) -> f64 {
        self.ki * self.kd
    }
}

/// Torque and internal-state derivatives produced by one law evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub torque: DVector<f64>,
    pub eta_dot: Option<DVector<f64>>,
    pub a_hat_dot: Option<DVector<f64>>,
}

/// `u = −K_P Jᵀ(q, a) ê − K_D ξ + G(q)`.
pub fn control_exact(
    model: &ManipulatorModel,
    state: &JointState,
    e_hat: &DVector<f64>,
    gains: &Gains,
) -> DVector<f64> {
    let j = model.true_jacobian(&state.q);
    -gains.kp * j.transpose() * e_hat - gains.kd * &state.qdot + model.gravity(&state.q)
}

fn compensated_torque(
    model: &ManipulatorModel,
    state: &JointState,
    e_hat: &DVector<f64>,
    eta: &DVector<f64>,
    a_hat: &DVector<f64>,
    gains: &Gains,
) -> DVector<f64> {
    let j = model.jacobian(&state.q, a_hat);
    -gains.kp * j.transpose() * e_hat - gains.kd * &state.qdot + gains.ki * eta
}

/// `u = −K_P Jᵀ(q, â) ê − K_D ξ + K_I η` with `η̇ = −K_I η + u`.
pub fn control_approx(
    model: &ManipulatorModel,
    state: &JointState,
    e_hat: &DVector<f64>,
    eta: &DVector<f64>,
    a_hat: &DVector<f64>,
    gains: &Gains,
) -> (DVector<f64>, DVector<f64>) {
    let u = compensated_torque(model, state, e_hat, eta, a_hat, gains);
    let eta_dot = -gains.ki * eta + &u;
    (u, eta_dot)
}

/// Adaptive-Jacobian law: the torque and compensator of [`control_approx`]
/// evaluated at the current estimate, plus `â̇ = −Zᵀ(q, ê)[α Z(q, ê) â − ξ]`.
pub fn control_adaptive(
    model: &ManipulatorModel,
    state: &JointState,
    e_hat: &DVector<f64>,
    eta: &DVector<f64>,
    a_hat: &DVector<f64>,
    gains: &Gains,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let (u, eta_dot) = control_approx(model, state, e_hat, eta, a_hat, gains);
    let a_hat_dot = adaptation_rate(model, state, e_hat, a_hat, gains.alpha);
    (u, eta_dot, a_hat_dot)
}

/// `â̇ = −Zᵀ(q, ê)[α Z(q, ê) â − ξ]`. Exactly zero when `ê = 0`.
pub fn adaptation_rate(
    model: &ManipulatorModel,
    state: &JointState,
    e_hat: &DVector<f64>,
    a_hat: &DVector<f64>,
    alpha: f64,
) -> DVector<f64> {
    let z = model.kinematic_regressor(&state.q, e_hat);
    -(z.transpose() * (alpha * &z * a_hat - &state.qdot))
}

/// `u = −K_P Jᵀ(q, â) ê − K_D ξ + Ĝ(q)` with `Ĝ` from a nominal model.
pub fn control_naive(
    model: &ManipulatorModel,
    nominal: &ManipulatorModel,
    state: &JointState,
    e_hat: &DVector<f64>,
    a_hat: &DVector<f64>,
    gains: &Gains,
) -> DVector<f64> {
    let j = model.jacobian(&state.q, a_hat);
    -gains.kp * j.transpose() * e_hat - gains.kd * &state.qdot + nominal.gravity(&state.q)
}

/// Filtered output `y = Λ Jᵀ(q, â) ê + ξ` of the PID reading.
pub fn pid_output(
    model: &ManipulatorModel,
    state: &JointState,
    e_hat: &DVector<f64>,
    a_hat: &DVector<f64>,
    gains: &Gains,
) -> DVector<f64> {
    let j = model.jacobian(&state.q, a_hat);
    gains.lambda() * j.transpose() * e_hat + &state.qdot
}

/// PID form `u = −K_P Jᵀ(q, â) ê − K_D ξ − K_I K_D ∫₀ᵗ y ds`, given the
/// running integral of [`pid_output`]. Matches the integrator form whenever
/// `η(0) = 0`, since then `η = −K_D ∫ y`.
pub fn pid_equivalent_form(
    model: &ManipulatorModel,
    state: &JointState,
    e_hat: &DVector<f64>,
    a_hat: &DVector<f64>,
    y_integral: &DVector<f64>,
    gains: &Gains,
) -> DVector<f64> {
    let j = model.jacobian(&state.q, a_hat);
    -gains.kp * j.transpose() * e_hat
        - gains.kd * &state.qdot
        - gains.pid_integral_gain() * y_integral
}

/// Evaluates the configured law. `nominal` is only consulted by the naive law.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    variant: ControllerVariant,
    model: &ManipulatorModel,
    nominal: Option<&ManipulatorModel>,
    state: &JointState,
    e_hat: &DVector<f64>,
    eta: Option<&DVector<f64>>,
    a_hat: Option<&DVector<f64>>,
    gains: &Gains,
) -> Result<ControlOutput, ControlError> {
    match variant {
        ControllerVariant::Exact => Ok(ControlOutput {
            torque: control_exact(model, state, e_hat, gains),
            eta_dot: None,
            a_hat_dot: None,
        }),
        ControllerVariant::Approx => {
            let eta = eta.ok_or(ControlError::MissingState("eta"))?;
            let a_hat = a_hat.ok_or(ControlError::MissingState("a_hat"))?;
            let (u, eta_dot) = control_approx(model, state, e_hat, eta, a_hat, gains);
            Ok(ControlOutput {
                torque: u,
                eta_dot: Some(eta_dot),
                a_hat_dot: None,
            })
        }
        ControllerVariant::Adaptive => {
            let eta = eta.ok_or(ControlError::MissingState("eta"))?;
            let a_hat = a_hat.ok_or(ControlError::MissingState("a_hat"))?;
            let (u, eta_dot, a_dot) = control_adaptive(model, state, e_hat, eta, a_hat, gains);
            Ok(ControlOutput {
                torque: u,
                eta_dot: Some(eta_dot),
                a_hat_dot: Some(a_dot),
            })
        }
        ControllerVariant::Naive => {
            let a_hat = a_hat.ok_or(ControlError::MissingState("a_hat"))?;
            let nominal = nominal.ok_or(ControlError::MissingState("nominal model"))?;
            Ok(ControlOutput {
                torque: control_naive(model, nominal, state, e_hat, a_hat, gains),
                eta_dot: None,
                a_hat_dot: None,
            })
        }
    }
}

/// Relative measurement of neighbour `j` taken by agent `i` in its own base frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMeasurement {
    /// `z_ij^i = R_iᵀ(x_i − x_j)`.
    pub relative: DVector<f64>,
    /// Desired squared distance `‖z*_ij‖²`.
    pub desired_sq: f64,
}

/// Gradient block `ê_i^i = 2 Σ_j e_ij z_ij^i` from local measurements.
pub fn local_gradient(measurements: &[LocalMeasurement], dim: usize) -> DVector<f64> {
    let mut g = DVector::zeros(dim);
    for m in measurements {
        let e = m.relative.norm_squared() - m.desired_sq;
        g += 2.0 * e * &m.relative;
    }
    g
}

/// Evaluates the law entirely in agent `i`'s base frame from relative
/// measurements. Only meaningful for distance formations, where the edge
/// scalars are rotation invariant.
#[allow(clippy::too_many_arguments)]
pub fn local_frame_control(
    variant: ControllerVariant,
    model: &ManipulatorModel,
    nominal: Option<&ManipulatorModel>,
    measurements: &[LocalMeasurement],
    state: &JointState,
    eta: Option<&DVector<f64>>,
    a_hat: Option<&DVector<f64>>,
    gains: &Gains,
) -> Result<ControlOutput, ControlError> {
    let e_local = local_gradient(measurements, model.task_dim());
    // A base-frame-only model: same arm, identity pose.
    let local = ManipulatorModel::at_origin(model.arm().clone());
    let nominal_local = nominal.map(|n| ManipulatorModel::at_origin(n.arm().clone()));
    evaluate(
        variant,
        &local,
        nominal_local.as_ref(),
        state,
        &e_local,
        eta,
        a_hat,
        gains,
    )
}

/// Builds the local measurements of `agent` from global positions.
pub fn measure_local(
    graph: &FormationGraph,
    model: &ManipulatorModel,
    positions: &[DVector<f64>],
    agent: usize,
) -> Result<Vec<LocalMeasurement>, ControlError> {
    let DesiredGeometry::SquaredDistance(desired) = graph.desired() else {
        return Err(ControlError::NotDistanceFlavor);
    };
    let r = model.base_rotation();
    Ok(graph
        .neighbors(agent)
        .map(|(k, other)| LocalMeasurement {
            relative: r.transpose() * (&positions[agent] - &positions[other]),
            desired_sq: desired[k],
        })
        .collect())
}
