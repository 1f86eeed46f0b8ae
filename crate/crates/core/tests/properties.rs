use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use eeformation::graph::{Edge, Flavor, FormationGraph};
use eeformation::linalg::{max_eigenvalue, min_eigenvalue, rotation_matrix};
use eeformation::model::{ArmModel, GravityMode, ManipulatorModel, PlanarParams, PlanarTwoLink, SpatialElbow, SpatialParams};
use eeformation::scenario::parse_angle;

fn planar() -> ManipulatorModel {
    ManipulatorModel::at_origin(Arc::new(PlanarTwoLink::new(
        PlanarParams::table_one().with_gravity(GravityMode::Vertical),
    )))
}

fn spatial() -> ManipulatorModel {
    ManipulatorModel::at_origin(Arc::new(SpatialElbow::new(
        SpatialParams::compact().with_gravity(GravityMode::Vertical),
    )))
}

fn square_graph() -> FormationGraph {
    let edges = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]
        .into_iter()
        .map(|(a, b)| Edge::new(a, b))
        .collect();
    let reference = DVector::from_vec(vec![0.0, 0.0, 0.4, 0.0, 0.4, 0.4, 0.0, 0.4]);
    FormationGraph::from_reference(4, 2, edges, Flavor::Distance, &reference).unwrap()
}

fn vec_of(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(lo..hi, len).prop_map(DVector::from_vec)
}

/// `Ḣ` by the chain rule from the model's own inertia partials.
fn inertia_rate(arm: &dyn ArmModel, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64> {
    arm.inertia_partials(q)
        .iter()
        .zip(qdot.iter())
        .fold(DMatrix::zeros(q.len(), q.len()), |acc, (d, v)| acc + d * *v)
}

/// Central-difference `Ḣ`, independent of the model's partials.
fn inertia_rate_fd(arm: &dyn ArmModel, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64> {
    let h = 1e-6;
    (arm.inertia(&(q + qdot * h)) - arm.inertia(&(q - qdot * h))) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn planar_hdot_minus_2c_is_skew(q in vec_of(2, -PI, PI), qdot in vec_of(2, -3.0, 3.0)) {
        let m = planar();
        let n = m.arm().inertia_partials(&q).len();
        prop_assert_eq!(n, 2);
        let s = inertia_rate(m.arm().as_ref(), &q, &qdot) - 2.0 * m.coriolis(&q, &qdot);
        prop_assert!((&s + s.transpose()).amax() < 1e-10);
        let fd = inertia_rate_fd(m.arm().as_ref(), &q, &qdot);
        prop_assert!((fd - inertia_rate(m.arm().as_ref(), &q, &qdot)).amax() < 1e-6);
    }

    #[test]
    fn spatial_hdot_minus_2c_is_skew(q in vec_of(3, -PI, PI), qdot in vec_of(3, -3.0, 3.0)) {
        let m = spatial();
        let s = inertia_rate(m.arm().as_ref(), &q, &qdot) - 2.0 * m.coriolis(&q, &qdot);
        prop_assert!((&s + s.transpose()).amax() < 1e-10);
        let fd = inertia_rate_fd(m.arm().as_ref(), &q, &qdot);
        prop_assert!((fd - inertia_rate(m.arm().as_ref(), &q, &qdot)).amax() < 1e-6);
    }

    #[test]
    fn inertia_is_symmetric_positive_definite(q in vec_of(3, -PI, PI)) {
        for (m, qq) in [(planar(), q.rows(0, 2).into_owned()), (spatial(), q.clone())] {
            let h = m.inertia(&qq);
            prop_assert!((&h - h.transpose()).amax() < 1e-12);
            prop_assert!(min_eigenvalue(&h) > 0.0);
            prop_assert!(max_eigenvalue(&h).is_finite());
        }
    }

    #[test]
    fn regressor_reproduces_jacobian_transpose(
        q in vec_of(3, -PI, PI),
        zeta in vec_of(3, -5.0, 5.0),
        a in vec_of(3, 0.2, 2.5),
        angle in -PI..PI,
    ) {
        let rotated = planar()
            .with_base(DVector::from_vec(vec![1.0, -2.0]), rotation_matrix(2, &[angle]))
            .unwrap();
        let (q2, z2, a2) = (q.rows(0, 2).into_owned(), zeta.rows(0, 2).into_owned(), a.rows(0, 2).into_owned());
        let lhs = rotated.jacobian(&q2, &a2).transpose() * &z2;
        let rhs = rotated.kinematic_regressor(&q2, &z2) * &a2;
        prop_assert!((lhs - rhs).amax() < 1e-12 * (1.0 + zeta.amax() * 5.0));

        let s = spatial();
        let a3 = a.rows(0, s.num_kinematic_params()).into_owned();
        let lhs = s.jacobian(&q, &a3).transpose() * &zeta;
        let rhs = s.kinematic_regressor(&q, &zeta) * &a3;
        prop_assert!((lhs - rhs).amax() < 1e-12 * (1.0 + zeta.amax() * 5.0));
    }

    #[test]
    fn jacobian_is_linear_in_the_kinematic_parameters(
        q in vec_of(2, -PI, PI),
        a in vec_of(2, 0.2, 2.5),
        b in vec_of(2, 0.2, 2.5),
        s in 0.0f64..1.0,
    ) {
        let m = planar();
        let mix = &a * s + &b * (1.0 - s);
        let lhs = m.jacobian(&q, &mix);
        let rhs = m.jacobian(&q, &a) * s + m.jacobian(&q, &b) * (1.0 - s);
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn singularity_distance_vanishes_only_on_the_singular_set(q1 in -PI..PI, q2 in 0.05f64..3.09) {
        let m = planar();
        prop_assert!(m.singularity_distance(&DVector::from_vec(vec![q1, 0.0])) < 1e-12);
        prop_assert!(m.singularity_distance(&DVector::from_vec(vec![q1, q2])) > 1e-3);
    }

    #[test]
    fn distance_errors_ignore_rigid_motions(
        x in vec_of(8, -3.0, 3.0),
        angle in -PI..PI,
        shift in vec_of(2, -10.0, 10.0),
    ) {
        let g = square_graph();
        let r = rotation_matrix(2, &[angle]);
        let moved = DVector::from_iterator(
            8,
            (0..4).flat_map(|i| {
                let p = &r * x.rows(2 * i, 2) + &shift;
                [p[0], p[1]]
            }),
        );
        let e0 = g.edge_errors(&x).unwrap().into_stacked();
        let e1 = g.edge_errors(&moved).unwrap().into_stacked();
        prop_assert!((e0 - e1).amax() < 1e-9);
    }

    #[test]
    fn formation_gradient_sums_to_zero(x in vec_of(8, -3.0, 3.0)) {
        let g = square_graph();
        let grad = g.formation_gradient(&x).unwrap();
        let total = (0..4).fold(DVector::zeros(2), |acc, i| acc + grad.rows(2 * i, 2));
        prop_assert!(total.amax() < 1e-9 * (1.0 + grad.amax()));
    }

    #[test]
    fn formation_gradient_matches_the_potential(x in vec_of(8, -2.0, 2.0), k in 0usize..8) {
        let g = square_graph();
        let grad = g.formation_gradient(&x).unwrap();
        let h = 1e-6;
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let fd = (g.potential(&xp).unwrap() - g.potential(&xm).unwrap()) / (2.0 * h);
        prop_assert!((fd - grad[k]).abs() < 1e-6 * (1.0 + grad[k].abs()));
    }

    #[test]
    fn incidence_columns_sum_to_zero(
        flip in prop::collection::vec(any::<bool>(), 10),
        keep in prop::collection::vec(any::<bool>(), 10),
    ) {
        // A path keeps the graph connected; other pairs are added at random,
        // every edge with a random orientation.
        let mut edges = Vec::new();
        let mut k = 0;
        for a in 0..5 {
            for b in a + 1..5 {
                if b == a + 1 || keep[k] {
                    edges.push(if flip[k] { Edge::new(b, a) } else { Edge::new(a, b) });
                }
                k += 1;
            }
        }
        let reference = DVector::from_fn(10, |i, _| (i as f64 * 0.7).sin());
        let g = FormationGraph::from_reference(5, 2, edges.clone(), Flavor::Displacement, &reference).unwrap();
        let b = g.incidence_matrix();
        prop_assert_eq!(b.ncols(), edges.len());
        for k in 0..b.ncols() {
            prop_assert_eq!(b.column(k).iter().sum::<i32>(), 0);
            prop_assert_eq!(b.column(k).iter().filter(|v| **v != 0).count(), 2);
        }
    }

    #[test]
    fn angle_expressions_evaluate(num in -12i32..12, den in 1i32..13) {
        let text = format!("{num}pi/{den}");
        let v = parse_angle(&text).unwrap();
        prop_assert!((v - num as f64 * PI / den as f64).abs() < 1e-12);
        let spaced = format!("{num}*pi/{den}");
        prop_assert_eq!(parse_angle(&spaced), Some(v));
    }
}
