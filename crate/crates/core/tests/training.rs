use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use zonotrain::conzono::{intersect, ConstrainedZonotope};
use zonotrain::network::{Layer, Network};
use zonotrain::training::{
    certify, constraint_gradient, label, train_constrained, train_unconstrained, Problem,
    TrainConfig,
};

fn grid_1d(m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(1, m, |_, j| -1.0 + 2.0 * j as f64 / (m - 1) as f64)
}

#[test]
fn linear_target_loss_trends_down() {
    let x = DMatrix::from_fn(2, 50, |i, j| ((i * 31 + j * 17) % 23) as f64 / 11.5 - 1.0);
    let data = label(x, |x| dvector![0.3 * x[0] - 0.7 * x[1] + 0.1, x[0] + x[1]]).unwrap();
    let net = Network::new(vec![
        Layer::new(DMatrix::zeros(2, 2), DVector::zeros(2)).unwrap()
    ])
    .unwrap();
    let problem = Problem::new(ConstrainedZonotope::unit_box(2), vec![]);
    let cfg = TrainConfig {
        iterations: 200,
        lr_objective: 0.05,
        ..TrainConfig::default()
    };
    let (_, report) = train_unconstrained(net, &data, &problem, &cfg).unwrap();
    let losses: Vec<f64> = report.records.iter().map(|r| r.objective_loss).collect();
    for w in losses.windows(10) {
        assert!(w[9] < w[0], "loss did not fall over a window: {w:?}");
    }
    assert!(report.final_objective_loss < losses[0] * 1e-2);
}

/// One input, two hidden units, one output; the unsafe interval covers part
/// of the untrained output range.
#[test]
fn one_dimensional_toy_is_certified() {
    let net = Network::new(vec![
        Layer::new(dmatrix![1.0; -1.0], dvector![0.0, 0.0]).unwrap(),
        Layer::new(dmatrix![1.0, 1.0], dvector![0.0]).unwrap(),
    ])
    .unwrap();
    let x0 = ConstrainedZonotope::unit_box(1);
    // Output is |x| ∈ [0, 1]; forbid [0.8, 1.2].
    let bad = ConstrainedZonotope::axis_box(dvector![1.0], &dvector![0.2]).unwrap();
    let problem = Problem::new(x0, vec![bad.clone()]);
    let data = label(grid_1d(41), |x| dvector![0.5 * x[0].abs()]).unwrap();
    let cfg = TrainConfig {
        iterations: 300,
        lr_constraint: 0.05,
        ..TrainConfig::default()
    };
    assert!(!certify(&net, &problem, &cfg).unwrap().safe);
    let (trained, report) = train_constrained(net, &data, &problem, &cfg).unwrap();
    assert!(report.safe());
    // Machine check: rerun reach + emptiness from scratch.
    let cert = certify(&trained, &problem, &cfg).unwrap();
    assert!(cert.safe);
    for p in &cert.pieces {
        assert!(p.checks[0].v_star.is_none_or(|v| v > 1.0));
    }
    let r = zonotrain::network::reach(&trained, &problem.input_set, &cfg.reach_options()).unwrap();
    for piece in &r.pieces {
        assert!(intersect(&piece.set, &bad).unwrap().is_empty().unwrap());
    }
}

#[test]
fn constraint_step_does_not_increase_violation() {
    let net = Network::init(&[2, 6, 2], 3).unwrap();
    let x0 = ConstrainedZonotope::unit_box(2);
    let out_center = net.forward(&dvector![0.0, 0.0]).unwrap();
    let bad = ConstrainedZonotope::axis_box(out_center, &dvector![0.1, 0.1]).unwrap();
    let problem = Problem::new(x0, vec![bad]);
    let cfg = TrainConfig::default();
    let before = certify(&net, &problem, &cfg).unwrap().max_constraint_loss;
    assert!(before > 0.0);
    let step = constraint_gradient(&net, &problem, &cfg).unwrap();
    assert!(step.active > 0);
    let mut lr = 0.1;
    let mut improved = false;
    for _ in 0..10 {
        let mut moved = net.clone();
        moved.axpy(-lr, &step.gradient);
        let after = certify(&moved, &problem, &cfg).unwrap().max_constraint_loss;
        if after <= before {
            improved = true;
            break;
        }
        lr *= 0.5;
    }
    assert!(improved);
}

#[test]
fn reports_are_deterministic() {
    let x = DMatrix::from_fn(2, 30, |i, j| ((i * 13 + j * 7) % 19) as f64 / 9.5 - 1.0);
    let data = label(x, |x| {
        dvector![x[0] * x[0] + x[1].sin(), x[1] * x[1] + x[0].sin()]
    })
    .unwrap();
    let problem = Problem::new(
        ConstrainedZonotope::unit_box(2),
        vec![ConstrainedZonotope::axis_box(dvector![1.5, 1.5], &dvector![0.5, 0.5]).unwrap()],
    );
    let cfg = TrainConfig {
        iterations: 20,
        ..TrainConfig::default()
    };
    let run = || {
        let (net, mut report) =
            train_constrained(Network::init(&[2, 5, 2], 9).unwrap(), &data, &problem, &cfg)
                .unwrap();
        report.wall_time_secs = 0.0;
        (net, report)
    };
    assert_eq!(run(), run());
}

#[test]
fn problem_dimensions_are_checked() {
    let net = Network::init(&[2, 3, 2], 0).unwrap();
    let data = label(dmatrix![0.0; 0.0], |x| x.clone()).unwrap();
    let problem = Problem::new(ConstrainedZonotope::unit_box(3), vec![]);
    assert!(train_unconstrained(net, &data, &problem, &TrainConfig::default()).is_err());
}
