//! Full-batch training with an optional set-based safety constraint.
//!
//! Each constrained iteration takes an objective step, then recomputes the
//! exact reachable set, scores every piece against every unsafe set with the
//! loss `1 − v*`, and takes a second step on the sum of the active losses.
//! Whatever happened during training, the returned verdict always comes from
//! a fresh reach + emptiness pass on the final parameters.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conzono::{intersect, ActivationPattern, ConstrainedZonotope, DEFAULT_SPLIT_CAP};
use crate::error::{Error, Result};
use crate::lpgrad::DEFAULT_LOSS_FLOOR;
use crate::lpsolve::{EmptinessStatus, EMPTY_TOL};
use crate::network::{piece_on_tape, reach, Network, ReachOptions, ReachSet};
use crate::tape::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr_objective: f64,
    /// Constraint step size per iteration; when the constraint is evaluated
    /// only every k-th iteration the step covers the k iterations since the
    /// previous evaluation.
    pub lr_constraint: f64,
    /// A piece is active when its loss exceeds `-activation_margin`.
    pub activation_margin: f64,
    pub seed: u64,
    pub dataset_size: usize,
    pub prune: bool,
    /// Evaluate the constraint every k-th iteration (and always on the last one).
    pub constraint_every: usize,
    pub empty_tol: f64,
    /// Loss assigned to intersections whose equality constraints are inconsistent.
    pub loss_floor: f64,
    pub max_pieces: usize,
    pub split_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            lr_objective: 0.1,
            lr_constraint: 0.02,
            activation_margin: 0.05,
            seed: 0,
            dataset_size: 10_000,
            prune: true,
            constraint_every: 1,
            empty_tol: EMPTY_TOL,
            loss_floor: DEFAULT_LOSS_FLOOR,
            max_pieces: 100_000,
            split_cap: DEFAULT_SPLIT_CAP,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.to_string()));
        if !(self.lr_objective > 0.0 && self.lr_objective.is_finite()) {
            return bad("lr_objective must be positive");
        }
        if !(self.lr_constraint > 0.0 && self.lr_constraint.is_finite()) {
            return bad("lr_constraint must be positive");
        }
        if !(self.activation_margin >= 0.0 && self.activation_margin.is_finite()) {
            return bad("activation_margin must be non-negative");
        }
        if self.constraint_every == 0 {
            return bad("constraint_every must be at least 1");
        }
        if !(self.empty_tol >= 0.0 && self.empty_tol.is_finite()) {
            return bad("empty_tol must be non-negative");
        }
        if !self.loss_floor.is_finite() || self.loss_floor >= 0.0 {
            return bad("loss_floor must be negative");
        }
        if self.max_pieces == 0 || self.split_cap == 0 {
            return bad("max_pieces and split_cap must be positive");
        }
        Ok(())
    }

    pub fn reach_options(&self) -> ReachOptions {
        ReachOptions {
            prune: self.prune,
            max_pieces: self.max_pieces,
            split_cap: self.split_cap,
            empty_tol: self.empty_tol,
        }
    }

    fn evaluates_constraint(&self, t: usize) -> bool {
        (t + 1).is_multiple_of(self.constraint_every) || t + 1 == self.iterations
    }
}

/// Inputs and labels stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub labels: DMatrix<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, labels: DMatrix<f64>) -> Result<Self> {
        if inputs.ncols() != labels.ncols() {
            return Err(Error::dims(format!(
                "{} inputs but {} labels",
                inputs.ncols(),
                labels.ncols()
            )));
        }
        if inputs.ncols() == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }
}

/// Input set and the unsafe output sets the reachable set must avoid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Problem {
    pub input_set: ConstrainedZonotope,
    pub unsafe_sets: Vec<ConstrainedZonotope>,
}

impl Problem {
    pub fn new(input_set: ConstrainedZonotope, unsafe_sets: Vec<ConstrainedZonotope>) -> Self {
        Problem {
            input_set,
            unsafe_sets,
        }
    }

    fn check(&self, net: &Network) -> Result<()> {
        if self.input_set.dim() != net.input_dim() {
            return Err(Error::dims("input set does not match the network input"));
        }
        if self.unsafe_sets.iter().any(|u| u.dim() != net.output_dim()) {
            return Err(Error::dims("unsafe set does not match the network output"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Objective loss before this iteration's steps.
    pub objective_loss: f64,
    /// Largest piece loss, when the constraint was evaluated.
    pub max_constraint_loss: Option<f64>,
    pub active_pieces: usize,
    pub total_pieces: usize,
    pub degenerate_gradients: usize,
}

/// Emptiness result for one piece against one unsafe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnsafeCheck {
    /// `None` when the intersection's equality constraints are inconsistent.
    pub v_star: Option<f64>,
    pub loss: f64,
    /// A point of the intersection, present only when it is nonempty.
    pub witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceCertificate {
    pub trace: Vec<ActivationPattern>,
    /// One entry per unsafe set.
    pub checks: Vec<UnsafeCheck>,
}

impl PieceCertificate {
    pub fn max_loss(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.loss)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub safe: bool,
    /// Largest loss over every piece and unsafe set (−∞ if there are none).
    pub max_constraint_loss: f64,
    pub pieces: Vec<PieceCertificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub constrained: bool,
    pub records: Vec<IterationRecord>,
    pub final_objective_loss: f64,
    pub final_constraint_loss: f64,
    pub certification: Certification,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn safe(&self) -> bool {
        self.certification.safe
    }
}

fn check_piece(
    piece: &ConstrainedZonotope,
    unsafe_set: &ConstrainedZonotope,
    cfg: &TrainConfig,
) -> Result<UnsafeCheck> {
    let inter = intersect(piece, unsafe_set)?;
    let res = inter.check_empty()?;
    Ok(match res.status {
        EmptinessStatus::EqInfeasible => UnsafeCheck {
            v_star: None,
            loss: cfg.loss_floor,
            witness: None,
        },
        EmptinessStatus::Optimal => {
            let witness = (!res.is_empty_with(cfg.empty_tol)).then(|| {
                let z = res
                    .z_star
                    .rows(0, piece.n_gen())
                    .map(|v| v.clamp(-1.0, 1.0));
                piece.point(&z).iter().copied().collect()
            });
            UnsafeCheck {
                v_star: Some(res.v_star),
                loss: 1.0 - res.v_star,
                witness,
            }
        }
    })
}

/// Scores every piece of `reach_set` against every unsafe set.
pub fn certify_reach(
    reach_set: &ReachSet,
    unsafe_sets: &[ConstrainedZonotope],
    cfg: &TrainConfig,
) -> Result<Certification> {
    let pieces: Vec<PieceCertificate> = reach_set
        .pieces
        .par_iter()
        .map(|p| {
            Ok(PieceCertificate {
                trace: p.trace.clone(),
                checks: unsafe_sets
                    .iter()
                    .map(|u| check_piece(&p.set, u, cfg))
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<_>>()?;
    let max_constraint_loss = pieces
        .iter()
        .map(PieceCertificate::max_loss)
        .fold(f64::NEG_INFINITY, f64::max);
    let safe = pieces
        .iter()
        .flat_map(|p| &p.checks)
        .all(|c| c.v_star.is_none_or(|v| v > 1.0 + cfg.empty_tol));
    Ok(Certification {
        safe,
        max_constraint_loss,
        pieces,
    })
}

/// Reach + emptiness on the given parameters.
pub fn certify(net: &Network, problem: &Problem, cfg: &TrainConfig) -> Result<Certification> {
    problem.check(net)?;
    let r = reach(net, &problem.input_set, &cfg.reach_options())?;
    certify_reach(&r, &problem.unsafe_sets, cfg)
}

fn objective_step(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<f64> {
    let (loss, grad) = net.objective_loss_and_grad(&data.inputs, &data.labels)?;
    if !loss.is_finite() {
        return Err(Error::Diverged { iteration });
    }
    net.axpy(-cfg.lr_objective, &grad);
    Ok(loss)
}

/// Summed constraint loss over active pieces and its gradient.
#[derive(Debug, Clone)]
pub struct ConstraintStep {
    pub max_loss: f64,
    pub active: usize,
    pub total: usize,
    pub degenerate: usize,
    pub gradient: Network,
}

/// Evaluates the constraint on the current parameters and differentiates the
/// sum of active losses.
pub fn constraint_gradient(
    net: &Network,
    problem: &Problem,
    cfg: &TrainConfig,
) -> Result<ConstraintStep> {
    problem.check(net)?;
    let r = reach(net, &problem.input_set, &cfg.reach_options())?;
    let per_piece: Vec<(f64, usize, usize, Option<Network>)> = r
        .pieces
        .par_iter()
        .map(|piece| {
            let losses: Vec<f64> = problem
                .unsafe_sets
                .iter()
                .map(|u| check_piece(&piece.set, u, cfg).map(|c| c.loss))
                .collect::<Result<_>>()?;
            let max_loss = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let active: Vec<usize> = losses
                .iter()
                .enumerate()
                .filter(|(_, &l)| l > -cfg.activation_margin)
                .map(|(i, _)| i)
                .collect();
            if active.is_empty() {
                return Ok((max_loss, 0, 0, None));
            }
            let mut tape = Tape::new();
            let params = net.params_on_tape(&mut tape);
            let z = piece_on_tape(&mut tape, &params, &problem.input_set, &piece.trace)?;
            let mut total = None;
            let mut degenerate = 0;
            for &i in &active {
                let (a, b) = z.intersect_constant(&mut tape, &problem.unsafe_sets[i]);
                let v = tape.lp_optimum(a, b, 1.0 - cfg.loss_floor)?;
                if tape.lp_degenerate(v) {
                    degenerate += 1;
                }
                let l = tape.scale(v, -1.0);
                total = Some(match total {
                    None => l,
                    Some(acc) => tape.add(acc, l),
                });
            }
            let out = total.expect("at least one active set");
            let adj = tape.backward(out);
            Ok((
                max_loss,
                active.len(),
                degenerate,
                Some(net.gradient_from_tape(&tape, &adj, &params)),
            ))
        })
        .collect::<Result<_>>()?;

    let mut gradient = net.zeros_like();
    let mut step = ConstraintStep {
        max_loss: f64::NEG_INFINITY,
        active: 0,
        total: r.len(),
        degenerate: 0,
        gradient: net.zeros_like(),
    };
    for (max_loss, active, degenerate, grad) in per_piece {
        step.max_loss = step.max_loss.max(max_loss);
        step.active += active;
        step.degenerate += degenerate;
        if let Some(g) = grad {
            gradient.axpy(1.0, &g);
        }
    }
    step.gradient = gradient;
    Ok(step)
}

fn finish(
    net: &Network,
    data: &Dataset,
    problem: &Problem,
    cfg: &TrainConfig,
    constrained: bool,
    records: Vec<IterationRecord>,
    start: Instant,
) -> Result<TrainReport> {
    let final_objective_loss = net.objective_loss(&data.inputs, &data.labels)?;
    if !final_objective_loss.is_finite() || !net.is_finite() {
        return Err(Error::Diverged {
            iteration: cfg.iterations,
        });
    }
    let certification = certify(net, problem, cfg)?;
    Ok(TrainReport {
        constrained,
        records,
        final_objective_loss,
        final_constraint_loss: certification.max_constraint_loss,
        certification,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Plain gradient descent on the objective. The problem is only used for the
/// final certification.
pub fn train_unconstrained(
    mut net: Network,
    data: &Dataset,
    problem: &Problem,
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    problem.check(&net)?;
    let start = Instant::now();
    let mut records = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let loss = objective_step(&mut net, data, cfg, t)?;
        records.push(IterationRecord {
            iteration: t,
            objective_loss: loss,
            max_constraint_loss: None,
            active_pieces: 0,
            total_pieces: 0,
            degenerate_gradients: 0,
        });
    }
    let report = finish(&net, data, problem, cfg, false, records, start)?;
    Ok((net, report))
}

/// Alternating objective and constraint steps.
pub fn train_constrained(
    mut net: Network,
    data: &Dataset,
    problem: &Problem,
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    problem.check(&net)?;
    let start = Instant::now();
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut since_eval = 0usize;
    for t in 0..cfg.iterations {
        let loss = objective_step(&mut net, data, cfg, t)?;
        since_eval += 1;
        let mut record = IterationRecord {
            iteration: t,
            objective_loss: loss,
            max_constraint_loss: None,
            active_pieces: 0,
            total_pieces: 0,
            degenerate_gradients: 0,
        };
        if cfg.evaluates_constraint(t) && !problem.unsafe_sets.is_empty() {
            let step = constraint_gradient(&net, problem, cfg)?;
            record.max_constraint_loss = Some(step.max_loss);
            record.active_pieces = step.active;
            record.total_pieces = step.total;
            record.degenerate_gradients = step.degenerate;
            let lr = cfg.lr_constraint * since_eval as f64;
            since_eval = 0;
            if step.active > 0 {
                net.axpy(-lr, &step.gradient);
                if !net.is_finite() {
                    return Err(Error::Diverged { iteration: t });
                }
            }
        }
        records.push(record);
    }
    let report = finish(&net, data, problem, cfg, true, records, start)?;
    Ok((net, report))
}

/// Dataset from a labelling function applied to each column of `inputs`.
pub fn label(inputs: DMatrix<f64>, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> Result<Dataset> {
    let m = inputs.ncols();
    if m == 0 {
        return Err(Error::EmptyDataset);
    }
    let cols: Vec<DVector<f64>> = inputs.column_iter().map(|c| f(&c.into_owned())).collect();
    let labels = DMatrix::from_columns(&cols);
    Dataset::new(inputs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;
    use nalgebra::{dmatrix, dvector};

    fn far_problem() -> Problem {
        Problem::new(
            ConstrainedZonotope::unit_box(2),
            vec![
                ConstrainedZonotope::axis_box(dvector![100.0, 100.0], &dvector![0.5, 0.5]).unwrap(),
            ],
        )
    }

    fn small_data() -> Dataset {
        let x = dmatrix![0.1, -0.5, 0.9, -0.2; 0.3, 0.2, -0.7, 0.8];
        label(x, |x| dvector![x[0] + 0.5 * x[1], -x[1]]).unwrap()
    }

    #[test]
    fn config_json_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"iterations": 5}"#).unwrap();
        assert_eq!(cfg.iterations, 5);
        assert_eq!(cfg.lr_objective, 0.1);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"iters": 5}"#).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = TrainConfig {
            lr_objective: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            activation_margin: -1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn evaluation_schedule() {
        let cfg = TrainConfig {
            iterations: 12,
            constraint_every: 5,
            ..TrainConfig::default()
        };
        let hits: Vec<usize> = (0..12).filter(|&t| cfg.evaluates_constraint(t)).collect();
        assert_eq!(hits, vec![4, 9, 11]);
    }

    #[test]
    fn zero_iterations_keep_network() {
        let net = Network::init(&[2, 3, 2], 1).unwrap();
        let cfg = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let (out, report) =
            train_constrained(net.clone(), &small_data(), &far_problem(), &cfg).unwrap();
        assert_eq!(out, net);
        assert!(report.records.is_empty());
        assert!(report.safe());
    }

    #[test]
    fn far_unsafe_set_never_activates() {
        let net = Network::init(&[2, 3, 2], 2).unwrap();
        let cfg = TrainConfig {
            iterations: 5,
            ..TrainConfig::default()
        };
        let data = small_data();
        let (a, ra) = train_constrained(net.clone(), &data, &far_problem(), &cfg).unwrap();
        let (b, _) = train_unconstrained(net, &data, &far_problem(), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(ra.records.iter().all(|r| r.active_pieces == 0));
        assert!(ra.safe());
    }

    #[test]
    fn divergence_reports_iteration() {
        let net = Network::new(vec![Layer::new(dmatrix![1.0], dvector![0.0]).unwrap()]).unwrap();
        let data = label(dmatrix![10.0, -10.0], |x| x * 2.0).unwrap();
        let problem = Problem::new(ConstrainedZonotope::unit_box(1), vec![]);
        let cfg = TrainConfig {
            iterations: 2000,
            lr_objective: 10.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_unconstrained(net, &data, &problem, &cfg),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn identical_sets_are_unsafe_with_witness() {
        let net = Network::new(vec![
            Layer::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap()
        ])
        .unwrap();
        let x0 = ConstrainedZonotope::unit_box(2);
        let problem = Problem::new(x0.clone(), vec![x0.clone()]);
        let cert = certify(&net, &problem, &TrainConfig::default()).unwrap();
        assert!(!cert.safe);
        let w = cert.pieces[0].checks[0].witness.clone().unwrap();
        assert!(w.iter().all(|v| v.abs() <= 1.0 + 1e-9));
    }
}
