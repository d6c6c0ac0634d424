//! Feedforward ReLU networks: evaluation, backprop, and exact set propagation.
//!
//! Layers are affine maps `x ↦ W x + w`; a ReLU follows every layer except
//! the last. [`reach`] pushes a constrained zonotope through the network
//! exactly, splitting at every hidden ReLU and (optionally) pruning empty
//! branches; each surviving piece remembers its activation trace so that
//! [`piece_on_tape`] can rebuild it as a differentiable function of the weights.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conzono::{
    affine_map, matrix_from_rows, matrix_rows, relu_split_pruned, relu_split_with_cap,
    ActivationPattern, ConstrainedZonotope, DEFAULT_SPLIT_CAP,
};
use crate::error::{Error, Result};
use crate::lpsolve::EMPTY_TOL;
use crate::tape::{Tape, TapeZonotope, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `n_out × n_in`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dims(format!(
                "layer has {} weight rows but {} bias entries",
                weights.nrows(),
                bias.len()
            )));
        }
        if !weights.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite layer parameter".into()));
        }
        Ok(Layer { weights, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput(
                "network needs at least one layer".into(),
            ));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::dims(format!(
                    "layer {k} has {} outputs but layer {} takes {} inputs",
                    pair[0].outputs(),
                    k + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(Network { layers })
    }

    /// Layers drawn from `U(−1/√fan_in, 1/√fan_in)`.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "invalid layer widths {widths:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights =
                    DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
                let bias = DVector::from_fn(fan_out, |_, _| rng.random_range(-bound..bound));
                Layer { weights, bias }
            })
            .collect();
        Network::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Same shapes, all zeros. Gradients use this layout.
    pub fn zeros_like(&self) -> Network {
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: DMatrix::zeros(l.outputs(), l.inputs()),
                    bias: DVector::zeros(l.outputs()),
                })
                .collect(),
        }
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &Network) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.weights += &o.weights * alpha;
            l.bias += &o.bias * alpha;
        }
    }

    /// Parameters flattened layer by layer (weights column-major, then bias).
    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.num_params(),
            self.layers
                .iter()
                .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied()),
        )
    }

    pub fn unflatten(&self, flat: &DVector<f64>) -> Network {
        assert_eq!(flat.len(), self.num_params());
        let mut at = 0;
        let mut out = self.clone();
        for l in &mut out.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = flat[at];
                at += 1;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dims(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (k, l) in self.layers.iter().enumerate() {
            h = &l.weights * h + &l.bias;
            if k < last {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Hidden pre-activation patterns of `x`, one per ReLU layer.
    pub fn activation_trace(&self, x: &DVector<f64>) -> Result<Vec<ActivationPattern>> {
        if x.len() != self.input_dim() {
            return Err(Error::dims("input has the wrong dimension"));
        }
        let mut trace = Vec::with_capacity(self.depth() - 1);
        let mut h = x.clone();
        for l in &self.layers[..self.depth() - 1] {
            h = &l.weights * h + &l.bias;
            trace.push(ActivationPattern::of_point(&h));
            h.apply(|v| *v = v.max(0.0));
        }
        Ok(trace)
    }

    /// Forward pass over a batch stored column-wise (`n_in × m`).
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self
            .batch_activations(inputs)?
            .pop()
            .expect("at least one layer"))
    }

    /// Layer outputs for a batch: entry `k` is the (post-ReLU for hidden
    /// layers) output of layer `k`.
    fn batch_activations(&self, inputs: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        if inputs.nrows() != self.input_dim() {
            return Err(Error::dims(format!(
                "batch has {} rows, network expects {}",
                inputs.nrows(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut h = inputs.clone();
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = &l.weights * &h;
            for mut col in z.column_iter_mut() {
                col += &l.bias;
            }
            if k < last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z.clone());
            h = z;
        }
        Ok(acts)
    }

    /// Mean squared error `(1/m) Σ ‖N(x_j) − y_j‖²` and its exact gradient.
    pub fn objective_loss_and_grad(
        &self,
        inputs: &DMatrix<f64>,
        labels: &DMatrix<f64>,
    ) -> Result<(f64, Network)> {
        let m = inputs.ncols();
        if m == 0 {
            return Err(Error::EmptyDataset);
        }
        if labels.ncols() != m || labels.nrows() != self.output_dim() {
            return Err(Error::dims("labels do not match inputs or network output"));
        }
        let acts = self.batch_activations(inputs)?;
        let residual = acts.last().expect("nonempty") - labels;
        let loss = residual.norm_squared() / m as f64;

        let mut grad = self.zeros_like();
        let mut delta = residual * (2.0 / m as f64);
        for k in (0..self.layers.len()).rev() {
            let input = if k == 0 { inputs } else { &acts[k - 1] };
            grad.layers[k].weights = &delta * input.transpose();
            grad.layers[k].bias = delta.column_sum();
            if k > 0 {
                let mut back = self.layers[k].weights.transpose() * &delta;
                // ReLU'(pre) = 1 iff post-activation > 0
                back.zip_apply(&acts[k - 1], |b, a| {
                    if a <= 0.0 {
                        *b = 0.0
                    }
                });
                delta = back;
            }
        }
        Ok((loss, grad))
    }

    pub fn objective_loss(&self, inputs: &DMatrix<f64>, labels: &DMatrix<f64>) -> Result<f64> {
        if inputs.ncols() == 0 {
            return Err(Error::EmptyDataset);
        }
        let out = self.forward_batch(inputs)?;
        if out.shape() != labels.shape() {
            return Err(Error::dims("labels do not match network output"));
        }
        Ok((out - labels).norm_squared() / inputs.ncols() as f64)
    }

    /// Parameters as tape leaves, one `(W, w)` pair per layer.
    pub fn params_on_tape(&self, tape: &mut Tape) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|l| {
                let w = tape.param(l.weights.clone());
                let b = tape.param(DMatrix::from_column_slice(
                    l.bias.len(),
                    1,
                    l.bias.as_slice(),
                ));
                (w, b)
            })
            .collect()
    }

    /// Gradient with respect to parameters registered by [`Network::params_on_tape`].
    pub fn gradient_from_tape(
        &self,
        tape: &Tape,
        adjoints: &crate::tape::Adjoints,
        params: &[(Var, Var)],
    ) -> Network {
        Network {
            layers: params
                .iter()
                .map(|(w, b)| Layer {
                    weights: adjoints.get(tape, *w),
                    bias: adjoints.get(tape, *b).column(0).into_owned(),
                })
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    #[serde(rename = "W")]
    weights: Vec<Vec<f64>>,
    #[serde(rename = "w")]
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkJson {
    layers: Vec<LayerJson>,
}

impl Serialize for Network {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetworkJson {
            layers: self
                .layers
                .iter()
                .map(|l| LayerJson {
                    weights: matrix_rows(&l.weights),
                    bias: l.bias.iter().copied().collect(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Network {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = NetworkJson::deserialize(d)?;
        let layers = raw
            .layers
            .iter()
            .map(|l| {
                let cols = l.weights.first().map(Vec::len).unwrap_or(0);
                Layer::new(
                    matrix_from_rows(&l.weights, cols, "W")?,
                    DVector::from_vec(l.bias.clone()),
                )
            })
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        Network::new(layers).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReachOptions {
    pub prune: bool,
    /// Hard cap on live pieces at any layer.
    pub max_pieces: usize,
    pub split_cap: usize,
    pub empty_tol: f64,
}

impl Default for ReachOptions {
    fn default() -> Self {
        ReachOptions {
            prune: true,
            max_pieces: 100_000,
            split_cap: DEFAULT_SPLIT_CAP,
            empty_tol: EMPTY_TOL,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachPiece {
    pub set: ConstrainedZonotope,
    /// One activation pattern per hidden layer.
    pub trace: Vec<ActivationPattern>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachSet {
    pub input_set: ConstrainedZonotope,
    pub pieces: Vec<ReachPiece>,
}

impl ReachSet {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Indices of pieces containing `p`.
    pub fn pieces_containing(&self, p: &DVector<f64>, tol: f64) -> Result<Vec<usize>> {
        let mut hits = Vec::new();
        for (i, piece) in self.pieces.iter().enumerate() {
            if crate::conzono::contains_point(&piece.set, p, tol)? {
                hits.push(i);
            }
        }
        Ok(hits)
    }
}

/// Exact image of `input` under the network as a union of constrained zonotopes.
///
/// Pieces are ordered by their activation traces, lexicographically in
/// pattern index from the first hidden layer on.
pub fn reach(net: &Network, input: &ConstrainedZonotope, opts: &ReachOptions) -> Result<ReachSet> {
    if input.dim() != net.input_dim() {
        return Err(Error::dims(format!(
            "input set has dimension {}, network expects {}",
            input.dim(),
            net.input_dim()
        )));
    }
    let last = net.depth() - 1;
    let mut live = vec![ReachPiece {
        set: input.clone(),
        trace: Vec::new(),
    }];
    for (k, layer) in net.layers().iter().enumerate() {
        let mapped: Vec<ReachPiece> = live
            .par_iter()
            .map(|p| {
                Ok(ReachPiece {
                    set: affine_map(&p.set, &layer.weights, &layer.bias)?,
                    trace: p.trace.clone(),
                })
            })
            .collect::<Result<_>>()?;
        if k == last {
            live = mapped;
            break;
        }
        let width = layer.outputs();
        if width > opts.split_cap {
            return Err(Error::SplitTooLarge {
                dim: width,
                cap: opts.split_cap,
            });
        }
        if !opts.prune && mapped.len().saturating_mul(1usize << width) > opts.max_pieces {
            return Err(Error::BranchBudget {
                budget: opts.max_pieces,
                layer: k,
            });
        }
        let split: Vec<Vec<ReachPiece>> = mapped
            .par_iter()
            .map(|p| {
                let branches = if opts.prune {
                    relu_split_pruned(&p.set, opts.split_cap, opts.empty_tol)?
                } else {
                    relu_split_with_cap(&p.set, opts.split_cap)?
                };
                Ok(branches
                    .into_iter()
                    .map(|b| {
                        let mut trace = p.trace.clone();
                        trace.push(b.pattern);
                        ReachPiece {
                            set: b.zonotope,
                            trace,
                        }
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        live = split.into_iter().flatten().collect();
        if live.len() > opts.max_pieces {
            return Err(Error::BranchBudget {
                budget: opts.max_pieces,
                layer: k,
            });
        }
    }
    Ok(ReachSet {
        input_set: input.clone(),
        pieces: live,
    })
}

/// Rebuilds the output piece with the given activation trace on a tape, as a
/// function of the parameter leaves `params`.
pub fn piece_on_tape(
    tape: &mut Tape,
    params: &[(Var, Var)],
    input: &ConstrainedZonotope,
    trace: &[ActivationPattern],
) -> Result<TapeZonotope> {
    if trace.len() + 1 != params.len() {
        return Err(Error::dims(format!(
            "trace has {} patterns for {} layers",
            trace.len(),
            params.len()
        )));
    }
    let mut z = TapeZonotope::constant(tape, input);
    for (k, (w, b)) in params.iter().enumerate() {
        z = z.affine(tape, *w, *b);
        if let Some(pattern) = trace.get(k) {
            if pattern.len() != z.dim(tape) {
                return Err(Error::dims("pattern width does not match layer width"));
            }
            z = z.relu_branch(tape, pattern);
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conzono::contains_point;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn zero_network_outputs_zero() {
        let net = Network::init(&[2, 3, 2], 0).unwrap();
        let zero = net.zeros_like();
        assert_eq!(
            zero.forward(&dvector![0.4, -1.0]).unwrap(),
            dvector![0.0, 0.0]
        );
    }

    #[test]
    fn single_identity_layer() {
        let net = Network::new(vec![
            Layer::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap()
        ])
        .unwrap();
        let x = dvector![-0.3, 0.8];
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn rejects_unchained_layers() {
        let l1 = Layer::new(DMatrix::zeros(3, 2), DVector::zeros(3)).unwrap();
        let l2 = Layer::new(DMatrix::zeros(2, 4), DVector::zeros(2)).unwrap();
        assert!(Network::new(vec![l1, l2]).is_err());
        assert!(Layer::new(DMatrix::zeros(3, 2), DVector::zeros(2)).is_err());
    }

    #[test]
    fn shape_errors() {
        let net = Network::init(&[2, 3, 1], 1).unwrap();
        assert!(net.forward(&dvector![1.0]).is_err());
        let empty = DMatrix::zeros(2, 0);
        assert!(matches!(
            net.objective_loss_and_grad(&empty, &DMatrix::zeros(1, 0)),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn init_bounds() {
        let net = Network::init(&[4, 10, 2], 9).unwrap();
        assert!(net.layers()[0].weights.amax() <= 0.5);
        assert!(net.layers()[1].weights.amax() <= 1.0 / 10f64.sqrt());
        assert_eq!(net, Network::init(&[4, 10, 2], 9).unwrap());
    }

    #[test]
    fn perfect_labels_have_zero_loss_and_gradient() {
        let net = Network::init(&[2, 5, 2], 3).unwrap();
        let x = dmatrix![0.1, -0.5, 0.9; 0.3, 0.2, -0.7];
        let y = net.forward_batch(&x).unwrap();
        let (loss, g) = net.objective_loss_and_grad(&x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.flatten().amax(), 0.0);
    }

    #[test]
    fn linear_layer_closed_form_gradient() {
        let net =
            Network::new(vec![Layer::new(dmatrix![0.5, -1.0], dvector![0.2]).unwrap()]).unwrap();
        let x = dvector![1.5, 0.5];
        let y = dvector![0.3];
        let (_, g) = net
            .objective_loss_and_grad(
                &DMatrix::from_column_slice(2, 1, x.as_slice()),
                &DMatrix::from_column_slice(1, 1, y.as_slice()),
            )
            .unwrap();
        let r = &net.layers()[0].weights * &x + &net.layers()[0].bias - &y;
        let expect_w = r.clone() * x.transpose() * 2.0;
        assert!((&g.layers()[0].weights - expect_w).amax() < 1e-14);
        assert!((&g.layers()[0].bias - r * 2.0).amax() < 1e-14);
    }

    #[test]
    fn json_round_trip() {
        let net = Network::init(&[2, 3, 2], 5).unwrap();
        let s = serde_json::to_string(&net).unwrap();
        assert!(s.starts_with(r#"{"layers":[{"W":[["#));
        let back: Network = serde_json::from_str(&s).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn identity_reach_is_the_input_image() {
        let net = Network::new(vec![
            Layer::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap()
        ])
        .unwrap();
        let x0 = ConstrainedZonotope::unit_box(2);
        let r = reach(&net, &x0, &ReachOptions::default()).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.pieces[0].set, x0);
        assert!(r.pieces[0].trace.is_empty());
    }

    #[test]
    fn scalar_hidden_unit_reach() {
        // y = relu(x) - 0.5 on [-1, 1] → [-0.5, 0.5], two pieces
        let net = Network::new(vec![
            Layer::new(dmatrix![1.0], dvector![0.0]).unwrap(),
            Layer::new(dmatrix![1.0], dvector![-0.5]).unwrap(),
        ])
        .unwrap();
        let r = reach(
            &net,
            &ConstrainedZonotope::unit_box(1),
            &ReachOptions::default(),
        )
        .unwrap();
        assert_eq!(r.len(), 2);
        for x in [-1.0, -0.3, 0.0, 0.4, 1.0] {
            let y = net.forward(&dvector![x]).unwrap();
            assert!(!r.pieces_containing(&y, 1e-6).unwrap().is_empty());
        }
        assert!(r
            .pieces_containing(&dvector![0.7], 1e-6)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn budget_is_enforced() {
        let net = Network::init(&[2, 8, 1], 0).unwrap();
        let opts = ReachOptions {
            prune: false,
            max_pieces: 100,
            ..ReachOptions::default()
        };
        assert!(matches!(
            reach(&net, &ConstrainedZonotope::unit_box(2), &opts),
            Err(Error::BranchBudget { .. })
        ));
    }

    #[test]
    fn tape_replay_matches_reach() {
        let net = Network::init(&[2, 4, 3, 2], 11).unwrap();
        let x0 = ConstrainedZonotope::unit_box(2);
        let r = reach(&net, &x0, &ReachOptions::default()).unwrap();
        assert!(r.len() > 1);
        for piece in &r.pieces {
            let mut tape = Tape::new();
            let params = net.params_on_tape(&mut tape);
            let z = piece_on_tape(&mut tape, &params, &x0, &piece.trace).unwrap();
            let v = z.value(&tape);
            assert!((v.center() - piece.set.center()).amax() < 1e-12);
            assert!((v.generators() - piece.set.generators()).amax() < 1e-12);
            assert!((v.constraints() - piece.set.constraints()).amax() < 1e-12);
            assert!((v.offset() - piece.set.offset()).amax() < 1e-12);
        }
    }

    #[test]
    fn forward_point_lies_in_matching_piece() {
        let net = Network::init(&[2, 5, 2], 4).unwrap();
        let x0 = ConstrainedZonotope::unit_box(2);
        let r = reach(&net, &x0, &ReachOptions::default()).unwrap();
        for x in [dvector![0.2, -0.7], dvector![-0.9, 0.1], dvector![0.5, 0.5]] {
            let trace = net.activation_trace(&x).unwrap();
            let y = net.forward(&x).unwrap();
            let piece = r
                .pieces
                .iter()
                .find(|p| p.trace == trace)
                .expect("trace present");
            assert!(contains_point(&piece.set, &y, 1e-6).unwrap());
        }
    }
}
