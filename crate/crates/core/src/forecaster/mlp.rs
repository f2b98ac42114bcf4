//! Feed-forward network with three output heads per (node, horizon) cell.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{IntervalForecast, IntervalModel, QuantileLevels};

pub const CHECKPOINT_FORMAT: &str = "adaptive-intervals/mlp-checkpoint/v1";

/// Hidden layout of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpArchitecture {
    pub hidden: Vec<usize>,
    /// Dropout applied after the last hidden layer, in `[0, 1)`.
    pub dropout_rate: f64,
    /// Apply one network to every node's own series (`m` inputs, `3 h`
    /// outputs) instead of mapping the whole panel at once. Normalization is
    /// then pooled over nodes.
    pub shared_nodes: bool,
}

impl Default for MlpArchitecture {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            dropout_rate: 0.0,
            shared_nodes: true,
        }
    }
}

/// Fully connected layer, weights stored `[outputs x inputs]` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn xavier(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs)
                .map(|_| rng.random_range(-limit..limit))
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    pub(crate) fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *y = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Per-node z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(nodes: usize) -> Self {
        Self {
            mean: vec![0.0; nodes],
            std: vec![1.0; nodes],
        }
    }

    /// Statistics over every input and target value of the given windows.
    pub fn fit(windows: &[WindowSample]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::InsufficientData("no windows to normalize".into()))?;
        let nodes = first.input.rows();
        let mut mean = vec![0.0; nodes];
        let mut std = vec![0.0; nodes];
        for node in 0..nodes {
            let values = || {
                windows
                    .iter()
                    .flat_map(move |w| w.input.row(node).iter().chain(w.target.row(node)))
            };
            let count = values().count() as f64;
            let m = values().sum::<f64>() / count;
            let var = values().map(|v| (v - m).powi(2)).sum::<f64>() / count;
            mean[node] = m;
            std[node] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    /// One mean and standard deviation over all nodes, repeated per node.
    pub fn fit_pooled(windows: &[WindowSample]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::InsufficientData("no windows to normalize".into()))?;
        let nodes = first.input.rows();
        let values = || {
            windows
                .iter()
                .flat_map(|w| w.input.as_slice().iter().chain(w.target.as_slice()))
        };
        let count = values().count() as f64;
        let m = values().sum::<f64>() / count;
        let sd = (values().map(|v| (v - m).powi(2)).sum::<f64>() / count).sqrt();
        Ok(Self {
            mean: vec![m; nodes],
            std: vec![if sd > 1e-12 { sd } else { 1.0 }; nodes],
        })
    }

    #[inline]
    pub fn normalize(&self, node: usize, value: f64) -> f64 {
        (value - self.mean[node]) / self.std[node]
    }

    #[inline]
    pub fn denormalize(&self, node: usize, value: f64) -> f64 {
        value * self.std[node] + self.mean[node]
    }
}

/// MLP mapping a normalized `[N x m]` window to `3 N h` outputs laid out as
/// `head * N * h + node * h + step` with heads (lower, point, upper).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpForecaster {
    pub(crate) node_count: usize,
    pub(crate) input_steps: usize,
    pub(crate) horizon: usize,
    pub(crate) layers: Vec<Dense>,
    pub(crate) dropout_rate: f64,
    pub(crate) normalizer: Normalizer,
    pub(crate) levels: QuantileLevels,
    pub(crate) seed: u64,
    #[serde(default)]
    pub(crate) shared_nodes: bool,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    layer_dims: Vec<usize>,
    #[serde(flatten)]
    model: MlpForecaster,
}

/// Scratch buffers for one forward/backward pass.
pub(crate) struct Workspace {
    /// `acts[0]` is the input, `acts[k + 1]` the output of layer `k`.
    pub acts: Vec<Vec<f64>>,
    pub mask: Vec<f64>,
    pub grads: Vec<Vec<f64>>,
}

impl MlpForecaster {
    pub fn new(
        arch: &MlpArchitecture,
        node_count: usize,
        input_steps: usize,
        horizon: usize,
        levels: QuantileLevels,
        seed: u64,
    ) -> Result<Self> {
        if node_count == 0 || input_steps == 0 || horizon == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&arch.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                arch.dropout_rate
            )));
        }
        if arch.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        let width = if arch.shared_nodes { 1 } else { node_count };
        let mut dims = vec![width * input_steps];
        dims.extend(&arch.hidden);
        dims.push(3 * width * horizon);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|d| Dense::xavier(d[0], d[1], &mut rng))
            .collect();
        Ok(Self {
            node_count,
            input_steps,
            horizon,
            layers,
            dropout_rate: arch.dropout_rate,
            normalizer: Normalizer::identity(node_count),
            levels,
            seed,
            shared_nodes: arch.shared_nodes,
        })
    }

    /// `[N m, hidden..., 3 N h]`, or `[m, hidden..., 3 h]` with shared nodes.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) -> Result<()> {
        if normalizer.mean.len() != self.node_count || normalizer.std.len() != self.node_count {
            return Err(Error::Contract("normalizer does not match node count".into()));
        }
        self.normalizer = normalizer;
        Ok(())
    }

    pub fn levels(&self) -> QuantileLevels {
        self.levels
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shared_nodes(&self) -> bool {
        self.shared_nodes
    }

    /// Nodes handled by one pass of the network.
    fn width(&self) -> usize {
        if self.shared_nodes {
            1
        } else {
            self.node_count
        }
    }

    pub fn input_dim(&self) -> usize {
        self.width() * self.input_steps
    }

    pub fn output_dim(&self) -> usize {
        3 * self.width() * self.horizon
    }

    pub(crate) fn workspace(&self) -> Workspace {
        let dims = self.layer_dims();
        Workspace {
            acts: dims.iter().map(|&d| vec![0.0; d]).collect(),
            mask: vec![1.0; dims[dims.len().saturating_sub(2)]],
            grads: dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    pub(crate) fn normalize_node(&self, input: &Matrix, node: usize, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(input.row(node)) {
            *o = self.normalizer.normalize(node, *v);
        }
    }

    pub(crate) fn normalize_input(&self, input: &Matrix, out: &mut [f64]) {
        for node in 0..self.node_count {
            for (k, v) in input.row(node).iter().enumerate() {
                out[node * self.input_steps + k] = self.normalizer.normalize(node, *v);
            }
        }
    }

    /// Forward pass on `ws.acts[0]`. With `dropout`, a fresh inverted-dropout
    /// mask is drawn for the last hidden layer.
    pub(crate) fn forward(&self, ws: &mut Workspace, dropout: Option<(f64, &mut dyn rand::RngCore)>) {
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(k + 1);
            let out = &mut tail[0];
            layer.forward(&head[k], out);
            if k < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        // The mask sits between the last hidden layer and the output layer,
        // so it is applied after the fact and the output layer recomputed.
        if let Some((rate, rng)) = dropout {
            if last > 0 {
                let keep = 1.0 / (1.0 - rate);
                for m in ws.mask.iter_mut() {
                    *m = if rng.random::<f64>() < rate { 0.0 } else { keep };
                }
                for (a, m) in ws.acts[last].iter_mut().zip(&ws.mask) {
                    *a *= m;
                }
                let (head, tail) = ws.acts.split_at_mut(last + 1);
                self.layers[last].forward(&head[last], &mut tail[0]);
            }
        } else {
            ws.mask.iter_mut().for_each(|m| *m = 1.0);
        }
    }

    /// Back-propagates `ws.grads[last + 1]` (gradient w.r.t. the outputs) and
    /// accumulates parameter gradients into `weight_grads` / `bias_grads`.
    pub(crate) fn backward(
        &self,
        ws: &mut Workspace,
        weight_grads: &mut [Vec<f64>],
        bias_grads: &mut [Vec<f64>],
    ) {
        let last = self.layers.len() - 1;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let (lower, upper) = ws.grads.split_at_mut(k + 1);
            let d_out = &upper[0];
            let d_in = &mut lower[k];
            d_in.iter_mut().for_each(|v| *v = 0.0);
            let x = &ws.acts[k];
            let gw = &mut weight_grads[k];
            let gb = &mut bias_grads[k];
            for (o, &g) in d_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let row = o * layer.inputs..(o + 1) * layer.inputs;
                let w = &layer.weights[row.clone()];
                for ((gwi, di), (&xi, &wi)) in gw[row].iter_mut().zip(d_in.iter_mut()).zip(x.iter().zip(w)) {
                    *gwi += g * xi;
                    *di += g * wi;
                }
            }
            if k == 0 {
                break;
            }
            // d_in is w.r.t. the (possibly masked) tanh activation of layer k-1.
            let a = &ws.acts[k];
            for (idx, d) in d_in.iter_mut().enumerate() {
                let (raw, m) = if k == last {
                    let m = ws.mask[idx];
                    if m == 0.0 {
                        *d = 0.0;
                        continue;
                    }
                    (a[idx] / m, m)
                } else {
                    (a[idx], 1.0)
                };
                *d *= m * (1.0 - raw * raw);
            }
        }
    }

    /// Writes the denormalized outputs for `nodes` into the three heads.
    fn decode_into(&self, out: &[f64], nodes: std::ops::Range<usize>, heads: &mut [Matrix; 3]) {
        let cells = nodes.len() * self.horizon;
        for (h, m) in heads.iter_mut().enumerate() {
            for (k, node) in nodes.clone().enumerate() {
                for step in 0..self.horizon {
                    let z = out[h * cells + k * self.horizon + step];
                    m.set(node, step, self.normalizer.denormalize(node, z));
                }
            }
        }
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        input.ensure_shape(self.node_count, self.input_steps, "model input")
    }

    fn run(
        &self,
        input: &Matrix,
        mut dropout: Option<(f64, &mut dyn rand::RngCore)>,
    ) -> Result<IntervalForecast> {
        self.check_input(input)?;
        let mut ws = self.workspace();
        let zeros = || Matrix::zeros(self.node_count, self.horizon);
        let mut heads = [zeros(), zeros(), zeros()];
        if self.shared_nodes {
            for node in 0..self.node_count {
                self.normalize_node(input, node, &mut ws.acts[0]);
                let pass = dropout.as_mut().map(|(rate, rng)| (*rate, &mut **rng as &mut dyn rand::RngCore));
                self.forward(&mut ws, pass);
                self.decode_into(ws.acts.last().expect("output layer"), node..node + 1, &mut heads);
            }
        } else {
            self.normalize_input(input, &mut ws.acts[0]);
            self.forward(&mut ws, dropout);
            self.decode_into(ws.acts.last().expect("output layer"), 0..self.node_count, &mut heads);
        }
        let [lower, point, upper] = heads;
        Ok(IntervalForecast {
            lower,
            point,
            upper,
        })
    }

    /// Deterministic forecast in data units, heads as produced.
    pub fn predict(&self, input: &Matrix) -> Result<IntervalForecast> {
        self.run(input, None)
    }

    /// One stochastic forward pass with dropout `rate` after the last hidden
    /// layer.
    pub fn predict_with_dropout(
        &self,
        input: &Matrix,
        rate: f64,
        rng: &mut dyn rand::RngCore,
    ) -> Result<IntervalForecast> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.run(input, Some((rate, rng)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let checkpoint = Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            layer_dims: self.layer_dims(),
            model: self.clone(),
        };
        std::fs::write(path, serde_json::to_vec(&checkpoint)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let checkpoint: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if checkpoint.format != CHECKPOINT_FORMAT {
            return Err(Error::Format {
                expected: CHECKPOINT_FORMAT.into(),
                found: checkpoint.format,
            });
        }
        let model = checkpoint.model;
        if model.layers.is_empty()
            || checkpoint.layer_dims != model.layer_dims()
            || model.layers.iter().any(|l| {
                l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs
            })
            || model.layer_dims()[0] != model.input_dim()
            || model.output_dim() != *model.layer_dims().last().expect("non-empty")
        {
            return Err(Error::Schema("inconsistent checkpoint dimensions".into()));
        }
        Ok(model)
    }
}

impl IntervalModel for MlpForecaster {
    fn node_count(&self) -> usize {
        self.node_count
    }

    fn input_steps(&self) -> usize {
        self.input_steps
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn predict_raw(&self, input: &Matrix) -> Result<IntervalForecast> {
        self.predict(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(hidden: Vec<usize>, dropout_rate: f64) -> MlpForecaster {
        MlpForecaster::new(
            &MlpArchitecture {
                hidden,
                dropout_rate,
                shared_nodes: false,
            },
            3,
            4,
            2,
            QuantileLevels::default(),
            7,
        )
        .unwrap()
    }

    fn input() -> Matrix {
        Matrix::from_vec(3, 4, (0..12).map(|v| (v as f64).sin() * 10.0 + 50.0).collect()).unwrap()
    }

    #[test]
    fn output_dimension_is_three_heads() {
        let m = model(vec![64, 64], 0.0);
        assert_eq!(m.layer_dims(), vec![12, 64, 64, 18]);
        assert_eq!(m.output_dim(), 18);
    }

    #[test]
    fn deterministic_without_dropout() {
        let m = model(vec![8], 0.3);
        assert_eq!(m.predict(&input()).unwrap(), m.predict(&input()).unwrap());
    }

    #[test]
    fn zero_network_outputs_training_mean() {
        let mut m = model(vec![5], 0.0);
        for layer in m.layers_mut() {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        m.set_normalizer(Normalizer {
            mean: vec![10.0, 20.0, 30.0],
            std: vec![2.0, 3.0, 4.0],
        })
        .unwrap();
        let f = m.predict(&input()).unwrap();
        for node in 0..3 {
            for step in 0..2 {
                let expected = 10.0 * (node + 1) as f64;
                assert_eq!(f.cell(node, step), (expected, expected, expected));
            }
        }
    }

    #[test]
    fn zero_rate_dropout_matches_deterministic() {
        let m = model(vec![8, 8], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            m.predict_with_dropout(&input(), 0.0, &mut rng).unwrap(),
            m.predict(&input()).unwrap()
        );
        let noisy = m.predict_with_dropout(&input(), 0.5, &mut rng).unwrap();
        assert_ne!(noisy, m.predict(&input()).unwrap());
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let m = model(vec![4], 0.0);
        assert!(matches!(m.predict(&Matrix::zeros(3, 5)), Err(Error::Contract(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = model(vec![16, 8], 0.2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let back = MlpForecaster::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.predict(&input()).unwrap(), m.predict(&input()).unwrap());
    }

    #[test]
    fn checkpoint_with_wrong_tag_is_refused() {
        let m = model(vec![4], 0.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace(CHECKPOINT_FORMAT, "something-else/v9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(MlpForecaster::load(&path), Err(Error::Format { .. })));
        assert!(matches!(
            MlpForecaster::load(dir.path().join("absent.json")),
            Err(Error::MissingArtifact(_))
        ));
    }

    fn shared_model() -> MlpForecaster {
        MlpForecaster::new(
            &MlpArchitecture {
                hidden: vec![8],
                dropout_rate: 0.0,
                shared_nodes: true,
            },
            3,
            4,
            2,
            QuantileLevels::default(),
            7,
        )
        .unwrap()
    }

    #[test]
    fn shared_layers_see_one_node() {
        let m = shared_model();
        assert!(m.shared_nodes());
        assert_eq!(m.layer_dims(), vec![4, 8, 6]);
    }

    #[test]
    fn shared_nodes_are_forecast_independently() {
        let mut m = shared_model();
        m.set_normalizer(Normalizer {
            mean: vec![50.0; 3],
            std: vec![10.0; 3],
        })
        .unwrap();
        let base = m.predict(&input()).unwrap();
        let mut changed = input();
        for step in 0..4 {
            changed.set(2, step, 0.0);
        }
        let other = m.predict(&changed).unwrap();
        for step in 0..2 {
            assert_eq!(base.cell(0, step), other.cell(0, step));
            assert_eq!(base.cell(1, step), other.cell(1, step));
            assert_ne!(base.cell(2, step), other.cell(2, step));
        }
        // Identical rows under a pooled normalizer give identical forecasts.
        let mut same = input();
        for step in 0..4 {
            same.set(1, step, input().get(0, step));
        }
        let f = m.predict(&same).unwrap();
        assert_eq!(f.cell(0, 1), f.cell(1, 1));
    }

    /// Finite-difference check of the hand-written backward pass.
    #[test]
    fn backward_matches_finite_differences() {
        let m = model(vec![6, 5], 0.0);
        let mut ws = m.workspace();
        m.normalize_input(&input(), &mut ws.acts[0]);
        // Loss = sum_o c_o * out_o with fixed coefficients.
        let coeffs: Vec<f64> = (0..m.output_dim()).map(|o| ((o * 7) % 5) as f64 - 2.0).collect();
        let loss = |model: &MlpForecaster| {
            let mut ws = model.workspace();
            model.normalize_input(&input(), &mut ws.acts[0]);
            model.forward(&mut ws, None);
            ws.acts.last().unwrap().iter().zip(&coeffs).map(|(a, c)| a * c).sum::<f64>()
        };
        m.forward(&mut ws, None);
        *ws.grads.last_mut().unwrap() = coeffs.clone();
        let mut gw: Vec<Vec<f64>> = m.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
        let mut gb: Vec<Vec<f64>> = m.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();
        m.backward(&mut ws, &mut gw, &mut gb);
        let h = 1e-6;
        for (k, layer) in m.layers.iter().enumerate() {
            for idx in (0..layer.weights.len()).step_by(7) {
                let mut plus = m.clone();
                plus.layers[k].weights[idx] += h;
                let mut minus = m.clone();
                minus.layers[k].weights[idx] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((fd - gw[k][idx]).abs() < 1e-5 * (1.0 + fd.abs()), "layer {k} w{idx}");
            }
            for idx in 0..layer.bias.len() {
                let mut plus = m.clone();
                plus.layers[k].bias[idx] += h;
                let mut minus = m.clone();
                minus.layers[k].bias[idx] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((fd - gb[k][idx]).abs() < 1e-5 * (1.0 + fd.abs()), "layer {k} b{idx}");
            }
        }
    }

    proptest! {
        #[test]
        fn normalization_round_trip(
            value in -1e4f64..1e4, mean in -100f64..100.0, std in 0.01f64..100.0
        ) {
            let n = Normalizer { mean: vec![mean], std: vec![std] };
            let back = n.denormalize(0, n.normalize(0, value));
            prop_assert!((back - value).abs() <= 1e-9 * value.abs().max(1.0));
        }
    }
}
