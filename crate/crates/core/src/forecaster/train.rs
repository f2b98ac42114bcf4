use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::WindowSample;
use crate::error::{Error, Result};

use super::loss::{pinball_grad, pinball_unchecked};
use super::mlp::Workspace;
use super::{MlpForecaster, Normalizer, QuantileLevels};

/// Optimizer and stopping settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without an improvement larger than `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            min_delta: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch size, epoch budget and patience must be positive".into(),
            ));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config("patience exceeds max_epochs".into()));
        }
        if self.min_delta.is_nan() || self.min_delta < 0.0 {
            return Err(Error::Config("min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-epoch losses (normalized units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl LossHistory {
    pub fn epochs(&self) -> usize {
        self.train.len()
    }

    pub fn best_validation(&self) -> f64 {
        self.validation[self.best_epoch]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,validation_loss\n");
        for (e, (t, v)) in self.train.iter().zip(&self.validation).enumerate() {
            out.push_str(&format!("{e},{t},{v}\n"));
        }
        out
    }
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: vec![0.0; params],
            second: vec![0.0; params],
        }
    }

    /// Applies one update to the concatenation of `params`, with gradients
    /// in the same order.
    pub fn update<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut f64>,
        grads: impl IntoIterator<Item = &'a f64>,
    ) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Windows flattened into normalized model inputs and targets.
struct Prepared {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

fn prepare(model: &MlpForecaster, windows: &[WindowSample]) -> Result<Prepared> {
    let (n, m, h) = (model.node_count, model.input_steps, model.horizon);
    let mut inputs = Vec::with_capacity(windows.len());
    let mut targets = Vec::with_capacity(windows.len());
    for w in windows {
        w.input.ensure_shape(n, m, "training input")?;
        w.target.ensure_shape(n, h, "training target")?;
        if model.shared_nodes {
            // one sample per node
            for node in 0..n {
                let mut x = vec![0.0; m];
                model.normalize_node(&w.input, node, &mut x);
                inputs.push(x);
                targets.push(
                    w.target
                        .row(node)
                        .iter()
                        .map(|v| model.normalizer.normalize(node, *v))
                        .collect(),
                );
            }
            continue;
        }
        let mut x = vec![0.0; n * m];
        model.normalize_input(&w.input, &mut x);
        let mut y = vec![0.0; n * h];
        for node in 0..n {
            for step in 0..h {
                y[node * h + step] = model.normalizer.normalize(node, w.target.get(node, step));
            }
        }
        inputs.push(x);
        targets.push(y);
    }
    Ok(Prepared { inputs, targets })
}

/// Composite loss of the current output; writes its gradient (scaled by
/// `grad_scale`) into `ws.grads[last]` when requested.
fn sample_loss(
    ws: &mut Workspace,
    target: &[f64],
    heads: [f64; 3],
    grad_scale: Option<f64>,
) -> f64 {
    let cells = target.len();
    let out = ws.acts.last().expect("output");
    let grad = ws.grads.last_mut().expect("output grad");
    let mut total = 0.0;
    for (h, q) in heads.iter().enumerate() {
        for (c, &y) in target.iter().enumerate() {
            let idx = h * cells + c;
            total += pinball_unchecked(y, out[idx], *q);
            if let Some(scale) = grad_scale {
                grad[idx] = scale * pinball_grad(y, out[idx], *q);
            }
        }
    }
    total / cells as f64
}

fn evaluate(model: &MlpForecaster, data: &Prepared, ws: &mut Workspace) -> f64 {
    let heads = model.levels.heads();
    let mut total = 0.0;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        ws.acts[0].copy_from_slice(x);
        model.forward(ws, None);
        total += sample_loss(ws, y, heads, None);
    }
    total / data.inputs.len() as f64
}

/// Trains all three heads jointly on the composite pinball loss with Adam and
/// early stopping on the validation loss. Returns the parameters of the best
/// validation epoch.
///
/// Normalization statistics are refit on `train`. When `validation` is empty
/// the training loss drives early stopping.
pub fn train(
    mut model: MlpForecaster,
    train: &[WindowSample],
    validation: &[WindowSample],
    cfg: &TrainConfig,
    levels: QuantileLevels,
) -> Result<(MlpForecaster, LossHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    model.levels = levels;
    model.set_normalizer(if model.shared_nodes {
        Normalizer::fit_pooled(train)?
    } else {
        Normalizer::fit(train)?
    })?;
    let train_data = prepare(&model, train)?;
    let val_data = if validation.is_empty() {
        None
    } else {
        Some(prepare(&model, validation)?)
    };

    let heads = levels.heads();
    let param_count: usize = model
        .layers
        .iter()
        .map(|l| l.weights.len() + l.bias.len())
        .sum();
    let mut adam = Adam::new(cfg.learning_rate, param_count);
    let mut weight_grads: Vec<Vec<f64>> =
        model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
    let mut bias_grads: Vec<Vec<f64>> =
        model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();
    let mut ws = model.workspace();
    let mut order: Vec<usize> = (0..train_data.inputs.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let dropout = model.dropout_rate;

    let mut history = LossHistory {
        train: Vec::new(),
        validation: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best = f64::INFINITY;
    let mut best_model = model.clone();
    let mut stale = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            weight_grads.iter_mut().flatten().for_each(|g| *g = 0.0);
            bias_grads.iter_mut().flatten().for_each(|g| *g = 0.0);
            let cells = train_data.targets[0].len();
            let scale = 1.0 / (batch.len() * cells) as f64;
            for &i in batch {
                ws.acts[0].copy_from_slice(&train_data.inputs[i]);
                if dropout > 0.0 {
                    model.forward(&mut ws, Some((dropout, &mut dropout_rng)));
                } else {
                    model.forward(&mut ws, None);
                }
                epoch_loss += sample_loss(&mut ws, &train_data.targets[i], heads, Some(scale));
                model.backward(&mut ws, &mut weight_grads, &mut bias_grads);
            }
            let params = model
                .layers
                .iter_mut()
                .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()));
            let grads = weight_grads
                .iter()
                .zip(&bias_grads)
                .flat_map(|(w, b)| w.iter().chain(b.iter()));
            adam.update(params, grads);
        }
        let train_loss = epoch_loss / order.len() as f64;
        let val_loss = match &val_data {
            Some(data) => evaluate(&model, data, &mut ws),
            None => evaluate(&model, &train_data, &mut ws),
        };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: if train_loss.is_finite() { val_loss } else { train_loss },
            });
        }
        history.train.push(train_loss);
        history.validation.push(val_loss);
        if val_loss < best - cfg.min_delta {
            best = val_loss;
            best_model = model.clone();
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((best_model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, make_windows, SyntheticSpec};
    use crate::forecaster::{IntervalModel, MlpArchitecture};

    fn windows() -> Vec<WindowSample> {
        let spec = SyntheticSpec {
            node_count: 2,
            step_count: 300,
            seed: 3,
            ..SyntheticSpec::default()
        };
        make_windows(&generate_synthetic(&spec).unwrap(), 4, 2).unwrap()
    }

    fn fresh() -> MlpForecaster {
        MlpForecaster::new(
            &MlpArchitecture {
                hidden: vec![8],
                dropout_rate: 0.0,
                shared_nodes: false,
            },
            2,
            4,
            2,
            QuantileLevels::default(),
            1,
        )
        .unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            max_epochs: epochs,
            patience: epochs.min(10),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let w = windows();
        let (train_set, val_set) = w.split_at(200);
        let (a, ha) = train(fresh(), train_set, val_set, &cfg(15), QuantileLevels::default()).unwrap();
        let (b, hb) = train(fresh(), train_set, val_set, &cfg(15), QuantileLevels::default()).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let w = windows();
        let before = fresh();
        let config = TrainConfig {
            learning_rate: 0.0,
            ..cfg(3)
        };
        let (after, _) = train(before.clone(), &w[..100], &w[100..], &config, QuantileLevels::default()).unwrap();
        assert_eq!(after.layers(), before.layers());
    }

    #[test]
    fn history_respects_budget_and_improves() {
        let w = windows();
        let (model, history) = train(fresh(), &w[..200], &w[200..], &cfg(20), QuantileLevels::default()).unwrap();
        assert!(history.epochs() <= 20);
        assert!(history.best_validation() <= history.validation[0]);
        let f = model.forecast(&w[250].input).unwrap();
        assert!(f.lower.get(0, 0) <= f.upper.get(0, 0));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let w = windows();
        let bad = TrainConfig {
            patience: 300,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(fresh(), &w, &[], &bad, QuantileLevels::default()),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train(fresh(), &[], &[], &TrainConfig::default(), QuantileLevels::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let mut w = windows();
        w.truncate(50);
        let mut model = fresh();
        model.layers_mut()[0].weights[0] = f64::NAN;
        assert!(matches!(
            train(model, &w, &[], &cfg(2), QuantileLevels::default()),
            Err(Error::Divergence { epoch: 0, .. })
        ));
    }
}
