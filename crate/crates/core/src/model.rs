//! The stacked convLSTM predictive-coding network.
//!
//! Each level `l` keeps a representation `R_l`, a cell state `C_l` and an
//! error map `E_l`. One time step runs a top-down sweep updating every `R_l`
//! from the previous errors and the (already updated) level above, then a
//! bottom-up sweep that predicts each level's input `Â_l = ReLU(conv(R_l))`,
//! compares it with the actual input `A_l`, and pools the rectified error
//! into the next level's input.
//!
//! The level-0 prediction computed at step `t` is built only from frames
//! before `t`, so it is the network's forecast of frame `t`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Pixel intensity ceiling of the quantised spectrogram.
pub const PIXEL_MAX: f64 = 255.0;

/// Stock channel widths per level (A and R channels are equal).
pub const STOCK_CHANNELS: [usize; 4] = [1, 32, 64, 128];
/// Reduced widths for single-workstation experiments.
pub const DESK_CHANNELS: [usize; 4] = [1, 16, 32, 64];
/// Very small widths used by smoke tests.
pub const TINY_CHANNELS: [usize; 4] = [1, 4, 8, 8];

pub const PREDICTION_ONLY_LOSS: [f64; 4] = [1.0, 0.0, 0.0, 0.0];
pub const ALL_LAYER_LOSS: [f64; 4] = [1.0, 0.1, 0.1, 0.1];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// A-channel (and R-channel) width of every level; level 0 must be 1.
    pub channels: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    /// Loss weight per level.
    pub layer_loss: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: STOCK_CHANNELS.to_vec(),
            height: 128,
            width: 44,
            kernel: 3,
            layer_loss: PREDICTION_ONLY_LOSS.to_vec(),
        }
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            channels: DESK_CHANNELS.to_vec(),
            ..Default::default()
        }
    }

    pub fn num_layers(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("model needs at least one level".into()));
        }
        if self.channels[0] != 1 {
            return Err(Error::Config(format!(
                "level 0 must have 1 channel (one spectrogram plane), got {}",
                self.channels[0]
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.layer_loss.len() != self.channels.len() {
            return Err(Error::Config(format!(
                "{} layer loss weights for {} levels",
                self.layer_loss.len(),
                self.channels.len()
            )));
        }
        if self.layer_loss.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("layer loss weights must be finite and >= 0".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("kernel size must be odd".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("input dims must be positive".into()));
        }
        Ok(())
    }

    /// Spatial size of every level: halved per level, rounding up.
    pub fn level_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.num_layers());
        let (mut h, mut w) = (self.height, self.width);
        for _ in 0..self.num_layers() {
            dims.push((h, w));
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        dims
    }

    /// Input channels of the convLSTM at level `l`: errors plus feedback from above.
    fn lstm_input_channels(&self, l: usize) -> usize {
        let above = self.channels.get(l + 1).copied().unwrap_or(0);
        2 * self.channels[l] + above
    }
}

/// Gate layout of the packed kernels: input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmCell<T> {
    pub w_input: Tensor<T>,
    pub w_hidden: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvLstmCell<T> {
    pub fn zeros(in_channels: usize, hidden: usize, k: usize) -> Self {
        ConvLstmCell {
            w_input: Tensor::zeros(&[4 * hidden, in_channels, k, k]),
            w_hidden: Tensor::zeros(&[4 * hidden, hidden, k, k]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden_channels(&self) -> usize {
        self.bias.len() / 4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level<T> {
    pub cell: ConvLstmCell<T>,
    pub pred_w: Tensor<T>,
    pub pred_b: Tensor<T>,
    /// Maps the level below's error to this level's input (absent at level 0).
    pub target: Option<(Tensor<T>, Tensor<T>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredNetModel<T> {
    config: ModelConfig,
    levels: Vec<Level<T>>,
}

/// Recurrent state of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<T> {
    pub r: Tensor<T>,
    pub c: Tensor<T>,
    pub e: Tensor<T>,
}

impl<T: Real> PredNetModel<T> {
    /// All-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let k = config.kernel;
        let levels = (0..config.num_layers())
            .map(|l| {
                let a = config.channels[l];
                Level {
                    cell: ConvLstmCell::zeros(config.lstm_input_channels(l), a, k),
                    pred_w: Tensor::zeros(&[a, a, k, k]),
                    pred_b: Tensor::zeros(&[a]),
                    target: (l > 0).then(|| {
                        let below = 2 * config.channels[l - 1];
                        (Tensor::zeros(&[a, below, k, k]), Tensor::zeros(&[a]))
                    }),
                }
            })
            .collect();
        Ok(PredNetModel { config, levels })
    }

    /// Glorot-uniform kernels, zero biases except forget-gate bias 1.0.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for level in &mut model.levels {
            glorot(&mut level.cell.w_input, &mut rng);
            glorot(&mut level.cell.w_hidden, &mut rng);
            let hidden = level.cell.hidden_channels();
            level.cell.bias.data_mut()[hidden..2 * hidden].fill(T::one());
            glorot(&mut level.pred_w, &mut rng);
            if let Some((w, _)) = &mut level.target {
                glorot(w, &mut rng);
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn levels(&self) -> &[Level<T>] {
        &self.levels
    }

    /// Parameters in a fixed canonical order with stable names.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (l, level) in self.levels.iter().enumerate() {
            out.push((format!("layer{l}.cell.w_input"), &level.cell.w_input));
            out.push((format!("layer{l}.cell.w_hidden"), &level.cell.w_hidden));
            out.push((format!("layer{l}.cell.bias"), &level.cell.bias));
            out.push((format!("layer{l}.pred.weight"), &level.pred_w));
            out.push((format!("layer{l}.pred.bias"), &level.pred_b));
            if let Some((w, b)) = &level.target {
                out.push((format!("layer{l}.target.weight"), w));
                out.push((format!("layer{l}.target.bias"), b));
            }
        }
        out
    }

    /// Mutable parameters in the same order as [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for level in &mut self.levels {
            out.push(&mut level.cell.w_input);
            out.push(&mut level.cell.w_hidden);
            out.push(&mut level.cell.bias);
            out.push(&mut level.pred_w);
            out.push(&mut level.pred_b);
            if let Some((w, b)) = &mut level.target {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> PredNetModel<U> {
        let c = |t: &Tensor<T>| t.cast::<U>();
        PredNetModel {
            config: self.config.clone(),
            levels: self
                .levels
                .iter()
                .map(|lv| Level {
                    cell: ConvLstmCell {
                        w_input: c(&lv.cell.w_input),
                        w_hidden: c(&lv.cell.w_hidden),
                        bias: c(&lv.cell.bias),
                    },
                    pred_w: c(&lv.pred_w),
                    pred_b: c(&lv.pred_b),
                    target: lv.target.as_ref().map(|(w, b)| (c(w), c(b))),
                })
                .collect(),
        }
    }

    /// Zero recurrent state for every level.
    pub fn initial_state(&self) -> Vec<LayerState<T>> {
        self.config
            .level_dims()
            .iter()
            .zip(&self.config.channels)
            .map(|(&(h, w), &a)| LayerState {
                r: Tensor::zeros(&[a, h, w]),
                c: Tensor::zeros(&[a, h, w]),
                e: Tensor::zeros(&[2 * a, h, w]),
            })
            .collect()
    }

    fn check_state(&self, state: &[LayerState<T>]) -> Result<()> {
        let fresh = self.initial_state();
        if state.len() != fresh.len() {
            return Err(Error::ShapeMismatch(format!(
                "state has {} levels, model has {}",
                state.len(),
                fresh.len()
            )));
        }
        for (l, (s, f)) in state.iter().zip(&fresh).enumerate() {
            for (name, a, b) in [("R", &s.r, &f.r), ("C", &s.c, &f.c), ("E", &s.e, &f.e)] {
                if a.shape() != b.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "level {l} {name} has shape {:?}, model expects {:?}",
                        a.shape(),
                        b.shape()
                    )));
                }
            }
        }
        Ok(())
    }

    fn frame_tensor(&self, frame: &[f32]) -> Result<Tensor<T>> {
        let (h, w) = (self.config.height, self.config.width);
        if frame.len() != h * w {
            return Err(Error::ShapeMismatch(format!(
                "frame has {} pixels, model expects {h}x{w}",
                frame.len()
            )));
        }
        let inv = 1.0 / PIXEL_MAX;
        Tensor::new(
            vec![1, h, w],
            frame.iter().map(|&p| T::lit(p as f64 * inv)).collect(),
        )
    }

    /// Register every parameter on `tape` (same order as [`Self::named_params`]).
    pub fn register<'a>(&'a self, tape: &mut Tape<'a, T>) -> ParamVars {
        let vars = self.named_params().into_iter().map(|(_, t)| tape.param(t)).collect();
        ParamVars { vars }
    }

    /// One time step recorded on `tape`.
    ///
    /// `frame` is a `[1,H,W]` map in `[0,1]`. Returns the next state, the
    /// level-0 prediction made for this frame, and each level's error map.
    pub fn step_graph(
        &self,
        tape: &mut Tape<'_, T>,
        params: &ParamVars,
        state: &[StateVars],
        frame: Var,
    ) -> Result<StepVars> {
        let cfg = &self.config;
        let n = cfg.num_layers();
        let dims = cfg.level_dims();
        let mut p = params.vars.iter().copied();
        let mut level_params = Vec::with_capacity(n);
        for l in 0..n {
            let cell = [p.next().unwrap(), p.next().unwrap(), p.next().unwrap()];
            let pred = [p.next().unwrap(), p.next().unwrap()];
            let target = (l > 0).then(|| [p.next().unwrap(), p.next().unwrap()]);
            level_params.push((cell, pred, target));
        }

        // top-down
        let mut new_r: Vec<Option<Var>> = vec![None; n];
        let mut new_c: Vec<Option<Var>> = vec![None; n];
        for l in (0..n).rev() {
            let (h, w) = dims[l];
            let input = match new_r.get(l + 1).copied().flatten() {
                Some(r_above) => {
                    let up = tape.upsample2x(r_above, h, w)?;
                    tape.concat(&[state[l].e, up])?
                }
                None => state[l].e,
            };
            let [w_in, w_hid, bias] = level_params[l].0;
            let hidden = cfg.channels[l];
            let gx = tape.conv2d(input, w_in, Some(bias))?;
            let gh = tape.conv2d(state[l].r, w_hid, None)?;
            let gates = tape.add(gx, gh)?;
            let i = tape.slice_channels(gates, 0, hidden)?;
            let f = tape.slice_channels(gates, hidden, hidden)?;
            let o = tape.slice_channels(gates, 2 * hidden, hidden)?;
            let g = tape.slice_channels(gates, 3 * hidden, hidden)?;
            let i = tape.sigmoid(i);
            let f = tape.sigmoid(f);
            let o = tape.sigmoid(o);
            let g = tape.tanh(g);
            let keep = tape.mul(f, state[l].c)?;
            let write = tape.mul(i, g)?;
            let c = tape.add(keep, write)?;
            let tc = tape.tanh(c);
            let r = tape.mul(o, tc)?;
            new_r[l] = Some(r);
            new_c[l] = Some(c);
        }

        // bottom-up
        let mut a = frame;
        let mut errors = Vec::with_capacity(n);
        let mut prediction = None;
        for l in 0..n {
            let r = new_r[l].unwrap();
            let [pw, pb] = level_params[l].1;
            let conv = tape.conv2d(r, pw, Some(pb))?;
            let mut a_hat = tape.relu(conv);
            if l == 0 {
                a_hat = tape.clamp(a_hat, 0.0, 1.0);
                prediction = Some(a_hat);
            }
            let pos = tape.sub(a, a_hat)?;
            let neg = tape.sub(a_hat, a)?;
            let pos = tape.relu(pos);
            let neg = tape.relu(neg);
            let e = tape.concat(&[pos, neg])?;
            errors.push(e);
            if l + 1 < n {
                let [tw, tb] = level_params[l + 1].2.unwrap();
                let t = tape.conv2d(e, tw, Some(tb))?;
                let t = tape.relu(t);
                a = tape.maxpool2x2(t);
            }
        }

        let state = (0..n)
            .map(|l| StateVars {
                r: new_r[l].unwrap(),
                c: new_c[l].unwrap(),
                e: errors[l],
            })
            .collect();
        Ok(StepVars {
            state,
            prediction: prediction.unwrap(),
            errors,
        })
    }

    /// One inference step: consumes `state`, returns the new state, the
    /// level-0 prediction in pixel units `[0,255]`, and each level's mean error.
    pub fn step(&self, state: Vec<LayerState<T>>, frame: &[f32]) -> Result<StepOutput<T>> {
        self.check_state(&state)?;
        let frame = self.frame_tensor(frame)?;
        let mut tape = Tape::new();
        let params = self.register(&mut tape);
        let svars: Vec<StateVars> = state
            .into_iter()
            .map(|s| StateVars {
                r: tape.constant(s.r),
                c: tape.constant(s.c),
                e: tape.constant(s.e),
            })
            .collect();
        let fv = tape.constant(frame);
        let out = self.step_graph(&mut tape, &params, &svars, fv)?;
        let error_means = out.errors.iter().map(|&e| tape.value(e).mean().as_f64()).collect();
        let mut keep = vec![out.prediction];
        for s in &out.state {
            keep.extend([s.r, s.c, s.e]);
        }
        let mut values = tape.into_values(&keep).into_iter();
        let prediction = values.next().unwrap().map(|v| v * T::lit(PIXEL_MAX));
        let mut new_state = Vec::with_capacity(out.state.len());
        while let (Some(r), Some(c), Some(e)) = (values.next(), values.next(), values.next()) {
            new_state.push(LayerState { r, c, e });
        }
        Ok(StepOutput {
            state: new_state,
            prediction,
            error_means,
        })
    }

    /// Weight of the loss at time step `t` (the first step predicts from nothing).
    pub fn time_weight(t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            1.0
        }
    }

    /// Run a frame sequence from zero state without recording gradients.
    pub fn forward_sequence(&self, frames: &[&[f32]]) -> Result<SequenceOutput> {
        if frames.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let mut state = self.initial_state();
        let mut predictions = Vec::with_capacity(frames.len() - 1);
        let mut step_mse = Vec::with_capacity(frames.len() - 1);
        let mut loss = 0.0;
        for (t, frame) in frames.iter().enumerate() {
            let out = self.step(state, frame)?;
            state = out.state;
            let wt = Self::time_weight(t);
            if wt != 0.0 {
                loss += wt * weighted_layer_error(&self.config.layer_loss, &out.error_means);
            }
            if t > 0 {
                let pred: Vec<f32> = out.prediction.data().iter().map(|v| v.as_f64() as f32).collect();
                step_mse.push(pixel_mse(&pred, frame)?);
                predictions.push(pred);
            }
        }
        Ok(SequenceOutput {
            predictions,
            step_mse,
            loss,
        })
    }

    /// Loss and parameter gradients of one sequence via backpropagation through time.
    pub fn sequence_gradients(&self, frames: &[&[f32]]) -> Result<SequenceGradients<T>> {
        if frames.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let mut tape = Tape::new();
        let params = self.register(&mut tape);
        let mut state: Vec<StateVars> = self
            .initial_state()
            .into_iter()
            .map(|s| StateVars {
                r: tape.constant(s.r),
                c: tape.constant(s.c),
                e: tape.constant(s.e),
            })
            .collect();
        let mut terms = Vec::new();
        let mut step_mse = Vec::with_capacity(frames.len() - 1);
        for (t, frame) in frames.iter().enumerate() {
            let fv = tape.constant(self.frame_tensor(frame)?);
            let out = self.step_graph(&mut tape, &params, &state, fv)?;
            let wt = Self::time_weight(t);
            for (l, &e) in out.errors.iter().enumerate() {
                let lw = self.config.layer_loss[l];
                if wt != 0.0 && lw != 0.0 {
                    let m = tape.mean(e);
                    terms.push((m, wt * lw));
                }
            }
            if t > 0 {
                let pred: Vec<f32> = tape
                    .value(out.prediction)
                    .data()
                    .iter()
                    .map(|v| (v.as_f64() * PIXEL_MAX) as f32)
                    .collect();
                step_mse.push(pixel_mse(&pred, frame)?);
            }
            state = out.state;
        }
        let loss = tape.weighted_sum(&terms)?;
        let loss_value = tape.value(loss).item().as_f64();
        let mut grads = tape.backward(loss)?;
        let grads = params.vars.iter().map(|&v| grads.take_or_zero(v)).collect();
        Ok(SequenceGradients {
            loss: loss_value,
            grads,
            step_mse,
        })
    }
}

/// `Σ_l λ_l · mean(E_l)` for one time step.
pub fn weighted_layer_error(layer_loss: &[f64], error_means: &[f64]) -> f64 {
    layer_loss
        .iter()
        .zip(error_means)
        .filter(|(w, _)| **w != 0.0)
        .map(|(w, e)| w * e)
        .sum()
}

fn glorot<T: Real>(t: &mut Tensor<T>, rng: &mut ChaCha8Rng) {
    let shape = t.shape().to_vec();
    let receptive: usize = shape[2..].iter().product();
    let fan_in = shape[1] * receptive;
    let fan_out = shape[0] * receptive;
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in t.data_mut() {
        *v = T::lit(rng.random_range(-limit..limit));
    }
}

/// Parameter handles on a tape, in canonical order.
pub struct ParamVars {
    pub vars: Vec<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct StateVars {
    pub r: Var,
    pub c: Var,
    pub e: Var,
}

pub struct StepVars {
    pub state: Vec<StateVars>,
    pub prediction: Var,
    pub errors: Vec<Var>,
}

pub struct StepOutput<T> {
    pub state: Vec<LayerState<T>>,
    /// Level-0 prediction, `[1,H,W]`, pixel units.
    pub prediction: Tensor<T>,
    pub error_means: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SequenceOutput {
    /// `predictions[k]` forecasts frame `k + 1`.
    pub predictions: Vec<Vec<f32>>,
    /// Pixel MSE of `predictions[k]` against frame `k + 1`.
    pub step_mse: Vec<f64>,
    pub loss: f64,
}

pub struct SequenceGradients<T> {
    pub loss: f64,
    pub grads: Vec<Tensor<T>>,
    pub step_mse: Vec<f64>,
}

/// Mean squared difference in pixel units.
pub fn pixel_mse(pred: &[f32], target: &[f32]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "pixel_mse on {} and {} pixels",
            pred.len(),
            target.len()
        )));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            d * d
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            channels: vec![1, 2, 3],
            height: 8,
            width: 6,
            kernel: 3,
            layer_loss: vec![1.0, 0.0, 0.0],
        }
    }

    fn frame(h: usize, w: usize, seed: u32) -> Vec<f32> {
        (0..h * w)
            .map(|i| ((i as u32).wrapping_mul(2654435761u32).wrapping_add(seed) >> 24) as f32)
            .collect()
    }

    #[test]
    fn zero_model_predicts_zero() {
        let model = PredNetModel::<f64>::zeros(ModelConfig::desk()).unwrap();
        let a = frame(128, 44, 7);
        let out = model.step(model.initial_state(), &a).unwrap();
        assert!(out.prediction.data().iter().all(|&v| v == 0.0));
        let seq = model.forward_sequence(&[&a, &a]).unwrap();
        let want = a.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / a.len() as f64;
        assert!((seq.step_mse[0] - want).abs() < 1e-9 * want);
    }

    #[test]
    fn zero_cell_keeps_zero_state() {
        let model = PredNetModel::<f64>::zeros(small_config()).unwrap();
        let out = model.step(model.initial_state(), &frame(8, 6, 1)).unwrap();
        for s in &out.state {
            assert!(s.c.data().iter().all(|&v| v == 0.0));
            assert!(s.r.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn errors_are_nonnegative_and_prediction_in_range() {
        let model = PredNetModel::<f32>::init(small_config(), 3).unwrap();
        let mut state = model.initial_state();
        for t in 0..4 {
            let out = model.step(state, &frame(8, 6, t)).unwrap();
            for s in &out.state {
                assert!(s.e.data().iter().all(|&v| v >= 0.0));
            }
            assert!(out.prediction.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
            state = out.state;
        }
    }

    #[test]
    fn state_shapes_match_level_dims() {
        let model = PredNetModel::<f32>::zeros(ModelConfig::desk()).unwrap();
        let dims: Vec<_> = model.initial_state().iter().map(|s| s.r.chw()).collect();
        assert_eq!(dims, vec![(1, 128, 44), (16, 64, 22), (32, 32, 11), (64, 16, 6)]);
        let e: Vec<_> = model.initial_state().iter().map(|s| s.e.chw().0).collect();
        assert_eq!(e, vec![2, 32, 64, 128]);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let model = PredNetModel::<f32>::zeros(small_config()).unwrap();
        let mut state = model.initial_state();
        state[1].r = Tensor::zeros(&[5, 4, 3]);
        assert!(matches!(model.step(state, &frame(8, 6, 0)), Err(Error::ShapeMismatch(_))));
        let state = model.initial_state();
        assert!(model.step(state, &frame(8, 5, 0)).is_err());
    }

    #[test]
    fn forget_bias_initialised_to_one() {
        let model = PredNetModel::<f32>::init(small_config(), 1).unwrap();
        for lv in model.levels() {
            let h = lv.cell.hidden_channels();
            let b = lv.cell.bias.data();
            assert!(b[..h].iter().all(|&v| v == 0.0));
            assert!(b[h..2 * h].iter().all(|&v| v == 1.0));
            assert!(b[2 * h..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = PredNetModel::<f32>::init(small_config(), 9).unwrap();
        let b = PredNetModel::<f32>::init(small_config(), 9).unwrap();
        let c = PredNetModel::<f32>::init(small_config(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn single_prediction_loss_counts_only_second_step() {
        let model = PredNetModel::<f64>::zeros(small_config()).unwrap();
        let a = frame(8, 6, 2);
        let b = frame(8, 6, 5);
        let seq = model.forward_sequence(&[&a, &b]).unwrap();
        // zero model: E_0 = [A, 0] so mean(E_0) = mean(B/255) / 2
        let want = b.iter().map(|&v| v as f64 / 255.0).sum::<f64>() / (2.0 * b.len() as f64);
        assert!((seq.loss - want).abs() < 1e-12);
        let grads = model.sequence_gradients(&[&a, &b]).unwrap();
        assert!((grads.loss - want).abs() < 1e-12);
    }

    #[test]
    fn forward_sequence_needs_two_frames() {
        let model = PredNetModel::<f32>::zeros(small_config()).unwrap();
        let a = frame(8, 6, 0);
        assert!(model.forward_sequence(&[&a]).is_err());
        assert!(model.sequence_gradients(&[&a]).is_err());
    }

    #[test]
    fn pixel_mse_basics() {
        let a = vec![3.0f32; 5632];
        assert_eq!(pixel_mse(&a, &a).unwrap(), 0.0);
        let b: Vec<f32> = a.iter().map(|v| v + 1.0).collect();
        assert_eq!(pixel_mse(&a, &b).unwrap(), 1.0);
        assert!(pixel_mse(&a, &b[..10]).is_err());
    }
}
