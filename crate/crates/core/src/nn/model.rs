//! Network architectures, parameter layout and batch forward/backward.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    global_avg_backward, global_avg_forward, maxpool1d_forward, maxpool2d_forward, maxpool_backward, relu_backward,
    relu_forward, softmax, softmax_cross_entropy, transpose, Conv1d, Conv2d, Dense, Gru, GruCache, Lstm, LstmCache,
};
use crate::error::{Error, Result};
use crate::record::{ArrhythmiaClass, N_LEADS};

pub const KERNEL_SIZES: [usize; 3] = [8, 5, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Cnn1d,
    Cnn1dGru,
    Gru,
    GruLstm,
    Lstm,
    Cnn2d,
}

impl ArchKind {
    pub const ALL: [ArchKind; 6] = [
        ArchKind::Cnn1d,
        ArchKind::Cnn1dGru,
        ArchKind::Gru,
        ArchKind::GruLstm,
        ArchKind::Lstm,
        ArchKind::Cnn2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Cnn1d => "cnn1d",
            ArchKind::Cnn1dGru => "cnn1d_gru",
            ArchKind::Gru => "gru",
            ArchKind::GruLstm => "gru_lstm",
            ArchKind::Lstm => "lstm",
            ArchKind::Cnn2d => "cnn2d",
        }
    }

    /// Row label in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ArchKind::Cnn1d => "1D CNN",
            ArchKind::Cnn1dGru => "1D CNN+GRU",
            ArchKind::Gru => "GRU",
            ArchKind::GruLstm => "GRU+LSTM",
            ArchKind::Lstm => "LSTM",
            ArchKind::Cnn2d => "CNN2D",
        }
    }

    pub fn is_image(self) -> bool {
        self == ArchKind::Cnn2d
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        ArchKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::domain(format!("unknown architecture {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Gru,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentSpec {
    pub cell: CellKind,
    pub units: usize,
}

impl RecurrentSpec {
    pub fn gru(units: usize) -> Self {
        RecurrentSpec {
            cell: CellKind::Gru,
            units,
        }
    }

    pub fn lstm(units: usize) -> Self {
        RecurrentSpec {
            cell: CellKind::Lstm,
            units,
        }
    }
}

/// Three conv blocks (conv → ReLU → max-pool 2), then either global average
/// pooling or a stack of recurrent layers whose last hidden state is kept,
/// optionally extended with auxiliary features, then a dense softmax head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub in_channels: usize,
    /// Image height for `cnn2d`; 1 for signal models.
    pub input_height: usize,
    /// Samples per lead, or image width for `cnn2d`.
    pub input_len: usize,
    pub kernel_sizes: Vec<usize>,
    pub filters: usize,
    pub recurrent: Vec<RecurrentSpec>,
    pub aux_features: usize,
    pub n_classes: usize,
}

impl ArchSpec {
    /// Layer sizes as tabulated for each system.
    pub fn new(kind: ArchKind) -> Self {
        let (filters, recurrent) = match kind {
            ArchKind::Cnn1d | ArchKind::Cnn2d => (64, vec![]),
            ArchKind::Cnn1dGru => (64, vec![RecurrentSpec::gru(128)]),
            ArchKind::Gru => (64, vec![RecurrentSpec::gru(64), RecurrentSpec::gru(128)]),
            ArchKind::GruLstm => (
                128,
                vec![
                    RecurrentSpec::gru(128),
                    RecurrentSpec::gru(128),
                    RecurrentSpec::lstm(128),
                    RecurrentSpec::lstm(128),
                ],
            ),
            ArchKind::Lstm => (
                128,
                vec![
                    RecurrentSpec::lstm(128),
                    RecurrentSpec::lstm(256),
                    RecurrentSpec::lstm(256),
                ],
            ),
        };
        let (in_channels, input_height, input_len) = if kind.is_image() {
            (1, crate::raster::IMAGE_HEIGHT, crate::raster::IMAGE_WIDTH)
        } else {
            (N_LEADS, 1, 5000)
        };
        ArchSpec {
            kind,
            in_channels,
            input_height,
            input_len,
            kernel_sizes: KERNEL_SIZES.to_vec(),
            filters,
            recurrent,
            aux_features: 0,
            n_classes: ArrhythmiaClass::COUNT,
        }
    }

    pub fn with_filters(mut self, filters: usize) -> Self {
        self.filters = filters;
        self
    }

    pub fn with_input_len(mut self, len: usize) -> Self {
        self.input_len = len;
        self
    }

    pub fn with_input_height(mut self, height: usize) -> Self {
        self.input_height = height;
        self
    }

    /// Replaces the unit count of every recurrent layer, keeping cell types.
    pub fn with_units(mut self, units: &[usize]) -> Self {
        for (r, &u) in self.recurrent.iter_mut().zip(units) {
            r.units = u;
        }
        self
    }

    pub fn with_aux_features(mut self, n: usize) -> Self {
        self.aux_features = n;
        self
    }

    pub fn input_size(&self) -> usize {
        self.in_channels * self.input_height * self.input_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_sizes != KERNEL_SIZES {
            return Err(Error::domain(format!(
                "kernel sizes must be {KERNEL_SIZES:?}, got {:?}",
                self.kernel_sizes
            )));
        }
        if self.n_classes != ArrhythmiaClass::COUNT {
            return Err(Error::domain(format!(
                "output dimension must be 5, got {}",
                self.n_classes
            )));
        }
        if self.filters == 0 || self.in_channels == 0 || self.recurrent.iter().any(|r| r.units == 0) {
            return Err(Error::domain("layer sizes must be positive"));
        }
        let pools = 1 << self.kernel_sizes.len();
        if self.input_len < pools || (self.kind.is_image() && self.input_height < pools) {
            return Err(Error::domain(format!("input too small for {pools}x pooling")));
        }
        if self.kind.is_image() && !self.recurrent.is_empty() {
            return Err(Error::domain("image models take no recurrent layers"));
        }
        if !self.kind.is_image() && self.input_height != 1 {
            return Err(Error::domain("signal models need input_height = 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Stage {
    Conv1d(Conv1d),
    Conv2d(Conv2d),
    Relu,
    Pool1d {
        channels: usize,
        length: usize,
    },
    Pool2d {
        channels: usize,
        height: usize,
        width: usize,
    },
    GlobalAvg {
        channels: usize,
        spatial: usize,
    },
    Transpose {
        rows: usize,
        cols: usize,
    },
    Gru(Gru, usize),
    Lstm(Lstm, usize),
    LastStep {
        steps: usize,
        units: usize,
    },
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamView {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Glorot fans for weight tensors; `None` for biases.
    pub fans: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    stages: Vec<(Stage, Range<usize>)>,
    head: Dense,
    head_range: Range<usize>,
    feature_len: usize,
    aux_len: usize,
    views: Vec<ParamView>,
    n_params: usize,
}

struct LayoutBuilder {
    offset: usize,
    views: Vec<ParamView>,
}

impl LayoutBuilder {
    fn take(&mut self, name: String, len: usize, fans: Option<(usize, usize)>) -> Range<usize> {
        let r = self.offset..self.offset + len;
        self.views.push(ParamView {
            name,
            offset: self.offset,
            len,
            fans,
        });
        self.offset += len;
        r
    }
}

impl Network {
    pub fn new(arch: &ArchSpec) -> Result<Self> {
        arch.validate()?;
        let mut lb = LayoutBuilder {
            offset: 0,
            views: Vec::new(),
        };
        let mut stages = Vec::new();
        let mut channels = arch.in_channels;
        let (mut height, mut len) = (arch.input_height, arch.input_len);

        for (b, &k) in arch.kernel_sizes.iter().enumerate() {
            let start = lb.offset;
            if arch.kind.is_image() {
                let conv = Conv2d {
                    in_channels: channels,
                    out_channels: arch.filters,
                    kernel: k,
                    height,
                    width: len,
                };
                lb.take(format!("conv2d_{b}.weight"), conv.weight_len(), Some(conv.fans()));
                lb.take(format!("conv2d_{b}.bias"), arch.filters, None);
                stages.push((Stage::Conv2d(conv), start..lb.offset));
                stages.push((Stage::Relu, 0..0));
                stages.push((
                    Stage::Pool2d {
                        channels: arch.filters,
                        height,
                        width: len,
                    },
                    0..0,
                ));
                height /= 2;
            } else {
                let conv = Conv1d {
                    in_channels: channels,
                    out_channels: arch.filters,
                    kernel: k,
                    length: len,
                };
                lb.take(format!("conv1d_{b}.weight"), conv.weight_len(), Some(conv.fans()));
                lb.take(format!("conv1d_{b}.bias"), arch.filters, None);
                stages.push((Stage::Conv1d(conv), start..lb.offset));
                stages.push((Stage::Relu, 0..0));
                stages.push((
                    Stage::Pool1d {
                        channels: arch.filters,
                        length: len,
                    },
                    0..0,
                ));
            }
            channels = arch.filters;
            len /= 2;
        }

        let feature_len = if arch.recurrent.is_empty() {
            stages.push((
                Stage::GlobalAvg {
                    channels,
                    spatial: height * len,
                },
                0..0,
            ));
            channels
        } else {
            stages.push((
                Stage::Transpose {
                    rows: channels,
                    cols: len,
                },
                0..0,
            ));
            let steps = len;
            let mut inputs = channels;
            for (i, r) in arch.recurrent.iter().enumerate() {
                let h = r.units;
                let start = lb.offset;
                match r.cell {
                    CellKind::Gru => {
                        lb.take(format!("gru_{i}.kernel"), 3 * h * inputs, Some((inputs, 3 * h)));
                        lb.take(format!("gru_{i}.recurrent"), 3 * h * h, Some((h, 3 * h)));
                        lb.take(format!("gru_{i}.bias"), 3 * h, None);
                        stages.push((Stage::Gru(Gru { inputs, units: h }, steps), start..lb.offset));
                    }
                    CellKind::Lstm => {
                        lb.take(format!("lstm_{i}.kernel"), 4 * h * inputs, Some((inputs, 4 * h)));
                        lb.take(format!("lstm_{i}.recurrent"), 4 * h * h, Some((h, 4 * h)));
                        lb.take(format!("lstm_{i}.bias"), 4 * h, None);
                        stages.push((Stage::Lstm(Lstm { inputs, units: h }, steps), start..lb.offset));
                    }
                }
                inputs = h;
            }
            stages.push((Stage::LastStep { steps, units: inputs }, 0..0));
            inputs
        };

        let head = Dense {
            inputs: feature_len + arch.aux_features,
            outputs: arch.n_classes,
        };
        let start = lb.offset;
        lb.take(
            "head.weight".into(),
            head.weight_len(),
            Some((head.inputs, head.outputs)),
        );
        lb.take("head.bias".into(), head.outputs, None);
        let head_range = start..lb.offset;

        Ok(Network {
            stages,
            head,
            head_range,
            feature_len,
            aux_len: arch.aux_features,
            n_params: lb.offset,
            views: lb.views,
        })
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    pub fn views(&self) -> &[ParamView] {
        &self.views
    }

    pub fn head_range(&self) -> Range<usize> {
        self.head_range.clone()
    }

    /// Glorot-uniform weights, zero biases, drawn from a ChaCha8 stream in
    /// layout order.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.n_params];
        for v in &self.views {
            if let Some((fan_in, fan_out)) = v.fans {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for w in &mut p[v.offset..v.offset + v.len] {
                    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                    *w = (2.0 * u - 1.0) * limit;
                }
            }
        }
        p
    }
}

enum Cache {
    Input(Vec<f64>),
    Pool(usize, Vec<usize>),
    Gru(Vec<f64>, GruCache),
    Lstm(Vec<f64>, LstmCache),
    Shape,
}

struct Tape {
    caches: Vec<Cache>,
    head_input: Vec<f64>,
}

/// One training or inference example. `input` is `[channels, length]` for
/// signal models or `[1, height, width]` for the image model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub aux: Vec<f64>,
    pub label: usize,
}

impl Network {
    fn check_example(&self, arch: &ArchSpec, ex: &Example) -> Result<()> {
        if ex.input.len() != arch.input_size() {
            return Err(Error::domain(format!(
                "input has {} values, architecture expects {}",
                ex.input.len(),
                arch.input_size()
            )));
        }
        if ex.aux.len() != self.aux_len {
            return Err(Error::domain(format!(
                "auxiliary feature vector has {} values, expected {}",
                ex.aux.len(),
                self.aux_len
            )));
        }
        if ex.label >= self.head.outputs {
            return Err(Error::domain(format!("label {} out of range", ex.label)));
        }
        Ok(())
    }

    fn forward_example(&self, params: &[f64], ex: &Example) -> (Vec<f64>, Tape) {
        let mut x = ex.input.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        for (stage, range) in &self.stages {
            let p = &params[range.clone()];
            let (y, cache) = match stage {
                Stage::Conv1d(c) => (c.forward(p, &x), Cache::Input(x)),
                Stage::Conv2d(c) => (c.forward(p, &x), Cache::Input(x)),
                Stage::Relu => (relu_forward(&x), Cache::Input(x)),
                Stage::Pool1d { channels, length } => {
                    let (y, arg) = maxpool1d_forward(&x, *channels, *length);
                    (y, Cache::Pool(x.len(), arg))
                }
                Stage::Pool2d {
                    channels,
                    height,
                    width,
                } => {
                    let (y, arg) = maxpool2d_forward(&x, *channels, *height, *width);
                    (y, Cache::Pool(x.len(), arg))
                }
                Stage::GlobalAvg { channels, spatial } => (global_avg_forward(&x, *channels, *spatial), Cache::Shape),
                Stage::Transpose { rows, cols } => (transpose(&x, *rows, *cols), Cache::Shape),
                Stage::Gru(g, steps) => {
                    let (y, c) = g.forward(p, &x, *steps);
                    (y, Cache::Gru(x, c))
                }
                Stage::Lstm(l, steps) => {
                    let (y, c) = l.forward(p, &x, *steps);
                    (y, Cache::Lstm(x, c))
                }
                Stage::LastStep { steps, units } => (x[(steps - 1) * units..].to_vec(), Cache::Shape),
            };
            caches.push(cache);
            x = y;
        }
        x.extend_from_slice(&ex.aux);
        let logits = self.head.forward(&params[self.head_range.clone()], &x);
        (logits, Tape { caches, head_input: x })
    }

    /// Accumulates `dlogits` back through the network into `grad`.
    fn backward_example(&self, params: &[f64], tape: Tape, dlogits: &[f64], grad: &mut [f64]) {
        let hr = self.head_range.clone();
        let dfeat = self
            .head
            .backward(&params[hr.clone()], &tape.head_input, dlogits, &mut grad[hr]);
        let mut dx = dfeat[..self.feature_len].to_vec();
        for ((stage, range), cache) in self.stages.iter().zip(tape.caches).rev() {
            let p = &params[range.clone()];
            let g = &mut grad[range.clone()];
            dx = match (stage, cache) {
                (Stage::Conv1d(c), Cache::Input(x)) => c.backward(p, &x, &dx, g),
                (Stage::Conv2d(c), Cache::Input(x)) => c.backward(p, &x, &dx, g),
                (Stage::Relu, Cache::Input(x)) => relu_backward(&x, &dx),
                (Stage::Pool1d { .. } | Stage::Pool2d { .. }, Cache::Pool(n, arg)) => maxpool_backward(&arg, &dx, n),
                (Stage::GlobalAvg { spatial, .. }, _) => global_avg_backward(&dx, *spatial),
                // transpose of [rows, cols] is undone by transposing [cols, rows]
                (Stage::Transpose { rows, cols }, _) => transpose(&dx, *cols, *rows),
                (Stage::Gru(gru, _), Cache::Gru(x, c)) => gru.backward(p, &x, &c, &dx, g),
                (Stage::Lstm(l, _), Cache::Lstm(x, c)) => l.backward(p, &x, &c, &dx, g),
                (Stage::LastStep { steps, units }, _) => {
                    let mut full = vec![0.0; steps * units];
                    full[(steps - 1) * units..].copy_from_slice(&dx);
                    full
                }
                _ => unreachable!("stage/cache mismatch"),
            };
        }
    }
}

/// Adam first and second moment estimates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub arch: ArchSpec,
    pub seed: u64,
    pub params: Vec<f64>,
    pub moments: AdamMoments,
    pub epoch: usize,
    pub best_val_loss: f64,
    network: Network,
}

/// Class probabilities and mean loss for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub probabilities: Vec<Vec<f64>>,
    pub loss: f64,
}

impl ModelState {
    pub fn build(arch: ArchSpec, seed: u64) -> Result<Self> {
        let network = Network::new(&arch)?;
        let params = network.init_params(seed);
        let n = params.len();
        Ok(ModelState {
            arch,
            seed,
            params,
            moments: AdamMoments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            },
            epoch: 0,
            best_val_loss: f64::INFINITY,
            network,
        })
    }

    /// Rebuilds a state around existing parameters (e.g. from a checkpoint).
    pub fn from_params(arch: ArchSpec, seed: u64, params: Vec<f64>) -> Result<Self> {
        let mut s = Self::build(arch, seed)?;
        if params.len() != s.params.len() {
            return Err(Error::format(format!(
                "parameter blob holds {} values, architecture needs {}",
                params.len(),
                s.params.len()
            )));
        }
        s.params = params;
        Ok(s)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check(&self, batch: &[Example]) -> Result<()> {
        batch
            .iter()
            .try_for_each(|ex| self.network.check_example(&self.arch, ex))
    }

    /// Softmax outputs for each example.
    pub fn forward(&self, batch: &[Example]) -> Result<Vec<Vec<f64>>> {
        self.check(batch)?;
        Ok(batch
            .iter()
            .map(|ex| softmax(&self.network.forward_example(&self.params, ex).0))
            .collect())
    }

    /// Probabilities plus mean cross-entropy against the example labels.
    pub fn evaluate(&self, batch: &[Example]) -> Result<BatchOutput> {
        self.check(batch)?;
        let mut loss = 0.0;
        let mut probabilities = Vec::with_capacity(batch.len());
        for ex in batch {
            let logits = self.network.forward_example(&self.params, ex).0;
            loss += softmax_cross_entropy(&logits, ex.label).0;
            probabilities.push(softmax(&logits));
        }
        Ok(BatchOutput {
            probabilities,
            loss: loss / batch.len().max(1) as f64,
        })
    }

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// every parameter. Examples are reduced in batch order.
    pub fn loss_and_gradient(&self, batch: &[Example]) -> Result<(f64, Vec<f64>)> {
        let (loss, grad, _) = self.gradient_step(batch)?;
        Ok((loss, grad))
    }

    /// Loss, gradient and the number of correctly classified examples.
    pub(crate) fn gradient_step(&self, batch: &[Example]) -> Result<(f64, Vec<f64>, usize)> {
        self.check(batch)?;
        if batch.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let mut correct = 0;
        for ex in batch {
            let (logits, tape) = self.network.forward_example(&self.params, ex);
            correct += usize::from(argmax(&logits) == ex.label);
            let (l, mut dlogits) = softmax_cross_entropy(&logits, ex.label);
            loss += l;
            dlogits.iter_mut().for_each(|d| *d *= scale);
            self.network.backward_example(&self.params, tape, &dlogits, &mut grad);
        }
        Ok((loss * scale, grad, correct))
    }

    pub fn backward(&self, batch: &[Example]) -> Result<Vec<f64>> {
        Ok(self.loss_and_gradient(batch)?.1)
    }

    /// Most probable class per example, lowest index on ties.
    pub fn predict(&self, batch: &[Example]) -> Result<Vec<(usize, Vec<f64>)>> {
        Ok(self.forward(batch)?.into_iter().map(|p| (argmax(&p), p)).collect())
    }
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}
