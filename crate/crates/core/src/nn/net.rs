use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Dense, Lstm, LstmStep};
use super::params::{BlockRole, LayoutBuilder, ParamVector};
use super::{check_len, NnError};

/// Recurrent front end: the first `steps * step_dim` inputs are read as a
/// sequence (oldest first) by a forward and a backward LSTM chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiLstmSpec {
    pub steps: usize,
    pub step_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoder {
    Mlp,
    BiLstm(BiLstmSpec),
}

/// Network shape. For a Bi-LSTM encoder the MLP sees
/// `[h_fwd(last step) | h_bwd(first step) | context]`, where context is the
/// tail of the input after the sequence. For an MLP encoder it sees the raw input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub encoder: Encoder,
    pub mlp_widths: Vec<usize>,
    pub activation: Activation,
    pub output_dim: usize,
    /// Adds a state-independent log-std block of size `output_dim`.
    pub log_std: bool,
}

impl NetSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NnError::Spec("input and output dims must be >= 1".into()));
        }
        if self.mlp_widths.contains(&0) {
            return Err(NnError::Spec("hidden widths must be >= 1".into()));
        }
        if let Encoder::BiLstm(b) = self.encoder {
            if b.steps == 0 || b.step_dim == 0 || b.hidden_dim == 0 {
                return Err(NnError::Spec("Bi-LSTM dims must be >= 1".into()));
            }
            if b.steps * b.step_dim > self.input_dim {
                return Err(NnError::Spec(format!(
                    "sequence of {}x{} exceeds input dim {}",
                    b.steps, b.step_dim, self.input_dim
                )));
            }
        }
        Ok(())
    }

    fn context_dim(&self) -> usize {
        match self.encoder {
            Encoder::Mlp => 0,
            Encoder::BiLstm(b) => self.input_dim - b.steps * b.step_dim,
        }
    }

    /// Width of the vector entering the first dense layer.
    pub fn feature_dim(&self) -> usize {
        match self.encoder {
            Encoder::Mlp => self.input_dim,
            Encoder::BiLstm(b) => 2 * b.hidden_dim + self.context_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub fwd_steps: Vec<LstmStep>,
    pub bwd_steps: Vec<LstmStep>,
    /// Input of every dense layer (the last entry feeds the output layer).
    pub dense_inputs: Vec<Vec<f64>>,
    pub dense_pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub spec: NetSpec,
    pub params: ParamVector,
    fwd: Option<Lstm>,
    bwd: Option<Lstm>,
    dense: Vec<Dense>,
    log_std: Option<usize>,
}

impl PolicyNet {
    /// Zero-initialised network.
    pub fn new(spec: NetSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let mut lb = LayoutBuilder::default();
        let (mut fwd, mut bwd) = (None, None);
        if let Encoder::BiLstm(b) = spec.encoder {
            for (name, slot) in [("fwd", &mut fwd), ("bwd", &mut bwd)] {
                let h = b.hidden_dim;
                *slot = Some(Lstm {
                    input_weight: lb.push(format!("{name}.w"), 4 * h, b.step_dim, BlockRole::LstmInputWeight),
                    recurrent_weight: lb.push(format!("{name}.u"), 4 * h, h, BlockRole::LstmRecurrentWeight),
                    bias: lb.push(format!("{name}.b"), 4 * h, 1, BlockRole::LstmBias),
                    inp: b.step_dim,
                    hidden: h,
                });
            }
        }
        let mut dense = Vec::new();
        let mut inp = spec.feature_dim();
        let widths = spec.mlp_widths.iter().copied().chain(std::iter::once(spec.output_dim));
        let n_layers = spec.mlp_widths.len() + 1;
        for (k, out) in widths.enumerate() {
            let last = k + 1 == n_layers;
            let name = if last { "out".to_string() } else { format!("mlp{k}") };
            dense.push(Dense {
                weight: lb.push(format!("{name}.w"), out, inp, BlockRole::DenseWeight),
                bias: lb.push(format!("{name}.b"), out, 1, BlockRole::Bias),
                inp,
                out,
                activation: if last { Activation::Identity } else { spec.activation },
            });
            inp = out;
        }
        let log_std = spec
            .log_std
            .then(|| lb.push("log_std", spec.output_dim, 1, BlockRole::LogStd));
        Ok(Self {
            params: ParamVector::zeros(lb.finish()),
            spec,
            fwd,
            bwd,
            dense,
            log_std,
        })
    }

    pub fn initialized<R: Rng>(spec: NetSpec, rng: &mut R, log_std_init: f64) -> Result<Self, NnError> {
        let mut net = Self::new(spec)?;
        net.params.initialize(rng, log_std_init);
        Ok(net)
    }

    /// Rebuilds a network from a spec and a previously flattened parameter vector.
    pub fn from_flat(spec: NetSpec, values: Vec<f64>) -> Result<Self, NnError> {
        let mut net = Self::new(spec)?;
        check_len("parameter vector", net.params.len(), values.len())?;
        net.params.values = values;
        net.params.validate()?;
        Ok(net)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn dense_layers(&self) -> &[Dense] {
        &self.dense
    }

    /// Forward and backward chains, when the encoder is recurrent.
    pub fn lstm_chains(&self) -> Option<(Lstm, Lstm)> {
        self.fwd.zip(self.bwd)
    }

    pub fn log_std_offset(&self) -> Option<usize> {
        self.log_std
    }

    pub fn log_std(&self) -> &[f64] {
        match self.log_std {
            Some(o) => &self.params.values[o..o + self.spec.output_dim],
            None => &[],
        }
    }

    /// Splits an input into the sequence steps and the trailing context.
    pub fn split_input<'a>(&self, x: &'a [f64]) -> (Vec<&'a [f64]>, &'a [f64]) {
        match self.spec.encoder {
            Encoder::Mlp => (Vec::new(), x),
            Encoder::BiLstm(b) => {
                let seq_len = b.steps * b.step_dim;
                (x[..seq_len].chunks(b.step_dim).collect(), &x[seq_len..])
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_cached(&self.params.values, x)?.output)
    }

    /// Forward pass with an explicit parameter slice (same layout as `self.params`).
    pub fn forward_cached(&self, params: &[f64], x: &[f64]) -> Result<ForwardCache, NnError> {
        check_len("network input", self.spec.input_dim, x.len())?;
        check_len("parameter vector", self.params.len(), params.len())?;
        let (seq, context) = self.split_input(x);
        let (mut fwd_steps, mut bwd_steps) = (Vec::new(), Vec::new());
        let mut feature = Vec::with_capacity(self.spec.feature_dim());
        if let Some((fwd, bwd)) = self.lstm_chains() {
            fwd_steps = fwd.forward(params, &seq);
            let rev: Vec<&[f64]> = seq.iter().rev().copied().collect();
            bwd_steps = bwd.forward(params, &rev);
            feature.extend_from_slice(&fwd_steps.last().expect("steps >= 1").h);
            // The backward chain's final state sits at sequence position 0.
            feature.extend_from_slice(&bwd_steps.last().expect("steps >= 1").h);
        }
        feature.extend_from_slice(context);
        let mut dense_inputs = Vec::with_capacity(self.dense.len());
        let mut dense_pre = Vec::with_capacity(self.dense.len());
        let mut h = feature;
        for layer in &self.dense {
            let (pre, act) = layer.forward(params, &h);
            dense_inputs.push(h);
            dense_pre.push(pre);
            h = act;
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("network output".into()));
        }
        Ok(ForwardCache {
            fwd_steps,
            bwd_steps,
            dense_inputs,
            dense_pre,
            output: h,
        })
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/doutput`. The log-std
    /// block is not touched; callers add its gradient directly.
    pub fn backward(&self, params: &[f64], cache: &ForwardCache, d_out: &[f64], grad: &mut [f64]) {
        let mut d = d_out.to_vec();
        for (k, layer) in self.dense.iter().enumerate().rev() {
            d = layer.backward(params, &cache.dense_inputs[k], &cache.dense_pre[k], &d, grad);
        }
        if let Some((fwd, bwd)) = self.lstm_chains() {
            let h = fwd.hidden;
            let n = cache.fwd_steps.len();
            let mut d_h = vec![vec![0.0; h]; n];
            d_h[n - 1].copy_from_slice(&d[..h]);
            fwd.backward(params, &cache.fwd_steps, &d_h, grad);
            d_h[n - 1].copy_from_slice(&d[h..2 * h]);
            bwd.backward(params, &cache.bwd_steps, &d_h, grad);
        }
    }
}

/// Runs both chains over `seq` and returns `[h_t^fwd | h_t^bwd]` for every
/// position `t`, where the backward chain reads the sequence reversed.
pub fn bilstm_forward(net: &PolicyNet, seq: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NnError> {
    let Some((fwd, bwd)) = net.lstm_chains() else {
        return Err(NnError::Spec("network has no recurrent encoder".into()));
    };
    if seq.is_empty() {
        return Err(NnError::Spec("sequence must have at least one step".into()));
    }
    for x in seq {
        check_len("sequence step", fwd.inp, x.len())?;
    }
    let params = &net.params.values;
    let refs: Vec<&[f64]> = seq.iter().map(Vec::as_slice).collect();
    let f = fwd.forward(params, &refs);
    let rev: Vec<&[f64]> = refs.iter().rev().copied().collect();
    let b = bwd.forward(params, &rev);
    let n = seq.len();
    Ok((0..n)
        .map(|t| {
            let mut out = f[t].h.clone();
            out.extend_from_slice(&b[n - 1 - t].h);
            out
        })
        .collect())
}
