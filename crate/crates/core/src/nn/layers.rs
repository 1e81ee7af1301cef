use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Tanh => x.tanh(),
            Self::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation.
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Self::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Self::Identity => 1.0,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Offsets of one fully connected layer inside a flat parameter vector.
/// Weights are row-major `out x inp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub inp: usize,
    pub out: usize,
    pub activation: Activation,
}

impl Dense {
    /// Returns `(pre_activation, activation)`.
    pub fn forward(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.inp);
        let w = &params[self.weight..self.weight + self.out * self.inp];
        let b = &params[self.bias..self.bias + self.out];
        let pre: Vec<f64> = (0..self.out)
            .map(|i| {
                let row = &w[i * self.inp..(i + 1) * self.inp];
                b[i] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect();
        let act = pre.iter().map(|z| self.activation.apply(*z)).collect();
        (pre, act)
    }

    /// Accumulates parameter gradients and returns `dL/dx`, given `dL/d(activation)`.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        pre: &[f64],
        d_act: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let d_pre: Vec<f64> = d_act
            .iter()
            .zip(pre)
            .map(|(d, z)| d * self.activation.derivative(*z))
            .collect();
        let mut dx = vec![0.0; self.inp];
        for (i, dz) in d_pre.iter().enumerate() {
            if *dz == 0.0 {
                continue;
            }
            let row = self.weight + i * self.inp;
            for j in 0..self.inp {
                grad[row + j] += dz * x[j];
                dx[j] += params[row + j] * dz;
            }
            grad[self.bias + i] += dz;
        }
        dx
    }
}

/// Offsets of one LSTM chain. Gate blocks are stacked `[input, forget, cell, output]`:
/// `W` is `4H x inp`, `U` is `4H x H`, bias is `4H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lstm {
    pub input_weight: usize,
    pub recurrent_weight: usize,
    pub bias: usize,
    pub inp: usize,
    pub hidden: usize,
}

/// Per-step activations kept for back-propagation through time.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    pub input: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Gate pre-activations, `4H`.
    pub z: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl Lstm {
    /// Runs the chain over `inputs` in the given order from zero state.
    pub fn forward(&self, params: &[f64], inputs: &[&[f64]]) -> Vec<LstmStep> {
        let hdim = self.hidden;
        let mut h = vec![0.0; hdim];
        let mut c = vec![0.0; hdim];
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            debug_assert_eq!(x.len(), self.inp);
            let mut z = params[self.bias..self.bias + 4 * hdim].to_vec();
            for (row, zr) in z.iter_mut().enumerate() {
                let w = self.input_weight + row * self.inp;
                let u = self.recurrent_weight + row * hdim;
                *zr += params[w..w + self.inp]
                    .iter()
                    .zip(x.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
                *zr += params[u..u + hdim]
                    .iter()
                    .zip(&h)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            let i: Vec<f64> = z[..hdim].iter().map(|v| sigmoid(*v)).collect();
            let f: Vec<f64> = z[hdim..2 * hdim].iter().map(|v| sigmoid(*v)).collect();
            let g: Vec<f64> = z[2 * hdim..3 * hdim].iter().map(|v| v.tanh()).collect();
            let o: Vec<f64> = z[3 * hdim..].iter().map(|v| sigmoid(*v)).collect();
            let c_new: Vec<f64> = (0..hdim).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
            let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
            let h_new: Vec<f64> = (0..hdim).map(|k| o[k] * tanh_c[k]).collect();
            steps.push(LstmStep {
                input: x.to_vec(),
                h_prev: h,
                c_prev: c,
                z,
                i,
                f,
                g,
                o,
                c: c_new.clone(),
                tanh_c,
                h: h_new.clone(),
            });
            h = h_new;
            c = c_new;
        }
        steps
    }

    /// Back-propagation through time. `d_h[t]` is the loss gradient arriving at
    /// step `t`'s hidden output from outside the chain. Returns `dL/dx_t`.
    pub fn backward(
        &self,
        params: &[f64],
        steps: &[LstmStep],
        d_h: &[Vec<f64>],
        grad: &mut [f64],
    ) -> Vec<Vec<f64>> {
        let hdim = self.hidden;
        let mut dh_next = vec![0.0; hdim];
        let mut dc_next = vec![0.0; hdim];
        let mut dxs = vec![vec![0.0; self.inp]; steps.len()];
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            let mut dz = vec![0.0; 4 * hdim];
            for k in 0..hdim {
                let dh = d_h[t][k] + dh_next[k];
                let d_o = dh * s.tanh_c[k];
                let dc = dc_next[k] + dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                let d_i = dc * s.g[k];
                let d_g = dc * s.i[k];
                let d_f = dc * s.c_prev[k];
                dc_next[k] = dc * s.f[k];
                dz[k] = d_i * s.i[k] * (1.0 - s.i[k]);
                dz[hdim + k] = d_f * s.f[k] * (1.0 - s.f[k]);
                dz[2 * hdim + k] = d_g * (1.0 - s.g[k] * s.g[k]);
                dz[3 * hdim + k] = d_o * s.o[k] * (1.0 - s.o[k]);
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (row, d) in dz.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                grad[self.bias + row] += d;
                let w = self.input_weight + row * self.inp;
                for j in 0..self.inp {
                    grad[w + j] += d * s.input[j];
                    dxs[t][j] += params[w + j] * d;
                }
                let u = self.recurrent_weight + row * hdim;
                for j in 0..hdim {
                    grad[u + j] += d * s.h_prev[j];
                    dh_next[j] += params[u + j] * d;
                }
            }
        }
        dxs
    }
}
