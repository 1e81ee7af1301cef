use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NnError;

/// What a parameter block is used for; drives initialisation and pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockRole {
    DenseWeight,
    LstmInputWeight,
    LstmRecurrentWeight,
    Bias,
    /// LSTM gate biases, laid out `[input, forget, cell, output]`.
    LstmBias,
    LogStd,
}

impl BlockRole {
    pub fn is_weight(self) -> bool {
        matches!(
            self,
            Self::DenseWeight | Self::LstmInputWeight | Self::LstmRecurrentWeight
        )
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, Self::LstmInputWeight | Self::LstmRecurrentWeight)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub role: BlockRole,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter storage plus the block layout that partitions it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Vec<ParamBlock>,
}

impl ParamVector {
    pub fn zeros(layout: Vec<ParamBlock>) -> Self {
        let n = layout.iter().map(ParamBlock::len).sum();
        Self {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// A zero vector with the same layout, used to accumulate gradients.
    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.layout.iter().find(|b| b.name == name)
    }

    pub fn slice(&self, block: &ParamBlock) -> &[f64] {
        &self.values[block.range()]
    }

    /// Checks that the layout tiles the value vector exactly and every value is finite.
    pub fn validate(&self) -> Result<(), NnError> {
        let mut cursor = 0;
        for b in &self.layout {
            if b.offset != cursor {
                return Err(NnError::Layout(format!(
                    "block {} starts at {} but previous ended at {cursor}",
                    b.name, b.offset
                )));
            }
            cursor += b.len();
        }
        if cursor != self.values.len() {
            return Err(NnError::Layout(format!(
                "layout covers {cursor} values, vector has {}",
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("parameter vector".into()));
        }
        Ok(())
    }

    /// Uniform `+-1/sqrt(fan_in)` for weight matrices, zero biases with the
    /// LSTM forget-gate slice set to `+1`, and `log_std_init` for log-stds.
    pub fn initialize<R: Rng>(&mut self, rng: &mut R, log_std_init: f64) {
        for b in &self.layout {
            let range = b.range();
            match b.role {
                role if role.is_weight() => {
                    let bound = 1.0 / (b.cols.max(1) as f64).sqrt();
                    for v in &mut self.values[range] {
                        *v = rng.random_range(-bound..=bound);
                    }
                }
                BlockRole::LstmBias => {
                    let hidden = b.len() / 4;
                    for (i, v) in self.values[range].iter_mut().enumerate() {
                        *v = if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 };
                    }
                }
                BlockRole::LogStd => self.values[range].fill(log_std_init),
                _ => self.values[range].fill(0.0),
            }
        }
    }

    /// Indices of every weight-matrix entry, optionally restricted to dense layers.
    pub fn prunable_indices(&self, dense_only: bool) -> Vec<usize> {
        self.layout
            .iter()
            .filter(|b| b.role.is_weight() && !(dense_only && b.role.is_recurrent()))
            .flat_map(|b| b.range())
            .collect()
    }
}

/// Appends blocks with consecutive offsets.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    blocks: Vec<ParamBlock>,
    offset: usize,
}

impl LayoutBuilder {
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, role: BlockRole) -> usize {
        let offset = self.offset;
        self.blocks.push(ParamBlock {
            name: name.into(),
            rows,
            cols,
            offset,
            role,
        });
        self.offset += rows * cols;
        offset
    }

    pub fn finish(self) -> Vec<ParamBlock> {
        self.blocks
    }
}
