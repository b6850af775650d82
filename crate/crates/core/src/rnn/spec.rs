use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_gen::NUM_CLASSES;

/// Received symbols enter the network as (I, Q).
pub const INPUT_SIZE: usize = 2;
pub const OUTPUT_SIZE: usize = NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    /// Number of stacked gate blocks in the weight matrices.
    pub fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Lstm => "LSTM",
            CellKind::Gru => "GRU",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LSTM" => Ok(CellKind::Lstm),
            "GRU" => Ok(CellKind::Gru),
            _ => Err(Error::Config(format!("unknown cell kind `{s}`"))),
        }
    }
}

/// Input -> recurrent stack -> dropout -> linear + ReLU -> linear + softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub cell: CellKind,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub linear_size: usize,
    pub dropout_p: f64,
    /// Also apply dropout between stacked recurrent layers (off by default).
    #[serde(default)]
    pub dropout_between_layers: bool,
}

impl ModelSpec {
    pub fn new(cell: CellKind, num_layers: usize, hidden_size: usize, linear_size: usize) -> Self {
        Self { cell, num_layers, hidden_size, linear_size, dropout_p: 0.5, dropout_between_layers: false }
    }

    /// The five reference architectures, by model id 0..=4.
    pub fn reference(id: usize) -> Result<Self> {
        let (cell, layers, hidden, linear) = match id {
            0 => (CellKind::Lstm, 2, 128, 64),
            1 => (CellKind::Lstm, 3, 64, 32),
            2 => (CellKind::Gru, 2, 128, 64),
            3 => (CellKind::Gru, 3, 64, 32),
            4 => (CellKind::Gru, 2, 128, 128),
            _ => return Err(Error::Config(format!("no reference model with id {id} (expected 0..=4)"))),
        };
        Ok(Self::new(cell, layers, hidden, linear))
    }

    pub fn input_size(&self) -> usize {
        INPUT_SIZE
    }

    pub fn output_size(&self) -> usize {
        OUTPUT_SIZE
    }

    pub fn layer_input_size(&self, layer: usize) -> usize {
        if layer == 0 {
            INPUT_SIZE
        } else {
            self.hidden_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_size == 0 || self.linear_size == 0 {
            return Err(Error::Config("layer counts and sizes must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout probability {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}x{} linear {}", self.cell, self.num_layers, self.hidden_size, self.linear_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rows() {
        let m1 = ModelSpec::reference(1).unwrap();
        assert_eq!((m1.cell, m1.num_layers, m1.hidden_size, m1.linear_size), (CellKind::Lstm, 3, 64, 32));
        let m3 = ModelSpec::reference(3).unwrap();
        assert_eq!((m3.cell, m3.num_layers, m3.hidden_size, m3.linear_size), (CellKind::Gru, 3, 64, 32));
        let m4 = ModelSpec::reference(4).unwrap();
        assert_eq!((m4.cell, m4.num_layers, m4.hidden_size, m4.linear_size), (CellKind::Gru, 2, 128, 128));
        for id in 0..5 {
            let s = ModelSpec::reference(id).unwrap();
            assert_eq!(s.dropout_p, 0.5);
            s.validate().unwrap();
        }
        assert!(ModelSpec::reference(5).is_err());
    }

    #[test]
    fn invalid_specs() {
        let mut s = ModelSpec::new(CellKind::Gru, 1, 4, 4);
        s.dropout_p = 1.0;
        assert!(s.validate().is_err());
        assert!(ModelSpec::new(CellKind::Gru, 0, 4, 4).validate().is_err());
    }
}
