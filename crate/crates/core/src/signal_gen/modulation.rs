use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Modulation classes in classifier output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModulationClass {
    Bpsk = 0,
    Qpsk = 1,
    Psk8 = 2,
    Qam16 = 3,
    Qam64 = 4,
}

pub const NUM_CLASSES: usize = 5;

impl ModulationClass {
    pub const ALL: [ModulationClass; NUM_CLASSES] = [
        ModulationClass::Bpsk,
        ModulationClass::Qpsk,
        ModulationClass::Psk8,
        ModulationClass::Qam16,
        ModulationClass::Qam64,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Self> {
        Self::ALL.get(idx).copied()
    }

    pub fn order(self) -> usize {
        match self {
            ModulationClass::Bpsk => 2,
            ModulationClass::Qpsk => 4,
            ModulationClass::Psk8 => 8,
            ModulationClass::Qam16 => 16,
            ModulationClass::Qam64 => 64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModulationClass::Bpsk => "BPSK",
            ModulationClass::Qpsk => "QPSK",
            ModulationClass::Psk8 => "8PSK",
            ModulationClass::Qam16 => "16QAM",
            ModulationClass::Qam64 => "64QAM",
        }
    }

    /// Unit average energy constellation points.
    pub fn constellation(self) -> Vec<Complex64> {
        match self {
            ModulationClass::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            ModulationClass::Qpsk => psk(4, FRAC_PI_4),
            ModulationClass::Psk8 => psk(8, 0.0),
            ModulationClass::Qam16 => square_qam(4),
            ModulationClass::Qam64 => square_qam(8),
        }
    }
}

fn psk(order: usize, offset: f64) -> Vec<Complex64> {
    let step = 4.0 * FRAC_PI_2 / order as f64;
    (0..order)
        .map(|k| Complex64::from_polar(1.0, offset + step * k as f64))
        .collect()
}

fn square_qam(side: usize) -> Vec<Complex64> {
    // odd levels -(side-1)..(side-1); mean energy of the grid is 2(side^2-1)/3
    let levels: Vec<f64> = (0..side).map(|k| (2 * k) as f64 - (side - 1) as f64).collect();
    let scale = (2.0 * ((side * side - 1) as f64) / 3.0).sqrt().recip();
    let mut points = Vec::with_capacity(side * side);
    for &i in &levels {
        for &q in &levels {
            points.push(Complex64::new(i * scale, q * scale));
        }
    }
    points
}

impl fmt::Display for ModulationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModulationClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "");
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == norm || (norm == "PSK8" && *c == ModulationClass::Psk8))
            .ok_or_else(|| Error::Config(format!("unknown modulation class `{s}`")))
    }
}

/// Draws `count` i.i.d. uniform symbols from the class constellation.
pub fn map_symbols<R: Rng + ?Sized>(class: ModulationClass, count: usize, rng: &mut R) -> Vec<Complex64> {
    let points = class.constellation();
    (0..count).map(|_| points[rng.gen_range(0..points.len())]).collect()
}
