//! Reference systems used throughout the experiments.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::lqr::SystemParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "ref-3x3")]
    Ref3x3,
    #[serde(rename = "ref-5x5")]
    Ref5x5,
    #[serde(rename = "ref-10x10")]
    Ref10x10,
}

#[rustfmt::skip]
const A3: [f64; 9] = [
    0.3, 0.1, 0.2,
    0.1, 0.4, 0.0,
    0.0, 0.7, 0.6,
];
#[rustfmt::skip]
const B3: [f64; 9] = [
    0.5, 0.4, 0.5,
    0.6, 0.3, 0.0,
    0.3, 0.0, 0.2,
];

#[rustfmt::skip]
const A5: [f64; 25] = [
    0.3, 0.6, 0.2, 0.3, 0.1,
    0.0, 0.1, 0.4, 0.0, 0.6,
    0.1, 0.5, 0.3, 0.0, 0.2,
    0.4, 0.0, 0.3, 0.3, 0.0,
    0.3, 0.3, 0.1, 0.4, 0.4,
];
#[rustfmt::skip]
const B5: [f64; 25] = [
    0.5, 0.4, 0.2, 0.5, 0.4,
    0.6, 0.0, 0.3, 0.1, 0.3,
    0.5, 0.0, 0.0, 0.1, 0.2,
    0.1, 0.5, 0.0, 0.2, 0.4,
    0.2, 0.1, 0.6, 0.0, 0.0,
];

#[rustfmt::skip]
const A10: [f64; 100] = [
    0.6, 0.6, 0.5, 0.0, 0.1, 0.4, 0.3, 0.3, 0.3, 0.4,
    0.3, 0.2, 0.6, 0.0, 0.1, 0.0, 0.2, 0.5, 0.2, 0.0,
    0.0, 0.6, 0.0, 0.3, 0.4, 0.0, 0.5, 0.4, 0.1, 0.3,
    0.4, 0.1, 0.5, 0.6, 0.6, 0.5, 0.1, 0.1, 0.6, 0.0,
    0.5, 0.1, 0.2, 0.0, 0.1, 0.1, 0.1, 0.0, 0.6, 0.4,
    0.1, 0.2, 0.2, 0.1, 0.2, 0.0, 0.5, 0.2, 0.5, 0.7,
    0.3, 0.6, 0.1, 0.6, 0.1, 0.0, 0.3, 0.4, 0.6, 0.3,
    0.3, 0.0, 0.5, 0.2, 0.2, 0.7, 0.4, 0.1, 0.4, 0.3,
    0.0, 0.3, 0.3, 0.5, 0.3, 0.5, 0.1, 0.0, 0.1, 0.5,
    0.3, 0.0, 0.0, 0.5, 0.0, 0.2, 0.4, 0.4, 0.0, 0.5,
];
#[rustfmt::skip]
const B10: [f64; 100] = [
    0.5, 0.4, 0.2, 0.5, 0.4, 0.0, 0.8, 0.1, 0.3, 0.7,
    0.1, 0.4, 0.6, 0.0, 0.5, 0.0, 0.3, 0.1, 0.3, 0.2,
    0.0, 0.5, 0.0, 0.6, 0.6, 0.5, 0.0, 0.0, 0.1, 0.2,
    0.4, 0.4, 0.3, 0.5, 0.0, 0.1, 0.5, 0.0, 0.2, 0.4,
    0.2, 0.1, 0.4, 0.0, 0.0, 0.7, 0.1, 0.1, 0.5, 0.3,
    0.4, 0.5, 0.0, 0.6, 0.0, 0.4, 0.6, 0.1, 0.4, 0.5,
    0.3, 0.5, 0.0, 0.3, 0.1, 0.7, 0.2, 0.0, 0.4, 0.6,
    0.2, 0.0, 0.1, 0.6, 0.2, 0.7, 0.0, 0.1, 0.4, 0.4,
    0.0, 0.2, 0.2, 0.2, 0.0, 0.0, 0.0, 0.3, 0.1, 0.4,
    0.2, 0.5, 0.1, 0.3, 0.0, 0.5, 0.4, 0.4, 0.2, 0.3,
];

impl Preset {
    pub fn dim(self) -> usize {
        match self {
            Preset::Ref3x3 => 3,
            Preset::Ref5x5 => 5,
            Preset::Ref10x10 => 10,
        }
    }

    pub fn system(self) -> SystemParams {
        let n = self.dim();
        let (a, b): (&[f64], &[f64]) = match self {
            Preset::Ref3x3 => (&A3, &B3),
            Preset::Ref5x5 => (&A5, &B5),
            Preset::Ref10x10 => (&A10, &B10),
        };
        SystemParams::new(DMatrix::from_row_slice(n, n, a), DMatrix::from_row_slice(n, n, b))
            .expect("preset matrices are well formed")
    }

    /// Prior stiffness used with this system in the reference experiments.
    pub fn lambda(self) -> f64 {
        match self {
            Preset::Ref3x3 | Preset::Ref5x5 => 5.0,
            Preset::Ref10x10 => 10.0,
        }
    }

    /// Offset of the two-mode Gaussian mixture noise paired with this system.
    pub fn mixture_offset(self) -> f64 {
        match self {
            Preset::Ref3x3 => 0.5,
            Preset::Ref5x5 => 0.25,
            Preset::Ref10x10 => 0.125,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Ref3x3 => "ref-3x3",
            Preset::Ref5x5 => "ref-5x5",
            Preset::Ref10x10 => "ref-10x10",
        }
    }
}
