//! Angular-momentum channels of the 2D/3D Coulomb-Dirac operator.
//!
//! A channel is one invariant sector of the operator after the partial-wave
//! decomposition: indexed by k in Z for n = 2 and by (l, s) with l in N_0,
//! s = +-1/2 for n = 3 (the azimuthal label m is a pure degeneracy count and
//! is never carried). Each channel owns a relativistic quantum number kappa,
//! a parity class, the shift map T_n connecting upper and lower spinor
//! sectors, and a coupling constant built from the Kato constant c_n.

use crate::error::{Error, Result};
use crate::kernel::kato_constant;
use serde::{Deserialize, Serialize};

/// Spatial dimension of the operator, n in {2, 3}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Two,
    Three,
}

impl Dimension {
    pub fn n(self) -> u8 {
        match self {
            Dimension::Two => 2,
            Dimension::Three => 3,
        }
    }

    /// Critical Coulomb coupling 1/(4-n): 1/2 in 2D, 1 in 3D.
    pub fn critical_coupling(self) -> f64 {
        1.0 / (4 - self.n()) as f64
    }

    pub fn from_n(n: u8) -> Result<Self> {
        match n {
            2 => Ok(Dimension::Two),
            3 => Ok(Dimension::Three),
            _ => Err(Error::Config(format!("dimension must be 2 or 3, got {n}"))),
        }
    }
}

/// Spin label s = -1/2 or +1/2 (3D only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Spin {
    Down,
    Up,
}

impl Spin {
    pub fn value(self) -> f64 {
        match self {
            Spin::Down => -0.5,
            Spin::Up => 0.5,
        }
    }

    pub fn flipped(self) -> Spin {
        match self {
            Spin::Down => Spin::Up,
            Spin::Up => Spin::Down,
        }
    }
}

/// Raw channel index: integer k for n = 2, (l, s) for n = 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelIndex {
    Planar { k: i64 },
    Spatial { l: u32, s: Spin },
}

/// Parity class membership (the T^+/T^- split of the index set).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    Plus,
    Minus,
}

impl Parity {
    pub fn flipped(self) -> Parity {
        match self {
            Parity::Plus => Parity::Minus,
            Parity::Minus => Parity::Plus,
        }
    }
}

fn check_index(dim: Dimension, index: ChannelIndex) -> Result<()> {
    match (dim, index) {
        (Dimension::Two, ChannelIndex::Planar { .. }) => Ok(()),
        (Dimension::Three, ChannelIndex::Spatial { l, s }) => {
            if l == 0 && s == Spin::Down {
                Err(Error::InvalidChannel(
                    "(l=0, s=-1/2) is not a valid 3D channel".into(),
                ))
            } else {
                Ok(())
            }
        }
        _ => Err(Error::InvalidChannel(format!(
            "index {index:?} does not match dimension {dim:?}"
        ))),
    }
}

/// Relativistic quantum number: kappa = k + 1/2 (2D), kappa = 2sl + s + 1/2 (3D).
///
/// Half-integer and never zero in 2D, a nonzero integer in 3D.
pub fn kappa_of(dim: Dimension, index: ChannelIndex) -> Result<f64> {
    check_index(dim, index)?;
    Ok(match index {
        ChannelIndex::Planar { k } => k as f64 + 0.5,
        ChannelIndex::Spatial { l, s } => 2.0 * s.value() * l as f64 + s.value() + 0.5,
    })
}

/// The bijective shift map: T_2 k = k + 1 and T_3 (l, s) = (l + 2s, -s).
///
/// T_3 is an involution; T_2 is inverted by k - 1.
pub fn apply_t(dim: Dimension, index: ChannelIndex) -> Result<ChannelIndex> {
    check_index(dim, index)?;
    Ok(match index {
        ChannelIndex::Planar { k } => ChannelIndex::Planar { k: k + 1 },
        ChannelIndex::Spatial { l, s } => {
            let shift: i64 = if s == Spin::Up { 1 } else { -1 };
            ChannelIndex::Spatial {
                l: (l as i64 + shift).max(0) as u32,
                s: s.flipped(),
            }
        }
    })
}

/// Inverse of `apply_t`.
pub fn apply_t_inv(dim: Dimension, index: ChannelIndex) -> Result<ChannelIndex> {
    check_index(dim, index)?;
    match index {
        ChannelIndex::Planar { k } => Ok(ChannelIndex::Planar { k: k - 1 }),
        ChannelIndex::Spatial { .. } => apply_t(dim, index),
    }
}

/// Parity class: plus iff k is even (2D), plus iff s = +1/2 (3D).
pub fn parity_of(dim: Dimension, index: ChannelIndex) -> Result<Parity> {
    check_index(dim, index)?;
    Ok(match index {
        ChannelIndex::Planar { k } => {
            if k.rem_euclid(2) == 0 {
                Parity::Plus
            } else {
                Parity::Minus
            }
        }
        ChannelIndex::Spatial { s, .. } => {
            if s == Spin::Up {
                Parity::Plus
            } else {
                Parity::Minus
            }
        }
    })
}

/// Coupling constant c_{n,j}: c_n on the plus class, 1/c_n on the minus class.
pub fn coupling_c(dim: Dimension, index: ChannelIndex) -> Result<f64> {
    let c = kato_constant(dim);
    Ok(match parity_of(dim, index)? {
        Parity::Plus => c,
        Parity::Minus => 1.0 / c,
    })
}

/// One angular-momentum sector of the operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub dim: Dimension,
    pub index: ChannelIndex,
    pub kappa: f64,
    pub parity: Parity,
    /// Multiplicity carried by the suppressed azimuthal label: 1 in 2D, 2|kappa| in 3D.
    pub degeneracy: u32,
}

impl Channel {
    pub fn new(dim: Dimension, index: ChannelIndex) -> Result<Self> {
        let kappa = kappa_of(dim, index)?;
        let parity = parity_of(dim, index)?;
        let degeneracy = match dim {
            Dimension::Two => 1,
            Dimension::Three => (2.0 * kappa.abs()).round() as u32,
        };
        Ok(Channel {
            dim,
            index,
            kappa,
            parity,
            degeneracy,
        })
    }

    /// Channel with the smallest |kappa| hosting given sign (2D kappa = +-1/2, 3D kappa = +-1).
    pub fn from_kappa(dim: Dimension, kappa: f64) -> Result<Self> {
        let index = match dim {
            Dimension::Two => {
                let k = kappa - 0.5;
                if (k - k.round()).abs() > 1e-12 {
                    return Err(Error::InvalidChannel(format!(
                        "2D kappa must be a half-integer, got {kappa}"
                    )));
                }
                ChannelIndex::Planar { k: k.round() as i64 }
            }
            Dimension::Three => {
                let ik = kappa.round();
                if (kappa - ik).abs() > 1e-12 || ik == 0.0 {
                    return Err(Error::InvalidChannel(format!(
                        "3D kappa must be a nonzero integer, got {kappa}"
                    )));
                }
                if ik > 0.0 {
                    ChannelIndex::Spatial {
                        l: ik as u32 - 1,
                        s: Spin::Up,
                    }
                } else {
                    ChannelIndex::Spatial {
                        l: (-ik) as u32,
                        s: Spin::Down,
                    }
                }
            }
        };
        Channel::new(dim, index)
    }

    /// Order of the momentum-space Coulomb kernel q_j acting on this channel:
    /// |k| - 1/2 in 2D, l in 3D.
    pub fn coulomb_order(&self) -> f64 {
        match self.index {
            ChannelIndex::Planar { k } => k.unsigned_abs() as f64 - 0.5,
            ChannelIndex::Spatial { l, .. } => l as f64,
        }
    }

    /// The T_n-image channel.
    pub fn shifted(&self) -> Channel {
        let idx = apply_t(self.dim, self.index).expect("valid index stays valid under T");
        Channel::new(self.dim, idx).expect("T_n maps valid channels to valid channels")
    }

    pub fn coupling(&self) -> f64 {
        coupling_c(self.dim, self.index).expect("channel index already validated")
    }

    /// Short human-readable label, e.g. `k=-1 (kappa=-1/2)`.
    pub fn label(&self) -> String {
        match self.index {
            ChannelIndex::Planar { k } => format!("k={k} (kappa={})", self.kappa),
            ChannelIndex::Spatial { l, s } => format!(
                "(l={l}, s={}) (kappa={})",
                if s == Spin::Up { "+1/2" } else { "-1/2" },
                self.kappa
            ),
        }
    }
}

/// All channels with |kappa| <= kappa_max, sorted by |kappa| ascending with
/// the negative-kappa member of each pair first. The order is fixed so that
/// merged eigenvalue lists are deterministic.
pub fn enumerate_channels(dim: Dimension, kappa_max: f64) -> Vec<Channel> {
    let mut out = Vec::new();
    match dim {
        Dimension::Two => {
            // kappa = m + 1/2 for m in Z: |kappa| in {1/2, 3/2, ...}
            let mut half = 0.5;
            while half <= kappa_max + 1e-12 {
                for kappa in [-half, half] {
                    let k = (kappa - 0.5).round() as i64;
                    out.push(
                        Channel::new(dim, ChannelIndex::Planar { k })
                            .expect("constructed index is valid"),
                    );
                }
                half += 1.0;
            }
        }
        Dimension::Three => {
            let mut m = 1u32;
            while (m as f64) <= kappa_max + 1e-12 {
                out.push(
                    Channel::new(dim, ChannelIndex::Spatial { l: m, s: Spin::Down })
                        .expect("l >= 1 with s = -1/2 is valid"),
                );
                out.push(
                    Channel::new(dim, ChannelIndex::Spatial { l: m - 1, s: Spin::Up })
                        .expect("s = +1/2 is valid for any l"),
                );
                m += 1;
            }
        }
    }
    out
}

/// Smallest |kappa| strictly above `kappa_max`, i.e. the first truncated channel.
pub fn next_kappa_beyond(dim: Dimension, kappa_max: f64) -> f64 {
    match dim {
        Dimension::Two => {
            let mut half = 0.5;
            while half <= kappa_max + 1e-12 {
                half += 1.0;
            }
            half
        }
        Dimension::Three => {
            let mut m = 1.0;
            while m <= kappa_max + 1e-12 {
                m += 1.0;
            }
            m
        }
    }
}
