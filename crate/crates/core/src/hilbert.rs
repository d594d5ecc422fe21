//! Basis indexing for registers of three-level atoms {|0⟩, |1⟩, |r⟩}.
//!
//! Basis index convention: atom 0 (the control) is the most significant
//! ternary digit, so `index = Σ_i level_i · 3^(n-1-i)` with
//! `level ∈ {0, 1, 2}` and level 2 = |r⟩. The computational subspace is
//! the set of indices whose digits are all 0 or 1; its states are ordered
//! the same way as binary numbers with atom 0 as the most significant
//! bit.

use crate::error::{Error, Result};

pub const LEVEL_ZERO: usize = 0;
pub const LEVEL_ONE: usize = 1;
pub const LEVEL_RYDBERG: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HilbertSpace {
    n_atoms: usize,
}

impl HilbertSpace {
    /// At most four atoms (dim 81): one control plus up to three targets.
    pub const MAX_ATOMS: usize = 4;

    pub fn new(n_atoms: usize) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::invalid("need at least one atom"));
        }
        if n_atoms > Self::MAX_ATOMS {
            return Err(Error::UnsupportedSize(format!(
                "{n_atoms} atoms exceeds the supported maximum of {}",
                Self::MAX_ATOMS
            )));
        }
        Ok(HilbertSpace { n_atoms })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// Full three-level dimension 3^n.
    pub fn dim(&self) -> usize {
        3usize.pow(self.n_atoms as u32)
    }

    /// Computational-subspace dimension 2^n.
    pub fn comp_dim(&self) -> usize {
        1 << self.n_atoms
    }

    /// Level of `atom` in basis state `index`.
    pub fn level_of(&self, index: usize, atom: usize) -> usize {
        let shift = 3usize.pow((self.n_atoms - 1 - atom) as u32);
        (index / shift) % 3
    }

    /// Basis index with the level of `atom` replaced.
    pub fn with_level(&self, index: usize, atom: usize, level: usize) -> usize {
        let shift = 3usize.pow((self.n_atoms - 1 - atom) as u32);
        let old = (index / shift) % 3;
        index - old * shift + level * shift
    }

    /// Number of atoms in |r⟩ in basis state `index`.
    pub fn rydberg_count(&self, index: usize) -> usize {
        (0..self.n_atoms)
            .filter(|&a| self.level_of(index, a) == LEVEL_RYDBERG)
            .count()
    }

    /// Full-space basis indices of the computational subspace, in binary
    /// order (atom 0 = most significant bit).
    pub fn comp_basis_indices(&self) -> Vec<usize> {
        (0..self.comp_dim())
            .map(|b| self.comp_to_full(b))
            .collect()
    }

    /// Full-space index of computational basis state `b`.
    pub fn comp_to_full(&self, b: usize) -> usize {
        let mut idx = 0;
        for atom in 0..self.n_atoms {
            let bit = (b >> (self.n_atoms - 1 - atom)) & 1;
            idx = idx * 3 + bit;
        }
        idx
    }

    /// Bit of `atom` in computational basis state `b`.
    pub fn comp_bit(&self, b: usize, atom: usize) -> usize {
        (b >> (self.n_atoms - 1 - atom)) & 1
    }
}
