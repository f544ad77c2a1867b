//! Truncated multi-mode Fock bases.
//!
//! States are ordered by ascending total occupation and lexicographically
//! within a shell. Under the total-occupation truncation this makes the basis
//! for cutoff `N` a prefix of the basis for `N + 1`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Default cap on the number of enumerated states.
pub const DEFAULT_STATE_CAP: usize = 250_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// `n_1 + ... + n_K <= cutoff`
    Total,
    /// `n_i <= cutoff` for every mode
    PerMode,
}

impl fmt::Display for Truncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Truncation::Total => "total",
            Truncation::PerMode => "per-mode",
        })
    }
}

impl FromStr for Truncation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "total" => Ok(Truncation::Total),
            "per-mode" => Ok(Truncation::PerMode),
            other => Err(format!("unknown truncation '{other}' (expected total|per-mode)")),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FockError {
    #[error("a Fock basis needs at least one mode")]
    NoModes,
    #[error("basis would hold {size} states, above the cap of {cap}")]
    TooLarge { size: u128, cap: usize },
    #[error("occupation vector has {got} entries, basis has {expected} modes")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Basis metadata carried by exported files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisMeta {
    pub num_modes: usize,
    pub cutoff: u32,
    pub truncation: Truncation,
    pub size: usize,
}

#[derive(Debug, Clone)]
pub struct FockBasis {
    num_modes: usize,
    cutoff: u32,
    truncation: Truncation,
    states: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

impl PartialEq for FockBasis {
    fn eq(&self, other: &Self) -> bool {
        self.num_modes == other.num_modes && self.cutoff == other.cutoff && self.truncation == other.truncation
    }
}

/// Number of states a basis would hold, without enumerating it.
pub fn basis_size(num_modes: usize, cutoff: u32, truncation: Truncation) -> u128 {
    match truncation {
        Truncation::Total => binomial(u128::from(cutoff) + num_modes as u128, num_modes as u128),
        Truncation::PerMode => (u128::from(cutoff) + 1).saturating_pow(num_modes as u32),
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

impl FockBasis {
    pub fn enumerate(num_modes: usize, cutoff: u32) -> Result<Self, FockError> {
        Self::with_truncation(num_modes, cutoff, Truncation::Total, DEFAULT_STATE_CAP)
    }

    pub fn with_truncation(num_modes: usize, cutoff: u32, truncation: Truncation, cap: usize) -> Result<Self, FockError> {
        if num_modes == 0 {
            return Err(FockError::NoModes);
        }
        let size = basis_size(num_modes, cutoff, truncation);
        if size > cap as u128 {
            return Err(FockError::TooLarge { size, cap });
        }
        let max_total = match truncation {
            Truncation::Total => cutoff,
            Truncation::PerMode => cutoff * num_modes as u32,
        };
        let mut states = Vec::with_capacity(size as usize);
        let mut current = vec![0u32; num_modes];
        for total in 0..=max_total {
            shell(&mut current, 0, total, cutoff, truncation, &mut states);
        }
        debug_assert_eq!(states.len() as u128, size);
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self { num_modes, cutoff, truncation, states, index })
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vec<u32>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[u32] {
        &self.states[i]
    }

    pub fn index_of(&self, occ: &[u32]) -> Result<Option<usize>, FockError> {
        if occ.len() != self.num_modes {
            return Err(FockError::DimensionMismatch { expected: self.num_modes, got: occ.len() });
        }
        Ok(self.index.get(occ).copied())
    }

    /// Index of state `i` with mode `mode` raised or lowered by one, if that
    /// state stays inside the truncation.
    pub fn neighbor(&self, i: usize, mode: usize, raise: bool) -> Option<usize> {
        let s = &self.states[i];
        let mut t = s.clone();
        if raise {
            t[mode] += 1;
        } else {
            if t[mode] == 0 {
                return None;
            }
            t[mode] -= 1;
        }
        self.index.get(&t).copied()
    }

    /// Rebuilds the basis described by exported metadata.
    pub fn from_meta(meta: &BasisMeta) -> Result<Self, FockError> {
        Self::with_truncation(meta.num_modes, meta.cutoff, meta.truncation, meta.size.max(1))
    }

    /// Permutation of basis positions induced by exchanging two modes.
    pub fn mode_swap_permutation(&self, a: usize, b: usize) -> Vec<usize> {
        self.states
            .iter()
            .map(|s| {
                let mut t = s.clone();
                t.swap(a, b);
                self.index[&t]
            })
            .collect()
    }

    pub fn meta(&self) -> BasisMeta {
        BasisMeta { num_modes: self.num_modes, cutoff: self.cutoff, truncation: self.truncation, size: self.len() }
    }

    /// `|n_1, ..., n_K>` label used in exported files.
    pub fn label(&self, i: usize) -> String {
        let parts: Vec<String> = self.states[i].iter().map(|n| n.to_string()).collect();
        format!("|{}>", parts.join(","))
    }
}

// Appends every state of one total-occupation shell in lexicographic order.
fn shell(cur: &mut [u32], mode: usize, remaining: u32, cutoff: u32, truncation: Truncation, out: &mut Vec<Vec<u32>>) {
    let last = cur.len() - 1;
    if mode == last {
        if truncation == Truncation::PerMode && remaining > cutoff {
            return;
        }
        cur[mode] = remaining;
        out.push(cur.to_vec());
        return;
    }
    let hi = match truncation {
        Truncation::Total => remaining,
        Truncation::PerMode => remaining.min(cutoff),
    };
    for n in 0..=hi {
        cur[mode] = n;
        shell(cur, mode + 1, remaining - n, cutoff, truncation, out);
    }
    cur[mode] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reported_basis_sizes() {
        for (k, n, size) in [(1, 4, 5), (1, 8, 9), (1, 24, 25), (3, 6, 84), (3, 9, 220), (3, 20, 1771)] {
            assert_eq!(FockBasis::enumerate(k, n).unwrap().len(), size, "K={k} N={n}");
        }
    }

    #[test]
    fn vacuum_only() {
        let b = FockBasis::enumerate(1, 0).unwrap();
        assert_eq!(b.states(), &[vec![0]]);
        assert_eq!(b.index_of(&[0]).unwrap(), Some(0));
    }

    #[test]
    fn index_lookup() {
        let b = FockBasis::enumerate(3, 6).unwrap();
        assert_eq!(b.index_of(&[0, 0, 7]).unwrap(), None);
        let scan = b.states().iter().position(|s| s == &[2, 3, 1]);
        assert_eq!(b.index_of(&[2, 3, 1]).unwrap(), scan);
        assert!(scan.is_some());
        assert!(b.index_of(&[1, 1]).is_err());
    }

    #[test]
    fn ordering_is_shell_then_lex() {
        let b = FockBasis::enumerate(3, 2).unwrap();
        let expected: Vec<Vec<u32>> = vec![
            vec![0, 0, 0],
            vec![0, 0, 1],
            vec![0, 1, 0],
            vec![1, 0, 0],
            vec![0, 0, 2],
            vec![0, 1, 1],
            vec![0, 2, 0],
            vec![1, 0, 1],
            vec![1, 1, 0],
            vec![2, 0, 0],
        ];
        assert_eq!(b.states(), expected.as_slice());
    }

    #[test]
    fn per_mode_truncation() {
        let b = FockBasis::with_truncation(2, 2, Truncation::PerMode, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(b.len(), 9);
        assert!(b.index_of(&[2, 2]).unwrap().is_some());
        assert!(b.index_of(&[3, 0]).unwrap().is_none());
        let totals: Vec<u32> = b.states().iter().map(|s| s.iter().sum()).collect();
        assert!(totals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn mode_swap_is_involution() {
        for tr in [Truncation::Total, Truncation::PerMode] {
            let b = FockBasis::with_truncation(3, 4, tr, DEFAULT_STATE_CAP).unwrap();
            let perm = b.mode_swap_permutation(0, 1);
            for (i, &j) in perm.iter().enumerate() {
                assert_eq!(perm[j], i);
                assert_eq!(b.state(j), &[b.state(i)[1], b.state(i)[0], b.state(i)[2]]);
            }
            assert_eq!(FockBasis::from_meta(&b.meta()).unwrap().states(), b.states());
        }
    }

    #[test]
    fn size_cap() {
        assert!(matches!(
            FockBasis::with_truncation(3, 20, Truncation::Total, 1000),
            Err(FockError::TooLarge { size: 1771, cap: 1000 })
        ));
        assert_eq!(FockBasis::enumerate(0, 3).unwrap_err(), FockError::NoModes);
    }

    proptest! {
        #[test]
        fn index_inverts_states(k in 1usize..=4, n in 0u32..=8) {
            let b = FockBasis::enumerate(k, n).unwrap();
            for (i, s) in b.states().iter().enumerate() {
                prop_assert_eq!(b.index_of(s).unwrap(), Some(i));
            }
        }

        #[test]
        fn count_matches_binomial(k in 1usize..=5, n in 0u32..=30) {
            let size = basis_size(k, n, Truncation::Total);
            prop_assume!(size <= 50_000);
            let b = FockBasis::enumerate(k, n).unwrap();
            // independent product formula C(n+k, k)
            let mut c: u128 = 1;
            for i in 1..=k as u128 {
                c = c * (u128::from(n) + i) / i;
            }
            prop_assert_eq!(b.len() as u128, c);
        }

        #[test]
        fn smaller_cutoff_is_prefix(k in 1usize..=4, n in 0u32..=7) {
            let small = FockBasis::enumerate(k, n).unwrap();
            let big = FockBasis::enumerate(k, n + 1).unwrap();
            prop_assert_eq!(&big.states()[..small.len()], small.states());
        }
    }
}
