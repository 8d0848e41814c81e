//! Low-degree subsets `[H]_{<=D}` and their binary codes.

use std::fmt;

use crate::error::{Error, Result};

/// A subset of `{1, ..., H}`; elements are 1-based and stored sorted.
///
/// For the information-set computations the elements double as lag offsets:
/// element `s` refers to the token `s` positions back.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Subset(Vec<usize>);

impl Subset {
    pub fn empty() -> Self {
        Subset(Vec::new())
    }

    pub fn new(mut elems: Vec<usize>) -> Result<Self> {
        elems.sort_unstable();
        if elems.first() == Some(&0) {
            return Err(Error::domain("subset elements are 1-based"));
        }
        if elems.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain(format!("duplicate subset element in {elems:?}")));
        }
        Ok(Subset(elems))
    }

    pub fn elems(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, e: usize) -> bool {
        self.0.binary_search(&e).is_ok()
    }

    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }

    /// Binary code of length `universe`: character `i` (0-based) is `1` iff
    /// element `i + 1` is in the subset. `{1, 2}` over `[3]` is `"110"`.
    pub fn code(&self, universe: usize) -> String {
        (1..=universe)
            .map(|e| if self.contains(e) { '1' } else { '0' })
            .collect()
    }

    pub fn from_code(code: &str) -> Result<Self> {
        let mut elems = Vec::new();
        for (i, ch) in code.chars().enumerate() {
            match ch {
                '1' => elems.push(i + 1),
                '0' => {}
                _ => return Err(Error::domain(format!("bad subset code {code:?}"))),
            }
        }
        Ok(Subset(elems))
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, "}}")
    }
}

/// All subsets of `[H]` with at most `D` elements, including the empty set,
/// ordered by cardinality and then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsetTable {
    universe: usize,
    max_degree: usize,
    subsets: Vec<Subset>,
}

impl SubsetTable {
    pub fn new(universe: usize, max_degree: usize) -> Self {
        let mut subsets = vec![Subset::empty()];
        for k in 1..=max_degree.min(universe) {
            let mut combo: Vec<usize> = (1..=k).collect();
            loop {
                subsets.push(Subset(combo.clone()));
                // next k-combination of [universe] in lexicographic order
                let mut i = k;
                while i > 0 && combo[i - 1] == universe - k + i {
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
                combo[i - 1] += 1;
                for j in i..k {
                    combo[j] = combo[j - 1] + 1;
                }
            }
        }
        SubsetTable {
            universe,
            max_degree,
            subsets,
        }
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn subsets(&self) -> &[Subset] {
        &self.subsets
    }

    pub fn get(&self, idx: usize) -> &Subset {
        &self.subsets[idx]
    }

    pub fn index_of(&self, s: &Subset) -> Option<usize> {
        self.subsets.iter().position(|t| t == s)
    }

    pub fn codes(&self) -> Vec<String> {
        self.subsets.iter().map(|s| s.code(self.universe)).collect()
    }

    pub fn index_of_code(&self, code: &str) -> Option<usize> {
        if code.len() != self.universe {
            return None;
        }
        let s = Subset::from_code(code).ok()?;
        self.index_of(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn three_heads_degree_two_has_seven_subsets() {
        let t = SubsetTable::new(3, 2);
        assert_eq!(t.len(), 7);
        assert_eq!(
            t.codes(),
            vec!["000", "100", "010", "001", "110", "101", "011"]
        );
        assert_eq!(t.index_of_code("110"), Some(4));
    }

    #[test]
    fn counts_match_binomial_sums() {
        for h in 1..7 {
            for d in 0..=h + 1 {
                let expect: usize = (0..=d.min(h)).map(|k| binom(h, k)).sum();
                assert_eq!(SubsetTable::new(h, d).len(), expect, "H={h} D={d}");
            }
        }
    }

    #[test]
    fn code_roundtrip_and_display() {
        let s = Subset::new(vec![3, 1]).unwrap();
        assert_eq!(s.code(4), "1010");
        assert_eq!(Subset::from_code("1010").unwrap(), s);
        assert_eq!(s.to_string(), "{1,3}");
        assert!(Subset::new(vec![0]).is_err());
        assert!(Subset::new(vec![2, 2]).is_err());
    }
}
