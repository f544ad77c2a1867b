//! Sparse multivariate integer polynomials.
//!
//! Coefficients are arbitrary-precision integers and every operation here is
//! exact. Variable order is first-appearance order in the source text and it
//! fixes the Fock-mode order used by every operator built downstream.

mod parse;

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

pub use parse::{annotate, parse_constant_binding, parse_equation, ParseError, ParseErrorKind, ParseOptions};

/// Exponent vector of a single monomial, one entry per variable.
pub type Exponents = Vec<u32>;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PolyError {
    #[error("dimension mismatch: polynomial has {expected} variables, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("search box holds {volume} points, above the cap of {cap}")]
    BoxTooLarge { volume: u128, cap: u128 },
}

/// A polynomial `D(x_1, ..., x_K)` with integer coefficients.
///
/// Terms with a zero coefficient are never stored, so two polynomials are
/// algebraically equal exactly when their term maps and variable lists are.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Polynomial {
    var_names: Vec<String>,
    terms: BTreeMap<Exponents, BigInt>,
}

impl Polynomial {
    pub fn zero(var_names: Vec<String>) -> Self {
        Self { var_names, terms: BTreeMap::new() }
    }

    /// Builds a polynomial from raw terms, merging duplicates and dropping
    /// zero coefficients.
    pub fn from_terms<I>(var_names: Vec<String>, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Exponents, BigInt)>,
    {
        let k = var_names.len();
        let mut p = Self::zero(var_names);
        for (exp, c) in terms {
            if exp.len() != k {
                return Err(PolyError::DimensionMismatch { expected: k, got: exp.len() });
            }
            p.add_term(exp, c);
        }
        Ok(p)
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn terms(&self) -> &BTreeMap<Exponents, BigInt> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// True when no variable appears with a positive exponent.
    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|e| e.iter().all(|&d| d == 0))
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum::<u32>()).max().unwrap_or(0)
    }

    pub fn constant_term(&self) -> BigInt {
        let origin = vec![0; self.num_vars()];
        self.terms.get(&origin).cloned().unwrap_or_default()
    }

    pub(crate) fn add_term(&mut self, exp: Exponents, c: BigInt) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(exp) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    /// Exact value at a non-negative integer point.
    pub fn evaluate(&self, point: &[u64]) -> Result<BigInt, PolyError> {
        self.check_dim(point.len())?;
        Ok(self.evaluate_unchecked(point))
    }

    /// Exact value at a Fock occupation vector.
    pub fn evaluate_occupation(&self, occ: &[u32]) -> Result<BigInt, PolyError> {
        self.check_dim(occ.len())?;
        let point: Vec<u64> = occ.iter().map(|&n| u64::from(n)).collect();
        Ok(self.evaluate_unchecked(&point))
    }

    fn evaluate_unchecked(&self, point: &[u64]) -> BigInt {
        // Cache powers per variable; exponents are small.
        let mut powers: Vec<Vec<BigInt>> = point.iter().map(|&v| vec![BigInt::one(), BigInt::from(v)]).collect();
        let mut acc = BigInt::zero();
        for (exp, c) in &self.terms {
            let mut t = c.clone();
            for (i, &d) in exp.iter().enumerate() {
                if d == 0 {
                    continue;
                }
                let cache = &mut powers[i];
                while cache.len() <= d as usize {
                    let next = cache.last().unwrap() * &cache[1];
                    cache.push(next);
                }
                t *= &cache[d as usize];
            }
            acc += t;
        }
        acc
    }

    /// `D(point)^2`, the diagonal of the problem Hamiltonian at that state.
    pub fn square_at(&self, occ: &[u32]) -> Result<BigUint, PolyError> {
        let v = self.evaluate_occupation(occ)?;
        Ok((v.abs() * v.abs()).to_biguint().expect("square is non-negative"))
    }

    /// Returns `q` with `q(x) = p(x + offsets)`, fully expanded.
    pub fn shift_variables(&self, offsets: &[u64]) -> Result<Polynomial, PolyError> {
        self.check_dim(offsets.len())?;
        let mut out = Polynomial::zero(self.var_names.clone());
        for (exp, c) in &self.terms {
            // Expand prod_i (x_i + o_i)^{e_i} one variable at a time.
            let mut partial: Vec<(Exponents, BigInt)> = vec![(vec![0; exp.len()], c.clone())];
            for (i, &d) in exp.iter().enumerate() {
                if d == 0 {
                    continue;
                }
                let o = BigInt::from(offsets[i]);
                let expansion = binomial_row(d)
                    .into_iter()
                    .enumerate()
                    .map(|(j, b)| (j as u32, BigInt::from(b) * o.pow(d - j as u32)))
                    .filter(|(_, c)| !c.is_zero())
                    .collect::<Vec<_>>();
                let mut next = Vec::with_capacity(partial.len() * expansion.len());
                for (e, pc) in &partial {
                    for (j, bc) in &expansion {
                        let mut e2 = e.clone();
                        e2[i] = *j;
                        next.push((e2, pc * bc));
                    }
                }
                partial = next;
            }
            for (e, pc) in partial {
                out.add_term(e, pc);
            }
        }
        Ok(out)
    }

    /// All points of the box `0 <= x_i <= bounds[i]` where the polynomial
    /// vanishes, in lexicographic order.
    pub fn brute_force_search(&self, bounds: &[u64], volume_cap: u128) -> Result<Vec<Vec<u64>>, PolyError> {
        self.check_dim(bounds.len())?;
        let volume: u128 = bounds.iter().map(|&b| u128::from(b) + 1).product();
        if volume > volume_cap {
            return Err(PolyError::BoxTooLarge { volume, cap: volume_cap });
        }
        if bounds.is_empty() {
            return Ok(if self.is_zero() { vec![vec![]] } else { vec![] });
        }
        // Partition on the first coordinate; each slab is scanned in lex order.
        let mut roots: Vec<Vec<u64>> = (0..=bounds[0])
            .into_par_iter()
            .flat_map_iter(|x0| {
                let mut found = Vec::new();
                let mut point = vec![0u64; bounds.len()];
                point[0] = x0;
                loop {
                    if self.evaluate_unchecked(&point).is_zero() {
                        found.push(point.clone());
                    }
                    // odometer over coordinates 1..K
                    let mut i = bounds.len() - 1;
                    loop {
                        if i == 0 {
                            return found.into_iter();
                        }
                        if point[i] < bounds[i] {
                            point[i] += 1;
                            break;
                        }
                        point[i] = 0;
                        i -= 1;
                    }
                }
            })
            .collect();
        roots.sort();
        Ok(roots)
    }

    fn check_dim(&self, got: usize) -> Result<(), PolyError> {
        if got != self.num_vars() {
            return Err(PolyError::DimensionMismatch { expected: self.num_vars(), got });
        }
        Ok(())
    }

    /// Canonical text form that parses back to an identical polynomial.
    ///
    /// Terms are printed in descending lexicographic exponent order. When that
    /// order would not reproduce the variable list by first appearance, a
    /// `0*x*y*...` prefix pins it.
    pub fn to_canonical_string(&self) -> String {
        let body = self.format_terms();
        let mut seen: Vec<usize> = Vec::new();
        for exp in self.terms.keys().rev() {
            for (i, &d) in exp.iter().enumerate() {
                if d > 0 && !seen.contains(&i) {
                    seen.push(i);
                }
            }
        }
        let natural: Vec<usize> = (0..self.num_vars()).collect();
        if seen == natural {
            body
        } else {
            format!("0*{} + {}", self.var_names.join("*"), body)
        }
    }

    fn format_terms(&self) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (k, (exp, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative();
            let mag = c.abs();
            if k == 0 {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            let mut factors: Vec<String> = Vec::new();
            let is_const = exp.iter().all(|&d| d == 0);
            if !mag.is_one() || is_const {
                factors.push(mag.to_string());
            }
            for (i, &d) in exp.iter().enumerate() {
                match d {
                    0 => {}
                    1 => factors.push(self.var_names[i].clone()),
                    _ => factors.push(format!("{}^{}", self.var_names[i], d)),
                }
            }
            out.push_str(&factors.join("*"));
        }
        out
    }

    /// Term list in the JSON dump layout.
    pub fn to_dump(&self) -> PolynomialDump {
        PolynomialDump {
            num_vars: self.num_vars(),
            var_names: self.var_names.clone(),
            total_degree: self.total_degree(),
            canonical: self.to_canonical_string(),
            terms: self
                .terms
                .iter()
                .rev()
                .map(|(e, c)| TermDump { exponents: e.clone(), coefficient: c.to_string() })
                .collect(),
        }
    }

    /// Largest `|coefficient|` as f64, used for magnitude estimates only.
    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().map(|c| c.abs().to_f64().unwrap_or(f64::INFINITY)).fold(0.0, f64::max)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format_terms())
    }
}

#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct TermDump {
    pub exponents: Vec<u32>,
    /// Decimal string; coefficients are unbounded.
    pub coefficient: String,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct PolynomialDump {
    pub num_vars: usize,
    pub var_names: Vec<String>,
    pub total_degree: u32,
    pub canonical: String,
    pub terms: Vec<TermDump>,
}

fn binomial_row(n: u32) -> Vec<BigUint> {
    let mut row = vec![BigUint::one()];
    for k in 0..n {
        let next = row[k as usize].clone() * BigUint::from(n - k) / BigUint::from(k + 1);
        row.push(next);
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> Polynomial {
        parse_equation(s, &ParseOptions::default()).unwrap()
    }

    #[test]
    fn linear_example_terms() {
        let q = p("x - 6");
        assert_eq!(q.num_vars(), 1);
        assert_eq!(q.terms().get(&vec![1]), Some(&BigInt::from(1)));
        assert_eq!(q.terms().get(&vec![0]), Some(&BigInt::from(-6)));
        assert_eq!(q.terms().len(), 2);
    }

    #[test]
    fn zero_polynomial() {
        let q = p("0");
        assert_eq!(q.num_vars(), 0);
        assert!(q.is_zero());
        assert_eq!(q.evaluate(&[]).unwrap(), BigInt::zero());
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(p("x - 6").evaluate(&[6]).unwrap(), BigInt::zero());
        let pyth = p("(x+1)^2 + (y+1)^2 - (z+1)^2");
        assert_eq!(pyth.evaluate(&[2, 3, 4]).unwrap(), BigInt::zero());
        let fermat = p("(x+1)^3 + (y+1)^3 - (z+1)^3");
        assert_eq!(fermat.evaluate(&[0, 0, 1]).unwrap(), BigInt::from(-6));
        assert_eq!(fermat.evaluate(&[0, 0, 0]).unwrap(), fermat.constant_term());
        assert_eq!(
            pyth.evaluate(&[1, 2]).unwrap_err(),
            PolyError::DimensionMismatch { expected: 3, got: 2 }
        );
    }

    #[test]
    fn ninth_power_is_exact() {
        let q = p("(x+1)^9");
        let x = 1_000_000u64;
        // binomial theorem evaluated independently
        let mut expect = BigInt::zero();
        for (k, b) in binomial_row(9).into_iter().enumerate() {
            expect += BigInt::from(b) * BigInt::from(x).pow(k as u32);
        }
        assert_eq!(q.evaluate(&[x]).unwrap(), expect);
        assert_eq!(expect, BigInt::from(x + 1).pow(9));
    }

    #[test]
    fn shift_examples() {
        let q = p("x - 6").shift_variables(&[6]).unwrap();
        assert_eq!(q, p("x"));
        assert_eq!(q.evaluate(&[0]).unwrap(), BigInt::zero());
        assert_eq!(p("x^2").shift_variables(&[1]).unwrap(), p("x^2 + 2*x + 1"));
        let pyth = p("(x+1)^2 + (y+1)^2 - (z+1)^2");
        let shifted = pyth.shift_variables(&[2, 3, 4]).unwrap();
        assert!(shifted.evaluate(&[0, 0, 0]).unwrap().is_zero());
        assert!(pyth.shift_variables(&[1]).is_err());
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(p("x - 6").brute_force_search(&[10], 1 << 20).unwrap(), vec![vec![6]]);
        let pyth = p("(x+1)^2 + (y+1)^2 - (z+1)^2");
        assert_eq!(
            pyth.brute_force_search(&[6, 6, 6], 1 << 20).unwrap(),
            vec![vec![2, 3, 4], vec![3, 2, 4]]
        );
        let fermat = p("(x+1)^3 + (y+1)^3 - (z+1)^3");
        assert!(fermat.brute_force_search(&[20, 20, 20], 1 << 20).unwrap().is_empty());
        assert!(matches!(
            fermat.brute_force_search(&[1000, 1000, 1000], 1 << 20),
            Err(PolyError::BoxTooLarge { .. })
        ));
    }

    #[test]
    fn canonical_string_pins_variable_order() {
        let q = p("x*z + y");
        let s = q.to_canonical_string();
        assert_eq!(p(&s), q);
        let absent = p("x - x + y");
        assert_eq!(absent.num_vars(), 2);
        assert_eq!(p(&absent.to_canonical_string()), absent);
    }

    fn arb_poly() -> impl Strategy<Value = Polynomial> {
        (1usize..=3)
            .prop_flat_map(|k| {
                let term = (proptest::collection::vec(0u32..=3, k), -20i64..=20);
                (Just(k), proptest::collection::vec(term, 0..6))
            })
            .prop_map(|(k, terms)| {
                let names = ["x", "y", "z"][..k].iter().map(|s| s.to_string()).collect();
                Polynomial::from_terms(names, terms.into_iter().map(|(e, c)| (e, BigInt::from(c)))).unwrap()
            })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(q in arb_poly()) {
            let back = parse_equation(&q.to_canonical_string(), &ParseOptions::default()).unwrap();
            // variables absent from every term are dropped by neither side
            prop_assert_eq!(back, q);
        }

        #[test]
        fn shift_commutes_with_evaluation(
            q in arb_poly(),
            raw_off in proptest::collection::vec(0u64..=5, 3),
            raw_v in proptest::collection::vec(0u64..=5, 3),
        ) {
            let k = q.num_vars();
            let off = &raw_off[..k];
            let v = &raw_v[..k];
            let shifted = q.shift_variables(off).unwrap();
            let moved: Vec<u64> = v.iter().zip(off).map(|(a, b)| a + b).collect();
            prop_assert_eq!(shifted.evaluate(v).unwrap(), q.evaluate(&moved).unwrap());
        }

        #[test]
        fn symmetric_roots_come_in_swapped_pairs(a in -6i64..=6, b in -6i64..=6, c in -6i64..=6) {
            // a*(x+y) + b*x*y + c is symmetric in x and y
            let q = parse_equation(&format!("{a}*x + {a}*y + {b}*x*y + {c}"), &ParseOptions::default()).unwrap();
            if q.num_vars() == 2 {
                let roots = q.brute_force_search(&[8, 8], 1 << 20).unwrap();
                for r in &roots {
                    prop_assert!(roots.contains(&vec![r[1], r[0]]));
                }
            }
        }
    }
}
