//! Stratified incomplete contingency tables and loglinear design matrices.
//!
//! A cell is identified by its list-membership pattern. The cell missed by
//! every list is never observed in real data; it only enters a design when
//! the model contains the full list interaction, and then its count must be
//! supplied as synthetic truth.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use crate::error::{spec_err, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// List-membership pattern: bit 0 = list A, bit 1 = list B, bit 2 = list C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellPattern(pub u8);

impl CellPattern {
    pub const NONE: CellPattern = CellPattern(0);

    #[inline]
    pub fn contains(self, list: u8) -> bool {
        self.0 & list != 0
    }

    /// Label such as `"110"` in list order.
    pub fn label(self, lists: Lists) -> String {
        (0..lists.count()).map(|b| if self.0 >> b & 1 == 1 { '1' } else { '0' }).collect()
    }
}

pub const LIST_A: u8 = 0b001;
pub const LIST_B: u8 = 0b010;
pub const LIST_C: u8 = 0b100;

/// Observed cells of one stratum of a two-list table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualStratumCounts<T> {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    /// Size of the doubly-missed cell; known only for synthetic data.
    pub n00_truth: Option<T>,
}

impl<T: Scalar> DualStratumCounts<T> {
    pub fn new(n11: u64, n10: u64, n01: u64) -> Self {
        Self { n11, n10, n01, n00_truth: None }
    }

    pub fn with_truth(mut self, n00: T) -> Result<Self> {
        if !(n00 >= T::zero()) {
            return spec_err("n00_truth must be nonnegative");
        }
        self.n00_truth = Some(n00);
        Ok(self)
    }

    pub fn observed(&self) -> u64 {
        self.n11 + self.n10 + self.n01
    }
}

/// Observed cells of one stratum of a three-list table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleStratumCounts<T> {
    pub n111: u64,
    pub n110: u64,
    pub n101: u64,
    pub n011: u64,
    pub n100: u64,
    pub n010: u64,
    pub n001: u64,
    pub n000_truth: Option<T>,
}

impl<T: Scalar> TripleStratumCounts<T> {
    /// Counts in the order `n111, n110, n101, n011, n100, n010, n001`.
    pub fn new(c: [u64; 7]) -> Self {
        Self { n111: c[0], n110: c[1], n101: c[2], n011: c[3], n100: c[4], n010: c[5], n001: c[6], n000_truth: None }
    }

    pub fn with_truth(mut self, n000: T) -> Result<Self> {
        if !(n000 >= T::zero()) {
            return spec_err("n000_truth must be nonnegative");
        }
        self.n000_truth = Some(n000);
        Ok(self)
    }

    pub fn observed(&self) -> u64 {
        self.n111 + self.n110 + self.n101 + self.n011 + self.n100 + self.n010 + self.n001
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lists {
    Two,
    Three,
}

impl Lists {
    pub fn count(self) -> usize {
        match self {
            Lists::Two => 2,
            Lists::Three => 3,
        }
    }

    /// Observed patterns in serialization order: (1,1),(1,0),(0,1) for two
    /// lists, lexicographically descending for three.
    pub fn observed_patterns(self) -> &'static [CellPattern] {
        const DUAL: [CellPattern; 3] = [CellPattern(0b011), CellPattern(0b001), CellPattern(0b010)];
        const TRIPLE: [CellPattern; 7] = [
            CellPattern(0b111),
            CellPattern(0b011),
            CellPattern(0b101),
            CellPattern(0b001),
            CellPattern(0b110),
            CellPattern(0b010),
            CellPattern(0b100),
        ];
        match self {
            Lists::Two => &DUAL,
            Lists::Three => &TRIPLE,
        }
    }

    fn all_lists(self) -> u8 {
        match self {
            Lists::Two => LIST_A | LIST_B,
            Lists::Three => LIST_A | LIST_B | LIST_C,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Strata<T> {
    Dual(Vec<DualStratumCounts<T>>),
    Triple(Vec<TripleStratumCounts<T>>),
}

/// Homogeneous list of strata with unique labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedTable<T> {
    strata: Strata<T>,
    labels: Vec<String>,
}

fn check_labels(labels: &[String], n: usize) -> Result<()> {
    if n == 0 {
        return spec_err("a table needs at least one stratum");
    }
    if labels.len() != n {
        return spec_err(format!("{} labels for {} strata", labels.len(), n));
    }
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return spec_err(format!("duplicate stratum label {l:?}"));
        }
    }
    Ok(())
}

impl<T: Scalar> StratifiedTable<T> {
    pub fn dual(strata: Vec<DualStratumCounts<T>>, labels: Vec<String>) -> Result<Self> {
        check_labels(&labels, strata.len())?;
        Ok(Self { strata: Strata::Dual(strata), labels })
    }

    pub fn triple(strata: Vec<TripleStratumCounts<T>>, labels: Vec<String>) -> Result<Self> {
        check_labels(&labels, strata.len())?;
        Ok(Self { strata: Strata::Triple(strata), labels })
    }

    /// Dual table labelled `1..=r`.
    pub fn dual_numbered(strata: Vec<DualStratumCounts<T>>) -> Result<Self> {
        let labels = (1..=strata.len()).map(|i| i.to_string()).collect();
        Self::dual(strata, labels)
    }

    pub fn triple_numbered(strata: Vec<TripleStratumCounts<T>>) -> Result<Self> {
        let labels = (1..=strata.len()).map(|i| i.to_string()).collect();
        Self::triple(strata, labels)
    }

    pub fn strata(&self) -> &Strata<T> {
        &self.strata
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn lists(&self) -> Lists {
        match self.strata {
            Strata::Dual(_) => Lists::Two,
            Strata::Triple(_) => Lists::Three,
        }
    }

    pub fn as_dual(&self) -> Option<&[DualStratumCounts<T>]> {
        match &self.strata {
            Strata::Dual(s) => Some(s),
            Strata::Triple(_) => None,
        }
    }

    pub fn as_triple(&self) -> Option<&[TripleStratumCounts<T>]> {
        match &self.strata {
            Strata::Triple(s) => Some(s),
            Strata::Dual(_) => None,
        }
    }

    /// Count of `pattern` in stratum `l`; `None` for the unobserved cell
    /// when no truth is attached.
    pub fn cell(&self, l: usize, pattern: CellPattern) -> Option<T> {
        match &self.strata {
            Strata::Dual(s) => {
                let c = &s[l];
                match pattern.0 {
                    0b011 => Some(T::count(c.n11)),
                    0b001 => Some(T::count(c.n10)),
                    0b010 => Some(T::count(c.n01)),
                    0 => c.n00_truth,
                    _ => None,
                }
            }
            Strata::Triple(s) => {
                let c = &s[l];
                match pattern.0 {
                    0b111 => Some(T::count(c.n111)),
                    0b011 => Some(T::count(c.n110)),
                    0b101 => Some(T::count(c.n101)),
                    0b110 => Some(T::count(c.n011)),
                    0b001 => Some(T::count(c.n100)),
                    0b010 => Some(T::count(c.n010)),
                    0b100 => Some(T::count(c.n001)),
                    0 => c.n000_truth,
                    _ => None,
                }
            }
        }
    }

    /// Sum of the observed counts of stratum `l`.
    pub fn stratum_observed(&self, l: usize) -> u64 {
        match &self.strata {
            Strata::Dual(s) => s[l].observed(),
            Strata::Triple(s) => s[l].observed(),
        }
    }
}

/// Sum of all observed counts over all strata.
pub fn observed_total<T: Scalar>(table: &StratifiedTable<T>) -> u64 {
    (0..table.len()).map(|l| table.stratum_observed(l)).sum()
}

/// Fixed loglinear term: an interaction of lists, optionally crossed with
/// the stratifying variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Intercept,
    A,
    B,
    C,
    AB,
    AC,
    BC,
    ABC,
    R,
    AR,
    BR,
    CR,
    ABR,
    ACR,
    BCR,
    ABCR,
}

impl Term {
    pub const ALL: [Term; 16] = [
        Term::Intercept,
        Term::A,
        Term::B,
        Term::C,
        Term::AB,
        Term::AC,
        Term::BC,
        Term::ABC,
        Term::R,
        Term::AR,
        Term::BR,
        Term::CR,
        Term::ABR,
        Term::ACR,
        Term::BCR,
        Term::ABCR,
    ];

    /// `(list mask, crossed with stratum)`
    pub fn factors(self) -> (u8, bool) {
        use Term::*;
        match self {
            Intercept => (0, false),
            A => (LIST_A, false),
            B => (LIST_B, false),
            C => (LIST_C, false),
            AB => (LIST_A | LIST_B, false),
            AC => (LIST_A | LIST_C, false),
            BC => (LIST_B | LIST_C, false),
            ABC => (LIST_A | LIST_B | LIST_C, false),
            R => (0, true),
            AR => (LIST_A, true),
            BR => (LIST_B, true),
            CR => (LIST_C, true),
            ABR => (LIST_A | LIST_B, true),
            ACR => (LIST_A | LIST_C, true),
            BCR => (LIST_B | LIST_C, true),
            ABCR => (LIST_A | LIST_B | LIST_C, true),
        }
    }

    pub fn name(self) -> &'static str {
        use Term::*;
        match self {
            Intercept => "(Intercept)",
            A => "A",
            B => "B",
            C => "C",
            AB => "AB",
            AC => "AC",
            BC => "BC",
            ABC => "ABC",
            R => "R",
            AR => "AR",
            BR => "BR",
            CR => "CR",
            ABR => "ABR",
            ACR => "ACR",
            BCR => "BCR",
            ABCR => "ABCR",
        }
    }
}

/// Random term: a list interaction varying by stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RandomTerm {
    /// intercept by R
    U0,
    /// A by R
    U1,
    /// B by R
    U2,
    /// C by R
    U3,
    /// AB by R
    U4,
    /// AC by R
    U5,
    /// BC by R
    U6,
}

impl RandomTerm {
    pub const ALL: [RandomTerm; 7] =
        [RandomTerm::U0, RandomTerm::U1, RandomTerm::U2, RandomTerm::U3, RandomTerm::U4, RandomTerm::U5, RandomTerm::U6];

    pub fn lists(self) -> u8 {
        use RandomTerm::*;
        match self {
            U0 => 0,
            U1 => LIST_A,
            U2 => LIST_B,
            U3 => LIST_C,
            U4 => LIST_A | LIST_B,
            U5 => LIST_A | LIST_C,
            U6 => LIST_B | LIST_C,
        }
    }

    /// Fixed term sharing this term's list interaction.
    pub fn fixed_counterpart(self) -> Term {
        use RandomTerm::*;
        match self {
            U0 => Term::Intercept,
            U1 => Term::A,
            U2 => Term::B,
            U3 => Term::C,
            U4 => Term::AB,
            U5 => Term::AC,
            U6 => Term::BC,
        }
    }

    pub fn name(self) -> &'static str {
        use RandomTerm::*;
        match self {
            U0 => "u0",
            U1 => "u1",
            U2 => "u2",
            U3 => "u3",
            U4 => "u4",
            U5 => "u5",
            U6 => "u6",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parameterization {
    /// Parameters vanish whenever an index is 0; indicators in `{0, 1}`.
    CornerPoint,
    /// Parameters sum to zero over each index; list contrasts in `{-1, +1}`.
    SumZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub lists: Lists,
    pub terms: BTreeSet<Term>,
    pub random_terms: BTreeSet<RandomTerm>,
    pub parameterization: Parameterization,
}

impl ModelSpec {
    pub fn new(
        lists: Lists,
        terms: impl IntoIterator<Item = Term>,
        random_terms: impl IntoIterator<Item = RandomTerm>,
        parameterization: Parameterization,
    ) -> Result<Self> {
        let spec = Self {
            lists,
            terms: terms.into_iter().collect(),
            random_terms: random_terms.into_iter().collect(),
            parameterization,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn fixed(lists: Lists, terms: &[Term], p: Parameterization) -> Self {
        Self::new(lists, terms.iter().copied(), [], p).expect("built-in model is consistent")
    }

    /// `log μ_ij = λ + λ^A_i + λ^B_j`
    pub fn independence(p: Parameterization) -> Self {
        Self::fixed(Lists::Two, &[Term::Intercept, Term::A, Term::B], p)
    }

    /// Two-list saturated model; needs the doubly-missed cell.
    pub fn saturated_dual(p: Parameterization) -> Self {
        Self::fixed(Lists::Two, &[Term::Intercept, Term::A, Term::B, Term::AB], p)
    }

    /// Conditional independence [AR][BR]: the maximal stratified two-list model.
    pub fn conditional_independence(p: Parameterization) -> Self {
        use Term::*;
        Self::fixed(Lists::Two, &[Intercept, A, B, R, AR, BR], p)
    }

    /// [ABR]; needs the doubly-missed cells.
    pub fn saturated_stratified_dual(p: Parameterization) -> Self {
        use Term::*;
        Self::fixed(Lists::Two, &[Intercept, A, B, AB, R, AR, BR, ABR], p)
    }

    /// [ABR][ACR][BCR]: the maximal stratified three-list model.
    pub fn maximal_triple(p: Parameterization) -> Self {
        use Term::*;
        Self::fixed(Lists::Three, &[Intercept, A, B, C, AB, AC, BC, R, AR, BR, CR, ABR, ACR, BCR], p)
    }

    /// [ABCR]; needs the triply-missed cells.
    pub fn saturated_triple(p: Parameterization) -> Self {
        Self::fixed(Lists::Three, &Term::ALL, p)
    }

    /// Random intercept and random list slopes by stratum over fixed
    /// `λ + λ^A + λ^B`.
    pub fn mixed_dual() -> Self {
        use RandomTerm::*;
        Self::new(
            Lists::Two,
            [Term::Intercept, Term::A, Term::B],
            [U0, U1, U2],
            Parameterization::SumZero,
        )
        .expect("built-in model is consistent")
    }

    /// Maximal three-list mixed model: fixed main effects and two-list
    /// interactions, each with a random counterpart by stratum.
    pub fn mixed_triple() -> Self {
        use Term::*;
        Self::new(Lists::Three, [Intercept, A, B, C, AB, AC, BC], RandomTerm::ALL, Parameterization::SumZero)
            .expect("built-in model is consistent")
    }

    pub fn validate(&self) -> Result<()> {
        let allowed = self.lists.all_lists();
        for t in &self.terms {
            if t.factors().0 & !allowed != 0 {
                return spec_err(format!("term {} references a list absent from a {}-list model", t.name(), self.lists.count()));
            }
        }
        for u in &self.random_terms {
            if u.lists() & !allowed != 0 {
                return spec_err(format!("random term {} references a list absent from a {}-list model", u.name(), self.lists.count()));
            }
            if !self.terms.contains(&u.fixed_counterpart()) {
                return spec_err(format!(
                    "random term {} requires fixed term {}",
                    u.name(),
                    u.fixed_counterpart().name()
                ));
            }
        }
        if !self.random_terms.is_empty() && self.parameterization != Parameterization::SumZero {
            return spec_err("random terms require the sum-zero parameterization");
        }
        if self.terms.is_empty() {
            return spec_err("model has no fixed terms");
        }
        Ok(())
    }

    /// Whether the model identifies the all-lists interaction, which puts
    /// the unobserved cell into the design.
    pub fn needs_unobserved_cell(&self) -> bool {
        let full = self.lists.all_lists();
        self.terms.iter().any(|t| t.factors().0 == full)
    }

    /// Contrast value of list interaction `mask` at `pattern`.
    pub fn list_contrast<T: Scalar>(&self, mask: u8, pattern: CellPattern) -> T {
        contrast(self.parameterization, mask, pattern)
    }
}

pub(crate) fn contrast<T: Scalar>(p: Parameterization, mask: u8, pattern: CellPattern) -> T {
    let mut v = T::one();
    for bit in [LIST_A, LIST_B, LIST_C] {
        if mask & bit == 0 {
            continue;
        }
        let inside = pattern.contains(bit);
        v = v * match (p, inside) {
            (_, true) => T::one(),
            (Parameterization::CornerPoint, false) => T::zero(),
            (Parameterization::SumZero, false) => -T::one(),
        };
    }
    v
}

/// Identifies one design column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ColumnKey {
    pub term: Term,
    /// Stratum index for stratum-crossed terms.
    pub stratum: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RowKey {
    pub stratum: usize,
    pub pattern: CellPattern,
}

/// Design matrix over the cells entering the likelihood, with responses.
#[derive(Debug, Clone)]
pub struct Design<T> {
    pub matrix: Matrix<T>,
    pub columns: Vec<ColumnKey>,
    pub column_labels: Vec<String>,
    pub rows: Vec<RowKey>,
    pub response: Vec<T>,
}

impl<T> Design<T> {
    pub fn column_index(&self, term: Term, stratum: Option<usize>) -> Option<usize> {
        self.columns.iter().position(|c| c.term == term && c.stratum == stratum)
    }
}

impl fmt::Display for ColumnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stratum {
            Some(l) => write!(f, "{}[{}]", self.term.name(), l + 1),
            None => f.write_str(self.term.name()),
        }
    }
}

/// Columns of the fixed design for `spec` over `r` strata.
pub fn design_columns(spec: &ModelSpec, r: usize) -> Vec<ColumnKey> {
    let mut cols = Vec::new();
    for &term in &spec.terms {
        let (_, by_stratum) = term.factors();
        if !by_stratum {
            cols.push(ColumnKey { term, stratum: None });
            continue;
        }
        // corner point drops the first stratum, sum-zero deviation coding the last
        let levels: Vec<usize> = match spec.parameterization {
            Parameterization::CornerPoint => (1..r).collect(),
            Parameterization::SumZero => (0..r.saturating_sub(1)).collect(),
        };
        cols.extend(levels.into_iter().map(|l| ColumnKey { term, stratum: Some(l) }));
    }
    cols
}

/// Value of design column `col` at a cell of stratum `l` out of `r`.
pub fn design_value<T: Scalar>(spec: &ModelSpec, col: ColumnKey, r: usize, l: usize, pattern: CellPattern) -> T {
    let (mask, _) = col.term.factors();
    let list_part: T = spec.list_contrast(mask, pattern);
    let stratum_part = match col.stratum {
        None => T::one(),
        Some(level) => match spec.parameterization {
            Parameterization::CornerPoint => {
                if l == level {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Parameterization::SumZero => {
                if l == level {
                    T::one()
                } else if l + 1 == r {
                    -T::one()
                } else {
                    T::zero()
                }
            }
        },
    };
    list_part * stratum_part
}

/// Design row for an arbitrary cell, including the unobserved one.
pub fn design_row<T: Scalar>(spec: &ModelSpec, columns: &[ColumnKey], r: usize, l: usize, pattern: CellPattern) -> Vec<T> {
    columns.iter().map(|&c| design_value(spec, c, r, l, pattern)).collect()
}

/// Indicator/contrast design matrix over the cells of `table` that enter
/// the likelihood of `spec`.
pub fn design_matrix<T: Scalar>(spec: &ModelSpec, table: &StratifiedTable<T>) -> Result<Design<T>> {
    spec.validate()?;
    if spec.lists != table.lists() {
        return spec_err(format!(
            "model is for {} lists but the table has {}",
            spec.lists.count(),
            table.lists().count()
        ));
    }
    let r = table.len();
    let with_missed = spec.needs_unobserved_cell();
    let columns = design_columns(spec, r);

    let mut patterns: Vec<CellPattern> = spec.lists.observed_patterns().to_vec();
    if with_missed {
        patterns.push(CellPattern::NONE);
    }

    let mut rows = Vec::with_capacity(r * patterns.len());
    let mut response = Vec::with_capacity(r * patterns.len());
    let mut data = Vec::with_capacity(r * patterns.len());
    for l in 0..r {
        for &pattern in &patterns {
            let Some(n) = table.cell(l, pattern) else {
                return spec_err(format!(
                    "model needs the unobserved cell but stratum {:?} has no truth count",
                    table.labels()[l]
                ));
            };
            rows.push(RowKey { stratum: l, pattern });
            response.push(n);
            data.push(design_row(spec, &columns, r, l, pattern));
        }
    }
    let column_labels = columns
        .iter()
        .map(|c| match c.stratum {
            Some(l) => format!("{}[{}]", c.term.name(), table.labels()[l]),
            None => c.term.name().to_string(),
        })
        .collect();
    let matrix = if data.is_empty() { Matrix::zeros(0, columns.len()) } else { Matrix::from_rows(&data) };
    Ok(Design { matrix, columns, column_labels, rows, response })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_stratum() -> StratifiedTable<f64> {
        StratifiedTable::dual_numbered(vec![DualStratumCounts::new(56, 24, 14)]).unwrap()
    }

    #[test]
    fn independence_design_is_three_by_three() {
        let d = design_matrix(&ModelSpec::independence(Parameterization::CornerPoint), &one_stratum()).unwrap();
        assert_eq!((d.matrix.rows(), d.matrix.cols()), (3, 3));
        assert_eq!(d.column_labels, ["(Intercept)", "A", "B"]);
        // (1,1), (1,0), (0,1)
        assert_eq!(d.matrix.row(0), &[1.0, 1.0, 1.0]);
        assert_eq!(d.matrix.row(1), &[1.0, 1.0, 0.0]);
        assert_eq!(d.matrix.row(2), &[1.0, 0.0, 1.0]);
        assert_eq!(d.response, [56.0, 24.0, 14.0]);
    }

    #[test]
    fn sum_zero_codes_lists_as_plus_minus_one() {
        let d = design_matrix(&ModelSpec::independence(Parameterization::SumZero), &one_stratum()).unwrap();
        assert_eq!(d.matrix.row(1), &[1.0, 1.0, -1.0]);
        assert_eq!(d.matrix.row(2), &[1.0, -1.0, 1.0]);
    }

    #[test]
    fn conditional_independence_is_maximal() {
        for r in 1..6 {
            let t: StratifiedTable<f64> = StratifiedTable::dual_numbered(vec![DualStratumCounts::new(5, 3, 2); r]).unwrap();
            for p in [Parameterization::CornerPoint, Parameterization::SumZero] {
                let d = design_matrix(&ModelSpec::conditional_independence(p), &t).unwrap();
                assert_eq!((d.matrix.rows(), d.matrix.cols()), (3 * r, 3 * r));
            }
        }
    }

    #[test]
    fn saturated_dual_uses_four_cells() {
        let t = StratifiedTable::dual_numbered(vec![DualStratumCounts::new(56, 24, 14).with_truth(6.0).unwrap()]).unwrap();
        let d = design_matrix(&ModelSpec::saturated_dual(Parameterization::CornerPoint), &t).unwrap();
        assert_eq!((d.matrix.rows(), d.matrix.cols()), (4, 4));
        assert_eq!(d.response[3], 6.0);
        // without truth the cell is unavailable
        assert!(design_matrix(&ModelSpec::saturated_dual(Parameterization::CornerPoint), &one_stratum()).is_err());
    }

    #[test]
    fn maximal_triple_is_square() {
        let t: StratifiedTable<f64> = StratifiedTable::triple_numbered(vec![TripleStratumCounts::new([1; 7]); 4]).unwrap();
        let d = design_matrix(&ModelSpec::maximal_triple(Parameterization::CornerPoint), &t).unwrap();
        assert_eq!((d.matrix.rows(), d.matrix.cols()), (28, 28));
    }

    #[test]
    fn list_c_on_dual_table_is_rejected() {
        let err = ModelSpec::new(Lists::Two, [Term::Intercept, Term::C], [], Parameterization::CornerPoint);
        assert!(err.is_err());
        let spec = ModelSpec::maximal_triple(Parameterization::CornerPoint);
        assert!(design_matrix(&spec, &one_stratum()).is_err());
    }

    #[test]
    fn random_terms_require_sum_zero_and_fixed_counterpart() {
        assert!(ModelSpec::new(Lists::Two, [Term::Intercept, Term::A], [RandomTerm::U1], Parameterization::CornerPoint).is_err());
        assert!(ModelSpec::new(Lists::Two, [Term::Intercept], [RandomTerm::U1], Parameterization::SumZero).is_err());
        assert!(ModelSpec::new(Lists::Two, [Term::Intercept, Term::A], [RandomTerm::U1], Parameterization::SumZero).is_ok());
    }

    #[test]
    fn sum_zero_stratum_deviation_coding() {
        let t = StratifiedTable::dual_numbered(vec![DualStratumCounts::new(5, 3, 2); 3]).unwrap();
        let spec = ModelSpec::conditional_independence(Parameterization::SumZero);
        let d = design_matrix(&spec, &t).unwrap();
        let r1 = d.column_index(Term::R, Some(0)).unwrap();
        let col: Vec<f64> = (0..d.matrix.rows()).map(|i| d.matrix[(i, r1)]).collect();
        assert_eq!(col, [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn observed_totals() {
        assert_eq!(observed_total(&one_stratum()), 94);
        let empty = StratifiedTable::<f64>::dual_numbered(vec![DualStratumCounts::new(0, 0, 0); 3]).unwrap();
        assert_eq!(observed_total(&empty), 0);
        let triple = StratifiedTable::<f64>::triple_numbered(vec![TripleStratumCounts::new([1; 7])]).unwrap();
        assert_eq!(observed_total(&triple), 7);
    }

    #[test]
    fn table_invariants() {
        assert!(StratifiedTable::<f64>::dual(vec![], vec![]).is_err());
        let s = DualStratumCounts::<f64>::new(1, 1, 1);
        assert!(StratifiedTable::dual(vec![s, s], vec!["x".into(), "x".into()]).is_err());
        assert!(s.with_truth(-1.0).is_err());
    }
}
