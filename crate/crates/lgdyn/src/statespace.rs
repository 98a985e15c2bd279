//! Symbolic state-space derivation.
//!
//! Assembles the elemental, continuity and compatibility equations of a
//! validated linear graph and eliminates every secondary variable by
//! Gaussian elimination over the field of rational symbolic expressions,
//! producing `dx/dt = A x + B u`, `y = C x + D u` with [`SymExpr`] entries.
//!
//! State variables are the across-variables of A-type tree branches followed
//! by the through-variables of T-type links, each group in element-id order.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;

use crate::graph::{
    fundamental_cutsets, fundamental_loops, Domain, Element, ElementKind, LinearGraph, NormalTree,
};
use crate::symexpr::{self, EvalError, ParamEnv, SymExpr};

/// Which variable of an element an output taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Across,
    Through,
}

/// Requested model outputs: element variables in report order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputSpec {
    pub outputs: Vec<(String, VarKind)>,
}

impl OutputSpec {
    pub fn across(ids: &[&str]) -> Self {
        OutputSpec {
            outputs: ids
                .iter()
                .map(|id| (id.to_string(), VarKind::Across))
                .collect(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, kind: VarKind) -> &mut Self {
        self.outputs.push((id.into(), kind));
        self
    }
}

/// One element's constitutive relation in generalized across/through form.
///
/// The constitutive coefficient is the element's parameter symbol mapped to
/// the domain-standard form: mechanical dampers dissipate with
/// `through = B * across` and mechanical springs store with
/// `d(through)/dt = K * across`, so the damping and stiffness symbols appear
/// in derived matrices the way they are written in vehicle dynamics texts;
/// electrical and fluid elements use `across = R * through` and
/// `across = L * d(through)/dt`.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementEquation {
    /// through = coeff * d(across)/dt
    AStorage { element: String, coeff: SymExpr },
    /// across = coeff * d(through)/dt
    TStorage { element: String, coeff: SymExpr },
    /// across = coeff * through
    AcrossFromThrough { element: String, coeff: SymExpr },
    /// through = coeff * across
    ThroughFromAcross { element: String, coeff: SymExpr },
    /// across = input(t)
    AcrossSource { element: String, input: String },
    /// through = input(t)
    ThroughSource { element: String, input: String },
    /// across_b = ratio * across_a, through_b = -(1/ratio) * through_a
    Transformer {
        two_port: String,
        port_a: String,
        port_b: String,
        ratio: SymExpr,
    },
}

/// Generalized storage coefficient of a storage element: the `C` in
/// `through = C d(across)/dt` or the `L` in `across = L d(through)/dt`.
/// Mechanical springs carry stiffness symbols, so their generalized
/// inductance is `1/K`.
pub fn storage_coefficient(e: &Element) -> SymExpr {
    let p = SymExpr::sym(e.param.clone());
    match (e.kind, e.domain) {
        (ElementKind::ATypeStorage, _) => p,
        (ElementKind::TTypeStorage, Domain::MechTranslation | Domain::MechRotation) => {
            SymExpr::div(SymExpr::one(), p)
        }
        (ElementKind::TTypeStorage, _) => p,
        _ => panic!("storage_coefficient on non-storage element {}", e.id),
    }
}

/// Constitutive equations for every element and two-port of the graph.
pub fn elemental_equations(g: &LinearGraph) -> Vec<ElementEquation> {
    let mut eqs = Vec::new();
    for e in g.elements() {
        match e.kind {
            ElementKind::ATypeStorage => eqs.push(ElementEquation::AStorage {
                element: e.id.clone(),
                coeff: storage_coefficient(e),
            }),
            ElementKind::TTypeStorage => eqs.push(ElementEquation::TStorage {
                element: e.id.clone(),
                coeff: storage_coefficient(e),
            }),
            ElementKind::DTypeDissipator => {
                let coeff = SymExpr::sym(e.param.clone());
                match e.domain {
                    Domain::Electrical => eqs.push(ElementEquation::AcrossFromThrough {
                        element: e.id.clone(),
                        coeff,
                    }),
                    Domain::MechTranslation | Domain::MechRotation | Domain::Fluid => {
                        eqs.push(ElementEquation::ThroughFromAcross {
                            element: e.id.clone(),
                            coeff,
                        })
                    }
                }
            }
            ElementKind::AcrossSource => eqs.push(ElementEquation::AcrossSource {
                element: e.id.clone(),
                input: e.param.clone(),
            }),
            ElementKind::ThroughSource => eqs.push(ElementEquation::ThroughSource {
                element: e.id.clone(),
                input: e.param.clone(),
            }),
            ElementKind::TransformerPort => {}
        }
    }
    for tp in g.two_ports() {
        eqs.push(ElementEquation::Transformer {
            two_port: tp.id.clone(),
            port_a: tp.port_a.clone(),
            port_b: tp.port_b.clone(),
            ratio: tp.ratio.clone(),
        });
    }
    eqs
}

impl ElementEquation {
    /// Renders the relation with domain-prefixed variable names.
    pub fn display<'a>(&'a self, g: &'a LinearGraph) -> ElementEquationDisplay<'a> {
        ElementEquationDisplay { eq: self, g }
    }
}

pub struct ElementEquationDisplay<'a> {
    eq: &'a ElementEquation,
    g: &'a LinearGraph,
}

impl fmt::Display for ElementEquationDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let across = |id: &str| {
            self.g
                .element(id)
                .map(|e| e.across_label())
                .unwrap_or_else(|| id.to_string())
        };
        let through = |id: &str| {
            self.g
                .element(id)
                .map(|e| e.through_label())
                .unwrap_or_else(|| id.to_string())
        };
        match self.eq {
            ElementEquation::AStorage { element, coeff } => {
                write!(
                    f,
                    "{} = {}*d({})/dt",
                    through(element),
                    coeff,
                    across(element)
                )
            }
            ElementEquation::TStorage { element, coeff } => {
                write!(
                    f,
                    "{} = {}*d({})/dt",
                    across(element),
                    coeff,
                    through(element)
                )
            }
            ElementEquation::AcrossFromThrough { element, coeff } => {
                write!(f, "{} = {}*{}", across(element), coeff, through(element))
            }
            ElementEquation::ThroughFromAcross { element, coeff } => {
                write!(f, "{} = {}*{}", through(element), coeff, across(element))
            }
            ElementEquation::AcrossSource { element, input } => {
                write!(f, "{} = {}(t)", across(element), input)
            }
            ElementEquation::ThroughSource { element, input } => {
                write!(f, "{} = {}(t)", through(element), input)
            }
            ElementEquation::Transformer {
                port_a,
                port_b,
                ratio,
                ..
            } => write!(
                f,
                "{} = {}*{}, {} = -(1/{})*{}",
                across(port_b),
                ratio,
                across(port_a),
                through(port_b),
                ratio,
                through(port_a)
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// Matrices
// ---------------------------------------------------------------------------

/// Dense row-major matrix of symbolic entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<SymExpr>,
}

impl SymMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SymMatrix {
            rows,
            cols,
            entries: vec![SymExpr::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows_in: Vec<Vec<SymExpr>>) -> Self {
        let rows = rows_in.len();
        let cols = rows_in.first().map_or(0, Vec::len);
        assert!(rows_in.iter().all(|r| r.len() == cols));
        SymMatrix {
            rows,
            cols,
            entries: rows_in.into_iter().flatten().collect(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> &SymExpr {
        &self.entries[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, e: SymExpr) {
        self.entries[r * self.cols + c] = e;
    }

    /// Entrywise numeric evaluation.
    pub fn evaluate(&self, env: &ParamEnv) -> Result<DMatrix<f64>, EvalError> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                m[(r, c)] = self.get(r, c).evaluate(env)?;
            }
        }
        Ok(m)
    }

    /// Entrywise randomized equivalence against another matrix.
    pub fn equivalent(&self, other: &SymMatrix, trials: usize, seed: u64) -> bool {
        if self.rows != other.rows || self.cols != other.cols {
            return false;
        }
        for r in 0..self.rows {
            for c in 0..self.cols {
                if !symexpr::equivalent(self.get(r, c), other.get(r, c), trials, seed) {
                    return false;
                }
            }
        }
        true
    }
}

impl fmt::Display for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Column-aligned entries.
        let mut strings = vec![Vec::with_capacity(self.cols); self.rows];
        let mut widths = vec![0usize; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let s = self.get(r, c).to_string();
                widths[c] = widths[c].max(s.len());
                strings[r].push(s);
            }
        }
        for (r, row) in strings.iter().enumerate() {
            if r > 0 {
                writeln!(f)?;
            }
            write!(f, "[ ")?;
            for (c, s) in row.iter().enumerate() {
                if c > 0 {
                    write!(f, "  ")?;
                }
                write!(f, "{s:>width$}", width = widths[c])?;
            }
            write!(f, " ]")?;
        }
        Ok(())
    }
}

/// Symbolic state-space model `dx/dt = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
    /// Element ids backing each state, in state order.
    pub state_elements: Vec<String>,
    pub a: SymMatrix,
    pub b: SymMatrix,
    pub c: SymMatrix,
    pub d: SymMatrix,
}

impl StateSpaceModel {
    pub fn num_states(&self) -> usize {
        self.state_labels.len()
    }

    pub fn num_inputs(&self) -> usize {
        self.input_labels.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.output_labels.len()
    }
}

impl fmt::Display for StateSpaceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "states:  [{}]", self.state_labels.join(", "))?;
        writeln!(f, "inputs:  [{}]", self.input_labels.join(", "))?;
        writeln!(f, "outputs: [{}]", self.output_labels.join(", "))?;
        writeln!(f, "A =")?;
        writeln!(f, "{}", self.a)?;
        writeln!(f, "B =")?;
        writeln!(f, "{}", self.b)?;
        writeln!(f, "C =")?;
        writeln!(f, "{}", self.c)?;
        writeln!(f, "D =")?;
        write!(f, "{}", self.d)
    }
}

/// A state-space model with all parameters bound to numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericStateSpace {
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl NumericStateSpace {
    pub fn num_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn num_outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// Evaluates every matrix entry under `env`. All entries must be finite.
pub fn evaluate_model(
    model: &StateSpaceModel,
    env: &ParamEnv,
) -> Result<NumericStateSpace, EvalError> {
    let a = model.a.evaluate(env)?;
    let b = model.b.evaluate(env)?;
    let c = model.c.evaluate(env)?;
    let d = model.d.evaluate(env)?;
    Ok(NumericStateSpace {
        state_labels: model.state_labels.clone(),
        input_labels: model.input_labels.clone(),
        output_labels: model.output_labels.clone(),
        a,
        b,
        c,
        d,
    })
}

// ---------------------------------------------------------------------------
// Derivation
// ---------------------------------------------------------------------------

/// Failure of [`derive_state_space`].
#[derive(Debug, Clone, PartialEq)]
pub enum DeriveError {
    /// Elimination hit an identically-zero pivot: the linear model contains
    /// an algebraic relation it cannot resolve.
    SingularSystem { detail: String },
    /// A time derivative of an input survives elimination (for example an
    /// A-type storage element directly in parallel with an across-source).
    InputDerivative { element: String },
    /// An output references a variable that does not exist.
    UnknownOutput { element: String },
}

impl fmt::Display for DeriveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeriveError::SingularSystem { detail } => write!(f, "singular system: {detail}"),
            DeriveError::InputDerivative { element } => write!(
                f,
                "derivation requires the time derivative of an input (element `{element}`)"
            ),
            DeriveError::UnknownOutput { element } => {
                write!(f, "output references unknown element `{element}`")
            }
        }
    }
}

impl std::error::Error for DeriveError {}

/// Lightweight fraction over [`SymExpr`] used as the elimination field.
/// Cancellation is structural only; numeric equivalence of results is the
/// contract, not canonical form.
#[derive(Debug, Clone)]
struct Frac {
    num: SymExpr,
    den: SymExpr,
}

impl Frac {
    fn zero() -> Self {
        Frac {
            num: SymExpr::zero(),
            den: SymExpr::one(),
        }
    }

    fn from_expr(e: SymExpr) -> Self {
        Frac {
            num: e,
            den: SymExpr::one(),
        }
    }

    fn is_structural_zero(&self) -> bool {
        self.num.is_const_zero()
    }

    fn add(&self, o: &Frac) -> Frac {
        if self.is_structural_zero() {
            return o.clone();
        }
        if o.is_structural_zero() {
            return self.clone();
        }
        if self.den == o.den {
            Frac {
                num: SymExpr::add2(self.num.clone(), o.num.clone()),
                den: self.den.clone(),
            }
        } else {
            Frac {
                num: SymExpr::add2(
                    SymExpr::mul2(self.num.clone(), o.den.clone()),
                    SymExpr::mul2(o.num.clone(), self.den.clone()),
                ),
                den: SymExpr::mul2(self.den.clone(), o.den.clone()),
            }
        }
    }

    fn mul(&self, o: &Frac) -> Frac {
        if self.is_structural_zero() || o.is_structural_zero() {
            return Frac::zero();
        }
        Frac {
            num: SymExpr::mul2(self.num.clone(), o.num.clone()),
            den: SymExpr::mul2(self.den.clone(), o.den.clone()),
        }
    }

    fn div(&self, o: &Frac) -> Frac {
        Frac {
            num: SymExpr::mul2(self.num.clone(), o.den.clone()),
            den: SymExpr::mul2(self.den.clone(), o.num.clone()),
        }
    }

    fn neg(&self) -> Frac {
        Frac {
            num: SymExpr::neg(self.num.clone()),
            den: self.den.clone(),
        }
    }

    fn to_expr(&self) -> SymExpr {
        SymExpr::div(self.num.clone(), self.den.clone())
    }
}

/// Where an element variable lives after the state/input substitution.
#[derive(Debug, Clone, Copy, PartialEq)]
enum VarSlot {
    State(usize),
    Input(usize),
    Unknown(usize),
}

/// One linear equation: sum of unknown-coefficients equals a linear
/// combination of states and inputs.
struct Row {
    lhs: BTreeMap<usize, Frac>,
    rhs: Vec<Frac>,
}

impl Row {
    fn new(rhs_len: usize) -> Self {
        Row {
            lhs: BTreeMap::new(),
            rhs: vec![Frac::zero(); rhs_len],
        }
    }

    fn add_lhs(&mut self, col: usize, f: Frac) {
        let entry = self.lhs.entry(col).or_insert_with(Frac::zero);
        *entry = entry.add(&f);
        if entry.is_structural_zero() {
            self.lhs.remove(&col);
        }
    }

    fn add_rhs(&mut self, idx: usize, f: Frac) {
        self.rhs[idx] = self.rhs[idx].add(&f);
    }
}

/// Number of randomized samples for pivot zero-testing.
const PIVOT_ZERO_TRIALS: usize = 12;
const PIVOT_ZERO_SEED: u64 = 0x1057_ab1e;

/// Derives the symbolic state-space model of a validated graph and normal
/// tree. Secondary variables are eliminated by sparse Gaussian elimination
/// over rational expressions with Markowitz pivoting; candidate pivots that
/// vanish under randomized sampling are rejected, and ties break in variable
/// order so the derivation is deterministic.
pub fn derive_state_space(
    g: &LinearGraph,
    tree: &NormalTree,
    outputs: &OutputSpec,
) -> Result<StateSpaceModel, DeriveError> {
    // State and input orderings.
    let mut state_elements: Vec<&Element> = Vec::new();
    for id in &tree.branches {
        let e = g.element(id).expect("tree references existing elements");
        if e.kind == ElementKind::ATypeStorage {
            state_elements.push(e);
        }
    }
    for id in &tree.links {
        let e = g.element(id).expect("tree references existing elements");
        if e.kind == ElementKind::TTypeStorage {
            state_elements.push(e);
        }
    }
    let n = state_elements.len();
    let state_of: BTreeMap<&str, usize> = state_elements
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();

    let inputs: Vec<&Element> = g.sources().collect();
    let m = inputs.len();
    let input_of: BTreeMap<&str, usize> = inputs
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();

    // Variable slots: across and through of every element, in element-id
    // order, then the state derivatives.
    let mut across_slot: BTreeMap<&str, VarSlot> = BTreeMap::new();
    let mut through_slot: BTreeMap<&str, VarSlot> = BTreeMap::new();
    let mut col_names: Vec<String> = Vec::new();
    let mut next_col = 0usize;
    for e in g.elements() {
        let a_slot = match e.kind {
            ElementKind::ATypeStorage if state_of.contains_key(e.id.as_str()) => {
                VarSlot::State(state_of[e.id.as_str()])
            }
            ElementKind::AcrossSource => VarSlot::Input(input_of[e.id.as_str()]),
            _ => {
                let c = next_col;
                next_col += 1;
                col_names.push(e.across_label());
                VarSlot::Unknown(c)
            }
        };
        across_slot.insert(e.id.as_str(), a_slot);
        let t_slot = match e.kind {
            ElementKind::TTypeStorage if state_of.contains_key(e.id.as_str()) => {
                VarSlot::State(state_of[e.id.as_str()])
            }
            ElementKind::ThroughSource => VarSlot::Input(input_of[e.id.as_str()]),
            _ => {
                let c = next_col;
                next_col += 1;
                col_names.push(e.through_label());
                VarSlot::Unknown(c)
            }
        };
        through_slot.insert(e.id.as_str(), t_slot);
    }
    let xdot_col: Vec<usize> = (0..n)
        .map(|k| {
            let c = next_col;
            next_col += 1;
            col_names.push(format!("d({})/dt", state_elements[k].across_label()));
            c
        })
        .collect();
    let num_unknowns = next_col;
    let rhs_len = n + m;

    let mut rows: Vec<Row> = Vec::new();

    // Helper: contribute `coeff * variable` to a row, folding substituted
    // variables onto the right-hand side (with flipped sign).
    let contribute = |row: &mut Row, slot: VarSlot, coeff: Frac| match slot {
        VarSlot::Unknown(c) => row.add_lhs(c, coeff),
        VarSlot::State(k) => row.add_rhs(k, coeff.neg()),
        VarSlot::Input(j) => row.add_rhs(n + j, coeff.neg()),
    };

    // Topological equations.
    for cut in fundamental_cutsets(g, tree) {
        let mut row = Row::new(rhs_len);
        contribute(
            &mut row,
            through_slot[cut.branch.as_str()],
            Frac::from_expr(SymExpr::one()),
        );
        for (sign, link) in &cut.terms {
            contribute(
                &mut row,
                through_slot[link.as_str()],
                Frac::from_expr(SymExpr::Const(-f64::from(*sign))),
            );
        }
        rows.push(row);
    }
    for lp in fundamental_loops(g, tree) {
        let mut row = Row::new(rhs_len);
        contribute(
            &mut row,
            across_slot[lp.link.as_str()],
            Frac::from_expr(SymExpr::one()),
        );
        for (sign, branch) in &lp.terms {
            contribute(
                &mut row,
                across_slot[branch.as_str()],
                Frac::from_expr(SymExpr::Const(-f64::from(*sign))),
            );
        }
        rows.push(row);
    }

    // Elemental equations.
    let loops_by_link: BTreeMap<String, Vec<(i8, String)>> = fundamental_loops(g, tree)
        .into_iter()
        .map(|l| (l.link, l.terms))
        .collect();
    let cuts_by_branch: BTreeMap<String, Vec<(i8, String)>> = fundamental_cutsets(g, tree)
        .into_iter()
        .map(|c| (c.branch, c.terms))
        .collect();

    for e in g.elements() {
        let is_branch = tree.is_branch(&e.id);
        match e.kind {
            ElementKind::ATypeStorage if is_branch => {
                // through = C * xdot
                let k = state_of[e.id.as_str()];
                let mut row = Row::new(rhs_len);
                contribute(
                    &mut row,
                    through_slot[e.id.as_str()],
                    Frac::from_expr(SymExpr::one()),
                );
                row.add_lhs(
                    xdot_col[k],
                    Frac::from_expr(SymExpr::neg(storage_coefficient(e))),
                );
                rows.push(row);
            }
            ElementKind::TTypeStorage if !is_branch => {
                // across = L * xdot
                let k = state_of[e.id.as_str()];
                let mut row = Row::new(rhs_len);
                contribute(
                    &mut row,
                    across_slot[e.id.as_str()],
                    Frac::from_expr(SymExpr::one()),
                );
                row.add_lhs(
                    xdot_col[k],
                    Frac::from_expr(SymExpr::neg(storage_coefficient(e))),
                );
                rows.push(row);
            }
            ElementKind::ATypeStorage => {
                // Dependent A-type link: through = C * d(across)/dt with the
                // across fixed by compatibility. Only paths through storage
                // states are expressible; a source in the path demands an
                // input derivative.
                let mut row = Row::new(rhs_len);
                contribute(
                    &mut row,
                    through_slot[e.id.as_str()],
                    Frac::from_expr(SymExpr::one()),
                );
                let coeff = storage_coefficient(e);
                for (sign, branch) in &loops_by_link[e.id.as_str()] {
                    let b = g.element(branch).unwrap();
                    let signed = SymExpr::mul2(SymExpr::Const(-f64::from(*sign)), coeff.clone());
                    match across_slot[branch.as_str()] {
                        VarSlot::State(k) => row.add_lhs(xdot_col[k], Frac::from_expr(signed)),
                        VarSlot::Input(_) => {
                            return Err(DeriveError::InputDerivative {
                                element: e.id.clone(),
                            });
                        }
                        VarSlot::Unknown(_) => {
                            return Err(DeriveError::SingularSystem {
                                detail: format!(
                                    "dependent storage `{}` rides on non-storage branch `{}`",
                                    e.id, b.id
                                ),
                            });
                        }
                    }
                }
                rows.push(row);
            }
            ElementKind::TTypeStorage => {
                // Dependent T-type branch: across = L * d(through)/dt with
                // the through fixed by continuity.
                let mut row = Row::new(rhs_len);
                contribute(
                    &mut row,
                    across_slot[e.id.as_str()],
                    Frac::from_expr(SymExpr::one()),
                );
                let coeff = storage_coefficient(e);
                for (sign, link) in &cuts_by_branch[e.id.as_str()] {
                    let l = g.element(link).unwrap();
                    let signed = SymExpr::mul2(SymExpr::Const(-f64::from(*sign)), coeff.clone());
                    match through_slot[link.as_str()] {
                        VarSlot::State(k) => row.add_lhs(xdot_col[k], Frac::from_expr(signed)),
                        VarSlot::Input(_) => {
                            return Err(DeriveError::InputDerivative {
                                element: e.id.clone(),
                            });
                        }
                        VarSlot::Unknown(_) => {
                            return Err(DeriveError::SingularSystem {
                                detail: format!(
                                    "dependent storage `{}` rides on non-storage link `{}`",
                                    e.id, l.id
                                ),
                            });
                        }
                    }
                }
                rows.push(row);
            }
            ElementKind::DTypeDissipator => {
                let coeff = SymExpr::sym(e.param.clone());
                let mut row = Row::new(rhs_len);
                match e.domain {
                    Domain::Electrical => {
                        // across - R*through = 0
                        contribute(
                            &mut row,
                            across_slot[e.id.as_str()],
                            Frac::from_expr(SymExpr::one()),
                        );
                        contribute(
                            &mut row,
                            through_slot[e.id.as_str()],
                            Frac::from_expr(SymExpr::neg(coeff)),
                        );
                    }
                    _ => {
                        // through - B*across = 0
                        contribute(
                            &mut row,
                            through_slot[e.id.as_str()],
                            Frac::from_expr(SymExpr::one()),
                        );
                        contribute(
                            &mut row,
                            across_slot[e.id.as_str()],
                            Frac::from_expr(SymExpr::neg(coeff)),
                        );
                    }
                }
                rows.push(row);
            }
            ElementKind::AcrossSource | ElementKind::ThroughSource => {}
            ElementKind::TransformerPort => {}
        }
    }

    for tp in g.two_ports() {
        // across_b - ratio*across_a = 0
        let mut row = Row::new(rhs_len);
        contribute(
            &mut row,
            across_slot[tp.port_b.as_str()],
            Frac::from_expr(SymExpr::one()),
        );
        contribute(
            &mut row,
            across_slot[tp.port_a.as_str()],
            Frac::from_expr(SymExpr::neg(tp.ratio.clone())),
        );
        rows.push(row);
        // through_a + ratio*through_b = 0
        let mut row = Row::new(rhs_len);
        contribute(
            &mut row,
            through_slot[tp.port_a.as_str()],
            Frac::from_expr(SymExpr::one()),
        );
        contribute(
            &mut row,
            through_slot[tp.port_b.as_str()],
            Frac::from_expr(tp.ratio.clone()),
        );
        rows.push(row);
    }

    debug_assert_eq!(rows.len(), num_unknowns);

    let solution = solve(rows, num_unknowns, rhs_len, &col_names)?;

    // Assemble A and B from the xdot solution rows.
    let mut a = SymMatrix::zeros(n, n);
    let mut b = SymMatrix::zeros(n, m);
    for k in 0..n {
        let sol = &solution[xdot_col[k]];
        for i in 0..n {
            a.set(k, i, sol[i].to_expr());
        }
        for j in 0..m {
            b.set(k, j, sol[n + j].to_expr());
        }
    }

    // Outputs.
    let p = outputs.outputs.len();
    let mut c = SymMatrix::zeros(p, n);
    let mut d = SymMatrix::zeros(p, m);
    let mut output_labels = Vec::with_capacity(p);
    for (r, (id, kind)) in outputs.outputs.iter().enumerate() {
        let e = g.element(id).ok_or_else(|| DeriveError::UnknownOutput {
            element: id.clone(),
        })?;
        let (slot, label) = match kind {
            VarKind::Across => (across_slot[e.id.as_str()], e.across_label()),
            VarKind::Through => (through_slot[e.id.as_str()], e.through_label()),
        };
        output_labels.push(label);
        match slot {
            VarSlot::State(k) => c.set(r, k, SymExpr::one()),
            VarSlot::Input(j) => d.set(r, j, SymExpr::one()),
            VarSlot::Unknown(col) => {
                let sol = &solution[col];
                for i in 0..n {
                    c.set(r, i, sol[i].to_expr());
                }
                for j in 0..m {
                    d.set(r, j, sol[n + j].to_expr());
                }
            }
        }
    }

    Ok(StateSpaceModel {
        state_labels: state_elements
            .iter()
            .map(|e| e.across_or_through_label())
            .collect(),
        input_labels: inputs.iter().map(|e| e.param.clone()).collect(),
        output_labels,
        state_elements: state_elements.iter().map(|e| e.id.clone()).collect(),
        a,
        b,
        c,
        d,
    })
}

impl Element {
    /// State label: across label for A-type storage, through label for
    /// T-type storage.
    fn across_or_through_label(&self) -> String {
        match self.kind {
            ElementKind::ATypeStorage => self.across_label(),
            ElementKind::TTypeStorage => self.through_label(),
            _ => self.across_label(),
        }
    }
}

/// Sparse Gaussian elimination with Markowitz pivoting. Returns, for every
/// unknown, its expression as a dense vector over `[states | inputs]`.
fn solve(
    mut rows: Vec<Row>,
    num_unknowns: usize,
    rhs_len: usize,
    col_names: &[String],
) -> Result<Vec<Vec<Frac>>, DeriveError> {
    let nrows = rows.len();
    let mut row_active: Vec<bool> = vec![true; nrows];
    let mut col_active: Vec<bool> = vec![true; num_unknowns];
    // (row, col, pivot) in elimination order.
    let mut pivots: Vec<(usize, usize, Frac)> = Vec::new();

    for _step in 0..num_unknowns {
        // Count active-column occupancy.
        let mut col_count = vec![0usize; num_unknowns];
        for (r, row) in rows.iter().enumerate() {
            if !row_active[r] {
                continue;
            }
            for (&c, _) in &row.lhs {
                if col_active[c] {
                    col_count[c] += 1;
                }
            }
        }
        // Markowitz: minimize (row_nnz - 1)*(col_nnz - 1); ties break on the
        // smaller column then row index (the fixed variable order).
        let mut best: Option<(usize, usize, usize)> = None; // (cost, col, row)
        for (r, row) in rows.iter_mut().enumerate() {
            if !row_active[r] {
                continue;
            }
            let nnz_r = row.lhs.keys().filter(|c| col_active[**c]).count();
            if nnz_r == 0 {
                continue;
            }
            let cols: Vec<usize> = row.lhs.keys().copied().filter(|c| col_active[*c]).collect();
            for c in cols {
                let entry = row.lhs.get(&c).unwrap();
                // Reject pivots that vanish numerically.
                if symexpr::is_zero_sampled(&entry.num, PIVOT_ZERO_TRIALS, PIVOT_ZERO_SEED) {
                    row.lhs.remove(&c);
                    continue;
                }
                let cost = (nnz_r - 1) * (col_count[c] - 1);
                let cand = (cost, c, r);
                if best.map_or(true, |b| cand < b) {
                    best = Some(cand);
                }
            }
        }
        let Some((_, pc, pr)) = best else {
            let stuck: Vec<&str> = (0..num_unknowns)
                .filter(|c| col_active[*c])
                .map(|c| col_names[c].as_str())
                .collect();
            return Err(DeriveError::SingularSystem {
                detail: format!("no usable pivot for variables [{}]", stuck.join(", ")),
            });
        };

        let pivot = rows[pr].lhs.get(&pc).unwrap().clone();
        // Eliminate pc from every other active row.
        let pivot_row_lhs: Vec<(usize, Frac)> =
            rows[pr].lhs.iter().map(|(c, f)| (*c, f.clone())).collect();
        let pivot_row_rhs: Vec<Frac> = rows[pr].rhs.clone();
        for r in 0..nrows {
            if r == pr || !row_active[r] {
                continue;
            }
            let Some(entry) = rows[r].lhs.get(&pc).cloned() else {
                continue;
            };
            let factor = entry.div(&pivot);
            for (c, f) in &pivot_row_lhs {
                let delta = factor.mul(f).neg();
                rows[r].add_lhs(*c, delta);
            }
            for i in 0..rhs_len {
                let delta = factor.mul(&pivot_row_rhs[i]).neg();
                rows[r].add_rhs(i, delta);
            }
            rows[r].lhs.remove(&pc);
        }
        row_active[pr] = false;
        col_active[pc] = false;
        pivots.push((pr, pc, pivot));
    }

    // Back-substitution in reverse pivot order.
    let mut solution: Vec<Vec<Frac>> = vec![vec![Frac::zero(); rhs_len]; num_unknowns];
    let mut solved: Vec<bool> = vec![false; num_unknowns];
    for (pr, pc, pivot) in pivots.into_iter().rev() {
        let mut acc: Vec<Frac> = rows[pr].rhs.clone();
        for (&c, coeff) in &rows[pr].lhs {
            if c == pc {
                continue;
            }
            debug_assert!(solved[c], "back-substitution order violated");
            for i in 0..rhs_len {
                let delta = coeff.mul(&solution[c][i]).neg();
                acc[i] = acc[i].add(&delta);
            }
        }
        for item in &mut acc {
            *item = item.div(&pivot);
        }
        solution[pc] = acc;
        solved[pc] = true;
    }
    Ok(solution)
}
