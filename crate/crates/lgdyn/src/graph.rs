//! Linear-graph data model: oriented elements over energy domains,
//! validation, normal-tree selection and fundamental cutset/loop extraction.
//!
//! Sign conventions, fixed once for the whole crate:
//! - the through-variable of an element is positive flowing tail -> head;
//! - the across-variable is value(head) - value(tail);
//! - a fundamental loop is traversed from the link's tail to its head along
//!   the tree path, and a fundamental cutset takes the branch orientation as
//!   the positive crossing direction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::symexpr::SymExpr;

/// A graph node. Each connected component must mark exactly one node as its
/// reference (datum) node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub is_reference: bool,
}

/// Energy domain of an element. The domain decides which physical quantity
/// plays the across role: voltage, velocity, angular velocity, or volume
/// flow. The fluid domain uses the flow-as-across form so that hydraulic
/// transducers (pump, piston) are expressible as two-port transformers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Electrical,
    #[serde(rename = "translation")]
    MechTranslation,
    #[serde(rename = "rotation")]
    MechRotation,
    Fluid,
}

impl Domain {
    /// Printed prefix for across-variables of this domain.
    pub fn across_prefix(self) -> &'static str {
        match self {
            Domain::Electrical => "V",
            Domain::MechTranslation => "v",
            Domain::MechRotation => "w",
            Domain::Fluid => "Q",
        }
    }

    /// Printed prefix for through-variables of this domain.
    pub fn through_prefix(self) -> &'static str {
        match self {
            Domain::Electrical => "i",
            Domain::MechTranslation => "F",
            Domain::MechRotation => "tau",
            Domain::Fluid => "P",
        }
    }
}

/// Element classification by constitutive behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    /// Energy storage with through = C * d(across)/dt (mass, inertia,
    /// capacitor).
    #[serde(rename = "a_type")]
    ATypeStorage,
    /// Energy storage with across = L * d(through)/dt (spring, inductor).
    #[serde(rename = "t_type")]
    TTypeStorage,
    /// Algebraic dissipator (damper, resistor).
    #[serde(rename = "d_type")]
    DTypeDissipator,
    /// Ideal source fixing its across-variable to an input signal.
    AcrossSource,
    /// Ideal source fixing its through-variable to an input signal.
    ThroughSource,
    /// One port of a two-port transformer; always paired via [`TwoPort`].
    TransformerPort,
}

impl ElementKind {
    pub fn is_source(self) -> bool {
        matches!(self, ElementKind::AcrossSource | ElementKind::ThroughSource)
    }

    pub fn is_storage(self) -> bool {
        matches!(self, ElementKind::ATypeStorage | ElementKind::TTypeStorage)
    }
}

/// An oriented element between two nodes.
///
/// `param` names the constitutive parameter symbol for passive elements and
/// the input signal for sources. Transformer ports carry their two-port id.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub id: String,
    pub kind: ElementKind,
    pub domain: Domain,
    pub param: String,
    pub tail: String,
    pub head: String,
}

impl Element {
    /// Printed name of this element's across-variable, e.g. `w_JLW`.
    pub fn across_label(&self) -> String {
        format!("{}_{}", self.domain.across_prefix(), self.id)
    }

    /// Printed name of this element's through-variable, e.g. `tau_BRL`.
    pub fn through_label(&self) -> String {
        format!("{}_{}", self.domain.through_prefix(), self.id)
    }
}

/// An ideal transformer pairing two [`ElementKind::TransformerPort`]
/// elements, possibly in different energy domains.
///
/// Constitutive contract: `across_b = ratio * across_a` and
/// `through_b = -(1/ratio) * through_a`, which conserves power.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPort {
    pub id: String,
    pub port_a: String,
    pub port_b: String,
    pub ratio: SymExpr,
}

/// A multi-domain linear graph: the modeling input.
///
/// Nodes, elements and two-ports are kept sorted by id so that every derived
/// artifact (trees, equations, matrices) is reproducible across runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearGraph {
    nodes: Vec<Node>,
    elements: Vec<Element>,
    two_ports: Vec<TwoPort>,
}

impl LinearGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<String>, is_reference: bool) -> &mut Self {
        let node = Node {
            id: id.into(),
            is_reference,
        };
        let pos = self.nodes.partition_point(|n| n.id < node.id);
        self.nodes.insert(pos, node);
        self
    }

    pub fn add_element(
        &mut self,
        id: impl Into<String>,
        kind: ElementKind,
        domain: Domain,
        param: impl Into<String>,
        tail: impl Into<String>,
        head: impl Into<String>,
    ) -> &mut Self {
        let e = Element {
            id: id.into(),
            kind,
            domain,
            param: param.into(),
            tail: tail.into(),
            head: head.into(),
        };
        let pos = self.elements.partition_point(|x| x.id < e.id);
        self.elements.insert(pos, e);
        self
    }

    pub fn add_two_port(
        &mut self,
        id: impl Into<String>,
        port_a: impl Into<String>,
        port_b: impl Into<String>,
        ratio: SymExpr,
    ) -> &mut Self {
        let tp = TwoPort {
            id: id.into(),
            port_a: port_a.into(),
            port_b: port_b.into(),
            ratio,
        };
        let pos = self.two_ports.partition_point(|x| x.id < tp.id);
        self.two_ports.insert(pos, tp);
        self
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn two_ports(&self) -> &[TwoPort] {
        &self.two_ports
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes
            .binary_search_by(|n| n.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn element(&self, id: &str) -> Option<&Element> {
        self.element_index(id).map(|i| &self.elements[i])
    }

    pub fn element_index(&self, id: &str) -> Option<usize> {
        self.elements
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
    }

    pub fn two_port(&self, id: &str) -> Option<&TwoPort> {
        self.two_ports
            .binary_search_by(|t| t.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.two_ports[i])
    }

    fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.binary_search_by(|n| n.id.as_str().cmp(id)).ok()
    }

    /// Two-port that `element_id` is a port of, if any.
    pub fn two_port_of(&self, element_id: &str) -> Option<&TwoPort> {
        self.two_ports
            .iter()
            .find(|tp| tp.port_a == element_id || tp.port_b == element_id)
    }

    /// The other port of the two-port that `element_id` belongs to.
    pub fn partner_port(&self, element_id: &str) -> Option<&str> {
        self.two_port_of(element_id).map(|tp| {
            if tp.port_a == element_id {
                tp.port_b.as_str()
            } else {
                tp.port_a.as_str()
            }
        })
    }

    /// Source elements in id order.
    pub fn sources(&self) -> impl Iterator<Item = &Element> {
        self.elements.iter().filter(|e| e.kind.is_source())
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// A single well-formedness violation found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateNodeId(String),
    DuplicateElementId(String),
    DuplicateTwoPortId(String),
    UnknownEndpoint {
        element: String,
        node: String,
    },
    SelfLoop {
        element: String,
    },
    IsolatedNode(String),
    MissingReferenceNode {
        component: Vec<String>,
    },
    MultipleReferenceNodes {
        component: Vec<String>,
    },
    AcrossSourceLoop {
        element: String,
    },
    ThroughSourceCutset {
        elements: Vec<String>,
    },
    UnpairedTransformerPort {
        element: String,
    },
    PortNotTransformerKind {
        two_port: String,
        element: String,
    },
    UnknownPortElement {
        two_port: String,
        element: String,
    },
    PortReusedAcrossTwoPorts {
        element: String,
    },
    DuplicateParam {
        param: String,
        elements: Vec<String>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNodeId(id) => write!(f, "duplicate node id `{id}`"),
            Violation::DuplicateElementId(id) => write!(f, "duplicate element id `{id}`"),
            Violation::DuplicateTwoPortId(id) => write!(f, "duplicate two-port id `{id}`"),
            Violation::UnknownEndpoint { element, node } => {
                write!(f, "element `{element}` references unknown node `{node}`")
            }
            Violation::SelfLoop { element } => {
                write!(f, "element `{element}` connects a node to itself")
            }
            Violation::IsolatedNode(id) => write!(f, "node `{id}` has no elements"),
            Violation::MissingReferenceNode { component } => {
                write!(f, "component {{{}}} has no reference node", component.join(", "))
            }
            Violation::MultipleReferenceNodes { component } => write!(
                f,
                "component {{{}}} has more than one reference node",
                component.join(", ")
            ),
            Violation::AcrossSourceLoop { element } => {
                write!(f, "across-source `{element}` closes a loop of across-sources")
            }
            Violation::ThroughSourceCutset { elements } => write!(
                f,
                "through-sources {{{}}} form a cutset",
                elements.join(", ")
            ),
            Violation::UnpairedTransformerPort { element } => {
                write!(f, "transformer port `{element}` belongs to no two-port")
            }
            Violation::PortNotTransformerKind { two_port, element } => write!(
                f,
                "two-port `{two_port}` references element `{element}` which is not a transformer port"
            ),
            Violation::UnknownPortElement { two_port, element } => write!(
                f,
                "two-port `{two_port}` references unknown element `{element}`"
            ),
            Violation::PortReusedAcrossTwoPorts { element } => {
                write!(f, "transformer port `{element}` is used by more than one two-port")
            }
            Violation::DuplicateParam { param, elements } => write!(
                f,
                "parameter `{param}` is shared by unrelated elements {{{}}}",
                elements.join(", ")
            ),
        }
    }
}

/// Outcome of [`validate_graph`]; empty iff the graph is well-formed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "graph is well-formed");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Simple union-find over node indices.
#[derive(Debug, Clone)]
struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    /// Returns false if `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }

    fn connected(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }
}

/// Checks the structural invariants of a [`LinearGraph`] and reports every
/// violation found. An empty report means the graph is ready for normal-tree
/// selection and derivation.
pub fn validate_graph(g: &LinearGraph) -> ValidationReport {
    let mut violations = Vec::new();

    for w in g.nodes.windows(2) {
        if w[0].id == w[1].id {
            violations.push(Violation::DuplicateNodeId(w[0].id.clone()));
        }
    }
    for w in g.elements.windows(2) {
        if w[0].id == w[1].id {
            violations.push(Violation::DuplicateElementId(w[0].id.clone()));
        }
    }
    for w in g.two_ports.windows(2) {
        if w[0].id == w[1].id {
            violations.push(Violation::DuplicateTwoPortId(w[0].id.clone()));
        }
    }

    let mut endpoints_ok = true;
    for e in &g.elements {
        for node in [&e.tail, &e.head] {
            if g.node_index(node).is_none() {
                violations.push(Violation::UnknownEndpoint {
                    element: e.id.clone(),
                    node: node.clone(),
                });
                endpoints_ok = false;
            }
        }
        if e.tail == e.head {
            violations.push(Violation::SelfLoop {
                element: e.id.clone(),
            });
            endpoints_ok = false;
        }
    }

    // Two-port pairing checks.
    let mut port_use: BTreeMap<&str, usize> = BTreeMap::new();
    for tp in &g.two_ports {
        for port in [&tp.port_a, &tp.port_b] {
            match g.element(port) {
                None => violations.push(Violation::UnknownPortElement {
                    two_port: tp.id.clone(),
                    element: port.clone(),
                }),
                Some(e) if e.kind != ElementKind::TransformerPort => {
                    violations.push(Violation::PortNotTransformerKind {
                        two_port: tp.id.clone(),
                        element: port.clone(),
                    })
                }
                Some(_) => {}
            }
            *port_use.entry(port.as_str()).or_insert(0) += 1;
        }
    }
    for (port, count) in &port_use {
        if *count > 1 {
            violations.push(Violation::PortReusedAcrossTwoPorts {
                element: port.to_string(),
            });
        }
    }
    for e in &g.elements {
        if e.kind == ElementKind::TransformerPort && !port_use.contains_key(e.id.as_str()) {
            violations.push(Violation::UnpairedTransformerPort {
                element: e.id.clone(),
            });
        }
    }

    // Parameter uniqueness: shared params are allowed only between the two
    // ports of one two-port.
    let mut by_param: BTreeMap<&str, Vec<&Element>> = BTreeMap::new();
    for e in &g.elements {
        by_param.entry(e.param.as_str()).or_default().push(e);
    }
    for (param, els) in by_param {
        if els.len() < 2 {
            continue;
        }
        let same_pair = els.len() == 2
            && els.iter().all(|e| e.kind == ElementKind::TransformerPort)
            && g.two_port_of(&els[0].id).map(|tp| tp.id.as_str())
                == g.two_port_of(&els[1].id).map(|tp| tp.id.as_str())
            && g.two_port_of(&els[0].id).is_some();
        if !same_pair {
            violations.push(Violation::DuplicateParam {
                param: param.to_string(),
                elements: els.iter().map(|e| e.id.clone()).collect(),
            });
        }
    }

    if !endpoints_ok {
        return ValidationReport { violations };
    }

    // Connectivity-based checks.
    let n = g.nodes.len();
    let mut uf_all = UnionFind::new(n);
    let mut node_has_element = vec![false; n];
    for e in &g.elements {
        let (t, h) = (
            g.node_index(&e.tail).unwrap(),
            g.node_index(&e.head).unwrap(),
        );
        uf_all.union(t, h);
        node_has_element[t] = true;
        node_has_element[h] = true;
    }
    for (i, node) in g.nodes.iter().enumerate() {
        if !node_has_element[i] {
            violations.push(Violation::IsolatedNode(node.id.clone()));
        }
    }

    // Exactly one reference node per connected component.
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        if node_has_element[i] {
            components.entry(uf_all.find(i)).or_default().push(i);
        }
    }
    for members in components.values() {
        let refs: Vec<&str> = members
            .iter()
            .filter(|&&i| g.nodes[i].is_reference)
            .map(|&i| g.nodes[i].id.as_str())
            .collect();
        let names: Vec<String> = members.iter().map(|&i| g.nodes[i].id.clone()).collect();
        if refs.is_empty() {
            violations.push(Violation::MissingReferenceNode { component: names });
        } else if refs.len() > 1 {
            violations.push(Violation::MultipleReferenceNodes { component: names });
        }
    }

    // Across-source loops: a cycle in the subgraph of across-sources alone.
    let mut uf_src = UnionFind::new(n);
    for e in &g.elements {
        if e.kind == ElementKind::AcrossSource {
            let (t, h) = (
                g.node_index(&e.tail).unwrap(),
                g.node_index(&e.head).unwrap(),
            );
            if !uf_src.union(t, h) {
                violations.push(Violation::AcrossSourceLoop {
                    element: e.id.clone(),
                });
            }
        }
    }

    // Through-source cutsets: removing all through-sources must not split
    // any component.
    let mut uf_passive = UnionFind::new(n);
    for e in &g.elements {
        if e.kind != ElementKind::ThroughSource {
            let (t, h) = (
                g.node_index(&e.tail).unwrap(),
                g.node_index(&e.head).unwrap(),
            );
            uf_passive.union(t, h);
        }
    }
    let mut offending: Vec<String> = Vec::new();
    for e in &g.elements {
        if e.kind == ElementKind::ThroughSource {
            let (t, h) = (
                g.node_index(&e.tail).unwrap(),
                g.node_index(&e.head).unwrap(),
            );
            if !uf_passive.connected(t, h) {
                offending.push(e.id.clone());
            }
        }
    }
    if !offending.is_empty() {
        violations.push(Violation::ThroughSourceCutset {
            elements: offending,
        });
    }

    ValidationReport { violations }
}

// ---------------------------------------------------------------------------
// Normal-tree selection
// ---------------------------------------------------------------------------

/// Partition of the elements into spanning-tree branches and links.
///
/// Branch across-variables of A-type storage and link through-variables of
/// T-type storage form the state vector. `dependent_storage` lists storage
/// elements whose placement makes their energy variable algebraically
/// dependent (A-type links and T-type branches): they contribute no state.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalTree {
    pub branches: Vec<String>,
    pub links: Vec<String>,
    pub dependent_storage: Vec<String>,
}

impl NormalTree {
    pub fn is_branch(&self, element_id: &str) -> bool {
        self.branches
            .binary_search_by(|b| b.as_str().cmp(element_id))
            .is_ok()
    }
}

/// Failure of [`select_normal_tree`].
#[derive(Debug, Clone, PartialEq)]
pub enum TreeError {
    /// The graph failed validation; the report lists the violations.
    InvalidGraph(ValidationReport),
    /// Across-sources alone already close a loop.
    AcrossSourceLoop { element: String },
    /// The tree cannot span a component without placing a through-source.
    ThroughSourceCutset,
    /// No placement with exactly one port of each two-port in the tree spans
    /// the graph.
    TwoPortPlacement { two_port: String },
}

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeError::InvalidGraph(report) => write!(f, "invalid graph: {report}"),
            TreeError::AcrossSourceLoop { element } => {
                write!(f, "across-source `{element}` closes an across-source loop")
            }
            TreeError::ThroughSourceCutset => {
                write!(f, "tree cannot be completed without a through-source")
            }
            TreeError::TwoPortPlacement { two_port } => write!(
                f,
                "no feasible tree placement for the ports of two-port `{two_port}`"
            ),
        }
    }
}

impl std::error::Error for TreeError {}

/// Selects the normal tree of a validated graph.
///
/// Insertion priority: across-sources, then A-type storage, then transformer
/// ports (exactly one port of each two-port enters the tree), then D-type,
/// then T-type; through-sources never enter. Ties everywhere resolve in
/// lexicographic element-id order, so the result is deterministic.
pub fn select_normal_tree(g: &LinearGraph) -> Result<NormalTree, TreeError> {
    let report = validate_graph(g);
    if !report.is_clean() {
        return Err(TreeError::InvalidGraph(report));
    }

    let n = g.nodes.len();
    let node_idx = |id: &str| g.node_index(id).unwrap();
    let mut uf = UnionFind::new(n);
    let mut in_tree: BTreeSet<String> = BTreeSet::new();

    // Across-sources first; a cycle here is not repairable.
    for e in g
        .elements
        .iter()
        .filter(|e| e.kind == ElementKind::AcrossSource)
    {
        if !uf.union(node_idx(&e.tail), node_idx(&e.head)) {
            return Err(TreeError::AcrossSourceLoop {
                element: e.id.clone(),
            });
        }
        in_tree.insert(e.id.clone());
    }

    // As much A-type storage as fits.
    for e in g
        .elements
        .iter()
        .filter(|e| e.kind == ElementKind::ATypeStorage)
    {
        if uf.union(node_idx(&e.tail), node_idx(&e.head)) {
            in_tree.insert(e.id.clone());
        }
    }

    // Exactly one port of each two-port. Port choices interact (a choice may
    // make a later pair or the spanning completion infeasible), so search
    // placements with backtracking; the first complete solution in id order
    // wins.
    let pairs: Vec<&TwoPort> = g.two_ports.iter().collect();
    let solved = place_ports(g, &pairs, 0, &mut uf, &mut in_tree);
    if !solved {
        // The greedy A-type forest can block every port placement even when
        // a valid normal tree with less A-type content exists. Small graphs
        // fall back to exhaustive search over candidate trees.
        if g.elements.len() <= 16 {
            if let Some(tree) = best_tree_by_enumeration(g) {
                return Ok(tree);
            }
        }
        // Distinguish "ports cannot be placed" from "a through-source is
        // structurally required": retry the completion with ports
        // unconstrained.
        let mut uf2 = uf.clone();
        for e in &g.elements {
            if e.kind != ElementKind::ThroughSource {
                uf2.union(node_idx(&e.tail), node_idx(&e.head));
            }
        }
        if spanning_complete(g, &mut uf2) {
            return Err(TreeError::TwoPortPlacement {
                two_port: pairs.first().map(|tp| tp.id.clone()).unwrap_or_default(),
            });
        }
        return Err(TreeError::ThroughSourceCutset);
    }

    // D-type, then T-type, to fill the remaining slots.
    for kind in [ElementKind::DTypeDissipator, ElementKind::TTypeStorage] {
        for e in g.elements.iter().filter(|e| e.kind == kind) {
            if uf.union(node_idx(&e.tail), node_idx(&e.head)) {
                in_tree.insert(e.id.clone());
            }
        }
    }

    if !spanning_complete(g, &mut uf) {
        return Err(TreeError::ThroughSourceCutset);
    }

    let mut branches = Vec::new();
    let mut links = Vec::new();
    let mut dependent = Vec::new();
    for e in &g.elements {
        if in_tree.contains(&e.id) {
            branches.push(e.id.clone());
            if e.kind == ElementKind::TTypeStorage {
                dependent.push(e.id.clone());
            }
        } else {
            links.push(e.id.clone());
            if e.kind == ElementKind::ATypeStorage {
                dependent.push(e.id.clone());
            }
        }
    }
    Ok(NormalTree {
        branches,
        links,
        dependent_storage: dependent,
    })
}

/// Recursive placement of transformer ports: for each two-port in id order,
/// try its ports (smaller element id first); a port is placeable if adding it
/// creates no cycle. Succeeds when all pairs are placed and the remaining
/// passive elements can still complete the spanning forest.
fn place_ports(
    g: &LinearGraph,
    pairs: &[&TwoPort],
    at: usize,
    uf: &mut UnionFind,
    in_tree: &mut BTreeSet<String>,
) -> bool {
    if at == pairs.len() {
        // Feasibility look-ahead for the D/T completion.
        let mut probe = uf.clone();
        for e in g.elements() {
            match e.kind {
                ElementKind::DTypeDissipator | ElementKind::TTypeStorage => {
                    probe.union(
                        g.node_index(&e.tail).unwrap(),
                        g.node_index(&e.head).unwrap(),
                    );
                }
                _ => {}
            }
        }
        return spanning_complete(g, &mut probe);
    }
    let tp = pairs[at];
    let mut ports = [tp.port_a.as_str(), tp.port_b.as_str()];
    ports.sort();
    for port in ports {
        let e = g.element(port).unwrap();
        let (t, h) = (
            g.node_index(&e.tail).unwrap(),
            g.node_index(&e.head).unwrap(),
        );
        if uf.connected(t, h) {
            continue;
        }
        let saved = uf.clone();
        uf.union(t, h);
        in_tree.insert(port.to_string());
        if place_ports(g, pairs, at + 1, uf, in_tree) {
            return true;
        }
        *uf = saved;
        in_tree.remove(port);
    }
    false
}

/// Exhaustive normal-tree search for small graphs: all element subsets of
/// spanning-forest size that contain every across-source, no through-source
/// and exactly one port per two-port, ranked by storage priority (most
/// A-type branches, then fewest T-type branches) with ties broken by the
/// lexicographically first branch list.
fn best_tree_by_enumeration(g: &LinearGraph) -> Option<NormalTree> {
    let n = g.nodes.len();
    let n_elements = g.elements.len();
    let mut uf_all = UnionFind::new(n);
    for e in &g.elements {
        uf_all.union(
            g.node_index(&e.tail).unwrap(),
            g.node_index(&e.head).unwrap(),
        );
    }
    let components: BTreeSet<usize> = (0..n).map(|i| uf_all.find(i)).collect();
    let tree_size = n - components.len();

    let mut best: Option<(usize, usize, Vec<String>)> = None; // (-A, T, branches)
    for mask in 0u32..(1 << n_elements) {
        if mask.count_ones() as usize != tree_size {
            continue;
        }
        let mut uf = UnionFind::new(n);
        let mut ok = true;
        let mut a_count = 0usize;
        let mut t_count = 0usize;
        for (i, e) in g.elements.iter().enumerate() {
            let picked = mask & (1 << i) != 0;
            match e.kind {
                ElementKind::AcrossSource if !picked => ok = false,
                ElementKind::ThroughSource if picked => ok = false,
                ElementKind::ATypeStorage if picked => a_count += 1,
                ElementKind::TTypeStorage if picked => t_count += 1,
                _ => {}
            }
            if picked
                && !uf.union(
                    g.node_index(&e.tail).unwrap(),
                    g.node_index(&e.head).unwrap(),
                )
            {
                ok = false;
            }
            if !ok {
                break;
            }
        }
        if !ok || !spanning_complete(g, &mut uf) {
            continue;
        }
        let mut port_ok = true;
        for tp in &g.two_ports {
            let a_in = g
                .element_index(&tp.port_a)
                .map(|i| mask & (1 << i) != 0)
                .unwrap_or(false);
            let b_in = g
                .element_index(&tp.port_b)
                .map(|i| mask & (1 << i) != 0)
                .unwrap_or(false);
            if a_in == b_in {
                port_ok = false;
                break;
            }
        }
        if !port_ok {
            continue;
        }
        let branches: Vec<String> = g
            .elements
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, e)| e.id.clone())
            .collect();
        let key = (usize::MAX - a_count, t_count, branches);
        if best.as_ref().map_or(true, |b| key < *b) {
            best = Some(key);
        }
    }
    let (_, _, branches) = best?;
    let branch_set: BTreeSet<&str> = branches.iter().map(String::as_str).collect();
    let mut links = Vec::new();
    let mut dependent = Vec::new();
    for e in &g.elements {
        if branch_set.contains(e.id.as_str()) {
            if e.kind == ElementKind::TTypeStorage {
                dependent.push(e.id.clone());
            }
        } else {
            links.push(e.id.clone());
            if e.kind == ElementKind::ATypeStorage {
                dependent.push(e.id.clone());
            }
        }
    }
    Some(NormalTree {
        branches,
        links,
        dependent_storage: dependent,
    })
}

/// True when every pair of nodes that is connected in the full graph is also
/// connected in `uf`.
fn spanning_complete(g: &LinearGraph, uf: &mut UnionFind) -> bool {
    let n = g.nodes.len();
    let mut uf_all = UnionFind::new(n);
    for e in g.elements() {
        uf_all.union(
            g.node_index(&e.tail).unwrap(),
            g.node_index(&e.head).unwrap(),
        );
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if uf_all.connected(i, j) && !uf.connected(i, j) {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Fundamental cutsets and loops
// ---------------------------------------------------------------------------

/// Through-variable balance of one tree branch: `f_branch = sum sign * f_link`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityEquation {
    pub branch: String,
    pub terms: Vec<(i8, String)>,
}

/// Across-variable balance of one link: `v_link = sum sign * v_branch`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityEquation {
    pub link: String,
    pub terms: Vec<(i8, String)>,
}

fn fmt_signed_terms(
    f: &mut fmt::Formatter<'_>,
    terms: &[(i8, String)],
    label: impl Fn(&str) -> String,
) -> fmt::Result {
    if terms.is_empty() {
        return write!(f, "0");
    }
    for (i, (sign, id)) in terms.iter().enumerate() {
        let name = label(id);
        match (i, *sign >= 0) {
            (0, true) => write!(f, "{name}")?,
            (0, false) => write!(f, "-{name}")?,
            (_, true) => write!(f, " + {name}")?,
            (_, false) => write!(f, " - {name}")?,
        }
    }
    Ok(())
}

/// Wrapper for printing equations with element labels resolved in a graph.
pub struct EquationDisplay<'a, T> {
    pub equation: &'a T,
    pub graph: &'a LinearGraph,
}

impl fmt::Display for EquationDisplay<'_, ContinuityEquation> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lhs = self
            .graph
            .element(&self.equation.branch)
            .map(|e| e.through_label())
            .unwrap_or_else(|| self.equation.branch.clone());
        write!(f, "{lhs} = ")?;
        fmt_signed_terms(f, &self.equation.terms, |id| {
            self.graph
                .element(id)
                .map(|e| e.through_label())
                .unwrap_or_else(|| id.to_string())
        })
    }
}

impl fmt::Display for EquationDisplay<'_, CompatibilityEquation> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lhs = self
            .graph
            .element(&self.equation.link)
            .map(|e| e.across_label())
            .unwrap_or_else(|| self.equation.link.clone());
        write!(f, "{lhs} = ")?;
        fmt_signed_terms(f, &self.equation.terms, |id| {
            self.graph
                .element(id)
                .map(|e| e.across_label())
                .unwrap_or_else(|| id.to_string())
        })
    }
}

/// For every link, its unique tree path from tail to head as (branch id,
/// direction) pairs; direction +1 when the branch is traversed tail -> head.
fn link_tree_paths<'a>(
    g: &'a LinearGraph,
    tree: &NormalTree,
) -> BTreeMap<&'a str, Vec<(i8, &'a str)>> {
    // Tree adjacency: node index -> (neighbor, branch id, direction).
    let mut adj: Vec<Vec<(usize, &str, i8)>> = vec![Vec::new(); g.nodes.len()];
    for id in &tree.branches {
        let e = g.element(id).unwrap();
        let (t, h) = (
            g.node_index(&e.tail).unwrap(),
            g.node_index(&e.head).unwrap(),
        );
        adj[t].push((h, e.id.as_str(), 1));
        adj[h].push((t, e.id.as_str(), -1));
    }

    let mut paths = BTreeMap::new();
    for id in &tree.links {
        let e = g.element(id).unwrap();
        let start = g.node_index(&e.tail).unwrap();
        let goal = g.node_index(&e.head).unwrap();
        // BFS through the tree.
        let mut prev: Vec<Option<(usize, &str, i8)>> = vec![None; g.nodes.len()];
        let mut seen = vec![false; g.nodes.len()];
        let mut queue = VecDeque::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            if u == goal {
                break;
            }
            for &(v, b, dir) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    prev[v] = Some((u, b, dir));
                    queue.push_back(v);
                }
            }
        }
        let mut path = Vec::new();
        let mut at = goal;
        while at != start {
            let (from, b, dir) = prev[at].expect("link endpoints lie in one tree component");
            path.push((dir, b));
            at = from;
        }
        path.reverse();
        paths.insert(e.id.as_str(), path);
    }
    paths
}

/// One signed through-variable balance per tree branch (generalized KCL on
/// the branch's fundamental cutset).
pub fn fundamental_cutsets(g: &LinearGraph, tree: &NormalTree) -> Vec<ContinuityEquation> {
    let paths = link_tree_paths(g, tree);
    let mut cutsets: BTreeMap<&str, Vec<(i8, String)>> = BTreeMap::new();
    for b in &tree.branches {
        cutsets.insert(b.as_str(), Vec::new());
    }
    for link in &tree.links {
        for (dir, branch) in &paths[link.as_str()] {
            // A link traversing a branch forward crosses that branch's cutset
            // against the branch orientation.
            cutsets.get_mut(branch).unwrap().push((-dir, link.clone()));
        }
    }
    tree.branches
        .iter()
        .map(|b| {
            let mut terms = cutsets.remove(b.as_str()).unwrap();
            terms.sort_by(|a, b| a.1.cmp(&b.1));
            ContinuityEquation {
                branch: b.clone(),
                terms,
            }
        })
        .collect()
}

/// One signed across-variable balance per link (generalized KVL around the
/// link's fundamental loop).
pub fn fundamental_loops(g: &LinearGraph, tree: &NormalTree) -> Vec<CompatibilityEquation> {
    let paths = link_tree_paths(g, tree);
    tree.links
        .iter()
        .map(|l| {
            let mut terms: Vec<(i8, String)> = paths[l.as_str()]
                .iter()
                .map(|(dir, b)| (*dir, b.to_string()))
                .collect();
            terms.sort_by(|a, b| a.1.cmp(&b.1));
            CompatibilityEquation {
                link: l.clone(),
                terms,
            }
        })
        .collect()
}
