//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured figure. Oracles here are independent of the library paths
//! they check: hand-coded reference matrices, a matrix-exponential
//! integrator, exhaustive tree enumeration, direct DAE integration, and
//! column-wise CSV scans.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lgdyn::estimate::{run_ga, Bounds, GaConfig, TrackingProblem};
use lgdyn::graph::{
    select_normal_tree, validate_graph, Domain, ElementKind, LinearGraph, NormalTree,
};
use lgdyn::models::{
    build_husky_simplified, build_hydromech, build_msd, husky_output_spec, husky_param_env,
    hydromech_output_spec, msd_output_spec, HuskyGeometry, HuskyParams,
};
use lgdyn::simulate::{integrate, CommandSample, CommandTrace};
use lgdyn::statespace::{
    derive_state_space, elemental_equations, evaluate_model, storage_coefficient, ElementEquation,
    NumericStateSpace, OutputSpec, StateSpaceModel, SymMatrix,
};
use lgdyn::symexpr::{self, ParamEnv, SymExpr};

// ---------------------------------------------------------------------------
// Shared oracle helpers
// ---------------------------------------------------------------------------

fn parse(s: &str) -> SymExpr {
    symexpr::parse(s).unwrap()
}

fn matrix_from(rows: &[&[&str]]) -> SymMatrix {
    SymMatrix::from_rows(
        rows.iter()
            .map(|r| r.iter().map(|s| parse(s)).collect())
            .collect(),
    )
}

/// Randomized entrywise equivalence at an explicit relative tolerance.
fn assert_matrix_equiv_tol(
    derived: &SymMatrix,
    expected: &SymMatrix,
    trials: usize,
    seed: u64,
    rtol: f64,
    what: &str,
) {
    assert_eq!(derived.nrows(), expected.nrows(), "{what}: row count");
    assert_eq!(derived.ncols(), expected.ncols(), "{what}: column count");
    let mut symbols = BTreeSet::new();
    for r in 0..derived.nrows() {
        for c in 0..derived.ncols() {
            symbols.extend(derived.get(r, c).symbols());
            symbols.extend(expected.get(r, c).symbols());
        }
    }
    let symbols: Vec<String> = symbols.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let mut env = ParamEnv::new();
        for s in &symbols {
            env.bind(s.clone(), rng.random_range(0.1..10.0));
        }
        for r in 0..derived.nrows() {
            for c in 0..derived.ncols() {
                let a = derived.get(r, c).evaluate(&env).unwrap();
                let b = expected.get(r, c).evaluate(&env).unwrap();
                let tol = rtol * 1.0f64.max(a.abs()).max(b.abs());
                assert!(
                    (a - b).abs() <= tol,
                    "{what}: entry ({r},{c}) derived {} != expected {} ({a} vs {b})",
                    derived.get(r, c),
                    expected.get(r, c)
                );
            }
        }
    }
}

/// Matrix exponential by scaling and squaring of a truncated series; serves
/// as the reference integrator, not as production code.
fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.amax() * n as f64;
    let s = norm.log2().ceil().max(0.0) as u32 + 3;
    let scaled = a / 2f64.powi(s as i32);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..60 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() < 1e-22 {
            break;
        }
    }
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

/// Exact step response x(T) = expm(A T) x0 + A^{-1}(expm(A T) - I) B u.
fn exact_step_response(
    model: &NumericStateSpace,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    let n = model.a.nrows();
    let e = expm(&(&model.a * t));
    let rhs = (&e - DMatrix::identity(n, n)) * (&model.b * u);
    let particular = model.a.clone().lu().solve(&rhs).unwrap();
    &e * x0 + particular
}

fn husky_symbolic() -> (LinearGraph, NormalTree, StateSpaceModel) {
    let g = build_husky_simplified();
    let tree = select_normal_tree(&g).unwrap();
    let model = derive_state_space(&g, &tree, &husky_output_spec()).unwrap();
    (g, tree, model)
}

fn husky_numeric() -> (LinearGraph, StateSpaceModel, NumericStateSpace, ParamEnv) {
    let (g, _, model) = husky_symbolic();
    let env = husky_param_env(&HuskyParams::default(), &HuskyGeometry::default()).unwrap();
    let numeric = evaluate_model(&model, &env).unwrap();
    (g, model, numeric, env)
}

/// The calibration maneuver: straight leg (identifies the voltage
/// coefficient), a long arc (identifies the yaw damping), and a coast to
/// rest with zero command (the stopping distance identifies the wheel
/// damping, which leaves steady-state trajectories unchanged otherwise).
fn calibration_trace() -> CommandTrace {
    let mut samples = Vec::new();
    for i in 0..=400 {
        let t = i as f64 * 0.02;
        let (v_t, v_r) = if t < 2.0 {
            (0.8, 0.0)
        } else if t < 5.0 {
            (0.8, 0.5)
        } else {
            (0.0, 0.0)
        };
        samples.push(CommandSample { t, v_t, v_r });
    }
    CommandTrace::new(samples).unwrap()
}

// ---------------------------------------------------------------------------
// Criterion 1: robot state-space matrices
// ---------------------------------------------------------------------------

#[test]
fn c01_husky_matrix_reproduction() {
    let start = Instant::now();
    let (_, _, model) = husky_symbolic();

    let a_ref = matrix_from(&[
        &[
            "(-B_FL - B_RL)/J_L",
            "0",
            "(B_FL*TF_3 + B_RL*TF_1)/J_L",
            "(B_FL*TF_4 + B_RL*TF_2)/J_L",
            "T_ML/J_L",
            "0",
        ],
        &[
            "0",
            "(-B_FR - B_RR)/J_R",
            "(B_FR*TF_5 + B_RR*TF_7)/J_R",
            "(B_FR*TF_6 + B_RR*TF_8)/J_R",
            "0",
            "T_MR/J_R",
        ],
        &[
            "(B_FL*TF_3 + B_RL*TF_1)/M_H",
            "(B_FR*TF_5 + B_RR*TF_7)/M_H",
            "(-B_RL*TF_1*TF_1 - B_FL*TF_3*TF_3 - B_FR*TF_5*TF_5 - B_RR*TF_7*TF_7)/M_H",
            "(-B_FL*TF_3*TF_4 - B_FR*TF_5*TF_6 - B_RL*TF_1*TF_2 - B_RR*TF_7*TF_8)/M_H",
            "0",
            "0",
        ],
        &[
            "(B_FL*TF_4 + B_RL*TF_2)/J_H",
            "(B_FR*TF_6 + B_RR*TF_8)/J_H",
            "(-B_FL*TF_3*TF_4 - B_FR*TF_5*TF_6 - B_RL*TF_1*TF_2 - B_RR*TF_7*TF_8)/J_H",
            "(-B_RL*TF_2*TF_2 - B_FL*TF_4*TF_4 - B_FR*TF_6*TF_6 - B_RR*TF_8*TF_8 - B_H)/J_H",
            "0",
            "0",
        ],
        &["-T_ML/L_1", "0", "0", "0", "-R_1/L_1", "0"],
        &["0", "-T_MR/L_2", "0", "0", "0", "-R_2/L_2"],
    ]);
    let b_ref = matrix_from(&[
        &["0", "0"],
        &["0", "0"],
        &["0", "0"],
        &["0", "0"],
        &["1/L_1", "0"],
        &["0", "1/L_2"],
    ]);
    let c_ref = matrix_from(&[
        &["1", "0", "0", "0", "0", "0"],
        &["0", "1", "0", "0", "0", "0"],
        &["0", "0", "1", "0", "0", "0"],
        &["0", "0", "0", "1", "0", "0"],
    ]);
    let d_ref = matrix_from(&[&["0", "0"], &["0", "0"], &["0", "0"], &["0", "0"]]);

    assert_matrix_equiv_tol(&model.a, &a_ref, 20, 101, 1e-9, "A");
    assert_matrix_equiv_tol(&model.b, &b_ref, 20, 102, 1e-9, "B");
    assert_matrix_equiv_tol(&model.c, &c_ref, 20, 103, 1e-9, "C");
    assert_matrix_equiv_tol(&model.d, &d_ref, 20, 104, 1e-9, "D");
    assert_eq!(
        model.state_labels,
        vec!["w_JLW", "w_JRW", "v_MH", "w_RJH", "i_L1", "i_L2"]
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!(
        "criterion 1 PASS: robot A/B/C/D reproduced entrywise (20 points, rtol 1e-9) in {:?}",
        elapsed
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: hydro-mechanical model
// ---------------------------------------------------------------------------

#[test]
fn c02_hydromech_reproduction() {
    let g = build_hydromech();
    let tree = select_normal_tree(&g).unwrap();
    let model = derive_state_space(&g, &tree, &hydromech_output_spec()).unwrap();

    // Unambiguous published entries.
    for (entry, expected, what) in [
        (model.a.get(0, 1), "-1/m", "A(1,2)"),
        (model.a.get(1, 0), "K", "A(2,1)"),
        (model.a.get(1, 1), "0", "A(2,2)"),
        (
            model.c.get(0, 0),
            "-A*R_f",
            "C(1,1) line-pressure coefficient",
        ),
        (model.c.get(0, 1), "0", "C(1,2)"),
        (model.c.get(1, 0), "1", "C(2,1)"),
        (model.c.get(1, 1), "0", "C(2,2)"),
        (model.d.get(0, 0), "0", "D(1,1)"),
        (model.d.get(1, 0), "0", "D(2,1)"),
    ] {
        assert!(
            symexpr::equivalent(entry, &parse(expected), 20, 222),
            "{what}: derived {entry} != {expected}"
        );
    }
    // The remaining entries follow the independent hand derivation: the
    // published rendering of A(1,1) is garbled and its B is printed all-zero
    // although the speed source must drive the system; the hand oracle gives
    // the damping sum and the pump feed term below.
    assert!(
        symexpr::equivalent(
            model.a.get(0, 0),
            &parse("-(A*A*(R_f + R_l) + B)/m"),
            20,
            223
        ),
        "A(1,1) hand oracle mismatch: {}",
        model.a.get(0, 0)
    );
    assert!(
        symexpr::equivalent(model.b.get(0, 0), &parse("A*R_l*TF/m"), 20, 224),
        "B(1,1) hand oracle mismatch: {}",
        model.b.get(0, 0)
    );
    assert!(symexpr::equivalent(model.b.get(1, 0), &parse("0"), 20, 225));
    println!(
        "criterion 2 PASS: hydro-mechanical model matches the unambiguous published entries; \
         ambiguous entries match the hand-derivation oracle (A(1,1) = -(A^2(R_f+R_l)+B)/m, \
         B(1,1) = A*R_l*TF/m, documented discrepancy with the garbled print)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: mass-spring-damper oracle
// ---------------------------------------------------------------------------

#[test]
fn c03_msd_oracle() {
    let g = build_msd();
    let tree = select_normal_tree(&g).unwrap();
    let model = derive_state_space(&g, &tree, &msd_output_spec()).unwrap();
    let a_ref = matrix_from(&[&["-B/m", "-1/m"], &["K", "0"]]);
    let b_ref = matrix_from(&[&["1/m"], &["0"]]);
    assert_matrix_equiv_tol(&model.a, &a_ref, 20, 301, 1e-12, "MSD A");
    assert_matrix_equiv_tol(&model.b, &b_ref, 20, 302, 1e-12, "MSD B");
    println!("criterion 3 PASS: MSD matrices equal the hand oracle at rtol 1e-12, 20 points");
}

// ---------------------------------------------------------------------------
// Criteria 4 and 5: small-graph corpus
// ---------------------------------------------------------------------------

/// Deterministic random small graph (single reference component plus
/// whatever extra components two-port pairs create).
fn gen_graph(seed: u64) -> LinearGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_nodes = rng.random_range(3..=5usize);
    let domains = [
        Domain::Electrical,
        Domain::MechTranslation,
        Domain::MechRotation,
        Domain::Fluid,
    ];
    let domain = domains[rng.random_range(0..domains.len())];
    let mut g = LinearGraph::new();
    g.add_node("n0", true);
    for i in 1..n_nodes {
        g.add_node(format!("n{i}"), false);
    }
    let mut next_id = 0usize;
    let pick_kind = |rng: &mut ChaCha8Rng| -> ElementKind {
        match rng.random_range(0..10u32) {
            0..=2 => ElementKind::ATypeStorage,
            3..=4 => ElementKind::TTypeStorage,
            5..=7 => ElementKind::DTypeDissipator,
            8 => ElementKind::AcrossSource,
            _ => ElementKind::ThroughSource,
        }
    };
    // Spanning chain keeps every node attached.
    for i in 1..n_nodes {
        let j = rng.random_range(0..i);
        let kind = pick_kind(&mut rng);
        let (tail, head) = if rng.random_bool(0.5) {
            (format!("n{j}"), format!("n{i}"))
        } else {
            (format!("n{i}"), format!("n{j}"))
        };
        g.add_element(
            format!("E{next_id}"),
            kind,
            domain,
            format!("P{next_id}"),
            tail,
            head,
        );
        next_id += 1;
    }
    // Extra parallel/loop elements.
    let extras = rng.random_range(0..=3usize);
    for _ in 0..extras {
        let a = rng.random_range(0..n_nodes);
        let mut b = rng.random_range(0..n_nodes);
        if a == b {
            b = (b + 1) % n_nodes;
        }
        let kind = pick_kind(&mut rng);
        g.add_element(
            format!("E{next_id}"),
            kind,
            domain,
            format!("P{next_id}"),
            format!("n{a}"),
            format!("n{b}"),
        );
        next_id += 1;
    }
    // Sometimes a two-port pair into a small second component.
    if rng.random_bool(0.4) {
        g.add_node("m0", true).add_node("m1", false);
        g.add_element(
            format!("E{next_id}a"),
            ElementKind::TransformerPort,
            domain,
            "TPx",
            "n0",
            "n1",
        );
        g.add_element(
            format!("E{next_id}b"),
            ElementKind::TransformerPort,
            domain,
            "TPx",
            "m0",
            "m1",
        );
        g.add_element(
            format!("E{next_id}c"),
            pick_kind(&mut rng),
            domain,
            format!("P{next_id}c"),
            "m0",
            "m1",
        );
        g.add_two_port(
            "TPx",
            format!("E{next_id}a"),
            format!("E{next_id}b"),
            SymExpr::sym("Gx"),
        );
    }
    g
}

fn corpus() -> Vec<LinearGraph> {
    let mut graphs: Vec<LinearGraph> = vec![
        build_msd(),
        lgdyn::models::build_msd_undamped(),
        series_rl(),
        bridge(),
    ];
    let mut seed = 0u64;
    while graphs.len() < 25 && seed < 4000 {
        let g = gen_graph(seed);
        seed += 1;
        if g.elements().len() > 8 {
            continue;
        }
        if !validate_graph(&g).is_clean() {
            continue;
        }
        if select_normal_tree(&g).is_err() {
            continue;
        }
        graphs.push(g);
    }
    assert!(graphs.len() >= 25, "only {} corpus graphs", graphs.len());
    graphs
}

fn series_rl() -> LinearGraph {
    let mut g = LinearGraph::new();
    g.add_node("g", true)
        .add_node("a", false)
        .add_node("b", false);
    g.add_element(
        "Vs",
        ElementKind::AcrossSource,
        Domain::Electrical,
        "V",
        "a",
        "g",
    );
    g.add_element(
        "R",
        ElementKind::DTypeDissipator,
        Domain::Electrical,
        "R",
        "a",
        "b",
    );
    g.add_element(
        "L",
        ElementKind::TTypeStorage,
        Domain::Electrical,
        "L",
        "b",
        "g",
    );
    g
}

fn bridge() -> LinearGraph {
    let mut g = LinearGraph::new();
    g.add_node("g", true)
        .add_node("a", false)
        .add_node("b", false)
        .add_node("c", false);
    g.add_element(
        "Vs",
        ElementKind::AcrossSource,
        Domain::Electrical,
        "V",
        "a",
        "g",
    );
    g.add_element(
        "R1",
        ElementKind::DTypeDissipator,
        Domain::Electrical,
        "Ra",
        "a",
        "b",
    );
    g.add_element(
        "R2",
        ElementKind::DTypeDissipator,
        Domain::Electrical,
        "Rb",
        "a",
        "c",
    );
    g.add_element(
        "R3",
        ElementKind::DTypeDissipator,
        Domain::Electrical,
        "Rc",
        "b",
        "g",
    );
    g.add_element(
        "R5",
        ElementKind::DTypeDissipator,
        Domain::Electrical,
        "Re",
        "b",
        "c",
    );
    g.add_element(
        "C1",
        ElementKind::ATypeStorage,
        Domain::Electrical,
        "Ca",
        "c",
        "g",
    );
    g
}

/// Independent enumeration of every valid normal-tree candidate: spanning
/// forests containing all across-sources, no through-sources and exactly one
/// port per two-port.
fn enumerate_valid_trees(g: &LinearGraph) -> Vec<BTreeSet<String>> {
    let elements = g.elements();
    let n_el = elements.len();
    assert!(n_el <= 16);
    let nodes: Vec<&str> = g.nodes().iter().map(|n| n.id.as_str()).collect();
    let index_of = |id: &str| nodes.iter().position(|n| *n == id).unwrap();

    // Component count over the full graph.
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let r = find(parent, parent[x]);
            parent[x] = r;
        }
        parent[x]
    }
    for e in elements {
        let (a, b) = (index_of(&e.tail), index_of(&e.head));
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let comps: BTreeSet<usize> = (0..nodes.len()).map(|i| find(&mut parent, i)).collect();
    let full_roots: Vec<usize> = (0..nodes.len()).map(|i| find(&mut parent, i)).collect();
    let tree_size = nodes.len() - comps.len();

    let mut out = Vec::new();
    'mask: for mask in 0u32..(1 << n_el) {
        if mask.count_ones() as usize != tree_size {
            continue;
        }
        let mut parent: Vec<usize> = (0..nodes.len()).collect();
        for (i, e) in elements.iter().enumerate() {
            let picked = mask & (1 << i) != 0;
            match e.kind {
                ElementKind::AcrossSource if !picked => continue 'mask,
                ElementKind::ThroughSource if picked => continue 'mask,
                _ => {}
            }
            if picked {
                let (a, b) = (index_of(&e.tail), index_of(&e.head));
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra == rb {
                    continue 'mask;
                }
                parent[ra] = rb;
            }
        }
        // Must span every fully-connected pair.
        for i in 0..nodes.len() {
            for j in (i + 1)..nodes.len() {
                if full_roots[i] == full_roots[j] && find(&mut parent, i) != find(&mut parent, j) {
                    continue 'mask;
                }
            }
        }
        for tp in g.two_ports() {
            let ia = g.element_index(&tp.port_a).unwrap();
            let ib = g.element_index(&tp.port_b).unwrap();
            if (mask & (1 << ia) != 0) == (mask & (1 << ib) != 0) {
                continue 'mask;
            }
        }
        out.push(
            elements
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << *i) != 0)
                .map(|(_, e)| e.id.clone())
                .collect(),
        );
    }
    out
}

fn a_count(g: &LinearGraph, branches: &BTreeSet<String>) -> usize {
    branches
        .iter()
        .filter(|id| g.element(id).unwrap().kind == ElementKind::ATypeStorage)
        .count()
}

#[test]
fn c04_normal_tree_rules_on_corpus() {
    let start = Instant::now();
    let graphs = corpus();
    assert!(graphs.len() >= 20);
    for (gi, g) in graphs.iter().enumerate() {
        let tree = select_normal_tree(g).unwrap();
        let branch_set: BTreeSet<String> = tree.branches.iter().cloned().collect();

        // Tree invariants.
        let valid = enumerate_valid_trees(g);
        assert!(
            valid.contains(&branch_set),
            "graph {gi}: selected tree is not a valid spanning/source/port tree"
        );
        for e in g.elements() {
            match e.kind {
                ElementKind::AcrossSource => assert!(branch_set.contains(&e.id)),
                ElementKind::ThroughSource => assert!(!branch_set.contains(&e.id)),
                _ => {}
            }
        }
        let expected_dependent: Vec<String> = g
            .elements()
            .iter()
            .filter(|e| match e.kind {
                ElementKind::ATypeStorage => !branch_set.contains(&e.id),
                ElementKind::TTypeStorage => branch_set.contains(&e.id),
                _ => false,
            })
            .map(|e| e.id.clone())
            .collect();
        assert_eq!(tree.dependent_storage, expected_dependent, "graph {gi}");

        // A-type maximality, globally over all valid trees.
        let max_a = valid.iter().map(|t| a_count(g, t)).max().unwrap();
        assert_eq!(
            a_count(g, &branch_set),
            max_a,
            "graph {gi}: tree is not A-type maximal"
        );
        // And by explicit swap search: no D/T branch swaps with an A link.
        for b in &tree.branches {
            let bk = g.element(b).unwrap().kind;
            if !matches!(bk, ElementKind::DTypeDissipator | ElementKind::TTypeStorage) {
                continue;
            }
            for l in &tree.links {
                if g.element(l).unwrap().kind != ElementKind::ATypeStorage {
                    continue;
                }
                let mut candidate = branch_set.clone();
                candidate.remove(b);
                candidate.insert(l.clone());
                assert!(
                    !valid.contains(&candidate),
                    "graph {gi}: swapping branch {b} for A-type link {l} stays valid"
                );
            }
        }

        // Cutset/loop orthogonality, brute force.
        assert_orthogonal(g, &tree);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "criterion 4 PASS: normal-tree invariants and A-maximality on {} graphs in {:?}",
        graphs.len(),
        elapsed
    );
}

fn assert_orthogonal(g: &LinearGraph, tree: &NormalTree) {
    use lgdyn::graph::{fundamental_cutsets, fundamental_loops};
    let cuts = fundamental_cutsets(g, tree);
    let loops = fundamental_loops(g, tree);
    for cut in &cuts {
        let mut cvec: std::collections::BTreeMap<&str, i32> = Default::default();
        cvec.insert(cut.branch.as_str(), 1);
        for (s, l) in &cut.terms {
            cvec.insert(l.as_str(), -i32::from(*s));
        }
        for lp in &loops {
            let mut dot = *cvec.get(lp.link.as_str()).unwrap_or(&0);
            for (s, b) in &lp.terms {
                dot -= i32::from(*s) * cvec.get(b.as_str()).unwrap_or(&0);
            }
            assert_eq!(dot, 0, "cutset {} vs loop {}", cut.branch, lp.link);
        }
    }
}

/// Direct integration of the full elemental + topological equation set:
/// node potentials and element through-variables are solved per RK4 stage
/// from the constitutive and node-balance equations alone.
struct DaeOracle {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// rhs row -> (state index or input index).
    rhs_rows: Vec<(usize, RhsSource)>,
    /// For each state: (element row info for extracting xdot).
    state_extract: Vec<StateExtract>,
    n_vars: usize,
}

#[derive(Clone, Copy)]
enum RhsSource {
    State(usize),
    Input(usize),
}

#[derive(Clone, Copy)]
enum StateExtract {
    /// xdot = f[element] / coeff
    FromThrough { f_col: usize, coeff: f64 },
    /// xdot = (phi[head] - phi[tail]) / coeff
    FromAcross {
        head: isize,
        tail: isize,
        coeff: f64,
    },
}

impl DaeOracle {
    fn new(g: &LinearGraph, model: &StateSpaceModel, env: &ParamEnv) -> DaeOracle {
        let elements = g.elements();
        let nodes: Vec<&str> = g.nodes().iter().map(|n| n.id.as_str()).collect();
        // Potential column per non-reference node; references pin to -1.
        let mut phi_col: Vec<isize> = Vec::new();
        let mut next = 0isize;
        for n in g.nodes() {
            if n.is_reference {
                phi_col.push(-1);
            } else {
                phi_col.push(next);
                next += 1;
            }
        }
        let n_phi = next as usize;
        let f_col = |ei: usize| n_phi + ei;
        let n_vars = n_phi + elements.len();
        let node_idx = |id: &str| nodes.iter().position(|n| *n == id).unwrap();

        let state_of: std::collections::BTreeMap<&str, usize> = model
            .state_elements
            .iter()
            .enumerate()
            .map(|(k, id)| (id.as_str(), k))
            .collect();
        let input_of: std::collections::BTreeMap<&str, usize> = g
            .sources()
            .enumerate()
            .map(|(j, e)| (e.id.as_str(), j))
            .collect();

        let mut m = DMatrix::zeros(n_vars, n_vars);
        let mut rhs_rows = Vec::new();
        let mut row = 0usize;

        // KCL at every non-reference node.
        for (ni, node) in g.nodes().iter().enumerate() {
            if node.is_reference {
                continue;
            }
            for (ei, e) in elements.iter().enumerate() {
                if node_idx(&e.tail) == ni {
                    m[(row, f_col(ei))] += 1.0;
                }
                if node_idx(&e.head) == ni {
                    m[(row, f_col(ei))] -= 1.0;
                }
            }
            row += 1;
        }

        // Constitutive equations, with storage states pinned to x.
        let add_phi = |m: &mut DMatrix<f64>, row: usize, e: &lgdyn::graph::Element, sign: f64| {
            let h = phi_col[node_idx(&e.head)];
            let t = phi_col[node_idx(&e.tail)];
            if h >= 0 {
                m[(row, h as usize)] += sign;
            }
            if t >= 0 {
                m[(row, t as usize)] -= sign;
            }
        };
        let mut state_extract = vec![
            StateExtract::FromThrough {
                f_col: 0,
                coeff: 1.0
            };
            model.state_elements.len()
        ];
        for eq in elemental_equations(g) {
            match eq {
                ElementEquation::AStorage { element, coeff } => {
                    let ei = g.element_index(&element).unwrap();
                    let e = &elements[ei];
                    let k = state_of[element.as_str()];
                    // across = x_k
                    add_phi(&mut m, row, e, 1.0);
                    rhs_rows.push((row, RhsSource::State(k)));
                    row += 1;
                    state_extract[k] = StateExtract::FromThrough {
                        f_col: f_col(ei),
                        coeff: coeff.evaluate(env).unwrap(),
                    };
                }
                ElementEquation::TStorage { element, coeff } => {
                    let ei = g.element_index(&element).unwrap();
                    let e = &elements[ei];
                    let k = state_of[element.as_str()];
                    // through = x_k
                    m[(row, f_col(ei))] = 1.0;
                    rhs_rows.push((row, RhsSource::State(k)));
                    row += 1;
                    state_extract[k] = StateExtract::FromAcross {
                        head: phi_col[node_idx(&e.head)],
                        tail: phi_col[node_idx(&e.tail)],
                        coeff: coeff.evaluate(env).unwrap(),
                    };
                }
                ElementEquation::AcrossFromThrough { element, coeff } => {
                    let ei = g.element_index(&element).unwrap();
                    let e = &elements[ei];
                    add_phi(&mut m, row, e, 1.0);
                    m[(row, f_col(ei))] = -coeff.evaluate(env).unwrap();
                    row += 1;
                }
                ElementEquation::ThroughFromAcross { element, coeff } => {
                    let ei = g.element_index(&element).unwrap();
                    let e = &elements[ei];
                    m[(row, f_col(ei))] = 1.0;
                    add_phi(&mut m, row, e, -coeff.evaluate(env).unwrap());
                    row += 1;
                }
                ElementEquation::AcrossSource { element, .. } => {
                    let ei = g.element_index(&element).unwrap();
                    let e = &elements[ei];
                    add_phi(&mut m, row, e, 1.0);
                    rhs_rows.push((row, RhsSource::Input(input_of[element.as_str()])));
                    row += 1;
                }
                ElementEquation::ThroughSource { element, .. } => {
                    let ei = g.element_index(&element).unwrap();
                    m[(row, f_col(ei))] = 1.0;
                    rhs_rows.push((row, RhsSource::Input(input_of[element.as_str()])));
                    row += 1;
                }
                ElementEquation::Transformer {
                    port_a,
                    port_b,
                    ratio,
                    ..
                } => {
                    let ratio = ratio.evaluate(env).unwrap();
                    let ia = g.element_index(&port_a).unwrap();
                    let ib = g.element_index(&port_b).unwrap();
                    // across_b - ratio*across_a = 0
                    add_phi(&mut m, row, &elements[ib], 1.0);
                    add_phi(&mut m, row, &elements[ia], -ratio);
                    row += 1;
                    // through_a + ratio*through_b = 0
                    m[(row, f_col(ia))] = 1.0;
                    m[(row, f_col(ib))] = ratio;
                    row += 1;
                }
            }
        }
        assert_eq!(row, n_vars, "DAE system is not square");
        DaeOracle {
            lu: m.lu(),
            rhs_rows,
            state_extract,
            n_vars,
        }
    }

    fn xdot(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut rhs = DVector::zeros(self.n_vars);
        for (row, src) in &self.rhs_rows {
            rhs[*row] = match src {
                RhsSource::State(k) => x[*k],
                RhsSource::Input(j) => u[*j],
            };
        }
        let w = self.lu.solve(&rhs).expect("DAE stage solve");
        DVector::from_iterator(
            x.len(),
            self.state_extract.iter().map(|ex| match ex {
                StateExtract::FromThrough { f_col, coeff } => w[*f_col] / coeff,
                StateExtract::FromAcross { head, tail, coeff } => {
                    let vh = if *head >= 0 { w[*head as usize] } else { 0.0 };
                    let vt = if *tail >= 0 { w[*tail as usize] } else { 0.0 };
                    (vh - vt) / coeff
                }
            }),
        )
    }

    /// RK4 on the oracle's stage function with constant input.
    fn integrate(
        &self,
        x0: &DVector<f64>,
        u: &DVector<f64>,
        t_end: f64,
        dt: f64,
    ) -> Vec<DVector<f64>> {
        let steps = (t_end / dt).round() as usize;
        let mut xs = Vec::with_capacity(steps + 1);
        let mut x = x0.clone();
        xs.push(x.clone());
        for _ in 0..steps {
            let k1 = self.xdot(&x, u);
            let k2 = self.xdot(&(&x + &k1 * (dt / 2.0)), u);
            let k3 = self.xdot(&(&x + &k2 * (dt / 2.0)), u);
            let k4 = self.xdot(&(&x + &k3 * dt), u);
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            xs.push(x.clone());
        }
        xs
    }
}

#[test]
fn c05_dae_equivalence_on_corpus() {
    let mut checked = 0usize;
    for (gi, g) in corpus().iter().enumerate() {
        let tree = select_normal_tree(g).unwrap();
        if !tree.dependent_storage.is_empty() {
            continue;
        }
        let outputs = OutputSpec::default();
        let Ok(model) = derive_state_space(g, &tree, &outputs) else {
            continue;
        };
        if model.num_states() == 0 {
            continue;
        }
        // Random positive parameters.
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + gi as u64);
        let mut env = ParamEnv::new();
        let mut symbols = BTreeSet::new();
        for e in g.elements() {
            if !e.kind.is_source() && e.kind != ElementKind::TransformerPort {
                symbols.insert(e.param.clone());
            }
        }
        for tp in g.two_ports() {
            symbols.extend(tp.ratio.symbols());
        }
        for s in symbols {
            env.bind(s, rng.random_range(0.5..2.0));
        }
        let Ok(numeric) = evaluate_model(&model, &env) else {
            continue;
        };
        if !numeric.a.iter().all(|v| v.is_finite()) {
            continue;
        }
        let max_eig = numeric
            .a
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|l| l.norm())
            .fold(0.0f64, f64::max);
        if max_eig > 5e3 {
            continue;
        }
        let dt = (1e-3f64).min(1.0 / (1.0f64).max(max_eig));
        let n = model.num_states();
        let m = numeric.b.ncols();
        let x0 = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0)));
        let u = DVector::from_element(m, 1.0);

        let sim = integrate(&numeric, |_| u.clone(), &x0, 1.0, dt).unwrap();
        let oracle = DaeOracle::new(g, &model, &env);
        let reference = oracle.integrate(&x0, &u, 1.0, dt);
        assert_eq!(sim.states.len(), reference.len());

        let scale = reference
            .iter()
            .map(|x| x.norm())
            .fold(0.0f64, f64::max)
            .max(1e-9);
        let worst = sim
            .states
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(
            worst / scale < 1e-6,
            "graph {gi}: derived-model simulation deviates from the DAE by {:.3e} relative",
            worst / scale
        );
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} DAE-comparable graphs");
    println!(
        "criterion 5 PASS: derived models match direct DAE integration (rel < 1e-6) on {checked} graphs"
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: symmetry invariants
// ---------------------------------------------------------------------------

#[test]
fn c06_symmetry_invariants() {
    use lgdyn::simulate::{simulate_maneuver, ManeuverOptions};
    let (_, _, numeric, _) = husky_numeric();

    let straight = CommandTrace::new(vec![
        CommandSample {
            t: 0.0,
            v_t: 0.7,
            v_r: 0.0,
        },
        CommandSample {
            t: 10.0,
            v_t: 0.7,
            v_r: 0.0,
        },
    ])
    .unwrap();
    let sim = simulate_maneuver(
        &numeric,
        0.8961,
        &straight,
        1e-3,
        2,
        3,
        &ManeuverOptions::default(),
    )
    .unwrap();
    let max_yaw = sim
        .output_channel(3)
        .iter()
        .fold(0.0f64, |m, w| m.max(w.abs()));
    assert!(
        max_yaw <= 1e-10,
        "pure translation: max |yaw rate| = {max_yaw:e}"
    );

    let spin = CommandTrace::new(vec![
        CommandSample {
            t: 0.0,
            v_t: 0.0,
            v_r: 0.5,
        },
        CommandSample {
            t: 10.0,
            v_t: 0.0,
            v_r: 0.5,
        },
    ])
    .unwrap();
    let sim = simulate_maneuver(
        &numeric,
        0.8961,
        &spin,
        1e-3,
        2,
        3,
        &ManeuverOptions::default(),
    )
    .unwrap();
    let max_v = sim
        .output_channel(2)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max_v <= 1e-10, "pure rotation: max |v| = {max_v:e}");
    println!(
        "criterion 6 PASS: symmetric robot holds |yaw|<=1e-10 under translation \
         (measured {max_yaw:.1e}) and |v|<=1e-10 under rotation (measured {max_v:.1e})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: passivity
// ---------------------------------------------------------------------------

#[test]
fn c07_zero_input_energy_decay() {
    let (g, model, numeric, env) = husky_numeric();
    // Generalized storage coefficient per state.
    let coeffs: Vec<f64> = model
        .state_elements
        .iter()
        .map(|id| {
            storage_coefficient(g.element(id).unwrap())
                .evaluate(&env)
                .unwrap()
        })
        .collect();
    let energy =
        |x: &DVector<f64>| -> f64 { x.iter().zip(&coeffs).map(|(xi, c)| 0.5 * c * xi * xi).sum() };
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let mut worst_violation = 0.0f64;
    for _ in 0..10 {
        let x0 = DVector::from_iterator(6, (0..6).map(|_| rng.random_range(-1.0..1.0)));
        let sim = integrate(&numeric, |_| DVector::zeros(2), &x0, 1.0, 1e-4).unwrap();
        let e0 = energy(&sim.states[0]);
        let mut prev = e0;
        for x in &sim.states[1..] {
            let e = energy(x);
            let violation = (e - prev) / e0;
            worst_violation = worst_violation.max(violation);
            assert!(
                e <= prev + 1e-9 * e0,
                "energy rose from {prev:.6e} to {e:.6e}"
            );
            prev = e;
        }
    }
    println!(
        "criterion 7 PASS: zero-input storage energy non-increasing for 10 random starts \
         (worst step change {worst_violation:.1e} relative)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: RK4 convergence order
// ---------------------------------------------------------------------------

#[test]
fn c08_rk4_convergence_order() {
    let (_, _, numeric, _) = husky_numeric();
    let u = DVector::from_vec(vec![6.0, 4.8]);
    let x0 = DVector::zeros(6);
    let t_end = 6.4e-3;
    let exact = exact_step_response(&numeric, &x0, &u, t_end);

    // Step grid inside both the RK4 stability window of the fastest pole
    // (R/L ~ 2091 1/s bounds dt below ~1.2e-3) and its asymptotic regime
    // (|eig|*dt < 1, above which the order estimate degrades).
    let dts = [5e-5, 1e-4, 2e-4, 4e-4];
    let mut points = Vec::new();
    for &dt in &dts {
        let sim = integrate(&numeric, |_| u.clone(), &x0, t_end, dt).unwrap();
        let err = (sim.states.last().unwrap() - &exact).norm() / exact.norm();
        assert!(err.is_finite() && err > 0.0);
        points.push((dt.ln(), err.ln()));
    }
    // Least-squares slope.
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    assert!(
        (slope - 4.0).abs() <= 0.2,
        "measured convergence order {slope:.3}"
    );
    println!("criterion 8 PASS: RK4 convergence order {slope:.3} against the matrix-exponential reference");
}

// ---------------------------------------------------------------------------
// Criteria 9 and 10: GA recovery and determinism
// ---------------------------------------------------------------------------

fn make_problem<'a>(
    model: &'a StateSpaceModel,
    trace: &'a CommandTrace,
    dt: f64,
) -> TrackingProblem<'a> {
    let env = husky_param_env(&HuskyParams::default(), &HuskyGeometry::default()).unwrap();
    TrackingProblem {
        model,
        base_env: env,
        trace,
        ref_x: Vec::new(),
        ref_y: Vec::new(),
        dt,
        v_channel: 2,
        omega_channel: 3,
    }
}

#[test]
fn c09_ga_recovers_generating_parameters() {
    let start = Instant::now();
    let (_, _, model) = husky_symbolic();
    let trace = calibration_trace();
    let dt = 5e-4;
    let mut problem = make_problem(&model, &trace, dt);

    // Synthetic reference at the published calibration result.
    let target = [1.3016, 12.8650, 0.8961];
    let sim = problem.simulate(target[0], target[1], target[2]).unwrap();
    let at_ref = sim.resampled(&trace.times());
    problem.ref_x = at_ref.poses.iter().map(|p| p.x).collect();
    problem.ref_y = at_ref.poses.iter().map(|p| p.y).collect();

    // Elitism raised for this run: the optimum sits in a corner of the wide
    // damping box and a larger elite pool keeps the valley leaders alive
    // while crossover walks down to it.
    let config = GaConfig {
        population_size: 100,
        max_generations: 100,
        crossover_fraction: 0.5,
        elite_count: 15,
        seed: 2026,
        parallel_evaluations: true,
        ..GaConfig::default()
    };
    let bounds = Bounds::new(vec![1.0, 1.0, 0.75], vec![100.0, 100.0, 1.0]).unwrap();
    let result = run_ga(&config, &bounds, |genome| problem.objective(genome)).unwrap();

    let n_samples = trace.samples().len() as f64;
    for (got, want) in result.best_params.iter().zip(&target) {
        let rel = (got - want).abs() / want;
        assert!(
            rel <= 0.05,
            "recovered {got:.4} vs {want:.4} ({rel:.3} relative)"
        );
    }
    assert!(
        result.best_objective < 1e-2 * n_samples,
        "objective {:.4e} >= {:.4e}",
        result.best_objective,
        1e-2 * n_samples
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!(
        "criterion 9 PASS: GA recovered (B, B_H, c) = ({:.4}, {:.4}, {:.4}) vs (1.3016, 12.8650, 0.8961), \
         objective {:.3e} over {} samples, {} generations in {:?}",
        result.best_params[0],
        result.best_params[1],
        result.best_params[2],
        result.best_objective,
        trace.samples().len(),
        result.generations_run,
        elapsed
    );
}

#[test]
fn c10_ga_determinism_across_parallelism() {
    let (_, _, model) = husky_symbolic();
    let trace = CommandTrace::new(
        (0..=40)
            .map(|i| CommandSample {
                t: i as f64 * 0.05,
                v_t: 0.5,
                v_r: if i > 20 { 0.4 } else { 0.0 },
            })
            .collect(),
    )
    .unwrap();
    let mut problem = make_problem(&model, &trace, 1e-3);
    let sim = problem.simulate(1.3016, 12.8650, 0.8961).unwrap();
    let at_ref = sim.resampled(&trace.times());
    problem.ref_x = at_ref.poses.iter().map(|p| p.x).collect();
    problem.ref_y = at_ref.poses.iter().map(|p| p.y).collect();

    let bounds = Bounds::new(vec![1.0, 1.0, 0.75], vec![100.0, 100.0, 1.0]).unwrap();
    let mut config = GaConfig {
        population_size: 16,
        max_generations: 6,
        seed: 99,
        parallel_evaluations: false,
        ..GaConfig::default()
    };
    let serial = run_ga(&config, &bounds, |g| problem.objective(g)).unwrap();
    let serial2 = run_ga(&config, &bounds, |g| problem.objective(g)).unwrap();
    config.parallel_evaluations = true;
    let parallel = run_ga(&config, &bounds, |g| problem.objective(g)).unwrap();

    assert_eq!(serial, serial2, "same seed, serial: results differ");
    assert_eq!(serial, parallel, "parallel evaluation changed the result");
    println!(
        "criterion 10 PASS: identical seeds give bitwise-identical results, serial and parallel"
    );
}

// ---------------------------------------------------------------------------
// Criterion 11: validation workflow on synthetic data
// ---------------------------------------------------------------------------

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lgdyn"))
}

fn read_csv_columns(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect();
    let mut columns = vec![Vec::new(); header.len()];
    for line in lines {
        for (i, field) in line.split(',').enumerate() {
            columns[i].push(field.parse::<f64>().unwrap());
        }
    }
    (header, columns)
}

#[test]
fn c11_validation_bounds_match_column_scan() {
    let dir = std::env::temp_dir().join(format!("lgdyn-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let trace_path = dir.join("commands.csv");
    let mut text = String::from("t,v_t,v_r\n");
    for i in 0..=150 {
        let t = i as f64 * 0.02;
        let (v_t, v_r) = if t < 1.0 { (0.6 * t, 0.0) } else { (0.6, 0.35) };
        text.push_str(&format!("{t},{v_t},{v_r}\n"));
    }
    std::fs::write(&trace_path, text).unwrap();

    // "Physical" data: the same maneuver at perturbed parameters.
    let perturbed = dir.join("perturbed_params.toml");
    std::fs::write(
        &perturbed,
        "B_RL = 1.4968\nB_FL = 1.4968\nB_FR = 1.4968\nB_RR = 1.4968\nc = 0.8513\n",
    )
    .unwrap();
    let perturbed_dir = dir.join("data");
    let out = cli()
        .args([
            "simulate",
            "--model",
            "husky-simplified",
            "--trace",
            trace_path.to_str().unwrap(),
            "--params",
            perturbed.to_str().unwrap(),
            "--export-trace",
            "--out",
            perturbed_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let data_csv = perturbed_dir.join("trace_sim.csv");

    // Validate the nominal model against the perturbed data.
    let out = cli()
        .args([
            "validate",
            "--model",
            "husky-simplified",
            "--trace",
            data_csv.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("|X| <= "), "{stdout}");
    assert!(stdout.contains("|Y| <= "), "{stdout}");
    assert!(stdout.contains("[m]"), "{stdout}");
    let reported: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("validation.json")).unwrap())
            .unwrap();

    // Independent oracle: nominal simulation resampled at the trace grid,
    // compared column-wise against the data file.
    let nominal_dir = dir.join("nominal");
    let out = cli()
        .args([
            "simulate",
            "--model",
            "husky-simplified",
            "--trace",
            data_csv.to_str().unwrap(),
            "--at-trace",
            "--out",
            nominal_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let (dh, dc) = read_csv_columns(&data_csv);
    let (nh, nc) = read_csv_columns(&nominal_dir.join("result.csv"));
    let dcol = |name: &str| &dc[dh.iter().position(|h| h == name).unwrap()];
    let ncol = |name: &str| &nc[nh.iter().position(|h| h == name).unwrap()];
    let max_diff = |a: &Vec<f64>, b: &Vec<f64>| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max)
    };
    let oracle_x = max_diff(dcol("x"), ncol("x"));
    let oracle_y = max_diff(dcol("y"), ncol("y"));

    let rep_x = reported["max_abs_x"].as_f64().unwrap();
    let rep_y = reported["max_abs_y"].as_f64().unwrap();
    assert_eq!(
        rep_x, oracle_x,
        "x bound differs from the column-scan oracle"
    );
    assert_eq!(
        rep_y, oracle_y,
        "y bound differs from the column-scan oracle"
    );
    assert!(rep_x > 0.0 && rep_y > 0.0, "perturbation must show up");
    std::fs::remove_dir_all(&dir).ok();
    println!(
        "criterion 11 PASS: reported bounds |X| <= {rep_x:.4} [m], |Y| <= {rep_y:.4} [m] \
         equal the independent column-wise scan exactly (published robot data is unavailable; \
         synthetic perturbed-parameter data substitutes)"
    );
}
