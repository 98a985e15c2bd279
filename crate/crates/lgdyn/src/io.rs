//! File formats: graph description files (TOML), command/measurement traces
//! (CSV), parameter and geometry files (TOML), machine-readable model files
//! (JSON), calibration reports, and static SVG plots.
//!
//! All emitters are deterministic: identical inputs produce byte-identical
//! files.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::estimate::{Bounds, EstimationResult};
use crate::graph::{Domain, ElementKind, LinearGraph};
use crate::models::{BeltParams, HuskyGeometry, HuskyParams};
use crate::simulate::{CommandSample, CommandTrace, SimResult};
use crate::statespace::{OutputSpec, StateSpaceModel, VarKind};
use crate::symexpr::{self, ParamEnv};

/// File ingestion/emission failure. Every variant names the offending file.
#[derive(Debug)]
pub enum IoError {
    Io { path: String, detail: String },
    MalformedToml { path: String, detail: String },
    MalformedCsv { path: String, detail: String },
    NonMonotoneTime { path: String, row: usize },
    MissingColumn { path: String, column: String },
    BadTrace { path: String, detail: String },
    BadGraph { path: String, detail: String },
}

impl fmt::Display for IoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IoError::Io { path, detail } => write!(f, "{path}: {detail}"),
            IoError::MalformedToml { path, detail } => write!(f, "{path}: bad TOML: {detail}"),
            IoError::MalformedCsv { path, detail } => write!(f, "{path}: bad CSV: {detail}"),
            IoError::NonMonotoneTime { path, row } => {
                write!(f, "{path}: time must increase strictly (row {row})")
            }
            IoError::MissingColumn { path, column } => {
                write!(f, "{path}: required column `{column}` is missing")
            }
            IoError::BadTrace { path, detail } => write!(f, "{path}: bad trace: {detail}"),
            IoError::BadGraph { path, detail } => write!(f, "{path}: bad graph: {detail}"),
        }
    }
}

impl std::error::Error for IoError {}

fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn write_string(path: &Path, contents: &str) -> Result<(), IoError> {
    fs::write(path, contents).map_err(|e| IoError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Graph description files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    #[serde(default)]
    nodes: Vec<NodeDto>,
    #[serde(default)]
    elements: Vec<ElementDto>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    two_ports: Vec<TwoPortDto>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<InputDto>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    outputs: Vec<OutputDto>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeDto {
    id: String,
    reference: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct ElementDto {
    id: String,
    kind: ElementKind,
    domain: Domain,
    param: String,
    tail: String,
    head: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TwoPortDto {
    id: String,
    port_a: String,
    port_b: String,
    ratio: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct InputDto {
    source: String,
    signal: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct OutputDto {
    element: String,
    variable: VariableDto,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum VariableDto {
    Across,
    Through,
}

impl From<VariableDto> for VarKind {
    fn from(v: VariableDto) -> Self {
        match v {
            VariableDto::Across => VarKind::Across,
            VariableDto::Through => VarKind::Through,
        }
    }
}

impl From<VarKind> for VariableDto {
    fn from(v: VarKind) -> Self {
        match v {
            VarKind::Across => VariableDto::Across,
            VarKind::Through => VariableDto::Through,
        }
    }
}

/// Serializes a graph (and its output selection) to the TOML graph format.
pub fn graph_to_toml(g: &LinearGraph, outputs: &OutputSpec) -> String {
    let file = GraphFile {
        nodes: g
            .nodes()
            .iter()
            .map(|n| NodeDto {
                id: n.id.clone(),
                reference: n.is_reference,
            })
            .collect(),
        elements: g
            .elements()
            .iter()
            .map(|e| ElementDto {
                id: e.id.clone(),
                kind: e.kind,
                domain: e.domain,
                param: e.param.clone(),
                tail: e.tail.clone(),
                head: e.head.clone(),
            })
            .collect(),
        two_ports: g
            .two_ports()
            .iter()
            .map(|tp| TwoPortDto {
                id: tp.id.clone(),
                port_a: tp.port_a.clone(),
                port_b: tp.port_b.clone(),
                ratio: tp.ratio.to_string(),
            })
            .collect(),
        inputs: g
            .sources()
            .map(|e| InputDto {
                source: e.id.clone(),
                signal: e.param.clone(),
            })
            .collect(),
        outputs: outputs
            .outputs
            .iter()
            .map(|(id, kind)| OutputDto {
                element: id.clone(),
                variable: (*kind).into(),
            })
            .collect(),
    };
    toml::to_string(&file).expect("graph serialization cannot fail")
}

/// Parses the TOML graph format.
pub fn graph_from_toml(text: &str, path: &str) -> Result<(LinearGraph, OutputSpec), IoError> {
    let file: GraphFile = toml::from_str(text).map_err(|e| IoError::MalformedToml {
        path: path.to_string(),
        detail: e.to_string(),
    })?;
    let mut g = LinearGraph::new();
    for n in &file.nodes {
        g.add_node(n.id.clone(), n.reference);
    }
    for e in &file.elements {
        g.add_element(
            e.id.clone(),
            e.kind,
            e.domain,
            e.param.clone(),
            e.tail.clone(),
            e.head.clone(),
        );
    }
    for tp in &file.two_ports {
        let ratio = symexpr::parse(&tp.ratio).map_err(|err| IoError::BadGraph {
            path: path.to_string(),
            detail: format!("two-port `{}` ratio: {err}", tp.id),
        })?;
        g.add_two_port(tp.id.clone(), tp.port_a.clone(), tp.port_b.clone(), ratio);
    }
    for input in &file.inputs {
        match g.element(&input.source) {
            None => {
                return Err(IoError::BadGraph {
                    path: path.to_string(),
                    detail: format!("inputs reference unknown element `{}`", input.source),
                });
            }
            Some(e) if !e.kind.is_source() => {
                return Err(IoError::BadGraph {
                    path: path.to_string(),
                    detail: format!("input element `{}` is not a source", input.source),
                });
            }
            Some(e) if e.param != input.signal => {
                return Err(IoError::BadGraph {
                    path: path.to_string(),
                    detail: format!(
                        "input `{}` signal `{}` does not match the element param `{}`",
                        input.source, input.signal, e.param
                    ),
                });
            }
            Some(_) => {}
        }
    }
    let mut outputs = OutputSpec::default();
    for o in &file.outputs {
        if g.element(&o.element).is_none() {
            return Err(IoError::BadGraph {
                path: path.to_string(),
                detail: format!("outputs reference unknown element `{}`", o.element),
            });
        }
        outputs.push(o.element.clone(), o.variable.into());
    }
    Ok((g, outputs))
}

pub fn save_graph(path: &Path, g: &LinearGraph, outputs: &OutputSpec) -> Result<(), IoError> {
    write_string(path, &graph_to_toml(g, outputs))
}

pub fn load_graph(path: &Path) -> Result<(LinearGraph, OutputSpec), IoError> {
    let text = read_to_string(path)?;
    graph_from_toml(&text, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

/// A recorded robot data trace: mandatory command columns and optional
/// measurement columns, all sampled on one strictly increasing time grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataTrace {
    pub times: Vec<f64>,
    pub v_t: Vec<f64>,
    pub v_r: Vec<f64>,
    pub omega_l: Option<Vec<f64>>,
    pub omega_r: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
    pub omega: Option<Vec<f64>>,
    pub x: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
}

impl DataTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn has_xy(&self) -> bool {
        self.x.is_some() && self.y.is_some()
    }

    /// The command portion as a validated [`CommandTrace`].
    pub fn command_trace(&self) -> Result<CommandTrace, crate::simulate::TraceError> {
        CommandTrace::new(
            self.times
                .iter()
                .zip(self.v_t.iter().zip(&self.v_r))
                .map(|(&t, (&v_t, &v_r))| CommandSample { t, v_t, v_r })
                .collect(),
        )
    }
}

const TRACE_COLUMNS: [&str; 9] = [
    "t", "v_t", "v_r", "omega_l", "omega_r", "v", "omega", "x", "y",
];

/// Loads a trace CSV with header `t,v_t,v_r[,omega_l,omega_r,v,omega,x,y]`.
pub fn load_trace(path: &Path) -> Result<DataTrace, IoError> {
    let p = path.display().to_string();
    let text = read_to_string(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| IoError::MalformedCsv {
            path: p.clone(),
            detail: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    for required in ["t", "v_t", "v_r"] {
        if col(required).is_none() {
            return Err(IoError::MissingColumn {
                path: p.clone(),
                column: required.to_string(),
            });
        }
    }
    let mut columns: Vec<(usize, Vec<f64>)> = TRACE_COLUMNS
        .iter()
        .filter_map(|name| col(name).map(|idx| (idx, Vec::new())))
        .collect();
    let present: Vec<&str> = TRACE_COLUMNS
        .iter()
        .copied()
        .filter(|name| col(name).is_some())
        .collect();

    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IoError::MalformedCsv {
            path: p.clone(),
            detail: e.to_string(),
        })?;
        for (idx, values) in &mut columns {
            let field = record.get(*idx).ok_or_else(|| IoError::MalformedCsv {
                path: p.clone(),
                detail: format!("row {} is short", row_idx + 2),
            })?;
            let value: f64 = field.trim().parse().map_err(|_| IoError::MalformedCsv {
                path: p.clone(),
                detail: format!("row {}: `{field}` is not a number", row_idx + 2),
            })?;
            values.push(value);
        }
    }

    let take = |name: &str| -> Option<Vec<f64>> {
        present
            .iter()
            .position(|n| *n == name)
            .map(|i| columns[i].1.clone())
    };
    let times = take("t").unwrap();
    if times.is_empty() {
        return Err(IoError::BadTrace {
            path: p,
            detail: "trace has no rows".to_string(),
        });
    }
    for (i, w) in times.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(IoError::NonMonotoneTime {
                path: p,
                row: i + 3,
            });
        }
    }
    if times[0] != 0.0 {
        return Err(IoError::BadTrace {
            path: p,
            detail: format!("first sample must be at t = 0, got {}", times[0]),
        });
    }
    Ok(DataTrace {
        times,
        v_t: take("v_t").unwrap(),
        v_r: take("v_r").unwrap(),
        omega_l: take("omega_l"),
        omega_r: take("omega_r"),
        v: take("v"),
        omega: take("omega"),
        x: take("x"),
        y: take("y"),
    })
}

/// Writes a full data-trace CSV (commands plus simulated measurements) at
/// the command sample times; the file round-trips through [`load_trace`].
pub fn write_data_trace(
    path: &Path,
    trace: &CommandTrace,
    sim_at_trace_times: &SimResult,
) -> Result<(), IoError> {
    let sim = sim_at_trace_times;
    assert_eq!(sim.times.len(), trace.samples().len());
    let mut out = String::from("t,v_t,v_r,omega_l,omega_r,v,omega,x,y\n");
    for (i, s) in trace.samples().iter().enumerate() {
        let y = &sim.outputs[i];
        let pose = sim.poses[i];
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.t, s.v_t, s.v_r, y[0], y[1], y[2], y[3], pose.x, pose.y
        ));
    }
    write_string(path, &out)
}

/// Writes the simulation result CSV `t,w_left,w_right,v,omega,x,y,psi`.
pub fn write_result_csv(path: &Path, sim: &SimResult) -> Result<(), IoError> {
    let mut out = String::from("t,w_left,w_right,v,omega,x,y,psi\n");
    for i in 0..sim.len() {
        let y = &sim.outputs[i];
        let pose = sim.poses.get(i).copied().unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            sim.times[i], y[0], y[1], y[2], y[3], pose.x, pose.y, pose.psi
        ));
    }
    write_string(path, &out)
}

// ---------------------------------------------------------------------------
// Parameters and geometry
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct HuskyParamsDoc {
    #[serde(flatten)]
    params: HuskyParams,
    belt: Option<BeltParams>,
}

/// Loads robot parameters (TOML, keys `R1, L1, ..., B_RL, ..., c`) with an
/// optional `[belt]` table; missing keys fall back to the defaults.
pub fn load_husky_params(path: &Path) -> Result<(HuskyParams, Option<BeltParams>), IoError> {
    let text = read_to_string(path)?;
    let doc: HuskyParamsDoc = toml::from_str(&text).map_err(|e| IoError::MalformedToml {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok((doc.params, doc.belt))
}

pub fn save_husky_params(
    path: &Path,
    params: &HuskyParams,
    belt: Option<&BeltParams>,
) -> Result<(), IoError> {
    let doc = HuskyParamsDoc {
        params: *params,
        belt: belt.copied(),
    };
    write_string(path, &toml::to_string(&doc).expect("params serialize"))
}

/// Loads a chassis geometry file (TOML keys `r_w, a, b, c`).
pub fn load_geometry(path: &Path) -> Result<HuskyGeometry, IoError> {
    let text = read_to_string(path)?;
    toml::from_str(&text).map_err(|e| IoError::MalformedToml {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Loads a flat `symbol = value` parameter file into an environment.
pub fn load_param_env(path: &Path) -> Result<ParamEnv, IoError> {
    let text = read_to_string(path)?;
    let map: std::collections::BTreeMap<String, f64> =
        toml::from_str(&text).map_err(|e| IoError::MalformedToml {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    Ok(map.into_iter().collect())
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    states: Vec<String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    a: Vec<Vec<String>>,
    b: Vec<Vec<String>>,
    c: Vec<Vec<String>>,
    d: Vec<Vec<String>>,
}

fn matrix_strings(m: &crate::statespace::SymMatrix) -> Vec<Vec<String>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m.get(r, c).to_string()).collect())
        .collect()
}

/// Machine-readable JSON rendering of a symbolic state-space model.
pub fn model_to_json(model: &StateSpaceModel) -> String {
    let file = ModelFile {
        states: model.state_labels.clone(),
        inputs: model.input_labels.clone(),
        outputs: model.output_labels.clone(),
        a: matrix_strings(&model.a),
        b: matrix_strings(&model.b),
        c: matrix_strings(&model.c),
        d: matrix_strings(&model.d),
    };
    serde_json::to_string_pretty(&file).expect("model serialize")
}

pub fn write_model_json(path: &Path, model: &StateSpaceModel) -> Result<(), IoError> {
    write_string(path, &model_to_json(model))
}

// ---------------------------------------------------------------------------
// Calibration and validation reports
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct CalibrationReportFile<'a> {
    best_params: BestParams,
    best_objective: f64,
    generations_run: usize,
    seed: u64,
    bounds_lo: &'a [f64],
    bounds_hi: &'a [f64],
}

#[derive(Debug, Serialize)]
struct BestParams {
    #[serde(rename = "B_common")]
    b_common: f64,
    #[serde(rename = "B_H")]
    b_h: f64,
    c: f64,
}

/// Writes the calibration report (JSON) naming the three calibrated
/// variables, plus the per-generation history CSV `gen,best,mean`.
pub fn write_calibration_report(
    report_path: &Path,
    history_path: &Path,
    result: &EstimationResult,
    bounds: &Bounds,
) -> Result<(), IoError> {
    let file = CalibrationReportFile {
        best_params: BestParams {
            b_common: result.best_params[0],
            b_h: result.best_params[1],
            c: result.best_params[2],
        },
        best_objective: result.best_objective,
        generations_run: result.generations_run,
        seed: result.seed,
        bounds_lo: &bounds.lo,
        bounds_hi: &bounds.hi,
    };
    write_string(
        report_path,
        &serde_json::to_string_pretty(&file).expect("report serialize"),
    )?;
    let mut csv = String::from("gen,best,mean\n");
    for stat in &result.history {
        csv.push_str(&format!(
            "{},{},{}\n",
            stat.generation, stat.best, stat.mean
        ));
    }
    write_string(history_path, &csv)
}

/// Maximum absolute per-axis deviation between a simulated trajectory and
/// reference data on a common time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingErrorBounds {
    pub max_abs_x: f64,
    pub max_abs_y: f64,
}

/// Computes the per-axis tracking-error bounds.
pub fn tracking_error_bounds(
    sim_xy: &[(f64, f64)],
    ref_x: &[f64],
    ref_y: &[f64],
) -> TrackingErrorBounds {
    let mut max_x = 0.0f64;
    let mut max_y = 0.0f64;
    for ((sx, sy), (rx, ry)) in sim_xy.iter().zip(ref_x.iter().zip(ref_y)) {
        max_x = max_x.max((sx - rx).abs());
        max_y = max_y.max((sy - ry).abs());
    }
    TrackingErrorBounds {
        max_abs_x: max_x,
        max_abs_y: max_y,
    }
}

impl fmt::Display for TrackingErrorBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "|X| <= {:.4} [m]", self.max_abs_x)?;
        write!(f, "|Y| <= {:.4} [m]", self.max_abs_y)
    }
}

// ---------------------------------------------------------------------------
// SVG plots
// ---------------------------------------------------------------------------

/// One curve of a panel.
pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

/// One plot panel with axis labels.
pub struct Panel<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series<'a>>,
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 42.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// Renders panels into a single SVG document (three panels per row).
/// Output is deterministic byte-for-byte for identical inputs.
pub fn panels_to_svg(panels: &[Panel<'_>]) -> String {
    let cols = panels.len().min(3).max(1);
    let rows = panels.len().div_ceil(cols);
    let width = cols as f64 * PANEL_W;
    let height = rows as f64 * PANEL_H;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"10\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    );
    for (i, panel) in panels.iter().enumerate() {
        let ox = (i % cols) as f64 * PANEL_W;
        let oy = (i / cols) as f64 * PANEL_H;
        render_panel(&mut svg, panel, ox, oy);
    }
    svg.push_str("</svg>\n");
    svg
}

fn data_range(series: &[Series<'_>], pick_x: bool) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        let vals = if pick_x { s.x } else { s.y };
        for &v in vals {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn render_panel(svg: &mut String, panel: &Panel<'_>, ox: f64, oy: f64) {
    let (x0, x1) = data_range(&panel.series, true);
    let (y0, y1) = data_range(&panel.series, false);
    let plot_w = PANEL_W - 2.0 * MARGIN;
    let plot_h = PANEL_H - 2.0 * MARGIN;
    let px = |x: f64| ox + MARGIN + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| oy + PANEL_H - MARGIN - (y - y0) / (y1 - y0) * plot_h;

    svg.push_str(&format!(
        "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" \
         fill=\"none\" stroke=\"#444\"/>\n",
        ox + MARGIN,
        oy + MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n",
        ox + PANEL_W / 2.0,
        oy + MARGIN - 8.0,
        panel.title
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        ox + PANEL_W / 2.0,
        oy + PANEL_H - 8.0,
        panel.x_label
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 {0:.1} {1:.1})\">{2}</text>\n",
        ox + 12.0,
        oy + PANEL_H / 2.0,
        panel.y_label
    ));
    // Axis extremes as tick labels.
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
        ox + MARGIN - 2.0,
        oy + PANEL_H - MARGIN + 12.0,
        tick(x0)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
        ox + PANEL_W - MARGIN,
        oy + PANEL_H - MARGIN + 12.0,
        tick(x1)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
        ox + MARGIN - 4.0,
        oy + PANEL_H - MARGIN,
        tick(y0)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
        ox + MARGIN - 4.0,
        oy + MARGIN + 4.0,
        tick(y1)
    ));

    for (si, s) in panel.series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        // Cap the emitted points; a deterministic stride keeps files small.
        let stride = (s.x.len() / 1500).max(1);
        let mut points = String::new();
        for i in (0..s.x.len()).step_by(stride) {
            points.push_str(&format!("{:.3},{:.3} ", px(s.x[i]), py(s.y[i])));
        }
        if let Some(&last_x) = s.x.last() {
            if (s.x.len() - 1) % stride != 0 {
                points.push_str(&format!(
                    "{:.3},{:.3} ",
                    px(last_x),
                    py(*s.y.last().unwrap())
                ));
            }
        }
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>\n",
            points.trim_end()
        ));
        if panel.series.len() > 1 {
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>\n",
                ox + MARGIN + 6.0,
                oy + MARGIN + 14.0 + 12.0 * si as f64,
                s.label
            ));
        }
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Standard plot bundle for a maneuver simulation: the xy trajectory and the
/// four output channels against time, optionally overlaid with reference
/// data at the trace timestamps.
pub fn maneuver_svg(sim: &SimResult, reference: Option<&DataTrace>) -> String {
    let sim_x: Vec<f64> = sim.poses.iter().map(|p| p.x).collect();
    let sim_y: Vec<f64> = sim.poses.iter().map(|p| p.y).collect();
    let channels: Vec<Vec<f64>> = (0..4).map(|c| sim.output_channel(c)).collect();

    let mut panels = Vec::new();
    let mut trajectory = Panel {
        title: "Trajectory",
        x_label: "x [m]",
        y_label: "y [m]",
        series: vec![Series {
            label: "model",
            x: &sim_x,
            y: &sim_y,
        }],
    };
    if let Some(data) = reference {
        if let (Some(rx), Some(ry)) = (&data.x, &data.y) {
            trajectory.series.push(Series {
                label: "data",
                x: rx,
                y: ry,
            });
        }
    }
    panels.push(trajectory);

    let titles = [
        ("Left wheel speed", "w_left [rad/s]"),
        ("Right wheel speed", "w_right [rad/s]"),
        ("Linear velocity", "v [m/s]"),
        ("Rotational velocity", "omega [rad/s]"),
    ];
    let ref_channels: [Option<&Vec<f64>>; 4] = match reference {
        Some(d) => [
            d.omega_l.as_ref(),
            d.omega_r.as_ref(),
            d.v.as_ref(),
            d.omega.as_ref(),
        ],
        None => [None, None, None, None],
    };
    for (c, (title, y_label)) in titles.iter().enumerate() {
        let mut series = vec![Series {
            label: "model",
            x: &sim.times,
            y: &channels[c],
        }];
        if let (Some(data), Some(refc)) = (reference, ref_channels[c]) {
            series.push(Series {
                label: "data",
                x: &data.times,
                y: refc,
            });
        }
        panels.push(Panel {
            title,
            x_label: "t [s]",
            y_label,
            series,
        });
    }
    panels_to_svg(&panels)
}
