//! Built-in linear-graph models: mass-spring-damper, a hydro-mechanical
//! drive, and the four-wheel skid-steer robot (simplified and expanded
//! drivetrains), plus the skid-steer geometry and command-voltage maps.
//!
//! Element orientations in the builders are chosen so the derived equations
//! come out in the conventional signs (wheel dampers oppose slip, sources
//! drive their circuits positively). Element ids are chosen so that the
//! lexicographic state ordering matches the conventional state vector
//! (left wheel speed, right wheel speed, forward speed, yaw rate, left and
//! right motor currents).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::{Domain, ElementKind, LinearGraph};
use crate::statespace::{OutputSpec, VarKind};
use crate::symexpr::{ParamEnv, SymExpr};

/// Measured rotational response per unit rotation command, relative to the
/// translational response: a rotation command numerically equal to a
/// translation command yields 54.1% of the wheel speed.
pub const ROTATION_COMMAND_GAIN: f64 = 0.541;

/// Supply limit of the drive battery; commanded voltages clamp here.
pub const SOURCE_VOLTAGE_LIMIT: f64 = 24.0;

/// Invalid model configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    NonPositive { field: &'static str, value: f64 },
    CGainOutOfRange { value: f64 },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::NonPositive { field, value } => {
                write!(f, "parameter `{field}` must be positive, got {value}")
            }
            ModelError::CGainOutOfRange { value } => {
                write!(f, "voltage coefficient c must lie in (0, 1.5), got {value}")
            }
        }
    }
}

impl std::error::Error for ModelError {}

/// Chassis geometry of the skid-steer platform.
///
/// `a`/`b` are the longitudinal distances from the center of mass to the
/// front/rear axles, `c` the lateral distance to the wheel centerline (half
/// track). The shipped example values come from the manufacturer datasheet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HuskyGeometry {
    pub r_w: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for HuskyGeometry {
    fn default() -> Self {
        // Clearpath Husky A200 datasheet: 330 mm wheels, 512 mm wheelbase,
        // 555 mm track, center of mass assumed mid-wheelbase.
        HuskyGeometry {
            r_w: 0.165,
            a: 0.256,
            b: 0.256,
            c: 0.2775,
        }
    }
}

impl HuskyGeometry {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, value) in [
            ("r_w", self.r_w),
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
        ] {
            if !(value > 0.0) {
                return Err(ModelError::NonPositive { field, value });
            }
        }
        Ok(())
    }
}

/// Lumped parameters of the robot model. Defaults are the datasheet values
/// plus the calibrated damping/voltage coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HuskyParams {
    /// Motor winding resistances [ohm].
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: f64,
    /// Motor winding inductances [H].
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    /// Motor torque constant [N*m/A].
    pub k_t: f64,
    /// Gearbox reduction ratio.
    #[serde(rename = "GR")]
    pub gr: f64,
    /// Lumped drivetrain inertias per side [kg*m^2].
    #[serde(rename = "J_L")]
    pub j_l: f64,
    #[serde(rename = "J_R")]
    pub j_r: f64,
    /// Wheel-ground dampings [N*m*s/rad].
    #[serde(rename = "B_RL")]
    pub b_rl: f64,
    #[serde(rename = "B_FL")]
    pub b_fl: f64,
    #[serde(rename = "B_FR")]
    pub b_fr: f64,
    #[serde(rename = "B_RR")]
    pub b_rr: f64,
    /// Chassis mass [kg].
    #[serde(rename = "M_H")]
    pub m_h: f64,
    /// Chassis yaw inertia [kg*m^2].
    #[serde(rename = "J_H")]
    pub j_h: f64,
    /// Chassis yaw damping [N*m*s/rad].
    #[serde(rename = "B_H")]
    pub b_h: f64,
    /// Command-to-voltage coefficient, dimensionless, in (0, 1.5).
    #[serde(rename = "c")]
    pub c_gain: f64,
}

impl Default for HuskyParams {
    fn default() -> Self {
        HuskyParams {
            r1: 0.46,
            r2: 0.46,
            l1: 0.22e-3,
            l2: 0.22e-3,
            k_t: 0.044488,
            gr: 78.71,
            j_l: 0.08,
            j_r: 0.08,
            b_rl: 1.3016,
            b_fl: 1.3016,
            b_fr: 1.3016,
            b_rr: 1.3016,
            m_h: 48.39,
            j_h: 3.0556,
            b_h: 12.8650,
            c_gain: 0.8961,
        }
    }
}

impl HuskyParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, value) in [
            ("R1", self.r1),
            ("R2", self.r2),
            ("L1", self.l1),
            ("L2", self.l2),
            ("k_t", self.k_t),
            ("GR", self.gr),
            ("J_L", self.j_l),
            ("J_R", self.j_r),
            ("B_RL", self.b_rl),
            ("B_FL", self.b_fl),
            ("B_FR", self.b_fr),
            ("B_RR", self.b_rr),
            ("M_H", self.m_h),
            ("J_H", self.j_h),
            ("B_H", self.b_h),
        ] {
            if !(value > 0.0) {
                return Err(ModelError::NonPositive { field, value });
            }
        }
        if !(self.c_gain > 0.0 && self.c_gain < 1.5) {
            return Err(ModelError::CGainOutOfRange { value: self.c_gain });
        }
        Ok(())
    }

    /// Sets the four wheel dampings to one shared value.
    pub fn with_common_wheel_damping(mut self, b: f64) -> Self {
        self.b_rl = b;
        self.b_fl = b;
        self.b_fr = b;
        self.b_rr = b;
        self
    }
}

/// Belt-drive parameters for the expanded drivetrain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeltParams {
    /// Belt stiffness [N*m/rad].
    #[serde(rename = "K_Belt")]
    pub k_belt: f64,
    /// Belt damping [N*m*s/rad].
    #[serde(rename = "B_Belt")]
    pub b_belt: f64,
    /// Per-side axle inertias [kg*m^2]; default is half the lumped value.
    #[serde(rename = "J_front")]
    pub j_front: f64,
    #[serde(rename = "J_rear")]
    pub j_rear: f64,
}

impl Default for BeltParams {
    fn default() -> Self {
        BeltParams {
            k_belt: 250.0,
            b_belt: 5.0,
            j_front: 0.04,
            j_rear: 0.04,
        }
    }
}

impl BeltParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, value) in [
            ("K_Belt", self.k_belt),
            ("B_Belt", self.b_belt),
            ("J_front", self.j_front),
            ("J_rear", self.j_rear),
        ] {
            if !(value > 0.0) {
                return Err(ModelError::NonPositive { field, value });
            }
        }
        Ok(())
    }
}

/// Wheel transformer ratios `TF_1..TF_8` from the chassis geometry.
///
/// Odd ratios convert wheel torque to traction force (1/r_w); even ratios
/// additionally project the traction force onto the yaw moment arm of the
/// wheel contact point, negative on the left side and positive on the right.
pub fn transformer_ratios(geom: &HuskyGeometry) -> Result<[f64; 8], ModelError> {
    geom.validate()?;
    let tf_odd = 1.0 / geom.r_w;
    // Rear wheels: contact angle atan(b/c), arm sqrt(b^2 + c^2).
    let rear =
        (geom.b / geom.c).atan().cos() * (geom.b * geom.b + geom.c * geom.c).sqrt() / geom.r_w;
    // Front wheels: contact angle atan(a/c), arm sqrt(a^2 + c^2).
    let front =
        (geom.a / geom.c).atan().cos() * (geom.a * geom.a + geom.c * geom.c).sqrt() / geom.r_w;
    Ok([
        tf_odd, -rear, // TF_1, TF_2: rear left
        tf_odd, -front, // TF_3, TF_4: front left
        tf_odd, front, // TF_5, TF_6: front right
        tf_odd, rear, // TF_7, TF_8: rear right
    ])
}

/// Maps translation/rotation velocity commands to the two motor source
/// voltages, clamped to the supply limit.
pub fn command_to_voltage(v_t: f64, v_r: f64, c_gain: f64) -> (f64, f64) {
    let vs1 = SOURCE_VOLTAGE_LIMIT * (c_gain * v_t + ROTATION_COMMAND_GAIN * c_gain * v_r);
    let vs2 = SOURCE_VOLTAGE_LIMIT * (c_gain * v_t - ROTATION_COMMAND_GAIN * c_gain * v_r);
    (
        vs1.clamp(-SOURCE_VOLTAGE_LIMIT, SOURCE_VOLTAGE_LIMIT),
        vs2.clamp(-SOURCE_VOLTAGE_LIMIT, SOURCE_VOLTAGE_LIMIT),
    )
}

/// Mass-spring-damper with a force source: mass `m` as an A-type element,
/// spring `K`, damper `B` and the source all in parallel between ground and
/// the mass node. Two states: mass velocity and spring force.
pub fn build_msd() -> LinearGraph {
    build_msd_with(true)
}

/// Mass-spring oscillator without the damper; still two states.
pub fn build_msd_undamped() -> LinearGraph {
    build_msd_with(false)
}

fn build_msd_with(damped: bool) -> LinearGraph {
    let mut g = LinearGraph::new();
    g.add_node("g", true).add_node("n1", false);
    g.add_element(
        "m",
        ElementKind::ATypeStorage,
        Domain::MechTranslation,
        "m",
        "g",
        "n1",
    );
    g.add_element(
        "K",
        ElementKind::TTypeStorage,
        Domain::MechTranslation,
        "K",
        "g",
        "n1",
    );
    if damped {
        g.add_element(
            "B",
            ElementKind::DTypeDissipator,
            Domain::MechTranslation,
            "B",
            "g",
            "n1",
        );
    }
    g.add_element(
        "Fs",
        ElementKind::ThroughSource,
        Domain::MechTranslation,
        "F",
        "n1",
        "g",
    );
    g
}

/// Output selection for the MSD model: mass velocity.
pub fn msd_output_spec() -> OutputSpec {
    OutputSpec::across(&["m"])
}

/// Hydro-mechanical drive: a speed source turns a positive-displacement
/// pump (two-port `TF`), the flow passes a leakage resistance `R_l` and a
/// line resistance `R_f` into a piston (two-port of ratio `1/A`) that drives
/// a mass-spring-damper load. Two states: mass velocity and spring force.
///
/// The fluid subgraph uses the crate's flow-as-across convention, which is
/// what lets both transducers be plain transformers.
pub fn build_hydromech() -> LinearGraph {
    let mut g = LinearGraph::new();
    // Rotational drive.
    g.add_node("gR", true).add_node("r1", false);
    g.add_element(
        "Ws",
        ElementKind::AcrossSource,
        Domain::MechRotation,
        "w_s",
        "r1",
        "gR",
    );
    g.add_element(
        "PUr",
        ElementKind::TransformerPort,
        Domain::MechRotation,
        "PU",
        "r1",
        "gR",
    );
    // Fluid line.
    g.add_node("gF", true)
        .add_node("q1", false)
        .add_node("q2", false);
    g.add_element(
        "PUf",
        ElementKind::TransformerPort,
        Domain::Fluid,
        "PU",
        "gF",
        "q1",
    );
    g.add_element(
        "Rl",
        ElementKind::DTypeDissipator,
        Domain::Fluid,
        "R_l",
        "q1",
        "q2",
    );
    g.add_element(
        "Rf",
        ElementKind::DTypeDissipator,
        Domain::Fluid,
        "R_f",
        "q2",
        "gF",
    );
    g.add_element(
        "PSf",
        ElementKind::TransformerPort,
        Domain::Fluid,
        "PS",
        "q2",
        "gF",
    );
    // Translational load.
    g.add_node("gT", true).add_node("t1", false);
    g.add_element(
        "PSt",
        ElementKind::TransformerPort,
        Domain::MechTranslation,
        "PS",
        "t1",
        "gT",
    );
    g.add_element(
        "m",
        ElementKind::ATypeStorage,
        Domain::MechTranslation,
        "m",
        "gT",
        "t1",
    );
    g.add_element(
        "K",
        ElementKind::TTypeStorage,
        Domain::MechTranslation,
        "K",
        "gT",
        "t1",
    );
    g.add_element(
        "B",
        ElementKind::DTypeDissipator,
        Domain::MechTranslation,
        "B",
        "gT",
        "t1",
    );
    // Transducers.
    g.add_two_port("PU", "PUr", "PUf", SymExpr::sym("TF"));
    g.add_two_port(
        "PS",
        "PSf",
        "PSt",
        SymExpr::div(SymExpr::one(), SymExpr::sym("A")),
    );
    g
}

/// Outputs of the hydro-mechanical model: line pressure drop and mass
/// velocity.
pub fn hydromech_output_spec() -> OutputSpec {
    OutputSpec {
        outputs: vec![
            ("Rf".to_string(), VarKind::Through),
            ("m".to_string(), VarKind::Across),
        ],
    }
}

/// One motor circuit: source, winding resistance and inductance in series
/// with the electrical port of the motor transformer.
fn add_motor_circuit(
    g: &mut LinearGraph,
    ground: &str,
    nodes: [&str; 3],
    source_id: &str,
    input: &str,
    r_id: &str,
    r_param: &str,
    l_id: &str,
    l_param: &str,
    port_id: &str,
    port_param: &str,
) {
    let [e1, e2, e3] = nodes;
    g.add_node(ground, true);
    g.add_node(e1, false)
        .add_node(e2, false)
        .add_node(e3, false);
    g.add_element(
        source_id,
        ElementKind::AcrossSource,
        Domain::Electrical,
        input,
        e1,
        ground,
    );
    g.add_element(
        r_id,
        ElementKind::DTypeDissipator,
        Domain::Electrical,
        r_param,
        e1,
        e2,
    );
    g.add_element(
        l_id,
        ElementKind::TTypeStorage,
        Domain::Electrical,
        l_param,
        e2,
        e3,
    );
    g.add_element(
        port_id,
        ElementKind::TransformerPort,
        Domain::Electrical,
        port_param,
        e3,
        ground,
    );
}

/// One damper-plus-double-transformer wheel path from an axle node down to
/// the drivetrain ground: `axle --B--> n1 --TFtransl--> n2 --TFrot--> ground`.
fn add_wheel_path(
    g: &mut LinearGraph,
    ground: &str,
    axle: &str,
    mid: [&str; 2],
    damper_id: &str,
    damper_param: &str,
    tf_transl: &str,
    tf_rot: &str,
) {
    let [n1, n2] = mid;
    g.add_node(n1, false).add_node(n2, false);
    g.add_element(
        damper_id,
        ElementKind::DTypeDissipator,
        Domain::MechRotation,
        damper_param,
        n1,
        axle,
    );
    g.add_element(
        format!("{tf_transl}d"),
        ElementKind::TransformerPort,
        Domain::MechRotation,
        tf_transl,
        n2,
        n1,
    );
    g.add_element(
        format!("{tf_rot}d"),
        ElementKind::TransformerPort,
        Domain::MechRotation,
        tf_rot,
        ground,
        n2,
    );
}

/// Chassis translation and rotation subsystems shared by both robot models:
/// the mass in parallel with the odd transformer ports, and the yaw inertia
/// and damping in parallel with the even transformer ports.
fn add_chassis(g: &mut LinearGraph) {
    g.add_node("gT", true).add_node("t0", false);
    g.add_element(
        "MH",
        ElementKind::ATypeStorage,
        Domain::MechTranslation,
        "M_H",
        "gT",
        "t0",
    );
    for tf in ["TF1", "TF3", "TF5", "TF7"] {
        g.add_element(
            format!("{tf}t"),
            ElementKind::TransformerPort,
            Domain::MechTranslation,
            tf,
            "gT",
            "t0",
        );
    }
    g.add_node("gY", true).add_node("r0", false);
    g.add_element(
        "RJH",
        ElementKind::ATypeStorage,
        Domain::MechRotation,
        "J_H",
        "gY",
        "r0",
    );
    g.add_element(
        "BH",
        ElementKind::DTypeDissipator,
        Domain::MechRotation,
        "B_H",
        "gY",
        "r0",
    );
    for tf in ["TF2", "TF4", "TF6", "TF8"] {
        g.add_element(
            format!("{tf}r"),
            ElementKind::TransformerPort,
            Domain::MechRotation,
            tf,
            "gY",
            "r0",
        );
    }
}

/// Wires the eight wheel two-ports and the two motor two-ports. The chassis
/// side is port a and the drivetrain side port b, so the drivetrain port
/// sees `ratio * chassis speed` and the chassis receives
/// `-ratio * drivetrain torque` as force/moment.
fn add_transformer_pairs(g: &mut LinearGraph) {
    g.add_two_port("TML", "TMLd", "TMLe", SymExpr::sym("T_ML"));
    g.add_two_port("TMR", "TMRd", "TMRe", SymExpr::sym("T_MR"));
    for (tf, ratio, chassis) in [
        ("TF1", "TF_1", "TF1t"),
        ("TF2", "TF_2", "TF2r"),
        ("TF3", "TF_3", "TF3t"),
        ("TF4", "TF_4", "TF4r"),
        ("TF5", "TF_5", "TF5t"),
        ("TF6", "TF_6", "TF6r"),
        ("TF7", "TF_7", "TF7t"),
        ("TF8", "TF_8", "TF8r"),
    ] {
        g.add_two_port(tf, chassis, format!("{tf}d"), SymExpr::sym(ratio));
    }
}

/// Complete robot model with lumped per-side drivetrain inertias.
/// Six states: left and right wheel speeds, forward speed, yaw rate, and the
/// two motor currents.
pub fn build_husky_simplified() -> LinearGraph {
    let mut g = LinearGraph::new();
    add_motor_circuit(
        &mut g,
        "gE1",
        ["e1", "e2", "e3"],
        "VS1",
        "Vs1",
        "R1",
        "R_1",
        "L1",
        "L_1",
        "TMLe",
        "TML",
    );
    add_motor_circuit(
        &mut g,
        "gE2",
        ["e4", "e5", "e6"],
        "VS2",
        "Vs2",
        "R2",
        "R_2",
        "L2",
        "L_2",
        "TMRe",
        "TMR",
    );

    // Left drivetrain: lumped inertia and motor port on the axle node, rear
    // and front wheel paths to ground.
    g.add_node("gD1", true).add_node("d0", false);
    g.add_element(
        "JLW",
        ElementKind::ATypeStorage,
        Domain::MechRotation,
        "J_L",
        "gD1",
        "d0",
    );
    g.add_element(
        "TMLd",
        ElementKind::TransformerPort,
        Domain::MechRotation,
        "TML",
        "gD1",
        "d0",
    );
    add_wheel_path(
        &mut g,
        "gD1",
        "d0",
        ["d1", "d2"],
        "BRL",
        "B_RL",
        "TF1",
        "TF2",
    );
    add_wheel_path(
        &mut g,
        "gD1",
        "d0",
        ["d3", "d4"],
        "BFL",
        "B_FL",
        "TF3",
        "TF4",
    );

    // Right drivetrain.
    g.add_node("gD2", true).add_node("d5", false);
    g.add_element(
        "JRW",
        ElementKind::ATypeStorage,
        Domain::MechRotation,
        "J_R",
        "gD2",
        "d5",
    );
    g.add_element(
        "TMRd",
        ElementKind::TransformerPort,
        Domain::MechRotation,
        "TMR",
        "gD2",
        "d5",
    );
    add_wheel_path(
        &mut g,
        "gD2",
        "d5",
        ["d6", "d7"],
        "BFR",
        "B_FR",
        "TF5",
        "TF6",
    );
    add_wheel_path(
        &mut g,
        "gD2",
        "d5",
        ["d8", "d9"],
        "BRR",
        "B_RR",
        "TF7",
        "TF8",
    );

    add_chassis(&mut g);
    add_transformer_pairs(&mut g);
    g
}

/// Robot model with per-axle inertias joined by a compliant belt (parallel
/// spring/damper) on each side. Ten states: four axle speeds, forward speed,
/// yaw rate, two belt torques and two motor currents.
pub fn build_husky_expanded() -> LinearGraph {
    let mut g = LinearGraph::new();
    add_motor_circuit(
        &mut g,
        "gE1",
        ["e1", "e2", "e3"],
        "VS1",
        "Vs1",
        "R1",
        "R_1",
        "L1",
        "L_1",
        "TMLe",
        "TML",
    );
    add_motor_circuit(
        &mut g,
        "gE2",
        ["e4", "e5", "e6"],
        "VS2",
        "Vs2",
        "R2",
        "R_2",
        "L2",
        "L_2",
        "TMRe",
        "TMR",
    );

    // Left drivetrain: the motor drives the rear (primary) axle; the belt
    // couples it to the front (secondary) axle.
    g.add_node("gD1", true)
        .add_node("d0", false)
        .add_node("dF1", false);
    g.add_element(
        "JLW1",
        ElementKind::ATypeStorage,
        Domain::MechRotation,
        "J_RL",
        "gD1",
        "d0",
    );
    g.add_element(
        "TMLd",
        ElementKind::TransformerPort,
        Domain::MechRotation,
        "TML",
        "gD1",
        "d0",
    );
    add_wheel_path(
        &mut g,
        "gD1",
        "d0",
        ["d1", "d2"],
        "BRL",
        "B_RL",
        "TF1",
        "TF2",
    );
    g.add_element(
        "JLW2",
        ElementKind::ATypeStorage,
        Domain::MechRotation,
        "J_FL",
        "gD1",
        "dF1",
    );
    g.add_element(
        "KBL",
        ElementKind::TTypeStorage,
        Domain::MechRotation,
        "K_BeltL",
        "d0",
        "dF1",
    );
    g.add_element(
        "BBL",
        ElementKind::DTypeDissipator,
        Domain::MechRotation,
        "B_BeltL",
        "d0",
        "dF1",
    );
    add_wheel_path(
        &mut g,
        "gD1",
        "dF1",
        ["d3", "d4"],
        "BFL",
        "B_FL",
        "TF3",
        "TF4",
    );

    // Right drivetrain.
    g.add_node("gD2", true)
        .add_node("d5", false)
        .add_node("dF2", false);
    g.add_element(
        "JRW1",
        ElementKind::ATypeStorage,
        Domain::MechRotation,
        "J_RR",
        "gD2",
        "d5",
    );
    g.add_element(
        "TMRd",
        ElementKind::TransformerPort,
        Domain::MechRotation,
        "TMR",
        "gD2",
        "d5",
    );
    add_wheel_path(
        &mut g,
        "gD2",
        "d5",
        ["d8", "d9"],
        "BRR",
        "B_RR",
        "TF7",
        "TF8",
    );
    g.add_element(
        "JRW2",
        ElementKind::ATypeStorage,
        Domain::MechRotation,
        "J_FR",
        "gD2",
        "dF2",
    );
    g.add_element(
        "KBR",
        ElementKind::TTypeStorage,
        Domain::MechRotation,
        "K_BeltR",
        "d5",
        "dF2",
    );
    g.add_element(
        "BBR",
        ElementKind::DTypeDissipator,
        Domain::MechRotation,
        "B_BeltR",
        "d5",
        "dF2",
    );
    add_wheel_path(
        &mut g,
        "gD2",
        "dF2",
        ["d6", "d7"],
        "BFR",
        "B_FR",
        "TF5",
        "TF6",
    );

    add_chassis(&mut g);
    add_transformer_pairs(&mut g);
    g
}

/// Output selection for the simplified robot model: the four chassis states
/// (wheel speeds, forward speed, yaw rate).
pub fn husky_output_spec() -> OutputSpec {
    OutputSpec::across(&["JLW", "JRW", "MH", "RJH"])
}

/// Output selection for the expanded model: primary-axle wheel speeds plus
/// the chassis velocities.
pub fn husky_expanded_output_spec() -> OutputSpec {
    OutputSpec::across(&["JLW1", "JRW1", "MH", "RJH"])
}

/// Parameter environment for the simplified robot model.
pub fn husky_param_env(params: &HuskyParams, geom: &HuskyGeometry) -> Result<ParamEnv, ModelError> {
    params.validate()?;
    let tf = transformer_ratios(geom)?;
    let t_m = params.k_t * params.gr;
    let mut env = ParamEnv::new();
    env.bind("R_1", params.r1)
        .bind("R_2", params.r2)
        .bind("L_1", params.l1)
        .bind("L_2", params.l2)
        .bind("T_ML", t_m)
        .bind("T_MR", t_m)
        .bind("J_L", params.j_l)
        .bind("J_R", params.j_r)
        .bind("B_RL", params.b_rl)
        .bind("B_FL", params.b_fl)
        .bind("B_FR", params.b_fr)
        .bind("B_RR", params.b_rr)
        .bind("M_H", params.m_h)
        .bind("J_H", params.j_h)
        .bind("B_H", params.b_h);
    for (i, v) in tf.iter().enumerate() {
        env.bind(format!("TF_{}", i + 1), *v);
    }
    Ok(env)
}

/// Parameter environment for the expanded robot model.
pub fn husky_expanded_param_env(
    params: &HuskyParams,
    belt: &BeltParams,
    geom: &HuskyGeometry,
) -> Result<ParamEnv, ModelError> {
    belt.validate()?;
    let mut env = husky_param_env(params, geom)?;
    env.bind("J_RL", belt.j_rear)
        .bind("J_FL", belt.j_front)
        .bind("J_RR", belt.j_rear)
        .bind("J_FR", belt.j_front)
        .bind("K_BeltL", belt.k_belt)
        .bind("K_BeltR", belt.k_belt)
        .bind("B_BeltL", belt.b_belt)
        .bind("B_BeltR", belt.b_belt);
    Ok(env)
}
