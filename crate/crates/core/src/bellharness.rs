//! The superdeterministic Bell/CHSH experiment simulator.
//!
//! Each run is fully determined by (master seed, run index): the nominal
//! setting choices, the exact grid configuration realized inside the
//! epsilon disks, the singlet-pair index, and the counterfactual
//! great-circle angles all come from per-run ChaCha substreams. Runs are
//! therefore computable independently on any number of workers, and every
//! aggregate is an integer or rational reduction, so results are bit-stable
//! across parallelism degrees.
//!
//! The realized relative cosine always lies on the grid {m/p - 1}; the
//! experiment's statistics follow from the exact singlet-ensemble identity
//! C = -(m/p - 1), while the counterfactual definedness structure follows
//! from the four-point certificate over the realized edge.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::exactmath::{PrimeModulus, Rational, RationalAngle};
use crate::raqm::singlet_bit_pair;
use crate::sphgeom::{
    chsh_certify, impossible_triangle, QuadEdge, QuadSpec, SphGeomError, TriangleSpec, Verdict,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no admissible grid point: p*band(epsilon) = {0:.3} < 1 leaves the band empty")]
    NoAdmissibleSetting(f64),
    #[error("counterfactual certifier inconclusive: {0}")]
    CertifierInconclusive(String),
    #[error("fewer than 2 populated setting cells: nothing to compare")]
    DegenerateReport,
    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),
    #[error(transparent)]
    Geometry(#[from] SphGeomError),
}

// ---------------------------------------------------------------------------
// Hidden variables and deterministic streams
// ---------------------------------------------------------------------------

/// Which measurement event's past light cone a hidden-variable half belongs
/// to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SideTag {
    A,
    B,
}

/// Handle to all per-run hidden information: the pair (master seed, run
/// index) determines every draw; the side tag addresses the half in the
/// corresponding past light cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HiddenVariable {
    pub master_seed: u64,
    pub run_index: u64,
    pub side: SideTag,
}

impl HiddenVariable {
    pub fn pair(master_seed: u64, run_index: u64) -> (Self, Self) {
        (
            Self {
                master_seed,
                run_index,
                side: SideTag::A,
            },
            Self {
                master_seed,
                run_index,
                side: SideTag::B,
            },
        )
    }

    pub fn partner(&self) -> Self {
        Self {
            side: match self.side {
                SideTag::A => SideTag::B,
                SideTag::B => SideTag::A,
            },
            ..*self
        }
    }

    fn rng(&self, channel: u64) -> ChaCha8Rng {
        stream_rng(self.master_seed, self.run_index, channel)
    }

    fn side_channel(&self) -> u64 {
        match self.side {
            SideTag::A => CH_SIDE_A,
            SideTag::B => CH_SIDE_B,
        }
    }
}

const CH_CHOICE: u64 = 0;
const CH_SIDE_A: u64 = 1;
const CH_SIDE_B: u64 = 2;
const CH_SOURCE: u64 = 3;
const CH_AUDIT_A: u64 = 4;
const CH_AUDIT_B: u64 = 5;
const CHANNELS: u64 = 8;

fn stream_rng(master_seed: u64, run_index: u64, channel: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(run_index.wrapping_mul(CHANNELS).wrapping_add(channel));
    rng
}

/// Vertex angles drawn with denominators in [7, 999] coprime to 24 are never
/// multiples of 45 or 30 degrees, keeping every draw outside the
/// exceptional set of the certifier.
fn draw_vertex_angle(rng: &mut ChaCha8Rng) -> RationalAngle {
    loop {
        let d = rng.gen_range(7u64..=999);
        if d % 2 == 0 || d % 3 == 0 {
            continue;
        }
        let a = rng.gen_range(1..d);
        if num_integer::gcd(a, d) != 1 {
            continue;
        }
        return RationalAngle::from_fraction(a as i64, d as i64);
    }
}

/// A grid cosine strictly inside (-1, 1), used for the hidden-variable
/// perturbation web in the audit.
fn draw_interior_grid_cos(rng: &mut ChaCha8Rng, p: u64) -> Rational {
    let m = rng.gen_range(1..2 * p);
    Rational::new(BigInt::from(m) - BigInt::from(p), BigInt::from(p))
}

// ---------------------------------------------------------------------------
// Nominal settings and exact configurations
// ---------------------------------------------------------------------------

/// An experimenter-selectable setting: a disk of radius epsilon around a
/// center direction on the measurement plane.
#[derive(Debug, Clone, Serialize)]
pub struct NominalSetting {
    pub label: u8,
    /// center direction, radians on the measurement plane
    pub center_angle: f64,
    /// disk radius, radians
    pub epsilon: f64,
}

impl NominalSetting {
    pub fn new(label: u8, center_angle: f64, epsilon: f64) -> Result<Self, HarnessError> {
        if !(epsilon > 0.0) {
            return Err(HarnessError::InvalidExperiment(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            label,
            center_angle,
            epsilon,
        })
    }
}

/// Width of the cosine window reachable within the two epsilon disks.
pub fn band(epsilon: f64) -> f64 {
    2.0 * epsilon.sin() * (1.0 + epsilon)
}

/// The counterfactual great-circle angles attached to one run, one per
/// vertex of the setting quad (X0, X1, Y0, Y1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexAngles {
    pub alpha: RationalAngle,
    pub beta: RationalAngle,
    pub gamma: RationalAngle,
    pub delta: RationalAngle,
}

/// The exact measurement configuration realized for one run: a grid cosine
/// within band(epsilon) of the nominal relative angle, plus the
/// lambda-determined vertex angles.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactConfig {
    pub cos_realized: Rational,
    pub grid_index: u64,
    pub vertex_angles: VertexAngles,
    /// the uniform jitter coordinate that selected the grid point
    pub jitter: f64,
}

/// How a grid point is selected inside the admissible window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// nearest grid point to the nominal cosine (exact-count mode)
    NearestGrid,
    /// lambda-uniform over every admissible grid point (sampled mode)
    Jittered,
}

fn admissible_window(p: u64, target_cos: f64, eps: f64) -> Option<(u64, u64)> {
    let b = band(eps);
    let lo = ((target_cos - b + 1.0) * p as f64).ceil().max(0.0) as u64;
    let hi = ((target_cos + b + 1.0) * p as f64).floor().min(2.0 * p as f64) as i64;
    if hi < 0 {
        return None;
    }
    let hi = hi as u64;
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

fn nearest_grid_index(p: u64, target_cos: f64) -> u64 {
    (((target_cos + 1.0) * p as f64).round().max(0.0) as u64).min(2 * p)
}

/// Deterministically realize exact settings for a run: pick the grid index
/// within band(epsilon) of the nominal relative cosine (nearest or
/// lambda-jittered over all admissible points) and draw the counterfactual
/// vertex angles from the side streams.
pub fn exact_config(
    lambda: &HiddenVariable,
    a: &NominalSetting,
    b: &NominalSetting,
    p: &PrimeModulus,
    selection: Selection,
) -> Result<ExactConfig, HarnessError> {
    let pv = p.to_u64().expect("desk-scale modulus");
    let eps = a.epsilon.max(b.epsilon);
    let target = (a.center_angle - b.center_angle).cos();
    let (lo, hi) = admissible_window(pv, target, eps)
        .ok_or_else(|| HarnessError::NoAdmissibleSetting(pv as f64 * band(eps)))?;

    let lambda_a = HiddenVariable {
        side: SideTag::A,
        ..*lambda
    };
    let lambda_b = lambda_a.partner();
    let mut rng_a = lambda_a.rng(lambda_a.side_channel());
    let mut rng_b = lambda_b.rng(lambda_b.side_channel());
    // Both halves contribute to the realized point: the jitter coordinate is
    // the mod-1 sum of one uniform from each side.
    let u: f64 = (rng_a.gen::<f64>() + rng_b.gen::<f64>()).fract();
    let grid_index = match selection {
        Selection::NearestGrid => nearest_grid_index(pv, target).clamp(lo, hi),
        Selection::Jittered => {
            let span = hi - lo + 1;
            lo + ((u * span as f64) as u64).min(span - 1)
        }
    };
    let vertex_angles = VertexAngles {
        alpha: draw_vertex_angle(&mut rng_a),
        beta: draw_vertex_angle(&mut rng_a),
        gamma: draw_vertex_angle(&mut rng_b),
        delta: draw_vertex_angle(&mut rng_b),
    };
    let cos_realized = Rational::new(
        BigInt::from(grid_index) - BigInt::from(pv),
        BigInt::from(pv),
    );
    Ok(ExactConfig {
        cos_realized,
        grid_index,
        vertex_angles,
        jitter: u,
    })
}

/// Deterministic singlet measurement: lambda selects the ensemble index,
/// whose bit pair is the outcome pair. Over the full index ensemble the
/// correlation equals -cos_realized exactly.
pub fn measure_pair(
    lambda: &HiddenVariable,
    cfg: &ExactConfig,
    p: &PrimeModulus,
) -> (i8, i8) {
    let pv = p.to_u64().expect("desk-scale modulus");
    let mut rng = lambda.rng(CH_SOURCE);
    let k = rng.gen_range(0..2 * pv);
    singlet_bit_pair(pv, cfg.grid_index, k)
}

// ---------------------------------------------------------------------------
// Counterfactual definedness
// ---------------------------------------------------------------------------

/// Definedness flags in realized-relative order:
/// [(x, y), (x, y'), (x', y), (x', y')].
pub type DefinednessTable = [bool; 4];

/// Resolve the four-cell counterfactual table for a run realized at nominal
/// cell (x, y): the realized cell is defined, the two single-flip cells are
/// undefined (certified irrational exact cosine), the double-flip cell is
/// defined.
///
/// Errors with `CertifierInconclusive` when the certificate cannot be
/// issued: an exceptional vertex angle (never drawn by the harness) or a
/// degenerate realized geometry (|cos| = 1).
pub fn counterfactual_table(
    cfg: &ExactConfig,
    x: u8,
    y: u8,
) -> Result<DefinednessTable, HarnessError> {
    let cert = certificate_for(cfg, x, y)?;
    if cert.single_flips_forced() {
        Ok([true, false, false, true])
    } else {
        let shape: Vec<String> = QuadEdge::ALL
            .iter()
            .map(|e| {
                format!(
                    "{e}:{}",
                    cert.verdict(*e).map(|v| v.tag()).unwrap_or("NoVerdict")
                )
            })
            .collect();
        Err(HarnessError::CertifierInconclusive(shape.join(", ")))
    }
}

/// The four-point certificate for a run, with the realized cell relabeled to
/// the X0Y0 role (vertex-angle roles permute along).
pub fn certificate_for(
    cfg: &ExactConfig,
    x: u8,
    y: u8,
) -> Result<crate::sphgeom::ChshCertificate, HarnessError> {
    let va = &cfg.vertex_angles;
    let (alpha, beta) = if x == 0 {
        (va.alpha.clone(), va.beta.clone())
    } else {
        (va.beta.clone(), va.alpha.clone())
    };
    let (gamma, delta) = if y == 0 {
        (va.gamma.clone(), va.delta.clone())
    } else {
        (va.delta.clone(), va.gamma.clone())
    };
    let quad = QuadSpec::new(cfg.cos_realized.clone(), alpha, beta, gamma, delta)?;
    let cert = chsh_certify(&quad, QuadEdge::X0Y0)?;
    if QuadEdge::ALL
        .iter()
        .any(|e| matches!(cert.verdict(*e), Some(Verdict::Degenerate)))
    {
        return Err(HarnessError::CertifierInconclusive(
            "realized geometry degenerate (|cos| = 1)".into(),
        ));
    }
    Ok(cert)
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// A CHSH (two settings per party) or original-1964 (three shared settings)
/// experiment.
#[derive(Debug, Clone, Serialize)]
pub enum ExperimentKind {
    Chsh {
        alice: [NominalSetting; 2],
        bob: [NominalSetting; 2],
    },
    Bell1964 {
        settings: [NominalSetting; 3],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// nearest-grid configurations, correlations from the full-ensemble
    /// rational identity (zero variance)
    Exact,
    /// lambda-jittered configurations, correlations estimated from outcomes
    Sampled,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(serialize_with = "serialize_modulus")]
    pub p: PrimeModulus,
    pub runs: u64,
    pub mode: Mode,
    pub workers: usize,
}

fn serialize_modulus<S: serde::Serializer>(p: &PrimeModulus, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(p.to_u64().unwrap_or(u64::MAX))
}

/// Canonical CHSH settings. `polariser_degrees` are the conventional
/// [a0, a1, b0, b1] polariser-frame angles (defaults 0, 45, 22.5, 67.5);
/// measurement-plane directions sit at twice the polariser angle, which is
/// what the singlet correlation C = -cos(plane angle) consumes.
pub fn chsh_settings_from_polariser_degrees(
    polariser_degrees: [f64; 4],
    epsilon: f64,
) -> Result<ExperimentKind, HarnessError> {
    let plane = |deg: f64| 2.0 * deg.to_radians();
    Ok(ExperimentKind::Chsh {
        alice: [
            NominalSetting::new(0, plane(polariser_degrees[0]), epsilon)?,
            NominalSetting::new(1, plane(polariser_degrees[1]), epsilon)?,
        ],
        bob: [
            NominalSetting::new(0, plane(polariser_degrees[2]), epsilon)?,
            NominalSetting::new(1, plane(polariser_degrees[3]), epsilon)?,
        ],
    })
}

/// Original-1964 settings from measurement-plane angles in degrees
/// (defaults 0, 45, 90).
pub fn bell1964_settings_from_plane_degrees(
    plane_degrees: [f64; 3],
    epsilon: f64,
) -> Result<ExperimentKind, HarnessError> {
    Ok(ExperimentKind::Bell1964 {
        settings: [
            NominalSetting::new(1, plane_degrees[0].to_radians(), epsilon)?,
            NominalSetting::new(2, plane_degrees[1].to_radians(), epsilon)?,
            NominalSetting::new(3, plane_degrees[2].to_radians(), epsilon)?,
        ],
    })
}

/// One completed run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run_index: u64,
    pub lambda: HiddenVariable,
    /// nominal labels: (x, y) for CHSH, (setting_i, setting_j) for 1964
    pub cell: (u8, u8),
    pub exact: ExactConfig,
    pub outcome_a: i8,
    pub outcome_b: i8,
    /// `None` when the realized geometry is degenerate and no certificate
    /// can be issued (possible only for aligned/antipodal nominal settings).
    pub definedness: Option<DefinednessTable>,
}

/// Per-cell correlation aggregate.
#[derive(Debug, Clone, Serialize)]
pub struct CellCorrelation {
    pub count: u64,
    pub sum_products: i64,
    /// exact-count rational identity -(m/p - 1) (exact mode only)
    #[serde(serialize_with = "serialize_opt_rational")]
    pub exact: Option<Rational>,
    pub grid_index: Option<u64>,
}

fn serialize_opt_rational<S: serde::Serializer>(
    r: &Option<Rational>,
    s: S,
) -> Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.serialize_some(&r.to_string()),
        None => s.serialize_none(),
    }
}

impl CellCorrelation {
    pub fn estimate(&self) -> f64 {
        match &self.exact {
            Some(r) => r.to_f64().unwrap_or(f64::NAN),
            None => self.sum_products as f64 / self.count.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum BellStatistic {
    Chsh {
        /// |C(0,0) - C(0,1) + C(1,0) + C(1,1)|
        s_abs: f64,
        #[serde(serialize_with = "serialize_opt_rational")]
        s_exact: Option<Rational>,
    },
    Bell1964 {
        /// |C(1,2) - C(1,3)|
        lhs: f64,
        /// 1 + C(2,3)
        rhs: f64,
        violated: bool,
        #[serde(serialize_with = "serialize_opt_rational")]
        lhs_exact: Option<Rational>,
        #[serde(serialize_with = "serialize_opt_rational")]
        rhs_exact: Option<Rational>,
    },
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub correlations: BTreeMap<(u8, u8), CellCorrelation>,
    pub statistic: BellStatistic,
}

struct CellGeometry {
    cell: (u8, u8),
    alice: NominalSetting,
    bob: NominalSetting,
}

fn cells_of(kind: &ExperimentKind) -> Vec<CellGeometry> {
    match kind {
        ExperimentKind::Chsh { alice, bob } => alice
            .iter()
            .flat_map(|a| {
                bob.iter().map(move |b| CellGeometry {
                    cell: (a.label, b.label),
                    alice: a.clone(),
                    bob: b.clone(),
                })
            })
            .collect(),
        ExperimentKind::Bell1964 { settings } => {
            let mut cells = Vec::new();
            for i in 0..3 {
                for j in (i + 1)..3 {
                    cells.push(CellGeometry {
                        cell: (settings[i].label, settings[j].label),
                        alice: settings[i].clone(),
                        bob: settings[j].clone(),
                    });
                }
            }
            cells
        }
    }
}

fn validate_spec(spec: &ExperimentSpec) -> Result<(), HarnessError> {
    if spec.runs == 0 {
        return Err(HarnessError::InvalidExperiment("runs must be >= 1".into()));
    }
    if spec.workers == 0 {
        return Err(HarnessError::InvalidExperiment(
            "workers must be >= 1".into(),
        ));
    }
    let labels: Vec<Vec<u8>> = match &spec.kind {
        ExperimentKind::Chsh { alice, bob } => vec![
            alice.iter().map(|s| s.label).collect(),
            bob.iter().map(|s| s.label).collect(),
        ],
        ExperimentKind::Bell1964 { settings } => {
            vec![settings.iter().map(|s| s.label).collect()]
        }
    };
    for group in labels {
        let mut sorted = group.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != group.len() {
            return Err(HarnessError::InvalidExperiment(
                "setting labels must be distinct within a party".into(),
            ));
        }
    }
    Ok(())
}

fn run_one(
    spec: &ExperimentSpec,
    cells: &[CellGeometry],
    run_index: u64,
) -> Result<RunRecord, HarnessError> {
    let (lambda_a, _) = HiddenVariable::pair(spec.seed, run_index);
    let mut choice = lambda_a.rng(CH_CHOICE);
    let geom = match &spec.kind {
        ExperimentKind::Chsh { .. } => {
            // the two parity bits of the setting PRNGs
            let x = choice.gen_range(0..2u8);
            let y = choice.gen_range(0..2u8);
            cells
                .iter()
                .find(|c| c.cell == (x, y))
                .expect("cell exists")
        }
        ExperimentKind::Bell1964 { .. } => {
            let idx = choice.gen_range(0..cells.len());
            &cells[idx]
        }
    };
    let selection = match spec.mode {
        Mode::Exact => Selection::NearestGrid,
        Mode::Sampled => Selection::Jittered,
    };
    let cfg = exact_config(&lambda_a, &geom.alice, &geom.bob, &spec.p, selection)?;
    let (outcome_a, outcome_b) = measure_pair(&lambda_a, &cfg, &spec.p);
    let definedness = match &spec.kind {
        ExperimentKind::Chsh { .. } => {
            let (x, y) = geom.cell;
            match counterfactual_table(&cfg, x, y) {
                Ok(t) => Some(t),
                // aligned/antipodal nominal geometry: no certificate
                Err(HarnessError::CertifierInconclusive(_)) => None,
                Err(e) => return Err(e),
            }
        }
        ExperimentKind::Bell1964 { .. } => None,
    };
    Ok(RunRecord {
        run_index,
        lambda: lambda_a,
        cell: geom.cell,
        exact: cfg,
        outcome_a,
        outcome_b,
        definedness,
    })
}

/// Execute an experiment: M deterministic runs (parallelizable without
/// changing any output), per-cell correlations, and the Bell statistic.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome, HarnessError> {
    validate_spec(spec)?;
    let cells = cells_of(&spec.kind);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| HarnessError::InvalidExperiment(format!("thread pool: {e}")))?;
    let records: Result<Vec<RunRecord>, HarnessError> = pool.install(|| {
        (0..spec.runs)
            .into_par_iter()
            .map(|i| run_one(spec, &cells, i))
            .collect()
    });
    let records = records?;

    let mut correlations: BTreeMap<(u8, u8), CellCorrelation> = BTreeMap::new();
    for geom in &cells {
        correlations.insert(
            geom.cell,
            CellCorrelation {
                count: 0,
                sum_products: 0,
                exact: None,
                grid_index: None,
            },
        );
    }
    for r in &records {
        let c = correlations.get_mut(&r.cell).expect("known cell");
        c.count += 1;
        c.sum_products += (r.outcome_a as i64) * (r.outcome_b as i64);
    }
    if spec.mode == Mode::Exact {
        let pv = spec.p.to_u64().expect("desk-scale modulus");
        for geom in &cells {
            let eps = geom.alice.epsilon.max(geom.bob.epsilon);
            let target = (geom.alice.center_angle - geom.bob.center_angle).cos();
            let (lo, hi) = admissible_window(pv, target, eps)
                .ok_or_else(|| HarnessError::NoAdmissibleSetting(pv as f64 * band(eps)))?;
            let m = nearest_grid_index(pv, target).clamp(lo, hi);
            let c = correlations.get_mut(&geom.cell).expect("known cell");
            c.grid_index = Some(m);
            c.exact = Some(-Rational::new(
                BigInt::from(m) - BigInt::from(pv),
                BigInt::from(pv),
            ));
        }
    }

    let statistic = match &spec.kind {
        ExperimentKind::Chsh { .. } => chsh_statistic(&correlations),
        ExperimentKind::Bell1964 { settings } => bell1964_statistic(settings, &correlations),
    };
    Ok(ExperimentOutcome {
        records,
        correlations,
        statistic,
    })
}

fn chsh_statistic(correlations: &BTreeMap<(u8, u8), CellCorrelation>) -> BellStatistic {
    let c = |x: u8, y: u8| correlations.get(&(x, y)).expect("cell");
    let combo_f64 =
        c(0, 0).estimate() - c(0, 1).estimate() + c(1, 0).estimate() + c(1, 1).estimate();
    let s_exact = match (
        &c(0, 0).exact,
        &c(0, 1).exact,
        &c(1, 0).exact,
        &c(1, 1).exact,
    ) {
        (Some(c00), Some(c01), Some(c10), Some(c11)) => Some((c00 - c01 + c10 + c11).abs()),
        _ => None,
    };
    BellStatistic::Chsh {
        s_abs: combo_f64.abs(),
        s_exact,
    }
}

fn bell1964_statistic(
    settings: &[NominalSetting; 3],
    correlations: &BTreeMap<(u8, u8), CellCorrelation>,
) -> BellStatistic {
    let l = |i: usize| settings[i].label;
    let c = |i: usize, j: usize| correlations.get(&(l(i), l(j))).expect("cell");
    let lhs = (c(0, 1).estimate() - c(0, 2).estimate()).abs();
    let rhs = 1.0 + c(1, 2).estimate();
    let (lhs_exact, rhs_exact) = match (&c(0, 1).exact, &c(0, 2).exact, &c(1, 2).exact) {
        (Some(c12), Some(c13), Some(c23)) => {
            (Some((c12 - c13).abs()), Some(Rational::from_integer(1.into()) + c23))
        }
        _ => (None, None),
    };
    BellStatistic::Bell1964 {
        lhs,
        rhs,
        violated: lhs > rhs,
        lhs_exact,
        rhs_exact,
    }
}

// ---------------------------------------------------------------------------
// Measurement-independence report
// ---------------------------------------------------------------------------

/// Exact- and coarse-resolution comparison of the hidden-variable stream
/// across setting cells.
#[derive(Debug, Clone, Serialize)]
pub struct MiReport {
    /// per-cell histograms of the realized grid index (exact resolution)
    pub exact_support: BTreeMap<String, BTreeMap<u64, u64>>,
    /// fraction of certified runs whose single-flip cells are undefined
    pub single_flip_undefined_rate: f64,
    /// fraction of certified runs with zero counterfactual product
    pub exact_product_zero_rate: f64,
    pub certified_runs: u64,
    pub uncertified_runs: u64,
    /// coarse section: jitter coordinate binned at epsilon resolution
    pub coarse_bins: usize,
    pub coarse_chi2: f64,
    pub coarse_dof: u64,
    pub coarse_p_value: f64,
}

/// Build the MI report: exact-resolution support histograms plus a
/// chi-square independence test of the epsilon-binned hidden-variable
/// coordinate against the setting cell.
pub fn mi_report(records: &[RunRecord], epsilon_bin: f64) -> Result<MiReport, HarnessError> {
    if !(epsilon_bin > 0.0) {
        return Err(HarnessError::InvalidExperiment(format!(
            "epsilon bin width must be positive, got {epsilon_bin}"
        )));
    }
    let mut cells: Vec<(u8, u8)> = records.iter().map(|r| r.cell).collect();
    cells.sort_unstable();
    cells.dedup();
    if cells.len() < 2 {
        return Err(HarnessError::DegenerateReport);
    }

    let mut exact_support: BTreeMap<String, BTreeMap<u64, u64>> = BTreeMap::new();
    for r in records {
        *exact_support
            .entry(format!("({},{})", r.cell.0, r.cell.1))
            .or_default()
            .entry(r.exact.grid_index)
            .or_default() += 1;
    }

    let mut certified = 0u64;
    let mut uncertified = 0u64;
    let mut single_flip_undefined = 0u64;
    let mut product_zero = 0u64;
    for r in records {
        match &r.definedness {
            Some(t) => {
                certified += 1;
                if !t[1] && !t[2] {
                    single_flip_undefined += 1;
                }
                if t.iter().any(|d| !d) {
                    product_zero += 1;
                }
            }
            None => uncertified += 1,
        }
    }

    let nbins = ((1.0 / epsilon_bin).ceil() as usize).clamp(2, 4096);
    let cell_index: BTreeMap<(u8, u8), usize> =
        cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let mut counts = vec![vec![0u64; cells.len()]; nbins];
    for r in records {
        let bin = ((r.exact.jitter * nbins as f64) as usize).min(nbins - 1);
        counts[bin][cell_index[&r.cell]] += 1;
    }
    let (chi2, dof) = chi_square_independence(&counts);
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64)
            .expect("positive dof")
            .cdf(chi2)
    };

    let denom = certified.max(1) as f64;
    Ok(MiReport {
        exact_support,
        single_flip_undefined_rate: single_flip_undefined as f64 / denom,
        exact_product_zero_rate: product_zero as f64 / denom,
        certified_runs: certified,
        uncertified_runs: uncertified,
        coarse_bins: nbins,
        coarse_chi2: chi2,
        coarse_dof: dof,
        coarse_p_value: p_value,
    })
}

fn chi_square_independence(counts: &[Vec<u64>]) -> (f64, u64) {
    let ncols = counts.first().map(|r| r.len()).unwrap_or(0);
    let row_sums: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let mut col_sums = vec![0u64; ncols];
    for row in counts {
        for (j, v) in row.iter().enumerate() {
            col_sums[j] += v;
        }
    }
    let total: u64 = row_sums.iter().sum();
    if total == 0 {
        return (0.0, 0);
    }
    let used_rows = row_sums.iter().filter(|s| **s > 0).count();
    let used_cols = col_sums.iter().filter(|s| **s > 0).count();
    let mut stat = 0.0;
    for (i, row) in counts.iter().enumerate() {
        if row_sums[i] == 0 {
            continue;
        }
        for (j, v) in row.iter().enumerate() {
            if col_sums[j] == 0 {
                continue;
            }
            let expect = row_sums[i] as f64 * col_sums[j] as f64 / total as f64;
            let diff = *v as f64 - expect;
            stat += diff * diff / expect;
        }
    }
    let dof = (used_rows.saturating_sub(1) * used_cols.saturating_sub(1)) as u64;
    (stat, dof)
}

// ---------------------------------------------------------------------------
// Local-causality audit
// ---------------------------------------------------------------------------

/// Counts from scanning every single-side perturbation of every run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AuditReport {
    /// defined single-side counterfactuals that flipped the far outcome
    /// (the local-causality contract requires this to be zero)
    pub lc1_violations: u64,
    /// single-side counterfactuals rendered undefined (permitted)
    pub lc2_undefined: u64,
    /// defined single-side counterfactuals with the far outcome unchanged
    pub defined_unflipped: u64,
    /// runs without a certificate, skipped
    pub uncertified_runs: u64,
}

/// Audit local causality over a run set: for each run examine the four
/// single-side perturbations (Bob nominal flip, Alice nominal flip, Bob-side
/// hidden-variable perturbation, Alice-side hidden-variable perturbation).
/// Undefined cells count as lc2; defined cells have their far-side outcome
/// recomputed and compared.
pub fn causality_audit(records: &[RunRecord], p: &PrimeModulus) -> AuditReport {
    let pv = p.to_u64().expect("desk-scale modulus");
    let mut report = AuditReport::default();
    for r in records {
        let Some(table) = &r.definedness else {
            report.uncertified_runs += 1;
            continue;
        };
        // Nominal flips: table[1] = (x, y'), table[2] = (x', y).
        // Bob-side change may not flip outcome A; Alice-side may not flip B.
        for (flag_idx, bob_side) in [(1usize, true), (2usize, false)] {
            if !table[flag_idx] {
                report.lc2_undefined += 1;
            } else {
                // A defined single-flip: recompute the far-side outcome under
                // the counterfactual configuration (same lambda index).
                let k = source_index(&r.lambda, pv);
                let far_before = if bob_side { r.outcome_a } else { r.outcome_b };
                let (a2, b2) = singlet_bit_pair(pv, r.exact.grid_index, k);
                let far_after = if bob_side { a2 } else { b2 };
                if far_after == -far_before {
                    report.lc1_violations += 1;
                } else {
                    report.defined_unflipped += 1;
                }
            }
        }
        // Hidden-variable perturbations: a side perturbation moves that
        // side's exact setting to another grid direction; the realized edge
        // (rational), the perturbation-web cosine (grid rational), and a
        // fresh non-exceptional vertex angle form a triangle that forces the
        // perturbed pair cosine irrational, so the cell is undefined.
        for channel in [CH_AUDIT_B, CH_AUDIT_A] {
            let mut rng = stream_rng(r.lambda.master_seed, r.lambda.run_index, channel);
            let web_cos = draw_interior_grid_cos(&mut rng, pv);
            let psi = draw_vertex_angle(&mut rng);
            let spec = TriangleSpec::new(r.exact.cos_realized.clone(), web_cos, psi)
                .expect("grid cosines are in range");
            match impossible_triangle(&spec) {
                Verdict::ForcedIrrational => report.lc2_undefined += 1,
                Verdict::RationalValue(_) | Verdict::Degenerate | Verdict::ExceptionalVertexAngle => {
                    // Cannot certify undefinedness; the far-side outcome is
                    // the source bit, unchanged by the near-side setting.
                    report.defined_unflipped += 1;
                }
            }
        }
    }
    report
}

fn source_index(lambda: &HiddenVariable, pv: u64) -> u64 {
    let mut rng = lambda.rng(CH_SOURCE);
    rng.gen_range(0..2 * pv)
}

// ---------------------------------------------------------------------------
// Convergence scan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub p: u64,
    #[serde(serialize_with = "serialize_rational_str")]
    pub s_exact: Rational,
    pub s_value: f64,
    pub deviation_from_quantum: f64,
}

fn serialize_rational_str<S: serde::Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

/// Exact-count CHSH S across a scan of moduli; the deviation from 2 sqrt 2
/// shrinks with the O(1/p) grid resolution.
pub fn convergence_scan(
    kind: &ExperimentKind,
    seed: u64,
    moduli: &[u64],
    runs: u64,
) -> Result<Vec<ConvergenceRow>, HarnessError> {
    let mut rows = Vec::new();
    for &pv in moduli {
        let p = PrimeModulus::from_u64(pv)
            .map_err(|e| HarnessError::InvalidExperiment(e.to_string()))?;
        let spec = ExperimentSpec {
            kind: kind.clone(),
            seed,
            p,
            runs,
            mode: Mode::Exact,
            workers: 1,
        };
        let outcome = run_experiment(&spec)?;
        let (s_exact, s_value) = match outcome.statistic {
            BellStatistic::Chsh { s_abs, s_exact } => (
                s_exact.expect("exact mode produces exact S"),
                s_abs,
            ),
            BellStatistic::Bell1964 { .. } => {
                return Err(HarnessError::InvalidExperiment(
                    "convergence scan is defined for the CHSH experiment".into(),
                ))
            }
        };
        let deviation = (s_value - 2.0 * std::f64::consts::SQRT_2).abs();
        rows.push(ConvergenceRow {
            p: pv,
            s_exact,
            s_value,
            deviation_from_quantum: deviation,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactmath::{ratio, ratio_int};

    fn p(v: u64) -> PrimeModulus {
        PrimeModulus::from_u64(v).unwrap()
    }

    fn chsh_spec(seed: u64, pv: u64, runs: u64, mode: Mode, workers: usize) -> ExperimentSpec {
        let eps = 10.0 / pv as f64;
        ExperimentSpec {
            kind: chsh_settings_from_polariser_degrees([0.0, 45.0, 22.5, 67.5], eps).unwrap(),
            seed,
            p: p(pv),
            runs,
            mode,
            workers,
        }
    }

    #[test]
    fn exact_config_aligned_axes_hits_grid_end() {
        let (la, _) = HiddenVariable::pair(7, 0);
        let a = NominalSetting::new(0, 0.0, 0.05).unwrap();
        let b = NominalSetting::new(0, 0.0, 0.05).unwrap();
        let cfg = exact_config(&la, &a, &b, &p(101), Selection::NearestGrid).unwrap();
        assert_eq!(cfg.grid_index, 202);
        assert_eq!(cfg.cos_realized, ratio_int(1));
    }

    #[test]
    fn exact_config_45_degrees_nearest_grid() {
        let (la, _) = HiddenVariable::pair(7, 0);
        let a = NominalSetting::new(0, std::f64::consts::FRAC_PI_4, 0.01).unwrap();
        let b = NominalSetting::new(0, 0.0, 0.01).unwrap();
        let cfg = exact_config(&la, &a, &b, &p(101), Selection::NearestGrid).unwrap();
        assert_eq!(cfg.grid_index, 172);
        assert_eq!(cfg.cos_realized, ratio(71, 101));
    }

    #[test]
    fn exact_config_jitter_stays_in_band_and_is_deterministic() {
        let a = NominalSetting::new(0, std::f64::consts::FRAC_PI_4, 0.01).unwrap();
        let b = NominalSetting::new(0, 0.0, 0.01).unwrap();
        let target = std::f64::consts::FRAC_PI_4.cos();
        for idx in 0..200 {
            let (la, _) = HiddenVariable::pair(11, idx);
            let cfg = exact_config(&la, &a, &b, &p(101), Selection::Jittered).unwrap();
            let c = cfg.cos_realized.to_f64().unwrap();
            assert!((c - target).abs() <= band(0.01) + 1e-12);
            let again = exact_config(&la, &a, &b, &p(101), Selection::Jittered).unwrap();
            assert_eq!(cfg, again);
        }
    }

    #[test]
    fn exact_config_no_admissible_point() {
        let (la, _) = HiddenVariable::pair(7, 0);
        let a = NominalSetting::new(0, std::f64::consts::FRAC_PI_4, 1e-6).unwrap();
        let b = NominalSetting::new(0, 0.0, 1e-6).unwrap();
        assert!(matches!(
            exact_config(&la, &a, &b, &p(3), Selection::Jittered),
            Err(HarnessError::NoAdmissibleSetting(_))
        ));
    }

    #[test]
    fn vertex_angles_never_exceptional() {
        for idx in 0..500 {
            let (la, _) = HiddenVariable::pair(3, idx);
            let a = NominalSetting::new(0, 0.5, 0.05).unwrap();
            let b = NominalSetting::new(0, 0.0, 0.05).unwrap();
            let cfg = exact_config(&la, &a, &b, &p(101), Selection::Jittered).unwrap();
            for ang in [
                &cfg.vertex_angles.alpha,
                &cfg.vertex_angles.beta,
                &cfg.vertex_angles.gamma,
                &cfg.vertex_angles.delta,
            ] {
                assert!(!crate::sphgeom::is_exceptional_vertex_angle(ang));
            }
        }
    }

    #[test]
    fn measure_pair_perfect_anticorrelation_on_aligned_axis() {
        let a = NominalSetting::new(0, 0.0, 0.05).unwrap();
        let b = NominalSetting::new(0, 0.0, 0.05).unwrap();
        for idx in 0..100 {
            let (la, _) = HiddenVariable::pair(13, idx);
            let cfg = exact_config(&la, &a, &b, &p(101), Selection::NearestGrid).unwrap();
            let (oa, ob) = measure_pair(&la, &cfg, &p(101));
            assert_eq!(oa, -ob);
        }
    }

    #[test]
    fn full_ensemble_correlation_matches_identity() {
        // summing the bit pairs over every source index recovers -(m/p - 1)
        let pv = 101u64;
        for m in [0u64, 51, 151, 202] {
            let sum: i64 = (0..2 * pv)
                .map(|k| {
                    let (a, b) = singlet_bit_pair(pv, m, k);
                    (a as i64) * (b as i64)
                })
                .sum();
            let corr = Rational::new(BigInt::from(sum), BigInt::from(2 * pv));
            assert_eq!(corr, -ratio(m as i64 - 101, 101));
        }
    }

    #[test]
    fn counterfactual_table_shape() {
        let (la, _) = HiddenVariable::pair(5, 17);
        let a = NominalSetting::new(0, 1.0, 0.05).unwrap();
        let b = NominalSetting::new(1, 0.3, 0.05).unwrap();
        let cfg = exact_config(&la, &a, &b, &p(101), Selection::Jittered).unwrap();
        let t = counterfactual_table(&cfg, 0, 1).unwrap();
        assert_eq!(t, [true, false, false, true]);
        let product: u8 = t.iter().map(|d| u8::from(*d)).product();
        assert_eq!(product, 0);
    }

    #[test]
    fn counterfactual_table_degenerate_geometry_is_inconclusive() {
        let (la, _) = HiddenVariable::pair(5, 17);
        let a = NominalSetting::new(0, 0.0, 0.05).unwrap();
        let b = NominalSetting::new(0, 0.0, 0.05).unwrap();
        let cfg = exact_config(&la, &a, &b, &p(101), Selection::NearestGrid).unwrap();
        assert!(matches!(
            counterfactual_table(&cfg, 0, 0),
            Err(HarnessError::CertifierInconclusive(_))
        ));
    }

    #[test]
    fn chsh_exact_count_s_value() {
        let spec = chsh_spec(42, 10007, 64, Mode::Exact, 1);
        let outcome = run_experiment(&spec).unwrap();
        match &outcome.statistic {
            BellStatistic::Chsh { s_abs, s_exact } => {
                assert_eq!(s_exact.clone().unwrap(), ratio(28304, 10007));
                assert!((s_abs - 2.0 * std::f64::consts::SQRT_2).abs() < 4.0 / 10007.0);
            }
            _ => panic!("wrong statistic"),
        }
        // every run in a cell shares the nearest grid index in exact mode
        for r in &outcome.records {
            let c = &outcome.correlations[&r.cell];
            assert_eq!(Some(r.exact.grid_index), c.grid_index);
        }
    }

    #[test]
    fn chsh_identical_settings_give_perfect_anticorrelation() {
        let eps = 0.05;
        let kind = ExperimentKind::Chsh {
            alice: [
                NominalSetting::new(0, 0.0, eps).unwrap(),
                NominalSetting::new(1, 2.0, eps).unwrap(),
            ],
            bob: [
                NominalSetting::new(0, 0.0, eps).unwrap(),
                NominalSetting::new(1, 1.0, eps).unwrap(),
            ],
        };
        let spec = ExperimentSpec {
            kind,
            seed: 9,
            p: p(101),
            runs: 50,
            mode: Mode::Exact,
            workers: 1,
        };
        let outcome = run_experiment(&spec).unwrap();
        assert_eq!(
            outcome.correlations[&(0, 0)].exact.clone().unwrap(),
            ratio_int(-1)
        );
        // aligned cell has no certificate, the other cells do
        for r in &outcome.records {
            if r.cell == (0, 0) {
                assert!(r.definedness.is_none());
            } else {
                assert!(r.definedness.is_some());
            }
        }
    }

    #[test]
    fn bell1964_exact_violation() {
        let eps = 10.0 / 10007.0;
        let spec = ExperimentSpec {
            kind: bell1964_settings_from_plane_degrees([0.0, 45.0, 90.0], eps).unwrap(),
            seed: 42,
            p: p(10007),
            runs: 32,
            mode: Mode::Exact,
            workers: 1,
        };
        let outcome = run_experiment(&spec).unwrap();
        match &outcome.statistic {
            BellStatistic::Bell1964 {
                lhs, rhs, violated, ..
            } => {
                assert!((lhs - 0.7071).abs() < 5e-4, "lhs={lhs}");
                assert!((rhs - 0.2929).abs() < 5e-4, "rhs={rhs}");
                assert!(violated);
            }
            _ => panic!("wrong statistic"),
        }
    }

    #[test]
    fn determinism_across_worker_counts() {
        let base = run_experiment(&chsh_spec(2024, 101, 400, Mode::Sampled, 1)).unwrap();
        for workers in [4usize, 8] {
            let other =
                run_experiment(&chsh_spec(2024, 101, 400, Mode::Sampled, workers)).unwrap();
            assert_eq!(base.records.len(), other.records.len());
            for (a, b) in base.records.iter().zip(&other.records) {
                assert_eq!(a.run_index, b.run_index);
                assert_eq!(a.cell, b.cell);
                assert_eq!(a.exact, b.exact);
                assert_eq!(a.outcome_a, b.outcome_a);
                assert_eq!(a.outcome_b, b.outcome_b);
                assert_eq!(a.definedness, b.definedness);
            }
        }
    }

    #[test]
    fn sampled_correlations_approach_exact_values() {
        let sampled = run_experiment(&chsh_spec(7, 1009, 40_000, Mode::Sampled, 4)).unwrap();
        let exact = run_experiment(&chsh_spec(7, 1009, 16, Mode::Exact, 1)).unwrap();
        for (cell, c) in &sampled.correlations {
            let reference = exact.correlations[cell].exact.clone().unwrap();
            let err = (c.estimate() - reference.to_f64().unwrap()).abs();
            // 4/sqrt(M_cell) with M_cell ~ 10k
            assert!(err < 0.05, "cell {cell:?} err {err}");
        }
    }

    #[test]
    fn mi_report_shape_and_independence() {
        let outcome = run_experiment(&chsh_spec(5, 101, 20_000, Mode::Sampled, 4)).unwrap();
        let report = mi_report(&outcome.records, 0.05).unwrap();
        assert_eq!(report.certified_runs, 20_000);
        assert_eq!(report.uncertified_runs, 0);
        assert_eq!(report.single_flip_undefined_rate, 1.0);
        assert_eq!(report.exact_product_zero_rate, 1.0);
        assert!(report.coarse_p_value > 0.01, "p = {}", report.coarse_p_value);
        assert_eq!(report.exact_support.len(), 4);
    }

    #[test]
    fn mi_report_degenerate_on_single_cell() {
        let outcome = run_experiment(&chsh_spec(5, 101, 3, Mode::Sampled, 1)).unwrap();
        let one_cell: Vec<RunRecord> = outcome
            .records
            .iter()
            .filter(|r| r.cell == outcome.records[0].cell)
            .cloned()
            .collect();
        assert!(matches!(
            mi_report(&one_cell, 0.05),
            Err(HarnessError::DegenerateReport)
        ));
    }

    #[test]
    fn audit_counts_no_lc1_violations() {
        let outcome = run_experiment(&chsh_spec(3, 101, 5_000, Mode::Sampled, 4)).unwrap();
        let report = causality_audit(&outcome.records, &p(101));
        assert_eq!(report.lc1_violations, 0);
        // four single-side perturbation classes per certified run
        assert_eq!(report.lc2_undefined, 4 * 5_000);
        assert_eq!(report.uncertified_runs, 0);
    }

    #[test]
    fn audit_detects_synthetic_flip() {
        // fabricate a record whose Bob-flip cell is (wrongly) defined and
        // whose stored outcome contradicts the deterministic recomputation:
        // the comparison machinery must flag it.
        let (la, _) = HiddenVariable::pair(77, 0);
        let a = NominalSetting::new(0, 1.0, 0.05).unwrap();
        let b = NominalSetting::new(0, 0.3, 0.05).unwrap();
        let cfg = exact_config(&la, &a, &b, &p(101), Selection::Jittered).unwrap();
        let (oa, ob) = measure_pair(&la, &cfg, &p(101));
        let record = RunRecord {
            run_index: 0,
            lambda: la,
            cell: (0, 0),
            exact: cfg,
            outcome_a: -oa, // stored flipped
            outcome_b: ob,
            definedness: Some([true, true, false, true]),
        };
        let report = causality_audit(&[record], &p(101));
        assert_eq!(report.lc1_violations, 1);
    }

    #[test]
    fn convergence_deviation_strictly_decreases() {
        let eps_kind = |pv: u64| {
            chsh_settings_from_polariser_degrees([0.0, 45.0, 22.5, 67.5], 10.0 / pv as f64)
                .unwrap()
        };
        let mut devs = Vec::new();
        for pv in [101u64, 1009, 10007] {
            let rows = convergence_scan(&eps_kind(pv), 1, &[pv], 8).unwrap();
            devs.push(rows[0].deviation_from_quantum);
        }
        assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
    }
}
