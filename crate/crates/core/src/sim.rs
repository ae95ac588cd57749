//! Monte Carlo model of the slit-scan coincidence experiment: a noisy
//! entangled-pair source, the displaced-beam probe, a slit stepped across
//! the beam, and Poisson counting with a flat accidental background.
//!
//! Every counting cell (condition, repeat, slit position) draws from its own
//! RNG substream derived from the master seed, so record lists are identical
//! for identical seeds and configs regardless of evaluation order.

use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{c, ComplexMatrix};
use crate::pointer::{
    calibration_density, joint_density, unconditional_density, GaussianMixture, PointerConfig,
};
use crate::random::stream_rng;
use crate::states::{entangled_pair, werner_mixture, DensityMatrix, PureState};
use crate::weak::{BobSetting, MeasurementFrame, WeakBasis, OUTCOMES};

/// Entangled-pair source: pump polarization angle theta (degrees), residual
/// phase phi (radians), isotropic noise admixture, and detected pair rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    pub theta: f64,
    pub phi: f64,
    pub werner_v: f64,
    pub pair_rate: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self { theta: 45.0, phi: 0.0, werner_v: 1.0, pair_rate: 2000.0 }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.theta.is_finite() || !self.phi.is_finite() {
            return Err(Error::InvalidConfig("theta and phi must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.werner_v) {
            return Err(Error::InvalidConfig(format!(
                "werner_v = {} must lie in [0, 1]",
                self.werner_v
            )));
        }
        if !(self.pair_rate >= 0.0) || !self.pair_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "pair_rate = {} must be finite and nonnegative",
                self.pair_rate
            )));
        }
        Ok(())
    }

    /// The pure part sin(theta)|HV> - e^{i phi} cos(theta)|VH>.
    pub fn pure_part(&self) -> PureState {
        entangled_pair(self.theta.to_radians(), self.phi)
    }

    /// Emitted two-photon state: the pure part mixed with white noise.
    pub fn delivered_state(&self) -> Result<DensityMatrix> {
        self.validate()?;
        werner_mixture(&self.pure_part(), self.werner_v)
    }
}

/// Slit-scan protocol parameters. Lengths in micrometers, times in seconds
/// except the two timing fields in nanoseconds; the timing fields are
/// recorded for provenance but only `accidental_rate` enters the statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    pub slit_width: f64,
    pub step: f64,
    pub range: f64,
    pub dwell: f64,
    pub repeats: u32,
    pub coincidence_window: f64,
    pub pump_period: f64,
    pub accidental_rate: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            slit_width: 350.0,
            step: 87.5,
            range: 3500.0,
            dwell: 10.0,
            repeats: 70,
            coincidence_window: 3.0,
            pump_period: 13.1,
            accidental_rate: 10.0,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("slit_width", self.slit_width),
            ("step", self.step),
            ("range", self.range),
            ("dwell", self.dwell),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} = {v} must be finite")));
            }
        }
        if !(self.step > 0.0) {
            return Err(Error::InvalidConfig(format!("step = {} must be positive", self.step)));
        }
        if self.range < self.step {
            return Err(Error::InvalidConfig(format!(
                "range = {} must be at least one step ({})",
                self.range, self.step
            )));
        }
        if !(self.slit_width > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "slit_width = {} must be positive",
                self.slit_width
            )));
        }
        if !(self.dwell > 0.0) {
            return Err(Error::InvalidConfig(format!("dwell = {} must be positive", self.dwell)));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be at least 1".into()));
        }
        if !(self.accidental_rate >= 0.0) || !self.accidental_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "accidental_rate = {} must be finite and nonnegative",
                self.accidental_rate
            )));
        }
        Ok(())
    }

    /// Slit center positions: a symmetric grid covering `range` in `step`
    /// increments.
    pub fn positions(&self) -> Vec<f64> {
        let n = (self.range / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| -(n as f64) * self.step / 2.0 + k as f64 * self.step).collect()
    }
}

/// The ten measurement conditions of one full run: eight strong postselection
/// cells (Alice outcome times Bob outcome for each analyser setting) plus the
/// two beam characterization scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    Chsh { setting: BobSetting, x: i8, bob: i8 },
    CalH,
    CalV,
}

fn fmt_sign(v: i8) -> &'static str {
    if v > 0 {
        "+1"
    } else {
        "-1"
    }
}

impl Condition {
    pub const COUNT: usize = 10;

    pub fn all() -> [Condition; Self::COUNT] {
        let mut out = [Condition::CalH; Self::COUNT];
        let mut i = 0;
        for setting in BobSetting::ALL {
            for x in OUTCOMES {
                for bob in OUTCOMES {
                    out[i] = Condition::Chsh { setting, x, bob };
                    i += 1;
                }
            }
        }
        out[8] = Condition::CalH;
        out[9] = Condition::CalV;
        out
    }

    pub fn label(&self) -> String {
        match self {
            Condition::Chsh { setting, x, bob } => {
                let letter = match setting {
                    BobSetting::P => "p",
                    BobSetting::Q => "q",
                };
                format!("{setting}_x{}_{letter}{}", fmt_sign(*x), fmt_sign(*bob))
            }
            Condition::CalH => "cal_H".into(),
            Condition::CalV => "cal_V".into(),
        }
    }

    pub fn from_label(label: &str) -> Result<Condition> {
        Condition::all()
            .into_iter()
            .find(|c| c.label() == label)
            .ok_or_else(|| Error::Parse(format!("unknown condition label {label:?}")))
    }

    pub fn index(&self) -> usize {
        Condition::all().iter().position(|c| c == self).expect("condition enumerates itself")
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// One counting cell of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub condition: String,
    pub slit_position_um: f64,
    pub repeat: u32,
    pub coincidences: u64,
    pub accidentals: u64,
}

pub fn records_to_csv_string(records: &[CountRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(format!("count CSV is not UTF-8: {e}")))
}

pub fn records_from_csv_str(text: &str) -> Result<Vec<CountRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Complete configuration of one simulated run; serializes to the JSON
/// config-file schema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub source: SourceConfig,
    pub scan: ScanConfig,
    pub pointer: PointerConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.scan.validate()?;
        self.pointer.validate()?;
        let positions = self.scan.positions();
        let (lo, hi) = self.pointer.quadrature_range();
        let half = self.scan.slit_width / 2.0;
        let first = positions.first().copied().unwrap_or(0.0);
        let last = positions.last().copied().unwrap_or(0.0);
        if first - half < lo || last + half > hi {
            return Err(Error::InvalidConfig(format!(
                "scan [{first}, {last}] with slit width {} exceeds the beam support [{lo}, {hi}]",
                self.scan.slit_width
            )));
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// State actually presented to the standard apparatus. The basis-swapped
/// frame is realized as the ideal rotation of both arms (Hadamard on Alice,
/// X on Bob) before the unchanged probe and analysers.
pub fn frame_rotated_state(rho: &DensityMatrix, frame: &MeasurementFrame) -> Result<DensityMatrix> {
    match frame.weak_basis() {
        WeakBasis::Z => Ok(rho.clone()),
        WeakBasis::X => {
            let inv = std::f64::consts::FRAC_1_SQRT_2;
            let mut hadamard = ComplexMatrix::zeros(2);
            hadamard[(0, 0)] = c(inv, 0.0);
            hadamard[(0, 1)] = c(inv, 0.0);
            hadamard[(1, 0)] = c(inv, 0.0);
            hadamard[(1, 1)] = c(-inv, 0.0);
            let mut pauli_x = ComplexMatrix::zeros(2);
            pauli_x[(0, 1)] = c(1.0, 0.0);
            pauli_x[(1, 0)] = c(1.0, 0.0);
            let u = hadamard.kron(&pauli_x);
            DensityMatrix::new_analytic(u.mul(rho.matrix()).mul(&u))
        }
    }
}

fn sample_poisson(rng: &mut ChaCha12Rng, lambda: f64) -> u64 {
    assert!(lambda.is_finite() && lambda >= 0.0, "Poisson rate must be finite, got {lambda}");
    if lambda <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(lambda).expect("rate checked above").sample(rng);
    draw.round() as u64
}

fn slit_mass(mixture: &GaussianMixture, center: f64, width: f64) -> f64 {
    mixture.integrate(center - width / 2.0, center + width / 2.0, 64)
}

const SCAN_LANE: u64 = 1;
const TOMOGRAPHY_LANE: u64 = 2;

/// Expected signal probability per (condition, slit position) for the
/// delivered state under the given frame.
fn signal_profiles(
    rho: &DensityMatrix,
    frame: &MeasurementFrame,
    scan: &ScanConfig,
    pointer: &PointerConfig,
) -> Result<Vec<Vec<f64>>> {
    let rotated = frame_rotated_state(rho, frame)?;
    let positions = scan.positions();
    let density_p = joint_density(&rotated, BobSetting::P, pointer)?;
    let density_q = joint_density(&rotated, BobSetting::Q, pointer)?;
    let mut rows = Vec::with_capacity(Condition::COUNT);
    for cond in Condition::all() {
        let mixture = match cond {
            Condition::Chsh { setting: BobSetting::P, x, bob } => *density_p.mixture(x, bob),
            Condition::Chsh { setting: BobSetting::Q, x, bob } => *density_q.mixture(x, bob),
            Condition::CalH => calibration_density(&rotated, 1, pointer)?,
            Condition::CalV => calibration_density(&rotated, -1, pointer)?,
        };
        rows.push(
            positions.iter().map(|&r| slit_mass(&mixture, r, scan.slit_width)).collect(),
        );
    }
    Ok(rows)
}

/// Full slit-scan Monte Carlo. Coincidences in each cell are Poisson with
/// the signal rate plus the accidental rate through the slit; the separately
/// recorded accidentals are an independent Poisson draw at the accidental
/// rate alone, mirroring the time-displaced counting window. A source with
/// zero pair rate emits no light, so both channels stay silent.
pub fn simulate_run(
    source: &SourceConfig,
    scan: &ScanConfig,
    pointer: &PointerConfig,
    frame: &MeasurementFrame,
    seed: u64,
) -> Result<Vec<CountRecord>> {
    let cfg = ExperimentConfig { source: *source, scan: *scan, pointer: *pointer };
    cfg.validate()?;
    frame.validate()?;
    let rho = source.delivered_state()?;
    let profiles = signal_profiles(&rho, frame, scan, pointer)?;
    let beam = unconditional_density(&frame_rotated_state(&rho, frame)?, pointer)?;
    let positions = scan.positions();
    let source_on = source.pair_rate > 0.0;
    let mut records =
        Vec::with_capacity(Condition::COUNT * positions.len() * scan.repeats as usize);
    for cond in Condition::all() {
        let ci = cond.index();
        let label = cond.label();
        for repeat in 0..scan.repeats {
            for (pi, &pos) in positions.iter().enumerate() {
                let mut rng = stream_rng(
                    seed,
                    &[SCAN_LANE, ci as u64 + 1, repeat as u64 + 1, pi as u64 + 1],
                );
                let (coincidences, accidentals) = if source_on {
                    let lam_sig = source.pair_rate * scan.dwell * profiles[ci][pi];
                    let lam_acc = scan.accidental_rate
                        * scan.dwell
                        * slit_mass(&beam, pos, scan.slit_width);
                    let signal = sample_poisson(&mut rng, lam_sig);
                    let background = sample_poisson(&mut rng, lam_acc);
                    let monitor = sample_poisson(&mut rng, lam_acc);
                    (signal + background, monitor)
                } else {
                    (0, 0)
                };
                records.push(CountRecord {
                    condition: label.clone(),
                    slit_position_um: pos,
                    repeat,
                    coincidences,
                    accidentals,
                });
            }
        }
    }
    Ok(records)
}

/// Single-qubit analyser kets for tomography settings.
fn tomography_ket(letter: char) -> Result<PureState> {
    use crate::matrix::C64;
    let inv = std::f64::consts::FRAC_1_SQRT_2;
    let amps = match letter {
        'H' => vec![C64::ONE, C64::ZERO],
        'V' => vec![C64::ZERO, C64::ONE],
        'D' => vec![c(inv, 0.0), c(inv, 0.0)],
        'A' => vec![c(inv, 0.0), c(-inv, 0.0)],
        'R' => vec![c(inv, 0.0), c(0.0, inv)],
        'L' => vec![c(inv, 0.0), c(0.0, -inv)],
        other => return Err(Error::Parse(format!("unknown analyser letter {other:?}"))),
    };
    PureState::new(amps)
}

/// Product-projector setting labels: 16 informationally complete by default,
/// 36 in the overcomplete mode.
pub fn tomography_settings(overcomplete: bool) -> Vec<String> {
    let letters: &[char] = if overcomplete {
        &['H', 'V', 'D', 'A', 'R', 'L']
    } else {
        &['H', 'V', 'D', 'R']
    };
    let mut out = Vec::with_capacity(letters.len() * letters.len());
    for &a in letters {
        for &b in letters {
            out.push(format!("{a}{b}"));
        }
    }
    out
}

/// Two-qubit projector for a setting label like "HV" or "DR".
pub fn tomography_projector(setting: &str) -> Result<ComplexMatrix> {
    let mut chars = setting.chars();
    let (a, b) = match (chars.next(), chars.next(), chars.next()) {
        (Some(a), Some(b), None) => (a, b),
        _ => return Err(Error::Parse(format!("setting {setting:?} must be two letters"))),
    };
    Ok(tomography_ket(a)?.tensor(&tomography_ket(b)?).projector())
}

/// One tomography counting record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyRecord {
    pub setting: String,
    pub counts: u64,
}

pub fn tomography_to_csv_string(records: &[TomographyRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(format!("tomography CSV is not UTF-8: {e}")))
}

pub fn tomography_from_csv_str(text: &str) -> Result<Vec<TomographyRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Poisson counts for each product-projector setting at a common dwell:
/// the expected count is pair_rate * dwell * Born probability.
pub fn simulate_tomography(
    source: &SourceConfig,
    dwell: f64,
    overcomplete: bool,
    seed: u64,
) -> Result<Vec<TomographyRecord>> {
    if !(dwell > 0.0) || !dwell.is_finite() {
        return Err(Error::InvalidConfig(format!("dwell = {dwell} must be positive")));
    }
    let rho = source.delivered_state()?;
    let settings = tomography_settings(overcomplete);
    let mut out = Vec::with_capacity(settings.len());
    for (si, setting) in settings.iter().enumerate() {
        let prob = rho.expectation(&tomography_projector(setting)?).max(0.0);
        let lambda = source.pair_rate * dwell * prob;
        let mut rng = stream_rng(seed, &[TOMOGRAPHY_LANE, si as u64 + 1]);
        out.push(TomographyRecord { setting: setting.clone(), counts: sample_poisson(&mut rng, lambda) });
    }
    Ok(out)
}
