//! Weak values and weak-valued joint probability tables.
//!
//! A weak measurement of O followed by postselection F on a state rho assigns
//! the conditional average Re(Tr[F O rho] / Tr[F rho]). Multiplying by the
//! postselection probability turns the conditional value into a joint
//! quasiprobability; entries can be negative, and the Bell combination built
//! from them can exceed the classical bound of 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::states::{DensityMatrix, Observable};

/// Postselection probabilities at or below this threshold leave the
/// conditional value undefined.
pub const POSTSELECTION_FLOOR: f64 = 1e-12;

/// Which axis Alice's weak probe couples to; the other axis of the pair is
/// measured strongly and serves as postselection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeakBasis {
    Z,
    X,
}

impl std::fmt::Display for WeakBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeakBasis::Z => write!(f, "Z"),
            WeakBasis::X => write!(f, "X"),
        }
    }
}

impl std::str::FromStr for WeakBasis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Z" | "z" => Ok(WeakBasis::Z),
            "X" | "x" => Ok(WeakBasis::X),
            other => Err(Error::Parse(format!("unknown weak basis {other:?}, expected Z or X"))),
        }
    }
}

/// Strong analyser choice on Bob's arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BobSetting {
    P,
    Q,
}

impl BobSetting {
    pub fn observable(&self) -> Observable {
        match self {
            BobSetting::P => Observable::p(),
            BobSetting::Q => Observable::q(),
        }
    }

    pub const ALL: [BobSetting; 2] = [BobSetting::P, BobSetting::Q];
}

impl std::fmt::Display for BobSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BobSetting::P => write!(f, "P"),
            BobSetting::Q => write!(f, "Q"),
        }
    }
}

impl std::str::FromStr for BobSetting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P" | "p" => Ok(BobSetting::P),
            "Q" | "q" => Ok(BobSetting::Q),
            other => Err(Error::Parse(format!("unknown analyser setting {other:?}, expected P or Q"))),
        }
    }
}

/// The four observables of the Bell test together with the weak/strong role
/// assignment on each arm. The basis-swapped frame exchanges roles on both
/// arms at once (the ideal rotation of the apparatus), which keeps every
/// table entry identical by the trace-conjugation identity
/// Re Tr[AB tensor CD rho] = Re Tr[BA tensor DC rho].
#[derive(Debug, Clone)]
pub struct MeasurementFrame {
    pub alice_weak: Observable,
    pub alice_strong: Observable,
    pub bob_weak: Observable,
    pub bob_strong: Observable,
    weak_basis: WeakBasis,
}

impl MeasurementFrame {
    /// Default frame: weak Z and strong X on Alice, weak Q and strong P on Bob.
    pub fn standard() -> Self {
        Self::with_weak_basis(WeakBasis::Z)
    }

    pub fn with_weak_basis(basis: WeakBasis) -> Self {
        let (alice_weak, alice_strong, bob_weak, bob_strong) = match basis {
            WeakBasis::Z => (Observable::z(), Observable::x(), Observable::q(), Observable::p()),
            WeakBasis::X => (Observable::x(), Observable::z(), Observable::p(), Observable::q()),
        };
        Self { alice_weak, alice_strong, bob_weak, bob_strong, weak_basis: basis }
    }

    pub fn weak_basis(&self) -> WeakBasis {
        self.weak_basis
    }

    /// Checks that the weak and strong eigenbases on each arm are mutually
    /// unbiased: every cross-projector overlap must be 1/2 within 1e-12.
    pub fn validate(&self) -> Result<()> {
        for (weak, strong) in [
            (&self.alice_weak, &self.alice_strong),
            (&self.bob_weak, &self.bob_strong),
        ] {
            for wo in [1i8, -1] {
                for so in [1i8, -1] {
                    let overlap = weak.projector(wo).mul(strong.projector(so)).trace().re;
                    if (overlap - 0.5).abs() > 1e-12 {
                        return Err(Error::InvalidConfig(format!(
                            "weak/strong bases are not mutually unbiased (overlap {overlap:.15})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Alice-arm operator for outcome pair (x, z), strong projector leftmost.
    /// The table is indexed by observable, not by role, so the weak-X frame
    /// fills the same (x, z) slots through the swapped product.
    fn alice_operator(&self, x: i8, z: i8) -> ComplexMatrix {
        match self.weak_basis {
            WeakBasis::Z => self.alice_strong.projector(x).mul(self.alice_weak.projector(z)),
            WeakBasis::X => self.alice_strong.projector(z).mul(self.alice_weak.projector(x)),
        }
    }

    fn alice_strong_projector(&self, x: i8, z: i8) -> &ComplexMatrix {
        match self.weak_basis {
            WeakBasis::Z => self.alice_strong.projector(x),
            WeakBasis::X => self.alice_strong.projector(z),
        }
    }

    /// Bob-arm operator for outcome pair (p, q), strong projector leftmost.
    fn bob_operator(&self, p: i8, q: i8) -> ComplexMatrix {
        match self.weak_basis {
            WeakBasis::Z => self.bob_strong.projector(p).mul(self.bob_weak.projector(q)),
            WeakBasis::X => self.bob_strong.projector(q).mul(self.bob_weak.projector(p)),
        }
    }

    fn bob_strong_projector(&self, p: i8, q: i8) -> &ComplexMatrix {
        match self.weak_basis {
            WeakBasis::Z => self.bob_strong.projector(p),
            WeakBasis::X => self.bob_strong.projector(q),
        }
    }

    /// Product projector of the two strong analysers for the outcome tuple,
    /// keyed by observable slots regardless of role assignment.
    pub fn strong_pair_projector(&self, x: i8, z: i8, p: i8, q: i8) -> ComplexMatrix {
        self.alice_strong_projector(x, z).kron(self.bob_strong_projector(p, q))
    }

    /// Product projector of the two weakly probed observables.
    pub fn weak_pair_projector(&self, x: i8, z: i8, p: i8, q: i8) -> ComplexMatrix {
        match self.weak_basis {
            WeakBasis::Z => self.alice_weak.projector(z).kron(self.bob_weak.projector(q)),
            WeakBasis::X => self.alice_weak.projector(x).kron(self.bob_weak.projector(p)),
        }
    }
}

/// Weak value Re(Tr[F O rho] / Tr[F rho]) for observable `obs` with
/// postselection operator `post` on `rho`; matrices live on the same space.
pub fn weak_value(rho: &DensityMatrix, obs: &ComplexMatrix, post: &ComplexMatrix) -> Result<f64> {
    let prob = post.mul(rho.matrix()).trace().re;
    if prob.abs() <= POSTSELECTION_FLOOR {
        return Err(Error::ZeroPostselection { prob });
    }
    let joint = post.mul(obs).mul(rho.matrix()).trace().re;
    Ok(joint / prob)
}

/// Single-qubit weak-valued joint table Pr[x, z] with Re Tr[Pi_x Pi_z rho].
#[derive(Debug, Clone)]
pub struct SingleQubitTable {
    entries: [f64; 4],
}

impl SingleQubitTable {
    pub fn get(&self, x: i8, z: i8) -> f64 {
        self.entries[idx2(x, z)]
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().sum()
    }

    /// Marginal over the weak outcome, indexed by the strong outcome x.
    pub fn marginal_x(&self, x: i8) -> f64 {
        self.get(x, 1) + self.get(x, -1)
    }

    /// Marginal over the strong outcome, indexed by the weak outcome z.
    pub fn marginal_z(&self, z: i8) -> f64 {
        self.get(1, z) + self.get(-1, z)
    }
}

/// Weak-valued joint probabilities for one qubit: strong outcome x outside,
/// weak outcome z inside.
pub fn weak_joint_1q(
    rho: &DensityMatrix,
    strong: &Observable,
    weak: &Observable,
) -> Result<SingleQubitTable> {
    if rho.dim() != 2 {
        return Err(Error::Dimension { expected: 2, got: rho.dim() });
    }
    let mut entries = [0.0; 4];
    for x in OUTCOMES {
        for z in OUTCOMES {
            let op = strong.projector(x).mul(weak.projector(z));
            entries[idx2(x, z)] = op.mul(rho.matrix()).trace().re;
        }
    }
    Ok(SingleQubitTable { entries })
}

pub const OUTCOMES: [i8; 2] = [1, -1];

fn bit(o: i8) -> usize {
    if o > 0 {
        0
    } else {
        1
    }
}

fn idx2(x: i8, z: i8) -> usize {
    bit(x) * 2 + bit(z)
}

fn idx4(x: i8, z: i8, p: i8, q: i8) -> usize {
    ((bit(x) * 2 + bit(z)) * 2 + bit(p)) * 2 + bit(q)
}

fn idx3(x: i8, z: i8, b: i8) -> usize {
    (bit(x) * 2 + bit(z)) * 2 + bit(b)
}

/// 16-entry two-sided table Pr[x, z, p, q]. Entries whose postselection
/// probability vanishes are carried as explicit `None`, never as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakJointTable {
    entries: [Option<f64>; 16],
}

impl WeakJointTable {
    pub fn get(&self, x: i8, z: i8, p: i8, q: i8) -> Option<f64> {
        self.entries[idx4(x, z, p, q)]
    }

    pub fn set(&mut self, x: i8, z: i8, p: i8, q: i8, value: Option<f64>) {
        self.entries[idx4(x, z, p, q)] = value;
    }

    pub fn empty() -> Self {
        Self { entries: [None; 16] }
    }

    /// Iterates entries in the fixed output order (+1 before -1 per axis).
    pub fn iter(&self) -> impl Iterator<Item = (i8, i8, i8, i8, Option<f64>)> + '_ {
        OUTCOMES.into_iter().flat_map(move |x| {
            OUTCOMES.into_iter().flat_map(move |z| {
                OUTCOMES.into_iter().flat_map(move |p| {
                    OUTCOMES.into_iter().map(move |q| (x, z, p, q, self.get(x, z, p, q)))
                })
            })
        })
    }

    pub fn is_complete(&self) -> bool {
        self.entries.iter().all(Option::is_some)
    }

    /// Sum over defined entries; equals 1 for a complete table of a
    /// unit-trace state.
    pub fn sum_defined(&self) -> f64 {
        self.entries.iter().flatten().sum()
    }

    /// Marginal over the two weak outcomes, the Born probability of the
    /// postselection pair (x, p).
    pub fn marginal_xp(&self, x: i8, p: i8) -> Option<f64> {
        let mut acc = 0.0;
        for z in OUTCOMES {
            for q in OUTCOMES {
                acc += self.get(x, z, p, q)?;
            }
        }
        Some(acc)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("x,z,p,q,value\n");
        for (x, z, p, q, v) in self.iter() {
            match v {
                Some(val) => out.push_str(&format!("{x},{z},{p},{q},{val}\n")),
                None => out.push_str(&format!("{x},{z},{p},{q},undefined\n")),
            }
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut table = Self::empty();
        let mut seen = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || lineno == 0 {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Parse(format!("table line {} has {} fields", lineno + 1, fields.len())));
            }
            let parse_outcome = |s: &str| -> Result<i8> {
                match s.trim() {
                    "1" | "+1" => Ok(1),
                    "-1" => Ok(-1),
                    other => Err(Error::Parse(format!("bad outcome {other:?} on line {}", lineno + 1))),
                }
            };
            let x = parse_outcome(fields[0])?;
            let z = parse_outcome(fields[1])?;
            let p = parse_outcome(fields[2])?;
            let q = parse_outcome(fields[3])?;
            let v = match fields[4].trim() {
                "undefined" => None,
                num => Some(num.parse::<f64>().map_err(|e| Error::Parse(format!("bad value on line {}: {e}", lineno + 1)))?),
            };
            table.set(x, z, p, q, v);
            seen += 1;
        }
        if seen != 16 {
            return Err(Error::Parse(format!("expected 16 table rows, found {seen}")));
        }
        Ok(table)
    }

    pub fn to_dto(&self) -> Vec<TableEntryDto> {
        self.iter()
            .map(|(x, z, p, q, value)| TableEntryDto { x, z, p, q, value })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableEntryDto {
    pub x: i8,
    pub z: i8,
    pub p: i8,
    pub q: i8,
    pub value: Option<f64>,
}

/// Two-sided table: postselect on (x, p) strongly, read (z, q) weakly. Each
/// entry is Re Tr[(A_x A_z) tensor (B_p B_q) rho] with strong projectors on
/// the left, which equals weak value times postselection probability.
pub fn weak_joint_table(rho: &DensityMatrix, frame: &MeasurementFrame) -> Result<WeakJointTable> {
    if rho.dim() != 4 {
        return Err(Error::Dimension { expected: 4, got: rho.dim() });
    }
    frame.validate()?;
    let mut table = WeakJointTable::empty();
    for x in OUTCOMES {
        for z in OUTCOMES {
            for p in OUTCOMES {
                for q in OUTCOMES {
                    let post = frame
                        .alice_strong_projector(x, z)
                        .kron(frame.bob_strong_projector(p, q));
                    let prob = post.mul(rho.matrix()).trace().re;
                    if prob <= POSTSELECTION_FLOOR {
                        table.set(x, z, p, q, None);
                        continue;
                    }
                    let op = frame.alice_operator(x, z).kron(&frame.bob_operator(p, q));
                    table.set(x, z, p, q, Some(op.mul(rho.matrix()).trace().re));
                }
            }
        }
    }
    Ok(table)
}

/// 8-entry one-sided table for a fixed strong analyser setting on Bob:
/// Pr[x, z, outcome] = Re Tr[(A_x A_z) tensor Pi_outcome rho].
#[derive(Debug, Clone, PartialEq)]
pub struct OneSidedTable {
    setting: BobSetting,
    entries: [Option<f64>; 8],
}

impl OneSidedTable {
    pub fn empty(setting: BobSetting) -> Self {
        Self { setting, entries: [None; 8] }
    }

    pub fn setting(&self) -> BobSetting {
        self.setting
    }

    pub fn get(&self, x: i8, z: i8, outcome: i8) -> Option<f64> {
        self.entries[idx3(x, z, outcome)]
    }

    pub fn set(&mut self, x: i8, z: i8, outcome: i8, value: Option<f64>) {
        self.entries[idx3(x, z, outcome)] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (i8, i8, i8, Option<f64>)> + '_ {
        OUTCOMES.into_iter().flat_map(move |x| {
            OUTCOMES.into_iter().flat_map(move |z| {
                OUTCOMES.into_iter().map(move |b| (x, z, b, self.get(x, z, b)))
            })
        })
    }

    pub fn sum_defined(&self) -> f64 {
        self.entries.iter().flatten().sum()
    }
}

pub fn weak_joint_one_sided(
    rho: &DensityMatrix,
    frame: &MeasurementFrame,
    setting: BobSetting,
) -> Result<OneSidedTable> {
    if rho.dim() != 4 {
        return Err(Error::Dimension { expected: 4, got: rho.dim() });
    }
    frame.validate()?;
    let bob = setting.observable();
    let mut table = OneSidedTable::empty(setting);
    for x in OUTCOMES {
        for z in OUTCOMES {
            for b in OUTCOMES {
                let post = frame.alice_strong_projector(x, z).kron(bob.projector(b));
                let prob = post.mul(rho.matrix()).trace().re;
                if prob <= POSTSELECTION_FLOOR {
                    table.set(x, z, b, None);
                    continue;
                }
                let op = frame.alice_operator(x, z).kron(bob.projector(b));
                table.set(x, z, b, Some(op.mul(rho.matrix()).trace().re));
            }
        }
    }
    Ok(table)
}

/// The Bell combination S = (x + z) p + (x - z) q evaluated on an outcome
/// tuple; always +2 or -2.
pub fn chsh_sign(x: i8, z: i8, p: i8, q: i8) -> i8 {
    (x + z) * p + (x - z) * q
}

/// Accumulated probabilities of the two Bell-combination values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshOutcome {
    /// Total quasiprobability of S = +2; can exceed 1.
    pub p_plus: f64,
    /// Total quasiprobability of S = -2; can be negative.
    pub p_minus: f64,
    /// The Bell expectation 2 (p_plus - p_minus).
    pub chsh: f64,
}

impl ChshOutcome {
    pub fn from_probs(p_plus: f64, p_minus: f64) -> Self {
        Self { p_plus, p_minus, chsh: 2.0 * (p_plus - p_minus) }
    }

    /// For analytic tables the two probabilities partition unity.
    pub fn validate_normalized(&self, tol: f64) -> Result<()> {
        let sum = self.p_plus + self.p_minus;
        if (sum - 1.0).abs() > tol {
            return Err(Error::Numeric(format!("p_plus + p_minus = {sum:.15}, expected 1")));
        }
        Ok(())
    }
}

/// Folds a complete two-sided table into the Bell accounting.
pub fn chsh_outcome_probs(table: &WeakJointTable) -> Result<ChshOutcome> {
    let mut p_plus = 0.0;
    let mut p_minus = 0.0;
    for (x, z, p, q, v) in table.iter() {
        let v = v.ok_or_else(|| {
            Error::UndefinedEntry(format!("(x={x}, z={z}, p={p}, q={q})"))
        })?;
        if chsh_sign(x, z, p, q) > 0 {
            p_plus += v;
        } else {
            p_minus += v;
        }
    }
    Ok(ChshOutcome::from_probs(p_plus, p_minus))
}

/// Bell accounting from the two one-sided tables: cells with x = z carry the
/// P analyser information, cells with x = -z the Q analyser information; the
/// remaining cells of each table are marginal and do not enter.
pub fn chsh_from_one_sided(p_table: &OneSidedTable, q_table: &OneSidedTable) -> Result<ChshOutcome> {
    if p_table.setting() != BobSetting::P || q_table.setting() != BobSetting::Q {
        return Err(Error::InvalidConfig(
            "chsh accounting needs one P-setting and one Q-setting table".into(),
        ));
    }
    let mut p_plus = 0.0;
    let mut p_minus = 0.0;
    for (x, z, b, v) in p_table.iter() {
        if x != z {
            continue;
        }
        let v = v.ok_or_else(|| Error::UndefinedEntry(format!("P-block (x={x}, z={z}, p={b})")))?;
        if x * b > 0 {
            p_plus += v;
        } else {
            p_minus += v;
        }
    }
    for (x, z, b, v) in q_table.iter() {
        if x != -z {
            continue;
        }
        let v = v.ok_or_else(|| Error::UndefinedEntry(format!("Q-block (x={x}, z={z}, q={b})")))?;
        if x * b > 0 {
            p_plus += v;
        } else {
            p_minus += v;
        }
    }
    Ok(ChshOutcome::from_probs(p_plus, p_minus))
}

/// Closed-form curve for the pure source family as a function of tangle T:
/// p_pm = 1/2 +- sqrt(2) (1 + sqrt(T)) / 4, so the Bell value is
/// sqrt(2) (1 + sqrt(T)).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TheoryPoint {
    pub tangle: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    pub chsh: f64,
}

pub fn theory_point(tangle: f64) -> Result<TheoryPoint> {
    if !(0.0..=1.0).contains(&tangle) {
        return Err(Error::InvalidConfig(format!("tangle {tangle} outside [0, 1]")));
    }
    let shift = std::f64::consts::SQRT_2 * (1.0 + tangle.sqrt()) / 4.0;
    let p_plus = 0.5 + shift;
    let p_minus = 0.5 - shift;
    Ok(TheoryPoint { tangle, p_plus, p_minus, chsh: 2.0 * (p_plus - p_minus) })
}

pub fn theory_curve(tangles: &[f64]) -> Result<Vec<TheoryPoint>> {
    tangles.iter().map(|&t| theory_point(t)).collect()
}

/// Tangle below which the one-sided quasiprobabilities stay classical:
/// p_minus crosses zero at 3 - 2 sqrt(2).
pub fn realism_boundary_tangle() -> f64 {
    3.0 - 2.0 * std::f64::consts::SQRT_2
}
