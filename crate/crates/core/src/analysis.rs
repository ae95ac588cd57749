//! Estimation pipeline from raw coincidence records to weak-valued joint
//! probabilities and the Bell accounting: accidental subtraction, Gaussian
//! centroid fits, the deflection-weighted estimator with error bars,
//! tomographic reconstruction, and the tangle sweep dataset.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{solve_real, ComplexMatrix};
use crate::random::stream_rng;
use crate::sim::{
    simulate_run, tomography_projector, Condition, CountRecord, ExperimentConfig,
    TomographyRecord,
};
use crate::states::{pauli_x, pauli_y, pauli_z, DensityMatrix};
use crate::transient::predict_joint_from_transient;
use crate::weak::{
    chsh_from_one_sided, chsh_outcome_probs, weak_joint_one_sided, BobSetting, ChshOutcome,
    MeasurementFrame, OneSidedTable,
};

/// One counting cell after accidental subtraction; the net count is kept as
/// a real number because subtraction may go negative and flooring would bias
/// the downstream estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedRecord {
    pub condition: String,
    pub slit_position_um: f64,
    pub repeat: u32,
    pub net: f64,
}

pub fn subtract_accidentals(records: &[CountRecord]) -> Vec<CorrectedRecord> {
    records
        .iter()
        .map(|r| CorrectedRecord {
            condition: r.condition.clone(),
            slit_position_um: r.slit_position_um,
            repeat: r.repeat,
            net: r.coincidences as f64 - r.accidentals as f64,
        })
        .collect()
}

/// Result of a Gaussian fit to one characterization scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidFit {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
    pub residual: f64,
    pub uncertainty: f64,
}

/// Unweighted least-squares fit of amplitude * exp(-(r - center)^2 /
/// (2 width^2)) by Levenberg-Marquardt; matches the stated characterization
/// procedure. Converges when the parameter step drops below 1e-6.
pub fn fit_gaussian(positions: &[f64], rates: &[f64]) -> Result<CentroidFit> {
    fit_gaussian_core(positions, rates, false)
}

/// Inverse-variance weighted variant for count data, weights 1/max(rate,
/// floor). Secondary to the unweighted fit.
pub fn fit_gaussian_weighted(positions: &[f64], rates: &[f64]) -> Result<CentroidFit> {
    fit_gaussian_core(positions, rates, true)
}

fn fit_gaussian_core(positions: &[f64], rates: &[f64], weighted: bool) -> Result<CentroidFit> {
    if positions.len() != rates.len() {
        return Err(Error::DegenerateFit(format!(
            "{} positions but {} rates",
            positions.len(),
            rates.len()
        )));
    }
    let n = positions.len();
    let supported = positions
        .iter()
        .zip(rates)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&r, _)| r.to_bits())
        .collect::<std::collections::BTreeSet<_>>();
    if supported.len() < 5 {
        return Err(Error::DegenerateFit(format!(
            "need at least 5 distinct positions with positive rates, got {}",
            supported.len()
        )));
    }
    let total: f64 = rates.iter().map(|&y| y.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateFit("all rates are zero or negative".into()));
    }
    let mean: f64 =
        positions.iter().zip(rates).map(|(&r, &y)| r * y.max(0.0)).sum::<f64>() / total;
    let var: f64 = positions
        .iter()
        .zip(rates)
        .map(|(&r, &y)| (r - mean) * (r - mean) * y.max(0.0))
        .sum::<f64>()
        / total;
    let span = positions.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - positions.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut p = [
        rates.iter().cloned().fold(0.0_f64, f64::max),
        mean,
        var.sqrt().max(span / 100.0),
    ];

    let weights: Vec<f64> = if weighted {
        let floor = rates.iter().cloned().fold(0.0_f64, f64::max).max(1e-300) * 1e-3;
        rates.iter().map(|&y| 1.0 / y.max(floor)).collect()
    } else {
        vec![1.0; n]
    };
    let model = |p: &[f64; 3], r: f64| {
        let u = (r - p[1]) / p[2];
        p[0] * (-0.5 * u * u).exp()
    };
    let ssr_of = |p: &[f64; 3]| {
        positions
            .iter()
            .zip(rates)
            .zip(&weights)
            .map(|((&r, &y), &w)| w * (y - model(p, r)).powi(2))
            .sum::<f64>()
    };

    let mut ssr = ssr_of(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let max_iterations = 500;
    for _ in 0..max_iterations {
        let mut jtj = [0.0_f64; 9];
        let mut jte = [0.0_f64; 3];
        for ((&r, &y), &w) in positions.iter().zip(rates).zip(&weights) {
            let m = model(&p, r);
            let d = r - p[1];
            let j = [m / p[0].max(1e-300), m * d / (p[2] * p[2]), m * d * d / p[2].powi(3)];
            let e = y - m;
            for a in 0..3 {
                jte[a] += w * j[a] * e;
                for b in 0..3 {
                    jtj[a * 3 + b] += w * j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..24 {
            let mut damped = jtj;
            for a in 0..3 {
                damped[a * 3 + a] += lambda * jtj[a * 3 + a].max(1e-12);
            }
            let step = match solve_real(3, &damped, &jte) {
                Ok(s) => s,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            if trial[2].abs() < 1e-9 || !trial.iter().all(|v| v.is_finite()) {
                lambda *= 10.0;
                continue;
            }
            let trial_ssr = ssr_of(&trial);
            if trial_ssr <= ssr {
                let norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
                p = trial;
                ssr = trial_ssr;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if norm < 1e-6 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !improved {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitNoConvergence { iterations: max_iterations });
    }

    if n <= 3 {
        return Err(Error::DegenerateFit("need more samples than parameters".into()));
    }
    // Center variance. The unweighted fit uses the sandwich form with
    // per-point variance taken proportional to the model value (count data),
    // scale fitted from the residuals; a plain (JtJ)^-1 s^2 undercovers there
    // because the noise is strongly heteroscedastic across the peak. The
    // weighted fit folds the variances into the weights, so the classical
    // weighted covariance applies.
    let mut jtj_f = [0.0_f64; 9];
    let mut point = Vec::with_capacity(n);
    for ((&r, &y), &w) in positions.iter().zip(rates).zip(&weights) {
        let m = model(&p, r);
        let d = r - p[1];
        let j = [m / p[0].max(1e-300), m * d / (p[2] * p[2]), m * d * d / p[2].powi(3)];
        for a in 0..3 {
            for b in 0..3 {
                jtj_f[a * 3 + b] += w * j[a] * j[b];
            }
        }
        point.push((m, j, y - m));
    }
    let u = solve_real(3, &jtj_f, &[0.0, 1.0, 0.0])?;
    let center_var = if weighted {
        u[1] * ssr / (n - 3) as f64
    } else {
        let m_max = point.iter().map(|&(m, _, _)| m).fold(0.0_f64, f64::max);
        let mut phi_sum = 0.0;
        let mut phi_cnt = 0usize;
        for &(m, _, e) in &point {
            if m > 1e-3 * m_max {
                phi_sum += e * e / m;
                phi_cnt += 1;
            }
        }
        if phi_cnt > 3 {
            let phi = phi_sum / (phi_cnt - 3) as f64;
            point
                .iter()
                .map(|&(m, j, _)| {
                    let ju = j[0] * u[0] + j[1] * u[1] + j[2] * u[2];
                    phi * m * ju * ju
                })
                .sum::<f64>()
        } else {
            u[1] * ssr / (n - 3) as f64
        }
    };
    let unweighted_ssr: f64 = point.iter().map(|&(_, _, e)| e * e).sum();
    Ok(CentroidFit {
        center: p[1],
        width: p[2].abs(),
        amplitude: p[0],
        residual: (unweighted_ssr / n as f64).sqrt(),
        uncertainty: center_var.max(0.0).sqrt().max(1e-12),
    })
}

fn mean_rate_profile(
    records: &[CountRecord],
    label: &str,
    dwell: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut by_pos: BTreeMap<u64, (f64, f64, u32)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.condition == label) {
        let pos = canonical(r.slit_position_um)?;
        let slot = by_pos.entry(pos.to_bits()).or_insert((pos, 0.0, 0));
        slot.1 += r.coincidences as f64 - r.accidentals as f64;
        slot.2 += 1;
    }
    if by_pos.is_empty() {
        return Err(Error::MissingCondition(label.into()));
    }
    let mut pairs: Vec<(f64, f64)> = by_pos
        .values()
        .map(|&(pos, net, hits)| (pos, net / hits as f64 / dwell))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("positions are finite"));
    Ok(pairs.into_iter().unzip())
}

/// Fits the two characterization scans; returns the H fit and the V fit.
pub fn fit_centroids(records: &[CountRecord], dwell: f64) -> Result<(CentroidFit, CentroidFit)> {
    fit_centroids_with(records, dwell, false)
}

pub fn fit_centroids_with(
    records: &[CountRecord],
    dwell: f64,
    weighted: bool,
) -> Result<(CentroidFit, CentroidFit)> {
    if !(dwell > 0.0) {
        return Err(Error::InvalidConfig(format!("dwell = {dwell} must be positive")));
    }
    let fit = if weighted { fit_gaussian_weighted } else { fit_gaussian };
    let (rh_pos, rh_rates) = mean_rate_profile(records, "cal_H", dwell)?;
    let (rv_pos, rv_rates) = mean_rate_profile(records, "cal_V", dwell)?;
    Ok((fit(&rh_pos, &rh_rates)?, fit(&rv_pos, &rv_rates)?))
}

fn canonical(pos: f64) -> Result<f64> {
    if !pos.is_finite() {
        return Err(Error::Parse(format!("non-finite slit position {pos}")));
    }
    Ok(if pos == 0.0 { 0.0 } else { pos })
}

fn cell_of(x: i8, bob: i8) -> usize {
    (if x > 0 { 0 } else { 1 }) * 2 + (if bob > 0 { 0 } else { 1 })
}

const CELLS: [(i8, i8); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Net counts of one analyser-setting block indexed by cell, repeat, and
/// position.
struct Block {
    positions: Vec<f64>,
    /// cell -> position -> net, aggregated over repeats
    totals: [Vec<f64>; 4],
    /// repeat -> cell -> position -> net
    per_repeat: BTreeMap<u32, [Vec<f64>; 4]>,
}

fn collect_blocks(records: &[CountRecord]) -> Result<BTreeMap<BobSetting, Block>> {
    let mut positions: Vec<f64> = Vec::new();
    for r in records {
        let pos = canonical(r.slit_position_um)?;
        if !positions.iter().any(|&q| q == pos) {
            positions.push(pos);
        }
    }
    positions.sort_by(|a, b| a.partial_cmp(b).expect("positions are finite"));
    let find = |pos: f64| positions.iter().position(|&q| q == pos).expect("collected above");

    let empty = |n: usize| [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut blocks: BTreeMap<BobSetting, Block> = BTreeMap::new();
    let mut seen: std::collections::BTreeSet<String> = Default::default();
    for r in records {
        let cond = match Condition::from_label(&r.condition) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let (setting, x, bob) = match cond {
            Condition::Chsh { setting, x, bob } => (setting, x, bob),
            _ => continue,
        };
        seen.insert(r.condition.clone());
        let n = positions.len();
        let block = blocks.entry(setting).or_insert_with(|| Block {
            positions: positions.clone(),
            totals: empty(n),
            per_repeat: BTreeMap::new(),
        });
        let pi = find(canonical(r.slit_position_um)?);
        let net = r.coincidences as f64 - r.accidentals as f64;
        let cell = cell_of(x, bob);
        block.totals[cell][pi] += net;
        block.per_repeat.entry(r.repeat).or_insert_with(|| empty(n))[cell][pi] += net;
    }
    for setting in BobSetting::ALL {
        for (x, bob) in CELLS {
            let label = Condition::Chsh { setting, x, bob }.label();
            if !seen.contains(&label) {
                return Err(Error::MissingCondition(label));
            }
        }
    }
    Ok(blocks)
}

/// The appendix estimator on one block of net counts: the deflection weights
/// (r_V - r) and (r - r_H) applied per position, normalized by the block
/// total.
fn block_table(
    setting: BobSetting,
    positions: &[f64],
    nets: &[Vec<f64>; 4],
    r_h: f64,
    r_v: f64,
) -> Result<OneSidedTable> {
    let delta = r_v - r_h;
    let c_t: f64 = nets.iter().map(|cell| cell.iter().sum::<f64>()).sum();
    if !(c_t.abs() > 0.0) {
        return Err(Error::InvalidState(format!(
            "total corrected counts for the {setting} block vanish"
        )));
    }
    let mut table = OneSidedTable::empty(setting);
    for (x, bob) in CELLS {
        let cell = &nets[cell_of(x, bob)];
        let mut toward_h = 0.0;
        let mut toward_v = 0.0;
        for (&r, &net) in positions.iter().zip(cell) {
            toward_h += (r_v - r) * net;
            toward_v += (r - r_h) * net;
        }
        table.set(x, 1, bob, Some(toward_h / (delta * c_t)));
        table.set(x, -1, bob, Some(toward_v / (delta * c_t)));
    }
    Ok(table)
}

/// Central values of the weak-valued tables and the Bell accounting for one
/// record set at given beam centroids.
#[derive(Debug, Clone)]
pub struct CentralEstimate {
    pub p_table: OneSidedTable,
    pub q_table: OneSidedTable,
    pub outcome: ChshOutcome,
}

fn central_from_blocks(
    blocks: &BTreeMap<BobSetting, Block>,
    r_h: f64,
    r_v: f64,
) -> Result<CentralEstimate> {
    let p_block = blocks.get(&BobSetting::P).ok_or(Error::MissingCondition("P block".into()))?;
    let q_block = blocks.get(&BobSetting::Q).ok_or(Error::MissingCondition("Q block".into()))?;
    let p_table = block_table(BobSetting::P, &p_block.positions, &p_block.totals, r_h, r_v)?;
    let q_table = block_table(BobSetting::Q, &q_block.positions, &q_block.totals, r_h, r_v)?;
    let outcome = chsh_from_one_sided(&p_table, &q_table)?;
    Ok(CentralEstimate { p_table, q_table, outcome })
}

/// Point estimates without error bars; works for any number of repeats.
pub fn estimate_central(records: &[CountRecord], r_h: f64, r_v: f64) -> Result<CentralEstimate> {
    if !(r_v > r_h) {
        return Err(Error::InvalidState(format!(
            "beam centroids are inverted: r_H = {r_h}, r_V = {r_v}"
        )));
    }
    central_from_blocks(&collect_blocks(records)?, r_h, r_v)
}

/// Tables, Bell accounting, and standard errors from the repeat spread.
#[derive(Debug, Clone)]
pub struct EstimatedTable {
    pub p_table: OneSidedTable,
    pub q_table: OneSidedTable,
    pub p_errors: OneSidedTable,
    pub q_errors: OneSidedTable,
    pub outcome: ChshOutcome,
    pub p_plus_err: f64,
    pub p_minus_err: f64,
    pub chsh_err: f64,
    pub repeats_used: usize,
}

fn spread_se(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

fn estimate_with_blocks(
    blocks: &BTreeMap<BobSetting, Block>,
    r_h: f64,
    r_v: f64,
) -> Result<EstimatedTable> {
    let central = central_from_blocks(blocks, r_h, r_v)?;
    let p_block = &blocks[&BobSetting::P];
    let q_block = &blocks[&BobSetting::Q];
    let repeats: Vec<u32> = p_block
        .per_repeat
        .keys()
        .filter(|k| q_block.per_repeat.contains_key(k))
        .cloned()
        .collect();
    if repeats.len() < 2 {
        return Err(Error::InsufficientRepeats { need: 2, got: repeats.len() });
    }
    let mut per_entry: BTreeMap<(BobSetting, i8, i8, i8), Vec<f64>> = BTreeMap::new();
    let mut p_plus_series = Vec::with_capacity(repeats.len());
    let mut p_minus_series = Vec::with_capacity(repeats.len());
    let mut chsh_series = Vec::with_capacity(repeats.len());
    for &rep in &repeats {
        let pt = block_table(BobSetting::P, &p_block.positions, &p_block.per_repeat[&rep], r_h, r_v)?;
        let qt = block_table(BobSetting::Q, &q_block.positions, &q_block.per_repeat[&rep], r_h, r_v)?;
        for (setting, t) in [(BobSetting::P, &pt), (BobSetting::Q, &qt)] {
            for (x, z, b, v) in t.iter() {
                per_entry.entry((setting, x, z, b)).or_default().push(v.expect("filled above"));
            }
        }
        let o = chsh_from_one_sided(&pt, &qt)?;
        p_plus_series.push(o.p_plus);
        p_minus_series.push(o.p_minus);
        chsh_series.push(o.chsh);
    }
    let mut p_errors = OneSidedTable::empty(BobSetting::P);
    let mut q_errors = OneSidedTable::empty(BobSetting::Q);
    for ((setting, x, z, b), series) in &per_entry {
        let se = spread_se(series);
        match setting {
            BobSetting::P => p_errors.set(*x, *z, *b, Some(se)),
            BobSetting::Q => q_errors.set(*x, *z, *b, Some(se)),
        }
    }
    Ok(EstimatedTable {
        p_table: central.p_table,
        q_table: central.q_table,
        p_errors,
        q_errors,
        outcome: central.outcome,
        p_plus_err: spread_se(&p_plus_series),
        p_minus_err: spread_se(&p_minus_series),
        chsh_err: spread_se(&chsh_series),
        repeats_used: repeats.len(),
    })
}

/// Estimator with repeat-spread standard errors. Needs at least two repeats.
pub fn estimate_joint(records: &[CountRecord], r_h: f64, r_v: f64) -> Result<EstimatedTable> {
    if !(r_v > r_h) {
        return Err(Error::InvalidState(format!(
            "beam centroids are inverted: r_H = {r_h}, r_V = {r_v}"
        )));
    }
    estimate_with_blocks(&collect_blocks(records)?, r_h, r_v)
}

/// Estimator anchored at fitted centroids. The quoted errors combine the
/// repeat spread with the centroid uncertainties propagated through the
/// estimator (the two contributions are independent).
pub fn estimate_joint_with_centroids(
    records: &[CountRecord],
    fit_h: &CentroidFit,
    fit_v: &CentroidFit,
) -> Result<EstimatedTable> {
    let (r_h, r_v) = (fit_h.center, fit_v.center);
    if !(r_v > r_h) {
        return Err(Error::InvalidState(format!(
            "fitted centroids are inverted: r_H = {r_h}, r_V = {r_v}"
        )));
    }
    let blocks = collect_blocks(records)?;
    let mut est = estimate_with_blocks(&blocks, r_h, r_v)?;
    let shift_h = central_from_blocks(&blocks, r_h + fit_h.uncertainty, r_v)?;
    let shift_v = central_from_blocks(&blocks, r_h, r_v + fit_v.uncertainty)?;
    let combine = |base: f64, a: f64, b: f64, spread: f64| {
        let centroid = ((a - base).powi(2) + (b - base).powi(2)).sqrt();
        (spread * spread + centroid * centroid).sqrt()
    };
    est.p_plus_err = combine(
        est.outcome.p_plus,
        shift_h.outcome.p_plus,
        shift_v.outcome.p_plus,
        est.p_plus_err,
    );
    est.p_minus_err = combine(
        est.outcome.p_minus,
        shift_h.outcome.p_minus,
        shift_v.outcome.p_minus,
        est.p_minus_err,
    );
    est.chsh_err =
        combine(est.outcome.chsh, shift_h.outcome.chsh, shift_v.outcome.chsh, est.chsh_err);
    for (tables, setting) in [
        ((&mut est.p_errors, &est.p_table, &shift_h.p_table, &shift_v.p_table), BobSetting::P),
        ((&mut est.q_errors, &est.q_table, &shift_h.q_table, &shift_v.q_table), BobSetting::Q),
    ] {
        let (errors, base, sh, sv) = tables;
        let _ = setting;
        for (x, z, b, spread) in errors.clone().iter() {
            let v = base.get(x, z, b).expect("central entries are defined");
            let combined = combine(
                v,
                sh.get(x, z, b).expect("shifted entries are defined"),
                sv.get(x, z, b).expect("shifted entries are defined"),
                spread.expect("spread errors are defined"),
            );
            errors.set(x, z, b, Some(combined));
        }
    }
    Ok(est)
}

const REPLICA_LANE: u64 = 4;
const SWEEP_LANE: u64 = 3;

/// Cross-check error bars from count statistics alone: parametric bootstrap
/// resampling every record as Poisson around its observed counts. Returns
/// (p_plus, p_minus, chsh) standard errors.
pub fn count_statistics_errors(
    records: &[CountRecord],
    r_h: f64,
    r_v: f64,
    replicas: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    if replicas < 2 {
        return Err(Error::InvalidConfig("need at least 2 bootstrap replicas".into()));
    }
    use rand_distr::{Distribution, Poisson};
    let mut p_plus = Vec::with_capacity(replicas);
    let mut p_minus = Vec::with_capacity(replicas);
    let mut chsh = Vec::with_capacity(replicas);
    for rep in 0..replicas {
        let mut rng = stream_rng(seed, &[REPLICA_LANE, 1, rep as u64 + 1]);
        let resampled: Vec<CountRecord> = records
            .iter()
            .map(|r| {
                let draw = |count: u64, rng: &mut rand_chacha::ChaCha12Rng| -> u64 {
                    if count == 0 {
                        0
                    } else {
                        let s: f64 =
                            Poisson::new(count as f64).expect("positive rate").sample(rng);
                        s.round() as u64
                    }
                };
                CountRecord {
                    condition: r.condition.clone(),
                    slit_position_um: r.slit_position_um,
                    repeat: r.repeat,
                    coincidences: draw(r.coincidences, &mut rng),
                    accidentals: draw(r.accidentals, &mut rng),
                }
            })
            .collect();
        let est = estimate_central(&resampled, r_h, r_v)?;
        p_plus.push(est.outcome.p_plus);
        p_minus.push(est.outcome.p_minus);
        chsh.push(est.outcome.chsh);
    }
    let sd = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok((sd(&p_plus), sd(&p_minus), sd(&chsh)))
}

/// Linear-inversion tomography output. Positivity is diagnosed, never
/// enforced.
#[derive(Debug, Clone)]
pub struct TomographyReconstruction {
    pub rho: DensityMatrix,
    pub flux: f64,
    pub min_eigenvalue: f64,
    pub physical: bool,
}

/// Reconstructs the two-qubit state from product-projector counts by solving
/// for the Pauli components; the identity component doubles as the flux
/// normalization, so no absolute count calibration is needed. Accepts the
/// 16-setting complete set exactly and any larger set by least squares.
pub fn reconstruct_tomography(records: &[TomographyRecord]) -> Result<TomographyReconstruction> {
    let n = records.len();
    if n < 16 {
        return Err(Error::InvalidConfig(format!("need at least 16 settings, got {n}")));
    }
    let mut labels: std::collections::BTreeSet<&str> = Default::default();
    for r in records {
        if !labels.insert(r.setting.as_str()) {
            return Err(Error::InvalidConfig(format!("duplicate setting {:?}", r.setting)));
        }
    }
    let total: u64 = records.iter().map(|r| r.counts).sum();
    if total == 0 {
        return Err(Error::InvalidState("all tomography counts are zero".into()));
    }
    let paulis =
        [ComplexMatrix::identity(2), pauli_x(), pauli_y(), pauli_z()];
    let mut basis = Vec::with_capacity(16);
    for a in &paulis {
        for b in &paulis {
            basis.push(a.kron(b));
        }
    }
    let mut design = vec![0.0_f64; n * 16];
    let mut counts = vec![0.0_f64; n];
    for (s, r) in records.iter().enumerate() {
        let proj = tomography_projector(&r.setting)?;
        for (k, sigma) in basis.iter().enumerate() {
            design[s * 16 + k] = proj.mul(sigma).trace().re / 4.0;
        }
        counts[s] = r.counts as f64;
    }
    let w = if n == 16 {
        solve_real(16, &design, &counts)?
    } else {
        let mut ata = vec![0.0_f64; 16 * 16];
        let mut atb = vec![0.0_f64; 16];
        for s in 0..n {
            for a in 0..16 {
                atb[a] += design[s * 16 + a] * counts[s];
                for b in 0..16 {
                    ata[a * 16 + b] += design[s * 16 + a] * design[s * 16 + b];
                }
            }
        }
        solve_real(16, &ata, &atb)?
    };
    let flux = w[0];
    if !(flux > 0.0) {
        return Err(Error::InvalidState(format!("inferred flux {flux} is not positive")));
    }
    let mut m = ComplexMatrix::zeros(4);
    for (k, sigma) in basis.iter().enumerate() {
        m = m.add(&sigma.scale_re(w[k] / flux / 4.0));
    }
    let rho = DensityMatrix::new(m, 1e-9)?;
    let eigs = rho.eigenvalues()?;
    let min_eigenvalue = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(TomographyReconstruction { rho, flux, min_eigenvalue, physical: min_eigenvalue >= -1e-9 })
}

/// Parametric-bootstrap standard error of any scalar functional of the
/// reconstructed state.
pub fn tomography_replica_se<F>(
    records: &[TomographyRecord],
    replicas: usize,
    seed: u64,
    f: F,
) -> Result<f64>
where
    F: Fn(&TomographyReconstruction) -> Result<f64>,
{
    if replicas < 2 {
        return Err(Error::InvalidConfig("need at least 2 replicas".into()));
    }
    use rand_distr::{Distribution, Poisson};
    let mut values = Vec::with_capacity(replicas);
    for rep in 0..replicas {
        let mut rng = stream_rng(seed, &[REPLICA_LANE, 2, rep as u64 + 1]);
        let resampled: Vec<TomographyRecord> = records
            .iter()
            .map(|r| TomographyRecord {
                setting: r.setting.clone(),
                counts: if r.counts == 0 {
                    0
                } else {
                    let s: f64 =
                        Poisson::new(r.counts as f64).expect("positive rate").sample(&mut rng);
                    s.round() as u64
                },
            })
            .collect();
        values.push(f(&reconstruct_tomography(&resampled)?)?);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok((values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Bell accounting predicted from a state through the conditioned-matrix
/// route; agrees with the direct weak-valued table identically.
pub fn predicted_outcome_from_state(
    rho: &DensityMatrix,
    frame: &MeasurementFrame,
) -> Result<ChshOutcome> {
    chsh_outcome_probs(&predict_joint_from_transient(rho, frame)?)
}

/// One entry of the results report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryReport {
    pub x: i8,
    pub z: i8,
    pub bob: i8,
    pub value: f64,
    pub std_error: f64,
}

/// Full analysis output of one run, serializable as the results JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub centroid_h: CentroidFit,
    pub centroid_v: CentroidFit,
    pub p_plus: f64,
    pub p_plus_err: f64,
    pub p_minus: f64,
    pub p_minus_err: f64,
    pub chsh: f64,
    pub chsh_err: f64,
    pub repeats_used: usize,
    pub p_entries: Vec<EntryReport>,
    pub q_entries: Vec<EntryReport>,
}

fn entry_reports(values: &OneSidedTable, errors: &OneSidedTable) -> Vec<EntryReport> {
    values
        .iter()
        .map(|(x, z, b, v)| EntryReport {
            x,
            z,
            bob: b,
            value: v.expect("estimated entries are defined"),
            std_error: errors.get(x, z, b).expect("errors are defined"),
        })
        .collect()
}

/// End-to-end analysis: centroid fits from the characterization scans, then
/// the weak-valued estimator with combined error bars.
pub fn analyze_run(records: &[CountRecord], dwell: f64) -> Result<RunReport> {
    analyze_run_with(records, dwell, false)
}

/// As `analyze_run`, optionally with the inverse-variance weighted centroid
/// fit.
pub fn analyze_run_with(
    records: &[CountRecord],
    dwell: f64,
    weighted_fit: bool,
) -> Result<RunReport> {
    let (fit_h, fit_v) = fit_centroids_with(records, dwell, weighted_fit)?;
    let est = estimate_joint_with_centroids(records, &fit_h, &fit_v)?;
    Ok(RunReport {
        centroid_h: fit_h,
        centroid_v: fit_v,
        p_plus: est.outcome.p_plus,
        p_plus_err: est.p_plus_err,
        p_minus: est.outcome.p_minus,
        p_minus_err: est.p_minus_err,
        chsh: est.outcome.chsh,
        chsh_err: est.chsh_err,
        repeats_used: est.repeats_used,
        p_entries: entry_reports(&est.p_table, &est.p_errors),
        q_entries: entry_reports(&est.q_table, &est.q_errors),
    })
}

/// Closed-form tangle of the delivered family: the pure part has concurrence
/// sin(2 theta), and the isotropic admixture shifts it to
/// max(0, v sin(2 theta) - (1 - v)/2).
pub fn family_tangle(theta_deg: f64, werner_v: f64) -> f64 {
    let c = werner_v * (2.0 * theta_deg.to_radians()).sin() - (1.0 - werner_v) / 2.0;
    c.max(0.0).powi(2)
}

/// One row of the tangle-sweep dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tangle: f64,
    pub p_plus: f64,
    pub p_plus_err: f64,
    pub p_minus: f64,
    pub p_minus_err: f64,
    pub chsh: f64,
    pub chsh_err: f64,
    pub analytic_p_plus: f64,
    pub analytic_p_minus: f64,
    pub analytic_chsh: f64,
}

/// Simulates and analyzes one full run per pump angle; analytic columns come
/// from the exact weak-valued tables of the delivered state.
pub fn sweep_tangle(
    thetas_deg: &[f64],
    cfg: &ExperimentConfig,
    frame: &MeasurementFrame,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(thetas_deg.len());
    for (i, &theta) in thetas_deg.iter().enumerate() {
        let source = crate::sim::SourceConfig { theta, ..cfg.source };
        let rho = source.delivered_state()?;
        let p = weak_joint_one_sided(&rho, frame, BobSetting::P)?;
        let q = weak_joint_one_sided(&rho, frame, BobSetting::Q)?;
        let analytic = chsh_from_one_sided(&p, &q)?;
        let run_seed = stream_rng(seed, &[SWEEP_LANE, i as u64 + 1]).next_u64();
        let records = simulate_run(&source, &cfg.scan, &cfg.pointer, frame, run_seed)?;
        let report = analyze_run(&records, cfg.scan.dwell)?;
        rows.push(SweepRow {
            tangle: family_tangle(theta, source.werner_v),
            p_plus: report.p_plus,
            p_plus_err: report.p_plus_err,
            p_minus: report.p_minus,
            p_minus_err: report.p_minus_err,
            chsh: report.chsh,
            chsh_err: report.chsh_err,
            analytic_p_plus: analytic.p_plus,
            analytic_p_minus: analytic.p_minus,
            analytic_chsh: analytic.chsh,
        });
    }
    Ok(rows)
}

pub fn sweep_to_csv_string(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(format!("sweep CSV is not UTF-8: {e}")))
}

pub fn sweep_from_csv_str(text: &str) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointer::{joint_density, PointerConfig};
    use crate::random::rng_from_seed;
    use crate::sim::{
        records_from_csv_str, records_to_csv_string, simulate_tomography, ScanConfig, SourceConfig,
    };
    use crate::states::{singlet, tangle};
    use approx::assert_relative_eq;
    use rand::Rng;

    const SQRT_2: f64 = std::f64::consts::SQRT_2;

    fn default_frame() -> MeasurementFrame {
        MeasurementFrame::standard()
    }

    #[test]
    fn accidental_subtraction_is_linear_and_keeps_negatives() {
        let rec = |c: u64, a: u64| CountRecord {
            condition: "P_x+1_p+1".into(),
            slit_position_um: 0.0,
            repeat: 0,
            coincidences: c,
            accidentals: a,
        };
        let out = subtract_accidentals(&[rec(5, 2), rec(7, 0), rec(1, 3)]);
        assert_eq!(out[0].net, 3.0);
        assert_eq!(out[1].net, 7.0);
        assert_eq!(out[2].net, -2.0);
    }

    #[test]
    fn gaussian_fit_is_exact_on_noiseless_data() {
        let positions: Vec<f64> = (0..41).map(|k| -1750.0 + 87.5 * k as f64).collect();
        let truth = (220.0, -12.5, 500.0);
        let rates: Vec<f64> = positions
            .iter()
            .map(|&r| truth.0 * (-(r - truth.1) * (r - truth.1) / (2.0 * truth.2 * truth.2)).exp())
            .collect();
        let fit = fit_gaussian(&positions, &rates).unwrap();
        assert!((fit.center - truth.1).abs() < 1e-6, "center {}", fit.center);
        assert_relative_eq!(fit.width, truth.2, epsilon = 1e-4);
        assert_relative_eq!(fit.amplitude, truth.0, epsilon = 1e-6);
        assert!(fit.residual < 1e-9);
        assert!(fit.uncertainty > 0.0);

        assert!(fit_gaussian(&positions, &vec![0.0; positions.len()]).is_err());
        let few = [0.0, 1.0, 2.0, 3.0];
        assert!(fit_gaussian(&few, &[1.0, 2.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn weighted_fit_variant_agrees_with_unweighted() {
        use rand_distr::{Distribution, Poisson};
        let positions: Vec<f64> = (0..41).map(|k| -1750.0 + 87.5 * k as f64).collect();
        let (amp, center, width) = (220.0, -12.5, 500.0);
        let clean: Vec<f64> = positions
            .iter()
            .map(|&r| amp * (-(r - center) * (r - center) / (2.0 * width * width)).exp())
            .collect();
        let plain = fit_gaussian(&positions, &clean).unwrap();
        let weighted = fit_gaussian_weighted(&positions, &clean).unwrap();
        assert!((plain.center - weighted.center).abs() < 1e-6);
        assert!((plain.width - weighted.width).abs() < 1e-4);

        let mut rng = stream_rng(0xbee, &[]);
        let noisy: Vec<f64> = clean
            .iter()
            .map(|&lam| {
                if lam < 1e-12 {
                    0.0
                } else {
                    let s: f64 = Poisson::new(lam).unwrap().sample(&mut rng);
                    s
                }
            })
            .collect();
        let plain = fit_gaussian(&positions, &noisy).unwrap();
        let weighted = fit_gaussian_weighted(&positions, &noisy).unwrap();
        let tol = 3.0 * (plain.uncertainty + weighted.uncertainty);
        assert!(
            (plain.center - weighted.center).abs() < tol,
            "centers {} vs {} (tol {tol})",
            plain.center,
            weighted.center
        );
        assert!((weighted.center - center).abs() < 4.0 * weighted.uncertainty);
    }

    #[test]
    fn gaussian_fit_covers_truth_under_poisson_noise() {
        use rand_distr::{Distribution, Poisson};
        let positions: Vec<f64> = (0..41).map(|k| -1750.0 + 87.5 * k as f64).collect();
        let (amp, center, width) = (800.0, -12.5, 500.0);
        let mut hits = 0;
        let trials = 1000;
        for t in 0..trials {
            let mut rng = stream_rng(0xf17, &[t as u64 + 1]);
            let rates: Vec<f64> = positions
                .iter()
                .map(|&r| {
                    let lam = amp * (-(r - center) * (r - center) / (2.0 * width * width)).exp();
                    if lam < 1e-12 {
                        0.0
                    } else {
                        let s: f64 = Poisson::new(lam).unwrap().sample(&mut rng);
                        s
                    }
                })
                .collect();
            let fit = fit_gaussian(&positions, &rates).unwrap();
            if (fit.center - center).abs() < 3.0 * fit.uncertainty {
                hits += 1;
            }
        }
        assert!(hits >= 985, "coverage {hits}/{trials}");
    }

    #[test]
    fn centroid_fits_recover_the_beam_separation() {
        let src = SourceConfig::default();
        let scan = ScanConfig { repeats: 20, dwell: 2.0, ..ScanConfig::default() };
        let pointer = PointerConfig::default_apparatus();
        let records = simulate_run(&src, &scan, &pointer, &default_frame(), 77).unwrap();
        let (fit_h, fit_v) = fit_centroids(&records, scan.dwell).unwrap();
        let sep = fit_v.center - fit_h.center;
        let sep_err = (fit_h.uncertainty.powi(2) + fit_v.uncertainty.powi(2)).sqrt();
        assert!(
            (sep - pointer.delta_r()).abs() < 4.0 * sep_err,
            "separation {sep:.3} +- {sep_err:.3} vs {}",
            pointer.delta_r()
        );
        assert!((fit_h.center - pointer.r_h).abs() < 4.0 * fit_h.uncertainty);
        assert!((fit_v.center - pointer.r_v).abs() < 4.0 * fit_v.uncertainty);
    }

    #[test]
    fn estimator_sum_rule_holds_for_arbitrary_counts() {
        // Garbage counts, including cells that subtract to negative values:
        // the z-sum identity is pure algebra and must hold bit-tight.
        let mut rng = rng_from_seed(0xa11);
        let positions: Vec<f64> = (0..9).map(|k| -400.0 + 100.0 * k as f64).collect();
        let mut records = Vec::new();
        for cond in Condition::all() {
            for (pi, &pos) in positions.iter().enumerate() {
                for rep in 0..2u32 {
                    records.push(CountRecord {
                        condition: cond.label(),
                        slit_position_um: pos,
                        repeat: rep,
                        coincidences: rng.random_range(0..400),
                        accidentals: rng.random_range(0..(40 + pi as u64 * 3)),
                    });
                }
            }
        }
        let est = estimate_joint(&records, -12.5, 12.5).unwrap();
        for (setting, table) in [(BobSetting::P, &est.p_table), (BobSetting::Q, &est.q_table)] {
            let mut c_t = 0.0;
            let mut cell_net = std::collections::BTreeMap::new();
            for (x, bob) in CELLS {
                let label = Condition::Chsh { setting, x, bob }.label();
                let net: f64 = records
                    .iter()
                    .filter(|r| r.condition == label)
                    .map(|r| r.coincidences as f64 - r.accidentals as f64)
                    .sum();
                c_t += net;
                cell_net.insert((x, bob), net);
            }
            for (x, bob) in CELLS {
                let sum = table.get(x, 1, bob).unwrap() + table.get(x, -1, bob).unwrap();
                let freq = cell_net[&(x, bob)] / c_t;
                assert!((sum - freq).abs() < 1e-12, "sum {sum} vs freq {freq}");
            }
        }
    }

    #[test]
    fn pipeline_recovers_analytic_tables_from_exact_densities() {
        // Exact densities, no sampling: the continuous estimator differs from
        // the analytic table only through the interference damping, about
        // 1.1e-6 at separation ratio 0.01 on the singlet.
        let rho = singlet().density();
        let frame = default_frame();
        let cfg = PointerConfig::with_separation_ratio(0.01).unwrap();
        for setting in BobSetting::ALL {
            let analytic = weak_joint_one_sided(&rho, &frame, setting).unwrap();
            let est = joint_density(&rho, setting, &cfg).unwrap().weak_estimates();
            for (x, z, b, v) in est.iter() {
                let a = analytic.get(x, z, b).unwrap();
                assert!(
                    (v.unwrap() - a).abs() < 2e-6,
                    "({x},{z},{b}): {v:?} vs {a}"
                );
            }
        }
    }

    #[test]
    fn default_run_reproduces_the_singlet_accounting() {
        let src = SourceConfig::default();
        let scan = ScanConfig::default();
        let records =
            simulate_run(&src, &scan, &PointerConfig::default_apparatus(), &default_frame(), 1)
                .unwrap();
        let report = analyze_run(&records, scan.dwell).unwrap();
        let p_plus_true = (1.0 + SQRT_2) / 2.0;
        let p_minus_true = (1.0 - SQRT_2) / 2.0;
        assert!(report.p_plus_err > 0.0 && report.p_plus_err <= 0.02, "err {}", report.p_plus_err);
        assert!(
            (report.p_plus - p_plus_true).abs() < 3.0 * report.p_plus_err,
            "p_plus {} +- {} vs {p_plus_true}",
            report.p_plus,
            report.p_plus_err
        );
        assert!(
            (report.p_minus - p_minus_true).abs() < 3.0 * report.p_minus_err,
            "p_minus {} +- {} vs {p_minus_true}",
            report.p_minus,
            report.p_minus_err
        );
        assert!(
            (report.chsh - 2.0 * SQRT_2).abs() < 3.0 * report.chsh_err,
            "chsh {} +- {}",
            report.chsh,
            report.chsh_err
        );
        assert_eq!(report.repeats_used, 70);
    }

    #[test]
    fn error_bars_vanish_for_identical_repeats() {
        let positions: Vec<f64> = (0..9).map(|k| -400.0 + 100.0 * k as f64).collect();
        let mut records = Vec::new();
        for cond in Condition::all() {
            for (pi, &pos) in positions.iter().enumerate() {
                for rep in 0..3u32 {
                    records.push(CountRecord {
                        condition: cond.label(),
                        slit_position_um: pos,
                        repeat: rep,
                        coincidences: 50 + 13 * pi as u64 + cond.index() as u64,
                        accidentals: 2,
                    });
                }
            }
        }
        let est = estimate_joint(&records, -12.5, 12.5).unwrap();
        assert!(est.p_plus_err < 1e-12);
        assert!(est.p_minus_err < 1e-12);
        assert!(est.chsh_err < 1e-12);
        for (_, _, _, e) in est.p_errors.iter() {
            assert!(e.unwrap() < 1e-12);
        }
    }

    fn mean_entry_se(est: &EstimatedTable) -> f64 {
        let mut total = 0.0;
        let mut count = 0;
        for t in [&est.p_errors, &est.q_errors] {
            for (_, _, _, e) in t.iter() {
                total += e.unwrap();
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn error_bars_scale_with_repeats_and_rate() {
        let src = SourceConfig::default();
        let pointer = PointerConfig::default_apparatus();
        let frame = default_frame();
        let se_at = |repeats: u32, pair_rate: f64, seed: u64| {
            let scan = ScanConfig { repeats, ..ScanConfig::default() };
            let source = SourceConfig { pair_rate, ..src };
            let records = simulate_run(&source, &scan, &pointer, &frame, seed).unwrap();
            let est = estimate_joint(&records, pointer.r_h, pointer.r_v).unwrap();
            mean_entry_se(&est)
        };
        let se10 = se_at(10, 2000.0, 5);
        let se40 = se_at(40, 2000.0, 5);
        let se70 = se_at(70, 2000.0, 5);
        for (a, na, b, nb) in [(se10, 10.0, se40, 40.0), (se10, 10.0, se70, 70.0), (se40, 40.0, se70, 70.0)] {
            let ratio = a / b;
            let expected = (nb / na as f64).sqrt();
            assert!(
                (ratio / expected - 1.0).abs() < 0.2,
                "SE ratio {ratio:.3} vs sqrt scaling {expected:.3}"
            );
        }
        let base = se_at(20, 2000.0, 6);
        let doubled = se_at(20, 4000.0, 6);
        let ratio = base / doubled;
        assert!(
            (ratio / SQRT_2 - 1.0).abs() < 0.2,
            "rate-doubling ratio {ratio:.3} vs sqrt(2)"
        );
    }

    #[test]
    fn accidental_subtraction_is_unbiased_over_seeds() {
        let src = SourceConfig { pair_rate: 2000.0, ..SourceConfig::default() };
        let scan = ScanConfig {
            range: 350.0,
            repeats: 1,
            dwell: 1.0,
            accidental_rate: 50.0,
            ..ScanConfig::default()
        };
        let pointer = PointerConfig::default_apparatus();
        let frame = default_frame();
        let rho = src.delivered_state().unwrap();
        let seeds = 300u64;
        let positions = scan.positions();
        let mut sums: BTreeMap<(String, u64), f64> = BTreeMap::new();
        for seed in 0..seeds {
            let records = simulate_run(&src, &scan, &pointer, &frame, 9000 + seed).unwrap();
            for r in &records {
                *sums.entry((r.condition.clone(), r.slit_position_um.to_bits())).or_default() +=
                    r.coincidences as f64 - r.accidentals as f64;
            }
        }
        for setting in BobSetting::ALL {
            let density = joint_density(&rho, setting, &pointer).unwrap();
            for (x, bob) in CELLS {
                let label = Condition::Chsh { setting, x, bob }.label();
                for &pos in &positions {
                    let m = density.mixture(x, bob);
                    let lam_sig = src.pair_rate
                        * scan.dwell
                        * m.integrate(pos - scan.slit_width / 2.0, pos + scan.slit_width / 2.0, 64);
                    let lam_acc = scan.accidental_rate * scan.dwell;
                    let mean = sums[&(label.clone(), pos.to_bits())] / seeds as f64;
                    // Variance of one corrected count is lam_sig + 2 lam_acc.
                    let se = ((lam_sig + 2.0 * lam_acc) / seeds as f64).sqrt();
                    assert!(
                        (mean - lam_sig).abs() < 4.5 * se + 1e-9,
                        "{label} at {pos}: mean {mean:.3} vs signal {lam_sig:.3} +- {se:.3}"
                    );
                }
            }
        }
    }

    #[test]
    fn count_statistics_errors_agree_with_repeat_spread() {
        let src = SourceConfig::default();
        let scan = ScanConfig { repeats: 20, ..ScanConfig::default() };
        let pointer = PointerConfig::default_apparatus();
        let records = simulate_run(&src, &scan, &pointer, &default_frame(), 17).unwrap();
        let est = estimate_joint(&records, pointer.r_h, pointer.r_v).unwrap();
        let (boot_plus, _, boot_chsh) =
            count_statistics_errors(&records, pointer.r_h, pointer.r_v, 24, 55).unwrap();
        for (spread, boot) in [(est.p_plus_err, boot_plus), (est.chsh_err, boot_chsh)] {
            let ratio = spread / boot;
            assert!(
                ratio > 0.5 && ratio < 2.0,
                "repeat spread {spread:.5} vs count-statistics {boot:.5}"
            );
        }
    }

    #[test]
    fn estimates_are_bitwise_stable_through_csv() {
        let src = SourceConfig::default();
        let scan = ScanConfig { repeats: 3, dwell: 1.0, ..ScanConfig::default() };
        let pointer = PointerConfig::default_apparatus();
        let records = simulate_run(&src, &scan, &pointer, &default_frame(), 404).unwrap();
        let direct = estimate_joint(&records, pointer.r_h, pointer.r_v).unwrap();
        let csv = records_to_csv_string(&records).unwrap();
        let back = records_from_csv_str(&csv).unwrap();
        let reloaded = estimate_joint(&back, pointer.r_h, pointer.r_v).unwrap();
        assert_eq!(direct.outcome.p_plus.to_bits(), reloaded.outcome.p_plus.to_bits());
        assert_eq!(direct.outcome.chsh.to_bits(), reloaded.outcome.chsh.to_bits());
        assert_eq!(direct.chsh_err.to_bits(), reloaded.chsh_err.to_bits());
    }

    #[test]
    fn missing_conditions_and_single_repeats_are_rejected() {
        let src = SourceConfig::default();
        let scan = ScanConfig { repeats: 2, dwell: 0.5, ..ScanConfig::default() };
        let pointer = PointerConfig::default_apparatus();
        let records = simulate_run(&src, &scan, &pointer, &default_frame(), 12).unwrap();
        let dropped: Vec<CountRecord> =
            records.iter().filter(|r| r.condition != "P_x+1_p+1").cloned().collect();
        assert!(matches!(
            estimate_joint(&dropped, pointer.r_h, pointer.r_v),
            Err(Error::MissingCondition(_))
        ));
        let single: Vec<CountRecord> =
            records.iter().filter(|r| r.repeat == 0).cloned().collect();
        assert!(matches!(
            estimate_joint(&single, pointer.r_h, pointer.r_v),
            Err(Error::InsufficientRepeats { .. })
        ));
        assert!(estimate_central(&single, pointer.r_h, pointer.r_v).is_ok());
        assert!(estimate_joint(&records, 12.5, -12.5).is_err());
    }

    #[test]
    fn tomography_inversion_is_exact_on_born_counts() {
        let rho = singlet().density();
        let flux = (1u64 << 26) as f64;
        let records: Vec<TomographyRecord> = crate::sim::tomography_settings(false)
            .into_iter()
            .map(|setting| {
                let p = rho.expectation(&tomography_projector(&setting).unwrap());
                TomographyRecord { setting, counts: (flux * p).round() as u64 }
            })
            .collect();
        let rec = reconstruct_tomography(&records).unwrap();
        assert!(rec.rho.matrix().max_abs_diff(rho.matrix()) < 1e-9);
        assert_relative_eq!(rec.flux, flux, max_relative = 1e-9);
        assert!(rec.min_eigenvalue > -1e-9);
        assert!(rec.physical);
    }

    #[test]
    fn tomography_recovers_werner_properties_from_counts() {
        let src = SourceConfig { werner_v: 0.9447, ..SourceConfig::default() };
        let records = simulate_tomography(&src, 500.0, false, 271).unwrap();
        let rec = reconstruct_tomography(&records).unwrap();
        let t = tangle(&rec.rho).unwrap();
        assert!((t - 0.841).abs() < 0.01, "tangle {t}");
        let fid = rec.rho.fidelity_with_pure(&singlet());
        assert!((fid - (3.0 * 0.9447 + 1.0) / 4.0).abs() < 0.01, "fidelity {fid}");
        assert!(rec.physical, "werner reconstruction should clear the floor");
        let se = tomography_replica_se(&records, 10, 3, |r| tangle(&r.rho)).unwrap();
        assert!(se > 0.0 && se < 0.02, "tangle replica SE {se}");
    }

    #[test]
    fn overcomplete_tomography_agrees_by_least_squares() {
        let src = SourceConfig { werner_v: 0.9, ..SourceConfig::default() };
        let records = simulate_tomography(&src, 500.0, true, 88).unwrap();
        assert_eq!(records.len(), 36);
        let rec = reconstruct_tomography(&records).unwrap();
        let truth = src.delivered_state().unwrap();
        assert!(rec.rho.matrix().max_abs_diff(truth.matrix()) < 0.01);
    }

    #[test]
    fn conditioned_route_and_direct_route_agree() {
        let outcome =
            predicted_outcome_from_state(&singlet().density(), &default_frame()).unwrap();
        assert_relative_eq!(outcome.chsh, 2.0 * SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(outcome.p_plus, (1.0 + SQRT_2) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn sweep_rows_track_the_analytic_curve() {
        let cfg = ExperimentConfig {
            scan: ScanConfig { repeats: 12, dwell: 2.0, ..ScanConfig::default() },
            ..ExperimentConfig::default()
        };
        let thetas = [45.0, 30.0];
        let rows = sweep_tangle(&thetas, &cfg, &default_frame(), 33).unwrap();
        assert_eq!(rows.len(), 2);
        for (row, &theta) in rows.iter().zip(&thetas) {
            let t = family_tangle(theta, 1.0);
            assert_relative_eq!(row.tangle, t, epsilon = 1e-12);
            let expected_plus = 0.5 + SQRT_2 * (1.0 + t.sqrt()) / 4.0;
            assert_relative_eq!(row.analytic_p_plus, expected_plus, epsilon = 1e-9);
            assert_relative_eq!(
                row.analytic_chsh,
                SQRT_2 * (1.0 + t.sqrt()),
                epsilon = 1e-9
            );
            assert!(
                (row.p_plus - row.analytic_p_plus).abs() < 4.0 * row.p_plus_err,
                "p_plus {} +- {} vs {}",
                row.p_plus,
                row.p_plus_err,
                row.analytic_p_plus
            );
            assert!((row.chsh - row.analytic_chsh).abs() < 4.0 * row.chsh_err);
        }
        let csv = sweep_to_csv_string(&rows).unwrap();
        assert!(csv.starts_with(
            "tangle,p_plus,p_plus_err,p_minus,p_minus_err,chsh,chsh_err,analytic_p_plus,analytic_p_minus,analytic_chsh\n"
        ));
        assert_eq!(sweep_from_csv_str(&csv).unwrap(), rows);
    }

    #[test]
    fn family_tangle_matches_wootters_on_the_mixture() {
        for (theta, v) in [(45.0, 1.0), (30.0, 1.0), (45.0, 0.9447), (20.0, 0.8), (5.0, 0.5)] {
            let src = SourceConfig { theta, werner_v: v, ..SourceConfig::default() };
            let rho = src.delivered_state().unwrap();
            let direct = tangle(&rho).unwrap();
            assert!(
                (family_tangle(theta, v) - direct).abs() < 1e-6,
                "theta {theta}, v {v}: closed form {} vs direct {direct}",
                family_tangle(theta, v)
            );
        }
    }
}
