//! Command-line front end: analytic tables, seeded scan simulation, record
//! analysis, tangle sweeps, and tomography. Every output is a pure function
//! of (config, seed).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use weakchsh::analysis::{
    analyze_run_with, predicted_outcome_from_state, reconstruct_tomography, sweep_tangle,
    sweep_to_csv_string, tomography_replica_se,
};
use weakchsh::matrix::MatrixDto;
use weakchsh::sim::{
    records_from_csv_str, records_to_csv_string, simulate_run, simulate_tomography,
    tomography_to_csv_string, ExperimentConfig,
};
use weakchsh::states::{entangled_pair, singlet, tangle, werner, DensityMatrix};
use weakchsh::weak::{
    chsh_from_one_sided, weak_joint_one_sided, weak_joint_table, BobSetting, MeasurementFrame,
    TableEntryDto, WeakBasis,
};
use weakchsh::{Error, Result};

#[derive(Parser)]
#[command(
    name = "weakchsh",
    version,
    about = "Weak-measurement Bell test toolkit: analytic tables, simulated scans, analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    #[value(name = "Z", alias = "z")]
    Z,
    #[value(name = "X", alias = "x")]
    X,
}

impl BasisArg {
    fn basis(self) -> WeakBasis {
        match self {
            BasisArg::Z => WeakBasis::Z,
            BasisArg::X => WeakBasis::X,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    #[value(name = "P", alias = "p")]
    P,
    #[value(name = "Q", alias = "q")]
    Q,
}

impl SettingArg {
    fn setting(self) -> BobSetting {
        match self {
            SettingArg::P => BobSetting::P,
            SettingArg::Q => BobSetting::Q,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Print the exact weak-valued table and Bell accounting for a state
    Analytic {
        /// State spec: singlet | theta=<deg> | werner:<V> | <density JSON path>
        #[arg(long, default_value = "singlet")]
        state: String,
        /// Observable pair probed weakly on each arm
        #[arg(long, value_enum, default_value_t = BasisArg::Z)]
        weak_basis: BasisArg,
        /// Restrict the table output to one analyser setting's one-sided table
        #[arg(long, value_enum)]
        bob_setting: Option<SettingArg>,
        /// Output format (default: aligned text)
        #[arg(long, value_enum, default_value_t = FormatArg::Table)]
        format: FormatArg,
        /// Write to this path instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a full scan run into a counts CSV plus metadata JSON
    Simulate {
        /// Experiment config JSON; built-in defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the source with a parametric state spec
        #[arg(long)]
        state: Option<String>,
        /// Override the number of scan repeats
        #[arg(long)]
        repeats: Option<u32>,
        #[arg(long, value_enum, default_value_t = BasisArg::Z)]
        weak_basis: BasisArg,
        /// RNG seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Counts CSV path; metadata lands next to it as <stem>.meta.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze a counts CSV into a results JSON
    Analyze {
        /// Counts CSV produced by `simulate`
        counts: PathBuf,
        /// Config JSON consulted for the dwell when no metadata sits next to
        /// the counts file
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dwell override, seconds per counting cell
        #[arg(long)]
        dwell: Option<f64>,
        /// Inverse-variance weighting for the centroid fits
        #[arg(long)]
        weighted_fit: bool,
        /// Results JSON path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one simulated scan per pump angle and tabulate against theory
    Sweep {
        /// Comma-separated pump angles in degrees (default: 2.5 to 45 in
        /// steps of 2.5)
        #[arg(long)]
        thetas: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the number of scan repeats
        #[arg(long)]
        repeats: Option<u32>,
        #[arg(long, value_enum, default_value_t = BasisArg::Z)]
        weak_basis: BasisArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate tomography, reconstruct the state, and predict the Bell
    /// accounting through the conditioned-matrix route
    Tomography {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the source with a parametric state spec
        #[arg(long)]
        state: Option<String>,
        /// Dwell per tomography setting; expected counts are pair_rate * dwell
        #[arg(long, default_value_t = 500.0)]
        dwell: f64,
        /// Measure the 36-setting overcomplete set instead of the 16-setting one
        #[arg(long)]
        overcomplete: bool,
        /// Also write the raw per-setting counts CSV here
        #[arg(long)]
        counts_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = BasisArg::Z)]
        weak_basis: BasisArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report JSON path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

/// 1 for validation problems, 2 for I/O, 3 for numeric failures such as a
/// vanishing postselection probability.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 2,
        Error::ZeroPostselection { .. }
        | Error::Numeric(_)
        | Error::EigenNoConvergence { .. }
        | Error::SingularSystem { .. }
        | Error::DegenerateFit(_)
        | Error::FitNoConvergence { .. }
        | Error::UndefinedEntry(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analytic { state, weak_basis, bob_setting, format, out } => cmd_analytic(
            &state,
            weak_basis.basis(),
            bob_setting.map(SettingArg::setting),
            format,
            out.as_deref(),
        ),
        Command::Simulate { config, state, repeats, weak_basis, seed, out } => cmd_simulate(
            config.as_deref(),
            state.as_deref(),
            repeats,
            weak_basis.basis(),
            seed,
            &out,
        ),
        Command::Analyze { counts, config, dwell, weighted_fit, out } => {
            cmd_analyze(&counts, config.as_deref(), dwell, weighted_fit, out.as_deref())
        }
        Command::Sweep { thetas, config, repeats, weak_basis, seed, out } => cmd_sweep(
            thetas.as_deref(),
            config.as_deref(),
            repeats,
            weak_basis.basis(),
            seed,
            out.as_deref(),
        ),
        Command::Tomography {
            config,
            state,
            dwell,
            overcomplete,
            counts_out,
            weak_basis,
            seed,
            out,
        } => cmd_tomography(
            config.as_deref(),
            state.as_deref(),
            dwell,
            overcomplete,
            counts_out.as_deref(),
            weak_basis.basis(),
            seed,
            out.as_deref(),
        ),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_json_str(&fs::read_to_string(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn parse_state(spec: &str) -> Result<DensityMatrix> {
    if spec == "singlet" {
        return Ok(singlet().density());
    }
    if let Some(rest) = spec.strip_prefix("theta=") {
        let deg: f64 = rest
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad pump angle {rest:?}, expected degrees")))?;
        return Ok(entangled_pair(deg.to_radians(), 0.0).density());
    }
    if let Some(rest) = spec.strip_prefix("werner:").or_else(|| spec.strip_prefix("werner=")) {
        let v: f64 = rest
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad visibility {rest:?}")))?;
        return werner(v);
    }
    let path = Path::new(spec);
    if path.exists() {
        let dto: MatrixDto = serde_json::from_str(&fs::read_to_string(path)?)?;
        return DensityMatrix::new(dto.to_matrix()?, 1e-9);
    }
    Err(Error::Parse(format!(
        "unrecognized state spec {spec:?}; expected singlet, theta=<deg>, werner:<V>, \
         or a density JSON path"
    )))
}

/// Parametric (theta, visibility) pair for specs the simulator's source model
/// can realize directly.
fn source_params(spec: &str) -> Result<(f64, f64)> {
    if spec == "singlet" {
        return Ok((45.0, 1.0));
    }
    if let Some(rest) = spec.strip_prefix("theta=") {
        let deg: f64 = rest
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad pump angle {rest:?}, expected degrees")))?;
        return Ok((deg, 1.0));
    }
    if let Some(rest) = spec.strip_prefix("werner:").or_else(|| spec.strip_prefix("werner=")) {
        let v: f64 = rest
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad visibility {rest:?}")))?;
        return Ok((45.0, v));
    }
    Err(Error::Parse(format!(
        "the simulator needs a parametric state spec (singlet | theta=<deg> | werner:<V>), \
         got {spec:?}"
    )))
}

fn basis_name(basis: WeakBasis) -> &'static str {
    match basis {
        WeakBasis::Z => "Z",
        WeakBasis::X => "X",
    }
}

#[derive(Serialize)]
struct OneSidedEntryDto {
    x: i8,
    z: i8,
    bob: i8,
    value: Option<f64>,
}

#[derive(Serialize)]
struct AnalyticReport {
    state: String,
    weak_basis: String,
    p_plus: f64,
    p_minus: f64,
    chsh: f64,
    table: Vec<TableEntryDto>,
    #[serde(skip_serializing_if = "Option::is_none")]
    one_sided: Option<Vec<OneSidedEntryDto>>,
}

fn cmd_analytic(
    spec: &str,
    basis: WeakBasis,
    setting: Option<BobSetting>,
    format: FormatArg,
    out: Option<&Path>,
) -> Result<()> {
    let rho = parse_state(spec)?;
    let frame = MeasurementFrame::with_weak_basis(basis);
    let p_table = weak_joint_one_sided(&rho, &frame, BobSetting::P)?;
    let q_table = weak_joint_one_sided(&rho, &frame, BobSetting::Q)?;
    let outcome = chsh_from_one_sided(&p_table, &q_table)?;
    let table = weak_joint_table(&rho, &frame)?;

    let text = match format {
        FormatArg::Table => {
            let mut s = String::new();
            let _ = writeln!(s, "state: {spec}");
            let _ = writeln!(s, "weak basis: {}", basis_name(basis));
            match setting {
                None => {
                    let _ = writeln!(s, "joint quasiprobability table:");
                    let _ = writeln!(s, "  x  z  p  q       value");
                    for (x, z, p, q, v) in table.iter() {
                        match v {
                            Some(v) => {
                                let _ =
                                    writeln!(s, " {x:+} {z:+} {p:+} {q:+}  {v:10.7}");
                            }
                            None => {
                                let _ = writeln!(s, " {x:+} {z:+} {p:+} {q:+}   undefined");
                            }
                        }
                    }
                }
                Some(setting) => {
                    let one = match setting {
                        BobSetting::P => &p_table,
                        BobSetting::Q => &q_table,
                    };
                    let _ = writeln!(s, "one-sided table, analyser setting {setting}:");
                    let _ = writeln!(s, "  x  z  b       value");
                    for (x, z, b, v) in one.iter() {
                        match v {
                            Some(v) => {
                                let _ = writeln!(s, " {x:+} {z:+} {b:+}  {v:10.7}");
                            }
                            None => {
                                let _ = writeln!(s, " {x:+} {z:+} {b:+}   undefined");
                            }
                        }
                    }
                }
            }
            let _ = writeln!(s, "p_plus  = {:.5}", outcome.p_plus);
            let _ = writeln!(s, "p_minus = {:.5}", outcome.p_minus);
            let _ = writeln!(s, "chsh    = {:.5}", outcome.chsh);
            s
        }
        FormatArg::Csv => match setting {
            None => table.to_csv_string(),
            Some(setting) => {
                let one = match setting {
                    BobSetting::P => &p_table,
                    BobSetting::Q => &q_table,
                };
                let mut s = String::from("x,z,bob_outcome,value\n");
                for (x, z, b, v) in one.iter() {
                    match v {
                        Some(v) => {
                            let _ = writeln!(s, "{x},{z},{b},{v}");
                        }
                        None => {
                            let _ = writeln!(s, "{x},{z},{b},");
                        }
                    }
                }
                s
            }
        },
        FormatArg::Json => {
            let one_sided = setting.map(|setting| {
                let one = match setting {
                    BobSetting::P => &p_table,
                    BobSetting::Q => &q_table,
                };
                one.iter().map(|(x, z, b, v)| OneSidedEntryDto { x, z, bob: b, value: v }).collect()
            });
            let report = AnalyticReport {
                state: spec.to_string(),
                weak_basis: basis_name(basis).to_string(),
                p_plus: outcome.p_plus,
                p_minus: outcome.p_minus,
                chsh: outcome.chsh,
                table: table.to_dto(),
                one_sided,
            };
            serde_json::to_string_pretty(&report)? + "\n"
        }
    };
    write_output(out, &text)
}

#[derive(Serialize, Deserialize)]
struct RunMetadata {
    config: ExperimentConfig,
    weak_basis: String,
    seed: u64,
    records: usize,
}

fn metadata_path(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

fn cmd_simulate(
    config: Option<&Path>,
    state: Option<&str>,
    repeats: Option<u32>,
    basis: WeakBasis,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(spec) = state {
        let (theta, v) = source_params(spec)?;
        cfg.source.theta = theta;
        cfg.source.werner_v = v;
    }
    if let Some(r) = repeats {
        cfg.scan.repeats = r;
    }
    cfg.validate()?;
    let frame = MeasurementFrame::with_weak_basis(basis);
    let records = simulate_run(&cfg.source, &cfg.scan, &cfg.pointer, &frame, seed)?;
    fs::write(out, records_to_csv_string(&records)?)?;
    let meta = RunMetadata {
        config: cfg,
        weak_basis: basis_name(basis).to_string(),
        seed,
        records: records.len(),
    };
    let meta_path = metadata_path(out);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
    eprintln!(
        "wrote {} records to {} (metadata: {})",
        meta.records,
        out.display(),
        meta_path.display()
    );
    Ok(())
}

fn cmd_analyze(
    counts: &Path,
    config: Option<&Path>,
    dwell: Option<f64>,
    weighted_fit: bool,
    out: Option<&Path>,
) -> Result<()> {
    let records = records_from_csv_str(&fs::read_to_string(counts)?)?;
    let dwell = match dwell {
        Some(d) => d,
        None => {
            let meta_path = metadata_path(counts);
            if meta_path.exists() {
                let meta: RunMetadata = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
                meta.config.scan.dwell
            } else if let Some(p) = config {
                ExperimentConfig::from_json_str(&fs::read_to_string(p)?)?.scan.dwell
            } else {
                ExperimentConfig::default().scan.dwell
            }
        }
    };
    let report = analyze_run_with(&records, dwell, weighted_fit)?;
    for (label, value) in [("p_plus", report.p_plus), ("p_minus", report.p_minus)] {
        if !(0.0..=1.0).contains(&value) {
            eprintln!(
                "warning: {label} = {value:.4} lies outside [0, 1] \
                 (expected for strongly entangled states)"
            );
        }
    }
    write_output(out, &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn cmd_sweep(
    thetas: Option<&str>,
    config: Option<&Path>,
    repeats: Option<u32>,
    basis: WeakBasis,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(r) = repeats {
        cfg.scan.repeats = r;
    }
    cfg.validate()?;
    let thetas: Vec<f64> = match thetas {
        Some(list) => list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad pump angle {t:?}, expected degrees")))
            })
            .collect::<Result<_>>()?,
        None => (1..=18).map(|k| k as f64 * 2.5).collect(),
    };
    let frame = MeasurementFrame::with_weak_basis(basis);
    let rows = sweep_tangle(&thetas, &cfg, &frame, seed)?;
    write_output(out, &sweep_to_csv_string(&rows)?)
}

#[derive(Serialize)]
struct TomographyReport {
    settings: usize,
    flux: f64,
    min_eigenvalue: f64,
    physical: bool,
    tangle: f64,
    tangle_se: f64,
    fidelity_to_singlet: f64,
    predicted_p_plus: f64,
    predicted_p_plus_se: f64,
    predicted_p_minus: f64,
    predicted_chsh: f64,
    state: MatrixDto,
}

#[allow(clippy::too_many_arguments)]
fn cmd_tomography(
    config: Option<&Path>,
    state: Option<&str>,
    dwell: f64,
    overcomplete: bool,
    counts_out: Option<&Path>,
    basis: WeakBasis,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(spec) = state {
        let (theta, v) = source_params(spec)?;
        cfg.source.theta = theta;
        cfg.source.werner_v = v;
    }
    cfg.validate()?;
    let records = simulate_tomography(&cfg.source, dwell, overcomplete, seed)?;
    if let Some(path) = counts_out {
        fs::write(path, tomography_to_csv_string(&records)?)?;
    }
    let rec = reconstruct_tomography(&records)?;
    let t = tangle(&rec.rho)?;
    let replicas = 10;
    let t_se = tomography_replica_se(&records, replicas, seed, |r| tangle(&r.rho))?;
    let frame = MeasurementFrame::with_weak_basis(basis);
    let predicted = predicted_outcome_from_state(&rec.rho, &frame)?;
    let p_plus_se = tomography_replica_se(&records, replicas, seed, |r| {
        predicted_outcome_from_state(&r.rho, &frame).map(|o| o.p_plus)
    })?;
    let report = TomographyReport {
        settings: records.len(),
        flux: rec.flux,
        min_eigenvalue: rec.min_eigenvalue,
        physical: rec.physical,
        tangle: t,
        tangle_se: t_se,
        fidelity_to_singlet: rec.rho.fidelity_with_pure(&singlet()),
        predicted_p_plus: predicted.p_plus,
        predicted_p_plus_se: p_plus_se,
        predicted_p_minus: predicted.p_minus,
        predicted_chsh: predicted.chsh,
        state: MatrixDto::from(rec.rho.matrix()),
    };
    write_output(out, &(serde_json::to_string_pretty(&report)? + "\n"))
}
