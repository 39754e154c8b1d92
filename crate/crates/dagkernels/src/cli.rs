//! Experiment runner: wires architectures, kernels, indices, harmonics and
//! regression into the `indices`, `eigvals`, `regress`, `gap-compare` and
//! `validate` subcommands. Every subcommand is a pure function of
//! (config, seeds): CSV and SVG outputs are byte-identical across reruns and
//! thread counts. Wall-clock timings go to stderr only.

use crate::arch::{build_dcnn, build_mlp, validate_assumptions, ArchDag, DcnnShape, Readout, ValidationConstants};
use crate::config::{Config, ConfigError};
use crate::dual::Dual;
use crate::frac::{format_frac, IndexValue};
use crate::harmonics::{build_eigenfunction, CoefficientMode, EigenId, Eigenfunction};
use crate::indices::{canonical_multi_index, index_triple, IndexError};
use crate::kernel::{eigenvalue_estimate, EigenvalueMethod, KernelError, KernelKind};
use crate::linalg::LinalgError;
use crate::plot::{line_chart, AxisScale, ChartSpec, Series};
use crate::regression::{gap_vs_flatten, learning_curve, CurveOptions, CurveRow, RegressionError};
use crate::report::{fmt_f64, CsvWriter};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("resource cap: {0}")]
    Resource(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Documented process exit codes: 0 ok, 2 config, 3 resource, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Resource(_) => 3,
            CliError::Numerical(_) | CliError::Io(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::EnumerationCap(_) | IndexError::TooManyTerminals(_) => {
                CliError::Resource(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<RegressionError> for CliError {
    fn from(e: RegressionError) -> Self {
        match e {
            RegressionError::MemoryCap { .. } => CliError::Resource(e.to_string()),
            RegressionError::LabelMismatch { .. } | RegressionError::BadSchedule => {
                CliError::Config(e.to_string())
            }
            RegressionError::Kernel(k) => CliError::Numerical(k.to_string()),
            RegressionError::Linalg(l) => CliError::Numerical(l.to_string()),
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Indices,
    Eigvals,
    Regress,
    GapCompare,
    Validate,
}

#[derive(Debug, Clone)]
pub struct CliOptions {
    pub command: Command,
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    pub seeds: Option<usize>,
    pub threads: Option<usize>,
    pub mem_cap: Option<usize>,
}

/// Entry point shared by the binary and the tests.
pub fn run(opts: &CliOptions) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| dispatch(opts))
}

fn dispatch(opts: &CliOptions) -> Result<(), CliError> {
    let config = Config::load(&opts.config_path)?;
    std::fs::create_dir_all(&opts.out_dir)?;
    match opts.command {
        Command::Indices => cmd_indices(&config, &opts.out_dir),
        Command::Eigvals => cmd_eigvals(&config, &opts.out_dir),
        Command::Regress => cmd_regress(&config, &opts.out_dir, opts),
        Command::GapCompare => cmd_gap_compare(&config, &opts.out_dir, opts),
        Command::Validate => cmd_validate(&config),
    }
}

/// The three reference architectures of the experiments at patch size `p`:
/// the deep MLP, the two-conv-layer net with half exponents, and the
/// three-conv-layer net with quarter exponents.
pub fn experiment_architectures(p: usize, dual: &Dual) -> Result<Vec<(String, ArchDag)>, CliError> {
    let d = p * p * p * p;
    let mlp = build_mlp(4, d, dual.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let coarse = build_dcnn(
        &DcnnShape::half_exponents(p),
        d,
        Readout::Flatten,
        true,
        dual.clone(),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let fine = build_dcnn(
        &DcnnShape::quarter_exponents(p),
        d,
        Readout::Flatten,
        true,
        dual.clone(),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(vec![
        ("mlp".to_string(), mlp),
        ("cnn_p2x2".to_string(), coarse),
        ("cnn_px4".to_string(), fine),
    ])
}

/// `indices`: per (eigenfunction x architecture) row of exact S/F/L.
fn cmd_indices(config: &Config, out: &Path) -> Result<(), CliError> {
    let p = config.get_usize_or("experiment", "patch_size", 4)?;
    let dual = config.dual()?;
    let modes = config.modes()?;
    let archs = experiment_architectures(p, &dual)?;
    let mut csv = CsvWriter::create(
        &out.join("indices.csv"),
        &["mode", "degree", "arch", "spatial", "frequency", "learning"],
    )?;
    for id in &modes {
        for (name, dag) in &archs {
            let r = canonical_multi_index(*id, p, dag).map_err(CliError::from)?;
            let t = index_triple(dag, &r)?;
            csv.write_row(&[
                id.name().to_string(),
                id.degree().to_string(),
                name.clone(),
                index_str(&t.spatial),
                index_str(&t.frequency),
                index_str(&t.learning),
            ])?;
        }
    }
    csv.finish()?;
    Ok(())
}

fn index_str(v: &IndexValue) -> String {
    match v {
        IndexValue::Finite(f) => format_frac(f),
        IndexValue::Infinite => "inf".to_string(),
    }
}

/// `eigvals`: eigenvalue estimates across a dimension sweep plus fitted
/// log-log slopes, with an SVG of log lambda vs log d.
fn cmd_eigvals(config: &Config, out: &Path) -> Result<(), CliError> {
    let p_sweep = if config.has("eigvals", "p_sweep") {
        config.get_usize_list("eigvals", "p_sweep")?
    } else {
        vec![2, 3, 4]
    };
    let dual = config.dual()?;
    let kind = config.kernel_kind()?;
    let modes = config.modes()?;
    let mc_samples = config.get_usize_or("eigvals", "mc_samples", 0)?;
    let master_seed = config.get_u64_or("experiment", "master_seed", 1)?;
    let mlp_arch = config.get_or("arch", "kind", "dcnn") == "mlp";
    let act = config.get_bool_or("arch", "act_after_readout", true)?;

    let mut csv = CsvWriter::create(
        &out.join("eigvals.csv"),
        &["mode", "p", "d", "kind", "lambda_jet", "lambda_mc", "mc_std_error", "learning_index"],
    )?;
    let mut per_mode: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut slopes: Vec<(String, Option<f64>, IndexValue)> = Vec::new();
    for id in &modes {
        let mut points = Vec::new();
        let mut l_value = IndexValue::Infinite;
        for &p in &p_sweep {
            let d = p * p * p * p;
            let dag = if mlp_arch {
                build_mlp(
                    config.get_usize_or("arch", "depth", 4)?,
                    d,
                    dual.clone(),
                )
                .map_err(|e| CliError::Config(e.to_string()))?
            } else {
                build_dcnn(
                    &DcnnShape::quarter_exponents(p),
                    d,
                    Readout::Flatten,
                    act,
                    dual.clone(),
                )
                .map_err(|e| CliError::Config(e.to_string()))?
            };
            let r = match canonical_multi_index(*id, p, &dag) {
                Ok(r) => r,
                // pattern does not embed at this p (needs more offsets)
                Err(_) => continue,
            };
            let triple = index_triple(&dag, &r)?;
            l_value = triple.learning;
            let jet = eigenvalue_estimate(&dag, kind, &r, EigenvalueMethod::Jet, 0, 0)?;
            let (mc_val, mc_se) = if mc_samples > 0 {
                let mc = eigenvalue_estimate(
                    &dag,
                    kind,
                    &r,
                    EigenvalueMethod::MonteCarlo,
                    mc_samples,
                    master_seed,
                )?;
                (fmt_f64(mc.value), fmt_f64(mc.std_error))
            } else {
                ("".to_string(), "".to_string())
            };
            csv.write_row(&[
                id.name().to_string(),
                p.to_string(),
                d.to_string(),
                kind.name().to_string(),
                fmt_f64(jet.value),
                mc_val,
                mc_se,
                index_str(&triple.learning),
            ])?;
            if jet.value > 0.0 {
                points.push((d as f64, jet.value));
            }
        }
        let slope = fit_loglog_slope(&points);
        slopes.push((id.name().to_string(), slope, l_value));
        if !points.is_empty() {
            per_mode.insert(id.name().to_string(), points);
        }
    }
    csv.finish()?;

    let mut csv = CsvWriter::create(
        &out.join("slopes.csv"),
        &["mode", "slope", "learning_index"],
    )?;
    for (mode, slope, l) in &slopes {
        csv.write_row(&[
            mode.clone(),
            slope.map(fmt_f64).unwrap_or_else(|| "n/a".to_string()),
            index_str(l),
        ])?;
    }
    csv.finish()?;

    let series: Vec<Series> = per_mode
        .iter()
        .map(|(mode, pts)| Series {
            label: mode.clone(),
            points: pts.clone(),
        })
        .collect();
    let svg = line_chart(
        &ChartSpec {
            title: "eigenvalue scaling".into(),
            x_label: "d".into(),
            y_label: "lambda".into(),
            x_scale: AxisScale::Log,
            y_scale: AxisScale::Log,
            ..ChartSpec::default()
        },
        &series,
    );
    std::fs::write(out.join("eigvals.svg"), svg)?;
    Ok(())
}

/// Least-squares slope of log(y) against log(x).
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        if y <= 0.0 {
            return None;
        }
        let lx = x.ln();
        let ly = y.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Build one eigenfunction per requested mode, coefficient streams derived
/// from the master seed.
pub fn build_targets(
    modes: &[EigenId],
    p: usize,
    master_seed: u64,
    mode: CoefficientMode,
    norm_samples: usize,
) -> Result<Vec<Eigenfunction>, CliError> {
    modes
        .iter()
        .map(|id| {
            build_eigenfunction(*id, p, master_seed, mode, norm_samples)
                .map_err(|e| CliError::Config(e.to_string()))
        })
        .collect()
}

struct ExperimentSetup {
    dag: ArchDag,
    kind: KernelKind,
    targets: Vec<Eigenfunction>,
    l_by_mode: BTreeMap<String, IndexValue>,
    m_schedule: Vec<usize>,
    seeds: Vec<u64>,
    opts: CurveOptions,
    run_id: String,
}

fn experiment_setup(
    config: &Config,
    cli: &CliOptions,
    coefficient_mode: CoefficientMode,
    dag: ArchDag,
) -> Result<ExperimentSetup, CliError> {
    let kind = config.kernel_kind()?;
    let modes = config.modes()?;
    // Ambient layout parameter p: d = p^4 for the experiment family.
    let inferred = (dag.reference_dim() as f64).powf(0.25).round() as usize;
    let p = config.get_usize_or("experiment", "patch_size", inferred)?;
    let master_seed = config.get_u64_or("experiment", "master_seed", 1)?;
    let norm_samples = config.get_usize_or("experiment", "norm_samples", 20_000)?;
    let targets = build_targets(&modes, p, master_seed, coefficient_mode, norm_samples)?;
    let mut l_by_mode = BTreeMap::new();
    for id in &modes {
        let r = canonical_multi_index(*id, p, &dag)?;
        let t = index_triple(&dag, &r)?;
        l_by_mode.insert(id.name().to_string(), t.learning);
    }
    let m_schedule = config.get_usize_list("experiment", "m_schedule")?;
    let n_seeds = cli
        .seeds
        .unwrap_or(config.get_usize_or("experiment", "seeds", 3)?);
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|s| master_seed ^ (1000 + s)).collect();
    let opts = CurveOptions {
        test_size: config.get_usize_or("experiment", "test_size", 2000)?,
        jitter_scale: config.get_f64_or("experiment", "jitter_scale", 1e-8)?,
        mem_cap: cli.mem_cap,
        data_layout: Some((p * p * p, p)),
    };
    let run_id = format!("{:016x}", fnv_hash(&format!("{:?}{:?}", config, cli.command)));
    Ok(ExperimentSetup {
        dag,
        kind,
        targets,
        l_by_mode,
        m_schedule,
        seeds,

        opts,
        run_id,
    })
}

fn fnv_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

fn write_curve_rows(
    csv: &mut CsvWriter,
    setup: &ExperimentSetup,
    readout: &str,
    arch: &str,
    rows: &[CurveRow],
) -> Result<(), CliError> {
    for row in rows {
        let l = setup
            .l_by_mode
            .get(&row.mode)
            .map(index_str)
            .unwrap_or_else(|| "".to_string());
        csv.write_row(&[
            setup.run_id.clone(),
            arch.to_string(),
            setup.kind.name().to_string(),
            readout.to_string(),
            row.m_train.to_string(),
            row.mode.clone(),
            l,
            row.seed.to_string(),
            fmt_f64(row.residual),
            fmt_f64(row.train_mse),
            "0.000".to_string(),
        ])?;
    }
    Ok(())
}

const CURVE_HEADER: [&str; 11] = [
    "run_id", "arch", "kernel_kind", "readout", "m_train", "mode_id", "L_index", "seed",
    "residual", "train_mse", "seconds",
];

fn curve_series(rows: &[CurveRow], l_by_mode: &BTreeMap<String, IndexValue>) -> Vec<Series> {
    // mean residual per (mode, m) over seeds
    let mut acc: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.mode.clone(), r.m_train)).or_insert((0.0, 0));
        e.0 += r.residual;
        e.1 += 1;
    }
    let mut by_mode: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for ((mode, m), (sum, count)) in acc {
        by_mode
            .entry(mode)
            .or_default()
            .push((m as f64, sum / count as f64));
    }
    by_mode
        .into_iter()
        .map(|(mode, points)| {
            let l = l_by_mode
                .get(&mode)
                .map(index_str)
                .unwrap_or_else(|| "?".into());
            Series {
                label: format!("{mode} L={l}"),
                points,
            }
        })
        .collect()
}

/// `regress`: learning curves on the configured architecture.
fn cmd_regress(config: &Config, out: &Path, cli: &CliOptions) -> Result<(), CliError> {
    let started = std::time::Instant::now();
    let dag = config.arch()?;
    let setup = experiment_setup(config, cli, config.coefficient_mode()?, dag)?;
    let rows = learning_curve(
        &setup.dag,
        setup.kind,
        &setup.targets,
        &setup.m_schedule,
        &setup.seeds,
        &setup.opts,
    )?;
    let mut csv = CsvWriter::create(&out.join("regress.csv"), &CURVE_HEADER)?;
    write_curve_rows(&mut csv, &setup, readout_name(&setup.dag), setup.dag.label(), &rows)?;
    csv.finish()?;
    let svg = line_chart(
        &ChartSpec {
            title: format!("learning curves: {}", setup.dag.label()),
            x_label: "training set size".into(),
            y_label: "residual".into(),
            x_scale: AxisScale::Log,
            y_scale: AxisScale::Log,
            ..ChartSpec::default()
        },
        &curve_series(&rows, &setup.l_by_mode),
    );
    std::fs::write(out.join("regress.svg"), svg)?;
    eprintln!(
        "regress: {} rows in {:.1}s",
        rows.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn readout_name(dag: &ArchDag) -> &'static str {
    match dag.readout() {
        Readout::Flatten => "flatten",
        Readout::Gap => "gap",
    }
}

/// `gap-compare`: paired GAP/Flatten curves on symmetric targets.
fn cmd_gap_compare(config: &Config, out: &Path, cli: &CliOptions) -> Result<(), CliError> {
    let started = std::time::Instant::now();
    if config.coefficient_mode()? != CoefficientMode::Constant {
        return Err(CliError::Config(
            "gap-compare needs coefficient_mode = constant (targets must be window-translation symmetric)"
                .into(),
        ));
    }
    let shape = config.dcnn_shape()?;
    let dual = config.dual()?;
    let d = shape.patch_size * shape.filter_size.pow(shape.hidden_layers as u32) * shape.width;
    let gap_dag = build_dcnn(&shape, d, Readout::Gap, false, dual.clone())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let flat_dag = build_dcnn(&shape, d, Readout::Flatten, false, dual)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let setup = experiment_setup(config, cli, CoefficientMode::Constant, gap_dag.clone())?;
    let rows = gap_vs_flatten(
        &gap_dag,
        &flat_dag,
        &setup.targets,
        &setup.m_schedule,
        &setup.seeds,
        &setup.opts,
    )?;
    let mut csv = CsvWriter::create(&out.join("gap_compare.csv"), &CURVE_HEADER)?;
    let gap_rows: Vec<CurveRow> = rows
        .iter()
        .filter(|(t, _)| t == "gap")
        .map(|(_, r)| r.clone())
        .collect();
    let flat_rows: Vec<CurveRow> = rows
        .iter()
        .filter(|(t, _)| t == "flatten")
        .map(|(_, r)| r.clone())
        .collect();
    write_curve_rows(&mut csv, &setup, "gap", gap_dag.label(), &gap_rows)?;
    write_curve_rows(&mut csv, &setup, "flatten", flat_dag.label(), &flat_rows)?;
    csv.finish()?;

    // Per-mode gap closure summary: |mean gap residual - mean flatten
    // residual| at each m.
    let mut csv = CsvWriter::create(
        &out.join("gap_closure.csv"),
        &["mode_id", "m_train", "gap_mean", "flatten_mean", "difference"],
    )?;
    let mean = |rows: &[CurveRow], mode: &str, m: usize| {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.mode == mode && r.m_train == m)
            .map(|r| r.residual)
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    };
    for id in setup.l_by_mode.keys() {
        for &m in &setup.m_schedule {
            let g = mean(&gap_rows, id, m);
            let f = mean(&flat_rows, id, m);
            csv.write_row(&[
                id.clone(),
                m.to_string(),
                fmt_f64(g),
                fmt_f64(f),
                fmt_f64(f - g),
            ])?;
        }
    }
    csv.finish()?;

    let mut series = Vec::new();
    for (tag, rows) in [("gap", &gap_rows), ("flatten", &flat_rows)] {
        for s in curve_series(rows, &setup.l_by_mode) {
            series.push(Series {
                label: format!("{} {}", s.label, tag),
                points: s.points,
            });
        }
    }
    let svg = line_chart(
        &ChartSpec {
            title: "gap vs flatten".into(),
            x_label: "training set size".into(),
            y_label: "residual".into(),
            x_scale: AxisScale::Log,
            y_scale: AxisScale::Log,
            ..ChartSpec::default()
        },
        &series,
    );
    std::fs::write(out.join("gap_compare.svg"), svg)?;
    eprintln!(
        "gap-compare: {} rows in {:.1}s",
        rows.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// `validate`: print the assumption report for the configured architecture.
fn cmd_validate(config: &Config) -> Result<(), CliError> {
    let dag = config.arch()?;
    let report = validate_assumptions(&dag, &ValidationConstants::default());
    println!("architecture: {}", dag.label());
    for item in &report.items {
        let status = if item.pass { "pass" } else { "FAIL" };
        if item.offending.is_empty() {
            println!("{status}: {}", item.rule);
        } else {
            println!("{status}: {} (nodes {:?})", item.rule, item.offending);
        }
    }
    println!(
        "overall: {}",
        if report.all_pass() { "pass" } else { "FAIL" }
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_fit_recovers_power_law() {
        let points: Vec<(f64, f64)> = [16.0, 81.0, 256.0]
            .iter()
            .map(|&d: &f64| (d, 3.5 * d.powf(-1.25)))
            .collect();
        let slope = fit_loglog_slope(&points).unwrap();
        assert!((slope + 1.25).abs() < 1e-10);
        assert!(fit_loglog_slope(&points[..1]).is_none());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Resource("x".into()).exit_code(), 3);
        assert_eq!(CliError::Numerical("x".into()).exit_code(), 4);
    }
}
