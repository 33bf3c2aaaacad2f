//! `rlab`: command line front end of the rigidity laboratory.
//!
//! Exit codes: 0 success, 2 contract violation, 3 fixture mismatch,
//! 4 input or parameter error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rigidity_lab::extension::{extend, extension_ratio};
use rigidity_lab::fields::{lp_norm, split_by_majorants};
use rigidity_lab::gfld;
use rigidity_lab::korn::korn_multi;
use rigidity_lab::lab::{
    emit_report, equiintegrable_sequence, generate_field, run_experiment, tail_profile_svg, Controlled,
    ExperimentConfig, FixtureBand, FixtureConfig, FixtureMode, GeneratedField, Pipeline, ReportFormat,
};
use rigidity_lab::lorentz::{
    equiintegrability_check, equiintegrability_profile, lorentz_rigidity, LorentzForm, LorentzSpec,
};
use rigidity_lab::rigidity::rigidity_multi;
use rigidity_lab::rotations::dist_field;
use rigidity_lab::truncation::truncate_measured;
use rigidity_lab::{gradient, make_domain, DomainKind, GridDomain, LabError, Result, ScalarField, VectorField};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "rlab", version, about = "Mixed-growth Korn and rigidity decompositions on grids")]
struct Cli {
    /// Experiment configuration (JSON); flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Domain kind: square, lshape or graph_halfball.
    #[arg(long, global = true)]
    domain: Option<DomainKind>,
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    q: Option<f64>,
    /// Comma-separated exponent list (overrides --p/--q).
    #[arg(long, global = true, value_delimiter = ',')]
    exponents: Option<Vec<f64>>,
    /// Record fixtures instead of asserting against them.
    #[arg(long, global = true)]
    record_fixtures: bool,
    /// Fixture file (default: fixtures.json in the output directory).
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    /// Accept ratios up to 5% above the fixtures.
    #[arg(long, global = true)]
    cross_platform: bool,
    #[arg(long, global = true, value_enum, value_delimiter = ',', default_value = "json")]
    format: Vec<Format>,
    /// Output directory; without it results go to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Displacement field (.gfld); generated from the noise model otherwise.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Scalar majorant fields (.gfld), one per exponent.
    #[arg(long, global = true, value_delimiter = ',')]
    majorants: Option<Vec<PathBuf>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
    Svg,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
            Format::Svg => ReportFormat::Svg,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormArg {
    KFunctional,
    Rearrangement,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pointwise distance of Du to SO(n) and its Lp norms.
    Dist,
    /// Linear decomposition Du = S + Σ F_α.
    Korn,
    /// Nonlinear decomposition Du = Q + Σ F_α.
    Rigidity,
    /// Extension across the graph boundary of a graph_halfball domain.
    Extend {
        /// Data radius R; the output ball has radius R/(2√(1+L²)).
        #[arg(long, default_value_t = 0.8)]
        radius: f64,
    },
    /// Maximal-function truncation and McShane extension at level λ.
    Truncate {
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Lorentz-norm rigidity ratio.
    Lorentz {
        #[arg(long, value_enum, default_value = "rearrangement")]
        form: FormArg,
    },
    /// Equiintegrability chain on a seeded sequence with η_k = 2^k.
    Equi {
        #[arg(long, default_value_t = 6)]
        members: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.01")]
        eps: Vec<f64>,
        /// Number of tail-profile levels.
        #[arg(long, default_value_t = 32)]
        levels: usize,
    },
    /// Seeded ensemble over resolutions with fixture record/assert.
    Experiment,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 4,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn base_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(r) = cli.resolution {
        config.resolutions = vec![r];
    }
    if let Some(d) = cli.domain {
        config.domain = d;
    }
    if let Some(e) = &cli.exponents {
        config.exponents = e.clone();
    } else if let (Some(p), Some(q)) = (cli.p, cli.q) {
        config.exponents = vec![p, q];
    } else if let Some(p) = cli.p {
        config.exponents = vec![p];
    }
    if cli.out.is_some() {
        config.output_dir = cli.out.clone();
    }
    Ok(config)
}

fn config_domain(config: &ExperimentConfig) -> Result<Arc<GridDomain>> {
    Ok(Arc::new(make_domain(config.domain, config.dim, config.size, config.resolutions[0], config.lipschitz)?))
}

/// The displacement and majorants: loaded from files when given, generated
/// from the noise model otherwise.
fn field_and_majorants(
    cli: &Cli,
    config: &ExperimentConfig,
    controlled: Controlled,
    parts: usize,
) -> Result<GeneratedField> {
    let generated = match &cli.input {
        Some(path) => {
            let u = gfld::load_vector(path)?;
            GeneratedField {
                base: rigidity_lab::Mat::identity(u.domain().dim()),
                majorants: Vec::new(),
                margin: 0.0,
                u,
            }
        }
        None => generate_field(&config.model, controlled, parts, &config_domain(config)?, config.seed)?,
    };
    match &cli.majorants {
        Some(paths) => {
            if paths.len() != parts {
                return Err(LabError::Parameter(format!("expected {parts} majorant files, got {}", paths.len())));
            }
            let domain = generated.u.domain().clone();
            let majorants =
                paths.iter().map(|p| gfld::load_scalar(p)?.with_domain(&domain)).collect::<Result<Vec<_>>>()?;
            Ok(GeneratedField { majorants, ..generated })
        }
        None if generated.majorants.len() == parts => Ok(generated),
        None => Err(LabError::Input("a loaded displacement needs --majorants".into())),
    }
}

fn displacement(cli: &Cli, config: &ExperimentConfig) -> Result<VectorField> {
    match &cli.input {
        Some(path) => gfld::load_vector(path),
        None => Ok(generate_field(&config.model, Controlled::Dist, 1, &config_domain(config)?, config.seed)?.u),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::Array(items) => {
            for (i, x) in items.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), x, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.replace(',', ";"))),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// `key,value` rows of a JSON document.
fn json_to_csv(v: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", v, &mut rows);
    let mut s = String::from("key,value\n");
    for (k, x) in rows {
        s.push_str(&format!("{k},{x}\n"));
    }
    s
}

/// Writes `name.<ext>` per format under `--out`, or prints to stdout.
fn emit(cli: &Cli, name: &str, json_value: &Value, csv: Option<String>, svg: Option<String>) -> Result<()> {
    for f in &cli.format {
        let (ext, body) = match f {
            Format::Json => ("json", serde_json::to_string_pretty(json_value)? + "\n"),
            Format::Csv => ("csv", csv.clone().unwrap_or_else(|| json_to_csv(json_value))),
            Format::Svg => match &svg {
                Some(s) => ("svg", s.clone()),
                None => return Err(LabError::Parameter(format!("svg output is not available for '{name}'"))),
            },
        };
        match &cli.out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join(format!("{name}.{ext}")), body)?;
            }
            None => print!("{body}"),
        }
    }
    Ok(())
}

fn save_field<T: gfld::GfldValue>(cli: &Cli, name: &str, field: &rigidity_lab::fields::Field<T>) -> Result<()> {
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
        gfld::save(dir.join(name), field)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<u8> {
    let config = base_config(cli)?;
    match &cli.command {
        Command::Dist => {
            let u = displacement(cli, &config)?;
            let dist = dist_field(&gradient(&u)?)?;
            let sup = dist.values().iter().copied().fold(0.0, f64::max);
            let norms: serde_json::Map<String, Value> = config
                .exponents
                .iter()
                .map(|&p| Ok((format!("{p}"), json!(lp_norm(&dist, p)?))))
                .collect::<Result<_>>()?;
            save_field(cli, "dist.gfld", &dist)?;
            emit(cli, "dist", &json!({"sup": sup, "integral": dist.integral(), "lp_norms": norms}), None, None)?;
        }
        Command::Korn => {
            let gen = field_and_majorants(cli, &config, Controlled::SymGrad, config.exponents.len())?;
            let d = korn_multi(&gen.u, &gen.majorants, &config.exponents)?;
            let report = d.report(&gradient(&gen.u)?);
            emit(cli, "korn", &serde_json::to_value(&report)?, None, None)?;
        }
        Command::Rigidity => {
            let gen = field_and_majorants(cli, &config, Controlled::Dist, config.exponents.len())?;
            let rep = rigidity_multi(&gen.u, &gen.majorants, &config.exponents)?;
            let summary = rep.summary(&gradient(&gen.u)?);
            emit(cli, "rigidity", &serde_json::to_value(&summary)?, None, None)?;
        }
        Command::Extend { radius } => {
            let config = ExperimentConfig { domain: cli.domain.unwrap_or(DomainKind::GraphHalfball), ..config };
            let gen = field_and_majorants(cli, &config, Controlled::SymGrad, 2)?;
            let eu = gradient(&gen.u)?.map(|a| a.sym());
            let (f, g) = split_by_majorants(&eu, &gen.majorants[0], &gen.majorants[1])?;
            let ext = extend(&gen.u, &f, &g, *radius)?;
            let p = config.exponents[0];
            let q = *config.exponents.last().expect("validated exponents");
            let out = json!({
                "center": ext.center,
                "radius": ext.radius,
                "exterior_cells": ext.exterior.iter().filter(|&&e| e).count(),
                "residual": ext.residual,
                "ratio_f": extension_ratio(&ext, &ext.parts[0], &f, p, *radius)?,
                "ratio_g": extension_ratio(&ext, &ext.parts[1], &g, q, *radius)?,
            });
            save_field(cli, "extended.gfld", &ext.w)?;
            emit(cli, "extend", &out, None, None)?;
        }
        Command::Truncate { lambda } => {
            let u = displacement(cli, &config)?;
            let lambda = lambda.or(config.lambda).unwrap_or(2.0 * u.domain().dim() as f64);
            let plan = rigidity_lab::newtonian::MultiplierPlan::new(u.domain());
            let t = truncate_measured(&u, lambda, &plan)?;
            save_field(cli, "truncated.gfld", t.extended())?;
            let mut v = serde_json::to_value(&t)?;
            v["excess_ratio"] = json!(t.excess_ratio());
            if let Value::Object(map) = &mut v {
                map.remove("good_set");
            }
            emit(cli, "truncate", &v, None, None)?;
        }
        Command::Lorentz { form } => {
            let u = displacement(cli, &config)?;
            let (p, q) = match config.exponents.as_slice() {
                [p] => (*p, *p),
                [p, q] => (*p, *q),
                _ => return Err(LabError::Parameter("lorentz takes --p and --q".into())),
            };
            let spec = LorentzSpec::with_default_triple(p, q)?;
            let form = match form {
                FormArg::KFunctional => LorentzForm::KFunctional,
                FormArg::Rearrangement => LorentzForm::Rearrangement,
            };
            let rep = lorentz_rigidity(&u, &spec, form)?;
            emit(cli, "lorentz", &serde_json::to_value(&rep)?, None, None)?;
        }
        Command::Equi { members, eps, levels } => {
            let domain = config_domain(&config)?;
            let seq = equiintegrable_sequence(&config.model, &domain, *members, config.seed)?;
            let p = config.exponents[0];
            let dists: Vec<ScalarField> =
                seq.iter().map(|s| Ok(dist_field(&gradient(&s.u)?)?.scale(s.eta))).collect::<Result<_>>()?;
            let top = dists.iter().flat_map(|d| d.values().iter().copied()).fold(0.0, f64::max);
            let grid: Vec<f64> = (0..*levels).map(|k| top * k as f64 / (*levels).max(2) as f64 * 1.05).collect();
            let profile = equiintegrability_profile(&dists, p, &grid)?;
            let checks = eps.iter().map(|&e| equiintegrability_check(&seq, p, e)).collect::<Result<Vec<_>>>()?;
            let out = json!({"profile": profile, "checks": checks});
            emit(cli, "equi", &out, Some(profile.to_csv()), Some(tail_profile_svg(&profile)))?;
        }
        Command::Experiment => return experiment(cli, config),
    }
    Ok(0)
}

fn experiment(cli: &Cli, mut config: ExperimentConfig) -> Result<u8> {
    let out_dir: Option<PathBuf> = config.output_dir.clone();
    let default_fixture = |dir: &Option<PathBuf>| dir.as_deref().unwrap_or(Path::new(".")).join("fixtures.json");
    let band = if cli.cross_platform { FixtureBand::CrossPlatform } else { FixtureBand::Exact };
    if cli.record_fixtures {
        let path = cli
            .fixtures
            .clone()
            .or(config.fixture.as_ref().map(|f| f.path.clone()))
            .unwrap_or_else(|| default_fixture(&out_dir));
        config.fixture = Some(FixtureConfig { path, mode: FixtureMode::Record, band });
    } else if let Some(path) = &cli.fixtures {
        config.fixture = Some(FixtureConfig { path: path.clone(), mode: FixtureMode::Assert, band });
    } else if let Some(f) = &mut config.fixture {
        if cli.cross_platform {
            f.band = band;
        }
    }
    if config.pipeline == Pipeline::Lorentz && config.exponents.len() == 1 {
        config.exponents.push(config.exponents[0]);
    }
    config.validate()?;
    let report = run_experiment(&config)?;
    let formats: Vec<ReportFormat> = cli.format.iter().map(|&f| f.into()).collect();
    match &out_dir {
        Some(dir) => {
            emit_report(&report, &formats, dir)?;
        }
        None => {
            for f in &formats {
                match f {
                    ReportFormat::Csv => print!("{}", report.to_csv()),
                    ReportFormat::Json => print!("{}", report.to_json()?),
                    ReportFormat::Svg => print!("{}", report.to_svg()),
                }
            }
        }
    }
    for (seed, res, msg) in report.errors() {
        eprintln!("run failed (seed {seed}, resolution {res}): {msg}");
    }
    if let Err(e) = report.check_fixtures() {
        eprintln!("error: {e}");
        return Ok(e.exit_code() as u8);
    }
    Ok(report.worst_exit_code().map(|c| c as u8).unwrap_or(0))
}
