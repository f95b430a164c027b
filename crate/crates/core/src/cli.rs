//! Command-line front end: `synth`, `compare` and `simulate`, all driven by one
//! TOML configuration file.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 infeasible or
//! unsound result.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::model::PlatoonParams;
use crate::reach::{log_grid, AttackBounds, GridResult, GridSelection, DEFAULT_TOL};
use crate::realize::{Realization, CHANNELS, FREE_BETA};
use crate::sim::{self, AttackSignal, InitialOffsets, LeadProfile, PlatoonScenario, Trajectory};
use crate::synth::{self, SearchOptions, SynthesisResult};

/// Overrides the configured output directory (a `--output-dir` flag wins over it).
pub const OUTPUT_DIR_ENV: &str = "CACC_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cacc-realize", version, about = "Attack-robust CACC controller realizations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Global seed; overrides the file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the file and the environment.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize the realization and write synthesis.json and curve.csv.
    Synth(CommonArgs),
    /// Evaluate the configured realizations and write a comparison table.
    Compare(CommonArgs),
    /// Run the configured attack scenarios.
    Simulate(CommonArgs),
}

// ---------------------------------------------------------------------------
// Configuration file

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub params: Option<Spanned<ParamsSection>>,
    pub bounds: Option<Spanned<BoundsSection>>,
    pub search: Option<Spanned<SearchSection>>,
    #[serde(default)]
    pub realizations: Vec<Spanned<RealizationEntry>>,
    #[serde(default)]
    pub scenarios: Vec<Spanned<ScenarioEntry>>,
}

/// Missing fields take the repository defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub h: Option<f64>,
    pub tau: Option<f64>,
    pub r: Option<f64>,
    pub kp: Option<f64>,
    pub kd: Option<f64>,
    pub ts: Option<f64>,
    pub m: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    /// Explicit grid; takes precedence over the log-spaced description.
    pub a_values: Option<Vec<f64>>,
    pub points: Option<usize>,
    pub gap_min: Option<f64>,
    pub gap_max: Option<f64>,
    pub selection: Option<GridSelection>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RealizationKind {
    Base,
    Chat,
    ChatInverted,
    Optimal,
    Custom,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealizationEntry {
    pub name: String,
    pub kind: RealizationKind,
    pub alpha: Option<f64>,
    pub beta: Option<[f64; FREE_BETA]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadSection {
    pub v0: f64,
    /// `[start time, acceleration]` pairs, each held until the next start.
    #[serde(default)]
    pub segments: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEntry {
    /// Vehicle index of the attacked follower (2..=m).
    pub vehicle: usize,
    /// Channel 1..=6.
    pub channel: usize,
    pub signal: AttackSignal,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub name: String,
    /// Realization names to simulate; each run uses one realization for all followers.
    pub realizations: Vec<String>,
    pub horizon: usize,
    pub lead: LeadSection,
    #[serde(default)]
    pub attacks: Vec<AttackEntry>,
    #[serde(default)]
    pub initial: InitialOffsets,
}

/// Validated configuration.
#[derive(Debug, Clone)]
pub struct Config {
    pub params: PlatoonParams,
    pub bounds: AttackBounds,
    pub search: SearchOptions,
    pub realizations: Vec<(String, RealizationKind, Option<Realization>)>,
    pub scenarios: Vec<ScenarioEntry>,
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

fn anchored(source: &str, span: std::ops::Range<usize>, what: &str, err: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {}: {what}: {err}", line_of(source, span.start)))
}

/// Parses and validates a configuration; errors carry the line of the offending section.
pub fn parse_config(source: &str) -> Result<Config> {
    let file: ConfigFile = toml::from_str(source).map_err(|e| {
        let line = e.span().map(|s| line_of(source, s.start));
        match line {
            Some(l) => Error::Config(format!("line {l}: {}", e.message())),
            None => Error::Config(e.message().to_string()),
        }
    })?;

    let defaults = PlatoonParams::default();
    let params = match &file.params {
        Some(sp) => {
            let p = sp.get_ref();
            let params = PlatoonParams {
                h: p.h.unwrap_or(defaults.h),
                tau: p.tau.unwrap_or(defaults.tau),
                r: p.r.unwrap_or(defaults.r),
                kp: p.kp.unwrap_or(defaults.kp),
                kd: p.kd.unwrap_or(defaults.kd),
                ts: p.ts.unwrap_or(defaults.ts),
                m: p.m.unwrap_or(defaults.m),
            };
            params
                .validate()
                .and_then(|_| crate::realize::PlatoonModel::new(&params).map(|_| ()))
                .map_err(|e| anchored(source, sp.span(), "[params]", e))?;
            params
        }
        None => defaults,
    };

    let bounds = match &file.bounds {
        Some(sp) => {
            let b = AttackBounds::new(sp.get_ref().w.clone())
                .map_err(|e| anchored(source, sp.span(), "[bounds]", e))?;
            if b.channels() != CHANNELS {
                return Err(anchored(
                    source,
                    sp.span(),
                    "[bounds]",
                    format!("w needs {CHANNELS} entries, got {}", b.channels()),
                ));
            }
            b
        }
        None => AttackBounds::uniform(CHANNELS, 1.0)?,
    };

    let search = match &file.search {
        Some(sp) => {
            let s = sp.get_ref();
            let build = || -> Result<SearchOptions> {
                let a_grid = match &s.a_values {
                    Some(v) => crate::reach::normalize_grid(v)?,
                    None => log_grid(
                        s.points.unwrap_or(50),
                        s.gap_min.unwrap_or(1e-4),
                        s.gap_max.unwrap_or(0.98),
                    )?,
                };
                let tol = s.tol.unwrap_or(DEFAULT_TOL);
                if !(1e-10..=1e-4).contains(&tol) {
                    return Err(Error::Domain(format!("tol must lie in [1e-10, 1e-4], got {tol}")));
                }
                Ok(SearchOptions {
                    a_grid,
                    selection: s.selection.unwrap_or_default(),
                    tol,
                })
            };
            build().map_err(|e| anchored(source, sp.span(), "[search]", e))?
        }
        None => SearchOptions::default(),
    };

    let mut realizations = Vec::new();
    for sp in &file.realizations {
        let entry = sp.get_ref();
        let resolved = resolve_realization(entry, &params)
            .map_err(|e| anchored(source, sp.span(), &format!("realization '{}'", entry.name), e))?;
        if realizations.iter().any(|(n, _, _)| n == &entry.name) {
            return Err(anchored(source, sp.span(), "[[realizations]]", format!("duplicate name '{}'", entry.name)));
        }
        realizations.push((entry.name.clone(), entry.kind, resolved));
    }
    if realizations.is_empty() {
        realizations = vec![
            ("C".into(), RealizationKind::Base, Some(Realization::base())),
            ("Chat".into(), RealizationKind::Chat, Some(Realization::chat(&params)?)),
            ("optimal".into(), RealizationKind::Optimal, None),
        ];
    }

    let mut scenarios = Vec::new();
    for sp in &file.scenarios {
        let sc = sp.get_ref();
        check_scenario(sc, &params, &realizations)
            .map_err(|e| anchored(source, sp.span(), &format!("scenario '{}'", sc.name), e))?;
        scenarios.push(sc.clone());
    }

    Ok(Config {
        params,
        bounds,
        search,
        realizations,
        scenarios,
        seed: file.seed,
        output_dir: file.output_dir.unwrap_or_else(|| PathBuf::from("out")),
    })
}

fn resolve_realization(entry: &RealizationEntry, params: &PlatoonParams) -> Result<Option<Realization>> {
    let extra = entry.alpha.is_some() || entry.beta.is_some();
    match entry.kind {
        RealizationKind::Custom => {
            let (alpha, beta) = entry.alpha.zip(entry.beta).ok_or_else(|| {
                Error::Domain("custom realizations need both alpha and beta".into())
            })?;
            Realization::new(alpha, beta).map(Some)
        }
        _ if extra => Err(Error::Domain("alpha/beta are only allowed with kind = \"custom\"".into())),
        RealizationKind::Base => Ok(Some(Realization::base())),
        RealizationKind::Chat => Realization::chat(params).map(Some),
        RealizationKind::ChatInverted => Realization::chat(params).map(|r| Some(r.inverted())),
        RealizationKind::Optimal => Ok(None),
    }
}

fn check_scenario(
    sc: &ScenarioEntry,
    params: &PlatoonParams,
    realizations: &[(String, RealizationKind, Option<Realization>)],
) -> Result<()> {
    if sc.horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    if sc.realizations.is_empty() {
        return Err(Error::Domain("list at least one realization".into()));
    }
    for name in &sc.realizations {
        if !realizations.iter().any(|(n, _, _)| n == name) {
            return Err(Error::Domain(format!("unknown realization '{name}'")));
        }
    }
    if !sc.lead.v0.is_finite() || sc.lead.segments.iter().any(|(t, u)| !t.is_finite() || !u.is_finite()) {
        return Err(Error::Domain("lead profile must be finite".into()));
    }
    for a in &sc.attacks {
        if a.vehicle < 2 || a.vehicle > params.m {
            return Err(Error::Domain(format!("attacked vehicle must be in 2..={}, got {}", params.m, a.vehicle)));
        }
        if a.channel < 1 || a.channel > CHANNELS {
            return Err(Error::Domain(format!("channel must be in 1..={CHANNELS}, got {}", a.channel)));
        }
        a.signal.validate()?;
    }
    if sc.initial.followers.len() > params.m - 1 {
        return Err(Error::Domain("more initial offsets than followers".into()));
    }
    Ok(())
}

fn load_config(args: &CommonArgs) -> Result<Config> {
    let source = fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&source)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
        cfg.output_dir = PathBuf::from(dir);
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Output helpers

/// Pretty JSON with sorted keys.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Io(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn curve_csv(result: &SynthesisResult) -> String {
    let mut out = String::from("a,status,trace,score");
    let names: Vec<&String> = result.comparisons.keys().collect();
    for n in &names {
        out.push_str(&format!(",trace_{n}"));
    }
    out.push('\n');
    for (k, p) in result.curve.iter().enumerate() {
        out.push_str(&format!("{},{:?},{},{}", p.a, p.status, opt_num(p.trace), opt_num(p.score)));
        for n in &names {
            out.push_str(&format!(",{}", opt_num(result.comparisons[*n].curve[k].trace)));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Commands

/// Named realizations with `optimal` entries resolved by running the synthesis once.
fn resolve_all(cfg: &Config) -> Result<Vec<(String, Realization)>> {
    let needs_synth = cfg.realizations.iter().any(|(_, k, _)| *k == RealizationKind::Optimal);
    let synthesis = if needs_synth {
        Some(synth::optimize_realization(&cfg.params, &cfg.bounds, &cfg.search)?)
    } else {
        None
    };
    let resolved = cfg
        .realizations
        .iter()
        .map(|(name, _, r)| {
            let real = match r {
                Some(r) => *r,
                None => synthesis.as_ref().expect("synthesis ran").realization(),
            };
            (name.clone(), real)
        })
        .collect();
    Ok(resolved)
}

pub fn cmd_synth(cfg: &Config) -> Result<()> {
    let result = synth::optimize_realization(&cfg.params, &cfg.bounds, &cfg.search)?;
    write_file(&cfg.output_dir, "synthesis.json", &canonical_json(&result)?)?;
    write_file(&cfg.output_dir, "curve.csv", &curve_csv(&result))?;
    log::info!(
        "a* = {}, trace(Y) = {:e}, beta = {:?}",
        result.a_opt,
        result.trace_opt,
        result.beta_opt
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub alpha: f64,
    pub beta: [f64; CHANNELS],
    pub a_star: f64,
    pub trace: f64,
    pub spread: f64,
    pub volume_paper: f64,
    pub volume_lyap: f64,
}

pub fn comparison_rows(cfg: &Config) -> Result<Vec<ComparisonRow>> {
    let resolved = resolve_all(cfg)?;
    resolved
        .iter()
        .map(|(name, real)| {
            let r: GridResult = synth::evaluate_realization(real, &cfg.params, &cfg.bounds, &cfg.search)?;
            let e = &r.ellipsoid;
            Ok(ComparisonRow {
                name: name.clone(),
                alpha: real.alpha(),
                beta: *real.beta(),
                a_star: e.a,
                trace: e.trace,
                spread: e.spread(),
                volume_paper: e.volume_paper,
                volume_lyap: e.volume_lyap,
            })
        })
        .collect()
}

pub fn cmd_compare(cfg: &Config) -> Result<()> {
    let rows = comparison_rows(cfg)?;
    let mut csv = String::from("name,a_star,trace,spread,volume_paper,volume_lyap\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.name, r.a_star, r.trace, r.spread, r.volume_paper, r.volume_lyap
        ));
    }
    write_file(&cfg.output_dir, "comparison.json", &canonical_json(&rows)?)?;
    write_file(&cfg.output_dir, "comparison.csv", &csv)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub realization: String,
    pub collision: bool,
    pub max_abs_e: f64,
    pub metrics: Vec<sim::FollowerMetrics>,
    /// Largest `x̃ᵀPx̃ / bound_lyap` over followers and samples.
    pub max_ellipsoid_level: f64,
}

/// Builds the simulation scenario of one configured run.
pub fn build_scenario(cfg: &Config, entry: &ScenarioEntry, real: Realization, index: usize) -> Result<PlatoonScenario> {
    let lead = LeadProfile::piecewise(entry.lead.v0, cfg.params.ts, entry.horizon, &entry.lead.segments);
    let mut sc = PlatoonScenario::nominal(cfg.params, real, lead, entry.horizon)?;
    sc.bounds = cfg.bounds.clone();
    sc.initial = entry.initial.clone();
    sc.seed = cfg.seed.wrapping_add(index as u64);
    for a in &entry.attacks {
        sc.attacks[a.vehicle - 2][a.channel - 1] = a.signal.clone();
    }
    Ok(sc)
}

fn membership_levels(tr: &Trajectory, ell: &crate::reach::EllipsoidResult) -> Vec<Vec<f64>> {
    tr.followers
        .iter()
        .map(|f| {
            (0..tr.len())
                .map(|k| {
                    let x = f.decoupled_state(k);
                    x.dot(&(&ell.p * &x)) / ell.bound_lyap
                })
                .collect()
        })
        .collect()
}

pub fn cmd_simulate(cfg: &Config) -> Result<Vec<RunSummary>> {
    if cfg.scenarios.is_empty() {
        return Err(Error::Config("no [[scenarios]] defined".into()));
    }
    let resolved = resolve_all(cfg)?;
    let lookup: BTreeMap<&str, Realization> = resolved.iter().map(|(n, r)| (n.as_str(), *r)).collect();
    let mut ellipsoids = BTreeMap::new();
    let mut summaries = Vec::new();
    for (index, entry) in cfg.scenarios.iter().enumerate() {
        for name in &entry.realizations {
            let real = lookup[name.as_str()];
            if !ellipsoids.contains_key(name) {
                let r = synth::evaluate_realization(&real, &cfg.params, &cfg.bounds, &cfg.search)?;
                ellipsoids.insert(name.clone(), r.ellipsoid);
            }
            let sc = build_scenario(cfg, entry, real, index)?;
            let tr = sim::run(&sc)?;
            let stem = format!("{}_{}", entry.name, name);
            let mut csv = Vec::new();
            tr.write_csv(&mut csv)?;
            write_file(&cfg.output_dir, &format!("trajectory_{stem}.csv"), &String::from_utf8_lossy(&csv))?;

            let levels = membership_levels(&tr, &ellipsoids[name]);
            let mut mcsv = String::from("k,t,vehicle,level\n");
            for k in 0..tr.len() {
                for (f, lv) in tr.followers.iter().zip(&levels) {
                    mcsv.push_str(&format!("{k},{},{},{}\n", tr.t[k], f.vehicle, lv[k]));
                }
            }
            write_file(&cfg.output_dir, &format!("membership_{stem}.csv"), &mcsv)?;

            summaries.push(RunSummary {
                scenario: entry.name.clone(),
                realization: name.clone(),
                collision: tr.collision(),
                max_abs_e: tr.max_abs_e(),
                metrics: tr.metrics.clone(),
                max_ellipsoid_level: levels.iter().flatten().copied().fold(0.0, f64::max),
            });
        }
    }
    write_file(&cfg.output_dir, "metrics.json", &canonical_json(&summaries)?)?;
    Ok(summaries)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::AllInfeasible(_) | Error::Numerical(_) => EXIT_INFEASIBLE,
        _ => EXIT_CONFIG,
    }
}

/// Parses arguments, runs one command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (args, which) = match &cli.command {
        Command::Synth(a) => (a, "synth"),
        Command::Compare(a) => (a, "compare"),
        Command::Simulate(a) => (a, "simulate"),
    };
    let cfg = match load_config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };
    let outcome = match which {
        "synth" => cmd_synth(&cfg),
        "compare" => cmd_compare(&cfg),
        _ => cmd_simulate(&cfg).map(|_| ()),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
