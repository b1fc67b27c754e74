//! `mlar`: fit, select, predict, simulate, summarize and plot-ready density
//! grids for mixture latent autoregressive models.
//!
//! Exit codes: 0 success, 1 user error (bad input, options or files),
//! 2 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mlar::density::{bivariate_density, default_range, linspace, univariate_density, write_bivariate_csv, write_univariate_csv};
use mlar::em::EmControls;
use mlar::fit::{fit_model, FitOptions, FitResult, StartStrategy};
use mlar::io::{read_panel_csv, write_alpha_csv, write_panel_csv, write_truth_csv, Panel};
use mlar::newton::NrControls;
use mlar::select::{select_k, KControls, QControls, SelectionReport};
use mlar::{predict_alpha, simulate_dataset, MlarError, ModelSpec, Parameters, ResponseFamily, SimControl};

const FORMAT_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "mlar", version, about = "Mixture latent autoregressive models for longitudinal data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Ordered reductions, so results do not depend on the thread count
    /// (the default; overrides --adaptive-reduce).
    #[arg(long, global = true)]
    deterministic: bool,
    /// Let the thread pool split reductions adaptively. Faster on many
    /// cores; results may differ in the last bits across thread counts.
    #[arg(long, global = true)]
    adaptive_reduce: bool,
    /// Hold per-cell posterior weights in memory while subjects x occasions
    /// x components x knots stays within this; recompute them beyond it.
    #[arg(long, global = true, default_value_t = mlar::em::DEFAULT_CELL_BUDGET)]
    max_cached_cells: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model; writes fit.json and alpha_hat.csv.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        controls: FitArgs,
    },
    /// Choose q and k; writes selection.json, fit.json and alpha_hat.csv.
    Select {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        controls: FitArgs,
        #[command(flatten)]
        select: SelectArgs,
    },
    /// Posterior predictions from a saved fit; writes alpha_hat.csv.
    Predict {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a panel; writes data.csv and truth.csv.
    Simulate {
        /// fit.json, or a bare parameter object (then --family is required).
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        categories: Option<usize>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Descriptive tables; writes summary.json.
    Summarize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        family: String,
        #[arg(long)]
        categories: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Latent density grids; writes density_univariate.csv and density_bivariate.csv.
    Density {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Grid points of the univariate density.
        #[arg(long, default_value_t = 201)]
        points: usize,
        /// Grid points per axis of the bivariate density.
        #[arg(long, default_value_t = 81)]
        points_2d: usize,
        #[arg(long, allow_hyphen_values = true)]
        lo: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        hi: Option<f64>,
    },
}

#[derive(Args, Clone, Serialize)]
struct ModelArgs {
    /// continuous, binary-logit, binary-probit, ordinal-logit or ordinal-probit.
    #[arg(long)]
    family: String,
    /// Number of ordinal categories J.
    #[arg(long)]
    categories: Option<usize>,
    /// Mixture components.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Quadrature points.
    #[arg(long, default_value_t = mlar::DEFAULT_Q)]
    q: usize,
    /// Knots span [-bound, bound].
    #[arg(long, default_value_t = mlar::DEFAULT_KNOT_BOUND, allow_hyphen_values = true)]
    bound: f64,
}

#[derive(Args, Clone, Serialize)]
struct FitArgs {
    /// default, or random:N for N extra random starts.
    #[arg(long, default_value = "default")]
    start: String,
    /// Seed of the random starts.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    max_em: usize,
    #[arg(long, default_value_t = 1e-6)]
    em_tol: f64,
    #[arg(long, default_value_t = 100)]
    max_nr: usize,
}

#[derive(Args, Clone, Serialize)]
struct SelectArgs {
    #[arg(long, default_value_t = mlar::DEFAULT_Q)]
    q0: usize,
    #[arg(long, default_value_t = mlar::select::DEFAULT_Q_STEP)]
    q_step: usize,
    #[arg(long, default_value_t = mlar::select::DEFAULT_Q_TOL)]
    q_tol: f64,
    #[arg(long, default_value_t = mlar::select::DEFAULT_Q_MAX)]
    q_max: usize,
    #[arg(long, default_value_t = mlar::select::DEFAULT_K_THRESHOLD)]
    k_threshold: f64,
    #[arg(long, default_value_t = mlar::select::DEFAULT_K_MAX)]
    k_max: usize,
}

/// Contents of `fit.json`.
#[derive(Serialize, Deserialize)]
struct FitFile {
    format_version: u32,
    input: String,
    covariates: Vec<String>,
    /// Every option in effect, defaults included.
    controls: serde_json::Value,
    fit: FitResult,
}

#[derive(Serialize)]
struct SelectionFile<'a> {
    format_version: u32,
    input: String,
    controls: serde_json::Value,
    selection: &'a SelectionReport,
}

enum Failure {
    User(String),
    Numerical(String),
}

impl From<MlarError> for Failure {
    fn from(e: MlarError) -> Self {
        let msg = match &e {
            MlarError::InvalidData(v) => {
                let mut m = e.to_string();
                for x in v.iter().take(20) {
                    m.push_str(&format!("\n  {x}"));
                }
                if v.len() > 20 {
                    m.push_str(&format!("\n  ... and {} more", v.len() - 20));
                }
                m
            }
            _ => e.to_string(),
        };
        if e.is_numerical() {
            Failure::Numerical(msg)
        } else {
            Failure::User(msg)
        }
    }
}

fn user(msg: impl Into<String>) -> Failure {
    Failure::User(msg.into())
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Outcome<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| user(format!("cannot set up {n} threads: {e}")))?;
    }
    let ordered = cli.deterministic || !cli.adaptive_reduce;
    mlar::par::set_deterministic(ordered);
    mlar::em::set_cell_budget(cli.max_cached_cells);
    let global = serde_json::json!({
        "threads": cli.threads,
        "deterministic": ordered,
        "max_cached_cells": cli.max_cached_cells,
    });
    match cli.command {
        Command::Fit { input, out, model, controls } => {
            let panel = read_panel_csv(&input).map_err(|e| with_path(e, &input))?;
            let spec = model_spec(&model, panel.covariate_names.len())?;
            let opts = fit_options(&controls)?;
            let fit = fit_model(&spec, &panel.data, &opts)?;
            report_warnings(&fit);
            prepare_dir(&out)?;
            let all = serde_json::json!({ "model": model, "fit": controls, "run": global });
            write_fit(&out, &input, &panel, all, &fit)
        }
        Command::Select { input, out, model, controls, select } => {
            let panel = read_panel_csv(&input).map_err(|e| with_path(e, &input))?;
            let spec = model_spec(&model, panel.covariate_names.len())?.with_q(select.q0);
            let opts = fit_options(&controls)?;
            let qctl = QControls { q0: select.q0, step: select.q_step, tol: select.q_tol, q_max: select.q_max };
            let kctl = KControls { threshold: select.k_threshold, k_max: select.k_max };
            if select.q_step == 0 || select.k_max == 0 {
                return Err(user("--q-step and --k-max must be positive"));
            }
            let sel = select_k(&spec, &panel.data, &kctl, &qctl, &opts)?;
            report_warnings(&sel.fit);
            if sel.report.k_flagged {
                eprintln!("warning: k_max = {} reached without the selection rule firing", kctl.k_max);
            }
            prepare_dir(&out)?;
            let all = serde_json::json!({ "model": model, "fit": controls, "select": select, "run": global });
            let file = SelectionFile {
                format_version: FORMAT_VERSION,
                input: input.display().to_string(),
                controls: all.clone(),
                selection: &sel.report,
            };
            write_json(&out.join("selection.json"), &file)?;
            write_fit(&out, &input, &panel, all, &sel.fit)
        }
        Command::Predict { input, fit, out } => {
            let saved = read_fit(&fit)?;
            let panel = read_panel_csv(&input).map_err(|e| with_path(e, &input))?;
            let spec = saved.fit.spec;
            if panel.data.p() != spec.p {
                return Err(user(format!("the fit has {} covariates, the data {}", spec.p, panel.data.p())));
            }
            mlar::data::ensure_valid(&panel.data, &spec)?;
            let surface = predict_alpha(&spec, &panel.data, &saved.fit.params)?;
            prepare_dir(&out)?;
            write_alpha_csv(out.join("alpha_hat.csv"), &panel.data.ids, &surface)?;
            Ok(())
        }
        Command::Simulate { params, family, categories, n, t, seed, out } => {
            let (spec, truth) = read_truth(&params, family.as_deref(), categories)?;
            if n == 0 || t == 0 {
                return Err(user("--n and --t must be positive"));
            }
            let sim = simulate_dataset(&spec, &truth, &SimControl::new(n, t, seed))?;
            prepare_dir(&out)?;
            write_panel_csv(out.join("data.csv"), &sim.data, None)?;
            write_truth_csv(out.join("truth.csv"), &sim.data.ids, &sim.component, &sim.alpha)?;
            Ok(())
        }
        Command::Summarize { input, family, categories, out } => {
            let panel = read_panel_csv(&input).map_err(|e| with_path(e, &input))?;
            let fam = ResponseFamily::from_name(&family, categories)?;
            let spec = ModelSpec::new(fam, panel.data.p(), 1, mlar::DEFAULT_Q)?;
            mlar::data::ensure_valid(&panel.data, &spec)?;
            let summary = mlar::summary::summarize(&panel.data, fam, Some(&panel.covariate_names));
            prepare_dir(&out)?;
            write_json(&out.join("summary.json"), &summary)
        }
        Command::Density { fit, out, points, points_2d, lo, hi } => {
            let saved = read_fit(&fit)?;
            let params = &saved.fit.params;
            let (dlo, dhi) = default_range(params);
            let (lo, hi) = (lo.unwrap_or(dlo), hi.unwrap_or(dhi));
            if !(lo < hi) || points < 2 || points_2d < 2 {
                return Err(user("need --lo < --hi and at least two grid points"));
            }
            prepare_dir(&out)?;
            let g = linspace(lo, hi, points);
            write_univariate_csv(out.join("density_univariate.csv"), &g, &univariate_density(params, &g))?;
            let g2 = linspace(lo, hi, points_2d);
            write_bivariate_csv(out.join("density_bivariate.csv"), &g2, &g2, &bivariate_density(params, &g2, &g2))?;
            Ok(())
        }
    }
}

fn with_path(e: MlarError, path: &Path) -> Failure {
    match e {
        MlarError::Io(io) => user(format!("{}: {io}", path.display())),
        MlarError::Input { line, msg } => user(format!("{}:{line}: {msg}", path.display())),
        other => other.into(),
    }
}

fn model_spec(m: &ModelArgs, p: usize) -> Outcome<ModelSpec> {
    let fam = ResponseFamily::from_name(&m.family, m.categories)?;
    Ok(ModelSpec::new(fam, p, m.k, m.q)?.with_bound(m.bound)?)
}

fn fit_options(c: &FitArgs) -> Outcome<FitOptions> {
    let start = StartStrategy::parse(&c.start, c.seed)?;
    if c.max_em == 0 {
        return Err(user("--max-em must be positive"));
    }
    Ok(FitOptions {
        start,
        em: EmControls { max_iter: c.max_em, tol: c.em_tol, ..EmControls::with_nr_switch() },
        nr: NrControls { max_iter: c.max_nr, ..NrControls::default() },
        standard_errors: true,
    })
}

fn report_warnings(fit: &FitResult) {
    for w in &fit.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
}

fn prepare_dir(out: &Path) -> Outcome<()> {
    fs::create_dir_all(out).map_err(|e| user(format!("cannot create {}: {e}", out.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| user(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| user(format!("{}: {e}", path.display())))
}

fn write_fit(out: &Path, input: &Path, panel: &Panel, controls: serde_json::Value, fit: &FitResult) -> Outcome<()> {
    let file = FitFile {
        format_version: FORMAT_VERSION,
        input: input.display().to_string(),
        covariates: panel.covariate_names.clone(),
        controls,
        fit: fit.clone(),
    };
    write_json(&out.join("fit.json"), &file)?;
    let surface = predict_alpha(&fit.spec, &panel.data, &fit.params)?;
    write_alpha_csv(out.join("alpha_hat.csv"), &panel.data.ids, &surface)?;
    Ok(())
}

fn read_fit(path: &Path) -> Outcome<FitFile> {
    let text = fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    let file: FitFile = serde_json::from_str(&text).map_err(|e| user(format!("{}: {e}", path.display())))?;
    file.fit.params.validate(&file.fit.spec)?;
    Ok(file)
}

fn read_truth(path: &Path, family: Option<&str>, categories: Option<usize>) -> Outcome<(ModelSpec, Parameters)> {
    let text = fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    if let Ok(file) = serde_json::from_str::<FitFile>(&text) {
        return Ok((file.fit.spec, file.fit.params));
    }
    let params: Parameters = serde_json::from_str(&text).map_err(|e| user(format!("{}: {e}", path.display())))?;
    let family = family.ok_or_else(|| user("--family is required with a bare parameter file"))?;
    let fam = ResponseFamily::from_name(family, categories)?;
    let spec = ModelSpec::new(fam, params.beta.len(), params.xi.len(), mlar::DEFAULT_Q)?;
    Ok((spec, params))
}
