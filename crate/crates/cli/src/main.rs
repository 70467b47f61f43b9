//! `shapvec`: simulate or load data, train classifiers, explain them with
//! SHAP, find subgroups, draw the plots and write a report.
//!
//! Every command works inside a run directory. Settings come from a JSON
//! config (`--config`, else the run directory's stored `config.json`, else
//! defaults); command-line flags override individual keys.

mod config;
mod fail;
mod report;
mod rundir;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shapvec::models::ModelKind;
use shapvec::viz::FitOn;

use config::{CsvConfig, DataSource, ExplainOn, IdxConfig, RunConfig, SimulateConfig};
use fail::CliResult;
use rundir::{default_run_dir, RunDir, CONFIG};

#[derive(Parser, Debug)]
#[command(name = "shapvec", version, about = "SHAP analysis pipeline for multiclass classifiers")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory (default: $SHAPVEC_OUTPUT_ROOT/run-<data hash>).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the three-class simulated dataset.
    Simulate(SimulateArgs),
    /// Load a CSV table or an IDX image set.
    Load(LoadArgs),
    /// Grid-search, train and evaluate classifiers.
    Train(TrainArgs),
    /// Compute SHAP tensors for trained models.
    Explain(ExplainArgs),
    /// HDBSCAN over a flattened SHAP tensor.
    Cluster(ClusterArgs),
    /// 2-D PCA scatter of flattened SHAP vectors.
    Embed(ModelsArg),
    /// Classical waterfalls and clustered waterfall paths.
    Waterfall(WaterfallArgs),
    /// Stacked mean-|SHAP| bar charts.
    Bar(ModelsArg),
    /// Cluster × feature heatmap of raw values.
    Heatmap(HeatmapArgs),
    /// Single-page HTML summary of a completed run.
    Report,
    /// Every stage in order, from data to report.
    Run(RunArgs),
}

#[derive(Args, Debug, Default)]
struct SimulateArgs {
    #[arg(long = "n")]
    n_samples: Option<usize>,
    #[arg(long = "p")]
    n_features: Option<usize>,
    #[arg(long)]
    half_width: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct LoadArgs {
    /// CSV file with a header row.
    #[arg(long, conflicts_with_all = ["idx_images", "idx_labels"], requires = "target")]
    csv: Option<PathBuf>,
    /// Name of the class column in the CSV.
    #[arg(long)]
    target: Option<String>,
    /// Rescale CSV features to [0, 1].
    #[arg(long)]
    min_max: bool,
    #[arg(long, requires = "idx_labels")]
    idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    idx_labels: Option<PathBuf>,
    /// Read at most this many images.
    #[arg(long)]
    limit: Option<usize>,
    /// Keep only these digits, comma-separated.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    /// Model kinds, comma-separated (tree, boosted, mlp).
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    stratified_split: Option<bool>,
}

#[derive(Args, Debug, Default)]
struct ExplainArgs {
    /// Models to explain, comma-separated.
    #[arg(long = "model", value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    /// Which rows to explain: test, train or all.
    #[arg(long, value_parser = parse_explain_on)]
    on: Option<ExplainOn>,
    /// Kernel SHAP background rows.
    #[arg(long)]
    background: Option<usize>,
    /// Kernel SHAP coalition budget.
    #[arg(long)]
    coalitions: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct ClusterArgs {
    /// Model whose SHAP tensor is clustered.
    #[arg(long)]
    source: Option<ModelKind>,
    #[arg(long)]
    min_cluster_size: Option<usize>,
    #[arg(long)]
    min_samples: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct ModelsArg {
    /// Models to plot, comma-separated (default: every explained model).
    #[arg(long = "model", value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    #[command(flatten)]
    plot: PlotArgs,
}

#[derive(Args, Debug, Default)]
struct PlotArgs {
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Features shown individually; the rest are aggregated.
    #[arg(long)]
    top_n: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct WaterfallArgs {
    #[arg(long = "model", value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    /// Positions in the explained set, comma-separated.
    #[arg(long, value_delimiter = ',')]
    samples: Option<Vec<usize>>,
    /// Class index for classical waterfalls (default: predicted class).
    #[arg(long)]
    class: Option<usize>,
    /// Vectors the path projection is fitted on: segments or vertices.
    #[arg(long, value_parser = parse_fit_on)]
    fit_on: Option<FitOn>,
    #[command(flatten)]
    plot: PlotArgs,
}

#[derive(Args, Debug, Default)]
struct HeatmapArgs {
    /// Number of features (by mean |SHAP|) shown.
    #[arg(long)]
    features: Option<usize>,
    #[command(flatten)]
    plot: PlotArgs,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    #[command(flatten)]
    simulate: SimulateArgs,
    #[command(flatten)]
    train: TrainArgs,
}

fn parse_explain_on(s: &str) -> Result<ExplainOn, String> {
    match s {
        "test" => Ok(ExplainOn::Test),
        "train" => Ok(ExplainOn::Train),
        "all" => Ok(ExplainOn::All),
        other => Err(format!("expected test, train or all, got `{other}`")),
    }
}

fn parse_fit_on(s: &str) -> Result<FitOn, String> {
    s.parse().map_err(|e: shapvec::Error| e.to_string())
}

impl PlotArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = self.width {
            c.plots.width = v;
        }
        if let Some(v) = self.height {
            c.plots.height = v;
        }
        if let Some(v) = self.top_n {
            c.plots.top_n = v;
        }
    }
}

impl SimulateArgs {
    fn apply(&self, c: &mut RunConfig) {
        let mut s = match &c.data {
            DataSource::Simulate(s) => s.clone(),
            _ => SimulateConfig::default(),
        };
        if let Some(v) = self.n_samples {
            s.n_samples = v;
        }
        if let Some(v) = self.n_features {
            s.n_features = v;
        }
        if let Some(v) = self.half_width {
            s.domain_half_width = v;
        }
        c.data = DataSource::Simulate(s);
    }
}

impl TrainArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = &self.models {
            c.models.kinds = v.clone();
        }
        if let Some(v) = self.folds {
            c.models.folds = v;
        }
        if let Some(v) = self.train_fraction {
            c.split.train_fraction = v;
        }
        if let Some(v) = self.stratified_split {
            c.split.stratified = v;
        }
    }
}

fn base_config(common: &Common) -> CliResult<RunConfig> {
    if let Some(path) = &common.config {
        return RunConfig::from_file(path);
    }
    if let Some(dir) = &common.run_dir {
        let stored = dir.join(CONFIG);
        if stored.is_file() {
            return RunConfig::from_file(&stored);
        }
    }
    Ok(RunConfig::default())
}

/// Applies the command's flags to the config.
fn apply_flags(command: &Command, c: &mut RunConfig) {
    match command {
        Command::Simulate(a) => a.apply(c),
        Command::Load(a) => {
            if let Some(path) = &a.csv {
                c.data = DataSource::Csv(CsvConfig {
                    path: path.clone(),
                    target: a.target.clone().unwrap_or_default(),
                    min_max_scale: a.min_max,
                });
            } else if let (Some(images), Some(labels)) = (&a.idx_images, &a.idx_labels) {
                c.data = DataSource::Idx(IdxConfig {
                    images: images.clone(),
                    labels: labels.clone(),
                    limit: a.limit,
                    classes: a.classes.clone(),
                });
            }
        }
        Command::Train(a) => a.apply(c),
        Command::Explain(a) => {
            if let Some(v) = &a.models {
                c.shap.models = Some(v.clone());
            }
            if let Some(v) = a.on {
                c.shap.explain_on = v;
            }
            if let Some(v) = a.background {
                c.shap.background = v;
            }
            if let Some(v) = a.coalitions {
                c.shap.n_coalitions = v;
            }
        }
        Command::Cluster(a) => {
            if let Some(v) = a.source {
                c.cluster.source = v;
            }
            if let Some(v) = a.min_cluster_size {
                c.cluster.min_cluster_size = v;
            }
            if let Some(v) = a.min_samples {
                c.cluster.min_samples = v;
            }
        }
        Command::Embed(a) | Command::Bar(a) => a.plot.apply(c),
        Command::Waterfall(a) => {
            if let Some(v) = &a.samples {
                c.plots.waterfall_samples = v.clone();
            }
            if let Some(v) = a.class {
                c.plots.waterfall_class = Some(v);
            }
            if let Some(v) = a.fit_on {
                c.plots.fit_on = v;
            }
            a.plot.apply(c);
        }
        Command::Heatmap(a) => {
            if let Some(v) = a.features {
                c.plots.heatmap_features = v;
            }
            a.plot.apply(c);
        }
        Command::Report => {}
        Command::Run(a) => {
            if a.simulate.n_samples.is_some() || a.simulate.n_features.is_some() || a.simulate.half_width.is_some() {
                a.simulate.apply(c);
            }
            a.train.apply(c);
        }
    }
}

/// Model selection for per-model plotting commands; never changes the config.
fn selected(models: &Option<Vec<ModelKind>>, run: &RunDir) -> Vec<ModelKind> {
    models.clone().unwrap_or_else(|| run.config.explained_models())
}

fn execute(cli: Cli) -> CliResult<PathBuf> {
    let mut config = base_config(&cli.common)?;
    if let Some(seed) = cli.common.seed {
        config.seed = seed;
    }
    apply_flags(&cli.command, &mut config);
    config.validate()?;
    let root = cli
        .common
        .run_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| default_run_dir(&stages::data_hash(&config)));
    let mut run = RunDir::open(root, config)?;

    match &cli.command {
        Command::Simulate(_) => stages::simulate(&mut run)?,
        Command::Load(_) => stages::load(&mut run)?,
        Command::Train(_) => {
            let kinds = run.config.models.kinds.clone();
            stages::train(&mut run, &kinds)?;
        }
        Command::Explain(_) => {
            let kinds = run.config.explained_models();
            stages::explain(&mut run, &kinds)?;
        }
        Command::Cluster(_) => stages::cluster(&mut run)?,
        Command::Embed(a) => {
            let kinds = selected(&a.models, &run);
            stages::embed(&mut run, &kinds)?;
        }
        Command::Waterfall(a) => {
            let kinds = selected(&a.models, &run);
            stages::waterfall(&mut run, &kinds)?;
        }
        Command::Bar(a) => {
            let kinds = selected(&a.models, &run);
            stages::bar(&mut run, &kinds)?;
        }
        Command::Heatmap(_) => stages::heatmap(&mut run)?,
        Command::Report => report::report(&mut run)?,
        Command::Run(_) => {
            match run.config.data {
                DataSource::Simulate(_) => stages::simulate(&mut run)?,
                _ => stages::load(&mut run)?,
            }
            let kinds = run.config.models.kinds.clone();
            stages::train(&mut run, &kinds)?;
            let explained = run.config.explained_models();
            stages::explain(&mut run, &explained)?;
            stages::cluster(&mut run)?;
            stages::embed(&mut run, &explained)?;
            stages::waterfall(&mut run, &explained)?;
            stages::bar(&mut run, &explained)?;
            stages::heatmap(&mut run)?;
            report::report(&mut run)?;
        }
    }
    Ok(run.root)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(root) => {
            println!("{}", root.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("shapvec: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
