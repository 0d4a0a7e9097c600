use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edm_atlas::cli_pipeline::{self as pipe, Outcome, RunConfig};
use edm_atlas::Error;

#[derive(Parser)]
#[command(name = "edm-atlas", version, about = "Acoustic feature extraction and clustering for dance-music catalogs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize labeled fixture tracks and a manifest
    Fixtures,
    /// Extract the feature matrix for every manifest track
    Extract,
    /// Select features, cluster at a fixed k and evaluate
    Cluster,
    /// Sweep k over a range and report the consensus choice
    Sweep,
    /// Six-dimension cluster profiles with radar plots
    Profile,
    /// PCA scatter plot coloured by cluster
    Plot,
}

#[derive(Args)]
struct Opts {
    /// key=value config file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cluster count for `cluster`
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    k_min: Option<usize>,
    #[arg(long, global = true)]
    k_max: Option<usize>,
    /// kmeans, divisive or both
    #[arg(long, global = true)]
    method: Option<String>,
    /// Precomputed embedding CSV used instead of extracted features
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    restarts: Option<usize>,
    /// Bootstrap resamples for the stability score (0 disables it)
    #[arg(long, global = true)]
    bootstrap: Option<usize>,
    /// Labels CSV for `profile` and `plot`
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    /// Column-to-dimension mapping file for `profile`
    #[arg(long, global = true)]
    mapping: Option<PathBuf>,
    /// Tracks per genre for `fixtures`
    #[arg(long, global = true)]
    per_genre: Option<usize>,
    /// Track length in seconds for `fixtures`
    #[arg(long, global = true)]
    duration: Option<f64>,
}

fn build_config(o: &Opts) -> Result<RunConfig, Error> {
    let mut c = RunConfig::default();
    if let Some(path) = &o.config {
        c.apply_file(path)?;
    }
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let flags: [(&str, Option<String>); 16] = [
        ("manifest", path(&o.manifest)),
        ("out", path(&o.out)),
        ("seed", o.seed.map(|v| v.to_string())),
        ("k", o.k.map(|v| v.to_string())),
        ("k_min", o.k_min.map(|v| v.to_string())),
        ("k_max", o.k_max.map(|v| v.to_string())),
        ("method", o.method.clone()),
        ("embeddings", path(&o.embeddings)),
        ("top_k", o.top_k.map(|v| v.to_string())),
        ("workers", o.workers.map(|v| v.to_string())),
        ("restarts", o.restarts.map(|v| v.to_string())),
        ("bootstrap", o.bootstrap.map(|v| v.to_string())),
        ("labels", path(&o.labels)),
        ("mapping", path(&o.mapping)),
        ("per_genre", o.per_genre.map(|v| v.to_string())),
        ("duration", o.duration.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            c.set(key, &v)?;
        }
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let config = build_config(&cli.opts)?;
    match cli.command {
        Command::Fixtures => {
            let records = pipe::cmd_fixtures(&config, &pipe::default_fixture_genres())?;
            println!("wrote {} tracks to {}", records.len(), config.out_dir.display());
            Ok(Outcome::Success)
        }
        Command::Extract => {
            let (m, outcome) = pipe::cmd_extract(&config)?;
            println!("extracted {} tracks x {} features", m.n_rows(), m.n_cols());
            Ok(outcome)
        }
        Command::Cluster => {
            for (model, report) in pipe::cmd_cluster(&config)? {
                println!(
                    "{}: k={} nmi={:.4} ari={:.4} purity={:.4}",
                    model.method.as_str(),
                    model.k,
                    report.external.nmi,
                    report.external.ari,
                    report.external.purity
                );
            }
            Ok(Outcome::Success)
        }
        Command::Sweep => {
            let s = pipe::cmd_sweep(&config)?;
            println!("chosen_k={}", s.chosen_k);
            Ok(Outcome::Success)
        }
        Command::Profile => {
            let p = pipe::cmd_profile(&config)?;
            println!("wrote {} cluster profiles", p.len());
            Ok(Outcome::Success)
        }
        Command::Plot => {
            let path = pipe::cmd_plot(&config)?;
            println!("wrote {}", path.display());
            Ok(Outcome::Success)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EDM_ATLAS_LOG", "warn")).init();
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            pipe::error_exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
