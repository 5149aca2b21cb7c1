//! `gmmd`: Gram-MMD realism scoring, degradation sweeps and experiments.

mod backbones;
mod commands;
mod error;
mod output;
mod plot;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use gmmd_core::kernel::KernelKind;
use gmmd_core::protocol::AnchorMode;

use backbones::BackboneRef;
use commands::Ctx;
use spec::RunSpec;

#[derive(Parser)]
#[command(name = "gmmd", version = gmmd_core::VERSION, about = "Gram-MMD realism metric toolkit")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the resolved plan as JSON and exit without computing.
    #[arg(long, global = true)]
    dry_run: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

fn parse_kernel(s: &str) -> Result<KernelKind, String> {
    s.parse().map_err(|e: gmmd_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<AnchorMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|e| e.to_string())
}

#[derive(Args, Default)]
struct Common {
    /// Run-spec JSON; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output folder (default: current folder).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gram-vector cache root (default: $GMMD_CACHE_DIR, else <out>/cache).
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Default)]
struct Model {
    /// `pixel-patch`, `toy:<id>:<layers>` or an ONNX sidecar JSON.
    #[arg(long)]
    backbone: Option<BackboneRef>,
    #[arg(long)]
    layer: Option<usize>,
}

#[derive(Args, Default)]
struct Bandwidth {
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<KernelKind>,
    /// Multiple of the median-heuristic bandwidth; repeat or comma-separate.
    #[arg(long = "gamma-factor", value_delimiter = ',')]
    gamma_factors: Vec<f64>,
    /// Absolute RBF bandwidth.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args, Default)]
struct Protocol {
    /// Clean reference images.
    #[arg(long)]
    refs: Option<PathBuf>,
    /// `reference` (anchor = the references) or `independent`.
    #[arg(long, value_parser = parse_mode)]
    anchor_mode: Option<AnchorMode>,
    /// Anchor images for the independent mode.
    #[arg(long)]
    anchor_images: Option<PathBuf>,
    /// Degradation types, comma-separated (default: all 20).
    #[arg(long, value_delimiter = ',')]
    types: Vec<u8>,
    #[arg(long)]
    epsilon_floor: Option<f64>,
    #[arg(long)]
    max_exact_pairs: Option<usize>,
}

#[derive(Args)]
struct DegradeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    refs: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    types: Vec<u8>,
}

#[derive(Args)]
struct AnchorArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: Model,
    /// Images to fit the anchor on.
    #[arg(long, visible_alias = "images")]
    anchor_images: Option<PathBuf>,
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<KernelKind>,
    #[arg(long)]
    epsilon_floor: Option<f64>,
    #[arg(long)]
    max_exact_pairs: Option<usize>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    backbone: Option<BackboneRef>,
    /// Layers to cache; repeat or comma-separate (default: all).
    #[arg(long = "layer", value_delimiter = ',')]
    layers: Vec<usize>,
    #[arg(long)]
    images: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    common: Common,
    /// Fitted anchor (`anchor.gmmd`).
    #[arg(long)]
    anchor: Option<PathBuf>,
    /// Evaluation images or a dumped vector folder.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[command(flatten)]
    bandwidth: Bandwidth,
    /// Raw-embedding baseline: anchor embeddings (NPY, one row per image).
    #[arg(long)]
    anchor_embeddings: Option<PathBuf>,
    #[arg(long)]
    eval_embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct MetaArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: Model,
    #[command(flatten)]
    bandwidth: Bandwidth,
    #[command(flatten)]
    protocol: Protocol,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
    /// Backbones to sweep; repeat for several.
    #[arg(long = "backbone")]
    backbones: Vec<BackboneRef>,
    #[command(flatten)]
    bandwidth: Bandwidth,
    #[command(flatten)]
    protocol: Protocol,
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Args)]
struct GroupArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    anchor: Option<PathBuf>,
    /// Opinion-score CSV.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Folder holding the listed images.
    #[arg(long)]
    images: Option<PathBuf>,
    #[command(flatten)]
    bandwidth: Bandwidth,
    #[arg(long)]
    group_size: Option<usize>,
    /// Put the highest opinion scores in group 0.
    #[arg(long)]
    invert_order: bool,
    #[arg(long)]
    permutations: Option<usize>,
}

#[derive(Args)]
struct RaiseArgs {
    #[command(flatten)]
    group: GroupArgs,
    /// `source` values to keep; repeat or comma-separate.
    #[arg(long = "source", value_delimiter = ',')]
    sources: Vec<String>,
    /// Keep `real` rows too when no sources are given.
    #[arg(long)]
    include_real: bool,
}

#[derive(Args)]
struct InversionArgs {
    #[command(flatten)]
    common: Common,
    /// `inversion.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Use a fitted anchor instead of fitting on the manifest's anchor folder.
    #[arg(long)]
    anchor: Option<PathBuf>,
    #[command(flatten)]
    model: Model,
    #[command(flatten)]
    bandwidth: Bandwidth,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// `meta_results.csv` from `meta` or `grid`.
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the 20 x 10 degraded copies of a reference folder.
    Degrade(DegradeArgs),
    /// Fit an anchor model on a folder of real images.
    Anchor(AnchorArgs),
    /// Compute and cache Gram vectors.
    Features(FeaturesArgs),
    /// Score an evaluation folder against an anchor.
    Score(ScoreArgs),
    /// Severity-monotonicity protocol for one backbone layer.
    Meta(MetaArgs),
    /// Protocol over every backbone, layer and bandwidth.
    Grid(GridArgs),
    /// DMOS-ranked group experiment.
    Kadid(GroupArgs),
    /// MOS group experiment.
    Raise(RaiseArgs),
    /// Real-vs-synthetic inversion check.
    Inversion(InversionArgs),
    /// Top-k table from a results CSV.
    Report(ReportArgs),
}

impl Common {
    fn apply(&self, s: &mut RunSpec) {
        s.out = self.out.clone();
        s.seed = self.seed;
        s.cache = self.cache.clone();
    }
}

impl Model {
    fn apply(&self, s: &mut RunSpec) {
        s.backbone = self.backbone.clone();
        s.layer = self.layer;
    }
}

impl Bandwidth {
    fn apply(&self, s: &mut RunSpec) {
        s.kernel = self.kernel;
        s.gamma_factors = self.gamma_factors.clone();
        s.gamma = self.gamma;
    }
}

impl Protocol {
    fn apply(&self, s: &mut RunSpec) {
        s.refs = self.refs.clone();
        s.anchor_mode = self.anchor_mode;
        s.anchor_images = self.anchor_images.clone();
        s.types = self.types.clone();
        s.epsilon_floor = self.epsilon_floor;
        s.max_exact_pairs = self.max_exact_pairs;
    }
}

impl GroupArgs {
    fn apply(&self, s: &mut RunSpec) {
        self.common.apply(s);
        self.bandwidth.apply(s);
        s.anchor = self.anchor.clone();
        s.manifest = self.manifest.clone();
        s.images = self.images.clone();
        s.group_size = self.group_size;
        s.invert_order = self.invert_order.then_some(true);
        s.permutations = self.permutations;
    }
}

type Runner = fn(&Ctx, &RunSpec) -> Result<()>;

/// The flag values as a spec, the `--spec` file, and the command to run.
fn resolve(command: &Command) -> (RunSpec, Option<PathBuf>, Runner) {
    use commands::{anchor, degrade, experiments, meta};
    let mut s = RunSpec::default();
    let (file, run): (&Option<PathBuf>, Runner) = match command {
        Command::Degrade(a) => {
            a.common.apply(&mut s);
            s.refs = a.refs.clone();
            s.types = a.types.clone();
            (&a.common.spec, degrade::run)
        }
        Command::Anchor(a) => {
            a.common.apply(&mut s);
            a.model.apply(&mut s);
            s.anchor_images = a.anchor_images.clone();
            s.kernel = a.kernel;
            s.epsilon_floor = a.epsilon_floor;
            s.max_exact_pairs = a.max_exact_pairs;
            (&a.common.spec, anchor::run_anchor)
        }
        Command::Features(a) => {
            a.common.apply(&mut s);
            s.backbone = a.backbone.clone();
            s.layers = a.layers.clone();
            s.images = a.images.clone();
            (&a.common.spec, anchor::run_features)
        }
        Command::Score(a) => {
            a.common.apply(&mut s);
            a.bandwidth.apply(&mut s);
            s.anchor = a.anchor.clone();
            s.eval = a.eval.clone();
            s.anchor_embeddings = a.anchor_embeddings.clone();
            s.eval_embeddings = a.eval_embeddings.clone();
            (&a.common.spec, anchor::run_score)
        }
        Command::Meta(a) => {
            a.common.apply(&mut s);
            a.model.apply(&mut s);
            a.bandwidth.apply(&mut s);
            a.protocol.apply(&mut s);
            (&a.common.spec, meta::run_meta)
        }
        Command::Grid(a) => {
            a.common.apply(&mut s);
            a.bandwidth.apply(&mut s);
            a.protocol.apply(&mut s);
            s.backbones = a.backbones.clone();
            s.top_k = a.top_k;
            (&a.common.spec, meta::run_grid)
        }
        Command::Kadid(a) => {
            a.apply(&mut s);
            (&a.common.spec, experiments::run_kadid)
        }
        Command::Raise(a) => {
            a.group.apply(&mut s);
            s.sources = a.sources.clone();
            s.include_real = a.include_real.then_some(true);
            (&a.group.common.spec, experiments::run_raise)
        }
        Command::Inversion(a) => {
            a.common.apply(&mut s);
            a.model.apply(&mut s);
            a.bandwidth.apply(&mut s);
            s.manifest = a.manifest.clone();
            s.anchor = a.anchor.clone();
            (&a.common.spec, experiments::run_inversion)
        }
        Command::Report(a) => {
            a.common.apply(&mut s);
            s.results = a.results.clone();
            s.top_k = a.top_k;
            (&a.common.spec, meta::run_report)
        }
    };
    (s, file.clone(), run)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(error::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let (flags, file, runner) = resolve(&cli.command);
    let mut spec = match file {
        Some(p) => RunSpec::load(&p)?,
        None => RunSpec::default(),
    };
    spec.overlay(&flags);
    runner(&Ctx { dry_run: cli.dry_run }, &spec)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error::exit_code(&e) as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_land_in_the_spec() {
        let cli = Cli::parse_from([
            "gmmd", "grid", "--backbone", "pixel-patch", "--backbone", "toy:t:2", "--gamma-factor", "0.5,2",
            "--refs", "r", "--types", "1,8", "--anchor-mode", "independent",
        ]);
        let (s, file, _) = resolve(&cli.command);
        assert!(file.is_none());
        assert_eq!(s.backbones.len(), 2);
        assert_eq!(s.gamma_factors, [0.5, 2.0]);
        assert_eq!(s.types, [1, 8]);
        assert_eq!(s.anchor_mode, Some(AnchorMode::Independent));
        assert_eq!(s.refs, Some(PathBuf::from("r")));
    }

    #[test]
    fn unset_switches_do_not_override_the_file() {
        let cli = Cli::parse_from(["gmmd", "raise", "--spec", "x.json"]);
        let (flags, file, _) = resolve(&cli.command);
        assert_eq!(file, Some(PathBuf::from("x.json")));
        let mut s = RunSpec {
            include_real: Some(true),
            invert_order: Some(true),
            ..Default::default()
        };
        s.overlay(&flags);
        assert_eq!(s.include_real, Some(true));
        assert_eq!(s.invert_order, Some(true));
    }

    #[test]
    fn kernel_names_parse() {
        assert_eq!(parse_kernel("RBF"), Ok(KernelKind::Rbf));
        assert_eq!(parse_kernel("poly"), Ok(KernelKind::Polynomial));
        assert!(parse_kernel("gauss").is_err());
    }
}
