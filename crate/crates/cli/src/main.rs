//! `texbake` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use texbake::backproject::{chart_mask, uv_coverage, CommittedTexture, UvTexture};
use texbake::camera::{front_back_pair, fibonacci_lattice};
use texbake::generator::{from_uri, MockGenerator, MockKind, RemoteConfig};
use texbake::imaging::decode_png;
use texbake::mesh::{load_mesh, normalize, TriMesh};
use texbake::pipeline::{
    enhance_texture_observed, texture_mesh_observed, write_outputs, write_texture_png, IntermediateDumper, NoObserver,
    PipelineConfig, PipelineError, PipelineObserver, TextureOutcome,
};
use texbake::viewsel::{selection_order_from, simulate_view, CandidateSet};

const DEFAULT_GENERATOR_URL: &str = "http://127.0.0.1:8000";
const URL_ENV: &str = "MAT_GENERATOR_URL";

#[derive(Parser)]
#[command(name = "texbake", version, about = "Paint textures onto UV-mapped meshes with a depth-aware image generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Texture a mesh from a text prompt.
    Texture(TextureArgs),
    /// Refine an existing texture by partially regenerating every view.
    Enhance(EnhanceArgs),
    /// Print the view order the pipeline would use, without generating.
    Views(ViewsArgs),
    /// Time the non-generative phases over repeated mock runs.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct MeshArgs {
    /// Input OBJ with per-corner texture coordinates.
    #[arg(long, value_name = "PATH")]
    mesh: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Seed for the generator; later views use seed + stage - 1.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total views including the front/back pair.
    #[arg(long, default_value_t = 6)]
    views: usize,
    /// Candidate cameras on a Fibonacci sphere.
    #[arg(long, default_value_t = 32)]
    candidates: usize,
    #[arg(long, default_value_t = 1024)]
    texture_size: usize,
    /// Resolution of every render.
    #[arg(long, default_value_t = 1024)]
    render_size: usize,
    /// Generator resolution; the object crop is resized to it.
    #[arg(long, default_value_t = 512)]
    gen_size: usize,
    /// Pixels whose normal makes cos < tau with the view direction are not splatted.
    #[arg(long, default_value_t = 0.3)]
    tau_keep: f64,
    /// Depth difference above which an unculled pixel counts as an internal face.
    #[arg(long, default_value_t = 1e-3)]
    depth_eps: f64,
    /// Stop adding views once this fraction of the UV chart is textured.
    #[arg(long, default_value_t = 0.98)]
    coverage_stop: f64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            n_views: self.views,
            n_candidates: self.candidates,
            texture_size: self.texture_size,
            render_size: self.render_size,
            gen_size: self.gen_size,
            tau_keep: self.tau_keep,
            depth_diff_eps: self.depth_eps,
            coverage_stop: self.coverage_stop,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Text description of the object.
    #[arg(long)]
    prompt: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// mock:flat | mock:depthshade | mock:checker | http:<url> (bare `http` uses $MAT_GENERATOR_URL).
    #[arg(long, value_name = "URI", default_value = "http")]
    generator: String,
    /// Per-request timeout for http generators, in seconds.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
    /// Write per-stage depth/mask/normal/rgb images and records.
    #[arg(long)]
    dump_intermediates: bool,
}

#[derive(Args)]
struct TextureArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    gen: GenerateArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct EnhanceArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    gen: GenerateArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Texture PNG to refine, texture_size square.
    #[arg(long, value_name = "PATH")]
    init_texture: Option<PathBuf>,
    /// Noise strength in [0, 1]; 1 regenerates from scratch.
    #[arg(long, default_value_t = 0.5)]
    strength: f64,
}

#[derive(Args)]
struct ViewsArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Repetitions.
    #[arg(long, default_value_t = 5)]
    reps: usize,
}

enum Failure {
    Validation(String),
    Generator(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Generator { .. } => Failure::Generator(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

fn validation(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::Validation(format!("missing required flag --{flag}")))
}

fn setup(mesh: &MeshArgs, cfg: &ConfigArgs) -> Result<(TriMesh, PipelineConfig), Failure> {
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().map_err(validation)?;
    }
    let path = require(mesh.mesh.as_ref(), "mesh")?;
    let mesh = load_mesh(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    let config = cfg.config();
    config.validate().map_err(validation)?;
    Ok((mesh, config))
}

fn generator(args: &GenerateArgs) -> Result<Box<dyn texbake::ImageGenerator>, Failure> {
    let default_url = std::env::var(URL_ENV).unwrap_or_else(|_| DEFAULT_GENERATOR_URL.to_string());
    let remote = RemoteConfig { timeout: Duration::from_secs(args.timeout.max(1)), ..Default::default() };
    from_uri(&args.generator, &default_url, remote).map_err(validation)
}

fn finish(
    result: Result<TextureOutcome, PipelineError>,
    mesh: &TriMesh,
    args: &GenerateArgs,
) -> Result<(), Failure> {
    let outcome = match result {
        Ok(o) => o,
        Err(PipelineError::Generator { stage, source, partial }) => {
            if args.dump_intermediates {
                let path = args.out.join("partial_texture.png");
                if let Err(e) = write_texture_png(&partial, &path) {
                    log::warn!("could not write {}: {e}", path.display());
                }
            }
            return Err(Failure::Generator(format!("stage {stage}: {source}")));
        }
        Err(e) => return Err(e.into()),
    };
    write_outputs(&args.out, mesh, &outcome.texture, &outcome.stages).map_err(validation)?;
    let summary = json!({
        "texture": args.out.join("texture.png"),
        "views": outcome.stages.len(),
        "prefill_coverage": outcome.prefill_coverage,
        "final_coverage": outcome.final_coverage,
        "fill_rounds": outcome.fill_rounds,
        "timings": outcome.timings,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn observer(args: &GenerateArgs) -> Box<dyn PipelineObserver> {
    if args.dump_intermediates {
        Box::new(IntermediateDumper::new(&args.out))
    } else {
        Box::new(NoObserver)
    }
}

fn texture(args: TextureArgs) -> Result<(), Failure> {
    let (mesh, cfg) = setup(&args.mesh, &args.cfg)?;
    let prompt = require(args.gen.prompt.as_deref(), "prompt")?;
    let gen = generator(&args.gen)?;
    std::fs::create_dir_all(&args.gen.out).map_err(validation)?;
    let result = texture_mesh_observed(&mesh, prompt, &cfg, gen.as_ref(), observer(&args.gen).as_mut());
    finish(result, &mesh, &args.gen)
}

fn load_texture(path: &Path) -> Result<CommittedTexture, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    let img = decode_png(&bytes).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?.to_rgb8();
    if img.width() != img.height() {
        return Err(Failure::Validation(format!("{}: texture must be square", path.display())));
    }
    Ok(CommittedTexture::from_rgb8(&img))
}

fn enhance(args: EnhanceArgs) -> Result<(), Failure> {
    let (mesh, cfg) = setup(&args.mesh, &args.cfg)?;
    let prompt = require(args.gen.prompt.as_deref(), "prompt")?;
    let lq = load_texture(require(args.init_texture.as_deref(), "init-texture")?)?;
    let gen = generator(&args.gen)?;
    std::fs::create_dir_all(&args.gen.out).map_err(validation)?;
    let result =
        enhance_texture_observed(&mesh, &lq, prompt, args.strength, &cfg, gen.as_ref(), observer(&args.gen).as_mut());
    finish(result, &mesh, &args.gen)
}

fn views(args: ViewsArgs) -> Result<(), Failure> {
    let (mesh, cfg) = setup(&args.mesh, &args.cfg)?;
    let (mesh, _) = normalize(&mesh).map_err(validation)?;
    let params = cfg.selection_params();
    let chart = chart_mask(&mesh, cfg.texture_size);
    let mut tex = UvTexture::new(cfg.texture_size);
    let mut rows = Vec::new();
    let (front, back) = front_back_pair(cfg.radius);
    for pose in [front, back] {
        simulate_view(&mesh, &pose.with_image_size(params.image_size), &params.gates, &mut tex);
        rows.push(json!({
            "stage": 1, "candidate": null, "label": pose.label(),
            "azimuth": pose.azimuth, "elevation": pose.elevation,
            "coverage": uv_coverage(&tex.mask(), &chart),
        }));
    }
    let poses = fibonacci_lattice(cfg.n_candidates, cfg.radius).map_err(validation)?;
    let mut cands = CandidateSet::new(poses.clone());
    for (k, i) in selection_order_from(&mesh, &params, &mut cands, &mut tex, cfg.n_views.saturating_sub(2))
        .map_err(validation)?
        .into_iter()
        .enumerate()
    {
        let pose = poses[i];
        let mut single = UvTexture::new(cfg.texture_size);
        simulate_view(&mesh, &pose.with_image_size(params.image_size), &params.gates, &mut single);
        rows.push(json!({
            "stage": k + 2, "candidate": i, "label": pose.label(),
            "azimuth": pose.azimuth, "elevation": pose.elevation,
            "single_view_coverage": uv_coverage(&single.mask(), &chart),
        }));
    }
    // Cumulative coverage after each greedy step, replayed in order.
    let mut replay = UvTexture::new(cfg.texture_size);
    for row in rows.iter_mut() {
        let pose = texbake::CameraPose::new(row["azimuth"].as_f64().unwrap(), row["elevation"].as_f64().unwrap(), cfg.radius);
        simulate_view(&mesh, &pose.with_image_size(params.image_size), &params.gates, &mut replay);
        row["coverage"] = json!(uv_coverage(&replay.mask(), &chart));
    }
    println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
    Ok(())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    let (mesh, cfg) = setup(&args.mesh, &args.cfg)?;
    if args.reps == 0 {
        return Err(Failure::Validation("--reps must be at least 1".into()));
    }
    let gen = MockGenerator::new(MockKind::Flat);
    let mut phases: [(&str, Vec<f64>); 5] =
        [("rasterize", vec![]), ("select", vec![]), ("splat", vec![]), ("uv_fill", vec![]), ("total", vec![])];
    for _ in 0..args.reps {
        let out = texture_mesh_observed(&mesh, "benchmark", &cfg, &gen, &mut NoObserver)?;
        let t = out.timings;
        // Generator time is excluded; the mock is not representative of a real backend.
        for (name, samples) in phases.iter_mut() {
            samples.push(match *name {
                "rasterize" => t.rasterize,
                "select" => t.select,
                "splat" => t.splat,
                "uv_fill" => t.uv_fill,
                _ => t.total - t.generate,
            });
        }
    }
    let report: serde_json::Map<String, serde_json::Value> = phases
        .iter()
        .map(|(name, samples)| (name.to_string(), json!({ "samples": samples, "median": median(samples) })))
        .collect();
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: {first}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Texture(a) => texture(a),
        Command::Enhance(a) => enhance(a),
        Command::Views(a) => views(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Generator(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
