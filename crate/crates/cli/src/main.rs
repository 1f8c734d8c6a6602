use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use group3d::formats;
use group3d::harness::{generate_scene, SynthSpecFile};
use group3d::pipeline::{self, GroupingMode, PipelineConfig, PoseMode};
use group3d::provider::{LiveConfig, Provider, ProviderError, ProviderMode, GROUPING_PROMPT};
use group3d::vocabulary::{aggregate_vocabulary, parse_group_spec, parse_vocab_response};

#[derive(Parser, Debug)]
#[command(name = "group3d", version, about = "Open-vocabulary 3D object detection from posed RGB-D frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Detect objects in a scene directory and write a detection file.
    Run(RunArgs),
    /// Score a detection file against a scene's ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic scene directory from a JSON spec.
    Synth(SynthArgs),
    /// Build compatibility groups for a vocabulary file.
    Group(GroupArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    voxel_size: f64,
    #[arg(long, default_value_t = 0.01)]
    tau_iou: f64,
    #[arg(long, default_value_t = 0.10)]
    tau_cont: f64,
    #[arg(long, default_value_t = 3.0)]
    tau_support: f64,
    #[arg(long, default_value_t = 128)]
    frames: usize,
    #[arg(long, value_enum, default_value_t = PoseArg::Given)]
    pose_mode: PoseArg,
    #[arg(long, value_enum, default_value_t = GroupingArg::CompatGroups)]
    grouping: GroupingArg,
    /// Detection file; instance points go to `<out>.points`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PoseArg {
    Given,
    Estimated,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GroupingArg {
    SameCategory,
    CompatGroups,
    None,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Scene directory holding gt_boxes.txt (and gt_vertices.txt).
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.50")]
    iou: Vec<f64>,
    /// Also report instance-segmentation AP; reads `<pred>.points`.
    #[arg(long)]
    instance_seg: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["fixture", "endpoint"])))]
struct GroupArgs {
    /// One vocabulary reply per line, optionally prefixed by `<frame>:`.
    #[arg(long)]
    vocab: PathBuf,
    /// Use this file as the provider reply.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Chat-completion URL for a live provider.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to the live endpoint.
    #[arg(long, requires = "endpoint")]
    model: Option<String>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn points_path(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".points");
    PathBuf::from(s)
}

fn run(args: RunArgs) -> Result<()> {
    let config = PipelineConfig {
        voxel_size: args.voxel_size,
        tau_iou: args.tau_iou,
        tau_cont: args.tau_cont,
        tau_support: args.tau_support,
        frame_budget: args.frames,
        pose_mode: match args.pose_mode {
            PoseArg::Given => PoseMode::Given,
            PoseArg::Estimated => PoseMode::Estimated,
        },
        grouping: match args.grouping {
            GroupingArg::SameCategory => GroupingMode::SameCategory,
            GroupingArg::CompatGroups => GroupingMode::CompatGroups,
            GroupingArg::None => GroupingMode::None,
        },
        ..Default::default()
    };
    config.validate()?;
    let bundle = pipeline::load_scene(&args.scene, config.frame_budget)?;
    log::info!("loaded {} frames from {}", bundle.frames.len(), args.scene.display());
    let out = pipeline::run_pipeline(&bundle, &config)?;
    for d in &out.groups.diagnostics {
        log::warn!("groups: {d}");
    }
    formats::write_file(&args.out, formats::encode_detections(&out.detections()).as_bytes())?;
    formats::write_file(&points_path(&args.out), formats::encode_instance_points(&out.instances).as_bytes())?;
    println!("{} instances from {} fragments", out.instances.len(), out.fragment_count);
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    if args.iou.is_empty() {
        bail!("--iou needs at least one threshold");
    }
    let dets = formats::decode_detections(&formats::read_text(&args.pred)?).map_err(|e| e.at(&args.pred))?;
    let gt_path = args.gt.join(pipeline::GT_BOXES);
    let gt = formats::decode_gt_boxes(&formats::read_text(&gt_path)?).map_err(|e| e.at(&gt_path))?;
    let reports = pipeline::evaluate_boxes(&dets, &gt, &args.iou)?;
    print!("{}", pipeline::format_reports("mAP", &reports));

    if args.instance_seg {
        let pts_path = points_path(&args.pred);
        let points = formats::decode_instance_points(&formats::read_text(&pts_path)?).map_err(|e| e.at(&pts_path))?;
        let instances = pipeline::instances_from_files(dets, points)?;
        let v_path = args.gt.join(pipeline::GT_VERTICES);
        let vertices = formats::decode_gt_vertices(&formats::read_text(&v_path)?).map_err(|e| e.at(&v_path))?;
        let reports = pipeline::evaluate_instance_seg(&instances, &vertices, &args.iou)?;
        println!("# instance segmentation (simplified per-class AP, no size or score cut-offs)");
        print!("{}", pipeline::format_reports("inst-mAP", &reports));
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let text = formats::read_text(&args.spec)?;
    let mut file: SynthSpecFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.spec.display()))?;
    if let Some(seed) = args.seed {
        file.scene.seed = seed;
    }
    let scene = generate_scene(&file.scene, &file.noise)?;
    let manifest = pipeline::write_scene(&args.out, &scene.bundle)?;
    println!("wrote {} frames, {} objects to {}", manifest.frames, manifest.objects, args.out.display());
    Ok(())
}

fn group(args: GroupArgs) -> Result<()> {
    let text = formats::read_text(&args.vocab)?;
    let per_view: Vec<_> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let raw = match l.split_once(':') {
                Some((id, rest)) if id.trim().parse::<u32>().is_ok() => rest,
                _ => l,
            };
            parse_vocab_response(raw, args.k)
        })
        .collect();
    let vocab = aggregate_vocabulary(&per_view);
    if vocab.is_empty() {
        bail!("{}: no categories", args.vocab.display());
    }
    let mode = match (args.fixture, args.endpoint) {
        (Some(path), _) => ProviderMode::Fixture(path),
        (None, Some(url)) => {
            let Some(model) = args.model else { bail!("--endpoint needs --model") };
            ProviderMode::Live(LiveConfig::from_env(url, model))
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let provider = Provider::http(mode)?;
    let reply = provider.request_grouping(&vocab, GROUPING_PROMPT)?;
    let groups = parse_group_spec(&reply, &vocab);
    for d in &groups.diagnostics {
        log::warn!("{d}");
    }
    let mut out = String::new();
    for g in groups.groups() {
        let names: Vec<&str> = g.members.iter().map(|c| c.as_str()).collect();
        out.push_str(&format!("{}: [{}]\n", g.name, names.join(", ")));
    }
    match args.out {
        Some(p) => formats::write_file(&p, out.as_bytes())?,
        None => print!("{out}"),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.downcast_ref::<ProviderError>().is_some()) {
        2
    } else {
        1
    }
}

/// Error chain joined by `: `, skipping causes already quoted by their parent.
fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Group(a) => group(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::anyhow;

    #[test]
    fn points_path_appends_suffix() {
        assert_eq!(points_path(Path::new("out/dets.txt")), PathBuf::from("out/dets.txt.points"));
    }

    #[test]
    fn provider_errors_map_to_exit_two() {
        let e = anyhow!(ProviderError::Timeout { stage: group3d::provider::Stage::Grouping, attempts: 3 });
        assert_eq!(exit_code(&e), 2);
        assert_eq!(exit_code(&anyhow!("bad input")), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
