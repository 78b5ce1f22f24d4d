use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use succinct::config::Config;
use succinct::dataset::{load_dataset, write_dataset, SequenceDataset};
use succinct::descriptor::{describe, match_brute_force, Match, SamplingPattern};
use succinct::detectors::{load_external_scoremap, DetectorKind};
use succinct::geometry::{pose_errors, Pose};
use succinct::io::{load_image, load_score_png, save_png16};
use succinct::labels::{Label, LabeledMatches};
use succinct::loss::{total_loss, Side};
use succinct::klt::{format_pairs_csv, parse_pairs_csv, select_training_pairs, TrainingPair};
use succinct::net::{load_checkpoint, AdamState, FcnParams};
use succinct::nms::{nms_select, InterestPoint, InterestPointSet};
use succinct::pipeline::{estimate_pose, Extraction};
use succinct::report::{read_report, write_k_sweep, write_report};
use succinct::succinctness::{evaluate, k_sweep, sample_eval_pairs, EvalFrame};
use succinct::synth::{render_synthetic, SceneSpec};
use succinct::train::{save_training, train, LabelMethod, TrainData};
use succinct::{Error, GrayImage, ScoreMap};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "succinct", version, about = "Interest point scoring, training and succinctness evaluation")]
struct Cli {
    /// Seed for every random choice (overrides seeds from --config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Computation is sequential; values above 1 are accepted and ignored.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// JSON file overriding built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct DetectorArgs {
    #[arg(long, default_value = "harris")]
    detector: String,
    /// Network checkpoint, for --detector network.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score map PNG (single image) or directory of `%06d.png` score maps, for --detector external.
    #[arg(long)]
    external: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the score map of an image as a 16-bit PNG.
    Score {
        image: PathBuf,
        #[command(flatten)]
        det: DetectorArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the top-n interest points of an image as JSON.
    Extract {
        image: PathBuf,
        #[command(flatten)]
        det: DetectorArgs,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 10.0)]
        radius: f64,
    },
    /// Print mutual nearest-neighbour descriptor matches between two images as JSON.
    Match {
        image0: PathBuf,
        image1: PathBuf,
        #[command(flatten)]
        det: DetectorArgs,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 10.0)]
        radius: f64,
    },
    /// Estimate the relative pose of two dataset frames with P3P RANSAC.
    Pose {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        i: usize,
        #[arg(long)]
        j: usize,
        #[command(flatten)]
        det: DetectorArgs,
        #[arg(long, default_value_t = 200)]
        n: usize,
    },
    /// Succinctness evaluation of a detector on a dataset with poses and depth.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        det: DetectorArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long = "n-max")]
        n_max: Option<usize>,
        #[arg(long)]
        l: Option<usize>,
        /// Also report AUCs for these k (comma separated) on the same pairs.
        #[arg(long = "k-sweep", value_delimiter = ',')]
        k_sweep: Vec<usize>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Train the score network on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Klt)]
        method: MethodArg,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        /// Training pairs CSV from `make-pairs`; selected on the fly when absent.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long = "pairs-wanted", default_value_t = 100)]
        pairs_wanted: usize,
        /// Continue from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value = "scorenet.ckpt")]
        out: PathBuf,
    },
    /// Select training pairs by track overlap and write them as `idx0,idx1,overlap` CSV.
    MakePairs {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value = "pairs.csv")]
        out: PathBuf,
    },
    /// Render a synthetic sequence with exact poses and depth.
    Synth {
        #[arg(long, value_enum, default_value_t = Preset::Config)]
        preset: Preset,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a report and optionally rewrite its curves.
    Report {
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the training loss of one image of a pair and print its breakdown as JSON.
    Loss {
        /// Score map PNG of the scored image.
        #[arg(long)]
        score: PathBuf,
        /// `x,y,score` CSV of the scored image's points.
        #[arg(long)]
        points: PathBuf,
        /// `x,y,score` CSV of the partner image's points.
        #[arg(long = "other-points")]
        other_points: PathBuf,
        /// `idx0,idx1,label` CSV; indices are row numbers in the point files,
        /// labels are inlier, outlier or unlabeled.
        #[arg(long)]
        labels: PathBuf,
        /// Which match index refers to --points.
        #[arg(long, value_enum, default_value_t = SideArg::Zero)]
        side: SideArg,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SideArg {
    Zero,
    One,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    P3p,
    Klt,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Preset {
    /// The `scene` section of the configuration.
    Config,
    Training,
    Evaluation,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Usage(_) | CliError::Core(Error::InvalidArgument(_)) => EXIT_USAGE,
        CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
        CliError::Core(_) => EXIT_DATA,
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
}

/// Produces score maps for one detector setting.
struct Scorer {
    kind: DetectorKind,
    network: Option<FcnParams<f32>>,
    external: Option<PathBuf>,
    cfg: Config,
}

impl Scorer {
    fn new(args: &DetectorArgs, cfg: &Config) -> CliResult<Self> {
        let kind: DetectorKind = args.detector.parse()?;
        let network = match (kind, &args.checkpoint) {
            (DetectorKind::Network, Some(p)) => Some(load_checkpoint(p)?),
            (DetectorKind::Network, None) => return Err(usage("--detector network needs --checkpoint")),
            _ => None,
        };
        if kind == DetectorKind::External && args.external.is_none() {
            return Err(usage("--detector external needs --external"));
        }
        Ok(Self { kind, network, external: args.external.clone(), cfg: cfg.clone() })
    }

    fn name(&self) -> String {
        self.kind.to_string()
    }

    /// `frame` picks `%06d.png` when --external is a directory.
    fn score(&self, img: &GrayImage, frame: Option<usize>) -> CliResult<ScoreMap> {
        match self.kind {
            DetectorKind::Network => Ok(self.network.as_ref().expect("checked").forward(img)?),
            DetectorKind::External => {
                let base = self.external.as_ref().expect("checked");
                let path = match frame {
                    Some(i) if base.is_dir() => base.join(format!("{i:06}.png")),
                    _ => base.clone(),
                };
                Ok(load_external_scoremap(&path, img.dims())?)
            }
            kind => Ok(self.cfg.detectors.score(kind, img)?),
        }
    }
}

/// Min-max normalization for storage; keeps the order of scores.
fn normalize(score: &ScoreMap) -> ScoreMap {
    let (lo, hi) = (score.min_value(), score.max_value());
    let span = if hi > lo { hi - lo } else { 1.0 };
    score.map(|v| (v - lo) / span)
}

#[derive(Serialize)]
struct PointOut {
    rank: usize,
    x: usize,
    y: usize,
    score: f32,
}

#[derive(Serialize)]
struct PoseOut {
    i: usize,
    j: usize,
    matches: usize,
    inliers: usize,
    outliers: usize,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    e_rot_deg: Option<f64>,
    e_trans_m: Option<f64>,
}

fn pose_out(i: usize, j: usize, matches: usize, inliers: usize, outliers: usize, pose: &Pose, gt: Option<Pose>) -> PoseOut {
    let r = pose.rotation();
    let t = pose.translation();
    let errs = gt.map(|g| pose_errors(pose, &g));
    PoseOut {
        i,
        j,
        matches,
        inliers,
        outliers,
        rotation: [0, 1, 2].map(|a| [0, 1, 2].map(|b| r[(a, b)])),
        translation: [t.x, t.y, t.z],
        e_rot_deg: errs.map(|e| e.0),
        e_trans_m: errs.map(|e| e.1),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Core(Error::Io { path: path.to_path_buf(), source: e }))
}

/// Data rows of a CSV file; a first line that does not start with a digit is a header.
fn csv_rows(path: &Path, columns: usize) -> CliResult<Vec<Vec<String>>> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && !line.starts_with(|c: char| c.is_ascii_digit())) {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if fields.len() != columns {
            return Err(CliError::Core(Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: expected {columns} fields", n + 1),
            }));
        }
        rows.push(fields);
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(path: &Path, value: &str) -> CliResult<T> {
    value.parse().map_err(|_| {
        CliError::Core(Error::Format { path: path.to_path_buf(), reason: format!("cannot parse '{value}'") })
    })
}

/// Reads `x,y,score` rows into a ranked set; also returns each row's index in that set.
fn read_points(path: &Path, width: usize) -> CliResult<(InterestPointSet<f32>, Vec<usize>)> {
    let mut pts = Vec::new();
    for row in csv_rows(path, 3)? {
        pts.push(InterestPoint { x: field(path, &row[0])?, y: field(path, &row[1])?, score: field(path, &row[2])? });
    }
    let set = InterestPointSet::from_points(pts.clone(), width, 0.0);
    let index = pts
        .iter()
        .map(|p| set.points().iter().position(|q| q == p).expect("same points"))
        .collect();
    Ok((set, index))
}

fn frame_index(ds: &SequenceDataset, i: usize) -> CliResult<usize> {
    if i >= ds.len() {
        return Err(usage(format!("frame {i} out of range ({} frames)", ds.len())));
    }
    Ok(i)
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.eval.seed = s;
        cfg.train.seed = s;
        cfg.network.seed = s;
        cfg.scene.seed = s;
    }
    let pattern = SamplingPattern::new(cfg.eval.pipeline.pattern_seed);
    match cli.command {
        Command::Score { image, det, out } => {
            let img: GrayImage = load_image(&image)?;
            let score = Scorer::new(&det, &cfg)?.score(&img, None)?;
            save_png16(&normalize(&score), &out)?;
        }
        Command::Extract { image, det, n, radius } => {
            let img: GrayImage = load_image(&image)?;
            let score = Scorer::new(&det, &cfg)?.score(&img, None)?;
            let pts = nms_select(&score, n, radius)?;
            let out: Vec<PointOut> = pts
                .points()
                .iter()
                .enumerate()
                .map(|(r, p)| PointOut { rank: r + 1, x: p.x, y: p.y, score: p.score })
                .collect();
            print_json(&out);
        }
        Command::Match { image0, image1, det, n, radius } => {
            let scorer = Scorer::new(&det, &cfg)?;
            let img0: GrayImage = load_image(&image0)?;
            let img1: GrayImage = load_image(&image1)?;
            let p0 = nms_select(&scorer.score(&img0, None)?, n, radius)?;
            let p1 = nms_select(&scorer.score(&img1, None)?, n, radius)?;
            let matches = match_brute_force(&describe(&img0, &p0, &pattern), &describe(&img1, &p1, &pattern));
            let out: Vec<serde_json::Value> = matches
                .iter()
                .map(|m| {
                    let (a, b) = (p0.get(m.idx0), p1.get(m.idx1));
                    serde_json::json!({"p0": [a.x, a.y], "p1": [b.x, b.y], "distance": m.distance})
                })
                .collect();
            print_json(&out);
        }
        Command::Pose { dataset, i, j, det, n } => {
            let ds = load_dataset(&dataset)?;
            let (i, j) = (frame_index(&ds, i)?, frame_index(&ds, j)?);
            let scorer = Scorer::new(&det, &cfg)?;
            let depth = ds
                .depth(i, &cfg.stereo)?
                .ok_or_else(|| Error::Insufficient("pose estimation needs depth for the first frame".into()))?;
            let (img0, img1) = (ds.image(i)?, ds.image(j)?);
            let radius = cfg.eval.pipeline.nms_radius;
            let e0 = Extraction::new(&img0, &scorer.score(&img0, Some(i))?, n, radius, &pattern)?;
            let e1 = Extraction::new(&img1, &scorer.score(&img1, Some(j))?, n, radius, &pattern)?;
            let (matches, out) = estimate_pose(&e0, &e1, &depth, &ds.intrinsics, &cfg.eval.pipeline.ransac, cfg.eval.seed)?;
            let gt = ds.poses.as_ref().map(|p| Pose::relative(&p[i], &p[j]));
            let labels = &out.labels;
            print_json(&pose_out(i, j, matches.len(), labels.num_inliers(), labels.num_outliers(), &out.pose, gt));
        }
        Command::Eval { dataset, det, k, n_max, l, k_sweep: ks, out } => {
            let mut params = cfg.eval.clone();
            params.k = k.unwrap_or(params.k);
            params.n_max = n_max.unwrap_or(params.n_max);
            params.l = l.unwrap_or(params.l);
            let ds = load_dataset(&dataset)?;
            let poses = ds
                .poses
                .clone()
                .ok_or_else(|| Error::Insufficient("evaluation needs poses.txt".into()))?;
            let scorer = Scorer::new(&det, &cfg)?;
            eprintln!("dataset: {}", ds.summary());
            let frames = (0..ds.len())
                .map(|i| {
                    let image = ds.image(i)?;
                    let score = scorer.score(&image, Some(i))?;
                    let depth = ds.depth(i, &cfg.stereo)?;
                    Ok(EvalFrame { image, score, depth })
                })
                .collect::<CliResult<Vec<_>>>()?;
            let report = evaluate(&scorer.name(), &frames, &poses, &ds.intrinsics, &params)?;
            if report.short {
                eprintln!("warning: only {} candidate pairs for l = {}", report.candidates, params.l);
            }
            write_report(&report, &out)?;
            println!("AUC-{} {:.6}  AUC-1deg {:.6}  AUC-1m {:.6}", params.n_max, report.auc, report.auc_rot, report.auc_trans);
            if !ks.is_empty() {
                let sample = sample_eval_pairs(&poses, params.delta_t, params.delta_r, params.l, params.seed)?;
                let rows = k_sweep(&frames, &poses, &ds.intrinsics, &sample.pairs, &ks, &params)?;
                write_k_sweep(&rows, out.join("k_sweep.csv"))?;
                for r in rows {
                    println!("k={:<4} AUC-{} {:.6}  AUC-1deg {:.6}  AUC-1m {:.6}", r.k, params.n_max, r.auc, r.auc_rot, r.auc_trans);
                }
            }
        }
        Command::Train { dataset, method, depth, iters, pairs, pairs_wanted, init, out } => {
            let mut tcfg = cfg.train.clone();
            tcfg.method = match method {
                MethodArg::P3p => LabelMethod::P3p,
                MethodArg::Klt => LabelMethod::Klt,
            };
            tcfg.iterations = iters.unwrap_or(tcfg.iterations);
            let mut net_cfg = cfg.network;
            net_cfg.depth = depth.unwrap_or(net_cfg.depth);
            let ds = load_dataset(&dataset)?;
            eprintln!("dataset: {}", ds.summary());
            let frames = ds.images()?;
            let depths = match tcfg.method {
                LabelMethod::Klt => None,
                LabelMethod::P3p => {
                    let d = (0..ds.len())
                        .map(|i| ds.depth(i, &cfg.stereo)?.ok_or_else(|| Error::Insufficient("the p3p method needs depth".into())))
                        .collect::<Result<Vec<_>, _>>()?;
                    Some(d)
                }
            };
            let pairs: Vec<TrainingPair> = match pairs {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                    parse_pairs_csv(&text)?
                }
                None => select_training_pairs(&frames, &cfg.pairs, tcfg.seed, pairs_wanted)?,
            };
            if let Some(p) = pairs.iter().find(|p| p.idx0 >= frames.len() || p.idx1 >= frames.len()) {
                return Err(usage(format!("pair ({}, {}) out of range", p.idx0, p.idx1)));
            }
            let mut params = match init {
                Some(p) => load_checkpoint(p)?,
                None => FcnParams::init(net_cfg)?,
            };
            let mut state = AdamState::new(&params, tcfg.adam);
            let data = TrainData { frames: &frames, depths: depths.as_deref(), k: Some(&ds.intrinsics) };
            let log = train(&mut params, &mut state, &data, &pairs, &tcfg, |d| {
                let loss = d.loss().map_or("skipped".to_string(), |l| format!("{l:.5}"));
                eprintln!("iter {:>5}  pair ({}, {})  |I| {:>4}  |O| {:>4}  loss {loss}", d.iteration, d.idx0, d.idx1, d.inliers, d.outliers);
            })?;
            save_training(&params, &log, &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::MakePairs { dataset, count, out } => {
            let ds = load_dataset(&dataset)?;
            let pairs = select_training_pairs(&ds.images()?, &cfg.pairs, cfg.train.seed, count)?;
            fs::write(&out, format_pairs_csv(&pairs)).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            eprintln!("{} pairs written to {}", pairs.len(), out.display());
        }
        Command::Synth { preset, frames, out } => {
            let mut spec = match preset {
                Preset::Config => cfg.scene,
                Preset::Training => SceneSpec::training(cfg.scene.seed),
                Preset::Evaluation => SceneSpec::evaluation(cfg.scene.seed),
            };
            if let Some(f) = frames {
                spec.trajectory.frames = f;
            }
            let scene = render_synthetic(&spec)?;
            write_dataset(&scene, &out)?;
            eprintln!("{} frames written to {}", scene.images.len(), out.display());
        }
        Command::Report { report, out } => {
            let r = read_report(&report)?;
            let absent = r.pairs.iter().filter(|p| p.result.n_k.is_none()).count();
            println!("detector {}  k {}  n_max {}  pairs {} ({} absent)", r.detector, r.params.k, r.params.n_max, r.pairs.len(), absent);
            println!("AUC-{} {:.6}  AUC-1deg {:.6}  AUC-1m {:.6}", r.params.n_max, r.auc, r.auc_rot, r.auc_trans);
            if let Some(dir) = out {
                write_report(&r, dir)?;
            }
        }
        Command::Loss { score, points, other_points, labels, side } => {
            let score: ScoreMap = load_score_png(&score)?;
            let (own, own_index) = read_points(&points, score.width())?;
            let (other, other_index) = read_points(&other_points, score.width())?;
            let (index0, index1) = match side {
                SideArg::Zero => (&own_index, &other_index),
                SideArg::One => (&other_index, &own_index),
            };
            let mut matches = Vec::new();
            let mut tags = Vec::new();
            for row in csv_rows(&labels, 3)? {
                let (i, j): (usize, usize) = (field(&labels, &row[0])?, field(&labels, &row[1])?);
                let (Some(&idx0), Some(&idx1)) = (index0.get(i), index1.get(j)) else {
                    return Err(usage(format!("label row ({i}, {j}) references a missing point")));
                };
                matches.push(Match { idx0, idx1, distance: 0 });
                tags.push(match row[2].to_ascii_lowercase().as_str() {
                    "inlier" | "1" => Label::Inlier,
                    "outlier" | "0" => Label::Outlier,
                    "unlabeled" | "-1" => Label::Unlabeled,
                    other => return Err(usage(format!("unknown label '{other}'"))),
                });
            }
            let side = match side {
                SideArg::Zero => Side::Zero,
                SideArg::One => Side::One,
            };
            let labeled = LabeledMatches::new(matches, tags)?;
            print_json(&total_loss(&score, &own, &other, &labeled, side)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Core(c) => eprintln!("error: {c}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
