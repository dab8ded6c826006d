use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use svmshape::analysis::{self, DEFAULT_PRUNE_SAMPLES};
use svmshape::metrics::{self, EvalOptions, MeshInside, DEFAULT_FSCORE_D, DEFAULT_SAMPLES};
use svmshape::nets::{self, Checkpoint, NetParams};
use svmshape::shapes::{self, make_shape, Family, LabelConvention, LabeledPointSet, ShapeSpec};
use svmshape::surface::{self, Mesh, OccupancyPredictor, DEFAULT_RESOLUTION, MIN_RESOLUTION};
use svmshape::svm::{self, KernelMode, KernelParams, SolverOptions, SvmModel};
use svmshape::svm_diff;
use svmshape::trainer::{self, write_atomic, TaskDataset, TrainConfig, CHECKPOINT_FILE, LOSS_FILE};
use svmshape::Error;

/// Shape reconstruction with a differentiable kernel SVM.
#[derive(Debug, Parser)]
#[command(name = "svmshape", version)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SVMSHAPE_THREADS")]
    threads: Option<usize>,

    /// Random seed; every command is deterministic under it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate procedural shape spec files (and optional labeled samples).
    GenData(GenDataArgs),
    /// Fit a kernel SVM to a labeled point file.
    Fit(FitArgs),
    /// Extract a mesh from an SVM model or a trained checkpoint.
    Reconstruct(ReconstructArgs),
    /// Score a mesh against a ground-truth shape.
    Eval(EvalArgs),
    /// Meta-train the networks on a shape directory.
    Train(TrainArgs),
    /// Train and score every combination of N, kernel and embedding.
    Ablate(AblateArgs),
    /// Greedily remove generated points of one label.
    Prune(PruneArgs),
    /// Compare SVM gradients against finite differences on random problems.
    Gradcheck(GradcheckArgs),
    /// Reconstruct along a linear path between two shapes' features.
    Interp(InterpArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// One of: sphere, box, ellipsoid, torus, union, difference, ellipsoid-box, mixed.
    #[arg(long)]
    family: String,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write this many labeled points per shape (half uniform, half near the surface).
    #[arg(long, default_value_t = 0)]
    samples: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelArg {
    Iso,
    Aniso,
}

impl From<KernelArg> for KernelMode {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Iso => KernelMode::Isotropic,
            KernelArg::Aniso => KernelMode::Anisotropic,
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Labeled point file.
    #[arg(long)]
    points: PathBuf,
    #[arg(long, value_enum)]
    kernel: KernelArg,
    /// One value (iso) or three comma-separated values (aniso).
    #[arg(long, value_delimiter = ',', required = true)]
    sigma: Vec<f64>,
    #[arg(long, default_value_t = svm::DEFAULT_C)]
    c: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    /// SVM model file (raw points, no embedding).
    #[arg(long, conflicts_with_all = ["checkpoint", "shape"])]
    model: Option<PathBuf>,
    /// Trained checkpoint; requires --shape.
    #[arg(long, requires = "shape")]
    checkpoint: Option<PathBuf>,
    /// Shape spec file whose descriptor conditions the networks.
    #[arg(long, requires = "checkpoint")]
    shape: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    /// Level of the discriminant to extract.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    iso: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predicted OBJ mesh.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth shape spec file.
    #[arg(long)]
    gt_shape: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    /// F-score distance threshold.
    #[arg(long, default_value_t = DEFAULT_FSCORE_D)]
    fscore_d: f64,
    /// Also write the CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// key = value config file.
    #[arg(long)]
    config: PathBuf,
    /// Directory of .shape files.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint and loss log.
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64")]
    n: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "iso,aniso")]
    kernel: Vec<KernelArg>,
    #[arg(long, value_delimiter = ',', default_value = "on,off")]
    embedding: Vec<String>,
    /// Training seeds; defaults to --seed (or 0).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Uniform samples for the validation IoU.
    #[arg(long, default_value_t = 20_000)]
    iou_samples: usize,
    /// Results CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Polarity {
    Pos,
    Neg,
}

#[derive(Debug, Args)]
struct PruneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    shape: PathBuf,
    #[arg(long, value_enum)]
    polarity: Polarity,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_PRUNE_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    /// Receives trace.csv and one OBJ per step.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    h: f64,
    /// Maximum tolerated relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Print every coordinate of every trial.
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Args)]
struct InterpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    shape_a: PathBuf,
    #[arg(long)]
    shape_b: PathBuf,
    /// Number of intervals; frames + 1 meshes are written.
    #[arg(long, default_value_t = 5)]
    frames: usize,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Failure with an explicit exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Exit(1, msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(Exit(code, _)) = err.downcast_ref::<Exit>() {
        return *code;
    }
    match err.downcast_ref::<Error>() {
        Some(e) => match e {
            Error::SingleClass
            | Error::DegenerateActiveSet
            | Error::SingularKkt { .. }
            | Error::TaskSkipped(_)
            | Error::AllTasksSkipped { .. }
            | Error::UndefinedIoU
            | Error::NonFinite(_)
            | Error::TooLarge(_) => 2,
            Error::EmptySurface | Error::EmptyMesh | Error::SamplingStalled { .. } => 3,
            Error::NoConvergence { .. } => 4,
            _ => 1,
        },
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::GenData(a) => gen_data(a, seed.unwrap_or(0)),
        Command::Fit(a) => fit(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Eval(a) => eval(a, seed.unwrap_or(0)),
        Command::Train(a) => train(a, seed),
        Command::Ablate(a) => ablate(a, seed),
        Command::Prune(a) => prune(a, seed.unwrap_or(0)),
        Command::Gradcheck(a) => gradcheck(a, seed.unwrap_or(0)),
        Command::Interp(a) => interp(a),
    }
}

fn check_resolution(r: usize) -> anyhow::Result<()> {
    if r < MIN_RESOLUTION {
        return Err(usage(format!("resolution must be at least {MIN_RESOLUTION}, got {r}")));
    }
    Ok(())
}

fn read_file<T>(path: &Path, load: impl FnOnce(&Path) -> svmshape::Result<T>) -> anyhow::Result<T> {
    load(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    write_atomic(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_params(path: &Path) -> anyhow::Result<NetParams> {
    Ok(read_file(path, Checkpoint::load)?.params)
}

fn gen_data(a: GenDataArgs, seed: u64) -> anyhow::Result<()> {
    let family: Family = a.family.parse().map_err(|e: Error| usage(e.to_string()))?;
    if a.count == 0 {
        return Err(usage("--count must be positive"));
    }
    let data = TaskDataset::generate(family, a.count, seed)?;
    let mut files = Vec::new();
    for (i, task) in data.tasks.iter().enumerate() {
        files.push((format!("{}.shape", task.name), task.oracle.spec().to_kv_string()));
        if a.samples > 0 {
            let s = trainer::derive_seed(seed, 0x5a3b1e, i as u64);
            let n_uniform = a.samples / 2;
            let (pts, ys) = trainer::sample_test_points(
                &task.oracle,
                n_uniform,
                a.samples - n_uniform,
                shapes::DEFAULT_NOISE_STD,
                s,
            )?;
            let labels = ys.iter().map(|&y| y as i32).collect();
            let set = LabeledPointSet::new(pts, labels, LabelConvention::Occupancy01)?;
            files.push((format!("{}.pts", task.name), set.to_text()));
        }
    }
    ensure_dir(&a.out_dir)?;
    for (name, text) in &files {
        write_file(&a.out_dir.join(name), text)?;
    }
    println!("wrote {} shapes to {}", data.tasks.len(), a.out_dir.display());
    Ok(())
}

fn fit(a: FitArgs) -> anyhow::Result<()> {
    let set = read_file(&a.points, LabeledPointSet::load)?.to_convention(LabelConvention::SvmPm1);
    let kernel = KernelParams::new(a.kernel.into(), &a.sigma).map_err(|e| usage(e.to_string()))?;
    if !(a.c > 0.0 && a.c.is_finite()) {
        return Err(usage(format!("--c must be positive, got {}", a.c)));
    }
    let opts = SolverOptions {
        c: a.c,
        ..SolverOptions::default()
    };
    let model = svm::solve_dual_points(set.points(), &set.labels_f64(), &kernel, &opts)?;
    write_file(&a.out, &model.to_text())?;
    let support = model.alpha.iter().filter(|&&x| x > 0.0).count();
    println!("bias {:.12}", model.bias);
    println!("kkt_residual {:.3e}", model.kkt_residual);
    println!("support_vectors {support}/{}", model.len());
    Ok(())
}

fn predictor_for(checkpoint: &Path, shape: &Path) -> anyhow::Result<OccupancyPredictor> {
    let params = load_params(checkpoint)?;
    let spec = read_file(shape, ShapeSpec::load)?;
    let desc = spec.descriptor();
    Ok(OccupancyPredictor::from_descriptor(&params, &desc, &SolverOptions::default())?)
}

fn reconstruct(a: ReconstructArgs) -> anyhow::Result<()> {
    check_resolution(a.resolution)?;
    let pred = match (&a.model, &a.checkpoint, &a.shape) {
        (Some(m), _, _) => OccupancyPredictor::raw(read_file(m, SvmModel::load)?, nets::INITIAL_BETA)?,
        (None, Some(c), Some(s)) => predictor_for(c, s)?,
        _ => return Err(usage("either --model or --checkpoint with --shape is required")),
    };
    let mesh = surface::reconstruct(&pred, a.resolution, a.iso)?;
    write_file(&a.out, &mesh.to_obj())?;
    println!(
        "vertices {} triangles {} watertight {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        mesh.is_watertight()
    );
    Ok(())
}

fn eval(a: EvalArgs, seed: u64) -> anyhow::Result<()> {
    if a.samples < metrics::MIN_IOU_SAMPLES {
        return Err(usage(format!(
            "--samples must be at least {}",
            metrics::MIN_IOU_SAMPLES
        )));
    }
    let mesh = read_file(&a.pred, Mesh::load_obj)?;
    let gt = make_shape(read_file(&a.gt_shape, ShapeSpec::load)?)?;
    let opts = EvalOptions {
        iou_samples: a.samples,
        surface_samples: a.samples,
        fscore_d: a.fscore_d,
        seed,
    };
    let inside = MeshInside::new(mesh.clone())?;
    let id = a
        .pred
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pred".into());
    let report = metrics::evaluate(&id, &mesh, Some(&inside), &gt, &opts)?;
    let csv = metrics::report_csv(std::slice::from_ref(&report));
    if let Some(out) = &a.out {
        write_file(out, &csv)?;
    }
    print!("{}", csv.lines().take(2).map(|l| format!("{l}\n")).collect::<String>());
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<TrainConfig> {
    let mut cfg = TrainConfig::load(path).map_err(|e| match e {
        Error::Io(io) => anyhow!(io).context(format!("reading {}", path.display())),
        other => usage(other.to_string()),
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn train(a: TrainArgs, seed: Option<u64>) -> anyhow::Result<()> {
    let cfg = load_config(&a.config, seed)?;
    let data = read_file(&a.data, TaskDataset::load_dir)?;
    ensure_dir(&a.out)?;
    let resume = if a.resume {
        let ck_path = a.out.join(CHECKPOINT_FILE);
        let ck = read_file(&ck_path, Checkpoint::load)?;
        let loss_path = a.out.join(LOSS_FILE);
        let text = std::fs::read_to_string(&loss_path)
            .with_context(|| format!("reading {}", loss_path.display()))?;
        Some((ck, trainer::parse_loss_csv(&text, &loss_path)?))
    } else {
        None
    };
    write_file(&a.out.join("config.txt"), &cfg.to_kv_string())?;
    let every = cfg.checkpoint_every;
    let out = trainer::train(&cfg, &data, Some(&a.out), resume, &mut |r| {
        if r.step % every == 0 {
            eprintln!("step {} loss {:.6} skipped {}", r.step, r.loss, r.skipped);
        }
    })?;
    let val = data.subset(&data.validation);
    if let Some(last) = out.losses.last() {
        println!("final step {} loss {:.6}", last.step, last.loss);
    }
    if !val.is_empty() {
        let iou = trainer::mean_iou(&out.params, &val, 20_000, cfg.seed, &cfg.solver());
        println!("validation iou {iou:.6} over {} shapes", val.len());
    }
    Ok(())
}

fn parse_switch(v: &str) -> anyhow::Result<bool> {
    match v {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(usage(format!("--embedding values must be on or off, got '{v}'"))),
    }
}

fn ablate(a: AblateArgs, seed: Option<u64>) -> anyhow::Result<()> {
    let base = load_config(&a.config, None)?;
    let embeddings = a
        .embedding
        .iter()
        .map(|v| parse_switch(v))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let seeds = if a.seeds.is_empty() {
        vec![seed.unwrap_or(base.seed)]
    } else {
        a.seeds.clone()
    };
    let mut grid = Vec::new();
    for &n in &a.n {
        for &k in &a.kernel {
            for &e in &embeddings {
                for &s in &seeds {
                    let cfg = TrainConfig {
                        n_points: n,
                        kernel_mode: k.into(),
                        use_embedding: e,
                        seed: s,
                        ..base.clone()
                    };
                    cfg.validate().map_err(|e| usage(e.to_string()))?;
                    grid.push(cfg);
                }
            }
        }
    }
    let data = read_file(&a.data, TaskDataset::load_dir)?;
    let val = data.subset(&data.validation);
    if val.is_empty() {
        return Err(usage("dataset too small for a validation split"));
    }
    let mut csv = String::from("n_points,kernel,embedding,seed,final_loss,val_iou,status\n");
    for cfg in &grid {
        let (loss, iou, status) = match trainer::train(cfg, &data, None, None, &mut |_| {}) {
            Ok(out) => (
                out.losses.last().map_or(f64::NAN, |r| r.loss),
                trainer::mean_iou(&out.params, &val, a.iou_samples, cfg.seed, &cfg.solver()),
                "ok".to_string(),
            ),
            Err(Error::Io(e)) => return Err(e.into()),
            Err(e) => (f64::NAN, f64::NAN, e.to_string().replace(',', ";")),
        };
        let row = format!(
            "{},{},{},{},{:.6},{:.6},{}\n",
            cfg.n_points,
            cfg.kernel_mode.name(),
            if cfg.use_embedding { "on" } else { "off" },
            cfg.seed,
            loss,
            iou,
            status
        );
        eprint!("{row}");
        csv.push_str(&row);
    }
    write_file(&a.out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn prune(a: PruneArgs, seed: u64) -> anyhow::Result<()> {
    check_resolution(a.resolution)?;
    if a.samples == 0 {
        return Err(usage("--samples must be positive"));
    }
    let pred = predictor_for(&a.checkpoint, &a.shape)?;
    let gt = make_shape(read_file(&a.shape, ShapeSpec::load)?)?;
    let polarity = match a.polarity {
        Polarity::Pos => 1,
        Polarity::Neg => -1,
    };
    let trace = analysis::greedy_prune(&pred, &gt, polarity, a.steps, a.samples, seed, &SolverOptions::default())?;
    let mut meshes = Vec::new();
    for (i, step) in trace.steps.iter().enumerate() {
        let Some(model) = &step.model else {
            eprintln!("step {}: one class left, no mesh", i + 1);
            continue;
        };
        match surface::reconstruct(&pred.with_svm(model.clone()), a.resolution, 0.0) {
            Ok(mesh) => meshes.push((format!("step_{:03}.obj", i + 1), mesh.to_obj())),
            Err(Error::EmptySurface) => eprintln!("step {}: empty surface, no mesh", i + 1),
            Err(e) => return Err(e.into()),
        }
    }
    ensure_dir(&a.out_dir)?;
    for (name, text) in &meshes {
        write_file(&a.out_dir.join(name), text)?;
    }
    let csv = trace.to_csv();
    write_file(&a.out_dir.join("trace.csv"), &csv)?;
    println!("base_iou {:.6}", trace.base_iou);
    print!("{csv}");
    Ok(())
}

fn gradcheck(a: GradcheckArgs, seed: u64) -> anyhow::Result<()> {
    if a.trials == 0 {
        return Err(usage("--trials must be positive"));
    }
    let trials = svm_diff::gradcheck_trials(seed, a.trials, a.h)?;
    let mut worst: Option<(f64, u64, String)> = None;
    let mut counted = 0;
    for t in &trials {
        let r = &t.report;
        println!(
            "seed {} status {:?} margin {:.3e} max_rel_err {:.3e}{}",
            t.seed,
            r.status,
            r.active_set_margin,
            r.max_rel_err,
            if t.counted { "" } else { " (excluded)" }
        );
        if a.verbose {
            print!("{}", r.to_table());
        }
        if t.counted {
            counted += 1;
            if worst.as_ref().is_none_or(|w| r.max_rel_err > w.0) {
                worst = Some((
                    r.max_rel_err,
                    t.seed,
                    r.worst_coordinate.clone().unwrap_or_default(),
                ));
            }
        }
    }
    let Some((err, s, coord)) = worst else {
        bail!(Exit(2, "no active-set-stable trials".into()));
    };
    println!("checked {counted}/{} trials", trials.len());
    println!("max_rel_err {err:.3e} (seed {s}, {coord})");
    if err > a.tol {
        return Err(Exit(4, format!("relative error {err:.3e} exceeds {:.1e}", a.tol)).into());
    }
    Ok(())
}

fn interp(a: InterpArgs) -> anyhow::Result<()> {
    check_resolution(a.resolution)?;
    if a.frames == 0 {
        return Err(usage("--frames must be positive"));
    }
    let params = load_params(&a.checkpoint)?;
    let la = nets::feature_forward(&params, &read_file(&a.shape_a, ShapeSpec::load)?.descriptor())?;
    let lb = nets::feature_forward(&params, &read_file(&a.shape_b, ShapeSpec::load)?.descriptor())?;
    let mut meshes = Vec::new();
    for i in 0..=a.frames {
        let t = i as f64 / a.frames as f64;
        let lambda = nets::interpolate_features(&la, &lb, t)?;
        let pred = OccupancyPredictor::from_lambda(&params, &lambda, &SolverOptions::default())?;
        let mesh = surface::reconstruct(&pred, a.resolution, 0.0)?;
        println!("frame {i} t {t:.4} triangles {}", mesh.triangles.len());
        meshes.push((format!("frame_{i:03}.obj"), mesh.to_obj()));
    }
    ensure_dir(&a.out_dir)?;
    for (name, text) in &meshes {
        write_file(&a.out_dir.join(name), text)?;
    }
    Ok(())
}
