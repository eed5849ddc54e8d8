use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ndarray::Array2;

use super::artifacts::{instance_dirs, read_instance_dir, read_instance_manifest, write_instance_dir, Recorder};
use super::config::RunConfig;
use super::{Cli, Command};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_instance, MetricReport};
use crate::field::{checkpoint, ModelState};
use crate::geometry::io::write_ply;
use crate::objectives::CentroidPrior;
use crate::optimization::{fit_latent, init_codes, recover_missing, train, CodeBank, FitResult};
use crate::reconstruction_geometry::{correspond, edit_codes, extract_templates, reconstruct_instance};
use crate::rng::{tags, CounterRng};
use crate::shape_data::{build_archive, normalize_instance, read_archive, sample_mesh_points, write_archive, SampleArchive};
use crate::synthetic_scenes::{make_blob_family, make_chair, make_sphere_family, make_tangent_pair_family, AnalyticScene, FamilyConfig};

pub const MODEL_FILE: &str = "model.ckpt";
pub const CODES_FILE: &str = "codes.json";
pub const LOSS_FILE: &str = "loss.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Family {
    /// Tangent rounded slabs plus small ellipsoids.
    Blob,
    Sphere,
    /// Two touching spheres (categories fixed at 2).
    Tangent,
    /// Back, seat and legs.
    Chair,
}

#[derive(Debug, Args)]
pub struct MakeToyArgs {
    #[arg(long, value_enum, default_value_t = Family::Blob)]
    pub family: Family,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// Categories per instance (fixed at 3 for chairs, 2 for tangent pairs).
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    /// Separate the two slabs of the blob family instead of touching them.
    #[arg(long)]
    pub no_contact: bool,
    #[arg(long, default_value_t = 48)]
    pub resolution: usize,
    /// Also sample an MSDF1 archive per instance into `archives/`.
    #[arg(long)]
    pub archives: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Instance manifest file, or a directory of instance directories.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Archive file (`*.msdf`) or output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_surface: Option<usize>,
    #[arg(long)]
    pub n_free: Option<usize>,
    #[arg(long)]
    pub bounds: Option<f64>,
    #[arg(long)]
    pub eps_c: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of `*.msdf` archives; file stems become instance ids.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    /// `default`, `toy` or `tiny`.
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Training output directory.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Instances to extract; all of the bank by default.
    #[arg(long)]
    pub instance: Vec<String>,
    /// Code bank to use instead of the checkpoint's.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    #[arg(long, default_value_t = 1.1)]
    pub bounds: f64,
    /// Also extract the category templates.
    #[arg(long)]
    pub templates: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub archive: PathBuf,
    /// Categories to treat as missing.
    #[arg(long)]
    pub missing: Vec<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    /// Skip mesh extraction.
    #[arg(long)]
    pub no_mesh: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrespondArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Extra code banks (for example from `recover`).
    #[arg(long)]
    pub codes: Vec<PathBuf>,
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 0)]
    pub category: usize,
    /// Points sampled on the source reconstruction.
    #[arg(long, default_value_t = 2000)]
    pub points: usize,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub target_samples: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted instance directories.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth instance directories.
    #[arg(long)]
    pub gt: PathBuf,
    /// Report path (`.json`); the CSV rows go beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Categories that were missing from the fitted inputs.
    #[arg(long)]
    pub missing: Vec<usize>,
    /// Also write the per-row CSV.
    #[arg(long)]
    pub rows: bool,
    #[arg(long)]
    pub samples: Option<usize>,
    /// EMD subsample size; capped at the sample count.
    #[arg(long)]
    pub emd_points: Option<usize>,
    #[arg(long)]
    pub voxel_res: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub instance: String,
    #[arg(long, default_value_t = 0)]
    pub category: usize,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    /// Length of each random edit direction.
    #[arg(long, default_value_t = 0.1)]
    pub magnitude: f64,
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let config = RunConfig::load(cli.global.config.as_deref())?;
    let seed = cli.global.seed;
    let kernel = cli.global.kernel.name();
    match &cli.command {
        Command::MakeToy(a) => make_toy(a, config, seed, kernel),
        Command::Preprocess(a) => preprocess(a, config, seed, kernel),
        Command::Train(a) => train_cmd(a, config, seed, kernel),
        Command::Reconstruct(a) => reconstruct(a, seed, kernel),
        Command::Recover(a) => recover(a, config, seed, kernel),
        Command::Correspond(a) => correspond_cmd(a, config, seed, kernel),
        Command::Eval(a) => eval(a, config, seed, kernel),
        Command::Augment(a) => augment(a, seed, kernel),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_loss_log(path: &Path, history: &[crate::objectives::LossRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in history {
        writeln!(f, "{}", r.to_json_line())?;
    }
    Ok(())
}

fn make_toy(a: &MakeToyArgs, config: RunConfig, seed: u64, kernel: &str) -> Result<()> {
    let mut rec = Recorder::new("make-toy", &a.out, false, seed, kernel)?;
    let family = FamilyConfig {
        resolution: a.resolution,
        ..Default::default()
    };
    let scenes: Vec<AnalyticScene> = match a.family {
        Family::Blob => {
            if !(2..=6).contains(&a.m) {
                return Err(Error::Config("the blob family needs 2 to 6 categories".into()));
            }
            make_blob_family(a.n, a.m, seed, !a.no_contact, &family)
        }
        Family::Sphere => make_sphere_family(a.n, a.m, seed, (0.25, 0.4), &family),
        Family::Tangent => make_tangent_pair_family(a.n, seed, (0.25, 0.4), &family),
        Family::Chair => (0..a.n as u64).map(|i| make_chair(seed.wrapping_add(i))).collect(),
    };
    rec.config(&serde_json::json!({
        "family": format!("{:?}", a.family).to_lowercase(),
        "n": a.n,
        "m": a.m,
        "contact": !a.no_contact,
        "resolution": a.resolution,
        "sampling": config.sampling,
    }))?;
    for scene in &scenes {
        let inst = scene.instance()?;
        write_instance_dir(&mut rec, &Path::new("instances").join(&scene.instance_id), &scene.instance_id, &inst.objects)?;
        if a.archives {
            let sampling = crate::shape_data::SamplingConfig { seed, ..config.sampling.clone() };
            let archive = build_archive(&inst, &sampling)?;
            write_archive(&archive, &rec.output(format!("archives/{}.msdf", scene.instance_id))?)?;
        }
        log::info!("generated {}", scene.instance_id);
    }
    write_json(&rec.output("scenes.json")?, &scenes)?;
    rec.finish()?;
    Ok(())
}

fn preprocess(a: &PreprocessArgs, config: RunConfig, seed: u64, kernel: &str) -> Result<()> {
    let mut sampling = config.sampling;
    sampling.seed = seed;
    sampling.n_surface = a.n_surface.unwrap_or(sampling.n_surface);
    sampling.n_free = a.n_free.unwrap_or(sampling.n_free);
    sampling.bounds = a.bounds.unwrap_or(sampling.bounds);
    sampling.eps_c = a.eps_c.unwrap_or(sampling.eps_c);
    sampling.validate()?;
    let manifests: Vec<PathBuf> = if a.manifest.is_dir() {
        instance_dirs(&a.manifest)?.into_iter().map(|d| d.join("manifest.json")).collect()
    } else {
        vec![a.manifest.clone()]
    };
    if manifests.is_empty() {
        return Err(Error::Invalid(format!("no instance manifests under {}", a.manifest.display())));
    }
    let file_out = a.out.extension().and_then(|e| e.to_str()) == Some("msdf");
    if file_out && manifests.len() > 1 {
        return Err(Error::Invalid("several manifests need a directory --out".into()));
    }
    let mut rec = Recorder::new("preprocess", &a.out, file_out, seed, kernel)?;
    rec.config(&sampling)?;
    for path in &manifests {
        rec.input(path);
        let (id, meshes) = read_instance_manifest(path)?;
        let (inst, transform) = normalize_instance(&id, meshes)?;
        let archive = build_archive(&inst, &sampling)?;
        let rel = if file_out {
            PathBuf::from(a.out.file_name().expect("file name"))
        } else {
            PathBuf::from(format!("{id}.msdf"))
        };
        write_archive(&archive, &rec.output(&rel)?)?;
        log::info!(
            "{id}: {} surface, {} free, {} contact points, scale {}",
            archive.n_surface(),
            archive.n_free(),
            archive.contacts.len(),
            transform.scale
        );
    }
    rec.finish()?;
    Ok(())
}

fn load_archive_dir(dir: &Path) -> Result<(Vec<String>, Vec<SampleArchive>, Vec<PathBuf>)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("msdf"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Invalid(format!("no .msdf archives in {}", dir.display())));
    }
    let ids = paths
        .iter()
        .map(|p| p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string())
        .collect();
    let archives = paths.iter().map(|p| read_archive(p)).collect::<Result<Vec<_>>>()?;
    Ok((ids, archives, paths))
}

fn train_cmd(a: &TrainArgs, mut config: RunConfig, seed: u64, kernel: &str) -> Result<()> {
    let (ids, archives, paths) = load_archive_dir(&a.data)?;
    let m = archives[0].m as usize;
    if archives.iter().any(|x| x.m as usize != m) {
        return Err(Error::Categories("archives disagree on the number of categories".into()));
    }
    if let Some(p) = &a.model {
        config.model.preset = Some(p.clone());
    }
    config.train.seed = seed;
    config.train.epochs = a.epochs.unwrap_or(config.train.epochs);
    config.train.lr = a.lr.unwrap_or(config.train.lr);
    config.train.points_per_instance = a.points.unwrap_or(config.train.points_per_instance);
    let model = config.model.build(m)?;
    let mut rec = Recorder::new("train", &a.out, false, seed, kernel)?;
    rec.config(&serde_json::json!({ "model": model, "train": config.train, "weights": config.weights }))?;
    for p in &paths {
        rec.input(p);
    }
    let prior = CentroidPrior::from_archives(&archives.iter().collect::<Vec<_>>(), m)?;
    let mut state = ModelState::init(&model, seed)?;
    let mut bank = init_codes(&ids, m, model.code_dim, seed);
    let ckpt_root = rec.root().to_path_buf();
    let mut saved = Vec::new();
    let result = train(&archives, &mut state, &mut bank, &config.train, &config.weights, &prior, |epoch, st, b| {
        let dir = ckpt_root.join(format!("checkpoints/epoch_{:04}", epoch + 1));
        std::fs::create_dir_all(&dir)?;
        checkpoint::save(st, &dir.join(MODEL_FILE))?;
        b.save(&dir.join(CODES_FILE))?;
        saved.push(format!("checkpoints/epoch_{:04}", epoch + 1));
        log::info!("epoch {} checkpoint written", epoch + 1);
        Ok(())
    });
    rec.manifest.outputs.extend(saved);
    // the state and bank are the last finite ones even after divergence
    checkpoint::save(&state, &rec.output(MODEL_FILE)?)?;
    bank.save(&rec.output(CODES_FILE)?)?;
    write_json(&rec.output("priors.json")?, &prior)?;
    let history = match result {
        Ok(h) => h,
        Err(e) => {
            rec.finish()?;
            return Err(e);
        }
    };
    write_loss_log(&rec.output(LOSS_FILE)?, &history)?;
    if let Some(last) = history.last() {
        log::info!("final loss {}", last.terms["total"]);
    }
    rec.finish()?;
    Ok(())
}

fn load_trained(ckpt: &Path) -> Result<(ModelState, CodeBank)> {
    let state = checkpoint::load(&ckpt.join(MODEL_FILE))?;
    let bank = CodeBank::load(&ckpt.join(CODES_FILE))?;
    Ok((state, bank))
}

fn codes_of<'a>(bank: &'a CodeBank, id: &str) -> Result<&'a Array2<f64>> {
    bank.get(id).ok_or_else(|| Error::Invalid(format!("no codes for instance '{id}'")))
}

fn reconstruct(a: &ReconstructArgs, seed: u64, kernel: &str) -> Result<()> {
    let (state, mut bank) = load_trained(&a.ckpt)?;
    if let Some(p) = &a.codes {
        bank = CodeBank::load(p)?;
    }
    let mut rec = Recorder::new("reconstruct", &a.out, false, seed, kernel)?;
    rec.config(&serde_json::json!({ "resolution": a.resolution, "bounds": a.bounds, "templates": a.templates }))?;
    rec.input(&a.ckpt);
    let ids = if a.instance.is_empty() { bank.ids.clone() } else { a.instance.clone() };
    for id in &ids {
        let meshes = reconstruct_instance(&state, codes_of(&bank, id)?, a.resolution, a.bounds)?;
        write_instance_dir(&mut rec, Path::new(id), id, &meshes)?;
    }
    if a.templates {
        for (j, t) in extract_templates(&state, a.resolution, a.bounds)?.iter().enumerate() {
            write_ply(t, None, &rec.output(format!("templates/template_{j}.ply"))?)?;
        }
    }
    rec.finish()?;
    Ok(())
}

fn recover(a: &RecoverArgs, mut config: RunConfig, seed: u64, kernel: &str) -> Result<()> {
    let (state, _) = load_trained(&a.ckpt)?;
    let archive = read_archive(&a.archive)?;
    if archive.m as usize != state.config.m {
        return Err(Error::Categories(format!("archive has {} categories, model {}", archive.m, state.config.m)));
    }
    config.fit.seed = seed;
    config.fit.missing_categories = a.missing.clone();
    config.fit.iterations = a.iterations.unwrap_or(config.fit.iterations);
    config.fit.lr = a.lr.unwrap_or(config.fit.lr);
    let id = a.archive.file_stem().and_then(|s| s.to_str()).unwrap_or("instance").to_string();
    let mut rec = Recorder::new("recover", &a.out, false, seed, kernel)?;
    rec.config(&config.fit)?;
    rec.input(&a.ckpt);
    rec.input(&a.archive);
    let FitResult { codes, history } = if config.fit.missing_categories.is_empty() && archive.missing_categories().is_empty() {
        fit_latent(&state, &archive, &config.fit, None)?
    } else {
        recover_missing(&state, &archive, &config.fit)?
    };
    CodeBank {
        ids: vec![id.clone()],
        codes: vec![codes.clone()],
    }
    .save(&rec.output(CODES_FILE)?)?;
    write_loss_log(&rec.output(LOSS_FILE)?, &history)?;
    if !a.no_mesh {
        let meshes = reconstruct_instance(&state, &codes, a.resolution, crate::reconstruction_geometry::DEFAULT_BOUNDS)?;
        write_instance_dir(&mut rec, Path::new(&id), &id, &meshes)?;
    }
    rec.finish()?;
    Ok(())
}

fn correspond_cmd(a: &CorrespondArgs, mut config: RunConfig, seed: u64, kernel: &str) -> Result<()> {
    let (state, mut bank) = load_trained(&a.ckpt)?;
    for p in &a.codes {
        let extra = CodeBank::load(p)?;
        bank.ids.extend(extra.ids);
        bank.codes.extend(extra.codes);
    }
    config.correspond.seed = seed;
    config.correspond.resolution = a.resolution.unwrap_or(config.correspond.resolution);
    config.correspond.target_samples = a.target_samples.unwrap_or(config.correspond.target_samples);
    let mut rec = Recorder::new("correspond", &a.out, false, seed, kernel)?;
    rec.config(&config.correspond)?;
    rec.input(&a.ckpt);
    let (ca, cb) = (codes_of(&bank, &a.source)?, codes_of(&bank, &a.target)?);
    let src = reconstruct_instance(&state, ca, config.correspond.resolution, config.correspond.bounds)?;
    let mesh = &src
        .get(a.category)
        .ok_or_else(|| Error::Categories(format!("category {} out of range", a.category)))?
        .mesh;
    if mesh.is_empty() {
        return Err(Error::Invalid(format!("source surface of category {} is empty", a.category)));
    }
    let mut rng = CounterRng::stream(seed, &[tags::CORRESPOND, u64::MAX]);
    let source = sample_mesh_points(mesh, a.points, &mut rng)?;
    let map = correspond(&state, ca, cb, a.category, &source, &config.correspond)?;
    map.write_csv(&rec.output("correspondence.csv")?)?;
    rec.finish()?;
    Ok(())
}

fn eval(a: &EvalArgs, mut config: RunConfig, seed: u64, kernel: &str) -> Result<()> {
    config.eval.seed = seed;
    config.eval.n_samples = a.samples.unwrap_or(config.eval.n_samples);
    config.eval.n_sub = a.emd_points.unwrap_or(config.eval.n_sub).min(config.eval.n_samples);
    config.eval.voxel_resolution = a.voxel_res.unwrap_or(config.eval.voxel_resolution);
    let mut rec = Recorder::new("eval", &a.out, true, seed, kernel)?;
    rec.config(&config.eval)?;
    rec.input(&a.pred);
    rec.input(&a.gt);
    let gt_dirs = instance_dirs(&a.gt)?;
    if gt_dirs.is_empty() {
        return Err(Error::Invalid(format!("no instance directories under {}", a.gt.display())));
    }
    let mut rows = Vec::new();
    for gdir in &gt_dirs {
        let (id, gt) = read_instance_dir(gdir)?;
        let pdir = a.pred.join(gdir.file_name().expect("directory name"));
        if !pdir.join("manifest.json").is_file() {
            return Err(Error::Categories(format!("no prediction for instance '{id}'")));
        }
        let (_, pred) = read_instance_dir(&pdir)?;
        rows.extend(evaluate_instance(&id, &pred, &gt, &a.missing, &config.eval)?);
    }
    let report = MetricReport::new(config.eval.clone(), rows);
    let name = a.out.file_name().expect("report file name").to_owned();
    std::fs::write(rec.output(&name)?, report.to_json()?)?;
    if a.rows {
        std::fs::write(rec.output(Path::new(&name).with_extension("csv"))?, report.to_csv())?;
    }
    rec.finish()?;
    Ok(())
}

fn augment(a: &AugmentArgs, seed: u64, kernel: &str) -> Result<()> {
    let (state, bank) = load_trained(&a.ckpt)?;
    let base = codes_of(&bank, &a.instance)?;
    let mut rec = Recorder::new("augment", &a.out, false, seed, kernel)?;
    rec.config(&serde_json::json!({
        "instance": a.instance, "category": a.category, "count": a.count,
        "magnitude": a.magnitude, "resolution": a.resolution,
    }))?;
    rec.input(&a.ckpt);
    let mut out = CodeBank {
        ids: Vec::new(),
        codes: Vec::new(),
    };
    for k in 0..a.count {
        let mut rng = CounterRng::stream(seed, &[tags::AUGMENT, k as u64]);
        let mut dir: Vec<f64> = (0..base.ncols()).map(|_| rng.normal()).collect();
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        dir.iter_mut().for_each(|v| *v /= len);
        let codes = edit_codes(base, a.category, &dir, a.magnitude)?;
        let id = format!("{}_aug{k:02}", a.instance);
        let meshes = reconstruct_instance(&state, &codes, a.resolution, crate::reconstruction_geometry::DEFAULT_BOUNDS)?;
        write_instance_dir(&mut rec, Path::new(&id), &id, &meshes)?;
        out.ids.push(id);
        out.codes.push(codes);
    }
    out.save(&rec.output(CODES_FILE)?)?;
    rec.finish()?;
    Ok(())
}
