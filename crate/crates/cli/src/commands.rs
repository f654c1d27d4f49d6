use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lsdebm::data::{degrade_thick_slice, gen_2d_shapes, gen_vertebra_dataset, Axis, DegradeParams, VoxelGrid, IMAGE_SIZE};
use lsdebm::io::{
    load_checkpoint, read_voxb, save_checkpoint, write_eval_csv, write_manifest_csv, write_slice_montage,
    write_trace_csv, write_training_log, write_voxb, EvalRow, ManifestRow,
};
use lsdebm::metrics::{cohen_kappa, confusion, dice, nmi, sensitivity, specificity, volumetric_similarity};
use lsdebm::models::{fit_with_hook, Model, ModelKind};
use lsdebm::{Rng, Tensor};

use crate::config::{usage, RunConfig};
use crate::{EvalArgs, GenerateArgs, MakeDataArgs, ReconstructArgs, TraceArgs, TrainArgs};

/// Binarization threshold for decoder probabilities.
pub const THRESHOLD: f64 = 0.5;

pub fn parse_dims(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split([',', 'x']).map(str::trim).collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.parse::<usize>().map_err(|_| usage(format!("bad dimension {p:?} in {s:?}"))))
        .collect::<Result<_>>()?;
    let dims = match nums.as_slice() {
        [n] => [*n; 3],
        [x, y, z] => [*x, *y, *z],
        _ => return Err(usage(format!("dims {s:?}: expected one or three sizes"))),
    };
    if dims.contains(&0) {
        return Err(usage(format!("dims {s:?} must be positive")));
    }
    Ok(dims)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Sample id of a volume file: its stem without a `_hq`, `_lq` or `_pred`
/// suffix.
pub fn sample_id(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    for suffix in ["_hq", "_lq", "_pred"] {
        if let Some(id) = stem.strip_suffix(suffix) {
            return id.to_string();
        }
    }
    stem
}

/// `.voxb` files of a directory in name order, or the file itself.
pub fn voxb_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "voxb"))
        .collect();
    files.sort();
    Ok(files)
}

/// Files of `path` ending in `{suffix}.voxb`, or every `.voxb` file if none
/// does.
fn preferring(path: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let all = voxb_files(path)?;
    let tail = format!("{suffix}.voxb");
    let picked: Vec<PathBuf> = all.iter().filter(|p| p.to_string_lossy().ends_with(&tail)).cloned().collect();
    Ok(if picked.is_empty() { all } else { picked })
}

fn read_all(files: &[PathBuf]) -> Result<Vec<VoxelGrid>> {
    files
        .iter()
        .map(|f| read_voxb(f).with_context(|| format!("reading {}", f.display())))
        .collect()
}

fn common_dims(grids: &[VoxelGrid], files: &[PathBuf]) -> Result<[usize; 3]> {
    let Some(first) = grids.first() else {
        bail!("no .voxb volumes found");
    };
    for (g, f) in grids.iter().zip(files) {
        if g.dims() != first.dims() {
            bail!("{} has dims {:?}, expected {:?}", f.display(), g.dims(), first.dims());
        }
    }
    Ok(first.dims())
}

pub fn make_data(a: &MakeDataArgs) -> Result<()> {
    let dims = parse_dims(&a.dims)?;
    let (hq, axis) = if dims[2] == 1 {
        if dims[0] != IMAGE_SIZE || dims[1] != IMAGE_SIZE {
            return Err(usage(format!("2D shapes are {IMAGE_SIZE}x{IMAGE_SIZE}x1, got {dims:?}")));
        }
        let grids = gen_2d_shapes(a.n, a.seed)
            .into_iter()
            .map(|img| VoxelGrid::from_values(dims, &img.pixels, THRESHOLD))
            .collect::<lsdebm::Result<Vec<_>>>()?;
        (grids, Axis::Y)
    } else {
        (gen_vertebra_dataset(a.n, dims, a.seed)?, Axis::Z)
    };
    let params = DegradeParams {
        slab_thickness: a.slab,
        threshold: a.threshold,
        axis,
    };
    create_dir(&a.out)?;
    let mut rows = Vec::with_capacity(a.n);
    for (i, g) in hq.iter().enumerate() {
        let lq = degrade_thick_slice(g, &params).map_err(|e| usage(e.to_string()))?;
        let id = format!("{i:04}");
        let (hq_name, lq_name) = (format!("{id}_hq.voxb"), format!("{id}_lq.voxb"));
        write_voxb(a.out.join(&hq_name), g)?;
        write_voxb(a.out.join(&lq_name), &lq)?;
        rows.push(ManifestRow {
            id,
            hq: hq_name,
            lq: lq_name,
            dice: dice(&confusion(&lq, g)?).unwrap_or(f64::NAN),
        });
    }
    write_manifest_csv(a.out.join("manifest.csv"), &rows)?;
    Ok(())
}

/// Resolves defaults < config file < `--set` < dedicated flags.
pub fn resolve_config(a: &TrainArgs) -> Result<(RunConfig, ModelKind)> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &a.config.config {
        cfg.apply_file(path)?;
    }
    for pair in &a.config.overrides {
        cfg.set_pair(pair)?;
    }
    if let Some(m) = a.model {
        cfg.model = Some(m);
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let kind = cfg
        .model
        .ok_or_else(|| usage("no model given (use --model or `model =` in the config)"))?;
    cfg.validate()?;
    Ok((cfg, kind))
}

/// Trains and returns the per-epoch mean losses.
pub fn train(a: &TrainArgs) -> Result<Vec<f64>> {
    let (cfg, kind) = resolve_config(a)?;
    let files = preferring(&a.data, "_hq")?;
    let grids = read_all(&files)?;
    common_dims(&grids, &files)?;
    let data: Vec<Vec<f64>> = grids.iter().map(VoxelGrid::to_values).collect();

    create_dir(&a.out)?;
    fs::write(a.out.join("config.txt"), cfg.echo())?;
    let root = Rng::new(cfg.train.seed);
    let mut model = Model::new(kind, &cfg.train, data[0].len(), &mut root.split(0))?;
    save_checkpoint(a.out.join("epoch_0000.lsdc"), &model)?;
    if cfg.train.epochs == 0 {
        write_training_log(a.out.join("train_log.csv"), &[])?;
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    let save_every = cfg.save_every;
    let out = a.out.clone();
    let result = fit_with_hook(
        &mut model,
        &data,
        &cfg.train,
        &mut root.split(1),
        |r| rows.push(r),
        |epoch, m| {
            if save_every > 0 && (epoch + 1) % save_every == 0 {
                save_checkpoint(out.join(format!("epoch_{:04}.lsdc", epoch + 1)), m)?;
            }
            Ok(())
        },
    );
    write_training_log(a.out.join("train_log.csv"), &rows)?;
    let means = result.context("training failed")?;
    save_checkpoint(a.out.join("final.lsdc"), &model)?;
    Ok(means)
}

fn load_model(ckpt: &Path, expected: Option<ModelKind>) -> Result<Model> {
    load_checkpoint(ckpt, expected).with_context(|| format!("loading {}", ckpt.display()))
}

fn default_steps(model: &Model) -> Result<usize> {
    match model {
        Model::LsdEbm(m) => Ok(m.schedule.steps()),
        Model::Lebm(m) => Ok(m.posterior_langevin.steps),
        Model::Vae(_) => Ok(0),
        Model::Ebm2d(_) => bail!("the image-space EBM cannot reconstruct"),
    }
}

fn montage_count(dims: [usize; 3]) -> usize {
    dims[2].min(8)
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let model = load_model(&a.ckpt, a.model)?;
    let files = preferring(&a.input, "_lq")?;
    let grids = read_all(&files)?;
    let dims = common_dims(&grids, &files)?;
    if grids[0].len() != model.data_dim() {
        bail!(
            "inputs have {} voxels but the model expects {}",
            grids[0].len(),
            model.data_dim()
        );
    }
    let steps = match a.steps {
        Some(s) => s,
        None => default_steps(&model)?,
    };
    let x = Tensor::from_rows(&grids.iter().map(VoxelGrid::to_values).collect::<Vec<_>>())?;
    let root = Rng::new(a.seed);
    let probs = model.reconstruct(&x, steps, &mut root.split(0), None)?;
    create_dir(&a.out)?;
    for (i, f) in files.iter().enumerate() {
        let id = sample_id(f);
        let p = probs.row(i);
        write_voxb(a.out.join(format!("{id}_pred.voxb")), &VoxelGrid::from_values(dims, p, THRESHOLD)?)?;
        write_slice_montage(a.out.join(format!("{id}_pred.pgm")), dims, p, montage_count(dims))?;
    }
    if a.trace {
        let mut mean = vec![0.0; steps];
        for i in 0..grids.len() {
            let xi = Tensor::from_rows(&[x.row(i).to_vec()])?;
            let tr = model.latent_trace(&xi, a.chains, steps, &mut root.split(1 + i as u64))?;
            for (m, v) in mean.iter_mut().zip(&tr.values) {
                *m += v / grids.len() as f64;
            }
        }
        write_trace_csv(a.out.join("trace.csv"), &[mean], false)?;
    }
    Ok(())
}

fn infer_dims(n: usize) -> Option<[usize; 3]> {
    let c = (n as f64).cbrt().round() as usize;
    if c * c * c == n {
        return Some([c; 3]);
    }
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some([s, s, 1])
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let model = load_model(&a.ckpt, a.model)?;
    let n = model.data_dim();
    let dims = match &a.dims {
        Some(d) => parse_dims(d)?,
        None => infer_dims(n).ok_or_else(|| usage(format!("cannot infer dims for {n} values; pass --dims")))?,
    };
    if dims.iter().product::<usize>() != n {
        return Err(usage(format!("dims {dims:?} do not hold {n} values")));
    }
    let samples = model.generate(a.n, &mut Rng::new(a.seed))?;
    create_dir(&a.out)?;
    for i in 0..a.n {
        let p = samples.row(i);
        write_voxb(a.out.join(format!("sample_{i:04}.voxb")), &VoxelGrid::from_values(dims, p, THRESHOLD)?)?;
        write_slice_montage(a.out.join(format!("sample_{i:04}.pgm")), dims, p, montage_count(dims))?;
    }
    Ok(())
}

fn suffixed(dir: &Path, suffix: &str) -> Result<Vec<(String, PathBuf)>> {
    let tail = format!("{suffix}.voxb");
    Ok(voxb_files(dir)?
        .into_iter()
        .filter_map(|p| {
            let name = p.file_name()?.to_string_lossy().into_owned();
            let id = name.strip_suffix(&tail)?.to_string();
            Some((id, p))
        })
        .collect())
}

/// Metric values for one pair; undefined metrics are `None`.
pub fn eval_pair(id: &str, pred: &VoxelGrid, reference: &VoxelGrid) -> Result<EvalRow> {
    let c = confusion(pred, reference)?;
    Ok(EvalRow {
        sample_id: id.to_string(),
        values: [
            dice(&c).ok(),
            volumetric_similarity(&c).ok(),
            sensitivity(&c).ok(),
            specificity(&c).ok(),
            nmi(&c).ok(),
            cohen_kappa(&c).ok(),
        ],
    })
}

pub fn eval(a: &EvalArgs) -> Result<Vec<EvalRow>> {
    let preds = suffixed(&a.pred_dir, &a.pred_suffix)?;
    let refs = suffixed(&a.ref_dir, &a.ref_suffix)?;
    let pred_ids: Vec<&String> = preds.iter().map(|(id, _)| id).collect();
    let ref_ids: Vec<&String> = refs.iter().map(|(id, _)| id).collect();
    let orphans: Vec<String> = preds
        .iter()
        .filter(|(id, _)| !ref_ids.contains(&id))
        .chain(refs.iter().filter(|(id, _)| !pred_ids.contains(&id)))
        .map(|(_, p)| p.display().to_string())
        .collect();
    if !orphans.is_empty() {
        bail!("unpaired files: {}", orphans.join(", "));
    }
    if preds.is_empty() {
        bail!("no `*{}.voxb` files in {}", a.pred_suffix, a.pred_dir.display());
    }
    let mut rows = Vec::with_capacity(preds.len());
    for (id, p) in &preds {
        let r = &refs.iter().find(|(rid, _)| rid == id).expect("paired").1;
        rows.push(eval_pair(id, &read_voxb(p)?, &read_voxb(r)?)?);
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_eval_csv(&a.out, &rows)?;
    Ok(rows)
}

pub fn trace_latent(a: &TraceArgs) -> Result<()> {
    let model = load_model(&a.ckpt, a.model)?;
    let mut files = preferring(&a.data, "_lq")?;
    files.truncate(a.inputs.max(1));
    let grids = read_all(&files)?;
    common_dims(&grids, &files)?;
    let steps = match a.steps {
        Some(s) => s,
        None => default_steps(&model)?,
    };
    let root = Rng::new(a.seed);
    let mut traces = Vec::with_capacity(a.repeats);
    for r in 0..a.repeats {
        let rng = root.split(r as u64);
        let mut mean = vec![0.0; steps];
        for (i, g) in grids.iter().enumerate() {
            let x = Tensor::from_rows(&[g.to_values()])?;
            let tr = model.latent_trace(&x, a.chains, steps, &mut rng.split(i as u64))?;
            for (m, v) in mean.iter_mut().zip(&tr.values) {
                *m += v / grids.len() as f64;
            }
        }
        traces.push(mean);
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_trace_csv(&a.out, &traces, true)?;
    Ok(())
}
