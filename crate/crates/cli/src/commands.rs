use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vessel3d::classifier::{
    cross_validate, predict_proba, train_logreg, CvResult, ModelFile, TrainOptions,
};
use vessel3d::evaluation::{align_labels, evaluate_repeated, gen_phantom, EvalConfig, EvalReport, PhantomSpec};
use vessel3d::featurize::{featurize_pyramid, featurize_voxels, read_features, write_features, FeatureSidecar};
use vessel3d::provenance::{check_hash, file_sha256, InputRef};
use vessel3d::pyramid::{build_pyramid, PyramidConfig};
use vessel3d::sparse_coding::{
    read_dictionary, sidecar_path, train_dictionary, write_dictionary, DictLearnConfig, Dictionary,
    DictionarySidecar,
};
use vessel3d::volume_io::{
    read_annotations, read_volume, AnnotationSet, validate_annotations, write_annotations, write_volume, write_volume_as,
    ElementType, MhdHeader, Volume3,
};

use crate::config::{ClassifierConfig, PipelineConfig};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

const PREDICT_CHUNK: usize = 1 << 15;
const OBJECTIVE_TAIL: usize = 10;

/// One JSON object per finished stage on the `vessel3d::stage` log target.
fn stage_log(stage: &str, fields: Value) {
    let mut record = json!({ "stage": stage });
    if let (Some(obj), Value::Object(extra)) = (record.as_object_mut(), fields) {
        obj.extend(extra);
    }
    log::info!(target: "vessel3d::stage", "{record}");
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| vessel3d::Error::io(path, e))?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| vessel3d::Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "volume".to_string(), |s| s.to_string_lossy().into_owned())
}

/// Hash records for an MHD header and its payload.
pub fn volume_inputs(path: &Path) -> Result<Vec<InputRef>> {
    let text = fs::read_to_string(path).map_err(|e| vessel3d::Error::io(path, e))?;
    let header = MhdHeader::parse(&text)?;
    let payload = path.parent().unwrap_or(Path::new(".")).join(&header.data_file);
    Ok(vec![InputRef::from_file(path)?, InputRef::from_file(&payload)?])
}

/// Writes the phantom volume, its annotations (volume id = file stem of
/// `out`) and optionally the tube ground truth as a uint8 volume.
pub fn phantom(spec: &PhantomSpec, out: &Path, ann: &Path, truth: Option<&Path>) -> Result<()> {
    let spec = PhantomSpec {
        volume_id: stem(out),
        ..spec.clone()
    };
    let (ph, annotations) = gen_phantom(&spec)?;
    write_volume(&ph.volume, out)?;
    write_annotations(&annotations, ann)?;
    if let Some(truth) = truth {
        let data = ph.vessel.iter().map(|&v| f32::from(u8::from(v))).collect();
        write_volume_as(&Volume3::new(spec.dims, data)?, truth, ElementType::UChar)?;
    }
    stage_log(
        "phantom",
        json!({
            "volume": out, "annotations": ann, "volume_id": spec.volume_id,
            "labeled": annotations.len(), "tube_voxels": ph.vessel.iter().filter(|&&v| v).count(),
        }),
    );
    Ok(())
}

pub fn train_dict(
    volumes: &[PathBuf],
    pyramid: &PyramidConfig,
    cfg: &DictLearnConfig,
    out: &Path,
) -> Result<DictionarySidecar> {
    if volumes.is_empty() {
        return Err(CliError::Validation("train-dict needs at least one volume".into()));
    }
    cfg.validate()?;
    let mut pyramids = Vec::with_capacity(volumes.len());
    let mut inputs = Vec::new();
    for path in volumes {
        pyramids.push(build_pyramid(&read_volume(path)?, pyramid)?);
        inputs.extend(volume_inputs(path)?);
    }
    let trained = train_dictionary(&pyramids, cfg)?;
    let sha256 = write_dictionary(&trained.dictionary, out)?;
    let tail_start = trained.trace.len().saturating_sub(OBJECTIVE_TAIL);
    let sidecar = DictionarySidecar {
        format: "vessel3d-dictionary".into(),
        patch_edge: cfg.patch_edge,
        atoms: cfg.atoms,
        sha256,
        config: cfg.clone(),
        pyramid: *pyramid,
        volumes: inputs,
        patches_seen: trained.patches_seen,
        reinitialized_atoms: trained.reinitialized,
        objective_tail: trained.trace[tail_start..].to_vec(),
    };
    write_json(&sidecar, &sidecar_path(out))?;
    stage_log(
        "train-dict",
        json!({
            "dictionary": out, "sha256": sidecar.sha256, "atoms": cfg.atoms,
            "patches_seen": sidecar.patches_seen, "reinitialized_atoms": sidecar.reinitialized_atoms,
            "final_objective": sidecar.objective_tail.last(),
        }),
    );
    Ok(sidecar)
}

/// Reads a dictionary and fails unless its sidecar declares the file's hash.
pub fn load_checked_dictionary(path: &Path) -> Result<(Dictionary, DictionarySidecar)> {
    let (dict, actual) = read_dictionary(path)?;
    let sidecar: DictionarySidecar = read_json(&sidecar_path(path))?;
    check_hash(&format!("dictionary {}", path.display()), &sidecar.sha256, &actual)?;
    Ok((dict, sidecar))
}

/// Features for the annotated voxels of the volume when `labels` is given,
/// otherwise for every in-mask voxel.
pub fn featurize(
    dict_path: &Path,
    volume_path: &Path,
    scales: Option<usize>,
    labels: Option<&Path>,
    volume_id: Option<&str>,
    max_row_len: usize,
    out: &Path,
) -> Result<FeatureSidecar> {
    let (dict, dict_side) = load_checked_dictionary(dict_path)?;
    let pyramid = PyramidConfig {
        scales: scales.unwrap_or(dict_side.pyramid.scales),
        ..dict_side.pyramid
    };
    let vol = read_volume(volume_path)?;
    let id = volume_id.map_or_else(|| stem(volume_path), str::to_string);
    let query: Vec<[usize; 3]> = match labels {
        Some(path) => {
            let ann = read_annotations(path)?;
            // rows of other volumes in a shared file are skipped
            let own = AnnotationSet::new(ann.for_volume(&id).cloned().collect())?;
            if own.is_empty() {
                return Err(CliError::Validation(format!(
                    "{} has no annotations for volume id {id}",
                    path.display()
                )));
            }
            validate_annotations(&own, |_| Some(&vol))?;
            let q: Vec<[usize; 3]> = own.entries().iter().map(|a| a.coords()).collect();
            q
        }
        None => vol.masked_coords(),
    };
    let fm = featurize_voxels(&vol, &id, &dict, &pyramid, &query, max_row_len)?;
    let dict_hash = dict_side.sha256.clone();
    let sidecar = write_features(&fm, out, &pyramid, dict.d(), &dict_hash, &volume_inputs(volume_path)?)?;
    stage_log(
        "featurize",
        json!({
            "features": out, "sha256": sidecar.sha256, "rows": sidecar.rows,
            "row_len": sidecar.row_len, "dictionary_sha256": dict_hash,
        }),
    );
    Ok(sidecar)
}

/// Fits the classifier on all rows; the l2 strength comes from the config or
/// from cross validation.
pub fn train_clf(features: &Path, labels: &Path, cfg: &ClassifierConfig, out: &Path) -> Result<ModelFile> {
    let (fm, side) = read_features(features)?;
    let ann = read_annotations(labels)?;
    let y = align_labels(&fm, &ann)?;
    let (l2, cv): (f64, Option<CvResult>) = match cfg.l2 {
        Some(l2) => (l2, None),
        None => {
            let r = cross_validate(&fm, &y, &cfg.cv)?;
            (r.best_l2, Some(r))
        }
    };
    let options = TrainOptions { l2, ..cfg.train };
    let model = train_logreg(&fm, &y, &options)?;
    let file = ModelFile {
        format: "vessel3d-model".into(),
        model,
        options,
        dictionary_sha256: side.dictionary_sha256.clone(),
        features_sha256: side.sha256.clone(),
        labels_sha256: file_sha256(labels)?,
        scales: side.scales,
        atoms: side.atoms,
        pyramid: side.pyramid,
        training_rows: fm.num_rows(),
        cv,
    };
    write_json(&file, out)?;
    stage_log(
        "train-clf",
        json!({
            "model": out, "l2": l2, "cv": file.cv.as_ref().map(|c| &c.mean_accuracy),
            "iterations": file.model.fit.iterations, "grad_norm": file.model.fit.grad_norm,
            "converged": file.model.fit.converged,
        }),
    );
    Ok(file)
}

/// Provenance record written next to a probability volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub format: String,
    pub inputs: Vec<InputRef>,
    pub dictionary_sha256: String,
    pub model_sha256: String,
    pub threshold: f64,
    pub masked_voxels: usize,
    pub vessel_voxels: usize,
}

/// Probability and `p > threshold` segmentation for every in-mask voxel;
/// voxels outside the mask are 0 in both.
pub fn predict_volume(
    vol: &Volume3,
    dict: &Dictionary,
    model: &ModelFile,
    threshold: f64,
) -> Result<(Volume3, Volume3)> {
    let mut prob = vec![0.0f32; vol.len()];
    let mut seg = vec![0.0f32; vol.len()];
    let coords = vol.masked_coords();
    if !coords.is_empty() {
        let pyr = build_pyramid(vol, &model.pyramid)?;
        for chunk in coords.chunks(PREDICT_CHUNK) {
            let fm = featurize_pyramid(&pyr, "predict", dict, chunk, usize::MAX)?;
            for (&[x, y, z], p) in chunk.iter().zip(predict_proba(&model.model, &fm)?) {
                let i = vol.index(x, y, z);
                prob[i] = p as f32;
                seg[i] = if p > threshold { 1.0 } else { 0.0 };
            }
        }
    }
    Ok((Volume3::new(vol.dims(), prob)?, Volume3::new(vol.dims(), seg)?))
}

pub fn predict(
    volume_path: &Path,
    dict_path: &Path,
    model_path: &Path,
    threshold: f64,
    out_prob: &Path,
    out_seg: &Path,
) -> Result<PredictionRecord> {
    let model: ModelFile = read_json(model_path)?;
    let (dict, dict_hash) = read_dictionary(dict_path)?;
    check_hash(
        &format!("dictionary {} against model {}", dict_path.display(), model_path.display()),
        &model.dictionary_sha256,
        &dict_hash,
    )?;
    let vol = read_volume(volume_path)?;
    let (prob, seg) = predict_volume(&vol, &dict, &model, threshold)?;
    write_volume(&prob, out_prob)?;
    write_volume_as(&seg, out_seg, ElementType::UChar)?;
    let record = PredictionRecord {
        format: "vessel3d-prediction".into(),
        inputs: volume_inputs(volume_path)?,
        dictionary_sha256: dict_hash,
        model_sha256: file_sha256(model_path)?,
        threshold,
        masked_voxels: vol.masked_coords().len(),
        vessel_voxels: seg.data().iter().filter(|&&v| v > 0.0).count(),
    };
    write_json(&record, &out_prob.with_extension("json"))?;
    stage_log(
        "predict",
        json!({ "probability": out_prob, "segmentation": out_seg, "vessel_voxels": record.vessel_voxels }),
    );
    Ok(record)
}

/// Evaluation report with the hashes of everything it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    /// Mean and sample std over trials, e.g. "97.24±0.90%".
    pub accuracy: String,
    pub report: EvalReport,
    pub train: TrainOptions,
    /// Where l2 came from: "config", "model" or "cv".
    pub l2_source: String,
    pub cv: Option<CvResult>,
    pub features_sha256: String,
    pub labels_sha256: String,
    pub dictionary_sha256: String,
    pub model_sha256: Option<String>,
}

pub fn evaluate(
    features: &Path,
    labels: &Path,
    eval: &EvalConfig,
    classifier: &ClassifierConfig,
    model: Option<&Path>,
    report_path: &Path,
) -> Result<ReportFile> {
    let (fm, side) = read_features(features)?;
    let ann = read_annotations(labels)?;
    let y = align_labels(&fm, &ann)?;
    eval.validate(y.len())?;
    let mut model_sha256 = None;
    let mut cv = None;
    let (l2, source) = if let Some(l2) = classifier.l2 {
        (l2, "config")
    } else if let Some(path) = model {
        let m: ModelFile = read_json(path)?;
        check_hash(
            &format!("dictionary of model {} against features {}", path.display(), features.display()),
            &m.dictionary_sha256,
            &side.dictionary_sha256,
        )?;
        model_sha256 = Some(file_sha256(path)?);
        (m.model.l2, "model")
    } else {
        let r = cross_validate(&fm, &y, &classifier.cv)?;
        let best = r.best_l2;
        cv = Some(r);
        (best, "cv")
    };
    let train = TrainOptions { l2, ..classifier.train };
    let report = evaluate_repeated(&fm, &y, eval, &train)?;
    let file = ReportFile {
        format: "vessel3d-report".into(),
        accuracy: report.accuracy_text(),
        report,
        train,
        l2_source: source.into(),
        cv,
        features_sha256: side.sha256.clone(),
        labels_sha256: file_sha256(labels)?,
        dictionary_sha256: side.dictionary_sha256.clone(),
        model_sha256,
    };
    write_json(&file, report_path)?;
    let table = file.report.table();
    let table_path = report_path.with_extension("txt");
    fs::write(&table_path, &table).map_err(|e| vessel3d::Error::io(&table_path, e))?;
    print!("{table}");
    stage_log(
        "evaluate",
        json!({
            "report": report_path, "accuracy": file.accuracy, "trials": eval.trials,
            "l2": l2, "l2_source": source, "redraws": file.report.redraws,
        }),
    );
    Ok(file)
}

/// File layout of a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelinePaths {
    pub config: PathBuf,
    pub volume: PathBuf,
    pub annotations: PathBuf,
    pub truth: PathBuf,
    pub dictionary: PathBuf,
    pub features: PathBuf,
    pub model: PathBuf,
    pub report: PathBuf,
    pub probability: PathBuf,
    pub segmentation: PathBuf,
}

impl PipelinePaths {
    pub fn in_dir(dir: &Path, volume_id: &str) -> Self {
        PipelinePaths {
            config: dir.join("config.json"),
            volume: dir.join(format!("{volume_id}.mhd")),
            annotations: dir.join("annotations.csv"),
            truth: dir.join("truth.mhd"),
            dictionary: dir.join("dictionary.bin"),
            features: dir.join("features.bin"),
            model: dir.join("model.json"),
            report: dir.join("report.json"),
            probability: dir.join("probability.mhd"),
            segmentation: dir.join("segmentation.mhd"),
        }
    }
}

/// Runs every stage on a generated phantom, writing all artifacts into `dir`.
pub fn pipeline(cfg: &PipelineConfig, dir: &Path) -> Result<PipelinePaths> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| vessel3d::Error::io(dir, e))?;
    let paths = PipelinePaths::in_dir(dir, &cfg.phantom.volume_id);
    write_json(cfg, &paths.config)?;
    phantom(&cfg.phantom, &paths.volume, &paths.annotations, Some(&paths.truth))?;
    train_dict(
        std::slice::from_ref(&paths.volume),
        &cfg.pyramid,
        &cfg.dictionary,
        &paths.dictionary,
    )?;
    featurize(
        &paths.dictionary,
        &paths.volume,
        Some(cfg.feature_pyramid().scales),
        Some(&paths.annotations),
        None,
        cfg.features.max_row_len,
        &paths.features,
    )?;
    train_clf(&paths.features, &paths.annotations, &cfg.classifier, &paths.model)?;
    evaluate(
        &paths.features,
        &paths.annotations,
        &cfg.evaluation,
        &cfg.classifier,
        Some(&paths.model),
        &paths.report,
    )?;
    if cfg.predict.enabled {
        predict(
            &paths.volume,
            &paths.dictionary,
            &paths.model,
            cfg.predict.threshold,
            &paths.probability,
            &paths.segmentation,
        )?;
    }
    Ok(paths)
}
