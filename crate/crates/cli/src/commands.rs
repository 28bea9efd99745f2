use std::collections::BTreeMap;
use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use segxai::aggregate::{global_matrix, local_matrix, topk_graph, ExplanationMatrix, SignMode};
use segxai::attribution::{self, AttributionField, Method};
use segxai::container::{read_container, write_atomic, Container};
use segxai::metrics::{plan_benchmark, run_unit, BenchmarkInput, MetricReport};
use segxai::model::{forward, Endpoint, RemoteModel, SegmentationModel};
use segxai::outlier::{outlier_pipeline, DiceTable};
use segxai::protocol::serve_listener;
use segxai::volume::{argmax_masks, RoiSet, RoiSource};
use segxai::RngSpec;
use serde::{Deserialize, Serialize};

use crate::config::{build_model, class_names, load_inputs, parse_classes, parse_method, parse_roi, RunConfig};
use crate::error::{CliError, CliResult};
use crate::Common;

const MANIFEST: &str = "manifest.json";

/// Loads the config and applies the shared flags.
fn load(common: &Common) -> CliResult<RunConfig> {
    let mut config = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out = Some(out.clone());
    }
    Ok(config)
}

fn pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::config(format!("{}: {e}", parent.display())))?;
    }
    write_atomic(path, bytes.as_ref()).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    method: Method,
    seed: u64,
    class_names: Vec<String>,
    dims: [usize; 3],
    inputs: Vec<ManifestInput>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestInput {
    id: String,
    logits: String,
    fields: Vec<ManifestField>,
    /// Classes with no predicted voxel.
    skipped: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestField {
    class_id: usize,
    file: String,
}

fn field_file(class_id: usize) -> String {
    format!("class_{class_id:02}.a2x")
}

pub fn attribute(common: &Common, method: Option<&str>, classes: Option<&str>) -> CliResult<()> {
    let mut config = load(common)?;
    if let Some(m) = method {
        config.method = Some(parse_method(m)?);
    }
    if let Some(c) = classes {
        config.classes = Some(parse_classes(c)?);
    }
    let method = config.method.clone().ok_or_else(|| CliError::config("no attribution method (--method)"))?;
    method.validate()?;
    let out = config.out_dir()?.to_path_buf();
    let model = build_model(config.model.as_ref().ok_or_else(|| CliError::config("config has no model"))?)?;
    let info = model.info();
    let names = class_names(&config, info.num_classes)?;
    let inputs = load_inputs(&config, info.dims)?;
    let all: Vec<usize> = (0..info.num_classes).collect();
    let classes = config.classes.clone().unwrap_or(all);
    if let Some(&c) = classes.iter().find(|&&c| c >= info.num_classes) {
        return Err(CliError::config(format!("class {c} out of range for a {}-class model", info.num_classes)));
    }

    let root = RngSpec::new(config.seed);
    let mut manifest = Manifest { method: method.clone(), seed: config.seed, class_names: names, dims: info.dims.0, inputs: Vec::new() };
    let mut units = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let logits = forward(model.as_ref(), &input.x)?;
        let masks = argmax_masks(&logits);
        write(&out.join(&input.id).join("logits.a2x"), Container::new(logits).to_bytes())?;
        let mut entry = ManifestInput { id: input.id.clone(), logits: "logits.a2x".into(), fields: Vec::new(), skipped: Vec::new() };
        for &c in &classes {
            if masks[c].is_empty() {
                entry.skipped.push(c);
            } else {
                entry.fields.push(ManifestField { class_id: c, file: field_file(c) });
                units.push((i, c, masks[c].clone()));
            }
        }
        manifest.inputs.push(entry);
    }

    let results: Vec<CliResult<(AttributionField, f64)>> = pool(common.jobs)?.install(|| {
        units
            .par_iter()
            .map(|(i, c, mask)| {
                let start = Instant::now();
                let rng = root.for_unit("attribute", *i as u64, *c as u64);
                let field = attribution::attribute(model.as_ref(), &inputs[*i].x, *c, mask, &method, rng)
                    .map_err(|e| CliError::from(e).context(format!("{} class {c}", inputs[*i].id)))?;
                Ok((field, start.elapsed().as_secs_f64()))
            })
            .collect()
    });

    let mut timings = BTreeMap::new();
    for ((i, c, _), result) in units.iter().zip(results) {
        let (field, secs) = result?;
        let id = &inputs[*i].id;
        write(&out.join(id).join(field_file(*c)), field.to_container()?.to_bytes())?;
        timings.insert(format!("{id}/{}", field_file(*c)), secs);
    }
    write(&out.join(MANIFEST), to_json(&manifest))?;
    write(&out.join("timings.json"), to_json(&timings))?;
    Ok(())
}

fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn aggregate(
    common: &Common,
    attr_dir: &Path,
    roi: &[String],
    graph: bool,
    k: Option<usize>,
    sign_mode: Option<&str>,
) -> CliResult<()> {
    let mut config = load(common)?;
    for r in roi {
        config.rois.push(parse_roi(r)?);
    }
    if let Some(mode) = sign_mode {
        config.sign_mode = Some(mode.parse::<SignMode>().map_err(|e| CliError::config(format!("{e}")))?);
    }
    let mode = config.sign_mode.unwrap_or(SignMode::Absolute);
    let k = k.or(config.k).unwrap_or(3);
    let out = config.out_dir()?.to_path_buf();
    let manifest = read_manifest(attr_dir)?;

    let locals: Vec<(String, ExplanationMatrix)> = pool(common.jobs)?.install(|| {
        manifest
            .inputs
            .par_iter()
            .map(|input| {
                let dir = attr_dir.join(&input.id);
                let read = |p: PathBuf| read_container(&p).map_err(|e| CliError::from(e).context(p.display()));
                let logits = read(dir.join(&input.logits))?.into_logits()?;
                let mut rois = RoiSet::from_predictions(&logits, &manifest.class_names)?;
                for extra in &config.rois {
                    let path = PathBuf::from(extra.path.replace("{input}", &input.id));
                    let mask = read(path.clone())?.into_mask()?;
                    rois.push(extra.name.clone(), mask, RoiSource::External)
                        .map_err(|e| CliError::from(e).context(path.display()))?;
                }
                let fields = input
                    .fields
                    .iter()
                    .map(|f| {
                        let path = dir.join(&f.file);
                        AttributionField::from_container(read(path.clone())?).map_err(|e| CliError::from(e).context(path.display()))
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                let m = local_matrix(&fields, &manifest.class_names, &rois, mode)
                    .map_err(|e| CliError::from(e).context(&input.id))?;
                Ok((input.id.clone(), m))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;

    for (id, m) in &locals {
        write(&out.join("local").join(format!("{id}.csv")), m.to_csv()?)?;
        write(&out.join("local").join(format!("{id}.json")), m.to_json())?;
    }
    let matrices: Vec<ExplanationMatrix> = locals.into_iter().map(|(_, m)| m).collect();
    let global = global_matrix(&matrices)?;
    write(&out.join("global.csv"), global.to_csv()?)?;
    write(&out.join("global.json"), global.to_json())?;
    if graph {
        let g = topk_graph(&global, k, &config.groups)?;
        write(&out.join("graph.dot"), g.to_dot())?;
        write(&out.join("graph.json"), g.to_json())?;
    }
    Ok(())
}

pub fn benchmark(common: &Common, method: Option<&str>, classes: Option<&str>) -> CliResult<()> {
    let mut config = load(common)?;
    if let Some(m) = method {
        config.methods = Some(vec![parse_method(m)?]);
    }
    if let Some(c) = classes {
        config.classes = Some(parse_classes(c)?);
    }
    let methods = match config.methods.clone() {
        Some(methods) => methods,
        None => Method::benchmark_suite(config.cube_edge.unwrap_or(4)),
    };
    for m in &methods {
        m.validate()?;
    }
    let out = config.out_dir()?.to_path_buf();
    let model = build_model(config.model.as_ref().ok_or_else(|| CliError::config("config has no model"))?)?;
    let info = model.info();
    let names = class_names(&config, info.num_classes)?;
    let inputs: Vec<BenchmarkInput> = load_inputs(&config, info.dims)?
        .into_iter()
        .map(|i| BenchmarkInput { input_id: i.id, model: model.as_ref(), x: i.x })
        .collect();
    let units = plan_benchmark(&inputs, &methods, config.classes.as_deref())?;
    let root = RngSpec::new(config.seed);
    let records = pool(common.jobs)?
        .install(|| units.par_iter().map(|u| run_unit(&inputs, &methods, u, &names, &config.metrics, root)).collect());
    let report = MetricReport { dataset: config.dataset.clone().unwrap_or_else(|| "synthetic".into()), records };
    write(&out.join("records.csv"), report.records_csv(false))?;
    write(&out.join("methods.csv"), report.table_csv())?;
    write(&out.join("summary.json"), report.summary_json())?;
    Ok(())
}

/// Matrices of an `aggregate` output (its `local/` directory) or a plain
/// directory of matrix JSON files, keyed by file stem.
fn read_matrices(dir: &Path) -> CliResult<Vec<(String, ExplanationMatrix)>> {
    let local = dir.join("local");
    let dir = if local.is_dir() { local } else { dir.to_path_buf() };
    let entries = std::fs::read_dir(&dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| !matches!(p.file_stem().and_then(|s| s.to_str()), Some("global" | "graph" | "report" | "manifest")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::data(format!("{} holds no explanation matrices", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            let m = ExplanationMatrix::from_json(&text).map_err(|e| CliError::from(e).context(p.display()))?;
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((id, m))
        })
        .collect()
}

fn read_dice(path: &Path) -> CliResult<DiceTable> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::data(format!("{}: {e}", path.display())))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::data(format!("{}: missing column {name:?}", path.display())))
    };
    let (id_col, class_col, dice_col) = (col("input_id")?, col("class")?, col("dice")?);
    let mut table = DiceTable::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let value: f64 = record[dice_col]
            .trim()
            .parse()
            .map_err(|_| CliError::data(format!("{}: bad dice value on row {}", path.display(), line + 1)))?;
        table.insert((record[id_col].to_owned(), record[class_col].to_owned()), value);
    }
    Ok(table)
}

pub fn outliers(common: &Common, train: &Path, eval: &Path, dice: Option<&Path>) -> CliResult<()> {
    let config = load(common)?;
    let out = config.out_dir()?.to_path_buf();
    let mut forest = config.forest.unwrap_or_default();
    if config.forest.is_none() || common.seed.is_some() {
        forest.seed = config.seed;
    }
    let train: Vec<ExplanationMatrix> = read_matrices(train)?.into_iter().map(|(_, m)| m).collect();
    let eval = read_matrices(eval)?;
    let dice = dice.map(read_dice).transpose()?;
    let report = outlier_pipeline(&train, &eval, dice.as_ref(), &forest)?;
    write(&out.join("scores.csv"), report.scores_csv())?;
    if let Some(csv) = report.rank_tests_csv() {
        write(&out.join("rank_tests.csv"), csv)?;
    }
    write(&out.join("report.json"), to_json(&report))?;
    Ok(())
}

pub fn probe(endpoint: &str) -> CliResult<()> {
    let endpoint: Endpoint = endpoint.parse().map_err(|e: segxai::model::ModelError| CliError::config(e.to_string()))?;
    let model = RemoteModel::connect(&endpoint)?;
    let info = model.info();
    println!(
        "{}",
        serde_json::json!({
            "endpoint": endpoint.to_string(),
            "num_classes": info.num_classes,
            "dims": info.dims.0,
            "has_gradient": info.has_gradient,
        })
    );
    Ok(())
}

pub fn serve(common: &Common, listen: &str) -> CliResult<()> {
    let config = load(common)?;
    let model = build_model(config.model.as_ref().ok_or_else(|| CliError::config("config has no model"))?)?;
    let listener = TcpListener::bind(listen).map_err(|e| CliError::config(format!("bind {listen}: {e}")))?;
    let addr = listener.local_addr()?;
    let mut stdout = std::io::stdout();
    writeln!(stdout, "listening on {addr}")?;
    stdout.flush()?;
    serve_listener(model, listener)?;
    Ok(())
}
