use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use hazardcast::explain::{baseline_window, explain_instance, global_aggregate, sidecar_path, AttributionMatrix};
use hazardcast::ingest::{manifest_path, CountyDayTable};
use hazardcast::models::{Model, ModelCheckpoint};
use hazardcast::ndgrad::Array;
use hazardcast::pipeline::{ingest_county, prepare_dataset, DataConfig, Dataset};
use hazardcast::report::{read_matrix_csv, render_heatmap, report_metrics, warning_probability, MetricEntry};
use hazardcast::synth::generate;
use hazardcast::training::{metrics_from_rates, read_metrics, train_model, write_history, write_metrics};
use hazardcast::window::WindowSample;
use hazardcast::{Error, Hazard, HazardCounts};
use serde_json::json;

use crate::args::*;
use crate::config::RunConfig;
use crate::manifest::{manifest_for, Manifest};
use crate::CliError;

pub fn run(command: &Command, cfg: RunConfig) -> Result<(), CliError> {
    match command {
        Command::Ingest(a) => ingest(command, a, cfg),
        Command::Train(a) => train(command, a, cfg),
        Command::Evaluate(a) => evaluate(command, a, cfg),
        Command::Explain(a) => explain(command, a, cfg),
        Command::Global(a) => global(command, a, cfg),
        Command::Render(a) => render(command, a, cfg),
        Command::Synth(a) => synth(command, a, cfg),
        Command::Replay(a) => replay(a),
    }
}

fn open(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn read_file(path: &Path) -> Result<fs::File, CliError> {
    fs::File::open(path).map_err(|e| CliError::io(path, e))
}

fn ingest(command: &Command, a: &IngestArgs, mut cfg: RunConfig) -> Result<(), CliError> {
    if let Some(c) = &a.county {
        cfg.ingest.county = c.clone();
    }
    if let Some(s) = &a.stations {
        cfg.ingest.stations = s.clone();
    }
    let (table, summary) = ingest_county(read_file(&a.weather)?, read_file(&a.events)?, &cfg.ingest)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    table.save(&a.out, serde_json::to_value(&cfg.ingest).map_err(Error::from)?)?;
    eprintln!(
        "{}: {} days, {} labeled, {} of {} county events kept",
        table.county,
        table.len(),
        table.labeled_len(),
        summary.events_kept,
        summary.events_in_county
    );
    let mut m = Manifest::new(command, &cfg);
    m.add_input(&a.weather)?;
    m.add_input(&a.events)?;
    m.outputs = vec![a.out.clone(), manifest_path(&a.out)];
    m.details = serde_json::to_value(&summary).map_err(Error::from)?;
    m.write(&manifest_for(&a.out))
}

fn apply_train_flags(a: &TrainArgs, cfg: &mut RunConfig) {
    if let Some(x) = a.arch {
        cfg.model.architecture = x;
    }
    if let Some(x) = a.lookback {
        cfg.data.lookback = x;
    }
    if let Some(x) = a.stride {
        cfg.data.stride = x;
    }
    if let Some(x) = a.epochs {
        cfg.train.max_epochs = x;
        cfg.train.patience = cfg.train.patience.min(x);
    }
    if let Some(x) = a.patience {
        cfg.train.patience = x;
    }
    if let Some(x) = a.learning_rate {
        cfg.train.learning_rate = x;
    }
    if let Some(x) = a.batch_size {
        cfg.train.batch_size = x;
    }
    if let Some(x) = a.hidden_size {
        cfg.model.hidden_size = x;
    }
}

fn history_path(a: &TrainArgs) -> PathBuf {
    a.history.clone().unwrap_or_else(|| a.out.with_extension("history.csv"))
}

fn train(command: &Command, a: &TrainArgs, mut cfg: RunConfig) -> Result<(), CliError> {
    apply_train_flags(a, &mut cfg);
    let table = CountyDayTable::load(&a.data)?;
    let ds = prepare_dataset(&table, &cfg.data)?;
    let model = Model::new(cfg.model.model_config(ds.feature_names.len(), cfg.seed))?;
    eprintln!(
        "training {} on {} windows ({} validation)",
        cfg.model.architecture,
        ds.splits.train.len(),
        ds.splits.val.len()
    );
    let outcome = train_model(model, &cfg.train, &ds.splits.train, &ds.splits.val, |r| {
        eprintln!("epoch {:>3}  train {:.5}  val {:.5}", r.epoch, r.train_loss, r.val_loss);
    })?;
    let mut ckpt = ModelCheckpoint::from_model(&outcome.model, ds.feature_names.clone(), Some(ds.standardizer.clone()));
    ckpt.data_config = Some(serde_json::to_value(&cfg.data).map_err(Error::from)?);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    ckpt.save(&a.out)?;
    let history = history_path(a);
    write_history(&outcome.history, open(&history)?)?;
    let mut m = Manifest::new(command, &cfg);
    m.add_input(&a.data)?;
    if manifest_path(&a.data).exists() {
        m.add_input(&manifest_path(&a.data))?;
    }
    m.outputs = vec![a.out.clone(), history];
    m.details = json!({
        "splits": ds.boundaries,
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss,
        "stopped_early": outcome.stopped_early,
    });
    m.write(&manifest_for(&a.out))
}

/// Rebuilds the checkpoint's dataset from the raw table and checks that it
/// matches what the model was trained on. The checkpoint's windowing
/// settings replace `data`.
fn checkpoint_dataset(ckpt_path: &Path, table_path: &Path, data: &mut DataConfig) -> Result<(Model, Dataset), CliError> {
    let ckpt = ModelCheckpoint::load(ckpt_path)?;
    if let Some(v) = &ckpt.data_config {
        *data = serde_json::from_value(v.clone()).map_err(Error::from)?;
    }
    let table = CountyDayTable::load(table_path)?;
    let ds = prepare_dataset(&table, data)?;
    if ds.feature_names != ckpt.feature_names {
        return Err(Error::Data(format!(
            "table features {:?} differ from checkpoint features {:?}",
            ds.feature_names, ckpt.feature_names
        ))
        .into());
    }
    if ckpt.standardizer.as_ref().is_some_and(|s| *s != ds.standardizer) {
        return Err(Error::Data("table does not reproduce the checkpoint's standardizer; is it the training table?".into()).into());
    }
    Ok((ckpt.to_model()?, ds))
}

fn split_of(ds: &Dataset, split: SplitName) -> &[WindowSample] {
    match split {
        SplitName::Train => &ds.splits.train,
        SplitName::Val => &ds.splits.val,
        SplitName::Test => &ds.splits.test,
    }
}

fn split_label(split: SplitName) -> &'static str {
    match split {
        SplitName::Train => "train",
        SplitName::Val => "val",
        SplitName::Test => "test",
    }
}

fn evaluate(command: &Command, a: &EvaluateArgs, mut cfg: RunConfig) -> Result<(), CliError> {
    let (model, ds) = checkpoint_dataset(&a.ckpt, &a.data, &mut cfg.data)?;
    let samples = split_of(&ds, a.split);
    let inputs: Vec<Array> = samples.iter().map(|s| s.inputs.clone()).collect();
    let targets: Vec<HazardCounts> = samples.iter().map(|s| s.target).collect();
    let rates = model.rates(&inputs)?;
    let metrics = metrics_from_rates(&rates, &targets)?;
    write_metrics(&metrics, open(&a.out)?)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.predictions {
        let mut w = csv::Writer::from_writer(open(p)?);
        let mut header = vec!["anchor_date".to_string()];
        for h in Hazard::ALL {
            header.extend([format!("{h}_rate"), format!("{h}_warning"), format!("{h}_count")]);
        }
        w.write_record(&header).map_err(Error::from)?;
        for ((s, r), t) in samples.iter().zip(&rates).zip(&targets) {
            let mut rec = vec![s.anchor_date.to_string()];
            for h in Hazard::ALL {
                let i = h.index();
                rec.extend([r[i].to_string(), warning_probability(r[i])?.to_string(), t[i].to_string()]);
            }
            w.write_record(&rec).map_err(Error::from)?;
        }
        w.flush().map_err(|e| CliError::io(p, e))?;
        outputs.push(p.clone());
    }
    eprintln!("{} {}: MAE {:.4}  RMSE {:.4}", model.architecture(), split_label(a.split), metrics.mae, metrics.rmse);
    let mut m = Manifest::new(command, &cfg);
    m.add_input(&a.ckpt)?;
    m.add_input(&a.data)?;
    m.outputs = outputs;
    m.details = json!({ "samples": metrics.samples, "mae": metrics.mae, "rmse": metrics.rmse });
    m.write(&manifest_for(&a.out))
}

/// `count` evenly spaced indices of `0..n`.
pub fn evenly_spaced(count: usize, n: usize) -> Vec<usize> {
    (0..count.min(n)).map(|i| i * n / count.min(n)).collect()
}

fn explain(command: &Command, a: &ExplainArgs, mut cfg: RunConfig) -> Result<(), CliError> {
    let (model, ds) = checkpoint_dataset(&a.ckpt, &a.data, &mut cfg.data)?;
    let samples = split_of(&ds, a.split);
    let indices = match a.count {
        Some(c) => evenly_spaced(c, samples.len()),
        None => a.index.clone(),
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= samples.len()) {
        return Err(CliError::Usage(format!(
            "index {bad} is outside the {} split ({} windows)",
            split_label(a.split),
            samples.len()
        )));
    }
    let hazards = if a.hazard.is_empty() { Hazard::ALL.to_vec() } else { a.hazard.clone() };
    let baseline = baseline_window(&ds.table)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let mut outputs = Vec::new();
    for &i in &indices {
        let sample = &samples[i];
        let forecast = model.predict(std::slice::from_ref(&sample.inputs))?.remove(0);
        for &h in &hazards {
            let attr = explain_instance(
                &model,
                &sample.inputs,
                &sample.dates,
                &ds.feature_names,
                &baseline,
                h,
                Some(&forecast.attention),
                i,
                &cfg.explain,
            )?;
            let path = a.out.join(format!("{h}_{}_{i}.csv", split_label(a.split)));
            attr.save(&path)?;
            eprintln!(
                "{} {h}: rate {:.4}, base {:.4}, prune index {}, efficiency gap {:.2e}",
                sample.anchor_date, attr.fx, attr.base_value, attr.prune_index, attr.efficiency_gap
            );
            outputs.push(sidecar_path(&path));
            outputs.push(path);
        }
    }
    let mut m = Manifest::new(command, &cfg);
    m.add_input(&a.ckpt)?;
    m.add_input(&a.data)?;
    m.outputs = outputs;
    m.details = json!({ "indices": indices, "hazards": hazards });
    m.write(&a.out.join("manifest.json"))
}

/// Attribution CSVs among `inputs`, directories expanded and sorted.
fn attribution_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv") && sidecar_path(f).exists())
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Data("no attribution files found".into()).into());
    }
    Ok(files)
}

fn global(command: &Command, a: &GlobalArgs, cfg: RunConfig) -> Result<(), CliError> {
    let files = attribution_files(&a.inputs)?;
    let mut used = Vec::new();
    let mut attrs = Vec::new();
    for f in &files {
        let attr = AttributionMatrix::load(f)?;
        if a.hazard.is_some_and(|h| h != attr.hazard) {
            continue;
        }
        if attr.selection.is_none() {
            return Err(Error::Data(format!("{} has no critical-row selection", f.display())).into());
        }
        used.push(f.clone());
        attrs.push(attr);
    }
    let mut g = global_aggregate(attrs.iter().map(|x| (x, x.selection.as_ref().expect("checked"))))?;
    g.params = json!({ "inputs": used.len() });
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    g.save(&a.out)?;
    eprintln!("aggregated {} attribution matrices", used.len());
    let mut m = Manifest::new(command, &cfg);
    for f in &used {
        m.add_input(f)?;
        m.add_input(&sidecar_path(f))?;
    }
    m.outputs = vec![a.out.clone(), sidecar_path(&a.out)];
    m.write(&manifest_for(&a.out))
}

/// Splits `REGION:ARCH:FILE`; the file part may itself contain colons.
fn parse_metrics_spec(spec: &str) -> Result<(String, String, PathBuf), CliError> {
    let mut parts = spec.splitn(3, ':');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(r), Some(arch), Some(f)) if !r.is_empty() && !arch.is_empty() && !f.is_empty() => {
            Ok((r.to_string(), arch.to_string(), PathBuf::from(f)))
        }
        _ => Err(CliError::Usage(format!("--metrics expects REGION:ARCH:FILE, got {spec:?}"))),
    }
}

fn render(command: &Command, a: &RenderArgs, cfg: RunConfig) -> Result<(), CliError> {
    let mut m = Manifest::new(command, &cfg);
    if let Some(matrix) = &a.matrix {
        let lm = read_matrix_csv(read_file(matrix)?)?;
        let title = a.title.clone().unwrap_or_else(|| matrix.display().to_string());
        let svg = render_heatmap(&lm, a.scale, &title)?;
        fs::write(&a.out, svg).map_err(|e| CliError::io(&a.out, e))?;
        m.add_input(matrix)?;
        m.outputs = vec![a.out.clone()];
    } else {
        let mut entries = Vec::new();
        for spec in &a.metrics {
            let (region, architecture, path) = parse_metrics_spec(spec)?;
            let metrics = read_metrics(read_file(&path)?)?;
            entries.push(MetricEntry {
                region,
                architecture,
                mae: metrics.mae,
                rmse: metrics.rmse,
            });
            m.add_input(&path)?;
        }
        let report = report_metrics(&entries)?;
        fs::write(&a.out, report.to_csv()?).map_err(|e| CliError::io(&a.out, e))?;
        let text_path = a.out.with_extension("txt");
        let text = report.to_text();
        fs::write(&text_path, &text).map_err(|e| CliError::io(&text_path, e))?;
        print!("{text}");
        m.outputs = vec![a.out.clone(), text_path];
    }
    m.write(&manifest_for(&a.out))
}

fn synth(command: &Command, a: &SynthArgs, mut cfg: RunConfig) -> Result<(), CliError> {
    if let Some(d) = a.days {
        cfg.synth.days = d;
    }
    if let Some(f) = a.features {
        cfg.synth.features = f;
    }
    let data = generate(&cfg.synth)?;
    let paths = data.write_to(&a.out)?;
    eprintln!(
        "{} days, {} events written to {}",
        cfg.synth.days,
        data.occurrences.iter().flatten().filter(|&&x| x).count(),
        a.out.display()
    );
    let mut m = Manifest::new(command, &cfg);
    m.outputs = vec![paths.weather, paths.events, paths.truth];
    m.write(&a.out.join("manifest.json"))
}

fn replay(a: &ReplayArgs) -> Result<(), CliError> {
    let m = Manifest::read(&a.manifest)?;
    if matches!(m.command, Command::Replay(_)) {
        return Err(CliError::Usage("a replay manifest cannot be replayed".into()));
    }
    m.verify_inputs()?;
    run(&m.command, m.config)
}
