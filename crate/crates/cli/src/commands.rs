use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use gradsurgeon::datasets::{generate_synthetic, load_records, write_split, TEST_CROSS_FILE, TEST_IN_FILE, TRAIN_FILE};
use gradsurgeon::experiment::{drift_records, report_for, run_on, semantic_probe};
use gradsurgeon::gradcheck::{run_suite, GRADCHECK_TOLERANCE};
use gradsurgeon::metrics::export_projection_2d;
use gradsurgeon::{Checkpoint, DataMode, DatasetSplit, ExperimentConfig, RunOutcome, RunReport, SurgeryMode};
use serde_json::{json, Value};

use crate::output::{OutDir, MANIFEST};
use crate::{Common, Multi};

pub const SWEEP_LAMBDAS: [f64; 5] = [0.0, 0.05, 0.1, 0.2, 0.5];
pub const THREADS_ENV: &str = "GRADSURGEON_THREADS";

fn resolve_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_text(&text).with_context(|| format!("config {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    if let Some(mode) = &c.mode {
        cfg.surgery.mode = mode.parse::<SurgeryMode>()?;
    }
    if let Some(lambda) = c.lambda {
        cfg.surgery.lambda = lambda;
    }
    if let Some(epochs) = c.epochs {
        cfg.surgery.epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Data mode recorded by `gen-data` in a directory's manifest; anything
/// else is taken to hold precomputed features.
fn detect_mode(path: &Path) -> DataMode {
    let manifest = path.join(MANIFEST);
    let mode = fs::read_to_string(manifest)
        .ok()
        .and_then(|text| serde_json::from_str::<Value>(&text).ok())
        .and_then(|v| v["extra"]["data_mode"].as_str().map(str::to_string));
    match mode.as_deref() {
        Some("synthetic") => DataMode::Synthetic,
        _ => DataMode::Ingested,
    }
}

fn resolve_data(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<(DatasetSplit, DataMode)> {
    match data {
        Some(path) => {
            let split = load_records(path).with_context(|| format!("loading {}", path.display()))?;
            Ok((split, detect_mode(path)))
        }
        None => Ok((generate_synthetic(&cfg.data)?, DataMode::Synthetic)),
    }
}

fn data_mode_name(mode: DataMode) -> &'static str {
    match mode {
        DataMode::Synthetic => "synthetic",
        DataMode::Ingested => "ingested",
    }
}

fn metrics_rows(report: &RunReport) -> Vec<Value> {
    let mut rows = vec![json!({
        "evaluation": "train",
        "mode": report.mode,
        "seed": report.seed,
        "lambda": report.lambda,
        "metrics": report.train,
    })];
    for (name, eval) in [
        ("test_in_domain", &report.test_in_domain),
        ("test_cross_domain", &report.test_cross_domain),
    ] {
        if let Some(eval) = eval {
            rows.push(json!({
                "evaluation": name,
                "mode": report.mode,
                "seed": report.seed,
                "lambda": report.lambda,
                "metrics": eval,
            }));
        }
    }
    rows.push(json!({
        "evaluation": "drift",
        "split": report.drift_split,
        "mode": report.mode,
        "seed": report.seed,
        "lambda": report.lambda,
        "metrics": report.drift,
        "teacher_accuracy": report.teacher_accuracy,
    }));
    rows
}

/// History, report and metrics of one run under `out`.
fn write_run(out: &mut OutDir, prefix: &str, outcome: &RunOutcome) -> Result<()> {
    out.write(&format!("{prefix}history.jsonl"), &outcome.history.to_jsonl())?;
    out.write_json(&format!("{prefix}report.json"), &outcome.report)?;
    out.write_jsonl(&format!("{prefix}metrics.jsonl"), &metrics_rows(&outcome.report))?;
    Ok(())
}

fn summary_line(r: &RunReport) -> String {
    let pct = |e: &Option<gradsurgeon::EvalReport>| {
        e.as_ref()
            .map(|e| format!("{:.4}", e.accuracy_overall))
            .unwrap_or_else(|| "-".into())
    };
    format!(
        "mode={} seed={} lambda={} acc_in={} acc_cross={} drift={:.6} knn@{}={:.4}",
        r.mode,
        r.seed,
        r.lambda,
        pct(&r.test_in_domain),
        pct(&r.test_cross_domain),
        r.drift.mean_cosine_distance,
        r.drift.k,
        r.drift.knn_overlap
    )
}

pub fn gen_data(c: &Common) -> Result<u8> {
    let cfg = resolve_config(c)?;
    let split = generate_synthetic(&cfg.data)?;
    let mut out = OutDir::create(&c.out)?;
    write_split(&split, &c.out)?;
    for name in [TRAIN_FILE, TEST_IN_FILE, TEST_CROSS_FILE] {
        out.track(name);
    }
    let probe = semantic_probe(&split)?;
    out.write_json("semantic_probe.json", &probe)?;
    out.finish("gen-data", &cfg, json!({ "data_mode": "synthetic" }))?;
    println!(
        "wrote {} train, {} in-domain, {} cross-domain records to {}",
        split.train.len(),
        split.test_in_domain.len(),
        split.test_cross_domain.len(),
        c.out.display()
    );
    Ok(0)
}

pub fn train(c: &Common) -> Result<u8> {
    let cfg = resolve_config(c)?;
    let (split, mode) = resolve_data(&cfg, c.data.as_deref())?;
    let outcome = run_on(&cfg, mode, &split)?;
    let mut out = OutDir::create(&c.out)?;
    out.write("config.conf", &cfg.to_text())?;
    write_run(&mut out, "", &outcome)?;
    let ck = Checkpoint {
        config: cfg.surgery.clone(),
        models: outcome.models.clone(),
    };
    let mut extra = json!({ "data_mode": data_mode_name(mode) });
    match &c.checkpoint {
        Some(path) => {
            ck.write(path)?;
            extra["checkpoint"] = json!(path.display().to_string());
        }
        None => {
            out.write("checkpoint.txt", &ck.to_text())?;
        }
    }
    out.finish("train", &cfg, extra)?;
    println!("{}", summary_line(&outcome.report));
    Ok(0)
}

fn load_checkpoint(c: &Common) -> Result<Checkpoint> {
    let Some(path) = &c.checkpoint else {
        bail!(gradsurgeon::Error::InvalidField {
            field: "checkpoint".into(),
            reason: "--checkpoint is required".into(),
        });
    };
    Checkpoint::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn eval(c: &Common) -> Result<u8> {
    let mut cfg = resolve_config(c)?;
    let ck = load_checkpoint(c)?;
    let data_seed = cfg.data.seed;
    cfg.surgery = ck.config.clone();
    cfg.data.seed = data_seed;
    let (split, _) = resolve_data(&cfg, c.data.as_deref())?;
    let report = report_for(&cfg, &ck.models, &split)?;
    let mut out = OutDir::create(&c.out)?;
    out.write_json("report.json", &report)?;
    out.write_jsonl("metrics.jsonl", &metrics_rows(&report))?;
    out.finish("eval", &cfg, json!({}))?;
    println!("{}", summary_line(&report));
    Ok(0)
}

pub fn gradcheck(c: &Common) -> Result<u8> {
    let cfg = resolve_config(c)?;
    let results = run_suite(cfg.seed())?;
    let mut out = OutDir::create(&c.out)?;
    out.write_json("gradcheck.json", &results)?;
    out.finish("gradcheck", &cfg, json!({ "tolerance": GRADCHECK_TOLERANCE }))?;
    let mut ok = true;
    for r in &results {
        ok &= r.passed();
        println!(
            "{:<22} entries={:<6} max_rel_err={:.3e} {}",
            r.name,
            r.entries,
            r.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(if ok { 0 } else { 3 })
}

/// Worker count: `GRADSURGEON_THREADS` if set, else available cores.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => bail!(gradsurgeon::Error::InvalidField {
                field: THREADS_ENV.into(),
                reason: format!("expected a positive integer, got {v:?}"),
            }),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Maps `f` over `items` on at most `threads` workers; results keep input
/// order and the first error in input order wins.
fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(items.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

struct Job {
    cfg: ExperimentConfig,
    seed_index: usize,
    dir: String,
}

fn seed_splits(base: &ExperimentConfig, m: &Multi, threads: usize) -> Result<(Vec<DatasetSplit>, DataMode)> {
    let seeds: Vec<u64> = (0..m.seeds).map(|i| base.seed() + i).collect();
    if let Some(path) = &m.common.data {
        let (split, mode) = resolve_data(base, Some(path))?;
        return Ok((vec![split; seeds.len()], mode));
    }
    let splits = parallel_map(&seeds, threads, |&s| Ok(generate_synthetic(&base.clone().with_seed(s).data)?))?;
    Ok((splits, DataMode::Synthetic))
}

fn run_jobs(out: &mut OutDir, jobs: &[Job], splits: &[DatasetSplit], mode: DataMode, threads: usize) -> Result<Vec<RunReport>> {
    let outcomes = parallel_map(jobs, threads, |job| {
        let o = run_on(&job.cfg, mode, &splits[job.seed_index])?;
        eprintln!("{}", summary_line(&o.report));
        Ok(o)
    })?;
    for (job, o) in jobs.iter().zip(&outcomes) {
        write_run(out, &format!("{}/", job.dir), o)?;
    }
    Ok(outcomes.into_iter().map(|o| o.report).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(serde::Serialize)]
struct GroupRow {
    label: String,
    runs: usize,
    acc_in_domain: f64,
    acc_cross_domain: f64,
    ap_cross_domain: f64,
    prior_drift: f64,
    knn_overlap: f64,
    per_seed_cross: Vec<f64>,
}

fn group_row(label: String, reports: &[&RunReport]) -> GroupRow {
    let get = |f: &dyn Fn(&RunReport) -> f64| mean(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
    let acc = |e: &Option<gradsurgeon::EvalReport>, r: &RunReport| e.as_ref().unwrap_or(&r.train).accuracy_overall;
    GroupRow {
        label,
        runs: reports.len(),
        acc_in_domain: get(&|r| acc(&r.test_in_domain, r)),
        acc_cross_domain: get(&|r| r.headline_accuracy()),
        ap_cross_domain: get(&|r| {
            r.test_cross_domain
                .as_ref()
                .or(r.test_in_domain.as_ref())
                .unwrap_or(&r.train)
                .average_precision
        }),
        prior_drift: get(&|r| r.drift.mean_cosine_distance),
        knn_overlap: get(&|r| r.drift.knn_overlap),
        per_seed_cross: reports.iter().map(|r| r.headline_accuracy()).collect(),
    }
}

fn table(first: &str, rows: &[GroupRow]) -> String {
    let mut s = format!("| {first} | runs | acc in | acc cross | AP cross | drift | kNN overlap | cross per seed |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let seeds: Vec<String> = r.per_seed_cross.iter().map(|a| format!("{a:.4}")).collect();
        s.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} | {:.4} | {:.6} | {:.4} | {} |\n",
            r.label,
            r.runs,
            r.acc_in_domain,
            r.acc_cross_domain,
            r.ap_cross_domain,
            r.prior_drift,
            r.knn_overlap,
            seeds.join(" ")
        ));
    }
    s
}

fn check_seeds(m: &Multi) -> Result<()> {
    if m.seeds == 0 {
        bail!(gradsurgeon::Error::InvalidField {
            field: "seeds".into(),
            reason: "must be at least 1".into(),
        });
    }
    Ok(())
}

pub fn ablate(m: &Multi) -> Result<u8> {
    check_seeds(m)?;
    let base = resolve_config(&m.common)?;
    let threads = thread_count()?;
    let (splits, data_mode) = seed_splits(&base, m, threads)?;
    let mut jobs = Vec::new();
    for mode in SurgeryMode::ALL {
        for i in 0..m.seeds as usize {
            let seed = base.seed() + i as u64;
            jobs.push(Job {
                cfg: base.clone().with_seed(seed).with_mode(mode),
                seed_index: i,
                dir: format!("{}/seed-{seed}", mode.name()),
            });
        }
    }
    let mut out = OutDir::create(&m.common.out)?;
    let reports = run_jobs(&mut out, &jobs, &splits, data_mode, threads)?;
    let rows: Vec<GroupRow> = SurgeryMode::ALL
        .iter()
        .map(|&mode| {
            let group: Vec<&RunReport> = reports.iter().filter(|r| r.mode == mode).collect();
            group_row(mode.name().to_string(), &group)
        })
        .collect();
    let md = table("mode", &rows);
    out.write("ablation.md", &md)?;
    out.write_jsonl("ablation.jsonl", &rows)?;
    out.finish("ablate", &base, json!({ "seeds": m.seeds, "data_mode": data_mode_name(data_mode) }))?;
    print!("{md}");
    Ok(0)
}

pub fn sweep(m: &Multi) -> Result<u8> {
    check_seeds(m)?;
    let base = resolve_config(&m.common)?;
    let threads = thread_count()?;
    let (splits, data_mode) = seed_splits(&base, m, threads)?;
    let mut jobs = Vec::new();
    for lambda in SWEEP_LAMBDAS {
        for i in 0..m.seeds as usize {
            let seed = base.seed() + i as u64;
            let mut cfg = base.clone().with_seed(seed);
            cfg.surgery.lambda = lambda;
            jobs.push(Job {
                cfg,
                seed_index: i,
                dir: format!("lambda-{lambda}/seed-{seed}"),
            });
        }
    }
    let mut out = OutDir::create(&m.common.out)?;
    let reports = run_jobs(&mut out, &jobs, &splits, data_mode, threads)?;
    let rows: Vec<GroupRow> = SWEEP_LAMBDAS
        .iter()
        .map(|&lambda| {
            let group: Vec<&RunReport> = reports.iter().filter(|r| r.lambda == lambda).collect();
            group_row(format!("{lambda}"), &group)
        })
        .collect();
    let md = table("lambda", &rows);
    out.write("sweep.md", &md)?;
    out.write_jsonl("sweep.jsonl", &rows)?;
    out.finish(
        "sweep",
        &base,
        json!({ "seeds": m.seeds, "mode": base.surgery.mode, "data_mode": data_mode_name(data_mode) }),
    )?;
    print!("{md}");
    Ok(0)
}

pub fn export_plots(c: &Common) -> Result<u8> {
    let cfg = resolve_config(c)?;
    let ck = load_checkpoint(c)?;
    let (split, _) = resolve_data(&cfg, c.data.as_deref())?;
    let (records, name) = drift_records(&split);
    let mut out = OutDir::create(&c.out)?;
    fs::create_dir_all(out.path("plots"))?;
    let student = ck.models.student_features(records)?;
    let teacher = ck.models.teacher_features(records)?;
    let mut explained = serde_json::Map::new();
    for (file, feats) in [("plots/student_pca.csv", &student), ("plots/teacher_pca.csv", &teacher)] {
        let proj = export_projection_2d(feats, records, &out.path(file))?;
        out.track(file);
        explained.insert(
            file.to_string(),
            json!({ "explained": proj.explained, "total_variance": proj.total_variance }),
        );
    }
    let plots = out.path("plots");
    out.finish("export-plots", &cfg, json!({ "split": name, "projections": explained }))?;
    println!("wrote projections of {} {name} records to {}", records.len(), plots.display());
    Ok(0)
}
