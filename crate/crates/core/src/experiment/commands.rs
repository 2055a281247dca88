use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_fingerprints, mi_bound_from_log_q, offset_scatter, write_dist_hist_csv,
    write_offsets_csv, write_roc_csv, write_summary_json, Pairing, Summary,
};
use crate::nn::{checkpoint, Tensor};
use crate::rff::{
    cross_entropy, head_forward, load_checkpoint, save_checkpoint, train_with_trace, Pipeline,
    RffModel, TrainTrace,
};
use crate::rng::derive_seed;
use crate::signal::io::{load_meta, load_split, save_dataset, DatasetMeta};
use crate::signal::{
    build_dataset, generate_preamble, ComplexSignal, SnrPolicy, SplitName, TransmissionRecord,
};

pub const TRACE_CSV: &str = "trace.csv";
pub const CLASSIFIER_BIN: &str = "classifier.bin";
pub const CONFIG_FILE: &str = "config.toml";

/// Progress output: messages go to stderr unless quiet; results to stdout.
#[derive(Debug, Clone, Copy, Default)]
pub struct Console {
    pub quiet: bool,
}

impl Console {
    pub fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn warn(&self, msg: impl AsRef<str>) {
        eprintln!("warning: {}", msg.as_ref());
    }

    pub fn result(&self, msg: impl AsRef<str>) {
        println!("{}", msg.as_ref());
    }
}

/// Generate and save the dataset described by `cfg.dataset`.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path, console: Console) -> Result<DatasetMeta> {
    cfg.dataset.validate()?;
    let data = build_dataset(&cfg.dataset, cfg.seed)?;
    let meta = save_dataset(out, &data, &cfg.dataset, cfg.seed)?;
    for s in &meta.splits {
        console.info(format!(
            "{:<8} {:>6} records, {} devices",
            s.name.key(),
            s.record_count,
            s.device_ids.len()
        ));
    }
    console.info(format!("dataset written to {}", out.display()));
    Ok(meta)
}

fn require_split(dir: &Path, name: SplitName) -> Result<Vec<TransmissionRecord>> {
    load_split(dir, name)?.ok_or_else(|| Error::Format {
        path: dir.display().to_string(),
        reason: format!("dataset has no {} split", name.key()),
    })
}

fn check_dataset(cfg: &ExperimentConfig, meta: &DatasetMeta) -> Result<()> {
    let m = cfg.model.signal_len();
    if meta.signal_len != m {
        return Err(Error::Config(format!(
            "model expects {m}-sample records, dataset has {}",
            meta.signal_len
        )));
    }
    Ok(())
}

/// Result of `cmd_train`.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: TrainTrace,
    pub parameter_count: usize,
}

/// Train `cfg.model.pipeline` on the dataset's training split and write the
/// checkpoint, `classifier.bin`, `trace.csv` and the config used to `out`.
/// The trace is written even when training diverges.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    dataset: &Path,
    out: &Path,
    console: Console,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let meta = load_meta(dataset)?;
    check_dataset(cfg, &meta)?;
    let records = require_split(dataset, SplitName::Train)?;
    fs::create_dir_all(out)?;
    cfg.save(&out.join(CONFIG_FILE))?;

    let pipeline = cfg.model.pipeline;
    let probe = RffModel::new(&cfg.model, cfg.seed)?;
    console.info(format!(
        "pipeline {pipeline}: {} trainable parameters ({} networks, {} head)",
        probe.parameter_count(),
        probe.networks().len(),
        if pipeline.hypersphere() {
            "hypersphere"
        } else {
            "softmax"
        }
    ));
    if pipeline == Pipeline::TsOffsets {
        console.info("appending (w_ts, phi_ts) offset features to the fingerprint network");
    }
    if pipeline.uses_ns() && cfg.train.freeze_ns {
        console.info("NS networks frozen at zero offsets");
    }

    let mut trace = TrainTrace::default();
    let result = train_with_trace(
        &records,
        &cfg.model,
        &cfg.train,
        cfg.seed,
        &mut trace,
        |e| {
            console.info(format!(
                "epoch {:>4}  loss {:.4}  acc {:.4}  mi {:.4}",
                e.epoch, e.loss, e.train_acc, e.mi_bound
            ))
        },
    );
    trace.write_csv(&out.join(TRACE_CSV))?;
    let trained = result?;
    save_checkpoint(
        out,
        &trained.model,
        &trained.classes,
        Some(&trained.optimizer),
    )?;
    checkpoint::write_arrays(&out.join(CLASSIFIER_BIN), &[trained.classifier.data()])?;
    let last = trace.epochs.last().expect("at least one epoch");
    console.result(format!(
        "final loss {:.6}  train accuracy {:.4}",
        last.loss, last.train_acc
    ));
    Ok(TrainOutcome {
        trace,
        parameter_count: trained.model.parameter_count(),
    })
}

fn load_classifier(dir: &Path, classes: usize, m: usize) -> Result<Option<Tensor>> {
    let path = dir.join(CLASSIFIER_BIN);
    if !path.exists() {
        return Ok(None);
    }
    let mut arrays = checkpoint::read_arrays(&path)?;
    if arrays.len() != 1 || arrays[0].len() != classes * m {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: "classifier does not match the checkpoint".into(),
        });
    }
    Ok(Some(Tensor::from_vec(&[classes, m], arrays.remove(0))?))
}

/// Evaluate a checkpoint on `splits` (default: `cfg.eval.splits`), writing
/// `roc.csv`, `summary.json` and `dist_hist.csv` under `out/<split>/`.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    dataset: &Path,
    ckpt_dir: &Path,
    out: &Path,
    splits: Option<&[SplitName]>,
    console: Console,
) -> Result<Vec<Summary>> {
    if cfg.eval.max_pairs == 0 {
        return Err(Error::Config("eval.max_pairs must be positive".into()));
    }
    load_meta(dataset)?;
    let ckpt = load_checkpoint(ckpt_dir)?;
    let mut model = ckpt.model;
    let classes = ckpt.meta.classes;
    let classifier = load_classifier(ckpt_dir, classes.len(), model.config().m)?;
    fs::create_dir_all(out)?;

    let wanted: Vec<SplitName> = splits.map_or_else(|| cfg.eval.splits.clone(), <[_]>::to_vec);
    let mut summaries = Vec::new();
    for name in wanted {
        let Some(records) = load_split(dataset, name)? else {
            console.warn(format!(
                "split {} missing from dataset, skipped",
                name.key()
            ));
            continue;
        };
        let sigs: Vec<&ComplexSignal> = records.iter().map(|r| &r.signal).collect();
        let prepared = model.prepare(&sigs)?;
        let (fps, _) = model.run_prepared(&prepared, 64)?;
        let labels: Vec<u32> = records.iter().map(|r| r.device_id).collect();

        let mi = match (&classifier, name.known_devices_only()) {
            (Some(w), true) => {
                let known: Vec<usize> = (0..records.len())
                    .filter(|&i| classes.label(labels[i]).is_some())
                    .collect();
                if known.is_empty() {
                    None
                } else {
                    let m = model.config().m;
                    let z = Tensor::from_vec(
                        &[known.len(), m],
                        known
                            .iter()
                            .flat_map(|&i| fps[i].raw.iter().copied())
                            .collect(),
                    )?;
                    let (logits, _) = head_forward(&z, w, model.config().head())?;
                    let y: Vec<usize> = known
                        .iter()
                        .map(|&i| classes.label(labels[i]).expect("known"))
                        .collect();
                    let (_, _, log_q) = cross_entropy(&logits, &y)?;
                    Some(mi_bound_from_log_q(&log_q, classes.len())?)
                }
            }
            _ => None,
        };

        let vectors: Vec<Vec<f64>> = fps.into_iter().map(|f| f.vector).collect();
        let pairing = Pairing::Capped {
            max_pairs: cfg.eval.max_pairs,
            seed: derive_seed(cfg.seed, &format!("eval/{}", name.key())),
        };
        let report = evaluate_fingerprints(name.key(), &vectors, &labels, pairing, mi)?;
        let dir = out.join(name.key());
        fs::create_dir_all(&dir)?;
        write_roc_csv(&dir.join("roc.csv"), &report.roc)?;
        write_dist_hist_csv(&dir.join("dist_hist.csv"), &report.histogram)?;
        let summary = Summary::from(&report);
        write_summary_json(&dir.join("summary.json"), &summary)?;
        summaries.push(summary);
    }
    let mut table = format!("{:<10} {:>7} {:>7}", "split", "AUC", "EER");
    for s in &summaries {
        write!(table, "\n{:<10} {:>7.4} {:>7.4}", s.split, s.auc, s.eer).expect("string write");
    }
    console.result(table);
    Ok(summaries)
}

/// Export TS and NS offsets of one split to `out/offsets.csv`.
pub fn cmd_offsets(
    cfg: &ExperimentConfig,
    dataset: &Path,
    ckpt_dir: Option<&Path>,
    split: SplitName,
    out: &Path,
    console: Console,
) -> Result<f64> {
    let meta = load_meta(dataset)?;
    let records = require_split(dataset, split)?;
    let x = generate_preamble(meta.config.symbol_count, meta.config.samples_per_chip)?;
    let mut model = match ckpt_dir {
        Some(d) => Some(load_checkpoint(d)?.model),
        None => None,
    };
    let scatter = offset_scatter(&records, &x, cfg.model.search, model.as_mut())?;
    fs::create_dir_all(out)?;
    write_offsets_csv(&out.join("offsets.csv"), &scatter.rows)?;
    console.result(format!(
        "{}: {} records, TS frequency between/within variance ratio {:.3}",
        split.key(),
        scatter.rows.len(),
        scatter.ts_freq_variance_ratio
    ));
    Ok(scatter.ts_freq_variance_ratio)
}

/// Sweep dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// Evaluate at every `sweep.snr_db` test SNR.
    Snr,
    /// Train and evaluate every `(l_ns, l_rff)` combination.
    Complexity,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr" => Ok(SweepKind::Snr),
            "complexity" => Ok(SweepKind::Complexity),
            _ => Err(Error::Config(format!(
                "unknown sweep kind {s:?} (snr, complexity)"
            ))),
        }
    }
}

const SWEEP_HEADER: &str = "point,l_ns,l_rff,snr_db,split,auc,eer,parameter_count,status";

fn completed_points(path: &Path) -> Result<BTreeSet<String>> {
    if !path.exists() {
        return Ok(BTreeSet::new());
    }
    Ok(fs::read_to_string(path)?
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",ok"))
        .filter_map(|l| l.split(',').next().map(str::to_string))
        .collect())
}

fn sweep_point(
    cfg: &ExperimentConfig,
    point_dir: &Path,
    train_dataset: Option<&Path>,
    console: Console,
) -> Result<(Vec<Summary>, usize)> {
    let quiet = Console { quiet: true };
    let data_dir = point_dir.join("dataset");
    cmd_generate(cfg, &data_dir, quiet)?;
    let model_dir = point_dir.join("model");
    let params = match train_dataset {
        Some(shared) => load_checkpoint(shared)?.model.parameter_count(),
        None => cmd_train(cfg, &data_dir, &model_dir, console)?.parameter_count,
    };
    let ckpt = train_dataset.unwrap_or(&model_dir);
    let summaries = cmd_eval(cfg, &data_dir, ckpt, &point_dir.join("eval"), None, quiet)?;
    Ok((summaries, params))
}

/// Run a sweep, appending one row per point and split to `out/sweep.csv`.
/// Points already recorded as `ok` are skipped, so an interrupted sweep
/// can be resumed; failing points are recorded and the sweep continues.
pub fn cmd_sweep(
    kind: SweepKind,
    cfg: &ExperimentConfig,
    out: &Path,
    console: Console,
) -> Result<usize> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let csv = out.join("sweep.csv");
    let done = completed_points(&csv)?;
    if !csv.exists() {
        fs::write(&csv, format!("{SWEEP_HEADER}\n"))?;
    }
    let mut points: Vec<(String, ExperimentConfig)> = Vec::new();
    match kind {
        SweepKind::Snr => {
            for &snr in &cfg.sweep.snr_db {
                let mut c = cfg.clone();
                c.dataset.test_snr = Some(SnrPolicy::Fixed { db: snr });
                points.push((format!("snr{snr}"), c));
            }
        }
        SweepKind::Complexity => {
            for &l_ns in &cfg.sweep.l_ns {
                for &l_rff in &cfg.sweep.l_rff {
                    let mut c = cfg.clone();
                    c.model.l_ns = l_ns;
                    c.model.l_rff = l_rff;
                    points.push((format!("ns{l_ns}_rff{l_rff}"), c));
                }
            }
        }
    }

    // The training split does not depend on the test SNR: an SNR sweep
    // trains once and evaluates the shared model at every level.
    let shared = out.join("shared_model");
    if kind == SweepKind::Snr
        && points.iter().any(|(k, _)| !done.contains(k))
        && load_checkpoint(&shared).is_err()
    {
        let data_dir = out.join("shared_dataset");
        cmd_generate(cfg, &data_dir, Console { quiet: true })?;
        cmd_train(cfg, &data_dir, &shared, console)?;
    }

    let mut rows = 0;
    for (key, c) in &points {
        if done.contains(key) {
            console.info(format!("point {key} already complete, skipped"));
            continue;
        }
        console.info(format!("point {key}"));
        let shared_ref = (kind == SweepKind::Snr).then_some(shared.as_path());
        let snr = c
            .dataset
            .test_snr
            .as_ref()
            .map_or(String::new(), |p| match p {
                SnrPolicy::Fixed { db } => db.to_string(),
                _ => String::new(),
            });
        let mut text = String::new();
        match sweep_point(c, &out.join("points").join(key), shared_ref, console) {
            Ok((summaries, params)) => {
                for s in summaries {
                    writeln!(
                        text,
                        "{key},{},{},{snr},{},{},{},{params},ok",
                        c.model.l_ns, c.model.l_rff, s.split, s.auc, s.eer
                    )
                    .expect("string write");
                    rows += 1;
                }
            }
            Err(e) => {
                console.warn(format!("point {key} failed: {e}"));
                let msg = e.to_string().replace([',', '\n'], ";");
                writeln!(
                    text,
                    "{key},{},{},{snr},,,,,failed: {msg}",
                    c.model.l_ns, c.model.l_rff
                )
                .expect("string write");
                rows += 1;
            }
        }
        let mut existing = fs::read_to_string(&csv)?;
        existing.push_str(&text);
        fs::write(&csv, existing)?;
    }
    console.result(format!("{} rows written to {}", rows, csv.display()));
    Ok(rows)
}
