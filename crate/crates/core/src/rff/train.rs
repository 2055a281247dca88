use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::{init_classifier, ModelConfig, Prepared, RffModel};
use super::ops::{cross_entropy, head_backward, head_forward, Head};
use crate::error::{Error, Result};
use crate::eval::mi_bound_from_log_q;
use crate::nn::{Adam, AdamConfig, Mode, Tensor};
use crate::rng::stream;
use crate::signal::{apply_channel, ComplexSignal, TransmissionRecord};

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Add noise at an SNR drawn uniformly from `[lo, hi]` dB to every
    /// training record, fresh each epoch.
    pub augment_snr_db: Option<[f64; 2]>,
    /// Keep the NS networks at their (zero-head) initialization.
    pub freeze_ns: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 64,
            adam: AdamConfig::default(),
            augment_snr_db: None,
            freeze_ns: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if let Some([lo, hi]) = self.augment_snr_db {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!(
                    "bad augmentation range [{lo}, {hi}]"
                )));
            }
        }
        self.adam
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Statistics of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    /// `mean ln q(y|z) + ln K` over the epoch's batches, in nats.
    pub mi_bound: f64,
    /// The same without the `ln K` label-entropy term.
    pub mi_bound_raw: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
}

impl TrainTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,loss,train_acc,mi_bound")?;
        for e in &self.epochs {
            writeln!(f, "{},{},{},{}", e.epoch, e.loss, e.train_acc, e.mi_bound)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Label encoding: sorted device ids map to classes `0..K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    pub device_ids: Vec<u32>,
}

impl ClassMap {
    pub fn from_records(records: &[TransmissionRecord]) -> Self {
        let mut ids: Vec<u32> = records.iter().map(|r| r.device_id).collect();
        ids.sort_unstable();
        ids.dedup();
        Self { device_ids: ids }
    }

    pub fn len(&self) -> usize {
        self.device_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.device_ids.is_empty()
    }

    pub fn label(&self, id: u32) -> Option<usize> {
        self.device_ids.binary_search(&id).ok()
    }
}

/// A trained model together with everything needed to resume or inspect it.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: RffModel,
    /// Auxiliary classifier; not part of the inference artifact.
    pub classifier: Tensor,
    pub classes: ClassMap,
    pub optimizer: Adam,
    pub trace: TrainTrace,
}

/// Trainer state, exposed so callers can monitor the bound between epochs.
pub struct Trainer {
    pub model: RffModel,
    pub classifier: Tensor,
    pub classes: ClassMap,
    pub optimizer: Adam,
    pub config: TrainConfig,
    seed: u64,
    records: Vec<TransmissionRecord>,
    labels: Vec<usize>,
    /// Inputs reused every epoch when there is no augmentation.
    cached: Option<Prepared>,
    epoch: usize,
}

impl Trainer {
    pub fn new(
        records: &[TransmissionRecord],
        model_cfg: &ModelConfig,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if records.is_empty() {
            return Err(Error::arg("training set is empty"));
        }
        let classes = ClassMap::from_records(records);
        if classes.len() < 2 {
            return Err(Error::arg("need at least 2 known devices"));
        }
        let model = RffModel::new(model_cfg, seed)?;
        let classifier = init_classifier(
            classes.len(),
            model_cfg.m,
            &mut stream(seed, "init/classifier"),
        );
        let labels = records
            .iter()
            .map(|r| classes.label(r.device_id).expect("built from records"))
            .collect();
        let cached = if cfg.augment_snr_db.is_none() {
            let sig: Vec<&ComplexSignal> = records.iter().map(|r| &r.signal).collect();
            Some(model.prepare(&sig)?)
        } else {
            None
        };
        Ok(Self {
            model,
            classifier,
            classes,
            optimizer: Adam::new(cfg.adam)?,
            config: cfg.clone(),
            seed,
            records: records.to_vec(),
            labels,
            cached,
            epoch: 0,
        })
    }

    fn train_ns(&self) -> bool {
        self.model.pipeline().uses_ns() && !self.config.freeze_ns
    }

    fn head(&self) -> Head {
        self.model.config().head()
    }

    fn batch_inputs(&self, idx: &[usize]) -> Result<Prepared> {
        if let Some(c) = &self.cached {
            return Ok(c.select(idx));
        }
        let [lo, hi] = self
            .config
            .augment_snr_db
            .expect("no cache means augmentation");
        let mut sigs = Vec::with_capacity(idx.len());
        for &i in idx {
            let mut rng = stream(self.seed, &format!("augmentation/{}/{i}", self.epoch));
            let snr = if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            };
            sigs.push(apply_channel(&self.records[i].signal, snr, &mut rng)?);
        }
        let refs: Vec<&ComplexSignal> = sigs.iter().collect();
        self.model.prepare(&refs)
    }

    /// One pass over the training set.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let epoch = self.epoch + 1;
        let diverged = |reason: String| Error::Diverged { epoch, reason };
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        order.shuffle(&mut stream(self.seed, &format!("batching/{epoch}")));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let mut all_log_q = Vec::with_capacity(self.records.len());
        let train_ns = self.train_ns();
        let head = self.head();
        for idx in order.chunks(self.config.batch_size) {
            if idx.len() < 2 {
                continue;
            }
            let inputs = self.batch_inputs(idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
            for net in self.model.networks_mut() {
                net.zero_grad();
            }
            self.classifier.zero_grad();
            let step = (|| {
                let (out, tape) = self.model.forward(&inputs, Mode::Train, train_ns)?;
                let (logits, htape) = head_forward(&out.z, &self.classifier, head)?;
                let (loss, dlogits, log_q) = cross_entropy(&logits, &labels)?;
                let (dz, dw) = head_backward(&htape, &dlogits)?;
                self.classifier.accumulate_grad(&dw);
                self.model.backward(&tape, &dz)?;
                Ok::<_, Error>((loss, logits, log_q))
            })();
            let (loss, logits, log_q) = step.map_err(|e| diverged(e.to_string()))?;
            let k = self.classes.len();
            for (row, &y) in logits.data().chunks_exact(k).zip(&labels) {
                let arg = row
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |a, (j, &v)| if v > a.1 { (j, v) } else { a },
                    )
                    .0;
                correct += usize::from(arg == y);
            }
            loss_sum += loss * idx.len() as f64;
            all_log_q.extend(log_q);
            seen += idx.len();
            self.apply_step(train_ns)
                .map_err(|e| diverged(e.to_string()))?;
        }
        if seen == 0 {
            return Err(Error::arg("no training batch has at least 2 records"));
        }
        self.epoch = epoch;
        let mi = mi_bound_from_log_q(&all_log_q, self.classes.len())?;
        Ok(EpochStats {
            epoch,
            loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            mi_bound: mi.shifted,
            mi_bound_raw: mi.raw,
        })
    }

    fn apply_step(&mut self, train_ns: bool) -> Result<()> {
        let mut params: Vec<&mut Tensor> = Vec::new();
        if train_ns {
            for net in [&mut self.model.omega_net, &mut self.model.phi_net]
                .into_iter()
                .flatten()
            {
                params.extend(net.params_mut());
            }
        }
        params.extend(self.model.rff_net.params_mut());
        params.push(&mut self.classifier);
        self.optimizer.step(&mut params)
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Empirical bound `mean ln q(y|z) + ln K` on `records` with the model in
    /// evaluation mode; records of unknown devices are ignored.
    pub fn mi_bound(&mut self, records: &[TransmissionRecord]) -> Result<f64> {
        mi_lower_bound(&mut self.model, &self.classifier, &self.classes, records)
    }
}

/// Train on `records`. On divergence the partial trace is left in `trace`.
pub fn train_with_trace(
    records: &[TransmissionRecord],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    trace: &mut TrainTrace,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Trained> {
    let mut t = Trainer::new(records, model_cfg, cfg, seed)?;
    for _ in 0..cfg.epochs {
        let stats = t.run_epoch()?;
        on_epoch(&stats);
        trace.epochs.push(stats);
    }
    Ok(Trained {
        model: t.model,
        classifier: t.classifier,
        classes: t.classes,
        optimizer: t.optimizer,
        trace: trace.clone(),
    })
}

pub fn train(
    records: &[TransmissionRecord],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Trained> {
    train_with_trace(
        records,
        model_cfg,
        cfg,
        seed,
        &mut TrainTrace::default(),
        |_| {},
    )
}

/// `mean ln q_W(y|F(r)) + ln K` over the records whose device is in `classes`.
pub fn mi_lower_bound(
    model: &mut RffModel,
    classifier: &Tensor,
    classes: &ClassMap,
    records: &[TransmissionRecord],
) -> Result<f64> {
    let known: Vec<&TransmissionRecord> = records
        .iter()
        .filter(|r| classes.label(r.device_id).is_some())
        .collect();
    if known.is_empty() {
        return Err(Error::arg("no records of known devices"));
    }
    let sigs: Vec<&ComplexSignal> = known.iter().map(|r| &r.signal).collect();
    let prepared = model.prepare(&sigs)?;
    let (fps, _) = model.run_prepared(&prepared, 64)?;
    let m = model.config().m;
    let z = Tensor::from_vec(
        &[fps.len(), m],
        fps.iter().flat_map(|f| f.raw.clone()).collect(),
    )?;
    let (logits, _) = head_forward(&z, classifier, model.config().head())?;
    let labels: Vec<usize> = known
        .iter()
        .map(|r| classes.label(r.device_id).expect("filtered"))
        .collect();
    let (_, _, log_q) = cross_entropy(&logits, &labels)?;
    Ok(mi_bound_from_log_q(&log_q, classes.len())?.shifted)
}
