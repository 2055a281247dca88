use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::device::{age_profile, apply_device, AgingScales, DeviceProfile, MAX_DEVICE_CFO};
use super::{apply_channel, generate_preamble, ComplexSignal, NOISELESS};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Noise applied to generated records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SnrPolicy {
    Noiseless,
    Fixed { db: f64 },
    Uniform { min_db: f64, max_db: f64 },
}

impl SnrPolicy {
    pub fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            SnrPolicy::Noiseless => NOISELESS,
            SnrPolicy::Fixed { db } => db,
            SnrPolicy::Uniform { min_db, max_db } => rng.random_range(min_db..=max_db),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SnrPolicy::Noiseless => Ok(()),
            SnrPolicy::Fixed { db } if db.is_finite() => Ok(()),
            SnrPolicy::Uniform { min_db, max_db }
                if min_db.is_finite() && max_db.is_finite() && min_db <= max_db =>
            {
                Ok(())
            }
            other => Err(Error::Config(format!("invalid SNR policy {other:?}"))),
        }
    }
}

/// Ranges from which base device profiles are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DevicePopulation {
    /// CFO uniform in `+/-cfo_max` cycles/sample.
    pub cfo_max: f64,
    pub cfo_jitter_std: f64,
    pub iq_gain_max: f64,
    pub iq_phase_max: f64,
    /// `a3/a1` uniform in `[pa_a3_ratio_min, 0]`.
    pub pa_a3_ratio_min: f64,
    pub dc_max: f64,
    /// When set, devices differ only in carrier offset: every other
    /// impairment is neutral.
    pub offsets_only: bool,
}

impl Default for DevicePopulation {
    fn default() -> Self {
        Self {
            cfo_max: 8e-4,
            cfo_jitter_std: 2e-5,
            iq_gain_max: 0.05,
            iq_phase_max: 0.03,
            pa_a3_ratio_min: -0.08,
            dc_max: 0.02,
            offsets_only: false,
        }
    }
}

impl DevicePopulation {
    pub fn sample(&self, device_id: u32, rng: &mut Rng) -> DeviceProfile {
        let mut uniform = |half: f64| rng.random_range(-1.0..=1.0) * half;
        let cfo = uniform(self.cfo_max);
        let gain = uniform(self.iq_gain_max);
        let phase = uniform(self.iq_phase_max);
        let a3_ratio = (uniform(1.0) + 1.0) / 2.0 * self.pa_a3_ratio_min;
        let dc_mag = (uniform(1.0) + 1.0) / 2.0 * self.dc_max;
        let dc_arg = uniform(std::f64::consts::PI);
        let mut p = DeviceProfile::identity(device_id);
        p.cfo_cycles_per_sample = cfo;
        p.cfo_jitter_std = self.cfo_jitter_std;
        if !self.offsets_only {
            p.iq_gain_imbalance = gain;
            p.iq_phase_imbalance_rad = phase;
            p.pa_a3 = a3_ratio * p.pa_a1;
            p.dc_offset = Complex64::from_polar(dc_mag, dc_arg);
        }
        p
    }
}

/// Parameters of a synthetic capture campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub known_devices: usize,
    pub unknown_devices: usize,
    pub records_per_block: usize,
    /// Leading blocks (of 1-4) used for training.
    pub train_blocks: u16,
    pub symbol_count: usize,
    pub samples_per_chip: usize,
    pub snr: SnrPolicy,
    /// Overrides `snr` for every split except training.
    pub test_snr: Option<SnrPolicy>,
    pub aging_severity_6_7: f64,
    pub aging_severity_8_9: f64,
    pub aging_scales: AgingScales,
    pub population: DevicePopulation,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            known_devices: 10,
            unknown_devices: 5,
            records_per_block: 100,
            train_blocks: 4,
            symbol_count: 8,
            samples_per_chip: 5,
            snr: SnrPolicy::Fixed { db: 30.0 },
            test_snr: None,
            aging_severity_6_7: 0.3,
            aging_severity_8_9: 0.3,
            aging_scales: AgingScales::default(),
            population: DevicePopulation::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.known_devices < 2 {
            return Err(Error::Config("need at least 2 known devices".into()));
        }
        if self.records_per_block == 0 {
            return Err(Error::Config("records_per_block must be positive".into()));
        }
        if !(1..=4).contains(&self.train_blocks) {
            return Err(Error::Config("train_blocks must be in 1..=4".into()));
        }
        if self.symbol_count == 0 || self.samples_per_chip == 0 {
            return Err(Error::Config(
                "preamble needs positive symbol and chip counts".into(),
            ));
        }
        for s in [self.aging_severity_6_7, self.aging_severity_8_9] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config(format!("aging severity {s} outside [0, 1]")));
            }
        }
        if !(self.population.cfo_max >= 0.0 && self.population.cfo_max <= MAX_DEVICE_CFO) {
            return Err(Error::Config(format!(
                "cfo_max must lie in [0, {MAX_DEVICE_CFO}]"
            )));
        }
        if !(self.population.pa_a3_ratio_min > -1.0 && self.population.pa_a3_ratio_min <= 0.0) {
            return Err(Error::Config("pa_a3_ratio_min must lie in (-1, 0]".into()));
        }
        self.snr.validate()?;
        if let Some(p) = &self.test_snr {
            p.validate()?;
        }
        Ok(())
    }

    pub fn signal_len(&self) -> usize {
        self.symbol_count * super::CHIPS_PER_SYMBOL * self.samples_per_chip
    }

    fn total_devices(&self) -> usize {
        self.known_devices + self.unknown_devices
    }
}

/// One received preamble with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionRecord {
    pub signal: ComplexSignal,
    pub device_id: u32,
    pub block_id: u16,
    pub snr_db: f32,
    pub true_freq_offset: f64,
    pub true_phase_offset: f64,
}

/// Named dataset partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Closed,
    Open1,
    Open2,
    #[serde(rename = "open2_3")]
    Open2_3,
    Open4,
    #[serde(rename = "open4_5")]
    Open4_5,
}

impl SplitName {
    pub const ALL: [SplitName; 7] = [
        SplitName::Train,
        SplitName::Closed,
        SplitName::Open1,
        SplitName::Open2,
        SplitName::Open2_3,
        SplitName::Open4,
        SplitName::Open4_5,
    ];

    pub const TESTS: [SplitName; 6] = [
        SplitName::Closed,
        SplitName::Open1,
        SplitName::Open2,
        SplitName::Open4,
        SplitName::Open2_3,
        SplitName::Open4_5,
    ];

    /// File stem / CLI token.
    pub fn key(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Closed => "closed",
            SplitName::Open1 => "open1",
            SplitName::Open2 => "open2",
            SplitName::Open2_3 => "open2_3",
            SplitName::Open4 => "open4",
            SplitName::Open4_5 => "open4_5",
        }
    }

    /// Whether the split contains only devices seen in training.
    pub fn known_devices_only(self) -> bool {
        matches!(
            self,
            SplitName::Train | SplitName::Closed | SplitName::Open2 | SplitName::Open2_3
        )
    }

    fn devices_and_blocks(self, cfg: &DatasetConfig) -> (std::ops::Range<u32>, Vec<u16>) {
        let known = 0..cfg.known_devices as u32;
        let unknown = cfg.known_devices as u32..cfg.total_devices() as u32;
        match self {
            SplitName::Train => (known, (1..=cfg.train_blocks).collect()),
            SplitName::Closed => (known, vec![5]),
            SplitName::Open1 => (unknown, vec![5]),
            SplitName::Open2 => (known, vec![6, 7]),
            SplitName::Open2_3 => (known, vec![6, 7, 8, 9]),
            SplitName::Open4 => (unknown, vec![6, 7]),
            SplitName::Open4_5 => (unknown, vec![6, 7, 8, 9]),
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SplitName::Train => "Train",
            SplitName::Closed => "Closed",
            SplitName::Open1 => "Open 1",
            SplitName::Open2 => "Open 2",
            SplitName::Open2_3 => "Open 2-3",
            SplitName::Open4 => "Open 4",
            SplitName::Open4_5 => "Open 4-5",
        };
        f.write_str(s)
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .collect::<String>()
            .to_ascii_lowercase();
        SplitName::ALL
            .into_iter()
            .find(|n| n.key().replace('_', "") == norm)
            .ok_or_else(|| Error::arg(format!("unknown split {s:?}")))
    }
}

/// Base and aged profiles of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceEras {
    /// Blocks 1-5.
    pub base: DeviceProfile,
    /// Blocks 6-7.
    pub aged_6_7: DeviceProfile,
    /// Blocks 8-9.
    pub aged_8_9: DeviceProfile,
}

impl DeviceEras {
    pub fn for_block(&self, block: u16) -> &DeviceProfile {
        match block {
            6 | 7 => &self.aged_6_7,
            8 | 9 => &self.aged_8_9,
            _ => &self.base,
        }
    }
}

/// Generated dataset: training set plus the six test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<TransmissionRecord>,
    pub closed_test: Vec<TransmissionRecord>,
    pub open_tests: BTreeMap<SplitName, Vec<TransmissionRecord>>,
    pub devices: Vec<DeviceEras>,
}

impl DatasetSplit {
    pub fn get(&self, name: SplitName) -> Option<&[TransmissionRecord]> {
        match name {
            SplitName::Train => Some(&self.train),
            SplitName::Closed => Some(&self.closed_test),
            other => self.open_tests.get(&other).map(Vec::as_slice),
        }
    }

    /// Splits in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (SplitName, &[TransmissionRecord])> {
        SplitName::ALL
            .into_iter()
            .filter_map(move |n| self.get(n).map(|r| (n, r)))
    }
}

fn device_ids(records: &[TransmissionRecord]) -> BTreeSet<u32> {
    records.iter().map(|r| r.device_id).collect()
}

fn quantize_f32(mut s: ComplexSignal) -> ComplexSignal {
    for v in &mut s.samples {
        *v = Complex64::new(v.re as f32 as f64, v.im as f32 as f64);
    }
    s
}

fn generate_block(
    cfg: &DatasetConfig,
    x: &ComplexSignal,
    eras: &DeviceEras,
    block: u16,
    seed: u64,
) -> Result<Vec<TransmissionRecord>> {
    let profile = eras.for_block(block);
    let device = profile.device_id;
    let mut rng = rng::stream(seed, &format!("dataset/records/{device}/{block}"));
    let policy = if block <= 4 {
        cfg.snr
    } else {
        cfg.test_snr.unwrap_or(cfg.snr)
    };
    (0..cfg.records_per_block)
        .map(|_| {
            let phase: f64 = rng.random_range(0.0..1.0);
            let imprint = apply_device(x, profile, phase, &mut rng);
            let clean = imprint.signal.normalized()?;
            let snr_db = policy.draw(&mut rng);
            let noisy = apply_channel(&clean, snr_db, &mut rng)?;
            Ok(TransmissionRecord {
                signal: quantize_f32(noisy),
                device_id: device,
                block_id: block,
                snr_db: snr_db as f32,
                true_freq_offset: imprint.true_freq,
                true_phase_offset: imprint.true_phase,
            })
        })
        .collect()
}

/// Generate the full campaign deterministically from `seed`.
///
/// Known devices take ids `0..K`, unknown devices `K..K+U`. Blocks 1-5 use
/// base profiles, 6-7 and 8-9 two independently aged variants. Samples are
/// rounded to `f32` precision so the in-memory dataset is identical to its
/// on-disk form.
pub fn build_dataset(cfg: &DatasetConfig, seed: u64) -> Result<DatasetSplit> {
    cfg.validate()?;
    let x = generate_preamble(cfg.symbol_count, cfg.samples_per_chip)?;

    let mut prof_rng = rng::stream(seed, "dataset/profiles");
    let mut devices = Vec::with_capacity(cfg.total_devices());
    for id in 0..cfg.total_devices() as u32 {
        let base = cfg.population.sample(id, &mut prof_rng);
        let mut age_rng = rng::stream(seed, &format!("dataset/aging/{id}"));
        let aged_6_7 = age_profile(
            &base,
            cfg.aging_severity_6_7,
            &cfg.aging_scales,
            &mut age_rng,
        )?;
        let aged_8_9 = age_profile(
            &base,
            cfg.aging_severity_8_9,
            &cfg.aging_scales,
            &mut age_rng,
        )?;
        for p in [&base, &aged_6_7, &aged_8_9] {
            p.validate()?;
        }
        devices.push(DeviceEras {
            base,
            aged_6_7,
            aged_8_9,
        });
    }

    let mut blocks: BTreeMap<(u32, u16), Vec<TransmissionRecord>> = BTreeMap::new();
    let mut assemble = |name: SplitName| -> Result<Vec<TransmissionRecord>> {
        let (ids, block_ids) = name.devices_and_blocks(cfg);
        let mut out = Vec::new();
        for id in ids {
            for &b in &block_ids {
                if let std::collections::btree_map::Entry::Vacant(e) = blocks.entry((id, b)) {
                    let recs = generate_block(cfg, &x, &devices[id as usize], b, seed)?;
                    e.insert(recs);
                }
                out.extend_from_slice(&blocks[&(id, b)]);
            }
        }
        Ok(out)
    };

    let train = assemble(SplitName::Train)?;
    let closed_test = assemble(SplitName::Closed)?;
    let mut open_tests = BTreeMap::new();
    for name in &SplitName::ALL[2..] {
        open_tests.insert(*name, assemble(*name)?);
    }

    let train_ids = device_ids(&train);
    for name in [SplitName::Open1, SplitName::Open4, SplitName::Open4_5] {
        let ids = device_ids(&open_tests[&name]);
        if !train_ids.is_disjoint(&ids) {
            return Err(Error::Degenerate(format!(
                "{name} shares devices with training"
            )));
        }
    }

    Ok(DatasetSplit {
        train,
        closed_test,
        open_tests,
        devices,
    })
}
