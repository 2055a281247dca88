use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ops::{
    freq_compensate, freq_compensate_backward, hypersphere_project, phase_compensate,
    phase_compensate_backward, Head,
};
use crate::error::{Error, Result};
use crate::nn::{
    build_bcnn, image_grad_to_samples, images_from_samples, Bcnn, BcnnSpec, BcnnTape, Mode, Tensor,
};
use crate::rng::{stream, Rng};
use crate::signal::{generate_preamble, ComplexSignal, CHIPS_PER_SYMBOL};
use crate::sync::{compensate, OffsetEstimate, SearchGrid, TsEstimator};

/// Which synchronization front end and classifier head a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Neural synchronization + hypersphere head (the proposed method).
    NsHp,
    /// Neural synchronization + plain softmax.
    Ns,
    /// Traditional synchronization + hypersphere head.
    TsHp,
    /// Traditional synchronization + plain softmax.
    Ts,
    /// No synchronization, hypersphere head.
    DlHp,
    /// No synchronization, plain softmax: the bare BCNN.
    Dl,
    /// Traditional synchronization with the estimated offsets appended to
    /// the fingerprint network's features; hypersphere head.
    TsOffsets,
}

impl Pipeline {
    pub const ALL: [Pipeline; 7] = [
        Pipeline::NsHp,
        Pipeline::Ns,
        Pipeline::TsHp,
        Pipeline::Ts,
        Pipeline::DlHp,
        Pipeline::Dl,
        Pipeline::TsOffsets,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Pipeline::NsHp => "ns_hp",
            Pipeline::Ns => "ns",
            Pipeline::TsHp => "ts_hp",
            Pipeline::Ts => "ts",
            Pipeline::DlHp => "dl_hp",
            Pipeline::Dl => "dl",
            Pipeline::TsOffsets => "ts_offsets",
        }
    }

    pub fn uses_ns(self) -> bool {
        matches!(self, Pipeline::NsHp | Pipeline::Ns)
    }

    pub fn uses_ts(self) -> bool {
        matches!(self, Pipeline::TsHp | Pipeline::Ts | Pipeline::TsOffsets)
    }

    pub fn hypersphere(self) -> bool {
        !matches!(self, Pipeline::Ns | Pipeline::Ts | Pipeline::Dl)
    }

    /// Scalar features appended before the fingerprint network's output layer.
    pub fn extra_features(self) -> usize {
        if self == Pipeline::TsOffsets {
            2
        } else {
            0
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown pipeline {s:?}")))
    }
}

/// Neural `(omega, phi)` estimates of one record.
pub type NsOffsets = (f64, f64);

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub pipeline: Pipeline,
    pub symbol_count: usize,
    pub samples_per_chip: usize,
    /// Image width `S`; the signal is folded into `M/S` rows.
    pub image_width: usize,
    pub l_ns: usize,
    pub l_rff: usize,
    /// Fingerprint dimension.
    pub m: usize,
    /// Hypersphere radius.
    pub alpha: f64,
    /// Bound on the neural frequency estimate, cycles/sample.
    pub freq_scale: f64,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Search grid of the traditional estimator.
    pub search: SearchGrid,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            pipeline: Pipeline::NsHp,
            symbol_count: 8,
            samples_per_chip: 5,
            image_width: 80,
            l_ns: 4,
            l_rff: 16,
            m: 64,
            alpha: 16.0,
            freq_scale: 0.01,
            leaky_slope: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            search: SearchGrid::default(),
        }
    }
}

impl ModelConfig {
    pub fn signal_len(&self) -> usize {
        self.symbol_count * CHIPS_PER_SYMBOL * self.samples_per_chip
    }

    pub fn head(&self) -> Head {
        if self.pipeline.hypersphere() {
            Head::Hypersphere { alpha: self.alpha }
        } else {
            Head::Naive
        }
    }

    fn spec(&self, complexity: usize, output_dim: usize) -> Result<BcnnSpec> {
        let m = self.signal_len();
        if self.image_width == 0 || !m.is_multiple_of(self.image_width) {
            return Err(Error::Config(format!(
                "image width {} does not divide signal length {m}",
                self.image_width
            )));
        }
        let mut spec = BcnnSpec::standard(
            m / self.image_width,
            self.image_width,
            complexity,
            output_dim,
        );
        spec.leaky_slope = self.leaky_slope;
        spec.bn_eps = self.bn_eps;
        spec.bn_momentum = self.bn_momentum;
        Ok(spec)
    }

    /// Spec of each neural offset estimator (scalar output, zero-initialized head).
    pub fn ns_spec(&self) -> Result<BcnnSpec> {
        let mut spec = self.spec(self.l_ns, 1)?;
        spec.zero_head = true;
        Ok(spec)
    }

    pub fn rff_spec(&self) -> Result<BcnnSpec> {
        let mut spec = self.spec(self.l_rff, self.m)?;
        spec.extra_features = self.pipeline.extra_features();
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.symbol_count == 0 || self.samples_per_chip == 0 {
            return Err(Error::Config(
                "preamble needs positive symbol and chip counts".into(),
            ));
        }
        if self.m == 0 || self.l_rff == 0 || (self.pipeline.uses_ns() && self.l_ns == 0) {
            return Err(Error::Config("m, l_rff and l_ns must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(self.freq_scale > 0.0 && self.freq_scale <= 0.5) {
            return Err(Error::Config("freq_scale must lie in (0, 0.5]".into()));
        }
        if self.search.points < 2 || !(self.search.max_freq > 0.0) || !(self.search.tolerance > 0.0)
        {
            return Err(Error::Config("invalid TS search grid".into()));
        }
        let check = |s: Result<BcnnSpec>| {
            s.and_then(|s| s.validate().map_err(|e| Error::Config(e.to_string())))
        };
        check(self.rff_spec())?;
        if self.pipeline.uses_ns() {
            check(self.ns_spec())?;
        }
        Ok(())
    }
}

/// An extracted fingerprint. For hypersphere pipelines `vector` is the
/// projection of `raw` onto the radius-alpha sphere; otherwise it is `raw`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub vector: Vec<f64>,
    pub raw: Vec<f64>,
}

/// Normalized (and, for TS pipelines, compensated) network inputs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub samples: Vec<Vec<Complex64>>,
    pub ts: Option<Vec<OffsetEstimate>>,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Prepared {
        Prepared {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            ts: self
                .ts
                .as_ref()
                .map(|t| idx.iter().map(|&i| t[i]).collect()),
        }
    }
}

/// Outputs of one batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Raw fingerprints `[N, m]`.
    pub z: Tensor,
    /// Neural offsets (zero when the pipeline has no NS stage).
    pub omega: Vec<f64>,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone)]
struct NsTape {
    omega_tape: BcnnTape,
    phi_tape: BcnnTape,
    tanh: Vec<f64>,
    omega: Vec<f64>,
    phi: Vec<f64>,
    r_omega: Vec<Vec<Complex64>>,
    r_ns: Vec<Vec<Complex64>>,
}

/// Saved state for [`RffModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTape {
    ns: Option<NsTape>,
    rff: BcnnTape,
}

/// The full extractor: optional neural offset estimators, the fingerprint
/// BCNN, and the preamble/estimator used by TS pipelines.
#[derive(Debug, Clone)]
pub struct RffModel {
    config: ModelConfig,
    pub omega_net: Option<Bcnn>,
    pub phi_net: Option<Bcnn>,
    pub rff_net: Bcnn,
    ts: Option<TsEstimator>,
}

impl RffModel {
    /// Fresh model; each network draws from its own named stream of `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (omega_net, phi_net) = if config.pipeline.uses_ns() {
            let spec = config.ns_spec()?;
            (
                Some(build_bcnn(&spec, &mut stream(seed, "init/omega"))?),
                Some(build_bcnn(&spec, &mut stream(seed, "init/phi"))?),
            )
        } else {
            (None, None)
        };
        let rff_net = build_bcnn(&config.rff_spec()?, &mut stream(seed, "init/rff"))?;
        Self::from_parts(config.clone(), omega_net, phi_net, rff_net)
    }

    /// Assemble a model from existing networks (shapes are checked).
    pub fn from_parts(
        config: ModelConfig,
        omega_net: Option<Bcnn>,
        phi_net: Option<Bcnn>,
        rff_net: Bcnn,
    ) -> Result<Self> {
        config.validate()?;
        if config.pipeline.uses_ns() != (omega_net.is_some() && phi_net.is_some()) {
            return Err(Error::arg(format!(
                "pipeline {} {} neural synchronization networks",
                config.pipeline,
                if config.pipeline.uses_ns() {
                    "requires"
                } else {
                    "takes no"
                }
            )));
        }
        if rff_net.spec() != &config.rff_spec()? {
            return Err(Error::arg(
                "fingerprint network does not match the model config",
            ));
        }
        let ts = if config.pipeline.uses_ts() {
            let x = generate_preamble(config.symbol_count, config.samples_per_chip)?;
            Some(TsEstimator::new(&x, config.search)?)
        } else {
            None
        };
        Ok(Self {
            config,
            omega_net,
            phi_net,
            rff_net,
            ts,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn pipeline(&self) -> Pipeline {
        self.config.pipeline
    }

    /// Zero the output layers of both NS networks, so that `omega = phi = 0`.
    pub fn zero_ns_heads(&mut self) {
        for net in [&mut self.omega_net, &mut self.phi_net]
            .into_iter()
            .flatten()
        {
            let head = net.head_mut();
            head.weight.data_mut().fill(0.0);
            head.bias.data_mut().fill(0.0);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.networks().iter().map(|n| n.parameter_count()).sum()
    }

    /// Networks in serialization order: omega, phi (when present), rff.
    pub fn networks(&self) -> Vec<&Bcnn> {
        let mut v: Vec<&Bcnn> = self.omega_net.iter().chain(self.phi_net.iter()).collect();
        v.push(&self.rff_net);
        v
    }

    pub fn networks_mut(&mut self) -> Vec<&mut Bcnn> {
        let mut v: Vec<&mut Bcnn> = self
            .omega_net
            .iter_mut()
            .chain(self.phi_net.iter_mut())
            .collect();
        v.push(&mut self.rff_net);
        v
    }

    /// Energy-normalize each signal to unit power and, for TS pipelines,
    /// remove the estimated offsets.
    pub fn prepare(&self, signals: &[&ComplexSignal]) -> Result<Prepared> {
        let m = self.config.signal_len();
        let mut samples = Vec::with_capacity(signals.len());
        let mut ts = self.ts.as_ref().map(|_| Vec::with_capacity(signals.len()));
        for s in signals {
            if s.len() != m {
                return Err(Error::shape(format!(
                    "model expects {m} samples, got {}",
                    s.len()
                )));
            }
            let n = (*s).clone().normalized()?;
            match (&self.ts, &mut ts) {
                (Some(est), Some(out)) => {
                    let e = est.estimate(&n)?;
                    samples.push(compensate(&n, &e).samples);
                    out.push(e);
                }
                _ => samples.push(n.samples),
            }
        }
        Ok(Prepared { samples, ts })
    }

    fn extras(&self, prepared: &Prepared) -> Result<Option<Tensor>> {
        if self.config.pipeline.extra_features() == 0 {
            return Ok(None);
        }
        let ts = prepared
            .ts
            .as_ref()
            .ok_or_else(|| Error::arg("offset features need TS estimates"))?;
        let data = ts
            .iter()
            .flat_map(|e| {
                [
                    e.freq_cycles_per_sample / self.config.freq_scale,
                    e.phase_cycles,
                ]
            })
            .collect();
        Ok(Some(Tensor::from_vec(&[ts.len(), 2], data)?))
    }

    fn images(&self, samples: &[Vec<Complex64>]) -> Result<Tensor> {
        let refs: Vec<&[Complex64]> = samples.iter().map(Vec::as_slice).collect();
        images_from_samples(&refs, self.config.image_width)
    }

    /// Batched forward pass. `train_ns = false` runs the NS networks in
    /// evaluation mode and records nothing for them, so `backward` leaves
    /// them untouched.
    pub fn forward(
        &mut self,
        prepared: &Prepared,
        mode: Mode,
        train_ns: bool,
    ) -> Result<(BatchOutput, ForwardTape)> {
        let n = prepared.len();
        if n == 0 {
            return Err(Error::arg("empty batch"));
        }
        let extras = self.extras(prepared)?;
        let scale = self.config.freq_scale;
        let (ns, omega, phi, rff_in) = match (&mut self.omega_net, &mut self.phi_net) {
            (Some(omega_net), Some(phi_net)) => {
                let ns_mode = if train_ns { mode } else { Mode::Eval };
                let imgs = {
                    let refs: Vec<&[Complex64]> =
                        prepared.samples.iter().map(Vec::as_slice).collect();
                    images_from_samples(&refs, self.config.image_width)?
                };
                let (o, omega_tape) = omega_net.forward(&imgs, None, ns_mode)?;
                let tanh: Vec<f64> = o.data().iter().map(|v| v.tanh()).collect();
                let omega: Vec<f64> = tanh.iter().map(|t| scale * t).collect();
                let r_omega: Vec<Vec<Complex64>> = prepared
                    .samples
                    .iter()
                    .zip(&omega)
                    .map(|(r, &w)| freq_compensate(r, w))
                    .collect();
                let refs: Vec<&[Complex64]> = r_omega.iter().map(Vec::as_slice).collect();
                let imgs = images_from_samples(&refs, self.config.image_width)?;
                let (p, phi_tape) = phi_net.forward(&imgs, None, ns_mode)?;
                let phi = p.into_data();
                let r_ns: Vec<Vec<Complex64>> = r_omega
                    .iter()
                    .zip(&phi)
                    .map(|(r, &f)| phase_compensate(r, f))
                    .collect();
                let tape = train_ns.then(|| NsTape {
                    omega_tape,
                    phi_tape,
                    tanh,
                    omega: omega.clone(),
                    phi: phi.clone(),
                    r_omega,
                    r_ns: r_ns.clone(),
                });
                (tape, omega, phi, r_ns)
            }
            _ => (None, vec![0.0; n], vec![0.0; n], prepared.samples.clone()),
        };
        let imgs = self.images(&rff_in)?;
        let (z, rff) = self.rff_net.forward(&imgs, extras.as_ref(), mode)?;
        Ok((BatchOutput { z, omega, phi }, ForwardTape { ns, rff }))
    }

    /// Accumulate parameter gradients for the fingerprint gradient `dz`.
    pub fn backward(&mut self, tape: &ForwardTape, dz: &Tensor) -> Result<()> {
        let (d_img, _) = self.rff_net.backward(&tape.rff, dz)?;
        let Some(ns) = &tape.ns else {
            return Ok(());
        };
        let (Some(omega_net), Some(phi_net)) = (&mut self.omega_net, &mut self.phi_net) else {
            return Err(Error::arg(
                "tape carries NS state but model has no NS networks",
            ));
        };
        let d_rns = image_grad_to_samples(&d_img)?;
        let n = d_rns.len();
        let mut d_romega = Vec::with_capacity(n);
        let mut d_phi = Vec::with_capacity(n);
        for i in 0..n {
            let (dr, dp) = phase_compensate_backward(&ns.r_ns[i], &d_rns[i], ns.phi[i]);
            d_romega.push(dr);
            d_phi.push(dp);
        }
        let (d_img_phi, _) = phi_net.backward(&ns.phi_tape, &Tensor::from_vec(&[n, 1], d_phi)?)?;
        for (acc, g) in d_romega.iter_mut().zip(image_grad_to_samples(&d_img_phi)?) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        let scale = self.config.freq_scale;
        let d_o: Vec<f64> = (0..n)
            .map(|i| {
                let (_, dw) = freq_compensate_backward(&ns.r_omega[i], &d_romega[i], ns.omega[i]);
                dw * scale * (1.0 - ns.tanh[i] * ns.tanh[i])
            })
            .collect();
        omega_net.backward(&ns.omega_tape, &Tensor::from_vec(&[n, 1], d_o)?)?;
        Ok(())
    }

    /// Map raw network outputs to fingerprints.
    pub fn to_fingerprints(&self, z: &Tensor) -> Result<Vec<Fingerprint>> {
        let m = self.config.m;
        z.data()
            .chunks_exact(m)
            .map(|raw| {
                let vector = if self.config.pipeline.hypersphere() {
                    hypersphere_project(raw, self.config.alpha)?
                } else {
                    raw.to_vec()
                };
                Ok(Fingerprint {
                    vector,
                    raw: raw.to_vec(),
                })
            })
            .collect()
    }

    /// Inference on prepared inputs (batchnorm in evaluation mode).
    pub fn run_prepared(
        &mut self,
        prepared: &Prepared,
        chunk: usize,
    ) -> Result<(Vec<Fingerprint>, Vec<NsOffsets>)> {
        let chunk = chunk.max(1);
        let mut fps = Vec::with_capacity(prepared.len());
        let mut offsets = Vec::with_capacity(prepared.len());
        let idx: Vec<usize> = (0..prepared.len()).collect();
        for part in idx.chunks(chunk) {
            let sub = prepared.select(part);
            let (out, _) = self.forward(&sub, Mode::Eval, false)?;
            fps.extend(self.to_fingerprints(&out.z)?);
            offsets.extend(out.omega.into_iter().zip(out.phi));
        }
        Ok((fps, offsets))
    }

    /// Fingerprints of `signals`.
    pub fn extract(&mut self, signals: &[&ComplexSignal]) -> Result<Vec<Fingerprint>> {
        let prepared = self.prepare(signals)?;
        Ok(self.run_prepared(&prepared, 64)?.0)
    }

    /// Neural offsets `(omega_NS, phi_NS)` per signal; zeros without NS.
    pub fn ns_offsets(&mut self, signals: &[&ComplexSignal]) -> Result<Vec<(f64, f64)>> {
        let prepared = self.prepare(signals)?;
        Ok(self.run_prepared(&prepared, 64)?.1)
    }
}

/// TS-compensate `r` against the preamble `x`, then run the fingerprint
/// network of a TS pipeline model (appending the estimated offsets for
/// [`Pipeline::TsOffsets`]).
pub fn ts_pipeline_extract(
    r: &ComplexSignal,
    x: &ComplexSignal,
    model: &mut RffModel,
) -> Result<Fingerprint> {
    if !model.pipeline().uses_ts() {
        return Err(Error::arg(format!(
            "pipeline {} has no TS stage",
            model.pipeline()
        )));
    }
    let n = r.clone().normalized()?;
    let est = TsEstimator::new(x, model.config.search)?.estimate(&n)?;
    let prepared = Prepared {
        samples: vec![compensate(&n, &est).samples],
        ts: Some(vec![est]),
    };
    let (mut fps, _) = model.run_prepared(&prepared, 1)?;
    Ok(fps.remove(0))
}

/// Random `[K, m]` classifier with `N(0, 1/m)` entries.
pub fn init_classifier(classes: usize, m: usize, rng: &mut Rng) -> Tensor {
    use rand::Rng as _;
    let std = (1.0 / m as f64).sqrt();
    let data = (0..classes * m)
        .map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    Tensor::from_vec(&[classes, m], data).expect("sized")
}
