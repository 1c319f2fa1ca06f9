//! Toy adversarial training with a non-saturating loss and adaptive-moment
//! updates.
//!
//! A run is a pure function of `(TrainConfig, DatasetSpec)`: every random
//! draw comes from a labeled child stream of the config seed, parallel
//! sections reduce in fixed order, and the serialized report is
//! byte-identical across repeats and thread counts. Wall-clock time is kept
//! out of the serialized form for the same reason.

use crate::diagnostics::{self, ConditionConfig};
use crate::error::{Error, Result};
use crate::gan::data::{sample_dataset, DatasetSpec};
use crate::inject::Variant;
use crate::layers::{Injection, Layer, Mode, Network};
use crate::rng::RandomSource;
use crate::tape::Tape;
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which injection the generator carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionMode {
    None,
    Eni,
    Rni(Variant),
}

impl InjectionMode {
    pub fn name(&self) -> String {
        match self {
            InjectionMode::None => "none".into(),
            InjectionMode::Eni => "eni".into(),
            InjectionMode::Rni(v) => format!("rni-{}", v.name()),
        }
    }
}

impl std::str::FromStr for InjectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(InjectionMode::None),
            "eni" => Ok(InjectionMode::Eni),
            other => match other.strip_prefix("rni-") {
                Some(v) => Ok(InjectionMode::Rni(v.parse()?)),
                None => Err(Error::invalid(format!("unknown injection mode `{other}`"))),
            },
        }
    }
}

impl std::fmt::Display for InjectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl Serialize for InjectionMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for InjectionMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

fn default_latent_dim() -> usize { 2 }
fn default_gen_hidden() -> usize { 32 }
fn default_gen_channels() -> usize { 4 }
fn default_disc_hidden() -> usize { 32 }
fn default_injection() -> InjectionMode { InjectionMode::None }
fn default_learning_rate() -> f64 { 1e-3 }
// Zero first-moment decay: with β₁ = 0.9 the two-player updates oscillate
// and the toy runs never leave the indifference point (measured: annulus
// JS stuck at ~0.62 vs ~0.28 with β₁ = 0). GAN practice drops momentum.
fn default_beta1() -> f64 { 0.0 }
fn default_beta2() -> f64 { 0.999 }
fn default_batch_size() -> usize { 64 }
fn default_steps() -> usize { 20_000 }
fn default_metric_every() -> usize { 1000 }
fn default_metric_samples() -> usize { 20_000 }
fn default_ppl_paths() -> usize { 4096 }
fn default_condition_pairs() -> usize { 4096 }
fn default_grad_probes() -> usize { 1024 }

/// Run configuration. Serde defaults let config files state only the
/// fields they change.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_gen_hidden")]
    pub gen_hidden: usize,
    #[serde(default = "default_gen_channels")]
    pub gen_channels: usize,
    #[serde(default = "default_disc_hidden")]
    pub disc_hidden: usize,
    #[serde(default = "default_injection")]
    pub injection: InjectionMode,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Metric snapshot cadence in steps (a snapshot always lands on step 0
    /// and on the final step).
    #[serde(default = "default_metric_every")]
    pub metric_every: usize,
    #[serde(default = "default_metric_samples")]
    pub metric_samples: usize,
    #[serde(default = "default_ppl_paths")]
    pub ppl_paths: usize,
    #[serde(default = "default_condition_pairs")]
    pub condition_pairs: usize,
    #[serde(default = "default_grad_probes")]
    pub grad_probes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_dim: default_latent_dim(),
            gen_hidden: default_gen_hidden(),
            gen_channels: default_gen_channels(),
            disc_hidden: default_disc_hidden(),
            injection: default_injection(),
            learning_rate: default_learning_rate(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            batch_size: default_batch_size(),
            steps: default_steps(),
            seed: 0,
            metric_every: default_metric_every(),
            metric_samples: default_metric_samples(),
            ppl_paths: default_ppl_paths(),
            condition_pairs: default_condition_pairs(),
            grad_probes: default_grad_probes(),
        }
    }
}

impl TrainConfig {
    /// Small budget sized for the desk experiments in this crate: a couple
    /// of thousand alternating steps train the 2-D toys to a stable fit in
    /// tens of seconds on a laptop core. Snapshot sample sizes are kept
    /// moderate; final experiment verdicts re-measure with larger ones.
    pub fn desk() -> Self {
        TrainConfig {
            steps: 2500,
            metric_every: 500,
            metric_samples: 8192,
            ppl_paths: 2048,
            condition_pairs: 2048,
            grad_probes: 256,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("gen_hidden", self.gen_hidden),
            ("gen_channels", self.gen_channels),
            ("disc_hidden", self.disc_hidden),
            ("batch_size", self.batch_size),
            ("metric_samples", self.metric_samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("moment decays must lie in [0,1)"));
        }
        Ok(())
    }
}

/// Base feature-map side length of the generator trunk.
const BASE_SIDE: usize = 4;

/// Dense trunk → (c,4,4) map → optional injection → upsample + conv →
/// dense head to the ambient dimension.
pub fn build_generator(cfg: &TrainConfig, ambient: usize, rs: &mut RandomSource) -> Result<Network> {
    let c = cfg.gen_channels;
    let side = BASE_SIDE;
    let map_len = c * side * side;
    let mut layers = vec![
        Layer::dense_init(cfg.gen_hidden, cfg.latent_dim, rs)?,
        Layer::LeakyRelu,
        Layer::dense_init(cfg.gen_hidden, cfg.gen_hidden, rs)?,
        Layer::LeakyRelu,
        Layer::dense_init(map_len, cfg.gen_hidden, rs)?,
        Layer::Reshape { target: vec![c, side, side] },
    ];
    match cfg.injection {
        InjectionMode::None => {}
        InjectionMode::Eni => {
            layers.push(Layer::Inject(Injection::Eni { strength: 1.0 }));
        }
        InjectionMode::Rni(Variant::CnnSigma) => {
            layers.push(Layer::Inject(Injection::rni_cnn(c, side, side, rs)?));
        }
        InjectionMode::Rni(variant) => {
            layers.push(Layer::Inject(Injection::rni(side, side, variant)));
        }
    }
    let up = 2 * side;
    layers.extend([
        Layer::Upsample2x,
        Layer::conv2d_init(c, c, rs)?,
        Layer::LeakyRelu,
        Layer::Reshape { target: vec![c * up * up] },
        Layer::dense_init(ambient, c * up * up, rs)?,
    ]);
    Ok(Network::new(layers))
}

pub fn build_discriminator(
    cfg: &TrainConfig,
    ambient: usize,
    rs: &mut RandomSource,
) -> Result<Network> {
    Ok(Network::new(vec![
        Layer::dense_init(cfg.disc_hidden, ambient, rs)?,
        Layer::LeakyRelu,
        Layer::dense_init(cfg.disc_hidden, cfg.disc_hidden, rs)?,
        Layer::LeakyRelu,
        Layer::dense_init(1, cfg.disc_hidden, rs)?,
    ]))
}

/// Adaptive-moment optimizer state aligned with a network's registry order.
struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: u32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    fn new(net: &Network, cfg: &TrainConfig) -> Adam {
        let shapes: Vec<Tensor> = net
            .param_keys()
            .iter()
            .map(|k| {
                let p = net.param(*k).expect("registry key");
                Tensor::zeros(p.shape().to_vec())
            })
            .collect();
        Adam {
            lr: cfg.learning_rate,
            b1: cfg.beta1,
            b2: cfg.beta2,
            eps: 1e-8,
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    fn step(&mut self, net: &mut Network, grads: &[Tensor]) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.b1.powi(self.t as i32);
        let bc2 = 1.0 - self.b2.powi(self.t as i32);
        for (idx, key) in net.param_keys().into_iter().enumerate() {
            let mut p = net.param(key)?;
            let g = &grads[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..p.len() {
                let gi = g.data()[i];
                m.data_mut()[i] = self.b1 * m.data()[i] + (1.0 - self.b1) * gi;
                v.data_mut()[i] = self.b2 * v.data()[i] + (1.0 - self.b2) * gi * gi;
                let mhat = m.data()[i] / bc1;
                let vhat = v.data()[i] / bc2;
                p.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            net.set_param(key, p)?;
        }
        Ok(())
    }
}

/// One metric snapshot row. `mc`/`ttmc` travel in the JSON report; the CSV
/// timeline carries the seven contract columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub js: f64,
    pub frechet: f64,
    pub path_length: f64,
    pub grad_proxy: f64,
    pub mc: f64,
    pub ttmc: f64,
}

/// Full training record. The serialized form is deterministic; wall-clock
/// stays in memory only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub dataset: DatasetSpec,
    pub timeline: Vec<TimelineEntry>,
    pub d_losses: Vec<f64>,
    pub g_losses: Vec<f64>,
    /// Step at which a non-finite loss halted training, if any.
    pub diverged: Option<usize>,
    /// Final parameters, as the layer-stack JSON documents.
    pub generator: serde_json::Value,
    pub discriminator: serde_json::Value,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// CSV timeline with the contract header.
    pub fn timeline_csv(&self) -> String {
        let mut out = String::from("step,d_loss,g_loss,js,frechet,path_length,grad_proxy\n");
        for e in &self.timeline {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.step, e.d_loss, e.g_loss, e.js, e.frechet, e.path_length, e.grad_proxy
            ));
        }
        out
    }

    pub fn final_entry(&self) -> Option<&TimelineEntry> {
        self.timeline.last()
    }
}

/// Report plus the live networks for follow-up diagnostics.
pub struct TrainOutcome {
    pub report: TrainReport,
    pub generator: Network,
    pub discriminator: Network,
}

// stream labels inside a run
const NS_INIT: u64 = 0;
const NS_STEP: u64 = 1;
const NS_METRIC: u64 = 2;

struct LossEval {
    loss: f64,
    grads: Option<Vec<Tensor>>,
}

/// Discriminator objective on one batch: mean softplus(−D(x)) over data
/// plus mean softplus(D(G(z))) over fakes.
fn disc_pass(
    disc: &Network,
    real: &[Tensor],
    fake: &[Tensor],
    want_grads: bool,
) -> Result<LossEval> {
    let mut tape = Tape::new();
    let bound = disc.bind_params(&mut tape);
    let inv_real = tape.leaf(Tensor::scalar(1.0 / real.len() as f64));
    let inv_fake = tape.leaf(Tensor::scalar(1.0 / fake.len() as f64));
    let mut total: Option<crate::tape::NodeId> = None;
    for x in real {
        let input = tape.leaf(x.clone());
        let (score, _) = disc.forward_bound(&mut tape, &bound, input, Mode::Deterministic, None)?;
        let neg = tape.neg(score);
        let term = tape.softplus(neg);
        let scaled = tape.scalar_mul(inv_real, term)?;
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    for x in fake {
        let input = tape.leaf(x.clone());
        let (score, _) = disc.forward_bound(&mut tape, &bound, input, Mode::Deterministic, None)?;
        let term = tape.softplus(score);
        let scaled = tape.scalar_mul(inv_fake, term)?;
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    let loss_node = total.expect("nonempty batch");
    let loss = tape.value(loss_node).data()[0];
    let grads = if want_grads {
        Some(tape.grad(loss_node, &bound.nodes())?)
    } else {
        None
    };
    Ok(LossEval { loss, grads })
}

/// Generator objective: mean softplus(−D(G(z))) with fresh per-sample noise.
fn gen_pass(
    gen: &Network,
    disc: &Network,
    latents: &[Tensor],
    noise: &RandomSource,
    want_grads: bool,
) -> Result<LossEval> {
    let mut tape = Tape::new();
    let g_bound = gen.bind_params(&mut tape);
    let d_bound = disc.bind_params(&mut tape);
    let inv = tape.leaf(Tensor::scalar(1.0 / latents.len() as f64));
    let mut total: Option<crate::tape::NodeId> = None;
    for (i, z) in latents.iter().enumerate() {
        let input = tape.leaf(z.clone());
        let mut sample_noise = noise.child(i as u64);
        let (out, _) = gen.forward_bound(
            &mut tape,
            &g_bound,
            input,
            Mode::Stochastic,
            Some(&mut sample_noise),
        )?;
        let (score, _) = disc.forward_bound(&mut tape, &d_bound, out, Mode::Deterministic, None)?;
        let neg = tape.neg(score);
        let term = tape.softplus(neg);
        let scaled = tape.scalar_mul(inv, term)?;
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    let loss_node = total.expect("nonempty batch");
    let loss = tape.value(loss_node).data()[0];
    let grads = if want_grads {
        Some(tape.grad(loss_node, &g_bound.nodes())?)
    } else {
        None
    };
    Ok(LossEval { loss, grads })
}

/// Stochastic generator samples as an (n × ambient) matrix; sample `i`
/// always uses noise stream `child(i)`, so the cloud is independent of
/// evaluation order and thread count.
pub fn generator_samples(gen: &Network, latent_dim: usize, n: usize, rs: &RandomSource) -> Result<Tensor> {
    let rows: Vec<Tensor> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Tensor> {
            let mut stream = rs.child(i as u64);
            let z = stream.gaussian(&[latent_dim])?;
            let mut noise = stream.child(u64::MAX);
            let (out, _) = gen.forward(&z, Some(&mut noise), Mode::Stochastic)?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let dim = rows[0].len();
    let mut data = Vec::with_capacity(n * dim);
    for r in &rows {
        data.extend_from_slice(r.data());
    }
    Tensor::new([n, dim], data)
}

/// Largest spectral-norm estimate of the generator Jacobian over latent
/// probes; 8 power-iteration steps on JᵀJ per probe.
pub fn grad_norm_proxy(
    gen: &Network,
    latent_dim: usize,
    probes: usize,
    rs: &RandomSource,
) -> Result<f64> {
    let norms: Vec<f64> = (0..probes)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut stream = rs.child(i as u64);
            let z = stream.gaussian(&[latent_dim])?;
            let j = diagnostics::jacobian(gen, &z)?;
            Ok(spectral_norm(&j, 8))
        })
        .collect::<Result<_>>()?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

fn spectral_norm(j: &Tensor, iters: usize) -> f64 {
    let n = j.shape()[1];
    let mut v = Tensor::full([n], 1.0 / (n as f64).sqrt());
    let jt = j.transpose().expect("matrix");
    for _ in 0..iters {
        let w = jt.matvec(&j.matvec(&v).expect("dims")).expect("dims");
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w.scale(1.0 / norm);
    }
    j.matvec(&v).expect("dims").norm()
}

fn snapshot(
    step: usize,
    d_loss: f64,
    g_loss: f64,
    gen: &Network,
    cfg: &TrainConfig,
    data: &DatasetSpec,
    metric_rs: &RandomSource,
) -> Result<TimelineEntry> {
    let stream = metric_rs.child(step as u64);
    let mut data_rs = stream.child(0);
    let gen_rs = stream.child(1);
    let ppl_rs = stream.child(2);
    let cond_rs = stream.child(3);
    let probe_rs = stream.child(4);

    let ambient = data.ambient_dim();
    let real = sample_dataset(data, cfg.metric_samples, &mut data_rs)?;
    let fake = generator_samples(gen, cfg.latent_dim, cfg.metric_samples, &gen_rs)?;

    let js = if ambient <= 3 {
        diagnostics::js_histogram(&real, &fake, diagnostics::JS_BINS, None)?
    } else {
        f64::NAN // flagged: histogram JS is undefined past 3 dims
    };
    let frechet = diagnostics::frechet_gaussian(&real, &fake)?;
    let path_length = diagnostics::path_length(gen, cfg.latent_dim, cfg.ppl_paths, 1e-4, &ppl_rs)?;
    let condition = diagnostics::condition_metrics(
        |z| gen.output(z),
        |rs| rs.gaussian(&[cfg.latent_dim]).expect("latent dim > 0"),
        &ConditionConfig {
            n_pairs: cfg.condition_pairs,
            ..ConditionConfig::default()
        },
        &cond_rs,
    )?;
    let grad_proxy = grad_norm_proxy(gen, cfg.latent_dim, cfg.grad_probes, &probe_rs)?;

    Ok(TimelineEntry {
        step,
        d_loss,
        g_loss,
        js,
        frechet,
        path_length,
        grad_proxy,
        mc: condition.mc,
        ttmc: condition.ttmc,
    })
}

/// Alternating single-step adversarial training, metric snapshots at the
/// configured cadence, deterministic given the seed.
pub fn train_gan(cfg: &TrainConfig, data: &DatasetSpec) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    let start = std::time::Instant::now();

    let root = RandomSource::new(cfg.seed);
    let mut init_rs = root.child(NS_INIT);
    let step_ns = root.child(NS_STEP);
    let metric_ns = root.child(NS_METRIC);

    let ambient = data.ambient_dim();
    let mut gen = build_generator(cfg, ambient, &mut init_rs)?;
    let mut disc = build_discriminator(cfg, ambient, &mut init_rs)?;
    let mut gen_opt = Adam::new(&gen, cfg);
    let mut disc_opt = Adam::new(&disc, cfg);

    let mut timeline = Vec::new();
    let mut d_losses = Vec::with_capacity(cfg.steps);
    let mut g_losses = Vec::with_capacity(cfg.steps);
    let mut diverged = None;

    // initial snapshot: evaluate losses on a probe batch without updating
    let eval0 = step_ns.child(u64::MAX);
    let (d0, g0) = eval_losses(&gen, &disc, cfg, data, &eval0)?;
    timeline.push(snapshot(0, d0, g0, &gen, cfg, data, &metric_ns)?);

    for step in 0..cfg.steps {
        let stream = step_ns.child(step as u64);
        let mut data_rs = stream.child(0);
        let mut latent_rs = stream.child(1);
        let noise_rs = stream.child(2);

        // discriminator update: fakes are generated value-level
        let real = batch_rows(&sample_dataset(data, cfg.batch_size, &mut data_rs)?);
        let latents: Vec<Tensor> = (0..cfg.batch_size)
            .map(|_| latent_rs.gaussian(&[cfg.latent_dim]))
            .collect::<Result<_>>()?;
        let fakes: Vec<Tensor> = latents
            .par_iter()
            .enumerate()
            .map(|(i, z)| -> Result<Tensor> {
                let mut noise = noise_rs.child(i as u64);
                Ok(gen.forward(z, Some(&mut noise), Mode::Stochastic)?.0)
            })
            .collect::<Result<_>>()?;
        let d_eval = disc_pass(&disc, &real, &fakes, true)?;
        disc_opt.step(&mut disc, d_eval.grads.as_ref().expect("grads requested"))?;

        // generator update with fresh latents and noise
        let mut latent_rs_g = stream.child(3);
        let noise_rs_g = stream.child(4);
        let latents_g: Vec<Tensor> = (0..cfg.batch_size)
            .map(|_| latent_rs_g.gaussian(&[cfg.latent_dim]))
            .collect::<Result<_>>()?;
        let g_eval = gen_pass(&gen, &disc, &latents_g, &noise_rs_g, true)?;
        gen_opt.step(&mut gen, g_eval.grads.as_ref().expect("grads requested"))?;

        d_losses.push(d_eval.loss);
        g_losses.push(g_eval.loss);

        if !d_eval.loss.is_finite() || !g_eval.loss.is_finite() {
            diverged = Some(step);
            break;
        }

        let at_cadence = cfg.metric_every > 0 && (step + 1) % cfg.metric_every == 0;
        if at_cadence || step + 1 == cfg.steps {
            timeline.push(snapshot(
                step + 1,
                d_eval.loss,
                g_eval.loss,
                &gen,
                cfg,
                data,
                &metric_ns,
            )?);
        }
    }

    let report = TrainReport {
        config: cfg.clone(),
        dataset: *data,
        timeline,
        d_losses,
        g_losses,
        diverged,
        generator: serde_json::from_str(&gen.to_json()).expect("own JSON parses"),
        discriminator: serde_json::from_str(&disc.to_json()).expect("own JSON parses"),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        report,
        generator: gen,
        discriminator: disc,
    })
}

fn eval_losses(
    gen: &Network,
    disc: &Network,
    cfg: &TrainConfig,
    data: &DatasetSpec,
    stream: &RandomSource,
) -> Result<(f64, f64)> {
    let mut data_rs = stream.child(0);
    let mut latent_rs = stream.child(1);
    let noise_rs = stream.child(2);
    let real = batch_rows(&sample_dataset(data, cfg.batch_size, &mut data_rs)?);
    let latents: Vec<Tensor> = (0..cfg.batch_size)
        .map(|_| latent_rs.gaussian(&[cfg.latent_dim]))
        .collect::<Result<_>>()?;
    let fakes: Vec<Tensor> = latents
        .par_iter()
        .enumerate()
        .map(|(i, z)| -> Result<Tensor> {
            let mut noise = noise_rs.child(i as u64);
            Ok(gen.forward(z, Some(&mut noise), Mode::Stochastic)?.0)
        })
        .collect::<Result<_>>()?;
    let d = disc_pass(disc, &real, &fakes, false)?;
    let g = gen_pass(gen, disc, &latents, &noise_rs, false)?;
    Ok((d.loss, g.loss))
}

fn batch_rows(matrix: &Tensor) -> Vec<Tensor> {
    let (n, d) = (matrix.shape()[0], matrix.shape()[1]);
    (0..n)
        .map(|i| {
            Tensor::new([d], matrix.data()[i * d..(i + 1) * d].to_vec()).expect("row")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            steps: 3,
            batch_size: 8,
            metric_every: 0,
            metric_samples: 256,
            ppl_paths: 64,
            condition_pairs: 64,
            grad_probes: 16,
            ..TrainConfig::default()
        }
    }

    fn annulus() -> DatasetSpec {
        DatasetSpec::Annulus2d { r_inner: 1.0, r_outer: 2.0 }
    }

    #[test]
    fn zero_steps_reports_initial_metrics_only() {
        let cfg = TrainConfig { steps: 0, ..tiny_cfg() };
        let outcome = train_gan(&cfg, &annulus()).unwrap();
        assert_eq!(outcome.report.timeline.len(), 1);
        assert_eq!(outcome.report.timeline[0].step, 0);
        assert!(outcome.report.d_losses.is_empty());
        assert!(outcome.report.diverged.is_none());
    }

    #[test]
    fn same_seed_yields_byte_identical_reports() {
        let cfg = tiny_cfg();
        let a = train_gan(&cfg, &annulus()).unwrap().report;
        let b = train_gan(&cfg, &annulus()).unwrap().report;
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn thread_count_does_not_change_the_report() {
        let cfg = tiny_cfg();
        let baseline = serde_json::to_string(&train_gan(&cfg, &annulus()).unwrap().report).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| {
            serde_json::to_string(&train_gan(&cfg, &annulus()).unwrap().report).unwrap()
        });
        assert_eq!(baseline, single);
    }

    #[test]
    fn injection_modes_have_the_right_layers_and_run() {
        for mode in [
            InjectionMode::None,
            InjectionMode::Eni,
            InjectionMode::Rni(Variant::Full),
            InjectionMode::Rni(Variant::CnnSigma),
        ] {
            let cfg = TrainConfig { injection: mode, steps: 2, ..tiny_cfg() };
            let outcome = train_gan(&cfg, &annulus()).unwrap();
            assert!(outcome.report.diverged.is_none(), "{mode} diverged");
            let has_inject = outcome
                .generator
                .layers
                .iter()
                .any(|l| matches!(l, Layer::Inject(_)));
            assert_eq!(has_inject, mode != InjectionMode::None);
            for e in &outcome.report.timeline {
                assert!(e.js.is_finite() && e.frechet.is_finite() && e.path_length.is_finite());
            }
        }
    }

    #[test]
    fn mode_strings_round_trip() {
        for text in ["none", "eni", "rni-full", "rni-no-stabilization", "rni-cnn-sigma"] {
            let mode: InjectionMode = text.parse().unwrap();
            assert_eq!(mode.name(), text);
        }
        assert!("rni-bogus".parse::<InjectionMode>().is_err());
    }

    #[test]
    fn timeline_csv_has_contract_header() {
        let cfg = TrainConfig { steps: 1, ..tiny_cfg() };
        let report = train_gan(&cfg, &annulus()).unwrap().report;
        let csv = report.timeline_csv();
        assert!(csv.starts_with("step,d_loss,g_loss,js,frechet,path_length,grad_proxy\n"));
        assert_eq!(csv.lines().count(), 1 + report.timeline.len());
    }
}
