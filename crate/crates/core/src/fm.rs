//! Flow-matching core: linear-interpolation paths, time samplers, the
//! rectified-flow objective, forward Euler integration, and the latent
//! rectified flow (LRF) used for shape augmentation.

use rand::Rng;
use rand::seq::SliceRandom;

use crate::autoenc::{AutoencoderModel, Latent};
use crate::checkpoint::Checkpoint;
use crate::diffnet::{Activation, ModulatedMlpSpec, NodeId, OptimizerState, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::grid::LabelGrid;
use crate::rng::{rng_from_seed, rng_for_stream, standard_normal_vec};

/// Training-time distribution of flow times `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeSampler {
    Uniform,
    /// Beta(a, b) on [0, 1]; small `a` concentrates samples near t = 0.
    Beta { a: f64, b: f64 },
}

impl TimeSampler {
    pub fn beta(a: f64, b: f64) -> Result<Self> {
        if a <= 0.0 || b <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "beta parameters must be positive, got a={a}, b={b}"
            )));
        }
        Ok(TimeSampler::Beta { a, b })
    }

    /// Draws one time in [0, 1]. Beta sampling uses Johnk's rejection
    /// method, which needs no special functions and is seed-deterministic.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            TimeSampler::Uniform => rng.random::<f64>(),
            TimeSampler::Beta { a, b } => loop {
                let u: f64 = rng.random();
                let v: f64 = rng.random();
                let x = u.powf(1.0 / a);
                let y = v.powf(1.0 / b);
                let s = x + y;
                if s > 0.0 && s <= 1.0 {
                    return x / s;
                }
            },
        }
    }
}

/// One training path sample on the straight interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub t: f64,
    pub z0: Latent,
    pub z1: Latent,
    pub z_t: Latent,
    /// Constant rectified-flow target `z1 - z0`.
    pub target: Latent,
}

/// Exact linear interpolation: `z_t = (1-t) z0 + t z1`, target `z1 - z0`.
pub fn make_path_sample(z0: &Latent, z1: &Latent, t: f64) -> Result<PathSample> {
    if z0.dim() != z1.dim() {
        return Err(Error::dim(z0.dim(), z1.dim(), "path endpoints"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t must be in [0,1], got {t}")));
    }
    let z_t = Latent(
        z0.0.iter()
            .zip(&z1.0)
            .map(|(&a, &b)| (1.0 - t) * a + t * b)
            .collect(),
    );
    let target = Latent(z0.0.iter().zip(&z1.0).map(|(&a, &b)| b - a).collect());
    Ok(PathSample {
        t,
        z0: z0.clone(),
        z1: z1.clone(),
        z_t,
        target,
    })
}

/// Sinusoidal feature vector of a scalar time.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut freq = std::f64::consts::TAU;
    for _ in 0..dim / 2 {
        out.push((t * freq).sin());
        out.push((t * freq).cos());
        freq *= 2.0;
    }
    while out.len() < dim {
        out.push(t);
    }
    out
}

/// Time-conditioned vector field over latents plus integrator defaults.
#[derive(Debug, Clone)]
pub struct FlowModel {
    pub params: ParamStore,
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub time_embed_dim: usize,
    /// Default Euler step count T.
    pub default_steps: usize,
}

impl FlowModel {
    pub fn new(
        latent_dim: usize,
        hidden_dims: Vec<usize>,
        time_embed_dim: usize,
        default_steps: usize,
        seed: u64,
    ) -> Self {
        let mut model = FlowModel {
            params: ParamStore::new(),
            latent_dim,
            hidden_dims,
            time_embed_dim,
            default_steps,
        };
        let mut rng = rng_from_seed(seed ^ 0x464c4f574e455400);
        model.spec().init_params("flow", &mut model.params, &mut rng);
        model
    }

    pub fn spec(&self) -> ModulatedMlpSpec {
        ModulatedMlpSpec {
            input_dim: self.latent_dim,
            hidden_dims: self.hidden_dims.clone(),
            output_dim: self.latent_dim,
            conditioning_dim: self.time_embed_dim,
            activation: Activation::Silu,
        }
    }

    /// Records `v_t(z_t)` on a tape, for training graphs.
    pub fn velocity_on_tape(&self, tape: &mut Tape, z_t: NodeId, t: f64) -> Result<NodeId> {
        let cond = tape.constant(time_embedding(t, self.time_embed_dim));
        self.spec().forward(tape, &self.params, "flow", z_t, Some(cond))
    }

    /// Evaluates the vector field without gradient tracking.
    pub fn velocity(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        let emb = time_embedding(t, self.time_embed_dim);
        self.spec().eval(&self.params, "flow", z, Some(&emb))
    }

    pub fn to_checkpoint(&self, prefix: &str) -> Checkpoint {
        let mut ck = Checkpoint::new();
        self.write_into(prefix, &mut ck);
        ck
    }

    pub fn write_into(&self, prefix: &str, ck: &mut Checkpoint) {
        ck.insert_params(&format!("{prefix}/"), &self.params);
        ck.insert_scalar(format!("{prefix}_meta/latent_dim"), self.latent_dim as f64);
        ck.insert_vec(
            format!("{prefix}_meta/hidden_dims"),
            self.hidden_dims.iter().map(|&h| h as f64).collect(),
        );
        ck.insert_scalar(format!("{prefix}_meta/time_embed_dim"), self.time_embed_dim as f64);
        ck.insert_scalar(format!("{prefix}_meta/default_steps"), self.default_steps as f64);
    }

    pub fn from_checkpoint(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        Ok(FlowModel {
            params: ck.extract_params(&format!("{prefix}/")),
            latent_dim: ck.scalar(&format!("{prefix}_meta/latent_dim"))? as usize,
            hidden_dims: ck
                .vector(&format!("{prefix}_meta/hidden_dims"))?
                .iter()
                .map(|&h| h as usize)
                .collect(),
            time_embed_dim: ck.scalar(&format!("{prefix}_meta/time_embed_dim"))? as usize,
            default_steps: ck.scalar(&format!("{prefix}_meta/default_steps"))? as usize,
        })
    }
}

/// Mean squared-residual flow-matching loss over a batch; gradients are
/// accumulated into the model parameters (call `zero_grad` first).
pub fn fm_loss(model: &mut FlowModel, batch: &[PathSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("flow-matching batch".into()));
    }
    let mut tape = Tape::new();
    let mut residuals = Vec::with_capacity(batch.len());
    for sample in batch {
        let z_t = tape.constant(sample.z_t.0.clone());
        let v = model.velocity_on_tape(&mut tape, z_t, sample.t)?;
        let target = tape.constant(sample.target.0.clone());
        let r = tape.sub(v, target)?;
        residuals.push(tape.sum_sq(r));
    }
    let loss = tape.mean_scalars(&residuals)?;
    tape.backward(loss, &mut model.params)?;
    Ok(tape.scalar(loss))
}

/// Forward Euler from `z0` over T uniform steps of the flow ODE.
pub fn integrate_euler(model: &FlowModel, z0: &Latent, steps: usize) -> Result<Latent> {
    if steps < 1 {
        return Err(Error::InvalidArgument("euler steps must be >= 1".into()));
    }
    if !z0.is_finite() {
        return Err(Error::NonFinite {
            context: "euler initial value".into(),
            step: None,
        });
    }
    let h = 1.0 / steps as f64;
    let mut z = z0.0.clone();
    for i in 0..steps {
        let t = i as f64 / steps as f64;
        let v = model.velocity(&z, t)?;
        for (zi, vi) in z.iter_mut().zip(&v) {
            *zi += h * vi;
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "euler state".into(),
                step: Some(i),
            });
        }
    }
    Ok(Latent(z))
}

#[derive(Debug, Clone)]
pub struct LrfHyperparams {
    pub hidden_dims: Vec<usize>,
    pub time_embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub default_steps: usize,
}

impl Default for LrfHyperparams {
    fn default() -> Self {
        LrfHyperparams {
            hidden_dims: vec![64, 64],
            time_embed_dim: 16,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            default_steps: 100,
        }
    }
}

/// Trains a latent rectified flow against standardized latents: per
/// iteration t from the sampler, z0 standard normal, z1 from the data.
pub fn train_lrf(
    latents: &[Latent],
    sampler: TimeSampler,
    hp: &LrfHyperparams,
    seed: u64,
) -> Result<(FlowModel, Vec<f64>)> {
    if latents.is_empty() {
        return Err(Error::Empty("latent dataset".into()));
    }
    let d = latents[0].dim();
    for z in latents {
        if z.dim() != d {
            return Err(Error::dim(d, z.dim(), "latent dims"));
        }
    }
    let mut model = FlowModel::new(
        d,
        hp.hidden_dims.clone(),
        hp.time_embed_dim,
        hp.default_steps,
        seed,
    );
    let mut opt = OptimizerState::new(hp.learning_rate);
    let mut rng = rng_from_seed(seed ^ 0x4c5246545241494e);
    let mut order: Vec<usize> = (0..latents.len()).collect();
    let mut losses = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(hp.batch_size) {
            let batch: Vec<PathSample> = chunk
                .iter()
                .map(|&idx| {
                    let t = sampler.sample(&mut rng);
                    let z0 = Latent(standard_normal_vec(&mut rng, d));
                    make_path_sample(&z0, &latents[idx], t)
                })
                .collect::<Result<_>>()?;
            model.params.zero_grad();
            epoch_loss += fm_loss(&mut model, &batch)?;
            opt.step(&mut model.params)?;
            batches += 1;
        }
        epoch_loss /= batches as f64;
        losses.push(epoch_loss);
        log::debug!("lrf epoch {epoch}: loss {epoch_loss:.6}");
    }
    Ok((model, losses))
}

/// Draws `n` standardized latents through the flow and decodes them.
/// Sample `i` uses an independent RNG stream, so generation parallelizes.
pub fn generate_lrf(
    model: &FlowModel,
    ae: &AutoencoderModel,
    n: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<LabelGrid>> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(generate_lrf_one(model, ae, steps, seed, i as u64)?);
    }
    Ok(out)
}

/// One LRF sample on stream `stream` of `seed`.
pub fn generate_lrf_one(
    model: &FlowModel,
    ae: &AutoencoderModel,
    steps: usize,
    seed: u64,
    stream: u64,
) -> Result<LabelGrid> {
    let mut rng = rng_for_stream(seed ^ 0x4c524647454e0000, stream);
    let z0 = Latent(standard_normal_vec(&mut rng, model.latent_dim));
    let z1 = integrate_euler(model, &z0, steps)?;
    ae.decode_grid(&ae.destandardize(&z1))
}
