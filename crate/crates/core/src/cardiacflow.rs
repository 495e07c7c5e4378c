//! Periodic one-step 3D+t generation: periodic Gaussian kernel (PGK) frame
//! encoding, per-subject learnable embeddings with an empirical Gaussian
//! prior, a fusion network producing frame-conditioned initial values, and
//! joint flow-matching training over flow, fusion, and embeddings.

use rand::Rng;

use crate::autoenc::{AutoencoderModel, Latent};
use crate::checkpoint::Checkpoint;
use crate::diffnet::{
    Activation, ModulatedMlpSpec, OptimizerState, Param, ParamStore, Tape,
};
use crate::error::{Error, Result};
use crate::fm::{FlowModel, TimeSampler, integrate_euler, time_embedding};
use crate::grid::ShapeSequence;
use crate::linalg::{SymMatrix, jacobi_eigen};
use crate::rng::{rng_from_seed, rng_for_stream, standard_normal, standard_normal_vec};

/// Shrinkage added to the embedding prior covariance diagonal.
pub const PRIOR_SHRINKAGE: f64 = 1e-6;

/// Circular frame distance `|mod(m - tau + M/2, M) - M/2|` with the
/// Euclidean (always nonnegative) mod, so it equals the wrap-around
/// distance for any integers, including beyond the period.
pub fn pgk_distance(m: i64, tau: i64, frames: usize) -> Result<f64> {
    if frames < 2 {
        return Err(Error::InvalidArgument(format!(
            "pgk period must be >= 2, got {frames}"
        )));
    }
    let period = frames as f64;
    let half = period / 2.0;
    Ok((((m - tau) as f64 + half).rem_euclid(period) - half).abs())
}

/// Length-M periodic Gaussian kernel encoding of a frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct PgkEncoding {
    pub frames: usize,
    pub sigma: f64,
    pub values: Vec<f64>,
}

/// `values[m-1] = exp(-d(m,tau)^2 / (2 sigma^2)) / (sqrt(2 pi) sigma)`.
pub fn pgk_encode(tau: i64, frames: usize, sigma: f64) -> Result<PgkEncoding> {
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "pgk sigma must be positive, got {sigma}"
        )));
    }
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
    let values = (1..=frames as i64)
        .map(|m| {
            let d = pgk_distance(m, tau, frames)?;
            Ok(norm * (-d * d / (2.0 * sigma * sigma)).exp())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PgkEncoding {
        frames,
        sigma,
        values,
    })
}

/// Per-subject learnable embeddings and their empirical Gaussian prior.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub embeddings: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    /// One embedding per subject, initialized N(0, 0.01 I).
    pub fn init(subjects: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed ^ 0x454d424544494e49);
        let embeddings = (0..subjects)
            .map(|_| standard_normal_vec(&mut rng, dim).iter().map(|x| 0.1 * x).collect())
            .collect();
        EmbeddingTable { dim, embeddings }
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// Mean and shrunk unbiased covariance of the embeddings.
pub fn embedding_prior(table: &EmbeddingTable) -> Result<(Vec<f64>, SymMatrix)> {
    let n = table.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "embedding prior needs >= 2 embeddings, got {n}"
        )));
    }
    let k = table.dim;
    let mut mu = vec![0.0; k];
    for e in &table.embeddings {
        for (m, &v) in mu.iter_mut().zip(e) {
            *m += v;
        }
    }
    for m in mu.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = SymMatrix::zeros(k);
    for e in &table.embeddings {
        for i in 0..k {
            let di = e[i] - mu[i];
            for j in i..k {
                let v = cov.get(i, j) + di * (e[j] - mu[j]);
                cov.set(i, j, v);
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            let v = cov.get(i, j) / (n as f64 - 1.0);
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    cov.add_diag(PRIOR_SHRINKAGE);
    Ok((mu, cov))
}

/// Frame conditioning fed to the fusion net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameEncoding {
    Pgk,
    /// Ablation: the single feature tau/M instead of the M-vector.
    Scalar,
}

/// Source of the per-frame ODE start point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitValue {
    Learned,
    /// Ablation: standard-normal start, no fusion/embedding involvement.
    Noise,
}

#[derive(Debug, Clone)]
pub struct CardiacFlowHyperparams {
    pub flow_hidden: Vec<usize>,
    pub fusion_hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub embed_dim: usize,
    pub sigma: f64,
    pub sampler: TimeSampler,
    pub frame_encoding: FrameEncoding,
    pub init_value: InitValue,
    /// Ablation switch: leaves embeddings bit-exactly at initialization.
    pub freeze_embeddings: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for CardiacFlowHyperparams {
    fn default() -> Self {
        CardiacFlowHyperparams {
            flow_hidden: vec![64, 64],
            fusion_hidden: vec![64, 64],
            time_embed_dim: 16,
            embed_dim: 16,
            sigma: 1.5,
            sampler: TimeSampler::Beta { a: 0.1, b: 2.0 },
            frame_encoding: FrameEncoding::Pgk,
            init_value: InitValue::Learned,
            freeze_embeddings: false,
            epochs: 200,
            batch_size: 16,
            learning_rate: 1e-3,
        }
    }
}

/// Trained generator: flow field, fusion net, embedding table + prior.
#[derive(Debug, Clone)]
pub struct CardiacFlowModel {
    pub flow: FlowModel,
    pub fusion: ParamStore,
    pub fusion_hidden: Vec<usize>,
    pub table: EmbeddingTable,
    pub prior: Option<(Vec<f64>, SymMatrix)>,
    pub frames: usize,
    pub sigma: f64,
    pub sampler: TimeSampler,
    pub frame_encoding: FrameEncoding,
    pub init_value: InitValue,
}

impl CardiacFlowModel {
    fn encoding_len(&self) -> usize {
        match self.frame_encoding {
            FrameEncoding::Pgk => self.frames,
            FrameEncoding::Scalar => 1,
        }
    }

    fn fusion_spec(&self) -> ModulatedMlpSpec {
        ModulatedMlpSpec {
            input_dim: self.table.dim + self.encoding_len(),
            hidden_dims: self.fusion_hidden.clone(),
            output_dim: self.flow.latent_dim,
            conditioning_dim: 0,
            activation: Activation::Silu,
        }
    }

    /// Frame features for tau reduced to 1..=M (the map is exactly
    /// M-periodic: the PGK wraps, and the scalar variant reduces first).
    pub fn frame_features(&self, tau: i64) -> Result<Vec<f64>> {
        match self.frame_encoding {
            FrameEncoding::Pgk => Ok(pgk_encode(tau, self.frames, self.sigma)?.values),
            FrameEncoding::Scalar => {
                let reduced = (tau - 1).rem_euclid(self.frames as i64) + 1;
                Ok(vec![reduced as f64 / self.frames as f64])
            }
        }
    }

    /// Learnable frame-conditioned initial value f(eps, K(tau)).
    pub fn initial_value(&self, eps: &[f64], tau: i64) -> Result<Latent> {
        if eps.len() != self.table.dim {
            return Err(Error::dim(self.table.dim, eps.len(), "embedding"));
        }
        if eps.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "embedding".into(),
                step: None,
            });
        }
        if tau < 1 {
            return Err(Error::InvalidArgument(format!(
                "frame index must be >= 1, got {tau}"
            )));
        }
        let mut input = eps.to_vec();
        input.extend(self.frame_features(tau)?);
        Ok(Latent(self.fusion_spec().eval(&self.fusion, "fusion", &input, None)?))
    }

    /// Draws an embedding from N(mu, Sigma) via eigendecomposition of the
    /// prior covariance (negative eigenvalues clamped to zero).
    pub fn sample_embedding(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let (mu, cov) = self
            .prior
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no embedding prior".into()))?;
        let (eigvals, eigvecs) = jacobi_eigen(cov)?;
        let k = mu.len();
        let n: Vec<f64> = (0..k)
            .map(|j| eigvals[j].max(0.0).sqrt() * standard_normal(rng))
            .collect();
        Ok((0..k)
            .map(|i| mu[i] + (0..k).map(|j| eigvecs.get(i, j) * n[j]).sum::<f64>())
            .collect())
    }

    /// Standardized-latent frames for one generated subject: the embedding
    /// is drawn once, then each frame is integrated independently.
    pub fn generate_latents(&self, seed: u64, steps: usize) -> Result<Vec<Latent>> {
        let mut rng = rng_from_seed(seed ^ 0x434647454e455241);
        let eps = match self.init_value {
            InitValue::Learned => Some(self.sample_embedding(&mut rng)?),
            InitValue::Noise => None,
        };
        let mut frames = Vec::with_capacity(self.frames);
        for tau in 1..=self.frames as i64 {
            let z0 = match &eps {
                Some(e) => self.initial_value(e, tau)?,
                None => Latent(standard_normal_vec(&mut rng, self.flow.latent_dim)),
            };
            frames.push(integrate_euler(&self.flow, &z0, steps)?);
        }
        Ok(frames)
    }

    /// Full generated sequence decoded through the autoencoder.
    pub fn generate_sequence(
        &self,
        ae: &AutoencoderModel,
        seed: u64,
        steps: usize,
    ) -> Result<ShapeSequence> {
        let latents = self.generate_latents(seed, steps)?;
        let frames = latents
            .iter()
            .map(|z| ae.decode_grid(&ae.destandardize(z)))
            .collect::<Result<Vec<_>>>()?;
        ShapeSequence::new(frames)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        self.flow.write_into("cf_flow", &mut ck);
        ck.insert_params("cf_fusion/", &self.fusion);
        for (i, e) in self.table.embeddings.iter().enumerate() {
            ck.insert_vec(format!("cf_embed/s{i:04}"), e.clone());
        }
        ck.insert_scalar("cf_meta/subjects", self.table.len() as f64);
        ck.insert_scalar("cf_meta/embed_dim", self.table.dim as f64);
        ck.insert_vec(
            "cf_meta/fusion_hidden",
            self.fusion_hidden.iter().map(|&h| h as f64).collect(),
        );
        ck.insert_scalar("cf_meta/frames", self.frames as f64);
        ck.insert_scalar("cf_meta/sigma", self.sigma);
        let (code, a, b) = match self.sampler {
            TimeSampler::Uniform => (0.0, 0.0, 0.0),
            TimeSampler::Beta { a, b } => (1.0, a, b),
        };
        ck.insert_vec("cf_meta/sampler", vec![code, a, b]);
        ck.insert_scalar(
            "cf_meta/frame_encoding",
            match self.frame_encoding {
                FrameEncoding::Pgk => 0.0,
                FrameEncoding::Scalar => 1.0,
            },
        );
        ck.insert_scalar(
            "cf_meta/init_value",
            match self.init_value {
                InitValue::Learned => 0.0,
                InitValue::Noise => 1.0,
            },
        );
        if let Some((mu, cov)) = &self.prior {
            ck.insert_vec("cf_prior/mu", mu.clone());
            let k = mu.len();
            let flat: Vec<f64> = (0..k)
                .flat_map(|i| (0..k).map(move |j| (i, j)))
                .map(|(i, j)| cov.get(i, j))
                .collect();
            ck.insert("cf_prior/cov", vec![k, k], flat);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let flow = FlowModel::from_checkpoint(ck, "cf_flow")?;
        let subjects = ck.scalar("cf_meta/subjects")? as usize;
        let dim = ck.scalar("cf_meta/embed_dim")? as usize;
        let embeddings = (0..subjects)
            .map(|i| ck.vector(&format!("cf_embed/s{i:04}")))
            .collect::<Result<Vec<_>>>()?;
        let prior = if ck.names().any(|n| n == "cf_prior/mu") {
            let mu = ck.vector("cf_prior/mu")?;
            let (shape, flat) = ck.get("cf_prior/cov")?;
            if shape != [mu.len(), mu.len()] {
                return Err(Error::CheckpointFormat("bad prior covariance shape".into()));
            }
            let mut cov = SymMatrix::zeros(mu.len());
            for i in 0..mu.len() {
                for j in 0..mu.len() {
                    cov.set(i, j, flat[i * mu.len() + j]);
                }
            }
            Some((mu, cov))
        } else {
            None
        };
        let sampler_v = ck.vector("cf_meta/sampler")?;
        let sampler = if sampler_v[0] == 0.0 {
            TimeSampler::Uniform
        } else {
            TimeSampler::Beta {
                a: sampler_v[1],
                b: sampler_v[2],
            }
        };
        Ok(CardiacFlowModel {
            flow,
            fusion: ck.extract_params("cf_fusion/"),
            fusion_hidden: ck
                .vector("cf_meta/fusion_hidden")?
                .iter()
                .map(|&h| h as usize)
                .collect(),
            table: EmbeddingTable { dim, embeddings },
            prior,
            frames: ck.scalar("cf_meta/frames")? as usize,
            sigma: ck.scalar("cf_meta/sigma")?,
            sampler,
            frame_encoding: if ck.scalar("cf_meta/frame_encoding")? == 0.0 {
                FrameEncoding::Pgk
            } else {
                FrameEncoding::Scalar
            },
            init_value: if ck.scalar("cf_meta/init_value")? == 0.0 {
                InitValue::Learned
            } else {
                InitValue::Noise
            },
        })
    }
}

fn embed_name(subject: usize) -> String {
    format!("embed.s{subject:04}")
}

/// Joint training of flow, fusion net, and embeddings on standardized
/// per-subject latent sequences (each of length M).
pub fn train_cardiacflow(
    subject_latents: &[Vec<Latent>],
    hp: &CardiacFlowHyperparams,
    seed: u64,
) -> Result<(CardiacFlowModel, Vec<f64>)> {
    if subject_latents.is_empty() {
        return Err(Error::Empty("subject latent dataset".into()));
    }
    let frames = subject_latents[0].len();
    if frames < 2 {
        return Err(Error::InvalidArgument(format!(
            "sequences must have >= 2 frames, got {frames}"
        )));
    }
    for seq in subject_latents {
        if seq.len() != frames {
            return Err(Error::dim(frames, seq.len(), "sequence length"));
        }
    }
    let d = subject_latents[0][0].dim();
    for seq in subject_latents {
        for z in seq {
            if z.dim() != d {
                return Err(Error::dim(d, z.dim(), "latent dims"));
            }
        }
    }
    let n = subject_latents.len();

    let flow = FlowModel::new(d, hp.flow_hidden.clone(), hp.time_embed_dim, 1, seed);
    let table = EmbeddingTable::init(n, hp.embed_dim, seed);
    let mut model = CardiacFlowModel {
        flow,
        fusion: ParamStore::new(),
        fusion_hidden: hp.fusion_hidden.clone(),
        table,
        prior: None,
        frames,
        sigma: hp.sigma,
        sampler: hp.sampler,
        frame_encoding: hp.frame_encoding,
        init_value: hp.init_value,
    };
    {
        let mut rng = rng_from_seed(seed ^ 0x465553494f4e4954);
        let spec = model.fusion_spec();
        spec.init_params("fusion", &mut model.fusion, &mut rng);
    }

    // Merge everything into one store so one tape/optimizer updates all
    // three parameter groups jointly.
    let mut store = ParamStore::new();
    for (name, p) in model.flow.params.iter() {
        store.insert(name, p.clone());
    }
    for (name, p) in model.fusion.iter() {
        store.insert(name, p.clone());
    }
    for (i, e) in model.table.embeddings.iter().enumerate() {
        store.insert(
            embed_name(i),
            Param {
                shape: vec![hp.embed_dim],
                values: e.clone(),
                grad: vec![0.0; hp.embed_dim],
            },
        );
    }

    let flow_spec = model.flow.spec();
    let fusion_spec = model.fusion_spec();
    let mut opt = OptimizerState::new(hp.learning_rate);
    let mut rng = rng_from_seed(seed ^ 0x4346545241494e00);
    let mut losses = Vec::with_capacity(hp.epochs);
    let iters_per_epoch = n * frames;
    for epoch in 0..hp.epochs {
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut remaining = iters_per_epoch;
        while remaining > 0 {
            let batch = remaining.min(hp.batch_size);
            remaining -= batch;
            let mut tape = Tape::new();
            let mut residuals = Vec::with_capacity(batch);
            for _ in 0..batch {
                let subject = rng.random_range(0..n);
                let tau = rng.random_range(1..=frames as i64);
                let z1 = tape.constant(subject_latents[subject][(tau - 1) as usize].0.clone());
                let z0 = match hp.init_value {
                    InitValue::Learned => {
                        let eps = tape.param(&store, &embed_name(subject))?;
                        let enc = tape.constant(model.frame_features(tau)?);
                        let input = tape.concat(&[eps, enc]);
                        fusion_spec.forward(&mut tape, &store, "fusion", input, None)?
                    }
                    InitValue::Noise => tape.constant(standard_normal_vec(&mut rng, d)),
                };
                let t = hp.sampler.sample(&mut rng);
                let z_t = tape.lerp(t, z0, z1)?;
                let cond = tape.constant(time_embedding(t, hp.time_embed_dim));
                let v = flow_spec.forward(&mut tape, &store, "flow", z_t, Some(cond))?;
                let target = tape.sub(z1, z0)?;
                let r = tape.sub(v, target)?;
                residuals.push(tape.sum_sq(r));
            }
            let loss = tape.mean_scalars(&residuals)?;
            store.zero_grad();
            tape.backward(loss, &mut store)?;
            if hp.freeze_embeddings {
                for (name, p) in store.iter_mut() {
                    if name.starts_with("embed.") {
                        p.grad.iter_mut().for_each(|g| *g = 0.0);
                    }
                }
            }
            opt.step(&mut store)?;
            epoch_loss += tape.scalar(loss);
            batches += 1;
        }
        epoch_loss /= batches as f64;
        losses.push(epoch_loss);
        log::debug!("cardiacflow epoch {epoch}: loss {epoch_loss:.6}");
    }

    // Split the merged store back into the structured model.
    for (name, p) in store.iter() {
        if model.flow.params.contains(name) {
            *model.flow.params.get_mut(name)? = p.clone();
        } else if model.fusion.contains(name) {
            *model.fusion.get_mut(name)? = p.clone();
        }
    }
    for i in 0..n {
        model.table.embeddings[i] = store.get(&embed_name(i))?.values.clone();
    }
    model.prior = if n >= 2 {
        Some(embedding_prior(&model.table)?)
    } else {
        None
    };
    Ok((model, losses))
}

/// Generates `count` sequences on independent RNG streams of `seed`.
pub fn generate_sequences(
    model: &CardiacFlowModel,
    ae: &AutoencoderModel,
    count: usize,
    seed: u64,
    steps: usize,
) -> Result<Vec<ShapeSequence>> {
    (0..count)
        .map(|i| {
            let mut rng = rng_for_stream(seed, i as u64);
            model.generate_sequence(ae, rng.random(), steps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::finite_diff;

    fn brute_force_distance(m: i64, tau: i64, frames: i64) -> f64 {
        let a = (m - tau).rem_euclid(frames);
        a.min(frames - a) as f64
    }

    #[test]
    fn distance_matches_brute_force_oracle() {
        for frames in [2usize, 3, 20, 50] {
            for m in 1..=frames as i64 {
                for tau in 1..=frames as i64 {
                    let got = pgk_distance(m, tau, frames).unwrap();
                    let want = brute_force_distance(m, tau, frames as i64);
                    assert_eq!(got, want, "m={m} tau={tau} M={frames}");
                    assert_eq!(got, pgk_distance(tau, m, frames).unwrap());
                    assert_eq!(got, pgk_distance(m + frames as i64, tau, frames).unwrap());
                }
            }
        }
    }

    #[test]
    fn distance_hand_cases() {
        for tau in [1i64, 7, 20] {
            assert_eq!(pgk_distance(tau, tau, 20).unwrap(), 0.0);
        }
        assert_eq!(pgk_distance(1, 50, 50).unwrap(), 1.0);
        assert_eq!(pgk_distance(26, 1, 50).unwrap(), 25.0);
    }

    #[test]
    fn distance_rejects_tiny_period() {
        assert!(pgk_distance(1, 1, 1).is_err());
        assert!(pgk_distance(1, 1, 0).is_err());
    }

    #[test]
    fn encode_peak_value() {
        let enc = pgk_encode(3, 20, 1.5).unwrap();
        let peak = enc.values[2];
        let expect = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * 1.5);
        assert!((peak - expect).abs() < 1e-15);
        assert!((peak - 0.26596).abs() < 1e-5);
        let argmax = enc
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 2);
    }

    #[test]
    fn encode_wraps_across_cycle_boundary() {
        let at_one = pgk_encode(1, 50, 1.5).unwrap();
        let at_fifty = pgk_encode(50, 50, 1.5).unwrap();
        let peak = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * 1.5);
        let near = peak * (-1.0f64 / (2.0 * 1.5 * 1.5)).exp();
        assert!((near - 0.21296).abs() < 2e-5);
        assert!((at_one.values[49] - near).abs() < 1e-15);
        assert!((at_fifty.values[0] - near).abs() < 1e-15);
    }

    #[test]
    fn encode_symmetry_and_row_sum_invariance() {
        let frames = 20;
        let rows: Vec<Vec<f64>> = (1..=frames as i64)
            .map(|tau| pgk_encode(tau, frames, 1.5).unwrap().values)
            .collect();
        for m in 0..frames {
            for tau in 0..frames {
                assert_eq!(rows[tau][m], rows[m][tau]);
            }
        }
        let sums: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
        let spread = sums.iter().cloned().fold(f64::MIN, f64::max)
            - sums.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= 1e-12, "row-sum spread {spread}");
    }

    #[test]
    fn encode_rejects_bad_sigma() {
        assert!(pgk_encode(1, 20, 0.0).is_err());
        assert!(pgk_encode(1, 20, -1.5).is_err());
    }

    #[test]
    fn prior_hand_case() {
        let table = EmbeddingTable {
            dim: 2,
            embeddings: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
        };
        let (mu, cov) = embedding_prior(&table).unwrap();
        assert_eq!(mu, vec![0.0, 0.0]);
        assert_eq!(cov.get(0, 0), 2.0 + PRIOR_SHRINKAGE);
        assert_eq!(cov.get(1, 1), PRIOR_SHRINKAGE);
        assert_eq!(cov.get(0, 1), 0.0);
    }

    #[test]
    fn prior_of_identical_embeddings_is_shrinkage_only() {
        let table = EmbeddingTable {
            dim: 3,
            embeddings: vec![vec![0.5, -1.0, 2.0]; 4],
        };
        let (mu, cov) = embedding_prior(&table).unwrap();
        assert_eq!(mu, vec![0.5, -1.0, 2.0]);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { PRIOR_SHRINKAGE } else { 0.0 };
                assert_eq!(cov.get(i, j), want);
            }
        }
    }

    #[test]
    fn prior_is_psd_for_random_tables() {
        let table = EmbeddingTable::init(10, 4, 77);
        let (_, cov) = embedding_prior(&table).unwrap();
        let (eigvals, _) = jacobi_eigen(&cov).unwrap();
        assert!(eigvals.iter().all(|&l| l >= -1e-12), "{eigvals:?}");
    }

    #[test]
    fn prior_needs_two_embeddings() {
        let table = EmbeddingTable {
            dim: 2,
            embeddings: vec![vec![1.0, 0.0]],
        };
        assert!(embedding_prior(&table).is_err());
    }

    fn untrained_model(d: usize, k: usize, frames: usize, seed: u64) -> CardiacFlowModel {
        untrained_model_with_enc(d, k, frames, seed, FrameEncoding::Pgk)
    }

    fn untrained_model_with_enc(
        d: usize,
        k: usize,
        frames: usize,
        seed: u64,
        enc: FrameEncoding,
    ) -> CardiacFlowModel {
        let mut model = CardiacFlowModel {
            flow: FlowModel::new(d, vec![8], 4, 1, seed),
            fusion: ParamStore::new(),
            fusion_hidden: vec![8],
            table: EmbeddingTable::init(3, k, seed),
            prior: None,
            frames,
            sigma: 1.5,
            sampler: TimeSampler::Uniform,
            frame_encoding: enc,
            init_value: InitValue::Learned,
        };
        let mut rng = rng_from_seed(seed);
        let spec = model.fusion_spec();
        spec.init_params("fusion", &mut model.fusion, &mut rng);
        model
    }

    #[test]
    fn zero_fusion_gives_zero_initial_value() {
        let mut model = untrained_model(3, 2, 5, 0);
        let names: Vec<String> = model.fusion.names().map(String::from).collect();
        for name in names {
            for v in model.fusion.get_mut(&name).unwrap().values.iter_mut() {
                *v = 0.0;
            }
        }
        let z0 = model.initial_value(&[0.3, -0.7], 2).unwrap();
        assert_eq!(z0.0, vec![0.0; 3]);
    }

    #[test]
    fn initial_value_is_periodic_bit_exactly() {
        for enc in [FrameEncoding::Pgk, FrameEncoding::Scalar] {
            let model = untrained_model_with_enc(3, 2, 5, 9, enc);
            let eps = [0.4, -0.2];
            for tau in 1..=5i64 {
                let a = model.initial_value(&eps, tau).unwrap();
                let b = model.initial_value(&eps, tau + 5).unwrap();
                assert_eq!(a, b, "{enc:?} tau={tau}");
            }
        }
    }

    #[test]
    fn initial_value_rejects_bad_inputs() {
        let model = untrained_model(3, 2, 5, 1);
        assert!(model.initial_value(&[1.0], 1).is_err());
        assert!(model.initial_value(&[f64::NAN, 0.0], 1).is_err());
        assert!(model.initial_value(&[0.0, 0.0], 0).is_err());
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        // A downstream loss through the fusion net, differentiated w.r.t.
        // the embedding recorded as a tape parameter.
        let model = untrained_model(3, 2, 5, 4);
        let spec = model.fusion_spec();
        let mut store = ParamStore::new();
        for (name, p) in model.fusion.iter() {
            store.insert(name, p.clone());
        }
        store.insert(
            "eps",
            Param {
                shape: vec![2],
                values: vec![0.3, -0.8],
                grad: vec![0.0; 2],
            },
        );
        let enc = model.frame_features(2).unwrap();
        let run = |s: &ParamStore| -> f64 {
            let mut tape = Tape::new();
            let eps = tape.param(s, "eps").unwrap();
            let e = tape.constant(enc.clone());
            let input = tape.concat(&[eps, e]);
            let z0 = spec.forward(&mut tape, s, "fusion", input, None).unwrap();
            let loss = tape.sum_sq(z0);
            (tape.scalar(loss), tape, loss).0
        };
        let mut analytic = store.clone();
        {
            let mut tape = Tape::new();
            let eps = tape.param(&store, "eps").unwrap();
            let e = tape.constant(enc.clone());
            let input = tape.concat(&[eps, e]);
            let z0 = spec.forward(&mut tape, &store, "fusion", input, None).unwrap();
            let loss = tape.sum_sq(z0);
            tape.backward(loss, &mut analytic).unwrap();
        }
        for idx in 0..2 {
            let numeric = finite_diff(&store, "eps", idx, 1e-5, |s| run(s));
            let got = analytic.get("eps").unwrap().grad[idx];
            let rel = (got - numeric).abs() / numeric.abs().max(1e-7);
            assert!(rel < 1e-4, "idx {idx}: analytic {got} numeric {numeric}");
        }
    }

    fn toy_dataset() -> Vec<Vec<Latent>> {
        // One subject, 2 frames, 2-D latents.
        vec![vec![Latent(vec![1.0, -0.5]), Latent(vec![-1.0, 0.5])]]
    }

    #[test]
    fn overfits_single_subject_latents() {
        let data = toy_dataset();
        let hp = CardiacFlowHyperparams {
            flow_hidden: vec![32, 32],
            fusion_hidden: vec![32],
            embed_dim: 4,
            epochs: 800,
            batch_size: 4,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let (model, losses) = train_cardiacflow(&data, &hp, 21).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        // One-step reconstruction with the subject's own embedding.
        let eps = model.table.embeddings[0].clone();
        for tau in 1..=2i64 {
            let z0 = model.initial_value(&eps, tau).unwrap();
            let z1 = integrate_euler(&model.flow, &z0, 1).unwrap();
            let want = &data[0][(tau - 1) as usize];
            let err: f64 = z1
                .0
                .iter()
                .zip(&want.0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(err < 0.15, "tau {tau}: err {err}, got {:?}", z1.0);
        }
    }

    #[test]
    fn frozen_embeddings_stay_at_initialization() {
        let data = toy_dataset();
        let hp = CardiacFlowHyperparams {
            flow_hidden: vec![8],
            fusion_hidden: vec![8],
            embed_dim: 4,
            epochs: 5,
            freeze_embeddings: true,
            ..Default::default()
        };
        let (model, _) = train_cardiacflow(&data, &hp, 33).unwrap();
        let init = EmbeddingTable::init(1, 4, 33);
        assert_eq!(model.table.embeddings, init.embeddings);
    }

    #[test]
    fn ragged_sequences_rejected() {
        let data = vec![
            vec![Latent(vec![0.0]), Latent(vec![1.0])],
            vec![Latent(vec![0.0])],
        ];
        assert!(train_cardiacflow(&data, &CardiacFlowHyperparams::default(), 0).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data = vec![
            vec![Latent(vec![1.0, 0.0]), Latent(vec![0.0, 1.0])],
            vec![Latent(vec![-1.0, 0.0]), Latent(vec![0.0, -1.0])],
        ];
        let hp = CardiacFlowHyperparams {
            flow_hidden: vec![8],
            fusion_hidden: vec![8],
            embed_dim: 4,
            epochs: 3,
            ..Default::default()
        };
        let (a, _) = train_cardiacflow(&data, &hp, 5).unwrap();
        let (b, _) = train_cardiacflow(&data, &hp, 5).unwrap();
        let mut ba = Vec::new();
        a.to_checkpoint().write_to(&mut ba).unwrap();
        let mut bb = Vec::new();
        b.to_checkpoint().write_to(&mut bb).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let data = vec![
            vec![Latent(vec![1.0, -0.5]), Latent(vec![-1.0, 0.5])],
            vec![Latent(vec![0.5, 0.5]), Latent(vec![-0.5, -0.5])],
        ];
        let hp = CardiacFlowHyperparams {
            flow_hidden: vec![8],
            fusion_hidden: vec![8],
            embed_dim: 4,
            epochs: 2,
            ..Default::default()
        };
        let (model, _) = train_cardiacflow(&data, &hp, 8).unwrap();
        let mut buf = Vec::new();
        model.to_checkpoint().write_to(&mut buf).unwrap();
        let loaded =
            CardiacFlowModel::from_checkpoint(&Checkpoint::read_from(&mut &buf[..]).unwrap())
                .unwrap();
        let mut buf2 = Vec::new();
        loaded.to_checkpoint().write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        // Generation from the reloaded model is bit-identical too.
        let a = model.generate_latents(3, 1).unwrap();
        let b = loaded.generate_latents(3, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generation_without_prior_fails() {
        let model = untrained_model(3, 2, 5, 2);
        assert!(model.generate_latents(0, 1).is_err());
    }

    #[test]
    fn generation_is_seed_deterministic_and_m_periodic() {
        let data = vec![
            vec![Latent(vec![1.0, 0.0]), Latent(vec![0.0, 1.0])],
            vec![Latent(vec![-1.0, 0.0]), Latent(vec![0.0, -1.0])],
        ];
        let hp = CardiacFlowHyperparams {
            flow_hidden: vec![8],
            fusion_hidden: vec![8],
            embed_dim: 4,
            epochs: 5,
            ..Default::default()
        };
        let (model, _) = train_cardiacflow(&data, &hp, 13).unwrap();
        let a = model.generate_latents(7, 1).unwrap();
        let b = model.generate_latents(7, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        // Extending the initial-value map past M reproduces frame 1.
        let mut rng = rng_from_seed(7 ^ 0x434647454e455241);
        let eps = model.sample_embedding(&mut rng).unwrap();
        let z1 = model.initial_value(&eps, 1).unwrap();
        let z_wrap = model.initial_value(&eps, 1 + model.frames as i64).unwrap();
        assert_eq!(z1, z_wrap);
    }
}
