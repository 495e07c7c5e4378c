//! Shape autoencoder: label grids in, flat latent vectors out.
//!
//! The encoder mean-pools one-hot patch features and runs them through an
//! MLP to a latent of dimension `d`; the decoder mirrors, producing
//! per-patch features that offset-specific affine heads expand back to
//! per-voxel class logits. After training, per-dimension latent mean/std
//! over the training set are stored so downstream flows can operate on
//! standardized latents.

use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::diffnet::{
    Activation, ModulatedMlpSpec, OptimizerState, Param, ParamStore, PatchLayout, Tape,
};
use crate::error::{Error, Result};
use crate::grid::{LabelGrid, NUM_CLASSES};
use crate::rng::rng_from_seed;

/// Flat latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent(pub Vec<f64>);

impl Latent {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Mean-pooled one-hot patch features, patch-major then class-major.
pub fn pool_one_hot(labels: &[u8], dims: (usize, usize, usize), patch: usize, classes: usize) -> Vec<f64> {
    let (nx, ny, nz) = dims;
    let (npx, npy, npz) = (nx / patch, ny / patch, nz / patch);
    let mut out = vec![0.0; npx * npy * npz * classes];
    let w = 1.0 / (patch * patch * patch) as f64;
    let mut v = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let pi = (x / patch) + npx * ((y / patch) + npy * (z / patch));
                let c = labels[v] as usize;
                out[pi * classes + c] += w;
                v += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct AutoencHyperparams {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub patch: usize,
    pub decoder_feat_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for AutoencHyperparams {
    fn default() -> Self {
        AutoencHyperparams {
            latent_dim: 32,
            hidden_dim: 128,
            patch: 4,
            decoder_feat_dim: 16,
            epochs: 40,
            batch_size: 8,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AutoencoderModel {
    pub params: ParamStore,
    pub latent_dim: usize,
    pub dims: (usize, usize, usize),
    pub hidden_dim: usize,
    pub patch: usize,
    pub decoder_feat_dim: usize,
    /// Per-dimension latent standardization over the training set;
    /// identity (0 mean, unit std) before training.
    pub latent_mean: Vec<f64>,
    pub latent_std: Vec<f64>,
}

impl AutoencoderModel {
    pub fn new(dims: (usize, usize, usize), hp: &AutoencHyperparams, seed: u64) -> Result<Self> {
        if dims.0 % hp.patch != 0 || dims.1 % hp.patch != 0 || dims.2 % hp.patch != 0 {
            return Err(Error::InvalidArgument(format!(
                "patch {} must divide dims {dims:?}",
                hp.patch
            )));
        }
        let mut model = AutoencoderModel {
            params: ParamStore::new(),
            latent_dim: hp.latent_dim,
            dims,
            hidden_dim: hp.hidden_dim,
            patch: hp.patch,
            decoder_feat_dim: hp.decoder_feat_dim,
            latent_mean: vec![0.0; hp.latent_dim],
            latent_std: vec![1.0; hp.latent_dim],
        };
        let mut rng = rng_from_seed(seed ^ 0x4145494e49540000);
        model.encoder_spec().init_params("enc", &mut model.params, &mut rng);
        model.decoder_spec().init_params("dec", &mut model.params, &mut rng);
        let layout = model.layout();
        model.params.insert_uniform(
            "unpool.w",
            vec![layout.offsets() * layout.classes, layout.feat_dim],
            layout.feat_dim,
            &mut rng,
        );
        model.params.insert(
            "unpool.b",
            Param::zeros(vec![layout.offsets() * layout.classes]),
        );
        Ok(model)
    }

    pub fn num_patches(&self) -> usize {
        self.layout().num_patches()
    }

    pub fn layout(&self) -> PatchLayout {
        PatchLayout {
            dims: self.dims,
            patch: self.patch,
            feat_dim: self.decoder_feat_dim,
            classes: NUM_CLASSES,
        }
    }

    pub fn encoder_spec(&self) -> ModulatedMlpSpec {
        ModulatedMlpSpec {
            input_dim: self.num_patches() * NUM_CLASSES,
            hidden_dims: vec![self.hidden_dim],
            output_dim: self.latent_dim,
            conditioning_dim: 0,
            activation: Activation::Silu,
        }
    }

    pub fn decoder_spec(&self) -> ModulatedMlpSpec {
        ModulatedMlpSpec {
            input_dim: self.latent_dim,
            hidden_dims: vec![self.hidden_dim],
            output_dim: self.num_patches() * self.decoder_feat_dim,
            conditioning_dim: 0,
            activation: Activation::Silu,
        }
    }

    /// Standardized view of a raw latent.
    pub fn standardize(&self, z: &Latent) -> Latent {
        Latent(
            z.0.iter()
                .zip(self.latent_mean.iter().zip(&self.latent_std))
                .map(|(v, (m, s))| (v - m) / s)
                .collect(),
        )
    }

    pub fn destandardize(&self, z: &Latent) -> Latent {
        Latent(
            z.0.iter()
                .zip(self.latent_mean.iter().zip(&self.latent_std))
                .map(|(v, (m, s))| v * s + m)
                .collect(),
        )
    }

    pub fn encode(&self, grid: &LabelGrid) -> Result<Latent> {
        if grid.dims != self.dims {
            return Err(Error::dim(
                format!("{:?}", self.dims),
                format!("{:?}", grid.dims),
                "encode grid",
            ));
        }
        let pooled = pool_one_hot(&grid.labels, self.dims, self.patch, NUM_CLASSES);
        let out = self.encoder_spec().eval(&self.params, "enc", &pooled, None)?;
        Ok(Latent(out))
    }

    /// Records decode on a tape; returns the voxel-major logits node.
    pub fn decode_logits_on_tape(&self, tape: &mut Tape, z_node: crate::diffnet::NodeId) -> Result<crate::diffnet::NodeId> {
        let feats = self
            .decoder_spec()
            .forward(tape, &self.params, "dec", z_node, None)?;
        let w = tape.param(&self.params, "unpool.w")?;
        let b = tape.param(&self.params, "unpool.b")?;
        tape.patch_unpool_linear(feats, w, b, self.layout())
    }

    /// Per-voxel class probabilities (voxel-major) and the argmax grid.
    /// Ties break to the lowest class id.
    pub fn decode(&self, z: &Latent) -> Result<(Vec<f64>, LabelGrid)> {
        if z.dim() != self.latent_dim {
            return Err(Error::dim(self.latent_dim, z.dim(), "decode latent"));
        }
        if !z.is_finite() {
            return Err(Error::NonFinite {
                context: "decode latent".into(),
                step: None,
            });
        }
        let mut tape = Tape::new();
        let z_node = tape.constant(z.0.clone());
        let logits_node = self.decode_logits_on_tape(&mut tape, z_node)?;
        let logits = tape.value(logits_node);

        let n_vox = self.dims.0 * self.dims.1 * self.dims.2;
        let mut probs = vec![0.0; n_vox * NUM_CLASSES];
        let mut grid = LabelGrid::new(self.dims, 1.0);
        for v in 0..n_vox {
            let row = &logits[v * NUM_CLASSES..(v + 1) * NUM_CLASSES];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for c in 0..NUM_CLASSES {
                let e = (row[c] - m).exp();
                probs[v * NUM_CLASSES + c] = e;
                denom += e;
            }
            let mut best = 0usize;
            for c in 0..NUM_CLASSES {
                probs[v * NUM_CLASSES + c] /= denom;
                if probs[v * NUM_CLASSES + c] > probs[v * NUM_CLASSES + best] {
                    best = c;
                }
            }
            grid.labels[v] = best as u8;
        }
        Ok((probs, grid))
    }

    /// decode + argmax only.
    pub fn decode_grid(&self, z: &Latent) -> Result<LabelGrid> {
        Ok(self.decode(z)?.1)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.insert_params("ae/", &self.params);
        ck.insert_vec("ae_meta/latent_mean", self.latent_mean.clone());
        ck.insert_vec("ae_meta/latent_std", self.latent_std.clone());
        ck.insert_vec(
            "ae_meta/dims",
            vec![self.dims.0 as f64, self.dims.1 as f64, self.dims.2 as f64],
        );
        ck.insert_scalar("ae_meta/latent_dim", self.latent_dim as f64);
        ck.insert_scalar("ae_meta/hidden_dim", self.hidden_dim as f64);
        ck.insert_scalar("ae_meta/patch", self.patch as f64);
        ck.insert_scalar("ae_meta/decoder_feat_dim", self.decoder_feat_dim as f64);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let dims_v = ck.vector("ae_meta/dims")?;
        Ok(AutoencoderModel {
            params: ck.extract_params("ae/"),
            latent_dim: ck.scalar("ae_meta/latent_dim")? as usize,
            dims: (dims_v[0] as usize, dims_v[1] as usize, dims_v[2] as usize),
            hidden_dim: ck.scalar("ae_meta/hidden_dim")? as usize,
            patch: ck.scalar("ae_meta/patch")? as usize,
            decoder_feat_dim: ck.scalar("ae_meta/decoder_feat_dim")? as usize,
            latent_mean: ck.vector("ae_meta/latent_mean")?,
            latent_std: ck.vector("ae_meta/latent_std")?,
        })
    }
}

/// Trains the autoencoder with mean per-voxel cross-entropy over all
/// classes. Returns the model and the per-epoch loss curve.
pub fn train_autoencoder(
    dataset: &[LabelGrid],
    hp: &AutoencHyperparams,
    seed: u64,
) -> Result<(AutoencoderModel, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::Empty("autoencoder training dataset".into()));
    }
    let dims = dataset[0].dims;
    for g in dataset {
        if g.dims != dims {
            return Err(Error::dim(
                format!("{dims:?}"),
                format!("{:?}", g.dims),
                "training grid dims",
            ));
        }
    }
    let mut model = AutoencoderModel::new(dims, hp, seed)?;
    let pooled: Vec<Vec<f64>> = dataset
        .iter()
        .map(|g| pool_one_hot(&g.labels, dims, hp.patch, NUM_CLASSES))
        .collect();

    let enc_spec = model.encoder_spec();
    let mut opt = OptimizerState::new(hp.learning_rate);
    let mut rng = rng_from_seed(seed ^ 0x4145545241494e00);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hp.batch_size) {
            model.params.zero_grad();
            let inv = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let mut tape = Tape::new();
                let input = tape.constant(pooled[idx].clone());
                let z = enc_spec.forward(&mut tape, &model.params, "enc", input, None)?;
                let logits = model.decode_logits_on_tape(&mut tape, z)?;
                let ce = tape.mean_cross_entropy(logits, &dataset[idx].labels, NUM_CLASSES)?;
                let loss = tape.scale(inv, ce);
                tape.backward(loss, &mut model.params)?;
                batch_loss += tape.scalar(loss);
            }
            opt.step(&mut model.params)?;
            epoch_loss += batch_loss * chunk.len() as f64;
        }
        epoch_loss /= dataset.len() as f64;
        losses.push(epoch_loss);
        log::debug!("autoenc epoch {epoch}: loss {epoch_loss:.6}");
    }

    // Latent standardization over the training set.
    let latents: Vec<Latent> = dataset
        .iter()
        .map(|g| model.encode(g))
        .collect::<Result<_>>()?;
    let d = model.latent_dim;
    let n = latents.len() as f64;
    let mut mean = vec![0.0; d];
    for z in &latents {
        for (m, v) in mean.iter_mut().zip(&z.0) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for z in &latents {
        for (s, (v, m)) in std.iter_mut().zip(z.0.iter().zip(&mean)) {
            *s += (v - m) * (v - m);
        }
    }
    for s in std.iter_mut() {
        *s = (*s / n.max(2.0)).sqrt().max(1e-6);
    }
    model.latent_mean = mean;
    model.latent_std = std;
    Ok((model, losses))
}
