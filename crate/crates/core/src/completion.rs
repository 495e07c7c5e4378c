//! Label completion: reconstruct a full label grid from a rasterized
//! sparse multi-view slice stack. Same patch-MLP encoder-decoder family as
//! the autoencoder, with a wider latent, a 7-channel one-hot input that
//! includes the "unknown" class, and a skip connection realized by
//! concatenating the pooled input features into the decoder input.
//! Training mixes real frames with synthetic shapes drawn from a trained
//! latent rectified flow.

use rand::Rng;

use crate::autoenc::{AutoencoderModel, Latent, pool_one_hot};
use crate::checkpoint::Checkpoint;
use crate::diffnet::{
    Activation, ModulatedMlpSpec, NodeId, OptimizerState, Param, ParamStore, PatchLayout, Tape,
};
use crate::error::{Error, Result};
use crate::fm::{FlowModel, integrate_euler};
use crate::grid::{LabelGrid, NUM_CLASSES, ShapeSequence};
use crate::phantom::{SliceSimConfig, extract_slices, rasterize_slices};
use crate::rng::{rng_from_seed, standard_normal_vec};

/// Input channels: the six labels plus "unknown".
pub const IN_CLASSES: usize = NUM_CLASSES + 1;

/// Real/synthetic composition of each training batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixSpec {
    pub real: f64,
    pub synthetic: f64,
}

impl MixSpec {
    pub fn new(real: f64, synthetic: f64) -> Result<Self> {
        if real < 0.0 || synthetic < 0.0 || (real + synthetic - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "mix fractions must be nonnegative and sum to 1, got {real}:{synthetic}"
            )));
        }
        Ok(MixSpec { real, synthetic })
    }

    /// Deterministic split of a batch: real count rounds, synthetic fills.
    pub fn real_count(&self, batch: usize) -> usize {
        ((self.real * batch as f64).round() as usize).min(batch)
    }
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            real: 0.25,
            synthetic: 0.75,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompletionHyperparams {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub patch: usize,
    pub decoder_feat_dim: usize,
    pub epochs: usize,
    /// Examples drawn per epoch = batches_per_epoch * batch_size.
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for CompletionHyperparams {
    fn default() -> Self {
        CompletionHyperparams {
            latent_dim: 64,
            hidden_dim: 128,
            patch: 4,
            decoder_feat_dim: 16,
            epochs: 30,
            batches_per_epoch: 8,
            batch_size: 8,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompletionModel {
    pub params: ParamStore,
    pub latent_dim: usize,
    pub dims: (usize, usize, usize),
    pub hidden_dim: usize,
    pub patch: usize,
    pub decoder_feat_dim: usize,
}

impl CompletionModel {
    pub fn new(dims: (usize, usize, usize), hp: &CompletionHyperparams, seed: u64) -> Result<Self> {
        if dims.0 % hp.patch != 0 || dims.1 % hp.patch != 0 || dims.2 % hp.patch != 0 {
            return Err(Error::InvalidArgument(format!(
                "patch {} must divide dims {dims:?}",
                hp.patch
            )));
        }
        let mut model = CompletionModel {
            params: ParamStore::new(),
            latent_dim: hp.latent_dim,
            dims,
            hidden_dim: hp.hidden_dim,
            patch: hp.patch,
            decoder_feat_dim: hp.decoder_feat_dim,
        };
        let mut rng = rng_from_seed(seed ^ 0x4c43494e49540000);
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

    pub fn layout(&self) -> PatchLayout {
        PatchLayout {
            dims: self.dims,
            patch: self.patch,
            feat_dim: self.decoder_feat_dim,
            classes: NUM_CLASSES,
        }
    }

    pub fn num_patches(&self) -> usize {
        self.layout().num_patches()
    }

    pub fn encoder_spec(&self) -> ModulatedMlpSpec {
        ModulatedMlpSpec {
            input_dim: self.num_patches() * IN_CLASSES,
            hidden_dims: vec![self.hidden_dim],
            output_dim: self.latent_dim,
            conditioning_dim: 0,
            activation: Activation::Silu,
        }
    }

    /// The decoder sees the latent plus the pooled input (skip path).
    pub fn decoder_spec(&self) -> ModulatedMlpSpec {
        ModulatedMlpSpec {
            input_dim: self.latent_dim + self.num_patches() * IN_CLASSES,
            hidden_dims: vec![self.hidden_dim],
            output_dim: self.num_patches() * self.decoder_feat_dim,
            conditioning_dim: 0,
            activation: Activation::Silu,
        }
    }

    /// Records the full forward pass on a tape; returns voxel-major logits
    /// over the six real classes.
    pub fn logits_on_tape(&self, tape: &mut Tape, pooled_input: NodeId) -> Result<NodeId> {
        let z = self
            .encoder_spec()
            .forward(tape, &self.params, "enc", pooled_input, None)?;
        let dec_in = tape.concat(&[z, pooled_input]);
        let feats = self
            .decoder_spec()
            .forward(tape, &self.params, "dec", dec_in, None)?;
        let w = tape.param(&self.params, "unpool.w")?;
        let b = tape.param(&self.params, "unpool.b")?;
        tape.patch_unpool_linear(feats, w, b, self.layout())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.insert_params("lc/", &self.params);
        ck.insert_vec(
            "lc_meta/dims",
            vec![self.dims.0 as f64, self.dims.1 as f64, self.dims.2 as f64],
        );
        ck.insert_scalar("lc_meta/latent_dim", self.latent_dim as f64);
        ck.insert_scalar("lc_meta/hidden_dim", self.hidden_dim as f64);
        ck.insert_scalar("lc_meta/patch", self.patch as f64);
        ck.insert_scalar("lc_meta/decoder_feat_dim", self.decoder_feat_dim as f64);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let dims_v = ck.vector("lc_meta/dims")?;
        Ok(CompletionModel {
            params: ck.extract_params("lc/"),
            latent_dim: ck.scalar("lc_meta/latent_dim")? as usize,
            dims: (dims_v[0] as usize, dims_v[1] as usize, dims_v[2] as usize),
            hidden_dim: ck.scalar("lc_meta/hidden_dim")? as usize,
            patch: ck.scalar("lc_meta/patch")? as usize,
            decoder_feat_dim: ck.scalar("lc_meta/decoder_feat_dim")? as usize,
        })
    }
}

/// Full label grid from a sparse one: per-voxel argmax over the six real
/// classes (ties break to class 0), so "unknown" never appears.
pub fn complete(model: &CompletionModel, sparse: &LabelGrid) -> Result<LabelGrid> {
    if sparse.dims != model.dims {
        return Err(Error::dim(
            format!("{:?}", model.dims),
            format!("{:?}", sparse.dims),
            "completion grid",
        ));
    }
    let pooled = pool_one_hot(&sparse.labels, model.dims, model.patch, IN_CLASSES);
    let mut tape = Tape::new();
    let input = tape.constant(pooled);
    let logits_node = model.logits_on_tape(&mut tape, input)?;
    let logits = tape.value(logits_node);
    let mut out = LabelGrid::new(model.dims, sparse.voxel_size);
    for v in 0..out.voxel_count() {
        let row = &logits[v * NUM_CLASSES..(v + 1) * NUM_CLASSES];
        let mut best = 0usize;
        for c in 1..NUM_CLASSES {
            if row[c] > row[best] {
                best = c;
            }
        }
        out.labels[v] = best as u8;
    }
    Ok(out)
}

/// Per-frame completion of a sparse 2D+t acquisition.
pub fn complete_sequence(model: &CompletionModel, sparse_frames: &[LabelGrid]) -> Result<ShapeSequence> {
    if sparse_frames.is_empty() {
        return Err(Error::Empty("sparse frame sequence".into()));
    }
    let frames = sparse_frames
        .iter()
        .map(|f| complete(model, f))
        .collect::<Result<Vec<_>>>()?;
    ShapeSequence::new(frames)
}

/// Synthetic-shape source for training: a trained latent flow plus the
/// autoencoder that decodes its samples.
pub struct SyntheticSource<'a> {
    pub flow: &'a FlowModel,
    pub ae: &'a AutoencoderModel,
    pub steps: usize,
}

impl SyntheticSource<'_> {
    fn draw(&self, rng: &mut impl Rng) -> Result<LabelGrid> {
        let z0 = Latent(standard_normal_vec(rng, self.flow.latent_dim));
        let z1 = integrate_euler(self.flow, &z0, self.steps)?;
        self.ae.decode_grid(&self.ae.destandardize(&z1))
    }
}

/// Trains completion on per-example corrupted slice rasterizations of real
/// frames and LRF-synthetic shapes. Per example, lambda is uniform on
/// [0, lambda_max] from `slicesim`. Returns the model, the per-epoch loss
/// curve, and the number of synthetic draws (zero for an all-real mix).
pub fn train_completion(
    real: &[LabelGrid],
    mix: MixSpec,
    slicesim: &SliceSimConfig,
    synthetic: Option<&SyntheticSource<'_>>,
    hp: &CompletionHyperparams,
    seed: u64,
) -> Result<(CompletionModel, Vec<f64>, usize)> {
    if real.is_empty() {
        return Err(Error::Empty("completion training dataset".into()));
    }
    let dims = real[0].dims;
    for g in real {
        if g.dims != dims {
            return Err(Error::dim(
                format!("{dims:?}"),
                format!("{:?}", g.dims),
                "training grid dims",
            ));
        }
    }
    MixSpec::new(mix.real, mix.synthetic)?;
    let real_per_batch = mix.real_count(hp.batch_size);
    if real_per_batch < hp.batch_size && synthetic.is_none() {
        return Err(Error::InvalidArgument(
            "synthetic mix fraction > 0 requires a trained flow".into(),
        ));
    }

    let mut model = CompletionModel::new(dims, hp, seed)?;
    let mut opt = OptimizerState::new(hp.learning_rate);
    let mut rng = rng_from_seed(seed ^ 0x4c43545241494e00);
    let mut losses = Vec::with_capacity(hp.epochs);
    let mut synthetic_draws = 0usize;

    for epoch in 0..hp.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..hp.batches_per_epoch {
            model.params.zero_grad();
            let inv = 1.0 / hp.batch_size as f64;
            let mut batch_loss = 0.0;
            for k in 0..hp.batch_size {
                let source: LabelGrid = if k < real_per_batch {
                    real[rng.random_range(0..real.len())].clone()
                } else {
                    synthetic_draws += 1;
                    synthetic
                        .expect("checked above")
                        .draw(&mut rng)?
                };
                let mut cfg = slicesim.clone();
                cfg.lambda = rng.random::<f64>() * slicesim.lambda_max;
                cfg.seed = rng.random();
                let sparse = rasterize_slices(&extract_slices(&source, &cfg)?, dims);
                let pooled = pool_one_hot(&sparse.labels, dims, hp.patch, IN_CLASSES);
                let mut tape = Tape::new();
                let input = tape.constant(pooled);
                let logits = model.logits_on_tape(&mut tape, input)?;
                let ce = tape.mean_cross_entropy(logits, &source.labels, NUM_CLASSES)?;
                let loss = tape.scale(inv, ce);
                tape.backward(loss, &mut model.params)?;
                batch_loss += tape.scalar(loss);
            }
            opt.step(&mut model.params)?;
            epoch_loss += batch_loss;
        }
        epoch_loss /= hp.batches_per_epoch as f64;
        losses.push(epoch_loss);
        log::debug!("completion epoch {epoch}: loss {epoch_loss:.6}");
    }
    Ok((model, losses, synthetic_draws))
}
