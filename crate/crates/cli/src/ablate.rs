//! Ablation recipe: the four generator variants (full, scalar frame
//! encoding, noise initial value, uniform time sampling) trained and
//! scored on a self-contained phantom benchmark.

use std::io::Write;
use std::path::Path;

use flow4d_core::autoenc::{AutoencHyperparams, Latent, train_autoencoder};
use flow4d_core::cardiacflow::{
    CardiacFlowHyperparams, FrameEncoding, InitValue, train_cardiacflow,
};
use flow4d_core::fm::TimeSampler;
use flow4d_core::grid::ShapeSequence;
use flow4d_core::metrics::{cycle_dsc, vfid, volume_curve};
use flow4d_core::phantom::{generate_subject, render_sequence};
use flow4d_core::{LabelGrid, Result};

pub const VARIANTS: [&str; 4] = ["full", "scalar-enc", "noise-init", "uniform-t"];

pub struct AblateSettings {
    pub seeds: u64,
    pub subjects: usize,
    pub frames: usize,
    pub dims: (usize, usize, usize),
    pub ae_epochs: usize,
    pub cf_epochs: usize,
    pub gen_count: usize,
    pub seed: u64,
}

fn variant_hp(name: &str, base: &CardiacFlowHyperparams) -> CardiacFlowHyperparams {
    let mut hp = base.clone();
    match name {
        "full" => {}
        "scalar-enc" => hp.frame_encoding = FrameEncoding::Scalar,
        "noise-init" => hp.init_value = InitValue::Noise,
        "uniform-t" => hp.sampler = TimeSampler::Uniform,
        other => unreachable!("unknown variant {other}"),
    }
    hp
}

pub fn run_ablation(settings: &AblateSettings, out: &Path) -> Result<()> {
    let dims = settings.dims;
    let sequences: Vec<ShapeSequence> = (0..settings.subjects)
        .map(|i| {
            let subject = generate_subject(settings.seed.wrapping_add(i as u64), dims);
            render_sequence(&subject, settings.frames, dims)
        })
        .collect::<Result<_>>()?;
    log::info!("ablate: rendered {} phantom sequences", sequences.len());

    let frames: Vec<LabelGrid> = sequences
        .iter()
        .flat_map(|s| s.frames.iter().cloned())
        .collect();
    let ae_hp = AutoencHyperparams {
        epochs: settings.ae_epochs,
        ..Default::default()
    };
    let (ae, _) = train_autoencoder(&frames, &ae_hp, settings.seed)?;
    log::info!("ablate: autoencoder trained");

    let latents: Vec<Vec<Latent>> = sequences
        .iter()
        .map(|s| {
            s.frames
                .iter()
                .map(|f| Ok(ae.standardize(&ae.encode(f)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let ref_curves: Vec<Vec<f64>> = sequences
        .iter()
        .map(|s| volume_curve(s, s.frames[0].voxel_size))
        .collect();

    let base = CardiacFlowHyperparams {
        epochs: settings.cf_epochs,
        ..Default::default()
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    writeln!(w, "variant,seed,metric,value")?;
    for variant in VARIANTS {
        let hp = variant_hp(variant, &base);
        for seed_idx in 0..settings.seeds {
            let seed = settings.seed.wrapping_add(1000 + seed_idx);
            let (model, _) = train_cardiacflow(&latents, &hp, seed)?;
            let mut gen_curves = Vec::with_capacity(settings.gen_count);
            let mut cdsc_sum = 0.0;
            for i in 0..settings.gen_count {
                let seq = model.generate_sequence(&ae, seed.wrapping_add(31 * i as u64), 1)?;
                cdsc_sum += cycle_dsc(&seq)?;
                gen_curves.push(volume_curve(&seq, seq.frames[0].voxel_size));
            }
            let v = vfid(&gen_curves, &ref_curves)?;
            let c = cdsc_sum / settings.gen_count as f64;
            writeln!(w, "{variant},{seed_idx},vfid,{v}")?;
            writeln!(w, "{variant},{seed_idx},cycledsc,{c}")?;
            log::info!("ablate: {variant} seed {seed_idx}: vfid {v:.4} cycledsc {c:.4}");
        }
    }
    Ok(())
}
