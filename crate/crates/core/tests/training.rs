mod common;

use chimeramix::augment::{sample_chimeras, Augmenter, PixelMixer, Replacement};
use chimeramix::checkpoint::Checkpoint;
use chimeramix::data::LabeledImageDataset;
use chimeramix::masks::MaskSampler;
use chimeramix::model::{DiscriminatorConfig, GeneratorConfig};
use chimeramix::synthetic::{flat_color_dataset, structured_dataset};
use chimeramix::training::{gen_metrics_csv, load_generator, train_generator, GanTrainer, GenTrainConfig};
use common::rng;

fn tiny(ds: &LabeledImageDataset, batch: usize, base: usize) -> GanTrainer<f32> {
    let (_, h, w) = ds.image_dims();
    let gen = GeneratorConfig {
        input_height: h,
        input_width: w,
        base_channels: 4,
        ..GeneratorConfig::default()
    };
    let disc = DiscriminatorConfig {
        block_channels: vec![4, 4, 8, 8],
        ..DiscriminatorConfig::default()
    };
    let cfg = GenTrainConfig {
        epochs: 1,
        batch_size: batch,
        repetition_base: base,
        ..GenTrainConfig::default()
    };
    GanTrainer::new(ds, gen, disc, cfg, MaskSampler::Grid { size: 2 }, 0, 1).unwrap()
}

#[test]
fn each_step_only_touches_its_own_network() {
    let ds = flat_color_dataset(2, 3, 16, 0);
    let mut tr = tiny(&ds, 4, 3);
    let b = tr.prepare(&ds, &[0, 1, 3, 4]).unwrap();

    let d_before = tr.discriminator.params.clone();
    let g_before = tr.generator.params.clone();
    tr.g_step(&b, 1e-3).unwrap();
    assert_eq!(tr.discriminator.params, d_before);
    assert_ne!(tr.generator.params, g_before);

    let g_before = tr.generator.params.clone();
    tr.d_step(&b, 1e-3).unwrap();
    assert_eq!(tr.generator.params, g_before);
    assert_ne!(tr.discriminator.params, d_before);
}

#[test]
fn iterations_per_epoch_is_the_ceiling() {
    let ds = flat_color_dataset(2, 5, 16, 0);
    for (batch, base, want) in [(4, 5, 3), (3, 20, 14), (10, 50, 10), (64, 500, 16)] {
        let tr = tiny(&ds, batch, base);
        assert_eq!(tr.repeats(), (base / 5).max(1));
        assert_eq!(tr.iterations_per_epoch(), want, "batch {batch} base {base}");
        assert_eq!(want, (10 * tr.repeats()).div_ceil(batch));
    }
}

#[test]
fn generator_training_is_reproducible_and_checkpoints_round_trip() {
    let ds = flat_color_dataset(2, 2, 16, 0);
    let dir = tempfile::tempdir().unwrap();
    let run = |out| {
        let gen = GeneratorConfig {
            input_height: 16,
            input_width: 16,
            base_channels: 4,
            ..GeneratorConfig::default()
        };
        let disc = DiscriminatorConfig {
            block_channels: vec![4, 4, 8, 8],
            ..DiscriminatorConfig::default()
        };
        let cfg = GenTrainConfig {
            epochs: 2,
            batch_size: 2,
            repetition_base: 2,
            ..GenTrainConfig::default()
        };
        train_generator::<f32>(&ds, gen, disc, cfg, MaskSampler::Grid { size: 2 }, 3, 4, out).unwrap()
    };
    let a = run(Some(dir.path()));
    let b = run(None);
    assert_eq!(gen_metrics_csv(&a.metrics), gen_metrics_csv(&b.metrics));
    assert_eq!(a.generator.params, b.generator.params);

    let path = dir.path().join("generator.ckpt");
    let bytes = std::fs::read(&path).unwrap();
    let loaded = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(loaded.encode(), bytes);
    let again = dir.path().join("again.ckpt");
    loaded.save(&again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), bytes);
    let restored = load_generator(&loaded, Some(&a.generator.config)).unwrap();
    assert_eq!(restored.params, a.generator.params);
}

#[test]
fn chimeras_keep_the_shared_parent_label() {
    let ds = structured_dataset(4, 16, 2);
    let mixer = PixelMixer {
        mask_height: 4,
        mask_width: 4,
    };
    let (pairs, mixed) = sample_chimeras(&mixer, &ds, &MaskSampler::Grid { size: 4 }, 40, 9).unwrap();
    assert_eq!(mixed.shape()[0], 40);
    for k in 0..pairs.len() {
        let (i, j) = (pairs.first_indices[k], pairs.second_indices[k]);
        assert_eq!(ds.labels()[i], pairs.labels[k]);
        assert_eq!(ds.labels()[j], pairs.labels[k]);
        // Every pixel comes from one of the two parents.
        let (m, a, b) = (mixed.sample(k), ds.image(i), ds.image(j));
        assert!(m.iter().zip(a.iter().zip(b)).all(|(v, (p, q))| v == p || v == q));
    }
}

#[test]
fn whole_batch_replacement_is_all_or_nothing() {
    let ds = flat_color_dataset(2, 4, 8, 1);
    let mixer = PixelMixer {
        mask_height: 4,
        mask_width: 4,
    };
    let masks = MaskSampler::Grid { size: 2 };
    let aug = Augmenter::new(&ds, Some(&mixer), Some(&masks), 0.5, Replacement::WholeBatch).unwrap();
    let mut r = rng(0);
    let idx = [0, 5, 2];
    let mut replaced = 0;
    for _ in 0..400 {
        let (_, n) = aug.augment_batch(&ds, &idx, &mut r).unwrap();
        assert!(n == 0 || n == idx.len());
        replaced += (n > 0) as usize;
    }
    assert!((150..=250).contains(&replaced), "{replaced}");
}
