use camnoise::data::{pack_raw, unpack_raw, write_raw_bin, read_raw_bin, Image};
use camnoise::evaluation::{kl_forward, kl_masses, Histogram, HistogramSpec};
use camnoise::generator::{Generator, GeneratorConfig, NoiseSeeds, Variant};
use camnoise::training::{lr_at_step, TrainConfig};
use proptest::prelude::*;

fn mosaic(h: usize, w: usize, seed: u64) -> Image {
    let data = (0..h * w).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f32 / 1000.0).collect();
    Image::new(1, h, w, data).unwrap()
}

proptest! {
    #[test]
    fn pack_unpack_round_trip(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let m = mosaic(2 * h, 2 * w, seed);
        let packed = pack_raw(&m).unwrap();
        prop_assert_eq!((packed.channels, packed.height, packed.width), (4, h, w));
        prop_assert_eq!(unpack_raw(&packed).unwrap(), m);
    }

    #[test]
    fn odd_mosaics_are_rejected(h in 0usize..10, w in 0usize..10) {
        prop_assume!(h % 2 == 1 || w % 2 == 1);
        prop_assert!(pack_raw(&Image::zeros(1, h, w)).is_err());
    }

    #[test]
    fn histogram_masses_sum_to_one(values in prop::collection::vec(-400.0f64..400.0, 1..500), which in 0usize..3) {
        let spec = [HistogramSpec::em1_srgb(), HistogramSpec::em1_raw(), HistogramSpec::em2_srgb()][which];
        let h = Histogram::from_values(values.iter().copied(), spec);
        prop_assert_eq!(h.count, values.len());
        prop_assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(h.masses.iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(
        p in prop::collection::vec(0.0f64..1.0, 8),
        q in prop::collection::vec(0.0f64..1.0, 8),
    ) {
        prop_assert!(kl_masses(&p, &q) >= -1e-12);
        prop_assert!(kl_masses(&p, &p).abs() < 1e-12);
    }

    #[test]
    fn lr_schedule_is_monotone(total in 1usize..5000, start in 1e-5f64..1e-2, ratio in 1.0f64..1000.0) {
        let cfg = TrainConfig { total_steps: total, lr_start: start, lr_end: start / ratio, ..Default::default() };
        let mut prev = f64::INFINITY;
        for s in (0..=total).step_by((total / 50).max(1)) {
            let lr = lr_at_step(s, &cfg).unwrap();
            prop_assert!(lr <= prev + 1e-18);
            prop_assert!(lr >= cfg.lr_end - 1e-18);
            prev = lr;
        }
        prop_assert!((lr_at_step(total, &cfg).unwrap() - cfg.lr_end).abs() < 1e-15);
    }
}

#[test]
fn raw_bin_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let m = mosaic(6, 10, 3);
    write_raw_bin(&path, &m).unwrap();
    assert_eq!(read_raw_bin(&path).unwrap(), m);
}

#[test]
fn mismatched_specs_do_not_compare() {
    let a = Histogram::from_values([0.0], HistogramSpec::em1_srgb());
    let b = Histogram::from_values([0.0], HistogramSpec::em2_srgb());
    assert!(kl_forward(&a, &b).is_err());
}

#[test]
fn generator_checkpoint_reproduces_samples() {
    let cfg = GeneratorConfig { width: 4, stages: 1, blocks_per_stage: 1, seed_channels: 4, variant: Variant::CfgNin, ..Default::default() };
    let g = Generator::init(cfg, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    g.save(&path).unwrap();
    let loaded = Generator::load(&path).unwrap();
    let clean = Image::filled(3, 8, 8, 0.5).to_tensor();
    let cm = Image::filled(6, 8, 8, 0.2).to_tensor();
    let a = g.sample(&clean, &cm, &mut NoiseSeeds::new(5, &g.config).unwrap()).unwrap();
    let b = loaded.sample(&clean, &cm, &mut NoiseSeeds::new(5, &g.config).unwrap()).unwrap();
    assert_eq!(a, b);
}
