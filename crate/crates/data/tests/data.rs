use std::collections::HashSet;
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ukan_core::Tensor;
use ukan_data::{
    augment, batch_order, blobs, build_manifest, load_and_resize, load_image, load_mask, two_mode, two_mode_centers,
    write_dataset, AugmentConfig, Dataset, DatasetManifest, LoadOptions, ManifestRow, Rotation, SampleRecord, Split,
    Transform,
};

fn gray(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> u8) {
    GrayImage::from_fn(w, h, |x, y| Luma([f(x, y)])).save(path).unwrap();
}

fn layout(root: &Path, n: usize, masks: bool) {
    fs::create_dir_all(root.join("images")).unwrap();
    if masks {
        fs::create_dir_all(root.join("masks")).unwrap();
    }
    for i in 0..n {
        gray(&root.join(format!("images/img{i:02}.png")), 4, 4, |x, _| (x * 60) as u8);
        if masks {
            gray(&root.join(format!("masks/img{i:02}.png")), 4, 4, |x, _| if x < 2 { 0 } else { 255 });
        }
    }
}

fn ids(m: &DatasetManifest, s: Split) -> HashSet<String> {
    m.split(s).map(|r| r.id.clone()).collect()
}

#[test]
fn manifest_split_counts_and_stability() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path(), 10, true);
    let a = build_manifest(dir.path(), 0.8, 5, true).unwrap();
    assert_eq!((a.count(Split::Train), a.count(Split::Val)), (8, 2));
    assert_eq!(a, build_manifest(dir.path(), 0.8, 5, true).unwrap());
    assert!(ids(&a, Split::Train).is_disjoint(&ids(&a, Split::Val)));
    assert!(a.has_masks());
    a.check_paths().unwrap();

    let all = build_manifest(dir.path(), 1.0, 5, true).unwrap();
    assert_eq!((all.count(Split::Train), all.count(Split::Val)), (10, 0));

    let b = build_manifest(dir.path(), 0.8, 6, true).unwrap();
    assert_ne!(ids(&a, Split::Val), ids(&b, Split::Val));
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("images")).unwrap();
    assert!(build_manifest(dir.path(), 0.8, 0, false).is_err());
    layout(dir.path(), 3, true);
    fs::remove_file(dir.path().join("masks/img01.png")).unwrap();
    assert!(build_manifest(dir.path(), 0.8, 0, true).is_err());
    assert!(build_manifest(dir.path(), 0.0, 0, true).is_err());
    assert!(build_manifest(dir.path(), 1.5, 0, true).is_err());

    let gen = tempfile::tempdir().unwrap();
    layout(gen.path(), 3, false);
    assert!(build_manifest(gen.path(), 0.8, 0, true).is_err());
    let m = build_manifest(gen.path(), 0.8, 0, false).unwrap();
    assert!(m.rows.iter().all(|r| r.mask.is_none()));
}

#[test]
fn manifest_tsv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path(), 6, true);
    let m = build_manifest(dir.path(), 0.5, 9, true).unwrap();
    let path = dir.path().join("manifest.tsv");
    m.save(&path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.lines().any(|l| l == "id\timage\tmask\tsplit"));
    assert_eq!(DatasetManifest::load(&path).unwrap(), m);
    assert!(DatasetManifest::parse_tsv("id\timage\n", &path).is_err());
    assert!(DatasetManifest::parse_tsv("id\timage\tmask\tsplit\na\tb\t\ttest\n", &path).is_err());
}

fn row(image: &Path, mask: Option<&Path>) -> ManifestRow {
    ManifestRow { id: "x".into(), image: image.into(), mask: mask.map(Into::into), split: Split::Train }
}

#[test]
fn target_size_load_is_exact_up_to_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.png");
    gray(&p, 5, 3, |x, y| (x * 50 + y * 7) as u8);
    let s: SampleRecord<f64> = load_and_resize(&row(&p, None), &LoadOptions { height: 3, width: 5, channels: 1 }).unwrap();
    for y in 0..3 {
        for x in 0..5 {
            assert!((s.image.get(&[0, y, x]) - (x * 50 + y * 7) as f64 / 255.0).abs() <= 1e-12);
        }
    }
    let rgb: SampleRecord<f64> = load_and_resize(&row(&p, None), &LoadOptions { height: 3, width: 5, channels: 3 }).unwrap();
    for c in 0..3 {
        assert_eq!(rgb.image.narrow0(c, c + 1).unwrap().data(), s.image.data());
    }
}

#[test]
fn bilinear_downsample_of_a_ramp() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ramp.pgm");
    gray(&p, 4, 4, |x, y| (10 * (4 * y + x)) as u8);
    let s: SampleRecord<f64> = load_and_resize(&row(&p, None), &LoadOptions { height: 2, width: 2, channels: 1 }).unwrap();
    // half-pixel centers: each output is the mean of its 2x2 source block
    for i in 0..2 {
        for j in 0..2 {
            let block: f64 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                .iter()
                .map(|(a, b)| (10 * (4 * (2 * i + a) + 2 * j + b)) as f64)
                .sum();
            assert!((s.image.get(&[0, i, j]) - block / 4.0 / 255.0).abs() <= 1e-6);
        }
    }
}

#[test]
fn nearest_resized_masks_stay_binary() {
    let dir = tempfile::tempdir().unwrap();
    let (img, mask) = (dir.path().join("i.png"), dir.path().join("m.png"));
    gray(&img, 8, 8, |_, _| 0);
    gray(&mask, 8, 8, |x, y| if (x + y) % 2 == 0 { 255 } else { 0 });
    for (h, w) in [(3, 5), (8, 8), (13, 16)] {
        let s: SampleRecord<f32> = load_and_resize(&row(&img, Some(&mask)), &LoadOptions { height: h, width: w, channels: 3 }).unwrap();
        let m = s.mask.unwrap();
        assert_eq!(m.shape(), &[1, h, w]);
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn rejects_bad_masks_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let mask = dir.path().join("m.png");
    gray(&mask, 4, 4, |x, _| if x == 0 { 128 } else { 0 });
    assert!(load_mask::<f32>(&mask).is_err());
    let junk = dir.path().join("junk.png");
    fs::write(&junk, b"not an image").unwrap();
    assert!(load_image::<f32>(&junk, 1).is_err());
    assert!(load_image::<f32>(&dir.path().join("missing.png"), 1).is_err());
}

fn coded_sample(h: usize, w: usize) -> SampleRecord<f64> {
    let image = Tensor::from_fn(vec![2, h, w], |p| p as f64 / (2 * h * w) as f64);
    let mask = Tensor::from_fn(vec![1, h, w], |p| ((p * 7) % 3 == 0) as u8 as f64);
    SampleRecord { id: "s".into(), image, mask: Some(mask) }
}

#[test]
fn identity_and_involutions() {
    let s = coded_sample(4, 6);
    assert_eq!(Transform::IDENTITY.apply(&s), s);
    let h = Transform { hflip: true, ..Transform::IDENTITY };
    assert_ne!(h.apply(&s), s);
    assert_eq!(h.apply(&h.apply(&s)), s);
    let v = Transform { vflip: true, ..Transform::IDENTITY };
    assert_eq!(v.apply(&v.apply(&s)), s);
    let sq = coded_sample(5, 5);
    let r = Transform { quarter_turns: 1, ..Transform::IDENTITY };
    let mut t = sq.clone();
    for _ in 0..4 {
        t = r.apply(&t);
    }
    assert_eq!(t, sq);
    let half = Transform { quarter_turns: 2, ..Transform::IDENTITY };
    assert_eq!(half.apply(&sq), Transform { hflip: true, vflip: true, ..Transform::IDENTITY }.apply(&sq));
}

#[test]
fn quarter_turn_is_counter_clockwise() {
    let x = Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let s = SampleRecord { id: "r".into(), image: x, mask: None };
    let r = Transform { quarter_turns: 1, ..Transform::IDENTITY }.apply(&s);
    assert_eq!(r.image.shape(), &[1, 3, 2]);
    assert_eq!(r.image.data(), &[3.0, 6.0, 2.0, 5.0, 1.0, 4.0]);
}

#[test]
fn image_and_mask_move_together() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = coded_sample(6, 6);
    let plane = 36;
    for _ in 0..50 {
        let out = augment(&s, &AugmentConfig::SEGMENTATION, &mut rng);
        let (img, mask) = (out.image.data(), out.mask.as_ref().unwrap().data());
        for p in 0..plane {
            // channel 0 carries the source pixel index, which fixes the expected mask value
            let src = (img[p] * (2 * plane) as f64).round() as usize;
            assert_eq!(mask[p], s.mask.as_ref().unwrap().data()[src]);
            assert!((img[plane + p] - img[p] - 0.5).abs() < 1e-12);
        }
    }
}

#[test]
fn augmentation_stream_is_seeded() {
    let s = coded_sample(6, 6);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20).map(|_| augment(&s, &AugmentConfig::SEGMENTATION, &mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let flips: Vec<Transform> = (0..200).map(|_| Transform::sample(&AugmentConfig::FLIPS, true, &mut rng)).collect();
    assert!(flips.iter().all(|t| t.quarter_turns == 0 && t.angle == 0.0));
    assert!(flips.iter().any(|t| t.hflip) && flips.iter().any(|t| t.vflip));
    let narrow: Vec<Transform> = (0..200).map(|_| Transform::sample(&AugmentConfig::SEGMENTATION, false, &mut rng)).collect();
    assert!(narrow.iter().all(|t| t.quarter_turns % 2 == 0));
}

#[test]
fn arbitrary_rotation_keeps_masks_binary() {
    let s = coded_sample(9, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = AugmentConfig { rotation: Rotation::Arbitrary, ..AugmentConfig::NONE };
    for _ in 0..10 {
        let out = augment(&s, &cfg, &mut rng);
        assert!(out.mask.unwrap().data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(out.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn batch_order_is_seeded_and_drops_singletons() {
    let a = batch_order(17, 8, 1, 0, true, true);
    assert_eq!(a.len(), 2);
    assert_eq!(a, batch_order(17, 8, 1, 0, true, true));
    assert_ne!(a, batch_order(17, 8, 1, 1, true, true));
    assert_eq!(batch_order(17, 8, 1, 0, true, false).len(), 3);
    assert_eq!(batch_order(1, 8, 1, 0, true, true), vec![vec![0]]);
    let plain = batch_order(5, 2, 1, 0, false, false);
    assert_eq!(plain, vec![vec![0, 1], vec![2, 3], vec![4]]);
    let mut all: Vec<usize> = batch_order(23, 4, 9, 3, true, false).concat();
    all.sort();
    assert_eq!(all, (0..23).collect::<Vec<_>>());
}

#[test]
fn synthetic_blobs_round_trip_through_disk() {
    let samples = blobs::<f32>(6, 16, 2);
    assert_eq!(samples, blobs::<f32>(6, 16, 2));
    for s in &samples {
        let m = s.mask.as_ref().unwrap();
        assert!(m.sum() >= 1.0);
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &samples).unwrap();
    let m = build_manifest(dir.path(), 1.0, 0, true).unwrap();
    let ds = Dataset::<f32>::from_manifest(&m, Split::Train, &LoadOptions { height: 16, width: 16, channels: 3 }).unwrap();
    assert_eq!(ds.len(), 6);
    for (a, b) in ds.samples.iter().zip(&samples) {
        assert_eq!(a.id, b.id);
        assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-6);
        assert_eq!(a.mask, b.mask);
    }
    let batch = ds.batch(&[0, 2, 3], None).unwrap();
    assert_eq!(batch.images.shape(), &[3, 3, 16, 16]);
    assert_eq!(batch.masks.unwrap().shape(), &[3, 1, 16, 16]);
    assert_eq!(batch.ids, vec!["0000", "0002", "0003"]);
}

#[test]
fn two_mode_samples_sit_near_a_prototype() {
    let centers = two_mode_centers::<f64>(8);
    let samples = two_mode::<f64>(40, 8, 3);
    let mut counts = [0; 2];
    for s in &samples {
        assert!(s.mask.is_none());
        let d: Vec<f64> = centers.iter().map(|c| s.image.max_abs_diff(c)).collect();
        let k = if d[0] < d[1] { 0 } else { 1 };
        assert!(d[k] <= 0.05);
        counts[k] += 1;
    }
    assert!(counts[0] > 5 && counts[1] > 5);
    let ds = Dataset::new(samples).unwrap();
    assert!(!ds.has_masks());
    assert!(ds.batch(&[0, 1], None).unwrap().masks.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_partition_the_rows(n in 1usize..30, ratio in 0.05f64..1.0, seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        for i in 0..n {
            gray(&dir.path().join(format!("images/{i:03}.png")), 1, 1, |_, _| 0);
        }
        let m = build_manifest(dir.path(), ratio, seed, false).unwrap();
        let (tr, va) = (ids(&m, Split::Train), ids(&m, Split::Val));
        prop_assert!(tr.is_disjoint(&va));
        prop_assert_eq!(tr.len() + va.len(), n);
        prop_assert_eq!(tr.len(), ((ratio * n as f64).round() as usize).clamp(1, n));
    }

    #[test]
    fn every_transform_preserves_mask_binarity(
        h in 2usize..8, w in 2usize..8, hf: bool, vf: bool, q in 0u8..4, angle in 0.0f64..6.3,
    ) {
        let s = coded_sample(h, w);
        let q = if h == w { q } else { q & 2 };
        for t in [
            Transform { hflip: hf, vflip: vf, quarter_turns: q, angle: 0.0 },
            Transform { hflip: hf, vflip: vf, quarter_turns: q, angle },
        ] {
            let out = t.apply(&s);
            let m = out.mask.unwrap();
            prop_assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
            prop_assert_eq!(&m.shape()[1..], &out.image.shape()[1..]);
        }
    }
}
