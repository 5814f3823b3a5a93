//! Properties of the full place, route, render and learn pipeline on small
//! synthetic designs.

use std::path::Path;

use routecast::arch::{build_floorplan, Floorplan, FloorplanSpec};
use routecast::cgan::{fine_tune, train, DiscriminatorConfig, GeneratorConfig, ModelCheckpoint, TrainConfig};
use routecast::dataset::{build_dataset, Dataset, DatasetSpec, Sample};
use routecast::eval::{evaluate_model, explore, per_pixel_accuracy, HoldoutItem, Goal, Objective, Region, DEFAULT_TOLERANCE};
use routecast::netlist::{generate_synthetic, SyntheticParams};
use routecast::placer::{sweep, AnnealSchedule, PlaceAlgorithm, SweepGrid};
use routecast::raster::{decode_heatmap, ColorScheme};
use routecast::router::{route, RouteConfig, ScoreMode};

fn floorplan() -> Floorplan {
    build_floorplan(&FloorplanSpec::default()).unwrap()
}

fn dataset(dir: &Path, design_seed: u64, params: &SyntheticParams, seeds: std::ops::RangeInclusive<u64>) -> Dataset {
    let netlist = generate_synthetic(params, design_seed).unwrap();
    let spec = DatasetSpec {
        grid: SweepGrid {
            seeds: seeds.collect(),
            alpha_ts: vec![0.5, 0.8, 0.95],
            inner_nums: vec![0.5, 2.0],
            algorithms: vec![PlaceAlgorithm::BoundingBox],
        },
        base_schedule: AnnealSchedule::default(),
        route: RouteConfig::default(),
        w: 64,
    };
    build_dataset(&floorplan(), &netlist, &spec, dir).unwrap();
    Dataset::open(dir).unwrap()
}

fn holdout(samples: &[Sample], t: &TrainConfig) -> Vec<HoldoutItem> {
    samples
        .iter()
        .map(|s| HoldoutItem {
            x: s.pair(t).unwrap().x,
            truth_img: s.route.clone(),
            truth_util: s.util.clone(),
        })
        .collect()
}

#[test]
fn negotiation_mostly_reduces_overuse() {
    let fp = floorplan();
    let n = generate_synthetic(&SyntheticParams::default(), 1).unwrap();
    let grid = SweepGrid {
        seeds: (1..=10).collect(),
        alpha_ts: vec![0.5, 0.7, 0.8, 0.9, 0.95],
        inner_nums: vec![0.5, 2.0],
        algorithms: vec![PlaceAlgorithm::BoundingBox],
    };
    let (mut steps, mut non_increasing) = (0usize, 0usize);
    for (_, p) in sweep(&n, &fp, &grid, &AnnealSchedule::default()).unwrap() {
        let r = route(&n, &p, &fp, &RouteConfig::default()).unwrap();
        assert!(!r.overflow);
        assert_eq!(*r.overused_per_iter.last().unwrap(), 0);
        for w in r.overused_per_iter.windows(2) {
            steps += 1;
            non_increasing += usize::from(w[1] <= w[0]);
        }
    }
    assert!(steps >= 100, "only {steps} negotiation steps observed");
    assert!(non_increasing as f64 >= 0.9 * steps as f64, "{non_increasing}/{steps}");
}

#[test]
fn dataset_items_satisfy_rendering_invariants() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path(), 3, &SyntheticParams::default(), 1..=3);
    let scheme = ColorScheme::default();
    let mask = ds.layout.channel_mask();
    let samples = ds.samples(true).unwrap();
    assert_eq!(samples.len(), 18);
    let mut pairs = Vec::new();
    for s in &samples {
        assert!(!s.overflow);
        assert!(s.util.max() <= 1.0);
        for (i, m) in mask.iter().enumerate() {
            if s.place.data()[i * 3..i * 3 + 3] != s.route.data()[i * 3..i * 3 + 3] {
                assert!(m, "{} pixel {i} changed off the channels", s.id);
            }
        }
        pairs.push((s.route.clone(), s.util.clone()));
    }
    let r = per_pixel_accuracy(&pairs, &ds.layout, &scheme, DEFAULT_TOLERANCE).unwrap();
    assert_eq!(r.per_pixel_acc, 1.0);

    // ranking the stored ground truth images reproduces the stored scores
    let items: Vec<_> = samples.iter().map(|s| (s.id.clone(), s.route.clone())).collect();
    let obj = Objective {
        goal: Goal::Min,
        region: Region::Whole,
        score: ScoreMode::Mean,
    };
    let ranked = explore(&items, &obj, &ds.floorplan, &ds.layout, &scheme).unwrap();
    for r in &ranked {
        let s = samples.iter().find(|s| s.id == r.id).unwrap();
        let truth = routecast::router::congestion_score(&s.util, None, ScoreMode::Mean).unwrap() as f64;
        assert!((r.score - truth).abs() < 0.01, "{}: {} vs {truth}", r.id, r.score);
    }
}

/// Pretrains on one design, then fine-tunes on ten placements of another.
#[test]
fn fine_tuning_on_a_new_design() {
    let tmp = tempfile::tempdir().unwrap();
    let a = dataset(&tmp.path().join("a"), 1, &SyntheticParams::default(), 1..=6);
    let b_params = SyntheticParams {
        n_clb: 32,
        ..SyntheticParams::default()
    };
    let b = dataset(&tmp.path().join("b"), 2, &b_params, 1..=5);

    let t = TrainConfig {
        epochs: 8,
        seed: 1,
        ..TrainConfig::default()
    };
    let g = GeneratorConfig {
        base_width: 16,
        ..GeneratorConfig::for_image(64)
    };
    let d = DiscriminatorConfig::for_generator(&g);
    let a_pairs: Vec<_> = a.samples(false).unwrap().iter().map(|s| s.pair(&t).unwrap()).collect();
    let pre = train(&a_pairs, &g, &d, &t, &mut |_| {}).unwrap();

    let b_samples = b.samples(false).unwrap();
    let (tune, rest) = b_samples.split_at(10);
    let tune_pairs: Vec<_> = tune.iter().map(|s| s.pair(&t).unwrap()).collect();
    let t_ft = TrainConfig { epochs: 50, ..t.clone() };
    let post = fine_tune(&pre, &tune_pairs, &t_ft, &mut |_| {}).unwrap();
    assert_eq!(post.step, pre.step + 500);
    assert_eq!(post.t_cfg, pre.t_cfg);

    let scheme = ColorScheme::default();
    let acc = |m: &ModelCheckpoint, s: &[Sample]| {
        evaluate_model(m, &holdout(s, &t), &b.layout, &scheme, DEFAULT_TOLERANCE).unwrap()
    };
    let (before, _) = acc(&pre, rest);
    let (after, _) = acc(&post, rest);
    assert!(
        after.per_pixel_acc >= before.per_pixel_acc,
        "{} -> {}",
        before.per_pixel_acc,
        after.per_pixel_acc
    );
}

#[test]
fn trained_model_repaints_only_channels() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path(), 1, &SyntheticParams::default(), 1..=2);
    let samples: Vec<_> = ds.samples(false).unwrap().into_iter().take(8).collect();
    let t = TrainConfig {
        epochs: 100,
        seed: 2,
        ..TrainConfig::default()
    };
    let g = GeneratorConfig {
        dropout_rate: 0.0,
        ..GeneratorConfig::for_image(64)
    };
    let d = DiscriminatorConfig::for_generator(&g);
    let pairs: Vec<_> = samples.iter().map(|s| s.pair(&t).unwrap()).collect();
    let model = train(&pairs, &g, &d, &t, &mut |_| {}).unwrap();

    let scheme = ColorScheme::default();
    let mask = ds.layout.channel_mask();
    let (mut offending, mut in_channels, mut du, mut n) = (0usize, 0usize, 0.0f64, 0usize);
    for s in &samples {
        let pred = model.infer_image(&s.pair(&t).unwrap().x).unwrap();
        for (i, m) in mask.iter().enumerate() {
            let diff = (0..3).map(|c| (pred.data()[i * 3 + c] - s.place.data()[i * 3 + c]).abs()).fold(0.0, f32::max);
            if diff > 0.1 {
                offending += 1;
                in_channels += usize::from(*m);
            }
        }
        let decoded = decode_heatmap(&pred, &ds.layout, &scheme).unwrap().utilization;
        for ((_, p), (_, q)) in decoded.segments().zip(s.util.segments()) {
            du += (p - q).abs() as f64;
            n += 1;
        }
    }
    assert!(offending > 0);
    let contained = in_channels as f64 / offending as f64;
    eprintln!("contained {contained:.4}, mean |du| {:.4}", du / n as f64);
    assert!(contained >= 0.95, "{in_channels}/{offending} offending pixels in channels");
    assert!(du / n as f64 <= 0.1, "mean |du| {}", du / n as f64);
}
