//! Metrics and applications on predicted heat maps: per-segment accuracy,
//! top-k min-congestion ranking, region-constrained exploration and
//! ablation reports.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::Floorplan;
use crate::cgan::{GanError, ModelCheckpoint, StepLosses};
use crate::nn::Tensor;
use crate::raster::{decode_heatmap, ColorScheme, ImagePlane, RasterError, RasterLayout};
use crate::router::{congestion_score, ChannelUtilization, RouteError, ScoreMode, TileRect};

pub const DEFAULT_TOLERANCE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("need at least {k} candidates, got {n}")]
    TooFewCandidates { k: usize, n: usize },
    #[error("candidate sets differ: {0}")]
    CandidateMismatch(String),
    #[error("empty input")]
    Empty,
    #[error("unknown region '{0}'")]
    BadRegion(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Gan(#[from] GanError),
}

/// Segment counts for one predicted image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageAccuracy {
    pub correct: usize,
    pub baseline_correct: usize,
    pub total: usize,
}

impl ImageAccuracy {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    pub fn baseline(&self) -> f64 {
        self.baseline_correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub per_pixel_acc: f64,
    /// Pixels covered by channel strips, summed over images.
    pub n_channel_pixels: usize,
    pub n_segments: usize,
    pub tolerance: f64,
    pub per_image: Vec<f64>,
    /// Accuracy of predicting zero utilization everywhere.
    pub baseline_acc: f64,
}

/// Decodes `pred` and counts segments within `tolerance` of `truth`.
pub fn image_accuracy(
    pred: &ImagePlane,
    truth: &ChannelUtilization,
    layout: &RasterLayout,
    scheme: &ColorScheme,
    tolerance: f64,
) -> Result<ImageAccuracy, EvalError> {
    if truth.cols != layout.cols() || truth.rows != layout.rows() {
        return Err(EvalError::DimMismatch("utilization grid differs from layout".into()));
    }
    let decoded = decode_heatmap(pred, layout, scheme)?.utilization;
    let mut acc = ImageAccuracy {
        correct: 0,
        baseline_correct: 0,
        total: 0,
    };
    for ((_, p), (_, t)) in decoded.segments().zip(truth.segments()) {
        acc.total += 1;
        if ((p - t).abs() as f64) <= tolerance {
            acc.correct += 1;
        }
        if (t.abs() as f64) <= tolerance {
            acc.baseline_correct += 1;
        }
    }
    Ok(acc)
}

/// Pooled segment accuracy over `(prediction, truth)` pairs.
pub fn per_pixel_accuracy(
    items: &[(ImagePlane, ChannelUtilization)],
    layout: &RasterLayout,
    scheme: &ColorScheme,
    tolerance: f64,
) -> Result<AccuracyReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let strip_px = layout.channel_mask().iter().filter(|&&m| m).count();
    let (mut correct, mut base, mut total) = (0, 0, 0);
    let mut per_image = Vec::with_capacity(items.len());
    for (pred, truth) in items {
        let a = image_accuracy(pred, truth, layout, scheme, tolerance)?;
        correct += a.correct;
        base += a.baseline_correct;
        total += a.total;
        per_image.push(a.accuracy());
    }
    Ok(AccuracyReport {
        per_pixel_acc: correct as f64 / total as f64,
        n_channel_pixels: strip_px * items.len(),
        n_segments: total,
        tolerance,
        per_image,
        baseline_acc: base as f64 / total as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub k: usize,
    pub selected: Vec<String>,
    pub true_top: Vec<String>,
    pub overlap: f64,
}

/// The `k` ids with the smallest scores, ties broken by id.
pub fn smallest_k(scores: &BTreeMap<String, f64>, k: usize) -> Vec<String> {
    let mut v: Vec<(&String, f64)> = scores.iter().map(|(id, &s)| (id, s)).collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter().take(k).map(|(id, _)| id.clone()).collect()
}

/// Fraction of the `k` least-congested candidates by prediction that are
/// also among the true `k` least congested.
pub fn topk_overlap(
    predicted: &BTreeMap<String, f64>,
    truth: &BTreeMap<String, f64>,
    k: usize,
) -> Result<RankingReport, EvalError> {
    if k == 0 || predicted.len() < k {
        return Err(EvalError::TooFewCandidates { k, n: predicted.len() });
    }
    if predicted.len() != truth.len() || predicted.keys().zip(truth.keys()).any(|(a, b)| a != b) {
        return Err(EvalError::CandidateMismatch("predicted and true ids differ".into()));
    }
    let selected = smallest_k(predicted, k);
    let true_top = smallest_k(truth, k);
    let hits = selected.iter().filter(|id| true_top.contains(id)).count();
    Ok(RankingReport {
        k,
        selected,
        true_top,
        overlap: hits as f64 / k as f64,
    })
}

/// Named floorplan regions for exploration objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    Whole,
    Upper,
    Lower,
    Left,
    Right,
    RightThird,
    Rect(TileRect),
}

impl Region {
    /// Tile rectangle on the `(cols + 2) x (rows + 2)` grid; `None` is the
    /// whole floorplan.
    pub fn rect(&self, fp: &Floorplan) -> Option<TileRect> {
        let (gw, gh) = (fp.width(), fp.height());
        let full = TileRect {
            x0: 0,
            y0: 0,
            x1: gw - 1,
            y1: gh - 1,
        };
        match *self {
            Region::Whole => None,
            Region::Upper => Some(TileRect { y0: gh / 2, ..full }),
            Region::Lower => Some(TileRect { y1: gh / 2 - 1, ..full }),
            Region::Left => Some(TileRect { x1: gw / 2 - 1, ..full }),
            Region::Right => Some(TileRect { x0: gw / 2, ..full }),
            Region::RightThird => Some(TileRect { x0: gw * 2 / 3, ..full }),
            Region::Rect(r) => Some(r),
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Whole => f.write_str("whole"),
            Region::Upper => f.write_str("upper"),
            Region::Lower => f.write_str("lower"),
            Region::Left => f.write_str("left"),
            Region::Right => f.write_str("right"),
            Region::RightThird => f.write_str("right-third"),
            Region::Rect(r) => write!(f, "{},{},{},{}", r.x0, r.y0, r.x1, r.y1),
        }
    }
}

impl FromStr for Region {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        Ok(match s {
            "whole" => Region::Whole,
            "upper" => Region::Upper,
            "lower" => Region::Lower,
            "left" => Region::Left,
            "right" => Region::Right,
            "right-third" => Region::RightThird,
            other => {
                let v: Vec<usize> = other
                    .split(',')
                    .map(|t| t.trim().parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| EvalError::BadRegion(other.into()))?;
                match v[..] {
                    [x0, y0, x1, y1] => Region::Rect(TileRect { x0, y0, x1, y1 }),
                    _ => return Err(EvalError::BadRegion(other.into())),
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    Min,
    Max,
}

impl FromStr for Goal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "min" => Ok(Goal::Min),
            "max" => Ok(Goal::Max),
            other => Err(format!("unknown goal '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub goal: Goal,
    pub region: Region,
    pub score: ScoreMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub id: String,
    pub score: f64,
}

/// Scores every predicted heat map in `region` and sorts best first; ties
/// go to the smaller id.
pub fn explore(
    items: &[(String, ImagePlane)],
    objective: &Objective,
    fp: &Floorplan,
    layout: &RasterLayout,
    scheme: &ColorScheme,
) -> Result<Vec<Ranked>, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let rect = objective.region.rect(fp);
    let mut out = items
        .iter()
        .map(|(id, img)| {
            let u = decode_heatmap(img, layout, scheme)?.utilization;
            Ok(Ranked {
                id: id.clone(),
                score: congestion_score(&u, rect, objective.score)? as f64,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    out.sort_by(|a, b| {
        let ord = a.score.total_cmp(&b.score);
        match objective.goal {
            Goal::Min => ord,
            Goal::Max => ord.reverse(),
        }
        .then_with(|| a.id.cmp(&b.id))
    });
    Ok(out)
}

/// Held-out example for comparing trained variants.
#[derive(Debug, Clone)]
pub struct HoldoutItem {
    pub x: Tensor<f32>,
    pub truth_img: ImagePlane,
    pub truth_util: ChannelUtilization,
}

pub struct Variant<'a> {
    pub name: String,
    pub checkpoint: &'a ModelCheckpoint,
    pub losses: &'a [(u64, StepLosses)],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub per_pixel_acc: f64,
    pub baseline_acc: f64,
    /// Mean absolute pixel error against the true heat-map images.
    pub val_l1: f64,
    pub final_d_loss: Option<f64>,
    pub final_g_adv: Option<f64>,
    pub final_g_l1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub tolerance: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        let mut s = String::from("name,per_pixel_acc,baseline_acc,val_l1,final_d_loss,final_g_adv,final_g_l1\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{},{},{}\n",
                r.name,
                r.per_pixel_acc,
                r.baseline_acc,
                r.val_l1,
                opt(r.final_d_loss),
                opt(r.final_g_adv),
                opt(r.final_g_l1)
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap()
    }
}

/// Validation accuracy and pixel L1 of one model on `holdout`.
pub fn evaluate_model(
    model: &ModelCheckpoint,
    holdout: &[HoldoutItem],
    layout: &RasterLayout,
    scheme: &ColorScheme,
    tolerance: f64,
) -> Result<(AccuracyReport, f64), EvalError> {
    if holdout.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut preds = Vec::with_capacity(holdout.len());
    let (mut l1, mut n) = (0.0f64, 0usize);
    for item in holdout {
        let pred = model.infer_image(&item.x)?;
        if pred.data().len() != item.truth_img.data().len() {
            return Err(EvalError::DimMismatch("prediction and truth image sizes differ".into()));
        }
        l1 += pred
            .data()
            .iter()
            .zip(item.truth_img.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>();
        n += pred.data().len();
        preds.push((pred, item.truth_util.clone()));
    }
    Ok((per_pixel_accuracy(&preds, layout, scheme, tolerance)?, l1 / n as f64))
}

/// One row per variant, in input order.
pub fn ablation_compare(
    variants: &[Variant<'_>],
    holdout: &[HoldoutItem],
    layout: &RasterLayout,
    scheme: &ColorScheme,
    tolerance: f64,
) -> Result<AblationReport, EvalError> {
    let rows = variants
        .iter()
        .map(|v| {
            let (acc, val_l1) = evaluate_model(v.checkpoint, holdout, layout, scheme, tolerance)?;
            let last = v.losses.last().map(|(_, l)| l);
            Ok(AblationRow {
                name: v.name.clone(),
                per_pixel_acc: acc.per_pixel_acc,
                baseline_acc: acc.baseline_acc,
                val_l1,
                final_d_loss: last.map(|l| l.d_loss),
                final_g_adv: last.map(|l| l.g_adv),
                final_g_l1: last.map(|l| l.g_l1),
            })
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(AblationReport { tolerance, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_floorplan, FloorplanSpec};
    use crate::raster::{render_floorplan, render_heatmap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use proptest::prelude::*;

    fn setup() -> (Floorplan, RasterLayout, ColorScheme, ImagePlane) {
        let fp = build_floorplan(&FloorplanSpec::default()).unwrap();
        let layout = RasterLayout::fit(&fp, 64).unwrap();
        let scheme = ColorScheme::default();
        let base = render_floorplan(&fp, &layout, &scheme).unwrap();
        (fp, layout, scheme, base)
    }

    fn random_util(fp: &Floorplan, seed: u64) -> ChannelUtilization {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = ChannelUtilization::for_floorplan(fp);
        for s in fp.segments() {
            u.set(s, rng.gen_range(0..=16) as f32 / 16.0);
        }
        u
    }

    fn scores(v: &[(&str, f64)]) -> BTreeMap<String, f64> {
        v.iter().map(|&(k, s)| (k.to_string(), s)).collect()
    }

    #[test]
    fn exact_render_scores_one() {
        let (fp, layout, scheme, base) = setup();
        for seed in 0..5 {
            let u = random_util(&fp, seed);
            let img = render_heatmap(&u, &base, &layout, &scheme).unwrap();
            let r = per_pixel_accuracy(&[(img, u)], &layout, &scheme, DEFAULT_TOLERANCE).unwrap();
            assert_eq!(r.per_pixel_acc, 1.0);
            assert!(r.n_channel_pixels > 0);
        }
    }

    #[test]
    fn counts_segments_within_tolerance() {
        let (fp, layout, scheme, base) = setup();
        let truth = ChannelUtilization::for_floorplan(&fp);
        let n = truth.len();
        let mut pred = truth.clone();
        let wrong: Vec<_> = fp.segments().take(n / 4).collect();
        for &s in &wrong {
            pred.set(s, 0.5);
        }
        let img = render_heatmap(&pred, &base, &layout, &scheme).unwrap();
        let r = per_pixel_accuracy(&[(img, truth)], &layout, &scheme, 0.1).unwrap();
        assert_eq!(r.n_segments, n);
        assert_eq!(r.per_pixel_acc, (n - wrong.len()) as f64 / n as f64);
        assert_eq!(r.baseline_acc, 1.0);
    }

    #[test]
    fn rejects_mismatched_grid() {
        let (_, layout, scheme, base) = setup();
        let u = ChannelUtilization::zeros(4, 4);
        assert!(matches!(
            image_accuracy(&base, &u, &layout, &scheme, 0.1),
            Err(EvalError::DimMismatch(_))
        ));
    }

    #[test]
    fn topk_fixtures() {
        let ids: Vec<String> = (0..20).map(|i| format!("p{i:02}")).collect();
        let truth: BTreeMap<String, f64> = ids.iter().enumerate().map(|(i, id)| (id.clone(), i as f64)).collect();
        assert_eq!(topk_overlap(&truth, &truth, 10).unwrap().overlap, 1.0);
        let reversed: BTreeMap<String, f64> = ids.iter().enumerate().map(|(i, id)| (id.clone(), -(i as f64))).collect();
        assert_eq!(topk_overlap(&reversed, &truth, 10).unwrap().overlap, 0.0);
        // swap two of the true top ten with two outsiders
        let mut pred = truth.clone();
        pred.insert("p08".into(), 100.0);
        pred.insert("p09".into(), 101.0);
        pred.insert("p18".into(), -1.0);
        pred.insert("p19".into(), -2.0);
        let r = topk_overlap(&pred, &truth, 10).unwrap();
        assert_eq!(r.overlap, 0.8);
        assert_eq!(r.selected.len(), 10);
    }

    #[test]
    fn topk_ties_break_by_id() {
        let s = scores(&[("b", 1.0), ("a", 1.0), ("c", 0.0)]);
        assert_eq!(smallest_k(&s, 2), vec!["c".to_string(), "a".to_string()]);
    }

    #[test]
    fn topk_errors() {
        let s = scores(&[("a", 1.0)]);
        assert!(matches!(topk_overlap(&s, &s, 10), Err(EvalError::TooFewCandidates { .. })));
        let t = scores(&[("b", 1.0)]);
        assert!(matches!(topk_overlap(&s, &t, 1), Err(EvalError::CandidateMismatch(_))));
    }

    #[test]
    fn explore_orders() {
        let (fp, layout, scheme, base) = setup();
        let hot = {
            let mut u = ChannelUtilization::for_floorplan(&fp);
            fp.segments().for_each(|s| u.set(s, 0.8));
            u
        };
        let cold_top = {
            let mut u = hot.clone();
            for s in fp.segments() {
                if s.tile_span().1 >= fp.height() / 2 {
                    u.set(s, 0.0);
                }
            }
            u
        };
        let zero = ChannelUtilization::for_floorplan(&fp);
        let items: Vec<(String, ImagePlane)> = [("a-hot", &hot), ("b-cold-top", &cold_top), ("c-zero", &zero)]
            .iter()
            .map(|(id, u)| (id.to_string(), render_heatmap(u, &base, &layout, &scheme).unwrap()))
            .collect();
        let obj = |goal, region| Objective {
            goal,
            region,
            score: ScoreMode::Mean,
        };
        let min = explore(&items, &obj(Goal::Min, Region::Whole), &fp, &layout, &scheme).unwrap();
        assert_eq!(min[0].id, "c-zero");
        let max = explore(&items, &obj(Goal::Max, Region::Whole), &fp, &layout, &scheme).unwrap();
        let rev: Vec<_> = max.iter().rev().map(|r| r.id.clone()).collect();
        assert_eq!(rev, min.iter().map(|r| r.id.clone()).collect::<Vec<_>>());

        let pair = &items[..2];
        let upper = explore(pair, &obj(Goal::Min, Region::Upper), &fp, &layout, &scheme).unwrap();
        assert_eq!(upper[0].id, "b-cold-top");
        let lower = explore(pair, &obj(Goal::Min, Region::Lower), &fp, &layout, &scheme).unwrap();
        assert!(lower[0].score > 0.0);
    }

    #[test]
    fn explore_on_exact_renders_follows_truth_scores() {
        let (fp, layout, scheme, base) = setup();
        let utils: Vec<_> = (0..8).map(|i| random_util(&fp, 40 + i)).collect();
        let items: Vec<(String, ImagePlane)> = utils
            .iter()
            .enumerate()
            .map(|(i, u)| (format!("p{i}"), render_heatmap(u, &base, &layout, &scheme).unwrap()))
            .collect();
        let obj = Objective {
            goal: Goal::Min,
            region: Region::Whole,
            score: ScoreMode::Mean,
        };
        let got: Vec<String> = explore(&items, &obj, &fp, &layout, &scheme).unwrap().into_iter().map(|r| r.id).collect();
        let truth: BTreeMap<String, f64> = utils
            .iter()
            .enumerate()
            .map(|(i, u)| (format!("p{i}"), congestion_score(u, None, ScoreMode::Mean).unwrap() as f64))
            .collect();
        assert_eq!(got, smallest_k(&truth, 8));
    }

    proptest::proptest! {
        #[test]
        fn topk_ignores_order_and_monotone_rescaling(
            perm in Just((0..30).collect::<Vec<u32>>()).prop_shuffle(),
            shift in 0usize..30,
            k in 1usize..=30,
            scale in 0.1f64..10.0,
            offset in -5.0f64..5.0,
        ) {
            let ids: Vec<String> = (0..30).map(|i| format!("c{i:02}")).collect();
            let truth: Vec<(String, f64)> = ids.iter().cloned().zip(perm.iter().map(|&v| v as f64)).collect();
            let pred: Vec<(String, f64)> =
                ids.iter().cloned().zip(perm.iter().map(|&v| ((v as usize + shift) % 30) as f64)).collect();
            let base = topk_overlap(&pred.iter().cloned().collect(), &truth.iter().cloned().collect(), k).unwrap();
            let mut shuffled = pred.clone();
            shuffled.rotate_left(shift);
            let rescaled: BTreeMap<String, f64> = shuffled.into_iter().map(|(k, v)| (k, v * scale + offset)).collect();
            let truth_exp: BTreeMap<String, f64> = truth.iter().map(|(k, v)| (k.clone(), (v / 10.0).exp())).collect();
            let other = topk_overlap(&rescaled, &truth_exp, k).unwrap();
            prop_assert_eq!(base.overlap, other.overlap);
            prop_assert_eq!(base.selected.len(), k);
            prop_assert_eq!(base.selected, other.selected);
            prop_assert!((base.overlap * k as f64 - (base.overlap * k as f64).round()).abs() < 1e-9);
        }
    }

    #[test]
    fn region_parsing() {
        for name in ["whole", "upper", "lower", "left", "right", "right-third", "1,2,3,4"] {
            let r: Region = name.parse().unwrap();
            assert_eq!(r.to_string(), name);
        }
        assert!("middle".parse::<Region>().is_err());
        assert!("1,2,3".parse::<Region>().is_err());
        let fp = build_floorplan(&FloorplanSpec::default()).unwrap();
        let (_, layout, scheme, base) = setup();
        let bad = Objective {
            goal: Goal::Min,
            region: Region::Rect(TileRect { x0: 0, y0: 0, x1: 40, y1: 1 }),
            score: ScoreMode::Mean,
        };
        assert!(explore(&[("a".into(), base)], &bad, &fp, &layout, &scheme).is_err());
    }
}
