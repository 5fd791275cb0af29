//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed. Oracles here are written independently of
//! the library code they check.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtdet::anchors::{kmeans_anchors, CentroidUpdate, Dims, KmeansConfig};
use rtdet::cleaning::{consensus_clean, CleanConfig};
use rtdet::evaluation::{evaluate, size_recall, EvalConfig};
use rtdet::geometry::{apply_transform, invert_transform, make_enhancement_view, CropFractions};
use rtdet::pipeline::{classwise_ensemble, scale_enhanced_detect, EnhancementConfig, EnsembleConfig};
use rtdet::simulate::{generate_dataset, SceneConfig, SyntheticBackend, SyntheticDetectorConfig};
use rtdet::suppression::{class_aware_nms_indices, NmsConfig};
use rtdet::{BBox, Category, Detection, Difficulty, FrameMeta, GroundTruthBox, Level};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    BBox::new(x1, y1, x2, y2).expect("valid test box")
}

fn det(frame: &str, category: Category, score: f64, b: BBox) -> Detection {
    Detection {
        frame_id: frame.into(),
        camera_id: "CAM".into(),
        category,
        score,
        bbox: b,
    }
}

fn gt(frame: &str, id: &str, category: Category, difficulty: Difficulty, b: BBox) -> GroundTruthBox {
    GroundTruthBox {
        frame_id: frame.into(),
        camera_id: "CAM".into(),
        id: id.into(),
        category,
        difficulty,
        bbox: b,
    }
}

/// Intersection over union, computed from scratch.
fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

const CATS: [Category; 3] = [Category::Vehicle, Category::Pedestrian, Category::Cyclist];

fn expected_nms_threshold(c: Category) -> f64 {
    match c {
        Category::Vehicle => 0.75,
        Category::Pedestrian | Category::Cyclist => 0.55,
    }
}

fn c1_nms_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = NmsConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut boxes = 0;
    let mut kept_total = 0;
    for frame in 0..500 {
        let n = rng.random_range(0..=200usize);
        let clusters: Vec<(f64, f64)> = (0..(n / 6).max(1))
            .map(|_| (rng.random_range(0.0..1800.0), rng.random_range(0.0..1200.0)))
            .collect();
        let dets: Vec<Detection> = (0..n)
            .map(|_| {
                let (cx, cy) = clusters[rng.random_range(0..clusters.len())];
                let w = rng.random_range(8.0..120.0);
                let h = rng.random_range(8.0..120.0);
                let x = cx + rng.random_range(-12.0..12.0);
                let y = cy + rng.random_range(-12.0..12.0);
                // Coarse scores force plenty of ties.
                let score = f64::from(rng.random_range(0..=20u32)) / 20.0;
                let c = CATS[rng.random_range(0..3)];
                det(&format!("f{frame}"), c, score, bx(x, y, x + w, y + h))
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
        let mut expected: Vec<usize> = Vec::new();
        for i in order {
            let c = dets[i].category;
            if expected.iter().all(|&k| {
                dets[k].category != c || oracle_iou(&dets[k].bbox, &dets[i].bbox) < expected_nms_threshold(c)
            }) {
                expected.push(i);
            }
        }
        let got: BTreeSet<usize> = class_aware_nms_indices(&dets, &cfg)
            .map_err(|e| e.to_string())?
            .into_iter()
            .collect();
        let want: BTreeSet<usize> = expected.into_iter().collect();
        check!(got == want, "frame {frame}: kept {got:?}, oracle {want:?}");
        boxes += n;
        kept_total += want.len();
    }
    let secs = start.elapsed().as_secs_f64();
    check!(secs < 10.0, "took {secs:.2} s");
    Ok(format!("500 frames, {boxes} boxes, {kept_total} kept, exact match, {secs:.2} s"))
}

fn c2_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..100_000 {
        let w = rng.random_range(64..4096u32);
        let h = rng.random_range(64..4096u32);
        let frame = FrameMeta::new("f", "c", w, h).unwrap();
        let x_lo = rng.random_range(0.0..0.5);
        let y_lo = rng.random_range(0.0..0.5);
        let fr = CropFractions {
            x_lo,
            y_lo,
            x_hi: rng.random_range(x_lo + 0.1..=1.0),
            y_hi: rng.random_range(y_lo + 0.1..=1.0),
        };
        let scale = rng.random_range(0.25..4.0);
        let stride = [1, 8, 32, 64][rng.random_range(0..4)];
        let view = make_enhancement_view(&frame, fr, scale, stride).map_err(|e| e.to_string())?;
        let x = rng.random_range(-100.0..f64::from(w));
        let y = rng.random_range(-100.0..f64::from(h));
        let b = bx(x, y, x + rng.random_range(0.0..500.0), y + rng.random_range(0.0..500.0));
        let back = invert_transform(&apply_transform(&b, &view), &view);
        for (p, q) in [(b.x1, back.x1), (b.y1, back.y1), (b.x2, back.x2), (b.y2, back.y2)] {
            worst = worst.max((p - q).abs());
            check!((p - q).abs() <= 1e-9, "pair {i}: {b:?} came back as {back:?}");
        }
    }
    let front = FrameMeta::new("f", "FRONT", 1920, 1280).unwrap();
    let v = make_enhancement_view(&front, CropFractions::CENTER_BAND, 1.5, 64).unwrap();
    check!((v.out_width, v.out_height) == (2880, 960), "front view {}x{}", v.out_width, v.out_height);
    let side = FrameMeta::new("f", "SIDE", 1920, 886).unwrap();
    let v = make_enhancement_view(&side, CropFractions::CENTER_BAND, 1.5, 64).unwrap();
    check!((v.out_width, v.out_height) == (2880, 704), "side view {}x{}", v.out_width, v.out_height);
    check!(v.crop == bx(0.0, 265.0, 1920.0, 709.0), "side crop {:?}", v.crop);
    Ok(format!("1e5 pairs, worst error {worst:.1e}; views 2880x960 and 2880x704"))
}

/// AP from scratch: precision at each distinct score, made monotone from the
/// right, summed over recall steps.
fn oracle_ap(scored: &[(f64, bool)], positives: usize) -> f64 {
    let mut s = scored.to_vec();
    s.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, &(score, is_tp)) in s.iter().enumerate() {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        if i + 1 == s.len() || s[i + 1].0 != score {
            points.push((tp as f64 / positives as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for i in 0..points.len() {
        let best_p = points[i..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (points[i].0 - prev_r) * best_p;
        prev_r = points[i].0;
    }
    ap
}

/// Exhaustive matching: among all one-to-one assignments of detections to
/// same-category ground truth over the IoU threshold, the one that is
/// lexicographically best in score order, preferring higher IoU and then the
/// earlier ground truth. Returns the matched ground truth per detection.
fn oracle_matching(dets: &[Detection], gts: &[GroundTruthBox], cfg: &EvalConfig) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    type Key = Vec<(f64, i64)>;
    fn search(
        k: usize,
        order: &[usize],
        dets: &[Detection],
        gts: &[GroundTruthBox],
        cfg: &EvalConfig,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        best: &mut Option<(Key, Vec<Option<usize>>)>,
    ) {
        if k == order.len() {
            let key: Key = order
                .iter()
                .map(|&i| match cur[i] {
                    Some(j) => (oracle_iou(&dets[i].bbox, &gts[j].bbox), -(j as i64)),
                    None => (-1.0, 0),
                })
                .collect();
            let better = match best {
                None => true,
                Some((bk, _)) => key.partial_cmp(bk) == Some(std::cmp::Ordering::Greater),
            };
            if better {
                *best = Some((key, cur.clone()));
            }
            return;
        }
        let i = order[k];
        search(k + 1, order, dets, gts, cfg, used, cur, best);
        for j in 0..gts.len() {
            let ok = !used[j]
                && gts[j].category == dets[i].category
                && oracle_iou(&dets[i].bbox, &gts[j].bbox) >= cfg.per_category_iou[dets[i].category];
            if ok {
                used[j] = true;
                cur[i] = Some(j);
                search(k + 1, order, dets, gts, cfg, used, cur, best);
                cur[i] = None;
                used[j] = false;
            }
        }
    }
    let mut best = None;
    search(
        0,
        &order,
        dets,
        gts,
        cfg,
        &mut vec![false; gts.len()],
        &mut vec![None; dets.len()],
        &mut best,
    );
    best.expect("empty assignment always exists").1
}

fn oracle_eval(dets: &[Detection], gts: &[GroundTruthBox], cfg: &EvalConfig) -> BTreeMap<Category, Option<f64>> {
    let counts = |d: Difficulty| cfg.level == Level::L2 || d == Difficulty::Level1;
    let matching = oracle_matching(dets, gts, cfg);
    CATS.iter()
        .map(|&c| {
            let positives = gts.iter().filter(|g| g.category == c && counts(g.difficulty)).count();
            let scored: Vec<(f64, bool)> = dets
                .iter()
                .zip(&matching)
                .filter(|(d, _)| d.category == c)
                .filter_map(|(d, m)| match m {
                    Some(j) if !counts(gts[*j].difficulty) => None,
                    Some(_) => Some((d.score, true)),
                    None => Some((d.score, false)),
                })
                .collect();
            let ap = if positives > 0 {
                Some(oracle_ap(&scored, positives))
            } else if !scored.is_empty() {
                Some(0.0)
            } else {
                None
            };
            (c, ap)
        })
        .collect()
}

fn c3_evaluator() -> Outcome {
    use Category::{Cyclist as C, Pedestrian as P, Vehicle as V};
    use Difficulty::{Level1 as D1, Level2 as D2};
    let l2 = EvalConfig::default();
    let l1 = EvalConfig::at_level(Level::L1);
    let ap = |d: &[Detection], g: &[GroundTruthBox], cfg: &EvalConfig, c: Category| {
        evaluate(d, g, cfg).unwrap().ap(c)
    };
    let unit = bx(0.0, 0.0, 10.0, 10.0);
    let far = bx(50.0, 50.0, 60.0, 60.0);

    // 1. Perfect detections.
    let g = [gt("m", "a", V, D1, unit), gt("m", "b", V, D1, far)];
    let d = [det("m", V, 0.9, unit), det("m", V, 0.8, far)];
    check!(ap(&d, &g, &l2, V) == Some(1.0), "perfect: {:?}", ap(&d, &g, &l2, V));
    // 2. Two ground truth boxes, one found.
    let d = [det("m", V, 0.9, unit)];
    check!(ap(&d, &g, &l2, V) == Some(0.5), "2 GT / 1 TP: {:?}", ap(&d, &g, &l2, V));
    // 3. A false positive outranks the only true positive.
    let g1 = [gt("m", "a", V, D1, unit)];
    let d = [det("m", V, 0.9, far), det("m", V, 0.8, unit)];
    check!(ap(&d, &g1, &l2, V) == Some(0.5), "FP first: {:?}", ap(&d, &g1, &l2, V));
    // 4. A missed difficulty-2 box counts at L2 only.
    let g = [gt("m", "a", P, D1, unit), gt("m", "b", P, D2, far)];
    let d = [det("m", P, 0.7, unit)];
    check!(ap(&d, &g, &l1, P) == Some(1.0), "L1: {:?}", ap(&d, &g, &l1, P));
    check!(ap(&d, &g, &l2, P) == Some(0.5), "L2: {:?}", ap(&d, &g, &l2, P));
    // 5. Category thresholds: IoU 0.65 fails for vehicles, passes for
    //    pedestrians; the absent cyclist class is left out of the mean.
    let g = [gt("m", "a", V, D1, unit), gt("m", "b", P, D1, far)];
    let d = [
        det("m", V, 0.9, bx(0.0, 0.0, 6.5, 10.0)),
        det("m", P, 0.9, bx(50.0, 50.0, 56.5, 60.0)),
    ];
    let r = evaluate(&d, &g, &l2).unwrap();
    check!(r.ap(V) == Some(0.0) && r.ap(P) == Some(1.0) && r.ap(C).is_none(), "thresholds: {r:?}");
    check!(r.mean_ap == Some(0.5), "mean {:?}", r.mean_ap);

    // Exhaustive instances: up to 5 boxes drawn from a small grid of shapes.
    // IoU with `unit`: 0.818, 0.8, 0.538, 0.143.
    let shapes = [
        unit,
        bx(1.0, 0.0, 11.0, 10.0),
        bx(0.0, 0.0, 10.0, 8.0),
        bx(3.0, 0.0, 13.0, 10.0),
        bx(5.0, 5.0, 15.0, 15.0),
    ];
    let scores = [0.9, 0.5];
    let mut instances = 0usize;
    for category in [V, P] {
        let gt_opts: Vec<(usize, Difficulty)> =
            (0..shapes.len()).flat_map(|s| [(s, D1), (s, D2)]).collect();
        let det_opts: Vec<(usize, f64)> =
            (0..shapes.len()).flat_map(|s| scores.map(|sc| (s, sc))).collect();
        for n_gt in 0..=3usize {
            for n_det in 0..=(5 - n_gt).min(3) {
                // Ground truth as non-decreasing option tuples, detections as
                // all sequences (order matters for tie-breaking).
                let mut gsel = vec![0usize; n_gt];
                loop {
                    let gts: Vec<GroundTruthBox> = gsel
                        .iter()
                        .enumerate()
                        .map(|(k, &o)| gt("x", &format!("g{k}"), category, gt_opts[o].1, shapes[gt_opts[o].0]))
                        .collect();
                    let total = det_opts.len().pow(n_det as u32);
                    for code in 0..total {
                        let mut c = code;
                        let dets: Vec<Detection> = (0..n_det)
                            .map(|_| {
                                let (s, sc) = det_opts[c % det_opts.len()];
                                c /= det_opts.len();
                                det("x", category, sc, shapes[s])
                            })
                            .collect();
                        for cfg in [&l1, &l2] {
                            let got = evaluate(&dets, &gts, cfg).map_err(|e| e.to_string())?;
                            let want = oracle_eval(&dets, &gts, cfg);
                            for c in CATS {
                                let (a, b) = (got.ap(c), want[&c]);
                                let same = match (a, b) {
                                    (Some(a), Some(b)) => (a - b).abs() < 1e-12,
                                    (None, None) => true,
                                    _ => false,
                                };
                                check!(same, "{c} at {}: got {a:?}, oracle {b:?}\ngts {gts:?}\ndets {dets:?}", cfg.level);
                            }
                        }
                        instances += 1;
                    }
                    // Next non-decreasing tuple.
                    let mut k = n_gt;
                    loop {
                        if k == 0 {
                            break;
                        }
                        k -= 1;
                        if gsel[k] + 1 < gt_opts.len() {
                            gsel[k] += 1;
                            for m in k + 1..n_gt {
                                gsel[m] = gsel[k];
                            }
                            k = usize::MAX;
                            break;
                        }
                    }
                    if k != usize::MAX {
                        break;
                    }
                }
            }
        }
    }
    Ok(format!("5 hand-built datasets exact; {instances} enumerated instances match the oracle at L1 and L2"))
}

fn oracle_dist(p: Dims, c: Dims) -> f64 {
    let inter = p.0.min(c.0) * p.1.min(c.1);
    1.0 - inter / (p.0 * p.1 + c.0 * c.1 - inter)
}

/// Mean distance of a partition when each cluster is represented by the mean
/// of its members, and when represented by its best member.
fn partition_costs(points: &[Dims], labels: &[usize]) -> (f64, f64) {
    let (mut by_mean, mut by_medoid) = (0.0, 0.0);
    for c in 0..2 {
        let members: Vec<Dims> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| *p).collect();
        if members.is_empty() {
            return (f64::INFINITY, f64::INFINITY);
        }
        let n = members.len() as f64;
        let centre = (
            members.iter().map(|p| p.0).sum::<f64>() / n,
            members.iter().map(|p| p.1).sum::<f64>() / n,
        );
        by_mean += members.iter().map(|&p| oracle_dist(p, centre)).sum::<f64>();
        by_medoid += members
            .iter()
            .map(|&m| members.iter().map(|&p| oracle_dist(p, m)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
    }
    let n = points.len() as f64;
    (by_mean / n, by_medoid / n)
}

fn c4_kmeans() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut steps = 0usize;
    for run in 0..100u64 {
        let n = rng.random_range(20..200usize);
        let boxes: Vec<Dims> = (0..n)
            .map(|_| (rng.random_range(4.0..400.0f64).round(), rng.random_range(4.0..400.0f64).round()))
            .collect();
        let cfg = KmeansConfig {
            k: rng.random_range(1..=12),
            seed: run,
            ..Default::default()
        };
        let out = kmeans_anchors(&boxes, &cfg).map_err(|e| e.to_string())?;
        for w in out.cost_history.windows(2) {
            check!(w[1] <= w[0] + 1e-12, "run {run}: cost rose {} -> {}", w[0], w[1]);
        }
        steps += out.cost_history.len();
        let mut distinct = boxes.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        let full = KmeansConfig {
            k: distinct.len(),
            seed: run,
            ..Default::default()
        };
        let out = kmeans_anchors(&boxes, &full).map_err(|e| e.to_string())?;
        check!(out.mean_distance == 0.0, "run {run}: k = distinct gave cost {}", out.mean_distance);
    }

    // Two clusters on micro-instances versus every 2-partition. With medoid
    // updates the objective is exactly the partition cost over members; with
    // mean updates the guard may keep a centroid that beats the member mean,
    // so the check is on the partition and an upper bound.
    let mut partitions_checked = 0;
    for seed in 0..5u64 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = r.random_range(6..=12usize);
        let points: Vec<Dims> = (0..n)
            .map(|i| {
                let base = if i % 2 == 0 { 12.0 } else { 150.0 };
                (base * r.random_range(0.8..1.25), base * r.random_range(0.8..1.25))
            })
            .collect();
        let mut best_mean = (f64::INFINITY, Vec::new());
        let mut best_medoid = f64::INFINITY;
        for mask in 1u32..(1 << (n - 1)) {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let (mean, medoid) = partition_costs(&points, &labels);
            if mean < best_mean.0 {
                best_mean = (mean, labels);
            }
            best_medoid = best_medoid.min(medoid);
            partitions_checked += 1;
        }
        let medoid_cfg = KmeansConfig { k: 2, seed, update: CentroidUpdate::Medoid, ..Default::default() };
        let out = kmeans_anchors(&points, &medoid_cfg).map_err(|e| e.to_string())?;
        check!(
            (out.mean_distance - best_medoid).abs() < 1e-9,
            "seed {seed}: medoid k-means {} vs oracle {best_medoid}",
            out.mean_distance
        );
        let out = kmeans_anchors(&points, &KmeansConfig { k: 2, seed, ..Default::default() })
            .map_err(|e| e.to_string())?;
        let anchors = &out.anchors.anchors;
        let labels: Vec<usize> = points
            .iter()
            .map(|&p| usize::from(oracle_dist(p, anchors[1]) < oracle_dist(p, anchors[0])))
            .collect();
        let same = labels == best_mean.1 || labels.iter().zip(&best_mean.1).all(|(a, b)| a != b);
        check!(same, "seed {seed}: partition {labels:?} vs oracle {:?}", best_mean.1);
        check!(
            out.mean_distance <= best_mean.0 + 1e-9,
            "seed {seed}: mean k-means {} above oracle {}",
            out.mean_distance,
            best_mean.0
        );
    }
    Ok(format!("100 runs monotone over {steps} costs; k = distinct gives 0; {partitions_checked} partitions"))
}

fn snapshot_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots/ablation.txt")
}

fn c5_ablation() -> Outcome {
    let scene = SceneConfig::default();
    check!(scene.frames >= 200 && scene.seed == 42, "default scene changed: {scene:?}");
    let data = generate_dataset(&scene).map_err(|e| e.to_string())?;
    let backend = SyntheticBackend::new("w6", SyntheticDetectorConfig::default(), data.gts.clone())
        .map_err(|e| e.to_string())?;
    let on = EnhancementConfig::default();
    let off = EnhancementConfig {
        enabled: false,
        ..Default::default()
    };
    let run = |cfg: &EnhancementConfig| -> Result<Vec<Detection>, String> {
        let mut out = Vec::new();
        for f in &data.frames {
            out.extend(scale_enhanced_detect(&backend, f, cfg).map_err(|e| e.to_string())?);
        }
        Ok(out)
    };
    let (plain, enhanced) = (run(&off)?, run(&on)?);
    let mut snap = String::new();
    let mut summary = String::new();
    for level in [Level::L2, Level::L1] {
        let cfg = EvalConfig::at_level(level);
        let ap_p = evaluate(&plain, &data.gts, &cfg).unwrap().mean_ap.unwrap();
        let ap_e = evaluate(&enhanced, &data.gts, &cfg).unwrap().mean_ap.unwrap();
        let r_p = size_recall(&plain, &data.gts, &cfg, 1024.0).unwrap();
        let r_e = size_recall(&enhanced, &data.gts, &cfg, 1024.0).unwrap();
        let (rp, re) = (r_p.recall().unwrap(), r_e.recall().unwrap());
        check!(re > rp, "{level}: small recall {re} not above {rp}");
        check!(ap_e >= ap_p - 0.005, "{level}: mean AP fell from {ap_p} to {ap_e}");
        writeln!(
            snap,
            "{level} small_recall plain={rp:.6} enhanced={re:.6} ({}/{} -> {}/{}) mean_ap plain={ap_p:.6} enhanced={ap_e:.6}",
            r_p.matched, r_p.positives, r_e.matched, r_e.positives
        )
        .unwrap();
        write!(summary, "{level} recall {rp:.3}->{re:.3} mAP {ap_p:.4}->{ap_e:.4}; ").unwrap();
    }
    writeln!(snap, "images={} objects={}", data.frames.len(), data.gts.len()).unwrap();
    let path = snapshot_path();
    if std::env::var_os("RTDET_BLESS").is_some() || !path.exists() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &snap).unwrap();
        summary.push_str("snapshot written");
    } else {
        let want = std::fs::read_to_string(&path).unwrap();
        check!(want == snap, "snapshot mismatch\nexpected:\n{want}\ngot:\n{snap}");
        summary.push_str("snapshot matches");
    }
    Ok(summary)
}

fn c6_ensemble() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let names = ["w6", "p6", "e6", "d6"];
    for case in 0..1000 {
        let cfg = if case % 2 == 0 {
            EnsembleConfig::default()
        } else {
            let mut c = EnsembleConfig::default();
            for cat in CATS {
                c.source[cat] = names[rng.random_range(0..names.len())].to_string();
            }
            c
        };
        let per_backend: BTreeMap<String, Vec<Detection>> = names
            .iter()
            .map(|&n| {
                let k = rng.random_range(0..30);
                let dets = (0..k)
                    .map(|_| {
                        let x = rng.random_range(0.0..1000.0);
                        det("f", CATS[rng.random_range(0..3)], rng.random_range(0.0..=1.0), bx(x, x, x + 10.0, x + 20.0))
                    })
                    .collect();
                (n.to_string(), dets)
            })
            .collect();
        let out = classwise_ensemble(&per_backend, &cfg).map_err(|e| e.to_string())?;
        for c in CATS {
            let got: Vec<&Detection> = out.iter().filter(|d| d.category == c).collect();
            let want: Vec<&Detection> = per_backend[&cfg.source[c]].iter().filter(|d| d.category == c).collect();
            check!(got == want, "case {case}: {c} partition differs from source {}", cfg.source[c]);
        }
        let expected_len: usize = CATS
            .iter()
            .map(|&c| per_backend[&cfg.source[c]].iter().filter(|d| d.category == c).count())
            .sum();
        check!(out.len() == expected_len, "case {case}: extra detections");
    }
    let d = EnsembleConfig::default();
    check!(
        d.source[Category::Vehicle] == "w6" && d.source[Category::Pedestrian] == "w6" && d.source[Category::Cyclist] == "p6",
        "default mapping {d:?}"
    );
    Ok("1000 random cases; every category partition equals its configured source".into())
}

fn random_clean_case(rng: &mut ChaCha8Rng, frame: &str, perfect: bool) -> (Vec<GroundTruthBox>, Vec<Vec<Detection>>) {
    let gts: Vec<GroundTruthBox> = (0..rng.random_range(1..12))
        .map(|i| {
            let x = rng.random_range(0.0..500.0);
            let y = rng.random_range(0.0..500.0);
            let b = bx(x, y, x + rng.random_range(5.0..80.0), y + rng.random_range(5.0..80.0));
            gt(frame, &format!("g{i}"), CATS[rng.random_range(0..3)], Difficulty::Level1, b)
        })
        .collect();
    let models = (0..3)
        .map(|_| {
            let mut dets = Vec::new();
            for g in &gts {
                if perfect {
                    dets.push(det(frame, g.category, 1.0, g.bbox));
                } else if rng.random_bool(0.7) {
                    let mut j = |v: f64| v + rng.random_range(-6.0..6.0);
                    let b = bx(j(g.bbox.x1), j(g.bbox.y1), j(g.bbox.x2) + 7.0, j(g.bbox.y2) + 7.0);
                    dets.push(det(frame, g.category, rng.random_range(0.0..=1.0), b));
                }
            }
            if !perfect {
                for _ in 0..rng.random_range(0..4) {
                    let x = rng.random_range(0.0..500.0);
                    dets.push(det(frame, CATS[rng.random_range(0..3)], rng.random_range(0.0..=1.0), bx(x, x, x + 30.0, x + 30.0)));
                }
            }
            dets
        })
        .collect();
    (gts, models)
}

fn c7_cleaning() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let iou_grid = [0.1, 0.3, 0.5, 0.7, 0.9];
    let score_grid = [0.0, 0.25, 0.5, 0.75];
    let mut comparisons = 0usize;
    for case in 0..60 {
        let (gts, models) = random_clean_case(&mut rng, &format!("c{case}"), false);
        let mut kept: BTreeMap<(usize, usize, usize), BTreeSet<String>> = BTreeMap::new();
        for m in 1..=3 {
            for (i, &iou_min) in iou_grid.iter().enumerate() {
                for (s, &score_min) in score_grid.iter().enumerate() {
                    let cfg = CleanConfig { min_models: m, iou_min, score_min };
                    let out = consensus_clean(&gts, &models, &cfg).map_err(|e| e.to_string())?;
                    kept.insert((m, i, s), out.kept.iter().map(|g| g.id.clone()).collect());
                }
            }
        }
        for (&(m, i, s), set) in &kept {
            for (&(m2, i2, s2), set2) in &kept {
                if m2 >= m && i2 >= i && s2 >= s {
                    comparisons += 1;
                    check!(
                        set2.is_subset(set),
                        "case {case}: stricter ({m2},{},{}) kept {:?} that ({m},{},{}) removed",
                        iou_grid[i2], score_grid[s2], set2.difference(set).collect::<Vec<_>>(), iou_grid[i], score_grid[s]
                    );
                }
            }
        }
        let (gts, models) = random_clean_case(&mut rng, &format!("p{case}"), true);
        for m in 1..=3 {
            for &iou_min in &iou_grid {
                for &score_min in &score_grid {
                    let cfg = CleanConfig { min_models: m, iou_min, score_min };
                    let out = consensus_clean(&gts, &models, &cfg).map_err(|e| e.to_string())?;
                    check!(out.removed.is_empty(), "perfect consensus removed {:?}", out.removed);
                }
            }
        }
    }
    Ok(format!("60 random cases, {comparisons} ordered threshold pairs; perfect consensus removes nothing"))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rtdet")
}

fn rtdet(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("RTDET_SEED")
        .output()
        .expect("run rtdet")
}

fn parse_latency_csv(text: &str) -> Vec<(f64, f64, bool)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[6].parse().unwrap(), f[4].parse().unwrap(), f[7] == "true")
        })
        .collect()
}

fn c8_latency() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = rtdet(
        dir.path(),
        &["bench", "--stub-sleep-ms", "30", "--max-frames", "10", "--report", "fast.csv"],
    );
    check!(out.status.success(), "30 ms stub failed: {}", String::from_utf8_lossy(&out.stderr));
    let rows = parse_latency_csv(&std::fs::read_to_string(dir.path().join("fast.csv")).unwrap());
    check!(rows.len() == 10, "{} rows", rows.len());
    let mean = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
    let merge = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
    let target = 60.0 + merge;
    check!((mean - target).abs() <= 0.2 * target, "mean {mean:.3} ms vs {target:.3} ms");
    check!(rows.iter().all(|r| r.2 == (r.0 > 70.0)), "violation flags disagree with totals");
    let stdout = String::from_utf8_lossy(&out.stdout);
    check!(stdout.contains("status            PASS"), "{stdout}");

    let out = rtdet(
        dir.path(),
        &["bench", "--stub-sleep-ms", "40", "--max-frames", "4", "--report", "slow.csv"],
    );
    check!(!out.status.success(), "40 ms stub should exceed the 70 ms budget");
    let slow = parse_latency_csv(&std::fs::read_to_string(dir.path().join("slow.csv")).unwrap());
    check!(slow.iter().all(|r| r.2 && r.0 > 70.0), "every 80 ms frame should be flagged: {slow:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    check!(stdout.contains("violations        4 of 4"), "{stdout}");
    Ok(format!("30 ms stub mean {mean:.2} ms (target {target:.2} +/- 20%); 40 ms stub flagged 4/4, exit {:?}", out.status.code()))
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

const CONFIG: &str = r#"
seed = 42

[scene]
frames = 30

[backends.w6]
kind = "synthetic"
gt = "data/gt.jsonl"

[backends.p6]
kind = "synthetic"
gt = "data/gt.jsonl"
seed = 7
s0 = 22.0
"#;

fn full_run(dir: &Path, jobs: &str) -> Result<(), String> {
    std::fs::write(dir.join("run.toml"), CONFIG).unwrap();
    let steps: &[&[&str]] = &[
        &["simulate", "--out-dir", "data"],
        &["enhance", "--frames", "data/frames.jsonl", "--backend", "w6", "--out", "w6.jsonl"],
        &["enhance", "--frames", "data/frames.jsonl", "--backend", "p6", "--out", "p6.jsonl"],
        &["enhance", "--frames", "data/frames.jsonl", "--backend", "w6", "--no-enhance", "--out", "w6_plain.jsonl"],
        &["enhance", "--frames", "data/frames.jsonl", "--plain", "w6_plain.jsonl", "--out", "replay.jsonl"],
        &["nms", "--det", "w6.jsonl", "--out", "w6_nms.jsonl", "--round-px"],
        &["ensemble", "--input", "w6=w6.jsonl", "--input", "p6=p6.jsonl", "--out", "ens.jsonl"],
        &["eval", "--gt", "data/gt.jsonl", "--det", "ens.jsonl", "--level", "both", "--csv", "eval.csv", "--summary", "eval.txt"],
        &["anchors", "--gt", "data/gt.jsonl", "--out", "anchors.txt"],
        &["anchors", "--gt", "data/gt.jsonl", "--small-only", "--k", "3", "--out", "anchors_small.txt"],
        &["heatmap", "--gt", "data/gt.jsonl", "--frames", "data/frames.jsonl", "--out", "heat.csv"],
        &["clean", "--gt", "data/gt.jsonl", "--det", "w6=w6.jsonl", "--det", "p6=p6.jsonl", "--out-gt", "kept.jsonl", "--removed", "removed.jsonl", "--report", "clean.csv"],
        &["bench", "--frames", "data/frames.jsonl", "--out", "bench_dets.jsonl"],
    ];
    for step in steps {
        let mut args = vec!["--config", "run.toml", "--jobs", jobs];
        args.extend_from_slice(step);
        let out = rtdet(dir, &args);
        if !out.status.success() {
            return Err(format!("`rtdet {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn c9_determinism() -> Outcome {
    let runs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    full_run(runs[0].path(), "1")?;
    full_run(runs[1].path(), "1")?;
    full_run(runs[2].path(), "4")?;
    let a = files_under(runs[0].path());
    check!(a.len() >= 16, "only {} artifacts", a.len());
    for other in &runs[1..] {
        let b = files_under(other.path());
        check!(a.keys().eq(b.keys()), "artifact sets differ");
        for (name, bytes) in &a {
            check!(bytes == &b[name], "{} differs between runs", name.display());
        }
    }
    let replay = &a[Path::new("replay.jsonl")];
    check!(!replay.is_empty(), "empty replay output");
    Ok(format!("{} artifacts from 13 commands byte-identical across 3 runs (jobs 1, 1, 4)", a.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("nms oracle equivalence", c1_nms_oracle),
        ("transform round-trip", c2_round_trip),
        ("evaluator correctness", c3_evaluator),
        ("k-means properties", c4_kmeans),
        ("scale-enhancement ablation", c5_ablation),
        ("class-wise ensemble", c6_ensemble),
        ("cleaning monotonicity", c7_cleaning),
        ("latency harness", c8_latency),
        ("cli determinism", c9_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  [{}] {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  [{}] {name} ({secs:.1} s): {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
