use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use marine::classify::{class_weights, ClassifierHead, HeadConfig};
use marine::detect::{merge_positive_windows, segment_frames};
use marine::evaluate::{average_precision, bootstrap, detection_ap, roc_auc, t_iou, TimeInterval};
use marine::frameselect::{dissimilarity, select_evenly_spaced, select_motion_based, DissimilarityStream};
use marine::media::{patch_aligned_size, GreyFrame};
use marine::modelselect::make_folds;

fn grey_pair() -> impl Strategy<Value = (GreyFrame, GreyFrame)> {
    (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
        (
            proptest::collection::vec(any::<u8>(), w * h),
            proptest::collection::vec(any::<u8>(), w * h),
        )
            .prop_map(move |(a, b)| (GreyFrame::new(w, h, a).unwrap(), GreyFrame::new(w, h, b).unwrap()))
    })
}

fn interval() -> impl Strategy<Value = TimeInterval> {
    (0.0f64..20.0, 0.01f64..10.0).prop_map(|(s, len)| TimeInterval::new(s, s + len).unwrap())
}

/// Frame `t` (1-based) is chosen iff fewer than `k` candidates beat it on
/// score, with the smaller index winning ties.
fn motion_oracle(scores: &[u64], k: usize) -> Vec<usize> {
    let n = scores.len();
    let mut chosen: Vec<usize> = (0..n)
        .filter(|&i| {
            let beaten_by = (0..n)
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count();
            beaten_by < k
        })
        .map(|i| i + 1)
        .collect();
    let last = *chosen.last().unwrap();
    chosen.resize(k, last);
    chosen
}

/// AP from each positive's rank computed by pair counting rather than
/// sorting.
fn ap_oracle(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let rank = |i: usize| {
        1 + (0..scores.len())
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let pos: Vec<usize> = (0..scores.len()).filter(|&i| labels[i]).collect();
    if pos.is_empty() {
        return None;
    }
    let sum: f64 = pos
        .iter()
        .map(|&i| {
            let r = rank(i);
            let hits = pos.iter().filter(|&&j| rank(j) <= r).count();
            hits as f64 / r as f64
        })
        .sum();
    Some(sum / pos.len() as f64)
}

fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    proptest::collection::vec((0u8..12, any::<bool>()), 2..40)
        .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
        .prop_map(|v| v.into_iter().map(|(s, l)| (s as f64 / 11.0, l)).unzip())
}

fn small_head() -> impl Strategy<Value = (HeadConfig, u64)> {
    (1usize..5, 0usize..3, 1usize..4, 1usize..3, prop_oneof![Just(0.0), Just(0.25), Just(0.5)], any::<u64>())
        .prop_map(|(input_dim, hidden_layers, width, n_outputs, dropout_rate, seed)| {
            let mut c = HeadConfig::new(input_dim, n_outputs);
            c.hidden_layers = hidden_layers;
            c.hidden_width = width + 2;
            c.bottleneck_width = width + 1;
            c.dropout_rate = dropout_rate;
            c.seed = seed;
            (c, seed)
        })
}

fn batch(config: &HeadConfig, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = (0..n)
        .map(|_| (0..config.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let ys = (0..n)
        .map(|_| (0..config.n_outputs).map(|_| rng.random_range(0..2) as f64).collect())
        .collect();
    let ws = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
    (xs, ys, ws)
}

/// Moves every parameter, biases included, off zero so no ReLU input sits
/// exactly on the kink.
fn jitter(head: &mut ClassifierHead, seed: u64) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in head.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
}

fn loss_grad(head: &ClassifierHead, xs: &[Vec<f64>], ys: &[Vec<f64>], ws: &[f64], seed: u64) -> (f64, Vec<f64>) {
    let x: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let y: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
    // A fresh generator per call gives every evaluation the same dropout masks.
    head.loss_and_gradients(&x, &y, ws, true, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dissimilarity_is_a_symmetric_distance((a, b) in grey_pair()) {
        let ab = dissimilarity(&a, &b).unwrap();
        prop_assert_eq!(ab, dissimilarity(&b, &a).unwrap());
        prop_assert_eq!(dissimilarity(&a, &a).unwrap(), 0);
        prop_assert_eq!(ab == 0, a.pixels() == b.pixels());
        let direct: u64 = a.pixels().iter().zip(b.pixels()).map(|(&x, &y)| (x as i64 - y as i64).unsigned_abs()).sum();
        prop_assert_eq!(ab, direct);
    }

    #[test]
    fn motion_selection_matches_rank_oracle(scores in proptest::collection::vec(0u64..6, 1..20), k in 1usize..=10) {
        let got = select_motion_based(&DissimilarityStream::from_scores(scores.clone()), k).unwrap();
        prop_assert_eq!(&got.indices, &motion_oracle(&scores, k));
        prop_assert!(got.indices.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(!got.indices.contains(&0));
    }

    #[test]
    fn evenly_spaced_spans_the_clip(n in 2usize..500, k in 2usize..30) {
        let s = select_evenly_spaced(n, k).unwrap();
        prop_assert_eq!(s.indices.len(), k);
        prop_assert_eq!(s.indices[0], 0);
        prop_assert_eq!(*s.indices.last().unwrap(), n - 1);
        prop_assert!(s.indices.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn resize_keeps_the_short_side_and_aligns_the_long_one(
        w in 1usize..4000, h in 1usize..4000, patches in 1usize..40, patch in prop_oneof![Just(14usize), Just(16)],
    ) {
        let short = patches * patch;
        let (ow, oh) = patch_aligned_size(w, h, short, patch).unwrap();
        let (o_short, o_long, i_short, i_long) = if h <= w { (oh, ow, h, w) } else { (ow, oh, w, h) };
        prop_assert_eq!(o_short, short);
        prop_assert_eq!(o_long % patch, 0);
        let exact = i_long as f64 * short as f64 / i_short as f64;
        prop_assert!(o_long as f64 <= exact + 1e-9);
        prop_assert!(o_long as f64 > exact - patch as f64);
    }

    #[test]
    fn t_iou_properties(a in interval(), b in interval()) {
        let v = t_iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, t_iou(&b, &a));
        prop_assert!((t_iou(&a, &a) - 1.0).abs() < 1e-12);
        let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
        let expected = inter / (a.length() + b.length() - inter);
        prop_assert!((v - expected).abs() < 1e-12);
        if a.end() <= b.start() || b.end() <= a.start() {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn detection_ap_falls_as_the_threshold_rises(
        videos in proptest::collection::vec(
            (proptest::collection::vec(interval(), 0..4), proptest::collection::vec(interval(), 1..3)), 1..6),
        t1 in 0.01f64..1.0, t2 in 0.01f64..1.0,
    ) {
        let (preds, truths): (Vec<_>, Vec<_>) = videos.into_iter().unzip();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = detection_ap(&preds, &truths, lo).unwrap();
        let b = detection_ap(&preds, &truths, hi).unwrap();
        prop_assert!(a.ap >= b.ap);
        prop_assert!((0.0..=1.0).contains(&a.ap));
    }

    #[test]
    fn average_precision_matches_pair_oracle((scores, labels) in labelled_scores()) {
        let got = average_precision(&scores, &labels).unwrap();
        prop_assert!((got - ap_oracle(&scores, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_mann_whitney_and_ignores_monotone_maps((scores, labels) in labelled_scores()) {
        let auc = roc_auc(&scores, &labels).unwrap().auc;
        prop_assert!((auc - auc_oracle(&scores, &labels)).abs() < 1e-12);
        let mapped: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() + s.powi(3)).collect();
        prop_assert_eq!(auc, roc_auc(&mapped, &labels).unwrap().auc);
    }

    #[test]
    fn class_weights_balance_the_counts(counts in proptest::collection::vec(1usize..500, 1..8)) {
        let n: usize = counts.iter().sum();
        let w = class_weights(&counts, n, 0.0).unwrap();
        let total: f64 = counts.iter().zip(&w).map(|(&f, &w)| f as f64 * w).sum();
        prop_assert!((total - n as f64).abs() < 1e-9 * n as f64);
    }

    #[test]
    fn folds_keep_groups_whole(
        samples in proptest::collection::vec((0usize..15, any::<bool>()), 3..80), folds in 2usize..5, seed in any::<u64>(),
    ) {
        let groups: Vec<String> = samples.iter().map(|s| format!("g{}", s.0)).collect();
        let positive: Vec<bool> = samples.iter().map(|s| s.1).collect();
        let distinct: std::collections::BTreeSet<&String> = groups.iter().collect();
        let result = make_folds(&groups, &positive, folds, seed);
        if distinct.len() < folds {
            prop_assert!(result.is_err());
            return Ok(());
        }
        let assignment = result.unwrap();
        let mut fold_of = std::collections::HashMap::new();
        for (g, &f) in groups.iter().zip(&assignment) {
            prop_assert!(f < folds);
            prop_assert_eq!(*fold_of.entry(g).or_insert(f), f);
        }
        let mut per_fold = vec![0usize; folds];
        for f in fold_of.values() {
            per_fold[*f] += 1;
        }
        prop_assert!(per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap() <= 1);
    }

    #[test]
    fn windows_tile_the_video(n_frames in 1usize..2000, fps in prop_oneof![Just(12.0), Just(25.0), Just(29.97), Just(120.0)], l in prop_oneof![Just(0.5), Just(1.0), Just(2.0), Just(3.3)]) {
        prop_assume!(l * fps >= 1.0);
        let w = segment_frames("v", n_frames, fps, l).unwrap();
        let duration = n_frames as f64 / fps;
        prop_assert_eq!(w[0].start_frame, 0);
        prop_assert_eq!(w[0].start, 0.0);
        prop_assert_eq!(w.last().unwrap().end_frame, n_frames);
        prop_assert!((w.last().unwrap().end - duration).abs() < 1e-9);
        for pair in w.windows(2) {
            prop_assert_eq!(pair[0].end_frame, pair[1].start_frame);
            prop_assert_eq!(pair[0].end, pair[1].start);
        }
        for x in &w {
            prop_assert!(x.start_frame < x.end_frame);
            prop_assert!(x.start < x.end);
            prop_assert!(x.end - x.start <= l + 1e-9 || x.index + 1 == w.len());
        }
    }

    #[test]
    fn merged_intervals_are_maximal(positive in proptest::collection::vec(any::<bool>(), 1..30)) {
        let w = segment_frames("v", positive.len() * 24, 12.0, 2.0).unwrap();
        let merged = merge_positive_windows(&w, &positive).unwrap();
        for pair in merged.windows(2) {
            prop_assert!(pair[0].end() < pair[1].start());
        }
        let covered: f64 = merged.iter().map(TimeInterval::length).sum();
        let expected = positive.iter().filter(|&&p| p).count() as f64 * 2.0;
        prop_assert!((covered - expected).abs() < 1e-9);
        let runs = positive.windows(2).filter(|p| p[1] && !p[0]).count() + positive[0] as usize;
        prop_assert_eq!(merged.len(), runs);
    }

    #[test]
    fn bootstrap_is_reproducible(values in proptest::collection::vec(0.0f64..1.0, 1..30), seed in any::<u64>()) {
        let mean = |idx: &[usize]| Ok(idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64);
        let a = bootstrap(values.len(), 20, seed, mean).unwrap();
        let b = bootstrap(values.len(), 20, seed, mean).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.values.iter().all(|v| a.values.len() == 20 && (0.0..1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn gradients_match_finite_differences((config, seed) in small_head()) {
        let mut head = ClassifierHead::new(config.clone()).unwrap();
        jitter(&mut head, seed);
        let (xs, ys, ws) = batch(&config, 5, seed);
        let (_, grad) = loss_grad(&head, &xs, &ys, &ws, seed);
        let h = 1e-6;
        for p in 0..grad.len() {
            let orig = head.params()[p];
            head.params_mut()[p] = orig + h;
            let up = loss_grad(&head, &xs, &ys, &ws, seed).0;
            head.params_mut()[p] = orig - h;
            let down = loss_grad(&head, &xs, &ys, &ws, seed).0;
            head.params_mut()[p] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - grad[p]).abs() / numeric.abs().max(grad[p].abs()).max(1e-6);
            prop_assert!(err < 1e-4, "param {p}: analytic {} numeric {numeric}", grad[p]);
        }
    }

    #[test]
    fn loss_is_a_weighted_batch_mean((config, seed) in small_head(), c in 0.1f64..10.0) {
        let head = ClassifierHead::new(config.clone()).unwrap();
        let (xs, ys, ws) = batch(&config, 4, seed);
        let (loss, grad) = loss_grad(&head, &xs, &ys, &ws, seed);

        let scaled: Vec<f64> = ws.iter().map(|w| w * c).collect();
        let (loss_c, grad_c) = loss_grad(&head, &xs, &ys, &scaled, seed);
        prop_assert!((loss_c - c * loss).abs() <= 1e-9 * loss_c.abs().max(1.0));
        for (a, b) in grad.iter().zip(&grad_c) {
            prop_assert!((b - c * a).abs() <= 1e-9 * b.abs().max(1e-6));
        }

        // Without dropout, repeating the batch leaves the mean unchanged.
        let mut plain = config.clone();
        plain.dropout_rate = 0.0;
        let head = ClassifierHead::new(plain).unwrap();
        let once = loss_grad(&head, &xs, &ys, &ws, seed).0;
        let twice = loss_grad(&head, &[xs.clone(), xs.clone()].concat(), &[ys.clone(), ys.clone()].concat(), &[ws.clone(), ws.clone()].concat(), seed).0;
        prop_assert!((once - twice).abs() < 1e-12 * once.abs().max(1.0));
    }
}
