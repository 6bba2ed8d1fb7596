use liquid::metrics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All-pairs definition: (tp, fp, fn, gt_total).
fn brute_force(pred: &[u8], gt: &[u8], w: usize, h: usize, slack: usize) -> (u64, u64, u64, u64) {
    let cheb = |a: usize, b: usize| {
        let (ax, ay, bx, by) = ((a % w) as i64, (a / w) as i64, (b % w) as i64, (b / w) as i64);
        (ax - bx).abs().max((ay - by).abs()) as usize
    };
    let on = |m: &[u8]| (0..w * h).filter(|&i| m[i] != 0).collect::<Vec<_>>();
    let (p, g) = (on(pred), on(gt));
    let tp = p.iter().filter(|&&i| g.iter().any(|&j| cheb(i, j) <= slack)).count() as u64;
    let missed = g.iter().filter(|&&j| !p.iter().any(|&i| cheb(i, j) <= slack)).count() as u64;
    (tp, p.len() as u64 - tp, missed, g.len() as u64)
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<u8> {
    (0..n).map(|_| rng.random_bool(density) as u8).collect()
}

fn mask_with(w: usize, h: usize, on: &[(usize, usize)]) -> Vec<u8> {
    let mut m = vec![0u8; w * h];
    for &(x, y) in on {
        m[y * w + x] = 1;
    }
    m
}

#[test]
fn slack_counts_match_brute_force_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..200 {
        let (dp, dg) = (rng.random_range(0.0..0.3), rng.random_range(0.0..0.3));
        let pred = random_mask(&mut rng, 32 * 32, dp);
        let gt = random_mask(&mut rng, 32 * 32, dg);
        let mut prev: Option<SlackCounts> = None;
        for slack in DEFAULT_SLACKS {
            let c = slack_counts(&pred, &gt, 32, 32, slack).unwrap();
            let (tp, fp, fn_, total) = brute_force(&pred, &gt, 32, 32, slack);
            assert_eq!((c.counts.tp, c.counts.fp, c.counts.fn_, c.gt_total), (tp, fp, fn_, total), "trial {trial}, slack {slack}");
            if let Some(p) = prev {
                assert!(c.precision() >= p.precision() && c.recall() >= p.recall());
            }
            prev = Some(c);
        }
    }
}

#[test]
fn zero_slack_is_the_plain_confusion_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pred = random_mask(&mut rng, 20 * 15, 0.4);
    let gt = random_mask(&mut rng, 20 * 15, 0.4);
    let c = slack_counts(&pred, &gt, 20, 15, 0).unwrap();
    let both = pred.iter().zip(&gt).filter(|(&p, &g)| p == 1 && g == 1).count() as u64;
    assert_eq!(c.counts.tp, both);
    assert_eq!(c.counts.fp, pred.iter().filter(|&&p| p == 1).count() as u64 - both);
    assert_eq!(c.counts.fn_, gt.iter().filter(|&&g| g == 1).count() as u64 - both);
}

#[test]
fn identical_masks_are_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_mask(&mut rng, 16 * 16, 0.2);
    for slack in DEFAULT_SLACKS {
        let c = slack_counts(&m, &m, 16, 16, slack).unwrap();
        assert_eq!((c.counts.fp, c.counts.fn_), (0, 0));
        assert_eq!((c.precision(), c.recall()), (1.0, 1.0));
    }
}

#[test]
fn two_pixel_offset_needs_slack_two() {
    let gt = mask_with(12, 12, &[(5, 5)]);
    let pred = mask_with(12, 12, &[(5, 7)]);
    let c0 = slack_counts(&pred, &gt, 12, 12, 0).unwrap();
    assert_eq!((c0.precision(), c0.recall()), (0.0, 0.0));
    let c1 = slack_counts(&pred, &gt, 12, 12, 1).unwrap();
    assert_eq!((c1.precision(), c1.recall()), (0.0, 0.0));
    let c2 = slack_counts(&pred, &gt, 12, 12, 2).unwrap();
    assert_eq!((c2.precision(), c2.recall()), (1.0, 1.0));
}

#[test]
fn shape_mismatch_is_an_error() {
    assert!(matches!(slack_counts(&[0; 10], &[0; 12], 3, 4, 1), Err(MetricsError::Shape(_))));
}

fn random_maps(seed: u64, frames: usize, w: usize, h: usize) -> (Vec<ProbMap>, Vec<Vec<u8>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = (0..frames).map(|_| ProbMap { width: w, height: h, data: (0..w * h).map(|_| rng.random_range(0.0..=1.0)).collect() }).collect();
    let gts = (0..frames).map(|_| random_mask(&mut rng, w * h, 0.15)).collect();
    (probs, gts)
}

#[test]
fn extreme_thresholds() {
    let (probs, gts) = random_maps(4, 3, 16, 12);
    let pts = pr_curve(&probs, &gts, &DEFAULT_SLACKS, &[0.0, 1.5]).unwrap();
    assert_eq!(pts.len(), 10);
    for p in pts {
        if p.threshold == 0.0 {
            assert_eq!(p.recall, 1.0);
        } else {
            assert_eq!((p.precision, p.recall, p.tp, p.fp), (1.0, 0.0, 0, 0));
        }
    }
}

#[test]
fn curve_points_equal_summed_frame_counts() {
    let (probs, gts) = random_maps(5, 4, 20, 10);
    let thresholds = default_thresholds();
    let pts = pr_curve(&probs, &gts, &[0, 4], &thresholds).unwrap();
    assert_eq!(pts.len(), 2 * thresholds.len());
    for p in &pts {
        let mut total = (0, 0, 0, 0);
        for (m, g) in probs.iter().rev().zip(gts.iter().rev()) {
            let c = brute_force(&m.binarize(p.threshold), g, 20, 10, p.slack);
            total = (total.0 + c.0, total.1 + c.1, total.2 + c.2, total.3 + c.3);
        }
        assert_eq!((p.tp, p.fp, p.fn_), (total.0, total.1, total.2));
        assert_eq!(p.recall, (total.3 - total.2) as f64 / total.3 as f64);
    }
    assert!(pts[..thresholds.len()].windows(2).all(|w| w[0].threshold < w[1].threshold && w[0].slack == 0));
}

#[test]
fn curve_rejects_bad_inputs() {
    let (probs, gts) = random_maps(6, 2, 8, 8);
    assert!(matches!(pr_curve(&[], &[], &[0], &[0.5]), Err(MetricsError::Empty(_))));
    assert!(matches!(pr_curve(&probs, &gts[..1], &[0], &[0.5]), Err(MetricsError::Shape(_))));
    let mut bad = probs.clone();
    bad[1].data[3] = 1.2;
    assert!(matches!(pr_curve(&bad, &gts, &[0], &[0.5]), Err(MetricsError::Probability { index: 3, .. })));
}

proptest! {
    #[test]
    fn slack_never_hurts(seed in any::<u64>(), t in 0.0f64..1.0) {
        let (probs, gts) = random_maps(seed, 2, 12, 9);
        let pts = pr_curve(&probs, &gts, &DEFAULT_SLACKS, &[t]).unwrap();
        for w in pts.windows(2) {
            prop_assert!(w[1].precision >= w[0].precision);
            prop_assert!(w[1].recall >= w[0].recall);
        }
    }
}

#[test]
fn csv_has_one_row_per_point() {
    let (probs, gts) = random_maps(7, 2, 8, 8);
    let pts = pr_curve(&probs, &gts, &DEFAULT_SLACKS, &default_thresholds()).unwrap();
    let mut buf = Vec::new();
    write_pr_csv(&pts, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "slack,threshold,tp,fp,fn,precision,recall");
    assert_eq!(lines.len(), 1 + 5 * 19);
    assert!(lines[1].starts_with("0,0.05,"));
}

#[test]
fn heatmap_quantization() {
    assert_eq!(heatmap_byte(0.5), 128);
    assert_eq!(heatmap_byte(0.0), 0);
    assert_eq!(heatmap_byte(1.0), 255);
    let dir = tempfile::tempdir().unwrap();
    let half = ProbMap { width: 5, height: 4, data: vec![0.5; 20] };
    let path = dir.path().join("half.pgm");
    export_heatmap(&half, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.ends_with(&[128; 20]));

    let (probs, _) = random_maps(8, 1, 17, 11);
    let path = dir.path().join("rand.pgm");
    export_heatmap(&probs[0], &path).unwrap();
    let back = read_heatmap(&path).unwrap();
    assert_eq!((back.width, back.height), (17, 11));
    let worst = back.data.iter().zip(&probs[0].data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1.0 / 510.0 + 1e-15, "{worst}");
}
