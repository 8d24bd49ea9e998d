mod common;

use pa_core::aggregation::aggregate_neighborhood;
use pa_core::coreset::{coreset_sample, greedy_farthest_points};
use pa_core::decision::{
    adaptive_subtract, adaptive_tau, fuse_scales, psi_score, render_pixel_map, Provenance, PsiMode,
};
use pa_core::linalg::squared_distance;
use pa_core::metrics::{
    auroc, average_precision, pro_score, LabeledScores, Level, RegionGroundTruth,
};
use pa_core::{BankKind, FeatureGrid, Mask, PixelMap, ScoringParams};
use proptest::prelude::*;

use common::{bank, map};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_stays_within_channel_range(
        rows in 1usize..7, cols in 1usize..7, ch in 1usize..4,
        r in prop::sample::select(vec![1usize, 3, 5]),
        seed in any::<u64>(),
    ) {
        prop_assume!(r <= rows.min(cols));
        let data: Vec<f32> = (0..rows * cols * ch)
            .map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 40) as f32 / 1e4) - 800.0)
            .collect();
        let grid = FeatureGrid::new(rows, cols, ch, data).unwrap();
        let out = aggregate_neighborhood(&grid, r).unwrap();
        prop_assert_eq!(out.shape(), grid.shape());
        for c in 0..ch {
            let vals: Vec<f32> = grid.patches().map(|p| p[c]).collect();
            let lo = vals.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = vals.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let slack = 1e-5 * lo.abs().max(hi.abs()).max(1.0);
            for p in out.patches() {
                prop_assert!(p[c] >= lo - slack && p[c] <= hi + slack);
            }
        }
    }

    #[test]
    fn greedy_choice_is_farthest_at_every_step(
        n in 2usize..80, dim in 1usize..6, frac in 0.05f64..1.0, seed in any::<u64>(),
    ) {
        let pts: Vec<f32> = (0..n * dim)
            .map(|i| ((seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_mul(0xBF58_476D_1CE4_E5B9) >> 40) as f32 / 1e6)
            .collect();
        let target = ((frac * n as f64).ceil() as usize).clamp(1, n);
        let picked = greedy_farthest_points(&pts, dim, target);
        prop_assert_eq!(picked.len(), target);
        let row = |i: usize| &pts[i * dim..(i + 1) * dim];
        for k in 1..picked.len() {
            let min_to = |i: usize| picked[..k].iter().map(|&s| squared_distance(row(i), row(s))).fold(f32::INFINITY, f32::min);
            let best = (0..n).map(min_to).fold(f32::NEG_INFINITY, f32::max);
            prop_assert_eq!(min_to(picked[k]), best);
        }
    }

    #[test]
    fn coreset_size_law(n in 1usize..150, ratio in 0.01f64..=1.0) {
        let pts: Vec<f32> = (0..n * 3).map(|i| (i as f32 * 0.37).sin()).collect();
        let idx = coreset_sample(&pts, 3, ratio, 1, None).unwrap();
        prop_assert_eq!(idx.len(), ((ratio * n as f64).ceil() as usize).clamp(1, n));
    }

    #[test]
    fn psi_never_increases_as_the_bank_grows(
        dim in 2usize..6,
        n in 3usize..20,
        extra in 1usize..10,
        k in 1usize..=3,
        per_image in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let vals = |count: usize, salt: u64| -> Vec<f32> {
            (0..count).map(|i| {
                let z = (seed ^ salt).wrapping_add(i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                ((z >> 40) as f32 / (1u64 << 24) as f32) - 0.5 + if i % dim == 0 { 0.01 } else { 0.0 }
            }).collect()
        };
        let rows = vals(n * dim, 1);
        let sources: Vec<u32> = (0..n as u32).map(|i| i % 3).collect();
        let b = bank(BankKind::Normal, dim, &rows, &sources);
        let grown = b.with_extra_entries(&vals(extra * dim, 2), "src_new").unwrap();
        let query = vals(dim, 3);
        let params = ScoringParams {
            k_target: Some(k),
            psi_mode: if per_image { PsiMode::PerImage } else { PsiMode::PerEntry },
            ..ScoringParams::default()
        };
        let before = psi_score(&query, &b, &params, None).unwrap();
        let after = psi_score(&query, &grown, &params, None).unwrap();
        prop_assert!(after <= before, "{after} > {before}");
        prop_assert!((0.0..=2.0).contains(&after));
    }

    #[test]
    fn subtraction_bounds(
        sc in prop::collection::vec(0.0f64..2.0, 16),
        sb in prop::collection::vec(0.0f64..2.0, 16),
        alpha in 0.0f64..=1.0,
        p in 0.5f64..99.5,
    ) {
        let full = map("a", 4, 4, sc.clone(), Provenance::Full);
        let bg = map("a", 4, 4, sb, Provenance::Background);
        let params = ScoringParams { alpha, tau_percentile: p, ..ScoringParams::default() };
        let tau = adaptive_tau(&bg, p);
        let out = adaptive_subtract(&full, &bg, &params).unwrap();
        for (c, f) in sc.iter().zip(&out.grid.values) {
            let drop = c - f;
            prop_assert!(drop >= 0.0 && drop <= alpha * tau + 1e-12);
        }
        let zero = adaptive_subtract(&full, &bg, &ScoringParams { alpha: 0.0, ..params }).unwrap();
        prop_assert_eq!(zero.grid.values, sc);
    }

    #[test]
    fn fusion_is_a_convex_combination(
        maps in prop::collection::vec(prop::collection::vec(0.0f64..2.0, 6), 1..4),
        raw_w in prop::collection::vec(0.01f64..1.0, 3),
    ) {
        let w: Vec<f64> = raw_w[..maps.len()].to_vec();
        let total: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|x| x / total).collect();
        let ms: Vec<_> = maps.iter().map(|v| map("a", 2, 3, v.clone(), Provenance::Final)).collect();
        let fused = fuse_scales(&ms, &w).unwrap();
        for (i, f) in fused.grid.values.iter().enumerate() {
            let lo = maps.iter().map(|m| m[i]).fold(f64::INFINITY, f64::min);
            let hi = maps.iter().map(|m| m[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*f >= lo - 1e-12 && *f <= hi + 1e-12);
        }
    }

    #[test]
    fn pixel_maps_stay_within_patch_range(
        rows in 1usize..5, cols in 1usize..5,
        values in prop::collection::vec(0.0f64..2.0, 16),
        up_r in 1usize..5, up_c in 1usize..5,
        sigma in 0.0f64..5.0,
    ) {
        let m = map("a", rows, cols, values[..rows * cols].to_vec(), Provenance::Fused);
        let px = render_pixel_map(&m, rows * up_r + up_r / 2, cols * up_c, sigma).unwrap();
        let (lo, hi) = (m.grid.min(), m.grid.max());
        let slack = 1e-6 * hi.max(1e-30);
        for &v in &px.values {
            let v = f64::from(v);
            prop_assert!(v >= lo - slack && v <= hi + slack, "{v} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn auroc_ignores_monotone_transforms(
        raw in prop::collection::vec((0u32..40, any::<bool>()), 2..120),
    ) {
        prop_assume!(raw.iter().any(|r| r.1) && raw.iter().any(|r| !r.1));
        let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
        let s = |f: &dyn Fn(f64) -> f64| {
            LabeledScores::new(raw.iter().map(|r| f(f64::from(r.0))).collect(), labels.clone(), Level::Image).unwrap()
        };
        let base = auroc(&s(&|x| x)).unwrap();
        prop_assert_eq!(base, auroc(&s(&|x| x * x * x + 2.0 * x)).unwrap());
        prop_assert_eq!(base, auroc(&s(&|x| (x / 7.0).exp())).unwrap());
    }

    #[test]
    fn auroc_of_negated_scores_without_ties(
        perm in Just((0..60u32).collect::<Vec<_>>()).prop_shuffle(),
        labels in prop::collection::vec(any::<bool>(), 60),
    ) {
        prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
        let pos = LabeledScores::new(perm.iter().map(|&v| f64::from(v)).collect(), labels.clone(), Level::Image).unwrap();
        let neg = LabeledScores::new(perm.iter().map(|&v| -f64::from(v)).collect(), labels, Level::Image).unwrap();
        let sum = auroc(&pos).unwrap() + auroc(&neg).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ap_is_bounded_by_the_worst_ranking(
        raw in prop::collection::vec((0u32..30, any::<bool>()), 1..150),
    ) {
        prop_assume!(raw.iter().any(|r| r.1));
        let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
        let n = labels.len();
        let p = labels.iter().filter(|l| **l).count();
        // every positive ranked below every negative
        let worst = (1..=p).map(|i| i as f64 / (n - p + i) as f64).sum::<f64>() / p as f64;
        let s = LabeledScores::new(raw.iter().map(|r| f64::from(r.0)).collect(), labels.clone(), Level::Image).unwrap();
        let ap = average_precision(&s).unwrap();
        prop_assert!(ap >= worst - 1e-12 && ap <= 1.0 + 1e-12);
        let prevalence = p as f64 / n as f64;
        let flat = LabeledScores::new(vec![0.5; n], labels, Level::Image).unwrap();
        prop_assert!((average_precision(&flat).unwrap() - prevalence).abs() < 1e-12);
    }

    #[test]
    fn pro_does_not_drop_when_defect_pixels_are_found(
        scores in prop::collection::vec(0u8..20, 64),
        gt in prop::collection::vec(prop::bool::weighted(0.3), 64),
        found in prop::collection::vec(any::<bool>(), 64),
    ) {
        prop_assume!(gt.iter().any(|g| *g) && gt.iter().any(|g| !*g));
        let mask = Mask { height: 8, width: 8, data: gt.iter().map(|&g| u8::from(g) * 255).collect() };
        let regions = RegionGroundTruth::from_masks(&[Some(mask)], &[(8, 8)]).unwrap();
        let before = PixelMap { height: 8, width: 8, values: scores.iter().map(|&s| f32::from(s)).collect() };
        let mut after = before.clone();
        for ((v, &g), &f) in after.values.iter_mut().zip(&gt).zip(&found) {
            if g && f {
                *v = 100.0;
            }
        }
        let a = pro_score(&[before], &regions, 0.3).unwrap();
        let b = pro_score(&[after], &regions, 0.3).unwrap();
        prop_assert!(b >= a - 1e-12, "{b} < {a}");
    }
}

#[test]
fn projected_coreset_is_deterministic_per_seed() {
    let pts: Vec<f32> = (0..400 * 16)
        .map(|i| ((i * 7919) % 1013) as f32 / 1013.0 - 0.5)
        .collect();
    let a = coreset_sample(&pts, 16, 0.1, 42, Some(4)).unwrap();
    let b = coreset_sample(&pts, 16, 0.1, 42, Some(4)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 40);
}

#[test]
fn ap_falls_below_prevalence_when_positives_rank_last() {
    let scores: Vec<f64> = (0..10).map(f64::from).collect();
    let labels: Vec<bool> = (0..10).map(|i| i < 5).collect();
    let ap = average_precision(&LabeledScores::new(scores, labels, Level::Image).unwrap()).unwrap();
    let want = (1.0 / 6.0 + 2.0 / 7.0 + 3.0 / 8.0 + 4.0 / 9.0 + 5.0 / 10.0) / 5.0;
    assert!((ap - want).abs() < 1e-15);
    assert!(ap < 0.5);
}
