use proptest::collection::vec;
use proptest::prelude::*;

use prosodiv::acoustic::{acoustic_pair, dtw, fastdtw, AcousticConfig, FeatureSeq};
use prosodiv::dswed::{weighted_edit_distance, EditWeights};
use prosodiv::stats::{borda_scores, fisher_aggregate, pearson, GroupCorrelation};
use prosodiv::synth::{synth_utterance, UtteranceSpec};
use prosodiv::tokenizer::embedding::{decode_ssle, encode_ssle};
use prosodiv::tokenizer::{kmeans_train, EmbeddingMatrix, KMeansConfig, KMeansModel, TokenSequence};

fn tokens(max_len: usize) -> impl Strategy<Value = Vec<u32>> {
    vec(0u32..6, 0..=max_len)
}

fn weights() -> impl Strategy<Value = EditWeights> {
    (0.0f64..3.0, 0.0f64..3.0, 0.0f64..3.0).prop_map(|(s, i, d)| EditWeights { sub: s, ins: i, del: d })
}

fn d(a: &[u32], b: &[u32], w: EditWeights) -> f64 {
    weighted_edit_distance(a, b, w).distance
}

fn gc(rs: &[f64]) -> Vec<GroupCorrelation> {
    rs.iter()
        .enumerate()
        .map(|(i, &r)| GroupCorrelation {
            group_id: format!("g{i}"),
            r,
            n_pairs: 10,
        })
        .collect()
}

proptest! {
    #[test]
    fn dswed_symmetric_with_equal_indel_weights(a in tokens(30), b in tokens(30), sub in 0.0f64..3.0, indel in 0.0f64..3.0) {
        let w = EditWeights { sub, ins: indel, del: indel };
        prop_assert_eq!(d(&a, &b, w).to_bits(), d(&b, &a, w).to_bits());
    }

    #[test]
    fn dswed_swapping_inputs_swaps_insert_and_delete(a in tokens(20), b in tokens(20), w in weights()) {
        let t = EditWeights { sub: w.sub, ins: w.del, del: w.ins };
        prop_assert!((d(&a, &b, w) - d(&b, &a, t)).abs() < 1e-9);
    }

    #[test]
    fn dswed_triangle(a in tokens(30), b in tokens(30), c in tokens(30)) {
        let w = EditWeights::default();
        prop_assert!(d(&a, &c, w) <= d(&a, &b, w) + d(&b, &c, w) + 1e-9);
    }

    #[test]
    fn dswed_bounds(a in tokens(30), b in tokens(30), w in weights()) {
        let (n, m) = (a.len() as f64, b.len() as f64);
        let v = d(&a, &b, w);
        // lower: the length difference must be made up by indels
        let lower = if n > m { (n - m) * w.del } else { (m - n) * w.ins };
        // upper: delete everything and insert everything, or align position-wise
        let common = n.min(m);
        let positional = w.sub * common + if n > m { (n - m) * w.del } else { (m - n) * w.ins };
        prop_assert!(v >= lower - 1e-9);
        prop_assert!(v <= n * w.del + m * w.ins + 1e-9);
        prop_assert!(v <= positional + 1e-9);
    }

    #[test]
    fn dswed_monotone_in_weights(a in tokens(20), b in tokens(20), w in weights(), bump in 0.0f64..1.0, which in 0usize..3) {
        let mut heavier = w;
        match which {
            0 => heavier.sub += bump,
            1 => heavier.ins += bump,
            _ => heavier.del += bump,
        }
        prop_assert!(d(&a, &b, heavier) >= d(&a, &b, w) - 1e-9);
    }

    #[test]
    fn dswed_op_counts_consistent(a in tokens(25), b in tokens(25), w in weights()) {
        let r = weighted_edit_distance(&a, &b, w);
        let o = r.op_counts;
        prop_assert_eq!((o.matches + o.substitutions + o.deletions) as usize, a.len());
        prop_assert_eq!((o.matches + o.substitutions + o.insertions) as usize, b.len());
        let cost = w.sub * o.substitutions as f64 + w.ins * o.insertions as f64 + w.del * o.deletions as f64;
        prop_assert!((cost - r.distance).abs() < 1e-9);
    }

    #[test]
    fn pearson_affine_invariance(
        xy in vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
        scale in 0.01f64..50.0,
        shift in -100.0f64..100.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        if let Ok(r) = pearson(&x, &y) {
            let moved: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
            let r2 = pearson(&moved, &y).unwrap();
            prop_assert!((r - r2).abs() < 1e-9, "{} vs {}", r, r2);
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            prop_assert!((pearson(&neg, &y).unwrap() + r).abs() < 1e-9);
            prop_assert!((pearson(&y, &x).unwrap() - r).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn fisher_ci_brackets_mean(rs in vec(-0.999f64..0.999, 2..30), alpha in 0.001f64..0.5) {
        let a = fisher_aggregate(&gc(&rs), alpha).unwrap();
        prop_assert!(a.ci_low <= a.r_bar && a.r_bar <= a.ci_high);
        prop_assert!((0.0..=1.0).contains(&a.p_value));
        let mut rev = rs.clone();
        rev.reverse();
        prop_assert_eq!(fisher_aggregate(&gc(&rev), alpha).unwrap(), a);
    }

    #[test]
    fn fisher_wider_ci_at_smaller_alpha(rs in vec(-0.99f64..0.99, 3..20)) {
        let narrow = fisher_aggregate(&gc(&rs), 0.1).unwrap();
        let wide = fisher_aggregate(&gc(&rs), 0.01).unwrap();
        prop_assert!(wide.ci_low <= narrow.ci_low && wide.ci_high >= narrow.ci_high);
    }

    #[test]
    fn borda_sums_and_monotone_invariance(values in vec(0u8..5, 1..10)) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64 + 1.0).collect();
        let s = v.len() as f64;
        let scores = borda_scores(&v, true);
        prop_assert_eq!(scores.iter().sum::<f64>(), s * (s + 1.0) / 2.0);
        let moved: Vec<f64> = v.iter().map(|x| x.ln() * 3.0 - 1.0).collect();
        prop_assert_eq!(borda_scores(&moved, true), scores.clone());
        // reversing the preference mirrors the scores
        let lower = borda_scores(&v, false);
        for (a, b) in scores.iter().zip(&lower) {
            prop_assert_eq!(a + b, s + 1.0);
        }
    }

    #[test]
    fn fastdtw_paths_valid_and_not_below_optimum(
        a in vec(-5.0f64..5.0, 1..60),
        b in vec(-5.0f64..5.0, 1..60),
        radius in 0usize..6,
    ) {
        let (sa, sb) = (FeatureSeq::from_scalars(&a).unwrap(), FeatureSeq::from_scalars(&b).unwrap());
        let (path, cost) = fastdtw(&sa, &sb, radius).unwrap();
        prop_assert!(path.validate(a.len(), b.len()).is_ok());
        let (_, exact) = dtw(&sa, &sb).unwrap();
        prop_assert!(cost >= exact - 1e-9);
        prop_assert!(path.len() >= a.len().max(b.len()) && path.len() < a.len() + b.len());
    }

    #[test]
    fn nearest_centroid_is_argmin_with_low_index_ties(
        cents in vec(-3i8..3, 4 * 2),
        frame in vec(-3i8..3, 2),
    ) {
        let centroids: Vec<f32> = cents.iter().map(|&v| v as f32).collect();
        let model = KMeansModel::from_centroids(centroids.clone(), 4, 2, Default::default());
        prop_assume!(model.is_ok(), "duplicate centroids are rejected by design");
        let model = model.unwrap();
        let f: Vec<f32> = frame.iter().map(|&v| v as f32).collect();
        let dist = |c: usize| (0..2).map(|k| (centroids[c * 2 + k] - f[k]).powi(2)).sum::<f32>();
        let best = (0..4).fold(0, |b, c| if dist(c) < dist(b) { c } else { b });
        prop_assert_eq!(model.nearest(&f), best as u32);
    }

    #[test]
    fn ssle_roundtrip(frames in 1usize..20, dim in 1usize..8, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..frames * dim).map(|_| rng.gen_range(-10.0f32..10.0)).collect();
        let m = EmbeddingMatrix::new(data, frames, dim, 50.0).unwrap();
        let back = decode_ssle(&encode_ssle(&m)).unwrap();
        prop_assert_eq!(back.data(), m.data());
        prop_assert_eq!((back.frames(), back.dim()), (frames, dim));
        prop_assert_eq!(back.frame_rate_hz, 50.0);
    }

    #[test]
    fn token_json_roundtrip(toks in vec(0u32..50, 0..100)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g").join("s.json");
        let seq = TokenSequence::new("s", 50, toks);
        seq.write(&path).unwrap();
        prop_assert_eq!(TokenSequence::read(&path).unwrap(), seq);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn kmeans_deterministic_for_seed(seed in any::<u64>(), k in 2usize..6) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..300 * 3).map(|_| rng.gen_range(-4.0f32..4.0)).collect();
        let cfg = KMeansConfig { k, seed, ..Default::default() };
        let a = kmeans_train(&data, 3, &cfg).unwrap();
        let b = kmeans_train(&data, 3, &cfg).unwrap();
        prop_assert_eq!(a.centroids(), b.centroids());
        let h = &a.metadata.inertia_history;
        prop_assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metrics_survive_common_amplitude_scaling(gain in 0.5f32..1.0, s1 in 0u64..1000, s2 in 0u64..1000) {
        let x1 = synth_utterance(&UtteranceSpec { seed: s1, duration_s: 0.8, ..Default::default() });
        let x2 = synth_utterance(&UtteranceSpec { seed: s2, duration_s: 0.9, f0_hz: 120.0, ..Default::default() });
        let cfg = AcousticConfig::default();
        let base = acoustic_pair(&x1, &x2, &cfg).unwrap();
        let scaled = acoustic_pair(&x1.scaled(gain), &x2.scaled(gain), &cfg).unwrap();
        let (f0a, f0b) = (base.logf0_rmse.unwrap(), scaled.logf0_rmse.unwrap());
        let (ma, mb) = (base.mcd.unwrap(), scaled.mcd.unwrap());
        prop_assert!((f0a - f0b).abs() < 1e-6, "log-F0 RMSE {} vs {}", f0a, f0b);
        prop_assert!((ma - mb).abs() <= 0.1, "MCD {} vs {}", ma, mb);
    }

    #[test]
    fn acoustic_pair_is_symmetric(s1 in 0u64..1000, s2 in 0u64..1000, f0 in 90.0f64..220.0) {
        let x1 = synth_utterance(&UtteranceSpec { seed: s1, duration_s: 0.6, ..Default::default() });
        let x2 = synth_utterance(&UtteranceSpec { seed: s2, duration_s: 0.7, f0_hz: f0, ..Default::default() });
        let cfg = AcousticConfig::default();
        let ab = acoustic_pair(&x1, &x2, &cfg).unwrap();
        let ba = acoustic_pair(&x2, &x1, &cfg).unwrap();
        prop_assert_eq!(ab.mcd.unwrap().to_bits(), ba.mcd.unwrap().to_bits());
        prop_assert_eq!(ab.logf0_rmse.unwrap().to_bits(), ba.logf0_rmse.unwrap().to_bits());
    }
}
