use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use functok::corpus::{read_corpus, scan_snippet};
use functok::objectives::{group_advantages, kl_estimate};
use functok::policy::{contexts_for, softmax, PolicyParameters};
use functok::reward::{length_penalty, spam_penalty, RewardConfig};
use functok::trajectory::{cross_entropy_loss, CeMask};
use functok::{FunctionalKind, TokenClass, TokenId, Vocabulary};

const CODE_TABLE: &str = include_str!("fixtures/code_table.jsonl");

fn vocab_with(n_text: usize, n_special: usize) -> Vocabulary {
    let text: Vec<String> = (0..n_text).map(|i| format!("t{i}")).collect();
    let special: Vec<String> = (0..n_special).map(|i| format!("<s{i}>")).collect();
    Vocabulary::build(&text, &special).unwrap()
}

fn policy(n: usize, logits: Vec<f64>) -> PolicyParameters {
    PolicyParameters::from_logits(n, TokenId(0), logits).unwrap()
}

proptest! {
    #[test]
    fn partition_is_exact(n_text in 1usize..40, n_special in 0usize..6) {
        let v = vocab_with(n_text, n_special);
        prop_assert_eq!(v.len(), n_text + n_special + 5);
        let mut counts = [0usize; 3];
        for i in 0..v.len() {
            let class = v.classify(TokenId(i)).unwrap();
            counts[class as usize] += 1;
            let expected = if i < n_text {
                TokenClass::Text
            } else if i < n_text + n_special {
                TokenClass::Special
            } else {
                TokenClass::Functional
            };
            prop_assert_eq!(class, expected);
        }
        prop_assert_eq!(counts, [n_text, n_special, 5]);
        prop_assert!(v.classify(TokenId(v.len())).is_err());
    }

    #[test]
    fn positions_concatenate(a in prop::collection::vec(0usize..13, 0..30), b in prop::collection::vec(0usize..13, 0..30)) {
        let v = vocab_with(6, 2);
        let a: Vec<TokenId> = a.into_iter().map(TokenId).collect();
        let b: Vec<TokenId> = b.into_iter().map(TokenId).collect();
        let joined: Vec<TokenId> = a.iter().chain(&b).copied().collect();
        let mut want = v.functional_positions(&a).unwrap();
        want.extend(v.functional_positions(&b).unwrap().into_iter().map(|p| p + a.len()));
        prop_assert_eq!(v.functional_positions(&joined).unwrap(), want);
    }

    #[test]
    fn surface_round_trip(ids in prop::collection::vec(0usize..13, 0..40)) {
        let v = vocab_with(6, 2);
        let ids: Vec<TokenId> = ids.into_iter().map(TokenId).collect();
        let text = v.decode(&ids).unwrap();
        prop_assert_eq!(v.encode(&text).unwrap(), ids);
    }

    #[test]
    fn scanner_is_deterministic_and_ordered(
        picks in prop::collection::vec(0usize..23, 1..6),
        filler in "[ a-z0-9=#\n]{0,20}",
    ) {
        let records = read_corpus(CODE_TABLE).unwrap();
        let parts: Vec<&str> = picks.iter().map(|&i| records[i].code.as_str()).collect();
        let joined = parts.join(&format!("\n{filler}\n"));
        let once = scan_snippet(&joined);
        prop_assert_eq!(&once, &scan_snippet(&joined));
        let kinds: Vec<FunctionalKind> = once.iter().map(|o| o.mapped_kind).collect();
        let want: Vec<FunctionalKind> = parts.iter().flat_map(|p| scan_snippet(p)).map(|o| o.mapped_kind).collect();
        prop_assert_eq!(kinds, want);
        prop_assert!(once.windows(2).all(|w| w[0].source_span.1 <= w[1].source_span.0));
    }

    #[test]
    fn scanner_never_panics(code in "\\PC{0,200}") {
        let ops = scan_snippet(&code);
        for o in ops {
            prop_assert!(o.source_span.0 < o.source_span.1 && o.source_span.1 <= code.len());
        }
    }

    #[test]
    fn ce_decreases_when_a_masked_logprob_rises(
        lps in prop::collection::vec(-8.0f64..-0.01, 1..20),
        flags in prop::collection::vec(any::<bool>(), 20),
        pick in any::<prop::sample::Index>(),
        bump in 0.001f64..0.5,
    ) {
        let flags = &flags[..lps.len()];
        let i = pick.index(lps.len());
        let mut raised = lps.clone();
        raised[i] = (raised[i] + bump).min(0.0);
        let before = cross_entropy_loss(&lps, flags, CeMask::AllTokens).unwrap();
        let after = cross_entropy_loss(&raised, flags, CeMask::AllTokens).unwrap();
        prop_assert!(after < before);
        if flags[i] {
            let before = cross_entropy_loss(&lps, flags, CeMask::FunctionalOnly).unwrap();
            let after = cross_entropy_loss(&raised, flags, CeMask::FunctionalOnly).unwrap();
            prop_assert!(after < before);
        }
    }

    #[test]
    fn logprob_gradient_matches_finite_differences(
        logits in prop::collection::vec(-2.0f64..2.0, 36),
        gen in prop::collection::vec(0usize..6, 1..8),
        weights in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let n = 6;
        let p = policy(n, logits);
        let gen: Vec<TokenId> = gen.into_iter().map(TokenId).collect();
        let w = &weights[..gen.len()];
        let ctx = contexts_for(TokenId(0), &[], &gen);
        let f = |p: &PolicyParameters| -> f64 {
            p.step_logprobs(&ctx, &gen).unwrap().iter().zip(w).map(|(l, w)| l * w).sum()
        };
        let grad = p.logprob_gradient(&[], &gen, w).unwrap();
        let h = 1e-5;
        for k in 0..n * n {
            let mut up = p.clone();
            up.logits_mut()[k] += h;
            let mut down = p.clone();
            down.logits_mut()[k] -= h;
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            let a = grad.as_slice()[k];
            prop_assert!((a - fd).abs() <= 1e-6 * a.abs().max(1.0), "entry {k}: {a} vs {fd}");
        }
    }

    #[test]
    fn advantages_are_affine_invariant(
        rewards in prop::collection::vec(-3.0f64..3.0, 2..16),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        prop_assume!(rewards.iter().any(|r| (r - mean).abs() > 1e-3));
        let a = group_advantages(&rewards, 1e-8).unwrap();
        let moved: Vec<f64> = rewards.iter().map(|r| scale * r + shift).collect();
        let b = group_advantages(&moved, 1e-8).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
        prop_assert!(a.iter().sum::<f64>().abs() <= 1e-9 * a.len() as f64);
    }

    #[test]
    fn kl_estimate_is_non_negative(pairs in prop::collection::vec((-10.0f64..0.0, -10.0f64..0.0), 1..20)) {
        let (cur, refr): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let kl = kl_estimate(&cur, &refr).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert_eq!(kl_estimate(&cur, &cur).unwrap(), 0.0);
    }

    #[test]
    fn penalties_are_monotone_and_capped(len in 0usize..2000, n_func in 0usize..100) {
        let cfg = RewardConfig::default();
        let (a, b) = (length_penalty(len, &cfg), length_penalty(len + 1, &cfg));
        prop_assert!(a <= b && b <= cfg.len_penalty_cap);
        let (a, b) = (spam_penalty(n_func, &cfg), spam_penalty(n_func + 1, &cfg));
        prop_assert!(a <= b && b <= cfg.spam_penalty_cap);
    }

    #[test]
    fn checkpoint_round_trip(logits in prop::collection::vec(-1e6f64..1e6, 25), bos in 0usize..5) {
        let p = PolicyParameters::from_logits(5, TokenId(bos), logits).unwrap();
        let q = PolicyParameters::from_checkpoint(&p.to_checkpoint()).unwrap();
        prop_assert_eq!(p, q);
    }

    #[test]
    fn tsv_round_trip(n_text in 1usize..20, n_special in 0usize..4) {
        let v = vocab_with(n_text, n_special);
        prop_assert_eq!(Vocabulary::from_tsv(&v.to_tsv()).unwrap(), v);
    }
}

/// Empirical next-token frequencies stay within 3 sigma of the softmax.
#[test]
fn sampling_matches_distribution() {
    const DRAWS: usize = 100_000;
    let n = 7;
    let logits: Vec<f64> = (0..n * n).map(|k| ((k * 37 % 11) as f64 - 5.0) / 3.0).collect();
    let p = policy(n, logits);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for prev in [0, 3, 6] {
        let probs = softmax(p.row(TokenId(prev)).unwrap());
        let mut counts = vec![0usize; n];
        for _ in 0..DRAWS {
            counts[p.sample_next(TokenId(prev), &mut rng).unwrap().index()] += 1;
        }
        for (c, q) in counts.iter().zip(&probs) {
            let mean = DRAWS as f64 * q;
            let sigma = (DRAWS as f64 * q * (1.0 - q)).sqrt();
            assert!((*c as f64 - mean).abs() <= 3.0 * sigma, "prev {prev}: {c} vs {mean:.1} +- {sigma:.1}");
        }
    }
}
