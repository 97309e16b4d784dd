use proptest::prelude::*;
use spgan_core::evaluation::back_translate_oracle;
use spgan_core::generator::{Generator, GeneratorConfig};
use spgan_core::metrics::{bleu, lcs_len, rouge_l};
use spgan_core::pose::{pad_target, ChannelLayout, Channels};
use spgan_core::synth::{synth_corpus, SynthConfig};
use spgan_core::{Graph, Tensor};

fn small_synth() -> impl Strategy<Value = SynthConfig> {
    (2usize..8, 3usize..7, 1usize..3, 0usize..3, 1usize..4, any::<u64>()).prop_map(|(v, m, jm, jf, lo, seed)| {
        SynthConfig {
            vocab_size: v,
            motif_len: m,
            layout: ChannelLayout::new(jm, jf).unwrap(),
            n_examples: 12,
            seed,
            min_tokens: lo,
            max_tokens: lo + 2,
            noise_std: 0.0,
            ..SynthConfig::default()
        }
    })
}

fn words() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 0..9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn synthetic_examples_decode_to_their_sources(cfg in small_synth()) {
        let s = synth_corpus(&cfg).unwrap();
        for ex in &s.corpus.examples {
            prop_assert_eq!(ex.target.len(), ex.source.len() * cfg.motif_len);
            prop_assert!(s.limits.admits(ex));
            prop_assert_eq!(&back_translate_oracle(&ex.target, &s.bank).unwrap(), &ex.source);
        }
    }

    #[test]
    fn channel_selection_keeps_round_trip_when_channel_is_unique(cfg in small_synth()) {
        let s = synth_corpus(&cfg).unwrap();
        let manual = s.corpus.select_channels(Channels::ManualOnly).unwrap();
        let bank = s.bank.select_channels(Channels::ManualOnly).unwrap();
        for ex in &manual.examples {
            prop_assert_eq!(ex.target.layout().pose_dim(), 3 * cfg.layout.manual_joints);
            prop_assert_eq!(&back_translate_oracle(&ex.target, &bank).unwrap(), &ex.source);
        }
    }

    #[test]
    fn padding_keeps_frames_and_zeroes_the_rest(cfg in small_synth(), extra in 0usize..5) {
        let s = synth_corpus(&cfg).unwrap();
        let ex = &s.corpus.examples[0];
        let u_max = ex.target.len() + extra;
        let y = pad_target(&ex.target, u_max).unwrap();
        prop_assert_eq!(y.rows(), u_max);
        for (r, f) in ex.target.frames().iter().enumerate() {
            prop_assert_eq!(y.row(r), &f.values[..]);
        }
        for r in ex.target.len()..u_max {
            prop_assert!(y.row(r).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn splits_partition_the_corpus(cfg in small_synth(), seed in any::<u64>()) {
        let s = synth_corpus(&cfg).unwrap();
        let sp = s.corpus.split(seed);
        let mut ids: Vec<_> = [&sp.train, &sp.dev, &sp.test]
            .iter()
            .flat_map(|c| c.examples.iter().map(|e| e.id.clone()))
            .collect();
        ids.sort();
        let mut all: Vec<_> = s.corpus.examples.iter().map(|e| e.id.clone()).collect();
        all.sort();
        prop_assert_eq!(ids, all);
    }

    #[test]
    fn bleu_is_bounded_and_needs_shared_words(h in words(), r in words().prop_filter("non-empty", |r| !r.is_empty())) {
        let b = bleu(&h, &[&r], 4).unwrap();
        prop_assert!(b.iter().all(|&x| (0.0..=1.0).contains(&x)));
        if h.iter().all(|w| !r.contains(w)) {
            prop_assert!(b.iter().all(|&x| x == 0.0));
        }
        if r.len() >= 4 {
            prop_assert_eq!(bleu(&r, &[&r], 4).unwrap(), vec![1.0; 4]);
        }
    }

    #[test]
    fn rouge_is_symmetric_and_lcs_bounded(a in words(), b in words()) {
        let l = lcs_len(&a, &b);
        prop_assert!(l <= a.len().min(b.len()));
        prop_assert_eq!(l, lcs_len(&b, &a));
        prop_assert!((rouge_l(&a, &b) - rouge_l(&b, &a)).abs() < 1e-12);
        if !a.is_empty() {
            prop_assert_eq!(rouge_l(&a, &a), 1.0);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(data in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(3, 4, data).unwrap());
        let s = g.softmax(x, 1).unwrap();
        let t = g.value(s);
        for r in 0..3 {
            prop_assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(t.row(r).iter().all(|&p| p >= 0.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generation_respects_budget_and_counter_order(seed in any::<u64>(), tokens in prop::collection::vec(1usize..6, 1..4), budget in 1usize..20) {
        let mut gc = GeneratorConfig::desk(6, ChannelLayout::new(1, 1).unwrap());
        gc.layers = 1;
        gc.embed_dim = 8;
        gc.ff_dim = 16;
        let gen = Generator::new(gc, seed).unwrap();
        let out = gen.generate(&spgan_core::pose::TokenSequence(tokens), budget).unwrap();
        prop_assert!(out.sequence.len() <= budget);
        prop_assert_eq!(out.raw_counters.len(), out.sequence.len());
        let c = out.sequence.counters();
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        let stop = gen.config().stop_threshold;
        let stopped_at = out.raw_counters.iter().position(|&r| r >= stop);
        prop_assert_eq!(out.truncated, stopped_at.is_none());
        if let Some(i) = stopped_at {
            prop_assert_eq!(i + 1, out.sequence.len());
        } else {
            prop_assert_eq!(out.sequence.len(), budget);
        }
    }
}
