macro_rules! example {
    ($module:ident, $file:literal, $test:ident) => {
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $test() {
            $module::run_example().expect(concat!($file, " should run"));
        }
    };
}

example!(autodiff_gradcheck, "autodiff_gradcheck.rs", autodiff_gradcheck_runs);
example!(pretrain_perplexity, "pretrain_perplexity.rs", pretrain_perplexity_runs);
example!(prompt_tuning, "prompt_tuning.rs", prompt_tuning_runs);
example!(prefix_cache, "prefix_cache.rs", prefix_cache_runs);
example!(adaptation_baselines, "adaptation_baselines.rs", adaptation_baselines_runs);
example!(nbest_rescoring, "nbest_rescoring.rs", nbest_rescoring_runs);
example!(wer_alignment, "wer_alignment.rs", wer_alignment_runs);
example!(text_generation, "text_generation.rs", text_generation_runs);
example!(synthetic_experiment, "synthetic_experiment.rs", synthetic_experiment_runs);
