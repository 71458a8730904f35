// Scratch experiment runner (not part of the deliverable).

use deduce_core::config::RunConfig;
use deduce_core::engine::SearchConfig;
use deduce_core::eval::{run_benchmark, BenchmarkSpec, GeneratorConfig};
use deduce_core::pipeline::prepare;

fn main() {
    let data_variants = [
        ("j2 n.08", r#"{"data": {"jitter": 2, "noise_std": 0.08, "samples_per_class": 300}, "train": {"epochs": 60}}"#),
        ("j2 n.10", r#"{"data": {"jitter": 2, "noise_std": 0.10, "samples_per_class": 300}, "train": {"epochs": 60}}"#),
        ("j2 n.12", r#"{"data": {"jitter": 2, "noise_std": 0.12, "samples_per_class": 300}, "train": {"epochs": 60}}"#),
    ];
    let search_variants = [
        ("d.1 p10", SearchConfig::default()),
        (
            "d.1 p5",
            SearchConfig {
                per_pixel_cap: 5,
                ..Default::default()
            },
        ),
        (
            "d.1 p3",
            SearchConfig {
                per_pixel_cap: 3,
                ..Default::default()
            },
        ),
        (
            "d.05 p10",
            SearchConfig {
                step_size: 0.05,
                ..Default::default()
            },
        ),
    ];
    for (dn, cfg_json) in data_variants {
        let cfg = RunConfig::from_json(cfg_json).unwrap();
        let art = prepare(&cfg).unwrap();
        for (sn, search) in &search_variants {
            let generators = vec![
                ("deduce".to_string(), GeneratorConfig::Deduce(*search)),
                ("jsma".to_string(), GeneratorConfig::Jsma(*search)),
            ];
            let run = run_benchmark(
                &BenchmarkSpec::default(),
                &art.model,
                &art.gmm,
                &art.test_set,
                &generators,
            )
            .unwrap();
            let d = &run.metrics[0];
            let j = &run.metrics[1];
            println!(
                "{dn} {sn:>8}: acc={:.3} | deduce L0={:6.2} L1={:5.2} f={:4.1}% | jsma L0={:6.2} L1={:5.2} f={:4.1}% | L0 m{:+5.2}/s{:4.2} L1 m{:+5.2}/s{:4.2} | nll {:+7.1} vs {:+7.1}",
                art.model.test_accuracy,
                d.l0_mean, d.l1_mean, d.failure_pct_mean,
                j.l0_mean, j.l1_mean, j.failure_pct_mean,
                j.l0_mean - d.l0_mean, d.l0_std.max(j.l0_std),
                j.l1_mean - d.l1_mean, d.l1_std.max(j.l1_std),
                d.nll_mean, j.nll_mean,
            );
        }
    }
}
