// Scratch: 5-seed x 3-family synthetic zero-shot matrix.
use tamoe::harness::experiment::run_experiment;
use tamoe::harness::{gen_synthetic, ExperimentConfig, SyntheticSpec};

fn main() {
    let t0 = std::time::Instant::now();
    let tmp = std::env::temp_dir().join("tamoe_pilot5");
    let _ = std::fs::remove_dir_all(&tmp);
    let mut means = std::collections::BTreeMap::new();
    for seed in 0..5u64 {
        let data_dir = tmp.join(format!("data{seed}"));
        std::fs::create_dir_all(&data_dir).unwrap();
        let spec = SyntheticSpec { seed, samples_per_topic: 24, ..Default::default() };
        gen_synthetic(&spec, &data_dir).unwrap();
        for family in ["base", "topic", "tamoe"] {
            let config = ExperimentConfig {
                dataset_dir: data_dir.clone(),
                out_dir: tmp.join(format!("run_{family}_{seed}")),
                model_family: family.into(),
                embedding_mode: "pretrained-frozen".into(),
                seed,
                feature_dim: 16,
                encoder_hidden: 32,
                decoder_hidden: 96,
                embedding_dim: 32,
                attention_dim: 32,
                expert_count: 8,
                expert_dim: 48,
                gate_hidden: 32,
                dropout: 0.3,
                batch_size: 16,
                max_epochs: 45,
                ..Default::default()
            };
            let report = run_experiment(&config).unwrap();
            let unseen = report.unseen.as_ref().unwrap().metrics.cider;
            println!("seed {seed} {family:6} unseen {unseen:6.2}  seen {:6.2}", report.seen.as_ref().unwrap().metrics.cider);
            means.entry(family).or_insert(Vec::new()).push(unseen);
        }
    }
    println!("--- means over 5 seeds ---");
    for (family, xs) in &means {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt();
        println!("{family:6} mean {m:.3} +- {sd:.3}  {xs:?}");
    }
    println!("total {:.0?}", t0.elapsed());
}
