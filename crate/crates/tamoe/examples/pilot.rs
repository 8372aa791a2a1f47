// Scratch: pilot the synthetic zero-shot experiment (one seed, 3 families).
use tamoe::harness::{gen_synthetic, ExperimentConfig, SyntheticSpec};
use tamoe::harness::experiment::run_experiment;

fn main() {
    let tmp = std::env::temp_dir().join("tamoe_pilot");
    let _ = std::fs::remove_dir_all(&tmp);
    let data_dir = tmp.join("data");
    std::fs::create_dir_all(&data_dir).unwrap();
    let spec = SyntheticSpec { seed: 0, samples_per_topic: 24, ..Default::default() };
    gen_synthetic(&spec, &data_dir).unwrap();
    println!("dataset generated");

    for family in ["base", "topic", "tamoe"] {
        let t0 = std::time::Instant::now();
        let config = ExperimentConfig {
            dataset_dir: data_dir.clone(),
            out_dir: tmp.join(format!("run_{family}")),
            model_family: family.into(),
            embedding_mode: "pretrained-frozen".into(),
            seed: 0,
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
        let seen = report.seen.as_ref().map(|s| s.metrics.cider).unwrap_or(f64::NAN);
        let unseen = report.unseen.as_ref().map(|s| s.metrics.cider).unwrap_or(f64::NAN);
        println!(
            "{family:6} seen {seen:7.2}  unseen {unseen:7.2}  best-val {:7.2} @ {:?}  ({:.0?})",
            report.best_val_cider, report.best_epoch, t0.elapsed()
        );
    }
}
