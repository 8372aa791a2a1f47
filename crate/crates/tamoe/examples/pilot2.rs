// Scratch: long-horizon transfer curve for one tamoe seed.
use tamoe::harness::experiment::run_experiment;
use tamoe::harness::{gen_synthetic, ExperimentConfig, SyntheticSpec};

fn main() {
    let tmp = std::env::temp_dir().join("tamoe_pilot2");
    let _ = std::fs::remove_dir_all(&tmp);
    let data_dir = tmp.join("data");
    std::fs::create_dir_all(&data_dir).unwrap();
    let spec = SyntheticSpec { seed: 0, samples_per_topic: 24, ..Default::default() };
    gen_synthetic(&spec, &data_dir).unwrap();

    let t0 = std::time::Instant::now();
    let config = ExperimentConfig {
        dataset_dir: data_dir.clone(),
        out_dir: tmp.join("run_tamoe_long"),
        model_family: "tamoe".into(),
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
        max_epochs: 100,
        ..Default::default()
    };
    let report = run_experiment(&config).unwrap();
    println!("elapsed {:.0?}", t0.elapsed());
    println!(
        "unseen {:.2}  seen {:.2}  best-val {:.2} @ {:?}",
        report.unseen.as_ref().unwrap().metrics.cider,
        report.seen.as_ref().unwrap().metrics.cider,
        report.best_val_cider,
        report.best_epoch
    );
    // print the val curve
    let log = std::fs::read_to_string(tmp.join("run_tamoe_long/train.log")).unwrap();
    for (i, line) in log.lines().enumerate() {
        if i % 5 == 0 {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            println!(
                "epoch {:3}  train {:.3}  val_cider {:.2}  lr {}",
                v["epoch"], v["train_loss"].as_f64().unwrap(), v["val_cider"].as_f64().unwrap(), v["lr_mult"]
            );
        }
    }
}
