// Scratch: seed/epsilon scan with per-token-normalized loss.
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tamoe::model::{BatchGraph, DropoutMaskSet, Model, ModelConfig, ModelFamily};
use tamoe::numerics::gradcheck::relative_error;
use tamoe::numerics::tensor::Tensor;
use tamoe::topic::TopicEmbedding;

fn main() {
    let cfg = ModelConfig {
        family: ModelFamily::Tamoe,
        feature_dim: 6, encoder_hidden: 8, decoder_hidden: 16, embedding_dim: 12,
        attention_dim: 8, expert_count: 2, expert_dim: 12, gate_hidden: 8,
        temperature: 1.0, dropout: 0.3, max_features: 200, max_caption_len: 32,
    };
    for seed in 1..=16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::new(cfg.clone(), 20, 1, &mut rng).unwrap();
        let feats = Tensor::rand_uniform(vec![3, 6], -1.0, 1.0, &mut rng);
        let topic = TopicEmbedding { vector: Tensor::rand_uniform(vec![24], -1.0, 1.0, &mut rng), tfidf_zeroed: false };
        let masks = DropoutMaskSet::sample(&cfg, &mut rng);
        let gold = [5u32, 11, 7, 2];
        // per-token mean loss
        let loss_of = |m: &Model| -> f64 {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let mut bg = BatchGraph::new(m);
            let ctx = bg.begin_sequence(&feats, &topic, &masks).unwrap();
            let tf = bg.teacher_forced(&ctx, &gold, 1.0, &mut r).unwrap();
            let mean = bg.token_mean_loss(std::slice::from_ref(&tf)).unwrap();
            bg.value(mean).item()
        };
        let mut bg = BatchGraph::new(&model);
        let ctx = bg.begin_sequence(&feats, &topic, &masks).unwrap();
        let tf = bg.teacher_forced(&ctx, &gold, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mean = bg.token_mean_loss(std::slice::from_ref(&tf)).unwrap();
        let grads = bg.backward_params(mean).unwrap();
        drop(bg);
        print!("seed={seed:2}: ");
        for eps in [1e-3, 2e-3, 3e-3] {
            let mut worst = 0.0f64;
            for (id, g) in &grads {
                if model.params.get(*id).frozen { continue; }
                let n = model.params.value(*id).len();
                for idx in 0..n {
                    let orig = model.params.value(*id).data()[idx];
                    model.params.get_mut(*id).value.data_mut()[idx] = orig + eps;
                    let plus = loss_of(&model);
                    model.params.get_mut(*id).value.data_mut()[idx] = orig - eps;
                    let minus = loss_of(&model);
                    model.params.get_mut(*id).value.data_mut()[idx] = orig;
                    worst = worst.max(relative_error(g.data()[idx], (plus - minus) / (2.0 * eps)));
                }
            }
            print!(" e{eps:.0e}:{worst:.2e}");
        }
        println!();
    }
}
