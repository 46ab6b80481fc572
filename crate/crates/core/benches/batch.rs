use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use chartformer::compose::{Model, ModelConfig};
use chartformer::data::{wordpiece_tokenize, Vocab};
use chartformer::parallel::Parallelism;
use chartformer::synth::ToyGrammar;
use chartformer::train::batch_gradients;

fn batch_gradient(c: &mut Criterion) {
    let samples = ToyGrammar::bracket_default().sample_corpus(16, 11);
    let lines: Vec<String> = samples.iter().map(|s| s.sentence()).collect();
    let vocab = Vocab::build(lines.iter().map(String::as_str), 100, 1).unwrap();
    let corpus: Vec<Vec<usize>> = lines.iter().map(|l| wordpiece_tokenize(l, &vocab).ids).collect();
    let cfg = ModelConfig {
        dim: 32,
        layers: 1,
        heads: 2,
        ffn_dim: 64,
        vocab_size: vocab.len(),
        window: 4,
        dropout: 0.1,
        init_std: 0.02,
    };
    let model = Model::<f32>::new(cfg, 0).unwrap();
    let batch: Vec<usize> = (0..corpus.len()).collect();

    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for (name, mode) in [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Auto)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| batch_gradients(&model, &corpus, &batch, 0, 7, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradient);
criterion_main!(benches);
