use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use isovae::autodiff::{Tape, Tensor};
use isovae::data::{generate_synthetic_text, Batch, Dataset, SyntheticSpec};
use isovae::metrics::bleu_n;
use isovae::models::{SeqVae, SeqVaeConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random(32, 96, &mut rng);
    let b = random(96, 256, &mut rng);
    c.bench_function("matmul_32x96x256_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let x = tape.param(a.clone());
            let w = tape.param(b.clone());
            let y = tape.matmul(x, w).unwrap();
            let s = tape.sum(y).unwrap();
            tape.backward(s).unwrap();
            black_box(tape.grad(w).is_some())
        })
    });
}

fn seq_vae_step(c: &mut Criterion) {
    let spec = SyntheticSpec {
        train: 64,
        dev: 8,
        test: 8,
        ..SyntheticSpec::default()
    };
    let data = Dataset::from_raw(&generate_synthetic_text(&spec).unwrap(), 1, 1000).unwrap();
    let model = SeqVae::new(SeqVaeConfig::toy(data.vocab.len()), 0).unwrap();
    let idx: Vec<usize> = (0..32).collect();
    let batch = Batch::from_indices(&data.train.sentences, &idx);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eps = model.noise(32, &mut rng);
    c.bench_function("seq_vae_train_step_b32", |bench| {
        bench.iter(|| black_box(model.loss_and_grads(&batch, Some(&eps), 0).unwrap()))
    });
}

fn bleu(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let refs: Vec<Vec<usize>> = (0..500)
        .map(|_| (0..rng.random_range(5..15)).map(|_| rng.random_range(0..100)).collect())
        .collect();
    let hyps: Vec<Vec<usize>> = refs
        .iter()
        .map(|r| {
            r.iter()
                .map(|&t| if rng.random_bool(0.2) { t + 1 } else { t })
                .collect()
        })
        .collect();
    c.bench_function("bleu4_500_sentences", |bench| {
        bench.iter(|| black_box(bleu_n(&hyps, &refs, 4).unwrap()))
    });
}

criterion_group!(benches, matmul, seq_vae_step, bleu);
criterion_main!(benches);
