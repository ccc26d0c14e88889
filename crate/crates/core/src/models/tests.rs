use super::checkpoint::{decode_arrays, encode_arrays};
use super::*;
use crate::autodiff::{finite_difference_check, Adam, Bound};
use crate::data::{Batch, EOS, PAD, SOS};
use crate::distributions::Prior;
use crate::objectives::ObjectiveConfig;

fn tiny(vocab: usize, geometry: Geometry) -> SeqVaeConfig {
    SeqVaeConfig {
        vocab_size: vocab,
        embed_dim: 3,
        hidden_dim: 4,
        latent_dim: 2,
        geometry,
        objective: ObjectiveConfig::Plain,
        max_decode_len: 10,
        autoencoder: false,
        prior: PriorConfig::StandardNormal,
    }
}

fn zero(store: &mut ParamStore, names: &[&str]) {
    for n in names {
        let id = store.id_of(n).unwrap();
        for v in store.get_mut(id).data_mut() {
            *v = 0.0;
        }
    }
}

fn sentences() -> Vec<Vec<usize>> {
    vec![vec![4, 5, 6], vec![7, 4], vec![5, 5, 6, 7]]
}

#[test]
fn isotropic_head_emits_one_log_variance() {
    for d in [1, 2, 8] {
        let mut c = tiny(8, Geometry::Isotropic);
        c.latent_dim = d;
        let m = SeqVae::new(c, 0).unwrap();
        let id = m.params().id_of("head.logvar.w").unwrap();
        assert_eq!(m.params().get(id).shape(), &[4, 1]);
        let q = m.encode(&sentences()).unwrap();
        assert!(q.iter().all(|q| q.geometry() == Geometry::Isotropic && q.dim() == d));
    }
}

#[test]
fn zero_head_gives_standard_posterior() {
    let mut m = SeqVae::new(tiny(8, Geometry::Diagonal), 3).unwrap();
    zero(
        m.params_mut(),
        &["head.mu.w", "head.mu.b", "head.logvar.w", "head.logvar.b"],
    );
    for q in m.encode(&sentences()).unwrap() {
        assert!(q.mean().iter().all(|&v| v == 0.0));
        assert!(q.sigmas().iter().all(|&s| s == 1.0));
        assert_eq!(q.kl_to_standard_normal(), 0.0);
    }
}

#[test]
fn encode_is_pure_and_validates() {
    let m = SeqVae::new(tiny(8, Geometry::Diagonal), 1).unwrap();
    assert_eq!(m.encode(&sentences()).unwrap(), m.encode(&sentences()).unwrap());
    assert!(matches!(m.encode(&[vec![]]), Err(ModelError::EmptyInput)));
    assert!(matches!(
        m.encode(&[vec![9]]),
        Err(ModelError::TokenOutOfRange { id: 9, vocab: 8 })
    ));
    // padding in a batch must not change a row's posterior
    let alone = m.encode(&[vec![7, 4]]).unwrap();
    assert_eq!(alone[0], m.encode(&sentences()).unwrap()[1]);
}

#[test]
fn uniform_logits_give_l_ln_v() {
    let v = 9;
    let mut m = SeqVae::new(tiny(v, Geometry::Diagonal), 2).unwrap();
    zero(m.params_mut(), &["dec.out.w", "dec.out.b"]);
    let target = vec![4, 5, 6, 7, EOS];
    let loss = m.decode_teacher_forced(&[0.3, -1.0], &target).unwrap();
    assert!((loss - 5.0 * (v as f64).ln()).abs() < 1e-12);
    assert!(m.decode_teacher_forced(&[0.3], &target).is_err());
    assert!(m.decode_teacher_forced(&[0.3, 0.1], &[]).is_err());
}

#[test]
fn single_token_vocab_has_zero_loss() {
    let m = SeqVae::new(tiny(1, Geometry::Diagonal), 0).unwrap();
    assert_eq!(m.decode_teacher_forced(&[0.5, 0.5], &[0, 0, 0]).unwrap(), 0.0);
}

fn overfit(autoencoder: bool, steps: usize) -> (SeqVae, Vec<f64>) {
    let mut c = tiny(10, Geometry::Diagonal);
    c.embed_dim = 8;
    c.hidden_dim = 16;
    c.autoencoder = autoencoder;
    let mut m = SeqVae::new(c, 5).unwrap();
    let batch = Batch::from_sentences(&[vec![4, 5, 6, 7, 8, 9]]);
    let mut adam = Adam::new(0.01);
    let mut losses = Vec::new();
    for step in 0..steps {
        let (s, g) = m.loss_and_grads(&batch, None, step as u64).unwrap();
        losses.push(s.rec);
        adam.step(m.params_mut().values_mut(), &g).unwrap();
    }
    (m, losses)
}

#[test]
fn overfitting_one_sentence() {
    let (m, losses) = overfit(true, 300);
    for w in losses[..50].windows(2) {
        assert!(w[1] < w[0], "{w:?}");
    }
    let s = vec![4, 5, 6, 7, 8, 9];
    assert!(m.ae_forward(std::slice::from_ref(&s)).unwrap() < 0.1);
    let mu = m.encode(std::slice::from_ref(&s)).unwrap()[0].mean().to_vec();
    assert_eq!(m.greedy_decode(&mu, 20).unwrap(), s);
    assert_eq!(m.greedy_decode(&mu, 20).unwrap(), m.greedy_decode(&mu, 20).unwrap());
    assert_eq!(m.greedy_decode(&mu, 3).unwrap(), vec![4, 5, 6]);
    assert!(m.greedy_decode(&mu, 0).unwrap().is_empty());
    assert_eq!(m.reconstruct(std::slice::from_ref(&s), 8).unwrap(), vec![s]);
}

#[test]
fn greedy_never_emits_padding() {
    let mut m = SeqVae::new(tiny(8, Geometry::Diagonal), 0).unwrap();
    // make padding and start ids the most likely outputs
    let id = m.params().id_of("dec.out.b").unwrap();
    m.params_mut().get_mut(id).data_mut()[PAD] = 50.0;
    m.params_mut().get_mut(id).data_mut()[SOS] = 40.0;
    let out = m.greedy_decode(&[0.0, 0.0], 7).unwrap();
    assert!(out.len() <= 7);
    assert!(!out.contains(&PAD) && !out.contains(&SOS));
}

#[test]
fn ae_forward_equals_zero_noise_pipeline() {
    let m = SeqVae::new(tiny(8, Geometry::Isotropic), 4).unwrap();
    let s = sentences();
    let batch = Batch::from_sentences(&s);
    let eps = vec![0.0; s.len() * 2];
    let vae = m.evaluate_batch(&batch, Some(&eps), 0).unwrap();
    assert_eq!(m.ae_forward(&s).unwrap(), vae.rec);
}

#[test]
fn untie_preserves_posteriors() {
    let m = SeqVae::new(tiny(8, Geometry::Isotropic), 6).unwrap();
    let u = m.untie_warm_start().unwrap();
    assert_eq!(u.config().geometry, Geometry::Diagonal);
    let id = u.params().id_of("head.logvar.w").unwrap();
    assert_eq!(u.params().get(id).shape(), &[4, 2]);
    let s = sentences();
    for (a, b) in m.encode(&s).unwrap().iter().zip(u.encode(&s).unwrap()) {
        assert_eq!(a.mean(), b.mean());
        assert_eq!(a.log_vars(), b.log_vars());
        assert!((a.kl_to_standard_normal() - b.kl_to_standard_normal()).abs() < 1e-10);
    }
    let batch = Batch::from_sentences(&s);
    let ka = m.evaluate_batch(&batch, None, 0).unwrap().kl;
    let kb = u.evaluate_batch(&batch, None, 0).unwrap().kl;
    assert!((ka - kb).abs() < 1e-10);
    assert!(matches!(u.untie_warm_start(), Err(ModelError::Geometry { .. })));
}

fn seq_gradcheck(config: SeqVaeConfig) -> f64 {
    let m = SeqVae::new(config, 7).unwrap();
    // two-token sentences over a two-word vocabulary plus reserved ids
    let batch = Batch::from_sentences(&[vec![4, 5], vec![5, 4]]);
    let eps = vec![0.3, -0.7, 1.1, 0.2];
    let inputs = m.params().values().to_vec();
    let r = finite_difference_check(&inputs, 1e-5, |tape, vars| {
        let p = Bound::from_vars(vars.to_vec());
        Ok(m.forward(tape, &p, &batch, Some(&eps), 0)?.loss)
    })
    .unwrap();
    r.max_rel_err
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for g in [Geometry::Diagonal, Geometry::Isotropic] {
        let err = seq_gradcheck(tiny(6, g));
        assert!(err < 1e-4, "{g}: {err}");
        let mut c = tiny(6, g);
        c.objective = ObjectiveConfig::Beta { beta: 0.3 };
        c.prior = PriorConfig::Mixture {
            components: 3,
            geometry: g,
        };
        let err = seq_gradcheck(c);
        assert!(err < 1e-4, "mixture {g}: {err}");
    }
}

#[test]
fn mixture_kl_matches_density_difference() {
    let mut c = tiny(8, Geometry::Diagonal);
    c.prior = PriorConfig::Mixture {
        components: 2,
        geometry: Geometry::Isotropic,
    };
    let m = SeqVae::new(c, 9).unwrap();
    let s = vec![vec![4, 6, 5]];
    let eps = vec![0.4, -1.2];
    let kl = m.evaluate_batch(&Batch::from_sentences(&s), Some(&eps), 0).unwrap().kl;
    let q = m.encode(&s).unwrap().remove(0);
    let z = q.sample_reparameterized(&eps).unwrap().z;
    let prior = m.prior().unwrap();
    assert!(matches!(prior, Prior::Mixture(_)));
    let want = q.log_density(&z).unwrap() - prior.log_density(&z).unwrap();
    assert!((kl - want).abs() < 1e-9, "{kl} vs {want}");
}

#[test]
fn generation_is_seeded() {
    let m = SeqVae::new(tiny(8, Geometry::Diagonal), 0).unwrap();
    let a = m.generate(5, 11, 2).unwrap();
    assert_eq!(a, m.generate(5, 11, 2).unwrap());
    assert!(m.generate(0, 11, 2).unwrap().is_empty());
    assert!(a.iter().all(|s| s.len() <= 10));
}

#[test]
fn checkpoint_arrays_round_trip() {
    let m = SeqVae::new(tiny(8, Geometry::Diagonal), 1).unwrap();
    let bytes = encode_arrays(m.params().iter());
    let arrays = decode_arrays(&bytes).unwrap();
    let back = SeqVae::from_arrays(m.config().clone(), arrays.clone()).unwrap();
    assert_eq!(back.params().fingerprint(), m.params().fingerprint());
    let wrong = tiny(8, Geometry::Isotropic);
    assert!(matches!(
        SeqVae::from_arrays(wrong, arrays),
        Err(ModelError::Checkpoint(_))
    ));
}

fn vec_model(objective: ObjectiveConfig, geometry: Geometry) -> VectorVae {
    VectorVae::new(
        VectorVaeConfig {
            input_dim: 6,
            hidden: vec![5, 4],
            latent_dim: 3,
            geometry,
            objective,
            autoencoder: false,
        },
        2,
    )
    .unwrap()
}

#[test]
fn bernoulli_oracles() {
    let mut m = vec_model(ObjectiveConfig::Plain, Geometry::Diagonal);
    zero(m.params_mut(), &["dec.out.w", "dec.out.b"]);
    let x = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    let (_, rec) = m.vector_forward(&x, &[0.1, 0.2, -0.3]).unwrap();
    assert!((rec - 6.0 * 2f64.ln()).abs() < 1e-12);
    let id = m.params().id_of("dec.out.b").unwrap();
    for (b, &xi) in m.params_mut().get_mut(id).data_mut().iter_mut().zip(&x) {
        *b = if xi == 1.0 { 30.0 } else { -30.0 };
    }
    let (_, rec) = m.vector_forward(&x, &[0.0; 3]).unwrap();
    assert!(rec < 1e-9 * 6.0);
    assert!(matches!(
        m.vector_forward(&[1.5; 6], &[0.0; 3]),
        Err(ModelError::InputRange(_))
    ));
}

#[test]
fn vector_gradients_match_finite_differences() {
    let xs = vec![vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0]];
    let eps = vec![
        vec![0.3, -0.2, 0.9, -1.0, 0.4, 0.1],
        vec![-0.5, 0.6, 0.2, 1.3, -0.1, 0.0],
    ];
    for (obj, g) in [
        (ObjectiveConfig::Plain, Geometry::Diagonal),
        (ObjectiveConfig::Iwae { k: 2 }, Geometry::Diagonal),
        (ObjectiveConfig::Iwae { k: 2 }, Geometry::Isotropic),
    ] {
        let m = vec_model(obj.clone(), g);
        let r = finite_difference_check(m.params().values(), 1e-5, |tape, vars| {
            let p = Bound::from_vars(vars.to_vec());
            Ok(m.forward(tape, &p, &xs, &eps, 0)?.loss)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{obj} {g}: {}", r.max_rel_err);
    }
}

#[test]
fn iwae_k1_is_the_elbo_estimate() {
    let m = vec_model(ObjectiveConfig::Plain, Geometry::Isotropic);
    let x = vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    let eps = [0.7, -0.1, 0.25];
    let bound = m.iwae_bound_with_noise(&x, &eps).unwrap();
    assert_eq!(bound.to_bits(), m.elbo_estimate(&x, &eps).unwrap().to_bits());
    // the single-sample ELBO is rec + KL evaluated by hand
    let (q, rec) = m.vector_forward(&x, &eps).unwrap();
    let z = q.sample_reparameterized(&eps).unwrap().z;
    let by_hand = -rec + Prior::StandardNormal { dim: 3 }.log_density(&z).unwrap() - q.log_density(&z).unwrap();
    assert!((bound - by_hand).abs() < 1e-10);
    assert_eq!(m.iwae_bound(&x, 5, 3).unwrap(), m.iwae_bound(&x, 5, 3).unwrap());
}

#[test]
fn iwae_bound_grows_with_k_on_paired_noise() {
    let m = vec_model(ObjectiveConfig::Plain, Geometry::Diagonal);
    let x = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    let (mut b5, mut b50) = (0.0, 0.0);
    for r in 0..200 {
        let eps = m.noise(
            50,
            &mut crate::seeding::indexed_rng(1, crate::seeding::Stream::Reparam, r),
        );
        b5 += m.iwae_bound_with_noise(&x, &eps[..15]).unwrap();
        b50 += m.iwae_bound_with_noise(&x, &eps).unwrap();
    }
    assert!(b50 >= b5, "{b50} < {b5}");
}

#[test]
fn uniform_lm_perplexity_is_vocab_size() {
    let v = 11;
    let mut lm = LanguageModel::new(LmConfig::toy(v), 0).unwrap();
    zero(lm.params_mut(), &["lm.out.w", "lm.out.b"]);
    let ppl = lm.perplexity(&[vec![4, 5, 6], vec![7], vec![]]).unwrap();
    assert!((ppl - v as f64).abs() < 1e-9, "{ppl}");
}

#[test]
fn lm_memorizes_one_sentence() {
    let mut cfg = LmConfig::toy(10);
    cfg.epochs = 150;
    cfg.lr = 0.01;
    let mut lm = LanguageModel::new(cfg, 0).unwrap();
    let corpus = vec![vec![4, 5, 6, 7]];
    lm.train(&corpus, 0).unwrap();
    let ppl = lm.perplexity(&corpus).unwrap();
    assert!(ppl < 1.05, "{ppl}");
}

#[test]
fn text_classifier_learns_keywords() {
    let corpus: Vec<Vec<usize>> = (0..40)
        .map(|i| vec![4 + (i % 3), if i % 2 == 0 { 8 } else { 9 }, 7])
        .collect();
    let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
    let mut cfg = TextClassifierConfig::toy(10, 2);
    cfg.epochs = 30;
    cfg.batch_size = 8;
    let mut c = TextClassifier::new(cfg, 0).unwrap();
    c.train(&corpus, &labels, 0).unwrap();
    assert_eq!(c.predict(&corpus).unwrap(), labels);
}
