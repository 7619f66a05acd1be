//! Analytic gradients against central finite differences.

use pseudofam::corpus::{Batch, SentencePair, PAD};
use pseudofam::model::{backward, forward_loss, init_model, ModelConfig, ParamStore, SectionId};

const H: f64 = 1e-4;

fn central_differences(params: &ParamStore, batch: &Batch) -> Vec<f64> {
    let mut p = params.clone();
    (0..p.len())
        .map(|i| {
            let orig = p.values()[i];
            p.values_mut()[i] = orig + H;
            let plus = forward_loss(&p, batch).unwrap();
            p.values_mut()[i] = orig - H;
            let minus = forward_loss(&p, batch).unwrap();
            p.values_mut()[i] = orig;
            (plus - minus) / (2.0 * H)
        })
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

fn batch() -> Batch {
    Batch::new(vec![
        SentencePair {
            src: vec![5, 9, 7, 12],
            tgt: vec![4, 1, 8, 13, 11, 2],
        },
        SentencePair {
            src: vec![6, 6],
            tgt: vec![4, 1, 10, 2],
        },
        SentencePair {
            src: vec![15, 14, 5],
            tgt: vec![4, 1, 16, 17, 2, PAD],
        },
    ])
}

fn scaled_init(config: &ModelConfig, scale: f64) -> ParamStore {
    let mut p = init_model(config).unwrap();
    // non-zero biases and larger weights exercise every term
    for (i, v) in p.values_mut().iter_mut().enumerate() {
        *v = *v * scale + 0.01 * ((i % 7) as f64 - 3.0);
    }
    p
}

#[test]
fn gradients_match_finite_differences_in_every_section() {
    let config = ModelConfig {
        vocab_size: 20,
        embed_dim: 8,
        hidden_dim: 16,
        num_heads: 2,
        max_len: 6,
        seed: 5,
    };
    let params = scaled_init(&config, 5.0);
    assert!(params.len() <= 5000);
    let analytic = backward(&params, &batch()).unwrap();
    let numeric = central_differences(&params, &batch());
    let sections = params.layout().section_of_each();
    let mut worst = [0.0f64; 7];
    let mut checked = [0usize; 7];
    for i in 0..params.len() {
        let (a, n) = (analytic.0[i], numeric[i]);
        if a.abs().max(n.abs()) > 1e-8 {
            let s = SectionId::ALL.iter().position(|&x| x == sections[i]).unwrap();
            worst[s] = worst[s].max(rel_err(a, n));
            checked[s] += 1;
        }
    }
    for (s, sec) in SectionId::ALL.iter().enumerate() {
        eprintln!("{sec}: {} coords, max rel err {:.3e}", checked[s], worst[s]);
        assert!(checked[s] > 0, "{sec} has no live gradient");
        assert!(worst[s] < 1e-4, "{sec}: {:.3e}", worst[s]);
    }
}
