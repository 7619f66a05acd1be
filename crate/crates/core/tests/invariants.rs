use proptest::prelude::*;

use pseudofam::corpus::{LangPairId, ParallelCorpus, SentencePair};
use pseudofam::datasim::{data_similarity, DataSimConfig};
use pseudofam::fim::{estimate_fim, restrict_sections, top_k_count, top_k_mask, FimVector, FimView};
use pseudofam::model::{init_model, ModelConfig, ParamStore, SectionId};
use pseudofam::similarity::{kl_score, mse_score, overlap_score, similarity_matrix, Method};

const V: usize = 14;

fn pid(s: &str) -> LangPairId {
    format!("{s}-en").parse().unwrap()
}

fn small_model(seed: u64) -> ParamStore {
    init_model(&ModelConfig {
        vocab_size: V,
        embed_dim: 4,
        hidden_dim: 6,
        num_heads: 2,
        max_len: 8,
        seed,
    })
    .unwrap()
}

fn view(values: Vec<f64>) -> FimView {
    FimView {
        pair: pid("aa"),
        model_hash: "h".into(),
        layout_digest: "d".into(),
        sections: SectionId::FFN.to_vec(),
        values,
    }
}

fn sentence() -> impl Strategy<Value = SentencePair> {
    (
        prop::collection::vec(5..V as u32, 1..6),
        prop::collection::vec(5..V as u32, 1..5),
    )
        .prop_map(|(src, body)| {
            let mut tgt = vec![4, 1];
            tgt.extend(body);
            tgt.push(2);
            SentencePair { src, tgt }
        })
}

fn corpus() -> impl Strategy<Value = ParallelCorpus> {
    prop::collection::vec(sentence(), 1..9).prop_map(|s| ParallelCorpus::new(pid("aa"), s, V).unwrap())
}

fn paired_vectors() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(0.001f64..1.0, n),
            prop::collection::vec(0.001f64..1.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fisher_is_nonnegative(c in corpus(), bs in 1usize..5, seed in any::<u64>()) {
        let p = small_model(1);
        let f = estimate_fim(&p, &c, bs, seed).unwrap();
        prop_assert!(f.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
        prop_assert_eq!(f.num_batches(), c.len().div_ceil(bs));
    }

    #[test]
    fn single_batch_is_seed_independent(c in corpus(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let p = small_model(2);
        let a = estimate_fim(&p, &c, c.len(), s1).unwrap();
        let b = estimate_fim(&p, &c, c.len(), s2).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }
}

proptest! {
    #[test]
    fn mask_popcount_is_ceiling(values in prop::collection::vec(0.0f64..1.0, 1..300), tenths in 1usize..=10) {
        let k = tenths as f64 / 10.0;
        let n = values.len();
        let m = top_k_mask(&view(values), k).unwrap();
        prop_assert_eq!(m.count_ones(), (tenths * n).div_ceil(10));
    }

    #[test]
    fn mask_popcount_any_k(n in 1usize..500, k in 0.001f64..=1.0) {
        let c = top_k_count(k, n);
        prop_assert!(c >= 1 && c <= n);
        // exact real ceiling, up to the snapping tolerance
        let x = k * n as f64;
        prop_assert!(c as f64 >= x - 1e-9 * x.max(1.0));
        prop_assert!((c as f64) < x + 1.0);
    }

    #[test]
    fn self_scores_are_identities((a, _) in paired_vectors(), k in 0.05f64..=1.0) {
        let v = view(a);
        prop_assert_eq!(mse_score(&v, &v).unwrap(), 0.0);
        prop_assert_eq!(kl_score(&v, &v).unwrap(), 0.0);
        let m = top_k_mask(&v, k).unwrap();
        prop_assert_eq!(overlap_score(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn mse_and_overlap_are_symmetric((a, b) in paired_vectors(), k in 0.05f64..=1.0) {
        let (va, vb) = (view(a), view(b));
        prop_assert_eq!(mse_score(&va, &vb).unwrap(), mse_score(&vb, &va).unwrap());
        let (ma, mb) = (top_k_mask(&va, k).unwrap(), top_k_mask(&vb, k).unwrap());
        prop_assert_eq!(overlap_score(&ma, &mb).unwrap(), overlap_score(&mb, &ma).unwrap());
        let s = overlap_score(&ma, &mb).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn overlap_ignores_positive_scaling((a, b) in paired_vectors(), k in 0.05f64..=1.0, c in 1e-3f64..1e3) {
        let base = overlap_score(&top_k_mask(&view(a.clone()), k).unwrap(), &top_k_mask(&view(b.clone()), k).unwrap()).unwrap();
        let sa = view(a.iter().map(|x| x * c).collect());
        let sb = view(b.iter().map(|x| x * c).collect());
        let scaled = overlap_score(&top_k_mask(&sa, k).unwrap(), &top_k_mask(&sb, k).unwrap()).unwrap();
        prop_assert_eq!(scaled, base);
    }

    #[test]
    fn kl_is_positively_homogeneous((a, b) in paired_vectors(), c in 0.01f64..100.0) {
        let base = kl_score(&view(a.clone()), &view(b.clone())).unwrap();
        let got = kl_score(&view(a.iter().map(|x| x * c).collect()), &view(b.iter().map(|x| x * c).collect())).unwrap();
        let want = c * base;
        // the absolute value can cancel to near zero; compare on the scale of the terms
        let scale: f64 = b.iter().map(|x| x * c).sum::<f64>().max(want.abs());
        prop_assert!((got - want).abs() <= 1e-9 * scale, "{} vs {}", got, want);
    }
}

#[test]
fn zero_gradient_gives_zero_fisher() {
    // every output is the token 7 with probability exactly 1 in f64
    let mut p = small_model(0);
    p.values_mut().iter_mut().for_each(|v| *v = 0.0);
    let off = p.segment("out.b").unwrap().offset;
    p.values_mut()[off + 7] = 1000.0;
    let sentences = vec![
        SentencePair {
            src: vec![5, 6],
            tgt: vec![4, 7, 7],
        },
        SentencePair {
            src: vec![9],
            tgt: vec![4, 7],
        },
        SentencePair {
            src: vec![8, 8, 8],
            tgt: vec![4, 7, 7, 7],
        },
    ];
    let c = ParallelCorpus::new(pid("aa"), sentences, V).unwrap();
    let f = estimate_fim(&p, &c, 2, 0).unwrap();
    assert!(f.values().iter().all(|&v| v == 0.0));
}

#[test]
fn estimation_does_not_touch_parameters() {
    let p = small_model(4);
    let before = p.clone();
    let c = ParallelCorpus::new(
        pid("aa"),
        vec![SentencePair {
            src: vec![5, 6],
            tgt: vec![4, 1, 9, 2],
        }],
        V,
    )
    .unwrap();
    estimate_fim(&p, &c, 1, 0).unwrap();
    assert_eq!(p.values(), before.values());
    assert_eq!(p.content_hash(), before.content_hash());
}

#[test]
fn empty_corpus_is_an_error() {
    let p = small_model(0);
    let c = ParallelCorpus::new(pid("aa"), vec![], V).unwrap();
    assert!(estimate_fim(&p, &c, 4, 0).is_err());
}

#[test]
fn split_sections_concatenate_to_ffn_view() {
    let p = small_model(0);
    let layout = p.layout().clone();
    let vals: Vec<f64> = (0..layout.total_len()).map(|i| i as f64).collect();
    let f = FimVector::new(vals, layout, p.content_hash(), pid("aa"), 1).unwrap();
    let ef = restrict_sections(&f, &[SectionId::EncFfn]).unwrap();
    let df = restrict_sections(&f, &[SectionId::DecFfn]).unwrap();
    let ffn = restrict_sections(&f, &SectionId::FFN).unwrap();
    let mut joined = ef.values.clone();
    joined.extend(&df.values);
    assert_eq!(joined, ffn.values);
    assert_eq!(restrict_sections(&f, &SectionId::ALL).unwrap().values, f.values());
}

fn matrix_fims(p: &ParamStore, values: &[Vec<f64>]) -> Vec<FimVector> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            FimVector::new(
                v.clone(),
                p.layout().clone(),
                p.content_hash(),
                pid(&format!("a{i}")),
                1,
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn matrix_laws() {
    let p = small_model(0);
    let n = p.len();
    let base: Vec<f64> = (0..n).map(|i| ((i * 37 % 101) as f64 + 1.0) / 50.0).collect();
    let other: Vec<f64> = (0..n).map(|i| ((i * 53 % 97) as f64 + 1.0) / 40.0).collect();
    let fims = matrix_fims(&p, &[base.clone(), base.clone(), other]);
    let mse = similarity_matrix(&fims, Method::Mse, 0.4, &SectionId::FFN).unwrap();
    assert_eq!(mse.scores[0][1], 0.0);
    let ov = similarity_matrix(&fims, Method::Overlap, 0.4, &SectionId::FFN).unwrap();
    assert_eq!(ov.scores[0][1], 1.0);
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(ov.scores[i][j], ov.scores[j][i]);
            assert_eq!(mse.scores[i][j], mse.scores[j][i]);
        }
    }
}

#[test]
fn kl_matrix_is_asymmetric_on_three_fims() {
    // pad every FIM with the same value outside one FFN pair of coordinates
    let p = small_model(0);
    let ffn: Vec<usize> = p
        .layout()
        .segments()
        .iter()
        .filter(|s| SectionId::FFN.contains(&s.section))
        .flat_map(|s| s.range())
        .collect();
    let (i, j) = (ffn[0], ffn[1]);
    let make = |x: f64, y: f64| {
        let mut v = vec![1.0; p.len()];
        v[i] = x;
        v[j] = y;
        v
    };
    let fims = matrix_fims(&p, &[make(1.0, 2.0), make(2.0, 1.0), make(1.0, 1.0)]);
    let kl = similarity_matrix(&fims, Method::Kl, 0.4, &SectionId::FFN).unwrap();
    // a and b swap coordinates, which leaves this pair symmetric
    assert!((kl.scores[0][1] - kl.scores[1][0]).abs() < 1e-12);
    assert!((kl.scores[0][2] - 2f64.ln()).abs() < 1e-12);
    assert!((kl.scores[2][0] - 2.0 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn mixed_model_hashes_are_rejected() {
    let p = small_model(0);
    let v = vec![1.0; p.len()];
    let mut fims = matrix_fims(&p, std::slice::from_ref(&v));
    fims.push(FimVector::new(v, p.layout().clone(), "other".into(), pid("zz"), 1).unwrap());
    let err = similarity_matrix(&fims, Method::Mse, 0.4, &SectionId::FFN).unwrap_err();
    assert!(matches!(err, pseudofam::Error::HashMismatch { .. }));
}

fn datasim_corpora() -> (ParallelCorpus, ParallelCorpus) {
    let s = |src: Vec<u32>| SentencePair {
        src,
        tgt: vec![4, 1, 5, 2],
    };
    let target = ParallelCorpus::new(
        pid("aa"),
        vec![s(vec![5, 6]), s(vec![7]), s(vec![8, 9, 10]), s(vec![11, 5])],
        V,
    )
    .unwrap();
    let aux = ParallelCorpus::new(pid("ab"), vec![s(vec![6, 6]), s(vec![9, 12]), s(vec![13])], V).unwrap();
    (aux, target)
}

#[test]
fn datasim_ignores_embedding_scale() {
    let (aux, target) = datasim_corpora();
    let p = small_model(6);
    let mut q = p.clone();
    let seg = q.segment("tok_emb").unwrap().clone();
    for v in &mut q.values_mut()[seg.range()] {
        *v *= 7.5;
    }
    let cfg = DataSimConfig {
        sample_frac: 1.0,
        top_n: 2,
        seed: 0,
    };
    let a = data_similarity(&aux, &target, &p, &cfg).unwrap().score;
    let b = data_similarity(&aux, &target, &q, &cfg).unwrap().score;
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    assert!((-1.0..=1.0).contains(&a));
}

#[test]
fn aux_made_of_target_copies_scores_one() {
    let (_, target) = datasim_corpora();
    let copies: Vec<SentencePair> = [2, 0, 3, 3].iter().map(|&i| target.sentences()[i].clone()).collect();
    let aux = ParallelCorpus::new(pid("ab"), copies, V).unwrap();
    let cfg = DataSimConfig {
        sample_frac: 1.0,
        top_n: 1,
        seed: 0,
    };
    let score = data_similarity(&aux, &target, &small_model(3), &cfg).unwrap().score;
    assert!((score - 1.0).abs() < 1e-12, "{score}");
}
