use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::numerics::{Eval, Precision, RandomStream, Tape, Tensor};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn small(variant: Variant, cell: CellKind, d: usize, r: usize) -> ModelSpec {
    ModelSpec {
        config: ModelConfig {
            embedding_dim: 5,
            encoder_hidden: 4,
            encoder_layers: 1,
            decoder_hidden: d,
            rank: Some(r),
            exemplar_hidden: 3,
            cell,
            tie_embeddings: false,
            copy: true,
            init_scale: 0.5,
            precision: Precision::F64,
        },
        variant,
        vocab_size: 12,
    }
}

/// A model whose parameters come from `fill(name, shape)`.
fn model_with(spec: ModelSpec, fill: impl Fn(&str, &[usize]) -> Tensor) -> Model {
    let mut params = ParamStore::new();
    for (name, shape) in param_shapes(&spec) {
        params.insert(name.clone(), fill(&name, &shape)).unwrap();
    }
    Model::from_params(spec, params).unwrap()
}

fn zeros(spec: ModelSpec) -> Model {
    model_with(spec, |_, s| Tensor::zeros(s))
}

fn eval(model: &Model) -> Eval<'_> {
    Eval::new(model.params(), Precision::F64)
}

#[test]
fn zero_encoder_gives_zero_states() {
    let m = zeros(small(Variant::Seq2seq, CellKind::Lstm, 4, 4));
    let mut g = eval(&m);
    let enc = m.encode_source(&mut g, &[4, 5, 6], &mut Noise::none()).unwrap();
    assert_eq!(enc.states.len(), 3);
    for s in &enc.states {
        assert_eq!(s.shape(), &[8]);
        assert!(s.data().iter().all(|&v| v == 0.0));
    }
    assert!(enc.h0.data().iter().all(|&v| v == 0.0));
    assert_eq!(enc.h0.shape(), &[4]);
}

#[test]
fn single_token_source_has_one_state() {
    let m = Model::init(small(Variant::Seq2seq, CellKind::Lstm, 4, 4), 3).unwrap();
    let mut g = eval(&m);
    let enc = m.encode_source(&mut g, &[7], &mut Noise::none()).unwrap();
    assert_eq!(enc.states.len(), 1);
    assert_eq!(enc.matrix.shape(), &[1, 8]);
}

#[test]
fn empty_source_rejected() {
    let m = Model::init(small(Variant::Seq2seq, CellKind::Lstm, 4, 4), 3).unwrap();
    let mut g = eval(&m);
    assert!(m.encode_source(&mut g, &[], &mut Noise::none()).is_err());
}

#[test]
fn backward_direction_mirrors_forward_on_reversed_input() {
    let spec = small(Variant::Seq2seq, CellKind::Lstm, 4, 4);
    let mut rng = RandomStream::new(11);
    let init = Model::init(spec.clone(), 5).unwrap();
    let shared: Vec<(String, Tensor)> = ["wx", "wh", "b"]
        .iter()
        .map(|k| {
            let s = init.params().by_name(&format!("enc.0.fwd.{k}")).unwrap().shape().to_vec();
            let n = s.iter().product();
            (k.to_string(), Tensor::new(s, (0..n).map(|_| rng.uniform_range(-0.5, 0.5)).collect()).unwrap())
        })
        .collect();
    let m = model_with(spec, |name, shape| {
        if let Some(rest) = name.strip_prefix("enc.0.") {
            let key = rest.split('.').nth(1).unwrap();
            return shared.iter().find(|(k, _)| k == key).unwrap().1.clone();
        }
        init.params().by_name(name).unwrap().reshape(shape.to_vec()).unwrap()
    });
    let x = [4u32, 9, 5, 7];
    let rev: Vec<u32> = x.iter().rev().copied().collect();
    let mut g = eval(&m);
    let a = m.encode_source(&mut g, &x, &mut Noise::none()).unwrap();
    let b = m.encode_source(&mut g, &rev, &mut Noise::none()).unwrap();
    let n = x.len();
    for i in 0..n {
        let bwd = &a.states[i].data()[4..];
        let fwd = &b.states[n - 1 - i].data()[..4];
        for (p, q) in bwd.iter().zip(fwd) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn exemplar_encoding_cases() {
    let spec = small(Variant::AdaDec, CellKind::Lstm, 4, 4);
    let z = zeros(spec.clone());
    let mut g = eval(&z);
    let a = z.encode_exemplar(&mut g, &[4, 5], &mut Noise::none()).unwrap().repr;
    assert_eq!(a.shape(), &[6]);
    assert!(a.data().iter().all(|&v| v == 0.0));
    assert!(z.encode_exemplar(&mut g, &[], &mut Noise::none()).is_err());

    let m = Model::init(spec.clone(), 9).unwrap();
    let mut g = eval(&m);
    let one = m.encode_exemplar(&mut g, &[6], &mut Noise::none()).unwrap().repr;
    // Changing every other embedding row leaves a single-token encoding unchanged.
    let embed = m.params().by_name("embed").unwrap().clone();
    let mut data = embed.to_vec();
    for (i, v) in data.iter_mut().enumerate() {
        if i / 5 != 6 {
            *v += 0.3;
        }
    }
    let mut params = m.params().clone();
    params.set(params.id("embed").unwrap(), Tensor::new(embed.shape().to_vec(), data).unwrap()).unwrap();
    let m2 = m.with_params(params).unwrap();
    let mut g2 = eval(&m2);
    let one2 = m2.encode_exemplar(&mut g2, &[6], &mut Noise::none()).unwrap().repr;
    assert_eq!(one, one2);

    let ab = m.encode_exemplar(&mut g, &[4, 5, 8], &mut Noise::none()).unwrap().repr;
    let ba = m.encode_exemplar(&mut g, &[8, 5, 4], &mut Noise::none()).unwrap().repr;
    assert!(ab.max_abs_diff(&ba) > 1e-6);

    let s2s = Model::init(small(Variant::Seq2seq, CellKind::Lstm, 4, 4), 1).unwrap();
    let mut g = eval(&s2s);
    assert!(s2s.encode_exemplar(&mut g, &[4], &mut Noise::none()).is_err());
}

fn coef_model(d: usize, c: Tensor) -> Model {
    let mut spec = small(Variant::AdaDec, CellKind::Elman, d, c.rows());
    spec.config.exemplar_hidden = c.cols() / 2;
    model_with(spec, |name, shape| if name == "coef.c" { c.clone() } else { Tensor::zeros(shape) })
}

#[test]
fn coefficients_hand_example() {
    let m = coef_model(2, Tensor::identity(2));
    let mut g = eval(&m);
    let lam = m.compute_coefficients(&mut g, &t(&[2], &[3.0, 4.0])).unwrap();
    let s = 2f64.sqrt() / 5.0;
    assert!((lam.data()[0] - 3.0 * s).abs() < 1e-12);
    assert!((lam.data()[1] - 4.0 * s).abs() < 1e-12);
    assert!((lam.data()[0] - 0.8485).abs() < 1e-4);
    assert!((lam.data()[1] - 1.1314).abs() < 1e-4);
}

#[test]
fn coefficients_zero_is_degenerate() {
    let m = coef_model(2, Tensor::identity(2));
    let mut g = eval(&m);
    let err = m.compute_coefficients(&mut g, &t(&[2], &[0.0, 0.0])).unwrap_err();
    assert!(matches!(err, Error::DegenerateCoefficients(_)));
}

proptest! {
    #[test]
    fn coefficients_have_norm_sqrt_d(d in 1usize..10, seed in any::<u64>()) {
        let m = Model::init(small(Variant::AdaDec, CellKind::Elman, d, 3), seed).unwrap();
        let mut rng = RandomStream::new(seed ^ 1);
        let a = Tensor::vector((0..6).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let mut g = eval(&m);
        let lam = m.compute_coefficients(&mut g, &a).unwrap();
        prop_assert!((lam.norm() - (d as f64).sqrt()).abs() < 1e-6);
    }
}

fn random(shape: &[usize], rng: &mut RandomStream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

fn bank(d: usize, e: usize, r: usize, rng: &mut RandomStream) -> FactoredGate<Tensor> {
    FactoredGate {
        up: random(&[d, r], rng),
        vp: random(&[d, r], rng),
        uq: random(&[d, r], rng),
        vq: random(&[e, r], rng),
        bias_bank: random(&[d, r], rng),
        b: Tensor::zeros(&[d]),
    }
}

#[test]
fn materialize_one_hot_selects_outer_product() {
    let params = ParamStore::new();
    let mut g = Eval::new(&params, Precision::F64);
    let mut rng = RandomStream::new(2);
    let f = bank(3, 2, 4, &mut rng);
    let lam = t(&[4], &[1.0, 0.0, 0.0, 0.0]);
    let dense = materialize(&mut g, std::slice::from_ref(&f), &lam).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(dense[0].p.at(i, j), f.up.at(i, 0) * f.vp.at(j, 0));
        }
        assert_eq!(dense[0].b.data()[i], f.bias_bank.at(i, 0));
    }
}

#[test]
fn materialize_zero_coefficients() {
    let params = ParamStore::new();
    let mut g = Eval::new(&params, Precision::F64);
    let mut rng = RandomStream::new(3);
    let f = bank(3, 2, 4, &mut rng);
    let dense = materialize(&mut g, &[f], &Tensor::zeros(&[4])).unwrap();
    for m in [&dense[0].p, &dense[0].q, &dense[0].b] {
        assert!(m.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn materialize_identity_returns_u() {
    let params = ParamStore::new();
    let mut g = Eval::new(&params, Precision::F64);
    let mut rng = RandomStream::new(4);
    let mut f = bank(3, 2, 3, &mut rng);
    f.vp = Tensor::identity(3);
    let dense = materialize(&mut g, std::slice::from_ref(&f), &t(&[3], &[1.0; 3])).unwrap();
    assert_eq!(dense[0].p, f.up);
}

#[test]
fn materialize_size_mismatch() {
    let params = ParamStore::new();
    let mut g = Eval::new(&params, Precision::F64);
    let mut rng = RandomStream::new(5);
    let f = bank(3, 2, 3, &mut rng);
    assert!(materialize(&mut g, &[f], &Tensor::zeros(&[2])).is_err());
}

#[test]
fn zero_elman_cell() {
    let params = ParamStore::new();
    let mut g = Eval::new(&params, Precision::F64);
    let w = CellWeights::Dense(vec![DenseGate {
        p: Tensor::zeros(&[3, 3]),
        q: Tensor::zeros(&[3, 2]),
        b: Tensor::zeros(&[3]),
    }]);
    let state = DecoderState {
        h: t(&[3], &[0.3, -0.2, 0.9]),
        c: None,
    };
    let next = cell_step(&mut g, CellKind::Elman, &w, &state, &t(&[2], &[1.0, 2.0])).unwrap();
    assert!(next.h.data().iter().all(|&v| v == 0.0));
}

#[test]
fn scalar_elman_cell() {
    let params = ParamStore::new();
    let mut g = Eval::new(&params, Precision::F64);
    let w = CellWeights::Dense(vec![DenseGate {
        p: t(&[1, 1], &[0.5]),
        q: t(&[1, 1], &[1.0]),
        b: t(&[1], &[0.0]),
    }]);
    let state = DecoderState {
        h: t(&[1], &[0.0]),
        c: None,
    };
    let next = cell_step(&mut g, CellKind::Elman, &w, &state, &t(&[1], &[0.5])).unwrap();
    assert!((next.h.data()[0] - 0.5f64.tanh()).abs() < 1e-15);
    assert!((next.h.data()[0] - 0.46212).abs() < 1e-5);
}

/// `Σᵢ λᵢ uᵢ vᵢᵀ` by explicit loops.
fn compose(u: &Tensor, v: &Tensor, lam: &[f64]) -> Tensor {
    let (rows, cols) = (u.rows(), v.rows());
    let mut out = vec![0.0; rows * cols];
    for (k, l) in lam.iter().enumerate() {
        for i in 0..rows {
            for j in 0..cols {
                out[i * cols + j] += l * u.at(i, k) * v.at(j, k);
            }
        }
    }
    Tensor::new(vec![rows, cols], out).unwrap()
}

fn reference_dense(gates: &[FactoredGate<Tensor>], lam: &Tensor) -> Vec<DenseGate<Tensor>> {
    gates
        .iter()
        .map(|f| {
            let b = (0..f.bias_bank.rows())
                .map(|i| (0..lam.len()).map(|k| f.bias_bank.at(i, k) * lam.data()[k]).sum())
                .collect();
            DenseGate {
                p: compose(&f.up, &f.vp, lam.data()),
                q: compose(&f.uq, &f.vq, lam.data()),
                b: Tensor::vector(b).unwrap(),
            }
        })
        .collect()
}

proptest! {
    #[test]
    fn factored_cell_matches_dense_reference(
        d in 1usize..8, r in 1usize..8, e in 1usize..5, seed in any::<u64>(), lstm in any::<bool>()
    ) {
        let kind = if lstm { CellKind::Lstm } else { CellKind::Elman };
        let params = ParamStore::new();
        let mut g = Eval::new(&params, Precision::F64);
        let mut rng = RandomStream::new(seed);
        let gates: Vec<_> = (0..kind.gates()).map(|_| {
            let mut f = bank(d, e, r, &mut rng);
            f.b = Tensor::zeros(&[d]);
            f
        }).collect();
        let lam = random(&[r], &mut rng);
        let gates: Vec<_> = gates.into_iter().map(|mut f| {
            f.b = g.matmul(&f.bias_bank, &lam).unwrap();
            f
        }).collect();
        let state = DecoderState {
            h: random(&[d], &mut rng),
            c: lstm.then(|| random(&[d], &mut rng)),
        };
        let v = random(&[e], &mut rng);
        let fac = CellWeights::Factored { gates: gates.clone(), lambda: lam.clone() };
        let dense = CellWeights::Dense(reference_dense(&gates, &lam));
        let a = cell_step(&mut g, kind, &fac, &state, &v).unwrap();
        let b = cell_step(&mut g, kind, &dense, &state, &v).unwrap();
        prop_assert!(a.h.max_abs_diff(&b.h) <= 1e-6);
        if lstm {
            prop_assert!(a.c.unwrap().max_abs_diff(&b.c.unwrap()) <= 1e-6);
        }
    }
}

#[test]
fn attention_single_state() {
    let params = ParamStore::new();
    let mut g = Eval::new(&params, Precision::F64);
    let states = t(&[1, 3], &[0.2, -0.4, 0.7]);
    let w = t(&[2, 3], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    let (ctx, alpha) = attention_context(&mut g, &t(&[2], &[1.0, -1.0]), &states, &w).unwrap();
    assert_eq!(alpha.data(), &[1.0]);
    assert_eq!(ctx.data(), states.data());
}

#[test]
fn attention_zero_weights_is_mean() {
    let params = ParamStore::new();
    let mut g = Eval::new(&params, Precision::F64);
    let states = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 9.0]);
    let (ctx, alpha) = attention_context(&mut g, &t(&[2], &[0.3, 0.7]), &states, &Tensor::zeros(&[2, 2])).unwrap();
    for a in alpha.data() {
        assert!((a - 1.0 / 3.0).abs() < 1e-12);
    }
    assert!((ctx.data()[0] - 3.0).abs() < 1e-12);
    assert!((ctx.data()[1] - 5.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn attention_weights_sum_to_one(n in 1usize..9, seed in any::<u64>()) {
        let params = ParamStore::new();
        let mut g = Eval::new(&params, Precision::F64);
        let mut rng = RandomStream::new(seed);
        let (_, alpha) = attention_context(
            &mut g, &random(&[3], &mut rng), &random(&[n, 4], &mut rng), &random(&[3, 4], &mut rng),
        ).unwrap();
        prop_assert!((alpha.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

/// Inputs for one output-distribution evaluation on a random model.
struct OutCase {
    h: Tensor,
    ctx: Tensor,
    ex_ctx: Option<Tensor>,
    emb: Tensor,
    src: Arc<[u32]>,
    alpha: Tensor,
    ex_ids: Option<Arc<[u32]>>,
    beta: Option<Tensor>,
}

fn out_case(spec: &ModelSpec, rng: &mut RandomStream) -> OutCase {
    let c = &spec.config;
    let softmax = |x: Tensor| Tensor::vector(crate::numerics::softmax(x.data())).unwrap();
    let ex = spec.variant.attends_exemplar();
    OutCase {
        h: random(&[c.decoder_hidden], rng),
        ctx: random(&[2 * c.encoder_hidden], rng),
        ex_ctx: ex.then(|| random(&[2 * c.exemplar_hidden], rng)),
        emb: random(&[c.embedding_dim], rng),
        src: Arc::from(vec![4u32, 5, 4]),
        alpha: softmax(random(&[3], rng)),
        ex_ids: ex.then(|| Arc::from(vec![7u32, 8])),
        beta: ex.then(|| softmax(random(&[2], rng))),
    }
}

fn output(m: &Model, case: &OutCase) -> StepOutput<Tensor> {
    let mut g = eval(m);
    m.output_distribution(
        &mut g,
        &OutputInputs {
            h: &case.h,
            context: &case.ctx,
            exemplar_context: case.ex_ctx.as_ref(),
            input_embedding: &case.emb,
            source_ids: &case.src,
            attention: &case.alpha,
            exemplar_ids: case.ex_ids.as_ref(),
            exemplar_attention: case.beta.as_ref(),
        },
        &mut Noise::none(),
    )
    .unwrap()
}

fn probs(o: StepOutput<Tensor>) -> Tensor {
    match o {
        StepOutput::Probs(p) => p,
        StepOutput::Logits(l) => Tensor::vector(crate::numerics::softmax(l.data())).unwrap(),
    }
}

/// Sets the gate bias so the gate is (numerically) saturated at `target`.
fn with_gate(m: &Model, bias: Vec<f64>) -> Model {
    let mut params = m.params().clone();
    let id = params.id("gate.w").unwrap();
    let shape = params.get(id).shape().to_vec();
    params.set(id, Tensor::zeros(&shape)).unwrap();
    params.set(params.id("gate.b").unwrap(), Tensor::vector(bias).unwrap()).unwrap();
    m.with_params(params).unwrap()
}

#[test]
fn copy_gate_extremes() {
    let spec = small(Variant::Seq2seq, CellKind::Lstm, 4, 4);
    let m = Model::init(spec.clone(), 21).unwrap();
    let mut rng = RandomStream::new(8);
    let case = out_case(&spec, &mut rng);

    let mut no_copy = spec.clone();
    no_copy.config.copy = false;
    let base = model_with(no_copy, |n, _| m.params().by_name(n).unwrap().clone());
    let p_vocab = probs(output(&base, &case));

    let gen = with_gate(&m, vec![800.0]);
    assert!(probs(output(&gen, &case)).max_abs_diff(&p_vocab) < 1e-12);

    let copy = with_gate(&m, vec![-800.0]);
    let p = probs(output(&copy, &case));
    let mut expect = vec![0.0; 12];
    for (s, a) in case.src.iter().zip(case.alpha.data()) {
        expect[*s as usize] += a;
    }
    assert!(p.max_abs_diff(&Tensor::vector(expect).unwrap()) < 1e-12);
}

#[test]
fn three_way_gate_pure_vocabulary() {
    let spec = small(Variant::AttExp, CellKind::Lstm, 4, 4);
    let m = Model::init(spec.clone(), 22).unwrap();
    let mut rng = RandomStream::new(9);
    let case = out_case(&spec, &mut rng);
    let mut no_copy = spec.clone();
    no_copy.config.copy = false;
    let base = model_with(no_copy, |n, _| m.params().by_name(n).unwrap().clone());
    let p_vocab = probs(output(&base, &case));
    let gen = with_gate(&m, vec![800.0, 0.0, 0.0]);
    assert!(probs(output(&gen, &case)).max_abs_diff(&p_vocab) < 1e-12);
    let ex = with_gate(&m, vec![0.0, 0.0, 800.0]);
    let p = probs(output(&ex, &case));
    let beta = case.beta.as_ref().unwrap().data();
    assert!((p.data()[7] - beta[0]).abs() < 1e-12);
    assert!((p.data()[8] - beta[1]).abs() < 1e-12);
}

proptest! {
    #[test]
    fn output_sums_to_one(seed in any::<u64>(), v in 0usize..4, copy in any::<bool>(), tie in any::<bool>()) {
        let mut spec = small(Variant::ALL[v], CellKind::Lstm, 4, 3);
        spec.config.copy = copy;
        spec.config.tie_embeddings = tie;
        let m = Model::init(spec.clone(), seed).unwrap();
        let mut rng = RandomStream::new(seed ^ 7);
        let case = out_case(&spec, &mut rng);
        let p = probs(output(&m, &case));
        prop_assert_eq!(p.len(), 12);
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(p.data().iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn exemplar_attention_weights_sum_to_one() {
    let spec = small(Variant::AdaDecAttExp, CellKind::Lstm, 4, 4);
    let m = Model::init(spec, 23).unwrap();
    let mut g = eval(&m);
    let ex = m.encode_exemplar(&mut g, &[4, 6, 9, 5], &mut Noise::none()).unwrap();
    let w = g.param(m.layout().ex_attn.unwrap());
    let h = t(&[4], &[0.1, 0.5, -0.3, 0.8]);
    let (_, beta) = attention_context(&mut g, &h, &ex.matrix, &w).unwrap();
    assert!((beta.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
}

#[test]
fn parameter_count_examples() {
    assert_eq!(recurrence_budget(CellKind::Elman, true, 4, 4, 4), (64, 16));
    assert_eq!(recurrence_budget(CellKind::Elman, false, 4, 4, 4), (32, 4));
    let (w, b) = recurrence_budget(CellKind::Lstm, true, 4, 4, 4);
    assert_eq!(w + b, 320);
}

#[test]
fn counts_follow_the_layout() {
    for v in Variant::ALL {
        for cell in [CellKind::Elman, CellKind::Lstm] {
            let mut spec = small(v, cell, 6, 3);
            spec.config.embedding_dim = 6;
            let c = count_parameters(&spec);
            let (w, b) = recurrence_budget(cell, v.adaptive(), 6, 6, 3);
            assert_eq!(c.decoder_weights, w);
            assert_eq!(c.decoder_bias, b);
            let m = Model::init(spec, 0).unwrap();
            assert_eq!(c.total, m.params().total_size());
        }
    }
}

#[test]
fn init_is_seeded() {
    let spec = small(Variant::AdaDec, CellKind::Lstm, 4, 4);
    let a = Model::init(spec.clone(), 5).unwrap();
    let b = Model::init(spec.clone(), 5).unwrap();
    let c = Model::init(spec, 6).unwrap();
    for ((_, x), (_, y)) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(x, y);
    }
    assert!(a.params().iter().zip(c.params().iter()).any(|((_, x), (_, y))| x != y));
    for (_, x) in a.params().iter() {
        assert!(x.data().iter().all(|v| v.abs() <= 0.5));
    }
}

#[test]
fn wrong_layout_rejected() {
    let spec = small(Variant::AdaDec, CellKind::Lstm, 4, 4);
    let m = Model::init(spec, 5).unwrap();
    let other = small(Variant::Seq2seq, CellKind::Lstm, 4, 4);
    assert!(Model::from_params(other, m.params().clone()).is_err());
}

#[test]
fn factored_and_materialized_losses_agree() {
    for v in [Variant::AdaDec, Variant::AdaDecAttExp] {
        let m = Model::init(small(v, CellKind::Lstm, 5, 3), 31).unwrap();
        let mut losses = Vec::new();
        for mode in [CellMode::Factored, CellMode::Materialized] {
            let mut g = eval(&m);
            let opts = ForwardOptions {
                cell_mode: mode,
                lambda_override: None,
            };
            let (l, n) = m
                .sequence_nll(&mut g, &[4, 5, 6, 3], &[7, 8, 3], Some(&[9, 10, 3]), &opts, &mut Noise::none())
                .unwrap();
            assert_eq!(n, 3);
            losses.push(l.item().unwrap());
        }
        assert!((losses[0] - losses[1]).abs() < 1e-10);
    }
}

#[test]
fn padding_targets_are_not_scored() {
    let m = Model::init(small(Variant::Seq2seq, CellKind::Lstm, 4, 4), 2).unwrap();
    let mut g = eval(&m);
    let opts = ForwardOptions::default();
    let (a, n) = m.sequence_nll(&mut g, &[4, 3], &[5, 3], None, &opts, &mut Noise::none()).unwrap();
    let (b, k) = m.sequence_nll(&mut g, &[4, 3], &[5, 3, 0, 0], None, &opts, &mut Noise::none()).unwrap();
    assert_eq!((n, k), (2, 2));
    assert_eq!(a, b);
    assert!(m.sequence_nll(&mut g, &[4, 3], &[0], None, &opts, &mut Noise::none()).is_err());
}

#[test]
fn exemplar_variants_need_an_exemplar() {
    let m = Model::init(small(Variant::AdaDec, CellKind::Lstm, 4, 4), 2).unwrap();
    let mut g = eval(&m);
    let r = m.sequence_nll(&mut g, &[4, 3], &[5, 3], None, &ForwardOptions::default(), &mut Noise::none());
    assert!(r.is_err());
}

#[test]
fn different_exemplars_give_different_recurrences() {
    let m = Model::init(small(Variant::AdaDec, CellKind::Elman, 6, 6), 40).unwrap();
    let mut g = eval(&m);
    let mut mats = Vec::new();
    for ex in [[4u32, 5, 3], [9, 11, 3]] {
        let ctx = m
            .prepare(
                &mut g,
                &[6, 7, 3],
                Some(&ex),
                &ForwardOptions {
                    cell_mode: CellMode::Materialized,
                    lambda_override: None,
                },
                &mut Noise::none(),
            )
            .unwrap();
        let CellWeights::Dense(gates) = ctx.cell else { unreachable!() };
        mats.push(gates[0].p.clone());
    }
    assert!(mats[0].max_abs_diff(&mats[1]) > 0.0);
}

#[test]
fn rank_is_bounded() {
    let m = Model::init(small(Variant::AdaDec, CellKind::Elman, 8, 3), 41).unwrap();
    let mut g = eval(&m);
    let ctx = m
        .prepare(
            &mut g,
            &[6, 7, 3],
            Some(&[4, 5, 3]),
            &ForwardOptions {
                cell_mode: CellMode::Materialized,
                lambda_override: None,
            },
            &mut Noise::none(),
        )
        .unwrap();
    let CellWeights::Dense(gates) = ctx.cell else { unreachable!() };
    let p = &gates[0].p;
    let sv = nalgebra::DMatrix::from_row_slice(8, 8, p.data()).singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    for x in &s[3..] {
        assert!(*x <= 1e-8 * s[0]);
    }
}

#[test]
fn constant_coefficients_reduce_to_fixed_decoder() {
    let spec = small(Variant::AdaDec, CellKind::Lstm, 4, 3);
    let ada = Model::init(spec.clone(), 50).unwrap();
    let lam = Tensor::vector(vec![0.9, -1.2, 0.4]).unwrap();
    let mut g = eval(&ada);
    let opts = ForwardOptions {
        cell_mode: CellMode::Factored,
        lambda_override: Some(lam.clone()),
    };
    let CellWeights::Dense(dense) = ada.decoder_weights(&mut g, Some(&lam), CellMode::Materialized).unwrap() else {
        unreachable!()
    };
    let mut fixed_spec = spec.clone();
    fixed_spec.variant = Variant::Seq2seq;
    let gates = fixed_spec.config.cell.gate_names();
    let fixed = model_with(fixed_spec, |name, _| {
        if let Some(rest) = name.strip_prefix("dec.") {
            let (gate, which) = rest.split_once('.').unwrap();
            let k = gates.iter().position(|x| *x == gate).unwrap();
            return match which {
                "p" => dense[k].p.clone(),
                "q" => dense[k].q.clone(),
                _ => dense[k].b.clone(),
            };
        }
        ada.params().by_name(name).unwrap().clone()
    });
    let (src, tgt, ex) = ([4u32, 5, 6, 3], [7u32, 8, 3], [9u32, 3]);

    let mut ta = Tape::new(ada.params(), Precision::F64);
    let (la, _) = ada.sequence_nll(&mut ta, &src, &tgt, Some(&ex), &opts, &mut Noise::none()).unwrap();
    let ga = ta.backward(la).unwrap();
    let mut tf = Tape::new(fixed.params(), Precision::F64);
    let (lf, _) = fixed
        .sequence_nll(&mut tf, &src, &tgt, None, &ForwardOptions::default(), &mut Noise::none())
        .unwrap();
    let gf = tf.backward(lf).unwrap();
    assert!((ta.value(&la).item().unwrap() - tf.value(&lf).item().unwrap()).abs() <= 1e-6);
    for (name, _) in fixed.params().iter() {
        if name.starts_with("dec.") {
            continue;
        }
        let a = ga.get(ada.params().id(name).unwrap());
        let f = gf.get(fixed.params().id(name).unwrap());
        assert!(a.max_abs_diff(f) <= 1e-6, "{name}");
    }
    for name in ["coef.c", "ex.fwd.wx"] {
        assert!(ga.get(ada.params().id(name).unwrap()).data().iter().all(|&v| v == 0.0));
    }
}
