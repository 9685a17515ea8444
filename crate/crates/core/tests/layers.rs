mod common;

use std::sync::Arc;

use common::{base, conv, max_diff, random, seq_attention, seq_logits, to_tensor};
use igloo_core::autodiff::{ParamStore, Tape};
use igloo_core::layers::{
    igloo_base_core_params, param_breakdown, seq_attend, Activation, Conv1d, IglooBase, IglooSeqLayer, IglooStack,
    MemoryMode, SeqBlock, SeqLayerDims,
};
use igloo_core::model::{BaseConfig, BasePlacement, EncoderConfig, HeadConfig, ModelConfig, Network, SeqConfig, SeqPlacement};
use igloo_core::plan::{make_causal_seq_plan, make_random_plan, make_uniform_seq_plan};
use igloo_core::tasks::{Batch, BatchTargets};
use igloo_core::{tensor, Error, Real, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn base_layer(store: &mut ParamStore, name: &str, l: usize, m: usize, k: usize, j: usize, seed: u64) -> IglooBase {
    let mut r = rng(seed);
    let c = Conv1d::new(store, &format!("{name}.conv"), 3, m, k, &mut r).unwrap();
    let plan = Arc::new(make_random_plan(l, j, 4, seed).unwrap());
    IglooBase::new(store, name, c, plan, Activation::Relu, &mut r).unwrap()
}

#[test]
fn base_matches_naive_loop() {
    let mut store = ParamStore::new();
    let layer = base_layer(&mut store, "b", 16, 3, 5, 7, 1);
    let x = random(&[16, 3], 2);
    let f = conv(&x, store.get(layer.conv.kernel), store.get(layer.conv.bias));
    let want = base(&f, &layer.plan, store.get(layer.filter), store.get(layer.bias), true);
    let got = layer.forward(&store, &x).unwrap();
    assert_eq!(got.dims(), &[7]);
    assert!(max_diff(&[want], &got) < 1e-12);
}

#[test]
fn base_counting_and_bias_passthrough() {
    let (l, m, k, j, p) = (9, 2, 3, 4, 4);
    let mut store = ParamStore::new();
    let c = Conv1d::new(&mut store, "c", 1, m, k, &mut rng(0)).unwrap();
    let plan = Arc::new(make_random_plan(l, j, p, 0).unwrap());
    let layer = IglooBase::new(&mut store, "b", c, plan, Activation::Identity, &mut rng(0)).unwrap();
    // zero kernel and unit bias force F to all ones
    *store.get_mut(layer.conv.kernel) = Tensor::zeros(&[1, m, k]);
    *store.get_mut(layer.conv.bias) = Tensor::ones(&[k]);
    *store.get_mut(layer.filter) = Tensor::ones(&[p, k, j]);
    *store.get_mut(layer.bias) = Tensor::zeros(&[j]);
    let x = random(&[l, m], 3);
    let u = layer.forward(&store, &x).unwrap();
    assert_eq!(u.data(), vec![(p * k) as Real; j].as_slice());

    let bias = Tensor::new(&[j], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
    *store.get_mut(layer.filter) = Tensor::zeros(&[p, k, j]);
    *store.get_mut(layer.bias) = bias.clone();
    let u = layer.forward(&store, &random(&[l, m], 4)).unwrap();
    assert_eq!(u, bias);
}

fn stack3(store: &mut ParamStore) -> IglooStack {
    let layers = vec![
        base_layer(store, "s0", 14, 2, 4, 5, 10),
        base_layer(store, "s1", 14, 4, 4, 5, 11),
        base_layer(store, "s2", 14, 4, 4, 5, 12),
    ];
    IglooStack::new(layers).unwrap()
}

#[test]
fn stack_equals_manual_composition() {
    let mut store = ParamStore::new();
    let stack = stack3(&mut store);
    let x = random(&[14, 2], 13);
    let mut f = x.clone();
    let mut want = Vec::new();
    for layer in stack.layers() {
        let rows = conv(&f, store.get(layer.conv.kernel), store.get(layer.conv.bias));
        want.extend(base(&rows, &layer.plan, store.get(layer.filter), store.get(layer.bias), true));
        f = to_tensor(&rows);
    }
    let got = stack.forward(&store, &x).unwrap();
    assert_eq!(got.dims(), &[15]);
    assert!(max_diff(&[want], &got) < 1e-12);
}

#[test]
fn single_layer_stack_is_the_layer() {
    let mut store = ParamStore::new();
    let layer = base_layer(&mut store, "b", 10, 2, 3, 4, 20);
    let stack = IglooStack::new(vec![layer.clone()]).unwrap();
    let x = random(&[10, 2], 21);
    assert_eq!(stack.forward(&store, &x).unwrap(), layer.forward(&store, &x).unwrap());
}

#[test]
fn zero_second_layer_pads_with_zeros() {
    let mut store = ParamStore::new();
    let first = base_layer(&mut store, "a", 10, 2, 3, 4, 30);
    let second = base_layer(&mut store, "b", 10, 3, 3, 4, 31);
    *store.get_mut(second.filter) = Tensor::zeros(&[4, 3, 4]);
    *store.get_mut(second.bias) = Tensor::zeros(&[4]);
    let stack = IglooStack::new(vec![first.clone(), second]).unwrap();
    let x = random(&[10, 2], 32);
    let got = stack.forward(&store, &x).unwrap();
    let u1 = first.forward(&store, &x).unwrap();
    assert_eq!(&got.data()[..4], u1.data());
    assert_eq!(&got.data()[4..], &[0.0; 4]);
}

#[test]
fn stack_rejects_channel_mismatch() {
    let mut store = ParamStore::new();
    let a = base_layer(&mut store, "a", 10, 2, 3, 4, 0);
    let b = base_layer(&mut store, "b", 10, 5, 3, 4, 0);
    assert!(matches!(IglooStack::new(vec![a, b]), Err(Error::Config(_))));
}

struct SeqSetup {
    store: ParamStore,
    layer: IglooSeqLayer,
}

fn seq_setup(l: usize, m: usize, z: usize, blocks: usize, stacks: usize, mode: MemoryMode, seed: u64) -> SeqSetup {
    let (k, j) = (4, 5);
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let mut bs = Vec::new();
    for b in 0..blocks {
        let mut convs = Vec::new();
        let mut plans = Vec::new();
        for s in 0..stacks {
            let cin = if s == 0 { m } else { k };
            convs.push(Conv1d::new(&mut store, &format!("b{b}.conv{s}"), 3, cin, k, &mut r).unwrap());
            plans.push(Arc::new(make_uniform_seq_plan(l, j, 3, seed + (b * 7 + s) as u64).unwrap()));
        }
        bs.push(SeqBlock::new(&mut store, &format!("b{b}"), convs, plans, &mut r).unwrap());
    }
    let dims = SeqLayerDims { seq_len: l, input_dim: m, filters: k, width: z, ffn_hidden: 4 * z };
    let layer = IglooSeqLayer::new(&mut store, "seq", dims, bs, mode, &mut r).unwrap();
    SeqSetup { store, layer }
}

#[test]
fn seq_attention_matches_per_step_loop() {
    let s = seq_setup(12, 3, 6, 1, 1, MemoryMode::PerPatch, 40);
    let store = &s.store;
    let block = &s.layer.blocks[0];
    let x = random(&[12, 3], 41);
    let f = conv(&x, store.get(block.convs[0].kernel), store.get(block.convs[0].bias));
    let logits = seq_logits(&f, &block.plans[0], store.get(block.filters[0]), store.get(block.biases[0]));
    let want = seq_attention(&f, &logits, store.get(s.layer.value), store.get(s.layer.bank));
    let got = s.layer.attend(store, &x).unwrap();
    assert_eq!(got.dims(), &[12, 6]);
    assert!(max_diff(&want, &got) < 1e-12);
}

#[test]
fn seq_layer_matches_loop_with_residual_and_ffn() {
    let s = seq_setup(10, 3, 4, 2, 1, MemoryMode::PerPatch, 50);
    let store = &s.store;
    let x = random(&[10, 3], 51);
    let xrows: Vec<Vec<Real>> = x.data().chunks(3).map(<[Real]>::to_vec).collect();
    let mut y = common::matmul_rows(&xrows, store.get(s.layer.projection.unwrap()));
    for block in &s.layer.blocks {
        let f = conv(&x, store.get(block.convs[0].kernel), store.get(block.convs[0].bias));
        let logits = seq_logits(&f, &block.plans[0], store.get(block.filters[0]), store.get(block.biases[0]));
        let out = seq_attention(&f, &logits, store.get(s.layer.value), store.get(s.layer.bank));
        for (row, o) in y.iter_mut().zip(out) {
            for (a, b) in row.iter_mut().zip(o) {
                *a += b;
            }
        }
    }
    let (w1, b1) = (store.get(s.layer.ffn.inner.weight), store.get(s.layer.ffn.inner.bias));
    let (w2, b2) = (store.get(s.layer.ffn.outer.weight), store.get(s.layer.ffn.outer.bias));
    let hidden: Vec<Vec<Real>> = common::matmul_rows(&y, w1)
        .into_iter()
        .map(|r| r.iter().zip(b1.data()).map(|(v, b)| (v + b).max(0.0)).collect())
        .collect();
    let outer = common::matmul_rows(&hidden, w2);
    let want: Vec<Vec<Real>> = y
        .iter()
        .zip(outer)
        .map(|(yr, or)| yr.iter().zip(or).zip(b2.data()).map(|((a, o), b)| a + o + b).collect())
        .collect();
    let got = s.layer.forward(store, &x).unwrap();
    assert!(max_diff(&want, &got) < 1e-12);
}

#[test]
fn uniform_logits_average_the_two_bank_rows() {
    let bank = Tensor::new(&[1, 2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
    let fw = random(&[5, 3], 60);
    let attn = tensor::softmax_lastaxis(&Tensor::zeros(&[5, 2])).unwrap();
    let out = seq_attend(&fw, &attn, &bank, MemoryMode::PerPatch).unwrap();
    let mean = [0.0, 1.25, 3.5];
    for t in 0..5 {
        for z in 0..3 {
            assert!((out.at(&[t, z]) - fw.at(&[t, z]) * mean[z]).abs() < 1e-15);
        }
    }
}

#[test]
fn literal_bank_makes_the_logits_irrelevant() {
    let s = seq_setup(11, 3, 4, 1, 1, MemoryMode::Literal, 70);
    let store = &s.store;
    let block = &s.layer.blocks[0];
    let x = random(&[11, 3], 71);
    let (f, logits) = block.logits(store, &x).unwrap();
    let fw = tensor::matmul(&f, store.get(s.layer.value)).unwrap();
    let bank = store.get(s.layer.bank);
    let real = seq_attend(&fw, &tensor::softmax_lastaxis(&logits).unwrap(), bank, MemoryMode::Literal).unwrap();
    assert!(real.max_abs_diff(&s.layer.attend(store, &x).unwrap()).unwrap() < 1e-12);
    for seed in 0..20 {
        let noise = random(logits.dims(), 100 + seed).map(|v| 30.0 * v);
        let attn = tensor::softmax_lastaxis(&noise).unwrap();
        let out = seq_attend(&fw, &attn, bank, MemoryMode::Literal).unwrap();
        assert!(out.max_abs_diff(&real).unwrap() < 1e-10);
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let s = seq_setup(9, 3, 4, 2, 2, MemoryMode::PerPatch, 80);
    let x = random(&[3, 9, 3], 81);
    for a in s.layer.attention(&s.store, &x).unwrap() {
        assert_eq!(a.dims(), &[3, 9, 10]);
        for row in a.data().chunks(10) {
            assert!((row.iter().sum::<Real>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn eager_and_taped_forwards_agree() {
    let mut store = ParamStore::new();
    let stack = stack3(&mut store);
    let x = random(&[2, 14, 2], 90);
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let y = stack.forward_taped(&mut tape, &vars, xv, None).unwrap();
    let eager = stack.forward(&store, &x).unwrap();
    assert!(tape.value(y).max_abs_diff(&eager).unwrap() < 1e-12);

    for mode in [MemoryMode::PerPatch, MemoryMode::Literal] {
        let s = seq_setup(10, 3, 5, 2, 2, mode, 91);
        let x = random(&[2, 10, 3], 92);
        let mut tape = Tape::new();
        let vars = s.store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = s.layer.forward_taped(&mut tape, &vars, xv, None).unwrap();
        let eager = s.layer.forward(&s.store, &x).unwrap();
        assert!(tape.value(y).max_abs_diff(&eager).unwrap() < 1e-12, "{mode:?}");
    }
}

#[test]
fn batched_forward_matches_per_sample() {
    let s = seq_setup(8, 3, 3, 1, 2, MemoryMode::PerPatch, 95);
    let x = random(&[3, 8, 3], 96);
    let all = s.layer.forward(&s.store, &x).unwrap();
    for b in 0..3 {
        let one = Tensor::new(&[8, 3], x.data()[b * 24..(b + 1) * 24].to_vec()).unwrap();
        let y = s.layer.forward(&s.store, &one).unwrap();
        assert_eq!(y.data(), &all.data()[b * 24..(b + 1) * 24]);
    }
}

#[test]
fn output_shape_does_not_depend_on_block_count() {
    let x = random(&[10, 3], 97);
    for k in 1..4 {
        let s = seq_setup(10, 3, 6, k, 1, MemoryMode::PerPatch, 98);
        assert_eq!(s.layer.forward(&s.store, &x).unwrap().dims(), &[10, 6]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn seq_layer_is_causal(seed in 0u64..1000, t in 0usize..12, stacks in 1usize..3) {
        let s = seq_setup(12, 3, 3, 2, stacks, MemoryMode::PerPatch, seed);
        let x = random(&[12, 3], seed + 1);
        let mut y = random(&[12, 3], seed + 2);
        y.data_mut()[..(t + 1) * 3].copy_from_slice(&x.data()[..(t + 1) * 3]);
        let a = s.layer.forward(&s.store, &x).unwrap();
        let b = s.layer.forward(&s.store, &y).unwrap();
        prop_assert_eq!(&a.data()[..(t + 1) * 3], &b.data()[..(t + 1) * 3]);
    }

    #[test]
    fn core_count_is_jkp_plus_j(j in 1usize..50, k in 1usize..8, p in 1usize..6, l in 6usize..40) {
        let mut store = ParamStore::new();
        let mut r = rng(0);
        let c = Conv1d::new(&mut store, "c", 2, 1, k, &mut r).unwrap();
        let plan = Arc::new(make_random_plan(l, j, p, 0).unwrap());
        let layer = IglooBase::new(&mut store, "b", c, plan, Activation::Relu, &mut r).unwrap();
        prop_assert_eq!(layer.core_params(&store), j * k * p + j);
        prop_assert_eq!(igloo_base_core_params(j, k, p), j * k * p + j);
    }
}

#[test]
fn core_parameter_examples() {
    assert_eq!(igloo_base_core_params(100, 5, 4), 2100);
    assert_eq!(igloo_base_core_params(1, 1, 1), 2);
}

fn copy_like(seq_len: usize) -> ModelConfig {
    ModelConfig {
        seq_len,
        input_dim: 10,
        encoder: EncoderConfig::Base(BaseConfig {
            patches: 100,
            patch_size: 4,
            filters: 5,
            kernel_width: 3,
            stacks: 1,
            activation: Activation::Relu,
            placement: BasePlacement::Random,
        }),
        head: HeadConfig::Classify { groups: 10, classes: 8 },
        dropout: 0.0,
    }
}

#[test]
fn core_count_is_independent_of_sequence_length() {
    for l in [50, 1000, 20_000] {
        let net = Network::new(copy_like(l), 0).unwrap();
        assert_eq!(net.core_param_counts(), vec![2100]);
    }
}

#[test]
fn total_count_equals_enumeration() {
    let cfgs = [copy_like(50), seq_config(HeadConfig::PerStep { classes: 7 })];
    for cfg in cfgs {
        let net = Network::new(cfg, 1).unwrap();
        let enumerated: usize = net.params().iter().map(|(_, t)| t.dims().iter().product::<usize>()).sum();
        assert_eq!(net.param_count(), enumerated);
        let grouped: usize = param_breakdown(net.params()).iter().map(|(_, n)| n).sum();
        assert_eq!(grouped, enumerated);
    }
}

fn seq_config(head: HeadConfig) -> ModelConfig {
    ModelConfig {
        seq_len: 16,
        input_dim: 4,
        encoder: EncoderConfig::Seq(SeqConfig {
            patches: 6,
            patch_size: 3,
            filters: 4,
            kernel_width: 3,
            width: 8,
            stacks: 2,
            blocks: 2,
            depth: 2,
            memory: MemoryMode::PerPatch,
            placement: SeqPlacement::Gaussian { sigma: 4.0 },
            ffn_hidden: 32,
        }),
        head,
        dropout: 0.0,
    }
}

#[test]
fn network_output_shapes() {
    let x = random(&[3, 50, 10], 1);
    let net = Network::new(copy_like(50), 0).unwrap();
    assert_eq!(net.forward(&x).unwrap().dims(), &[30, 8]);
    let x = random(&[3, 16, 4], 2);
    let per_step = Network::new(seq_config(HeadConfig::PerStep { classes: 7 }), 0).unwrap();
    assert_eq!(per_step.encode(&x).unwrap().dims(), &[3, 16, 8]);
    assert_eq!(per_step.forward(&x).unwrap().dims(), &[48, 7]);
    let regress = Network::new(seq_config(HeadConfig::Regress { outputs: 1 }), 0).unwrap();
    assert_eq!(regress.forward(&x).unwrap().dims(), &[3, 1]);
}

#[test]
fn zero_weight_classifier_has_uniform_cross_entropy() {
    let mut net = Network::new(copy_like(50), 0).unwrap();
    let (w, b) = (net.head().weight, net.head().bias);
    let (wd, bd) = (net.params().get(w).dims().to_vec(), net.params().get(b).dims().to_vec());
    *net.params_mut().get_mut(w) = Tensor::zeros(&wd);
    *net.params_mut().get_mut(b) = Tensor::zeros(&bd);
    let batch = Batch {
        inputs: random(&[2, 50, 10], 3),
        targets: BatchTargets::Classes((0..20).map(|i| i % 8).collect()),
    };
    let score = net.score(&batch).unwrap();
    assert!((score.loss() - (8.0 as Real).ln()).abs() < 1e-12);
}

#[test]
fn regression_head_on_zero_representation_predicts_its_bias() {
    let mut net = Network::new(seq_config(HeadConfig::Regress { outputs: 1 }), 0).unwrap();
    let (w, b) = (net.head().weight, net.head().bias);
    let wd = net.params().get(w).dims().to_vec();
    *net.params_mut().get_mut(w) = Tensor::zeros(&wd);
    *net.params_mut().get_mut(b) = Tensor::new(&[1], vec![0.75]).unwrap();
    let y = [0.25, 1.5];
    let batch = Batch {
        inputs: random(&[2, 16, 4], 4),
        targets: BatchTargets::Values(Tensor::new(&[2, 1], y.to_vec()).unwrap()),
    };
    assert!(net.forward(&batch.inputs).unwrap().data().iter().all(|&v| v == 0.75));
    let want = y.iter().map(|v| (0.75 - v) * (0.75 - v)).sum::<Real>() / 2.0;
    assert!((net.score(&batch).unwrap().loss() - want).abs() < 1e-12);
}

#[test]
fn out_of_range_class_is_a_data_error() {
    let net = Network::new(copy_like(50), 0).unwrap();
    let batch = Batch {
        inputs: random(&[1, 50, 10], 5),
        targets: BatchTargets::Classes(vec![8; 10]),
    };
    assert!(matches!(net.score(&batch), Err(Error::Data(_))));
}

#[test]
fn plans_with_wrong_dimensions_are_rejected() {
    let mut net = Network::new(copy_like(50), 0).unwrap();
    let wrong = vec![igloo_core::model::Plan::Global(Arc::new(make_random_plan(50, 99, 4, 0).unwrap()))];
    assert!(net.set_plans(wrong).is_err());
    let seq = vec![igloo_core::model::Plan::PerStep(Arc::new(make_causal_seq_plan(50, 100, 4, 2.0, 0).unwrap()))];
    assert!(net.set_plans(seq).is_err());
    let same = net.plans();
    net.set_plans(same).unwrap();
}
