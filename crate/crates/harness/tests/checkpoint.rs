use igloo_core::layers::{Activation, MemoryMode};
use igloo_core::model::{BaseConfig, BasePlacement, EncoderConfig, HeadConfig, ModelConfig, Network, SeqConfig, SeqPlacement};
use igloo_core::optim::{Adam, AdamConfig};
use igloo_core::Tensor;
use igloo_harness::checkpoint::{Checkpoint, OptimizerState, VERSION};
use igloo_harness::HarnessError;
use proptest::prelude::*;

fn base_model() -> ModelConfig {
    ModelConfig {
        seq_len: 12,
        input_dim: 3,
        encoder: EncoderConfig::Base(BaseConfig {
            patches: 6,
            patch_size: 4,
            filters: 3,
            kernel_width: 3,
            stacks: 2,
            activation: Activation::Relu,
            placement: BasePlacement::Random,
        }),
        head: HeadConfig::Classify { groups: 2, classes: 4 },
        dropout: 0.0,
    }
}

fn seq_model() -> ModelConfig {
    ModelConfig {
        seq_len: 10,
        input_dim: 5,
        encoder: EncoderConfig::Seq(SeqConfig {
            patches: 3,
            patch_size: 2,
            filters: 4,
            kernel_width: 2,
            width: 4,
            stacks: 1,
            blocks: 2,
            depth: 2,
            memory: MemoryMode::PerPatch,
            placement: SeqPlacement::Gaussian { sigma: 3.0 },
            ffn_hidden: 8,
        }),
        head: HeadConfig::PerStep { classes: 5 },
        dropout: 0.0,
    }
}

fn trained_adam(net: &mut Network) -> Adam {
    let mut opt = Adam::new(AdamConfig::default(), net.params()).unwrap();
    let grads: Vec<Tensor> = net
        .params()
        .iter()
        .map(|(_, t)| Tensor::from_fn(t.dims(), |i| (i as f64 * 0.37).sin()))
        .collect();
    opt.step(net.params_mut(), grads, Some(1.0)).unwrap();
    opt
}

#[test]
fn round_trip_is_byte_identical() {
    for model in [base_model(), seq_model()] {
        let mut net = Network::new(model.clone(), 4).unwrap();
        let opt = trained_adam(&mut net);
        let ckpt = Checkpoint::capture(&net, "task = copy\n", Some(&opt));
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);

        let restored = back.restore(model).unwrap();
        assert_eq!(restored, net);
        let adam = back.restore_adam(AdamConfig::default(), &restored).unwrap().unwrap();
        assert_eq!((adam.step, &adam.m, &adam.v), (opt.step, &opt.m, &opt.v));
    }
}

#[test]
fn restored_network_predicts_identically() {
    let net = Network::new(seq_model(), 9).unwrap();
    let x = Tensor::from_fn(&[2, 10, 5], |i| ((i * 7) % 5) as f64 / 5.0);
    let restored = Checkpoint::capture(&net, "", None).restore(seq_model()).unwrap();
    assert_eq!(restored.forward(&x).unwrap(), net.forward(&x).unwrap());
}

#[test]
fn corrupt_headers_are_refused() {
    let net = Network::new(base_model(), 0).unwrap();
    let bytes = Checkpoint::capture(&net, "", None).to_bytes();

    let mut magic = bytes.clone();
    magic[0] = b'X';
    let err = Checkpoint::from_bytes(&magic).unwrap_err();
    assert!(matches!(&err, HarnessError::Checkpoint(m) if m.contains("magic")), "{err}");

    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    let err = Checkpoint::from_bytes(&version).unwrap_err();
    assert!(matches!(&err, HarnessError::Checkpoint(m) if m.contains("version")), "{err}");

    for cut in [3, 9, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(Checkpoint::from_bytes(&long).is_err());
}

#[test]
fn mismatched_model_is_refused() {
    let net = Network::new(base_model(), 0).unwrap();
    let ckpt = Checkpoint::capture(&net, "", None);
    let mut other = base_model();
    other.seq_len = 13;
    assert!(ckpt.restore(other).is_err());
    assert!(ckpt.restore(seq_model()).is_err());
}

fn tensor() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..4, 0..4).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        prop::collection::vec(prop::num::f64::ANY, n).prop_map(move |data| Tensor::new(&dims, data).unwrap())
    })
}

proptest! {
    #[test]
    fn arbitrary_contents_round_trip(
        config in ".{0,40}",
        tensors in prop::collection::vec(("[a-z.]{1,12}", tensor()), 0..5),
        step in any::<u64>(),
    ) {
        let optimizer = Some(OptimizerState {
            step,
            m: tensors.iter().map(|(_, t)| t.clone()).collect(),
            v: tensors.iter().map(|(_, t)| t.clone()).collect(),
        });
        let ckpt = Checkpoint { config, plans: Vec::new(), tensors, optimizer };
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}
