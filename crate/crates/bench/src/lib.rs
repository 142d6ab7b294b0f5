//! Fixtures shared by the benchmarks.

use adc_core::{Architecture, LabeledDataset, Network, PrototypeStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub net: Network,
    pub data: LabeledDataset,
    pub store: PrototypeStore,
}

/// A conv network on 28x28 inputs with `classes` output units and a random batch.
pub fn conv_fixture(n: usize, classes: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture::Conv {
        channels: 8,
        kernel: 3,
        feature_dim: 64,
    };
    let mut net = Network::new(&[1, 28, 28], &arch, &mut rng).expect("valid architecture");
    net.extend_head(classes, &mut rng);
    let x: Vec<f32> = (0..n * 784).map(|_| rng.random_range(0.0..1.0)).collect();
    let samples = Tensor::new(vec![n, 1, 28, 28], x).expect("shape");
    let labels = (0..n).map(|i| i % classes).collect();
    let data = LabeledDataset::new(samples, labels, (0.0, 1.0)).expect("dataset");
    let store = adc_core::proto::compute_prototypes(&net, &data, 0).expect("prototypes");
    Fixture { net, data, store }
}

/// `classes` random prototypes in `dim` dimensions.
pub fn random_store(classes: usize, dim: usize, seed: u64) -> PrototypeStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = PrototypeStore::new(dim);
    for c in 0..classes {
        let v = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        store.insert(c, v, 0, 0).expect("dimension matches");
    }
    store
}
