//! Analytic training-loss gradients against central finite differences.

use aklab::kernels::{KernelConfig, VariantKind};

mod common;
use common::gradient_mismatch;

fn assert_gradients(cfg: KernelConfig) {
    for seed in 0..3 {
        if let Some((name, a, n)) = gradient_mismatch(&cfg, seed) {
            panic!("{} seed {seed}: {name} analytic {a:e} vs numeric {n:e}", cfg.name);
        }
    }
}

fn named(name: &str) -> KernelConfig {
    KernelConfig {
        name: name.into(),
        num_bases: 4,
        hidden: 5,
        ..KernelConfig::default()
    }
}

#[test]
fn rbf_gradient() {
    assert_gradients(named("rbf"));
}

#[test]
fn attentive_gradient_all_variants() {
    for variant in VariantKind::ALL {
        assert_gradients(KernelConfig {
            variant,
            ..named("ak")
        });
    }
}

#[test]
fn gibbs_gradient() {
    assert_gradients(named("gibbs"));
}

#[test]
fn dkl_gradient() {
    assert_gradients(named("dkl"));
}
