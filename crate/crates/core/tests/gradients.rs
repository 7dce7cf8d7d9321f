mod common;

use common::*;
use radarfall_core::diffengine::{check_gradients, Tape, Tensor};
use radarfall_core::models::LossVariant;

#[test]
fn every_primitive_passes() {
    for (name, err) in primitive_suite() {
        assert!(err <= 1e-4, "{name}: relative error {err:.3e}");
    }
}

#[test]
fn reparameterization_gradients() {
    // z = μ + exp(½ lv) ε; dz/dμ = 1 and dz/dlv = ½ σ ε.
    let eps = Tensor::row(vec![0.3, -1.2, 2.0]);
    let mu = Tensor::row(vec![0.1, 0.5, -0.7]);
    let lv = Tensor::row(vec![-0.4, 0.2, 1.1]);
    let tape = Tape::new();
    let (m, l) = (tape.param(mu), tape.param(lv.clone()));
    let z = m.add(l.scale(0.5).unwrap().exp().unwrap().mul(tape.constant(eps.clone())).unwrap()).unwrap();
    let g = z.sum().unwrap().backward().unwrap();
    for d in 0..3 {
        assert_eq!(g.get(m).values()[d], 1.0);
        let want = 0.5 * (0.5 * lv.values()[d]).exp() * eps.values()[d];
        assert!((g.get(l).values()[d] - want).abs() < 1e-12);
    }
    let report = check_gradients(&[Tensor::row(vec![0.1, 0.5, -0.7]), lv], 1e-6, 1e-6, |tape, v| {
        v[0].add(v[1].scale(0.5)?.exp()?.mul(tape.constant(eps.clone()))?)?.sum()
    })
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn full_model_gradients_on_20_instances() {
    for variant in [LossVariant::Full, LossVariant::Simplified, LossVariant::Rae] {
        for i in 0..20 {
            let err = full_model_check(variant, i);
            assert!(err <= 1e-3, "{variant:?} instance {i}: {err:.3e}");
        }
    }
}
