mod common;

use common::*;
use domattn::Tensor;

#[test]
fn every_op_matches_finite_differences() {
    for op in OPS {
        let mut total = GradReport::default();
        for seed in 0..20 {
            let r = check_named_op(op, seed);
            assert!(r.passes(), "{op} seed {seed}: {r:?}");
            total = total.merge(r);
        }
        assert!(total.skipped * 100 <= total.checked, "{op}: {total:?}");
    }
}

#[test]
fn two_block_da_network_matches_finite_differences() {
    for seed in 0..20 {
        let net = random_da_network(seed);
        let image = Tensor::uniform([3, 8, 8], 0.0, 1.0, &mut rng(seed + 100));
        let r = check_network(&net, &image, (seed % 3) as usize);
        assert!(r.passes(), "seed {seed}: {r:?}");
        assert!(r.skipped * 100 <= r.checked, "seed {seed}: {r:?}");
    }
}

#[test]
fn kink_crossings_are_refined_not_hidden() {
    // a ReLU input within h of zero forces a smaller step
    let x = Tensor::vector(vec![5e-4, -0.3, 0.7]);
    let r = check_op(&[x], 0, &|g, x| g.relu(x[0]));
    assert!(r.passes(), "{r:?}");
    assert_eq!(r.refined, 1);
    assert_eq!(r.checked, 3);
}
