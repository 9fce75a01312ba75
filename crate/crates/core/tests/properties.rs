mod common;

use common::{random_da, rng, uniform};
use domattn::adapters::{
    adapter_param_count, da_module_forward, da_module_node, se_bank_forward, AttentionMode,
    DaModuleParams, SeAdapterParams,
};
use domattn::data::{generate_domain, presets, DatasetRegistry, DomainDataset};
use domattn::{ops, Graph, Tensor};
use proptest::prelude::*;

fn modes(n: usize) -> Vec<AttentionMode> {
    let mut m = vec![AttentionMode::Learned, AttentionMode::FixedAverage];
    m.extend((0..n).map(AttentionMode::Forced));
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = ops::softmax(&Tensor::vector(z)).unwrap();
        prop_assert!(p.data().iter().all(|v| *v > 0.0));
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn forced_routing_equals_hard_bank(
        c in prop::sample::select(vec![4usize, 16, 64]),
        n in prop::sample::select(vec![1usize, 3, 5]),
        pick in 0usize..5,
        seed in any::<u64>(),
    ) {
        let i = pick % n;
        let p = random_da(c, n, seed, AttentionMode::Forced(i));
        let x = uniform(&[c, 3, 3], -2.0, 2.0, seed ^ 1);
        let soft = da_module_forward(&x, &p).unwrap();
        let hard = se_bank_forward(&x, &p.adapters, i).unwrap();
        prop_assert!(soft.max_abs_diff(&hard) <= 1e-15);
    }

    #[test]
    fn mixture_is_convex_and_output_bounded(
        c in 1usize..12,
        n in 1usize..5,
        seed in any::<u64>(),
    ) {
        let x = uniform(&[c, 2, 3], -3.0, 3.0, seed ^ 2);
        for mode in modes(n) {
            let p = random_da(c, n, seed, mode);
            let mut g = Graph::new();
            let xn = g.constant(x.clone());
            let pn = p.map(|t| g.constant(t.clone()));
            let out = da_module_node(&mut g, xn, &pn).unwrap();
            let bank = g.value(out.bank).data();
            let mixed = g.value(out.mixed).data();
            for ch in 0..c {
                let col = &bank[ch * n..(ch + 1) * n];
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
                prop_assert!(mixed[ch] >= lo - slack && mixed[ch] <= hi + slack);
            }
            let s = g.value(out.attention).data();
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (o, xi) in g.value(out.output).data().iter().zip(x.data()) {
                prop_assert!(o.abs() <= xi.abs());
            }
        }
    }

    #[test]
    fn permuting_adapters_with_attention_rows_is_invariant(
        c in 2usize..10,
        n in 2usize..6,
        rot in 1usize..5,
        seed in any::<u64>(),
    ) {
        let p = random_da(c, n, seed, AttentionMode::Learned);
        let x = uniform(&[c, 3, 2], -2.0, 2.0, seed ^ 3);
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let mut q = p.clone();
        q.adapters = perm.iter().map(|&i| p.adapters[i].clone()).collect();
        let mut w = Vec::with_capacity(n * c);
        for &i in &perm {
            w.extend_from_slice(&p.w_da.data()[i * c..(i + 1) * c]);
        }
        q.w_da = Tensor::new(vec![n, c], w).unwrap();
        let a = da_module_forward(&x, &p).unwrap();
        let b = da_module_forward(&x, &q).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn tensor_rejects_mismatched_lengths(dims in prop::collection::vec(1usize..5, 1..4), extra in 1usize..3) {
        let n: usize = dims.iter().product();
        prop_assert!(Tensor::new(dims.clone(), vec![0.0; n]).is_ok());
        prop_assert!(Tensor::new(dims, vec![0.0; n + extra]).is_err());
    }
}

fn small_domains(sizes: &[usize]) -> Vec<DomainDataset> {
    sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut s = presets::default6().remove(i);
            s.sizes.train = n;
            s.sizes.test = 2;
            generate_domain(&s).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampler_visits_every_sample_once_in_single_domain_batches(
        sizes in prop::collection::vec(1usize..30, 1..5),
        batch in 1usize..9,
        seed in any::<u64>(),
    ) {
        let sets = small_domains(&sizes);
        let mut reg = DatasetRegistry::new(&sets, batch).unwrap();
        let mut r = rng(seed);
        reg.start_epoch(&mut r);
        let mut counts = vec![0usize; sets.len()];
        let mut seen: Vec<Vec<bool>> = sizes.iter().map(|&n| vec![false; n]).collect();
        while let Some(b) = reg.sample_batch(&mut r) {
            prop_assert!(!b.indices.is_empty() && b.indices.len() <= batch);
            let ids: Vec<usize> = reg.samples(&b).map(|_| sets[b.dataset].spec.domain_id).collect();
            prop_assert!(ids.iter().all(|&d| d == ids[0]));
            for &i in &b.indices {
                prop_assert!(!seen[b.dataset][i]);
                seen[b.dataset][i] = true;
            }
            counts[b.dataset] += b.indices.len();
        }
        prop_assert_eq!(counts, sizes);
    }

    #[test]
    fn generation_is_a_pure_function_of_the_spec(seed in any::<u64>(), which in 0usize..6) {
        let mut spec = presets::default6().remove(which);
        spec.seed = seed;
        spec.sizes.train = 3;
        spec.sizes.val = 1;
        spec.sizes.test = 2;
        let a = generate_domain(&spec).unwrap();
        let b = generate_domain(&spec).unwrap();
        prop_assert_eq!(a.digest(), b.digest());
        prop_assert!(a.train.iter().chain(&a.test).all(|s| s.bbox.is_inside_unit_square()));
        spec.seed = seed.wrapping_add(1);
        prop_assert_ne!(generate_domain(&spec).unwrap().digest(), a.digest());
    }
}

#[test]
fn adapter_param_count_matches_enumeration() {
    for c in [4, 16, 64] {
        for r in [2, 16, 64] {
            for n in [1, 3, 5] {
                let p = DaModuleParams::init(c, r, n, true, AttentionMode::Learned, &mut rng(0));
                let enumerated: usize = p
                    .adapters
                    .iter()
                    .flat_map(|a| a.handles())
                    .map(|(_, t)| t.numel())
                    .sum::<usize>()
                    + p.w_da.numel();
                assert_eq!(
                    adapter_param_count(c, r, n, true, true),
                    enumerated,
                    "C={c} r={r} N={n}"
                );
                let bare: usize = (0..n)
                    .map(|_| SeAdapterParams::init(c, r, false, &mut rng(1)))
                    .flat_map(|a| [a.w1.numel(), a.w2.numel()])
                    .sum();
                assert_eq!(adapter_param_count(c, r, n, false, false), bare);
            }
        }
    }
}
