//! SE adapter, hard-switched bank and the domain-attention module on one
//! random feature map.

use domattn::adapters::{
    da_module_forward, domain_attention_weights, se_adapter_forward, se_bank_forward,
    AttentionMode, DaModuleParams, SeAdapterParams,
};
use domattn::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> domattn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (c, n) = (16, 3);
    let x = Tensor::uniform([c, 6, 6], -1.0, 1.0, &mut rng);

    let se = SeAdapterParams::init(c, 4, true, &mut rng);
    let y = se_adapter_forward(&x, &se)?;
    println!(
        "single SE: hidden width {}, {} params, |y| max {:.3}",
        se.hidden(),
        se.param_count(),
        max_abs(&y)
    );

    let mut da = DaModuleParams::init(c, 4, n, true, AttentionMode::Learned, &mut rng);
    // W_DA starts at zero, which gives uniform attention.
    println!(
        "attention at init {:?}",
        domain_attention_weights(&x, &da.w_da)?.data()
    );
    da.w_da = Tensor::uniform([n, c], -1.0, 1.0, &mut rng);
    println!(
        "attention after perturbing W_DA {:?}",
        round(domain_attention_weights(&x, &da.w_da)?.data())
    );

    for i in 0..n {
        da.mode = AttentionMode::Forced(i);
        let soft = da_module_forward(&x, &da)?;
        let hard = se_bank_forward(&x, &da.adapters, i)?;
        println!(
            "forced({i}) vs bank[{i}]: max diff {:.1e}",
            soft.max_abs_diff(&hard)
        );
    }
    Ok(())
}

fn max_abs(t: &Tensor) -> f64 {
    t.data().iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
