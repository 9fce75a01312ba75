//! Checks the backward pass of a small conv + DA + softmax graph against
//! central differences.

use domattn::adapters::{da_module_node, AttentionMode, DaModuleParams};
use domattn::gradcheck::{compare_grads, finite_diff_grad};
use domattn::{Graph, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn loss(
    g: &mut Graph,
    x: Tensor,
    k: &Tensor,
    da: &DaModuleParams,
) -> Result<(domattn::NodeId, domattn::NodeId)> {
    let xn = g.param(x);
    let kn = g.constant(k.clone());
    let h = g.conv2d(xn, kn, None, 1, 1)?;
    let p = da.map(|t| g.constant(t.clone()));
    let y = da_module_node(g, h, &p)?.output;
    let pooled = g.global_avg_pool(y)?;
    Ok((xn, g.softmax_cross_entropy(pooled, 1)?))
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::uniform([3, 5, 5], -1.0, 1.0, &mut rng);
    let k = Tensor::uniform([4, 3, 3, 3], -0.5, 0.5, &mut rng);
    let mut da = DaModuleParams::init(4, 2, 3, true, AttentionMode::Learned, &mut rng);
    da.w_da = Tensor::uniform([3, 4], -1.0, 1.0, &mut rng);

    let mut g = Graph::new();
    let (xn, l) = loss(&mut g, x.clone(), &k, &da)?;
    g.backward(l)?;
    let analytic = g.grad(xn).expect("input is a parameter").to_vec();

    let numeric = finite_diff_grad(
        |xp| {
            let mut g = Graph::new();
            let (_, l) = loss(&mut g, xp.clone(), &k, &da).unwrap();
            g.value(l).item().unwrap()
        },
        &x,
        1e-3,
    );
    let cmp = compare_grads(&analytic, numeric.data(), 1e-3);
    println!("loss {:.6}", g.value(l).item()?);
    println!(
        "max relative error {:.2e}, max absolute error on small entries {:.2e}",
        cmp.max_rel, cmp.max_abs_small
    );
    println!("passes at 1e-4: {}", cmp.passes(1e-4, 1e-6));
    Ok(())
}
