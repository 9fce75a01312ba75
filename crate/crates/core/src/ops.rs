//! Tensor-in, tensor-out versions of the graph operations, for callers that
//! do not need gradients. Each one evaluates a throwaway [`Graph`], so the
//! numerics are exactly those used during training.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

fn unary(x: &Tensor, f: impl FnOnce(&mut Graph, NodeId) -> Result<NodeId>) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(x.clone());
    let y = f(&mut g, x)?;
    Ok(g.take_value(y))
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    unary(x, |g, x| g.global_avg_pool(x))
}

pub fn fully_connected(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let wn = g.constant(w.clone());
    let bn = b.map(|b| g.constant(b.clone()));
    let y = g.fully_connected(xn, wn, bn)?;
    Ok(g.take_value(y))
}

pub fn softmax(z: &Tensor) -> Result<Tensor> {
    unary(z, |g, z| g.softmax(z))
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    unary(x, |g, x| g.sigmoid(x))
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    unary(x, |g, x| g.relu(x))
}

pub fn elementwise_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let an = g.constant(a.clone());
    let bn = g.constant(b.clone());
    let y = g.add(an, bn)?;
    Ok(g.take_value(y))
}

pub fn concat_columns(columns: &[Tensor]) -> Result<Tensor> {
    let mut g = Graph::new();
    let ids: Vec<_> = columns.iter().map(|c| g.constant(c.clone())).collect();
    let y = g.concat_columns(&ids)?;
    Ok(g.take_value(y))
}

pub fn channelwise_scale(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let sn = g.constant(s.clone());
    let y = g.channelwise_scale(xn, sn)?;
    Ok(g.take_value(y))
}

pub fn conv2d(
    x: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let kn = g.constant(kernel.clone());
    let bn = bias.map(|b| g.constant(b.clone()));
    let y = g.conv2d(xn, kn, bn, stride, pad)?;
    Ok(g.take_value(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_constant_and_unit_spatial() {
        let x = Tensor::full([4, 2, 2], 3.0);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[3.0; 4]);
        let x = Tensor::new([2, 1, 1], vec![5.0, -1.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[5.0, -1.0]);
        assert!(global_avg_pool(&Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn fully_connected_trivial_cases() {
        let mut eye = Tensor::zeros([3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let y = fully_connected(&x, &eye, Some(&Tensor::zeros([3]))).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);

        let y = fully_connected(
            &Tensor::vector(vec![0.1, -4.0, 2.0, 9.0]),
            &Tensor::zeros([2, 4]),
            Some(&Tensor::vector(vec![7.0, 7.0])),
        )
        .unwrap();
        assert_eq!(y.data(), &[7.0, 7.0]);

        assert!(fully_connected(&x, &Tensor::zeros([2, 4]), None).is_err());
    }

    #[test]
    fn softmax_closed_forms() {
        let y = softmax(&Tensor::vector(vec![0.0; 4])).unwrap();
        assert_eq!(y.data(), &[0.25; 4]);
        let y = softmax(&Tensor::vector(vec![0.0, 3f64.ln()])).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-15);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);
        let a = softmax(&Tensor::vector(vec![0.3, -1.2, 2.0])).unwrap();
        let b = softmax(&Tensor::vector(vec![100.3, 98.8, 102.0])).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
        assert!(matches!(
            softmax(&Tensor::vector(vec![0.0, f64::NAN])),
            Err(crate::Error::Value(_))
        ));
    }

    #[test]
    fn channel_scale_identity_zero_and_half() {
        let x = Tensor::new([2, 1, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        assert!(channelwise_scale(&x, &Tensor::full([2], 1.0))
            .unwrap()
            .bit_eq(&x));
        let z = channelwise_scale(&x, &Tensor::zeros([2])).unwrap();
        assert!(z.data().iter().all(|v| *v == 0.0));
        let half = channelwise_scale(&x, &sigmoid(&Tensor::zeros([2])).unwrap()).unwrap();
        assert_eq!(half.data(), &[0.5, -1.0, 1.5, 2.0]);
        assert!(channelwise_scale(&x, &Tensor::zeros([3])).is_err());
    }

    #[test]
    fn conv_identity_and_constant_field() {
        let x = Tensor::new([1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let k = Tensor::full([1, 1, 1, 1], 1.0);
        assert!(conv2d(&x, &k, None, 1, 0).unwrap().bit_eq(&x));

        let v = 0.5;
        let x = Tensor::full([2, 5, 5], v);
        let k = Tensor::full([1, 2, 3, 3], 1.0);
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert!(y.data().iter().all(|&o| o == 9.0 * 2.0 * v));
        let y = conv2d(&x, &k, None, 1, 1).unwrap();
        assert_eq!(y.data()[0], 4.0 * 2.0 * v);
        assert_eq!(y.data()[6], 9.0 * 2.0 * v);
    }

    #[test]
    fn concat_and_add_shapes() {
        let m = concat_columns(&[
            Tensor::vector(vec![1.0, 2.0]),
            Tensor::vector(vec![3.0, 4.0]),
        ])
        .unwrap();
        assert_eq!(m.shape(), &[2, 2]);
        assert_eq!(m.data(), &[1.0, 3.0, 2.0, 4.0]);
        assert!(elementwise_add(&Tensor::zeros([2]), &Tensor::zeros([3])).is_err());
        assert_eq!(
            relu(&Tensor::vector(vec![-1.0, 2.0])).unwrap().data(),
            &[0.0, 2.0]
        );
    }
}
