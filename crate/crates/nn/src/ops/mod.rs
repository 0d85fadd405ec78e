//! Differentiable tensor ops. Each op computes its forward value eagerly and
//! records a backward closure on the [`Graph`](crate::Graph).

pub mod conv;
pub mod elementwise;
pub mod norm;
pub mod pool;
pub mod resize;

pub use conv::{conv2d, conv2d_backward, conv2d_forward};
pub use elementwise::{add, cat_channels, mul, relu, relu6, sigmoid, sigmoid_scalar};
pub use norm::{batch_norm, BatchStats};
pub use pool::{adaptive_avg_pool2d, max_pool2d};
pub use resize::{linear_taps, resize_bilinear, upsample_nearest};

#[cfg(test)]
mod gradcheck {
    //! Central finite differences against every op's backward closure.
    use super::*;
    use crate::graph::{Graph, Var};
    use crate::params::ConvSpec;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect())
    }

    /// Builds `f` on leaves, reduces with a fixed random projection, and
    /// compares analytic and numeric gradients for every leaf.
    fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::new();
        let leaves: Vec<Var> = inputs.iter().cloned().map(|t| g.leaf(t)).collect();
        let out = f(&mut g, &leaves);
        let proj = random(out.shape(), &mut rng);
        let grads = g.backward(&out, proj.clone());

        let objective = |ins: &[Tensor]| -> f64 {
            let mut g = Graph::inference();
            let vs: Vec<Var> = ins.iter().cloned().map(Var::constant).collect();
            let o = f(&mut g, &vs);
            o.value()
                .data()
                .iter()
                .zip(proj.data())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum()
        };

        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.of(leaf).expect("leaf gradient").clone();
            let n = inputs[li].numel();
            let picks: Vec<usize> = (0..n.min(24)).map(|i| (i * 7919) % n).collect();
            for &i in &picks {
                let h = 1e-2f32;
                let mut plus = inputs.clone();
                plus[li].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[li].data_mut()[i] -= h;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h as f64);
                let a = analytic.data()[i] as f64;
                let err = (a - numeric).abs() / (1.0f64).max(a.abs()).max(numeric.abs());
                assert!(err < tol, "leaf {li} index {i}: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in [
            ConvSpec::new(3, 4, 3),
            ConvSpec::new(3, 4, 3).stride(2),
            ConvSpec::new(4, 2, 1),
            ConvSpec::new(4, 4, 3).groups(2),
            ConvSpec::depthwise(3, 3).stride(2),
            ConvSpec::depthwise(3, 5),
            ConvSpec::depthwise(2, 3).dilation(2),
        ] {
            let x = random(&[2, spec.in_channels, 7, 6], &mut rng);
            let w = random(&[spec.out_channels, spec.in_channels / spec.groups, spec.kernel, spec.kernel], &mut rng);
            let b = random(&[spec.out_channels], &mut rng);
            check(vec![x, w, b], |g, v| conv2d(g, &v[0], &v[1], Some(&v[2]), spec), 2e-2);
        }
    }

    #[test]
    fn batch_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[3, 2, 4, 3], &mut rng);
        let gamma = random(&[2], &mut rng);
        let beta = random(&[2], &mut rng);
        let rm = Tensor::from_vec(&[2], vec![0.1, -0.2]);
        let rv = Tensor::from_vec(&[2], vec![0.5, 2.0]);
        for training in [true, false] {
            let (rm, rv) = (rm.clone(), rv.clone());
            check(
                vec![x.clone(), gamma.clone(), beta.clone()],
                move |g, v| batch_norm(g, &v[0], &v[1], &v[2], (&rm, &rv), 1e-5, training).0,
                2e-2,
            );
        }
    }

    #[test]
    fn activation_and_broadcast_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 3, 4, 4], &mut rng).map(|v| v * 8.0);
        check(vec![x.clone()], |g, v| relu6(g, &v[0]), 1e-2);
        check(vec![x.clone()], |g, v| sigmoid(g, &v[0]), 1e-2);
        let ch = random(&[2, 3, 1, 1], &mut rng);
        let sp = random(&[2, 1, 4, 4], &mut rng);
        check(vec![x.clone(), ch], |g, v| mul(g, &v[0], &v[1]), 1e-2);
        check(vec![x.clone(), sp], |g, v| mul(g, &v[0], &v[1]), 1e-2);
        let y = random(&[2, 3, 4, 4], &mut rng);
        check(vec![x.clone(), y.clone()], |g, v| add(g, &v[0], &v[1]), 1e-2);
        check(vec![x, y], |g, v| cat_channels(g, &[&v[0], &v[1]]), 1e-2);
    }

    #[test]
    fn resampling_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[1, 2, 5, 6], &mut rng);
        check(vec![x.clone()], |g, v| upsample_nearest(g, &v[0], 2), 1e-2);
        check(vec![x.clone()], |g, v| resize_bilinear(g, &v[0], 9, 4), 1e-2);
        check(vec![x.clone()], |g, v| adaptive_avg_pool2d(g, &v[0], 3, 2), 1e-2);
        // distinct, well-separated values keep the argmax stable under perturbation
        let n = x.numel();
        let spaced = Tensor::from_vec(x.shape(), (0..n).map(|i| ((i * 37) % n) as f32 * 0.1).collect());
        check(vec![spaced], |g, v| max_pool2d(g, &v[0], 3, 2, 1), 1e-2);
    }

    #[test]
    fn gradient_accumulates_over_shared_parents() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]));
        let y = add(&mut g, &x, &x);
        let grads = g.backward(&y, Tensor::full(&[1, 1, 1, 2], 1.0));
        assert_eq!(grads.of(&x).unwrap().data(), &[2.0, 2.0]);
    }
}
