//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] is rebuilt for every mini-batch. Parameters live outside the
//! graph as plain [`Tensor`]s; each step registers them with
//! [`Graph::param`], evaluates the loss, calls [`Graph::backward`] and hands
//! the gradients to [`AdamState`].

mod adam;
mod graph;

pub use adam::AdamState;
pub use graph::{Activation, Gradients, Graph, Var};

use crate::{Result, Tensor};

/// Evaluates a dense layer outside of any training graph.
pub fn forward_dense(weights: &Tensor, bias: &Tensor, input: &Tensor, activation: Activation) -> Result<Tensor> {
    let mut g = Graph::new();
    let (w, b, x) = (g.constant(weights.clone()), g.constant(bias.clone()), g.constant(input.clone()));
    let y = g.dense(x, w, b, activation)?;
    Ok(g.value(y).clone())
}

/// Evaluates a valid 2-D convolution outside of any training graph.
pub fn forward_conv2d(kernels: &Tensor, bias: &Tensor, input: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (k, b, x) = (g.constant(kernels.clone()), g.constant(bias.clone()), g.constant(input.clone()));
    let y = g.conv2d(x, k, b)?;
    Ok(g.value(y).clone())
}

/// `X` with `A X = B`.
pub fn matrix_solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    crate::linalg::solve(a, b)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::Error;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = seeded(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_spd(n: usize, seed: u64) -> Tensor {
        let a = random(&[n, n], seed);
        let mut s = a.matmul(&a.transpose().unwrap()).unwrap();
        for i in 0..n {
            s.data_mut()[i * n + i] += n as f64;
        }
        s
    }

    #[test]
    fn dense_identity_relu_softmax() {
        let id = Tensor::identity(2);
        let zero = Tensor::zeros(&[2]);
        let x = Tensor::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        assert_eq!(forward_dense(&id, &zero, &x, Activation::Identity).unwrap(), x);
        let r = forward_dense(&id, &zero, &x, Activation::Relu).unwrap();
        assert_eq!(r.data(), &[0.0, 2.0]);
        let z = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let s = forward_dense(&id, &zero, &z, Activation::Softmax).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn dense_shape_error_names_shapes() {
        let w = Tensor::zeros(&[3, 4]);
        let b = Tensor::zeros(&[3]);
        let x = Tensor::zeros(&[2, 5]);
        match forward_dense(&w, &b, &x, Activation::Identity) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![3, 4]);
                assert_eq!(right, vec![2, 5]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut g = Graph::new();
        let x = g.constant(random(&[50, 4], 7).map(|v| 30.0 * v));
        let y = g.softmax_rows(x).unwrap();
        let t = g.value(y);
        for r in 0..50 {
            let row = t.row(r);
            assert!(row.iter().all(|&p| p > 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_all_ones_sums_to_nine() {
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let x = Tensor::full(&[1, 1, 8, 8], 1.0);
        let y = forward_conv2d(&k, &Tensor::zeros(&[1]), &x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 6, 6]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn conv_zero_and_delta_kernels() {
        let x = random(&[2, 3, 8, 8], 11);
        let y = forward_conv2d(&Tensor::zeros(&[4, 3, 3, 3]), &Tensor::zeros(&[4]), &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let x = random(&[1, 1, 8, 8], 12);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let y = forward_conv2d(&k, &Tensor::zeros(&[1]), &x).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                assert_eq!(y.data()[r * 6 + c], x.data()[(r + 1) * 8 + c + 1]);
            }
        }
    }

    #[test]
    fn conv_rejects_small_input() {
        let r = forward_conv2d(&Tensor::zeros(&[1, 1, 3, 3]), &Tensor::zeros(&[1]), &Tensor::zeros(&[1, 1, 2, 5]));
        assert!(matches!(r, Err(Error::InputTooSmall { .. })));
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let l = g.softmax_cross_entropy(z, &[0]).unwrap();
        assert!((g.value(l).data()[0] - core::f64::consts::LN_2).abs() < 1e-15);

        let z = g.constant(Tensor::from_rows(&[vec![1e6, 0.0]]).unwrap());
        let l = g.softmax_cross_entropy(z, &[0]).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);

        let z = g.constant(Tensor::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap());
        let l = g.softmax_cross_entropy(z, &[0, 1]).unwrap();
        let single = libm::log(1.0 + libm::exp(-2.0));
        assert!((g.value(l).data()[0] - single).abs() < 1e-15);

        assert!(matches!(
            g.softmax_cross_entropy(z, &[0, 2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn solve_examples() {
        let b = random(&[4, 3], 3);
        assert_eq!(matrix_solve(&Tensor::identity(4), &b).unwrap(), b);
        let two = Tensor::identity(3).map(|v| 2.0 * v);
        let x = matrix_solve(&two, &Tensor::identity(3)).unwrap();
        assert_eq!(x, Tensor::identity(3).map(|v| 0.5 * v));
        let mut bad = Tensor::identity(2);
        bad.data_mut()[1] = f64::INFINITY;
        assert!(matrix_solve(&bad, &Tensor::identity(2)).is_err());
    }

    #[test]
    fn solve_recovers_rhs() {
        for seed in 0..10 {
            let a = random_spd(8, 100 + seed);
            let x0 = random(&[8, 3], 200 + seed);
            let x = matrix_solve(&a, &a.matmul(&x0).unwrap()).unwrap();
            for (u, v) in x.data().iter().zip(x0.data()) {
                assert!((u - v).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn trace_of_inverse_gradient_matches_fd() {
        let a0 = random_spd(5, 21);
        let f = |a: &Tensor| {
            let inv = matrix_solve(a, &Tensor::identity(5)).unwrap();
            (0..5).map(|i| inv.get2(i, i)).sum::<f64>()
        };
        let mut g = Graph::new();
        let a = g.param(a0.clone());
        let id = g.constant(Tensor::identity(5));
        let inv = g.solve(a, id).unwrap();
        let tr = g.trace(inv).unwrap();
        let grads = g.backward(tr).unwrap();
        let idx: Vec<usize> = (0..25).collect();
        let numeric = fd::gradient(&a0, &idx, 1e-5, f);
        let analytic = grads.wrt(a);
        for (i, n) in numeric.iter().enumerate() {
            assert!(fd::rel_err(analytic.data()[i], *n) < 1e-5, "entry {i}");
        }
    }

    #[test]
    fn backward_basics() {
        let mut g = Graph::new();
        let x = g.param(random(&[3, 2], 5));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(x).data().iter().all(|&v| v == 1.0));

        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.param(Tensor::scalar(-2.0));
        let unused = g.param(Tensor::scalar(1.0));
        let p = g.mul(x, y).unwrap();
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.wrt(x).data(), &[-2.0]);
        assert_eq!(grads.wrt(y).data(), &[3.0]);
        assert_eq!(grads.wrt(unused).data(), &[0.0]);
        let again = g.backward(p).unwrap();
        assert_eq!(again.wrt(x), grads.wrt(x));

        let mut g = Graph::new();
        let x = g.param(random(&[2, 2], 1));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    /// Every differentiable op against central differences at random points.
    #[test]
    fn elementwise_and_matrix_ops_match_fd() {
        type Build = fn(&mut Graph, Var) -> Var;
        let cases: [(&str, [usize; 2], Build); 12] = [
            ("relu", [4, 3], |g, x| g.relu(x)),
            ("exp", [4, 3], |g, x| g.exp(x)),
            ("log", [4, 3], |g, x| {
                let e = g.exp(x);
                g.log_floor(e, 1e-12)
            }),
            ("sqrt", [4, 3], |g, x| {
                let sq = g.mul(x, x).unwrap();
                let s = g.sum(sq);
                g.sqrt(s)
            }),
            ("softmax", [4, 3], |g, x| g.softmax_rows(x).unwrap()),
            ("div", [4, 3], |g, x| {
                let e = g.exp(x);
                g.div(x, e).unwrap()
            }),
            ("matmul_t", [4, 3], |g, x| {
                let t = g.transpose(x).unwrap();
                g.matmul(x, t).unwrap()
            }),
            ("pdist", [5, 3], |g, x| g.pairwise_sq_dist(x).unwrap()),
            ("rowsum", [4, 3], |g, x| g.row_sums(x).unwrap()),
            ("select", [4, 3], |g, x| g.select_rows(x, &[3, 0, 3])),
            ("broadcast", [4, 3], |g, x| {
                let m = g.mean(x);
                let b = g.broadcast(m, &[4, 3]).unwrap();
                g.sub(x, b).unwrap()
            }),
            ("ce", [4, 3], |g, x| g.softmax_cross_entropy(x, &[0, 2, 1, 1]).unwrap()),
        ];
        for (ci, (name, shape, build)) in cases.iter().enumerate() {
            let weights = random(shape, 900);
            for point in 0..8 {
                let x0 = random(shape, 1000 * ci as u64 + point);
                let eval = |x: &Tensor| -> (f64, Option<Tensor>) {
                    let mut g = Graph::new();
                    let xv = g.param(x.clone());
                    let y = build(&mut g, xv);
                    // Weight the outputs so every output entry matters.
                    let n = g.value(y).len();
                    let w = g.constant(
                        Tensor::new(g.value(y).shape().to_vec(), weights.data().iter().cycle().take(n).cloned().collect())
                            .unwrap(),
                    );
                    let wy = g.mul(w, y).unwrap();
                    let s = g.sum(wy);
                    let grads = g.backward(s).unwrap();
                    (g.value(s).data()[0], Some(grads.wrt(xv)))
                };
                let (_, analytic) = eval(&x0);
                let analytic = analytic.unwrap();
                let idx: Vec<usize> = (0..x0.len()).collect();
                let numeric = fd::gradient(&x0, &idx, 1e-5, |x| eval(x).0);
                for (i, n) in numeric.iter().enumerate() {
                    let err = fd::rel_err(analytic.data()[i], *n);
                    assert!(err < 1e-4, "{name}: entry {i} analytic {} numeric {n}", analytic.data()[i]);
                }
            }
        }
    }

    #[test]
    fn conv_and_linear_gradients_match_fd() {
        let x0 = random(&[2, 2, 5, 5], 31);
        let k0 = random(&[3, 2, 3, 3], 32);
        let b0 = random(&[3], 33);
        let w0 = random(&[4, 27], 34);
        let c0 = random(&[4], 35);
        let loss = |x: &Tensor, k: &Tensor, b: &Tensor, w: &Tensor, c: &Tensor| {
            let mut g = Graph::new();
            let vars = [g.param(x.clone()), g.param(k.clone()), g.param(b.clone()), g.param(w.clone()), g.param(c.clone())];
            let y = g.conv2d(vars[0], vars[1], vars[2]).unwrap();
            let y = g.relu(y);
            let flat = g.reshape(y, &[2, 27]).unwrap();
            let z = g.linear(flat, vars[3], vars[4]).unwrap();
            let l = g.softmax_cross_entropy(z, &[1, 3]).unwrap();
            let grads = g.backward(l).unwrap();
            (g.value(l).data()[0], vars.map(|v| grads.wrt(v)))
        };
        let (_, grads) = loss(&x0, &k0, &b0, &w0, &c0);
        let inputs = [&x0, &k0, &b0, &w0, &c0];
        for (slot, t) in inputs.iter().enumerate() {
            let idx: Vec<usize> = (0..t.len()).step_by(3).collect();
            let numeric = fd::gradient(t, &idx, 1e-5, |p| {
                let mut args = inputs.map(|a| a.clone());
                args[slot] = p.clone();
                loss(&args[0], &args[1], &args[2], &args[3], &args[4]).0
            });
            for (n, &i) in numeric.iter().zip(&idx) {
                assert!(fd::rel_err(grads[slot].data()[i], *n) < 1e-4, "slot {slot} entry {i}");
            }
        }
    }
}
