//! Dense 2-D tensors, a reverse-mode tape, and first-order optimizers.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{leaky_relu, sigmoid, softmax, Gradients, Graph, Var};
pub use optim::{adam_step, sgd_step, Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::rc::Rc;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(2, 5, 1.0, &mut rng);
        let y = Tensor::identity(2).matmul(&x).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn l1_rows() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.0, 0.0]]).unwrap());
        let n = g.l1_norm_rowwise(x);
        assert_eq!(g.value(n).data(), &[3.0, 0.0]);
    }

    #[test]
    fn shape_errors_name_shapes() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(2, 3));
        let b = g.input(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("2x3"), "{msg}");
        assert!(g.add(a, b).is_ok());
        let c = g.input(Tensor::zeros(3, 2));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let s = softmax(&[core::f64::consts::LN_2, 0.0]).unwrap();
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[1] - 1.0 / 3.0).abs() < 1e-15);
        let s = softmax(&[1000.0, 0.0]).unwrap();
        assert!(s.iter().all(|x| x.is_finite()));
        assert!((s[0] - 1.0).abs() < 1e-15 && s[1] < 1e-300);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn leaky_relu_examples() {
        assert_eq!(leaky_relu(5.0, 0.2), 5.0);
        assert_eq!(leaky_relu(-5.0, 0.2), -1.0);
        assert_eq!(leaky_relu(0.0, 0.7), 0.0);
    }

    #[test]
    fn segment_softmax_matches_plain_softmax() {
        let scores = vec![0.3, -1.2, 2.0, 0.5, 0.5];
        let seg: Rc<[usize]> = Rc::from(vec![0, 1, 0, 1, 2]);
        let mut g = Graph::new();
        let s = g.input(Tensor::column(scores.clone()));
        let a = g.segment_softmax(s, seg).unwrap();
        let out = g.value(a).data();
        let s0 = softmax(&[0.3, 2.0]).unwrap();
        let s1 = softmax(&[-1.2, 0.5]).unwrap();
        assert!((out[0] - s0[0]).abs() < 1e-15 && (out[2] - s0[1]).abs() < 1e-15);
        assert!((out[1] - s1[0]).abs() < 1e-15 && (out[3] - s1[1]).abs() < 1e-15);
        assert_eq!(out[4], 1.0);
    }

    /// Central differences of a scalar function of one tensor.
    fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut plus = x.clone();
                plus.data_mut()[i] += h;
                let mut minus = x.clone();
                minus.data_mut()[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::uniform(3, 4, 1.0, &mut rng);
        let w = Tensor::uniform(4, 2, 1.0, &mut rng);
        let f = |x: &Tensor| -> f64 {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let wv = g.input(w.clone());
            let y = g.matmul(xv, wv).unwrap();
            let c = g.cos(y);
            let s = g.sum(c);
            g.value(s).item()
        };
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let wv = g.input(w.clone());
        let y = g.matmul(xv, wv).unwrap();
        let c = g.cos(y);
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        let analytic = grads.wrt(xv).unwrap();
        for (a, n) in analytic.iter().zip(numeric_grad(&x, &f)) {
            assert!(rel_err(*a, n) < 1e-6, "{a} vs {n}");
        }
    }
}
