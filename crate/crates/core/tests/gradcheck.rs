//! Reverse-mode gradients of every primitive against central differences.

use domprompt::numerics::{Graph, Matrix, NodeId, ParamKey, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random<S: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<S> {
    Matrix::from_fn(rows, cols, |_, _| S::from_f64_lossy(rng.random_range(-1.0..1.0)))
}

type Build<S> = dyn for<'a> Fn(&mut Graph<'a, S>, &[NodeId]) -> NodeId;

/// Weighted sum of `out` with fixed pseudo-random weights, so every output
/// element carries a distinct upstream gradient.
fn project<'a, S: Scalar>(g: &mut Graph<'a, S>, out: NodeId, seed: u64) -> NodeId {
    let (r, c) = g.value(out).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random::<S>(r, c, &mut rng);
    let wn = g.constant_owned(w);
    let prod = g.mul(out, wn).unwrap();
    g.sum(prod)
}

fn evaluate<S: Scalar>(leaves: &[Matrix<S>], build: &Build<S>) -> f64 {
    let mut g = Graph::inference();
    let ids: Vec<NodeId> = leaves
        .iter()
        .enumerate()
        .map(|(i, m)| g.param(m, ParamKey(i as u32)))
        .collect();
    let out = build(&mut g, &ids);
    g.value(out).item().unwrap().as_f64()
}

/// Max over leaves of ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖).
fn relative_error<S: Scalar>(leaves: &[Matrix<S>], build: &Build<S>, h: f64) -> f64 {
    let keys: Vec<ParamKey> = (0..leaves.len()).map(|i| ParamKey(i as u32)).collect();
    let mut g = Graph::new(keys.clone());
    let ids: Vec<NodeId> = leaves
        .iter()
        .enumerate()
        .map(|(i, m)| g.param(m, keys[i]))
        .collect();
    let out = build(&mut g, &ids);
    let grads = g.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(keys[i]).unwrap();
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for j in 0..leaf.len() {
            let mut plus = leaves.to_vec();
            plus[i].data_mut()[j] = plus[i].data()[j] + S::from_f64_lossy(h);
            let mut minus = leaves.to_vec();
            minus[i].data_mut()[j] = minus[i].data()[j] - S::from_f64_lossy(h);
            let numeric = (evaluate(&plus, build) - evaluate(&minus, build)) / (2.0 * h);
            let a = analytic.data()[j].as_f64();
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let scale = na.sqrt().max(nn.sqrt()).max(1e-12);
        worst = worst.max(diff.sqrt() / scale);
    }
    worst
}

type Case<S> = (&'static str, Vec<Matrix<S>>, Box<Build<S>>);

fn cases<S: Scalar>() -> Vec<Case<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut r = |a, b| random::<S>(a, b, &mut rng);
    vec![
        (
            "matmul",
            vec![r(3, 4), r(4, 2)],
            Box::new(|g, x| {
                let o = g.matmul(x[0], x[1]).unwrap();
                project(g, o, 1)
            }),
        ),
        (
            "matmul_nt",
            vec![r(3, 4), r(5, 4)],
            Box::new(|g, x| {
                let o = g.matmul_nt(x[0], x[1]).unwrap();
                project(g, o, 2)
            }),
        ),
        (
            "add",
            vec![r(2, 3), r(2, 3)],
            Box::new(|g, x| {
                let o = g.add(x[0], x[1]).unwrap();
                let o = g.mul(o, o).unwrap();
                project(g, o, 3)
            }),
        ),
        (
            "add_row",
            vec![r(3, 4), r(1, 4)],
            Box::new(|g, x| {
                let o = g.add_row(x[0], x[1]).unwrap();
                let o = g.mul(o, o).unwrap();
                project(g, o, 4)
            }),
        ),
        (
            "mul",
            vec![r(2, 5), r(2, 5)],
            Box::new(|g, x| {
                let o = g.mul(x[0], x[1]).unwrap();
                project(g, o, 5)
            }),
        ),
        (
            "mask_mul",
            vec![r(2, 3)],
            Box::new(|g, x| {
                let mask = Matrix::from_fn(2, 3, |i, j| S::from_f64_lossy(((i + j) % 2) as f64 * 1.25));
                let o = g.mask_mul(x[0], mask).unwrap();
                let o = g.mul(o, o).unwrap();
                project(g, o, 6)
            }),
        ),
        (
            "gather",
            vec![r(5, 3)],
            Box::new(|g, x| {
                let o = g.gather(x[0], &[4, 0, 4, 2]).unwrap();
                let o = g.mul(o, o).unwrap();
                project(g, o, 7)
            }),
        ),
        (
            "concat_and_slices",
            vec![r(2, 4), r(3, 4)],
            Box::new(|g, x| {
                let c = g.concat_rows(&[x[0], x[1]]).unwrap();
                let s = g.slice_rows(c, 1, 4).unwrap();
                let s = g.slice_cols(s, 1, 3).unwrap();
                let o = g.mul(s, s).unwrap();
                project(g, o, 8)
            }),
        ),
        (
            "layer_norm",
            vec![r(3, 6), r(1, 6), r(1, 6)],
            Box::new(|g, x| {
                let o = g.layer_norm(x[0], x[1], x[2]).unwrap();
                project(g, o, 9)
            }),
        ),
        (
            "gelu",
            vec![r(3, 3)],
            Box::new(|g, x| {
                let o = g.gelu(x[0]);
                project(g, o, 10)
            }),
        ),
        (
            "attention",
            vec![r(5, 4), r(5, 4), r(5, 4)],
            Box::new(|g, x| {
                let o = g.attention(x[0], x[1], x[2], 2, 2, 0).unwrap();
                project(g, o, 11)
            }),
        ),
        (
            "attention_offset",
            vec![r(3, 4), r(5, 4), r(5, 4)],
            Box::new(|g, x| {
                let o = g.attention(x[0], x[1], x[2], 2, 2, 2).unwrap();
                project(g, o, 12)
            }),
        ),
        (
            "cross_entropy",
            vec![r(4, 6)],
            Box::new(|g, x| g.cross_entropy(x[0], &[Some(1), None, Some(5), Some(0)]).unwrap()),
        ),
        (
            "sum",
            vec![r(2, 2)],
            Box::new(|g, x| {
                let o = g.mul(x[0], x[0]).unwrap();
                g.sum(o)
            }),
        ),
    ]
}

#[test]
fn every_primitive_matches_central_differences_f64() {
    for (name, leaves, build) in cases::<f64>() {
        let err = relative_error(&leaves, build.as_ref(), 1e-3);
        assert!(err < 1e-5, "{name}: relative error {err:e}");
    }
}

#[test]
fn every_primitive_matches_central_differences_f32() {
    for (name, leaves, build) in cases::<f32>() {
        let err = relative_error(&leaves, build.as_ref(), 1e-2);
        assert!(err < 1e-3, "{name}: relative error {err:e}");
    }
}

#[test]
fn shared_leaf_gradients_accumulate() {
    // f(w) = sum(w*w) + sum(w): gradient 2w + 1
    let w = Matrix::row_vector(&[0.5f64, -1.0]);
    let mut g = Graph::new([ParamKey(0)]);
    let n = g.param(&w, ParamKey(0));
    let sq = g.mul(n, n).unwrap();
    let a = g.sum(sq);
    let b = g.sum(n);
    let both = g.concat_rows(&[a, b]).unwrap();
    let total = g.sum(both);
    let grads = g.backward(total).unwrap();
    assert_eq!(grads.get(ParamKey(0)).unwrap().data(), &[2.0, -1.0]);
}
