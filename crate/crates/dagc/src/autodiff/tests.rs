use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn matmul_identity_and_hand_example() {
    let mut tape = Tape::new();
    let eye = t(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let a = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
    let out = tape.matmul(&eye, &a).unwrap();
    assert_eq!(out.values(), a.values());

    let row = t(&[vec![1.0, 2.0]]);
    let col = t(&[vec![3.0], vec![4.0]]);
    let out = tape.matmul(&row, &col).unwrap();
    assert_eq!(out.values(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = Tensor::zeros(2, 3);
    let b = Tensor::zeros(2, 3);
    let err = tape.matmul(&a, &b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("2x3") && msg.contains("matmul"), "{msg}");
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let a = random_tensor(&mut rng, 3, 3);
    let b = random_tensor(&mut rng, 3, 3);
    let err = grad_check(
        |tape, leaves| {
            let prod = tape.matmul(&leaves[0], &leaves[1])?;
            Ok(tape.sum_all(&prod))
        },
        &[a, b],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "max rel err {err}");
}

#[test]
fn row_softmax_examples() {
    let mut tape = Tape::new();
    let out = tape.row_softmax(&t(&[vec![0.0, 0.0]]));
    assert!((out.at(0, 0) - 0.5).abs() < 1e-15);

    let out = tape.row_softmax(&t(&[vec![2.0_f64.ln(), 0.0]]));
    assert!((out.at(0, 0) - 2.0 / 3.0).abs() < 1e-12);
    assert!((out.at(0, 1) - 1.0 / 3.0).abs() < 1e-12);

    // max subtraction keeps huge logits finite
    let out = tape.row_softmax(&t(&[vec![1000.0, 0.0]]));
    assert!(out.is_finite());
    assert!(out.at(0, 0) > 1.0 - 1e-12 && out.at(0, 1) < 1e-12);
}

#[test]
fn row_l2_normalize_examples() {
    let mut tape = Tape::new();
    let out = tape.row_l2_normalize(&t(&[vec![3.0, 4.0]])).unwrap();
    assert!((out.at(0, 0) - 0.6).abs() < 1e-15);
    assert!((out.at(0, 1) - 0.8).abs() < 1e-15);

    let out = tape.row_l2_normalize(&t(&[vec![1.0, 0.0]])).unwrap();
    assert_eq!(out.values(), &[1.0, 0.0]);

    let out = tape.row_l2_normalize(&t(&[vec![0.5, 0.5]])).unwrap();
    let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
    assert!((out.at(0, 0) - inv_sqrt2).abs() < 1e-15);

    assert!(tape.row_l2_normalize(&t(&[vec![0.0, 0.0]])).is_err());
}

#[test]
fn leaky_relu_examples() {
    let mut tape = Tape::new();
    let out = tape.leaky_relu(&t(&[vec![-1.0, 0.0, 2.0]]), 0.2);
    assert_eq!(out.values(), &[-0.2, 0.0, 2.0]);

    let nonneg = t(&[vec![0.5, 3.0]]);
    let out = tape.leaky_relu(&nonneg, 0.2);
    assert_eq!(out.values(), nonneg.values());

    let err = grad_check(
        |tape, leaves| {
            let y = tape.leaky_relu(&leaves[0], 0.2);
            Ok(tape.sum_all(&y))
        },
        &[t(&[vec![-3.0]])],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-9);
    // the analytic slope itself
    let mut tape = Tape::new();
    let x = tape.leaf(&t(&[vec![-3.0]]));
    let y = tape.leaky_relu(&x, 0.2);
    let loss = tape.sum_all(&y);
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.wrt(&x).unwrap().values(), &[0.2]);
}

#[test]
fn concat_cols_examples() {
    let mut tape = Tape::new();
    let a = t(&[vec![1.0], vec![2.0]]);
    let b = t(&[vec![3.0], vec![4.0]]);
    let out = tape.concat_cols(&[a.clone(), b]).unwrap();
    assert_eq!(out.values(), &[1.0, 3.0, 2.0, 4.0]);

    let single = tape.concat_cols(&[a.clone()]).unwrap();
    assert_eq!(single.values(), a.values());

    // widths matching the default architecture concatenation
    let parts: Vec<Tensor> = [500, 500, 2000, 10, 10]
        .iter()
        .map(|&w| Tensor::zeros(2, w))
        .collect();
    let out = tape.concat_cols(&parts).unwrap();
    assert_eq!(out.cols(), 3020);

    let ragged = Tensor::zeros(3, 1);
    assert!(tape.concat_cols(&[a, ragged]).is_err());
}

#[test]
fn col_broadcast_scale_examples() {
    let mut tape = Tape::new();
    let w = t(&[vec![2.0], vec![3.0]]);
    let a = Tensor::ones(2, 2);
    let out = tape.col_broadcast_scale(&w, &a).unwrap();
    assert_eq!(out.values(), &[2.0, 2.0, 3.0, 3.0]);

    let ones = Tensor::ones(2, 1);
    let out = tape.col_broadcast_scale(&ones, &a).unwrap();
    assert_eq!(out.values(), a.values());

    let zeros = Tensor::zeros(2, 1);
    let out = tape.col_broadcast_scale(&zeros, &a).unwrap();
    assert!(out.values().iter().all(|&v| v == 0.0));
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let out = tape
        .hadamard(&t(&[vec![1.0, 2.0]]), &t(&[vec![3.0, 4.0]]))
        .unwrap();
    assert_eq!(out.values(), &[3.0, 8.0]);

    let out = tape.sum_all(&t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    assert_eq!(out.scalar().unwrap(), 10.0);

    // d sum(square(a)) / da = 2a
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a = random_tensor(&mut rng, 2, 3);
    let mut tape = Tape::new();
    let leaf = tape.leaf(&a);
    let sq = tape.square(&leaf);
    let loss = tape.sum_all(&sq);
    let grads = tape.backward(&loss).unwrap();
    let got = grads.wrt(&leaf).unwrap();
    for (g, v) in got.values().iter().zip(a.values()) {
        assert!((g - 2.0 * v).abs() < 1e-12);
    }
}

#[test]
fn backward_basics() {
    // loss = sum(a): gradient all ones
    let mut tape = Tape::new();
    let a = tape.leaf(&Tensor::ones(2, 2));
    let loss = tape.sum_all(&a);
    let grads = tape.backward(&loss).unwrap();
    assert!(grads.wrt(&a).unwrap().values().iter().all(|&v| v == 1.0));

    // unreachable leaf reads back zeros
    let mut tape = Tape::new();
    let a = tape.leaf(&Tensor::ones(2, 2));
    let unused = tape.leaf(&Tensor::ones(1, 3));
    let loss = tape.sum_all(&a);
    let grads = tape.backward(&loss).unwrap();
    assert!(grads.wrt(&unused).unwrap().values().iter().all(|&v| v == 0.0));

    // non-scalar loss is a contract error
    let mut tape = Tape::new();
    let a = tape.leaf(&Tensor::ones(2, 2));
    assert!(tape.backward(&a).is_err());
}

#[test]
fn backward_diamond_accumulates_additively() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::ones(2, 2));
    let doubled = tape.add(&x, &x).unwrap();
    let loss = tape.sum_all(&doubled);
    let grads = tape.backward(&loss).unwrap();
    assert!(grads.wrt(&x).unwrap().values().iter().all(|&v| v == 2.0));
}

#[test]
fn grad_check_quadratic_and_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let a = random_tensor(&mut rng, 3, 2);
    let err = grad_check(
        |tape, leaves| {
            let sq = tape.square(&leaves[0]);
            Ok(tape.sum_all(&sq))
        },
        &[a.clone()],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-8, "quadratic form err {err}");

    let err = grad_check(
        |tape, _| Ok(tape.sum_all(&Tensor::ones(1, 1))),
        &[a],
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn every_primitive_passes_finite_difference_checks() {
    // smaller twin of the acceptance criterion: 5 random instances each
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for trial in 0..5 {
        let a = random_tensor(&mut rng, 3, 4);
        let b = random_tensor(&mut rng, 3, 4);
        let pos = Tensor::new(
            3,
            4,
            (0..12).map(|_| rng.gen_range(0.2..2.0)).collect::<Vec<_>>(),
        )
        .unwrap();
        let w = random_tensor(&mut rng, 3, 1);

        let cases: Vec<(&str, Box<dyn Fn(&mut Tape, &[Tensor]) -> crate::error::Result<Tensor>>, Vec<Tensor>)> = vec![
            (
                "matmul",
                Box::new(|tape, l| {
                    let p = tape.matmul(&l[0], &l[1])?;
                    Ok(tape.sum_all(&p))
                }),
                vec![random_tensor(&mut rng, 2, 3), random_tensor(&mut rng, 3, 2)],
            ),
            (
                "add+sub+hadamard",
                Box::new(|tape, l| {
                    let s = tape.add(&l[0], &l[1])?;
                    let d = tape.sub(&s, &l[1])?;
                    let h = tape.hadamard(&d, &l[0])?;
                    Ok(tape.sum_all(&h))
                }),
                vec![a.clone(), b.clone()],
            ),
            (
                "scale+add_scalar+pow",
                Box::new(|tape, l| {
                    let s = tape.scale(&l[0], 1.7);
                    let s = tape.add_scalar(&s, 4.0);
                    let p = tape.pow_scalar(&s, -1.3);
                    Ok(tape.sum_all(&p))
                }),
                vec![pos.clone()],
            ),
            (
                "log+clamp",
                Box::new(|tape, l| {
                    let c = tape.clamp_min(&l[0], 1e-12);
                    let lg = tape.log(&c);
                    Ok(tape.sum_all(&lg))
                }),
                vec![pos.clone()],
            ),
            (
                "relu+leaky+tanh+square",
                Box::new(|tape, l| {
                    let r = tape.relu(&l[0]);
                    let lr = tape.leaky_relu(&l[1], 0.2);
                    let s = tape.add(&r, &lr)?;
                    let t = tape.tanh(&s);
                    let q = tape.square(&t);
                    Ok(tape.sum_all(&q))
                }),
                vec![a.clone(), b.clone()],
            ),
            (
                "row_softmax",
                Box::new(|tape, l| {
                    let y = tape.row_softmax(&l[0]);
                    let sq = tape.square(&y);
                    Ok(tape.sum_all(&sq))
                }),
                vec![a.clone()],
            ),
            (
                "row_l2_normalize",
                Box::new(|tape, l| {
                    let y = tape.row_l2_normalize(&l[0])?;
                    let sq = tape.square(&y);
                    Ok(tape.sum_all(&sq))
                }),
                vec![pos.clone()],
            ),
            (
                "row_normalize",
                Box::new(|tape, l| {
                    let y = tape.row_normalize(&l[0])?;
                    let sq = tape.square(&y);
                    Ok(tape.sum_all(&sq))
                }),
                vec![pos.clone()],
            ),
            (
                "concat+slice+broadcast+transpose",
                Box::new(|tape, l| {
                    let cat = tape.concat_cols(&[l[0].clone(), l[1].clone()])?;
                    let sl = tape.col_slice(&cat, 2, 3)?;
                    let scaled = tape.col_broadcast_scale(&l[2], &sl)?;
                    let tr = tape.transpose(&scaled);
                    let sq = tape.square(&tr);
                    Ok(tape.sum_all(&sq))
                }),
                vec![a.clone(), b.clone(), w.clone()],
            ),
        ];

        for (name, f, inputs) in cases {
            let err = grad_check(f.as_ref(), &inputs, 1e-5).unwrap();
            assert!(err <= 1e-4, "trial {trial} {name}: rel err {err}");
        }
    }
}

#[test]
fn spmm_gradients_match_finite_differences() {
    use crate::graph::{normalize_adjacency, SparseAdjacency};
    let adj = SparseAdjacency::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
    let op = std::sync::Arc::new(normalize_adjacency(&adj));
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let x = random_tensor(&mut rng, 4, 3);
    let err = grad_check(
        move |tape, l| {
            let y = tape.spmm(&op, &l[0])?;
            let sq = tape.square(&y);
            Ok(tape.sum_all(&sq))
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "spmm rel err {err}");
}

#[test]
fn forward_passes_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let a = random_tensor(&mut rng, 4, 4);
        let b = random_tensor(&mut rng, 4, 4);
        let mut tape = Tape::new();
        let p = tape.matmul(&a, &b).unwrap();
        let s = tape.row_softmax(&p);
        let l = tape.row_l2_normalize(&s).unwrap();
        l.values().to_vec()
    };
    let first = run();
    let second = run();
    assert!(first.iter().zip(&second).all(|(a, b)| a.to_bits() == b.to_bits()));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_stay_positive(
        rows in proptest::collection::vec(
            proptest::collection::vec(-50.0f64..50.0, 4),
            1..6,
        )
    ) {
        let x = Tensor::from_rows(&rows).unwrap();
        let mut tape = Tape::new();
        let y = tape.row_softmax(&x);
        for i in 0..y.rows() {
            let sum: f64 = y.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(y.row(i).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn l2_normalized_rows_have_unit_norm(
        rows in proptest::collection::vec(
            proptest::collection::vec(0.05f64..10.0, 3),
            1..6,
        )
    ) {
        let x = Tensor::from_rows(&rows).unwrap();
        let mut tape = Tape::new();
        let y = tape.row_l2_normalize(&x).unwrap();
        for i in 0..y.rows() {
            let norm: f64 = y.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-9);
        }
    }
}
