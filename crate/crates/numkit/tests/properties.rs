use nvq_numkit::{
    grad_check_many, least_squares, Adam, AdamConfig, Matrix, NumError, Result, Rng, Tape, Var,
};
use proptest::prelude::*;

const H: f64 = 1e-6;

/// Projects a node to a scalar with fixed random weights so every output
/// coordinate carries a distinct, non-trivial gradient.
fn weighted_sum(t: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let (r, c) = t.value(v).shape();
    let w = Matrix::random_normal(r, c, 1.0, &mut Rng::new(seed));
    let w = t.constant(w)?;
    let p = t.elementwise_mul(v, w)?;
    Ok(t.sum(p))
}

#[derive(Clone, Copy, Debug)]
enum UnaryOp {
    Tanh,
    Sigmoid,
    Scale,
    SliceRows,
    GatherRow,
    SoftmaxCe,
}

#[derive(Clone, Copy, Debug)]
enum BinaryOp {
    MatMul,
    Add,
    Sub,
    Mul,
    Concat,
}

fn unary_op() -> impl Strategy<Value = UnaryOp> {
    prop_oneof![
        Just(UnaryOp::Tanh),
        Just(UnaryOp::Sigmoid),
        Just(UnaryOp::Scale),
        Just(UnaryOp::SliceRows),
        Just(UnaryOp::GatherRow),
        Just(UnaryOp::SoftmaxCe),
    ]
}

fn binary_op() -> impl Strategy<Value = BinaryOp> {
    prop_oneof![
        Just(BinaryOp::MatMul),
        Just(BinaryOp::Add),
        Just(BinaryOp::Sub),
        Just(BinaryOp::Mul),
        Just(BinaryOp::Concat),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn unary_ops_match_central_differences(
        op in unary_op(), rows in 2usize..6, cols in 1usize..4, seed in 0u64..10_000
    ) {
        let mut rng = Rng::new(seed);
        let x = Matrix::random_normal(rows, cols, 1.0, &mut rng);
        let f = move |t: &mut Tape, vs: &[Var]| -> Result<Var> {
            let x = vs[0];
            let y = match op {
                UnaryOp::Tanh => t.tanh(x),
                UnaryOp::Sigmoid => t.sigmoid(x),
                UnaryOp::Scale => t.scale(x, -1.7),
                UnaryOp::SliceRows => t.slice_rows(x, 1, rows - 1)?,
                UnaryOp::GatherRow => t.gather_row(x, rows / 2)?,
                UnaryOp::SoftmaxCe => return t.softmax_cross_entropy(x, seed as usize % (rows * cols)),
            };
            weighted_sum(t, y, seed + 1)
        };
        let report = grad_check_many(f, &[x], H, 1e-5).unwrap();
        prop_assert!(report.pass, "{:?} {:?}", op, report);
    }

    #[test]
    fn binary_ops_match_central_differences(
        op in binary_op(), n in 1usize..5, k in 1usize..5, m in 1usize..4, seed in 0u64..10_000
    ) {
        let mut rng = Rng::new(seed);
        let a = Matrix::random_normal(n, k, 1.0, &mut rng);
        let b = match op {
            BinaryOp::MatMul => Matrix::random_normal(k, m, 1.0, &mut rng),
            BinaryOp::Concat => Matrix::random_normal(m, k, 1.0, &mut rng),
            _ => Matrix::random_normal(n, k, 1.0, &mut rng),
        };
        let f = move |t: &mut Tape, vs: &[Var]| -> Result<Var> {
            let (a, b) = (vs[0], vs[1]);
            let y = match op {
                BinaryOp::MatMul => t.matmul(a, b)?,
                BinaryOp::Add => t.add(a, b)?,
                BinaryOp::Sub => t.sub(a, b)?,
                BinaryOp::Mul => t.elementwise_mul(a, b)?,
                BinaryOp::Concat => t.concat_rows(&[a, b])?,
            };
            weighted_sum(t, y, seed + 7)
        };
        let report = grad_check_many(f, &[a, b], H, 1e-5).unwrap();
        prop_assert!(report.pass, "{:?} {:?}", op, report);
    }

    #[test]
    fn matmul_associates_and_distributes(seed in 0u64..10_000) {
        let mut rng = Rng::new(seed);
        let a = Matrix::random_normal(8, 8, 1.0, &mut rng);
        let b = Matrix::random_normal(8, 8, 1.0, &mut rng);
        let c = Matrix::random_normal(8, 8, 1.0, &mut rng);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.sub(&right).unwrap().max_abs() < 1e-10);
        let dist = a.matmul(&b.add(&c).unwrap()).unwrap();
        let split = a.matmul(&b).unwrap().add(&a.matmul(&c).unwrap()).unwrap();
        prop_assert!(dist.sub(&split).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn least_squares_residual_gradient_is_small(
        n in 1usize..40, p in 1usize..8, q in 1usize..5, ridge_exp in -8i32..1, use_ridge: bool,
        seed in 0u64..10_000
    ) {
        let mut rng = Rng::new(seed);
        let a = Matrix::random_normal(n, p, 1.0, &mut rng);
        let b = Matrix::random_normal(n, q, 1.0, &mut rng);
        let ridge = if use_ridge { 10f64.powi(ridge_exp) } else { 0.0 };
        match least_squares(&a, &b, ridge) {
            Ok(m) => {
                let atb = a.t_matmul(&b).unwrap();
                let mut g = a.t_matmul(&a.matmul(&m).unwrap()).unwrap();
                g.axpy(ridge, &m).unwrap();
                let g = g.sub(&atb).unwrap();
                prop_assert!(g.frobenius_norm() <= 1e-8 * (1.0 + atb.frobenius_norm()),
                    "residual {}", g.frobenius_norm());
            }
            Err(NumError::Singular { .. }) => prop_assert!(ridge == 0.0 && n < p + 2),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }
}

/// Five chained ops over three leaves.
fn five_op_graph(t: &mut Tape, vs: &[Var]) -> Result<Var> {
    let (w, x, u) = (vs[0], vs[1], vs[2]);
    let wx = t.matmul(w, x)?;
    let a = t.tanh(wx);
    let b = t.sigmoid(u);
    let c = t.elementwise_mul(a, b)?;
    t.softmax_cross_entropy(c, 1)
}

#[test]
fn random_five_op_graphs_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = Rng::new(1000 + seed);
        // Unit-scale weights occasionally saturate tanh (|wx| ~ 6), leaving
        // gradient entries near 1e-5 where h = 1e-6 differences carry ~1e-10
        // roundoff. Half-scale weights keep every unit in its responsive range.
        let w = Matrix::random_normal(4, 3, 0.5, &mut rng);
        let x = Matrix::random_normal(3, 1, 1.0, &mut rng);
        let u = Matrix::random_normal(4, 1, 1.0, &mut rng);
        let report = grad_check_many(five_op_graph, &[w, x, u], H, 1e-5).unwrap();
        assert!(report.pass, "seed {seed}: {report:?}");
    }
}

fn train_trajectory(seed: u64) -> Vec<u64> {
    let mut rng = Rng::new(seed);
    let mut w = Matrix::random_normal(4, 3, 0.5, &mut rng);
    let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }).unwrap();
    let mut trace = Vec::new();
    for step in 0..50 {
        let x = Matrix::random_normal(3, 1, 1.0, &mut rng);
        let mut t = Tape::new();
        let wv = t.leaf(w.clone()).unwrap();
        let xv = t.constant(x).unwrap();
        let z = t.matmul(wv, xv).unwrap();
        let loss = t.softmax_cross_entropy(z, step % 4).unwrap();
        trace.push(t.scalar(loss).to_bits());
        let g = t.backward(loss).unwrap();
        adam.step(&mut [&mut w], &[g.wrt(wv)]).unwrap();
    }
    trace.extend(w.data().iter().map(|v| v.to_bits()));
    trace
}

#[test]
fn identical_seed_gives_bit_identical_trajectory() {
    assert_eq!(train_trajectory(77), train_trajectory(77));
    assert_ne!(train_trajectory(77), train_trajectory(78));
}
